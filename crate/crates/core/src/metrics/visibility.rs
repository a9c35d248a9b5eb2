//! Occlusion quantification from label masks, and bucketed reporting.

use serde::{Deserialize, Serialize};

use crate::scenegen::MaskImage;

use super::MetricsError;

/// Fraction of the object's solo-render pixels that survive the full-scene
/// depth competition.
pub fn visibility_ratio(
    m_scene: &MaskImage,
    m_only: &MaskImage,
    object_id: u8,
) -> Result<f64, MetricsError> {
    if m_scene.width != m_only.width || m_scene.height != m_only.height {
        return Err(MetricsError::MaskShapeMismatch {
            scene: (m_scene.width, m_scene.height),
            only: (m_only.width, m_only.height),
        });
    }
    let alone = m_only.count(object_id);
    if alone == 0 {
        return Err(MetricsError::ObjectNotVisible { id: object_id });
    }
    Ok(m_scene.count(object_id) as f64 / alone as f64)
}

/// Visibility ranges reported on: [0.40,0.60), [0.60,0.80), [0.80,0.95),
/// and [0.95,1.00] with the top edge closed.
pub const VR_BUCKETS: [(f64, f64); 4] = [(0.40, 0.60), (0.60, 0.80), (0.80, 0.95), (0.95, 1.00)];

pub fn vr_bucket(vr: f64) -> Option<usize> {
    for (i, (lo, hi)) in VR_BUCKETS.iter().enumerate() {
        let last = i == VR_BUCKETS.len() - 1;
        if vr >= *lo && (vr < *hi || (last && vr <= *hi)) {
            return Some(i);
        }
    }
    None
}

/// Per-sample scores feeding the bucketed report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub vr: f64,
    pub auc: f64,
    pub error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_auc: f64,
    pub mean_error_mm: f64,
}

/// Rows for the populated visibility ranges only; a range nobody fell into
/// is absent rather than zeroed.
pub fn bucket_report(samples: &[SampleScore]) -> Vec<BucketRow> {
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); VR_BUCKETS.len()];
    for s in samples {
        if let Some(b) = vr_bucket(s.vr) {
            acc[b].0 += 1;
            acc[b].1 += s.auc;
            acc[b].2 += s.error_mm;
        }
    }
    acc.iter()
        .enumerate()
        .filter(|(_, (count, _, _))| *count > 0)
        .map(|(i, (count, auc_sum, err_sum))| BucketRow {
            lo: VR_BUCKETS[i].0,
            hi: VR_BUCKETS[i].1,
            count: *count,
            mean_auc: auc_sum / *count as f64,
            mean_error_mm: err_sum / *count as f64,
        })
        .collect()
}

pub fn format_bucket_table(rows: &[BucketRow]) -> String {
    let mut out = String::from("vr_range        n   mean_auc   mean_error_mm\n");
    for r in rows {
        out.push_str(&format!(
            "[{:.2}, {:.2}{}  {:3}   {:.4}     {:.3}\n",
            r.lo,
            r.hi,
            if r.hi >= 1.0 { "]" } else { ")" },
            r.count,
            r.mean_auc,
            r.mean_error_mm
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(labels: Vec<u8>) -> MaskImage {
        MaskImage {
            width: labels.len(),
            height: 1,
            labels,
        }
    }

    #[test]
    fn unoccluded_object_scores_one() {
        let only = mask(vec![0, 1, 1, 0]);
        assert_eq!(visibility_ratio(&only, &only, 1).unwrap(), 1.0);
    }

    #[test]
    fn partial_occlusion_counts_pixels() {
        // 5 pixels alone, 3 survive in the scene.
        let only = mask(vec![1, 1, 1, 1, 1, 0]);
        let scene = mask(vec![1, 1, 1, 2, 2, 0]);
        assert_eq!(visibility_ratio(&scene, &only, 1).unwrap(), 0.6);
    }

    #[test]
    fn absent_object_is_an_error() {
        let only = mask(vec![0, 0]);
        let scene = mask(vec![0, 0]);
        assert!(matches!(
            visibility_ratio(&scene, &only, 3),
            Err(MetricsError::ObjectNotVisible { id: 3 })
        ));
        let narrow = mask(vec![0]);
        assert!(matches!(
            visibility_ratio(&scene, &narrow, 1),
            Err(MetricsError::MaskShapeMismatch { .. })
        ));
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(vr_bucket(0.39), None);
        assert_eq!(vr_bucket(0.40), Some(0));
        assert_eq!(vr_bucket(0.60), Some(1));
        assert_eq!(vr_bucket(0.80), Some(2));
        assert_eq!(vr_bucket(0.95), Some(3));
        assert_eq!(vr_bucket(1.00), Some(3));
        assert_eq!(vr_bucket(1.01), None);
    }

    fn sample(vr: f64, auc: f64, err: f64) -> SampleScore {
        SampleScore {
            vr,
            auc,
            error_mm: err,
        }
    }

    #[test]
    fn fully_visible_samples_fill_only_the_top_bucket() {
        let rows = bucket_report(&[sample(1.0, 0.9, 5.0), sample(1.0, 0.7, 7.0)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].lo, 0.95);
        assert_eq!(rows[0].count, 2);
        assert!((rows[0].mean_auc - 0.8).abs() < 1e-12);
        assert!((rows[0].mean_error_mm - 6.0).abs() < 1e-12);
    }

    #[test]
    fn two_mid_samples_fill_two_buckets() {
        let rows = bucket_report(&[sample(0.5, 0.6, 9.0), sample(0.7, 0.8, 11.0)]);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].lo, rows[0].count), (0.40, 1));
        assert_eq!((rows[1].lo, rows[1].count), (0.60, 1));
    }

    #[test]
    fn six_sample_means_match_hand_computation() {
        let rows = bucket_report(&[
            sample(0.45, 0.50, 20.0),
            sample(0.55, 0.60, 22.0),
            sample(0.65, 0.70, 15.0),
            sample(0.85, 0.80, 12.0),
            sample(0.90, 0.90, 10.0),
            sample(0.99, 0.95, 6.0),
        ]);
        assert_eq!(rows.len(), 4);
        assert!((rows[0].mean_auc - 0.55).abs() < 1e-12);
        assert!((rows[0].mean_error_mm - 21.0).abs() < 1e-12);
        assert_eq!(rows[1].count, 1);
        assert!((rows[2].mean_auc - 0.85).abs() < 1e-12);
        assert!((rows[2].mean_error_mm - 11.0).abs() < 1e-12);
        assert_eq!(rows[3].count, 1);
        assert!((rows[3].mean_error_mm - 6.0).abs() < 1e-12);
    }

    #[test]
    fn table_formatting_marks_the_closed_edge() {
        let text = format_bucket_table(&bucket_report(&[sample(0.5, 0.6, 9.0), sample(1.0, 0.9, 4.0)]));
        assert!(text.contains("[0.40, 0.60)"));
        assert!(text.contains("[0.95, 1.00]"));
    }
}
