//! Similarity alignment of point sets by least squares.

use nalgebra::{Matrix3, Vector3};

use super::MetricsError;

/// Similarity transform p -> scale * rotation * p + translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Alignment {
    pub fn identity() -> Self {
        Alignment {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.scale * (self.rotation * Vector3::new(p[0], p[1], p[2])) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply_all(&self, pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
        pts.iter().map(|&p| self.apply(p)).collect()
    }
}

fn centroid(pts: &[[f64; 3]]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for p in pts {
        c += Vector3::new(p[0], p[1], p[2]);
    }
    c / pts.len() as f64
}

/// Least-squares similarity transform carrying `pred` onto `gt`, with the
/// rotation kept proper by flipping the smallest singular direction when the
/// unconstrained optimum is a reflection.
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<Alignment, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if pred.len() < 3 {
        return Err(MetricsError::TooFewPoints { got: pred.len() });
    }
    let n = pred.len() as f64;
    let mu_p = centroid(pred);
    let mu_g = centroid(gt);

    let mut cross = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let x = Vector3::new(p[0], p[1], p[2]) - mu_p;
        let y = Vector3::new(g[0], g[1], g[2]) - mu_g;
        cross += y * x.transpose();
        var_p += x.norm_squared();
        var_g += y.norm_squared();
    }
    cross /= n;
    var_p /= n;
    var_g /= n;
    if var_p <= f64::EPSILON * f64::EPSILON || var_g <= f64::EPSILON * f64::EPSILON {
        return Err(MetricsError::DegeneratePoints);
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut sign = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // Singular values come back sorted descending, so index 2 is the
        // cheapest direction to flip.
        sign[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&sign) * v_t;
    let scale = svd.singular_values.dot(&sign) / var_p;
    let translation = mu_g - scale * (rotation * mu_p);
    Ok(Alignment {
        scale,
        rotation,
        translation,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    pub(crate) fn random_similarity(rng: &mut ChaCha8Rng) -> Alignment {
        let axis = nalgebra::Unit::new_normalize(Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        Alignment {
            scale: rng.gen_range(0.2..5.0),
            rotation: nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner(),
            translation: Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ),
        }
    }

    fn residual(a: &Alignment, pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
        a.apply_all(pred)
            .iter()
            .zip(gt)
            .map(|(p, g)| {
                (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)
            })
            .sum()
    }

    #[test]
    fn identical_sets_align_with_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 12);
        let a = procrustes_align(&pts, &pts).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-9);
        assert!((a.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(a.translation.norm() < 1e-9);
    }

    #[test]
    fn recovers_exact_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let gt = random_points(&mut rng, 10);
            let fwd = random_similarity(&mut rng);
            let pred = fwd.apply_all(&gt);
            let a = procrustes_align(&pred, &gt).unwrap();
            assert!(residual(&a, &pred, &gt).sqrt() < 1e-9);
        }
    }

    #[test]
    fn rotation_is_proper_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pred = random_points(&mut rng, 8);
            let gt = random_points(&mut rng, 8);
            let a = procrustes_align(&pred, &gt).unwrap();
            let rtr = a.rotation.transpose() * a.rotation;
            assert!((rtr - Matrix3::identity()).norm() < 1e-9);
            assert!((a.rotation.determinant() - 1.0).abs() < 1e-9);
            assert!(a.scale > 0.0);
        }
    }

    #[test]
    fn beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random_points(&mut rng, 10);
        let pred: Vec<[f64; 3]> = random_points(&mut rng, 10)
            .iter()
            .zip(&gt)
            .map(|(n, g)| {
                [
                    g[0] + 0.3 * n[0],
                    g[1] + 0.3 * n[1],
                    g[2] + 0.3 * n[2],
                ]
            })
            .collect();
        let a = procrustes_align(&pred, &gt).unwrap();
        let best = residual(&a, &pred, &gt);
        for _ in 0..100_000 {
            let cand = random_similarity(&mut rng);
            assert!(best <= residual(&cand, &pred, &gt) + 1e-12);
        }
    }

    #[test]
    fn planar_sets_still_get_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt: Vec<[f64; 3]> = (0..8)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0])
            .collect();
        let fwd = random_similarity(&mut rng);
        let pred = fwd.apply_all(&gt);
        let a = procrustes_align(&pred, &gt).unwrap();
        assert!((a.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!(residual(&a, &pred, &gt).sqrt() < 1e-9);
    }

    #[test]
    fn rejects_degenerate_input() {
        let same = vec![[1.0, 2.0, 3.0]; 5];
        let other = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0; 3]];
        assert!(matches!(
            procrustes_align(&same, &other),
            Err(MetricsError::DegeneratePoints)
        ));
        assert!(matches!(
            procrustes_align(&other[..2], &other[..3]),
            Err(MetricsError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            procrustes_align(&other[..2], &other[..2]),
            Err(MetricsError::TooFewPoints { got: 2 })
        ));
    }
}
