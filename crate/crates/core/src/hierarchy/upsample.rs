//! Upsampling matrices from a coarse level back to its fine level.
//!
//! A fine vertex that survived decimation maps one-hot to its coarse copy.
//! A discarded fine vertex is projected onto the closest point of the
//! coarse surface and reconstructed with the barycentric weights of that
//! projection; distance ties resolve to the lowest coarse face index.

use super::HierarchyError;
use crate::mesh::Mesh;
use crate::numeric::SparseMatrix;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Closest point of triangle `(a, b, c)` to `p`, as barycentric weights
/// `(wa, wb, wc)`, by Voronoi-region classification.
pub fn closest_point_barycentric(
    p: [f64; 3],
    a: [f64; 3],
    b: [f64; 3],
    c: [f64; 3],
) -> [f64; 3] {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

fn bary_point(w: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    [
        w[0] * a[0] + w[1] * b[0] + w[2] * c[0],
        w[0] * a[1] + w[1] * b[1] + w[2] * c[1],
        w[0] * a[2] + w[1] * b[2] + w[2] * c[2],
    ]
}

/// Builds the `fine x coarse` upsampling matrix for one decimation step.
/// `kept[i]` is the fine index of coarse vertex `i`.
pub fn build_upsample(
    fine: &Mesh,
    coarse: &Mesh,
    kept: &[usize],
) -> Result<SparseMatrix, HierarchyError> {
    let mut is_kept = vec![None; fine.vertex_count()];
    for (ci, &fi) in kept.iter().enumerate() {
        is_kept[fi] = Some(ci);
    }
    let mut triplets = Vec::new();
    for v in 0..fine.vertex_count() {
        if let Some(ci) = is_kept[v] {
            triplets.push((v, ci, 1.0));
            continue;
        }
        let p = fine.vertex(v);
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for (fi, f) in coarse.faces().iter().enumerate() {
            let (a, b, c) = (coarse.vertex(f[0]), coarse.vertex(f[1]), coarse.vertex(f[2]));
            let w = closest_point_barycentric(p, a, b, c);
            let q = bary_point(w, a, b, c);
            let d = dot(sub(p, q), sub(p, q));
            // Strict less keeps the lowest face index on ties.
            if best.map_or(true, |(bd, _, _)| d < bd) {
                best = Some((d, fi, w));
            }
        }
        let (_, fi, w) = best.ok_or(HierarchyError::EmptyCoarseMesh)?;
        let f = coarse.faces()[fi];
        // Clamp rounding dust and renormalize so the row sums to one.
        let mut w = w.map(|x| x.max(0.0));
        let s: f64 = w.iter().sum();
        for x in &mut w {
            *x /= s;
        }
        for k in 0..3 {
            if w[k] != 0.0 {
                triplets.push((v, f[k], w[k]));
            }
        }
    }
    SparseMatrix::from_triplets(fine.vertex_count(), coarse.vertex_count(), triplets)
        .map_err(HierarchyError::Numeric)
}

/// One-hot `coarse x fine` selection matrix for a decimation step.
pub fn build_downsample(fine_count: usize, kept: &[usize]) -> SparseMatrix {
    SparseMatrix::from_triplets(
        kept.len(),
        fine_count,
        kept.iter().enumerate().map(|(ci, &fi)| (ci, fi, 1.0)),
    )
    .expect("kept indices are in range")
}
