//! Capsule approximation of articulated bodies and the pairwise
//! intersection test used for collision checking.

use std::collections::BTreeSet;

use crate::mesh::{KinematicChain, Skinning};

/// Cylinder with hemispherical caps. `owner` is (object index, bone id).
#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
    pub owner: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub struct RadiusPolicy {
    /// Added to every fitted radius, keeping the proxy conservative.
    pub margin: f64,
    /// Radius for a bone with no skinned vertices.
    pub fallback: f64,
}

impl Default for RadiusPolicy {
    fn default() -> Self {
        RadiusPolicy {
            margin: 0.002,
            fallback: 0.004,
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return norm(sub(p, a));
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    let closest = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    norm(sub(p, closest))
}

/// Minimum distance between segments `[p1, q1]` and `[p2, q2]`.
pub fn segment_segment_distance(
    p1: [f64; 3],
    q1: [f64; 3],
    p2: [f64; 3],
    q2: [f64; 3],
) -> f64 {
    let d1 = sub(q1, p1);
    let d2 = sub(q2, p2);
    let r = sub(p1, p2);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);

    let (s, t);
    if a == 0.0 && e == 0.0 {
        return norm(r);
    }
    if a == 0.0 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(d1, r);
        if e == 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(d1, d2);
            let denom = a * e - b * b;
            let s0 = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            // Clamp t for the chosen s, then re-clamp s if t saturated.
            let t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            } else {
                t = t0;
                s = s0;
            }
        }
    }
    let c1 = [p1[0] + s * d1[0], p1[1] + s * d1[1], p1[2] + s * d1[2]];
    let c2 = [p2[0] + t * d2[0], p2[1] + t * d2[1], p2[2] + t * d2[2]];
    norm(sub(c1, c2))
}

/// True iff the capsules overlap: axis distance strictly under the radius
/// sum.
pub fn capsules_intersect(c1: &Capsule, c2: &Capsule) -> bool {
    segment_segment_distance(c1.a, c1.b, c2.a, c2.b) < c1.radius + c2.radius
}

/// Fits one capsule per bone. A bone runs from its parent joint to its own
/// joint and its radius covers every vertex skinned to it, plus the policy
/// margin.
pub fn capsules_from_chain(
    vertices: &[[f64; 3]],
    joints: &[[f64; 3]],
    chain: &KinematicChain,
    skinning: &Skinning,
    policy: &RadiusPolicy,
    object: usize,
) -> Vec<Capsule> {
    let mut out = Vec::new();
    for (bone, parent) in chain.parents.iter().enumerate() {
        let Some(parent) = parent else { continue };
        let a = joints[*parent];
        let b = joints[bone];
        let mut max_dist: Option<f64> = None;
        for (v, &assigned) in vertices.iter().zip(&skinning.bones) {
            if assigned as usize == bone {
                let d = point_segment_distance(*v, a, b);
                max_dist = Some(max_dist.map_or(d, |m: f64| m.max(d)));
            }
        }
        let radius = match max_dist {
            Some(d) => d + policy.margin,
            None => policy.fallback,
        };
        out.push(Capsule {
            a,
            b,
            radius,
            owner: (object, bone),
        });
    }
    out
}

/// Same-body capsule pairs that never count as collisions: bones sharing a
/// joint, plus pairs already overlapping in the neutral pose (palm bones sit
/// closer together than their fitted radii). Keys are (bone, bone) with the
/// smaller id first.
pub fn structural_exemptions(
    neutral: &[Capsule],
    chain: &KinematicChain,
) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..neutral.len() {
        for j in i + 1..neutral.len() {
            let (bi, bj) = (neutral[i].owner.1, neutral[j].owner.1);
            let (pi, pj) = (chain.parents[bi].unwrap(), chain.parents[bj].unwrap());
            let share_joint = pi == pj || pi == bj || bi == pj;
            if share_joint || capsules_intersect(&neutral[i], &neutral[j]) {
                out.insert((bi.min(bj), bi.max(bj)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::hand_template;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn capsule(a: [f64; 3], b: [f64; 3], radius: f64) -> Capsule {
        Capsule {
            a,
            b,
            radius,
            owner: (0, 0),
        }
    }

    #[test]
    fn parallel_capsules_with_gap_do_not_intersect() {
        let c1 = capsule([0.0, 0.0, 0.0], [0.0, 0.0, 2.0], 1.0);
        let c2 = capsule([3.0, 0.0, 0.0], [3.0, 0.0, 2.0], 1.0);
        assert!(!capsules_intersect(&c1, &c2));
    }

    #[test]
    fn coaxial_overlapping_capsules_intersect() {
        let c1 = capsule([0.0, 0.0, 0.0], [0.0, 0.0, 2.0], 0.5);
        let c2 = capsule([0.0, 0.0, 1.0], [0.0, 0.0, 3.0], 0.5);
        assert!(capsules_intersect(&c1, &c2));
    }

    #[test]
    fn exact_touch_is_not_an_intersection() {
        let c1 = capsule([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], 1.0);
        let c2 = capsule([2.0, 0.0, 0.0], [2.0, 0.0, 1.0], 1.0);
        assert!(!capsules_intersect(&c1, &c2));
        let c3 = capsule([1.999, 0.0, 0.0], [1.999, 0.0, 1.0], 1.0);
        assert!(capsules_intersect(&c1, &c3));
    }

    #[test]
    fn segment_distance_matches_parameter_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mut p = || {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            };
            let (p1, q1, p2, q2) = (p(), p(), p(), p());
            let got = segment_segment_distance(p1, q1, p2, q2);
            let mut best = f64::INFINITY;
            let steps = 60;
            for i in 0..=steps {
                let s = i as f64 / steps as f64;
                let c1 = [
                    p1[0] + s * (q1[0] - p1[0]),
                    p1[1] + s * (q1[1] - p1[1]),
                    p1[2] + s * (q1[2] - p1[2]),
                ];
                for j in 0..=steps {
                    let t = j as f64 / steps as f64;
                    let c2 = [
                        p2[0] + t * (q2[0] - p2[0]),
                        p2[1] + t * (q2[1] - p2[1]),
                        p2[2] + t * (q2[2] - p2[2]),
                    ];
                    let d = norm(sub(c1, c2));
                    best = best.min(d);
                }
            }
            // The grid only overestimates, by at most one cell diagonal.
            assert!(got <= best + 1e-12);
            assert!(best - got < 0.08, "grid {best} vs exact {got}");
        }
    }

    #[test]
    fn straight_chain_tube_gets_one_snug_capsule() {
        let chain = KinematicChain {
            parents: vec![None, Some(0)],
            chain_next: vec![Some(1), None],
        };
        let joints = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.1]];
        let r = 0.01;
        let mut vertices = Vec::new();
        for k in 0..12 {
            let angle = k as f64 * std::f64::consts::TAU / 12.0;
            for z in [0.02, 0.05, 0.08] {
                vertices.push([r * angle.cos(), r * angle.sin(), z]);
            }
        }
        let skinning = Skinning {
            bones: vec![1; vertices.len()],
        };
        let policy = RadiusPolicy::default();
        let caps = capsules_from_chain(&vertices, &joints, &chain, &skinning, &policy, 0);
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].a, joints[0]);
        assert_eq!(caps[0].b, joints[1]);
        assert!((caps[0].radius - (r + policy.margin)).abs() < 1e-12);
    }

    #[test]
    fn fallback_radius_applies_to_unskinned_bones() {
        let chain = KinematicChain {
            parents: vec![None, Some(0)],
            chain_next: vec![Some(1), None],
        };
        let joints = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.1]];
        let skinning = Skinning { bones: vec![] };
        let policy = RadiusPolicy::default();
        let caps = capsules_from_chain(&[], &joints, &chain, &skinning, &policy, 3);
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].radius, policy.fallback);
        assert_eq!(caps[0].owner, (3, 1));
    }

    #[test]
    fn template_capsules_cover_their_vertices() {
        let model = hand_template();
        let policy = RadiusPolicy::default();
        let caps = capsules_from_chain(
            model.mesh.vertices(),
            model.neutral_joints(),
            &model.chain,
            &model.skinning,
            &policy,
            0,
        );
        assert_eq!(caps.len(), 20);
        for cap in &caps {
            let bone = cap.owner.1;
            for (v, &assigned) in model.mesh.vertices().iter().zip(&model.skinning.bones) {
                if assigned as usize == bone {
                    assert!(point_segment_distance(*v, cap.a, cap.b) <= cap.radius);
                }
            }
        }
    }

    #[test]
    fn exemptions_cover_neighbors_but_not_distant_bones() {
        let model = hand_template();
        let caps = capsules_from_chain(
            model.mesh.vertices(),
            model.neutral_joints(),
            &model.chain,
            &model.skinning,
            &RadiusPolicy::default(),
            0,
        );
        let exempt = structural_exemptions(&caps, &model.chain);
        // Parent and child segments of the index finger share joint 6.
        assert!(exempt.contains(&(6, 7)));
        // Thumb tip segment vs pinky tip segment: no shared joint, far apart.
        assert!(!exempt.contains(&(4, 20)));
    }
}
