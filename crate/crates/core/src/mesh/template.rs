//! Procedural hand template.
//!
//! A box-modeled left hand: a tapered palm slab (9x3x1 cells) with five
//! parallel fingers extruded from alternating cells of the knuckle edge,
//! four segments each. The counts are load-bearing: 80 palm vertices plus
//! 5 fingers x 4 rings x 4 vertices gives exactly 160, and the closed quad
//! shell triangulates to 316 faces.
//!
//! Conventions: units are meters, fingers point +y, the palm surface faces
//! -z, the thumb column sits at the most negative x. Finger cross sections
//! are inset relative to the palm thickness so neighboring finger capsules
//! stay separated in the neutral pose.

use super::kinematics::{
    HandModel, JointRegressor, KinematicChain, Skinning, FINGER_BASES, JOINT_COUNT, ROOT_JOINT,
    WRIST,
};
#[cfg(test)]
use super::kinematics::TIPS;
use super::Mesh;
use crate::numeric::SparseMatrix;

const COLS: usize = 9;
const ROWS: usize = 3;
const CELL_X: f64 = 0.010;
const CELL_Y: f64 = 0.022;
const HALF_THICK: f64 = 0.008;
/// Palm width scale per row, wrist row first; the top row carries the
/// full 90 mm knuckle width.
const TAPER: [f64; 4] = [0.56, 0.72, 0.86, 1.0];
/// Knuckle-edge cells the fingers grow from, thumb first.
const FINGER_COLS: [usize; 5] = [0, 2, 4, 6, 8];
const RINGS: usize = 4;
const SEGMENT_Y: f64 = 0.0175;
const FINGER_HX: f64 = 0.0035;
const FINGER_HZ: f64 = 0.005;

fn palm_id(i: usize, j: usize, k: usize) -> usize {
    (i * (ROWS + 1) + j) * 2 + k
}

fn ring_id(finger: usize, ring: usize, corner: usize) -> usize {
    let palm = (COLS + 1) * (ROWS + 1) * 2;
    palm + finger * RINGS * 4 + (ring - 1) * 4 + corner
}

fn palm_x(i: usize, j: usize) -> f64 {
    (-0.045 + CELL_X * i as f64) * TAPER[j]
}

fn palm_y(j: usize) -> f64 {
    -0.033 + CELL_Y * j as f64
}

fn finger_center_x(finger: usize) -> f64 {
    -0.045 + CELL_X * FINGER_COLS[finger] as f64 + CELL_X / 2.0
}

fn ring_y(ring: usize) -> f64 {
    palm_y(ROWS) + SEGMENT_Y * ring as f64
}

/// Ring corners in tube order, matching the base-quad corner order
/// (-x-z, -x+z, +x+z, +x-z).
fn ring_corner(finger: usize, ring: usize, corner: usize) -> [f64; 3] {
    let xf = finger_center_x(finger);
    let (dx, dz) = match corner {
        0 => (-FINGER_HX, -FINGER_HZ),
        1 => (-FINGER_HX, FINGER_HZ),
        2 => (FINGER_HX, FINGER_HZ),
        _ => (FINGER_HX, -FINGER_HZ),
    };
    [xf + dx, ring_y(ring), dz]
}

pub fn hand_template() -> HandModel {
    let mut vertices = vec![[0.0; 3]; (COLS + 1) * (ROWS + 1) * 2 + 5 * RINGS * 4];
    for i in 0..=COLS {
        for j in 0..=ROWS {
            for k in 0..2 {
                vertices[palm_id(i, j, k)] = [
                    palm_x(i, j),
                    palm_y(j),
                    if k == 0 { -HALF_THICK } else { HALF_THICK },
                ];
            }
        }
    }
    for f in 0..5 {
        for r in 1..=RINGS {
            for c in 0..4 {
                vertices[ring_id(f, r, c)] = ring_corner(f, r, c);
            }
        }
    }

    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut quad = |a: usize, b: usize, c: usize, d: usize| {
        faces.push([a, b, c]);
        faces.push([a, c, d]);
    };

    for i in 0..COLS {
        for j in 0..ROWS {
            // Bottom (palm side, -z out) and top (+z out).
            quad(
                palm_id(i, j, 0),
                palm_id(i, j + 1, 0),
                palm_id(i + 1, j + 1, 0),
                palm_id(i + 1, j, 0),
            );
            quad(
                palm_id(i, j, 1),
                palm_id(i + 1, j, 1),
                palm_id(i + 1, j + 1, 1),
                palm_id(i, j + 1, 1),
            );
        }
    }
    for j in 0..ROWS {
        quad(
            palm_id(0, j, 0),
            palm_id(0, j, 1),
            palm_id(0, j + 1, 1),
            palm_id(0, j + 1, 0),
        );
        quad(
            palm_id(COLS, j, 0),
            palm_id(COLS, j + 1, 0),
            palm_id(COLS, j + 1, 1),
            palm_id(COLS, j, 1),
        );
    }
    for i in 0..COLS {
        // Wrist edge, -y out.
        quad(
            palm_id(i, 0, 0),
            palm_id(i + 1, 0, 0),
            palm_id(i + 1, 0, 1),
            palm_id(i, 0, 1),
        );
    }
    for i in 0..COLS {
        // Knuckle edge, +y out; finger cells are replaced by tubes below.
        if !FINGER_COLS.contains(&i) {
            quad(
                palm_id(i, ROWS, 0),
                palm_id(i, ROWS, 1),
                palm_id(i + 1, ROWS, 1),
                palm_id(i + 1, ROWS, 0),
            );
        }
    }
    for (f, &col) in FINGER_COLS.iter().enumerate() {
        let base = [
            palm_id(col, ROWS, 0),
            palm_id(col, ROWS, 1),
            palm_id(col + 1, ROWS, 1),
            palm_id(col + 1, ROWS, 0),
        ];
        for r in 1..=RINGS {
            let lower: Vec<usize> = if r == 1 {
                base.to_vec()
            } else {
                (0..4).map(|c| ring_id(f, r - 1, c)).collect()
            };
            for s in 0..4 {
                quad(
                    lower[s],
                    lower[(s + 1) % 4],
                    ring_id(f, r, (s + 1) % 4),
                    ring_id(f, r, s),
                );
            }
        }
        quad(
            ring_id(f, RINGS, 0),
            ring_id(f, RINGS, 1),
            ring_id(f, RINGS, 2),
            ring_id(f, RINGS, 3),
        );
    }

    let mesh = Mesh::new(vertices, faces).expect("template mesh is well formed");

    let mut parents = vec![None; JOINT_COUNT];
    let mut chain_next = vec![None; JOINT_COUNT];
    chain_next[WRIST] = Some(ROOT_JOINT);
    for &m in &FINGER_BASES {
        parents[m] = Some(WRIST);
        for step in 0..3 {
            parents[m + step + 1] = Some(m + step);
            chain_next[m + step] = Some(m + step + 1);
        }
    }
    let chain = KinematicChain {
        parents,
        chain_next,
    };

    // Palm vertices ride the nearest finger's metacarpal; ring r of finger f
    // rides the bone ending at joint base+min(r, 3).
    let mut bones = vec![0u16; mesh.vertex_count()];
    for i in 0..=COLS {
        for j in 0..=ROWS {
            let x = palm_x(i, j);
            let nearest = (0..5)
                .min_by(|&a, &b| {
                    let da = (x - finger_center_x(a)).abs();
                    let db = (x - finger_center_x(b)).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            for k in 0..2 {
                bones[palm_id(i, j, k)] = FINGER_BASES[nearest] as u16;
            }
        }
    }
    for f in 0..5 {
        for r in 1..=RINGS {
            let bone = FINGER_BASES[f] + r.min(3);
            for c in 0..4 {
                bones[ring_id(f, r, c)] = bone as u16;
            }
        }
    }
    let skinning = Skinning { bones };

    // Joints are uniform centroids of vertex rings, so regression at the
    // neutral pose reproduces them exactly.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..=COLS {
        for k in 0..2 {
            triplets.push((WRIST, palm_id(i, 0, k), 1.0 / (2.0 * (COLS + 1) as f64)));
        }
    }
    for (f, &col) in FINGER_COLS.iter().enumerate() {
        let m = FINGER_BASES[f];
        let base = [
            palm_id(col, ROWS, 0),
            palm_id(col, ROWS, 1),
            palm_id(col + 1, ROWS, 1),
            palm_id(col + 1, ROWS, 0),
        ];
        for &v in &base {
            triplets.push((m, v, 0.25));
        }
        for (joint, ring) in [(m + 1, 1), (m + 2, 2), (m + 3, RINGS)] {
            for c in 0..4 {
                triplets.push((joint, ring_id(f, ring, c), 0.25));
            }
        }
    }
    let weights = SparseMatrix::from_triplets(JOINT_COUNT, mesh.vertex_count(), triplets)
        .expect("regressor triplets in range");
    let regressor = JointRegressor::new(weights, mesh.vertex_count()).expect("regressor rows");

    // Flexion vertices: wrist uses a +x palm-edge vertex (making local y
    // the palm normal, up to taper tilt); finger joints use the palm-side
    // -x corner of their ring.
    let mut flexion = vec![0usize; JOINT_COUNT];
    flexion[WRIST] = palm_id(COLS, 0, 1);
    for (f, &col) in FINGER_COLS.iter().enumerate() {
        let m = FINGER_BASES[f];
        flexion[m] = palm_id(col, ROWS, 0);
        flexion[m + 1] = ring_id(f, 1, 0);
        flexion[m + 2] = ring_id(f, 2, 0);
        flexion[m + 3] = ring_id(f, RINGS, 0);
    }

    HandModel::new(mesh, chain, skinning, flexion, regressor).expect("template invariants")
}

/// Axis-aligned closed box, 8 vertices and 12 triangles, centered at the
/// origin.
pub fn box_mesh(hx: f64, hy: f64, hz: f64) -> Mesh {
    let vertices = vec![
        [-hx, -hy, -hz],
        [hx, -hy, -hz],
        [hx, hy, -hz],
        [-hx, hy, -hz],
        [-hx, -hy, hz],
        [hx, -hy, hz],
        [hx, hy, hz],
        [-hx, hy, hz],
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    Mesh::new(vertices, faces).expect("box is well formed")
}
