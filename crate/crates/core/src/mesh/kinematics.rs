//! Hand kinematics: 21-joint chain, per-joint local frames, rigid skinning,
//! forward-kinematic posing, and joint regression from mesh vertices.
//!
//! Joint layout: 0 is the wrist; each finger owns four consecutive joints
//! (base, two mid joints, tip) starting at 1 (thumb), 5 (index), 9 (middle),
//! 13 (ring), 17 (pinky). Bones are named by their distal joint, so bone
//! ids run 1..=20 and a vertex skinned to bone `b` moves rigidly with the
//! accumulated transform of `parent(b)`.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{obj, Mesh, MeshError};
use crate::numeric::SparseMatrix;

pub const JOINT_COUNT: usize = 21;
pub const WRIST: usize = 0;
/// Middle-finger base joint; predictions and ground truth are centered here.
pub const ROOT_JOINT: usize = 9;
pub const FINGER_BASES: [usize; 5] = [1, 5, 9, 13, 17];
pub const TIPS: [usize; 5] = [4, 8, 12, 16, 20];

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("{what} has length {actual}, expected {expected}")]
    BadLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("joint {joint} must have a parent with a smaller index")]
    BadParent { joint: usize },
    #[error("chain neighbor of joint {joint} must be one of its children")]
    BadChainNext { joint: usize },
    #[error("joint {joint} has a degenerate local frame")]
    DegenerateFrame { joint: usize },
    #[error("vertex {vertex} is skinned to bone {bone}, outside 1..={max}")]
    BoneOutOfRange {
        vertex: usize,
        bone: u16,
        max: usize,
    },
    #[error("flexion vertex {vertex} for joint {joint} is out of range")]
    FlexionOutOfRange { joint: usize, vertex: usize },
    #[error("regressor is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    RegressorShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("regressor row {joint} sums to {sum}, expected 1")]
    RegressorRowSum { joint: usize, sum: f64 },
    #[error("regressor entry ({joint}, {vertex}) is negative")]
    RegressorNegative { joint: usize, vertex: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parent and chain-neighbor links for the 21 joints.
///
/// `chain_next[i]` is the child joint whose direction defines the local z
/// axis at `i`; it is `None` exactly at fingertips. The wrist points at the
/// middle-finger base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub parents: Vec<Option<usize>>,
    pub chain_next: Vec<Option<usize>>,
}

impl KinematicChain {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        for (what, len) in [
            ("parents", self.parents.len()),
            ("chain_next", self.chain_next.len()),
        ] {
            if len != JOINT_COUNT {
                return Err(KinematicsError::BadLength {
                    what,
                    expected: JOINT_COUNT,
                    actual: len,
                });
            }
        }
        for j in 0..JOINT_COUNT {
            match self.parents[j] {
                None if j == WRIST => {}
                Some(p) if j != WRIST && p < j => {}
                _ => return Err(KinematicsError::BadParent { joint: j }),
            }
            match self.chain_next[j] {
                Some(n) => {
                    if n >= JOINT_COUNT || self.parents[n] != Some(j) {
                        return Err(KinematicsError::BadChainNext { joint: j });
                    }
                }
                None => {
                    if !TIPS.contains(&j) {
                        return Err(KinematicsError::BadChainNext { joint: j });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn children(&self, joint: usize) -> Vec<usize> {
        (0..JOINT_COUNT)
            .filter(|&c| self.parents[c] == Some(joint))
            .collect()
    }
}

/// Per-vertex rigid bone assignment. Bone `b` spans `parent(b) -> b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skinning {
    pub bones: Vec<u16>,
}

impl Skinning {
    pub fn validate(&self, vertex_count: usize) -> Result<(), KinematicsError> {
        if self.bones.len() != vertex_count {
            return Err(KinematicsError::BadLength {
                what: "skinning",
                expected: vertex_count,
                actual: self.bones.len(),
            });
        }
        for (v, &b) in self.bones.iter().enumerate() {
            if b == 0 || b as usize >= JOINT_COUNT {
                return Err(KinematicsError::BoneOutOfRange {
                    vertex: v,
                    bone: b,
                    max: JOINT_COUNT - 1,
                });
            }
        }
        Ok(())
    }
}

/// Right-handed orthonormal frame anchored at a joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: [f64; 3],
    pub x: [f64; 3],
    pub y: [f64; 3],
    pub z: [f64; 3],
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

const FRAME_EPS: f64 = 1e-9;

/// Local frames at every joint of a neutral hand.
///
/// z points along the chain toward `chain_next` (tips continue outward from
/// their parent), x is the direction to the joint's flexion vertex projected
/// perpendicular to z, and y completes the right-handed frame.
pub fn compute_local_frames(
    joints: &[[f64; 3]],
    vertices: &[[f64; 3]],
    chain: &KinematicChain,
    flexion: &[usize],
) -> Result<Vec<LocalFrame>, KinematicsError> {
    if joints.len() != JOINT_COUNT {
        return Err(KinematicsError::BadLength {
            what: "joints",
            expected: JOINT_COUNT,
            actual: joints.len(),
        });
    }
    if flexion.len() != JOINT_COUNT {
        return Err(KinematicsError::BadLength {
            what: "flexion vertices",
            expected: JOINT_COUNT,
            actual: flexion.len(),
        });
    }
    let mut frames = Vec::with_capacity(JOINT_COUNT);
    for j in 0..JOINT_COUNT {
        let origin = v3(joints[j]);
        let toward = match chain.chain_next[j] {
            Some(n) => v3(joints[n]) - origin,
            None => origin - v3(joints[chain.parents[j].expect("tip has a parent")]),
        };
        let zn = toward.norm();
        if zn < FRAME_EPS {
            return Err(KinematicsError::DegenerateFrame { joint: j });
        }
        let z = toward / zn;
        let fv = flexion[j];
        if fv >= vertices.len() {
            return Err(KinematicsError::FlexionOutOfRange { joint: j, vertex: fv });
        }
        let d = v3(vertices[fv]) - origin;
        let planar = d - z * d.dot(&z);
        let xn = planar.norm();
        if xn < FRAME_EPS {
            return Err(KinematicsError::DegenerateFrame { joint: j });
        }
        let x = planar / xn;
        let y = z.cross(&x);
        frames.push(LocalFrame {
            origin: arr(origin),
            x: arr(x),
            y: arr(y),
            z: arr(z),
        });
    }
    Ok(frames)
}

/// Accumulated per-axis rotation angles (radians) about each joint's neutral
/// local axes, in x, y, z order.
pub type JointAngles = Vec<[f64; 3]>;

pub fn zero_angles() -> JointAngles {
    vec![[0.0; 3]; JOINT_COUNT]
}

/// Rigid transform as rotation plus translation.
#[derive(Debug, Clone, Copy)]
pub struct Rigid {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Rigid {
    pub fn identity() -> Self {
        Rigid {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }

    pub fn compose(&self, inner: &Rigid) -> Rigid {
        Rigid {
            r: self.r * inner.r,
            t: self.r * inner.t + self.t,
        }
    }

    /// Rotation about a fixed point.
    pub fn about(point: Vector3<f64>, r: Matrix3<f64>) -> Rigid {
        Rigid {
            t: point - r * point,
            r,
        }
    }
}

/// Per-joint accumulated world transforms for a set of joint angles.
///
/// A joint's rotation happens about its neutral origin in its neutral local
/// axes (x, then y, then z), and parents carry children.
pub fn accumulated_transforms(
    chain: &KinematicChain,
    frames: &[LocalFrame],
    angles: &JointAngles,
) -> Vec<Rigid> {
    assert_eq!(angles.len(), JOINT_COUNT, "need one angle triple per joint");
    let mut out: Vec<Rigid> = Vec::with_capacity(JOINT_COUNT);
    for j in 0..JOINT_COUNT {
        let f = &frames[j];
        let basis = Matrix3::from_columns(&[v3(f.x), v3(f.y), v3(f.z)]);
        let [ax, ay, az] = angles[j];
        let local = Rotation3::from_axis_angle(&Vector3::x_axis(), ax)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), ay)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), az);
        let world_rot = basis * local.into_inner() * basis.transpose();
        let own = Rigid::about(v3(f.origin), world_rot);
        let acc = match chain.parents[j] {
            Some(p) => out[p].compose(&own),
            None => own,
        };
        out.push(acc);
    }
    out
}

/// A posed hand: deformed vertices plus posed joint positions.
#[derive(Debug, Clone)]
pub struct Posed {
    pub vertices: Vec<[f64; 3]>,
    pub joints: Vec<[f64; 3]>,
}

/// Applies forward kinematics to the full hand model.
pub fn pose_hand(model: &HandModel, angles: &JointAngles) -> Posed {
    let acc = accumulated_transforms(&model.chain, &model.frames, angles);
    let vertices = model
        .mesh
        .vertices()
        .iter()
        .zip(&model.skinning.bones)
        .map(|(&v, &b)| {
            let carrier = model.chain.parents[b as usize].expect("bone joints have parents");
            arr(acc[carrier].apply(v3(v)))
        })
        .collect();
    let joints = (0..JOINT_COUNT)
        .map(|j| arr(acc[j].apply(v3(model.joints[j]))))
        .collect();
    Posed { vertices, joints }
}

/// Sparse joint regressor: joints are convex combinations of vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRegressor {
    weights: SparseMatrix,
}

impl JointRegressor {
    pub fn new(weights: SparseMatrix, vertex_count: usize) -> Result<Self, KinematicsError> {
        if weights.rows() != JOINT_COUNT || weights.cols() != vertex_count {
            return Err(KinematicsError::RegressorShape {
                rows: weights.rows(),
                cols: weights.cols(),
                expected_rows: JOINT_COUNT,
                expected_cols: vertex_count,
            });
        }
        for j in 0..JOINT_COUNT {
            let mut sum = 0.0;
            for &(_, v, w) in weights.row(j) {
                if w < 0.0 {
                    return Err(KinematicsError::RegressorNegative { joint: j, vertex: v });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::RegressorRowSum { joint: j, sum });
            }
        }
        Ok(JointRegressor { weights })
    }

    pub fn weights(&self) -> &SparseMatrix {
        &self.weights
    }
}

/// Joint positions regressed from (possibly predicted) vertices.
pub fn regress_joints(regressor: &JointRegressor, vertices: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut joints = vec![[0.0; 3]; JOINT_COUNT];
    for &(j, v, w) in regressor.weights.triplets() {
        for k in 0..3 {
            joints[j][k] += w * vertices[v][k];
        }
    }
    joints
}

/// Translates vertices and joints so [`ROOT_JOINT`] sits at the origin;
/// returns the removed offset.
pub fn root_center(vertices: &mut [[f64; 3]], joints: &mut [[f64; 3]]) -> [f64; 3] {
    let offset = joints[ROOT_JOINT];
    for p in vertices.iter_mut().chain(joints.iter_mut()) {
        for k in 0..3 {
            p[k] -= offset[k];
        }
    }
    offset
}

/// Template mesh plus everything needed to pose and evaluate it.
#[derive(Debug, Clone)]
pub struct HandModel {
    pub mesh: Mesh,
    pub chain: KinematicChain,
    pub skinning: Skinning,
    pub flexion: Vec<usize>,
    pub regressor: JointRegressor,
    joints: Vec<[f64; 3]>,
    frames: Vec<LocalFrame>,
}

#[derive(Serialize, Deserialize)]
struct FlexionFile {
    vertices: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RegressorFile {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl HandModel {
    pub fn new(
        mesh: Mesh,
        chain: KinematicChain,
        skinning: Skinning,
        flexion: Vec<usize>,
        regressor: JointRegressor,
    ) -> Result<Self, KinematicsError> {
        chain.validate()?;
        skinning.validate(mesh.vertex_count())?;
        let joints = regress_joints(&regressor, mesh.vertices());
        let frames = compute_local_frames(&joints, mesh.vertices(), &chain, &flexion)?;
        Ok(HandModel {
            mesh,
            chain,
            skinning,
            flexion,
            regressor,
            joints,
            frames,
        })
    }

    /// Joint positions of the neutral template.
    pub fn neutral_joints(&self) -> &[[f64; 3]] {
        &self.joints
    }

    /// Local frames of the neutral template.
    pub fn frames(&self) -> &[LocalFrame] {
        &self.frames
    }

    /// Loads `hand.obj`, `chain.json`, `skinning.json`, `flexion.json`, and
    /// `regressor.json` from a directory.
    pub fn load(dir: &Path) -> Result<Self, KinematicsError> {
        let mesh = obj::read_obj(&dir.join("hand.obj"))?;
        let chain: KinematicChain = read_json(&dir.join("chain.json"))?;
        let skinning: Skinning = read_json(&dir.join("skinning.json"))?;
        let flexion: FlexionFile = read_json(&dir.join("flexion.json"))?;
        let reg: RegressorFile = read_json(&dir.join("regressor.json"))?;
        let weights = SparseMatrix::from_triplets(reg.rows, reg.cols, reg.entries)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        let regressor = JointRegressor::new(weights, mesh.vertex_count())?;
        HandModel::new(mesh, chain, skinning, flexion.vertices, regressor)
    }

    pub fn save(&self, dir: &Path) -> Result<(), KinematicsError> {
        fs::create_dir_all(dir)?;
        obj::write_obj(&dir.join("hand.obj"), &self.mesh)?;
        write_json(&dir.join("chain.json"), &self.chain)?;
        write_json(&dir.join("skinning.json"), &self.skinning)?;
        write_json(
            &dir.join("flexion.json"),
            &FlexionFile {
                vertices: self.flexion.clone(),
            },
        )?;
        write_json(
            &dir.join("regressor.json"),
            &RegressorFile {
                rows: self.regressor.weights.rows(),
                cols: self.regressor.weights.cols(),
                entries: self.regressor.weights.triplets().to_vec(),
            },
        )?;
        Ok(())
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, KinematicsError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| KinematicsError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), KinematicsError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| KinematicsError::Json {
        path: path.display().to_string(),
        source,
    })?;
    crate::numeric::checkpoint::atomic_write(path, text.as_bytes())?;
    Ok(())
}
