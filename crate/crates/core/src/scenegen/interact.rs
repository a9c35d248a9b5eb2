//! Interacting-scene generation: placement, incremental approach, and
//! randomized articulation under collision constraints.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::kinematics::{zero_angles, TIPS, WRIST};
use crate::mesh::template::box_mesh;
use crate::mesh::{pose_hand, HandModel, JointAngles, Mesh, Posed, JOINT_COUNT, ROOT_JOINT};
use crate::numeric::checkpoint::atomic_write;

use super::capsule::{
    capsules_from_chain, capsules_intersect, structural_exemptions, Capsule, RadiusPolicy,
};
use super::raster::{rasterize_masks, write_pgm, CameraConfig};
use super::SceneGenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneMode {
    HandHand,
    HandObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ObjectPose {
    /// Articulated hand with per-joint rotations in radians.
    Hand { angles: JointAngles },
    Rigid,
}

/// One placed model: world point = rotation * local + translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub pose: ObjectPose,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub mode: SceneMode,
    pub camera: CameraConfig,
    pub objects: Vec<SceneObject>,
}

/// Shared geometry: the hand model with fitted capsule radii and structural
/// exemptions, plus the rigid bar object.
#[derive(Debug, Clone)]
pub struct SceneAssets {
    pub hand: HandModel,
    /// Capsule radius per bone id; slot 0 is unused.
    pub hand_radii: Vec<f64>,
    pub hand_exempt: BTreeSet<(usize, usize)>,
    pub bar: Mesh,
    pub bar_capsule: Capsule,
}

const BAR_HALF: [f64; 3] = [0.100, 0.015, 0.015];

impl SceneAssets {
    pub fn new(hand: HandModel, policy: &RadiusPolicy) -> Self {
        let neutral = capsules_from_chain(
            hand.mesh.vertices(),
            hand.neutral_joints(),
            &hand.chain,
            &hand.skinning,
            policy,
            0,
        );
        let mut hand_radii = vec![0.0; JOINT_COUNT];
        for cap in &neutral {
            hand_radii[cap.owner.1] = cap.radius;
        }
        let hand_exempt = structural_exemptions(&neutral, &hand.chain);
        let bar = box_mesh(BAR_HALF[0], BAR_HALF[1], BAR_HALF[2]);
        let bar_capsule = Capsule {
            a: [-BAR_HALF[0], 0.0, 0.0],
            b: [BAR_HALF[0], 0.0, 0.0],
            radius: BAR_HALF[1].hypot(BAR_HALF[2]) + policy.margin,
            owner: (0, 0),
        };
        SceneAssets {
            hand,
            hand_radii,
            hand_exempt,
            bar,
            bar_capsule,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub mode: SceneMode,
    /// Approach increment, meters.
    pub shift_step: f64,
    pub angle_step_deg: f64,
    pub angle_limit_deg: f64,
    pub start_distance: f64,
    pub max_place_retries: usize,
    pub camera: CameraConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            mode: SceneMode::HandHand,
            shift_step: 0.002,
            angle_step_deg: 5.0,
            angle_limit_deg: 60.0,
            start_distance: 0.35,
            max_place_retries: 32,
            camera: CameraConfig::default(),
        }
    }
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr(v: Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn mat_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn rows_mat(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

pub fn transform_point(obj: &SceneObject, p: [f64; 3]) -> [f64; 3] {
    let r = rows_mat(&obj.rotation);
    arr(r * v3(p) + v3(obj.translation))
}

/// Uniform random rotation from three unit draws.
fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let u1: f64 = rng.gen_range(0.0..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let u3: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Rotation carrying `from` onto `to`, then rolled about `to`.
fn aim_rotation(from: Vector3<f64>, to: Vector3<f64>, roll: f64) -> Matrix3<f64> {
    let base = Rotation3::rotation_between(&from, &to).unwrap_or_else(|| {
        let pick = if from.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let perp = Unit::new_normalize(from.cross(&pick));
        Rotation3::from_axis_angle(&perp, std::f64::consts::PI)
    });
    let spin = Rotation3::from_axis_angle(&Unit::new_normalize(to), roll);
    (spin * base).into_inner()
}

/// Capsules of every object in world coordinates, owners tagged with the
/// object index.
pub fn world_capsules(assets: &SceneAssets, scene: &Scene) -> Vec<Capsule> {
    let mut out = Vec::new();
    for (oi, obj) in scene.objects.iter().enumerate() {
        match &obj.pose {
            ObjectPose::Hand { angles } => {
                let posed = pose_hand(&assets.hand, angles);
                for (bone, parent) in assets.hand.chain.parents.iter().enumerate() {
                    let Some(parent) = parent else { continue };
                    out.push(Capsule {
                        a: transform_point(obj, posed.joints[*parent]),
                        b: transform_point(obj, posed.joints[bone]),
                        radius: assets.hand_radii[bone],
                        owner: (oi, bone),
                    });
                }
            }
            ObjectPose::Rigid => {
                let c = &assets.bar_capsule;
                out.push(Capsule {
                    a: transform_point(obj, c.a),
                    b: transform_point(obj, c.b),
                    radius: c.radius,
                    owner: (oi, 0),
                });
            }
        }
    }
    out
}

/// A scene passes when no cross-object capsules overlap and no same-hand
/// pair outside the structural exemptions overlaps.
pub fn scene_valid(assets: &SceneAssets, scene: &Scene) -> bool {
    let caps = world_capsules(assets, scene);
    for i in 0..caps.len() {
        for j in i + 1..caps.len() {
            let (ci, cj) = (&caps[i], &caps[j]);
            if ci.owner.0 == cj.owner.0 {
                let (bi, bj) = (ci.owner.1, cj.owner.1);
                if assets.hand_exempt.contains(&(bi.min(bj), bi.max(bj))) {
                    continue;
                }
            }
            if capsules_intersect(ci, cj) {
                return false;
            }
        }
    }
    true
}

fn hand_object(name: &str, rotation: Matrix3<f64>, root_at: Vector3<f64>, hand: &HandModel) -> SceneObject {
    // Put the centering root joint exactly at the requested point.
    let t = root_at - rotation * v3(hand.neutral_joints()[ROOT_JOINT]);
    SceneObject {
        name: name.to_string(),
        pose: ObjectPose::Hand {
            angles: zero_angles(),
        },
        rotation: mat_rows(&rotation),
        translation: arr(t),
    }
}

fn angles_mut(obj: &mut SceneObject) -> &mut JointAngles {
    match &mut obj.pose {
        ObjectPose::Hand { angles } => angles,
        ObjectPose::Rigid => unreachable!("only hands articulate"),
    }
}

fn articulate(
    assets: &SceneAssets,
    scene: &mut Scene,
    dynamic: &[usize],
    cfg: &GenConfig,
    rng: &mut ChaCha8Rng,
) {
    let step = cfg.angle_step_deg.to_radians();
    let limit = cfg.angle_limit_deg.to_radians();
    if step <= 0.0 || limit <= 0.0 {
        return;
    }
    let mut candidates = Vec::new();
    for &oi in dynamic {
        for joint in 0..JOINT_COUNT {
            // A tip rotation moves no geometry, so trying it would loop
            // forever accepting no-ops.
            if TIPS.contains(&joint) {
                continue;
            }
            for axis in 0..3 {
                candidates.push((oi, joint, axis));
            }
        }
    }
    // Each joint axis commits to one direction, so accepted moves always
    // progress toward the angle cap and the loop must terminate.
    let signed: Vec<f64> = candidates
        .iter()
        .map(|_| if rng.gen::<bool>() { step } else { -step })
        .collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    loop {
        order.shuffle(rng);
        let mut accepted = 0;
        for &ci in &order {
            let (oi, joint, axis) = candidates[ci];
            let current = angles_mut(&mut scene.objects[oi])[joint][axis];
            let next = current + signed[ci];
            if next.abs() > limit + 1e-12 {
                continue;
            }
            angles_mut(&mut scene.objects[oi])[joint][axis] = next;
            if scene_valid(assets, scene) {
                accepted += 1;
            } else {
                angles_mut(&mut scene.objects[oi])[joint][axis] = current;
            }
        }
        if accepted == 0 {
            return;
        }
    }
}

/// Builds one interacting scene: center model with a random orientation, a
/// second hand placed facing it, stepped closer until the first collision
/// and backed off once, then per-joint articulation until no joint can move.
pub fn generate_interaction(
    assets: &SceneAssets,
    seed: u64,
    cfg: &GenConfig,
) -> Result<Scene, SceneGenError> {
    if cfg.shift_step <= 0.0 || cfg.start_distance <= 0.0 {
        return Err(SceneGenError::BadConfig {
            reason: "shift_step and start_distance must be positive".to_string(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let center_rotation = random_rotation(&mut rng);
    let center = match cfg.mode {
        SceneMode::HandHand => hand_object("hand0", center_rotation, Vector3::zeros(), &assets.hand),
        SceneMode::HandObject => SceneObject {
            name: "bar".to_string(),
            pose: ObjectPose::Rigid,
            rotation: mat_rows(&center_rotation),
            translation: [0.0, 0.0, 0.0],
        },
    };
    let moving_name = match cfg.mode {
        SceneMode::HandHand => "hand1",
        SceneMode::HandObject => "hand0",
    };
    let palm_normal = v3(assets.hand.frames()[WRIST].y);

    for _ in 0..cfg.max_place_retries {
        let u = random_unit(&mut rng);
        let roll = rng.gen_range(0.0..std::f64::consts::TAU);
        // Root sits along u; the palm faces back toward the center.
        let rotation = aim_rotation(palm_normal, -u, roll);

        let place = |dist: f64| hand_object(moving_name, rotation, u * dist, &assets.hand);
        let mut scene = Scene {
            seed,
            mode: cfg.mode,
            camera: cfg.camera.clone(),
            objects: vec![center.clone(), place(cfg.start_distance)],
        };
        if !scene_valid(assets, &scene) {
            continue;
        }

        let max_steps = (2.0 * cfg.start_distance / cfg.shift_step).ceil() as usize;
        let mut dist = cfg.start_distance;
        let mut collided = false;
        for _ in 0..max_steps {
            let trial = dist - cfg.shift_step;
            scene.objects[1] = place(trial);
            if scene_valid(assets, &scene) {
                dist = trial;
            } else {
                scene.objects[1] = place(dist);
                collided = true;
                break;
            }
        }
        if !collided {
            return Err(SceneGenError::ApproachFailed { seed });
        }

        let dynamic: Vec<usize> = scene
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| matches!(o.pose, ObjectPose::Hand { .. }))
            .map(|(i, _)| i)
            .collect();
        articulate(assets, &mut scene, &dynamic, cfg, &mut rng);

        debug_assert!(scene_valid(assets, &scene));
        return Ok(scene);
    }
    Err(SceneGenError::PlacementFailed { seed })
}

/// Posed world-space geometry of one scene object.
pub fn posed_world(assets: &SceneAssets, scene: &Scene, index: usize) -> Posed {
    let obj = &scene.objects[index];
    match &obj.pose {
        ObjectPose::Hand { angles } => {
            let posed = pose_hand(&assets.hand, angles);
            Posed {
                vertices: posed
                    .vertices
                    .iter()
                    .map(|&v| transform_point(obj, v))
                    .collect(),
                joints: posed
                    .joints
                    .iter()
                    .map(|&j| transform_point(obj, j))
                    .collect(),
            }
        }
        ObjectPose::Rigid => Posed {
            vertices: assets
                .bar
                .vertices()
                .iter()
                .map(|&v| transform_point(obj, v))
                .collect(),
            joints: Vec::new(),
        },
    }
}

/// World-space triangle mesh of one scene object.
pub fn posed_world_mesh(
    assets: &SceneAssets,
    scene: &Scene,
    index: usize,
) -> Result<Mesh, SceneGenError> {
    let posed = posed_world(assets, scene, index);
    let faces = match scene.objects[index].pose {
        ObjectPose::Hand { .. } => assets.hand.mesh.faces(),
        ObjectPose::Rigid => assets.bar.faces(),
    };
    Ok(Mesh::new(posed.vertices, faces.to_vec())?)
}

/// Scene mask set: the full depth-competed render plus one solo mask per
/// object. Object ids are scene indices plus one.
pub fn render_scene(
    assets: &SceneAssets,
    scene: &Scene,
) -> Result<(super::raster::MaskImage, Vec<super::raster::MaskImage>), SceneGenError> {
    let meshes: Vec<Mesh> = (0..scene.objects.len())
        .map(|i| posed_world_mesh(assets, scene, i))
        .collect::<Result<_, _>>()?;
    let tagged: Vec<(u8, &Mesh)> = meshes
        .iter()
        .enumerate()
        .map(|(i, m)| ((i + 1) as u8, m))
        .collect();
    Ok(rasterize_masks(&tagged, &scene.camera))
}

/// Writes scene.json, one posed OBJ per object, and the PGM masks.
pub fn save_scene(dir: &Path, assets: &SceneAssets, scene: &Scene) -> Result<(), SceneGenError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(scene)?;
    atomic_write(&dir.join("scene.json"), json.as_bytes())?;
    for (i, obj) in scene.objects.iter().enumerate() {
        let mesh = posed_world_mesh(assets, scene, i)?;
        crate::mesh::obj::write_obj(&dir.join(format!("{}.obj", obj.name)), &mesh)?;
    }
    let (scene_mask, solos) = render_scene(assets, scene)?;
    write_pgm(&dir.join("mask_scene.pgm"), &scene_mask)?;
    for (obj, solo) in scene.objects.iter().zip(&solos) {
        write_pgm(&dir.join(format!("mask_{}.pgm", obj.name)), solo)?;
    }
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<Scene, SceneGenError> {
    let text = std::fs::read_to_string(dir.join("scene.json"))?;
    Ok(serde_json::from_str(&text)?)
}
