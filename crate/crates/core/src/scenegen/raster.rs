//! Pinhole z-buffer rasterizer producing per-pixel object labels, and PGM
//! mask files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::numeric::checkpoint::atomic_write;

use super::SceneGenError;

/// Fixed pinhole camera at `position` looking along +z, y up in world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub position: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 224,
            height: 224,
            fx: 500.0,
            fy: 500.0,
            cx: 112.0,
            cy: 112.0,
            position: [0.0, 0.0, -0.8],
        }
    }
}

const NEAR: f64 = 0.01;

/// Label image: 0 is background, other values are object ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize) -> Self {
        MaskImage {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Pixels carrying the given label.
    pub fn count(&self, id: u8) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }
}

struct Buffers {
    labels: Vec<u8>,
    // Inverse camera depth; 0 means empty, larger is nearer.
    inv_z: Vec<f64>,
}

fn raster_mesh(buf: &mut Buffers, cam: &CameraConfig, mesh: &Mesh, id: u8) {
    let (w, h) = (cam.width, cam.height);
    let project = |p: &[f64; 3]| -> Option<(f64, f64, f64)> {
        let x = p[0] - cam.position[0];
        let y = p[1] - cam.position[1];
        let z = p[2] - cam.position[2];
        if z < NEAR {
            return None;
        }
        Some((cam.cx + cam.fx * x / z, cam.cy - cam.fy * y / z, 1.0 / z))
    };

    for face in mesh.faces() {
        // Triangles reaching behind the near plane are dropped whole; scenes
        // sit far inside the frustum so partial clipping never pays off.
        let Some(p0) = project(&mesh.vertices()[face[0]]) else { continue };
        let Some(p1) = project(&mesh.vertices()[face[1]]) else { continue };
        let Some(p2) = project(&mesh.vertices()[face[2]]) else { continue };

        let area = (p1.0 - p0.0) * (p2.1 - p0.1) - (p1.1 - p0.1) * (p2.0 - p0.0);
        if area.abs() < 1e-12 {
            continue;
        }

        let min_x = p0.0.min(p1.0).min(p2.0).floor().max(0.0) as usize;
        let max_x = (p0.0.max(p1.0).max(p2.0).ceil() as i64).clamp(0, w as i64) as usize;
        let min_y = p0.1.min(p1.1).min(p2.1).floor().max(0.0) as usize;
        let max_y = (p0.1.max(p1.1).max(p2.1).ceil() as i64).clamp(0, h as i64) as usize;

        for py in min_y..max_y {
            for px in min_x..max_x {
                let (sx, sy) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = (p2.0 - p1.0) * (sy - p1.1) - (p2.1 - p1.1) * (sx - p1.0);
                let w1 = (p0.0 - p2.0) * (sy - p2.1) - (p0.1 - p2.1) * (sx - p2.0);
                let w2 = (p1.0 - p0.0) * (sy - p0.1) - (p1.1 - p0.1) * (sx - p0.0);
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                // 1/z is affine over the screen triangle, so interpolating it
                // gives exact depth ordering.
                let inv = (w0 * p0.2 + w1 * p1.2 + w2 * p2.2) / area;
                let slot = py * w + px;
                if inv > buf.inv_z[slot] {
                    buf.inv_z[slot] = inv;
                    buf.labels[slot] = id;
                }
            }
        }
    }
}

/// Renders the full scene with depth competition plus one solo mask per
/// object. A pixel labeled `o` in the scene mask is always labeled `o` in
/// object `o`'s solo mask, since occlusion only removes pixels.
pub fn rasterize_masks(
    objects: &[(u8, &Mesh)],
    cam: &CameraConfig,
) -> (MaskImage, Vec<MaskImage>) {
    let size = cam.width * cam.height;
    let mut scene = Buffers {
        labels: vec![0; size],
        inv_z: vec![0.0; size],
    };
    let mut solos = Vec::with_capacity(objects.len());
    for &(id, mesh) in objects {
        raster_mesh(&mut scene, cam, mesh, id);
        let mut solo = Buffers {
            labels: vec![0; size],
            inv_z: vec![0.0; size],
        };
        raster_mesh(&mut solo, cam, mesh, id);
        solos.push(MaskImage {
            width: cam.width,
            height: cam.height,
            labels: solo.labels,
        });
    }
    (
        MaskImage {
            width: cam.width,
            height: cam.height,
            labels: scene.labels,
        },
        solos,
    )
}

/// Binary 8-bit PGM, one byte per pixel label.
pub fn write_pgm(path: &Path, mask: &MaskImage) -> Result<(), SceneGenError> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    bytes.extend_from_slice(&mask.labels);
    Ok(atomic_write(path, &bytes)?)
}

pub fn read_pgm(path: &Path) -> Result<MaskImage, SceneGenError> {
    let data = std::fs::read(path)?;
    let bad = |reason: &str| SceneGenError::BadMask {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };

    // Header: magic, width, height, maxval as whitespace-separated tokens.
    let mut fields = [0usize; 3];
    let mut field = 0;
    let mut pos = 0;
    if !data.starts_with(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    pos += 2;
    while field < 3 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        let text = std::str::from_utf8(&data[start..pos]).unwrap();
        fields[field] = text.parse().map_err(|_| bad("header field overflow"))?;
        field += 1;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(bad("missing header terminator"));
    }
    pos += 1;
    let pixels = &data[pos..];
    if pixels.len() != width * height {
        return Err(bad("pixel count does not match dimensions"));
    }
    Ok(MaskImage {
        width,
        height,
        labels: pixels.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn triangle(z: f64, scale: f64) -> Mesh {
        Mesh::new(
            vec![
                [-0.1 * scale, -0.1 * scale, z],
                [0.1 * scale, -0.1 * scale, z],
                [0.0, 0.15 * scale, z],
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn center_triangle_labels_center_pixels() {
        let cam = CameraConfig::default();
        let tri = triangle(0.0, 1.0);
        let (scene, solos) = rasterize_masks(&[(1, &tri)], &cam);
        assert_eq!(scene.at(112, 112), 1);
        assert_eq!(scene.at(0, 0), 0);
        assert!(scene.count(1) > 100);
        assert_eq!(scene, solos[0]);
    }

    #[test]
    fn nearer_object_wins_depth_competition() {
        let cam = CameraConfig::default();
        let near = triangle(0.0, 1.0);
        let far = triangle(0.1, 1.0);
        let (scene, solos) = rasterize_masks(&[(1, &near), (2, &far)], &cam);
        assert_eq!(scene.at(112, 112), 1);
        assert_eq!(scene.count(2), 0);
        // Solo render of the occluded object still sees it.
        assert!(solos[1].count(2) > 0);

        // Draw order must not matter for depth competition.
        let (scene2, _) = rasterize_masks(&[(2, &far), (1, &near)], &cam);
        assert_eq!(scene, scene2);
    }

    #[test]
    fn scene_labels_are_subsets_of_solo_labels() {
        let cam = CameraConfig::default();
        let a = triangle(0.0, 1.0);
        let b = triangle(0.05, 1.4);
        let (scene, solos) = rasterize_masks(&[(1, &a), (2, &b)], &cam);
        for (i, &label) in scene.labels.iter().enumerate() {
            if label != 0 {
                assert_eq!(solos[label as usize - 1].labels[i], label);
            }
        }
        assert!(solos[1].count(2) > scene.count(2));
    }

    #[test]
    fn behind_camera_object_renders_empty() {
        let cam = CameraConfig::default();
        let tri = triangle(-2.0, 1.0);
        let (scene, solos) = rasterize_masks(&[(7, &tri)], &cam);
        assert!(scene.is_empty());
        assert!(solos[0].is_empty());
    }

    #[test]
    fn pgm_round_trip_preserves_labels() {
        let mut mask = MaskImage::new(5, 3);
        for (i, l) in mask.labels.iter_mut().enumerate() {
            *l = (i % 3) as u8;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_pgm(&path, &mask).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, mask);

        std::fs::write(&path, b"P5\n2 2\n255\n123").unwrap();
        assert!(read_pgm(&path).is_err());
    }
}
