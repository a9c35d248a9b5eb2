//! Quadric edge-collapse decimation that keeps surviving vertices exactly
//! where they were.
//!
//! Each collapse removes the higher-index endpoint of an edge and reroutes
//! its faces to the lower-index endpoint, so every coarse vertex is a fine
//! vertex with an unchanged position. Candidates are ordered by quadric
//! error evaluated at the kept position; ties fall to the lexicographically
//! smallest edge. Collapses must pass the link condition and must not flip
//! or crush any rerouted face.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use super::HierarchyError;
use crate::mesh::Mesh;

/// Symmetric 4x4 plane quadric, upper triangle row-major.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn from_plane(n: [f64; 3], d: f64, weight: f64) -> Self {
        let p = [n[0], n[1], n[2], d];
        let mut q = [0.0; 10];
        let mut idx = 0;
        for i in 0..4 {
            for j in i..4 {
                q[idx] = weight * p[i] * p[j];
                idx += 1;
            }
        }
        Quadric(q)
    }

    fn add(&mut self, other: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        let v = [p[0], p[1], p[2], 1.0];
        let mut total = 0.0;
        let mut idx = 0;
        for i in 0..4 {
            for j in i..4 {
                let term = self.0[idx] * v[i] * v[j];
                total += if i == j { term } else { 2.0 * term };
                idx += 1;
            }
        }
        total
    }
}

#[derive(Debug, PartialEq)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Decimation output: the coarse mesh plus, per coarse vertex, the index it
/// had in the fine mesh (ascending).
#[derive(Debug, Clone)]
pub struct Decimated {
    pub mesh: Mesh,
    pub kept: Vec<usize>,
}

struct Work {
    positions: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_alive: Vec<bool>,
    vfaces: Vec<BTreeSet<usize>>,
    quadrics: Vec<Quadric>,
    alive_count: usize,
}

fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Work {
    fn new(mesh: &Mesh) -> Self {
        let positions = mesh.vertices().to_vec();
        let faces = mesh.faces().to_vec();
        let mut vfaces = vec![BTreeSet::new(); positions.len()];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vfaces[v].insert(fi);
            }
        }
        let mut quadrics = vec![Quadric::default(); positions.len()];
        for f in &faces {
            let (a, b, c) = (positions[f[0]], positions[f[1]], positions[f[2]]);
            let n = cross(sub(b, a), sub(c, a));
            let len = dot(n, n).sqrt();
            if len == 0.0 {
                continue;
            }
            let unit = [n[0] / len, n[1] / len, n[2] / len];
            let d = -dot(unit, a);
            let area = 0.5 * len;
            let q = Quadric::from_plane(unit, d, area);
            for &v in f {
                quadrics[v].add(&q);
            }
        }
        let alive_count = positions.len();
        Work {
            face_alive: vec![true; faces.len()],
            vertex_alive: vec![true; positions.len()],
            positions,
            faces,
            vfaces,
            quadrics,
            alive_count,
        }
    }

    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &fi in &self.vfaces[v] {
            for &u in &self.faces[fi] {
                if u != v {
                    out.insert(u);
                }
            }
        }
        out
    }

    fn cost(&self, a: usize, b: usize) -> f64 {
        let keep = a.min(b);
        let mut q = self.quadrics[a];
        q.add(&self.quadrics[b]);
        // Guard against tiny negative values from cancellation.
        q.eval(self.positions[keep]).max(0.0)
    }

    fn shared_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.vfaces[a]
            .intersection(&self.vfaces[b])
            .cloned()
            .collect()
    }

    /// Link condition plus geometric sanity for collapsing `gone` into `keep`.
    fn collapse_is_legal(&self, keep: usize, gone: usize, shared: &[usize]) -> bool {
        if shared.len() != 2 {
            return false;
        }
        let mut opposite = BTreeSet::new();
        for &fi in shared {
            for &v in &self.faces[fi] {
                if v != keep && v != gone {
                    opposite.insert(v);
                }
            }
        }
        if opposite.len() != 2 {
            return false;
        }
        let common: BTreeSet<usize> = self
            .neighbors(keep)
            .intersection(&self.neighbors(gone))
            .cloned()
            .collect();
        if common != opposite {
            return false;
        }
        // Rerouted faces keep their orientation and some area. Faces around
        //posed `keep` are untouched because its position never changes.
        for &fi in &self.vfaces[gone] {
            if shared.contains(&fi) {
                continue;
            }
            let f = self.faces[fi];
            let old_n = self.face_cross(f);
            let newf = f.map(|v| if v == gone { keep } else { v });
            if newf[0] == newf[1] || newf[1] == newf[2] || newf[0] == newf[2] {
                return false;
            }
            let new_n = self.face_cross(newf);
            if dot(old_n, new_n) <= 0.0 {
                return false;
            }
        }
        true
    }

    fn face_cross(&self, f: [usize; 3]) -> [f64; 3] {
        let (a, b, c) = (
            self.positions[f[0]],
            self.positions[f[1]],
            self.positions[f[2]],
        );
        cross(sub(b, a), sub(c, a))
    }

    fn collapse(&mut self, keep: usize, gone: usize, shared: &[usize]) {
        for &fi in shared {
            self.face_alive[fi] = false;
            for v in self.faces[fi] {
                self.vfaces[v].remove(&fi);
            }
        }
        let moved: Vec<usize> = self.vfaces[gone].iter().cloned().collect();
        for fi in moved {
            for slot in self.faces[fi].iter_mut() {
                if *slot == gone {
                    *slot = keep;
                }
            }
            self.vfaces[gone].remove(&fi);
            self.vfaces[keep].insert(fi);
        }
        let gq = self.quadrics[gone];
        self.quadrics[keep].add(&gq);
        self.vertex_alive[gone] = false;
        self.alive_count -= 1;
    }
}

/// Decimates `mesh` down to `target` vertices.
pub fn decimate_qem(mesh: &Mesh, target: usize) -> Result<Decimated, HierarchyError> {
    if target < 4 || target >= mesh.vertex_count() {
        return Err(HierarchyError::BadTarget {
            target,
            vertices: mesh.vertex_count(),
        });
    }
    let mut work = Work::new(mesh);
    let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::new();
    let seed_all = |work: &Work, heap: &mut BinaryHeap<std::cmp::Reverse<Candidate>>| {
        for (a, b) in mesh_edges(work) {
            heap.push(std::cmp::Reverse(Candidate {
                cost: work.cost(a, b),
                a,
                b,
            }));
        }
    };
    seed_all(&work, &mut heap);
    let mut refreshed_at = usize::MAX;

    while work.alive_count > target {
        let Some(std::cmp::Reverse(cand)) = heap.pop() else {
            // One full reseed before giving up; legality is neighborhood
            // dependent and earlier rejects may have become valid.
            if refreshed_at != work.alive_count {
                refreshed_at = work.alive_count;
                seed_all(&work, &mut heap);
                continue;
            }
            return Err(HierarchyError::DecimationStuck {
                target,
                achieved: work.alive_count,
            });
        };
        let (a, b) = (cand.a, cand.b);
        if !work.vertex_alive[a] || !work.vertex_alive[b] {
            continue;
        }
        let shared = work.shared_faces(a, b);
        if shared.is_empty() {
            continue;
        }
        let current = work.cost(a, b);
        if current != cand.cost {
            heap.push(std::cmp::Reverse(Candidate {
                cost: current,
                a,
                b,
            }));
            continue;
        }
        let (keep, gone) = (a.min(b), a.max(b));
        if !work.collapse_is_legal(keep, gone, &shared) {
            continue;
        }
        work.collapse(keep, gone, &shared);
        for n in work.neighbors(keep) {
            let (x, y) = (keep.min(n), keep.max(n));
            heap.push(std::cmp::Reverse(Candidate {
                cost: work.cost(x, y),
                a: x,
                b: y,
            }));
        }
    }

    let kept: Vec<usize> = (0..work.positions.len())
        .filter(|&v| work.vertex_alive[v])
        .collect();
    let mut remap = vec![usize::MAX; work.positions.len()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let vertices: Vec<[f64; 3]> = kept.iter().map(|&v| work.positions[v]).collect();
    let faces: Vec<[usize; 3]> = work
        .faces
        .iter()
        .zip(&work.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| f.map(|v| remap[v]))
        .collect();
    let mesh = Mesh::new(vertices, faces).map_err(HierarchyError::Mesh)?;
    Ok(Decimated { mesh, kept })
}

fn mesh_edges(work: &Work) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for (fi, f) in work.faces.iter().enumerate() {
        if !work.face_alive[fi] {
            continue;
        }
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            set.insert((a.min(b), a.max(b)));
        }
    }
    set.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{fixtures, hand_template};

    fn assert_subset(fine: &Mesh, dec: &Decimated) {
        assert!(dec.kept.windows(2).all(|w| w[0] < w[1]));
        for (i, &old) in dec.kept.iter().enumerate() {
            assert_eq!(dec.mesh.vertex(i), fine.vertex(old));
        }
    }

    #[test]
    fn octahedron_to_four_vertices() {
        let m = fixtures::octahedron();
        let dec = decimate_qem(&m, 4).unwrap();
        assert_eq!(dec.mesh.vertex_count(), 4);
        dec.mesh.validate_closed_manifold().unwrap();
        assert_subset(&m, &dec);
    }

    #[test]
    fn template_halves_cleanly() {
        let template = hand_template();
        let dec = decimate_qem(&template.mesh, 80).unwrap();
        assert_eq!(dec.mesh.vertex_count(), 80);
        dec.mesh.validate_closed_manifold().unwrap();
        assert_subset(&template.mesh, &dec);
        assert!(dec.mesh.signed_volume_x6() > 0.0);
    }

    #[test]
    fn rejects_bad_targets() {
        let m = fixtures::octahedron();
        assert!(matches!(
            decimate_qem(&m, 6),
            Err(HierarchyError::BadTarget { .. })
        ));
        assert!(matches!(
            decimate_qem(&m, 3),
            Err(HierarchyError::BadTarget { .. })
        ));
    }

    #[test]
    fn deterministic_across_runs() {
        let template = hand_template();
        let a = decimate_qem(&template.mesh, 40).unwrap();
        let b = decimate_qem(&template.mesh, 40).unwrap();
        assert_eq!(a.mesh, b.mesh);
        assert_eq!(a.kept, b.kept);
    }
}
