//! Triangle meshes and hand kinematics.

pub mod kinematics;
pub mod obj;
pub mod template;

pub use kinematics::{
    compute_local_frames, pose_hand, regress_joints, root_center, HandModel, JointAngles,
    JointRegressor, KinematicChain, LocalFrame, Posed, Skinning, JOINT_COUNT, ROOT_JOINT,
};
pub use template::hand_template;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("face {face} repeats a vertex")]
    DegenerateFace { face: usize },
    #[error("edge ({a}, {b}) is shared by {count} faces, expected 2")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("directed edge ({a}, {b}) appears twice; winding is inconsistent")]
    InconsistentWinding { a: usize, b: usize },
    #[error("vertex {vertex} has a disconnected face fan")]
    SplitVertexLink { vertex: usize },
    #[error("mesh is not a single connected component ({components} found)")]
    Disconnected { components: usize },
    #[error("obj line {line}: {reason}")]
    ObjParse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Triangle mesh with positions in meters.
///
/// Construction checks index bounds and rejects degenerate faces; the
/// stricter closed-manifold test is separate because intermediate meshes
/// (e.g. mid-decimation) are allowed to be looser.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: v,
                        count: vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace { face: fi });
            }
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        self.vertices[i]
    }

    /// Unique undirected edges, each as `(low, high)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Sorted neighbor lists per vertex.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.vertices.len()];
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Incident face ids per vertex, in face order.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                out[v].push(fi);
            }
        }
        out
    }

    pub fn face_normal(&self, fi: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[fi];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let u = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        let v = [pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]];
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    }

    /// Six times the signed volume; positive for outward-wound closed meshes.
    pub fn signed_volume_x6(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                p[0] * (q[1] * r[2] - q[2] * r[1]) - p[1] * (q[0] * r[2] - q[2] * r[0])
                    + p[2] * (q[0] * r[1] - q[1] * r[0])
            })
            .sum()
    }

    /// Checks that the mesh is a single closed, consistently wound 2-manifold:
    /// every undirected edge borders exactly two faces with opposite
    /// directions, every vertex has one face fan, and the face graph is
    /// connected.
    pub fn validate_closed_manifold(&self) -> Result<(), MeshError> {
        let mut directed = BTreeSet::new();
        let mut undirected: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if !directed.insert((a, b)) {
                    return Err(MeshError::InconsistentWinding { a, b });
                }
                *undirected.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &undirected {
            if count != 2 {
                return Err(MeshError::NonManifoldEdge { a, b, count });
            }
        }

        // Single fan per vertex: walk faces around the vertex via shared edges.
        let vertex_faces = self.vertex_faces();
        for (v, faces) in vertex_faces.iter().enumerate() {
            if faces.is_empty() {
                return Err(MeshError::SplitVertexLink { vertex: v });
            }
            // Map "other edge endpoint" -> face, following winding around v.
            let mut next: BTreeMap<usize, usize> = BTreeMap::new();
            for &fi in faces {
                let f = self.faces[fi];
                let pos = f.iter().position(|&x| x == v).unwrap();
                let out = f[(pos + 1) % 3];
                next.insert(out, fi);
            }
            let mut seen = 1usize;
            let first = self.faces[faces[0]];
            let pos = first.iter().position(|&x| x == v).unwrap();
            let mut cursor = first[(pos + 2) % 3];
            let start = first[(pos + 1) % 3];
            while cursor != start {
                let Some(&fi) = next.get(&cursor) else {
                    return Err(MeshError::SplitVertexLink { vertex: v });
                };
                seen += 1;
                if seen > faces.len() {
                    return Err(MeshError::SplitVertexLink { vertex: v });
                }
                let f = self.faces[fi];
                let pos = f.iter().position(|&x| x == v).unwrap();
                cursor = f[(pos + 2) % 3];
            }
            if seen != faces.len() {
                return Err(MeshError::SplitVertexLink { vertex: v });
            }
        }

        // Connectivity over the vertex graph.
        let neighbors = self.vertex_neighbors();
        let mut seen = vec![false; self.vertices.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &n in &neighbors[v] {
                if !seen[n] {
                    seen[n] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        if count != self.vertices.len() {
            return Err(MeshError::Disconnected { components: 2 });
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_face() {
        let err = Mesh::new(vec![[0.0; 3]; 2], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { .. }));
    }

    #[test]
    fn rejects_degenerate_face() {
        let err = Mesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]]).unwrap_err();
        assert!(matches!(err, MeshError::DegenerateFace { .. }));
    }

    #[test]
    fn tetrahedron_is_closed_manifold() {
        let m = fixtures::tetrahedron();
        m.validate_closed_manifold().unwrap();
        assert!(m.signed_volume_x6() > 0.0);
        assert_eq!(m.edges().len(), 6);
    }

    #[test]
    fn octahedron_adjacency() {
        let m = fixtures::octahedron();
        m.validate_closed_manifold().unwrap();
        let n = m.vertex_neighbors();
        assert_eq!(n[4], vec![0, 1, 2, 3]);
        assert_eq!(m.edges().len(), 12);
    }

    #[test]
    fn open_mesh_fails_validation() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            m.validate_closed_manifold(),
            Err(MeshError::NonManifoldEdge { count: 1, .. })
        ));
    }

    #[test]
    fn flipped_face_fails_winding() {
        let mut faces = fixtures::tetrahedron().faces().to_vec();
        faces[3] = [1, 2, 3];
        let m = Mesh::new(fixtures::tetrahedron().vertices().to_vec(), faces).unwrap();
        assert!(matches!(
            m.validate_closed_manifold(),
            Err(MeshError::InconsistentWinding { .. })
        ));
    }
}
