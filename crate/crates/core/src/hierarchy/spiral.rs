//! Spiral neighborhood enumeration.
//!
//! The spiral at a vertex starts with the vertex itself, then its 1-ring in
//! winding order beginning at the lowest-index neighbor, then successive
//! rings appended by walking the previous ring in order and emitting each
//! member's unvisited neighbors (again from its lowest-index neighbor
//! onward). Sequences are truncated or padded with -1 to a fixed length, so
//! one table drives a fixed-width gather.

use serde::{Deserialize, Serialize};

use super::HierarchyError;
use crate::mesh::Mesh;

/// Fixed-width spiral indices for every vertex of one mesh; `-1` is padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralTable {
    pub length: usize,
    pub entries: Vec<i64>,
}

impl SpiralTable {
    pub fn rows(&self) -> usize {
        self.entries.len() / self.length
    }

    pub fn row(&self, v: usize) -> &[i64] {
        &self.entries[v * self.length..(v + 1) * self.length]
    }
}

/// Ordered 1-rings for every vertex, following face winding from the
/// lowest-index neighbor.
fn ordered_rings(mesh: &Mesh) -> Result<Vec<Vec<usize>>, HierarchyError> {
    let n = mesh.vertex_count();
    let mut next = vec![std::collections::BTreeMap::new(); n];
    for f in mesh.faces() {
        for i in 0..3 {
            let (v, a, b) = (f[i], f[(i + 1) % 3], f[(i + 2) % 3]);
            next[v].insert(a, b);
        }
    }
    let mut rings = Vec::with_capacity(n);
    for v in 0..n {
        let Some((&start, _)) = next[v].iter().next() else {
            return Err(HierarchyError::SpiralFan { vertex: v });
        };
        let mut ring = vec![start];
        let mut cur = start;
        loop {
            let Some(&nx) = next[v].get(&cur) else {
                return Err(HierarchyError::SpiralFan { vertex: v });
            };
            if nx == start {
                break;
            }
            if ring.len() > next[v].len() {
                return Err(HierarchyError::SpiralFan { vertex: v });
            }
            ring.push(nx);
            cur = nx;
        }
        if ring.len() != next[v].len() {
            return Err(HierarchyError::SpiralFan { vertex: v });
        }
        rings.push(ring);
    }
    Ok(rings)
}

pub fn enumerate_spirals(mesh: &Mesh, length: usize) -> Result<SpiralTable, HierarchyError> {
    let rings = ordered_rings(mesh)?;
    let n = mesh.vertex_count();
    let mut entries = Vec::with_capacity(n * length);
    for v in 0..n {
        let mut seq: Vec<i64> = vec![v as i64];
        let mut visited = vec![false; n];
        visited[v] = true;
        let mut frontier: Vec<usize> = Vec::new();
        for &u in &rings[v] {
            visited[u] = true;
            frontier.push(u);
        }
        seq.extend(frontier.iter().map(|&u| u as i64));
        while seq.len() < length && !frontier.is_empty() {
            let mut nextf = Vec::new();
            for &u in &frontier {
                for &w in &rings[u] {
                    if !visited[w] {
                        visited[w] = true;
                        nextf.push(w);
                    }
                }
            }
            seq.extend(nextf.iter().map(|&u| u as i64));
            frontier = nextf;
        }
        seq.truncate(length);
        seq.resize(length, -1);
        entries.extend_from_slice(&seq);
    }
    Ok(SpiralTable { length, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;

    #[test]
    fn octahedron_apex_spiral_follows_the_fan() {
        let m = fixtures::octahedron();
        let t = enumerate_spirals(&m, 5).unwrap();
        assert_eq!(t.row(4), &[4, 0, 2, 1, 3]);
    }

    #[test]
    fn exhausted_mesh_pads_with_minus_one() {
        let m = fixtures::octahedron();
        let t = enumerate_spirals(&m, 8).unwrap();
        // Vertex 4 reaches all six vertices, then padding.
        assert_eq!(t.row(4), &[4, 0, 2, 1, 3, 5, -1, -1]);
    }

    #[test]
    fn spirals_start_at_self_and_stay_distinct() {
        let m = crate::mesh::hand_template().mesh;
        let t = enumerate_spirals(&m, 12).unwrap();
        let neighbors = m.vertex_neighbors();
        for v in 0..m.vertex_count() {
            let row = t.row(v);
            assert_eq!(row[0], v as i64);
            let real: Vec<i64> = row.iter().cloned().filter(|&x| x >= 0).collect();
            let mut dedup = real.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(dedup.len(), real.len(), "vertex {} repeats entries", v);
            // The first ring of the spiral is exactly the vertex's 1-ring.
            let deg = neighbors[v].len();
            let mut ring: Vec<usize> = row[1..=deg].iter().map(|&x| x as usize).collect();
            ring.sort_unstable();
            assert_eq!(ring, neighbors[v]);
        }
    }

    #[test]
    fn truncation_respects_requested_length() {
        let m = fixtures::tetrahedron();
        let t = enumerate_spirals(&m, 3).unwrap();
        assert_eq!(t.rows(), 4);
        for v in 0..4 {
            assert_eq!(t.row(v).len(), 3);
            assert_eq!(t.row(v)[0], v as i64);
        }
    }
}
