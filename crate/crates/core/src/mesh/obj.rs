//! Wavefront OBJ read/write, triangles only.
//!
//! Reading accepts `v` and `f` records (including `f a/b/c` forms, keeping
//! the position index) and skips other directives. Writing emits plain
//! `v`/`f` lines with round-trippable float formatting.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Mesh, MeshError};

pub fn read_obj(path: &Path) -> Result<Mesh, MeshError> {
    parse_obj(BufReader::new(fs::File::open(path)?))
}

pub fn parse_obj(reader: impl BufRead) -> Result<Mesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    let tok = parts.next().ok_or_else(|| MeshError::ObjParse {
                        line: lineno,
                        reason: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| MeshError::ObjParse {
                        line: lineno,
                        reason: format!("bad coordinate {:?}", tok),
                    })?;
                }
                vertices.push(coords);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in parts {
                    let first = tok.split('/').next().unwrap_or(tok);
                    let v: i64 = first.parse().map_err(|_| MeshError::ObjParse {
                        line: lineno,
                        reason: format!("bad face index {:?}", tok),
                    })?;
                    if v < 1 {
                        return Err(MeshError::ObjParse {
                            line: lineno,
                            reason: format!("face indices must be positive, got {}", v),
                        });
                    }
                    idx.push((v - 1) as usize);
                }
                if idx.len() != 3 {
                    return Err(MeshError::ObjParse {
                        line: lineno,
                        reason: format!("expected a triangle, got {} vertices", idx.len()),
                    });
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<(), MeshError> {
    let mut buf = Vec::new();
    format_obj(&mut buf, mesh)?;
    crate::numeric::checkpoint::atomic_write(path, &buf)?;
    Ok(())
}

pub fn format_obj(w: &mut impl Write, mesh: &Mesh) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;

    #[test]
    fn round_trip() {
        let m = fixtures::octahedron();
        let mut buf = Vec::new();
        format_obj(&mut buf, &m).unwrap();
        let back = parse_obj(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn skips_foreign_directives_and_slash_indices() {
        let src = "# comment\no thing\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\ns off\nf 1/1/1 2/2/1 3/3/1\n";
        let m = parse_obj(src.as_bytes()).unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn rejects_quads() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(matches!(
            parse_obj(src.as_bytes()),
            Err(MeshError::ObjParse { .. })
        ));
    }

    #[test]
    fn rejects_zero_index() {
        let src = "v 0 0 0\nf 0 1 2\n";
        assert!(parse_obj(src.as_bytes()).is_err());
    }
}
