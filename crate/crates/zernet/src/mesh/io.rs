//! Mesh and field file formats: OBJ and OFF in, OBJ and binary PLY out,
//! per-vertex scalar fields as plain text or CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

/// Load an OBJ or OFF mesh, dispatching on file extension with a content
/// sniff fallback.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("obj") => parse_obj(path, &text),
        Some("off") => parse_off(path, &text),
        _ => {
            let first = text
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty() && !l.starts_with('#'))
                .unwrap_or("");
            if first == "OFF" || first.starts_with("OFF ") {
                parse_off(path, &text)
            } else {
                parse_obj(path, &text)
            }
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, token: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("invalid number {token:?}")))
}

fn parse_obj(path: &Path, text: &str) -> Result<TriangleMesh> {
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "vertex needs 3 coordinates"))?;
                    *c = parse_f64(path, lineno, tok)?;
                }
                vertices.push(Vector3::from(coords));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in tokens {
                    // Index before the first slash; negative counts from the
                    // end of the vertex list so far.
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, lineno, format!("invalid face index {tok:?}")))?;
                    let resolved = if i > 0 {
                        (i - 1) as usize
                    } else if i < 0 {
                        let from_end = vertices.len() as i64 + i;
                        if from_end < 0 {
                            return Err(parse_err(path, lineno, format!("index {i} out of range")));
                        }
                        from_end as usize
                    } else {
                        return Err(parse_err(path, lineno, "face index 0 is invalid"));
                    };
                    if resolved >= vertices.len() {
                        return Err(parse_err(
                            path,
                            lineno,
                            format!("face index {} exceeds {} vertices", resolved + 1, vertices.len()),
                        ));
                    }
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, lineno, "face needs at least 3 indices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no vertices or faces found".into(),
        });
    }
    TriangleMesh::new(vertices, faces)
}

fn parse_off(path: &Path, text: &str) -> Result<TriangleMesh> {
    // Stream of (line number, token) pairs with comments stripped; OFF is
    // whitespace-structured rather than line-structured.
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            tokens.push((lineno + 1, tok));
        }
    }
    let mut pos = 0;
    let mut next = |what: &str| -> Result<(usize, &str)> {
        let t = tokens
            .get(pos)
            .copied()
            .ok_or_else(|| parse_err(path, tokens.last().map_or(1, |t| t.0), format!("unexpected end of file, expected {what}")))?;
        pos += 1;
        Ok(t)
    };

    let (line0, head) = next("OFF header")?;
    let (v, f) = if head == "OFF" {
        let (l, vt) = next("vertex count")?;
        let v: usize = vt.parse().map_err(|_| parse_err(path, l, "invalid vertex count"))?;
        let (l, ft) = next("face count")?;
        let f: usize = ft.parse().map_err(|_| parse_err(path, l, "invalid face count"))?;
        next("edge count")?;
        (v, f)
    } else {
        // Counts directly, headerless variant.
        let v: usize = head
            .parse()
            .map_err(|_| parse_err(path, line0, "expected OFF header or vertex count"))?;
        let (l, ft) = next("face count")?;
        let f: usize = ft.parse().map_err(|_| parse_err(path, l, "invalid face count"))?;
        next("edge count")?;
        (v, f)
    };

    let mut vertices = Vec::with_capacity(v);
    for _ in 0..v {
        let mut coords = [0.0; 3];
        for c in &mut coords {
            let (l, tok) = next("vertex coordinate")?;
            *c = parse_f64(path, l, tok)?;
        }
        vertices.push(Vector3::from(coords));
    }
    let mut faces = Vec::with_capacity(f);
    for _ in 0..f {
        let (l, kt) = next("face vertex count")?;
        let k: usize = kt.parse().map_err(|_| parse_err(path, l, "invalid face size"))?;
        if k < 3 {
            return Err(parse_err(path, l, "face needs at least 3 indices"));
        }
        let mut idx = Vec::with_capacity(k);
        for _ in 0..k {
            let (l, tok) = next("face index")?;
            let i: usize = tok
                .parse()
                .map_err(|_| parse_err(path, l, format!("invalid face index {tok:?}")))?;
            if i >= vertices.len() {
                return Err(parse_err(path, l, format!("face index {i} exceeds {v} vertices")));
            }
            idx.push(i);
        }
        for k in 1..idx.len() - 1 {
            faces.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Write a mesh as ASCII OBJ. Float formatting is shortest round-trip, so
/// rewriting an unchanged mesh is byte-identical.
pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        for v in mesh.vertices() {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in mesh.faces() {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Write a binary little-endian PLY with per-vertex `quality` scalar and,
/// when `colors` is given, an RGB ramp.
pub fn write_ply(
    path: &Path,
    mesh: &TriangleMesh,
    quality: &[f64],
    colors: Option<&[[u8; 3]]>,
) -> Result<()> {
    if quality.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            expected: mesh.vertex_count(),
            got: quality.len(),
            context: "per-vertex quality values".into(),
        });
    }
    if let Some(c) = colors {
        if c.len() != mesh.vertex_count() {
            return Err(Error::LengthMismatch {
                expected: mesh.vertex_count(),
                got: c.len(),
                context: "per-vertex colors".into(),
            });
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        write!(w, "ply\r\nformat binary_little_endian 1.0\r\n")?;
        write!(w, "element vertex {}\r\n", mesh.vertex_count())?;
        write!(w, "property float x\r\nproperty float y\r\nproperty float z\r\n")?;
        write!(w, "property float quality\r\n")?;
        if colors.is_some() {
            write!(w, "property uchar red\r\nproperty uchar green\r\nproperty uchar blue\r\n")?;
        }
        write!(w, "element face {}\r\n", mesh.face_count())?;
        write!(w, "property list uchar int vertex_indices\r\n")?;
        write!(w, "end_header\r\n")?;
        for (i, v) in mesh.vertices().iter().enumerate() {
            w.write_f32::<LittleEndian>(v.x as f32)?;
            w.write_f32::<LittleEndian>(v.y as f32)?;
            w.write_f32::<LittleEndian>(v.z as f32)?;
            w.write_f32::<LittleEndian>(quality[i] as f32)?;
            if let Some(c) = colors {
                w.write_all(&c[i])?;
            }
        }
        for f in mesh.faces() {
            w.write_u8(3)?;
            for &i in f {
                w.write_i32::<LittleEndian>(i as i32)?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Read a per-vertex scalar field: CSV with a `vertex_id,value` header, or
/// plain text with one value per line (line k is vertex k).
pub fn read_field_file(path: &Path, vertex_count: usize) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line.map_err(|e| Error::io(path, e))?);
    }
    let is_csv = lines
        .first()
        .map(|l| l.trim().eq_ignore_ascii_case("vertex_id,value"))
        .unwrap_or(false);

    let mut values = if is_csv {
        let mut values = vec![f64::NAN; vertex_count];
        let mut seen = vec![false; vertex_count];
        for (lineno, line) in lines.iter().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (id_tok, val_tok) = line
                .split_once(',')
                .ok_or_else(|| parse_err(path, lineno + 1, "expected vertex_id,value"))?;
            let id: usize = id_tok
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("invalid vertex id {id_tok:?}")))?;
            if id >= vertex_count {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    format!("vertex id {id} exceeds vertex count {vertex_count}"),
                ));
            }
            if seen[id] {
                return Err(parse_err(path, lineno + 1, format!("duplicate vertex id {id}")));
            }
            seen[id] = true;
            values[id] = parse_f64(path, lineno + 1, val_tok.trim())?;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::DataMismatch(format!(
                "field file {} missing vertex {missing}",
                path.display()
            )));
        }
        values
    } else {
        let mut values = Vec::new();
        for (lineno, line) in lines.iter().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(parse_f64(path, lineno + 1, line)?);
        }
        values
    };

    if values.len() != vertex_count {
        return Err(Error::DataMismatch(format!(
            "field file {} has {} values, mesh has {vertex_count} vertices",
            path.display(),
            values.len()
        )));
    }
    // NaN can only be left by the CSV path when a row was skipped, which the
    // missing check already rejects; plain-text NaN literals pass through.
    values.shrink_to_fit();
    Ok(values)
}

pub fn write_field_text(path: &Path, values: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        for v in values {
            writeln!(w, "{v}")?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

pub fn write_field_csv(path: &Path, values: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "vertex_id,value")?;
        for (i, v) in values.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_cube;
    use approx::assert_relative_eq;
    use tempfile::TempDir;

    fn write_tmp(dir: &TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn obj_roundtrip_cube() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("cube.obj");
        write_obj(&path, &unit_cube()).unwrap();
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh.vertex_count(), 8);
        assert_eq!(mesh.face_count(), 12);
        assert_relative_eq!(mesh.total_area(), 6.0, epsilon = 1e-12);

        // Rewrite is byte-identical.
        let path2 = dir.path().join("cube2.obj");
        write_obj(&path2, &mesh).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn obj_compound_and_negative_indices() {
        let dir = TempDir::new().unwrap();
        let path = write_tmp(
            &dir,
            "tri.obj",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1//1 2//2 3//3\nf -3 -2 -1\n",
        );
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh.face_count(), 2);
        assert_eq!(mesh.faces()[0], mesh.faces()[1]);
    }

    #[test]
    fn obj_quads_fan_triangulated() {
        let dir = TempDir::new().unwrap();
        let path = write_tmp(
            &dir,
            "quad.obj",
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
        );
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh.face_count(), 2);
        assert_relative_eq!(mesh.total_area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn obj_parse_error_carries_line_number() {
        let dir = TempDir::new().unwrap();
        let path = write_tmp(&dir, "bad.obj", "v 0 0 0\nv 1 0 zero\n");
        match load_mesh(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn obj_zero_area_face_rejected() {
        let dir = TempDir::new().unwrap();
        let path = write_tmp(
            &dir,
            "degenerate.obj",
            "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n",
        );
        match load_mesh(&path) {
            Err(Error::DegenerateFaces(faces)) => assert_eq!(faces, vec![0]),
            other => panic!("expected degenerate-face error, got {other:?}"),
        }
    }

    #[test]
    fn off_parses_with_and_without_header_line() {
        let dir = TempDir::new().unwrap();
        let body = "4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n";
        for (name, content) in [
            ("a.off", format!("OFF\n{body}")),
            ("b.off", format!("OFF 4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n")),
            ("c.off", format!("# comment\nOFF\n{body}")),
        ] {
            let path = write_tmp(&dir, name, &content);
            let mesh = load_mesh(&path).unwrap();
            assert_eq!(mesh.vertex_count(), 4);
            assert_eq!(mesh.face_count(), 2);
        }
    }

    #[test]
    fn off_quad_fan_triangulated() {
        let dir = TempDir::new().unwrap();
        let path = write_tmp(
            &dir,
            "quad.off",
            "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
        );
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh.face_count(), 2);
    }

    #[test]
    fn off_truncated_file_errors() {
        let dir = TempDir::new().unwrap();
        let path = write_tmp(&dir, "short.off", "OFF\n4 2 0\n0 0 0\n1 0 0\n");
        assert!(load_mesh(&path).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        match load_mesh(Path::new("/nonexistent/mesh.obj")) {
            Err(Error::Io { path, .. }) => {
                assert!(path.display().to_string().contains("nonexistent"))
            }
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn field_text_roundtrip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("field.txt");
        let values = vec![1.5, -2.0, 0.25];
        write_field_text(&path, &values).unwrap();
        assert_eq!(read_field_file(&path, 3).unwrap(), values);
        assert!(read_field_file(&path, 4).is_err());
    }

    #[test]
    fn field_csv_roundtrip_and_validation() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("field.csv");
        let values = vec![3.0, 1.0, 4.0];
        write_field_csv(&path, &values).unwrap();
        assert_eq!(read_field_file(&path, 3).unwrap(), values);

        let missing = write_tmp(&dir, "missing.csv", "vertex_id,value\n0,1.0\n2,3.0\n");
        assert!(read_field_file(&missing, 3).is_err());
        let dup = write_tmp(&dir, "dup.csv", "vertex_id,value\n0,1.0\n0,2.0\n");
        assert!(read_field_file(&dup, 1).is_err());
    }

    #[test]
    fn ply_header_and_payload_size() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("out.ply");
        let mesh = unit_cube();
        let quality: Vec<f64> = (0..8).map(|i| i as f64).collect();
        write_ply(&path, &mesh, &quality, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes
            .windows(12)
            .position(|w| w == b"end_header\r\n")
            .unwrap()
            + 12;
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        assert!(header.contains("element vertex 8"));
        assert!(header.contains("property float quality"));
        assert_eq!(bytes.len() - header_end, 8 * 16 + 12 * 13);

        // Colored variant adds 3 bytes per vertex.
        let path2 = dir.path().join("colored.ply");
        let colors = vec![[255u8, 0, 0]; 8];
        write_ply(&path2, &mesh, &quality, Some(&colors)).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        let header_end2 = bytes2
            .windows(12)
            .position(|w| w == b"end_header\r\n")
            .unwrap()
            + 12;
        assert_eq!(bytes2.len() - header_end2, 8 * 19 + 12 * 13);
    }
}
