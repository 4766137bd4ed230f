//! Triangle meshes and a minimal OBJ subset (v / vn / f with
//! position//normal indices; vertex colors via the common `v x y z r g b`
//! extension).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad OBJ at line {line}: {details}")]
    BadObj { line: usize, details: String },
    #[error("mesh invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub vertex_colors: Vec<[f32; 3]>,
    pub vertex_normals: Vec<[f32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        if self.vertex_colors.len() != n || self.vertex_normals.len() != n {
            return Err(MeshError::Invalid(format!(
                "attribute counts (v={} c={} n={}) differ",
                n,
                self.vertex_colors.len(),
                self.vertex_normals.len()
            )));
        }
        for t in &self.triangles {
            if t.iter().any(|&i| i as usize >= n) {
                return Err(MeshError::Invalid(format!("triangle index {t:?} out of range")));
            }
        }
        Ok(())
    }

    /// Area-weighted vertex normals from face geometry.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![[0.0f64; 3]; self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = [
                self.vertices[t[0] as usize],
                self.vertices[t[1] as usize],
                self.vertices[t[2] as usize],
            ];
            let e1 = [
                (b[0] - a[0]) as f64,
                (b[1] - a[1]) as f64,
                (b[2] - a[2]) as f64,
            ];
            let e2 = [
                (c[0] - a[0]) as f64,
                (c[1] - a[1]) as f64,
                (c[2] - a[2]) as f64,
            ];
            let fnrm = [
                e1[1] * e2[2] - e1[2] * e2[1],
                e1[2] * e2[0] - e1[0] * e2[2],
                e1[0] * e2[1] - e1[1] * e2[0],
            ];
            for &vi in t {
                for k in 0..3 {
                    acc[vi as usize][k] += fnrm[k];
                }
            }
        }
        self.vertex_normals = acc
            .iter()
            .map(|v| {
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-20 {
                    [(v[0] / n) as f32, (v[1] / n) as f32, (v[2] / n) as f32]
                } else {
                    [0.0, 1.0, 0.0]
                }
            })
            .collect();
    }

    /// Rigidly transformed copy: x -> R x + t (normals rotate).
    pub fn transformed(&self, rot: &[[f64; 3]; 3], trans: [f64; 3]) -> TriangleMesh {
        let apply = |p: [f32; 3], translate: bool| -> [f32; 3] {
            let v = [p[0] as f64, p[1] as f64, p[2] as f64];
            let mut out = [0.0f64; 3];
            for i in 0..3 {
                out[i] = rot[i][0] * v[0] + rot[i][1] * v[1] + rot[i][2] * v[2];
                if translate {
                    out[i] += trans[i];
                }
            }
            [out[0] as f32, out[1] as f32, out[2] as f32]
        };
        TriangleMesh {
            vertices: self.vertices.iter().map(|&p| apply(p, true)).collect(),
            triangles: self.triangles.clone(),
            vertex_colors: self.vertex_colors.clone(),
            vertex_normals: self.vertex_normals.iter().map(|&n| apply(n, false)).collect(),
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| ((v[0] as f64).powi(2) + (v[1] as f64).powi(2) + (v[2] as f64).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    /// Append another mesh (indices shifted).
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.vertex_colors.extend_from_slice(&other.vertex_colors);
        self.vertex_normals.extend_from_slice(&other.vertex_normals);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    pub fn max_edge_length(&self) -> f64 {
        let mut best = 0.0f64;
        for t in &self.triangles {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let a = self.vertices[t[i] as usize];
                let b = self.vertices[t[j] as usize];
                let d = ((a[0] - b[0]) as f64).powi(2)
                    + ((a[1] - b[1]) as f64).powi(2)
                    + ((a[2] - b[2]) as f64).powi(2);
                best = best.max(d.sqrt());
            }
        }
        best
    }
}

pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), MeshError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (v, c) in mesh.vertices.iter().zip(&mesh.vertex_colors) {
        writeln!(w, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2])?;
    }
    for n in &mesh.vertex_normals {
        writeln!(w, "vn {} {} {}", n[0], n[1], n[2])?;
    }
    for t in &mesh.triangles {
        writeln!(
            w,
            "f {}//{} {}//{} {}//{}",
            t[0] + 1,
            t[0] + 1,
            t[1] + 1,
            t[1] + 1,
            t[2] + 1,
            t[2] + 1
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh, MeshError> {
    let rd = BufReader::new(std::fs::File::open(path)?);
    let mut mesh = TriangleMesh::default();
    for (lineno, line) in rd.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let bad = |details: &str| MeshError::BadObj {
            line: lineno + 1,
            details: details.to_string(),
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let vals: Vec<f32> = parts.filter_map(|s| s.parse().ok()).collect();
                if vals.len() != 3 && vals.len() != 6 {
                    return Err(bad("v expects 3 or 6 floats"));
                }
                mesh.vertices.push([vals[0], vals[1], vals[2]]);
                if vals.len() == 6 {
                    mesh.vertex_colors.push([vals[3], vals[4], vals[5]]);
                } else {
                    mesh.vertex_colors.push([0.7, 0.7, 0.7]);
                }
            }
            Some("vn") => {
                let vals: Vec<f32> = parts.filter_map(|s| s.parse().ok()).collect();
                if vals.len() != 3 {
                    return Err(bad("vn expects 3 floats"));
                }
                mesh.vertex_normals.push([vals[0], vals[1], vals[2]]);
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for (k, spec) in parts.enumerate() {
                    if k >= 3 {
                        return Err(bad("only triangles supported"));
                    }
                    let pos = spec.split('/').next().unwrap_or("");
                    let i: i64 = pos.parse().map_err(|_| bad("bad face index"))?;
                    if i < 1 {
                        return Err(bad("face indices must be positive"));
                    }
                    idx[k] = (i - 1) as u32;
                }
                mesh.triangles.push(idx);
            }
            _ => {} // unsupported records ignored
        }
    }
    if mesh.vertex_normals.is_empty() {
        mesh.recompute_normals();
    }
    mesh.validate()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> TriangleMesh {
        let mut m = TriangleMesh {
            vertices: vec![
                [-0.5, -0.5, 0.0],
                [0.5, -0.5, 0.0],
                [0.5, 0.5, 0.0],
                [-0.5, 0.5, 0.0],
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            vertex_colors: vec![[1.0, 0.0, 0.0]; 4],
            vertex_normals: vec![],
        };
        m.vertex_normals = vec![[0.0, 0.0, 1.0]; 4];
        m
    }

    #[test]
    fn obj_round_trip() {
        let m = quad();
        let mut p = std::env::temp_dir();
        p.push(format!("gsbody-obj-{}.obj", std::process::id()));
        save_obj(&m, &p).unwrap();
        let back = load_obj(&p).unwrap();
        assert_eq!(back.vertices.len(), 4);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.vertex_colors[0], [1.0, 0.0, 0.0]);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn recomputed_quad_normals_face_z() {
        let mut m = quad();
        m.vertex_normals.clear();
        m.recompute_normals();
        for n in &m.vertex_normals {
            assert!((n[2] - 1.0).abs() < 1e-6);
        }
    }
}
