//! 14-parameter 3D Gaussians: center, scale, rotation quaternion, opacity,
//! color. Covariance/projection math plus the binary set format.

use crate::camera::CameraPose;
use crate::scalar::Real;
use crate::tensor::Tensor;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const GAUSSIAN_PARAMS: usize = 14;
pub const GAUSSIAN_MAGIC: &[u8; 8] = b"SATGS1\0\0";

#[derive(Debug, thiserror::Error)]
pub enum GaussianError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected SATGS1")]
    BadMagic,
    #[error("truncated gaussian file")]
    Truncated,
    #[error("zero quaternion")]
    ZeroQuaternion,
    #[error("gaussian behind camera (depth {0})")]
    BehindCamera(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub center: [f32; 3],
    pub scale: [f32; 3],
    pub quat: [f32; 4],
    pub opacity: f32,
    pub color: [f32; 3],
}

impl Gaussian {
    pub fn to_row(&self) -> [f32; GAUSSIAN_PARAMS] {
        [
            self.center[0],
            self.center[1],
            self.center[2],
            self.scale[0],
            self.scale[1],
            self.scale[2],
            self.quat[0],
            self.quat[1],
            self.quat[2],
            self.quat[3],
            self.opacity,
            self.color[0],
            self.color[1],
            self.color[2],
        ]
    }

    pub fn from_row(row: &[f32]) -> Self {
        assert_eq!(row.len(), GAUSSIAN_PARAMS);
        Gaussian {
            center: [row[0], row[1], row[2]],
            scale: [row[3], row[4], row[5]],
            quat: [row[6], row[7], row[8], row[9]],
            opacity: row[10],
            color: [row[11], row[12], row[13]],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Flat [N, 14] parameter tensor (constant leaf).
    pub fn to_param_tensor<T: Real>(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.len() * GAUSSIAN_PARAMS);
        for g in &self.gaussians {
            data.extend(g.to_row().iter().map(|&v| T::of_f32(v)));
        }
        Tensor::from_vec(&[self.len(), GAUSSIAN_PARAMS], data)
    }

    pub fn from_param_tensor<T: Real>(t: &Tensor<T>) -> Self {
        assert_eq!(t.rank(), 2);
        assert_eq!(t.shape()[1], GAUSSIAN_PARAMS);
        let gaussians = t
            .data()
            .chunks_exact(GAUSSIAN_PARAMS)
            .map(|row| {
                let row32: Vec<f32> = row.iter().map(|v| v.as_f32()).collect();
                Gaussian::from_row(&row32)
            })
            .collect();
        GaussianSet { gaussians }
    }
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn quat_to_rot(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4], GaussianError> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < 1e-12 {
        return Err(GaussianError::ZeroQuaternion);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// World-space covariance R diag(s^2) R^T of one Gaussian.
pub fn covariance_3d(g: &Gaussian) -> Result<[[f64; 3]; 3], GaussianError> {
    let q = normalize_quat([
        g.quat[0] as f64,
        g.quat[1] as f64,
        g.quat[2] as f64,
        g.quat[3] as f64,
    ])?;
    let rot = quat_to_rot(q);
    let d = [
        (g.scale[0] as f64).powi(2),
        (g.scale[1] as f64).powi(2),
        (g.scale[2] as f64).powi(2),
    ];
    let mut sigma = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += rot[i][k] * d[k] * rot[j][k];
            }
            sigma[i][j] = acc;
        }
    }
    Ok(sigma)
}

/// 2D covariance regularizer added to the projected diagonal (px^2).
pub const COV2D_REG: f64 = 0.3;
/// Near plane for the Gaussian renderer.
pub const SPLAT_NEAR: f64 = 0.01;

/// Perspective projection of one Gaussian: pixel mean, 2x2 image covariance
/// (upper triangle a, b, c), and positive view depth.
pub fn project(
    g: &Gaussian,
    cam: &CameraPose,
) -> Result<([f64; 2], [f64; 3], f64), GaussianError> {
    let t = cam.to_camera([g.center[0] as f64, g.center[1] as f64, g.center[2] as f64]);
    let depth = -t[2];
    if depth <= SPLAT_NEAR {
        return Err(GaussianError::BehindCamera(depth));
    }
    let sigma = covariance_3d(g)?;
    let (mean, cov) = project_covariance(&sigma, t, cam);
    Ok((mean, cov, depth))
}

/// Shared projection core: camera-space point + world covariance -> pixel
/// mean and regularized 2D covariance.
pub(crate) fn project_covariance(
    sigma: &[[f64; 3]; 3],
    t: [f64; 3],
    cam: &CameraPose,
) -> ([f64; 2], [f64; 3]) {
    let d = -t[2];
    let u = cam.cx + cam.fx * t[0] / d;
    let v = cam.cy - cam.fy * t[1] / d;
    let jac = [
        [cam.fx / d, 0.0, cam.fx * t[0] / (d * d)],
        [0.0, -cam.fy / d, -cam.fy * t[1] / (d * d)],
    ];
    // M = J * W
    let w = &cam.rot;
    let mut m = [[0.0f64; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            m[i][j] = jac[i][0] * w[0][j] + jac[i][1] * w[1][j] + jac[i][2] * w[2][j];
        }
    }
    // cov2d = M * Sigma * M^T + reg
    let mut ms = [[0.0f64; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            ms[i][j] = m[i][0] * sigma[0][j] + m[i][1] * sigma[1][j] + m[i][2] * sigma[2][j];
        }
    }
    let a = ms[0][0] * m[0][0] + ms[0][1] * m[0][1] + ms[0][2] * m[0][2] + COV2D_REG;
    let b = ms[0][0] * m[1][0] + ms[0][1] * m[1][1] + ms[0][2] * m[1][2];
    let c = ms[1][0] * m[1][0] + ms[1][1] * m[1][1] + ms[1][2] * m[1][2] + COV2D_REG;
    ([u, v], [a, b, c])
}

pub fn save_gaussians(set: &GaussianSet, path: &Path) -> Result<(), GaussianError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(GAUSSIAN_MAGIC)?;
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    for g in &set.gaussians {
        for v in g.to_row() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_gaussians(path: &Path) -> Result<GaussianSet, GaussianError> {
    let mut rd = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    rd.read_exact(&mut magic).map_err(|_| GaussianError::Truncated)?;
    if &magic != GAUSSIAN_MAGIC {
        return Err(GaussianError::BadMagic);
    }
    let mut cnt = [0u8; 4];
    rd.read_exact(&mut cnt).map_err(|_| GaussianError::Truncated)?;
    let count = u32::from_le_bytes(cnt) as usize;
    let mut buf = vec![0u8; count * GAUSSIAN_PARAMS * 4];
    rd.read_exact(&mut buf).map_err(|_| GaussianError::Truncated)?;
    let mut gaussians = Vec::with_capacity(count);
    for row in buf.chunks_exact(GAUSSIAN_PARAMS * 4) {
        let vals: Vec<f32> = row
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        gaussians.push(Gaussian::from_row(&vals));
    }
    Ok(GaussianSet { gaussians })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::orbit_camera;

    fn unit_gaussian() -> Gaussian {
        Gaussian {
            center: [0.0; 3],
            scale: [1.0, 2.0, 3.0],
            quat: [1.0, 0.0, 0.0, 0.0],
            opacity: 1.0,
            color: [1.0, 0.0, 0.0],
        }
    }

    #[test]
    fn identity_rotation_covariance_is_diagonal() {
        let g = unit_gaussian();
        let s = covariance_3d(&g).unwrap();
        let want = [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 9.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((s[i][j] - want[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quarter_turn_z_swaps_xx_yy() {
        let h = (0.5f32).sqrt();
        let g = Gaussian {
            scale: [1.0, 2.0, 1.0],
            quat: [h, 0.0, 0.0, h],
            ..unit_gaussian()
        };
        let s = covariance_3d(&g).unwrap();
        let want = [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((s[i][j] - want[i][j]).abs() < 1e-6, "{i}{j}: {}", s[i][j]);
            }
        }
    }

    #[test]
    fn eigenvalues_invariant_under_rotation() {
        // trace and determinant of sigma equal those of diag(s^2) for any q
        let g = Gaussian {
            scale: [0.5, 1.5, 2.5],
            quat: [0.3, -0.4, 0.8, 0.1],
            ..unit_gaussian()
        };
        let s = covariance_3d(&g).unwrap();
        let trace = s[0][0] + s[1][1] + s[2][2];
        let want_trace = 0.25 + 2.25 + 6.25;
        assert!((trace - want_trace).abs() < 1e-9);
        let det = s[0][0] * (s[1][1] * s[2][2] - s[1][2] * s[2][1])
            - s[0][1] * (s[1][0] * s[2][2] - s[1][2] * s[2][0])
            + s[0][2] * (s[1][0] * s[2][1] - s[1][1] * s[2][0]);
        let want_det = 0.25 * 2.25 * 6.25;
        assert!((det - want_det).abs() < 1e-9);
    }

    #[test]
    fn zero_quaternion_rejected() {
        let g = Gaussian {
            quat: [0.0; 4],
            ..unit_gaussian()
        };
        assert!(matches!(covariance_3d(&g), Err(GaussianError::ZeroQuaternion)));
    }

    #[test]
    fn origin_projects_to_image_center() {
        let cam = orbit_camera(0.0, 0.0, 1.5, 49.0, 64, 64).unwrap();
        let g = Gaussian {
            scale: [0.01; 3],
            ..unit_gaussian()
        };
        let (mean, _, depth) = project(&g, &cam).unwrap();
        assert_eq!(mean, [32.0, 32.0]);
        assert_eq!(depth, 1.5);
    }

    #[test]
    fn projected_extent_scales_inverse_with_depth() {
        let g = Gaussian {
            scale: [0.05; 3],
            ..unit_gaussian()
        };
        let near = orbit_camera(0.0, 0.0, 1.0, 49.0, 64, 64).unwrap();
        let far = orbit_camera(0.0, 0.0, 2.0, 49.0, 64, 64).unwrap();
        let (_, cn, _) = project(&g, &near).unwrap();
        let (_, cf, _) = project(&g, &far).unwrap();
        let extent = |c: [f64; 3]| (c[0] - COV2D_REG).sqrt();
        let ratio = extent(cn) / extent(cf);
        assert!((ratio - 2.0).abs() < 0.1, "ratio = {ratio}");
    }

    #[test]
    fn isotropic_gaussian_projects_isotropically() {
        let cam = orbit_camera(35.0, 15.0, 1.5, 49.0, 64, 64).unwrap();
        let g = Gaussian {
            scale: [0.05; 3],
            quat: [0.6, 0.3, -0.2, 0.7],
            ..unit_gaussian()
        };
        let (_, c, _) = project(&g, &cam).unwrap();
        assert!((c[0] - c[2]).abs() < 1e-6, "a={} c={}", c[0], c[2]);
        assert!(c[1].abs() < 1e-6, "b={}", c[1]);
    }

    #[test]
    fn behind_camera_rejected() {
        let cam = orbit_camera(0.0, 0.0, 1.5, 49.0, 64, 64).unwrap();
        let g = Gaussian {
            center: [0.0, 0.0, 5.0],
            ..unit_gaussian()
        };
        assert!(matches!(project(&g, &cam), Err(GaussianError::BehindCamera(_))));
    }

    #[test]
    fn file_round_trip_bit_exact() {
        let set = GaussianSet {
            gaussians: vec![
                unit_gaussian(),
                Gaussian {
                    center: [0.1, -0.2, 0.3],
                    scale: [0.01, 0.02, 0.03],
                    quat: [0.5, 0.5, -0.5, 0.5],
                    opacity: 0.75,
                    color: [0.25, 0.5, 1.0],
                },
            ],
        };
        let mut p = std::env::temp_dir();
        p.push(format!("gsbody-gs-{}.bin", std::process::id()));
        save_gaussians(&set, &p).unwrap();
        assert_eq!(load_gaussians(&p).unwrap(), set);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn empty_set_round_trips() {
        let set = GaussianSet::default();
        let mut p = std::env::temp_dir();
        p.push(format!("gsbody-gs-empty-{}.bin", std::process::id()));
        save_gaussians(&set, &p).unwrap();
        assert_eq!(load_gaussians(&p).unwrap().len(), 0);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut p = std::env::temp_dir();
        p.push(format!("gsbody-gs-bad-{}.bin", std::process::id()));
        std::fs::write(&p, b"XATGS1\0\0\0\0\0\0").unwrap();
        assert!(matches!(load_gaussians(&p), Err(GaussianError::BadMagic)));
        std::fs::remove_file(&p).ok();
    }
}
