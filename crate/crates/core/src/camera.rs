//! Orbit cameras and perspective projection.
//!
//! Camera space is right-handed with +X right, +Y up, looking along -Z, so a
//! surface normal facing the camera encodes to (0.5, 0.5, 1.0). Trig at exact
//! multiples of 90 degrees is snapped so orthogonal views are bit-exact under
//! rotation-equivariance tests.

#[derive(Debug, thiserror::Error)]
pub enum CameraError {
    #[error("elevation {0} degrees out of range (-90, 90)")]
    BadElevation(f64),
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("field of view {0} degrees out of range (0, 180)")]
    BadFov(f64),
    #[error("image dimensions must be positive, got {0}x{1}")]
    BadDims(usize, usize),
}

/// Perspective camera on the orbit sphere, looking at the scene origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Camera position (world).
    pub eye: [f64; 3],
    /// World-to-camera rotation, rows = (right, up, back).
    pub rot: [[f64; 3]; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

fn sincos_deg(angle: f64) -> (f64, f64) {
    let m = angle.rem_euclid(360.0);
    if m == 0.0 {
        (0.0, 1.0)
    } else if m == 90.0 {
        (1.0, 0.0)
    } else if m == 180.0 {
        (0.0, -1.0)
    } else if m == 270.0 {
        (-1.0, 0.0)
    } else {
        let r = m.to_radians();
        (r.sin(), r.cos())
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Camera on the orbit sphere at (azimuth, elevation, radius), +Y up.
pub fn orbit_camera(
    azimuth_deg: f64,
    elevation_deg: f64,
    radius: f64,
    fov_deg: f64,
    width: usize,
    height: usize,
) -> Result<CameraPose, CameraError> {
    if elevation_deg.abs() >= 90.0 {
        return Err(CameraError::BadElevation(elevation_deg));
    }
    if radius <= 0.0 {
        return Err(CameraError::BadRadius(radius));
    }
    if fov_deg <= 0.0 || fov_deg >= 180.0 {
        return Err(CameraError::BadFov(fov_deg));
    }
    if width == 0 || height == 0 {
        return Err(CameraError::BadDims(width, height));
    }
    let (saz, caz) = sincos_deg(azimuth_deg);
    let (sel, cel) = sincos_deg(elevation_deg);
    let eye = [radius * saz * cel, radius * sel, radius * caz * cel];
    let back = normalize(eye);
    let right = normalize(cross([0.0, 1.0, 0.0], back));
    let up = cross(back, right);
    let f = (height as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
    Ok(CameraPose {
        azimuth_deg,
        elevation_deg,
        radius,
        fov_deg,
        width,
        height,
        eye,
        rot: [right, up, back],
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
    })
}

impl CameraPose {
    /// World point to camera space (x right, y up, z toward the camera).
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.eye[0], p[1] - self.eye[1], p[2] - self.eye[2]];
        [
            self.rot[0][0] * d[0] + self.rot[0][1] * d[1] + self.rot[0][2] * d[2],
            self.rot[1][0] * d[0] + self.rot[1][1] * d[1] + self.rot[1][2] * d[2],
            self.rot[2][0] * d[0] + self.rot[2][1] * d[1] + self.rot[2][2] * d[2],
        ]
    }

    /// Rotate a world direction into camera space.
    pub fn rotate_to_camera(&self, v: [f64; 3]) -> [f64; 3] {
        [
            self.rot[0][0] * v[0] + self.rot[0][1] * v[1] + self.rot[0][2] * v[2],
            self.rot[1][0] * v[0] + self.rot[1][1] * v[1] + self.rot[1][2] * v[2],
            self.rot[2][0] * v[0] + self.rot[2][1] * v[1] + self.rot[2][2] * v[2],
        ]
    }

    /// Pixel position and positive view depth of a camera-space point.
    pub fn project_cam(&self, pc: [f64; 3]) -> Option<(f64, f64, f64)> {
        let depth = -pc[2];
        if depth <= 1e-9 {
            return None;
        }
        let u = self.cx + self.fx * pc[0] / depth;
        let v = self.cy - self.fy * pc[1] / depth;
        Some((u, v, depth))
    }

    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        self.project_cam(self.to_camera(p))
    }

    /// World-space ray through a pixel center, parameterized by view depth:
    /// point(d) = origin + dir * d.
    pub fn pixel_ray(&self, px: f64, py: f64) -> ([f64; 3], [f64; 3]) {
        let dc = [(px - self.cx) / self.fx, (self.cy - py) / self.fy, -1.0];
        // rows are orthonormal, so transpose is the camera-to-world rotation
        let dir = [
            self.rot[0][0] * dc[0] + self.rot[1][0] * dc[1] + self.rot[2][0] * dc[2],
            self.rot[0][1] * dc[0] + self.rot[1][1] * dc[1] + self.rot[2][1] * dc[2],
            self.rot[0][2] * dc[0] + self.rot[1][2] * dc[1] + self.rot[2][2] * dc[2],
        ];
        (self.eye, dir)
    }
}

/// Front/back/left/right orthogonal cameras: azimuths {0, 180, 90, 270}.
pub fn four_orthogonal_views(
    radius: f64,
    fov_deg: f64,
    width: usize,
    height: usize,
) -> [CameraPose; 4] {
    let mk = |az: f64| orbit_camera(az, 0.0, radius, fov_deg, width, height).expect("valid orbit");
    [mk(0.0), mk(180.0), mk(90.0), mk(270.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_camera_on_positive_z() {
        let cam = orbit_camera(0.0, 0.0, 1.5, 49.0, 64, 64).unwrap();
        assert_eq!(cam.eye, [0.0, 0.0, 1.5]);
        // looks at origin: origin projects to the image center
        let (u, v, d) = cam.project([0.0, 0.0, 0.0]).unwrap();
        assert_eq!((u, v), (32.0, 32.0));
        assert_eq!(d, 1.5);
    }

    #[test]
    fn azimuth_180_mirrors_front() {
        let f = orbit_camera(0.0, 0.0, 1.5, 49.0, 64, 64).unwrap();
        let b = orbit_camera(180.0, 0.0, 1.5, 49.0, 64, 64).unwrap();
        assert_eq!(b.eye, [f.eye[0], f.eye[1], -f.eye[2]]);
    }

    #[test]
    fn azimuth_90_on_positive_x() {
        let cam = orbit_camera(90.0, 0.0, 2.0, 60.0, 32, 32).unwrap();
        assert_eq!(cam.eye, [2.0, 0.0, 0.0]);
    }

    #[test]
    fn four_views_look_at_origin_and_pair_up() {
        let cams = four_orthogonal_views(1.5, 49.0, 64, 64);
        for c in &cams {
            let (u, v, _) = c.project([0.0, 0.0, 0.0]).unwrap();
            assert_eq!((u, v), (32.0, 32.0));
        }
        // front/back and left/right are antipodal
        for k in 0..3 {
            assert_eq!(cams[0].eye[k], -cams[1].eye[k]);
            assert_eq!(cams[2].eye[k], -cams[3].eye[k]);
        }
        let front = orbit_camera(0.0, 0.0, 1.5, 49.0, 64, 64).unwrap();
        assert_eq!(cams[0], front);
    }

    #[test]
    fn pole_elevation_rejected() {
        assert!(orbit_camera(0.0, 90.0, 1.5, 49.0, 64, 64).is_err());
        assert!(orbit_camera(0.0, -95.0, 1.5, 49.0, 64, 64).is_err());
    }

    #[test]
    fn pixel_ray_reprojects() {
        let cam = orbit_camera(33.0, 12.0, 1.5, 49.0, 64, 64).unwrap();
        let (o, dir) = cam.pixel_ray(10.5, 50.5);
        let p = [o[0] + dir[0] * 1.3, o[1] + dir[1] * 1.3, o[2] + dir[2] * 1.3];
        let (u, v, d) = cam.project(p).unwrap();
        assert!((u - 10.5).abs() < 1e-9 && (v - 50.5).abs() < 1e-9);
        assert!((d - 1.3).abs() < 1e-12);
    }
}
