//! Deterministic software rasterizer for ground-truth supervision renders.
//!
//! Z-buffered perspective rasterization with perspective-correct barycentric
//! interpolation. No backface culling. Ties at exactly equal depth keep the
//! lower triangle index (strict-less depth test in index order).

use crate::camera::CameraPose;
use crate::img::Image;
use crate::mesh::TriangleMesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Rgb,
    Normal,
    Mask,
    Depth,
}

impl RenderMode {
    pub fn channels(&self) -> usize {
        match self {
            RenderMode::Rgb | RenderMode::Normal => 3,
            RenderMode::Mask | RenderMode::Depth => 1,
        }
    }
}

/// One rendered channel plane: rgb, camera-space normals encoded (n+1)/2,
/// binary coverage mask, or positive view depth.
#[derive(Debug, Clone)]
pub struct RenderTarget {
    pub mode: RenderMode,
    pub image: Image,
    pub background: [f32; 3],
}

/// Normal-map background encodes the zero vector.
pub const NORMAL_BG: [f32; 3] = [0.5, 0.5, 0.5];

const NEAR_PLANE: f64 = 0.01;

pub fn rasterize(
    mesh: &TriangleMesh,
    cam: &CameraPose,
    mode: RenderMode,
    background: [f32; 3],
) -> RenderTarget {
    assert!(cam.width > 0 && cam.height > 0, "empty image dims");
    let (w, h) = (cam.width, cam.height);
    let mut image = Image::new(mode.channels(), h, w);
    // fill background
    match mode {
        RenderMode::Rgb => {
            for ch in 0..3 {
                for v in &mut image.data[ch * h * w..(ch + 1) * h * w] {
                    *v = background[ch];
                }
            }
        }
        RenderMode::Normal => {
            for ch in 0..3 {
                for v in &mut image.data[ch * h * w..(ch + 1) * h * w] {
                    *v = NORMAL_BG[ch];
                }
            }
        }
        RenderMode::Mask | RenderMode::Depth => {}
    }
    let mut zbuf = vec![f64::INFINITY; h * w];
    if mesh.is_empty() {
        return RenderTarget {
            mode,
            image,
            background,
        };
    }

    // project every vertex once
    let projected: Vec<Option<(f64, f64, f64)>> = mesh
        .vertices
        .iter()
        .map(|&p| {
            let pc = cam.to_camera([p[0] as f64, p[1] as f64, p[2] as f64]);
            let depth = -pc[2];
            if depth <= NEAR_PLANE {
                None
            } else {
                cam.project_cam(pc)
            }
        })
        .collect();

    for tri in mesh.triangles.iter() {
        let (p0, p1, p2) = match (
            projected[tri[0] as usize],
            projected[tri[1] as usize],
            projected[tri[2] as usize],
        ) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue, // partially behind the near plane
        };
        let area = (p1.0 - p0.0) * (p2.1 - p0.1) - (p1.1 - p0.1) * (p2.0 - p0.0);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_x = p0.0.min(p1.0).min(p2.0).floor().max(0.0) as usize;
        let max_x = (p0.0.max(p1.0).max(p2.0).ceil() as isize).min(w as isize - 1);
        let min_y = p0.1.min(p1.1).min(p2.1).floor().max(0.0) as usize;
        let max_y = (p0.1.max(p1.1).max(p2.1).ceil() as isize).min(h as isize - 1);
        if max_x < 0 || max_y < 0 {
            continue;
        }
        let inv_area = 1.0 / area;
        let inv_d = [1.0 / p0.2, 1.0 / p1.2, 1.0 / p2.2];
        for y in min_y..=max_y as usize {
            let py = y as f64 + 0.5;
            for x in min_x..=max_x as usize {
                let px = x as f64 + 0.5;
                // screen-space barycentrics
                let l0 = ((p1.0 - px) * (p2.1 - py) - (p1.1 - py) * (p2.0 - px)) * inv_area;
                let l1 = ((p2.0 - px) * (p0.1 - py) - (p2.1 - py) * (p0.0 - px)) * inv_area;
                let l2 = 1.0 - l0 - l1;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let inv_depth = l0 * inv_d[0] + l1 * inv_d[1] + l2 * inv_d[2];
                let depth = 1.0 / inv_depth;
                let zi = y * w + x;
                if depth < zbuf[zi] {
                    zbuf[zi] = depth;
                    // perspective-correct attribute weights
                    let w0 = l0 * inv_d[0] * depth;
                    let w1 = l1 * inv_d[1] * depth;
                    let w2 = 1.0 - w0 - w1;
                    shade(&mut image, mesh, cam, mode, tri, [w0, w1, w2], depth, y, x);
                }
            }
        }
    }
    RenderTarget {
        mode,
        image,
        background,
    }
}

#[allow(clippy::too_many_arguments)]
fn shade(
    image: &mut Image,
    mesh: &TriangleMesh,
    cam: &CameraPose,
    mode: RenderMode,
    tri: &[u32; 3],
    w: [f64; 3],
    depth: f64,
    y: usize,
    x: usize,
) {
    match mode {
        RenderMode::Rgb => {
            for ch in 0..3 {
                let mut v = 0.0f64;
                for k in 0..3 {
                    v += w[k] * mesh.vertex_colors[tri[k] as usize][ch] as f64;
                }
                *image.at_mut(ch, y, x) = v as f32;
            }
        }
        RenderMode::Normal => {
            let mut n = [0.0f64; 3];
            for k in 0..3 {
                let vn = mesh.vertex_normals[tri[k] as usize];
                for c in 0..3 {
                    n[c] += w[k] * vn[c] as f64;
                }
            }
            let nc = cam.rotate_to_camera(n);
            let len = (nc[0] * nc[0] + nc[1] * nc[1] + nc[2] * nc[2]).sqrt().max(1e-12);
            for ch in 0..3 {
                *image.at_mut(ch, y, x) = ((nc[ch] / len + 1.0) * 0.5) as f32;
            }
        }
        RenderMode::Mask => {
            *image.at_mut(0, y, x) = 1.0;
        }
        RenderMode::Depth => {
            *image.at_mut(0, y, x) = depth as f32;
        }
    }
}

/// Point cloud with per-point unit normals.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub normals: Vec<[f32; 3]>,
}

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("cannot sample from a zero-area mesh")]
    ZeroArea,
    #[error("sample count must be positive")]
    ZeroCount,
}

/// Area-weighted uniform surface sampling, deterministic per seed.
pub fn sample_surface_points(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<PointCloud, SampleError> {
    if n == 0 {
        return Err(SampleError::ZeroCount);
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0f64;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0] as usize];
        let b = mesh.vertices[t[1] as usize];
        let c = mesh.vertices[t[2] as usize];
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
        let cx = e1[1] * e2[2] - e1[2] * e2[1];
        let cy = e1[2] * e2[0] - e1[0] * e2[2];
        let cz = e1[0] * e2[1] - e1[1] * e2[0];
        total += 0.5 * (cx * cx + cy * cy + cz * cz).sqrt();
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(SampleError::ZeroArea);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PointCloud::default();
    for _ in 0..n {
        let target = rng.gen_range(0.0..total);
        let ti = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let t = mesh.triangles[ti];
        // uniform barycentric via the sqrt trick
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let (u, v) = (1.0 - s, s * (1.0 - r2));
        let wgt = [u, v, 1.0 - u - v];
        let mut pos = [0.0f64; 3];
        let mut nrm = [0.0f64; 3];
        for k in 0..3 {
            let vi = t[k] as usize;
            for c in 0..3 {
                pos[c] += wgt[k] * mesh.vertices[vi][c] as f64;
                nrm[c] += wgt[k] * mesh.vertex_normals[vi][c] as f64;
            }
        }
        let len = (nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]).sqrt();
        let nrm = if len > 1e-12 {
            [
                (nrm[0] / len) as f32,
                (nrm[1] / len) as f32,
                (nrm[2] / len) as f32,
            ]
        } else {
            [0.0, 1.0, 0.0]
        };
        out.positions.push([pos[0] as f32, pos[1] as f32, pos[2] as f32]);
        out.normals.push(nrm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::orbit_camera;
    use crate::mesh::TriangleMesh;

    fn full_frame_triangle(z: f32, color: [f32; 3]) -> TriangleMesh {
        // Large triangle at fixed world z in front of the azimuth-0 camera.
        let mut m = TriangleMesh {
            vertices: vec![[-10.0, -10.0, z], [10.0, -10.0, z], [0.0, 14.0, z]],
            triangles: vec![[0, 1, 2]],
            vertex_colors: vec![color; 3],
            vertex_normals: vec![[0.0, 0.0, 1.0]; 3],
        };
        m.recompute_normals();
        m
    }

    #[test]
    fn empty_mesh_renders_background() {
        let cam = orbit_camera(0.0, 0.0, 1.5, 49.0, 16, 16).unwrap();
        let rt = rasterize(&TriangleMesh::default(), &cam, RenderMode::Mask, [0.0; 3]);
        assert!(rt.image.data.iter().all(|&v| v == 0.0));
        let rgb = rasterize(&TriangleMesh::default(), &cam, RenderMode::Rgb, [0.2, 0.4, 0.6]);
        assert_eq!(rgb.image.at(2, 5, 5), 0.6);
    }

    #[test]
    fn constant_color_triangle_covers_frame() {
        let cam = orbit_camera(0.0, 0.0, 1.5, 49.0, 16, 16).unwrap();
        let mesh = full_frame_triangle(0.0, [0.3, 0.6, 0.9]);
        let rt = rasterize(&mesh, &cam, RenderMode::Rgb, [0.0; 3]);
        for y in 0..16 {
            for x in 0..16 {
                for (ch, want) in [0.3f32, 0.6, 0.9].iter().enumerate() {
                    assert!((rt.image.at(ch, y, x) - want).abs() < 1e-5);
                }
            }
        }
        let mask = rasterize(&mesh, &cam, RenderMode::Mask, [0.0; 3]);
        assert!(mask.image.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sphere_center_normal_faces_camera() {
        // Icosphere-ish: latitude/longitude sphere of radius 1
        let mut mesh = TriangleMesh::default();
        let (rings, segs) = (24usize, 48usize);
        for i in 0..=rings {
            let theta = std::f32::consts::PI * i as f32 / rings as f32;
            for j in 0..segs {
                let phi = 2.0 * std::f32::consts::PI * j as f32 / segs as f32;
                let p = [
                    theta.sin() * phi.sin(),
                    theta.cos(),
                    theta.sin() * phi.cos(),
                ];
                mesh.vertices.push(p);
                mesh.vertex_normals.push(p);
                mesh.vertex_colors.push([1.0; 3]);
            }
        }
        for i in 0..rings {
            for j in 0..segs {
                let a = (i * segs + j) as u32;
                let b = (i * segs + (j + 1) % segs) as u32;
                let c = ((i + 1) * segs + j) as u32;
                let d = ((i + 1) * segs + (j + 1) % segs) as u32;
                mesh.triangles.push([a, b, c]);
                mesh.triangles.push([b, d, c]);
            }
        }
        let cam = orbit_camera(0.0, 0.0, 3.0, 49.0, 65, 65).unwrap();
        let rt = rasterize(&mesh, &cam, RenderMode::Normal, [0.0; 3]);
        // center pixel: analytic sphere normal points straight at the camera
        let (cy, cx) = (32, 32);
        assert!((rt.image.at(0, cy, cx) - 0.5).abs() < 0.05);
        assert!((rt.image.at(1, cy, cx) - 0.5).abs() < 0.05);
        assert!(rt.image.at(2, cy, cx) > 0.97);
    }

    #[test]
    fn mask_equals_depth_written() {
        let cam = orbit_camera(20.0, 10.0, 1.5, 60.0, 32, 32).unwrap();
        let mesh = full_frame_triangle(0.2, [1.0; 3]);
        let mask = rasterize(&mesh, &cam, RenderMode::Mask, [0.0; 3]);
        let depth = rasterize(&mesh, &cam, RenderMode::Depth, [0.0; 3]);
        for i in 0..mask.image.data.len() {
            assert_eq!(mask.image.data[i] > 0.5, depth.image.data[i] > 0.0);
        }
    }

    #[test]
    fn submission_order_does_not_matter() {
        let mut m1 = full_frame_triangle(0.2, [1.0, 0.0, 0.0]);
        let back = full_frame_triangle(-0.2, [0.0, 1.0, 0.0]);
        m1.append(&back);
        let mut m2 = back.clone();
        m2.append(&full_frame_triangle(0.2, [1.0, 0.0, 0.0]));
        let cam = orbit_camera(0.0, 0.0, 1.5, 49.0, 24, 24).unwrap();
        let a = rasterize(&m1, &cam, RenderMode::Rgb, [0.0; 3]);
        let b = rasterize(&m2, &cam, RenderMode::Rgb, [0.0; 3]);
        assert_eq!(a.image.data, b.image.data);
        // front (red) triangle wins everywhere
        assert!(a.image.at(0, 12, 12) > 0.99 && a.image.at(1, 12, 12) < 0.01);
    }

    #[test]
    fn pose_equivariance_at_exact_quarter_turns() {
        // rotate mesh by exactly 90 degrees about +Y and the camera with it
        let mesh = {
            let mut m = full_frame_triangle(0.3, [0.2, 0.5, 0.8]);
            // break symmetry so the test is meaningful
            m.vertices[2] = [0.3, 9.0, 0.1];
            m.recompute_normals();
            m
        };
        let ry90 = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]];
        let rotated = mesh.transformed(&ry90, [0.0; 3]);
        let cam0 = orbit_camera(0.0, 0.0, 1.5, 49.0, 32, 32).unwrap();
        let cam90 = orbit_camera(90.0, 0.0, 1.5, 49.0, 32, 32).unwrap();
        for mode in [RenderMode::Rgb, RenderMode::Normal, RenderMode::Mask, RenderMode::Depth] {
            let a = rasterize(&mesh, &cam0, mode, [0.0; 3]);
            let b = rasterize(&rotated, &cam90, mode, [0.0; 3]);
            assert_eq!(a.image.data, b.image.data, "mode {mode:?}");
        }
    }

    #[test]
    fn surface_sampling_respects_area_ratio() {
        // two triangles with area ratio 3:1
        let mesh = TriangleMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 2.0, 0.0],
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
            vertex_colors: vec![[1.0; 3]; 6],
            vertex_normals: vec![[0.0, 0.0, 1.0]; 6],
        };
        let pts = sample_surface_points(&mesh, 4000, 7).unwrap();
        let big = pts.positions.iter().filter(|p| p[0] < 5.0).count();
        let small = 4000 - big;
        assert!((big as f64 - 3000.0).abs() < 150.0, "big = {big}");
        assert!((small as f64 - 1000.0).abs() < 150.0, "small = {small}");
        // planarity + normals
        for (p, n) in pts.positions.iter().zip(&pts.normals) {
            assert!(p[2].abs() < 1e-6);
            assert_eq!(*n, [0.0, 0.0, 1.0]);
        }
        // determinism
        let again = sample_surface_points(&mesh, 4000, 7).unwrap();
        assert_eq!(pts.positions, again.positions);
    }
}
