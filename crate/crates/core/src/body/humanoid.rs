//! Procedural capsule humanoid with automatic skinning weights and a
//! deterministic clothing palette.

use crate::body::rig::{skeleton_rig, PoseParams, SkeletonRig, BONE_COUNT};
use crate::body::shape::ShapeParams;
use crate::body::SkinnedMesh;
use crate::mesh::TriangleMesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// At most this many bones influence a vertex (then renormalized).
pub const MAX_INFLUENCES: usize = 4;

fn orthonormal_frame(w: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let pick = if w[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let u = [
        w[1] * pick[2] - w[2] * pick[1],
        w[2] * pick[0] - w[0] * pick[2],
        w[0] * pick[1] - w[1] * pick[0],
    ];
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let u = [u[0] / n, u[1] / n, u[2] / n];
    let v = [
        w[1] * u[2] - w[2] * u[1],
        w[2] * u[0] - w[0] * u[2],
        w[0] * u[1] - w[1] * u[0],
    ];
    (u, v)
}

/// Closed capsule from p0 to p1 with hemispherical caps. Outward analytic
/// normals; axial ring count adapts to the length/radius ratio so bending
/// and twisting deform smoothly.
pub fn capsule(p0: [f32; 3], p1: [f32; 3], radius: f32, segs: usize, color: [f32; 3]) -> TriangleMesh {
    let a = [p0[0] as f64, p0[1] as f64, p0[2] as f64];
    let b = [p1[0] as f64, p1[1] as f64, p1[2] as f64];
    let axis = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let len = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let w = [axis[0] / len, axis[1] / len, axis[2] / len];
    let (u, v) = orthonormal_frame(w);
    let r = radius as f64;
    let rings = ((len / (0.75 * r)).ceil() as usize).clamp(2, 12);
    let cap_rings = 3usize;

    let mut mesh = TriangleMesh::default();
    let mut push = |p: [f64; 3], n: [f64; 3]| {
        mesh.vertices.push([p[0] as f32, p[1] as f32, p[2] as f32]);
        mesh.vertex_normals.push([n[0] as f32, n[1] as f32, n[2] as f32]);
        mesh.vertex_colors.push(color);
        (mesh.vertices.len() - 1) as u32
    };
    let circle = |t: f64| {
        (0..segs)
            .map(|s| {
                let th = 2.0 * std::f64::consts::PI * s as f64 / segs as f64;
                let (st, ct) = th.sin_cos();
                let dir = [
                    u[0] * ct + v[0] * st,
                    u[1] * ct + v[1] * st,
                    u[2] * ct + v[2] * st,
                ];
                (t, dir)
            })
            .collect::<Vec<_>>()
    };

    // bottom apex
    let bottom_apex = push(
        [a[0] - w[0] * r, a[1] - w[1] * r, a[2] - w[2] * r],
        [-w[0], -w[1], -w[2]],
    );
    let mut prev_ring: Vec<u32> = Vec::new();
    // bottom cap rings (from near-apex to the cylinder base), then cylinder
    // rings, then top cap rings, then top apex
    let mut ring_specs: Vec<(f64, f64, f64)> = Vec::new(); // (axial offset from a, ring radius, normal axial component)
    for j in 1..=cap_rings {
        let phi = std::f64::consts::FRAC_PI_2 * (1.0 - j as f64 / cap_rings as f64);
        // phi is the latitude below the base circle
        ring_specs.push((-r * phi.sin(), r * phi.cos(), -phi.sin()));
    }
    for t in 0..=rings {
        ring_specs.push((len * t as f64 / rings as f64, r, 0.0));
    }
    for j in 1..=cap_rings {
        let phi = std::f64::consts::FRAC_PI_2 * j as f64 / cap_rings as f64;
        ring_specs.push((len + r * phi.sin(), r * phi.cos(), phi.sin()));
    }

    for (offset, ring_r, n_axial) in ring_specs {
        let ring: Vec<u32> = circle(offset)
            .into_iter()
            .map(|(t, dir)| {
                let p = [
                    a[0] + w[0] * t + dir[0] * ring_r,
                    a[1] + w[1] * t + dir[1] * ring_r,
                    a[2] + w[2] * t + dir[2] * ring_r,
                ];
                let radial = (1.0 - n_axial * n_axial).max(0.0).sqrt();
                let n = [
                    dir[0] * radial + w[0] * n_axial,
                    dir[1] * radial + w[1] * n_axial,
                    dir[2] * radial + w[2] * n_axial,
                ];
                push(p, n)
            })
            .collect();
        if prev_ring.is_empty() {
            for s in 0..segs {
                let s1 = (s + 1) % segs;
                mesh.triangles.push([bottom_apex, ring[s1], ring[s]]);
            }
        } else {
            for s in 0..segs {
                let s1 = (s + 1) % segs;
                mesh.triangles.push([prev_ring[s], ring[s1], ring[s]]);
                mesh.triangles.push([prev_ring[s], prev_ring[s1], ring[s1]]);
            }
        }
        prev_ring = ring;
    }
    let top_apex = push(
        [b[0] + w[0] * r, b[1] + w[1] * r, b[2] + w[2] * r],
        [w[0], w[1], w[2]],
    );
    for s in 0..segs {
        let s1 = (s + 1) % segs;
        mesh.triangles.push([prev_ring[s], prev_ring[s1], top_apex]);
    }
    mesh
}

/// Deterministic clothing palette: skin, two shirt tones (striped), pants,
/// shoes.
struct Palette {
    skin: [f32; 3],
    shirt_a: [f32; 3],
    shirt_b: [f32; 3],
    pants: [f32; 3],
    shoes: [f32; 3],
}

fn palette(seed: u64) -> Palette {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E3779B97F4A7C15);
    let skins: [[f32; 3]; 4] = [
        [0.96, 0.80, 0.69],
        [0.87, 0.67, 0.53],
        [0.68, 0.48, 0.34],
        [0.45, 0.31, 0.22],
    ];
    let skin = skins[rng.gen_range(0..skins.len())];
    let mut color = |s: f32, v: f32| -> [f32; 3] {
        let h: f32 = rng.gen_range(0.0..6.0);
        let c = v * s;
        let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
        let (r0, g0, b0) = match h as u32 {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = v - c;
        [r0 + m, g0 + m, b0 + m]
    };
    let shirt_a = color(0.7, 0.8);
    let shirt_b = color(0.6, 0.55);
    let pants = color(0.5, 0.45);
    let shoes = color(0.3, 0.25);
    Palette {
        skin,
        shirt_a,
        shirt_b,
        pants,
        shoes,
    }
}

fn bone_base_radius(bone: usize, shape: &ShapeParams) -> f32 {
    let f = shape.factors();
    match bone {
        0 => 0.105 * f.torso_thick,        // pelvis
        1 => 0.095 * f.torso_thick,        // spine
        2 => 0.110 * f.torso_thick,        // chest
        3 => 0.085 * f.head,               // head
        4 | 6 => 0.048 * f.limb_thick,     // upper arms
        5 | 7 => 0.042 * f.limb_thick,     // forearms
        8 | 10 => 0.068 * f.limb_thick,    // thighs
        _ => 0.052 * f.limb_thick,         // shins
    }
}

/// Distance from a point to a bone segment.
fn segment_distance(p: [f32; 3], h: [f32; 3], t: [f32; 3]) -> f64 {
    let pv = [p[0] as f64, p[1] as f64, p[2] as f64];
    let a = [h[0] as f64, h[1] as f64, h[2] as f64];
    let b = [t[0] as f64, t[1] as f64, t[2] as f64];
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [pv[0] - a[0], pv[1] - a[1], pv[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let s = if len2 > 1e-20 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + ab[0] * s, a[1] + ab[1] * s, a[2] + ab[2] * s];
    let d = [pv[0] - q[0], pv[1] - q[1], pv[2] - q[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Inverse-quartic distance falloff to every bone segment, truncated to the
/// top-4 influences and renormalized.
pub fn skinning_weights(vertices: &[[f32; 3]], rig: &SkeletonRig) -> Vec<f32> {
    let m = rig.bone_count();
    let mut weights = vec![0.0f32; vertices.len() * m];
    for (vi, &p) in vertices.iter().enumerate() {
        let mut raw: Vec<(usize, f64)> = rig
            .bones
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let d = segment_distance(p, b.rest_head, b.rest_tail);
                (j, 1.0 / (d * d + 1e-4).powi(2))
            })
            .collect();
        raw.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        raw.truncate(MAX_INFLUENCES);
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        for (j, w) in raw {
            weights[vi * m + j] = (w / total) as f32;
        }
    }
    weights
}

/// Closed capsule humanoid with automatic skinning and a deterministic
/// palette. Height ~1.7 units at beta = 0, centered inside the orbit sphere.
pub fn make_humanoid(shape: &ShapeParams, palette_seed: u64) -> SkinnedMesh {
    let rig = skeleton_rig(shape);
    let pal = palette(palette_seed);
    let segs_for = |bone: usize| match bone {
        0 | 1 | 2 => 12usize,
        3 => 12,
        _ => 10,
    };
    let color_for = |bone: usize| match bone {
        0 => pal.pants,
        1 | 2 => pal.shirt_a,
        3 => pal.skin,
        4 | 6 => pal.shirt_a,
        5 | 7 => pal.skin,
        8 | 10 => pal.pants,
        _ => pal.shoes,
    };
    let mut mesh = TriangleMesh::default();
    for (j, bone) in rig.bones.iter().enumerate() {
        let part = capsule(
            bone.rest_head,
            bone.rest_tail,
            bone_base_radius(j, shape),
            segs_for(j),
            color_for(j),
        );
        mesh.append(&part);
    }
    // horizontal shirt stripes on the torso
    for (v, c) in mesh.vertices.iter().zip(mesh.vertex_colors.iter_mut()) {
        if *c == pal.shirt_a && ((v[1] * 24.0).floor() as i64).rem_euclid(2) == 0 {
            *c = pal.shirt_b;
        }
    }
    let weights = skinning_weights(&mesh.vertices, &rig);
    SkinnedMesh {
        mesh,
        weights,
        rig,
    }
}

/// Low-poly capsule body over the posed skeleton: the coarse driving
/// template (no clothing detail), renderable in normal mode.
pub fn skeleton_template_mesh(rig: &SkeletonRig, pose: &PoseParams) -> TriangleMesh {
    let mut rest = TriangleMesh::default();
    for bone in &rig.bones {
        rest.append(&capsule(bone.rest_head, bone.rest_tail, 0.055, 6, [0.6, 0.6, 0.6]));
    }
    if pose.is_identity() {
        return rest;
    }
    let weights = skinning_weights(&rest.vertices, rig);
    let skinned = SkinnedMesh {
        mesh: rest,
        weights,
        rig: rig.clone(),
    };
    crate::body::lbs_deform(&skinned, pose)
}

/// Convenience: template for a shape at a pose.
pub fn template_for(shape: &ShapeParams, pose: &PoseParams) -> TriangleMesh {
    skeleton_template_mesh(&skeleton_rig(shape), pose)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_humanoid_height_and_size() {
        let h = make_humanoid(&ShapeParams::zero(), 0);
        let (mut ylo, mut yhi) = (f32::INFINITY, f32::NEG_INFINITY);
        for v in &h.mesh.vertices {
            ylo = ylo.min(v[1]);
            yhi = yhi.max(v[1]);
        }
        let height = yhi - ylo;
        assert!((height - 1.7).abs() < 0.12, "height = {height}");
        assert!(h.mesh.bounding_radius() < 1.5, "fits the orbit sphere");
        let n = h.mesh.vertices.len();
        assert!((1500..6500).contains(&n), "vertex count {n}");
        h.validate().unwrap();
    }

    #[test]
    fn humanoid_deterministic_per_seed() {
        let shape = ShapeParams::random(3);
        let a = make_humanoid(&shape, 17);
        let b = make_humanoid(&shape, 17);
        assert_eq!(a.mesh.vertices, b.mesh.vertices);
        assert_eq!(a.mesh.vertex_colors, b.mesh.vertex_colors);
        assert_eq!(a.weights, b.weights);
        let c = make_humanoid(&shape, 18);
        assert_ne!(a.mesh.vertex_colors, c.mesh.vertex_colors);
    }

    #[test]
    fn arm_length_shape_axis_changes_span() {
        let span = |beta1: f32| -> f32 {
            let mut beta = [0.0f32; 8];
            beta[1] = beta1;
            let h = make_humanoid(&ShapeParams::new(beta), 0);
            let mut xmax = 0.0f32;
            for v in &h.mesh.vertices {
                xmax = xmax.max(v[0].abs());
            }
            xmax * 2.0
        };
        let wide = span(2.0);
        let narrow = span(-2.0);
        assert!(
            wide / narrow > 1.2,
            "span ratio {} (wide {wide} narrow {narrow})",
            wide / narrow
        );
    }

    #[test]
    fn capsule_windings_are_outward() {
        let mut c = capsule([0.0, -0.3, 0.0], [0.0, 0.3, 0.0], 0.1, 10, [1.0; 3]);
        let analytic = c.vertex_normals.clone();
        c.recompute_normals();
        let mut total = 0.0f64;
        for (a, b) in analytic.iter().zip(&c.vertex_normals) {
            total += (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) as f64;
        }
        let avg = total / analytic.len() as f64;
        assert!(avg > 0.9, "avg normal agreement {avg}");
    }

    #[test]
    fn template_is_coarser_than_humanoid() {
        let shape = ShapeParams::zero();
        let h = make_humanoid(&shape, 0);
        let t = template_for(&shape, &PoseParams::identity(BONE_COUNT));
        assert!(t.vertices.len() < h.mesh.vertices.len());
    }

    #[test]
    fn weights_normalized_with_top4_influences() {
        let h = make_humanoid(&ShapeParams::zero(), 1);
        let m = h.rig.bone_count();
        for row in h.weights.chunks_exact(m) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            assert!(row.iter().filter(|&&w| w > 0.0).count() <= MAX_INFLUENCES);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}
