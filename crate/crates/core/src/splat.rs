//! Differentiable Gaussian splatting renderer.
//!
//! Forward: project each Gaussian to a 2D mean + covariance, sort
//! front-to-back by view depth (stable by index), and alpha-composite
//! per pixel with early termination. The whole render is a single fused
//! autodiff op over the [N, 14] parameter tensor; the backward pass
//! replays the identical per-pixel walks and chains analytic gradients
//! through compositing, the inverse 2D covariance, the projection
//! Jacobian (including its dependence on the mean), the world covariance
//! R diag(s^2) R^T, and quaternion normalization.
//!
//! All internal math runs in f64 regardless of the tensor scalar type.

use crate::camera::CameraPose;
use crate::gaussian::{quat_to_rot, GaussianSet, COV2D_REG, GAUSSIAN_PARAMS, SPLAT_NEAR};
use crate::img::Image;
use crate::scalar::{r, Real};
use crate::tensor::{backward, CustomOp, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

/// Transmittance below which compositing stops.
pub const TERMINATE_T: f64 = 1e-4;
/// Per-splat contributions below 1/255 are skipped.
pub const MIN_CONTRIB: f64 = 1.0 / 255.0;
/// Per-splat alpha clamp (keeps 1 - w away from zero in the backward pass).
pub const MAX_CONTRIB: f64 = 0.99;

const BACKWARD_CHUNKS: usize = 8;

/// Renderer thresholds. They affect gradients (each cutoff is a jump in the
/// loss), so gradient checking uses the smooth configuration where the
/// finite-difference oracle is valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatConfig {
    pub min_contrib: f64,
    pub terminate_t: f64,
    pub max_contrib: f64,
    /// Bounding-box extent in standard deviations.
    pub sigma_range: f64,
}

impl Default for SplatConfig {
    fn default() -> Self {
        SplatConfig {
            min_contrib: MIN_CONTRIB,
            terminate_t: TERMINATE_T,
            max_contrib: MAX_CONTRIB,
            sigma_range: 3.0,
        }
    }
}

impl SplatConfig {
    /// No skip cutoffs, wide boxes: continuous in every parameter.
    pub fn smooth() -> Self {
        SplatConfig {
            min_contrib: 0.0,
            terminate_t: 0.0,
            max_contrib: MAX_CONTRIB,
            sigma_range: 6.0,
        }
    }
}

/// Rendered splat image: color over background plus accumulated alpha,
/// packed as a [4, H, W] tensor (channels rgb + alpha).
pub struct SplatImage<T: Real> {
    pub rgba: Tensor<T>,
    pub cam: CameraPose,
    pub background: [f32; 3],
}

impl<T: Real> SplatImage<T> {
    pub fn color(&self) -> Tensor<T> {
        self.rgba.slice(0, 0, 3)
    }

    pub fn alpha(&self) -> Tensor<T> {
        self.rgba.slice(0, 3, 4)
    }

    pub fn color_image(&self) -> Image {
        Image::from_tensor(&self.color())
    }

    pub fn alpha_image(&self) -> Image {
        Image::from_tensor(&self.alpha())
    }
}

#[derive(Clone, Copy)]
struct SplatCam {
    rot: [[f64; 3]; 3],
    eye: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl SplatCam {
    fn of(cam: &CameraPose) -> Self {
        SplatCam {
            rot: cam.rot,
            eye: cam.eye,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        }
    }
}

/// Per-Gaussian projection intermediates shared by forward and backward.
struct Projected {
    mean: [f64; 2],
    inv_cov: [f64; 3], // (a, b, c) of the inverse 2D covariance
    depth: f64,
    x0: usize,
    x1: usize, // inclusive
    y0: usize,
    y1: usize,
    opacity: f64,
    color: [f64; 3],
    // saved for the backward chain
    t: [f64; 3],
    qn: [f64; 4],
    qnorm: f64,
    rot3: [[f64; 3]; 3],
    scale: [f64; 3],
}

struct Scene {
    projected: Vec<Option<Projected>>,
    /// Indices sorted front-to-back (depth, then index).
    order: Vec<u32>,
    /// Sorted indices binned per pixel row.
    rows: Vec<Vec<u32>>,
}

fn row_f64(data: &[impl Real], n: usize) -> [f64; GAUSSIAN_PARAMS] {
    let mut out = [0.0f64; GAUSSIAN_PARAMS];
    for (k, o) in out.iter_mut().enumerate() {
        *o = data[n * GAUSSIAN_PARAMS + k].as_f64();
    }
    out
}

fn project_scene<T: Real>(params: &Tensor<T>, cam: &SplatCam, cfg: &SplatConfig) -> Scene {
    let n = params.shape()[0];
    let data = params.data();
    let mut projected: Vec<Option<Projected>> = Vec::with_capacity(n);
    for i in 0..n {
        projected.push(project_one(&row_f64(data, i), cam, cfg));
    }
    let mut order: Vec<u32> = (0..n as u32)
        .filter(|&i| projected[i as usize].is_some())
        .collect();
    order.sort_unstable_by(|&a, &b| {
        let da = projected[a as usize].as_ref().unwrap().depth;
        let db = projected[b as usize].as_ref().unwrap().depth;
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); cam.height];
    for &i in &order {
        let p = projected[i as usize].as_ref().unwrap();
        for row in rows.iter_mut().take(p.y1 + 1).skip(p.y0) {
            row.push(i);
        }
    }
    Scene {
        projected,
        order,
        rows,
    }
}

fn project_one(row: &[f64; GAUSSIAN_PARAMS], cam: &SplatCam, cfg: &SplatConfig) -> Option<Projected> {
    let center = [row[0], row[1], row[2]];
    let scale = [row[3], row[4], row[5]];
    let q = [row[6], row[7], row[8], row[9]];
    let opacity = row[10];
    let color = [row[11], row[12], row[13]];

    let qnorm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if qnorm < 1e-12 {
        return None;
    }
    let qn = [q[0] / qnorm, q[1] / qnorm, q[2] / qnorm, q[3] / qnorm];

    let d0 = [
        center[0] - cam.eye[0],
        center[1] - cam.eye[1],
        center[2] - cam.eye[2],
    ];
    let w = &cam.rot;
    let t = [
        w[0][0] * d0[0] + w[0][1] * d0[1] + w[0][2] * d0[2],
        w[1][0] * d0[0] + w[1][1] * d0[1] + w[1][2] * d0[2],
        w[2][0] * d0[0] + w[2][1] * d0[1] + w[2][2] * d0[2],
    ];
    let depth = -t[2];
    if depth <= SPLAT_NEAR {
        return None;
    }

    let rot3 = quat_to_rot(qn);
    // sigma = R diag(s^2) R^T
    let d2 = [scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]];
    let mut sigma = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] =
                rot3[i][0] * d2[0] * rot3[j][0] + rot3[i][1] * d2[1] * rot3[j][1] + rot3[i][2] * d2[2] * rot3[j][2];
        }
    }
    let jac = jacobian(t, cam);
    let m = mat_jw(&jac, w);
    // cov2d = M sigma M^T + reg
    let mut ms = [[0.0f64; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            ms[i][j] = m[i][0] * sigma[0][j] + m[i][1] * sigma[1][j] + m[i][2] * sigma[2][j];
        }
    }
    let a = ms[0][0] * m[0][0] + ms[0][1] * m[0][1] + ms[0][2] * m[0][2] + COV2D_REG;
    let b = ms[0][0] * m[1][0] + ms[0][1] * m[1][1] + ms[0][2] * m[1][2];
    let c = ms[1][0] * m[1][0] + ms[1][1] * m[1][1] + ms[1][2] * m[1][2] + COV2D_REG;
    let det = a * c - b * b;
    if det <= 1e-18 {
        return None;
    }
    let inv_cov = [c / det, -b / det, a / det];

    let u = cam.cx + cam.fx * t[0] / depth;
    let v = cam.cy - cam.fy * t[1] / depth;

    // 3-sigma bounding box from the largest eigenvalue
    let mid = 0.5 * (a + c);
    let half = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let radius = cfg.sigma_range * (mid + half).max(1e-12).sqrt();
    let x0f = (u - radius).floor();
    let x1f = (u + radius).ceil();
    let y0f = (v - radius).floor();
    let y1f = (v + radius).ceil();
    if x1f < 0.0 || y1f < 0.0 || x0f >= cam.width as f64 || y0f >= cam.height as f64 {
        return None;
    }
    let x0 = x0f.max(0.0) as usize;
    let x1 = (x1f as usize).min(cam.width - 1);
    let y0 = y0f.max(0.0) as usize;
    let y1 = (y1f as usize).min(cam.height - 1);

    Some(Projected {
        mean: [u, v],
        inv_cov,
        depth,
        x0,
        x1,
        y0,
        y1,
        opacity,
        color,
        t,
        qn,
        qnorm,
        rot3,
        scale,
    })
}

fn jacobian(t: [f64; 3], cam: &SplatCam) -> [[f64; 3]; 2] {
    let d = -t[2];
    [
        [cam.fx / d, 0.0, cam.fx * t[0] / (d * d)],
        [0.0, -cam.fy / d, -cam.fy * t[1] / (d * d)],
    ]
}

fn mat_jw(jac: &[[f64; 3]; 2], w: &[[f64; 3]; 3]) -> [[f64; 3]; 2] {
    let mut m = [[0.0f64; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            m[i][j] = jac[i][0] * w[0][j] + jac[i][1] * w[1][j] + jac[i][2] * w[2][j];
        }
    }
    m
}

/// Per-pixel front-to-back walk shared by forward and backward.
#[inline]
fn contribution(p: &Projected, px: f64, py: f64, cfg: &SplatConfig) -> Option<f64> {
    let dx = px - p.mean[0];
    let dy = py - p.mean[1];
    let power = -0.5 * (p.inv_cov[0] * dx * dx + 2.0 * p.inv_cov[1] * dx * dy + p.inv_cov[2] * dy * dy);
    let w = p.opacity * power.exp();
    if w < cfg.min_contrib || w <= 0.0 {
        None
    } else {
        Some(w.min(cfg.max_contrib))
    }
}

fn forward_pixels(scene: &Scene, cam: &SplatCam, background: [f64; 3], cfg: &SplatConfig) -> Vec<f64> {
    let (w, h) = (cam.width, cam.height);
    let mut out = vec![0.0f64; 4 * h * w];
    let (color_part, alpha_part) = out.split_at_mut(3 * h * w);
    let rows: Vec<(usize, &mut [f64], &mut [f64], &mut [f64], &mut [f64])> = {
        let (r0, rest) = color_part.split_at_mut(h * w);
        let (r1, r2) = rest.split_at_mut(h * w);
        itertools_rows(r0, r1, r2, alpha_part, w)
    };
    rows.into_par_iter().for_each(|(y, c0, c1, c2, al)| {
        let py = y as f64 + 0.5;
        for x in 0..w {
            let px = x as f64 + 0.5;
            let mut trans = 1.0f64;
            let mut col = [0.0f64; 3];
            for &gi in &scene.rows[y] {
                let p = scene.projected[gi as usize].as_ref().unwrap();
                if x < p.x0 || x > p.x1 {
                    continue;
                }
                if let Some(wgt) = contribution(p, px, py, cfg) {
                    for k in 0..3 {
                        col[k] += trans * wgt * p.color[k];
                    }
                    trans *= 1.0 - wgt;
                    if trans < cfg.terminate_t {
                        break;
                    }
                }
            }
            c0[x] = col[0] + trans * background[0];
            c1[x] = col[1] + trans * background[1];
            c2[x] = col[2] + trans * background[2];
            al[x] = 1.0 - trans;
        }
    });
    out
}

/// Split the four channel planes into per-row mutable strips.
fn itertools_rows<'a>(
    c0: &'a mut [f64],
    c1: &'a mut [f64],
    c2: &'a mut [f64],
    al: &'a mut [f64],
    w: usize,
) -> Vec<(usize, &'a mut [f64], &'a mut [f64], &'a mut [f64], &'a mut [f64])> {
    let mut out = Vec::new();
    let mut rest = (c0, c1, c2, al);
    let mut y = 0usize;
    loop {
        if rest.0.is_empty() {
            break;
        }
        let (r0, t0) = rest.0.split_at_mut(w);
        let (r1, t1) = rest.1.split_at_mut(w);
        let (r2, t2) = rest.2.split_at_mut(w);
        let (r3, t3) = rest.3.split_at_mut(w);
        out.push((y, r0, r1, r2, r3));
        rest = (t0, t1, t2, t3);
        y += 1;
    }
    out
}

struct SplatRenderOp {
    cam: SplatCam,
    background: [f64; 3],
    cfg: SplatConfig,
}

impl<T: Real> CustomOp<T> for SplatRenderOp {
    fn name(&self) -> &'static str {
        "splat-render"
    }

    fn backward(
        &self,
        inputs: &[Tensor<T>],
        output: &Tensor<T>,
        dout: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let params = &inputs[0];
        let n = params.shape()[0];
        let cam = &self.cam;
        let (w, h) = (cam.width, cam.height);
        let scene = project_scene(params, cam, &self.cfg);
        let out_data = output.data();
        let dout64: Vec<f64> = dout.iter().map(|v| v.as_f64()).collect();

        // Per-Gaussian projected-space gradients accumulated pixel-major in
        // fixed row chunks (deterministic reduction order).
        // Layout per gaussian: du(2), dA(3), dop(1), dc(3).
        const G: usize = 9;
        let chunk_rows = h.div_ceil(BACKWARD_CHUNKS);
        let mut partials: Vec<Vec<f64>> = Vec::with_capacity(BACKWARD_CHUNKS);
        (0..BACKWARD_CHUNKS)
            .into_par_iter()
            .map(|ci| {
                let mut acc = vec![0.0f64; n * G];
                let y_start = ci * chunk_rows;
                let y_end = ((ci + 1) * chunk_rows).min(h);
                for y in y_start..y_end {
                    let py = y as f64 + 0.5;
                    for x in 0..w {
                        let px = x as f64 + 0.5;
                        let pix = y * w + x;
                        let dc_out = [
                            dout64[pix],
                            dout64[h * w + pix],
                            dout64[2 * h * w + pix],
                        ];
                        let da_out = dout64[3 * h * w + pix];
                        if dc_out == [0.0; 3] && da_out == 0.0 {
                            continue;
                        }
                        let alpha = out_data[3 * h * w + pix].as_f64();
                        let t_end = 1.0 - alpha;
                        let total_premult = [
                            out_data[pix].as_f64() - t_end * self.background[0],
                            out_data[h * w + pix].as_f64() - t_end * self.background[1],
                            out_data[2 * h * w + pix].as_f64() - t_end * self.background[2],
                        ];
                        let mut prefix = [0.0f64; 3];
                        let mut trans = 1.0f64;
                        for &gi in &scene.rows[y] {
                            let p = scene.projected[gi as usize].as_ref().unwrap();
                            if x < p.x0 || x > p.x1 {
                                continue;
                            }
                            let dx = px - p.mean[0];
                            let dy = py - p.mean[1];
                            let power = -0.5
                                * (p.inv_cov[0] * dx * dx
                                    + 2.0 * p.inv_cov[1] * dx * dy
                                    + p.inv_cov[2] * dy * dy);
                            let w_raw = p.opacity * power.exp();
                            if w_raw < self.cfg.min_contrib || w_raw <= 0.0 {
                                continue;
                            }
                            let clamped = w_raw > self.cfg.max_contrib;
                            let wgt = if clamped { self.cfg.max_contrib } else { w_raw };

                            let a = &mut acc[gi as usize * G..(gi as usize + 1) * G];
                            // color gradient always flows
                            for k in 0..3 {
                                a[6 + k] += dc_out[k] * trans * wgt;
                            }
                            // dL/dw through color suffix + alpha
                            let mut dl_dw = da_out * t_end / (1.0 - wgt);
                            for k in 0..3 {
                                let contrib_k = trans * wgt * p.color[k];
                                let suffix =
                                    total_premult[k] - prefix[k] - contrib_k + t_end * self.background[k];
                                dl_dw += dc_out[k] * (trans * p.color[k] - suffix / (1.0 - wgt));
                                prefix[k] += contrib_k;
                            }
                            if !clamped {
                                // w = opacity * exp(power)
                                let dl_dpower = dl_dw * wgt;
                                a[5] += dl_dw * power.exp();
                                // power = -0.5 d^T A d, d = p - mean
                                let gx = p.inv_cov[0] * dx + p.inv_cov[1] * dy;
                                let gy = p.inv_cov[1] * dx + p.inv_cov[2] * dy;
                                a[0] += dl_dpower * gx;
                                a[1] += dl_dpower * gy;
                                a[2] += dl_dpower * (-0.5 * dx * dx);
                                a[3] += dl_dpower * (-dx * dy);
                                a[4] += dl_dpower * (-0.5 * dy * dy);
                            }
                            trans *= 1.0 - wgt;
                            if trans < self.cfg.terminate_t {
                                break;
                            }
                        }
                    }
                }
                acc
            })
            .collect_into_vec(&mut partials);

        let mut acc = vec![0.0f64; n * G];
        for part in &partials {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }

        // chain projected-space gradients into the 14 parameter slots
        let mut grads = vec![T::zero(); n * GAUSSIAN_PARAMS];
        for i in 0..n {
            let p = match scene.projected[i].as_ref() {
                Some(p) => p,
                None => continue,
            };
            let a = &acc[i * G..(i + 1) * G];
            let g14 = chain_to_params(p, cam, a);
            for (k, gv) in g14.iter().enumerate() {
                grads[i * GAUSSIAN_PARAMS + k] = r(*gv);
            }
        }
        vec![Some(grads)]
    }
}

/// Chain (du, dA, dop, dc) for one Gaussian into its 14 parameter slots.
fn chain_to_params(p: &Projected, cam: &SplatCam, a: &[f64]) -> [f64; GAUSSIAN_PARAMS] {
    let du = [a[0], a[1]];
    let (g_ia, g_ib, g_ic) = (a[2], a[3], a[4]);
    let dop = a[5];
    let dc = [a[6], a[7], a[8]];

    let mut out = [0.0f64; GAUSSIAN_PARAMS];
    out[10] = dop;
    out[11] = dc[0];
    out[12] = dc[1];
    out[13] = dc[2];

    // A = inv(cov2d); independent-parameter grads -> full-matrix grad
    let ia = p.inv_cov;
    let g_full = [[g_ia, 0.5 * g_ib], [0.5 * g_ib, g_ic]];
    // dL/dCov2d = -A G A
    let am = [[ia[0], ia[1]], [ia[1], ia[2]]];
    let ga = [
        [
            am[0][0] * g_full[0][0] + am[0][1] * g_full[1][0],
            am[0][0] * g_full[0][1] + am[0][1] * g_full[1][1],
        ],
        [
            am[1][0] * g_full[0][0] + am[1][1] * g_full[1][0],
            am[1][0] * g_full[0][1] + am[1][1] * g_full[1][1],
        ],
    ];
    let mut g_s = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            g_s[i][j] = -(ga[i][0] * am[0][j] + ga[i][1] * am[1][j]);
        }
    }

    // rebuild sigma, M, J from saved intermediates
    let d2 = [
        p.scale[0] * p.scale[0],
        p.scale[1] * p.scale[1],
        p.scale[2] * p.scale[2],
    ];
    let rot3 = &p.rot3;
    let mut sigma = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = rot3[i][0] * d2[0] * rot3[j][0]
                + rot3[i][1] * d2[1] * rot3[j][1]
                + rot3[i][2] * d2[2] * rot3[j][2];
        }
    }
    let jac = jacobian(p.t, cam);
    let w = &cam.rot;
    let m = mat_jw(&jac, w);

    // dL/dSigma3 = M^T G_S M
    let mut g_sig3 = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for r0 in 0..2 {
                for c0 in 0..2 {
                    acc += m[r0][i] * g_s[r0][c0] * m[c0][j];
                }
            }
            g_sig3[i][j] = acc;
        }
    }
    // dL/dM = 2 G_S M Sigma3
    let mut msig = [[0.0f64; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            msig[i][j] = m[i][0] * sigma[0][j] + m[i][1] * sigma[1][j] + m[i][2] * sigma[2][j];
        }
    }
    let mut g_m = [[0.0f64; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            g_m[i][j] = 2.0 * (g_s[i][0] * msig[0][j] + g_s[i][1] * msig[1][j]);
        }
    }
    // dL/dJ = G_M W^T
    let mut g_j = [[0.0f64; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            g_j[i][j] = g_m[i][0] * w[j][0] + g_m[i][1] * w[j][1] + g_m[i][2] * w[j][2];
        }
    }

    // camera-space mean gradient: pinhole projection terms...
    let d = p.depth;
    let (tx, ty) = (p.t[0], p.t[1]);
    let (fx, fy) = (cam.fx, cam.fy);
    let mut dt = [0.0f64; 3];
    dt[0] += du[0] * fx / d;
    dt[1] += du[1] * (-fy / d);
    dt[2] += du[0] * fx * tx / (d * d) + du[1] * (-fy * ty / (d * d));
    // ...plus the Jacobian's own dependence on the mean
    dt[0] += g_j[0][2] * fx / (d * d);
    dt[1] += g_j[1][2] * (-fy / (d * d));
    dt[2] += g_j[0][0] * fx / (d * d)
        + g_j[0][2] * 2.0 * fx * tx / (d * d * d)
        + g_j[1][1] * (-fy / (d * d))
        + g_j[1][2] * (-2.0 * fy * ty / (d * d * d));

    // world center gradient: x_cam = W (x - eye)
    for k in 0..3 {
        out[k] = w[0][k] * dt[0] + w[1][k] * dt[1] + w[2][k] * dt[2];
    }

    // scale gradient: dL/ds_k = [R^T G3 R]_kk * 2 s_k
    for k in 0..3 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += rot3[i][k] * g_sig3[i][j] * rot3[j][k];
            }
        }
        out[3 + k] = acc * 2.0 * p.scale[k];
    }

    // rotation gradient: dL/dR = 2 G3 R D, then contract with dR/dq
    let mut g_r = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += g_sig3[i][k] * rot3[k][j];
            }
            g_r[i][j] = 2.0 * acc * d2[j];
        }
    }
    let [qw, qx, qy, qz] = p.qn;
    let dr_dq = [
        // dR/dw
        [[0.0, -2.0 * qz, 2.0 * qy], [2.0 * qz, 0.0, -2.0 * qx], [-2.0 * qy, 2.0 * qx, 0.0]],
        // dR/dx
        [[0.0, 2.0 * qy, 2.0 * qz], [2.0 * qy, -4.0 * qx, -2.0 * qw], [2.0 * qz, 2.0 * qw, -4.0 * qx]],
        // dR/dy
        [[-4.0 * qy, 2.0 * qx, 2.0 * qw], [2.0 * qx, 0.0, 2.0 * qz], [-2.0 * qw, 2.0 * qz, -4.0 * qy]],
        // dR/dz
        [[-4.0 * qz, -2.0 * qw, 2.0 * qx], [2.0 * qw, -4.0 * qz, 2.0 * qy], [2.0 * qx, 2.0 * qy, 0.0]],
    ];
    let mut dqn = [0.0f64; 4];
    for (k, drk) in dr_dq.iter().enumerate() {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += g_r[i][j] * drk[i][j];
            }
        }
        dqn[k] = acc;
    }
    // through normalization: dq = (dqn - qn (qn . dqn)) / |q|
    let dot = qw * dqn[0] + qx * dqn[1] + qy * dqn[2] + qz * dqn[3];
    let qn = [qw, qx, qy, qz];
    for k in 0..4 {
        out[6 + k] = (dqn[k] - qn[k] * dot) / p.qnorm;
    }
    out
}

/// Differentiable splat render of an [N, 14] parameter tensor.
pub fn splat_render<T: Real>(
    params: &Tensor<T>,
    cam: &CameraPose,
    background: [f32; 3],
) -> SplatImage<T> {
    splat_render_with(params, cam, background, SplatConfig::default())
}

pub fn splat_render_with<T: Real>(
    params: &Tensor<T>,
    cam: &CameraPose,
    background: [f32; 3],
    cfg: SplatConfig,
) -> SplatImage<T> {
    assert_eq!(params.rank(), 2, "splat params must be [N, 14]");
    assert_eq!(params.shape()[1], GAUSSIAN_PARAMS, "splat params must be [N, 14]");
    assert!(params.is_finite(), "splat_render: non-finite gaussian parameters");
    let scam = SplatCam::of(cam);
    let bg = [background[0] as f64, background[1] as f64, background[2] as f64];
    let scene = project_scene(params, &scam, &cfg);
    let data64 = forward_pixels(&scene, &scam, bg, &cfg);
    let data: Vec<T> = data64.iter().map(|&v| r(v)).collect();
    let rgba = Tensor::from_custom_op(
        &[4, cam.height, cam.width],
        data,
        Arc::new(SplatRenderOp {
            cam: scam,
            background: bg,
            cfg,
        }),
        vec![params.clone()],
    );
    SplatImage {
        rgba,
        cam: *cam,
        background,
    }
}

/// Non-differentiable convenience render of a [`GaussianSet`].
pub fn render_set(set: &GaussianSet, cam: &CameraPose, background: [f32; 3]) -> SplatImage<f32> {
    let params = set.to_param_tensor::<f32>();
    splat_render(&params, cam, background)
}

/// Finite-difference check of the renderer gradients over all 14 parameter
/// slots, in f64. Returns the max relative error.
pub fn splat_gradcheck(set: &GaussianSet, cam: &CameraPose, h: f64) -> f64 {
    let params = set.to_param_tensor::<f64>();
    let n = set.len();
    let scam = *cam;
    let mut wrng = ChaCha8Rng::seed_from_u64(0x5B1A7);
    let weights: Vec<f64> = (0..4 * cam.height * cam.width)
        .map(|_| wrng.gen_range(-1.0..1.0))
        .collect();
    let wt = Tensor::from_vec(&[4, cam.height, cam.width], weights);
    let loss_of = |p: &Tensor<f64>| -> Tensor<f64> {
        splat_render_with(p, &scam, [0.1, 0.2, 0.3], SplatConfig::smooth())
            .rgba
            .mul(&wt)
            .sum_all()
    };

    let leaf = Tensor::param(&[n, GAUSSIAN_PARAMS], params.data().to_vec());
    let loss = loss_of(&leaf);
    leaf.zero_grad();
    backward(&loss).expect("scalar loss");
    let analytic = leaf.grad().unwrap();

    let mut max_err = 0.0f64;
    for j in 0..n * GAUSSIAN_PARAMS {
        let eval = |delta: f64| -> f64 {
            let mut data = params.data().to_vec();
            data[j] += delta;
            let t = Tensor::from_vec(&[n, GAUSSIAN_PARAMS], data);
            loss_of(&t).item()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic[j];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
        if err > max_err {
            max_err = err;
        }
    }
    max_err
}

/// Seeded random scene for gradient checking; scales and opacities are kept
/// away from the contribution cutoffs.
pub fn random_scene(n: usize, seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| crate::gaussian::Gaussian {
            center: [
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ],
            scale: [
                rng.gen_range(0.05..0.25),
                rng.gen_range(0.05..0.25),
                rng.gen_range(0.05..0.25),
            ],
            quat: [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ],
            opacity: rng.gen_range(0.3..0.8),
            color: [rng.gen(), rng.gen(), rng.gen()],
        })
        .collect();
    GaussianSet { gaussians }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::orbit_camera;
    use crate::gaussian::Gaussian;

    fn cam16() -> CameraPose {
        orbit_camera(0.0, 0.0, 1.5, 49.0, 16, 16).unwrap()
    }

    #[test]
    fn empty_set_is_background() {
        let img = render_set(&GaussianSet::default(), &cam16(), [0.2, 0.4, 0.6]);
        let color = img.color_image();
        let alpha = img.alpha_image();
        assert!(alpha.data.iter().all(|&v| v == 0.0));
        for y in 0..16 {
            assert!((color.at(0, y, 3) - 0.2).abs() < 1e-6);
            assert!((color.at(2, y, 3) - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn single_opaque_splat_covers_center() {
        let set = GaussianSet {
            gaussians: vec![Gaussian {
                center: [0.0; 3],
                scale: [2.0; 3],
                quat: [1.0, 0.0, 0.0, 0.0],
                opacity: 1.0,
                color: [1.0, 0.0, 0.0],
            }],
        };
        let img = render_set(&set, &cam16(), [0.0; 3]);
        let color = img.color_image();
        let alpha = img.alpha_image();
        assert!((color.at(0, 8, 8) - 1.0).abs() < 1e-2);
        assert!(color.at(1, 8, 8).abs() < 1e-2);
        assert!((alpha.at(0, 8, 8) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn two_splat_hand_compositing() {
        // camera at z=3; gaussians at z=2 (front, depth 1) and z=1 (back, depth 2)
        let cam = orbit_camera(0.0, 0.0, 3.0, 49.0, 16, 16).unwrap();
        let mk = |z: f32, color: [f32; 3]| Gaussian {
            center: [0.0, 0.0, z],
            scale: [3.0; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            opacity: 0.5,
            color,
        };
        let set = GaussianSet {
            gaussians: vec![mk(2.0, [1.0, 0.0, 0.0]), mk(1.0, [0.0, 1.0, 0.0])],
        };
        let img = render_set(&set, &cam, [0.0; 3]);
        let color = img.color_image();
        // 0.5*A + 0.25*B over black
        assert!((color.at(0, 8, 8) - 0.5).abs() < 1e-2, "r = {}", color.at(0, 8, 8));
        assert!((color.at(1, 8, 8) - 0.25).abs() < 1e-2, "g = {}", color.at(1, 8, 8));
        // permutation of the input order renders identically
        let swapped = GaussianSet {
            gaussians: vec![set.gaussians[1], set.gaussians[0]],
        };
        let img2 = render_set(&swapped, &cam, [0.0; 3]);
        assert_eq!(img.rgba.data(), img2.rgba.data());
    }

    #[test]
    fn permutation_invariance_random_scene() {
        let set = random_scene(12, 99);
        let cam = cam16();
        let base = render_set(&set, &cam, [0.1, 0.1, 0.1]);
        let mut perm = set.gaussians.clone();
        perm.rotate_left(5);
        perm.swap(0, 7);
        let img2 = render_set(&GaussianSet { gaussians: perm }, &cam, [0.1, 0.1, 0.1]);
        assert_eq!(base.rgba.data(), img2.rgba.data());
    }

    #[test]
    fn alpha_monotone_in_opacity() {
        let cam = cam16();
        for seed in [1u64, 2, 3] {
            let mut set = random_scene(6, seed);
            let base = render_set(&set, &cam, [0.0; 3]).alpha_image();
            set.gaussians[seed as usize % 6].opacity =
                (set.gaussians[seed as usize % 6].opacity + 0.15).min(1.0);
            let bumped = render_set(&set, &cam, [0.0; 3]).alpha_image();
            for (a, b) in base.data.iter().zip(&bumped.data) {
                assert!(*b >= *a - 1e-6, "alpha decreased: {a} -> {b}");
            }
        }
    }

    #[test]
    fn color_in_convex_hull() {
        let cam = cam16();
        let set = random_scene(10, 4);
        let bg = [0.35f32, 0.55, 0.75];
        let img = render_set(&set, &cam, bg).color_image();
        for ch in 0..3 {
            let mut lo = bg[ch];
            let mut hi = bg[ch];
            for g in &set.gaussians {
                lo = lo.min(g.color[ch]);
                hi = hi.max(g.color[ch]);
            }
            for y in 0..16 {
                for x in 0..16 {
                    let v = img.at(ch, y, x);
                    assert!(v >= lo - 1e-4 && v <= hi + 1e-4, "ch{ch} v={v} not in [{lo},{hi}]");
                }
            }
        }
    }

    #[test]
    fn occluded_back_gaussian_grad_attenuated_by_front_transmittance() {
        // two aligned gaussians; dL/d(op_back) with the front present should be
        // about (1 - w_front) times the unoccluded gradient.
        let cam = orbit_camera(0.0, 0.0, 3.0, 49.0, 16, 16).unwrap();
        let mk = |z: f32, opacity: f32| Gaussian {
            center: [0.0, 0.0, z],
            scale: [4.0; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            opacity,
            color: [0.8, 0.6, 0.4],
        };
        let grad_op_back = |with_front: bool| -> f64 {
            let gaussians = if with_front {
                vec![mk(2.0, 0.6), mk(1.0, 0.5)]
            } else {
                vec![mk(1.0, 0.5)]
            };
            let set = GaussianSet { gaussians };
            let leaf = Tensor::<f64>::param(
                &[set.len(), GAUSSIAN_PARAMS],
                set.to_param_tensor::<f64>().data().to_vec(),
            );
            let loss = splat_render(&leaf, &cam, [0.0; 3]).color().sum_all();
            leaf.zero_grad();
            backward(&loss).unwrap();
            let g = leaf.grad().unwrap();
            let back_row = if with_front { 1 } else { 0 };
            g[back_row * GAUSSIAN_PARAMS + 10]
        };
        let occluded = grad_op_back(true);
        let free = grad_op_back(false);
        assert!(occluded > 0.0 && free > 0.0, "positive opacity grads expected");
        let ratio = occluded / free;
        // front contributes w ~ 0.6 at the center, less off-center
        assert!(ratio < 0.75 && ratio > 0.2, "ratio = {ratio}");
    }

    #[test]
    fn gradcheck_small_scenes() {
        let cam = cam16();
        let err1 = splat_gradcheck(&random_scene(1, 11), &cam, 1e-4);
        assert!(err1 < 1e-2, "1 gaussian: {err1}");
        let err4 = splat_gradcheck(&random_scene(4, 12), &cam, 1e-4);
        assert!(err4 < 2e-2, "4 gaussians: {err4}");
    }
}
