//! Dense Inverse Search optical flow between the unloaded reference tactile
//! frame and the current frame, plus the calibrated linear decoupling of the
//! displacement field into a 3-d force field.
//!
//! Flow convention: `current(p + flow(p)) == reference(p)` — the flow maps
//! reference pixels to their location in the current frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grayscale image, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub pixels: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            pixels: vec![0.0; width * height],
            width,
            height,
        }
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.pixels[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.pixels[v * self.width + u] = value;
    }

    /// Bilinear sample with clamping at the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let a = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let b = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        a * (1.0 - fy) + b * fy
    }

    /// Central-difference gradient (forward/backward at the border).
    fn gradient(&self, u: usize, v: usize) -> [f64; 2] {
        let gx = match u {
            0 => self.at(1, v) - self.at(0, v),
            u if u == self.width - 1 => self.at(u, v) - self.at(u - 1, v),
            u => (self.at(u + 1, v) - self.at(u - 1, v)) / 2.0,
        };
        let gy = match v {
            0 => self.at(u, 1) - self.at(u, 0),
            v if v == self.height - 1 => self.at(u, v) - self.at(u, v - 1),
            v => (self.at(u, v + 1) - self.at(u, v - 1)) / 2.0,
        };
        [gx, gy]
    }

    /// 2x downsample by 2x2 block averaging.
    fn half(&self) -> GrayImage {
        let w = self.width / 2;
        let h = self.height / 2;
        let mut out = GrayImage::zeros(w, h);
        for v in 0..h {
            for u in 0..w {
                let s = self.at(2 * u, 2 * v)
                    + self.at(2 * u + 1, 2 * v)
                    + self.at(2 * u, 2 * v + 1)
                    + self.at(2 * u + 1, 2 * v + 1);
                out.set(u, v, s / 4.0);
            }
        }
        out
    }

    pub fn mean_gradient_magnitude(&self) -> f64 {
        let mut total = 0.0;
        for v in 0..self.height {
            for u in 0..self.width {
                let [gx, gy] = self.gradient(u, v);
                total += (gx * gx + gy * gy).sqrt();
            }
        }
        total / (self.width * self.height) as f64
    }
}

/// H x W per-pixel displacement in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub vectors: Vec<[f64; 2]>,
    pub width: usize,
    pub height: usize,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            vectors: vec![[0.0; 2]; width * height],
            width,
            height,
        }
    }

    pub fn at(&self, u: usize, v: usize) -> [f64; 2] {
        self.vectors[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: [f64; 2]) {
        self.vectors[v * self.width + u] = value;
    }

    /// Bilinear sample of both channels, clamped at the border.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 2] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let mut out = [0.0; 2];
        for c in 0..2 {
            let a = self.at(x0, y0)[c] * (1.0 - fx) + self.at(x1, y0)[c] * fx;
            let b = self.at(x0, y1)[c] * (1.0 - fx) + self.at(x1, y1)[c] * fx;
            out[c] = a * (1.0 - fy) + b * fy;
        }
        out
    }

    pub fn median_magnitude_error(&self, truth: &FlowField, margin: usize) -> f64 {
        let mut errs = Vec::new();
        for v in margin..self.height.saturating_sub(margin) {
            for u in margin..self.width.saturating_sub(margin) {
                let a = self.at(u, v);
                let b = truth.at(u, v);
                errs.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if errs.is_empty() {
            0.0
        } else {
            errs[errs.len() / 2]
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// H x W x 3 tactile force vectors (tangential x/y, normal z).
#[derive(Debug, Clone, PartialEq)]
pub struct ForceField {
    pub vectors: Vec<[f64; 3]>,
    pub width: usize,
    pub height: usize,
}

pub const TACTILE_WIDTH: usize = 320;
pub const TACTILE_HEIGHT: usize = 240;

impl ForceField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            vectors: vec![[0.0; 3]; width * height],
            width,
            height,
        }
    }

    pub fn uniform(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            vectors: vec![value; width * height],
            width,
            height,
        }
    }

    pub fn at(&self, u: usize, v: usize) -> [f64; 3] {
        self.vectors[v * self.width + u]
    }
}

/// Linear flow -> force decoupling standing in for a learned model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForceCalibration {
    pub tangential_gain: [[f64; 2]; 2],
    pub normal_gain: f64,
}

impl Default for ForceCalibration {
    fn default() -> Self {
        Self {
            tangential_gain: [[1.0, 0.0], [0.0, 1.0]],
            normal_gain: 1.0,
        }
    }
}

/// Anything that maps a displacement field to a force field; lets a learned
/// decoupler replace the linear calibration without touching callers.
pub trait ForceDecoupler {
    fn decouple(&self, flow: &FlowField) -> ForceField;
}

impl ForceDecoupler for ForceCalibration {
    fn decouple(&self, flow: &FlowField) -> ForceField {
        flow_to_force(flow, self)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisParams {
    pub levels: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub grad_descent_iters: usize,
    pub variational_refine: bool,
}

impl Default for DisParams {
    fn default() -> Self {
        // DIS fast preset
        Self {
            levels: 4,
            patch_size: 8,
            patch_stride: 4,
            grad_descent_iters: 12,
            variational_refine: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowEstimate {
    pub flow: FlowField,
    /// Mean gradient magnitude of the reference fell below 1e-3.
    pub insufficient_texture: bool,
}

/// Dense Inverse Search: coarse-to-fine per-patch inverse-compositional
/// translation search, densified by intensity-error-weighted averaging.
pub fn dis_flow(reference: &GrayImage, current: &GrayImage, params: &DisParams) -> Result<FlowEstimate> {
    if reference.width != current.width || reference.height != current.height {
        return Err(Error::DimensionMismatch(format!(
            "reference {}x{} vs current {}x{}",
            reference.width, reference.height, current.width, current.height
        )));
    }
    let div = 1usize << (params.levels - 1);
    if reference.width % div != 0 || reference.height % div != 0 {
        return Err(Error::DimensionMismatch(format!(
            "dimensions {}x{} not divisible by 2^(levels-1) = {div}",
            reference.width, reference.height
        )));
    }
    let insufficient_texture = reference.mean_gradient_magnitude() < 1e-3;

    // pyramid[0] is full resolution
    let mut ref_pyr = vec![reference.clone()];
    let mut cur_pyr = vec![current.clone()];
    for l in 1..params.levels {
        ref_pyr.push(ref_pyr[l - 1].half());
        cur_pyr.push(cur_pyr[l - 1].half());
    }

    let mut flow: Option<FlowField> = None;
    for level in (0..params.levels).rev() {
        let r = &ref_pyr[level];
        let c = &cur_pyr[level];
        let init = match flow {
            // upsample: coordinates scale by 2, so flow vectors double
            Some(coarse) => {
                let mut f = FlowField::zeros(r.width, r.height);
                for v in 0..r.height {
                    for u in 0..r.width {
                        let s = coarse.sample(u as f64 / 2.0, v as f64 / 2.0);
                        f.set(u, v, [s[0] * 2.0, s[1] * 2.0]);
                    }
                }
                f
            }
            None => FlowField::zeros(r.width, r.height),
        };
        flow = Some(solve_level(r, c, &init, params));
    }
    let mut flow = flow.expect("levels >= 1");

    if params.variational_refine {
        variational_refine(reference, current, &mut flow);
    }

    Ok(FlowEstimate {
        flow,
        insufficient_texture,
    })
}

fn solve_level(r: &GrayImage, c: &GrayImage, init: &FlowField, params: &DisParams) -> FlowField {
    let ps = params.patch_size.min(r.width).min(r.height);
    let stride = params.patch_stride.max(1);

    // patch anchor positions, always including the last fitting offset
    let anchors = |extent: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..=(extent - ps)).step_by(stride).collect();
        if *v.last().unwrap() != extent - ps {
            v.push(extent - ps);
        }
        v
    };

    let mut num = vec![[0.0f64; 2]; r.width * r.height];
    let mut den = vec![0.0f64; r.width * r.height];

    for &py in &anchors(r.height) {
        for &px in &anchors(r.width) {
            // inverse compositional: template gradients and Hessian fixed
            let mut h = [[0.0f64; 2]; 2];
            let mut grads = Vec::with_capacity(ps * ps);
            for dy in 0..ps {
                for dx in 0..ps {
                    let g = r.gradient(px + dx, py + dy);
                    h[0][0] += g[0] * g[0];
                    h[0][1] += g[0] * g[1];
                    h[1][1] += g[1] * g[1];
                    grads.push(g);
                }
            }
            h[1][0] = h[0][1];
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            let cx = px as f64 + ps as f64 / 2.0;
            let cy = py as f64 + ps as f64 / 2.0;
            let mut u = init.sample(cx, cy);

            let mut mean_abs_err = 0.0;
            if det.abs() > 1e-12 {
                let hinv = [
                    [h[1][1] / det, -h[0][1] / det],
                    [-h[1][0] / det, h[0][0] / det],
                ];
                for _ in 0..params.grad_descent_iters {
                    let mut b = [0.0f64; 2];
                    let mut err_sum = 0.0;
                    let mut gi = 0;
                    for dy in 0..ps {
                        for dx in 0..ps {
                            let x = (px + dx) as f64;
                            let y = (py + dy) as f64;
                            let res = c.sample(x + u[0], y + u[1]) - r.at(px + dx, py + dy);
                            let g = grads[gi];
                            gi += 1;
                            b[0] += g[0] * res;
                            b[1] += g[1] * res;
                            err_sum += res.abs();
                        }
                    }
                    mean_abs_err = err_sum / (ps * ps) as f64;
                    let step = [
                        hinv[0][0] * b[0] + hinv[0][1] * b[1],
                        hinv[1][0] * b[0] + hinv[1][1] * b[1],
                    ];
                    u[0] -= step[0];
                    u[1] -= step[1];
                    if step[0].abs() + step[1].abs() < 1e-4 {
                        break;
                    }
                }
            }

            let w = 1.0 / (1e-4 + mean_abs_err * mean_abs_err);
            for dy in 0..ps {
                for dx in 0..ps {
                    let idx = (py + dy) * r.width + (px + dx);
                    num[idx][0] += w * u[0];
                    num[idx][1] += w * u[1];
                    den[idx] += w;
                }
            }
        }
    }

    let mut out = FlowField::zeros(r.width, r.height);
    for idx in 0..num.len() {
        if den[idx] > 0.0 {
            out.vectors[idx] = [num[idx][0] / den[idx], num[idx][1] / den[idx]];
        }
    }
    out
}

/// Quadratic brightness-constancy data term linearized at the current flow,
/// Laplacian smoothness, a few Gauss-Seidel sweeps.
fn variational_refine(r: &GrayImage, c: &GrayImage, flow: &mut FlowField) {
    const LAMBDA: f64 = 4.0;
    const SWEEPS: usize = 20;
    let w = flow.width;
    let h = flow.height;
    // linearization: residual(p) = c(p + u0) - r(p) + g . (u - u0)
    let mut g = vec![[0.0f64; 2]; w * h];
    let mut rhs = vec![0.0f64; w * h];
    for v in 0..h {
        for u in 0..w {
            let f0 = flow.at(u, v);
            let x = u as f64 + f0[0];
            let y = v as f64 + f0[1];
            let eps = 0.5;
            let gx = (c.sample(x + eps, y) - c.sample(x - eps, y)) / (2.0 * eps);
            let gy = (c.sample(x, y + eps) - c.sample(x, y - eps)) / (2.0 * eps);
            g[v * w + u] = [gx, gy];
            rhs[v * w + u] = c.sample(x, y) - r.at(u, v);
        }
    }
    let base = flow.vectors.clone();
    for _ in 0..SWEEPS {
        for v in 0..h {
            for u in 0..w {
                let idx = v * w + u;
                let mut nsum = [0.0f64; 2];
                let mut ncount = 0.0;
                for (du, dv) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let nu = u as i64 + du;
                    let nv = v as i64 + dv;
                    if nu >= 0 && nv >= 0 && (nu as usize) < w && (nv as usize) < h {
                        let n = flow.vectors[nv as usize * w + nu as usize];
                        nsum[0] += n[0];
                        nsum[1] += n[1];
                        ncount += 1.0;
                    }
                }
                let gi = g[idx];
                let b = base[idx];
                // minimize (rhs + g.(f - b))^2 + lambda/ncount * sum |f - n|^2
                // solved per-pixel: (g g^T + lambda I) f = lambda nmean + g (g.b - rhs)
                let lam = LAMBDA;
                let a00 = gi[0] * gi[0] + lam;
                let a01 = gi[0] * gi[1];
                let a11 = gi[1] * gi[1] + lam;
                let k = gi[0] * b[0] + gi[1] * b[1] - rhs[idx];
                let r0 = lam * nsum[0] / ncount + gi[0] * k;
                let r1 = lam * nsum[1] / ncount + gi[1] * k;
                let det = a00 * a11 - a01 * a01;
                flow.vectors[idx] = [(a11 * r0 - a01 * r1) / det, (a00 * r1 - a01 * r0) / det];
            }
        }
    }
}

/// Tangential force from the gain matrix, normal force from the flow
/// divergence (Poisson-effect spread under normal load). Divergence uses
/// central differences and is 0 at the border.
pub fn flow_to_force(flow: &FlowField, cal: &ForceCalibration) -> ForceField {
    let mut out = ForceField::zeros(flow.width, flow.height);
    let g = cal.tangential_gain;
    for v in 0..flow.height {
        for u in 0..flow.width {
            let f = flow.at(u, v);
            let tx = g[0][0] * f[0] + g[0][1] * f[1];
            let ty = g[1][0] * f[0] + g[1][1] * f[1];
            let div = if u > 0 && u + 1 < flow.width && v > 0 && v + 1 < flow.height {
                let dudx = (flow.at(u + 1, v)[0] - flow.at(u - 1, v)[0]) / 2.0;
                let dvdy = (flow.at(u, v + 1)[1] - flow.at(u, v - 1)[1]) / 2.0;
                dudx + dvdy
            } else {
                0.0
            };
            out.vectors[v * flow.width + u] = [tx, ty, cal.normal_gain * div];
        }
    }
    out
}

/// Component-wise mean over every pixel of both finger pads.
pub fn mean_contact_force(left: &ForceField, right: &ForceField) -> [f64; 3] {
    let mut sum = [0.0f64; 3];
    let n = (left.vectors.len() + right.vectors.len()) as f64;
    for v in left.vectors.iter().chain(&right.vectors) {
        sum[0] += v[0];
        sum[1] += v[1];
        sum[2] += v[2];
    }
    [sum[0] / n, sum[1] / n, sum[2] / n]
}
