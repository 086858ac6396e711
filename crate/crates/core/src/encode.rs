//! Deterministic feature extraction for point clouds and tactile force
//! fields, and the ResFiLM gated-residual fusion producing the
//! object-centric conditioning feature.
//!
//! The featurizers stand in for learned encoders behind the same contract:
//! fixed-dimension vectors, bitwise deterministic for identical inputs.
//! ResFiLM computes `f_oc = f_pc + alpha * (gamma ⊙ f_t' + beta)` with
//! `(gamma, beta)` generated from the visual feature and `f_t'` a linear
//! projection of the tactile feature; `alpha` starts at 0 so training
//! begins from the vision-only policy.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::normal;
use crate::tactile::ForceField;

pub const DEFAULT_FEATURE_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Stacked per-frame object-centric features over the observation horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFeature {
    pub values: Vec<f64>,
    pub horizon: usize,
}

impl ObservationFeature {
    pub fn stack(frames: &[FeatureVector]) -> Self {
        let mut values = Vec::new();
        for f in frames {
            values.extend_from_slice(&f.values);
        }
        Self {
            values,
            horizon: frames.len(),
        }
    }
}

// Fixed projection seeds; constants so features are reproducible across
// processes and runs.
const OCCUPANCY_PROJ_SEED: u64 = 0x0c7a_0001;
const GEOM_PROJ_SEED: u64 = 0x0c7a_0002;
const TACTILE_PROJ_SEED: u64 = 0x0c7a_0003;

const PER_CLOUD_DESC: usize = 32; // 19 geometric stats + 13 pooled occupancy
const OCCUPANCY_BINS: usize = 64; // 4^3
const OCCUPANCY_POOLED: usize = 13;
const TACTILE_POOL: usize = 96; // 4x4 grid of mean 3-vectors, two pads

fn seeded_projection(seed: u64, rows: usize, cols: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (cols as f64).sqrt();
    (0..rows * cols).map(|_| normal(&mut rng) * scale).collect()
}

fn project(matrix: &[f64], rows: usize, cols: usize, input: &[f64]) -> Vec<f64> {
    assert_eq!(input.len(), cols);
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += matrix[r * cols + c] * input[c];
        }
        out[r] = acc;
    }
    out
}

/// Per-cloud descriptor: centroid (3), PCA eigenvalues (3), PCA axes (9),
/// bbox extents (3), log1p point count (1), and a 4x4x4 occupancy histogram
/// pooled to 13 dims by a fixed seeded projection. Points are sorted
/// lexicographically first so the summation order (and hence the bits) is
/// permutation invariant.
fn cloud_descriptor(cloud: &PointCloud) -> Vec<f64> {
    if cloud.is_empty() {
        return vec![0.0; PER_CLOUD_DESC];
    }
    let mut pts = cloud.points.clone();
    pts.sort_by(|a, b| {
        (a.x, a.y, a.z)
            .partial_cmp(&(b.x, b.y, b.z))
            .expect("finite coordinates")
    });
    let n = pts.len() as f64;
    let mut centroid = Vector3::zeros();
    for p in &pts {
        centroid += p;
    }
    centroid /= n;

    let mut cov = nalgebra::Matrix3::zeros();
    let mut lo = pts[0];
    let mut hi = pts[0];
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    // order eigenpairs by descending eigenvalue, fix axis signs
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut eigvals = [0.0; 3];
    let mut axes = [0.0; 9];
    for (k, &i) in order.iter().enumerate() {
        eigvals[k] = eig.eigenvalues[i];
        let mut axis = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude component positive
        let mut arg = 0;
        for j in 1..3 {
            if axis[j].abs() > axis[arg].abs() {
                arg = j;
            }
        }
        if axis[arg] < 0.0 {
            axis = -axis;
        }
        for j in 0..3 {
            axes[k * 3 + j] = axis[j];
        }
    }

    // occupancy over the bbox, normalized by point count
    let mut occupancy = vec![0.0f64; OCCUPANCY_BINS];
    let extent = hi - lo;
    for p in &pts {
        let mut idx = 0usize;
        for i in 0..3 {
            let cell = if extent[i] > 0.0 {
                (((p[i] - lo[i]) / extent[i]) * 4.0).min(3.0).floor() as usize
            } else {
                0
            };
            idx = idx * 4 + cell;
        }
        occupancy[idx] += 1.0 / n;
    }
    let occ_proj = seeded_projection(OCCUPANCY_PROJ_SEED, OCCUPANCY_POOLED, OCCUPANCY_BINS);
    let pooled = project(&occ_proj, OCCUPANCY_POOLED, OCCUPANCY_BINS, &occupancy);

    let mut desc = Vec::with_capacity(PER_CLOUD_DESC);
    desc.extend_from_slice(centroid.as_slice());
    desc.extend_from_slice(&eigvals);
    desc.extend_from_slice(&axes);
    desc.extend_from_slice(&[extent[0], extent[1], extent[2]]);
    desc.push(n.ln_1p());
    desc.extend_from_slice(&pooled);
    desc
}

/// Geometric feature from the manipulated and context clouds, projected to
/// `dim` by a fixed seeded linear map. The context block is zero when the
/// context cloud is empty.
pub fn geom_features(manip: &PointCloud, ctx: &PointCloud, dim: usize) -> Result<FeatureVector> {
    if manip.is_empty() {
        return Err(Error::EmptyManipCloud);
    }
    let mut desc = cloud_descriptor(manip);
    desc.extend(cloud_descriptor(ctx));
    let proj = seeded_projection(GEOM_PROJ_SEED, dim, 2 * PER_CLOUD_DESC);
    Ok(FeatureVector {
        values: project(&proj, dim, 2 * PER_CLOUD_DESC, &desc),
    })
}

fn pool_force_grid(field: &ForceField) -> Vec<f64> {
    let mut out = vec![0.0; 48];
    for gy in 0..4 {
        for gx in 0..4 {
            let x0 = gx * field.width / 4;
            let x1 = (gx + 1) * field.width / 4;
            let y0 = gy * field.height / 4;
            let y1 = (gy + 1) * field.height / 4;
            let mut sum = [0.0f64; 3];
            let mut count = 0.0;
            for v in y0..y1 {
                for u in x0..x1 {
                    let f = field.at(u, v);
                    sum[0] += f[0];
                    sum[1] += f[1];
                    sum[2] += f[2];
                    count += 1.0;
                }
            }
            for c in 0..3 {
                out[(gy * 4 + gx) * 3 + c] = if count > 0.0 { sum[c] / count } else { 0.0 };
            }
        }
    }
    out
}

/// Tactile feature: 4x4 grid of per-cell mean force vectors per pad,
/// concatenated and projected to `dim`.
pub fn tactile_features(left: &ForceField, right: &ForceField, dim: usize) -> FeatureVector {
    let mut pooled = pool_force_grid(left);
    pooled.extend(pool_force_grid(right));
    let proj = seeded_projection(TACTILE_PROJ_SEED, dim, TACTILE_POOL);
    FeatureVector {
        values: project(&proj, dim, TACTILE_POOL, &pooled),
    }
}

/// ResFiLM parameters: the FiLM generator (D -> 2D producing gamma, beta
/// from the visual feature), the tactile projector (D -> D), and the gate
/// alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResFilmParams {
    pub dim: usize,
    /// 2D x D row-major; first D rows generate gamma, last D generate beta.
    pub film_w: Vec<f64>,
    pub film_b: Vec<f64>,
    /// D x D row-major.
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    pub alpha: f64,
}

impl ResFilmParams {
    /// Gate closed (alpha = 0), gamma bias 1, identity projector plus small
    /// seeded noise on the weights.
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut film_w = vec![0.0; 2 * dim * dim];
        for w in film_w.iter_mut() {
            *w = normal(&mut rng) * 0.01 / (dim as f64).sqrt();
        }
        let mut film_b = vec![0.0; 2 * dim];
        for b in film_b.iter_mut().take(dim) {
            *b = 1.0; // gamma starts at unit modulation
        }
        let mut proj_w = vec![0.0; dim * dim];
        for i in 0..dim {
            proj_w[i * dim + i] = 1.0;
        }
        for w in proj_w.iter_mut() {
            *w += normal(&mut rng) * 0.01 / (dim as f64).sqrt();
        }
        Self {
            dim,
            film_w,
            film_b,
            proj_w,
            proj_b: vec![0.0; dim],
            alpha: 0.0,
        }
    }

    pub fn n_params(dim: usize) -> usize {
        2 * dim * dim + 2 * dim + dim * dim + dim + 1
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::n_params(self.dim));
        v.extend_from_slice(&self.film_w);
        v.extend_from_slice(&self.film_b);
        v.extend_from_slice(&self.proj_w);
        v.extend_from_slice(&self.proj_b);
        v.push(self.alpha);
        v
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), Self::n_params(dim));
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = flat[pos..pos + n].to_vec();
            pos += n;
            s
        };
        let film_w = take(2 * dim * dim);
        let film_b = take(2 * dim);
        let proj_w = take(dim * dim);
        let proj_b = take(dim);
        let alpha = flat[pos];
        Self {
            dim,
            film_w,
            film_b,
            proj_w,
            proj_b,
            alpha,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dim: self.dim,
            film_w: vec![0.0; self.film_w.len()],
            film_b: vec![0.0; self.film_b.len()],
            proj_w: vec![0.0; self.proj_w.len()],
            proj_b: vec![0.0; self.proj_b.len()],
            alpha: 0.0,
        }
    }
}

/// Forward activations needed by the exact backward pass.
#[derive(Debug, Clone)]
pub struct ResFilmCache {
    pub f_pc: Vec<f64>,
    pub f_t: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub f_t_proj: Vec<f64>,
}

/// `f_oc = f_pc + alpha * (gamma ⊙ f_t' + beta)` with
/// `(gamma, beta) = film(f_pc)` and `f_t' = proj(f_t)`.
pub fn resfilm_fuse(
    f_pc: &FeatureVector,
    f_t: &FeatureVector,
    p: &ResFilmParams,
) -> Result<(FeatureVector, ResFilmCache)> {
    let d = p.dim;
    if f_pc.dim() != d || f_t.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "features {} / {} vs params {d}",
            f_pc.dim(),
            f_t.dim()
        )));
    }
    let film = {
        let mut out = p.film_b.clone();
        for r in 0..2 * d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += p.film_w[r * d + c] * f_pc.values[c];
            }
            out[r] += acc;
        }
        out
    };
    let gamma = film[..d].to_vec();
    let beta = film[d..].to_vec();
    let mut f_t_proj = p.proj_b.clone();
    for r in 0..d {
        let mut acc = 0.0;
        for c in 0..d {
            acc += p.proj_w[r * d + c] * f_t.values[c];
        }
        f_t_proj[r] += acc;
    }
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        out.push(f_pc.values[i] + p.alpha * (gamma[i] * f_t_proj[i] + beta[i]));
    }
    Ok((
        FeatureVector { values: out },
        ResFilmCache {
            f_pc: f_pc.values.clone(),
            f_t: f_t.values.clone(),
            gamma,
            beta,
            f_t_proj,
        },
    ))
}

/// Gradients of a scalar loss w.r.t. both inputs and all parameters.
#[derive(Debug, Clone)]
pub struct ResFilmGrads {
    pub d_f_pc: Vec<f64>,
    pub d_f_t: Vec<f64>,
    pub d_params: ResFilmParams,
}

/// Exact reverse-mode gradients of `resfilm_fuse`.
pub fn resfilm_backward(
    upstream: &[f64],
    cache: &ResFilmCache,
    p: &ResFilmParams,
) -> Result<ResFilmGrads> {
    let d = p.dim;
    if upstream.len() != d || cache.f_pc.len() != d {
        return Err(Error::MissingCache);
    }
    let mut grads = p.zeros_like();
    let mut d_f_pc = upstream.to_vec();
    let mut d_f_t = vec![0.0; d];

    // d out_i / d alpha = gamma_i * f_t'_i + beta_i
    for i in 0..d {
        grads.alpha += upstream[i] * (cache.gamma[i] * cache.f_t_proj[i] + cache.beta[i]);
    }

    // through the modulation: d/d gamma_i = alpha * u_i * f_t'_i,
    // d/d beta_i = alpha * u_i, d/d f_t'_i = alpha * u_i * gamma_i
    let mut d_gamma = vec![0.0; d];
    let mut d_beta = vec![0.0; d];
    let mut d_ft_proj = vec![0.0; d];
    for i in 0..d {
        d_gamma[i] = p.alpha * upstream[i] * cache.f_t_proj[i];
        d_beta[i] = p.alpha * upstream[i];
        d_ft_proj[i] = p.alpha * upstream[i] * cache.gamma[i];
    }

    // film generator: rows 0..d produce gamma, rows d..2d produce beta
    for r in 0..d {
        for c in 0..d {
            grads.film_w[r * d + c] += d_gamma[r] * cache.f_pc[c];
            grads.film_w[(r + d) * d + c] += d_beta[r] * cache.f_pc[c];
            d_f_pc[c] += d_gamma[r] * p.film_w[r * d + c] + d_beta[r] * p.film_w[(r + d) * d + c];
        }
        grads.film_b[r] += d_gamma[r];
        grads.film_b[r + d] += d_beta[r];
    }

    // tactile projector
    for r in 0..d {
        for c in 0..d {
            grads.proj_w[r * d + c] += d_ft_proj[r] * cache.f_t[c];
            d_f_t[c] += d_ft_proj[r] * p.proj_w[r * d + c];
        }
        grads.proj_b[r] += d_ft_proj[r];
    }

    Ok(ResFilmGrads {
        d_f_pc,
        d_f_t,
        d_params: grads,
    })
}
