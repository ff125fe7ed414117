//! Weighted loss and its analytic gradient.

use rayon::prelude::*;

use super::{Measurement, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::model::{clamped_log10, link_frame, ModelState, Parallelism, PreparedGaussian, PARAMS_PER_GAUSSIAN};

/// Samples per work unit in parallel mode. Fixed so the reduction tree, and
/// hence the rounding, does not depend on the thread count.
const CHUNK: usize = 256;

/// Gradient of the loss with respect to every trainable parameter, laid out
/// like [`crate::model::GaussianPrimitive::to_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub gaussians: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    pub gamma: f64,
    /// Present iff the model is in RSSI mode.
    pub p0: Option<f64>,
}

impl GradientSet {
    pub fn zeros_like(model: &ModelState) -> Self {
        Self {
            gaussians: vec![[0.0; PARAMS_PER_GAUSSIAN]; model.len()],
            gamma: 0.0,
            p0: model.p0_dbm.map(|_| 0.0),
        }
    }

    fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            for k in 0..PARAMS_PER_GAUSSIAN {
                a[k] += b[k];
            }
        }
        self.gamma += other.gamma;
        if let (Some(a), Some(b)) = (self.p0.as_mut(), other.p0) {
            *a += b;
        }
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.gaussians
            .iter()
            .flatten()
            .chain(std::iter::once(&self.gamma))
            .chain(self.p0.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Normalized distance weights `(d+ε)^p / mean((d+ε)^p)`.
pub fn batch_weights(batch: &[Measurement], exponent: f64, eps_m: f64) -> Vec<f64> {
    let raw: Vec<f64> = batch.iter().map(|m| (m.link_distance + eps_m).powf(exponent)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|v| v / mean).collect()
}

fn check_batch(model: &ModelState, batch: &[Measurement]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for m in batch {
        model.check_frequency(m.frequency_hz)?;
    }
    Ok(())
}

/// `(1/B) Σ w r²` over `batch`.
pub fn weighted_loss(model: &ModelState, batch: &[Measurement], config: &TrainConfig) -> Result<f64> {
    check_batch(model, batch)?;
    let prepared = model.prepare();
    let w = batch_weights(batch, config.weight_exponent, config.weight_eps_m);
    let sum: f64 = match config.parallelism() {
        Parallelism::Sequential => batch
            .iter()
            .zip(&w)
            .map(|(m, w)| w * (prepared.output(m.tx, m.rx) - m.target).powi(2))
            .sum(),
        Parallelism::Parallel => batch
            .par_chunks(CHUNK)
            .zip(w.par_chunks(CHUNK))
            .map(|(ms, ws)| {
                ms.iter()
                    .zip(ws)
                    .map(|(m, w)| w * (prepared.output(m.tx, m.rx) - m.target).powi(2))
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum(),
    };
    Ok(sum / batch.len() as f64)
}

pub fn loss_gradients(model: &ModelState, batch: &[Measurement], config: &TrainConfig) -> Result<(f64, GradientSet)> {
    loss_gradients_with(model, batch, config, config.parallelism())
}

struct GradContext<'a> {
    model: &'a ModelState,
    prepared: Vec<PreparedGaussian>,
    jacobians: Vec<[Mat3; 4]>,
    inv_batch: f64,
}

/// Loss and gradient in one pass. Quaternion gradients are projected onto
/// the tangent space of the unit sphere.
pub fn loss_gradients_with(
    model: &ModelState,
    batch: &[Measurement],
    config: &TrainConfig,
    mode: Parallelism,
) -> Result<(f64, GradientSet)> {
    check_batch(model, batch)?;
    let ctx = GradContext {
        model,
        prepared: model.gaussians.iter().map(PreparedGaussian::new).collect(),
        jacobians: model.gaussians.iter().map(|g| g.rotation.rotation_jacobian()).collect(),
        inv_batch: 1.0 / batch.len() as f64,
    };
    let weights = batch_weights(batch, config.weight_exponent, config.weight_eps_m);

    let (loss, mut grads) = match mode {
        Parallelism::Sequential => accumulate(&ctx, batch, &weights),
        Parallelism::Parallel => {
            let parts: Vec<(f64, GradientSet)> = batch
                .par_chunks(CHUNK)
                .zip(weights.par_chunks(CHUNK))
                .map(|(ms, ws)| accumulate(&ctx, ms, ws))
                .collect();
            let mut it = parts.into_iter();
            let (mut loss, mut grads) = it.next().expect("batch is non-empty");
            for (l, g) in it {
                loss += l;
                grads.add(&g);
            }
            (loss, grads)
        }
    };

    for (g, prim) in grads.gaussians.iter_mut().zip(&model.gaussians) {
        let q = prim.rotation.to_array();
        let radial: f64 = (0..4).map(|k| q[k] * g[6 + k]).sum();
        for k in 0..4 {
            g[6 + k] -= radial * q[k];
        }
    }
    Ok((loss, grads))
}

fn accumulate(ctx: &GradContext<'_>, batch: &[Measurement], weights: &[f64]) -> (f64, GradientSet) {
    let model = ctx.model;
    let mut grads = GradientSet::zeros_like(model);
    let mut loss = 0.0;
    let mut hits: Vec<(usize, f64, [f64; 3], Vec3)> = Vec::new();

    for (m, &w) in batch.iter().zip(weights) {
        let (u, d) = link_frame(m.tx, m.rx);
        hits.clear();
        let mut delta_pl = 0.0;
        for (i, g) in ctx.prepared.iter().enumerate() {
            if let Some(inf) = g.influence(m.tx, u, d) {
                if inf.alpha != 0.0 {
                    delta_pl += g.offset * inf.alpha;
                    hits.push((i, inf.alpha, inf.scaled_local, inf.delta));
                }
            }
        }
        let log_d = clamped_log10(d);
        let pl = crate::model::baseline_from_distance(d, model.frequency_hz, model.gamma) + delta_pl;
        let pred = match model.p0_dbm {
            Some(p0) => p0 - pl,
            None => pl,
        };
        let r = pred - m.target;
        loss += w * r * r * ctx.inv_batch;

        let d_pred = 2.0 * w * r * ctx.inv_batch;
        let d_pl = match grads.p0.as_mut() {
            Some(gp0) => {
                *gp0 += d_pred;
                -d_pred
            }
            None => d_pred,
        };
        grads.gamma += d_pl * 10.0 * log_d;

        for &(i, alpha, z, delta) in &hits {
            let g = &ctx.prepared[i];
            let out = &mut grads.gaussians[i];
            out[10] += d_pl * alpha;
            // dL/dα · α
            let c = d_pl * g.offset * alpha;
            // dL/dδ' in the local frame.
            let mut gl = [0.0; 3];
            for k in 0..3 {
                out[3 + k] += c * z[k] * z[k];
                gl[k] = -c * z[k] * g.inv_scale[k];
            }
            let gl = Vec3::from_array(gl);
            // δ' = Rᵀ δ and δ = −(I − uuᵀ) w, w = μ − tx.
            let gd = g.rot.mul_vec(gl);
            let g_mu = u.scale(u.dot(gd)) - gd;
            out[0] += g_mu.x;
            out[1] += g_mu.y;
            out[2] += g_mu.z;
            for (k, jac) in ctx.jacobians[i].iter().enumerate() {
                out[6 + k] += delta.dot(jac.mul_vec(gl));
            }
        }
    }
    (loss, grads)
}
