//! Central-difference verification of [`loss_gradients`].
//!
//! Every perturbed loss is evaluated as a difference against the unperturbed
//! residuals, `L₊ − L₋ = (1/B) Σ w (r₊ − r₋)(r₊ + r₋)`, where `r₊ − r₋` only
//! involves the perturbed parameter. Subtracting two full losses would lose
//! most significant digits to cancellation.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{batch_weights, loss_gradients, GradientSet, Measurement, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{LogScale3, Point3, UnitQuaternion};
use crate::model::{clamped_log10, link_frame, GaussianPrimitive, ModelState, PreparedGaussian};

/// Identifies one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamId {
    Gaussian { index: usize, component: usize },
    Gamma,
    P0,
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [&str; 11] = ["mu_x", "mu_y", "mu_z", "ls_x", "ls_y", "ls_z", "q_w", "q_x", "q_y", "q_z", "offset"];
        match self {
            ParamId::Gaussian { index, component } => write!(f, "gaussian[{index}].{}", NAMES[*component]),
            ParamId::Gamma => f.write_str("gamma"),
            ParamId::P0 => f.write_str("p0"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradCheckEntry {
    pub param: ParamId,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic − numeric| / max(|numeric|, 1e-8)`
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Largest relative error over all parameters.
    pub max_rel_error: f64,
    pub worst: Option<ParamId>,
    pub n_params: usize,
    pub entries: Vec<GradCheckEntry>,
}

pub fn finite_difference_check(
    model: &ModelState,
    batch: &[Measurement],
    config: &TrainConfig,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_gradients(model, batch, config)?;
    finite_difference_check_against(model, batch, config, h, &analytic)
}

/// Compares `analytic` (which need not come from [`loss_gradients`]) with
/// central differences of step `h`.
pub fn finite_difference_check_against(
    model: &ModelState,
    batch: &[Measurement],
    config: &TrainConfig,
    h: f64,
    analytic: &GradientSet,
) -> Result<GradCheckReport> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if analytic.gaussians.len() != model.len() {
        return Err(Error::DimensionMismatch {
            expected: model.len(),
            actual: analytic.gaussians.len(),
        });
    }
    let prepared = model.prepare();
    let w = batch_weights(batch, config.weight_exponent, config.weight_eps_m);
    let frames: Vec<_> = batch.iter().map(|m| link_frame(m.tx, m.rx)).collect();
    let residuals: Vec<f64> = batch.iter().map(|m| prepared.output(m.tx, m.rx) - m.target).collect();
    // Residuals move opposite to path loss in RSSI mode.
    let sign = if model.is_rssi_mode() { -1.0 } else { 1.0 };
    let inv_b = 1.0 / batch.len() as f64;

    // dL ≈ Σ w (r₊ − r₋)(r₊ + r₋) / B / 2h with r± = r + sign·(c± − c₀).
    let central = |c0: &dyn Fn(usize) -> f64, cp: &dyn Fn(usize) -> f64, cm: &dyn Fn(usize) -> f64, s: f64| {
        let mut acc = 0.0;
        for j in 0..batch.len() {
            let (a0, ap, am) = (c0(j), cp(j), cm(j));
            let diff = s * (ap - am);
            let sum = 2.0 * residuals[j] + s * ((ap - a0) + (am - a0));
            acc += w[j] * diff * sum;
        }
        acc * inv_b / (2.0 * h)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        n_params: 0,
        entries: Vec::new(),
    };
    let mut record = |id: ParamId, ga: f64, gc: f64| {
        let e = (ga - gc).abs() / gc.abs().max(1e-8);
        report.n_params += 1;
        report.entries.push(GradCheckEntry {
            param: id,
            analytic: ga,
            numeric: gc,
            rel_error: e,
        });
        if e > report.max_rel_error || e.is_nan() {
            report.max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
            report.worst = Some(id);
        }
    };

    for (i, g) in model.gaussians.iter().enumerate() {
        let base = PreparedGaussian::new(g);
        let contrib = |pg: &PreparedGaussian, j: usize| {
            let (u, d) = frames[j];
            pg.influence(batch[j].tx, u, d).map_or(0.0, |inf| pg.offset * inf.alpha)
        };
        let c0 = |j: usize| contrib(&base, j);
        for k in 0..11 {
            let plus = PreparedGaussian::new(&perturbed(g, k, h)?);
            let minus = PreparedGaussian::new(&perturbed(g, k, -h)?);
            let gc = central(&c0, &|j| contrib(&plus, j), &|j| contrib(&minus, j), sign);
            record(
                ParamId::Gaussian { index: i, component: k },
                analytic.gaussians[i][k],
                gc,
            );
        }
    }

    let frames = &frames;
    let gamma_term = |gamma: f64| move |j: usize| 10.0 * gamma * clamped_log10(frames[j].1);
    let gc = central(
        &gamma_term(model.gamma),
        &gamma_term(model.gamma + h),
        &gamma_term(model.gamma - h),
        sign,
    );
    record(ParamId::Gamma, analytic.gamma, gc);

    if let Some(p0) = model.p0_dbm {
        let gc = central(&|_| p0, &|_| p0 + h, &|_| p0 - h, 1.0);
        record(ParamId::P0, analytic.p0.unwrap_or(0.0), gc);
    }
    Ok(report)
}

/// Copy of `g` with parameter `k` shifted by `step`; quaternions are
/// renormalized after the shift.
fn perturbed(g: &GaussianPrimitive, k: usize, step: f64) -> Result<GaussianPrimitive> {
    let mut p = g.to_params();
    p[k] += step;
    let mut out = *g;
    match k {
        0..=2 => out.mu = crate::geometry::Point3::new(p[0], p[1], p[2]),
        3..=5 => out.log_scale.0 = [p[3], p[4], p[5]],
        6..=9 => out.rotation = UnitQuaternion::new(p[6], p[7], p[8], p[9])?,
        _ => out.offset_db = p[10],
    }
    Ok(out)
}

/// Random small problem for self-checks: `batch` links from one
/// transmitter and `n` anisotropic, rotated primitives anchored along them
/// (some projecting past either end), with targets jittered around the
/// model's own prediction. In RSSI mode the model carries a random `P₀`.
pub fn random_problem(n: usize, batch: usize, rssi: bool, seed: u64) -> Result<(ModelState, Vec<Measurement>)> {
    if n == 0 || batch == 0 {
        return Err(Error::invalid("need at least one primitive and one link"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let f = 9.15e8;
    let tx = Point3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(2.0..30.0));
    let rxs: Vec<Point3> = (0..batch)
        .map(|_| loop {
            let rx = Point3::new(rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0), rng.random_range(0.5..3.0));
            if rx.distance(tx) >= 5.0 {
                break rx;
            }
        })
        .collect();
    let gaussians = (0..n)
        .map(|i| {
            let rx = rxs[i % rxs.len()];
            let jitter = Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-2.5..2.5));
            let mu = tx + (rx - tx).scale(rng.random_range(-0.5..1.5)) + jitter;
            let scales = [0; 3].map(|_| rng.random_range(3f64.ln()..60f64.ln()).exp());
            let rotation = loop {
                let q = [0; 4].map(|_| normal.sample(&mut rng));
                if let Ok(q) = UnitQuaternion::from_array(q) {
                    break q;
                }
            };
            Ok(GaussianPrimitive {
                mu,
                log_scale: LogScale3::from_scales(scales)?,
                rotation,
                offset_db: rng.random_range(-15.0..15.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = ModelState::new(f, rng.random_range(1.8..3.5))?.with_gaussians(gaussians);
    if rssi {
        model = model.with_p0(rng.random_range(-20.0..10.0));
    }
    let prepared = model.prepare();
    let data = rxs
        .into_iter()
        .map(|rx| Measurement::new(tx, rx, f, prepared.output(tx, rx) + 3.0 * normal.sample(&mut rng)))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, data))
}
