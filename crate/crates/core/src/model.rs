//! The forward model: log-distance baseline plus a sum of Gaussian offsets.
//!
//! A link `(tx, rx)` is affected by a Gaussian only when the Gaussian's
//! center projects strictly inside the segment. Its influence is the
//! unnormalized Gaussian density of the perpendicular displacement measured
//! in the primitive's local axes, and the predicted path loss is
//!
//! ```text
//! PL = 20·log10(f) + 10·γ·log10(max(d, 1 m)) + C  +  Σᵢ oᵢ·αᵢ(tx, rx)
//! ```
//!
//! In RSSI mode the model also carries a reference power `P₀` and predicts
//! `P₀ − PL` instead.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LogScale3, Mat3, Point3, UnitQuaternion, Vec3};
use crate::io::GeoOrigin;
use crate::kernel::{exp_neg_half, pack_blocks, PackItem, Packed};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Link distances are clamped to this value (meters) in the baseline.
pub const MIN_LINK_DISTANCE: f64 = 1.0;

/// Initial and ablation-fixed path-loss exponent (free space).
pub const FREE_SPACE_EXPONENT: f64 = 2.0;

/// `20·log10(4π / c)`, about −147.55 dB.
pub fn fspl_constant() -> f64 {
    20.0 * (4.0 * PI / SPEED_OF_LIGHT).log10()
}

/// Number of scalar parameters per primitive (3 + 3 + 4 + 1).
pub const PARAMS_PER_GAUSSIAN: usize = 11;

/// One learnable anisotropic primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub mu: Point3,
    pub log_scale: LogScale3,
    pub rotation: UnitQuaternion,
    /// Peak offset in dB; positive adds loss.
    pub offset_db: f64,
}

impl GaussianPrimitive {
    /// Flat layout: `[μx, μy, μz, ln sx, ln sy, ln sz, qw, qx, qy, qz, o]`.
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let q = self.rotation.to_array();
        let ls = self.log_scale.0;
        [
            self.mu.x, self.mu.y, self.mu.z, ls[0], ls[1], ls[2], q[0], q[1], q[2], q[3],
            self.offset_db,
        ]
    }

    /// Inverse of [`to_params`](Self::to_params); the quaternion is renormalized.
    pub fn from_params(p: &[f64; PARAMS_PER_GAUSSIAN]) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Gaussian parameters must be finite"));
        }
        Ok(Self {
            mu: Point3::new(p[0], p[1], p[2]),
            log_scale: LogScale3([p[3], p[4], p[5]]),
            rotation: UnitQuaternion::new(p[6], p[7], p[8], p[9])?,
            offset_db: p[10],
        })
    }
}

/// Complete learnable state for one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub gaussians: Vec<GaussianPrimitive>,
    pub gamma: f64,
    /// Reference power (dBm); present only for RSSI-mode models.
    pub p0_dbm: Option<f64>,
    pub frequency_hz: f64,
    /// Geodetic anchor of the local frame, when the data was geodetic.
    pub origin: Option<GeoOrigin>,
    /// Free-form provenance (training configuration) stored with the model.
    pub provenance: Option<String>,
}

impl ModelState {
    pub fn new(frequency_hz: f64, gamma: f64) -> Result<Self> {
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::invalid(format!("frequency must be positive, got {frequency_hz}")));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!("path-loss exponent must be positive, got {gamma}")));
        }
        Ok(Self {
            gaussians: Vec::new(),
            gamma,
            p0_dbm: None,
            frequency_hz,
            origin: None,
            provenance: None,
        })
    }

    pub fn with_gaussians(mut self, gaussians: Vec<GaussianPrimitive>) -> Self {
        self.gaussians = gaussians;
        self
    }

    pub fn with_p0(mut self, p0_dbm: f64) -> Self {
        self.p0_dbm = Some(p0_dbm);
        self
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn is_rssi_mode(&self) -> bool {
        self.p0_dbm.is_some()
    }

    /// Copy of this model with primitive `index` removed.
    pub fn without(&self, index: usize) -> ModelState {
        let mut m = self.clone();
        m.gaussians.remove(index);
        m
    }

    pub fn check_frequency(&self, frequency_hz: f64) -> Result<()> {
        let tol = 1e-9 * self.frequency_hz.abs().max(frequency_hz.abs());
        if (self.frequency_hz - frequency_hz).abs() > tol {
            return Err(Error::FrequencyMismatch {
                model_hz: self.frequency_hz,
                query_hz: frequency_hz,
            });
        }
        Ok(())
    }

    pub fn prepare(&self) -> PreparedModel {
        PreparedModel::new(self)
    }
}

/// An unlabeled link to predict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkQuery {
    pub tx: Point3,
    pub rx: Point3,
    pub frequency_hz: f64,
}

impl LinkQuery {
    pub fn new(tx: Point3, rx: Point3, frequency_hz: f64) -> Result<Self> {
        let q = Self { tx, rx, frequency_hz };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        self.tx.ensure_finite("tx")?;
        self.rx.ensure_finite("rx")?;
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::invalid(format!(
                "frequency must be positive, got {}",
                self.frequency_hz
            )));
        }
        if self.tx == self.rx {
            return Err(Error::DegenerateSegment(self.tx));
        }
        Ok(())
    }

    /// The same link with endpoints exchanged.
    pub fn reversed(&self) -> Self {
        Self {
            tx: self.rx,
            rx: self.tx,
            frequency_hz: self.frequency_hz,
        }
    }
}

/// Log-distance baseline with a free exponent.
pub fn baseline_path_loss(tx: Point3, rx: Point3, frequency_hz: f64, gamma: f64) -> f64 {
    baseline_from_distance(tx.distance(rx), frequency_hz, gamma)
}

pub(crate) fn baseline_from_distance(d: f64, frequency_hz: f64, gamma: f64) -> f64 {
    20.0 * frequency_hz.log10() + 10.0 * gamma * clamped_log10(d) + fspl_constant()
}

#[inline]
pub(crate) fn clamped_log10(d: f64) -> f64 {
    d.max(MIN_LINK_DISTANCE).log10()
}

/// Skip rule for Gaussians far from a link: ignored when the center is more
/// than `k · max(s)` from the line, i.e. `α < exp(−k²/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictOptions {
    pub cull_sigmas: Option<f64>,
}

impl PredictOptions {
    /// Culling at six standard deviations (`α < e⁻¹⁸`).
    pub fn culled() -> Self {
        Self {
            cull_sigmas: Some(6.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    #[default]
    Sequential,
    Parallel,
}

/// A primitive with its rotation and inverse scales precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PreparedGaussian {
    pub mu: Point3,
    pub rot: Mat3,
    pub inv_scale: [f64; 3],
    /// Row `k` is the `k`-th local axis divided by `sₖ`, so
    /// `axes · δ = S⁻¹Rᵀδ`.
    pub axes: [[f64; 3]; 3],
    pub offset: f64,
    pub max_scale: f64,
}

/// Result of evaluating one primitive against a link.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Influence {
    pub l_proj: f64,
    pub alpha: f64,
    /// `δ'ₖ / sₖ` for the three local axes.
    pub scaled_local: [f64; 3],
    pub delta: Vec3,
}

impl PreparedGaussian {
    pub fn new(g: &GaussianPrimitive) -> Self {
        let ls = g.log_scale.0;
        let rot = g.rotation.rotation();
        let inv_scale = ls.map(|v| (-v).exp());
        let axes = std::array::from_fn(|k| std::array::from_fn(|j| rot.0[j][k] * inv_scale[k]));
        Self {
            mu: g.mu,
            rot,
            inv_scale,
            axes,
            offset: g.offset_db,
            max_scale: ls[0].max(ls[1]).max(ls[2]).exp(),
        }
    }

    /// Full evaluation, `None` when the gate rejects the link.
    #[inline]
    pub fn influence(&self, tx: Point3, u: Vec3, d: f64) -> Option<Influence> {
        let w = self.mu - tx;
        let l = w.dot(u);
        if !(0.0 < l && l < d) {
            return None;
        }
        let delta = u.scale(l) - w;
        let scaled = self.axes.map(|a| a[0] * delta.x + a[1] * delta.y + a[2] * delta.z);
        let m = scaled[0] * scaled[0] + scaled[1] * scaled[1] + scaled[2] * scaled[2];
        Some(Influence {
            l_proj: l,
            alpha: exp_neg_half(m),
            scaled_local: scaled,
            delta,
        })
    }

    /// Influence only; the hot path of prediction.
    #[inline(always)]
    fn alpha(&self, tx: Point3, u: Vec3, d: f64) -> f64 {
        let w = self.mu - tx;
        let l = w.dot(u);
        if !(0.0 < l && l < d) {
            return 0.0;
        }
        let delta = u.scale(l) - w;
        let [a, b, c] = self.axes.map(|r| r[0] * delta.x + r[1] * delta.y + r[2] * delta.z);
        exp_neg_half(a * a + b * b + c * c)
    }
}

/// Precomputed per-primitive data for repeated evaluation of one model.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    packed: Packed,
    gamma: f64,
    p0_dbm: Option<f64>,
    frequency_hz: f64,
    options: PredictOptions,
}

/// Unit direction and length of a link; `None` for coincident endpoints.
#[inline]
pub(crate) fn link_frame(tx: Point3, rx: Point3) -> (Vec3, f64) {
    let v = rx - tx;
    let d = v.norm();
    if d == 0.0 {
        (Vec3::ZERO, 0.0)
    } else {
        (v.scale(1.0 / d), d)
    }
}

impl PreparedModel {
    pub fn new(model: &ModelState) -> Self {
        let gaussians: Vec<PreparedGaussian> = model.gaussians.iter().map(PreparedGaussian::new).collect();
        Self {
            packed: pack_blocks(
                &gaussians
                    .iter()
                    .map(|g| PackItem {
                        mu: g.mu,
                        axes: g.axes,
                        offset: g.offset,
                        max_scale: g.max_scale,
                    })
                    .collect::<Vec<_>>(),
            ),
            gamma: model.gamma,
            p0_dbm: model.p0_dbm,
            frequency_hz: model.frequency_hz,
            options: PredictOptions::default(),
        }
    }

    pub fn with_options(mut self, options: PredictOptions) -> Self {
        self.options = options;
        self
    }

    pub fn options(&self) -> PredictOptions {
        self.options
    }

    /// `ΔPL` with the configured culling. Coincident endpoints give 0 since no
    /// projection can fall strictly inside an empty segment.
    pub fn delta_path_loss(&self, tx: Point3, rx: Point3) -> f64 {
        let (u, d) = link_frame(tx, rx);
        self.packed.delta(tx, u, d, self.options.cull_sigmas)
    }

    pub fn path_loss(&self, tx: Point3, rx: Point3) -> f64 {
        baseline_from_distance(tx.distance(rx), self.frequency_hz, self.gamma)
            + self.delta_path_loss(tx, rx)
    }

    /// Path loss, or `P₀ − PL` in RSSI mode. No validation.
    pub fn output(&self, tx: Point3, rx: Point3) -> f64 {
        let pl = self.path_loss(tx, rx);
        match self.p0_dbm {
            Some(p0) => p0 - pl,
            None => pl,
        }
    }

    pub fn predict(&self, query: &LinkQuery) -> Result<f64> {
        query.validate()?;
        self.check_frequency(query.frequency_hz)?;
        Ok(self.output(query.tx, query.rx))
    }

    fn check_frequency(&self, f: f64) -> Result<()> {
        let tol = 1e-9 * self.frequency_hz.abs().max(f.abs());
        if (self.frequency_hz - f).abs() > tol {
            return Err(Error::FrequencyMismatch {
                model_hz: self.frequency_hz,
                query_hz: f,
            });
        }
        Ok(())
    }

    pub fn predict_batch(&self, queries: &[LinkQuery], mode: Parallelism) -> Result<Vec<f64>> {
        for (index, q) in queries.iter().enumerate() {
            q.validate()
                .and_then(|_| self.check_frequency(q.frequency_hz))
                .map_err(|e| Error::InvalidQuery {
                    index,
                    source: Box::new(e),
                })?;
        }
        Ok(match mode {
            Parallelism::Sequential => queries.iter().map(|q| self.output(q.tx, q.rx)).collect(),
            Parallelism::Parallel => queries
                .par_iter()
                .with_min_len(64)
                .map(|q| self.output(q.tx, q.rx))
                .collect(),
        })
    }
}

/// Influence of a single primitive on the link `tx → rx`.
pub fn gaussian_influence(g: &GaussianPrimitive, tx: Point3, rx: Point3) -> Result<f64> {
    tx.ensure_finite("tx")?;
    rx.ensure_finite("rx")?;
    if tx == rx {
        return Err(Error::DegenerateSegment(tx));
    }
    let (u, d) = link_frame(tx, rx);
    Ok(PreparedGaussian::new(g).alpha(tx, u, d))
}

pub fn delta_path_loss(model: &ModelState, tx: Point3, rx: Point3) -> Result<f64> {
    tx.ensure_finite("tx")?;
    rx.ensure_finite("rx")?;
    if tx == rx {
        return Err(Error::DegenerateSegment(tx));
    }
    Ok(model.prepare().delta_path_loss(tx, rx))
}

pub fn predict(model: &ModelState, query: &LinkQuery) -> Result<f64> {
    model.prepare().predict(query)
}

pub fn predict_batch(model: &ModelState, queries: &[LinkQuery], mode: Parallelism) -> Result<Vec<f64>> {
    model.prepare().predict_batch(queries, mode)
}

/// One relevant primitive's share of a prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub gaussian_index: usize,
    pub l_proj: f64,
    pub alpha: f64,
    pub contribution_db: f64,
}

/// Relevant primitives along a link, ordered from Tx to Rx.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContributionTrace {
    pub entries: Vec<TraceEntry>,
}

impl ContributionTrace {
    pub fn total_db(&self) -> f64 {
        self.entries.iter().map(|e| e.contribution_db).sum()
    }

    /// Running sum of contributions in Tx→Rx order.
    pub fn cumulative_db(&self) -> Vec<f64> {
        self.entries
            .iter()
            .scan(0.0, |acc, e| {
                *acc += e.contribution_db;
                Some(*acc)
            })
            .collect()
    }
}

pub fn per_gaussian_trace(model: &ModelState, query: &LinkQuery) -> Result<ContributionTrace> {
    query.validate()?;
    model.check_frequency(query.frequency_hz)?;
    let (u, d) = link_frame(query.tx, query.rx);
    let mut entries: Vec<TraceEntry> = model
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let pg = PreparedGaussian::new(g);
            let inf = pg.influence(query.tx, u, d)?;
            Some(TraceEntry {
                gaussian_index: i,
                l_proj: inf.l_proj,
                alpha: inf.alpha,
                contribution_db: g.offset_db * inf.alpha,
            })
        })
        .collect();
    entries.sort_by(|a, b| a.l_proj.total_cmp(&b.l_proj));
    Ok(ContributionTrace { entries })
}
