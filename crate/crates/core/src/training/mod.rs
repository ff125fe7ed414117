//! Fitting a [`ModelState`] to labeled links.
//!
//! The pipeline is: data-driven initialization along observed links, then a
//! fixed number of Adam iterations on the distance-weighted squared error,
//! using analytic gradients (checked against central differences in
//! [`gradcheck`]).

mod adam;
mod gradcheck;
mod gradient;
mod init;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use gradcheck::{
    finite_difference_check, finite_difference_check_against, random_problem, GradCheckEntry, GradCheckReport, ParamId,
};
pub use gradient::{batch_weights, loss_gradients, loss_gradients_with, weighted_loss, GradientSet};
pub use init::{initialize_model, median};

use crate::error::{Error, Result};
use crate::geometry::{Point3, DEFAULT_SCALE_MAX, DEFAULT_SCALE_MIN};
use crate::model::{ModelState, Parallelism, FREE_SPACE_EXPONENT};

/// One labeled link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub tx: Point3,
    pub rx: Point3,
    pub frequency_hz: f64,
    /// Path loss in dB, or RSSI in dBm for RSSI-mode datasets.
    pub target: f64,
    pub link_distance: f64,
}

impl Measurement {
    pub fn new(tx: Point3, rx: Point3, frequency_hz: f64, target: f64) -> Result<Self> {
        tx.ensure_finite("tx")?;
        rx.ensure_finite("rx")?;
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::invalid(format!("frequency must be positive, got {frequency_hz}")));
        }
        if !target.is_finite() {
            return Err(Error::invalid(format!("target {target} is not finite")));
        }
        let link_distance = tx.distance(rx);
        if link_distance <= 0.0 {
            return Err(Error::DegenerateSegment(tx));
        }
        Ok(Self {
            tx,
            rx,
            frequency_hz,
            target,
            link_distance,
        })
    }
}

/// Per-parameter-group Adam step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub mu: f64,
    pub log_scale: f64,
    pub quat: f64,
    pub offset: f64,
    pub gamma: f64,
    pub p0: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mu: 0.5,
            log_scale: 0.01,
            quat: 0.005,
            offset: 0.05,
            gamma: 0.002,
            p0: 0.05,
        }
    }
}

/// Component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// No primitives at all: baseline with learnable exponent only.
    pub no_gaussians: bool,
    /// One shared scale per primitive, rotation frozen.
    pub isotropic: bool,
    /// Exponent frozen at 2.0.
    pub fixed_ple: bool,
}

impl Ablation {
    pub fn is_empty(&self) -> bool {
        !(self.no_gaussians || self.isotropic || self.fixed_ple)
    }

    /// `|`-combination of two flag sets.
    pub fn union(self, other: Ablation) -> Ablation {
        Ablation {
            no_gaussians: self.no_gaussians || other.no_gaussians,
            isotropic: self.isotropic || other.isotropic,
            fixed_ple: self.fixed_ple || other.fixed_ple,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_gaussians: usize,
    pub iterations: usize,
    /// Links per step; the full dataset is used when it is smaller.
    pub batch_size: usize,
    pub lr: LearningRates,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Distance-weight exponent `p`.
    pub weight_exponent: f64,
    /// Distance-weight offset `ε` (meters).
    pub weight_eps_m: f64,
    /// Initial scale as a fraction of the median link distance.
    pub init_sigma0: f64,
    pub init_offset_std_db: f64,
    pub gamma_init: f64,
    pub ablation: Ablation,
    pub scale_min_m: f64,
    pub scale_max_m: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Fit RSSI targets through a learnable reference power.
    pub rssi_mode: bool,
    /// Sequential, bit-reproducible gradient accumulation.
    pub strict: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_gaussians: 9000,
            iterations: 5000,
            batch_size: 4096,
            lr: LearningRates::default(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_exponent: 1.0,
            weight_eps_m: 1.0,
            init_sigma0: 0.3,
            init_offset_std_db: 0.1,
            gamma_init: FREE_SPACE_EXPONENT,
            ablation: Ablation::default(),
            scale_min_m: DEFAULT_SCALE_MIN,
            scale_max_m: DEFAULT_SCALE_MAX,
            gamma_min: 0.5,
            gamma_max: 6.0,
            rssi_mode: false,
            strict: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        for (name, v) in [
            ("lr.mu", lr.mu),
            ("lr.log_scale", lr.log_scale),
            ("lr.quat", lr.quat),
            ("lr.offset", lr.offset),
            ("lr.gamma", lr.gamma),
            ("lr.p0", lr.p0),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(0.1..=0.5).contains(&self.init_sigma0) {
            return Err(Error::invalid(format!(
                "init_sigma0 must be in [0.1, 0.5], got {}",
                self.init_sigma0
            )));
        }
        if !(self.init_offset_std_db >= 0.0 && self.init_offset_std_db.is_finite()) {
            return Err(Error::invalid("init_offset_std_db must be non-negative"));
        }
        if !(self.weight_exponent.is_finite() && self.weight_eps_m.is_finite() && self.weight_eps_m >= 0.0) {
            return Err(Error::invalid("distance weights need finite p and non-negative eps"));
        }
        if !(self.scale_min_m > 0.0 && self.scale_min_m < self.scale_max_m && self.scale_max_m.is_finite()) {
            return Err(Error::invalid("scale clamp must satisfy 0 < min < max < inf"));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= self.gamma_init && self.gamma_init <= self.gamma_max) {
            return Err(Error::invalid("need 0 < gamma_min <= gamma_init <= gamma_max"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn parallelism(&self) -> Parallelism {
        if self.strict {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        }
    }
}

/// Applies ablation switches on top of `config`.
pub fn apply_ablation(config: &TrainConfig, flags: Ablation) -> TrainConfig {
    let mut c = config.clone();
    c.ablation = c.ablation.union(flags);
    if c.ablation.no_gaussians {
        c.n_gaussians = 0;
    }
    if c.ablation.fixed_ple {
        c.gamma_init = FREE_SPACE_EXPONENT;
    }
    c
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// Weighted batch loss before the step.
    pub loss: f64,
    /// Exponent after the step.
    pub gamma: f64,
    pub wall_s: f64,
}

impl HistoryEntry {
    pub const TSV_HEADER: &'static str = "iteration\tloss\tgamma\twall_s";

    pub fn to_tsv(&self) -> String {
        format!("{}\t{:.6}\t{:.6}\t{:.3}", self.iteration, self.loss, self.gamma, self.wall_s)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub history: Vec<HistoryEntry>,
    /// Full-dataset weighted loss of the initialized model.
    pub initial_loss: f64,
    /// Full-dataset weighted loss after the last step.
    pub final_loss: f64,
}

/// Independent random streams derived from one seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const INIT_STREAM: u64 = 1;
pub(crate) const BATCH_STREAM: u64 = 2;

pub fn train(dataset: &[Measurement], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, config, |_| {})
}

/// [`train`], calling `progress` after every iteration.
pub fn train_with_progress(
    dataset: &[Measurement],
    config: &TrainConfig,
    mut progress: impl FnMut(&HistoryEntry),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let f0 = dataset[0].frequency_hz;
    if let Some(m) = dataset.iter().find(|m| (m.frequency_hz - f0).abs() > 1e-9 * f0) {
        return Err(Error::FrequencyMismatch {
            model_hz: f0,
            query_hz: m.frequency_hz,
        });
    }
    let config = apply_ablation(config, Ablation::default());
    let mut model = initialize_model(dataset, &config)?;
    model.provenance = Some(serde_json::to_string(&config).expect("config serializes"));

    let mode = config.parallelism();
    let initial_loss = weighted_loss(&model, dataset, &config)?;
    let mut state = AdamState::new(&model);
    let mut rng = stream_rng(config.seed, BATCH_STREAM);
    let n = dataset.len();
    let full_batch = config.batch_size >= n;
    let mut batch: Vec<Measurement> = Vec::with_capacity(config.batch_size.min(n));
    let mut history = Vec::with_capacity(config.iterations);
    let start = Instant::now();

    for iteration in 0..config.iterations {
        let slice: &[Measurement] = if full_batch {
            dataset
        } else {
            let mut idx = rand::seq::index::sample(&mut rng, n, config.batch_size).into_vec();
            idx.sort_unstable();
            batch.clear();
            batch.extend(idx.iter().map(|&i| dataset[i]));
            &batch
        };
        let (loss, grads) = loss_gradients_with(&model, slice, &config, mode)?;
        adam_step(&mut model, &grads, &mut state, &config)?;
        let entry = HistoryEntry {
            iteration,
            loss,
            gamma: model.gamma,
            wall_s: start.elapsed().as_secs_f64(),
        };
        progress(&entry);
        history.push(entry);
    }
    let final_loss = weighted_loss(&model, dataset, &config)?;
    Ok(TrainOutcome {
        model,
        history,
        initial_loss,
        final_loss,
    })
}
