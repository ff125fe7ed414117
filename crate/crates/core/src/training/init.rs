use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{stream_rng, Measurement, TrainConfig, INIT_STREAM};
use crate::error::{Error, Result};
use crate::geometry::{LogScale3, UnitQuaternion};
use crate::model::{baseline_from_distance, GaussianPrimitive, ModelState};

/// Median of `values`; the mean of the two middle elements for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Places every primitive at a random point strictly inside a random
/// training link, with isotropic scale `σ₀ · median(d)`.
pub fn initialize_model(dataset: &[Measurement], config: &TrainConfig) -> Result<ModelState> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let frequency = dataset[0].frequency_hz;
    let distances: Vec<f64> = dataset.iter().map(|m| m.link_distance).collect();
    let scale = config.init_sigma0 * median(&distances).expect("non-empty");
    let mut log_scale = LogScale3::isotropic(scale)?;
    log_scale.clamp(config.scale_min_m, config.scale_max_m);

    let mut rng = stream_rng(config.seed, INIT_STREAM);
    let offsets = Normal::new(0.0, config.init_offset_std_db)
        .map_err(|e| Error::invalid(format!("offset prior: {e}")))?;
    let gaussians = (0..config.n_gaussians)
        .map(|_| {
            let m = &dataset[rng.random_range(0..dataset.len())];
            let t = rng.random_range(0.1..0.9);
            GaussianPrimitive {
                mu: m.tx + (m.rx - m.tx).scale(t),
                log_scale,
                rotation: UnitQuaternion::IDENTITY,
                offset_db: offsets.sample(&mut rng),
            }
        })
        .collect();

    let mut model = ModelState::new(frequency, config.gamma_init)?.with_gaussians(gaussians);
    if config.rssi_mode {
        let n = dataset.len() as f64;
        let mean_target = dataset.iter().map(|m| m.target).sum::<f64>() / n;
        let mean_baseline = dataset
            .iter()
            .map(|m| baseline_from_distance(m.link_distance, frequency, config.gamma_init))
            .sum::<f64>()
            / n;
        model.p0_dbm = Some(mean_target + mean_baseline);
    }
    Ok(model)
}
