use super::{GradientSet, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::UnitQuaternion;
use crate::model::{ModelState, PARAMS_PER_GAUSSIAN};

/// First and second moment estimates, one slot per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: GradientSet,
    v: GradientSet,
    step: i32,
}

impl AdamState {
    pub fn new(model: &ModelState) -> Self {
        Self {
            m: GradientSet::zeros_like(model),
            v: GradientSet::zeros_like(model),
            step: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }
}

const GROUPS: [(&str, std::ops::Range<usize>); 4] = [("mu", 0..3), ("log_scale", 3..6), ("quat", 6..10), ("offset", 10..11)];

fn check_finite(grads: &GradientSet) -> Result<()> {
    for g in &grads.gaussians {
        for (name, range) in GROUPS.iter() {
            if g[range.clone()].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name));
            }
        }
    }
    if !grads.gamma.is_finite() {
        return Err(Error::NonFiniteGradient("gamma"));
    }
    if grads.p0.is_some_and(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient("p0"));
    }
    Ok(())
}

struct Update {
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
}

impl Update {
    #[inline]
    fn apply(&self, param: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64) {
        *m = self.b1 * *m + (1.0 - self.b1) * g;
        *v = self.b2 * *v + (1.0 - self.b2) * g * g;
        let m_hat = *m / self.c1;
        let v_hat = *v / self.c2;
        *param -= lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

/// One Adam step with per-group learning rates, followed by the
/// projections: unit quaternions, clamped scales and exponent.
///
/// Ablations act here: with `isotropic` the three log-scale gradients are
/// summed and applied to all axes alike and rotations stay frozen; with
/// `fixed_ple` the exponent is not updated.
pub fn adam_step(model: &mut ModelState, grads: &GradientSet, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    check_finite(grads)?;
    if grads.gaussians.len() != model.len() || state.m.gaussians.len() != model.len() {
        return Err(Error::DimensionMismatch {
            expected: model.len(),
            actual: grads.gaussians.len(),
        });
    }
    state.step += 1;
    let t = state.step;
    let upd = Update {
        b1: config.adam_beta1,
        b2: config.adam_beta2,
        eps: config.adam_eps,
        c1: 1.0 - config.adam_beta1.powi(t),
        c2: 1.0 - config.adam_beta2.powi(t),
    };
    let lr = &config.lr;
    let iso = config.ablation.isotropic;

    for (i, prim) in model.gaussians.iter_mut().enumerate() {
        let mut g = grads.gaussians[i];
        if iso {
            let s = g[3] + g[4] + g[5];
            g[3..6].fill(s);
            g[6..10].fill(0.0);
        }
        let mut p = prim.to_params();
        let (m, v) = (&mut state.m.gaussians[i], &mut state.v.gaussians[i]);
        for k in 0..PARAMS_PER_GAUSSIAN {
            let rate = match k {
                0..=2 => lr.mu,
                3..=5 => lr.log_scale,
                6..=9 if iso => continue,
                6..=9 => lr.quat,
                _ => lr.offset,
            };
            upd.apply(&mut p[k], g[k], &mut m[k], &mut v[k], rate);
        }
        prim.mu = crate::geometry::Point3::new(p[0], p[1], p[2]);
        prim.log_scale.0 = [p[3], p[4], p[5]];
        prim.log_scale.clamp(config.scale_min_m, config.scale_max_m);
        if !iso {
            prim.rotation = UnitQuaternion::new(p[6], p[7], p[8], p[9])
                .map_err(|_| Error::NonFiniteGradient("quat"))?;
        }
        prim.offset_db = p[10];
    }

    if !config.ablation.fixed_ple {
        upd.apply(&mut model.gamma, grads.gamma, &mut state.m.gamma, &mut state.v.gamma, lr.gamma);
        model.gamma = model.gamma.clamp(config.gamma_min, config.gamma_max);
    }
    if let (Some(p0), Some(g)) = (model.p0_dbm.as_mut(), grads.p0) {
        let m = state.m.p0.get_or_insert(0.0);
        let v = state.v.p0.get_or_insert(0.0);
        upd.apply(p0, g, m, v, lr.p0);
    }
    Ok(())
}
