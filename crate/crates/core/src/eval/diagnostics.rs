//! Structural checks on a trained model: exact additivity of the offset sum
//! and sign consistency of individual contributions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{link_frame, LinkQuery, ModelState, Parallelism, PreparedGaussian, PreparedModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// `max |(ŷ(q) − ŷ∖ᵢ(q)) − oᵢαᵢ(q)|` over primitives and queries, dB.
    pub max_additivity_error_db: f64,
    /// Fraction of pairs with `αᵢ > 0`, `oᵢ ≠ 0` whose contribution carries
    /// the sign of `oᵢ`. 1.0 when there are no such pairs.
    pub sign_consistency_rate: f64,
    pub sign_pairs: usize,
    /// True when `sign_pairs` is zero and the rate is vacuous.
    pub sign_vacuous: bool,
    pub n_gaussians: usize,
    pub n_queries: usize,
}

#[derive(Default)]
struct Partial {
    max_err: f64,
    pairs: usize,
    consistent: usize,
}

/// Leave-one-out additivity and sign consistency over `queries`. Each
/// leave-one-out model is built and evaluated on its own.
pub fn diagnostics(model: &ModelState, queries: &[LinkQuery], mode: Parallelism) -> Result<DiagnosticsReport> {
    if queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let full = PreparedModel::new(model);
    let base: Vec<f64> = full.predict_batch(queries, Parallelism::Sequential)?;
    let frames: Vec<_> = queries.iter().map(|q| link_frame(q.tx, q.rx)).collect();

    let one = |i: usize| -> Partial {
        let g = &model.gaussians[i];
        let pg = PreparedGaussian::new(g);
        let loo = PreparedModel::new(&model.without(i));
        let mut p = Partial::default();
        for (j, q) in queries.iter().enumerate() {
            let (u, d) = frames[j];
            let alpha = pg.influence(q.tx, u, d).map_or(0.0, |inf| inf.alpha);
            let contribution = g.offset_db * alpha;
            // In RSSI mode the output moves opposite to the path loss.
            let delta = if model.is_rssi_mode() {
                loo.output(q.tx, q.rx) - base[j]
            } else {
                base[j] - loo.output(q.tx, q.rx)
            };
            let err = (delta - contribution).abs();
            p.max_err = if err.is_nan() { f64::INFINITY } else { p.max_err.max(err) };
            if alpha > 0.0 && g.offset_db != 0.0 {
                p.pairs += 1;
                if contribution.is_sign_negative() == g.offset_db.is_sign_negative() {
                    p.consistent += 1;
                }
            }
        }
        p
    };
    let merge = |a: Partial, b: Partial| Partial {
        max_err: a.max_err.max(b.max_err),
        pairs: a.pairs + b.pairs,
        consistent: a.consistent + b.consistent,
    };
    let total = match mode {
        Parallelism::Sequential => (0..model.len()).map(one).fold(Partial::default(), merge),
        Parallelism::Parallel => (0..model.len())
            .into_par_iter()
            .map(one)
            .reduce(Partial::default, merge),
    };
    Ok(DiagnosticsReport {
        max_additivity_error_db: total.max_err,
        sign_consistency_rate: if total.pairs == 0 {
            1.0
        } else {
            total.consistent as f64 / total.pairs as f64
        },
        sign_pairs: total.pairs,
        sign_vacuous: total.pairs == 0,
        n_gaussians: model.len(),
        n_queries: queries.len(),
    })
}
