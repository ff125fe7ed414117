//! Train/test partitioning, including the spacing-based thinning used for
//! sparse-measurement experiments.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::Measurement;

/// Greedy thinning along the dataset order.
///
/// A measurement is kept iff its receiver is at least `spacing_m` (horizontal
/// distance) from every receiver kept before it. Returns `(kept, rest)`, both
/// in original order.
pub fn spatial_subsample(
    dataset: &[Measurement],
    spacing_m: f64,
) -> Result<(Vec<Measurement>, Vec<Measurement>)> {
    let (keep, rest) = spatial_subsample_indices(dataset, spacing_m)?;
    Ok((
        keep.iter().map(|&i| dataset[i]).collect(),
        rest.iter().map(|&i| dataset[i]).collect(),
    ))
}

pub fn spatial_subsample_indices(dataset: &[Measurement], spacing_m: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spacing_m.is_finite() && spacing_m >= 0.0) {
        return Err(Error::invalid(format!("spacing must be non-negative, got {spacing_m}")));
    }
    // Uniform grid of cell size `spacing` so each candidate only checks the
    // 3×3 neighborhood of already-kept receivers.
    let cell = spacing_m.max(f64::MIN_POSITIVE);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let (mut keep, mut rest) = (Vec::new(), Vec::new());
    for (i, m) in dataset.iter().enumerate() {
        let (cx, cy) = key(m.rx.x, m.rx.y);
        let conflict = spacing_m > 0.0
            && (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    grid.get(&(cx.wrapping_add(dx), cy.wrapping_add(dy))).is_some_and(|ids| {
                        ids.iter().any(|&j| dataset[j].rx.distance_2d(m.rx) < spacing_m)
                    })
                })
            });
        if conflict {
            rest.push(i);
        } else {
            grid.entry((cx, cy)).or_default().push(i);
            keep.push(i);
        }
    }
    Ok((keep, rest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Uniformly random, `fraction` of records to train.
    RandomFraction { fraction: f64 },
    /// Spacing-thinned train set; everything else is test.
    Spatial { spacing_m: f64 },
}

/// Exact partition of `dataset` into `(train, test)`, deterministic in `seed`.
pub fn split_dataset(
    dataset: &[Measurement],
    strategy: SplitStrategy,
    seed: u64,
) -> Result<(Vec<Measurement>, Vec<Measurement>)> {
    let (train, test) = split_indices(dataset, strategy, seed)?;
    Ok((
        train.iter().map(|&i| dataset[i]).collect(),
        test.iter().map(|&i| dataset[i]).collect(),
    ))
}

/// [`split_dataset`] as sorted index lists.
pub fn split_indices(dataset: &[Measurement], strategy: SplitStrategy, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    match strategy {
        SplitStrategy::RandomFraction { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::invalid(format!("train fraction must be in (0, 1), got {fraction}")));
            }
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_train = (fraction * dataset.len() as f64).round() as usize;
            let mut train = idx[..n_train].to_vec();
            let mut test = idx[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Ok((train, test))
        }
        SplitStrategy::Spatial { spacing_m } => spatial_subsample_indices(dataset, spacing_m),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::Point3;

    fn at(x: f64, y: f64) -> Measurement {
        Measurement::new(Point3::new(0.0, 0.0, 17.0), Point3::new(x, y, 1.5), 9.15e8, 100.0).unwrap()
    }

    #[test]
    fn collinear_route_thinning() {
        let ds: Vec<_> = (0..=10).map(|i| at(100.0 * i as f64 + 50.0, 0.0)).collect();
        let (keep, rest) = spatial_subsample(&ds, 300.0).unwrap();
        let xs: Vec<f64> = keep.iter().map(|m| m.rx.x - 50.0).collect();
        assert_eq!(xs, vec![0.0, 300.0, 600.0, 900.0]);
        assert_eq!(rest.len(), 7);
    }

    #[test]
    fn huge_spacing_keeps_one() {
        let ds: Vec<_> = (0..20).map(|i| at(10.0 * i as f64 + 1.0, 5.0)).collect();
        let (keep, rest) = spatial_subsample(&ds, 1e6).unwrap();
        assert_eq!(keep.len(), 1);
        assert_eq!(rest.len(), 19);
    }

    #[test]
    fn zero_spacing_keeps_all() {
        let ds: Vec<_> = (0..20).map(|i| at(1.0 + (i % 3) as f64, 2.0)).collect();
        let (keep, rest) = spatial_subsample(&ds, 0.0).unwrap();
        assert_eq!(keep.len(), 20);
        assert!(rest.is_empty());
    }

    #[test]
    fn random_fraction_sizes_and_determinism() {
        let ds: Vec<_> = (0..100).map(|i| at(i as f64 + 1.0, 0.0)).collect();
        let (a_tr, a_te) = split_dataset(&ds, SplitStrategy::RandomFraction { fraction: 0.8 }, 7).unwrap();
        assert_eq!((a_tr.len(), a_te.len()), (80, 20));
        let (b_tr, b_te) = split_dataset(&ds, SplitStrategy::RandomFraction { fraction: 0.8 }, 7).unwrap();
        assert_eq!((a_tr.clone(), a_te), (b_tr, b_te));
        let (c_tr, _) = split_dataset(&ds, SplitStrategy::RandomFraction { fraction: 0.8 }, 8).unwrap();
        assert_ne!(a_tr, c_tr);
    }

    #[test]
    fn spatial_strategy_delegates() {
        let ds: Vec<_> = (0..=10).map(|i| at(100.0 * i as f64 + 1.0, 0.0)).collect();
        let a = split_dataset(&ds, SplitStrategy::Spatial { spacing_m: 300.0 }, 0).unwrap();
        let b = spatial_subsample(&ds, 300.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_fraction_rejected() {
        let ds = vec![at(1.0, 1.0)];
        for f in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(split_dataset(&ds, SplitStrategy::RandomFraction { fraction: f }, 0).is_err());
        }
    }

    proptest! {
        #[test]
        fn kept_points_respect_spacing(
            pts in prop::collection::vec((-2000.0..2000.0f64, -2000.0..2000.0f64), 1..300),
            spacing in 1.0..800.0f64,
        ) {
            let ds: Vec<_> = pts.iter().map(|&(x, y)| at(x, y + 3000.0)).collect();
            let (keep, rest) = spatial_subsample(&ds, spacing).unwrap();
            prop_assert_eq!(keep.len() + rest.len(), ds.len());
            for (i, a) in keep.iter().enumerate() {
                for b in &keep[i + 1..] {
                    prop_assert!(a.rx.distance_2d(b.rx) >= spacing);
                }
            }
            // Every rejected point is within spacing of some kept point.
            for r in &rest {
                prop_assert!(keep.iter().any(|k| k.rx.distance_2d(r.rx) < spacing));
            }
        }

        #[test]
        fn random_split_is_partition(n in 1usize..200, f in 0.05..0.95f64, seed in any::<u64>()) {
            let ds: Vec<_> = (0..n).map(|i| at(i as f64 + 1.0, 0.0)).collect();
            let (tr, te) = split_dataset(&ds, SplitStrategy::RandomFraction { fraction: f }, seed).unwrap();
            prop_assert_eq!(tr.len() + te.len(), n);
            let mut xs: Vec<f64> = tr.iter().chain(te.iter()).map(|m| m.rx.x).collect();
            xs.sort_by(f64::total_cmp);
            let expected: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
            prop_assert_eq!(xs, expected);
        }
    }
}
