//! Fingerprint databases predicted from per-gateway models, and KNN matching.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::model::{ModelState, Parallelism, PreparedModel};
use crate::training::median;

pub const DEFAULT_FINGERPRINT_SPACING_M: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gateway {
    pub id: String,
    pub position: Point3,
}

/// Grid points from `(min_x, min_y)` to `(max_x, max_y)` inclusive, row by
/// row (x fastest), at height `z`.
pub fn grid_positions(min_x: f64, min_y: f64, max_x: f64, max_y: f64, spacing: f64, z: f64) -> Result<Vec<Point3>> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
    }
    if !(max_x >= min_x && max_y >= min_y) {
        return Err(Error::invalid("grid extent is inverted"));
    }
    let count = |span: f64| (span / spacing + 1e-9).floor() as usize + 1;
    let (nx, ny) = (count(max_x - min_x), count(max_y - min_y));
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(Point3::new(min_x + i as f64 * spacing, min_y + j as f64 * spacing, z));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    pub positions: Vec<Point3>,
    pub gateways: Vec<Gateway>,
    /// `positions.len() × gateways.len()`, row-major.
    values: Vec<f64>,
}

impl FingerprintDb {
    pub fn from_parts(positions: Vec<Point3>, gateways: Vec<Gateway>, values: Vec<f64>) -> Result<Self> {
        if values.len() != positions.len() * gateways.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len() * gateways.len(),
                actual: values.len(),
            });
        }
        Ok(Self {
            positions,
            gateways,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_gateways(&self) -> usize {
        self.gateways.len()
    }

    pub fn fingerprint(&self, index: usize) -> &[f64] {
        let g = self.n_gateways();
        &self.values[index * g..(index + 1) * g]
    }
}

/// Predicts, for every position `p` and gateway `g`, the RSSI of a
/// transmitter at `p` heard at `g` through `models[g.id]`.
pub fn build_fingerprint_db(
    models: &BTreeMap<String, ModelState>,
    gateways: &[Gateway],
    positions: &[Point3],
    mode: Parallelism,
) -> Result<FingerprintDb> {
    if gateways.is_empty() {
        return Err(Error::invalid("at least one gateway is required"));
    }
    let mut prepared: Vec<PreparedModel> = Vec::with_capacity(gateways.len());
    let mut frequency = None;
    for g in gateways {
        let m = models.get(&g.id).ok_or_else(|| Error::MissingGateway(g.id.clone()))?;
        if !m.is_rssi_mode() {
            return Err(Error::invalid(format!("model for gateway `{}` is not in RSSI mode", g.id)));
        }
        match frequency {
            None => frequency = Some(m.frequency_hz),
            Some(f) => m.check_frequency(f)?,
        }
        prepared.push(m.prepare());
    }
    for p in positions {
        p.ensure_finite("grid position")?;
    }
    let row = |p: &Point3| -> Vec<f64> {
        gateways
            .iter()
            .zip(&prepared)
            .map(|(g, m)| m.output(*p, g.position))
            .collect()
    };
    let values: Vec<f64> = match mode {
        Parallelism::Sequential => positions.iter().flat_map(row).collect(),
        Parallelism::Parallel => positions
            .par_iter()
            .with_min_len(64)
            .map(row)
            .collect::<Vec<_>>()
            .concat(),
    };
    FingerprintDb::from_parts(positions.to_vec(), gateways.to_vec(), values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnEstimate {
    pub position: Point3,
    /// Grid indices of the neighbors, nearest first.
    pub neighbors: Vec<usize>,
    /// Gateways excluded because the observation was missing (NaN).
    pub masked: usize,
}

/// Unweighted centroid of the `k` grid positions nearest to `observed` in
/// RSSI space. Missing readings (NaN) are left out of the distance; ties go
/// to the lower grid index.
pub fn knn_localize(db: &FingerprintDb, observed: &[f64], k: usize) -> Result<KnnEstimate> {
    let g = db.n_gateways();
    if observed.len() != g {
        return Err(Error::DimensionMismatch {
            expected: g,
            actual: observed.len(),
        });
    }
    if k == 0 || k > db.len() {
        return Err(Error::invalid(format!("k must be in 1..={}, got {k}", db.len())));
    }
    let masked = observed.iter().filter(|v| v.is_nan()).count();
    if masked == g {
        return Err(Error::invalid("every gateway reading is missing"));
    }
    let mut scored: Vec<(f64, usize)> = (0..db.len())
        .map(|i| {
            let d2: f64 = db
                .fingerprint(i)
                .iter()
                .zip(observed)
                .filter(|(_, o)| !o.is_nan())
                .map(|(f, o)| (f - o) * (f - o))
                .sum();
            (d2, i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    let neighbors: Vec<usize> = scored.iter().map(|&(_, i)| i).collect();
    let sum = neighbors
        .iter()
        .fold(Point3::ZERO, |acc, &i| acc + db.positions[i]);
    Ok(KnnEstimate {
        position: sum.scale(1.0 / k as f64),
        neighbors,
        masked,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDims {
    #[default]
    Planar,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub mean_m: f64,
    pub median_m: f64,
    pub count: usize,
}

pub fn localization_errors(estimates: &[Point3], truths: &[Point3], dims: ErrorDims) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: truths.len(),
        });
    }
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| match dims {
            ErrorDims::Planar => e.distance_2d(*t),
            ErrorDims::Spatial => e.distance(*t),
        })
        .collect())
}

pub fn localization_report(estimates: &[Point3], truths: &[Point3], dims: ErrorDims) -> Result<LocalizationReport> {
    let errs = localization_errors(estimates, truths, dims)?;
    if errs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(LocalizationReport {
        mean_m: errs.iter().sum::<f64>() / errs.len() as f64,
        median_m: median(&errs).expect("non-empty"),
        count: errs.len(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn gw(id: &str, x: f64, y: f64) -> Gateway {
        Gateway {
            id: id.into(),
            position: Point3::new(x, y, 2.5),
        }
    }

    fn flat_models(ids: &[&str]) -> BTreeMap<String, ModelState> {
        ids.iter()
            .map(|id| (id.to_string(), ModelState::new(2.4e9, 2.0).unwrap().with_p0(0.0)))
            .collect()
    }

    #[test]
    fn grid_counts() {
        assert_eq!(grid_positions(0.0, 0.0, 9.0, 9.0, 1.0, 1.0).unwrap().len(), 100);
        assert_eq!(grid_positions(0.0, 0.0, 30.0, 20.0, 0.25, 1.0).unwrap().len(), 121 * 81);
        assert_eq!(grid_positions(0.0, 0.0, 0.0, 0.0, 1.0, 1.0).unwrap().len(), 1);
    }

    #[test]
    fn single_entry_db() {
        let models = flat_models(&["a"]);
        let gws = [gw("a", 0.0, 0.0)];
        let p = Point3::new(3.0, 4.0, 1.0);
        let db = build_fingerprint_db(&models, &gws, &[p], Parallelism::Sequential).unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db.fingerprint(0), &[models["a"].prepare().output(p, gws[0].position)]);
    }

    #[test]
    fn zero_offset_fingerprints_decrease_with_distance() {
        let models = flat_models(&["a"]);
        let gws = [gw("a", 0.0, 0.0)];
        let pos: Vec<_> = (1..20).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect();
        let db = build_fingerprint_db(&models, &gws, &pos, Parallelism::Parallel).unwrap();
        for i in 1..pos.len() {
            assert!(db.fingerprint(i)[0] < db.fingerprint(i - 1)[0]);
        }
    }

    #[test]
    fn twenty_one_gateways() {
        let ids: Vec<String> = (0..21).map(|i| format!("g{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let models = flat_models(&refs);
        let gws: Vec<_> = ids.iter().enumerate().map(|(i, id)| gw(id, i as f64, 5.0)).collect();
        let pos = grid_positions(0.0, 0.0, 4.0, 4.0, 1.0, 1.0).unwrap();
        let db = build_fingerprint_db(&models, &gws, &pos, Parallelism::Parallel).unwrap();
        assert!((0..db.len()).all(|i| db.fingerprint(i).len() == 21));
    }

    #[test]
    fn missing_gateway_is_named() {
        let models = flat_models(&["a"]);
        let err = build_fingerprint_db(&models, &[gw("a", 0.0, 0.0), gw("lobby", 1.0, 1.0)], &[Point3::ZERO], Parallelism::Sequential)
            .unwrap_err();
        assert!(err.to_string().contains("lobby"));
    }

    #[test]
    fn non_rssi_model_rejected() {
        let mut models = flat_models(&["a"]);
        models.insert("a".into(), ModelState::new(2.4e9, 2.0).unwrap());
        assert!(build_fingerprint_db(&models, &[gw("a", 0.0, 0.0)], &[Point3::ZERO], Parallelism::Sequential).is_err());
    }

    fn toy_db() -> FingerprintDb {
        FingerprintDb::from_parts(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0), Point3::new(4.0, 2.0, 0.0)],
            vec![gw("a", 0.0, 0.0), gw("b", 1.0, 0.0)],
            vec![-40.0, -50.0, -50.0, -40.0, -60.0, -55.0],
        )
        .unwrap()
    }

    #[test]
    fn exact_match_k1() {
        let db = toy_db();
        let e = knn_localize(&db, &[-50.0, -40.0], 1).unwrap();
        assert_eq!(e.position, Point3::new(2.0, 0.0, 0.0));
        assert_eq!(e.masked, 0);
    }

    #[test]
    fn full_k_is_grid_centroid() {
        let db = toy_db();
        let e = knn_localize(&db, &[0.0, 0.0], 3).unwrap();
        assert_eq!(e.position, Point3::new(2.0, 2.0 / 3.0, 0.0));
    }

    #[test]
    fn equidistant_gives_midpoint_and_ties_prefer_low_index() {
        let db = FingerprintDb::from_parts(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![gw("a", 0.0, 0.0)],
            vec![-40.0, -50.0],
        )
        .unwrap();
        let e = knn_localize(&db, &[-45.0], 2).unwrap();
        assert_eq!(e.position, Point3::new(1.0, 0.0, 0.0));
        let e = knn_localize(&db, &[-45.0], 1).unwrap();
        assert_eq!(e.neighbors, vec![0]);
    }

    #[test]
    fn missing_readings_are_masked() {
        let db = toy_db();
        let e = knn_localize(&db, &[f64::NAN, -55.0], 1).unwrap();
        assert_eq!((e.neighbors.clone(), e.masked), (vec![2], 1));
        assert!(knn_localize(&db, &[f64::NAN, f64::NAN], 1).is_err());
        assert!(knn_localize(&db, &[-40.0], 1).is_err());
        assert!(knn_localize(&db, &[-40.0, -40.0], 4).is_err());
    }

    #[test]
    fn report_examples() {
        let t = [Point3::ZERO, Point3::ZERO];
        let r = localization_report(&t, &t, ErrorDims::Planar).unwrap();
        assert_eq!((r.mean_m, r.median_m), (0.0, 0.0));
        let e = [Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 3.0, 9.0)];
        let r = localization_report(&e, &t, ErrorDims::Planar).unwrap();
        assert_eq!((r.mean_m, r.median_m), (2.0, 2.0));
        let r3 = localization_report(&e, &t, ErrorDims::Spatial).unwrap();
        assert!(r3.mean_m > r.mean_m);
        assert!(localization_report(&e, &t[..1], ErrorDims::Planar).is_err());
    }

    proptest! {
        #[test]
        fn constant_shift_invariance(
            vals in prop::collection::vec(-90.0..-30.0f64, 12),
            obs in prop::collection::vec(-90.0..-30.0f64, 3),
            shift in -20.0..20.0f64,
            k in 1usize..4,
        ) {
            // Shifts are multiples of 1/8 dB so the shifted arithmetic is exact.
            let shift = (shift * 8.0).round() / 8.0;
            let snap = |v: f64| (v * 8.0).round() / 8.0;
            let pos: Vec<_> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
            let gws = vec![gw("a", 0.0, 0.0), gw("b", 1.0, 0.0), gw("c", 2.0, 0.0)];
            let vals: Vec<f64> = vals.into_iter().map(snap).collect();
            let obs: Vec<f64> = obs.into_iter().map(snap).collect();
            let db = FingerprintDb::from_parts(pos.clone(), gws.clone(), vals.clone()).unwrap();
            let shifted = FingerprintDb::from_parts(pos, gws, vals.iter().map(|v| v + shift).collect()).unwrap();
            let obs2: Vec<f64> = obs.iter().map(|v| v + shift).collect();
            prop_assert_eq!(
                knn_localize(&db, &obs, k).unwrap(),
                knn_localize(&shifted, &obs2, k).unwrap()
            );
        }
    }
}
