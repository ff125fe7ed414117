use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::world::{oracle_label, ObstacleWorld};
use crate::error::{Error, Result};
use crate::eval::{grid_positions, Gateway};
use crate::geometry::Point3;
use crate::training::Measurement;

/// Polyline route sampled every `spacing_m` of arc length, starting at the
/// first waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub waypoints: Vec<Point3>,
    pub spacing_m: f64,
}

impl RouteSpec {
    pub fn sample_points(&self) -> Result<Vec<Point3>> {
        if self.waypoints.len() < 2 {
            return Err(Error::invalid("a route needs at least two waypoints"));
        }
        if !(self.spacing_m.is_finite() && self.spacing_m > 0.0) {
            return Err(Error::invalid(format!("route spacing must be positive, got {}", self.spacing_m)));
        }
        for w in &self.waypoints {
            w.ensure_finite("waypoint")?;
        }
        let legs: Vec<f64> = self.waypoints.windows(2).map(|w| w[0].distance(w[1])).collect();
        let total: f64 = legs.iter().sum();
        if total == 0.0 {
            return Err(Error::invalid("route has zero length"));
        }
        let n = (total / self.spacing_m + 1e-9).floor() as usize + 1;
        let mut out = Vec::with_capacity(n);
        let (mut leg, mut leg_start) = (0, 0.0);
        for i in 0..n {
            let s = (i as f64 * self.spacing_m).min(total);
            while leg + 1 < legs.len() && s > leg_start + legs[leg] {
                leg_start += legs[leg];
                leg += 1;
            }
            let (a, b) = (self.waypoints[leg], self.waypoints[leg + 1]);
            let t = if legs[leg] > 0.0 { ((s - leg_start) / legs[leg]).clamp(0.0, 1.0) } else { 0.0 };
            out.push(a + (b - a).scale(t));
        }
        Ok(out)
    }
}

/// Labeled links from `tx` to every route sample. Samples that coincide
/// with the transmitter are skipped. Labels use sample index as the noise
/// stream, so output is independent of thread scheduling.
pub fn generate_drive_test(
    world: &ObstacleWorld,
    route: &RouteSpec,
    tx: Point3,
    frequency_hz: f64,
) -> Result<Vec<Measurement>> {
    world.validate()?;
    let points = route.sample_points()?;
    label_links(world, &points.iter().map(|&rx| (tx, rx)).collect::<Vec<_>>(), frequency_hz, 0)
}

/// Labels `(tx, rx)` pairs with noise streams `first_sample + index`.
pub fn label_links(
    world: &ObstacleWorld,
    links: &[(Point3, Point3)],
    frequency_hz: f64,
    first_sample: u64,
) -> Result<Vec<Measurement>> {
    let labeled: Vec<Option<Measurement>> = links
        .par_iter()
        .enumerate()
        .map(|(i, &(tx, rx))| {
            if tx == rx {
                return Ok(None);
            }
            let pl = oracle_label(world, tx, rx, frequency_hz, first_sample + i as u64)?;
            Measurement::new(tx, rx, frequency_hz, pl).map(Some)
        })
        .collect::<Result<_>>()?;
    Ok(labeled.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndoorGridSpec {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub spacing_m: f64,
    /// Height of the transmitting device.
    pub tx_z: f64,
}

impl IndoorGridSpec {
    pub fn positions(&self) -> Result<Vec<Point3>> {
        grid_positions(self.min_x, self.min_y, self.max_x, self.max_y, self.spacing_m, self.tx_z)
    }
}

/// RSSI records `p0_true − PL` for a device at every grid position heard
/// by every gateway, keyed by gateway id.
pub fn generate_indoor_grid(
    world: &ObstacleWorld,
    grid: &IndoorGridSpec,
    gateways: &[Gateway],
    frequency_hz: f64,
    p0_true_dbm: f64,
) -> Result<BTreeMap<String, Vec<Measurement>>> {
    world.validate()?;
    if gateways.is_empty() {
        return Err(Error::invalid("at least one gateway is required"));
    }
    if !p0_true_dbm.is_finite() {
        return Err(Error::invalid("p0_true must be finite"));
    }
    let positions = grid.positions()?;
    let mut out = BTreeMap::new();
    for (gi, g) in gateways.iter().enumerate() {
        let links: Vec<_> = positions.iter().map(|&p| (p, g.position)).collect();
        let first = (gi * positions.len()) as u64;
        let mut records = label_links(world, &links, frequency_hz, first)?;
        for r in &mut records {
            r.target = p0_true_dbm - r.target;
        }
        if out.insert(g.id.clone(), records).is_some() {
            return Err(Error::invalid(format!("duplicate gateway id `{}`", g.id)));
        }
    }
    Ok(out)
}
