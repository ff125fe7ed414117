//! Built-in verification worlds. Geometry and labels are generated from
//! fixed seeds, so every call returns identical data.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generate::{generate_indoor_grid, label_links, IndoorGridSpec};
use super::world::{oracle_path_loss, Obstacle, ObstacleWorld};
use crate::error::{Error, Result};
use crate::eval::{Gateway, DEFAULT_FINGERPRINT_SPACING_M};
use crate::geometry::Point3;
use crate::training::Measurement;

pub const FIXTURE_NAMES: [&str; 3] = ["urban-20", "aniso-walls", "indoor-9gw"];

/// Outdoor links split into train and test.
#[derive(Debug, Clone)]
pub struct LinkFixture {
    pub name: &'static str,
    pub world: ObstacleWorld,
    pub frequency_hz: f64,
    pub train: Vec<Measurement>,
    pub test: Vec<Measurement>,
}

/// Per-gateway RSSI training data on a regular grid.
#[derive(Debug, Clone)]
pub struct IndoorFixture {
    pub world: ObstacleWorld,
    pub frequency_hz: f64,
    pub p0_true_dbm: f64,
    pub gateways: Vec<Gateway>,
    pub grid: IndoorGridSpec,
    pub train: BTreeMap<String, Vec<Measurement>>,
}

/// A device position with the noise-free RSSI heard by each gateway, in
/// gateway order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndoorObservation {
    pub position: Point3,
    pub rssi_dbm: Vec<f64>,
}

impl IndoorFixture {
    /// `count` uniformly drawn device positions that avoid the default
    /// fingerprint lattice, each with oracle readings from every gateway.
    pub fn observations(&self, count: usize, seed: u64) -> Result<Vec<IndoorObservation>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = &self.grid;
        let on_lattice = |v: f64| (v / DEFAULT_FINGERPRINT_SPACING_M).fract() == 0.0;
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let p = Point3::new(rng.random_range(g.min_x..g.max_x), rng.random_range(g.min_y..g.max_y), g.tx_z);
            if on_lattice(p.x) && on_lattice(p.y) {
                continue;
            }
            let rssi_dbm = self
                .gateways
                .iter()
                .map(|gw| Ok(self.p0_true_dbm - oracle_path_loss(&self.world, p, gw.position, self.frequency_hz)?))
                .collect::<Result<_>>()?;
            out.push(IndoorObservation { position: p, rssi_dbm });
        }
        Ok(out)
    }
}

fn random_rx(rng: &mut ChaCha8Rng, half: f64, z: f64, world: &ObstacleWorld, txs: &[Point3], min_d: f64) -> Point3 {
    loop {
        let p = Point3::new(rng.random_range(-half..half), rng.random_range(-half..half), z);
        if txs.iter().all(|t| t.distance_2d(p) >= min_d) && world.obstacles.iter().all(|o| !o.contains(p)) {
            return p;
        }
    }
}

/// Single 17 m mast among 20 random buildings in a 2 km square; 2500
/// street-level receivers, the first 2000 for training.
pub fn urban_20() -> Result<LinkFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let tx = Point3::new(0.0, 0.0, 17.0);
    let mut obstacles = Vec::new();
    while obstacles.len() < 20 {
        let (w, d) = (rng.random_range(50.0..200.0), rng.random_range(50.0..200.0));
        let h = rng.random_range(20.0..60.0);
        let min = Point3::new(rng.random_range(-950.0..950.0 - w), rng.random_range(-950.0..950.0 - d), 0.0);
        let o = Obstacle::cuboid(min, min + Point3::new(w, d, h), rng.random_range(4.0..15.0))?;
        // Keep the mast in the open.
        if tx.distance_2d(min + Point3::new(w / 2.0, d / 2.0, 0.0)) > 150.0 {
            obstacles.push(o);
        }
    }
    let world = ObstacleWorld::new(obstacles, 2.8, 1.0, 20)?;
    let links: Vec<_> = (0..2500)
        .map(|_| (tx, random_rx(&mut rng, 1000.0, 1.5, &world, &[tx], 50.0)))
        .collect();
    let frequency_hz = 1.8e9;
    let mut all = label_links(&world, &links, frequency_hz, 0)?;
    let test = all.split_off(2000);
    Ok(LinkFixture {
        name: "urban-20",
        world,
        frequency_hz,
        train: all,
        test,
    })
}

/// Four masts around a field of long, thin, axis-aligned walls. Links
/// cross the walls at many angles, so a primitive that is narrow across a
/// wall and long along it explains the data far better than a round one.
pub fn aniso_walls() -> Result<LinkFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(7070);
    let txs = [
        Point3::new(-900.0, -900.0, 25.0),
        Point3::new(900.0, -900.0, 25.0),
        Point3::new(900.0, 900.0, 25.0),
        Point3::new(-900.0, 900.0, 25.0),
    ];
    let mut obstacles = Vec::new();
    while obstacles.len() < 10 {
        let len = rng.random_range(300.0..500.0);
        let thick = 4.0;
        let c = Point3::new(rng.random_range(-600.0..600.0), rng.random_range(-600.0..600.0), 0.0);
        let (hx, hy) = if obstacles.len() % 2 == 0 { (len / 2.0, thick / 2.0) } else { (thick / 2.0, len / 2.0) };
        let o = Obstacle::cuboid(
            Point3::new(c.x - hx, c.y - hy, 0.0),
            Point3::new(c.x + hx, c.y + hy, 30.0),
            rng.random_range(12.0..20.0),
        )?;
        obstacles.push(o);
    }
    let world = ObstacleWorld::new(obstacles, 2.6, 1.0, 70)?;
    let links: Vec<_> = (0..2500)
        .map(|i| {
            let tx = txs[i % txs.len()];
            (tx, random_rx(&mut rng, 800.0, 1.5, &world, &txs, 50.0))
        })
        .collect();
    let frequency_hz = 1.8e9;
    let mut all = label_links(&world, &links, frequency_hz, 0)?;
    let test = all.split_off(2000);
    Ok(LinkFixture {
        name: "aniso-walls",
        world,
        frequency_hz,
        train: all,
        test,
    })
}

/// 30 m × 20 m floor with partition walls, nine ceiling gateways on a 3×3
/// layout, device positions every meter.
pub fn indoor_9gw() -> Result<IndoorFixture> {
    let wall = |min: [f64; 2], max: [f64; 2], loss: f64| {
        Obstacle::cuboid(Point3::new(min[0], min[1], 0.0), Point3::new(max[0], max[1], 3.0), loss)
    };
    let obstacles = vec![
        wall([9.9, 0.0], [10.1, 12.0], 6.0)?,
        wall([19.9, 8.0], [20.1, 20.0], 5.0)?,
        wall([0.0, 13.9], [7.0, 14.1], 4.0)?,
        wall([23.0, 5.9], [30.0, 6.1], 8.0)?,
        wall([12.0, 15.9], [17.0, 16.1], 3.0)?,
    ];
    let world = ObstacleWorld::new(obstacles, 2.0, 0.0, 9)?;
    let mut gateways = Vec::new();
    for (j, y) in [4.0, 10.0, 16.0].into_iter().enumerate() {
        for (i, x) in [5.0, 15.0, 25.0].into_iter().enumerate() {
            gateways.push(Gateway {
                id: format!("gw{}", 3 * j + i),
                position: Point3::new(x, y, 2.5),
            });
        }
    }
    let grid = IndoorGridSpec {
        min_x: 0.0,
        min_y: 0.0,
        max_x: 30.0,
        max_y: 20.0,
        spacing_m: 1.0,
        tx_z: 1.0,
    };
    let frequency_hz = 2.4e9;
    let p0_true_dbm = 0.0;
    let train = generate_indoor_grid(&world, &grid, &gateways, frequency_hz, p0_true_dbm)?;
    Ok(IndoorFixture {
        world,
        frequency_hz,
        p0_true_dbm,
        gateways,
        grid,
        train,
    })
}

/// Outdoor fixture by name.
pub fn link_fixture(name: &str) -> Result<LinkFixture> {
    match name {
        "urban-20" => urban_20(),
        "aniso-walls" => aniso_walls(),
        other => Err(Error::invalid(format!(
            "unknown link fixture `{other}` (expected urban-20 or aniso-walls)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn urban_shape() {
        let f = urban_20().unwrap();
        assert_eq!((f.train.len(), f.test.len()), (2000, 500));
        assert_eq!(f.world.obstacles.len(), 20);
        assert_eq!(f.world.sigma_noise_db, 1.0);
        let blocked = f.train.iter().filter(|m| f.world.obstruction_db(m.tx, m.rx) > 0.0).count();
        assert!(blocked > 200, "{blocked}");
    }

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(urban_20().unwrap().train, urban_20().unwrap().train);
        assert_eq!(aniso_walls().unwrap().test, aniso_walls().unwrap().test);
    }

    #[test]
    fn indoor_shape() {
        let f = indoor_9gw().unwrap();
        assert_eq!(f.gateways.len(), 9);
        assert!(f.train.values().all(|v| v.len() == 31 * 21));
        let obs = f.observations(20, 3).unwrap();
        assert_eq!(obs, f.observations(20, 3).unwrap());
        assert!(obs.iter().all(|o| o.rssi_dbm.len() == 9 && o.rssi_dbm.iter().all(|v| *v < 0.0)));
    }

    #[test]
    fn unknown_name() {
        assert!(link_fixture("suburb").is_err());
    }
}
