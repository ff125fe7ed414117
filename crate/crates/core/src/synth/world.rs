//! Obstacle worlds and the ground-truth path loss they define.
//!
//! World files are plain text, one directive per line; `#` starts a comment
//! and blank lines are ignored:
//!
//! ```text
//! gamma_true <γ>                              # default 2.0
//! sigma_noise <dB>                            # default 0
//! seed <u64>                                  # default 0
//! box <minx> <miny> <minz> <maxx> <maxy> <maxz> <loss_db>
//! sphere <cx> <cy> <cz> <radius> <loss_db>
//! ```

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::model::baseline_path_loss;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned box.
    Box { min: Point3, max: Point3 },
    Sphere { center: Point3, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub shape: Shape,
    /// Added once per traversal; negative values lower the loss.
    pub loss_db: f64,
}

impl Obstacle {
    pub fn cuboid(min: Point3, max: Point3, loss_db: f64) -> Result<Self> {
        min.ensure_finite("box min")?;
        max.ensure_finite("box max")?;
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::invalid(format!("box must have positive extent: {min} .. {max}")));
        }
        Self::checked(Shape::Box { min, max }, loss_db)
    }

    pub fn sphere(center: Point3, radius: f64, loss_db: f64) -> Result<Self> {
        center.ensure_finite("sphere center")?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(format!("sphere radius must be positive, got {radius}")));
        }
        Self::checked(Shape::Sphere { center, radius }, loss_db)
    }

    fn checked(shape: Shape, loss_db: f64) -> Result<Self> {
        if !loss_db.is_finite() {
            return Err(Error::invalid("obstacle loss must be finite"));
        }
        Ok(Self { shape, loss_db })
    }

    /// Whether `p` lies in the open interior.
    pub fn contains(&self, p: Point3) -> bool {
        match self.shape {
            Shape::Box { min, max } => {
                min.x < p.x && p.x < max.x && min.y < p.y && p.y < max.y && min.z < p.z && p.z < max.z
            }
            Shape::Sphere { center, radius } => (p - center).norm_squared() < radius * radius,
        }
    }

    /// Whether the open segment `(a, b)` meets the open interior.
    pub fn intersects(&self, a: Point3, b: Point3) -> bool {
        match self.shape {
            Shape::Box { min, max } => segment_hits_box(a, b, min, max),
            Shape::Sphere { center, radius } => segment_hits_sphere(a, b, center, radius),
        }
    }
}

/// Slab test with open intervals: the segment's parameter range `(0, 1)` is
/// intersected with each axis' open range of strictly-inside parameters.
fn segment_hits_box(a: Point3, b: Point3, min: Point3, max: Point3) -> bool {
    let (a, d, lo_b, hi_b) = (a.to_array(), (b - a).to_array(), min.to_array(), max.to_array());
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if d[k] == 0.0 {
            if !(lo_b[k] < a[k] && a[k] < hi_b[k]) {
                return false;
            }
            continue;
        }
        let t1 = (lo_b[k] - a[k]) / d[k];
        let t2 = (hi_b[k] - a[k]) / d[k];
        lo = lo.max(t1.min(t2));
        hi = hi.min(t1.max(t2));
        if lo >= hi {
            return false;
        }
    }
    lo < hi
}

/// The open ball meets the open segment iff the closed segment comes
/// strictly closer than `r` to the center.
fn segment_hits_sphere(a: Point3, b: Point3, c: Point3, r: f64) -> bool {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 { ((c - a).dot(d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let closest = a + d.scale(t);
    (closest - c).norm_squared() < r * r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleWorld {
    pub obstacles: Vec<Obstacle>,
    pub gamma_true: f64,
    pub sigma_noise_db: f64,
    pub seed: u64,
}

impl Default for ObstacleWorld {
    fn default() -> Self {
        Self {
            obstacles: Vec::new(),
            gamma_true: 2.0,
            sigma_noise_db: 0.0,
            seed: 0,
        }
    }
}

impl ObstacleWorld {
    pub fn new(obstacles: Vec<Obstacle>, gamma_true: f64, sigma_noise_db: f64, seed: u64) -> Result<Self> {
        let w = Self {
            obstacles,
            gamma_true,
            sigma_noise_db,
            seed,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_true.is_finite() && self.gamma_true > 0.0) {
            return Err(Error::invalid(format!("gamma_true must be positive, got {}", self.gamma_true)));
        }
        if !(self.sigma_noise_db.is_finite() && self.sigma_noise_db >= 0.0) {
            return Err(Error::invalid(format!("sigma_noise must be non-negative, got {}", self.sigma_noise_db)));
        }
        Ok(())
    }

    /// Summed loss of every obstacle the open segment passes through.
    pub fn obstruction_db(&self, tx: Point3, rx: Point3) -> f64 {
        self.obstacles
            .iter()
            .filter(|o| o.intersects(tx, rx))
            .map(|o| o.loss_db)
            .sum()
    }

    /// Noise draw for label `sample`, independent of evaluation order.
    pub fn noise_db(&self, sample: u64) -> f64 {
        if self.sigma_noise_db == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(sample);
        Normal::new(0.0, self.sigma_noise_db).expect("validated sigma").sample(&mut rng)
    }
}

/// Noise-free ground truth: log-distance baseline with `γ_true` plus
/// obstruction losses.
pub fn oracle_path_loss(world: &ObstacleWorld, tx: Point3, rx: Point3, frequency_hz: f64) -> Result<f64> {
    tx.ensure_finite("tx")?;
    rx.ensure_finite("rx")?;
    if tx == rx {
        return Err(Error::DegenerateSegment(tx));
    }
    if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
        return Err(Error::invalid(format!("frequency must be positive, got {frequency_hz}")));
    }
    Ok(baseline_path_loss(tx, rx, frequency_hz, world.gamma_true) + world.obstruction_db(tx, rx))
}

/// [`oracle_path_loss`] plus shadowing noise for label number `sample`.
pub fn oracle_label(world: &ObstacleWorld, tx: Point3, rx: Point3, frequency_hz: f64, sample: u64) -> Result<f64> {
    Ok(oracle_path_loss(world, tx, rx, frequency_hz)? + world.noise_db(sample))
}

pub fn parse_world(text: &str) -> Result<ObstacleWorld> {
    let mut world = ObstacleWorld::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::WorldSyntax { line, message };
        let mut parts = content.split_whitespace();
        let keyword = parts.next().expect("non-empty");
        let args: Vec<&str> = parts.collect();
        let nums = |n: usize| -> Result<Vec<f64>> {
            if args.len() != n {
                return Err(err(format!("`{keyword}` takes {n} values, found {}", args.len())));
            }
            args.iter()
                .map(|a| a.parse::<f64>().map_err(|_| err(format!("`{a}` is not a number"))))
                .collect()
        };
        match keyword {
            "gamma_true" => world.gamma_true = nums(1)?[0],
            "sigma_noise" => world.sigma_noise_db = nums(1)?[0],
            "seed" => {
                if args.len() != 1 {
                    return Err(err("`seed` takes 1 value".into()));
                }
                world.seed = args[0].parse().map_err(|_| err(format!("`{}` is not an unsigned integer", args[0])))?;
            }
            "box" => {
                let v = nums(7)?;
                let o = Obstacle::cuboid(Point3::new(v[0], v[1], v[2]), Point3::new(v[3], v[4], v[5]), v[6])
                    .map_err(|e| err(e.to_string()))?;
                world.obstacles.push(o);
            }
            "sphere" => {
                let v = nums(5)?;
                let o = Obstacle::sphere(Point3::new(v[0], v[1], v[2]), v[3], v[4]).map_err(|e| err(e.to_string()))?;
                world.obstacles.push(o);
            }
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }
    world.validate()?;
    Ok(world)
}

pub fn write_world(world: &ObstacleWorld) -> String {
    let mut s = String::new();
    writeln!(s, "gamma_true {}", world.gamma_true).unwrap();
    writeln!(s, "sigma_noise {}", world.sigma_noise_db).unwrap();
    writeln!(s, "seed {}", world.seed).unwrap();
    for o in &world.obstacles {
        match o.shape {
            Shape::Box { min, max } => writeln!(
                s,
                "box {} {} {} {} {} {} {}",
                min.x, min.y, min.z, max.x, max.y, max.z, o.loss_db
            ),
            Shape::Sphere { center, radius } => {
                writeln!(s, "sphere {} {} {} {} {}", center.x, center.y, center.z, radius, o.loss_db)
            }
        }
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const F: f64 = 1.8e9;

    fn unit_box(loss: f64) -> Obstacle {
        Obstacle::cuboid(Point3::new(40.0, -5.0, 0.0), Point3::new(60.0, 5.0, 10.0), loss).unwrap()
    }

    #[test]
    fn empty_world_is_free_space() {
        let w = ObstacleWorld::default();
        let (a, b) = (Point3::ZERO, Point3::new(300.0, 40.0, 2.0));
        assert_eq!(oracle_path_loss(&w, a, b, F).unwrap(), baseline_path_loss(a, b, F, 2.0));
    }

    #[test]
    fn box_on_midpoint_adds_its_loss() {
        let w = ObstacleWorld::new(vec![unit_box(10.0)], 2.0, 0.0, 0).unwrap();
        let (a, b) = (Point3::new(0.0, 0.0, 5.0), Point3::new(100.0, 0.0, 5.0));
        let pl = oracle_path_loss(&w, a, b, F).unwrap();
        assert!((pl - baseline_path_loss(a, b, F, 2.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn grazing_a_face_adds_nothing() {
        let w = ObstacleWorld::new(vec![unit_box(10.0)], 2.0, 0.0, 0).unwrap();
        // Along the top face z = 10 and along the side face y = 5.
        for (a, b) in [
            (Point3::new(0.0, 0.0, 10.0), Point3::new(100.0, 0.0, 10.0)),
            (Point3::new(0.0, 5.0, 5.0), Point3::new(100.0, 5.0, 5.0)),
            // Touching an edge from outside.
            (Point3::new(30.0, 5.0, 5.0), Point3::new(50.0, -15.0, 5.0)),
        ] {
            assert_eq!(w.obstruction_db(a, b), 0.0, "{a} -> {b}");
        }
    }

    #[test]
    fn segment_ending_inside_counts() {
        let o = unit_box(3.0);
        assert!(o.intersects(Point3::ZERO, Point3::new(50.0, 0.0, 5.0)));
        assert!(!o.intersects(Point3::ZERO, Point3::new(40.0, 0.0, 5.0)));
    }

    #[test]
    fn sphere_cases() {
        let s = Obstacle::sphere(Point3::new(50.0, 0.0, 0.0), 5.0, -4.0).unwrap();
        assert!(s.intersects(Point3::ZERO, Point3::new(100.0, 0.0, 0.0)));
        assert!(!s.intersects(Point3::new(0.0, 5.0, 0.0), Point3::new(100.0, 5.0, 0.0)));
        assert!(!s.intersects(Point3::ZERO, Point3::new(45.0, 0.0, 0.0)));
        let w = ObstacleWorld::new(vec![s], 2.0, 0.0, 0).unwrap();
        assert_eq!(w.obstruction_db(Point3::ZERO, Point3::new(100.0, 0.0, 0.0)), -4.0);
    }

    #[test]
    fn invalid_geometry() {
        assert!(Obstacle::cuboid(Point3::ZERO, Point3::new(1.0, 0.0, 1.0), 1.0).is_err());
        assert!(Obstacle::sphere(Point3::ZERO, 0.0, 1.0).is_err());
        assert!(Obstacle::sphere(Point3::ZERO, 1.0, f64::NAN).is_err());
        assert!(ObstacleWorld::new(vec![], 0.0, 0.0, 0).is_err());
        assert!(ObstacleWorld::new(vec![], 2.0, -1.0, 0).is_err());
    }

    #[test]
    fn coincident_endpoints_rejected() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert!(oracle_path_loss(&ObstacleWorld::default(), p, p, F).is_err());
    }

    #[test]
    fn noise_is_seeded_per_sample() {
        let w = ObstacleWorld::new(vec![], 2.0, 1.0, 5).unwrap();
        assert_eq!(w.noise_db(3), w.noise_db(3));
        assert_ne!(w.noise_db(3), w.noise_db(4));
        let draws: Vec<f64> = (0..4000).map(|i| w.noise_db(i)).collect();
        let mean = draws.iter().sum::<f64>() / 4000.0;
        let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4000.0).sqrt();
        assert!(mean.abs() < 0.06 && (sd - 1.0).abs() < 0.05, "{mean} {sd}");
    }

    #[test]
    fn world_file_round_trip() {
        let w = ObstacleWorld::new(
            vec![unit_box(7.25), Obstacle::sphere(Point3::new(1.0, 2.0, 3.0), 4.5, -2.0).unwrap()],
            3.1,
            0.75,
            42,
        )
        .unwrap();
        assert_eq!(parse_world(&write_world(&w)).unwrap(), w);
    }

    #[test]
    fn world_file_errors_carry_line() {
        let text = "# demo\ngamma_true 2.5\n\nbox 0 0 0 1 1\n";
        match parse_world(text) {
            Err(Error::WorldSyntax { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_world("cone 1 2 3"), Err(Error::WorldSyntax { line: 1, .. })));
        assert!(matches!(parse_world("box 0 0 0 1 1 x 3"), Err(Error::WorldSyntax { line: 1, .. })));
        let w = parse_world("sphere 0 0 0 2 5 # trailing comment\n").unwrap();
        assert_eq!(w.obstacles.len(), 1);
    }

    fn arb_point(r: f64) -> impl Strategy<Value = Point3> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    fn arb_obstacle() -> impl Strategy<Value = Obstacle> {
        prop_oneof![
            (arb_point(20.0), (1.0..15.0f64, 1.0..15.0f64, 1.0..15.0f64), -10.0..10.0f64).prop_map(|(c, (a, b, h), l)| {
                Obstacle::cuboid(c, c + Point3::new(a, b, h), l).unwrap()
            }),
            (arb_point(20.0), 1.0..15.0f64, -10.0..10.0f64).prop_map(|(c, r, l)| Obstacle::sphere(c, r, l).unwrap()),
        ]
    }

    /// Parameter length of the open segment inside the obstacle, measured
    /// exactly enough to tell whether dense sampling must find it.
    fn interior_span(o: &Obstacle, a: Point3, b: Point3) -> f64 {
        let n = 100_000;
        (1..n).filter(|&i| o.contains(a + (b - a).scale(i as f64 / n as f64))).count() as f64 / n as f64
    }

    proptest! {
        #[test]
        fn intersection_matches_sampling(o in arb_obstacle(), a in arb_point(40.0), b in arb_point(40.0)) {
            prop_assume!(a != b);
            let sampled = (1..1000).any(|i| o.contains(a + (b - a).scale(i as f64 / 1000.0)));
            let exact = o.intersects(a, b);
            if sampled {
                prop_assert!(exact);
            }
            if exact && !sampled {
                // Only allowed when the inside part is too short to be hit.
                prop_assert!(interior_span(&o, a, b) < 2.0 / 1000.0);
            }
        }

        #[test]
        fn oracle_reciprocity(obs in prop::collection::vec(arb_obstacle(), 0..6), a in arb_point(40.0), b in arb_point(40.0)) {
            prop_assume!(a != b);
            let w = ObstacleWorld::new(obs, 2.7, 0.0, 0).unwrap();
            let ab = oracle_path_loss(&w, a, b, F).unwrap();
            let ba = oracle_path_loss(&w, b, a, F).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
        }

        #[test]
        fn oracle_additivity(obs in prop::collection::vec(arb_obstacle(), 0..6), extra in arb_obstacle(), a in arb_point(40.0), b in arb_point(40.0)) {
            prop_assume!(a != b);
            let w = ObstacleWorld::new(obs.clone(), 2.7, 0.0, 0).unwrap();
            let mut more = obs;
            more.push(extra);
            let w2 = ObstacleWorld::new(more, 2.7, 0.0, 0).unwrap();
            let before = oracle_path_loss(&w, a, b, F).unwrap();
            let after = oracle_path_loss(&w2, a, b, F).unwrap();
            if extra.intersects(a, b) {
                prop_assert!((after - before - extra.loss_db).abs() < 1e-9);
            } else {
                prop_assert_eq!(after, before);
            }
        }
    }
}
