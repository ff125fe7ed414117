use std::fmt::Write as _;

use propsplat_core::io::{measurements_to_records, split_indices, Schema, SplitStrategy, ValueKind};
use propsplat_core::synth::{
    generate_drive_test, indoor_9gw, label_links, link_fixture, parse_world, write_world, RouteSpec,
};
use propsplat_core::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{create_out_dir, read_input, records_csv, secs, write_output, Dataset};
use crate::args::{FixtureName, SplitArgs, SynthArgs};
use crate::config::Settings;
use crate::error::{CliError, CliResult, Kind};
use crate::manifest::RunManifest;

pub fn synth(a: SynthArgs, settings: &Settings) -> CliResult<()> {
    let start = std::time::Instant::now();
    let mut manifest = RunManifest::new("synth", settings);
    create_out_dir(&a.out_dir)?;
    let local = Schema::local();
    match (a.fixture, &a.world) {
        (Some(FixtureName::Indoor9gw), _) => {
            let f = indoor_9gw()?;
            let mut gw = String::from("id,x_m,y_m,z_m\n");
            for g in &f.gateways {
                let p = g.position;
                writeln!(gw, "{},{},{},{}", g.id, p.x, p.y, p.z).unwrap();
            }
            write_output(a.out_dir.join("gateways.csv"), gw, &mut manifest)?;
            for (id, ms) in &f.train {
                let csv = records_csv(&local, &measurements_to_records(ms, ValueKind::Rssi))?;
                write_output(a.out_dir.join(format!("train_{id}.csv")), csv, &mut manifest)?;
            }
            let obs = f.observations(a.observations, settings.seed)?;
            let mut text = String::new();
            let ids: Vec<&str> = f.gateways.iter().map(|g| g.id.as_str()).collect();
            writeln!(text, "{},true_x_m,true_y_m,true_z_m", ids.join(",")).unwrap();
            for o in &obs {
                let vals: Vec<String> = o.rssi_dbm.iter().map(f64::to_string).collect();
                let p = o.position;
                writeln!(text, "{},{},{},{}", vals.join(","), p.x, p.y, p.z).unwrap();
            }
            write_output(a.out_dir.join("observations.csv"), text, &mut manifest)?;
            write_output(a.out_dir.join("world.txt"), write_world(&f.world), &mut manifest)?;
            let g = f.grid;
            println!("fixture\tindoor-9gw");
            println!("gateways\t{}", f.gateways.len());
            println!("records_per_gateway\t{}", f.train.values().next().map_or(0, Vec::len));
            println!("observations\t{}", obs.len());
            println!("extent\t{},{},{},{}", g.min_x, g.min_y, g.max_x, g.max_y);
            println!("device_z_m\t{}", g.tx_z);
            println!("frequency_hz\t{}", f.frequency_hz);
        }
        (Some(name), _) => {
            let f = link_fixture(match name {
                FixtureName::Urban20 => "urban-20",
                _ => "aniso-walls",
            })?;
            for (file, ms) in [("train.csv", &f.train), ("test.csv", &f.test)] {
                let csv = records_csv(&local, &measurements_to_records(ms, ValueKind::PathLoss))?;
                write_output(a.out_dir.join(file), csv, &mut manifest)?;
            }
            write_output(a.out_dir.join("world.txt"), write_world(&f.world), &mut manifest)?;
            println!("fixture\t{}", f.name);
            println!("train\t{}", f.train.len());
            println!("test\t{}", f.test.len());
            println!("frequency_hz\t{}", f.frequency_hz);
        }
        (None, Some(world_path)) => {
            let bytes = read_input(world_path, &mut manifest)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| CliError::new(Kind::Data, format!("{}: not UTF-8", world_path.display())))?;
            let world = parse_world(&text)?;
            let tx = a.tx.expect("clap requires --tx with --world");
            let freq = a.freq.expect("clap requires --freq with --world");
            let ms = match (&a.route, a.random_rx) {
                (Some(waypoints), None) => generate_drive_test(
                    &world,
                    &RouteSpec {
                        waypoints: waypoints.0.clone(),
                        spacing_m: a.spacing_m,
                    },
                    tx,
                    freq,
                )?,
                (None, Some(n)) => {
                    if !(a.extent_m.is_finite() && a.extent_m > 0.0) {
                        return Err(CliError::usage("--extent-m must be positive"));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                    let h = a.extent_m;
                    let links: Vec<(Point3, Point3)> = (0..n)
                        .map(|_| {
                            let rx = Point3::new(
                                tx.x + rng.random_range(-h..h),
                                tx.y + rng.random_range(-h..h),
                                a.rx_z,
                            );
                            (tx, rx)
                        })
                        .collect();
                    label_links(&world, &links, freq, 0)?
                }
                _ => return Err(CliError::usage("--world needs exactly one of --route or --random-rx")),
            };
            let csv = records_csv(&local, &measurements_to_records(&ms, ValueKind::PathLoss))?;
            write_output(a.out_dir.join("data.csv"), csv, &mut manifest)?;
            println!("records\t{}", ms.len());
            println!("obstacles\t{}", world.obstacles.len());
        }
        (None, None) => return Err(CliError::usage("synth needs --fixture or --world")),
    }
    manifest.time("synth", secs(start));
    manifest.write(&a.out_dir)?;
    Ok(())
}

pub fn split(a: SplitArgs, settings: &Settings) -> CliResult<()> {
    let mut manifest = RunManifest::new("split", settings);
    let bytes = read_input(&a.data, &mut manifest)?;
    let data = Dataset::parse(&bytes, None)?;
    let strategy = match (a.spacing_m, a.fraction) {
        (Some(spacing_m), None) => SplitStrategy::Spatial { spacing_m },
        (None, Some(fraction)) => SplitStrategy::RandomFraction { fraction },
        _ => return Err(CliError::usage("split needs exactly one of --spacing-m or --fraction")),
    };
    manifest.set_config(&strategy);
    let (train, test) = split_indices(&data.measurements, strategy, settings.seed)?;
    create_out_dir(&a.out_dir)?;
    for (file, idx) in [("train.csv", &train), ("test.csv", &test)] {
        let recs: Vec<_> = idx.iter().map(|&i| data.records[i]).collect();
        write_output(a.out_dir.join(file), records_csv(&data.schema, &recs)?, &mut manifest)?;
    }
    println!("train\t{}", train.len());
    println!("test\t{}", test.len());
    manifest.write(&a.out_dir)?;
    Ok(())
}
