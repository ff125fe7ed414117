use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use propsplat_core::eval::{build_fingerprint_db, grid_positions, knn_localize, localization_report, ErrorDims, Gateway};
use propsplat_core::io::decode_model;
use propsplat_core::{Error, ModelState, Point3};
use serde::Deserialize;

use super::{create_out_dir, read_input, secs, write_output};
use crate::args::LocalizeArgs;
use crate::config::Settings;
use crate::error::{CliError, CliResult, Kind};
use crate::manifest::RunManifest;

const TRUTH_COLUMNS: [&str; 3] = ["true_x_m", "true_y_m", "true_z_m"];

#[derive(Debug, Deserialize)]
struct GatewayRow {
    id: String,
    x_m: f64,
    y_m: f64,
    z_m: f64,
}

fn data_error(path: &std::path::Path, line: u64, message: impl std::fmt::Display) -> CliError {
    CliError::new(Kind::Data, format!("{}:{line}: {message}", path.display()))
}

fn parse_gateways(path: &std::path::Path, bytes: &[u8]) -> CliResult<Vec<Gateway>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let mut out: Vec<Gateway> = Vec::new();
    for (i, row) in rdr.deserialize::<GatewayRow>().enumerate() {
        let line = i as u64 + 2;
        let r = row.map_err(|e| data_error(path, line, e))?;
        let position = Point3::new(r.x_m, r.y_m, r.z_m);
        if !position.is_finite() {
            return Err(data_error(path, line, "non-finite coordinate"));
        }
        if out.iter().any(|g| g.id == r.id) {
            return Err(data_error(path, line, format!("duplicate gateway id `{}`", r.id)));
        }
        out.push(Gateway { id: r.id, position });
    }
    if out.is_empty() {
        return Err(CliError::new(Kind::Data, format!("{}: no gateways", path.display())));
    }
    Ok(out)
}

/// One observation row: readings in gateway order (NaN where not heard)
/// and the true position when the file carries one.
#[derive(Debug)]
struct Observation {
    rssi: Vec<f64>,
    truth: Option<Point3>,
}

fn parse_observations(path: &std::path::Path, bytes: &[u8], gateways: &[Gateway]) -> CliResult<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = rdr.headers().map_err(|e| data_error(path, 1, e))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let gw_cols: Vec<usize> = gateways
        .iter()
        .map(|g| col(&g.id).ok_or_else(|| data_error(path, 1, format!("no column for gateway `{}`", g.id))))
        .collect::<CliResult<_>>()?;
    let truth_cols: Vec<Option<usize>> = TRUTH_COLUMNS.iter().map(|c| col(c)).collect();
    let truth_cols: Option<Vec<usize>> = match truth_cols.iter().filter(|c| c.is_some()).count() {
        0 => None,
        3 => Some(truth_cols.into_iter().flatten().collect()),
        _ => return Err(data_error(path, 1, "give all of true_x_m, true_y_m, true_z_m or none")),
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| data_error(path, line, e))?;
        let num = |c: usize| -> CliResult<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| data_error(path, line, format!("`{}`: `{s}` is not a finite number", &header[c])))
        };
        let rssi = gw_cols
            .iter()
            .map(|&c| if rec.get(c).unwrap_or("").is_empty() { Ok(f64::NAN) } else { num(c) })
            .collect::<CliResult<Vec<f64>>>()?;
        let truth = match &truth_cols {
            Some(c) => Some(Point3::new(num(c[0])?, num(c[1])?, num(c[2])?)),
            None => None,
        };
        out.push(Observation { rssi, truth });
    }
    if out.is_empty() {
        return Err(CliError::new(Kind::Data, format!("{}: no observations", path.display())));
    }
    Ok(out)
}

pub fn localize(a: LocalizeArgs, settings: &Settings) -> CliResult<()> {
    let mut manifest = RunManifest::new("localize", settings);
    let gw_bytes = read_input(&a.gateways, &mut manifest)?;
    let gateways = parse_gateways(&a.gateways, &gw_bytes)?;

    let mut models: BTreeMap<String, ModelState> = BTreeMap::new();
    for g in &gateways {
        let path = a.models_dir.join(format!("{}.psm", g.id));
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CliError::new(
                    Kind::Model,
                    format!("{} (expected {})", Error::MissingGateway(g.id.clone()), path.display()),
                ))
            }
            Err(e) => return Err(CliError::io(&path, e)),
        };
        manifest.add_input(&path, &bytes);
        let m = decode_model(&bytes).map_err(|e| CliError::new(Kind::Model, format!("{}: {e}", path.display())))?;
        models.insert(g.id.clone(), m);
    }

    let obs_bytes = read_input(&a.observations, &mut manifest)?;
    let observations = parse_observations(&a.observations, &obs_bytes, &gateways)?;
    if a.k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }

    let [min_x, min_y, max_x, max_y] = a.extent;
    let positions = grid_positions(min_x, min_y, max_x, max_y, a.spacing_m, a.z)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let start = Instant::now();
    let db = build_fingerprint_db(&models, &gateways, &positions, settings.parallelism())?;
    manifest.time("fingerprint_db", secs(start));

    let start = Instant::now();
    let dims = if a.spatial_errors { ErrorDims::Spatial } else { ErrorDims::Planar };
    let has_truth = observations.iter().all(|o| o.truth.is_some());
    let mut csv = String::from("row,est_x_m,est_y_m,est_z_m,masked");
    csv.push_str(if has_truth { ",error_m\n" } else { "\n" });
    let (mut estimates, mut truths) = (Vec::new(), Vec::new());
    for (i, o) in observations.iter().enumerate() {
        let est = knn_localize(&db, &o.rssi, a.k).map_err(|e| match e {
            Error::InvalidArgument(m) => CliError::new(Kind::Data, format!("observation row {}: {m}", i + 2)),
            other => other.into(),
        })?;
        let p = est.position;
        write!(csv, "{i},{},{},{},{}", p.x, p.y, p.z, est.masked).unwrap();
        if let Some(t) = o.truth {
            let err = match dims {
                ErrorDims::Planar => p.distance_2d(t),
                ErrorDims::Spatial => p.distance(t),
            };
            write!(csv, ",{err}").unwrap();
            truths.push(t);
        }
        csv.push('\n');
        estimates.push(p);
    }
    manifest.time("localize", secs(start));
    create_out_dir(&a.out_dir)?;
    write_output(a.out_dir.join("estimates.csv"), csv, &mut manifest)?;
    println!("observations\t{}", observations.len());
    println!("fingerprints\t{}", db.len());
    if has_truth {
        let r = localization_report(&estimates, &truths, dims)?;
        println!("median_error_m\t{:.4}", r.median_m);
        println!("mean_error_m\t{:.4}", r.mean_m);
        let json = serde_json::to_string_pretty(&r).expect("report serializes");
        write_output(a.out_dir.join("localization.json"), json + "\n", &mut manifest)?;
    }
    manifest.write(&a.out_dir)?;
    Ok(())
}
