use std::time::Instant;

use propsplat_core::eval::{coverage_grid, diagnostics, write_raster_binary, write_raster_csv, GridSpec, RasterField};
use propsplat_core::io::{parse_queries, Endpoints, RawRecord, Schema};
use propsplat_core::{LinkQuery, ModelState, PredictOptions, PreparedModel};

use super::fit::evaluate_on;
use super::{create_out_dir, load_model, model_kind, query_origin, read_input, records_csv, secs, write_output, Dataset};
use crate::args::{DiagnoseArgs, EvaluateArgs, FieldArg, GridArgs, PredictArgs, RasterFormat};
use crate::config::Settings;
use crate::error::{CliError, CliResult, Kind};
use crate::manifest::RunManifest;

fn header_schema(bytes: &[u8]) -> CliResult<Schema> {
    let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let line = String::from_utf8_lossy(first);
    let cols: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    Schema::detect(&cols).ok_or_else(|| CliError::new(Kind::Data, format!("unrecognized header: {}", line.trim())))
}

fn read_queries(bytes: &[u8], model: &ModelState) -> CliResult<Vec<LinkQuery>> {
    let schema = header_schema(bytes)?;
    let origin = query_origin(model, schema.mode)?;
    Ok(parse_queries(bytes, &schema, origin)?)
}

pub fn predict(a: PredictArgs, settings: &Settings) -> CliResult<()> {
    let mut manifest = RunManifest::new("predict", settings);
    let model = load_model(&a.model, &mut manifest)?;
    let bytes = read_input(&a.queries, &mut manifest)?;
    let queries = read_queries(&bytes, &model)?;
    if let Some(k) = a.cull_sigmas {
        if !(k.is_finite() && k > 0.0) {
            return Err(CliError::usage(format!("--cull-sigmas must be positive, got {k}")));
        }
    }
    let prepared = PreparedModel::new(&model).with_options(PredictOptions {
        cull_sigmas: a.cull_sigmas,
    });
    let start = Instant::now();
    let values = prepared.predict_batch(&queries, settings.parallelism())?;
    manifest.time("predict", secs(start));

    let kind = model_kind(&model);
    let records: Vec<RawRecord> = queries
        .iter()
        .zip(&values)
        .map(|(q, &v)| RawRecord {
            endpoints: Endpoints::Local { tx: q.tx, rx: q.rx },
            frequency_hz: q.frequency_hz,
            value_db: v,
            value_kind: kind,
        })
        .collect();
    create_out_dir(&a.out_dir)?;
    let path = a.out_dir.join("predictions.csv");
    write_output(path.clone(), records_csv(&Schema::local(), &records)?, &mut manifest)?;
    manifest.write(&a.out_dir)?;
    println!("queries\t{}", queries.len());
    println!("predictions\t{}", path.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs, settings: &Settings) -> CliResult<()> {
    let mut manifest = RunManifest::new("evaluate", settings);
    let model = load_model(&a.model, &mut manifest)?;
    let bytes = read_input(&a.data, &mut manifest)?;
    let origin = query_origin(&model, header_schema(&bytes)?.mode)?;
    let data = Dataset::parse(&bytes, origin)?;
    if data.value_kind() != model_kind(&model) {
        return Err(CliError::new(
            Kind::Model,
            format!("model predicts {} but the data holds {}", model_kind(&model), data.value_kind()),
        ));
    }
    let start = Instant::now();
    let report = evaluate_on(&model, &data.measurements, settings)?;
    manifest.time("evaluate", secs(start));
    println!("{}", propsplat_core::eval::MetricReport::TSV_HEADER);
    println!("{}", report.to_tsv());
    if let Some(dir) = &a.out_dir {
        create_out_dir(dir)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_output(dir.join("metrics.json"), json + "\n", &mut manifest)?;
        manifest.write(dir)?;
    }
    Ok(())
}

pub fn grid(a: GridArgs, settings: &Settings) -> CliResult<()> {
    let mut manifest = RunManifest::new("grid", settings);
    let model = load_model(&a.model, &mut manifest)?;
    let [min_x, min_y, max_x, max_y] = a.extent;
    let spec = GridSpec::from_extent(min_x, min_y, max_x, max_y, a.cell_size, a.z)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let field = match a.field {
        FieldArg::Prediction => RasterField::Prediction,
        FieldArg::Offset => RasterField::OffsetOnly,
    };
    let start = Instant::now();
    let raster = coverage_grid(&model, a.tx, spec, field, settings.parallelism())?;
    manifest.time("grid", secs(start));
    create_out_dir(&a.out_dir)?;
    let path = match a.format {
        RasterFormat::Bin => {
            let path = a.out_dir.join("raster.bin");
            write_raster_binary(&raster, &path)?;
            manifest.add_output(&path);
            let mut hdr = path.clone().into_os_string();
            hdr.push(".hdr");
            manifest.add_output(hdr.as_ref());
            path
        }
        RasterFormat::Csv => {
            let mut buf = Vec::new();
            write_raster_csv(&raster, &mut buf).expect("in-memory write");
            let path = a.out_dir.join("raster.csv");
            write_output(path.clone(), buf, &mut manifest)?;
            path
        }
    };
    manifest.write(&a.out_dir)?;
    let finite: Vec<f64> = raster.values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    println!("width\t{}", spec.width);
    println!("height\t{}", spec.height);
    println!("min_db\t{lo:.3}");
    println!("max_db\t{hi:.3}");
    if field == RasterField::OffsetOnly {
        println!("removed_mean_db\t{:.3}", raster.removed_mean_db);
    }
    println!("raster\t{}", path.display());
    Ok(())
}

pub fn diagnose(a: DiagnoseArgs, settings: &Settings) -> CliResult<()> {
    let mut manifest = RunManifest::new("diagnose", settings);
    let model = load_model(&a.model, &mut manifest)?;
    let bytes = read_input(&a.queries, &mut manifest)?;
    let mut queries = read_queries(&bytes, &model)?;
    if let Some(n) = a.limit {
        queries.truncate(n);
    }
    let start = Instant::now();
    let r = diagnostics(&model, &queries, settings.parallelism())?;
    manifest.time("diagnose", secs(start));
    println!("gaussians\t{}", r.n_gaussians);
    println!("queries\t{}", r.n_queries);
    println!("max_additivity_error_db\t{:.3e}", r.max_additivity_error_db);
    println!("sign_consistency_rate\t{}", r.sign_consistency_rate);
    println!("sign_pairs\t{}", r.sign_pairs);
    if r.sign_vacuous {
        println!("note\tno primitive influences any query; the sign rate is vacuous");
    }
    if let Some(dir) = &a.out_dir {
        create_out_dir(dir)?;
        let json = serde_json::to_string_pretty(&r).expect("report serializes");
        write_output(dir.join("diagnostics.json"), json + "\n", &mut manifest)?;
        manifest.write(dir)?;
    }
    Ok(())
}
