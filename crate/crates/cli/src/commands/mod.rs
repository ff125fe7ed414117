mod data;
mod fit;
mod gradcheck;
mod localize;
mod query;

use std::path::{Path, PathBuf};

use propsplat_core::io::{
    decode_model, parse_measurements_auto, to_measurements, write_measurements, CoordinateMode, DatasetManifest,
    GeoOrigin, RawRecord, Schema, ValueKind,
};
use propsplat_core::{Measurement, ModelState};

use crate::args::Command;
use crate::config::Settings;
use crate::error::{CliError, CliResult, Kind};
use crate::manifest::RunManifest;

pub fn run(command: Command, settings: &Settings) -> CliResult<()> {
    match command {
        Command::Synth(a) => data::synth(a, settings),
        Command::Split(a) => data::split(a, settings),
        Command::Train(a) => fit::train(a, settings),
        Command::Ablate(a) => fit::ablate(a, settings),
        Command::Predict(a) => query::predict(a, settings),
        Command::Evaluate(a) => query::evaluate(a, settings),
        Command::Grid(a) => query::grid(a, settings),
        Command::Diagnose(a) => query::diagnose(a, settings),
        Command::Localize(a) => localize::localize(a, settings),
        Command::Gradcheck(a) => gradcheck::gradcheck(a, settings),
    }
}

/// Reads a whole input file and records its digest.
fn read_input(path: &Path, manifest: &mut RunManifest) -> CliResult<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    manifest.add_input(path, &bytes);
    Ok(bytes)
}

fn create_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_output(path: PathBuf, bytes: impl AsRef<[u8]>, manifest: &mut RunManifest) -> CliResult<()> {
    std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    manifest.add_output(&path);
    Ok(())
}

/// A measurement file after parsing and projection.
struct Dataset {
    records: Vec<RawRecord>,
    schema: Schema,
    measurements: Vec<Measurement>,
    info: DatasetManifest,
}

impl Dataset {
    /// Geodetic files are projected around `origin`, or around the first
    /// transmitter when no origin is given.
    fn parse(bytes: &[u8], origin: Option<GeoOrigin>) -> CliResult<Self> {
        let (records, schema) = parse_measurements_auto(bytes)?;
        let (measurements, info) = to_measurements(&records, origin)?;
        Ok(Self {
            records,
            schema,
            measurements,
            info,
        })
    }

    fn value_kind(&self) -> ValueKind {
        self.info.value_kind.unwrap_or(self.schema.default_kind)
    }
}

fn load_model(path: &Path, manifest: &mut RunManifest) -> CliResult<ModelState> {
    let bytes = read_input(path, manifest)?;
    decode_model(&bytes).map_err(|e| CliError::new(Kind::Model, format!("{}: {e}", path.display())))
}

/// Geodetic inputs can only be projected into a model's frame if the model
/// remembers where that frame is anchored.
fn query_origin(model: &ModelState, mode: CoordinateMode) -> CliResult<Option<GeoOrigin>> {
    match (mode, model.origin) {
        (CoordinateMode::Geodetic, None) => Err(CliError::new(
            Kind::Data,
            "geodetic input needs a model trained on geodetic data (the model has no origin)",
        )),
        (_, o) => Ok(o),
    }
}

fn model_kind(model: &ModelState) -> ValueKind {
    if model.is_rssi_mode() {
        ValueKind::Rssi
    } else {
        ValueKind::PathLoss
    }
}

fn records_csv(schema: &Schema, records: &[RawRecord]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    write_measurements(&mut out, schema, records)?;
    Ok(out)
}

fn secs(t: std::time::Instant) -> f64 {
    t.elapsed().as_secs_f64()
}
