use std::fmt::Write as _;
use std::time::Instant;

use propsplat_core::eval::{error_metrics, MetricReport};
use propsplat_core::io::{encode_model, ValueKind};
use propsplat_core::training::{apply_ablation, train_with_progress, HistoryEntry};
use propsplat_core::{Ablation, LinkQuery, Measurement, ModelState, PreparedModel, TrainConfig, TrainOutcome};

use super::{create_out_dir, read_input, secs, write_output, Dataset};
use crate::args::{AblateArgs, AblationFlag, TrainArgs, TrainOverrides};
use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

fn ablation_of(flags: &[AblationFlag]) -> Ablation {
    let mut a = Ablation::default();
    for f in flags {
        match f {
            AblationFlag::NoGaussians => a.no_gaussians = true,
            AblationFlag::Iso => a.isotropic = true,
            AblationFlag::FixedPle => a.fixed_ple = true,
        }
    }
    a
}

/// Config for a dataset: RSSI-valued files imply RSSI mode, and asking for
/// RSSI mode on path-loss data is an error.
fn config_for(settings: &Settings, o: &TrainOverrides, data: &Dataset) -> CliResult<TrainConfig> {
    let mut config = settings.train_config(o)?;
    match data.value_kind() {
        ValueKind::Rssi => config.rssi_mode = true,
        ValueKind::PathLoss if config.rssi_mode => {
            return Err(CliError::usage("--rssi-mode needs RSSI-valued data, but the file holds path loss"))
        }
        ValueKind::PathLoss => {}
    }
    Ok(config)
}

fn fit(data: &Dataset, config: &TrainConfig, log_every: usize) -> CliResult<TrainOutcome> {
    let mut out = train_with_progress(&data.measurements, config, |h: &HistoryEntry| {
        if log_every > 0 && (h.iteration + 1) % log_every == 0 {
            eprintln!("iter {}\tloss {:.4}\tgamma {:.4}\t{:.1}s", h.iteration + 1, h.loss, h.gamma, h.wall_s);
        }
    })?;
    out.model.origin = data.info.origin;
    Ok(out)
}

fn history_tsv(history: &[HistoryEntry]) -> String {
    let mut s = String::from(HistoryEntry::TSV_HEADER);
    s.push('\n');
    for h in history {
        s.push_str(&h.to_tsv());
        s.push('\n');
    }
    s
}

pub fn train(a: TrainArgs, settings: &Settings) -> CliResult<()> {
    let mut manifest = RunManifest::new("train", settings);
    let bytes = read_input(&a.data, &mut manifest)?;
    let data = Dataset::parse(&bytes, None)?;
    let config = apply_ablation(&config_for(settings, &a.overrides, &data)?, ablation_of(&a.ablate));
    manifest.set_config(&config);
    create_out_dir(&a.out_dir)?;

    let start = Instant::now();
    let out = fit(&data, &config, a.log_every)?;
    let train_s = secs(start);
    manifest.time("train", train_s);

    let model_path = a.out_dir.join("model.psm");
    write_output(model_path.clone(), encode_model(&out.model), &mut manifest)?;
    write_output(a.out_dir.join("history.tsv"), history_tsv(&out.history), &mut manifest)?;
    manifest.write(&a.out_dir)?;

    let m = &out.model;
    println!("records\t{}", data.measurements.len());
    println!("gaussians\t{}", m.len());
    println!("gamma\t{:.4}", m.gamma);
    if let Some(p0) = m.p0_dbm {
        println!("p0_dbm\t{p0:.3}");
    }
    println!("initial_loss\t{:.4}", out.initial_loss);
    println!("final_loss\t{:.4}", out.final_loss);
    println!("train_s\t{train_s:.2}");
    println!("model\t{}", model_path.display());
    Ok(())
}

pub(super) fn evaluate_on(model: &ModelState, test: &[Measurement], settings: &Settings) -> CliResult<MetricReport> {
    let queries: Vec<LinkQuery> = test
        .iter()
        .map(|m| LinkQuery::new(m.tx, m.rx, m.frequency_hz))
        .collect::<Result<_, _>>()?;
    let pred = PreparedModel::new(model).predict_batch(&queries, settings.parallelism())?;
    let truth: Vec<f64> = test.iter().map(|m| m.target).collect();
    Ok(error_metrics(&pred, &truth)?)
}

pub fn ablate(a: AblateArgs, settings: &Settings) -> CliResult<()> {
    let mut manifest = RunManifest::new("ablate", settings);
    let train_bytes = read_input(&a.train, &mut manifest)?;
    let train_data = Dataset::parse(&train_bytes, None)?;
    let test_bytes = read_input(&a.test, &mut manifest)?;
    let test_data = Dataset::parse(&test_bytes, train_data.info.origin)?;
    if test_data.value_kind() != train_data.value_kind() {
        return Err(CliError::usage(format!(
            "train holds {} but test holds {}",
            train_data.value_kind(),
            test_data.value_kind()
        )));
    }
    let base = config_for(settings, &a.overrides, &train_data)?;
    manifest.set_config(&base);
    create_out_dir(&a.out_dir)?;

    let variants: [(&str, &[AblationFlag]); 4] = [
        ("full", &[]),
        ("no-gaussians", &[AblationFlag::NoGaussians]),
        ("iso", &[AblationFlag::Iso]),
        ("fixed-ple", &[AblationFlag::FixedPle]),
    ];
    let mut table = format!("variant\tgamma\t{}\ttrain_s\n", MetricReport::TSV_HEADER);
    print!("{table}");
    for (name, flags) in variants {
        let config = apply_ablation(&base, ablation_of(flags));
        let start = Instant::now();
        let out = fit(&train_data, &config, 0)?;
        let train_s = secs(start);
        manifest.time(&format!("train_{name}"), train_s);
        let report = evaluate_on(&out.model, &test_data.measurements, settings)?;
        write_output(a.out_dir.join(format!("model_{name}.psm")), encode_model(&out.model), &mut manifest)?;
        let row = format!("{name}\t{:.4}\t{}\t{train_s:.2}", out.model.gamma, report.to_tsv());
        println!("{row}");
        writeln!(table, "{row}").unwrap();
    }
    write_output(a.out_dir.join("ablation.tsv"), table, &mut manifest)?;
    manifest.write(&a.out_dir)?;
    Ok(())
}
