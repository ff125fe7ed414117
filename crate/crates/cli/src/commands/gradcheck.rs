use propsplat_core::training::{finite_difference_check, random_problem};
use propsplat_core::TrainConfig;

use crate::args::GradcheckArgs;
use crate::config::Settings;
use crate::error::{CliError, CliResult, Kind};

pub fn gradcheck(a: GradcheckArgs, settings: &Settings) -> CliResult<()> {
    if a.cases == 0 {
        return Err(CliError::usage("--cases must be at least 1"));
    }
    if !(a.tolerance.is_finite() && a.tolerance > 0.0) {
        return Err(CliError::usage("--tolerance must be positive"));
    }
    println!("case\tmode\tparams\tmax_rel_error\tworst");
    let mut worst_overall: f64 = 0.0;
    for case in 0..a.cases {
        let rssi = case % 2 == 1;
        let (model, batch) = random_problem(a.n, a.batch, rssi, settings.seed.wrapping_add(case as u64))?;
        let config = TrainConfig {
            rssi_mode: rssi,
            ..settings.train.clone()
        };
        let r = finite_difference_check(&model, &batch, &config, a.h)?;
        let worst = r.worst.map_or_else(|| "-".to_string(), |p| p.to_string());
        let mode = if rssi { "rssi" } else { "path_loss" };
        println!("{case}\t{mode}\t{}\t{:.3e}\t{worst}", r.n_params, r.max_rel_error);
        worst_overall = worst_overall.max(r.max_rel_error);
    }
    println!("max_rel_error\t{worst_overall:.3e}");
    if worst_overall < a.tolerance {
        Ok(())
    } else {
        Err(CliError::new(
            Kind::Gradcheck,
            format!("max relative error {worst_overall:.3e} exceeds tolerance {:e}", a.tolerance),
        ))
    }
}
