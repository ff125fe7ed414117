use std::path::Path;

use propsplat_core::{Parallelism, TrainConfig};
use serde::Deserialize;

use crate::args::{GlobalArgs, TrainOverrides};
use crate::error::{CliError, CliResult, Kind};

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub strict: Option<bool>,
    pub train: TrainConfig,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::new(Kind::Usage, format!("config {}: {e}", path.display())))
    }
}

/// Run-wide settings after applying flags over the config file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub threads: Option<usize>,
    pub strict: bool,
    pub train: TrainConfig,
}

impl Settings {
    pub fn resolve(global: &GlobalArgs) -> CliResult<Self> {
        let file = match &global.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let seed = global.seed.or(file.seed).unwrap_or(file.train.seed);
        let strict = global.strict || file.strict.unwrap_or(false);
        let threads = global.threads.or(file.threads);
        if threads == Some(0) {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        let mut train = file.train;
        train.seed = seed;
        train.strict = strict;
        Ok(Self {
            seed,
            threads,
            strict,
            train,
        })
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.strict {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        }
    }

    /// Training configuration with command-line overrides applied.
    pub fn train_config(&self, o: &TrainOverrides) -> CliResult<TrainConfig> {
        let mut c = self.train.clone();
        let set_usize = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set_usize(&mut c.n_gaussians, o.n_gaussians);
        set_usize(&mut c.iterations, o.iterations);
        set_usize(&mut c.batch_size, o.batch_size);
        set(&mut c.lr.mu, o.lr_mu);
        set(&mut c.lr.log_scale, o.lr_log_scale);
        set(&mut c.lr.quat, o.lr_quat);
        set(&mut c.lr.offset, o.lr_offset);
        set(&mut c.lr.gamma, o.lr_gamma);
        set(&mut c.lr.p0, o.lr_p0);
        set(&mut c.weight_exponent, o.weight_exponent);
        set(&mut c.init_sigma0, o.init_sigma0);
        set(&mut c.gamma_init, o.gamma_init);
        c.rssi_mode |= o.rssi_mode;
        c.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;

    fn global(config: Option<PathBuf>, seed: Option<u64>, strict: bool) -> GlobalArgs {
        GlobalArgs {
            seed,
            threads: None,
            strict,
            config,
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("sed = 3").is_err());
        let e = FileConfig::parse("[train]\nlearning_rate = 0.1").unwrap_err();
        assert!(e.contains("learning_rate"), "{e}");
        assert!(FileConfig::parse("[train.lr]\nmu = 0.05\n[train.ablation]\nisotropic = true").is_ok());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 9\n[train]\niterations = 77\n[train.lr]\nmu = 0.05\n").unwrap();

        let s = Settings::resolve(&global(Some(path.clone()), None, false)).unwrap();
        assert_eq!((s.seed, s.train.seed, s.train.iterations), (9, 9, 77));
        assert!(!s.strict);

        let s = Settings::resolve(&global(Some(path), Some(4), true)).unwrap();
        assert_eq!(s.seed, 4);
        assert!(s.train.strict);
        let o = TrainOverrides {
            iterations: Some(5),
            ..Default::default()
        };
        let c = s.train_config(&o).unwrap();
        assert_eq!((c.iterations, c.lr.mu, c.n_gaussians), (5, 0.05, TrainConfig::default().n_gaussians));
    }

    #[test]
    fn invalid_override_is_usage_error() {
        let s = Settings::resolve(&global(None, None, false)).unwrap();
        let o = TrainOverrides {
            lr_mu: Some(-1.0),
            ..Default::default()
        };
        assert_eq!(s.train_config(&o).unwrap_err().kind, Kind::Usage);
    }
}
