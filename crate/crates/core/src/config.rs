//! Run configuration shared by all commands, loaded from a flat TOML file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dictionary::TrainConfig;
use crate::logspec::LogAxisConfig;
use crate::parallel::Execution;
use crate::pursuit::PursuitConfig;
use crate::separate::SeparationOptions;
use crate::stft::StftConfig;
use crate::{Error, Result};

/// Every tunable of the pipeline. Missing keys take their defaults; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub zeta_samples: f64,
    pub hop_samples: usize,
    pub window_halfwidth: f64,

    pub f0: f64,
    pub alpha0: f64,
    pub log_bins: usize,

    pub q: f64,
    pub delta: f64,
    pub lambda: f64,
    pub n_pre: usize,
    pub n_itr: Option<usize>,

    pub n_ins: usize,
    pub n_spr: usize,
    pub n_trn: usize,
    pub n_har: usize,
    pub prune_interval: usize,
    pub head_start: Option<usize>,
    pub kappa: f64,
    pub seed: u64,

    pub use_mask: bool,
    pub gl_iters: usize,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let axis = LogAxisConfig::default();
        let tones = PursuitConfig::tones(1);
        Self {
            zeta_samples: 1024.0,
            hop_samples: 256,
            window_halfwidth: 6.0,
            f0: axis.f0,
            alpha0: axis.alpha0,
            log_bins: axis.n_bins,
            q: tones.q,
            delta: tones.delta,
            lambda: tones.lambda,
            n_pre: tones.n_pre,
            n_itr: None,
            n_ins: 2,
            n_spr: 1,
            n_trn: 100_000,
            n_har: 25,
            prune_interval: 500,
            head_start: None,
            kappa: 1e-3,
            seed: 0,
            use_mask: true,
            gl_iters: 1,
            output_dir: PathBuf::from("."),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Check every setting against the constraints of the stage using it.
    pub fn validate(&self) -> Result<()> {
        self.stft_config(48_000)?.validate()?;
        self.log_axis().validate()?;
        self.pursuit_config().validate()?;
        self.train_config(1.0).validate()?;
        if self.gl_iters == 0 {
            return Err(Error::Config("gl_iters must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn stft_config(&self, sample_rate_hz: u32) -> Result<StftConfig> {
        let cfg = StftConfig {
            zeta_samples: self.zeta_samples,
            hop_samples: self.hop_samples,
            window_halfwidth: self.window_halfwidth,
            ..StftConfig::new(sample_rate_hz)?
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn log_axis(&self) -> LogAxisConfig {
        LogAxisConfig {
            f0: self.f0,
            alpha0: self.alpha0,
            n_bins: self.log_bins,
        }
    }

    /// Pursuit settings for identifying instrument tones.
    pub fn pursuit_config(&self) -> PursuitConfig {
        PursuitConfig {
            q: self.q,
            delta: self.delta,
            lambda: self.lambda,
            n_pre: self.n_pre,
            n_itr: self.n_itr,
            ..PursuitConfig::tones(self.n_spr)
        }
    }

    pub fn train_config(&self, sigma_nil: f64) -> TrainConfig {
        TrainConfig {
            n_pat: 2 * self.n_ins,
            n_har: self.n_har,
            prune_interval: self.prune_interval,
            head_start: self.head_start.unwrap_or(self.prune_interval / 2),
            axis: self.log_axis(),
            pursuit: self.pursuit_config(),
            kappa: self.kappa,
            ..TrainConfig::new(self.n_ins, self.n_spr, self.n_trn, self.seed, sigma_nil)
        }
    }

    pub fn separation_options(&self, stft: StftConfig, exec: Execution) -> SeparationOptions {
        SeparationOptions {
            axis: self.log_axis(),
            pursuit: self.pursuit_config(),
            use_mask: self.use_mask,
            gl_iters: self.gl_iters,
            exec,
            ..SeparationOptions::new(stft, self.n_spr)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn file_values_override_defaults() {
        let c = RunConfig::from_toml_str("n_trn = 2000\nseed = 4\nuse_mask = false\n").unwrap();
        assert_eq!((c.n_trn, c.seed, c.use_mask), (2000, 4, false));
        assert_eq!(c.n_har, 25);
        let t = c.train_config(1.9);
        assert_eq!((t.n_pat, t.head_start, t.n_trn), (4, 250, 2000));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(RunConfig::from_toml_str("n_trnn = 3").is_err());
        assert!(RunConfig::from_toml_str("n_trn = \"many\"").is_err());
        let c = RunConfig::from_toml_str("n_trn = 700").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig::from_toml_str("q = 1.5").unwrap();
        assert!(c.validate().is_err());
    }
}
