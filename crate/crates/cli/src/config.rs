//! Optional TOML configuration. Every table and key is optional; unknown
//! keys are rejected. Command-line flags override file values.

use std::path::{Path, PathBuf};

use cpforge::active::SessionConfig;
use cpforge::cp::DEFAULT_THETA;
use cpforge::dda::DdaConfig;
use cpforge::quality::Hyper;
use cpforge::sampler::SamplerParams;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const DEFAULT_PORT: u16 = 8714;
pub const PORT_ENV: &str = "CPFORGE_PORT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub paths: Paths,
    pub server: Server,
    pub sampler: Sampler,
    pub training: Training,
    pub annotation: Annotation,
    pub cps: Cps,
    pub level: LevelCfg,
    pub dda: Dda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub clusters: PathBuf,
    pub labels: PathBuf,
    pub model: PathBuf,
    pub cps: PathBuf,
    pub level: PathBuf,
    pub trace: PathBuf,
    pub sessions: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "dataset.jsonl".into(),
            clusters: "clusters.json".into(),
            labels: "labels.jsonl".into(),
            model: "model.txt".into(),
            cps: "cps.jsonl".into(),
            level: "level.txt".into(),
            trace: "trace.csv".into(),
            sessions: "sessions".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Server {
    pub port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampler {
    pub count: usize,
    pub gap_prob: f64,
    pub max_gap: usize,
    pub enemy_rate: f64,
    pub coin_rate: f64,
    pub pipe_prob: f64,
    pub platform_prob: f64,
    pub elev_step_prob: f64,
    pub base_elev: usize,
}

impl Default for Sampler {
    fn default() -> Self {
        let p = SamplerParams::default();
        Sampler {
            count: 5000,
            gap_prob: p.gap_prob,
            max_gap: p.max_gap,
            enemy_rate: p.enemy_rate,
            coin_rate: p.coin_rate,
            pipe_prob: p.pipe_prob,
            platform_prob: p.platform_prob,
            elev_step_prob: p.elev_step_prob,
            base_elev: p.base_elev,
        }
    }
}

impl Sampler {
    pub fn params(&self, seed: u64) -> SamplerParams {
        SamplerParams {
            gap_prob: self.gap_prob,
            max_gap: self.max_gap,
            enemy_rate: self.enemy_rate,
            coin_rate: self.coin_rate,
            pipe_prob: self.pipe_prob,
            platform_prob: self.platform_prob,
            elev_step_prob: self.elev_step_prob,
            base_elev: self.base_elev,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Training {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for Training {
    fn default() -> Self {
        let h = Hyper::default();
        Training {
            l2: h.l2,
            lr: h.lr,
            epochs: h.epochs,
        }
    }
}

impl Training {
    pub fn hyper(&self) -> Hyper {
        Hyper {
            l2: self.l2,
            lr: self.lr,
            epochs: self.epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Annotation {
    pub budget: usize,
    pub holdout_frac: f64,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for Annotation {
    fn default() -> Self {
        let s = SessionConfig::default();
        let k = cpforge::clustering::DEFAULT_K_RANGE;
        Annotation {
            budget: s.budget,
            holdout_frac: s.holdout_frac,
            k_min: *k.start(),
            k_max: *k.end(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Cps {
    pub count: usize,
    pub theta: f64,
    pub max_attempts: usize,
}

impl Default for Cps {
    fn default() -> Self {
        Cps {
            count: 1000,
            theta: DEFAULT_THETA,
            max_attempts: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelCfg {
    pub length: usize,
    /// Candidates generated per pool expansion when no CP set is given.
    pub batch: usize,
}

impl Default for LevelCfg {
    fn default() -> Self {
        LevelCfg { length: 12, batch: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dda {
    pub player: f64,
    pub episodes: usize,
    pub tail: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub tau: f64,
    pub start_bin: usize,
    pub q_init: f64,
}

impl Default for Dda {
    fn default() -> Self {
        let c = DdaConfig::default();
        Dda {
            player: 0.5,
            episodes: 500,
            tail: 100,
            alpha: c.alpha,
            gamma: c.gamma,
            epsilon_start: c.epsilon_start,
            epsilon_decay: c.epsilon_decay,
            epsilon_floor: c.epsilon_floor,
            tau: c.tau,
            start_bin: c.start_bin,
            q_init: c.q_init,
        }
    }
}

impl Dda {
    pub fn config(&self) -> DdaConfig {
        DdaConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon_start: self.epsilon_start,
            epsilon_decay: self.epsilon_decay,
            epsilon_floor: self.epsilon_floor,
            tau: self.tau,
            start_bin: self.start_bin,
            q_init: self.q_init,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text).map_err(|msg| AppError::Config {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    /// `CPFORGE_PORT` beats the config file, which beats the default.
    pub fn port(&self) -> Result<u16> {
        match std::env::var(PORT_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| AppError::Usage(format!("{PORT_ENV}={v:?} is not a port number"))),
            Err(_) => Ok(self.server.port.unwrap_or(DEFAULT_PORT)),
        }
    }
}

/// Fails with an `IoError` naming `path` unless it is an existing file.
pub fn require_file(path: &Path) -> Result<()> {
    match std::fs::metadata(path) {
        Ok(m) if m.is_file() => Ok(()),
        Ok(_) => Err(AppError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a regular file"),
        )),
        Err(e) => Err(AppError::io(path, e)),
    }
}

/// Fails unless the parent directory of an output path exists.
pub fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(AppError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
        )),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let c = Config::parse("seed = 9\n[cps]\ntheta = 0.7\n[dda]\nplayer = 0.8\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.cps.theta, 0.7);
        assert_eq!(c.cps.count, Cps::default().count);
        assert_eq!(c.dda.config(), DdaConfig::default());
        assert_eq!(c.sampler.params(3), SamplerParams { seed: 3, ..Default::default() });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("sed = 1").is_err());
        let e = Config::parse("[sampler]\ngap_probability = 0.1").unwrap_err();
        assert!(e.contains("gap_probability"), "{e}");
        assert!(Config::parse("[extra]\nx = 1").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string(&Config::default()).unwrap();
        assert_eq!(Config::parse(&text).unwrap(), Config::default());
    }
}
