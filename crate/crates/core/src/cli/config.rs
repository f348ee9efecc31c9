use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{Filters, Horizon, ScenarioConfig, ScenarioKind};
use crate::cody::CodyConfig;
use crate::derender::DerenderConfig;
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;

/// Threshold grid of the rejection-rate study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub candidates: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lo: 1.0,
            hi: 1000.0,
            points: 25,
            candidates: 500,
        }
    }
}

/// Everything a run depends on. Written verbatim next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub n_objects: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub eps: f64,
    pub n_experiments: usize,
    pub seed: u64,
    pub max_attempts: u64,
    pub filters: Filters,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Train and evaluate dynamics on simulator states instead of a
    /// learned keypoint detector.
    pub oracle_keypoints: bool,
    /// Frame size for rasterized outputs when no decoder is involved.
    pub raster_size: usize,
    pub derender: DerenderConfig,
    pub cody: CodyConfig,
    pub probe: ProbeConfig,
    pub fps_grid: Vec<f64>,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioKind::Balls,
            n_objects: 3,
            duration_s: 3.0,
            fps: 25.0,
            eps: 47.5,
            n_experiments: 500,
            seed: 0,
            max_attempts: 1_000_000,
            filters: Filters::ALL,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            oracle_keypoints: false,
            raster_size: 32,
            derender: DerenderConfig {
                frame_size: 32,
                steps: 3000,
                ..Default::default()
            },
            cody: CodyConfig::default(),
            probe: ProbeConfig::default(),
            fps_grid: vec![5.0, 25.0],
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let mut cfg = match self.scenario {
            ScenarioKind::Balls => ScenarioConfig::balls(self.n_objects),
            ScenarioKind::Collision => ScenarioConfig::collision(),
        };
        cfg.horizon = Horizon {
            duration: self.duration_s,
            fps: self.fps,
        };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario == ScenarioKind::Collision && self.n_objects != 2 {
            return Err(Error::config("n_objects", "the collision scenario has exactly 2 objects"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config("duration_s", "must be positive"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::config("fps", "must be positive"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("eps", "must be positive"));
        }
        if self.raster_size < 4 {
            return Err(Error::config("raster_size", "must be at least 4"));
        }
        if self.fps_grid.is_empty() || self.fps_grid.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::config("fps_grid", "needs positive entries"));
        }
        if !(self.sweep.lo > 0.0 && self.sweep.hi > self.sweep.lo) || self.sweep.points == 0 {
            return Err(Error::config("sweep", "needs 0 < lo < hi and at least one point"));
        }
        self.scenario_config().validate().map_err(|e| Error::config("scenario", e.to_string()))?;
        self.derender.validate()?;
        self.cody.validate()?;
        if !self.oracle_keypoints && self.cody.c != self.derender.c {
            return Err(Error::config(
                "cody.c",
                format!("must match derender.c ({}) when keypoints are learned", self.derender.c),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, first 16 hex digits.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&body))[..16].to_string()
    }

    /// Writes `config.json` (effective config, hash, seed, version) into
    /// `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let doc = serde_json::json!({
            "config_hash": self.hash(),
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self,
        });
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(&doc).map_err(Error::json(&path))?;
        std::fs::write(&path, text + "\n").map_err(Error::io(&path))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out_dir.join(stage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// 80/10/10 assignment from a hash of the experiment id.
pub fn split_of(id: &str) -> Split {
    let digest = Sha256::digest(id.as_bytes());
    let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % 10;
    match bucket {
        0..=7 => Split::Train,
        8 => Split::Val,
        _ => Split::Test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"n_experiments": 7, "cody": {"steps": 3}}"#).unwrap();
        let cfg = RunConfig::from_file(&p).unwrap();
        assert_eq!(cfg.n_experiments, 7);
        assert_eq!(cfg.cody.steps, 3);
        assert_eq!(cfg.cody.hidden, CodyConfig::default().hidden);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn unknown_fields_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"n_experimnts": 7}"#).unwrap();
        let err = RunConfig::from_file(&p).unwrap_err().to_string();
        assert!(err.contains("n_experimnts"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn validation_names_fields() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.eps = -1.0;
        assert!(c.validate().unwrap_err().to_string().contains("eps"));
        let mut c = RunConfig::default();
        c.cody.c = 2;
        assert!(c.validate().unwrap_err().to_string().contains("cody.c"));
        c.oracle_keypoints = true;
        c.validate().unwrap();
    }

    #[test]
    fn split_is_stable_and_roughly_balanced() {
        let ids: Vec<String> = (0..2000u64).map(crate::bench::Experiment::id_for_seed).collect();
        let train = ids.iter().filter(|i| split_of(i) == Split::Train).count();
        let test = ids.iter().filter(|i| split_of(i) == Split::Test).count();
        assert!((1500..1700).contains(&train), "{train}");
        assert!((140..260).contains(&test), "{test}");
        assert!(ids.iter().all(|i| split_of(i) == split_of(i)));
    }
}
