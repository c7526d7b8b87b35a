//! End-to-end orchestration: configuration, workspace layout, resumable
//! stage execution with a checksum manifest, and the oracle battery.
//!
//! A workspace holds `raw/ segments/ checkpoints/ traces/ reports/`, a
//! `manifest.toml` describing the last run, and a `.lock` file while a run
//! is active.

mod config;
mod stages;
mod verify;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    merge, parse_override, BridgeSection, DiffusionSection, EvaluateSection, PipelineConfig, Split, Stage,
    SynthSection, CHECKPOINTS, CONFIG_PRESETS, RAW, REPORTS, SEGMENTS, TRACES,
};
pub use stages::{
    evaluate_traces, load_segments, preprocess_dir, subsample, synth_to, train_model, translate_dir, DetectionReport,
};
pub use verify::{gaussian_order, observed_orders, verify_oracles, OracleCheck, OracleReport};

use crate::diffusion::CHECKPOINT_VERSION;
use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    /// Hash of the stage's config section and the checksums of its inputs.
    pub fingerprint: String,
    /// Output directory checksum; empty when the stage failed.
    pub output: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub biobridge: String,
    pub checkpoint_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            biobridge: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: CHECKPOINT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Unix seconds at the start of the run.
    pub started: u64,
    pub ok: bool,
    pub versions: Versions,
    pub stages: Vec<StageRecord>,
    /// Config after seed resolution.
    pub config: PipelineConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        toml::from_str(&io::read_text(path)?).map_err(|e| Error::format("run manifest", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::format("run manifest", e.to_string()))?;
        io::write_text(path, &text)
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// `stage -> output checksum` for the stages that produced output.
    pub fn checksums(&self) -> BTreeMap<Stage, String> {
        self.stages
            .iter()
            .filter(|r| r.status != StageStatus::Failed)
            .map(|r| (r.stage, r.output.clone()))
            .collect()
    }
}

/// Held for the duration of a run; removes the lock file on drop.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(workspace: &Path) -> Result<Self> {
        io::create_dir(workspace)?;
        let path = workspace.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(workspace.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn section_text<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config sections serialize")
}

/// The part of the config a stage depends on.
fn stage_config(cfg: &PipelineConfig, stage: Stage) -> String {
    match stage {
        Stage::Synth => section_text(&cfg.synth),
        Stage::Preprocess => section_text(&cfg.preprocess),
        Stage::Train => section_text(&cfg.diffusion),
        Stage::Translate => section_text(&cfg.bridge) + &section_text(&cfg.diffusion.edm),
        Stage::Evaluate => section_text(&cfg.evaluate),
    }
}

fn fingerprint(stage: Stage, config: &str, inputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_str());
    h.update([0]);
    h.update(config);
    for (k, v) in inputs {
        h.update([0]);
        h.update(k);
        h.update([1]);
        h.update(v);
    }
    hex::encode(h.finalize())
}

fn run_stage(cfg: &PipelineConfig, ws: &Path, stage: Stage) -> Result<()> {
    let out = ws.join(stage.output());
    if out.exists() {
        fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    }
    io::create_dir(&out)?;
    match stage {
        Stage::Synth => stages::synth_stage(cfg, ws),
        Stage::Preprocess => stages::preprocess_stage(cfg, ws),
        Stage::Train => stages::train_stage(cfg, ws),
        Stage::Translate => stages::translate_stage(cfg, ws),
        Stage::Evaluate => stages::evaluate_stage(cfg, ws),
    }
}

/// Execute the configured stages in dependency order inside
/// `cfg.workspace`. A stage is skipped when the previous manifest recorded
/// it as done with the same fingerprint and its output still has the
/// recorded checksum. The manifest is written after every stage; on
/// failure it records the error before it is returned.
pub fn run(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let ws = cfg.workspace.clone();
    let _lock = WorkspaceLock::acquire(&ws)?;
    let manifest_path = ws.join(MANIFEST_FILE);
    let previous = if manifest_path.is_file() {
        RunManifest::load(&manifest_path)
            .map_err(|e| log::warn!("ignoring unreadable manifest: {e}"))
            .ok()
    } else {
        None
    };
    let mut manifest = RunManifest {
        started: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        ok: false,
        versions: Versions::default(),
        stages: Vec::new(),
        config: cfg.clone(),
    };

    let mut stages = cfg.stages.clone();
    stages.sort();
    for stage in stages {
        let mut inputs = BTreeMap::new();
        for dir in stage.inputs() {
            let path = ws.join(dir);
            if !path.is_dir() {
                let err = Error::MissingArtifact {
                    stage: stage.to_string(),
                    path,
                };
                return Err(fail(&mut manifest, &manifest_path, stage, String::new(), inputs, 0.0, err));
            }
            inputs.insert(dir.to_string(), io::dir_checksum(&path)?);
        }
        let fp = fingerprint(stage, &stage_config(&cfg, stage), &inputs);
        let out = ws.join(stage.output());
        let reusable = previous
            .as_ref()
            .and_then(|p| p.stage(stage))
            .filter(|r| r.status != StageStatus::Failed && r.fingerprint == fp)
            .filter(|r| out.is_dir() && io::dir_checksum(&out).ok().as_deref() == Some(r.output.as_str()));
        if let Some(prev) = reusable {
            log::info!("{stage}: up to date, skipping");
            manifest.stages.push(StageRecord {
                status: StageStatus::Skipped,
                seconds: 0.0,
                ..prev.clone()
            });
            manifest.save(&manifest_path)?;
            continue;
        }
        log::info!("{stage}: running");
        let t0 = Instant::now();
        if let Err(err) = run_stage(&cfg, &ws, stage) {
            let secs = t0.elapsed().as_secs_f64();
            return Err(fail(&mut manifest, &manifest_path, stage, fp, inputs, secs, err));
        }
        manifest.stages.push(StageRecord {
            stage,
            status: StageStatus::Ok,
            fingerprint: fp,
            inputs,
            output: io::dir_checksum(&out)?,
            seconds: t0.elapsed().as_secs_f64(),
            error: None,
        });
        manifest.save(&manifest_path)?;
        log::info!("{stage}: done in {:.1} s", t0.elapsed().as_secs_f64());
    }
    manifest.ok = true;
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

fn fail(
    manifest: &mut RunManifest,
    path: &Path,
    stage: Stage,
    fingerprint: String,
    inputs: BTreeMap<String, String>,
    seconds: f64,
    err: Error,
) -> Error {
    manifest.stages.push(StageRecord {
        stage,
        status: StageStatus::Failed,
        fingerprint,
        inputs,
        output: String::new(),
        seconds,
        error: Some(err.to_string()),
    });
    manifest.ok = false;
    if let Err(e) = manifest.save(path) {
        log::error!("could not write manifest: {e}");
    }
    err
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_inputs_come_from_earlier_stages() {
        for stage in Stage::ALL {
            for dir in stage.inputs() {
                let producer = Stage::ALL.iter().find(|s| s.output() == *dir).unwrap();
                assert!(*producer < stage, "{stage} reads {dir}");
            }
            assert!(!stage.inputs().contains(&stage.output()));
        }
    }

    #[test]
    fn lock_excludes_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let first = WorkspaceLock::acquire(dir.path()).unwrap();
        assert!(matches!(WorkspaceLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(first);
        assert!(WorkspaceLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn fingerprint_tracks_config_and_inputs() {
        let mut inputs = BTreeMap::new();
        inputs.insert("raw".to_string(), "abc".to_string());
        let a = fingerprint(Stage::Preprocess, "x", &inputs);
        assert_eq!(a, fingerprint(Stage::Preprocess, "x", &inputs));
        assert_ne!(a, fingerprint(Stage::Preprocess, "y", &inputs));
        inputs.insert("raw".to_string(), "abd".to_string());
        assert_ne!(a, fingerprint(Stage::Preprocess, "x", &inputs));
    }

    #[test]
    fn translate_without_checkpoints_names_the_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        io::create_dir(&dir.path().join(SEGMENTS)).unwrap();
        let cfg = PipelineConfig {
            workspace: dir.path().to_path_buf(),
            stages: vec![Stage::Translate],
            ..PipelineConfig::smoke()
        };
        match run(&cfg) {
            Err(Error::MissingArtifact { stage, path }) => {
                assert_eq!(stage, "translate");
                assert_eq!(path, dir.path().join(CHECKPOINTS));
            }
            other => panic!("expected a missing artifact, got {other:?}"),
        }
        let manifest = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(!manifest.ok);
        assert_eq!(manifest.stages[0].status, StageStatus::Failed);
        assert!(!dir.path().join(LOCK_FILE).exists());
    }
}
