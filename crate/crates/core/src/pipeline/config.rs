use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bridge::{SolverKind, SolverSpec, PRESETS};
use crate::diffusion::{EdmConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::nn::UNetConfig;
use crate::preprocess::{Modality, PreprocessConfig};
use crate::synth::SynthConfig;

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Preprocess,
    Train,
    Translate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Synth,
        Stage::Preprocess,
        Stage::Train,
        Stage::Translate,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Translate => "translate",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Workspace directories the stage reads.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &[],
            Stage::Preprocess => &[RAW],
            Stage::Train => &[SEGMENTS],
            Stage::Translate => &[SEGMENTS, CHECKPOINTS],
            Stage::Evaluate => &[TRACES],
        }
    }

    /// The workspace directory the stage writes.
    pub fn output(self) -> &'static str {
        match self {
            Stage::Synth => RAW,
            Stage::Preprocess => SEGMENTS,
            Stage::Train => CHECKPOINTS,
            Stage::Translate => TRACES,
            Stage::Evaluate => REPORTS,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

pub const RAW: &str = "raw";
pub const SEGMENTS: &str = "segments";
pub const CHECKPOINTS: &str = "checkpoints";
pub const TRACES: &str = "traces";
pub const REPORTS: &str = "reports";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub eeg: SynthConfig,
    pub fmeg: SynthConfig,
}

impl SynthSection {
    pub fn get(&self, m: Modality) -> &SynthConfig {
        match m {
            Modality::Eeg => &self.eeg,
            Modality::Fmeg => &self.fmeg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub edm: EdmConfig,
    pub eeg: TrainConfig,
    pub fmeg: TrainConfig,
}

impl DiffusionSection {
    pub fn get(&self, m: Modality) -> &TrainConfig {
        match m {
            Modality::Eeg => &self.eeg,
            Modality::Fmeg => &self.fmeg,
        }
    }
}

/// Which segment split gets translated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSection {
    /// `paper-heun`, `paper-ddib`, or `custom` to use `solver` and `steps`.
    pub preset: String,
    pub solver: SolverKind,
    pub steps: usize,
    pub cycle: bool,
    pub split: Split,
    /// Evenly spaced subset of the split; 0 keeps every segment.
    pub max_segments: usize,
    /// Rows per solver batch.
    pub chunk: usize,
}

impl Default for BridgeSection {
    fn default() -> Self {
        Self {
            preset: "paper-heun".into(),
            solver: SolverKind::Heun,
            steps: 30,
            cycle: true,
            split: Split::Test,
            max_segments: 0,
            chunk: 64,
        }
    }
}

impl BridgeSection {
    pub fn spec(&self, edm: &EdmConfig) -> Result<SolverSpec> {
        if self.preset == "custom" {
            SolverSpec::karras(self.solver, self.steps, edm)
        } else {
            SolverSpec::preset(&self.preset, edm)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Also write the full-scale reference rows next to the measured table.
    pub reference_rows: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { reference_rows: true }
    }
}

/// Everything a pipeline run needs. Loaded from TOML on top of a named
/// preset, so a config file only has to list what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base preset the file was layered on.
    pub preset: String,
    /// When set, replaces every per-stage seed.
    pub seed: Option<u64>,
    pub workspace: PathBuf,
    pub stages: Vec<Stage>,
    pub synth: SynthSection,
    pub preprocess: PreprocessConfig,
    pub diffusion: DiffusionSection,
    pub bridge: BridgeSection,
    pub evaluate: EvaluateSection,
}

pub const CONFIG_PRESETS: [&str; 3] = ["desk", "paper", "smoke"];

impl PipelineConfig {
    /// Ten recordings per modality, the narrow network for 2,000
    /// iterations, `paper-heun` cycles over the test split.
    pub fn desk() -> Self {
        let diffusion = DiffusionSection {
            edm: EdmConfig::default(),
            eeg: TrainConfig::desk(),
            fmeg: TrainConfig::desk(),
        };
        Self {
            preset: "desk".into(),
            seed: Some(0),
            workspace: PathBuf::from("run"),
            stages: Stage::ALL.to_vec(),
            synth: SynthSection {
                eeg: SynthConfig::eeg_like(10, 0),
                fmeg: SynthConfig::fmeg_like(10, 0),
            },
            preprocess: PreprocessConfig::default(),
            diffusion,
            bridge: BridgeSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }

    /// Full network and 30,000 iterations per model.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            diffusion: DiffusionSection {
                edm: EdmConfig::default(),
                eeg: TrainConfig::paper(),
                fmeg: TrainConfig::paper(),
            },
            synth: SynthSection {
                eeg: SynthConfig::eeg_like(30, 0),
                fmeg: SynthConfig::fmeg_like(30, 0),
            },
            ..Self::desk()
        }
    }

    /// Seconds-long plumbing check: tiny network, a few iterations, a short
    /// custom solver and a handful of segments.
    pub fn smoke() -> Self {
        let train = TrainConfig {
            iterations: 20,
            batch_size: 8,
            architecture: UNetConfig::tiny(),
            log_every: 0,
            ..TrainConfig::desk()
        };
        let short = |cfg: SynthConfig| SynthConfig { duration: 60.0, ..cfg };
        Self {
            preset: "smoke".into(),
            synth: SynthSection {
                eeg: short(SynthConfig::eeg_like(5, 0)),
                fmeg: short(SynthConfig::fmeg_like(5, 0)),
            },
            diffusion: DiffusionSection {
                edm: EdmConfig::default(),
                eeg: train.clone(),
                fmeg: train,
            },
            bridge: BridgeSection {
                preset: "custom".into(),
                steps: 6,
                max_segments: 6,
                ..BridgeSection::default()
            },
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!(
                "unknown config preset '{other}' (expected one of {})",
                CONFIG_PRESETS.join(", ")
            ))),
        }
    }

    /// Layer `text` (TOML) and then `overrides` (`a.b=value`) on the preset
    /// named by the file's `preset` key, defaulting to `desk`.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut layered = toml::Table::new();
        merge(&mut layered, user);
        for o in overrides {
            let (path, value) = parse_override(o)?;
            set_path(&mut layered, &path, value)?;
        }
        let preset = match layered.get("preset") {
            None => "desk".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let mut base = toml::Table::try_from(Self::preset(&preset)?).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, layered);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_toml_with(&io::read_text(path)?, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with the global seed pushed into every stage. Synthesis for the
    /// two modalities and the two models get distinct derived seeds.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if let Some(seed) = self.seed {
            out.synth.eeg.rng_seed = seed;
            out.synth.fmeg.rng_seed = seed ^ 0x5eed_f3e6;
            out.preprocess.seed = seed;
            out.diffusion.eeg.seed = seed;
            out.diffusion.fmeg.seed = seed.wrapping_add(1);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for m in Modality::ALL {
            let s = self.synth.get(m);
            s.validate()?;
            if s.modality != m {
                return Err(Error::Config(format!("synth.{m}.modality is {}", s.modality)));
            }
            self.diffusion.get(m).validate()?;
        }
        self.diffusion.edm.validate()?;
        self.bridge.spec(&self.diffusion.edm)?;
        if self.bridge.chunk == 0 {
            return Err(Error::Config("bridge.chunk must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.preprocess.test_fraction) {
            return Err(Error::Config("preprocess.test_fraction must lie in [0, 1)".into()));
        }
        let mut sorted = self.stages.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.stages.len() {
            return Err(Error::Config("stages listed twice".into()));
        }
        if self.bridge.preset != "custom" && !PRESETS.iter().any(|(n, _, _)| *n == self.bridge.preset) {
            return Err(Error::Config(format!("unknown solver preset '{}'", self.bridge.preset)));
        }
        Ok(())
    }
}

/// Recursively overlay `top` onto `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`. The value is read as a TOML literal when it parses as
/// one, otherwise as a bare string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{text}' is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' is not a section")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_preset() {
        assert_eq!(PipelineConfig::from_toml_with("", &[]).unwrap(), PipelineConfig::desk());
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for name in CONFIG_PRESETS {
            let cfg = PipelineConfig::preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(PipelineConfig::from_toml_with(&text, &[]).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn file_and_flags_layer_on_preset() {
        let text = "preset = \"smoke\"\n[bridge]\nsteps = 9\n";
        let cfg = PipelineConfig::from_toml_with(
            text,
            &["diffusion.eeg.iterations=7".into(), "workspace=/tmp/x".into()],
        )
        .unwrap();
        assert_eq!(cfg.bridge.steps, 9);
        assert_eq!(cfg.diffusion.eeg.iterations, 7);
        assert_eq!(cfg.diffusion.fmeg.iterations, 20);
        assert_eq!(cfg.workspace, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_and_values_are_rejected() {
        assert!(PipelineConfig::from_toml_with("", &["bridge.preset=fast".into()]).is_err());
        assert!(PipelineConfig::from_toml_with("", &["bridge.steps=1".into(), "bridge.preset=custom".into()]).is_err());
        assert!(PipelineConfig::from_toml_with("preset = \"huge\"", &[]).is_err());
        assert!(PipelineConfig::from_toml_with("", &["noequals".into()]).is_err());
        assert!(PipelineConfig::from_toml_with("[bridge]\nstepz = 3\n", &[]).is_err());
    }

    #[test]
    fn global_seed_reaches_every_stage() {
        let cfg = PipelineConfig {
            seed: Some(42),
            ..PipelineConfig::smoke()
        }
        .resolved();
        assert_eq!(cfg.synth.eeg.rng_seed, 42);
        assert_eq!(cfg.preprocess.seed, 42);
        assert_eq!(cfg.diffusion.eeg.seed, 42);
        assert_ne!(cfg.diffusion.fmeg.seed, 42);
        assert_ne!(cfg.synth.fmeg.rng_seed, 42);
    }
}
