use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{BridgeSection, PipelineConfig, Split, CHECKPOINTS, RAW, REPORTS, SEGMENTS, TRACES};
use crate::bridge::{load_traces, run_batched, save_traces, TranslationTrace};
use crate::diffusion::{smooth, train_with_progress, Checkpoint, EdmConfig, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::evaluate::{Evaluation, FULL_SCALE_REFERENCE};
use crate::io;
use crate::preprocess::{prepare_dataset, Modality, PreparedData, PreprocessConfig, Recording, Segment, SegmentDataset};
use crate::synth::{detection_score, read_ground_truth, write_ground_truth, write_recordings, GroundTruth, SynthConfig};

const GROUND_TRUTH: &str = "ground_truth.tsv";
const DETECTION: &str = "detection.toml";

fn require(stage: &str, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            stage: stage.to_string(),
            path,
        })
    }
}

/// Write one synthetic recording family to `dir/<id>/` plus
/// `dir/ground_truth.tsv`.
pub fn synth_to(cfg: &SynthConfig, dir: &Path) -> Result<Vec<GroundTruth>> {
    cfg.validate()?;
    let truths = write_recordings(cfg, dir)?;
    write_ground_truth(&dir.join(GROUND_TRUTH), &truths)?;
    Ok(truths)
}

/// Burst-detection agreement with the synthetic ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub modality: Modality,
    pub recordings: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Preprocess every recording below `input` into `output`. When `input`
/// carries a ground-truth file the detection score is computed and saved as
/// `output/detection.toml`.
pub fn preprocess_dir(
    input: &Path,
    output: &Path,
    modality: Modality,
    cfg: &PreprocessConfig,
) -> Result<(PreparedData, Option<DetectionReport>)> {
    let recs = Recording::load_all(input)?;
    if recs.is_empty() {
        return Err(Error::MissingArtifact {
            stage: "preprocess".into(),
            path: input.to_path_buf(),
        });
    }
    if let Some(bad) = recs.iter().find(|r| r.modality != modality) {
        return Err(Error::ModalityMismatch {
            expected: modality.to_string(),
            got: bad.modality.to_string(),
        });
    }
    let prepared = prepare_dataset(&recs, cfg)?;
    prepared.save(output)?;
    let gt_path = input.join(GROUND_TRUTH);
    let report = if gt_path.is_file() {
        let truths = read_ground_truth(&gt_path)?;
        let score = detection_score(&truths, &prepared.recordings);
        let report = DetectionReport {
            modality: prepared.modality,
            recordings: truths.len(),
            precision: score.precision,
            recall: score.recall,
            f1: score.f1,
        };
        let text = toml::to_string(&report).map_err(|e| Error::format("detection report", e.to_string()))?;
        io::write_text(&output.join(DETECTION), &text)?;
        Some(report)
    } else {
        None
    };
    Ok((prepared, report))
}

/// Load a segment set. `dir` is either a preprocessing output (with
/// `train/` and `test/`) or a single segment dataset directory.
pub fn load_segments(dir: &Path, split: Split) -> Result<SegmentDataset> {
    let nested = dir.join(split.as_str());
    if nested.is_dir() {
        SegmentDataset::load(&nested)
    } else {
        SegmentDataset::load(dir)
    }
}

/// Train on the training split below `data` and write the checkpoint to
/// `out` and the per-iteration loss to `<out stem>_loss.tsv`.
pub fn train_model(data: &Path, edm: &EdmConfig, cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    let set = load_segments(data, Split::Train)?;
    let outcome = train_with_progress(&set, edm, cfg, |_, _| {})?;
    outcome.checkpoint.save(out)?;
    let smoothed = smooth(&outcome.trace, 50);
    let mut text = String::from("iteration\tloss\tsmoothed\n");
    for (i, (l, s)) in outcome.trace.iter().zip(&smoothed).enumerate() {
        writeln!(text, "{}\t{l:.6e}\t{s:.6e}", i + 1).unwrap();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    io::write_text(&out.with_file_name(format!("{stem}_loss.tsv")), &text)?;
    Ok(outcome)
}

/// Evenly spaced subset of at most `max` items; 0 keeps everything.
pub fn subsample<T: Clone>(items: &[T], max: usize) -> Vec<T> {
    if max == 0 || items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|i| items[i * items.len() / max].clone()).collect()
}

/// Translate (or cycle) the `bridge.split` segments below `data` from the
/// source checkpoint's modality to the target's and save the traces.
pub fn translate_dir(
    src_ckpt: &Path,
    tgt_ckpt: &Path,
    data: &Path,
    bridge: &BridgeSection,
    out: &Path,
) -> Result<Vec<TranslationTrace>> {
    let src = Checkpoint::load(&require("translate", src_ckpt.to_path_buf())?)?;
    let tgt = Checkpoint::load(&require("translate", tgt_ckpt.to_path_buf())?)?;
    if src.edm != tgt.edm {
        log::warn!("source and target checkpoints were trained with different noise settings");
    }
    let set = load_segments(&require("translate", data.to_path_buf())?, bridge.split)?;
    if set.modality != src.modality {
        return Err(Error::ModalityMismatch {
            expected: src.modality.to_string(),
            got: set.modality.to_string(),
        });
    }
    let segments: Vec<Segment> = subsample(&set.segments, bridge.max_segments);
    if segments.is_empty() {
        return Err(Error::Empty("segments to translate"));
    }
    let spec = bridge.spec(&src.edm)?;
    log::info!(
        "{} -> {}: {} segments, {spec}, cycle {}",
        src.modality,
        tgt.modality,
        segments.len(),
        bridge.cycle
    );
    let (sd, td) = (src.denoiser(), tgt.denoiser());
    let traces = run_batched(&sd, &td, &segments, &spec, bridge.cycle, bridge.chunk, |done, total| {
        log::info!("{} -> {}: {done}/{total}", src.modality, tgt.modality)
    })?;
    save_traces(out, &traces, &spec)?;
    Ok(traces)
}

/// Evaluate a trace directory, or every trace directory directly below it,
/// and write the reports to `out`.
pub fn evaluate_traces(traces: &Path, out: &Path, reference_rows: bool) -> Result<Evaluation> {
    let mut dirs = Vec::new();
    if traces.join("manifest.tsv").is_file() {
        dirs.push(traces.to_path_buf());
    } else {
        for entry in std::fs::read_dir(traces).map_err(|e| Error::io(traces, e))? {
            let path = entry.map_err(|e| Error::io(traces, e))?.path();
            if path.join("manifest.tsv").is_file() {
                dirs.push(path);
            }
        }
        dirs.sort();
    }
    if dirs.is_empty() {
        return Err(Error::MissingArtifact {
            stage: "evaluate".into(),
            path: traces.to_path_buf(),
        });
    }
    let sets = dirs.iter().map(|d| load_traces(d)).collect::<Result<Vec<_>>>()?;
    let eval = Evaluation::from_trace_sets(&sets)?;
    eval.save(out)?;
    if reference_rows {
        let mut text = String::from("label\tmse_mean_e-3\tmse_std_e-3\tratio_mean_pct\tratio_std_pct\n");
        for (label, a, b, c, d) in FULL_SCALE_REFERENCE {
            writeln!(text, "{label}\t{a}\t{b}\t{c}\t{d}").unwrap();
        }
        io::write_text(&out.join("reference.tsv"), &text)?;
    }
    Ok(eval)
}

pub(super) fn synth_stage(cfg: &PipelineConfig, ws: &Path) -> Result<()> {
    for m in Modality::ALL {
        synth_to(cfg.synth.get(m), &ws.join(RAW).join(m.as_str()))?;
    }
    Ok(())
}

pub(super) fn preprocess_stage(cfg: &PipelineConfig, ws: &Path) -> Result<()> {
    for m in Modality::ALL {
        let input = require("preprocess", ws.join(RAW).join(m.as_str()))?;
        let (prepared, report) = preprocess_dir(&input, &ws.join(SEGMENTS).join(m.as_str()), m, &cfg.preprocess)?;
        log::info!(
            "{m}: {} train / {} test segments",
            prepared.train.len(),
            prepared.test.len()
        );
        if let Some(r) = report {
            log::info!("{m}: burst detection F1 {:.3}", r.f1);
        }
    }
    Ok(())
}

pub(super) fn train_stage(cfg: &PipelineConfig, ws: &Path) -> Result<()> {
    for m in Modality::ALL {
        let data = require("train", ws.join(SEGMENTS).join(m.as_str()))?;
        let out = ws.join(CHECKPOINTS).join(format!("{m}.ckpt"));
        train_model(&data, &cfg.diffusion.edm, cfg.diffusion.get(m), &out)?;
    }
    Ok(())
}

pub(super) fn translate_stage(cfg: &PipelineConfig, ws: &Path) -> Result<()> {
    let ckpt = |m: Modality| ws.join(CHECKPOINTS).join(format!("{m}.ckpt"));
    for src in Modality::ALL {
        let tgt = src.other();
        translate_dir(
            &ckpt(src),
            &ckpt(tgt),
            &ws.join(SEGMENTS).join(src.as_str()),
            &cfg.bridge,
            &ws.join(TRACES).join(format!("{src}_to_{tgt}")),
        )?;
    }
    Ok(())
}

pub(super) fn evaluate_stage(cfg: &PipelineConfig, ws: &Path) -> Result<()> {
    let eval = evaluate_traces(&ws.join(TRACES), &ws.join(REPORTS), cfg.evaluate.reference_rows)?;
    log::info!("evaluation:\n{}", eval.summary());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_is_even_and_bounded() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(subsample(&v, 0), v);
        assert_eq!(subsample(&v, 20), v);
        assert_eq!(subsample(&v, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(subsample(&v, 3), vec![0, 3, 6]);
    }
}
