//! Probability-flow ODE solvers and the dual-bridge translation built on them.
//!
//! With `sigma(t) = t` the ODE is `dx/dsigma = (x - D(x; sigma)) / sigma`.
//! Integrating it upward under the source model maps a segment to a shared
//! latent; integrating downward under the target model maps that latent to
//! the target domain.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{karras_schedule, Denoiser, EdmConfig, SigmaSchedule};
use crate::error::{Error, Result};
use crate::io;
use crate::preprocess::{Modality, Provenance, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Euler,
    Heun,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Euler => "euler",
            SolverKind::Heun => "heun",
        })
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(SolverKind::Euler),
            "heun" => Ok(SolverKind::Heun),
            other => Err(Error::Config(format!("unknown solver '{other}' (expected heun or euler)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub schedule: SigmaSchedule,
}

/// Named step-count presets: `paper-heun` is Heun with 30 nodes (59 model
/// passes per leg, 118 per translation); `paper-ddib` is Euler with 250 nodes
/// (500 per translation).
pub const PRESETS: [(&str, SolverKind, usize); 2] =
    [("paper-heun", SolverKind::Heun, 30), ("paper-ddib", SolverKind::Euler, 250)];

impl SolverSpec {
    pub fn new(kind: SolverKind, schedule: SigmaSchedule) -> Result<Self> {
        if schedule.len() < 2 {
            return Err(Error::Schedule(schedule.len()));
        }
        Ok(Self { kind, schedule })
    }

    pub fn karras(kind: SolverKind, steps: usize, edm: &EdmConfig) -> Result<Self> {
        Self::new(kind, karras_schedule(steps, edm)?)
    }

    pub fn preset(name: &str, edm: &EdmConfig) -> Result<Self> {
        let (_, kind, steps) = PRESETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown solver preset '{name}'")))?;
        Self::karras(*kind, *steps, edm)
    }

    pub fn paper_heun(edm: &EdmConfig) -> Self {
        Self::preset("paper-heun", edm).expect("preset is valid")
    }

    pub fn paper_ddib(edm: &EdmConfig) -> Self {
        Self::preset("paper-ddib", edm).expect("preset is valid")
    }

    pub fn steps(&self) -> usize {
        self.schedule.len()
    }

    /// Model passes for one leg: `2N - 1` for Heun, `N` for Euler.
    pub fn nfe_per_leg(&self) -> usize {
        match self.kind {
            SolverKind::Heun => 2 * self.steps() - 1,
            SolverKind::Euler => self.steps(),
        }
    }
}

impl fmt::Display for SolverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} N={}", self.kind, self.steps())
    }
}

fn check_rows(xs: &[f64], dim: usize) -> Result<()> {
    if dim == 0 || xs.len() % dim != 0 {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: dim,
        });
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solver input"));
    }
    Ok(())
}

/// `(x - D(x; sigma)) / sigma` for every row.
fn slope<D: Denoiser>(d: &D, x: &[f64], dim: usize, sigma: f64, nfe: &mut usize) -> Result<Vec<f64>> {
    let den = d.denoise_batch(x, dim, sigma)?;
    *nfe += 1;
    Ok(x.iter().zip(&den).map(|(xi, di)| (xi - di) / sigma).collect())
}

fn axpy(x: &[f64], h: f64, v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + h * b).collect()
}

/// One step from `from` to `to`, evaluating the slope at `from` (and at `to`
/// for the Heun correction).
#[allow(clippy::too_many_arguments)]
fn step<D: Denoiser>(
    d: &D,
    x: &[f64],
    dim: usize,
    from: f64,
    to: f64,
    correct: bool,
    index: usize,
    nfe: &mut usize,
) -> Result<Vec<f64>> {
    let h = to - from;
    let d0 = slope(d, x, dim, from, nfe)?;
    let euler = axpy(x, h, &d0);
    let next = if correct {
        let d1 = slope(d, &euler, dim, to, nfe)?;
        x.iter()
            .zip(d0.iter().zip(&d1))
            .map(|(xi, (a, b))| xi + h * 0.5 * (a + b))
            .collect()
    } else {
        euler
    };
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: index, sigma: to });
    }
    Ok(next)
}

/// Integrate rows of `xs` from `sigma_max` down to zero. Returns the clean
/// estimate and the number of model passes.
pub fn ode_solve_reverse<D: Denoiser>(d: &D, xs: &[f64], dim: usize, spec: &SolverSpec) -> Result<(Vec<f64>, usize)> {
    check_rows(xs, dim)?;
    let sigmas = spec.schedule.with_terminal();
    let mut x = xs.to_vec();
    let mut nfe = 0;
    for (i, w) in sigmas.windows(2).enumerate() {
        let correct = spec.kind == SolverKind::Heun && w[1] != 0.0;
        x = step(d, &x, dim, w[0], w[1], correct, i, &mut nfe)?;
    }
    Ok((x, nfe))
}

/// Integrate rows of `xs` from zero up to `sigma_max`. The first interval
/// starts at the singular point `sigma = 0`, so it is a single Euler step with
/// the slope taken at `sigma_min`.
pub fn ode_solve_forward<D: Denoiser>(d: &D, xs: &[f64], dim: usize, spec: &SolverSpec) -> Result<(Vec<f64>, usize)> {
    check_rows(xs, dim)?;
    let sigmas = spec.schedule.sigmas();
    let n = sigmas.len();
    let mut nfe = 0;
    let d0 = slope(d, xs, dim, sigmas[n - 1], &mut nfe)?;
    let mut x = axpy(xs, sigmas[n - 1], &d0);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            sigma: sigmas[n - 1],
        });
    }
    for i in (0..n - 1).rev() {
        let correct = spec.kind == SolverKind::Heun;
        x = step(d, &x, dim, sigmas[i + 1], sigmas[i], correct, n - 1 - i, &mut nfe)?;
    }
    Ok((x, nfe))
}

/// One segment's path through the bridge. Cycle runs also fill the second
/// latent and the reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationTrace {
    pub provenance: Provenance,
    pub source_modality: Modality,
    pub target_modality: Modality,
    pub source: Vec<f64>,
    pub latent: Vec<f64>,
    pub translated: Vec<f64>,
    pub latent2: Option<Vec<f64>>,
    pub reconstructed: Option<Vec<f64>>,
    /// Passes spent integrating up to the latent.
    pub nfe_forward: usize,
    /// Passes spent integrating down from the latent.
    pub nfe_reverse: usize,
    pub nfe_total: usize,
}

impl TranslationTrace {
    pub fn translated_segment(&self) -> Segment {
        Segment {
            values: self.translated.clone(),
            modality: self.target_modality,
            provenance: self.provenance.clone(),
        }
    }

    pub fn reconstructed_segment(&self) -> Option<Segment> {
        self.reconstructed.as_ref().map(|values| Segment {
            values: values.clone(),
            modality: self.source_modality,
            provenance: self.provenance.clone(),
        })
    }
}

fn stack(segments: &[Segment], expected: Option<Modality>) -> Result<(Vec<f64>, usize)> {
    let first = segments.first().ok_or(Error::Empty("segment batch"))?;
    let dim = first.values.len();
    let mut xs = Vec::with_capacity(segments.len() * dim);
    for s in segments {
        if let Some(m) = expected.filter(|m| *m != s.modality) {
            return Err(Error::ModalityMismatch {
                expected: m.to_string(),
                got: s.modality.to_string(),
            });
        }
        if s.values.len() != dim {
            return Err(Error::LengthMismatch {
                left: s.values.len(),
                right: dim,
            });
        }
        xs.extend_from_slice(&s.values);
    }
    Ok((xs, dim))
}

fn target_modality<D: Denoiser>(tgt: &D, source: Modality) -> Modality {
    tgt.modality().unwrap_or_else(|| source.other())
}

/// Translate a batch: forward under `src`, reverse under `tgt`.
pub fn translate_batch<S: Denoiser, T: Denoiser>(
    src: &S,
    tgt: &T,
    segments: &[Segment],
    spec: &SolverSpec,
) -> Result<Vec<TranslationTrace>> {
    let (xs, dim) = stack(segments, src.modality())?;
    let (latent, nf) = ode_solve_forward(src, &xs, dim, spec)?;
    let (translated, nr) = ode_solve_reverse(tgt, &latent, dim, spec)?;
    Ok(segments
        .iter()
        .enumerate()
        .map(|(i, s)| TranslationTrace {
            provenance: s.provenance.clone(),
            source_modality: s.modality,
            target_modality: target_modality(tgt, s.modality),
            source: s.values.clone(),
            latent: latent[i * dim..(i + 1) * dim].to_vec(),
            translated: translated[i * dim..(i + 1) * dim].to_vec(),
            latent2: None,
            reconstructed: None,
            nfe_forward: nf,
            nfe_reverse: nr,
            nfe_total: nf + nr,
        })
        .collect())
}

/// Translate and then translate back with the roles swapped.
pub fn cycle_batch<S: Denoiser, T: Denoiser>(
    src: &S,
    tgt: &T,
    segments: &[Segment],
    spec: &SolverSpec,
) -> Result<Vec<TranslationTrace>> {
    let mut traces = translate_batch(src, tgt, segments, spec)?;
    let dim = traces[0].source.len();
    let translated: Vec<f64> = traces.iter().flat_map(|t| t.translated.iter().copied()).collect();
    let (latent2, nf) = ode_solve_forward(tgt, &translated, dim, spec)?;
    let (recon, nr) = ode_solve_reverse(src, &latent2, dim, spec)?;
    for (i, t) in traces.iter_mut().enumerate() {
        t.latent2 = Some(latent2[i * dim..(i + 1) * dim].to_vec());
        t.reconstructed = Some(recon[i * dim..(i + 1) * dim].to_vec());
        t.nfe_forward += nf;
        t.nfe_reverse += nr;
        t.nfe_total = t.nfe_forward + t.nfe_reverse;
    }
    Ok(traces)
}

pub fn translate<S: Denoiser, T: Denoiser>(src: &S, tgt: &T, x_s: &Segment, spec: &SolverSpec) -> Result<TranslationTrace> {
    Ok(translate_batch(src, tgt, std::slice::from_ref(x_s), spec)?.remove(0))
}

pub fn cycle<S: Denoiser, T: Denoiser>(src: &S, tgt: &T, x_s: &Segment, spec: &SolverSpec) -> Result<TranslationTrace> {
    Ok(cycle_batch(src, tgt, std::slice::from_ref(x_s), spec)?.remove(0))
}

/// Run `segments` through the bridge in chunks of `chunk` rows, reporting
/// progress after each chunk.
pub fn run_batched<S: Denoiser, T: Denoiser>(
    src: &S,
    tgt: &T,
    segments: &[Segment],
    spec: &SolverSpec,
    with_cycle: bool,
    chunk: usize,
    mut progress: impl FnMut(usize, usize),
) -> Result<Vec<TranslationTrace>> {
    let mut out = Vec::with_capacity(segments.len());
    for part in segments.chunks(chunk.max(1)) {
        out.extend(if with_cycle {
            cycle_batch(src, tgt, part, spec)?
        } else {
            translate_batch(src, tgt, part, spec)?
        });
        progress(out.len(), segments.len());
    }
    Ok(out)
}

const TRACE_FIELDS: [&str; 5] = ["source", "latent", "translated", "latent2", "reconstructed"];

/// Save traces: one packed `.f32` file per stage (rows in manifest order),
/// `manifest.tsv` and `summary.txt`.
pub fn save_traces(dir: &Path, traces: &[TranslationTrace], spec: &SolverSpec) -> Result<()> {
    let first = traces.first().ok_or(Error::Empty("trace list"))?;
    io::create_dir(dir)?;
    for field in TRACE_FIELDS {
        let rows: Option<Vec<&Vec<f64>>> = traces
            .iter()
            .map(|t| match field {
                "source" => Some(&t.source),
                "latent" => Some(&t.latent),
                "translated" => Some(&t.translated),
                "latent2" => t.latent2.as_ref(),
                _ => t.reconstructed.as_ref(),
            })
            .collect();
        if let Some(rows) = rows {
            let flat: Vec<f64> = rows.into_iter().flatten().copied().collect();
            io::write_f32(&dir.join(format!("{field}.f32")), &flat)?;
        }
    }
    let mut manifest = format!(
        "# source_modality\t{}\n# target_modality\t{}\n# segment_len\t{}\n# count\t{}\nindex\trecording\tchannel\tstart\n",
        first.source_modality,
        first.target_modality,
        first.source.len(),
        traces.len()
    );
    for (i, t) in traces.iter().enumerate() {
        writeln!(manifest, "{i}\t{}\t{}\t{}", t.provenance.recording, t.provenance.channel, t.provenance.start).unwrap();
    }
    io::write_text(&dir.join("manifest.tsv"), &manifest)?;
    let summary = format!(
        "direction: {} -> {}\nsolver: {spec}\nsegments: {}\ncycle: {}\nnfe_forward: {}\nnfe_reverse: {}\nnfe_total: {}\n",
        first.source_modality,
        first.target_modality,
        traces.len(),
        first.reconstructed.is_some(),
        first.nfe_forward,
        first.nfe_reverse,
        first.nfe_total
    );
    io::write_text(&dir.join("summary.txt"), &summary)
}

/// Inverse of [`save_traces`].
pub fn load_traces(dir: &Path) -> Result<Vec<TranslationTrace>> {
    let manifest = io::read_text(&dir.join("manifest.tsv"))?;
    let summary = io::read_text(&dir.join("summary.txt"))?;
    let header = |key: &str| -> Result<String> {
        manifest
            .lines()
            .find_map(|l| l.strip_prefix(&format!("# {key}\t")))
            .map(str::to_string)
            .ok_or_else(|| Error::format("trace manifest", format!("missing {key}")))
    };
    let summary_value = |key: &str| -> Result<usize> {
        summary
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key}: ")))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::format("trace summary", format!("missing {key}")))
    };
    let source_modality: Modality = header("source_modality")?.parse()?;
    let target_modality: Modality = header("target_modality")?.parse()?;
    let dim: usize = header("segment_len")?
        .parse()
        .map_err(|_| Error::format("trace manifest", "segment_len"))?;
    let mut provenance = Vec::new();
    for line in manifest.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::format("trace manifest", format!("bad row '{line}'")));
        }
        let start = cols[3]
            .parse()
            .map_err(|_| Error::format("trace manifest", format!("bad row '{line}'")))?;
        provenance.push(Provenance {
            recording: cols[1].to_string(),
            channel: cols[2].to_string(),
            start,
        });
    }
    let read = |field: &str| -> Result<Option<Vec<f64>>> {
        let path = dir.join(format!("{field}.f32"));
        if !path.exists() {
            return Ok(None);
        }
        let v = io::read_f32(&path)?;
        if v.len() != provenance.len() * dim {
            return Err(Error::format("trace data", format!("{field}.f32 has {} values", v.len())));
        }
        Ok(Some(v))
    };
    let need = |field: &str| read(field)?.ok_or_else(|| Error::format("trace data", format!("missing {field}.f32")));
    let (source, latent, translated) = (need("source")?, need("latent")?, need("translated")?);
    let (latent2, recon) = (read("latent2")?, read("reconstructed")?);
    let (nf, nr, nt) = (summary_value("nfe_forward")?, summary_value("nfe_reverse")?, summary_value("nfe_total")?);
    let row = |v: &[f64], i: usize| v[i * dim..(i + 1) * dim].to_vec();
    Ok(provenance
        .into_iter()
        .enumerate()
        .map(|(i, provenance)| TranslationTrace {
            provenance,
            source_modality,
            target_modality,
            source: row(&source, i),
            latent: row(&latent, i),
            translated: row(&translated, i),
            latent2: latent2.as_ref().map(|v| row(v, i)),
            reconstructed: recon.as_ref().map(|v| row(v, i)),
            nfe_forward: nf,
            nfe_reverse: nr,
            nfe_total: nt,
        })
        .collect())
}
