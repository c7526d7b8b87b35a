use crate::error::{Error, Result};
use crate::preprocess::{Interval, Recording};

/// Guard band added on each side of an over-threshold sample, in seconds.
pub const ARTIFACT_MARGIN: f64 = 0.5;

/// Mask every sample where any channel exceeds `threshold` in absolute value,
/// widened by [`ARTIFACT_MARGIN`] on both sides. Overlapping masks are merged
/// with the existing ones.
pub fn reject_amplitude_artifacts(rec: &Recording, threshold: f64) -> Result<Recording> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("artifact threshold must be positive, got {threshold}")));
    }
    let dt = 1.0 / rec.rate;
    let mut masked = rec.masked.clone();
    for i in 0..rec.len() {
        if rec.samples.iter().any(|ch| ch[i].abs() > threshold) {
            let t = i as f64 * dt;
            masked.push(Interval::new(t - ARTIFACT_MARGIN, t + dt + ARTIFACT_MARGIN));
        }
    }
    let mut out = rec.clone();
    out.set_masked(masked);
    Ok(out)
}
