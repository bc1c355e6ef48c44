//! Trace-fingerprint scoring, confidence calibration, and top-k video
//! identification.
//!
//! A trace is scored against a fingerprint as the mean log-likelihood of
//! its sampled head positions under the fingerprint's saliency maps, each
//! map normalized to a probability distribution and blurred by a Gaussian
//! whose width models the head-orientation estimation error. An affine
//! logistic calibrator, trained on labeled trace/fingerprint pairs, maps
//! raw scores to confidences in (0, 1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{align_pairs, normalize_saliency, FingerprintLibrary, VideoFingerprint};
use crate::geometry::{equirect_project, to_spherical, Frame, Vec3};
use crate::trace::{HeadMovementTrace, SampledTrace};

/// Yaw error (degrees) of the modeled head-orientation estimator; the
/// default spatial smoothing converts it to pixels on the map grid.
pub const DEFAULT_YAW_ERROR_DEG: f64 = 8.8;

/// Default sampling interval in seconds.
pub const DEFAULT_TAU_S: f64 = 0.8;

/// Scoring parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Interval between scored samples, seconds.
    pub tau_s: f64,
    /// Gaussian blur applied to normalized maps, in pixels; absorbs the
    /// spatial error of estimated head positions.
    pub smoothing_sigma_px: f64,
    pub map_width: usize,
    pub map_height: usize,
}

impl MatchConfig {
    /// Defaults for a W x H grid: tau = 0.8 s and a smoothing sigma of
    /// `W * yaw_error / 360` pixels, the grid width of the modeled yaw
    /// estimation error.
    pub fn with_defaults(map_width: usize, map_height: usize) -> Self {
        MatchConfig {
            tau_s: DEFAULT_TAU_S,
            smoothing_sigma_px: map_width as f64 * DEFAULT_YAW_ERROR_DEG / 360.0,
            map_width,
            map_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_s <= 0.0 {
            return Err(Error::invalid("tau must be positive"));
        }
        if self.smoothing_sigma_px < 0.0 {
            return Err(Error::invalid("smoothing sigma must be nonnegative"));
        }
        if self.map_width < 1 || self.map_height < 1 {
            return Err(Error::invalid("map grid must be at least 1x1"));
        }
        Ok(())
    }

    /// Hash of the score-affecting parameters (grid and smoothing; tau is
    /// excluded so one calibrator serves sampling-interval sweeps).
    pub fn score_space_hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        mix(&(self.map_width as u64).to_le_bytes());
        mix(&(self.map_height as u64).to_le_bytes());
        mix(&self.smoothing_sigma_px.to_bits().to_le_bytes());
        format!("{h:016x}")
    }
}

/// A fingerprint preprocessed for scoring: every map normalized, blurred
/// with the configured sigma, and renormalized to unit mass. Preparing once
/// and scoring many traces avoids re-blurring per trace.
#[derive(Debug, Clone)]
pub struct PreparedFingerprint {
    video_id: String,
    width: usize,
    height: usize,
    frame_interval_ms: i64,
    duration_ms: i64,
    maps: Vec<Vec<f64>>,
}

impl PreparedFingerprint {
    pub fn new(fp: &VideoFingerprint, cfg: &MatchConfig) -> Result<Self> {
        cfg.validate()?;
        if fp.width() != cfg.map_width || fp.height() != cfg.map_height {
            return Err(Error::invalid(format!(
                "fingerprint {} is {}x{}, config expects {}x{}",
                fp.video_id(),
                fp.width(),
                fp.height(),
                cfg.map_width,
                cfg.map_height
            )));
        }
        let maps = fp
            .maps()
            .iter()
            .map(|m| {
                let normalized = normalize_saliency(m)?;
                let mut cells = normalized.cells().to_vec();
                if cfg.smoothing_sigma_px > 0.0 {
                    blur_periodic_w(
                        &mut cells,
                        fp.width(),
                        fp.height(),
                        cfg.smoothing_sigma_px,
                    );
                }
                let total: f64 = cells.iter().sum();
                for c in &mut cells {
                    *c /= total;
                }
                Ok(cells)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedFingerprint {
            video_id: fp.video_id().to_string(),
            width: fp.width(),
            height: fp.height(),
            frame_interval_ms: fp.frame_interval_ms(),
            duration_ms: fp.duration_ms(),
            maps,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    fn nearest_map_index(&self, t_ms: i64) -> usize {
        if t_ms <= 0 {
            return 0;
        }
        let k = (t_ms / self.frame_interval_ms).min(self.maps.len() as i64 - 1) as usize;
        if k + 1 >= self.maps.len() {
            return k;
        }
        let d_before = t_ms - k as i64 * self.frame_interval_ms;
        let d_after = (k + 1) as i64 * self.frame_interval_ms - t_ms;
        if d_before <= d_after {
            k
        } else {
            k + 1
        }
    }

    /// Mean log-likelihood of the sampled positions, plus the number of
    /// pairs used. Samples beyond the fingerprint duration are dropped;
    /// zero surviving pairs is an error.
    pub fn score_samples(&self, samples: &SampledTrace) -> Result<(f64, usize)> {
        if samples.frame != Frame::Vr {
            return Err(Error::FrameMismatch {
                expected: Frame::Vr.to_string(),
                actual: samples.frame.to_string(),
            });
        }
        let mut sum = 0.0;
        let mut used = 0usize;
        for &(t_ms, v) in &samples.samples {
            if t_ms > self.duration_ms {
                continue;
            }
            let density = self.density_at(self.nearest_map_index(t_ms), v)?;
            sum += density.ln();
            used += 1;
        }
        if used == 0 {
            return Err(Error::NoOverlap);
        }
        Ok((sum / used as f64, used))
    }

    /// Bilinear interpolation of the prepared map at the projection of `v`.
    /// Cells are point samples at their centers; columns wrap across the
    /// w = 0 seam, rows clamp at the poles.
    fn density_at(&self, map_index: usize, v: Vec3) -> Result<f64> {
        let p = equirect_project(to_spherical(v), self.width, self.height)?;
        let cells = &self.maps[map_index];
        let w = self.width as f64;

        let x = (p.w - 0.5).rem_euclid(w);
        let i0 = (x.floor() as usize).min(self.width - 1);
        let fx = x - x.floor();
        let i1 = (i0 + 1) % self.width;

        let y = (p.h - 0.5).clamp(0.0, (self.height - 1) as f64);
        let j0 = (y.floor() as usize).min(self.height - 1);
        let fy = y - j0 as f64;
        let j1 = (j0 + 1).min(self.height - 1);

        let at = |i: usize, j: usize| cells[j * self.width + i];
        Ok(at(i0, j0) * (1.0 - fx) * (1.0 - fy)
            + at(i1, j0) * fx * (1.0 - fy)
            + at(i0, j1) * (1.0 - fx) * fy
            + at(i1, j1) * fx * fy)
    }
}

/// Separable Gaussian blur: periodic in w (the grid is a cylinder),
/// truncated with per-cell weight normalization at the h bounds.
fn blur_periodic_w(cells: &mut [f64], width: usize, height: usize, sigma: f64) {
    let radius = (4.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();

    let mut pass_w = vec![0.0; cells.len()];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for (wi, d) in (-radius..=radius).enumerate() {
                let c = (col as i64 + d).rem_euclid(width as i64) as usize;
                acc += weights[wi] * cells[row * width + c];
            }
            pass_w[row * width + col] = acc;
        }
    }

    for col in 0..width {
        for row in 0..height {
            let mut acc = 0.0;
            let mut used = 0.0;
            for (wi, d) in (-radius..=radius).enumerate() {
                let r = row as i64 + d;
                if r < 0 || r >= height as i64 {
                    continue;
                }
                acc += weights[wi] * pass_w[r as usize * width + col];
                used += weights[wi];
            }
            cells[row * width + col] = acc / used;
        }
    }
}

/// A library preprocessed for repeated identification under one config.
#[derive(Debug, Clone)]
pub struct PreparedLibrary {
    entries: Vec<PreparedFingerprint>,
}

impl PreparedLibrary {
    pub fn new(library: &FingerprintLibrary, cfg: &MatchConfig) -> Result<Self> {
        let entries = library
            .entries()
            .iter()
            .map(|fp| PreparedFingerprint::new(fp, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedLibrary { entries })
    }

    pub fn entries(&self) -> &[PreparedFingerprint] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Raw-score half of the scoring contract: sample the trace at `cfg.tau_s`,
/// pair samples with fingerprint maps by nearest timestamp, and average the
/// log-likelihoods of the head positions under the prepared maps.
pub fn score_pair(
    trace: &HeadMovementTrace,
    fp: &VideoFingerprint,
    cfg: &MatchConfig,
) -> Result<f64> {
    let prepared = PreparedFingerprint::new(fp, cfg)?;
    let samples = trace.sample_at_interval(cfg.tau_s)?;
    // align_pairs and the prepared scorer share the same pairing rule;
    // running it here keeps the drop accounting observable to callers that
    // want it.
    align_pairs(&samples, fp, cfg.tau_s)?;
    let (score, _) = prepared.score_samples(&samples)?;
    Ok(score)
}

/// Eq-style negative log-likelihood of a confidence `n` in (0, 1) against a
/// binary ground truth: zero when the truth is negative, `-ln n` otherwise.
pub fn nll_loss(n: f64, truth: bool) -> Result<f64> {
    if !(n > 0.0 && n < 1.0) {
        return Err(Error::invalid(format!(
            "confidence must lie strictly inside (0, 1), got {n}"
        )));
    }
    Ok(if truth { -n.ln() } else { 0.0 })
}

/// Affine score-to-confidence map: `confidence = sigmoid(a z + b)` with
/// `z` the raw score standardized by the training-set mean and deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub a: f64,
    pub b: f64,
    pub score_mean: f64,
    pub score_std: f64,
}

impl Calibrator {
    pub fn confidence(&self, raw_score: f64) -> f64 {
        let z = (raw_score - self.score_mean) / self.score_std;
        sigmoid(self.a * z + self.b).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy and its gradient in (a, b) for standardized
/// scores `z` and labels `y`: `loss = mean(softplus(s) - y s)` with
/// `s = a z + b`, written in the overflow-safe form.
pub fn bce_loss_and_grad(a: f64, b: f64, z: &[f64], labels: &[bool]) -> (f64, f64, f64) {
    assert_eq!(z.len(), labels.len());
    let n = z.len() as f64;
    let mut loss = 0.0;
    let mut grad_a = 0.0;
    let mut grad_b = 0.0;
    for (&zi, &yi) in z.iter().zip(labels) {
        let s = a * zi + b;
        let y = if yi { 1.0 } else { 0.0 };
        loss += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
        let residual = sigmoid(s) - y;
        grad_a += residual * zi;
        grad_b += residual;
    }
    (loss / n, grad_a / n, grad_b / n)
}

/// Full-batch gradient-descent fit of the affine logistic model from
/// (1, 0). Returns the parameters and the loss recorded before each epoch
/// plus once after the last; the sequence is non-increasing for learning
/// rates below the stability bound (0.1 is well inside it for
/// standardized scores).
pub fn logistic_fit(z: &[f64], labels: &[bool], lr: f64, epochs: usize) -> (f64, f64, Vec<f64>) {
    let (mut a, mut b) = (1.0, 0.0);
    let mut history = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let (loss, grad_a, grad_b) = bce_loss_and_grad(a, b, z, labels);
        history.push(loss);
        a -= lr * grad_a;
        b -= lr * grad_b;
    }
    let (final_loss, _, _) = bce_loss_and_grad(a, b, z, labels);
    history.push(final_loss);
    (a, b, history)
}

/// Train a calibrator from precomputed raw scores. Requires at least one
/// positive and one negative label; scores are standardized before the
/// logistic fit.
pub fn train_calibrator_from_scores(
    scores: &[f64],
    labels: &[bool],
    lr: f64,
    epochs: usize,
) -> Result<Calibrator> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels must have equal length"));
    }
    if scores.is_empty() {
        return Err(Error::DegenerateTraining("no training pairs".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateTraining(format!(
            "need both classes, got {positives} positives of {}",
            labels.len()
        )));
    }
    if lr <= 0.0 {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let z: Vec<f64> = scores.iter().map(|s| (s - mean) / std).collect();
    let (a, b, _) = logistic_fit(&z, labels, lr, epochs);
    Ok(Calibrator {
        a,
        b,
        score_mean: mean,
        score_std: std,
    })
}

/// A trace/fingerprint pair with its match label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPair<'a> {
    pub trace: &'a HeadMovementTrace,
    pub fingerprint: &'a VideoFingerprint,
    /// True iff the trace was generated on this fingerprint's video.
    pub label: bool,
}

/// Score every labeled pair under `cfg` and fit the calibrator on the
/// results by full-batch gradient descent.
pub fn train_calibrator(
    pairs: &[LabeledPair<'_>],
    cfg: &MatchConfig,
    lr: f64,
    epochs: usize,
) -> Result<Calibrator> {
    let mut scores = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for p in pairs {
        scores.push(score_pair(p.trace, p.fingerprint, cfg)?);
        labels.push(p.label);
    }
    train_calibrator_from_scores(&scores, &labels, lr, epochs)
}

/// Match of one trace against one library entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub video_id: String,
    /// Mean log-likelihood, nats.
    pub raw_score: f64,
    pub confidence: f64,
    pub pairs_used: usize,
}

/// Full identification ranking; `top()` is the requested prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub requested_k: usize,
    /// All library entries, best match first; ties broken by video id.
    pub results: Vec<MatchResult>,
}

impl Ranking {
    pub fn top(&self) -> &[MatchResult] {
        &self.results[..self.requested_k]
    }

    /// 1-based position of `video_id`, if present.
    pub fn rank_of(&self, video_id: &str) -> Option<usize> {
        self.results
            .iter()
            .position(|r| r.video_id == video_id)
            .map(|i| i + 1)
    }
}

/// Identify a trace against a prepared library: score every entry, map
/// scores to confidences, and rank by confidence descending with ties
/// broken by ascending video id.
pub fn identify_topk_prepared(
    trace: &HeadMovementTrace,
    library: &PreparedLibrary,
    tau_s: f64,
    calibrator: &Calibrator,
    k: usize,
) -> Result<Ranking> {
    if library.is_empty() {
        return Err(Error::invalid("library is empty"));
    }
    if k < 1 || k > library.len() {
        return Err(Error::invalid(format!(
            "k must be in [1, {}], got {k}",
            library.len()
        )));
    }
    let samples = trace.sample_at_interval(tau_s)?;
    let mut results = Vec::with_capacity(library.len());
    for fp in library.entries() {
        let (raw_score, pairs_used) = fp.score_samples(&samples)?;
        results.push(MatchResult {
            video_id: fp.video_id().to_string(),
            raw_score,
            confidence: calibrator.confidence(raw_score),
            pairs_used,
        });
    }
    results.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("confidences are finite")
            .then_with(|| a.video_id.cmp(&b.video_id))
    });
    Ok(Ranking {
        requested_k: k,
        results,
    })
}

/// Convenience wrapper preparing the library on the fly; for repeated
/// identifications build a [`PreparedLibrary`] once instead.
pub fn identify_topk(
    trace: &HeadMovementTrace,
    library: &FingerprintLibrary,
    cfg: &MatchConfig,
    calibrator: &Calibrator,
    k: usize,
) -> Result<Ranking> {
    if library.is_empty() {
        return Err(Error::invalid("library is empty"));
    }
    let prepared = PreparedLibrary::new(library, cfg)?;
    identify_topk_prepared(trace, &prepared, cfg.tau_s, calibrator, k)
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibratorFile {
    a: f64,
    b: f64,
    score_mean: f64,
    score_std: f64,
    config_hash: String,
}

/// Persist a calibrator together with the hash of the score-affecting
/// config it was trained under.
pub fn save_calibrator(cal: &Calibrator, cfg: &MatchConfig, path: &Path) -> Result<()> {
    let file = CalibratorFile {
        a: cal.a,
        b: cal.b,
        score_mean: cal.score_mean,
        score_std: cal.score_std,
        config_hash: cfg.score_space_hash(),
    };
    let json = serde_json::to_string_pretty(&file).expect("calibrator serialization cannot fail");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Load a calibrator and the config hash it was saved with.
pub fn load_calibrator(path: &Path) -> Result<(Calibrator, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CalibratorFile = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("bad calibrator file: {e}")))?;
    Ok((
        Calibrator {
            a: file.a,
            b: file.b,
            score_mean: file.score_mean,
            score_std: file.score_std,
        },
        file.config_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::{
        cell_center_direction, synth_fingerprint, FingerprintLibrary, SaliencyMap, SynthSpec,
    };
    use crate::simulate::{simulate_victim, VictimParams};
    use crate::trace::TraceSample;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const W: usize = 64;
    const H: usize = 32;

    fn uniform_fingerprint(frames: usize) -> VideoFingerprint {
        let maps = (0..frames)
            .map(|k| SaliencyMap::new(W, H, k as i64 * 100, vec![1.0; W * H]).unwrap())
            .collect();
        VideoFingerprint::new("uniform", 100, maps).unwrap()
    }

    fn static_trace(v: Vec3, n: usize, period_ms: i64) -> HeadMovementTrace {
        let samples = (0..n)
            .map(|i| TraceSample {
                t_ms: i as i64 * period_ms,
                v,
            })
            .collect();
        HeadMovementTrace::new("static", Frame::Vr, samples).unwrap()
    }

    fn synth_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            width: W,
            height: H,
            blob_count: 2,
            blob_sigma_deg: 12.0,
            drift_speed_deg_s: 2.0,
            duration_s: 20.0,
            frame_interval_ms: 200,
            seed,
        }
    }

    fn unit_calibrator() -> Calibrator {
        Calibrator {
            a: 1.0,
            b: 0.0,
            score_mean: 0.0,
            score_std: 1.0,
        }
    }

    #[test]
    fn uniform_fingerprint_scores_log_inverse_area() {
        let fp = uniform_fingerprint(20);
        let cfg = MatchConfig::with_defaults(W, H);
        let trace = static_trace(cell_center_direction(W, H, 5, 9), 20, 100);
        let score = score_pair(&trace, &fp, &cfg).unwrap();
        let expected = (1.0 / (W * H) as f64).ln();
        assert!(
            (score - expected).abs() < 1e-9,
            "got {score}, expected {expected}"
        );
    }

    #[test]
    fn one_hot_peak_scores_epsilon_normalized_value() {
        let (col, row) = (10, 12);
        let mut cells = vec![0.0; W * H];
        cells[row * W + col] = 1.0;
        let map = SaliencyMap::new(W, H, 0, cells).unwrap();
        let fp = VideoFingerprint::new("hot", 100, vec![map]).unwrap();
        let cfg = MatchConfig {
            smoothing_sigma_px: 0.0,
            ..MatchConfig::with_defaults(W, H)
        };
        let trace = static_trace(cell_center_direction(W, H, col, row), 1, 100);
        let score = score_pair(&trace, &fp, &cfg).unwrap();
        let eps = crate::fingerprint::NORMALIZE_EPSILON_RATIO;
        let expected = ((1.0 + eps) / (1.0 + (W * H) as f64 * eps)).ln();
        assert!(
            (score - expected).abs() < 1e-9,
            "got {score}, expected {expected}"
        );
    }

    #[test]
    fn source_fingerprint_outscores_disjoint_one() {
        // One blob at the equator, the rival a quarter turn away.
        let blob_at = |col: usize, id: &str| {
            let center = cell_center_direction(W, H, col, H / 2);
            let maps = (0..10)
                .map(|k| {
                    let cells = (0..W * H)
                        .map(|i| {
                            let d = cell_center_direction(W, H, i % W, i / W);
                            let ang = d.angle_to_deg(center);
                            (-ang * ang / (2.0 * 100.0)).exp()
                        })
                        .collect();
                    SaliencyMap::new(W, H, k as i64 * 100, cells).unwrap()
                })
                .collect();
            VideoFingerprint::new(id, 100, maps).unwrap()
        };
        let source = blob_at(8, "source");
        let rival = blob_at(8 + W / 4, "rival");
        let trace = static_trace(cell_center_direction(W, H, 8, H / 2), 10, 100);
        let cfg = MatchConfig::with_defaults(W, H);
        let s_source = score_pair(&trace, &source, &cfg).unwrap();
        let s_rival = score_pair(&trace, &rival, &cfg).unwrap();
        assert!(
            s_source > s_rival,
            "source {s_source} not above rival {s_rival}"
        );
    }

    #[test]
    fn score_invariant_under_cell_rescaling() {
        let fp = synth_fingerprint("v", &synth_spec(3)).unwrap();
        let scaled_maps: Vec<SaliencyMap> = fp
            .maps()
            .iter()
            .map(|m| {
                let cells = m.cells().iter().map(|c| c * 1811.0).collect();
                SaliencyMap::new(m.width(), m.height(), m.t_ms(), cells).unwrap()
            })
            .collect();
        let scaled = VideoFingerprint::new("v", fp.frame_interval_ms(), scaled_maps).unwrap();
        let trace = simulate_victim(
            &fp,
            &VictimParams {
                switch_prob_per_s: 0.3,
                max_speed_deg_s: 60.0,
                jitter_sigma_deg: 1.0,
                sample_period_ms: 100,
                seed: 4,
            },
        )
        .unwrap();
        let cfg = MatchConfig::with_defaults(W, H);
        let a = score_pair(&trace, &fp, &cfg).unwrap();
        let b = score_pair(&trace, &scaled, &cfg).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn score_rejects_camera_frame() {
        let fp = uniform_fingerprint(5);
        let cfg = MatchConfig::with_defaults(W, H);
        let samples = (0..5)
            .map(|i| TraceSample {
                t_ms: i * 100,
                v: Vec3::new(1.0, 0.0, 0.0),
            })
            .collect();
        let trace = HeadMovementTrace::new("c", Frame::CameraBased, samples).unwrap();
        assert!(matches!(
            score_pair(&trace, &fp, &cfg),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn nll_loss_matches_definition() {
        assert!(nll_loss(1.0 - 1e-12, true).unwrap() < 1e-9);
        assert!((nll_loss(0.5, true).unwrap() - 2.0_f64.ln()).abs() < 1e-15);
        assert_eq!(nll_loss(0.123, false).unwrap(), 0.0);
        assert_eq!(nll_loss(0.999, false).unwrap(), 0.0);
        assert!(nll_loss(0.0, true).is_err());
        assert!(nll_loss(1.0, true).is_err());
        assert!(nll_loss(1.5, false).is_err());
        // Strictly decreasing in n for a positive label.
        assert!(nll_loss(0.2, true).unwrap() > nll_loss(0.3, true).unwrap());
    }

    #[test]
    fn separable_scores_train_to_perfect_accuracy() {
        let scores: Vec<f64> = (0..40)
            .map(|i| if i < 10 { 5.0 + i as f64 * 0.1 } else { -5.0 - i as f64 * 0.1 })
            .collect();
        let labels: Vec<bool> = (0..40).map(|i| i < 10).collect();
        let cal = train_calibrator_from_scores(&scores, &labels, 0.5, 4000).unwrap();
        for (s, l) in scores.iter().zip(&labels) {
            let conf = cal.confidence(*s);
            assert_eq!(conf > 0.5, *l, "score {s} confidence {conf}");
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<bool> = (0..50).map(|_| rng.random::<bool>()).collect();
        let h = 1e-5;
        for _ in 0..20 {
            let a = rng.random_range(-2.0..2.0);
            let b = rng.random_range(-2.0..2.0);
            let (_, ga, gb) = bce_loss_and_grad(a, b, &z, &labels);
            let fd_a = (bce_loss_and_grad(a + h, b, &z, &labels).0
                - bce_loss_and_grad(a - h, b, &z, &labels).0)
                / (2.0 * h);
            let fd_b = (bce_loss_and_grad(a, b + h, &z, &labels).0
                - bce_loss_and_grad(a, b - h, &z, &labels).0)
                / (2.0 * h);
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-12);
            assert!(rel(ga, fd_a) < 1e-5, "grad_a {ga} vs fd {fd_a}");
            assert!(rel(gb, fd_b) < 1e-5, "grad_b {gb} vs fd {fd_b}");
        }
    }

    #[test]
    fn shuffled_labels_train_to_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut deviations = Vec::new();
        for _ in 0..5 {
            let scores: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
            // Balanced labels assigned independently of the scores.
            let mut labels: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
            for i in (1..labels.len()).rev() {
                let j = rng.random_range(0..=i);
                labels.swap(i, j);
            }
            let cal = train_calibrator_from_scores(&scores, &labels, 0.1, 500).unwrap();
            let correct = scores
                .iter()
                .zip(&labels)
                .filter(|(s, l)| (cal.confidence(**s) > 0.5) == **l)
                .count();
            deviations.push((correct as f64 / 200.0 - 0.5).abs());
        }
        let mean_dev = deviations.iter().sum::<f64>() / deviations.len() as f64;
        assert!(
            mean_dev <= 0.10,
            "accuracy deviates {mean_dev} from the base rate"
        );
    }

    #[test]
    fn train_calibrator_scores_labeled_pairs() {
        let fps: Vec<VideoFingerprint> = (0..2)
            .map(|i| synth_fingerprint(&format!("video_{i}"), &synth_spec(70 + i as u64)).unwrap())
            .collect();
        let params = |seed| VictimParams {
            switch_prob_per_s: 0.3,
            max_speed_deg_s: 60.0,
            jitter_sigma_deg: 1.0,
            sample_period_ms: 100,
            seed,
        };
        let traces: Vec<HeadMovementTrace> = (0..2)
            .map(|i| simulate_victim(&fps[i], &params(i as u64)).unwrap())
            .collect();
        let mut pairs = Vec::new();
        for (ti, trace) in traces.iter().enumerate() {
            for (fi, fp) in fps.iter().enumerate() {
                pairs.push(LabeledPair {
                    trace,
                    fingerprint: fp,
                    label: ti == fi,
                });
            }
        }
        let cfg = MatchConfig::with_defaults(W, H);
        let cal = train_calibrator(&pairs, &cfg, 0.1, 500).unwrap();
        assert!(cal.a > 0.0, "separable data must keep a positive slope");
        // Matching pairs score above non-matching ones after calibration.
        for (ti, trace) in traces.iter().enumerate() {
            let own = cal.confidence(score_pair(trace, &fps[ti], &cfg).unwrap());
            let other = cal.confidence(score_pair(trace, &fps[1 - ti], &cfg).unwrap());
            assert!(own > other);
        }
    }

    #[test]
    fn equal_confidences_rank_by_video_id() {
        // Two entries with identical content force a tie; ascending id
        // breaks it.
        let spec = synth_spec(123);
        let a = synth_fingerprint("tie_b", &spec).unwrap();
        let b = synth_fingerprint("tie_a", &spec).unwrap();
        let trace = simulate_victim(
            &a,
            &VictimParams {
                switch_prob_per_s: 0.3,
                max_speed_deg_s: 60.0,
                jitter_sigma_deg: 1.0,
                sample_period_ms: 100,
                seed: 9,
            },
        )
        .unwrap();
        let library = FingerprintLibrary::new(vec![a, b]).unwrap();
        let cfg = MatchConfig::with_defaults(W, H);
        let ranking = identify_topk(&trace, &library, &cfg, &unit_calibrator(), 2).unwrap();
        assert_eq!(ranking.results[0].raw_score, ranking.results[1].raw_score);
        assert_eq!(ranking.results[0].video_id, "tie_a");
        assert_eq!(ranking.results[1].video_id, "tie_b");
    }

    #[test]
    fn training_rejects_single_class() {
        let scores = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            train_calibrator_from_scores(&scores, &[true, true, true], 0.1, 10),
            Err(Error::DegenerateTraining(_))
        ));
        assert!(matches!(
            train_calibrator_from_scores(&scores, &[false, false, false], 0.1, 10),
            Err(Error::DegenerateTraining(_))
        ));
    }

    #[test]
    fn training_loss_is_monotone_at_stable_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z: Vec<f64> = (0..100).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<bool> = z.iter().map(|&v| v + rng.random_range(-0.5..0.5) > 0.0).collect();
        let (_, _, history) = logistic_fit(&z, &labels, 0.1, 300);
        for pair in history.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "loss increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn confidence_ranking_matches_raw_ranking() {
        let cal = Calibrator {
            a: 0.7,
            b: -0.2,
            score_mean: -5.0,
            score_std: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let s1 = rng.random_range(-20.0..0.0);
            let s2 = rng.random_range(-20.0..0.0);
            if s1 == s2 {
                continue;
            }
            assert_eq!(s1 > s2, cal.confidence(s1) > cal.confidence(s2));
        }
    }

    #[test]
    fn identify_single_entry_library() {
        let fp = synth_fingerprint("only", &synth_spec(21)).unwrap();
        let trace = simulate_victim(
            &fp,
            &VictimParams {
                switch_prob_per_s: 0.3,
                max_speed_deg_s: 60.0,
                jitter_sigma_deg: 1.0,
                sample_period_ms: 100,
                seed: 2,
            },
        )
        .unwrap();
        let library = FingerprintLibrary::new(vec![fp]).unwrap();
        let cfg = MatchConfig::with_defaults(W, H);
        let ranking = identify_topk(&trace, &library, &cfg, &unit_calibrator(), 1).unwrap();
        assert_eq!(ranking.top().len(), 1);
        assert_eq!(ranking.top()[0].video_id, "only");
        assert_eq!(ranking.rank_of("only"), Some(1));
        assert!(ranking.top()[0].pairs_used >= 1);
    }

    #[test]
    fn identify_full_k_returns_permutation() {
        let fps: Vec<VideoFingerprint> = (0..4)
            .map(|i| synth_fingerprint(&format!("video_{i}"), &synth_spec(40 + i as u64)).unwrap())
            .collect();
        let trace = simulate_victim(
            &fps[0],
            &VictimParams {
                switch_prob_per_s: 0.3,
                max_speed_deg_s: 60.0,
                jitter_sigma_deg: 1.0,
                sample_period_ms: 100,
                seed: 3,
            },
        )
        .unwrap();
        let library = FingerprintLibrary::new(fps).unwrap();
        let cfg = MatchConfig::with_defaults(W, H);
        let ranking = identify_topk(&trace, &library, &cfg, &unit_calibrator(), 4).unwrap();
        let mut ids: Vec<&str> = ranking.results.iter().map(|r| r.video_id.as_str()).collect();
        ids.sort_unstable();
        assert_eq!(ids, vec!["video_0", "video_1", "video_2", "video_3"]);
    }

    #[test]
    fn identify_is_deterministic_and_validates_k() {
        let fps: Vec<VideoFingerprint> = (0..3)
            .map(|i| synth_fingerprint(&format!("video_{i}"), &synth_spec(60 + i as u64)).unwrap())
            .collect();
        let trace = simulate_victim(
            &fps[1],
            &VictimParams {
                switch_prob_per_s: 0.3,
                max_speed_deg_s: 60.0,
                jitter_sigma_deg: 1.0,
                sample_period_ms: 100,
                seed: 8,
            },
        )
        .unwrap();
        let library = FingerprintLibrary::new(fps).unwrap();
        let cfg = MatchConfig::with_defaults(W, H);
        let a = identify_topk(&trace, &library, &cfg, &unit_calibrator(), 2).unwrap();
        let b = identify_topk(&trace, &library, &cfg, &unit_calibrator(), 2).unwrap();
        assert_eq!(a, b);
        assert!(identify_topk(&trace, &library, &cfg, &unit_calibrator(), 0).is_err());
        assert!(identify_topk(&trace, &library, &cfg, &unit_calibrator(), 4).is_err());
        let empty = FingerprintLibrary::new(vec![]).unwrap();
        assert!(identify_topk(&trace, &empty, &cfg, &unit_calibrator(), 1).is_err());
    }

    #[test]
    fn noiseless_victims_identify_their_video() {
        // End-to-end Monte Carlo: ten synthetic videos, one noiseless
        // victim per seed on video 0, top-1 must be right in >= 19/20.
        let fps: Vec<VideoFingerprint> = (0..10)
            .map(|i| synth_fingerprint(&format!("video_{i}"), &synth_spec(80 + i as u64)).unwrap())
            .collect();
        let library = FingerprintLibrary::new(fps.clone()).unwrap();
        let cfg = MatchConfig::with_defaults(W, H);
        let prepared = PreparedLibrary::new(&library, &cfg).unwrap();
        let mut hits = 0;
        for seed in 0..20 {
            let trace = simulate_victim(
                &fps[0],
                &VictimParams {
                    switch_prob_per_s: 0.3,
                    max_speed_deg_s: 60.0,
                    jitter_sigma_deg: 0.0,
                    sample_period_ms: 100,
                    seed,
                },
            )
            .unwrap();
            let ranking =
                identify_topk_prepared(&trace, &prepared, cfg.tau_s, &unit_calibrator(), 1)
                    .unwrap();
            if ranking.top()[0].video_id == "video_0" {
                hits += 1;
            }
        }
        assert!(hits >= 19, "only {hits}/20 noiseless victims identified");
    }

    #[test]
    fn calibrator_file_round_trip() {
        let cfg = MatchConfig::with_defaults(W, H);
        let cal = Calibrator {
            a: 2.5,
            b: -0.75,
            score_mean: -6.125,
            score_std: 1.375,
        };
        let dir = std::env::temp_dir().join(format!("cal_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("calibrator.json");
        save_calibrator(&cal, &cfg, &path).unwrap();
        let (loaded, hash) = load_calibrator(&path).unwrap();
        assert_eq!(loaded, cal);
        assert_eq!(hash, cfg.score_space_hash());
        // tau does not perturb the hash; the grid does.
        let mut tau_variant = cfg.clone();
        tau_variant.tau_s = 4.8;
        assert_eq!(tau_variant.score_space_hash(), cfg.score_space_hash());
        let grid_variant = MatchConfig::with_defaults(W * 2, H);
        assert_ne!(grid_variant.score_space_hash(), cfg.score_space_hash());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
