//! End-to-end experiment orchestration: synthesize a library, train the
//! calibrator on held-out victims, run the attack pipeline over recording
//! length and sampling-interval sweeps, and emit plain CSV/JSON reports.
//!
//! Everything derives from `master_seed` through index-addressed seed
//! namespaces (see [`crate::seed`]), so a report is a pure function of its
//! config and re-runs are byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{synth_fingerprint, FingerprintLibrary, SynthSpec, VideoFingerprint};
use crate::matcher::{
    identify_topk_prepared, train_calibrator_from_scores, Calibrator, MatchConfig,
    PreparedLibrary, DEFAULT_TAU_S, DEFAULT_YAW_ERROR_DEG,
};
use crate::seed::{self, ns};
use crate::simulate::{
    fit_yaw_drift, inject_estimation_noise, inject_yaw_drift, remove_yaw_drift, simulate_victim,
    yaw_residual_at, NoiseSpec, VictimParams,
};
use crate::trace::HeadMovementTrace;

/// Calibration-set construction parameters. Calibration victims live in a
/// seed namespace disjoint from test victims, so the calibrator never sees
/// a test trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Library entries used to generate calibration victims.
    pub videos: usize,
    pub victims_per_video: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

fn default_learning_rate() -> f64 {
    0.1
}

fn default_epochs() -> usize {
    300
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            videos: 8,
            victims_per_video: 2,
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
        }
    }
}

/// Full experiment description; see `run_experiment` for the pipeline.
///
/// The `seed` fields inside `synth`, `victim`, and `noise` are ignored:
/// per-trial seeds derive from `master_seed` and the trial indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub library_size: usize,
    /// How many library videos receive test victims.
    pub videos_tested: usize,
    pub victims_per_video: usize,
    pub synth: SynthSpec,
    pub victim: VictimParams,
    pub noise: NoiseSpec,
    pub t_list_s: Vec<f64>,
    pub tau_list_s: Vec<f64>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Overrides the default smoothing of `W * 8.8 / 360` pixels.
    #[serde(default)]
    pub smoothing_sigma_px: Option<f64>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    /// Window start offset applied to every trial.
    #[serde(default)]
    pub t0_ms: i64,
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_k_max() -> usize {
    3
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("experiment_out")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.library_size < 1 {
            return Err(Error::invalid("library_size must be at least 1"));
        }
        if self.videos_tested < 1 || self.videos_tested > self.library_size {
            return Err(Error::invalid(format!(
                "videos_tested must be in [1, {}], got {}",
                self.library_size, self.videos_tested
            )));
        }
        if self.victims_per_video < 1 {
            return Err(Error::invalid("victims_per_video must be at least 1"));
        }
        if self.t_list_s.is_empty() || self.tau_list_s.is_empty() {
            return Err(Error::invalid("t_list_s and tau_list_s must be nonempty"));
        }
        if self.t_list_s.iter().any(|&t| t <= 0.0) {
            return Err(Error::invalid("recording lengths must be positive"));
        }
        if self.tau_list_s.iter().any(|&t| t <= 0.0) {
            return Err(Error::invalid("sampling intervals must be positive"));
        }
        if self.k_max < 1 || self.k_max > self.library_size {
            return Err(Error::invalid(format!(
                "k_max must be in [1, {}], got {}",
                self.library_size, self.k_max
            )));
        }
        if self.calibration.videos < 1 || self.calibration.videos > self.library_size {
            return Err(Error::invalid(format!(
                "calibration.videos must be in [1, {}], got {}",
                self.library_size, self.calibration.videos
            )));
        }
        if self.calibration.victims_per_video < 1 {
            return Err(Error::invalid(
                "calibration.victims_per_video must be at least 1",
            ));
        }
        if self.t0_ms < 0 {
            return Err(Error::invalid("t0_ms must be nonnegative"));
        }
        if let Some(s) = self.smoothing_sigma_px {
            if s < 0.0 {
                return Err(Error::invalid("smoothing sigma must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Match config used by the whole experiment: smoothing from the
    /// override or the modeled yaw error, tau from the first sweep value.
    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            tau_s: self.tau_list_s.first().copied().unwrap_or(DEFAULT_TAU_S),
            smoothing_sigma_px: self
                .smoothing_sigma_px
                .unwrap_or(self.synth.width as f64 * DEFAULT_YAW_ERROR_DEG / 360.0),
            map_width: self.synth.width,
            map_height: self.synth.height,
        }
    }
}

/// Load an [`ExperimentConfig`] from a JSON file.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("bad experiment config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// One identification attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub video_id: String,
    pub victim_seed: u64,
    pub t_s: f64,
    pub tau_s: f64,
    /// 1-based position of the true video in the full ranking.
    pub rank_of_truth: usize,
    pub top1: bool,
    pub top2: bool,
    pub top3: bool,
}

/// Aggregate accuracy for one (T, tau) sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub t_s: f64,
    pub tau_s: f64,
    pub trials: usize,
    /// `topk_accuracy[k - 1]` = fraction of trials with rank <= k.
    pub topk_accuracy: Vec<f64>,
}

/// Everything an experiment produced; aggregates are recomputable from the
/// rows via [`aggregate_rows`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub k_max: usize,
    pub total_trials: usize,
    pub cells: Vec<CellSummary>,
    pub rows: Vec<TrialRow>,
}

impl ExperimentReport {
    /// Mean top-k accuracy of the cell at (t_s, tau_s), if present.
    pub fn cell_accuracy(&self, t_s: f64, tau_s: f64, k: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.t_s == t_s && c.tau_s == tau_s)
            .and_then(|c| c.topk_accuracy.get(k - 1).copied())
    }
}

/// Recompute per-cell top-k accuracies from trial rows, in the given sweep
/// order.
pub fn aggregate_rows(
    rows: &[TrialRow],
    t_list_s: &[f64],
    tau_list_s: &[f64],
    k_max: usize,
) -> Vec<CellSummary> {
    let mut cells = Vec::with_capacity(t_list_s.len() * tau_list_s.len());
    for &t_s in t_list_s {
        for &tau_s in tau_list_s {
            let cell_rows: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.t_s == t_s && r.tau_s == tau_s)
                .collect();
            let trials = cell_rows.len();
            let topk_accuracy = (1..=k_max)
                .map(|k| {
                    if trials == 0 {
                        0.0
                    } else {
                        cell_rows.iter().filter(|r| r.rank_of_truth <= k).count() as f64
                            / trials as f64
                    }
                })
                .collect();
            cells.push(CellSummary {
                t_s,
                tau_s,
                trials,
                topk_accuracy,
            });
        }
    }
    cells
}

/// Run the full attack pipeline on one victim: simulate the ground truth,
/// add estimation noise, drift the frame, fit the drift from the two
/// endpoint anchors, and remove it.
fn simulate_and_clean(
    fp: &VideoFingerprint,
    cfg: &ExperimentConfig,
    victim_seed: u64,
    noise_seed: u64,
) -> Result<HeadMovementTrace> {
    let params = VictimParams {
        seed: victim_seed,
        ..cfg.victim.clone()
    };
    let clean = simulate_victim(fp, &params)?;
    let noise = NoiseSpec {
        seed: noise_seed,
        ..cfg.noise.clone()
    };
    let noised = inject_estimation_noise(&clean, &noise);
    let model = noise.drift_model();
    if model.theta_deg_per_s == 0.0 && model.theta0_deg == 0.0 {
        return Ok(noised);
    }
    let drifted = inject_yaw_drift(&noised, &model);
    let anchor_a = yaw_residual_at(&drifted, &noised, 0);
    let anchor_b = yaw_residual_at(&drifted, &noised, drifted.len() - 1);
    let fitted = fit_yaw_drift(anchor_a, anchor_b)?;
    Ok(remove_yaw_drift(&drifted, &fitted))
}

fn video_name(index: usize) -> String {
    format!("video_{index:03}")
}

/// Standalone library-synthesis description: `count` videos named
/// `video_000`, `video_001`, ... with per-video seeds derived from
/// `master_seed` and the video index. An experiment with the same
/// `master_seed` and synth template builds the identical library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySynthSpec {
    pub count: usize,
    pub master_seed: u64,
    pub synth: SynthSpec,
}

/// Load a [`LibrarySynthSpec`] from a JSON file.
pub fn load_library_spec(path: &Path) -> Result<LibrarySynthSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: LibrarySynthSpec = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("bad library spec: {e}")))?;
    if spec.count < 1 {
        return Err(Error::invalid("library count must be at least 1"));
    }
    Ok(spec)
}

/// Synthesize a library from a [`LibrarySynthSpec`].
pub fn synth_library_from_spec(spec: &LibrarySynthSpec) -> Result<FingerprintLibrary> {
    let fps = (0..spec.count)
        .map(|i| {
            let synth = SynthSpec {
                seed: seed::derive(spec.master_seed, &[ns::LIBRARY, i as u64]),
                ..spec.synth.clone()
            };
            synth_fingerprint(&video_name(i), &synth)
        })
        .collect::<Result<Vec<_>>>()?;
    FingerprintLibrary::new(fps)
}

/// Synthesize the library for an experiment config.
pub fn synth_library(cfg: &ExperimentConfig) -> Result<FingerprintLibrary> {
    synth_library_from_spec(&LibrarySynthSpec {
        count: cfg.library_size,
        master_seed: cfg.master_seed,
        synth: cfg.synth.clone(),
    })
}

/// Train the calibrator on held-out victims: every calibration trace is
/// scored against the whole library, labeled by whether the entry is its
/// source video. Calibration runs at the longest recording length and the
/// first sweep interval.
fn train_experiment_calibrator(
    cfg: &ExperimentConfig,
    library: &FingerprintLibrary,
    prepared: &PreparedLibrary,
) -> Result<Calibrator> {
    if library.len() == 1 {
        // A one-entry library admits no negative pairs, and the ranking is
        // independent of calibration anyway.
        return Ok(Calibrator {
            a: 1.0,
            b: 0.0,
            score_mean: 0.0,
            score_std: 1.0,
        });
    }
    let t_cal = cfg.t_list_s.iter().cloned().fold(f64::MIN, f64::max);
    let tau_cal = cfg.tau_list_s[0];
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for ci in 0..cfg.calibration.videos {
        let fp = &library.entries()[ci];
        for cv in 0..cfg.calibration.victims_per_video {
            let victim_seed = seed::derive(cfg.master_seed, &[ns::CAL_VICTIM, ci as u64, cv as u64]);
            let noise_seed = seed::derive(cfg.master_seed, &[ns::CAL_NOISE, ci as u64, cv as u64]);
            let trace = simulate_and_clean(fp, cfg, victim_seed, noise_seed)?;
            let windowed = trace.window(cfg.t0_ms, t_cal)?;
            let samples = windowed.sample_at_interval(tau_cal)?;
            for (idx, entry) in prepared.entries().iter().enumerate() {
                let (score, _) = entry.score_samples(&samples)?;
                scores.push(score);
                labels.push(idx == ci);
            }
        }
    }
    train_calibrator_from_scores(
        &scores,
        &labels,
        cfg.calibration.learning_rate,
        cfg.calibration.epochs,
    )
}

/// Library, prepared scorer, and trained calibrator for one config.
pub struct ExperimentSetup {
    pub library: FingerprintLibrary,
    pub prepared: PreparedLibrary,
    pub calibrator: Calibrator,
    pub match_config: MatchConfig,
}

/// Synthesize the library and train the calibrator for `cfg`.
pub fn prepare_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    let library = synth_library(cfg)?;
    let match_config = cfg.match_config();
    let prepared = PreparedLibrary::new(&library, &match_config)?;
    let calibrator = train_experiment_calibrator(cfg, &library, &prepared)?;
    Ok(ExperimentSetup {
        library,
        prepared,
        calibrator,
        match_config,
    })
}

/// Run the test trials of an experiment against a prepared setup.
pub fn run_prepared(cfg: &ExperimentConfig, setup: &ExperimentSetup) -> Result<ExperimentReport> {
    cfg.validate()?;
    let library = &setup.library;
    let prepared = &setup.prepared;
    let calibrator = &setup.calibrator;

    let mut rows = Vec::new();
    for vi in 0..cfg.videos_tested {
        let video_id = video_name(vi);
        let fp = &library.entries()[vi];
        for vj in 0..cfg.victims_per_video {
            let victim_seed = seed::derive(cfg.master_seed, &[ns::TEST_VICTIM, vi as u64, vj as u64]);
            let noise_seed = seed::derive(cfg.master_seed, &[ns::TEST_NOISE, vi as u64, vj as u64]);
            let cleaned = simulate_and_clean(fp, cfg, victim_seed, noise_seed)?;
            for &t_s in &cfg.t_list_s {
                let windowed = cleaned.window(cfg.t0_ms, t_s)?;
                for &tau_s in &cfg.tau_list_s {
                    let ranking =
                        identify_topk_prepared(&windowed, prepared, tau_s, calibrator, cfg.k_max)?;
                    let rank_of_truth = ranking
                        .rank_of(&video_id)
                        .expect("true video is in the library");
                    rows.push(TrialRow {
                        video_id: video_id.clone(),
                        victim_seed,
                        t_s,
                        tau_s,
                        rank_of_truth,
                        top1: rank_of_truth <= 1,
                        top2: rank_of_truth <= 2,
                        top3: rank_of_truth <= 3,
                    });
                }
            }
        }
    }

    let cells = aggregate_rows(&rows, &cfg.t_list_s, &cfg.tau_list_s, cfg.k_max);
    Ok(ExperimentReport {
        master_seed: cfg.master_seed,
        k_max: cfg.k_max,
        total_trials: rows.len(),
        cells,
        rows,
    })
}

/// Run the experiment end to end: library synthesis, calibration, then one
/// identification per (video, victim, T, tau). Deterministic in
/// `master_seed`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let setup = prepare_experiment(cfg)?;
    run_prepared(cfg, &setup)
}

const TRIALS_HEADER: &str = "video_id,victim_seed,t_s,tau_s,rank_of_truth,top1,top2,top3";

/// Render trials.csv: one row per identification attempt.
pub fn trials_to_csv(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str("# One row per identification attempt.\n");
    out.push_str(
        "# rank_of_truth is the 1-based position of the true video; topN is 1 when rank <= N.\n",
    );
    out.push_str(TRIALS_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.video_id,
            r.victim_seed,
            r.t_s,
            r.tau_s,
            r.rank_of_truth,
            r.top1 as u8,
            r.top2 as u8,
            r.top3 as u8
        ));
    }
    out
}

/// Parse trials.csv back into rows (inverse of [`trials_to_csv`]).
pub fn trials_from_csv(text: &str) -> Result<Vec<TrialRow>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !saw_header {
            if line != TRIALS_HEADER {
                return Err(Error::invalid(format!("bad trials header: {line:?}")));
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::invalid(format!("bad trials row: {line:?}")));
        }
        let parse_err = |what: &str| Error::invalid(format!("bad {what} in row {line:?}"));
        rows.push(TrialRow {
            video_id: f[0].to_string(),
            victim_seed: f[1].parse().map_err(|_| parse_err("victim_seed"))?,
            t_s: f[2].parse().map_err(|_| parse_err("t_s"))?,
            tau_s: f[3].parse().map_err(|_| parse_err("tau_s"))?,
            rank_of_truth: f[4].parse().map_err(|_| parse_err("rank_of_truth"))?,
            top1: f[5] == "1",
            top2: f[6] == "1",
            top3: f[7] == "1",
        });
    }
    if !saw_header {
        return Err(Error::invalid("trials csv has no header"));
    }
    Ok(rows)
}

fn sweep_to_csv(report: &ExperimentReport, axis: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# Mean top-k accuracy marginalized onto the {axis} axis.\n"
    ));
    let mut header = format!("{axis}_s,trials");
    for k in 1..=report.k_max {
        header.push_str(&format!(",top{k}_acc"));
    }
    out.push_str(&header);
    out.push('\n');

    // Cells arrive in sweep order; collect unique axis values preserving it.
    let mut seen = Vec::new();
    for cell in &report.cells {
        let v = if axis == "t" { cell.t_s } else { cell.tau_s };
        if !seen.contains(&v) {
            seen.push(v);
        }
    }

    for value in seen {
        let rows: Vec<&TrialRow> = report
            .rows
            .iter()
            .filter(|r| if axis == "t" { r.t_s == value } else { r.tau_s == value })
            .collect();
        let trials = rows.len();
        let mut line = format!("{value},{trials}");
        for k in 1..=report.k_max {
            let acc = if trials == 0 {
                0.0
            } else {
                rows.iter().filter(|r| r.rank_of_truth <= k).count() as f64 / trials as f64
            };
            line.push_str(&format!(",{acc}"));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Write trials.csv, summary.json, sweep_t.csv, and sweep_tau.csv into
/// `dir`, returning the paths in that order.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let trials_path = dir.join("trials.csv");
    std::fs::write(&trials_path, trials_to_csv(report))
        .map_err(|e| Error::io(&trials_path, e))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        master_seed: u64,
        k_max: usize,
        total_trials: usize,
        cells: &'a [CellSummary],
    }
    let summary_path = dir.join("summary.json");
    let summary = Summary {
        master_seed: report.master_seed,
        k_max: report.k_max,
        total_trials: report.total_trials,
        cells: &report.cells,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    std::fs::write(&summary_path, json + "\n").map_err(|e| Error::io(&summary_path, e))?;

    let sweep_t_path = dir.join("sweep_t.csv");
    std::fs::write(&sweep_t_path, sweep_to_csv(report, "t"))
        .map_err(|e| Error::io(&sweep_t_path, e))?;

    let sweep_tau_path = dir.join("sweep_tau.csv");
    std::fs::write(&sweep_tau_path, sweep_to_csv(report, "tau"))
        .map_err(|e| Error::io(&sweep_tau_path, e))?;

    Ok(vec![trials_path, summary_path, sweep_t_path, sweep_tau_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(master_seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            library_size: 3,
            videos_tested: 2,
            victims_per_video: 2,
            synth: SynthSpec {
                width: 32,
                height: 16,
                blob_count: 2,
                blob_sigma_deg: 12.0,
                drift_speed_deg_s: 2.0,
                duration_s: 10.0,
                frame_interval_ms: 200,
                seed: 0,
            },
            victim: VictimParams {
                switch_prob_per_s: 0.3,
                max_speed_deg_s: 60.0,
                jitter_sigma_deg: 2.0,
                sample_period_ms: 100,
                seed: 0,
            },
            noise: NoiseSpec {
                yaw_sigma_deg: 5.0,
                pitch_sigma_deg: 3.0,
                drift_rate_deg_s: 0.05,
                drift_offset_deg: 10.0,
                seed: 0,
            },
            t_list_s: vec![5.0, 10.0],
            tau_list_s: vec![0.8],
            k_max: 3,
            smoothing_sigma_px: None,
            calibration: CalibrationConfig {
                videos: 3,
                victims_per_video: 1,
                learning_rate: 0.1,
                epochs: 100,
            },
            t0_ms: 0,
            master_seed,
            output_dir: PathBuf::from("unused"),
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = tiny_config(1);
        cfg.videos_tested = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(1);
        cfg.k_max = 9;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(1);
        cfg.tau_list_s.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_video_library_is_always_right() {
        let mut cfg = tiny_config(7);
        cfg.library_size = 1;
        cfg.videos_tested = 1;
        cfg.victims_per_video = 2;
        cfg.k_max = 1;
        cfg.calibration.videos = 1;
        let report = run_experiment(&cfg).unwrap();
        for cell in &report.cells {
            assert_eq!(cell.topk_accuracy[0], 1.0, "cell {cell:?}");
        }
    }

    #[test]
    fn report_is_deterministic_and_files_are_byte_identical() {
        let cfg = tiny_config(42);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);

        let dir = std::env::temp_dir().join(format!("harness_det_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let first = emit_report(&a, &dir.join("first")).unwrap();
        let second = emit_report(&b, &dir.join("second")).unwrap();
        for (pa, pb) in first.iter().zip(&second) {
            let ba = std::fs::read(pa).unwrap();
            let bb = std::fs::read(pb).unwrap();
            assert_eq!(ba, bb, "{pa:?} differs from {pb:?}");
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn seed_isolation_across_victim_count() {
        let mut small = tiny_config(11);
        small.victims_per_video = 1;
        let mut large = tiny_config(11);
        large.victims_per_video = 2;
        let report_small = run_experiment(&small).unwrap();
        let report_large = run_experiment(&large).unwrap();
        for row in &report_small.rows {
            let matching = report_large.rows.iter().find(|r| {
                r.video_id == row.video_id
                    && r.victim_seed == row.victim_seed
                    && r.t_s == row.t_s
                    && r.tau_s == row.tau_s
            });
            assert_eq!(matching, Some(row), "existing cell changed outcome");
        }
    }

    #[test]
    fn aggregates_match_rows() {
        let cfg = tiny_config(13);
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(
            report.total_trials,
            cfg.videos_tested * cfg.victims_per_video * cfg.t_list_s.len() * cfg.tau_list_s.len()
        );
        let recomputed = aggregate_rows(&report.rows, &cfg.t_list_s, &cfg.tau_list_s, cfg.k_max);
        assert_eq!(report.cells, recomputed);
        for c in &report.cells {
            for pair in c.topk_accuracy.windows(2) {
                assert!(pair[0] <= pair[1], "top-k accuracy must be nondecreasing in k");
            }
        }
    }

    #[test]
    fn empty_report_emits_headers_only() {
        let report = ExperimentReport {
            master_seed: 0,
            k_max: 3,
            total_trials: 0,
            cells: vec![],
            rows: vec![],
        };
        let dir = std::env::temp_dir().join(format!("harness_empty_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let paths = emit_report(&report, &dir).unwrap();
        let trials = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(trials.ends_with(&format!("{TRIALS_HEADER}\n")));
        assert_eq!(trials_from_csv(&trials).unwrap().len(), 0);
        let summary = std::fs::read_to_string(&paths[1]).unwrap();
        assert!(summary.contains("\"total_trials\": 0"));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn trials_csv_round_trip_reproduces_aggregates() {
        let cfg = tiny_config(17);
        let report = run_experiment(&cfg).unwrap();
        let csv = trials_to_csv(&report);
        let rows = trials_from_csv(&csv).unwrap();
        assert_eq!(rows, report.rows);
        let cells = aggregate_rows(&rows, &cfg.t_list_s, &cfg.tau_list_s, cfg.k_max);
        for (a, b) in cells.iter().zip(&report.cells) {
            assert_eq!(a.trials, b.trials);
            for (x, y) in a.topk_accuracy.iter().zip(&b.topk_accuracy) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_trial_summary_is_zero_or_one() {
        let mut cfg = tiny_config(19);
        cfg.videos_tested = 1;
        cfg.victims_per_video = 1;
        cfg.t_list_s = vec![10.0];
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        let acc = report.cells[0].topk_accuracy[0];
        assert!(acc == 0.0 || acc == 1.0);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = tiny_config(23);
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
