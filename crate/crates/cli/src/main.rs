//! Command-line interface for the head-movement video identification
//! toolkit: library synthesis, victim simulation, noise and drift handling,
//! matching, sweep experiments, and open-world analysis.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

use headmatch_core::fingerprint::{load_library, save_library};
use headmatch_core::geometry::Frame;
use headmatch_core::harness::{
    emit_report, load_experiment_config, load_library_spec, prepare_experiment, run_prepared,
    synth_library_from_spec,
};
use headmatch_core::matcher::{
    identify_topk, load_calibrator, save_calibrator, MatchConfig, DEFAULT_YAW_ERROR_DEG,
};
use headmatch_core::openworld::{bdr, fpr_from_tpr, OpenWorldReport};
use headmatch_core::simulate::{
    fit_yaw_drift, inject_estimation_noise, inject_yaw_drift, remove_yaw_drift, simulate_victim,
    DriftModel, NoiseSpec, VictimParams,
};
use headmatch_core::trace::{read_trace_csv, write_trace_csv};

#[derive(Parser)]
#[command(
    name = "headmatch",
    version,
    about = "Identify 360-degree videos from VR head-movement traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a fingerprint library from a JSON spec.
    SynthLibrary {
        /// JSON file: {count, master_seed, synth: {...}}.
        #[arg(long)]
        spec: PathBuf,
        /// Output library directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a victim viewing one library video and write the trace CSV.
    SimulateVictim {
        #[arg(long)]
        library: PathBuf,
        /// Video id within the library.
        #[arg(long)]
        video: String,
        /// JSON file with the VictimParams.
        #[arg(long)]
        params: PathBuf,
        /// Seed overriding the params file.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the estimation-noise channel (and any drift in the spec) to a
    /// trace.
    InjectNoise {
        #[arg(long)]
        trace: PathBuf,
        /// JSON file with the NoiseSpec.
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the linear yaw-drift model from two anchors and print it.
    DriftFit {
        /// Anchors as t0,y0,t1,y1 (seconds and degrees).
        #[arg(long)]
        anchors: String,
    },
    /// Remove a yaw drift from a trace.
    DriftRemove {
        #[arg(long)]
        trace: PathBuf,
        /// Drift rate, degrees per second.
        #[arg(long)]
        theta: f64,
        /// Drift offset, degrees.
        #[arg(long)]
        theta0: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a camera-based trace to the VR frame using its first sample.
    ConvertTrace {
        #[arg(long)]
        trace: PathBuf,
        /// Target frame; only "vr" is supported.
        #[arg(long)]
        to: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match a trace against a library and print the ranking as JSON.
    Match {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        library: PathBuf,
        /// Calibrator JSON produced by `experiment`.
        #[arg(long)]
        cal: PathBuf,
        #[arg(long)]
        k: usize,
        /// Sampling interval in seconds.
        #[arg(long)]
        tau: f64,
        /// Override the default smoothing sigma (pixels).
        #[arg(long)]
        smoothing: Option<f64>,
        /// Write the ranking JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// True video id, for the summary CSV.
        #[arg(long)]
        truth: Option<String>,
        /// Write a one-row summary CSV (trace_id,true_video,top1,top2,top3,rank_of_truth).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run a full seeded experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's window start offset, milliseconds.
        #[arg(long)]
        t0: Option<i64>,
    },
    /// Open-world Bayesian detection rate analysis.
    Bdr {
        /// True positive rate of in-library identification.
        #[arg(long)]
        tpr: f64,
        /// False positive rate; alternative to --P/--N.
        #[arg(long, conflicts_with_all = ["positives", "negatives"])]
        fpr: Option<f64>,
        /// Positive match count, used with --N to derive the FPR.
        #[arg(long = "P", requires = "negatives")]
        positives: Option<u64>,
        /// Negative match count, used with --P to derive the FPR.
        #[arg(long = "N", requires = "positives")]
        negatives: Option<u64>,
        /// Probability of a test video being in-library.
        #[arg(long)]
        base: f64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SynthLibrary { spec, out } => {
            let spec = load_library_spec(&spec)?;
            let library = synth_library_from_spec(&spec)?;
            save_library(&library, &out)?;
            println!("wrote {} fingerprints to {}", library.len(), out.display());
        }
        Command::SimulateVictim {
            library,
            video,
            params,
            seed,
            out,
        } => {
            let library = load_library(&library)?;
            let fp = library
                .get(&video)
                .ok_or_else(|| anyhow!("video {video:?} not in library"))?;
            let text = std::fs::read_to_string(&params)
                .with_context(|| format!("reading {}", params.display()))?;
            let mut params: VictimParams = serde_json::from_str(&text)?;
            params.seed = seed;
            let trace = simulate_victim(fp, &params)?;
            write_trace_csv(&trace, &out)?;
            println!("wrote {} samples to {}", trace.len(), out.display());
        }
        Command::InjectNoise { trace, noise, out } => {
            let input = read_trace_csv(&trace)?;
            let text = std::fs::read_to_string(&noise)
                .with_context(|| format!("reading {}", noise.display()))?;
            let spec: NoiseSpec = serde_json::from_str(&text)?;
            let mut noisy = inject_estimation_noise(&input, &spec);
            let model = spec.drift_model();
            if model.theta_deg_per_s != 0.0 || model.theta0_deg != 0.0 {
                noisy = inject_yaw_drift(&noisy, &model);
            }
            write_trace_csv(&noisy, &out)?;
            println!("wrote {} samples to {}", noisy.len(), out.display());
        }
        Command::DriftFit { anchors } => {
            let parts: Vec<f64> = anchors
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| anyhow!("--anchors must be t0,y0,t1,y1"))?;
            if parts.len() != 4 {
                bail!("--anchors must have exactly four values, got {}", parts.len());
            }
            let model = fit_yaw_drift((parts[0], parts[1]), (parts[2], parts[3]))?;
            println!("{}", serde_json::to_string(&model)?);
        }
        Command::DriftRemove {
            trace,
            theta,
            theta0,
            out,
        } => {
            let input = read_trace_csv(&trace)?;
            let model = DriftModel {
                theta_deg_per_s: theta,
                theta0_deg: theta0,
            };
            let cleaned = remove_yaw_drift(&input, &model);
            write_trace_csv(&cleaned, &out)?;
            println!("wrote {} samples to {}", cleaned.len(), out.display());
        }
        Command::ConvertTrace { trace, to, out } => {
            if to != "vr" {
                bail!("unsupported conversion target {to:?}; only \"vr\" is supported");
            }
            let input = read_trace_csv(&trace)?;
            let (converted, a1) = input.convert_to_vr()?;
            write_trace_csv(&converted, &out)?;
            println!(
                "offset angle {a1:.6} degrees; wrote {} samples to {}",
                converted.len(),
                out.display()
            );
        }
        Command::Match {
            trace,
            library,
            cal,
            k,
            tau,
            smoothing,
            out,
            truth,
            summary,
        } => {
            let input = read_trace_csv(&trace)?;
            if input.frame() != Frame::Vr {
                bail!(
                    "trace is in the {} frame; run convert-trace --to vr first",
                    input.frame()
                );
            }
            let library = load_library(&library)?;
            let first = library
                .entries()
                .first()
                .ok_or_else(|| anyhow!("library is empty"))?;
            let (width, height) = (first.width(), first.height());
            let cfg = MatchConfig {
                tau_s: tau,
                smoothing_sigma_px: smoothing
                    .unwrap_or(width as f64 * DEFAULT_YAW_ERROR_DEG / 360.0),
                map_width: width,
                map_height: height,
            };
            let (calibrator, trained_hash) = load_calibrator(&cal)?;
            let expected = cfg.score_space_hash();
            if trained_hash != expected {
                bail!(
                    "calibrator config hash {trained_hash} does not match the scoring config \
                     {expected}; check the library grid and --smoothing"
                );
            }
            let ranking = identify_topk(&input, &library, &cfg, &calibrator, k)?;
            let json = serde_json::to_string_pretty(&ranking)?;
            match &out {
                Some(path) => std::fs::write(path, json + "\n")
                    .with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            if let Some(summary_path) = summary {
                let id_at = |rank: usize| {
                    ranking
                        .results
                        .get(rank)
                        .map(|r| r.video_id.as_str())
                        .unwrap_or("")
                        .to_string()
                };
                let (true_video, rank_of_truth) = match &truth {
                    Some(t) => (
                        t.clone(),
                        ranking
                            .rank_of(t)
                            .map(|r| r.to_string())
                            .unwrap_or_default(),
                    ),
                    None => (String::new(), String::new()),
                };
                let csv = format!(
                    "trace_id,true_video,top1,top2,top3,rank_of_truth\n{},{},{},{},{},{}\n",
                    input.session_id(),
                    true_video,
                    id_at(0),
                    id_at(1),
                    id_at(2),
                    rank_of_truth
                );
                std::fs::write(&summary_path, csv)
                    .with_context(|| format!("writing {}", summary_path.display()))?;
            }
        }
        Command::Experiment { config, t0 } => {
            let mut cfg = load_experiment_config(&config)?;
            if let Some(t0_ms) = t0 {
                cfg.t0_ms = t0_ms;
                cfg.validate()?;
            }
            let setup = prepare_experiment(&cfg)?;
            let report = run_prepared(&cfg, &setup)?;
            let paths = emit_report(&report, &cfg.output_dir)?;
            let cal_path = cfg.output_dir.join("calibrator.json");
            save_calibrator(&setup.calibrator, &setup.match_config, &cal_path)?;
            for cell in &report.cells {
                let accs: Vec<String> = cell
                    .topk_accuracy
                    .iter()
                    .enumerate()
                    .map(|(i, a)| format!("top{}={a:.3}", i + 1))
                    .collect();
                println!(
                    "T={}s tau={}s trials={} {}",
                    cell.t_s,
                    cell.tau_s,
                    cell.trials,
                    accs.join(" ")
                );
            }
            for p in paths.iter().chain(std::iter::once(&cal_path)) {
                println!("wrote {}", p.display());
            }
        }
        Command::Bdr {
            tpr,
            fpr,
            positives,
            negatives,
            base,
        } => {
            let fpr = match (fpr, positives, negatives) {
                (Some(f), None, None) => f,
                (None, Some(p), Some(n)) => fpr_from_tpr(tpr, p, n)?,
                _ => bail!("provide either --fpr or both --P and --N"),
            };
            // Reported rates carry four significant digits.
            let round_sig = |x: f64| {
                if x == 0.0 {
                    0.0
                } else {
                    let scale = 10f64.powi(3 - x.abs().log10().floor() as i32);
                    (x * scale).round() / scale
                }
            };
            let report = OpenWorldReport {
                base,
                bdr: round_sig(bdr(tpr, fpr, base)?),
                tpr,
                fpr: round_sig(fpr),
                in_lib_count: None,
                total_count: None,
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{line}");
            std::process::ExitCode::FAILURE
        }
    }
}
