use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lidarprop::calib::ImageSize;
use lidarprop_cli::commands::{bench, eval, plot, propose, synth, Scheme};
use lidarprop_cli::config::{parse_image_size, Overrides, PipelineConfig};

/// LiDAR-driven pedestrian region proposals for KITTI-style data.
#[derive(Debug, Parser)]
#[command(name = "lidarprop", version)]
struct Cli {
    /// Pipeline config (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root holding velodyne/, calib/ and label_2/
    /// (falls back to dataset.root, then $LIDARPROP_DATASET_ROOT).
    #[arg(long, global = true)]
    dataset_root: Option<PathBuf>,
    /// Frame selector: `7`, `0-99`, `3,5,8`, `@list.txt`; default all.
    #[arg(long, global = true)]
    frames: Option<String>,
    /// Seed for downsampling and synthesis
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frame worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Image size as WxH.
    #[arg(long, global = true, value_parser = parse_size)]
    image_size: Option<ImageSize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

fn parse_size(s: &str) -> Result<ImageSize, String> {
    parse_image_size(s).map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: anyhow::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write one proposal file per frame.
    Propose {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "clustering", value_parser = parse_scheme)]
        scheme: Scheme,
        /// Also write the JSON variant of each file.
        #[arg(long)]
        json: bool,
    },
    /// Score proposal files against labels.
    Eval {
        #[arg(long)]
        proposals: PathBuf,
        /// Label directory; defaults to the dataset's.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Score file: `frame_id proposal_index score` per line.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare clustering and sliding-window extraction.
    Bench {
        /// Run only this scheme.
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
        /// Use N synthetic frames instead of the dataset.
        #[arg(long, value_name = "N")]
        synthetic: Option<u64>,
        /// Scene file for --synthetic.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Aspect ratios to sweep.
        #[arg(long, value_delimiter = ',')]
        sweep_aspect: Vec<f64>,
        /// DBSCAN radii to sweep.
        #[arg(long, value_delimiter = ',')]
        sweep_eps: Vec<f64>,
        /// DBSCAN minimum populations to sweep.
        #[arg(long, value_delimiter = ',')]
        sweep_min_pts: Vec<usize>,
        /// Write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic dataset in KITTI layout.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: u64,
    },
    /// Draw recall-vs-IoU curves into an SVG.
    Plot {
        #[arg(required = true)]
        curves: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        dataset_root: cli.dataset_root.clone(),
        seed: cli.seed,
        workers: cli.workers,
        image_size: cli.image_size,
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Propose { out, scheme, json } => {
            let summary = propose::run(
                &cfg,
                &propose::ProposeArgs {
                    out,
                    scheme,
                    json,
                    frames: cli.frames,
                },
            )?;
            print!("{}", summary.timing_table());
            if let Some((id, msg)) = summary.failures.first() {
                for (id, msg) in &summary.failures[1..] {
                    eprintln!("error: frame {id}: {msg}");
                }
                bail!(
                    "{} of {} frames failed; frame {id}: {msg}",
                    summary.failures.len(),
                    summary.failures.len() + summary.frames
                );
            }
        }
        Cmd::Eval {
            proposals,
            labels,
            scores,
            out,
        } => {
            let report = eval::run(
                &cfg,
                &eval::EvalArgs {
                    proposals,
                    labels,
                    scores,
                    out,
                    frames: cli.frames,
                },
            )?;
            print!("{}", report.to_csv());
        }
        Cmd::Bench {
            scheme,
            synthetic,
            spec,
            sweep_aspect,
            sweep_eps,
            sweep_min_pts,
            csv,
        } => {
            let rows = bench::run(
                &cfg,
                &bench::BenchArgs {
                    schemes: scheme.into_iter().collect(),
                    synthetic,
                    spec,
                    sweep_aspect,
                    sweep_eps,
                    sweep_min_pts,
                    frames: cli.frames,
                },
            )?;
            print!("{}", bench::to_table(&rows));
            if rows.iter().filter(|r| r.scheme == "clustering").count() > 1 {
                if let Some(best) = bench::best_clustering(&rows) {
                    println!(
                        "best clustering: aspect {} eps {} min_pts {} recall {:.4} ({:.1} regions/frame)",
                        best.aspect_ratio,
                        bench::opt(best.eps),
                        bench::opt(best.min_pts),
                        best.max_recall,
                        best.regions_per_frame
                    );
                }
            }
            if let Some(path) = csv {
                fs::write(&path, bench::to_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Cmd::Synth { spec, out, count } => {
            let s = synth::run(
                &cfg,
                &synth::SynthArgs {
                    spec,
                    out: out.clone(),
                    count,
                    seed: cli.seed,
                },
            )?;
            println!("{} frames, {} labels written to {}", s.frames, s.labels, out.display());
        }
        Cmd::Plot { curves, out } => plot::run(&curves, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
