//! `propose`: per-frame proposal files.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use lidarprop::proposals::{
    format_proposal_lines, generate_cluster_proposals, generate_sliding_windows, proposals_to_json, Proposal,
};
use log::info;
use serde::Serialize;

use super::{load_frame, Scheme};
use crate::config::PipelineConfig;
use crate::frames::{median, ms, resolve, run_ordered};

pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone)]
pub struct ProposeArgs {
    pub out: PathBuf,
    pub scheme: Scheme,
    /// Also write `<frame>.json`.
    pub json: bool,
    pub frames: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProposeSummary {
    pub scheme: String,
    pub frames: usize,
    pub regions: usize,
    /// Median milliseconds per stage over the successful frames.
    pub timing_ms: BTreeMap<String, f64>,
    #[serde(skip)]
    pub failures: Vec<(String, String)>,
}

impl ProposeSummary {
    pub fn timing_table(&self) -> String {
        let mut s = format!("{} frames, {} regions ({})\n", self.frames, self.regions, self.scheme);
        for (stage, v) in &self.timing_ms {
            s.push_str(&format!("  {stage:<12} {v:>10.3} ms (median)\n"));
        }
        s
    }
}

struct FrameRun {
    proposals: Vec<Proposal>,
    stages: Vec<(&'static str, Duration)>,
}

pub fn run(cfg: &PipelineConfig, args: &ProposeArgs) -> Result<ProposeSummary> {
    let ids = resolve(args.frames.as_deref(), &cfg.velodyne_dir()?, "bin")?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let windows = match args.scheme {
        Scheme::Sliding => Some(generate_sliding_windows(cfg.dataset.image_size, &cfg.sliding)?),
        Scheme::Clustering => None,
    };

    let results = run_ordered(cfg.workers, &ids, |id| -> Result<FrameRun> {
        let run = match &windows {
            Some(w) => {
                let t = Instant::now();
                let proposals = w.clone();
                let elapsed = t.elapsed();
                FrameRun {
                    proposals,
                    stages: vec![("windows", elapsed), ("total", elapsed)],
                }
            }
            None => {
                let (cloud, calib) = load_frame(cfg, id)?;
                let out = generate_cluster_proposals(&cloud, &calib, &cfg.pipeline)
                    .with_context(|| format!("running the pipeline on {id}"))?;
                let t = out.timings;
                FrameRun {
                    proposals: out.proposals,
                    stages: vec![
                        ("downsample", t.downsample),
                        ("ground", t.ground),
                        ("clustering", t.clustering),
                        ("projection", t.projection),
                        ("total", t.total()),
                    ],
                }
            }
        };
        let path = args.out.join(format!("{id}.txt"));
        fs::write(&path, format_proposal_lines(id, &run.proposals))
            .with_context(|| format!("writing {}", path.display()))?;
        if args.json {
            let path = args.out.join(format!("{id}.json"));
            fs::write(&path, proposals_to_json(id, &run.proposals))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(run)
    })?;

    let mut stage_times: BTreeMap<String, Vec<Duration>> = BTreeMap::new();
    let mut summary = ProposeSummary {
        scheme: args.scheme.to_string(),
        frames: 0,
        regions: 0,
        timing_ms: BTreeMap::new(),
        failures: Vec::new(),
    };
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(run) => {
                summary.frames += 1;
                summary.regions += run.proposals.len();
                for (stage, d) in run.stages {
                    stage_times.entry(stage.to_string()).or_default().push(d);
                }
            }
            Err(e) => summary.failures.push((id.clone(), format!("{e:#}"))),
        }
    }
    summary.timing_ms = stage_times.into_iter().map(|(k, v)| (k, ms(median(v)))).collect();
    let timing_path = args.out.join(TIMING_FILE);
    fs::write(&timing_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", timing_path.display()))?;
    info!("{} of {} frames written to {}", summary.frames, ids.len(), args.out.display());
    Ok(summary)
}
