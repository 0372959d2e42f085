use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use vigil::bench::{render_report, run_experiment, ExperimentPlan};
use vigil::global::{serve, GalleryConfig, GlobalNode, SharedNode, TcpSink};
use vigil::pipeline::{measure, run_local_node, ClockMode, MeasureWindow, NodeSetup, PipelineConfig};
use vigil::synth::{generate_world, ScenarioSpec};

#[derive(Parser)]
#[command(name = "vigil", version, about = "Privacy-preserving multi-camera video analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scaling experiment and write results.csv, stage_reports/ and plots/.
    Run {
        /// Experiment plan (JSON). Defaults to the full reference grid.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clock: Option<ClockMode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Frames per camera and run, overriding the plan.
        #[arg(long)]
        frames: Option<u64>,
    },
    /// Redraw plots and the summary of a finished run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Push one synthetic scenario through a local node and a global node.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        /// Pipeline configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Send to a running global node instead of an in-process one.
        #[arg(long)]
        global: Option<std::net::SocketAddr>,
    },
    /// Serve the global node over TCP.
    ServeGlobal {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
        #[arg(long)]
        db: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { plan, out, clock, seed, frames } => {
            let mut plan = match plan {
                Some(p) => ExperimentPlan::load(&p)?,
                None => ExperimentPlan::default(),
            };
            if let Some(c) = clock {
                plan.clock = c;
            }
            if let Some(s) = seed {
                plan.seed = s;
            }
            if let Some(f) = frames {
                let keep = f.saturating_sub(plan.warmup_frames + plan.cooldown_frames);
                if keep == 0 {
                    plan.warmup_frames = f / 4;
                    plan.cooldown_frames = f / 4;
                }
                plan.frames = f;
            }
            run_experiment(&plan, Some(&out))?;
            let result = render_report(&out)?;
            print!("{}", result.summary_markdown());
        }
        Command::Report { input } => {
            let result = render_report(&input)?;
            print!("{}", result.summary_markdown());
        }
        Command::Replay { scenario, config, global } => {
            let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(&scenario)?)?;
            let config = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::default(),
            };
            let gt = std::sync::Arc::new(generate_world(&spec)?);
            let setup = NodeSetup::synthetic(&gt, &config)?;
            let shared = SharedNode::new(GlobalNode::in_memory(GalleryConfig::default())?);
            let setup = match global {
                Some(addr) => setup.with_sink(TcpSink::new(addr)),
                None => setup.with_sink(shared.clone()),
            };
            let report = run_local_node(&config, setup)?.join()?;
            let summary = measure(&report, &MeasureWindow::all());
            let node = &report.nodes[0];
            let mut counters = serde_json::to_value(&node.counters)?;
            if let Some(map) = counters.as_object_mut() {
                map.retain(|_, v| !v.is_array());
            }
            let mut out = json!({
                "camera_id": node.camera_id.to_string(),
                "frames_out": node.frames_out(),
                "fps": summary.fps_per_node,
                "latency_s": summary.latency_s,
                "counters": counters,
                "failures": node.failures.iter().map(|(s, m)| format!("{s}: {m}")).collect::<Vec<_>>(),
            });
            if global.is_none() {
                let g = shared.lock();
                let stats = g.stats();
                let ids: std::collections::BTreeSet<u64> = g.assignments()?.iter().map(|a| a.global_id).collect();
                out["global"] = json!({
                    "accepted": stats.accepted,
                    "duplicates": stats.duplicates,
                    "rejected": stats.rejected,
                    "features": stats.features,
                    "global_ids": ids.len(),
                    "ground_truth_identities": gt.identity_count(),
                });
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::ServeGlobal { listen, db } => {
            let node = GlobalNode::open(&db, GalleryConfig::default())?;
            let handle = serve(listen.as_str(), node)?;
            eprintln!("listening on {}", handle.local_addr());
            handle.wait();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
