use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::plan::ExperimentPlan;
use crate::pipeline::{measure, run_nodes, write_stage_reports, MeasureWindow, NodeSetup, PipelineConfig, PipelineError};
use crate::synth::{generate_world, mix, DensityPreset, ScenarioSpec};

pub const RESULTS_CSV: &str = "results.csv";
pub const PLAN_JSON: &str = "plan.json";
pub const STAGE_REPORTS: &str = "stage_reports";
pub const CSV_HEADER: [&str; 10] =
    ["hardware", "density", "nodes", "repetition", "status", "fps_per_node", "latency_s", "frames_measured", "detections_per_s", "note"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellStatus {
    Ok,
    Failed(String),
}

/// One (density, nodes, repetition) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub density: DensityPreset,
    pub nodes: usize,
    pub repetition: usize,
    pub status: CellStatus,
    pub fps_per_node: Option<f64>,
    pub latency_s: Option<f64>,
    pub frames_measured: u64,
    /// Ground-truth person detections per second, averaged over cameras.
    pub detections_per_s: Option<f64>,
}

/// Mean over the successful repetitions of one (density, nodes) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub density: DensityPreset,
    pub nodes: usize,
    pub runs: usize,
    pub fps_per_node: Option<f64>,
    pub latency_s: Option<f64>,
    pub frames_measured: u64,
    pub detections_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub hardware: String,
    pub cells: Vec<CellResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl ExperimentResult {
    /// Cell means in plan order of first appearance.
    pub fn means(&self) -> Vec<CellMean> {
        let mut keys: Vec<(DensityPreset, usize)> = Vec::new();
        for c in &self.cells {
            if !keys.contains(&(c.density, c.nodes)) {
                keys.push((c.density, c.nodes));
            }
        }
        keys.into_iter()
            .map(|(density, nodes)| {
                let ok: Vec<&CellResult> =
                    self.cells.iter().filter(|c| c.density == density && c.nodes == nodes && c.status == CellStatus::Ok).collect();
                CellMean {
                    density,
                    nodes,
                    runs: ok.len(),
                    fps_per_node: mean(ok.iter().filter_map(|c| c.fps_per_node)),
                    latency_s: mean(ok.iter().filter_map(|c| c.latency_s)),
                    frames_measured: ok.iter().map(|c| c.frames_measured).sum(),
                    detections_per_s: mean(ok.iter().filter_map(|c| c.detections_per_s)),
                }
            })
            .collect()
    }

    pub fn mean_of(&self, density: DensityPreset, nodes: usize) -> Option<CellMean> {
        self.means().into_iter().find(|m| m.density == density && m.nodes == nodes)
    }

    /// Run rows followed by one mean row per cell.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for c in &self.cells {
            let (status, note) = match &c.status {
                CellStatus::Ok => ("ok", String::new()),
                CellStatus::Failed(why) => ("failed", why.clone()),
            };
            w.write_record([
                self.hardware.clone(),
                c.density.name().to_string(),
                c.nodes.to_string(),
                c.repetition.to_string(),
                status.to_string(),
                fmt_opt(c.fps_per_node),
                fmt_opt(c.latency_s),
                c.frames_measured.to_string(),
                fmt_opt(c.detections_per_s),
                note,
            ])
            .expect("in-memory write");
        }
        for m in self.means() {
            let status = if m.runs > 0 { "ok" } else { "failed" };
            w.write_record([
                self.hardware.clone(),
                m.density.name().to_string(),
                m.nodes.to_string(),
                "mean".to_string(),
                status.to_string(),
                fmt_opt(m.fps_per_node),
                fmt_opt(m.latency_s),
                m.frames_measured.to_string(),
                fmt_opt(m.detections_per_s),
                format!("{} runs", m.runs),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Reads the run rows of a results file back.
    pub fn from_csv(text: &str) -> Result<Self, PipelineError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut hardware = String::new();
        let mut cells = Vec::new();
        let bad = |m: String| PipelineError::InvalidConfig(m);
        for rec in r.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            if get(3) == "mean" {
                continue;
            }
            hardware = get(0).to_string();
            let opt = |s: &str| -> Result<Option<f64>, PipelineError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| bad(format!("bad number {s:?}: {e}")))
                }
            };
            cells.push(CellResult {
                density: get(1).parse().map_err(bad)?,
                nodes: get(2).parse().map_err(|e| bad(format!("bad node count: {e}")))?,
                repetition: get(3).parse().map_err(|e| bad(format!("bad repetition: {e}")))?,
                status: if get(4) == "ok" { CellStatus::Ok } else { CellStatus::Failed(get(9).to_string()) },
                fps_per_node: opt(get(5))?,
                latency_s: opt(get(6))?,
                frames_measured: get(7).parse().unwrap_or(0),
                detections_per_s: opt(get(8))?,
            });
        }
        Ok(Self { hardware, cells })
    }

    pub fn summary_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Scaling results: {}\n", self.hardware);
        let _ = writeln!(s, "| density | nodes | runs | FPS per node | latency (s) | detections/s |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|");
        for m in self.means() {
            let cell = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                m.density.name(),
                m.nodes,
                m.runs,
                cell(m.fps_per_node, 2),
                cell(m.latency_s, 2),
                cell(m.detections_per_s, 1)
            );
        }
        let failed: Vec<_> = self
            .cells
            .iter()
            .filter_map(|c| match &c.status {
                CellStatus::Failed(why) => Some((c, why)),
                CellStatus::Ok => None,
            })
            .collect();
        if !failed.is_empty() {
            let _ = writeln!(s, "\nFailed runs:\n");
            for (c, why) in failed {
                let _ = writeln!(s, "- {} x{} rep {}: {why}", c.density.name(), c.nodes, c.repetition);
            }
        }
        s
    }
}

/// Directory of one run's stage reports.
pub fn run_dir(out: &Path, density: DensityPreset, nodes: usize, repetition: usize) -> PathBuf {
    out.join(STAGE_REPORTS).join(format!("{}_n{nodes}_r{repetition}", density.name()))
}

fn run_cell(plan: &ExperimentPlan, density: DensityPreset, nodes: usize, repetition: usize, out: Option<&Path>) -> CellResult {
    let profile = plan.resolve();
    let mut cell = CellResult {
        density,
        nodes,
        repetition,
        status: CellStatus::Ok,
        fps_per_node: None,
        latency_s: None,
        frames_measured: 0,
        detections_per_s: None,
    };
    let fail = |mut cell: CellResult, why: String| {
        log::warn!("{} nodes at {} density, repetition {repetition}: {why}", nodes, density.name());
        cell.status = CellStatus::Failed(why);
        cell
    };
    if let Err(e) = profile.host.check(nodes) {
        return fail(cell, e.to_string());
    }
    let config = PipelineConfig {
        source: plan.source,
        clock: plan.clock,
        services: profile.services.clone(),
        seed: mix(&[plan.seed, repetition as u64]),
        ..PipelineConfig::default()
    };
    let mut setups = Vec::with_capacity(nodes);
    let mut rates = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let spec = ScenarioSpec {
            camera_id: format!("cam-{i}"),
            ..ScenarioSpec::preset(density, mix(&[plan.seed, repetition as u64, i as u64]), plan.frames)
        };
        let gt = match generate_world(&spec) {
            Ok(gt) => Arc::new(gt),
            Err(e) => return fail(cell, e.to_string()),
        };
        let persons: usize = (0..spec.duration_frames).map(|f| gt.person_count(f)).sum();
        rates.push(persons as f64 / spec.duration_frames as f64 * spec.fps);
        match NodeSetup::synthetic(&gt, &config) {
            Ok(s) => setups.push(s),
            Err(e) => return fail(cell, e.to_string()),
        }
    }
    cell.detections_per_s = mean(rates.into_iter());
    let report = match run_nodes(&config, &profile.host, setups).and_then(|h| h.join()) {
        Ok(r) => r,
        Err(e) => return fail(cell, e.to_string()),
    };
    if let Some((node, (stage, why))) = report.nodes.iter().find_map(|n| n.failures.first().map(|f| (n.node, f))) {
        return fail(cell, format!("node {node} stage {stage}: {why}"));
    }
    if let Some(out) = out.filter(|_| plan.stage_reports.keeps(repetition)) {
        if let Err(e) = write_stage_reports(&run_dir(out, density, nodes, repetition), &report.nodes) {
            log::error!("cannot write stage reports: {e}");
        }
    }
    let summary = measure(&report, &MeasureWindow::new(plan.warmup_frames, plan.cooldown_frames));
    if summary.is_empty() {
        return fail(cell, "no frames inside the measurement window".into());
    }
    cell.fps_per_node = summary.fps_per_node;
    cell.latency_s = summary.latency_s;
    cell.frames_measured = summary
        .per_node
        .iter()
        .map(|m| match m {
            crate::pipeline::Measurement::Measured { frames, .. } => *frames,
            crate::pipeline::Measurement::Empty => 0,
        })
        .sum();
    log::info!(
        "{} density, {nodes} nodes, repetition {repetition}: {:.2} FPS per node, {:.2} s latency",
        density.name(),
        cell.fps_per_node.unwrap_or(0.0),
        cell.latency_s.unwrap_or(0.0)
    );
    cell
}

/// Runs every cell of `plan` in turn. With `out`, writes `results.csv`,
/// `plan.json` and one stage-report directory per run.
pub fn run_experiment(plan: &ExperimentPlan, out: Option<&Path>) -> Result<ExperimentResult, PipelineError> {
    plan.validate()?;
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(PLAN_JSON), serde_json::to_string_pretty(plan).expect("plan serializes"))?;
    }
    let mut cells = Vec::new();
    for &density in &plan.densities {
        for &nodes in &plan.node_counts {
            for rep in 0..plan.repetitions {
                cells.push(run_cell(plan, density, nodes, rep, out));
            }
        }
    }
    let result = ExperimentResult { hardware: plan.hardware.clone(), cells };
    if let Some(out) = out {
        std::fs::write(out.join(RESULTS_CSV), result.to_csv())?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(density: DensityPreset, nodes: usize, rep: usize, fps: f64) -> CellResult {
        CellResult {
            density,
            nodes,
            repetition: rep,
            status: CellStatus::Ok,
            fps_per_node: Some(fps),
            latency_s: Some(1.0),
            frames_measured: 10,
            detections_per_s: Some(70.0),
        }
    }

    #[test]
    fn mean_rows_average_repetitions() {
        let r = ExperimentResult {
            hardware: "h".into(),
            cells: vec![
                cell(DensityPreset::Normal, 1, 0, 10.0),
                cell(DensityPreset::Normal, 1, 1, 20.0),
                cell(DensityPreset::Normal, 1, 2, 60.0),
            ],
        };
        assert_eq!(r.mean_of(DensityPreset::Normal, 1).unwrap().fps_per_node, Some(30.0));
        let back = ExperimentResult::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn failed_cells_round_trip() {
        let mut c = cell(DensityPreset::Heavy, 4, 0, 0.0);
        c.status = CellStatus::Failed("no room".into());
        c.fps_per_node = None;
        c.latency_s = None;
        let r = ExperimentResult { hardware: "h".into(), cells: vec![c] };
        let text = r.to_csv();
        assert!(text.contains("heavy,4,mean,failed,,,0,"));
        assert_eq!(ExperimentResult::from_csv(&text).unwrap(), r);
    }
}
