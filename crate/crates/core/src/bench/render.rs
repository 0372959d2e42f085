use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::experiment::{run_dir, ExperimentResult, PLAN_JSON, RESULTS_CSV, STAGE_REPORTS};
use super::plan::ExperimentPlan;
use crate::model::{Nanos, NANOS_PER_SEC};
use crate::pipeline::{MeasureWindow, PipelineError, Stage, StageReport};
use crate::synth::DensityPreset;

pub const PLOTS: &str = "plots";
pub const SUMMARY_MD: &str = "summary.md";
const HISTOGRAM_BINS: usize = 30;

/// One batch as seen in a stage-report file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportedBatch {
    pub first_frame: u64,
    pub frames: usize,
    pub sink_complete: Nanos,
}

/// Rebuilds per-batch completion from a node's stage-report rows. Batches
/// missing a sink row are left out.
pub fn reported_batches(rows: &[StageReport]) -> Vec<ReportedBatch> {
    let mut by_batch: BTreeMap<u64, (usize, Option<Nanos>, usize)> = BTreeMap::new();
    for r in rows {
        let e = by_batch.entry(r.batch).or_insert((0, None, 0));
        if r.stage == Stage::Source {
            e.0 = r.frames;
        }
        if r.stage.is_sink() {
            e.1 = Some(e.1.map_or(r.complete_ns, |x| x.max(r.complete_ns)));
            e.2 += 1;
        }
    }
    let sinks = Stage::ALL.iter().filter(|s| s.is_sink()).count();
    let mut next_frame = 0;
    let mut out = Vec::new();
    for (frames, done, seen) in by_batch.into_values() {
        let first_frame = next_frame;
        next_frame += frames as u64;
        if let (Some(done), true) = (done, seen == sinks) {
            out.push(ReportedBatch { first_frame, frames, sink_complete: done });
        }
    }
    out
}

/// Instantaneous FPS of each measured batch: its frames over the gap since
/// the previous batch left the last sink.
pub fn fps_samples(batches: &[ReportedBatch], window: &MeasureWindow) -> Vec<f64> {
    let total: u64 = batches.iter().map(|b| b.frames as u64).sum();
    let hi = total.saturating_sub(window.cooldown_frames);
    let mut prev: Option<Nanos> = None;
    let mut out = Vec::new();
    for b in batches {
        let end = b.first_frame + b.frames as u64;
        if b.first_frame >= window.warmup_frames && end <= hi {
            if let Some(p) = prev.filter(|p| b.sink_complete > *p) {
                out.push(b.frames as f64 / ((b.sink_complete - p) as f64 / NANOS_PER_SEC));
            }
        }
        prev = Some(b.sink_complete);
    }
    out
}

fn read_rows(path: &Path) -> Result<Vec<StageReport>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Result<Vec<StageReport>, _> = r.deserialize().collect();
    Ok(rows?)
}

/// Per-batch FPS samples of every stage-report directory under `out`, by
/// density. Files are visited in sorted order.
pub fn collect_samples(
    out: &Path,
    plan: &ExperimentPlan,
    result: &ExperimentResult,
) -> Result<BTreeMap<DensityPreset, Vec<f64>>, PipelineError> {
    let window = MeasureWindow::new(plan.warmup_frames, plan.cooldown_frames);
    let mut samples: BTreeMap<DensityPreset, Vec<f64>> = BTreeMap::new();
    for c in &result.cells {
        let dir = run_dir(out, c.density, c.nodes, c.repetition);
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let rows = read_rows(&f)?;
            samples.entry(c.density).or_default().extend(fps_samples(&reported_batches(&rows), &window));
        }
    }
    Ok(samples)
}

fn plot_err<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Io(std::io::Error::other(format!("plot: {e}")))
}

fn colour(d: DensityPreset) -> RGBColor {
    match d {
        DensityPreset::Normal => RGBColor(31, 119, 180),
        DensityPreset::Heavy => RGBColor(255, 127, 14),
        DensityPreset::Extreme => RGBColor(214, 39, 40),
    }
}

/// Mean metric against node count, one line per density. Failed cells
/// leave a gap.
fn line_plot(
    path: &Path,
    title: &str,
    y_label: &str,
    result: &ExperimentResult,
    metric: fn(&super::CellMean) -> Option<f64>,
) -> Result<(), PipelineError> {
    let means = result.means();
    let mut series: BTreeMap<DensityPreset, Vec<(usize, Option<f64>)>> = BTreeMap::new();
    for m in &means {
        series.entry(m.density).or_default().push((m.nodes, metric(m)));
    }
    let max_nodes = means.iter().map(|m| m.nodes).max().unwrap_or(1) as f64;
    let max_y = means.iter().filter_map(metric).fold(0.0, f64::max).max(1e-9) * 1.1;

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.5..max_nodes + 0.5, 0.0..max_y)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("local nodes").y_desc(y_label).draw().map_err(plot_err)?;
    for (density, points) in series {
        let c = colour(density);
        let mut labelled = false;
        for segment in points.split(|(_, v)| v.is_none()).filter(|s| !s.is_empty()) {
            let line: Vec<(f64, f64)> = segment.iter().map(|(n, v)| (*n as f64, v.unwrap_or(0.0))).collect();
            let drawn = chart.draw_series(LineSeries::new(line.clone(), c.stroke_width(2))).map_err(plot_err)?;
            if !labelled {
                drawn.label(density.name()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
                labelled = true;
            }
            chart.draw_series(line.into_iter().map(|p| Circle::new(p, 4, c.filled()))).map_err(plot_err)?;
        }
    }
    chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn histogram(path: &Path, density: DensityPreset, samples: &[f64]) -> Result<(), PipelineError> {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / HISTOGRAM_BINS as f64).max(1e-9);
    let mut counts = [0usize; HISTOGRAM_BINS];
    for s in samples {
        counts[(((s - lo) / width) as usize).min(HISTOGRAM_BINS - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(1) as f64 * 1.1;

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("Per-batch throughput, {} density", density.name()), ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(lo..lo + width * HISTOGRAM_BINS as f64, 0.0..top)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("FPS per node").y_desc("batches").draw().map_err(plot_err)?;
    let c = colour(density);
    chart
        .draw_series(counts.iter().enumerate().map(|(i, n)| {
            let x0 = lo + i as f64 * width;
            Rectangle::new([(x0, 0.0), (x0 + width, *n as f64)], c.mix(0.7).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Writes `plots/` and `summary.md` for a finished result directory.
pub fn render_report(out: &Path) -> Result<ExperimentResult, PipelineError> {
    let result = ExperimentResult::from_csv(&std::fs::read_to_string(out.join(RESULTS_CSV))?)?;
    let plan = match std::fs::read_to_string(out.join(PLAN_JSON)) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| PipelineError::InvalidConfig(format!("{PLAN_JSON}: {e}")))?,
        Err(_) => ExperimentPlan::default(),
    };
    let plots = out.join(PLOTS);
    std::fs::create_dir_all(&plots)?;
    line_plot(&plots.join("throughput.svg"), "Throughput per node", "FPS per node", &result, |m| m.fps_per_node)?;
    line_plot(&plots.join("latency.svg"), "End-to-end latency", "latency (s)", &result, |m| m.latency_s)?;
    let mut summary = result.summary_markdown();
    if out.join(STAGE_REPORTS).is_dir() {
        for (density, samples) in collect_samples(out, &plan, &result)? {
            if samples.is_empty() {
                continue;
            }
            histogram(&plots.join(format!("throughput_dist_{}.svg", density.name())), density, &samples)?;
            let mut sorted = samples.clone();
            sorted.sort_by(f64::total_cmp);
            let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
            summary.push_str(&format!(
                "\n{} density, per-batch FPS over {} batches: p5 {:.2}, median {:.2}, p95 {:.2}\n",
                density.name(),
                sorted.len(),
                q(0.05),
                q(0.5),
                q(0.95)
            ));
        }
    }
    std::fs::write(out.join(SUMMARY_MD), summary)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(first_frame: u64, sink_complete: Nanos) -> ReportedBatch {
        ReportedBatch { first_frame, frames: 30, sink_complete }
    }

    #[test]
    fn samples_follow_completion_gaps() {
        let s = NANOS_PER_SEC as Nanos;
        let batches: Vec<ReportedBatch> = (0..10).map(|b| batch(b * 30, (b + 1) * s)).collect();
        let all = fps_samples(&batches, &MeasureWindow::all());
        assert_eq!(all.len(), 9);
        assert!(all.iter().all(|x| (x - 30.0).abs() < 1e-9));
        assert_eq!(fps_samples(&batches, &MeasureWindow::new(60, 60)).len(), 6);
    }
}
