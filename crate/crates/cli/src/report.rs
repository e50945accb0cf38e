//! Markdown tables and SVG plots for finished training runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use automr_core::data::Split;
use automr_core::train::{read_events, EventRecord, MetricsReport, EVENT_LOG};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const METRICS_FILE: &str = "metrics.json";

/// Final metrics of a run, computed from its best checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub class_names: Vec<String>,
    /// 1-based epoch of the best checkpoint, if any epoch ran.
    pub best_epoch: Option<usize>,
    pub train: MetricsReport,
    pub test: MetricsReport,
}

impl RunMetrics {
    pub fn split(&self, split: Split) -> &MetricsReport {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// Everything the report needs from one run directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub name: String,
    pub dir: PathBuf,
    pub events: Vec<EventRecord>,
    pub metrics: RunMetrics,
}

impl RunArtifacts {
    pub fn load(dir: &Path, name: Option<&str>) -> Result<Self, CliError> {
        let events_path = dir.join(EVENT_LOG);
        if !events_path.is_file() {
            return Err(CliError::Invalid(format!(
                "{} has no event log: expected {}",
                dir.display(),
                events_path.display()
            )));
        }
        let events = read_events(&events_path).map_err(|e| {
            CliError::Invalid(format!("{}: unreadable event log: {e}", events_path.display()))
        })?;
        let metrics_path = dir.join(METRICS_FILE);
        if !metrics_path.is_file() {
            return Err(CliError::Invalid(format!(
                "{} has no final metrics: expected {}",
                dir.display(),
                metrics_path.display()
            )));
        }
        let text = fs::read_to_string(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
        let metrics: RunMetrics = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", metrics_path.display())))?;
        let name = name.map(str::to_string).unwrap_or_else(|| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string())
        });
        Ok(Self {
            name,
            dir: dir.to_path_buf(),
            events,
            metrics,
        })
    }
}

const METRIC_HEADER: &str = "| Accuracy | Precision | Recall | F1 |";

fn metric_cells(m: &MetricsReport) -> String {
    format!(
        "| {} | {} | {} | {} |",
        m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
    )
}

/// One row per split; values are printed exactly as stored.
pub fn metrics_table(metrics: &RunMetrics) -> String {
    let mut out = format!("| Split {METRIC_HEADER}\n|---|---|---|---|---|\n");
    for (name, m) in [("train", &metrics.train), ("test", &metrics.test)] {
        writeln!(out, "| {name} {}", metric_cells(m)).unwrap();
    }
    out
}

/// Test-split metrics of several runs side by side.
pub fn comparison_table(runs: &[RunArtifacts]) -> String {
    let mut out = format!("| Run {METRIC_HEADER}\n|---|---|---|---|---|\n");
    for r in runs {
        writeln!(out, "| {} {}", r.name, metric_cells(&r.metrics.test)).unwrap();
    }
    out
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_table(m: &MetricsReport, class_names: &[String]) -> String {
    let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
    let k = m.confusion.len();
    let mut out = String::from("| true \\ predicted |");
    for c in 0..k {
        write!(out, " {} |", name(c)).unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(k));
    out.push('\n');
    for (t, row) in m.confusion.iter().enumerate() {
        write!(out, "| {} |", name(t)).unwrap();
        for v in row {
            write!(out, " {v} |").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Per-epoch history from the event log: one row per (epoch, split).
pub fn history_table(events: &[EventRecord]) -> String {
    let mut out =
        String::from("| Epoch | Split | Loss | Accuracy | Macro F1 | LR |\n|---|---|---|---|---|---|\n");
    for e in events {
        let split = match e.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        writeln!(
            out,
            "| {} | {split} | {:.4} | {:.4} | {:.4} | {:.3e} |",
            e.epoch, e.loss, e.accuracy, e.macro_f1, e.lr
        )
        .unwrap();
    }
    out
}

fn series(events: &[EventRecord], split: Split, value: fn(&EventRecord) -> f64) -> Vec<(f64, f64)> {
    events
        .iter()
        .filter(|e| e.split == split)
        .map(|e| (e.epoch as f64, value(e)))
        .collect()
}

/// Line plot of train and test curves against the epoch.
pub fn plot_curves(
    path: &Path,
    title: &str,
    y_label: &str,
    events: &[EventRecord],
    value: fn(&EventRecord) -> f64,
) -> Result<(), CliError> {
    let lines = [
        ("train", series(events, Split::Train, value), BLUE),
        ("test", series(events, Split::Test, value), RED),
    ];
    let points = lines.iter().flat_map(|l| l.1.iter());
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_max = x_max.max(x);
        if y.is_finite() {
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    let pad = ((y_max - y_min) * 0.05).max(1e-3);
    let draw = || -> Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (720, 432)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(56)
            .build_cartesian_2d(1.0..x_max.max(2.0), (y_min - pad)..(y_max + pad))?;
        chart
            .configure_mesh()
            .x_desc("epoch")
            .y_desc(y_label)
            .draw()?;
        for (label, data, color) in lines {
            chart
                .draw_series(LineSeries::new(data, color.stroke_width(2)))?
                .label(label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| CliError::Runtime(format!("{}: could not draw plot: {e}", path.display())))
}

/// Files produced by [`write_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Full report for one or more runs. Returns the markdown and the files written into `out`.
pub fn write_report(runs: &[RunArtifacts], out: &Path) -> Result<(String, ReportFiles), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut md = String::new();
    let mut files = ReportFiles {
        markdown: out.join("report.md"),
        plots: Vec::new(),
    };
    if runs.len() > 1 {
        md.push_str("# Comparison (test split)\n\n");
        md.push_str(&comparison_table(runs));
        md.push('\n');
    }
    for run in runs {
        let stem = file_stem(&run.name);
        writeln!(md, "# Run {}\n", run.name).unwrap();
        if let Some(epoch) = run.metrics.best_epoch {
            writeln!(md, "Best checkpoint: epoch {epoch}.\n").unwrap();
        }
        md.push_str("## Final metrics\n\n");
        md.push_str(&metrics_table(&run.metrics));
        md.push_str("\n## Confusion matrix (test)\n\n");
        md.push_str(&confusion_table(&run.metrics.test, &run.metrics.class_names));
        md.push_str("\n## Training history\n\n");
        md.push_str(&history_table(&run.events));
        let loss = out.join(format!("{stem}-loss.svg"));
        let acc = out.join(format!("{stem}-accuracy.svg"));
        plot_curves(&loss, &format!("{}: loss", run.name), "cross-entropy", &run.events, |e| e.loss)?;
        plot_curves(&acc, &format!("{}: accuracy", run.name), "accuracy", &run.events, |e| {
            e.accuracy
        })?;
        writeln!(
            md,
            "\n![loss]({}) ![accuracy]({})\n",
            loss.file_name().unwrap().to_string_lossy(),
            acc.file_name().unwrap().to_string_lossy()
        )
        .unwrap();
        files.plots.extend([loss, acc]);
    }
    crate::manifest::write_atomic(&files.markdown, md.as_bytes())?;
    Ok((md, files))
}
