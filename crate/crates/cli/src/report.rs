//! `report`: method-by-setting accuracy tables and variance/time plots from finished runs.
//!
//! Everything here is computed from each run's resolved config, manifest status and metrics log.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use plotters::prelude::*;
use skd_core::analysis::MetricsLog;
use skd_core::Method;

use crate::config::{self, RunConfigFile, RESOLVED_CONFIG_FILE};
use crate::manifest::{RunManifest, RunStatus, METRICS_FILE};

pub const TABLE_MD: &str = "report.md";
pub const TABLE_CSV: &str = "report.csv";
pub const VARIANCE_SVG: &str = "variance_vs_epoch.svg";
pub const VARIANCE_CSV: &str = "variance_vs_epoch.csv";
pub const TIME_SVG: &str = "time_cost.svg";
pub const TIME_CSV: &str = "time_cost.csv";

/// One run directory as read from disk.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub config: RunConfigFile,
    pub method: Method,
    pub status: Option<RunStatus>,
    pub log: MetricsLog,
}

impl RunRecord {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let cfg_path = dir.join(RESOLVED_CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
        let config = config::parse(&text, &cfg_path)?;
        let method = config.method.parse()?;
        let status = RunManifest::load(dir).ok().map(|m| m.status);
        let metrics = dir.join(METRICS_FILE);
        let log = if metrics.exists() { MetricsLog::read_csv(&metrics)? } else { MetricsLog::new() };
        Ok(Self { dir: dir.to_path_buf(), config, method, status, log })
    }

    /// Finished and logged every configured epoch.
    pub fn is_complete(&self) -> bool {
        self.status == Some(RunStatus::Completed) && self.log.split("test").len() == self.config.epochs
    }

    fn final_test(&self) -> Option<(f64, f64)> {
        self.log.last("test").map(|r| (r.top1_accuracy, r.ranked_output_variance))
    }

    fn mean_train_seconds(&self) -> Option<f64> {
        let rows = self.log.split("train");
        (!rows.is_empty()).then(|| rows.iter().map(|r| r.seconds_per_iteration).sum::<f64>() / rows.len() as f64)
    }

    /// Everything except the seed and output location.
    fn setting(&self) -> toml::Table {
        let mut c = self.config.clone();
        c.seed = 0;
        c.output_dir = PathBuf::new();
        toml::Table::try_from(&c).expect("config serializes")
    }
}

/// Runs sharing every setting but the seed.
#[derive(Clone, Debug)]
pub struct Group {
    pub label: String,
    pub model: String,
    pub dataset: String,
    pub method: Method,
    pub seeds: BTreeSet<u64>,
    pub complete: Vec<usize>,
    pub incomplete: Vec<usize>,
    pub mean_top1: Option<f64>,
    pub mean_variance: Option<f64>,
    /// Against the vanilla group with the same model, dataset, epochs and seeds.
    pub delta_vs_vanilla: Option<f64>,
    setting: toml::Table,
}

impl Group {
    pub fn column(&self) -> String {
        format!("{} / {}", self.model, self.dataset)
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub runs: Vec<RunRecord>,
    pub groups: Vec<Group>,
}

fn flatten(table: &toml::Table, prefix: &str, out: &mut Vec<(String, String)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(t, &key, out),
            other => out.push((key, other.to_string())),
        }
    }
}

pub fn build(runs: Vec<RunRecord>) -> Report {
    let mut groups: Vec<Group> = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let setting = run.setting();
        let g = match groups.iter_mut().position(|g| g.setting == setting) {
            Some(g) => &mut groups[g],
            None => {
                groups.push(Group {
                    label: run.method.label().to_string(),
                    model: run.config.model.clone(),
                    dataset: run.config.dataset.clone(),
                    method: run.method,
                    seeds: BTreeSet::new(),
                    complete: Vec::new(),
                    incomplete: Vec::new(),
                    mean_top1: None,
                    mean_variance: None,
                    delta_vs_vanilla: None,
                    setting,
                });
                groups.last_mut().expect("just pushed")
            }
        };
        g.seeds.insert(run.config.seed);
        if run.is_complete() {
            g.complete.push(i);
        } else {
            g.incomplete.push(i);
        }
    }
    for g in &mut groups {
        let finals: Vec<(f64, f64)> = g.complete.iter().filter_map(|&i| runs[i].final_test()).collect();
        if !finals.is_empty() {
            let n = finals.len() as f64;
            g.mean_top1 = Some(finals.iter().map(|f| f.0).sum::<f64>() / n);
            g.mean_variance = Some(finals.iter().map(|f| f.1).sum::<f64>() / n);
        }
    }
    // several settings of one method in a column are told apart by the keys that differ
    for i in 0..groups.len() {
        let siblings: Vec<usize> = (0..groups.len())
            .filter(|&j| j != i && groups[j].method == groups[i].method && groups[j].column() == groups[i].column())
            .collect();
        if siblings.is_empty() {
            continue;
        }
        let mut mine = Vec::new();
        flatten(&groups[i].setting, "", &mut mine);
        let differing: Vec<String> = mine
            .iter()
            .filter(|(k, v)| {
                siblings.iter().any(|&j| {
                    let mut theirs = Vec::new();
                    flatten(&groups[j].setting, "", &mut theirs);
                    theirs.iter().find(|(tk, _)| tk == k).map(|(_, tv)| tv) != Some(v)
                })
            })
            .map(|(k, v)| format!("{k}={}", v.trim_matches('"')))
            .collect();
        groups[i].label = format!("{} ({})", groups[i].method.label(), differing.join(", "));
    }
    let epochs = |g: &Group| g.setting.get("epochs").cloned();
    for i in 0..groups.len() {
        if groups[i].method == Method::Vanilla {
            continue;
        }
        let reference = groups.iter().find(|v| {
            v.method == Method::Vanilla
                && v.column() == groups[i].column()
                && epochs(v) == epochs(&groups[i])
                && v.seeds == groups[i].seeds
                && v.mean_top1.is_some()
        });
        if let (Some(v), Some(mine)) = (reference, groups[i].mean_top1) {
            groups[i].delta_vs_vanilla = Some(mine - v.mean_top1.expect("checked"));
        }
    }
    groups.sort_by_key(|g| (g.column(), Method::ALL.iter().position(|m| *m == g.method), g.label.clone()));
    Report { runs, groups }
}

fn percent(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn signed_percent(d: f64) -> String {
    if d >= 0.0 {
        format!("(+{:.2}%)", d * 100.0)
    } else {
        format!("({:.2}%)", d * 100.0)
    }
}

impl Report {
    fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = Vec::new();
        for g in &self.groups {
            if !cols.contains(&g.column()) {
                cols.push(g.column());
            }
        }
        cols
    }

    fn cell(g: &Group) -> String {
        let mut s = match g.mean_top1 {
            Some(acc) => percent(acc),
            None => "incomplete".into(),
        };
        if let Some(d) = g.delta_vs_vanilla {
            let _ = write!(s, " {}", signed_percent(d));
        }
        if g.mean_top1.is_some() && !g.incomplete.is_empty() {
            let _ = write!(s, " [{} incomplete]", g.incomplete.len());
        }
        s
    }

    /// Methods as rows, model/dataset settings as columns; cells are mean final test top-1 over seeds.
    pub fn markdown(&self) -> String {
        let cols = self.columns();
        let mut s = String::from("# Top-1 accuracy\n\nMean final-epoch test top-1 over seeds; deltas are against vanilla with the same model, dataset, epochs and seeds.\n\n| Method |");
        for c in &cols {
            let _ = write!(s, " {c} |");
        }
        s.push_str("\n|---|");
        for _ in &cols {
            s.push_str("---|");
        }
        s.push('\n');
        let mut labels: Vec<&str> = Vec::new();
        for g in &self.groups {
            if !labels.contains(&g.label.as_str()) {
                labels.push(&g.label);
            }
        }
        for label in labels {
            let _ = write!(s, "| {label} |");
            for c in &cols {
                let cell = self
                    .groups
                    .iter()
                    .find(|g| g.label == label && g.column() == *c)
                    .map(Self::cell)
                    .unwrap_or_default();
                let _ = write!(s, " {cell} |");
            }
            s.push('\n');
        }
        let flagged: Vec<&RunRecord> = self.runs.iter().filter(|r| !r.is_complete()).collect();
        if !flagged.is_empty() {
            s.push_str("\n## Incomplete runs\n\n");
            for r in flagged {
                let status =
                    r.status.map(|st| format!("{st:?}").to_lowercase()).unwrap_or_else(|| "no manifest".into());
                let _ = writeln!(
                    s,
                    "- {}: {} ({} of {} epochs logged)",
                    r.dir.display(),
                    status,
                    r.log.split("test").len(),
                    r.config.epochs
                );
            }
        }
        s
    }

    pub fn csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "dataset",
            "method",
            "label",
            "seeds",
            "complete_runs",
            "incomplete_runs",
            "mean_final_test_top1",
            "delta_vs_vanilla",
            "mean_final_ranked_output_variance",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for g in &self.groups {
            let seeds: Vec<String> = g.seeds.iter().map(u64::to_string).collect();
            w.write_record([
                g.model.clone(),
                g.dataset.clone(),
                g.method.as_str().to_string(),
                g.label.clone(),
                seeds.join(" "),
                g.complete.len().to_string(),
                g.incomplete.len().to_string(),
                opt(g.mean_top1),
                opt(g.delta_vs_vanilla),
                opt(g.mean_variance),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    fn run_label(&self, i: usize) -> String {
        let r = &self.runs[i];
        let g = self.groups.iter().find(|g| g.complete.contains(&i) || g.incomplete.contains(&i)).expect("grouped");
        format!("{} seed {}", g.label, r.config.seed)
    }

    /// Per-run test-split series: `run,label,epoch,test_top1,ranked_output_variance`.
    pub fn variance_series(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "label", "epoch", "test_top1", "ranked_output_variance"])?;
        for (i, r) in self.runs.iter().enumerate() {
            for row in r.log.split("test") {
                w.write_record([
                    r.dir.display().to_string(),
                    self.run_label(i),
                    row.epoch.to_string(),
                    row.top1_accuracy.to_string(),
                    row.ranked_output_variance.to_string(),
                ])?;
            }
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    /// Mean train seconds per iteration per group, and the ratio to the matching vanilla group.
    pub fn time_series(&self) -> Vec<(String, f64, Option<f64>)> {
        let mean = |g: &Group| {
            let v: Vec<f64> = g.complete.iter().filter_map(|&i| self.runs[i].mean_train_seconds()).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        self.groups
            .iter()
            .filter_map(|g| {
                let t = mean(g)?;
                let vanilla = self
                    .groups
                    .iter()
                    .find(|v| v.method == Method::Vanilla && v.column() == g.column())
                    .and_then(mean)
                    .filter(|v| *v > 0.0);
                Some((format!("{} [{}]", g.label, g.column()), t, vanilla.map(|v| t / v)))
            })
            .collect()
    }

    fn time_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "seconds_per_iteration", "ratio_to_vanilla"])?;
        for (label, t, ratio) in self.time_series() {
            w.write_record([label, t.to_string(), ratio.map(|r| r.to_string()).unwrap_or_default()])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    fn plot_variance(&self, path: &Path) -> anyhow::Result<()> {
        let series: Vec<(String, Vec<(f64, f64)>)> = (0..self.runs.len())
            .map(|i| {
                let pts =
                    self.runs[i].log.split("test").iter().map(|r| (r.epoch as f64, r.ranked_output_variance)).collect();
                (self.run_label(i), pts)
            })
            .collect();
        let max_epoch = series.iter().flat_map(|s| s.1.iter().map(|p| p.0)).fold(1.0, f64::max);
        let max_var = series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).fold(0.0, f64::max).max(1e-9);
        let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Ranked-output variance (test split)", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(35)
            .y_label_area_size(55)
            .build_cartesian_2d(1.0..max_epoch.max(2.0), 0.0..max_var * 1.05)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("epoch").y_desc("variance").draw().map_err(plot_err)?;
        for (i, (label, pts)) in series.into_iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                .map_err(plot_err)?
                .label(label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
        Ok(())
    }

    fn plot_time(&self, path: &Path) -> anyhow::Result<()> {
        let series = self.time_series();
        let max_t = series.iter().map(|s| s.1).fold(0.0, f64::max).max(1e-9);
        let n = series.len().max(1) as u32;
        let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Training time per iteration", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(35)
            .y_label_area_size(55)
            .build_cartesian_2d((0u32..n).into_segmented(), 0.0..max_t * 1.1)
            .map_err(plot_err)?;
        let labels: Vec<String> = series.iter().map(|s| s.0.clone()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_label_formatter(&|x| match x {
                SegmentValue::CenterOf(i) => labels.get(*i as usize).cloned().unwrap_or_default(),
                _ => String::new(),
            })
            .y_desc("seconds per iteration")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(
                Histogram::vertical(&chart)
                    .style(BLUE.mix(0.6).filled())
                    .margin(20)
                    .data(series.iter().enumerate().map(|(i, s)| (i as u32, s.1))),
            )
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
        Ok(())
    }

    /// Writes the tables, the plots and their data series into `out`.
    pub fn write(&self, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut written = Vec::new();
        for (name, text) in [
            (TABLE_MD, self.markdown()),
            (TABLE_CSV, self.csv()?),
            (VARIANCE_CSV, self.variance_series()?),
            (TIME_CSV, self.time_csv()?),
        ] {
            let path = out.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        self.plot_variance(&out.join(VARIANCE_SVG))?;
        self.plot_time(&out.join(TIME_SVG))?;
        written.extend([out.join(VARIANCE_SVG), out.join(TIME_SVG)]);
        Ok(written)
    }
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::anyhow!("plotting failed: {e:?}")
}

pub fn report(dirs: &[PathBuf], out: &Path) -> anyhow::Result<(Report, Vec<PathBuf>)> {
    if dirs.is_empty() {
        anyhow::bail!(config::ConfigError {
            path: PathBuf::from("report"),
            line: None,
            message: "at least one run directory is required".into(),
        });
    }
    let runs = dirs.iter().map(|d| RunRecord::load(d)).collect::<anyhow::Result<Vec<_>>>()?;
    let report = build(runs);
    let written = report.write(out)?;
    Ok((report, written))
}
