//! `sweep`: a grid of `train` runs over one or more config keys, each in its own process.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use anyhow::Context;
use skd_core::analysis::MetricsLog;

use crate::config::{self, ConfigError, ResolvedRun};
use crate::exit;
use crate::manifest::{RunManifest, RunStatus, METRICS_FILE};

pub const SUMMARY_FILE: &str = "sweep_summary.csv";
pub const BEST_FILE: &str = "sweep_best.md";
pub const CELLS_DIR: &str = "cells";

/// One swept key and its values, written `key=v1,v2,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

fn axis_error(message: String) -> ConfigError {
    ConfigError { path: PathBuf::from("--axis"), line: None, message }
}

impl std::str::FromStr for Axis {
    type Err = ConfigError;

    fn from_str(spec: &str) -> Result<Self, ConfigError> {
        let (key, list) =
            spec.split_once('=').ok_or_else(|| axis_error(format!("`{spec}` is not of the form key=v1,v2")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(axis_error(format!("`{spec}` names no key")));
        }
        let values: Vec<toml::Value> = list.split(',').map(str::trim).filter(|v| !v.is_empty()).map(scalar).collect();
        if values.is_empty() {
            return Err(axis_error(format!("axis `{key}` has no values")));
        }
        Ok(Axis { key: key.to_string(), values })
    }
}

fn scalar(text: &str) -> toml::Value {
    if let Ok(i) = text.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = text.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = text.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(text.to_string())
    }
}

fn display(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Every combination of axis values, first axis varying slowest.
pub fn grid(axes: &[Axis]) -> Vec<Vec<toml::Value>> {
    let mut cells = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push(v.clone());
                    cell
                })
            })
            .collect();
    }
    cells
}

fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
            Ok(())
        }
        Some((section, rest)) => {
            let entry = table.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => set_key(t, rest, value),
                _ => Err(axis_error(format!("`{section}` is not a section"))),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellStatus {
    Completed,
    /// An identical configuration had already completed.
    Reused,
    Invalid,
    Diverged,
    Failed,
}

impl CellStatus {
    fn as_str(&self) -> &'static str {
        match self {
            CellStatus::Completed => "completed",
            CellStatus::Reused => "reused",
            CellStatus::Invalid => "invalid",
            CellStatus::Diverged => "diverged",
            CellStatus::Failed => "failed",
        }
    }

    fn ok(&self) -> bool {
        matches!(self, CellStatus::Completed | CellStatus::Reused)
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub values: Vec<toml::Value>,
    pub status: CellStatus,
    pub exit_code: i32,
    pub run_dir: Option<PathBuf>,
    pub final_test_top1: Option<f64>,
    pub best_test_top1: Option<f64>,
    pub final_variance: Option<f64>,
    pub message: String,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub summary: PathBuf,
    pub best: Option<usize>,
}

impl SweepOutcome {
    /// 0 when every cell finished; otherwise the code of the first failure.
    pub fn exit_code(&self) -> i32 {
        self.cells.iter().find(|c| !c.status.ok()).map(|c| c.exit_code).unwrap_or(exit::SUCCESS)
    }
}

pub struct SweepOptions<'a> {
    pub base: &'a Path,
    pub axes: &'a [Axis],
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub jobs: usize,
    /// The `skd` executable used for each cell.
    pub exe: &'a Path,
}

struct Pending {
    index: usize,
    config: PathBuf,
    run: ResolvedRun,
}

pub fn sweep(opts: &SweepOptions<'_>) -> anyhow::Result<SweepOutcome> {
    let text = fs::read_to_string(opts.base).with_context(|| format!("reading {}", opts.base.display()))?;
    let base_file = config::parse(&text, opts.base)?;
    let base: toml::Table =
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", opts.base.display(), e.message()))?;
    let mut seen = std::collections::HashSet::new();
    for axis in opts.axes {
        if !seen.insert(axis.key.as_str()) {
            return Err(axis_error(format!("axis `{}` given twice", axis.key)).into());
        }
    }
    let out = opts.out.map(Path::to_path_buf).unwrap_or(base_file.output_dir);
    let cells_dir = out.join(CELLS_DIR);
    fs::create_dir_all(&cells_dir).with_context(|| format!("creating {}", cells_dir.display()))?;

    let points = grid(opts.axes);
    let mut results: Vec<Option<CellResult>> = vec![None; points.len()];
    let mut pending = Vec::new();
    for (index, values) in points.iter().enumerate() {
        let blank = |status, code, message: String| CellResult {
            values: values.clone(),
            status,
            exit_code: code,
            run_dir: None,
            final_test_top1: None,
            best_test_top1: None,
            final_variance: None,
            message,
        };
        let mut table = base.clone();
        table.insert("output_dir".into(), toml::Value::String(out.display().to_string()));
        if let Some(seed) = opts.seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        for (axis, v) in opts.axes.iter().zip(values) {
            set_key(&mut table, &axis.key, v.clone())?;
        }
        let cell_text = toml::to_string(&table)?;
        let cell_path = cells_dir.join(format!("cell-{index:03}.toml"));
        fs::write(&cell_path, &cell_text).with_context(|| format!("writing {}", cell_path.display()))?;
        let run = match config::parse(&cell_text, &cell_path).and_then(|f| config::resolve(f, &cell_text, &cell_path)) {
            Ok(run) => run,
            Err(e) => {
                results[index] = Some(blank(CellStatus::Invalid, exit::CONFIG, e.to_string()));
                continue;
            }
        };
        if matches!(RunManifest::load(&run.run_dir()), Ok(m) if m.status == RunStatus::Completed) {
            let mut r = blank(CellStatus::Reused, exit::SUCCESS, String::new());
            r.run_dir = Some(run.run_dir());
            results[index] = Some(r);
            continue;
        }
        pending.push(Pending { index, config: cell_path, run });
    }

    let jobs = opts.jobs.max(1);
    let mut running: Vec<(Pending, Child)> = Vec::new();
    let mut queue = pending.into_iter();
    loop {
        while running.len() < jobs {
            let Some(p) = queue.next() else { break };
            let log = fs::File::create(p.config.with_extension("log"))?;
            let child = Command::new(opts.exe)
                .arg("train")
                .arg("--config")
                .arg(&p.config)
                .stdout(Stdio::null())
                .stderr(log)
                .spawn()
                .with_context(|| format!("starting {}", opts.exe.display()))?;
            running.push((p, child));
        }
        if running.is_empty() {
            break;
        }
        let (p, mut child) = running.remove(0);
        let status = child.wait()?;
        let code = status.code().unwrap_or(exit::FAILURE);
        let cell_status = match code {
            exit::SUCCESS => CellStatus::Completed,
            exit::CONFIG => CellStatus::Invalid,
            exit::DIVERGENCE => CellStatus::Diverged,
            _ => CellStatus::Failed,
        };
        let message = if cell_status.ok() { String::new() } else { last_line(&p.config.with_extension("log")) };
        results[p.index] = Some(CellResult {
            values: points[p.index].clone(),
            status: cell_status,
            exit_code: code,
            run_dir: Some(p.run.run_dir()),
            final_test_top1: None,
            best_test_top1: None,
            final_variance: None,
            message,
        });
    }

    let mut cells: Vec<CellResult> = results.into_iter().map(|r| r.expect("every cell resolved")).collect();
    for cell in &mut cells {
        if let Some(dir) = &cell.run_dir {
            if let Ok(log) = MetricsLog::read_csv(&dir.join(METRICS_FILE)) {
                let test = log.split("test");
                cell.final_test_top1 = test.last().map(|r| r.top1_accuracy);
                cell.final_variance = test.last().map(|r| r.ranked_output_variance);
                cell.best_test_top1 = test.iter().map(|r| r.top1_accuracy).reduce(f64::max);
            }
        }
    }
    let best = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.status.ok())
        .filter_map(|(i, c)| c.final_test_top1.map(|a| (i, a)))
        .fold(None, |acc: Option<(usize, f64)>, (i, a)| match acc {
            Some((_, b)) if b >= a => acc,
            _ => Some((i, a)),
        })
        .map(|(i, _)| i);
    let summary = out.join(SUMMARY_FILE);
    write_summary(&summary, opts.axes, &cells)?;
    fs::write(out.join(BEST_FILE), best_report(opts.axes, &cells, best))
        .with_context(|| format!("writing {}", out.join(BEST_FILE).display()))?;
    Ok(SweepOutcome { cells, summary, best })
}

fn last_line(path: &Path) -> String {
    fs::read_to_string(path)
        .ok()
        .and_then(|t| t.lines().rev().find(|l| !l.trim().is_empty()).map(str::to_string))
        .unwrap_or_default()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_summary(path: &Path, axes: &[Axis], cells: &[CellResult]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.extend(
        [
            "status",
            "exit_code",
            "run_dir",
            "final_test_top1",
            "best_test_top1",
            "final_ranked_output_variance",
            "message",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for (i, c) in cells.iter().enumerate() {
        let mut record = vec![i.to_string()];
        record.extend(c.values.iter().map(display));
        record.extend([
            c.status.as_str().to_string(),
            c.exit_code.to_string(),
            c.run_dir.as_ref().map(|d| d.display().to_string()).unwrap_or_default(),
            opt(c.final_test_top1),
            opt(c.best_test_top1),
            opt(c.final_variance),
            c.message.clone(),
        ]);
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn best_report(axes: &[Axis], cells: &[CellResult], best: Option<usize>) -> String {
    let mut s = String::from("# Sweep\n\n|");
    for a in axes {
        let _ = write!(s, " {} |", a.key);
    }
    s.push_str(" Top-1 | Status |\n|");
    for _ in 0..axes.len() + 2 {
        s.push_str("---|");
    }
    s.push('\n');
    for c in cells {
        s.push('|');
        for v in &c.values {
            let _ = write!(s, " {} |", display(v));
        }
        let acc = c.final_test_top1.map(|a| format!("{:.2}%", a * 100.0)).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(s, " {acc} | {} |", c.status.as_str());
    }
    match best {
        Some(i) => {
            let c = &cells[i];
            let setting: Vec<String> =
                axes.iter().zip(&c.values).map(|(a, v)| format!("{}={}", a.key, display(v))).collect();
            let _ = writeln!(
                s,
                "\nBest cell: {} with final test top-1 {:.2}% ({}).",
                setting.join(", "),
                c.final_test_top1.unwrap_or(f64::NAN) * 100.0,
                c.run_dir.as_ref().map(|d| d.display().to_string()).unwrap_or_default()
            );
        }
        None => s.push_str("\nNo cell completed.\n"),
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_values_are_typed() {
        let a: Axis = "tau_dsr=1,2.5,x,true".parse().unwrap();
        assert_eq!(a.key, "tau_dsr");
        assert_eq!(
            a.values,
            vec![
                toml::Value::Integer(1),
                toml::Value::Float(2.5),
                toml::Value::String("x".into()),
                toml::Value::Boolean(true)
            ]
        );
    }

    #[test]
    fn empty_axis_is_rejected() {
        assert!("tap=".parse::<Axis>().is_err());
        assert!("tap= , ".parse::<Axis>().is_err());
        assert!("tap".parse::<Axis>().is_err());
        assert!("=1,2".parse::<Axis>().is_err());
    }

    #[test]
    fn grid_is_the_cartesian_product() {
        let axes: Vec<Axis> = vec!["tap=1,2,3".parse().unwrap(), "alpha=0,0.2".parse().unwrap()];
        let g = grid(&axes);
        assert_eq!(g.len(), 6);
        assert_eq!(g[1], vec![toml::Value::Integer(1), toml::Value::Float(0.2)]);
        assert_eq!(g[5], vec![toml::Value::Integer(3), toml::Value::Float(0.2)]);
    }

    #[test]
    fn dotted_keys_reach_sections() {
        let mut t = toml::Table::new();
        set_key(&mut t, "lr.initial", toml::Value::Float(0.05)).unwrap();
        assert_eq!(t["lr"]["initial"].as_float(), Some(0.05));
        t.insert("x".into(), toml::Value::Integer(1));
        assert!(set_key(&mut t, "x.y", toml::Value::Integer(2)).is_err());
    }
}
