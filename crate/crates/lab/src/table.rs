//! Sweep and regression CSV files, and the per-group summary the report is
//! built from.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use selfmodel_core::env::TaskKind;
use selfmodel_core::harness::{fit_r_squared, median, CellResult, Regression};

pub const SWEEP_HEADER: [&str; 12] = [
    "preset",
    "dof",
    "budget",
    "seed",
    "task",
    "score_random",
    "score_mfrl",
    "score_selfmodel",
    "pct_improvement",
    "raw_ratio",
    "model_val_loss",
    "wall_time_s",
];

pub const REGRESSION_HEADER: [&str; 5] = ["budget", "slope", "intercept", "r_squared", "n_points"];

/// One line of the sweep CSV. Missing values are NaN / `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub preset: String,
    pub dof: usize,
    pub budget: usize,
    pub seed: u64,
    pub task: TaskKind,
    pub score_random: f64,
    pub score_mfrl: f64,
    pub score_selfmodel: f64,
    pub pct_improvement: f64,
    pub raw_ratio: f64,
    pub model_val_loss: f64,
    pub wall_time_s: Option<f64>,
}

impl SweepRow {
    pub fn from_cell(c: &CellResult, record_wall_time: bool) -> Self {
        Self {
            preset: c.spec.preset.clone(),
            dof: c.spec.dof,
            budget: c.spec.budget,
            seed: c.spec.seed_index,
            task: c.spec.task,
            score_random: c.score_random,
            score_mfrl: c.score_mfrl,
            score_selfmodel: c.score_selfmodel,
            pct_improvement: c.pct_improvement,
            raw_ratio: c.raw_ratio,
            model_val_loss: c.model_val_loss,
            wall_time_s: if record_wall_time { c.wall_time_s } else { None },
        }
    }
}

/// Shortest round-trip decimal; `NA` for NaN.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        v.to_string()
    }
}

fn parse_real(field: &str) -> Result<f64> {
    if field == "NA" {
        Ok(f64::NAN)
    } else {
        field
            .parse()
            .with_context(|| format!("`{field}` is not a number"))
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.preset.clone(),
            r.dof.to_string(),
            r.budget.to_string(),
            r.seed.to_string(),
            r.task.name().to_string(),
            format_real(r.score_random),
            format_real(r.score_mfrl),
            format_real(r.score_selfmodel),
            format_real(r.pct_improvement),
            format_real(r.raw_ratio),
            format_real(r.model_val_loss),
            format_real(r.wall_time_s.unwrap_or(f64::NAN)),
        ])?;
    }
    Ok(w.into_inner()?)
}

pub fn read_sweep_csv(bytes: &[u8]) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SWEEP_HEADER {
        bail!("unexpected sweep header: {}", header.join(","));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or_default();
        let row = (|| -> Result<SweepRow> {
            let task = TaskKind::from_name(f(4))
                .with_context(|| format!("unknown task `{}`", f(4)))?;
            let wall = parse_real(f(11))?;
            Ok(SweepRow {
                preset: f(0).to_string(),
                dof: f(1).parse()?,
                budget: f(2).parse()?,
                seed: f(3).parse()?,
                task,
                score_random: parse_real(f(5))?,
                score_mfrl: parse_real(f(6))?,
                score_selfmodel: parse_real(f(7))?,
                pct_improvement: parse_real(f(8))?,
                raw_ratio: parse_real(f(9))?,
                model_val_loss: parse_real(f(10))?,
                wall_time_s: (!wall.is_nan()).then_some(wall),
            })
        })()
        .with_context(|| format!("sweep csv record {}", line + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Median improvement of one (task, budget, preset) group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPoint {
    pub preset: String,
    pub dof: usize,
    pub median_pct: f64,
    pub n: usize,
}

/// Points and fit for one (task, budget) panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub task: TaskKind,
    pub budget: usize,
    pub points: Vec<GroupPoint>,
    pub fit: Regression,
}

/// Groups rows by task, budget and preset; regresses median improvement on
/// dof for each (task, budget). Fails if any panel has fewer than two dof
/// groups with a finite median.
pub fn summarize(rows: &[SweepRow]) -> Result<Vec<Panel>> {
    if rows.is_empty() {
        bail!("no sweep rows");
    }
    let mut groups: BTreeMap<(TaskKind, usize, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let pcts = groups
            .entry((r.task, r.budget, r.dof, r.preset.clone()))
            .or_default();
        if r.pct_improvement.is_finite() {
            pcts.push(r.pct_improvement);
        }
    }
    let mut panels: BTreeMap<(TaskKind, usize), Vec<GroupPoint>> = BTreeMap::new();
    for ((task, budget, dof, preset), pcts) in groups {
        let points = panels.entry((task, budget)).or_default();
        if !pcts.is_empty() {
            points.push(GroupPoint {
                preset,
                dof,
                median_pct: median(&pcts),
                n: pcts.len(),
            });
        }
    }
    panels
        .into_iter()
        .map(|((task, budget), points)| {
            let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.dof as f64, p.median_pct)).collect();
            let fit = fit_r_squared(&xy).with_context(|| {
                format!(
                    "insufficient groups for task {} at budget {budget}: {} dof groups with results",
                    task.name(),
                    points.len()
                )
            })?;
            Ok(Panel {
                task,
                budget,
                points,
                fit,
            })
        })
        .collect()
}

pub fn regression_csv(panels: &[&Panel]) -> Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(REGRESSION_HEADER)?;
    for p in panels {
        w.write_record([
            p.budget.to_string(),
            format_real(p.fit.slope),
            format_real(p.fit.intercept),
            format_real(p.fit.r_squared),
            p.fit.n_points.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Regression CSV files keyed by file name: `regression.csv` for a
/// single-task sweep, `regression_<task>.csv` per task otherwise.
pub fn regression_files(panels: &[Panel]) -> Result<Vec<(String, Vec<u8>)>> {
    let mut tasks: Vec<TaskKind> = panels.iter().map(|p| p.task).collect();
    tasks.dedup();
    tasks
        .iter()
        .map(|t| {
            let name = if tasks.len() == 1 {
                "regression.csv".to_string()
            } else {
                format!("regression_{}.csv", t.name())
            };
            let mine: Vec<&Panel> = panels.iter().filter(|p| p.task == *t).collect();
            Ok((name, regression_csv(&mine)?))
        })
        .collect()
}

pub fn read_path(path: &Path) -> Result<Vec<SweepRow>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_sweep_csv(&bytes)
}
