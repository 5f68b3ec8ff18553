//! Running a sweep into a run directory, and rebuilding its report.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use selfmodel_core::harness::{aggregate, run_cell, CellResult, CellSpec, HarnessConfig, SweepResult};

use crate::config::ExperimentConfig;
use crate::formats::write_atomic;
use crate::manifest::RunManifest;
use crate::svg;
use crate::table::{self, SweepRow};

pub const CONFIG_FILE: &str = "config.toml";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const FIGURE_FILE: &str = "report.svg";

/// Runs `cells` on `jobs` worker threads. Results come back in input order
/// whatever the interleaving; each carries its wall time.
pub fn run_cells<F>(cells: &[CellSpec], harness: &HarnessConfig, jobs: usize, on_done: F) -> Vec<CellResult>
where
    F: Fn(usize, &CellResult) + Sync,
{
    let next = AtomicUsize::new(0);
    let finished = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = cells.get(i) else { break };
                let start = Instant::now();
                let mut result = run_cell(spec, harness);
                result.wall_time_s = Some(start.elapsed().as_secs_f64());
                on_done(finished.fetch_add(1, Ordering::Relaxed) + 1, &result);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

fn timings_csv(cells: &[CellResult]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["preset", "dof", "budget", "seed", "task", "wall_time_s", "error"])?;
    for c in cells {
        w.write_record([
            c.spec.preset.clone(),
            c.spec.dof.to_string(),
            c.spec.budget.to_string(),
            c.spec.seed_index.to_string(),
            c.spec.task.name().to_string(),
            table::format_real(c.wall_time_s.unwrap_or(f64::NAN)),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Regression CSVs and the figure for a set of sweep rows, as
/// `(file name, bytes)` pairs. Nothing is written.
pub fn build_report(rows: &[SweepRow]) -> Result<Vec<(String, Vec<u8>)>> {
    let panels = table::summarize(rows)?;
    let mut files = table::regression_files(&panels)?;
    files.push((FIGURE_FILE.to_string(), svg::render(&panels).into_bytes()));
    Ok(files)
}

/// Runs every cell of `cfg` and writes the run directory `out`:
/// `config.toml`, `manifest.json`, `sweep.csv`, `timings.csv` and, when at
/// least two DoF groups succeeded per panel, the regression CSVs and figure.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let cells = cfg.sweep.cells()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let config_text = cfg.to_toml_string();
    write_atomic(&out.join(CONFIG_FILE), config_text.as_bytes())?;
    let mut manifest = RunManifest::begin(out, &config_text)?;

    let total = cells.len();
    let results = run_cells(&cells, &cfg.harness, jobs, |done, r| {
        let s = &r.spec;
        match &r.error {
            None => eprintln!(
                "[{done}/{total}] {} |D|={} {} seed {}: random {:.3} mfrl {:.3} self-model {:.3} ({:.0}s)",
                s.preset,
                s.budget,
                s.task.name(),
                s.seed_index,
                r.score_random,
                r.score_mfrl,
                r.score_selfmodel,
                r.wall_time_s.unwrap_or(0.0)
            ),
            Some(e) => eprintln!(
                "[{done}/{total}] {} |D|={} {} seed {}: failed: {e}",
                s.preset,
                s.budget,
                s.task.name(),
                s.seed_index
            ),
        }
    });
    let result = aggregate(results);

    let rows: Vec<SweepRow> = result
        .cells
        .iter()
        .map(|c| SweepRow::from_cell(c, cfg.record_wall_time))
        .collect();
    let mut files = vec![
        (SWEEP_FILE.to_string(), table::sweep_csv(&rows)?),
        (TIMINGS_FILE.to_string(), timings_csv(&result.cells)?),
    ];
    match build_report(&rows) {
        Ok(report) => files.extend(report),
        Err(e) => eprintln!("no regression report: {e:#}"),
    }
    for (name, bytes) in &files {
        write_atomic(&out.join(name), bytes).with_context(|| format!("writing {name}"))?;
    }
    let mut inventory: Vec<&str> = vec![CONFIG_FILE];
    inventory.extend(files.iter().map(|(n, _)| n.as_str()));
    manifest.finalize(out, &inventory)?;
    Ok(result)
}

/// Where `report` puts each output: the regression CSV at `csv_out` (with a
/// `_<task>` suffix per task when there are several) and the figure at
/// `svg_out`.
fn report_target(name: &str, csv_out: &Path, svg_out: &Path) -> PathBuf {
    if name == FIGURE_FILE {
        return svg_out.to_path_buf();
    }
    match name.strip_prefix("regression_").and_then(|n| n.strip_suffix(".csv")) {
        None => csv_out.to_path_buf(),
        Some(task) => {
            let stem = csv_out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "regression".into());
            csv_out.with_file_name(format!("{stem}_{task}.csv"))
        }
    }
}

/// Rebuilds the regression CSV and figure from `runs/sweep.csv`. All outputs
/// are computed before any file is written.
pub fn report(runs: &Path, csv_out: Option<&Path>, svg_out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let sweep = runs.join(SWEEP_FILE);
    if !sweep.is_file() {
        bail!("{} has no {SWEEP_FILE}", runs.display());
    }
    let rows = table::read_path(&sweep)?;
    let files = build_report(&rows)?;
    let csv_out = csv_out.map_or_else(|| runs.join("regression.csv"), Path::to_path_buf);
    let svg_out = svg_out.map_or_else(|| runs.join(FIGURE_FILE), Path::to_path_buf);
    let mut written = Vec::new();
    for (name, bytes) in &files {
        let target = report_target(name, &csv_out, &svg_out);
        write_atomic(&target, bytes).with_context(|| format!("writing {}", target.display()))?;
        written.push(target);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_targets() {
        let csv = Path::new("/o/reg.csv");
        let svg = Path::new("/o/fig.svg");
        assert_eq!(report_target("regression.csv", csv, svg), csv);
        assert_eq!(report_target("regression_jump.csv", csv, svg), Path::new("/o/reg_jump.csv"));
        assert_eq!(report_target(FIGURE_FILE, csv, svg), svg);
    }

    #[test]
    fn report_on_empty_dir_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(report(dir.path(), None, None).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
