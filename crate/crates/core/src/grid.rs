//! Variant × label fraction × ρ × seed sweeps.
//!
//! Cells sharing a seed, fraction and ρ train on the same prepared data, so
//! data is generated once per such group. Groups run on the rayon pool;
//! results are gathered in a fixed order before aggregation, which keeps
//! every output independent of scheduling.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::trainer::{run_pipeline_on, write_json, write_run_outputs, PipelineResult, PreparedData, RunOptions, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub variants: Vec<Variant>,
    pub label_percents: Vec<f64>,
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl GridSpec {
    /// A single-fraction, single-ρ grid taken from `base`.
    pub fn from_base(base: &ExperimentConfig, variants: Vec<Variant>, seeds: Vec<u64>) -> Self {
        Self {
            variants,
            label_percents: vec![base.data.label_percent],
            rhos: vec![base.data.rho],
            seeds,
        }
    }

    pub fn validate(&self, base: &ExperimentConfig) -> Result<()> {
        let empty = |key: &str, n: usize| {
            if n == 0 {
                Err(Error::config(key, "empty list"))
            } else {
                Ok(())
            }
        };
        empty("variant", self.variants.len())?;
        empty("data.label_percent", self.label_percents.len())?;
        empty("data.rho", self.rhos.len())?;
        empty("seed", self.seeds.len())?;
        for &p in &self.label_percents {
            for &r in &self.rhos {
                cell_config(base, Variant::Tcl, p, r, 0).validate()?;
            }
        }
        Ok(())
    }
}

fn cell_config(base: &ExperimentConfig, variant: Variant, label_percent: f64, rho: f64, seed: u64) -> ExperimentConfig {
    let mut c = base.clone();
    c.seed = seed;
    c.data.label_percent = label_percent;
    c.data.rho = rho;
    variant.apply(&c)
}

/// One trained (or failed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub variant: Variant,
    pub label_percent: f64,
    pub rho: f64,
    pub seed: u64,
    pub top1: Option<f64>,
    /// Pseudo-label accuracy above the finetuning threshold at the end.
    pub pl_acc_confident: Option<f64>,
    pub fingerprint: Option<String>,
    pub error: Option<String>,
}

/// Mean and sample standard deviation of one cell over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub variant: Variant,
    pub label_percent: f64,
    pub rho: f64,
    pub seeds: usize,
    pub completed: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub version: u32,
    pub base_fingerprint: String,
    pub spec: GridSpec,
    pub runs: Vec<GridRun>,
    pub cells: Vec<CellStats>,
}

/// `(mean, std)` with the n − 1 denominator; the std of one value is 0.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

pub fn aggregate(spec: &GridSpec, runs: &[GridRun]) -> Vec<CellStats> {
    let mut cells = Vec::new();
    for &variant in &spec.variants {
        for &label_percent in &spec.label_percents {
            for &rho in &spec.rhos {
                let mine: Vec<&GridRun> = runs
                    .iter()
                    .filter(|r| r.variant == variant && r.label_percent == label_percent && r.rho == rho)
                    .collect();
                let ok: Vec<f64> = mine.iter().filter_map(|r| r.top1).collect();
                let ms = mean_std(&ok);
                cells.push(CellStats {
                    variant,
                    label_percent,
                    rho,
                    seeds: mine.len(),
                    completed: ok.len(),
                    mean: ms.map(|m| m.0),
                    std: ms.map(|m| m.1),
                });
            }
        }
    }
    cells
}

/// Output directory of one run below the grid root.
pub fn run_dir(root: &Path, variant: Variant, label_percent: f64, rho: f64, seed: u64) -> PathBuf {
    root.join("runs")
        .join(format!("{}-p{label_percent}-rho{rho}-s{seed}", variant.name()))
}

fn finished(variant: Variant, label_percent: f64, rho: f64, seed: u64, outcome: Result<PipelineResult>) -> GridRun {
    let mut run = GridRun {
        variant,
        label_percent,
        rho,
        seed,
        top1: None,
        pl_acc_confident: None,
        fingerprint: None,
        error: None,
    };
    match outcome {
        Ok(r) => {
            run.top1 = Some(r.report.accuracy.top1);
            run.pl_acc_confident = r.state.history.last().and_then(|m| m.pl_acc_confident);
            run.fingerprint = Some(r.report.fingerprint.clone());
        }
        Err(e) => run.error = Some(e.to_string()),
    }
    run
}

/// Runs every cell of `spec`. A failing cell is recorded and the sweep
/// continues. With `out`, each run's artifacts go to [`run_dir`] and the
/// grid tables to the root.
pub fn run_grid(base: &ExperimentConfig, spec: &GridSpec, out: Option<&Path>) -> Result<ExperimentGrid> {
    base.validate()?;
    spec.validate(base)?;
    let mut groups = Vec::new();
    for &seed in &spec.seeds {
        for &p in &spec.label_percents {
            for &rho in &spec.rhos {
                groups.push((seed, p, rho));
            }
        }
    }
    let per_group: Vec<Vec<GridRun>> = groups
        .par_iter()
        .map(|&(seed, p, rho)| {
            let data_cfg = cell_config(base, Variant::Tcl, p, rho, seed);
            let data = PreparedData::build(&data_cfg);
            spec.variants
                .iter()
                .map(|&v| {
                    let cfg = cell_config(base, v, p, rho, seed);
                    let outcome = match &data {
                        Ok(d) => run_pipeline_on(&cfg, d, &RunOptions::default()).and_then(|r| {
                            if let Some(root) = out {
                                write_run_outputs(&run_dir(root, v, p, rho, seed), &cfg, &r)?;
                            }
                            Ok(r)
                        }),
                        Err(e) => Err(Error::Data(format!("data preparation failed: {e}"))),
                    };
                    if let Err(e) = &outcome {
                        log::warn!("cell {} p={p} rho={rho} seed={seed} failed: {e}", v.name());
                    }
                    finished(v, p, rho, seed, outcome)
                })
                .collect()
        })
        .collect();
    let mut runs: Vec<GridRun> = per_group.into_iter().flatten().collect();
    runs.sort_by(|a, b| {
        let key = |r: &GridRun| {
            (
                spec.variants.iter().position(|&v| v == r.variant),
                spec.label_percents.iter().position(|&x| x == r.label_percent),
                spec.rhos.iter().position(|&x| x == r.rho),
                spec.seeds.iter().position(|&x| x == r.seed),
            )
        };
        key(a).cmp(&key(b))
    });
    let cells = aggregate(spec, &runs);
    let grid = ExperimentGrid {
        version: GRID_VERSION,
        base_fingerprint: base.fingerprint()?,
        spec: spec.clone(),
        runs,
        cells,
    };
    if let Some(root) = out {
        grid.write(root)?;
    }
    Ok(grid)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

impl ExperimentGrid {
    pub fn cell(&self, variant: Variant, label_percent: f64, rho: f64) -> Option<&CellStats> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.label_percent == label_percent && c.rho == rho)
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }

    /// One row per run.
    pub fn runs_csv(&self) -> Result<String> {
        let mut rows = vec![["variant", "label_percent", "rho", "seed", "top1", "pl_acc_confident", "error"]
            .map(String::from)
            .to_vec()];
        for r in &self.runs {
            rows.push(vec![
                r.variant.name().into(),
                r.label_percent.to_string(),
                r.rho.to_string(),
                r.seed.to_string(),
                opt(r.top1),
                opt(r.pl_acc_confident),
                r.error.clone().unwrap_or_default(),
            ]);
        }
        csv_string(rows)
    }

    pub fn cells_csv(&self) -> Result<String> {
        let mut rows = vec![["variant", "label_percent", "rho", "seeds", "completed", "mean", "std"]
            .map(String::from)
            .to_vec()];
        for c in &self.cells {
            rows.push(vec![
                c.variant.name().into(),
                c.label_percent.to_string(),
                c.rho.to_string(),
                c.seeds.to_string(),
                c.completed.to_string(),
                opt(c.mean),
                opt(c.std),
            ]);
        }
        csv_string(rows)
    }

    /// Mean top-1 with one column per ρ.
    pub fn domain_shift_csv(&self) -> Result<String> {
        let mut header = vec!["variant".to_string(), "label_percent".to_string()];
        header.extend(self.spec.rhos.iter().map(|r| format!("rho={r}")));
        let mut rows = vec![header];
        for &v in &self.spec.variants {
            for &p in &self.spec.label_percents {
                let mut row = vec![v.name().to_string(), p.to_string()];
                row.extend(self.spec.rhos.iter().map(|&r| opt(self.cell(v, p, r).and_then(|c| c.mean))));
                rows.push(row);
            }
        }
        csv_string(rows)
    }

    /// Human-readable ρ table of `mean ± std`, with the gap of each ρ to ρ = 1
    /// when ρ = 1 is part of the grid.
    pub fn domain_shift_table(&self) -> String {
        let mut s = format!("{:<24}{:>8}", "variant", "label%");
        for r in &self.spec.rhos {
            let _ = write!(s, "{:>18}", format!("rho={r}"));
        }
        s.push('\n');
        let has_one = self.spec.rhos.contains(&1.0);
        for &v in &self.spec.variants {
            for &p in &self.spec.label_percents {
                let _ = write!(s, "{:<24}{:>8}", v.name(), p);
                let reference = self.cell(v, p, 1.0).and_then(|c| c.mean);
                let mut gaps = Vec::new();
                for &r in &self.spec.rhos {
                    let c = self.cell(v, p, r);
                    let txt = match c.and_then(|c| c.mean.zip(c.std)) {
                        Some((m, sd)) => format!("{m:.4}±{sd:.4}"),
                        None => "failed".into(),
                    };
                    let _ = write!(s, "{txt:>18}");
                    if r != 1.0 {
                        if let (Some(a), Some(b)) = (reference, c.and_then(|c| c.mean)) {
                            gaps.push(format!("rho={r}: {:+.4}", b - a));
                        }
                    }
                }
                if has_one && !gaps.is_empty() {
                    let _ = write!(s, "   gap to rho=1 {}", gaps.join(", "));
                }
                s.push('\n');
            }
        }
        s
    }

    /// `grid.json`, `grid.csv` (one row per run), `cells.csv` and
    /// `domain_shift.csv`.
    pub fn write(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root)?;
        write_json(&root.join("grid.json"), self)?;
        std::fs::write(root.join("grid.csv"), self.runs_csv()?)?;
        std::fs::write(root.join("cells.csv"), self.cells_csv()?)?;
        std::fs::write(root.join("domain_shift.csv"), self.domain_shift_csv()?)?;
        Ok(())
    }
}
