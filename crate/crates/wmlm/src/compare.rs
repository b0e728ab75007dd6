//! Anchor-comparison grid: every (split, anchor) arm runs stage 1, stage 2
//! with frozen encoders, and zero-shot evaluation, replicated over seeds and
//! aggregated by median. The grid is the synthetic-data analog of comparing
//! anchor choices against the unaligned baseline.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::align::Anchor;
use crate::config::{RunConfig, TOOL_VERSION};
use crate::error::{Error, Result};
use crate::eval::{evaluate, SplitSpec};
use crate::rng;
use crate::scenegen::ScenarioData;
use crate::train::{run_stage1, run_stage2};

pub const COMPARE_FORMAT: &str = "wmlm-compare-1";
pub const SPLITS: [&str; 2] = ["S4", "S6"];
pub const ANCHORS: [Anchor; 4] = [Anchor::Beam, Anchor::Vision, Anchor::Joint, Anchor::None];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub split: String,
    pub anchor: String,
    pub seed: u64,
    pub top1: [f64; 3],
    pub nmse: f64,
    pub retrieval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub split: String,
    pub anchor: String,
    pub median_top1: [f64; 3],
    pub spread_top1: [f64; 3],
    pub median_nmse: f64,
    pub spread_nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub format: String,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub n_seeds: usize,
    pub cells: Vec<CellResult>,
    pub summary: Vec<CellSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Max minus min across seeds.
pub fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

fn run_cell(
    cfg: &RunConfig,
    corpus: &[ScenarioData],
    split: &str,
    anchor: Anchor,
    seed: u64,
) -> Result<CellResult> {
    let mut cell_cfg = cfg.clone();
    cell_cfg.align.anchor = anchor;
    cell_cfg.eval.split = split.to_string();
    cell_cfg.seed = seed;
    let stage1 = run_stage1(&cell_cfg, corpus, seed)?;
    let stage2 = run_stage2(&cell_cfg, corpus, Some(&stage1.checkpoint), seed)?;
    let spec = SplitSpec::from_eval_config(&cell_cfg.eval)?;
    let report = evaluate(&stage2.checkpoint, corpus, &spec)?;
    let nmse = report
        .nmse
        .ok_or_else(|| Error::Numeric("cell evaluation produced no forecast NMSE".into()))?;
    Ok(CellResult {
        split: split.to_string(),
        anchor: anchor.tag().to_string(),
        seed,
        top1: report.top1,
        nmse,
        retrieval: report.retrieval,
    })
}

/// Run the full grid. Cells are independent and may run on up to `jobs`
/// worker threads; the output ordering is fixed by the task list, so the
/// report bytes do not depend on scheduling.
pub fn compare_anchors(
    cfg: &RunConfig,
    corpus: &[ScenarioData],
    n_seeds: usize,
    jobs: usize,
) -> Result<CompareReport> {
    cfg.validate()?;
    if n_seeds == 0 {
        return Err(Error::Config("compare needs at least one seed per cell".into()));
    }
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }

    let mut tasks: Vec<(String, Anchor, u64)> = Vec::new();
    for split in SPLITS {
        for anchor in ANCHORS {
            for k in 0..n_seeds {
                let name = format!("compare.{split}.{}", anchor.tag());
                let seed = rng::child_seed_indexed(cfg.seed, &name, k as u64);
                tasks.push((split.to_string(), anchor, seed));
            }
        }
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let (split, anchor, seed) = &tasks[i];
                let cell = run_cell(cfg, corpus, split, *anchor, *seed);
                slots.lock().expect("result lock")[i] = Some(cell);
            });
        }
    });
    let cells: Vec<CellResult> = slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|slot| slot.expect("every task ran"))
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    for split in SPLITS {
        for anchor in ANCHORS {
            let arm: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.split == split && c.anchor == anchor.tag())
                .collect();
            let step = |s: usize| arm.iter().map(|c| c.top1[s]).collect::<Vec<f64>>();
            let nmses: Vec<f64> = arm.iter().map(|c| c.nmse).collect();
            summary.push(CellSummary {
                split: split.to_string(),
                anchor: anchor.tag().to_string(),
                median_top1: [median(&step(0)), median(&step(1)), median(&step(2))],
                spread_top1: [spread(&step(0)), spread(&step(1)), spread(&step(2))],
                median_nmse: median(&nmses),
                spread_nmse: spread(&nmses),
            });
        }
    }

    Ok(CompareReport {
        format: COMPARE_FORMAT.to_string(),
        config_digest: cfg.digest()?,
        seed: cfg.seed,
        tool_version: TOOL_VERSION.to_string(),
        n_seeds,
        cells,
        summary,
    })
}

fn csv_meta(report: &CompareReport) -> String {
    format!(
        "# format={} config_digest={} seed={} tool_version={}\n",
        report.format, report.config_digest, report.seed, report.tool_version
    )
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write compare.json, cells.csv, and summary.csv into a directory.
pub fn write_compare(report: &CompareReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let json_path = dir.join("compare.json");
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Data(format!("compare serialization: {e}")))?;
    std::fs::write(&json_path, text + "\n")?;

    let cells_path = dir.join("cells.csv");
    let mut cells = csv_meta(report);
    cells.push_str("split,anchor,seed,top1_step1,top1_step2,top1_step3,nmse,retrieval\n");
    for c in &report.cells {
        cells.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.split, c.anchor, c.seed, c.top1[0], c.top1[1], c.top1[2], c.nmse, opt(c.retrieval)
        ));
    }
    std::fs::write(&cells_path, cells)?;

    let summary_path = dir.join("summary.csv");
    let mut sum = csv_meta(report);
    sum.push_str(
        "split,anchor,median_top1_step1,median_top1_step2,median_top1_step3,\
         spread_top1_step1,spread_top1_step2,spread_top1_step3,median_nmse,spread_nmse\n",
    );
    for c in &report.summary {
        sum.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.split,
            c.anchor,
            c.median_top1[0],
            c.median_top1[1],
            c.median_top1[2],
            c.spread_top1[0],
            c.spread_top1[1],
            c.spread_top1[2],
            c.median_nmse,
            c.spread_nmse
        ));
    }
    std::fs::write(&summary_path, sum)?;
    Ok(vec![json_path, cells_path, summary_path])
}

pub fn load_compare(path: &Path) -> Result<CompareReport> {
    let text = std::fs::read_to_string(path)?;
    let report: CompareReport =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("compare parse: {e}")))?;
    if report.format != COMPARE_FORMAT {
        return Err(Error::Data(format!("unsupported compare format {:?}", report.format)));
    }
    Ok(report)
}
