//! Cross-seed summaries of finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::runner::{read_record, RunRecord, RECORD_FILE};
use crate::data::DatasetId;
use crate::learner::Method;
use crate::{Error, Result};

/// Mean and sample standard deviation; `std` is `None` for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Stat { mean, std, n })
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.1} ± {:.1}", self.mean, s),
            None => write!(f, "{:.1}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub buffer_m: usize,
    pub seeds: Vec<u64>,
    pub accuracy: Stat,
    pub forgetting: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: DatasetId,
    pub classes_per_task: usize,
    pub rows: Vec<SummaryRow>,
}

/// Groups records by method and `M`; all records must share dataset and `S`.
pub fn aggregate(records: &[RunRecord]) -> Result<Summary> {
    let first = records
        .first()
        .ok_or_else(|| Error::Aggregate("no run records to aggregate".into()))?;
    for r in records {
        if r.dataset != first.dataset || r.classes_per_task != first.classes_per_task {
            return Err(Error::Aggregate(format!(
                "cannot mix {} S={} with {} S={}",
                first.dataset, first.classes_per_task, r.dataset, r.classes_per_task
            )));
        }
    }
    let mut groups: BTreeMap<(Method, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.buffer_m)).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((method, buffer_m), rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.final_accuracy).collect();
            let fgt: Vec<f64> = rs.iter().filter_map(|r| r.forgetting).collect();
            SummaryRow {
                method,
                buffer_m,
                seeds: rs.iter().map(|r| r.seed).collect(),
                accuracy: Stat::of(&acc).expect("non-empty group"),
                forgetting: if fgt.len() == rs.len() { Stat::of(&fgt) } else { None },
            }
        })
        .collect();
    Ok(Summary {
        dataset: first.dataset,
        classes_per_task: first.classes_per_task,
        rows,
    })
}

pub fn render(summary: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} S={}", summary.dataset, summary.classes_per_task);
    let _ = writeln!(out, "{:<10} {:>6} {:>6} {:>14} {:>14}", "method", "M", "seeds", "accuracy", "forgetting");
    for r in &summary.rows {
        let fgt = r.forgetting.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>14} {:>14}",
            r.method.to_string(),
            r.buffer_m,
            r.seeds.len(),
            r.accuracy.to_string(),
            fgt
        );
    }
    out
}

pub fn write_summary(summary: &Summary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    fs::write(dir.join("summary.txt"), render(summary))?;
    Ok(())
}

/// Every `record.json` under `paths` (files are taken as-is), sorted by path.
pub fn find_records(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == RECORD_FILE) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(Error::Aggregate(format!("{} does not exist", p.display())));
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_records(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    find_records(paths)?.iter().map(|p| read_record(p)).collect()
}
