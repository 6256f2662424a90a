//! Single-head accuracy, anytime curves and forgetting.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledBatch};
use crate::learner::Learner;
use crate::{Error, Result};

/// Accuracy in percent on task `j` after phase `t`, stored for `j <= t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    rows: Vec<Vec<f64>>,
}

impl EvalMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the row for the next phase; it must cover exactly tasks `0..=t`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let t = self.rows.len();
        if row.len() != t + 1 {
            return Err(Error::Shape(format!("phase {t} row must have {} entries, got {}", t + 1, row.len())));
        }
        if let Some(bad) = row.iter().find(|a| !(0.0..=100.0).contains(*a)) {
            return Err(Error::Shape(format!("accuracy {bad} outside [0, 100]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn num_phases(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, phase: usize, task: usize) -> Option<f64> {
        self.rows.get(phase).and_then(|r| r.get(task)).copied()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn final_row(&self) -> Option<&[f64]> {
        self.rows.last().map(Vec::as_slice)
    }

    /// Uniform mean over tasks of the last row.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.final_row().map(mean)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `(1/(T-1)) Σ_{j<T-1} max(0, max_{j<=l<=T-2} a[l][j] - a[T-1][j])`; `None` for a single phase.
pub fn forgetting(matrix: &EvalMatrix) -> Option<f64> {
    let t = matrix.num_phases();
    if t < 2 {
        return None;
    }
    let last = &matrix.rows[t - 1];
    let total: f64 = (0..t - 1)
        .map(|j| {
            let best = (j..t - 1).map(|l| matrix.rows[l][j]).fold(f64::NEG_INFINITY, f64::max);
            (best - last[j]).max(0.0)
        })
        .sum();
    Some(total / (t - 1) as f64)
}

pub fn accuracy(predicted: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, y)| p == y).count();
    100.0 * hits as f64 / truth.len() as f64
}

/// Held-out samples grouped by task.
#[derive(Debug, Clone)]
pub struct TaskTestSets {
    sets: Vec<LabeledBatch>,
}

impl TaskTestSets {
    pub fn new(test: &Dataset, task_classes: &[Vec<u32>]) -> Result<Self> {
        let sets: Vec<LabeledBatch> = task_classes.iter().map(|c| test.select_classes(c)).collect();
        if let Some(j) = sets.iter().position(LabeledBatch::is_empty) {
            return Err(Error::Data(format!("no test samples for task {j}")));
        }
        Ok(Self { sets })
    }

    pub fn from_batches(sets: Vec<LabeledBatch>) -> Self {
        Self { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Percent accuracy on each of tasks `0..=last_task`, predicting over all seen classes.
pub fn evaluate_seen(learner: &Learner, tests: &TaskTestSets, last_task: usize) -> Result<Vec<f64>> {
    if last_task >= tests.len() {
        return Err(Error::Data(format!("no test split for task {last_task}")));
    }
    tests.sets[..=last_task]
        .iter()
        .map(|set| Ok(accuracy(&learner.predict(set)?, &set.labels)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnytimeMode {
    #[default]
    Boundary,
    Even,
}

/// Steps (1-based counts of consumed batches) after which to evaluate.
pub fn anytime_schedule(total_steps: usize, boundaries: &[usize], mode: AnytimeMode, points: usize) -> Result<Vec<usize>> {
    match mode {
        AnytimeMode::Boundary => Ok(boundaries.to_vec()),
        AnytimeMode::Even => {
            if points == 0 {
                return Err(Error::Config("anytime evaluation needs at least one point".into()));
            }
            let mut steps: Vec<usize> = (1..=points).map(|k| (k * total_steps).div_ceil(points)).collect();
            steps.dedup();
            Ok(steps)
        }
    }
}
