//! Anytime-accuracy curves rendered to SVG.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use sha2::{Digest, Sha256};

use super::aggregate::Stat;
use super::runner::RunRecord;
use crate::data::DatasetId;
use crate::learner::Method;
use crate::{Error, Result};

/// Accuracy of an iid online learner on CIFAR-10 (single pass, same budget), drawn as a reference.
pub const IID_ONLINE_CIFAR10: f64 = 63.4;

/// Mean curve of one method with its ±1 std band; x is batches consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub method: Method,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Seeds are aligned point by point; every seed of a method must share one schedule.
pub fn curves(records: &[RunRecord]) -> Result<Vec<Curve>> {
    let mut by_method: BTreeMap<Method, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(method, rs)| {
            let steps: Vec<usize> = rs[0].anytime.iter().map(|p| p.step).collect();
            if rs.iter().any(|r| r.anytime.iter().map(|p| p.step).ne(steps.iter().copied())) {
                return Err(Error::Plot(format!("{method} seeds disagree on the evaluation schedule")));
            }
            let (mut mean, mut std) = (Vec::new(), Vec::new());
            for i in 0..steps.len() {
                let xs: Vec<f64> = rs.iter().map(|r| r.anytime[i].mean_accuracy).collect();
                let s = Stat::of(&xs).expect("at least one seed");
                mean.push(s.mean);
                std.push(s.std.unwrap_or(0.0));
            }
            Ok(Curve { method, steps, mean, std })
        })
        .collect()
}

/// Stable file name derived from the configurations and seeds involved.
pub fn plot_file_name(records: &[RunRecord]) -> String {
    let mut keys: Vec<String> = records.iter().map(|r| format!("{}:{}", r.config_hash, r.seed)).collect();
    keys.sort();
    let digest = Sha256::digest(keys.join(",").as_bytes());
    format!("anytime-{}.svg", &hex::encode(digest)[..12])
}

pub fn default_reference(dataset: DatasetId) -> Option<f64> {
    (dataset == DatasetId::Cifar10).then_some(IID_ONLINE_CIFAR10)
}

/// Writes the anytime plot into `out_dir`, with an optional horizontal reference line.
pub fn plot_anytime(records: &[RunRecord], out_dir: &Path, reference: Option<f64>) -> Result<PathBuf> {
    if records.is_empty() {
        return Err(Error::Plot("no run records to plot".into()));
    }
    let curves = curves(records)?;
    let x_max = curves.iter().flat_map(|c| c.steps.iter().copied()).max().unwrap_or(1).max(1);
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(plot_file_name(records));
    draw(&path, &curves, x_max, reference, &records[0]).map_err(|e| Error::Plot(e.to_string()))?;
    Ok(path)
}

fn draw(
    path: &Path,
    curves: &[Curve],
    x_max: usize,
    reference: Option<f64>,
    first: &RunRecord,
) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let title = format!("{} S={} M={}", first.dataset, first.classes_per_task, first.buffer_m);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0usize..x_max, 0f64..100f64)?;
    chart
        .configure_mesh()
        .x_desc("batches seen")
        .y_desc("accuracy (%)")
        .draw()?;

    for (i, c) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let upper: Vec<(usize, f64)> = c.steps.iter().zip(&c.mean).zip(&c.std).map(|((&s, &m), &d)| (s, (m + d).min(100.0))).collect();
        let lower: Vec<(usize, f64)> = c.steps.iter().zip(&c.mean).zip(&c.std).map(|((&s, &m), &d)| (s, (m - d).max(0.0))).collect();
        let band: Vec<(usize, f64)> = upper.iter().copied().chain(lower.iter().rev().copied()).collect();
        chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))?;
        chart
            .draw_series(LineSeries::new(c.steps.iter().copied().zip(c.mean.iter().copied()), color.stroke_width(2)))?
            .label(c.method.to_string())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    if let Some(r) = reference {
        chart
            .draw_series(LineSeries::new([(0, r), (x_max, r)], BLACK.stroke_width(1)))?
            .label(format!("iid online {r:.1}"))
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLACK));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()?;
    root.present()?;
    Ok(())
}
