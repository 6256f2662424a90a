//! Seed-level runs: stream, train, evaluate, checkpoint, record.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::cifar::{load_cifar10, load_cifar100};
use crate::data::{build_stream, DatasetId, DatasetSplits};
use crate::evaluation::{anytime_schedule, evaluate_seen, forgetting, mean, EvalMatrix, TaskTestSets};
use crate::learner::{Learner, LearnerSnapshot, Method};
use crate::{Error, Result};

pub const RECORD_SCHEMA: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "protoreplay-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Batches consumed so far.
    pub step: usize,
    pub task: usize,
    pub boundary: bool,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Outcome of one seed, written as `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub method: Method,
    pub dataset: DatasetId,
    pub classes_per_task: usize,
    pub buffer_m: usize,
    pub steps: usize,
    pub final_accuracy: f64,
    pub forgetting: Option<f64>,
    pub matrix: Vec<Vec<f64>>,
    pub anytime: Vec<EvalPoint>,
    pub wall_clock_seconds: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config_hash: String,
    seed: u64,
    step: usize,
    metrics_len: u64,
    steps_len: u64,
    elapsed_seconds: f64,
    matrix: EvalMatrix,
    anytime: Vec<EvalPoint>,
    learner: LearnerSnapshot,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from `checkpoint.json` (or reuse `record.json`) when present.
    pub resume: bool,
    /// Stop every seed after this many batches, leaving a checkpoint behind.
    pub halt_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeedOutcome {
    Finished(RunRecord),
    Halted { step: usize },
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub records: Vec<RunRecord>,
    pub halted: Vec<u64>,
    pub run_dir: PathBuf,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<DatasetSplits> {
    match cfg.dataset {
        DatasetId::Synthetic => cfg.synthetic_spec().generate(cfg.data_seed),
        DatasetId::Cifar10 => load_cifar10(&cfg.data_dir),
        DatasetId::Cifar100 => load_cifar100(&cfg.data_dir),
    }
}

pub fn seed_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.run_dir().join(format!("seed-{seed}"))
}

/// Runs every configured seed; writes `summary.json`/`summary.txt` when all finish.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml_string())?;
    let mut report = RunReport {
        run_dir: run_dir.clone(),
        ..Default::default()
    };
    for &seed in &cfg.seeds {
        match run_seed(cfg, &data, seed, opts)? {
            SeedOutcome::Finished(r) => report.records.push(r),
            SeedOutcome::Halted { .. } => report.halted.push(seed),
        }
    }
    if report.halted.is_empty() {
        let summary = super::aggregate::aggregate(&report.records)?;
        super::aggregate::write_summary(&summary, &run_dir)?;
    }
    Ok(report)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut w, value)?;
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let r: RunRecord = read_json(path)?;
    if r.schema_version != RECORD_SCHEMA {
        return Err(Error::Aggregate(format!(
            "{} has schema {}, expected {RECORD_SCHEMA}",
            path.display(),
            r.schema_version
        )));
    }
    Ok(r)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig, seed: u64) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{} is {} v{}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
            path.display(),
            ck.format,
            ck.version
        )));
    }
    if ck.config_hash != cfg.config_hash() || ck.seed != seed {
        return Err(Error::Checkpoint(format!(
            "{} belongs to config {} seed {}",
            path.display(),
            ck.config_hash,
            ck.seed
        )));
    }
    Ok(ck)
}

fn open_log(path: &Path, keep: Option<u64>) -> Result<File> {
    let f = OpenOptions::new().create(true).append(true).open(path)?;
    f.set_len(keep.unwrap_or(0))?;
    Ok(f)
}

fn append_line<T: Serialize>(f: &mut File, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsHeader<'a> {
    kind: &'static str,
    config_hash: &'a str,
    seed: u64,
    method: Method,
    dataset: DatasetId,
    classes_per_task: usize,
    buffer_m: usize,
    total_steps: usize,
    num_tasks: usize,
}

#[derive(Serialize)]
struct MetricsEval<'a> {
    kind: &'static str,
    #[serde(flatten)]
    point: &'a EvalPoint,
}

#[derive(Serialize)]
struct MetricsFinal<'a> {
    kind: &'static str,
    final_accuracy: f64,
    forgetting: Option<f64>,
    matrix: &'a [Vec<f64>],
}

/// One seed of `cfg` on already-loaded data.
pub fn run_seed(cfg: &RunConfig, data: &DatasetSplits, seed: u64, opts: &RunOptions) -> Result<SeedOutcome> {
    let dir = seed_dir(cfg, seed);
    fs::create_dir_all(&dir)?;
    let record_path = dir.join(RECORD_FILE);
    let ck_path = dir.join(CHECKPOINT_FILE);
    if opts.resume && record_path.exists() {
        let r = read_record(&record_path)?;
        if r.config_hash == cfg.config_hash() && r.seed == seed {
            log::info!("seed {seed}: reusing finished record");
            return Ok(SeedOutcome::Finished(r));
        }
    }

    let stream_cfg = cfg.stream_config(seed);
    let stream = build_stream(&stream_cfg, &data.train)?;
    let task_classes: Vec<Vec<u32>> = stream.tasks().iter().map(|t| t.classes.clone()).collect();
    let tests = TaskTestSets::new(&data.test, &task_classes)?;
    let total = stream.total_steps();
    let boundaries = stream.task_boundaries();
    let anytime_steps = anytime_schedule(total, &boundaries, cfg.eval_mode, cfg.eval_points)?;

    let mut learner = Learner::new(cfg.learner_config(), &cfg.network_spec(), seed)?;
    let mut matrix = EvalMatrix::new();
    let mut anytime = Vec::new();
    let mut start = 0usize;
    let mut elapsed_before = 0.0;
    let (metrics_keep, steps_keep) = if opts.resume && ck_path.exists() {
        let ck = load_checkpoint(&ck_path, cfg, seed)?;
        learner.restore(&ck.learner)?;
        matrix = ck.matrix;
        anytime = ck.anytime;
        start = ck.step;
        elapsed_before = ck.elapsed_seconds;
        log::info!("seed {seed}: resuming at step {start}/{total}");
        (Some(ck.metrics_len), Some(ck.steps_len))
    } else {
        (None, None)
    };
    let mut metrics = open_log(&dir.join(METRICS_FILE), metrics_keep)?;
    let mut steps_log = if cfg.log_every > 0 {
        Some(open_log(&dir.join(STEPS_FILE), steps_keep)?)
    } else {
        None
    };
    if start == 0 {
        append_line(
            &mut metrics,
            &MetricsHeader {
                kind: "header",
                config_hash: &cfg.config_hash(),
                seed,
                method: cfg.method,
                dataset: cfg.dataset,
                classes_per_task: cfg.classes_per_task,
                buffer_m: cfg.buffer_m,
                total_steps: total,
                num_tasks: stream.num_tasks(),
            },
        )?;
    }

    let clock = Instant::now();
    for (pos, batch) in stream.iter().skip(start) {
        let log = learner.train_step(&batch)?;
        let done = pos.step + 1;
        if let Some(f) = steps_log.as_mut() {
            if done % cfg.log_every == 0 {
                append_line(f, &log)?;
            }
        }
        let wants_anytime = anytime_steps.binary_search(&done).is_ok();
        if pos.last_in_task || wants_anytime {
            let accuracies = evaluate_seen(&learner, &tests, pos.task)?;
            let point = EvalPoint {
                step: done,
                task: pos.task,
                boundary: pos.last_in_task,
                mean_accuracy: mean(&accuracies),
                accuracies,
            };
            if pos.last_in_task {
                matrix.push_row(point.accuracies.clone())?;
                log::info!(
                    "seed {seed}: task {}/{} done, accuracy {:.2}",
                    pos.task + 1,
                    stream.num_tasks(),
                    point.mean_accuracy
                );
            }
            append_line(&mut metrics, &MetricsEval { kind: "eval", point: &point })?;
            if wants_anytime {
                anytime.push(point);
            }
        }
        let halt = opts.halt_after.is_some_and(|h| done >= h) && done < total;
        let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < total;
        if halt || periodic {
            metrics.flush()?;
            let ck = Checkpoint {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                config_hash: cfg.config_hash(),
                seed,
                step: done,
                metrics_len: metrics.metadata()?.len(),
                steps_len: match &steps_log {
                    Some(f) => f.metadata()?.len(),
                    None => 0,
                },
                elapsed_seconds: elapsed_before + clock.elapsed().as_secs_f64(),
                matrix: matrix.clone(),
                anytime: anytime.clone(),
                learner: learner.snapshot()?,
            };
            write_json_atomic(&ck_path, &ck)?;
        }
        if halt {
            log::info!("seed {seed}: halted after step {done}");
            return Ok(SeedOutcome::Halted { step: done });
        }
    }

    let final_accuracy = matrix
        .final_accuracy()
        .ok_or_else(|| Error::Data("stream produced no tasks".into()))?;
    let forgetting = forgetting(&matrix);
    append_line(
        &mut metrics,
        &MetricsFinal {
            kind: "final",
            final_accuracy,
            forgetting,
            matrix: matrix.rows(),
        },
    )?;
    metrics.flush()?;
    let record = RunRecord {
        schema_version: RECORD_SCHEMA,
        code_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.config_hash(),
        seed,
        method: cfg.method,
        dataset: cfg.dataset,
        classes_per_task: cfg.classes_per_task,
        buffer_m: cfg.buffer_m,
        steps: total,
        final_accuracy,
        forgetting,
        matrix: matrix.rows().to_vec(),
        anytime,
        wall_clock_seconds: elapsed_before + clock.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    write_json_atomic(&record_path, &record)?;
    if ck_path.exists() {
        fs::remove_file(&ck_path)?;
    }
    Ok(SeedOutcome::Finished(record))
}
