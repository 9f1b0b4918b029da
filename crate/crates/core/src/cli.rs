//! `grasp train` and `grasp verify`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{MetricsFormat, RunConfig};
use crate::error::{Error, Result};
use crate::policy::write_checkpoint;
use crate::trainer::{train_with, IterationMetrics, Trainer};
use crate::verify::{run_suite, Suite, VerifyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Exit code for an error: 2 for configuration and usage problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::MissingFile { .. } | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Streams one row per iteration, flushing after each.
pub struct MetricsWriter {
    format: MetricsFormat,
    n_agents: usize,
    record_wall_time: bool,
    file: File,
}

impl MetricsWriter {
    pub fn create(
        path: &Path,
        format: MetricsFormat,
        n_agents: usize,
        record_wall_time: bool,
    ) -> Result<Self> {
        let mut file = File::create(path)?;
        if format == MetricsFormat::Csv {
            file.write_all(csv_header(n_agents).as_bytes())?;
            file.flush()?;
        }
        Ok(MetricsWriter {
            format,
            n_agents,
            record_wall_time,
            file,
        })
    }

    pub fn write(&mut self, m: &IterationMetrics) -> Result<()> {
        if m.g_norms.len() != self.n_agents {
            return Err(Error::DimensionMismatch {
                context: "metrics row",
                index: m.iteration,
                expected: self.n_agents,
                found: m.g_norms.len(),
            });
        }
        let wall = if self.record_wall_time {
            m.wall_ms
        } else {
            0.0
        };
        let line = match self.format {
            MetricsFormat::Csv => csv_row(m, wall),
            MetricsFormat::Jsonl => jsonl_row(m, wall),
        };
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn metrics_file_name(format: MetricsFormat) -> &'static str {
    match format {
        MetricsFormat::Csv => "metrics.csv",
        MetricsFormat::Jsonl => "metrics.jsonl",
    }
}

fn column_names(n_agents: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["iteration", "mean_return", "u_star_norm", "kkt_margin"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..n_agents).map(|i| format!("g_norm_{i}")));
    cols.extend(
        ["actor_surrogate", "critic_loss", "qp_iters", "wall_ms"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

pub fn csv_header(n_agents: usize) -> String {
    column_names(n_agents).join(",") + "\n"
}

fn values(m: &IterationMetrics, wall: f64) -> Vec<String> {
    let float = |x: f64| {
        serde_json::Number::from_f64(x).map_or_else(|| "null".to_string(), |n| n.to_string())
    };
    let mut out = vec![
        m.iteration.to_string(),
        float(m.mean_return),
        float(m.u_star_norm),
        float(m.kkt_margin),
    ];
    out.extend(m.g_norms.iter().map(|&g| float(g)));
    out.push(float(m.actor_surrogate));
    out.push(float(m.critic_loss));
    out.push(m.qp_iters.to_string());
    out.push(float(wall));
    out
}

fn csv_row(m: &IterationMetrics, wall: f64) -> String {
    values(m, wall).join(",") + "\n"
}

// built by hand so keys keep the CSV column order
fn jsonl_row(m: &IterationMetrics, wall: f64) -> String {
    let fields: Vec<String> = column_names(m.g_norms.len())
        .iter()
        .zip(values(m, wall))
        .map(|(k, v)| format!("\"{k}\":{v}"))
        .collect();
    format!("{{{}}}\n", fields.join(","))
}

/// What a finished training run left on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub last: Option<IterationMetrics>,
}

fn save_state(trainer: &Trainer, path: &Path) -> Result<()> {
    if let Some(policy) = trainer.policy() {
        write_checkpoint(path, policy)
    } else {
        let theta = trainer.theta().unwrap_or(&[]);
        let text = serde_json::to_string(theta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn checkpoint_name(trainer: &Trainer, iteration: Option<usize>) -> String {
    let ext = if trainer.policy().is_some() {
        "ckpt"
    } else {
        "json"
    };
    match iteration {
        Some(i) => format!("checkpoint_{i:06}.{ext}"),
        None => format!("final.{ext}"),
    }
}

/// Runs training, writing the config echo, metrics and checkpoints under
/// the output directory.
pub fn run_train(config: &RunConfig) -> Result<TrainSummary> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| {
        Error::config(
            "output_dir",
            format!("cannot create {}: {e}", dir.display()),
        )
    })?;
    let echo = serde_json::to_string_pretty(&config.to_json())
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(dir.join("config.json"), echo + "\n")?;

    let metrics_path = dir.join(metrics_file_name(config.metrics_format));
    let mut writer = MetricsWriter::create(
        &metrics_path,
        config.metrics_format,
        config.train.env.n_agents,
        config.record_wall_time,
    )?;
    let interval = config.checkpoint_interval;
    let mut last = None;
    let trainer = train_with(config.train.clone(), |m, trainer| {
        writer.write(m)?;
        if config.verbosity >= 2 {
            eprintln!(
                "iter {:>6}  return {:>10.5}  |u*| {:.3e}",
                m.iteration, m.mean_return, m.u_star_norm
            );
        }
        if interval > 0 && m.iteration % interval == 0 {
            save_state(
                trainer,
                &dir.join(checkpoint_name(trainer, Some(m.iteration))),
            )?;
        }
        last = Some(m.clone());
        Ok(())
    })?;
    let final_checkpoint = dir.join(checkpoint_name(&trainer, None));
    save_state(&trainer, &final_checkpoint)?;
    Ok(TrainSummary {
        iterations: trainer.completed(),
        metrics_path,
        final_checkpoint,
        last,
    })
}

pub fn cmd_train(config: &RunConfig) -> i32 {
    match run_train(config) {
        Ok(summary) => {
            if config.verbosity >= 1 {
                match &summary.last {
                    Some(m) => eprintln!(
                        "done: {} iterations, final return {:.5}, |u*| {:.3e}; metrics in {}",
                        summary.iterations,
                        m.mean_return,
                        m.u_star_norm,
                        summary.metrics_path.display()
                    ),
                    None => eprintln!(
                        "done: 0 iterations; metrics in {}",
                        summary.metrics_path.display()
                    ),
                }
            }
            EXIT_OK
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// Runs the named suite and prints its reports.
pub fn cmd_verify(suite: &str, cases: Option<usize>, seed: u64) -> i32 {
    let suite: Suite = match suite.parse() {
        Ok(s) => s,
        Err(err) => {
            eprintln!("error: {err}");
            eprintln!(
                "usage: grasp verify --suite <{}> [--cases <n>] [--seed <n>]",
                Suite::NAMES.join("|")
            );
            return EXIT_USAGE;
        }
    };
    match run_suite(suite, cases, seed) {
        Ok(reports) => {
            for r in &reports {
                print!("{r}");
            }
            if reports.iter().all(|r: &VerifyReport| r.pass) {
                EXIT_OK
            } else {
                EXIT_RUNTIME
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
