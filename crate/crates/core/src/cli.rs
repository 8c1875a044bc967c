//! The `raflow` command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or validation error,
//! 3 numeric failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{dataset_header, load_dataset, save_dataset, Checkpoint, Descriptor};
use crate::model::Model;
use crate::numeric::RngState;
use crate::sim::{default_episode_len, generate_episode, Episode, Process};
use crate::training::{evaluate_avg_log_density, evaluate_field_kl, train, TrainConfig};

/// Environment variable consulted for a seed when no flag gives one.
pub const SEED_ENV: &str = "RAFLOW_SEED";

#[derive(Debug, Parser)]
#[command(name = "raflow", version, about = "Recurrent autoregressive flows for sequence densities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate episodes of a stochastic process into a dataset file.
    Generate {
        #[arg(long, value_parser = parse_process)]
        process: Process,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Steps per episode; process default when absent.
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a per-epoch metrics log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics CSV; defaults to `<out>.metrics.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Score one or more checkpoints on a dataset and write a JSON report.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate episodes by running a trained model freely.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        burnin: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export log p(x | context) on a regular 2-D grid as CSV.
    DensityGrid {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset file holding the context episode.
        #[arg(long)]
        context: PathBuf,
        /// Which episode of the context file to use.
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Number of leading samples to observe; the whole episode when absent.
        #[arg(long)]
        prefix: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        xmin: f64,
        #[arg(long, allow_negative_numbers = true)]
        xmax: f64,
        /// Defaults to `xmin`.
        #[arg(long, allow_negative_numbers = true)]
        ymin: Option<f64>,
        /// Defaults to `xmax`.
        #[arg(long, allow_negative_numbers = true)]
        ymax: Option<f64>,
        #[arg(long)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_process(s: &str) -> std::result::Result<Process, String> {
    s.parse::<Process>().map_err(|e| e.to_string())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 1,
        Error::Config(_) | Error::Format(_) | Error::Contract(_) | Error::Dimension { .. } => 2,
        Error::Numeric { .. } | Error::Domain { .. } => 3,
    }
}

/// The first of: the flag, an explicit setting (config file), the
/// environment, `default`.
fn resolve_seed(flag: Option<u64>, setting: Option<u64>, default: u64) -> Result<u64> {
    if let Some(s) = flag.or(setting) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(default),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate {
            process,
            episodes,
            seed,
            len,
            out: path,
        } => {
            let seed = resolve_seed(seed, None, 0)?;
            let len = len.unwrap_or_else(|| default_episode_len(process));
            let eps = (0..episodes as u64)
                .map(|i| generate_episode(process, seed, i, len))
                .collect::<Result<Vec<_>>>()?;
            save_dataset(&path, &dataset_header(process, episodes, seed), &eps)?;
            let _ = writeln!(out, "wrote {episodes} {process} episodes to {}", path.display());
            Ok(())
        }
        Command::Train {
            config,
            data,
            out: path,
            seed,
            metrics,
        } => {
            let config = TrainConfig::load(&config)?;
            let episodes = load_dataset(&data)?;
            let seed = resolve_seed(seed, config.seed, 0)?;
            let metrics_path = metrics.unwrap_or_else(|| {
                let mut p = path.clone().into_os_string();
                p.push(".metrics.csv");
                PathBuf::from(p)
            });
            let outcome = train(&config, &episodes, seed, &mut |_| {})?;
            let mut csv = String::from("epoch,loss,wall_seconds\n");
            for m in &outcome.metrics {
                csv.push_str(&format!("{},{},{:.6}\n", m.epoch, m.loss, m.wall_seconds));
            }
            write_text(&metrics_path, &csv)?;
            let descriptor = Descriptor {
                experiment: config.experiment,
                model: outcome.model.spec(),
                config: config.clone(),
                seed,
                final_train_log_density: outcome.final_train_log_density,
                final_train_kl: outcome.final_train_kl,
                aborted: outcome.failure.as_ref().map(ToString::to_string),
            };
            Checkpoint::new(descriptor, &outcome.model)?.save(&path)?;
            if let Some(e) = outcome.failure {
                let _ = writeln!(
                    out,
                    "training aborted; last good parameters saved to {}",
                    path.display()
                );
                return Err(e);
            }
            let last = outcome.metrics.last().map_or(f64::NAN, |m| m.loss);
            let _ = writeln!(
                out,
                "trained {} for {} epochs, final loss {last}; checkpoint {}",
                outcome.model.kind_name(),
                outcome.metrics.len(),
                path.display()
            );
            Ok(())
        }
        Command::Eval { ckpt, data, report } => {
            let episodes = load_dataset(&data)?;
            if episodes.is_empty() {
                return Err(Error::Config(format!("{}: no episodes", data.display())));
            }
            let mut rows = Vec::with_capacity(ckpt.len());
            for path in &ckpt {
                let row = eval_row(path, &episodes)?;
                let _ = writeln!(
                    out,
                    "{} ({}): {} {} +- {}",
                    path.display(),
                    row.model,
                    row.metric,
                    row.mean,
                    row.std
                );
                rows.push(row);
            }
            let report_doc = EvalReport {
                data: data.display().to_string(),
                episodes: episodes.len(),
                models: rows,
            };
            let text = serde_json::to_string_pretty(&report_doc).expect("report serializes");
            write_text(&report, &(text + "\n"))
        }
        Command::Sample {
            ckpt,
            episodes,
            steps,
            burnin,
            seed,
            out: path,
        } => {
            let c = Checkpoint::load(&ckpt)?;
            if burnin >= steps {
                return Err(Error::Config(format!(
                    "burn-in {burnin} must be shorter than {steps} steps"
                )));
            }
            let model = c.model()?;
            let seq = model
                .as_sequence()
                .ok_or_else(|| Error::Config("sampling needs a sequence model".into()))?;
            let seed = resolve_seed(seed, None, c.descriptor.seed)?;
            let process = c.descriptor.experiment.process();
            let mut eps = Vec::with_capacity(episodes);
            for i in 0..episodes as u64 {
                let mut rng = RngState::new(seed, i);
                let samples = seq.sample_episode(&mut rng, steps).map_err(|e| match e {
                    Error::Numeric { op } => Error::numeric(format!("episode {i}: {op}")),
                    other => other,
                })?;
                let mut ep = Episode::new(process, samples);
                ep.id = i;
                ep.seed = seed;
                ep.labels.burn_in = Some(burnin);
                eps.push(ep);
            }
            let header = format!(
                "{} steps={steps} burnin={burnin} source=samples",
                dataset_header(process, episodes, seed)
            );
            save_dataset(&path, &header, &eps)?;
            let _ = writeln!(out, "wrote {episodes} sampled episodes to {}", path.display());
            Ok(())
        }
        Command::DensityGrid {
            ckpt,
            context,
            episode,
            prefix,
            xmin,
            xmax,
            ymin,
            ymax,
            resolution,
            out: path,
        } => {
            let (ymin, ymax) = (ymin.unwrap_or(xmin), ymax.unwrap_or(xmax));
            if resolution < 2 {
                return Err(Error::Config("resolution must be at least 2".into()));
            }
            if !(xmin < xmax && ymin < ymax) || ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
                return Err(Error::Config("grid bounds must be finite with min < max".into()));
            }
            let c = Checkpoint::load(&ckpt)?;
            let model = c.model()?;
            let seq = model
                .as_sequence()
                .ok_or_else(|| Error::Config("density grids need a sequence model".into()))?;
            if seq.dim() != 2 {
                return Err(Error::Config(format!(
                    "density grids are 2-D only, the model has dimension {}",
                    seq.dim()
                )));
            }
            let ctx = load_dataset(&context)?;
            let ep = ctx.get(episode).ok_or_else(|| {
                Error::Config(format!("{} has no episode {episode}", context.display()))
            })?;
            let n = prefix.unwrap_or(ep.len());
            if n > ep.len() {
                return Err(Error::Config(format!(
                    "prefix {n} is longer than the episode ({} steps)",
                    ep.len()
                )));
            }
            let grid = density_grid(seq, &ep.samples[..n], [xmin, xmax], [ymin, ymax], resolution)?;
            write_text(&path, &grid_csv(&grid))?;
            let _ = writeln!(out, "wrote {resolution}x{resolution} grid to {}", path.display());
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct EvalReport {
    data: String,
    episodes: usize,
    models: Vec<EvalRow>,
}

/// One checkpoint's scores. Sequence models report step log densities;
/// the field model reports step KL divergences.
#[derive(Debug, Serialize)]
struct EvalRow {
    checkpoint: String,
    experiment: String,
    model: String,
    metric: &'static str,
    mean: f64,
    std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_step: Option<Vec<f64>>,
    per_episode: Vec<f64>,
}

fn eval_row(path: &Path, episodes: &[Episode]) -> Result<EvalRow> {
    let c = Checkpoint::load(path)?;
    let want = c.descriptor.experiment.process();
    if let Some(ep) = episodes.iter().find(|e| e.process != want) {
        return Err(Error::Config(format!(
            "{} was trained on {want} data, episode {} is {}",
            path.display(),
            ep.id,
            ep.process
        )));
    }
    let model = c.model()?;
    let samples: Vec<Vec<Vec<f64>>> = episodes.iter().map(|e| e.samples.clone()).collect();
    let dim = match &model {
        Model::Field(f) => f.grid() * f.grid(),
        m => m.as_sequence().expect("sequence model").dim(),
    };
    if let Some(ep) = episodes.iter().find(|e| e.dim().map_or(true, |k| k != dim)) {
        return Err(Error::Config(format!(
            "{} models dimension {dim}, episode {} does not match",
            path.display(),
            ep.id
        )));
    }
    let common = |metric, mean, std, per_episode| EvalRow {
        checkpoint: path.display().to_string(),
        experiment: c.descriptor.experiment.name().to_string(),
        model: model.kind_name().to_string(),
        metric,
        mean,
        std,
        pooled_mean: None,
        per_step: None,
        per_episode,
    };
    Ok(match &model {
        Model::Field(f) => {
            let e = evaluate_field_kl(f, &samples)?;
            let n = e.per_episode.len() as f64;
            let var = e.per_episode.iter().map(|v| (v - e.mean).powi(2)).sum::<f64>() / n;
            EvalRow {
                per_step: Some(e.per_step.clone()),
                ..common("kl", e.mean, var.sqrt(), e.per_episode)
            }
        }
        m => {
            let s = evaluate_avg_log_density(m.as_sequence().expect("sequence model"), &samples)?;
            EvalRow {
                pooled_mean: Some(s.pooled_mean),
                ..common("log_density", s.mean, s.std, s.per_episode)
            }
        }
    })
}

/// Log densities on an inclusive regular grid; `values[j][i]` is at
/// `(xs[i], ys[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn density_grid(
    model: &dyn crate::model::SequenceModel,
    context: &[Vec<f64>],
    x: [f64; 2],
    y: [f64; 2],
    resolution: usize,
) -> Result<DensityGrid> {
    let xs = linspace(x[0], x[1], resolution);
    let ys = linspace(y[0], y[1], resolution);
    let points: Vec<Vec<f64>> = ys
        .iter()
        .flat_map(|&yv| xs.iter().map(move |&xv| vec![xv, yv]))
        .collect();
    let lp = model.conditional_log_prob(context, &points)?;
    let values = lp.chunks(resolution).map(<[f64]>::to_vec).collect();
    Ok(DensityGrid { xs, ys, values })
}

/// CSV with a header row of x coordinates; each following row starts with
/// its y coordinate.
pub fn grid_csv(grid: &DensityGrid) -> String {
    let mut s = String::from("y\\x");
    for x in &grid.xs {
        s.push_str(&format!(",{x}"));
    }
    s.push('\n');
    for (y, row) in grid.ys.iter().zip(&grid.values) {
        s.push_str(&y.to_string());
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}
