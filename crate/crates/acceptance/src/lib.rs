//! Desk-scale experiment harnesses shared by the acceptance suite.
//!
//! Each harness generates its own train and held-out data from fixed seeds,
//! trains the models being compared and reports the numbers a verdict is
//! made from. Nothing here decides pass or fail.

use std::time::Instant;

use raflow::model::Model;
use raflow::numeric::RngState;
use raflow::sim::{generate_episode, Episode, Process};
use raflow::training::{
    evaluate_avg_log_density, evaluate_field_kl, mode_purity, model_spec, train, EvalSummary,
    Experiment, ModelKind, TrainConfig, INIT_STREAM, TRAIN_LEAKY_SLOPE,
};
use raflow::Result;

/// Episodes `first..first + n` of a dataset.
pub fn dataset(process: Process, seed: u64, n: usize, len: usize) -> Result<Vec<Episode>> {
    (0..n as u64)
        .map(|i| generate_episode(process, seed, i, len))
        .collect()
}

fn samples(episodes: &[Episode]) -> Vec<Vec<Vec<f64>>> {
    episodes.iter().map(|e| e.samples.clone()).collect()
}

fn log_progress(tag: &str, start: Instant) -> impl FnMut(&raflow::training::EpochMetrics) + '_ {
    move |m| {
        if m.epoch % 50 == 0 {
            eprintln!(
                "  [{tag}] epoch {} loss {:.4} ({:.0}s)",
                m.epoch,
                m.loss,
                start.elapsed().as_secs_f64()
            );
        }
    }
}

fn train_model(config: &TrainConfig, data: &[Episode], seed: u64, tag: &str) -> Result<Model> {
    let start = Instant::now();
    let outcome = train(config, data, seed, &mut log_progress(tag, start))?;
    if let Some(e) = outcome.failure {
        return Err(e);
    }
    Ok(outcome.model)
}

#[derive(Debug, Clone)]
pub struct Exp1Setup {
    pub seed: u64,
    pub train_episodes: usize,
    pub samples_per_episode: usize,
    pub test_episodes: usize,
    pub raf_epochs: usize,
    pub baseline_epochs: usize,
    pub leaky_slope: f64,
    pub generated_episodes: usize,
    pub generated_steps: usize,
    pub burn_in: usize,
}

impl Default for Exp1Setup {
    fn default() -> Self {
        Exp1Setup {
            seed: 101,
            train_episodes: 100,
            samples_per_episode: 100,
            test_episodes: 100,
            raf_epochs: 300,
            baseline_epochs: 300,
            leaky_slope: TRAIN_LEAKY_SLOPE,
            generated_episodes: 10,
            generated_steps: 1000,
            burn_in: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Exp1Report {
    /// Held-out pooled mean negative log density per step.
    pub raf_nll: f64,
    pub baseline_nll: f64,
    /// Per generated episode: fraction of post-burn-in samples on the side
    /// of the episode's x1 mean.
    pub raf_purity: Vec<f64>,
    pub baseline_purity: Vec<f64>,
    /// The same statistic on held-out episodes of the true process.
    pub data_purity: Vec<f64>,
}

pub fn run_exp1(setup: &Exp1Setup) -> Result<Exp1Report> {
    let train_set = dataset(Process::Hierarchical, setup.seed, setup.train_episodes, setup.samples_per_episode)?;
    let test_set = dataset(Process::Hierarchical, setup.seed + 1, setup.test_episodes, setup.samples_per_episode)?;
    let long_set = dataset(Process::Hierarchical, setup.seed + 2, setup.generated_episodes, setup.generated_steps)?;

    let mut raf_cfg = TrainConfig::new(Experiment::Exp1, ModelKind::Raf);
    raf_cfg.epochs = setup.raf_epochs;
    raf_cfg.leaky_slope = setup.leaky_slope;
    let mut nvp_cfg = TrainConfig::new(Experiment::Exp1, ModelKind::Realnvp);
    nvp_cfg.epochs = setup.baseline_epochs;

    let raf = train_model(&raf_cfg, &train_set, setup.seed, "exp1 raf")?;
    let nvp = train_model(&nvp_cfg, &train_set, setup.seed, "exp1 realnvp")?;

    let held_out = samples(&test_set);
    let score = |m: &Model| -> Result<EvalSummary> {
        evaluate_avg_log_density(m.as_sequence().expect("sequence model"), &held_out)
    };
    let purity = |m: &Model| -> Result<Vec<f64>> {
        let seq = m.as_sequence().expect("sequence model");
        (0..setup.generated_episodes as u64)
            .map(|i| {
                let mut rng = RngState::new(setup.seed, 1000 + i);
                let ep = seq.sample_episode(&mut rng, setup.generated_steps)?;
                mode_purity(&ep, setup.burn_in, 1)
            })
            .collect()
    };
    Ok(Exp1Report {
        raf_nll: -score(&raf)?.pooled_mean,
        baseline_nll: -score(&nvp)?.pooled_mean,
        raf_purity: purity(&raf)?,
        baseline_purity: purity(&nvp)?,
        data_purity: long_set
            .iter()
            .map(|e| mode_purity(&e.samples, setup.burn_in, 1))
            .collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone)]
pub struct Exp2Setup {
    pub seed: u64,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub max_steps: usize,
    pub raf_epochs: usize,
    pub baseline_epochs: usize,
    pub leaky_slope: f64,
    pub truncation: usize,
}

impl Default for Exp2Setup {
    fn default() -> Self {
        Exp2Setup {
            seed: 202,
            train_episodes: 100,
            test_episodes: 50,
            max_steps: 200,
            raf_epochs: 300,
            baseline_epochs: 300,
            leaky_slope: TRAIN_LEAKY_SLOPE,
            truncation: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Exp2Report {
    pub raf: EvalSummary,
    pub baseline: EvalSummary,
}

pub fn run_exp2(setup: &Exp2Setup) -> Result<Exp2Report> {
    let train_set = dataset(Process::Maze, setup.seed, setup.train_episodes, setup.max_steps)?;
    let test_set = dataset(Process::Maze, setup.seed + 1, setup.test_episodes, setup.max_steps)?;
    let mut raf_cfg = TrainConfig::new(Experiment::Exp2, ModelKind::Raf);
    raf_cfg.epochs = setup.raf_epochs;
    raf_cfg.leaky_slope = setup.leaky_slope;
    raf_cfg.truncation = setup.truncation;
    let mut rnn_cfg = TrainConfig::new(Experiment::Exp2, ModelKind::Rnn);
    rnn_cfg.epochs = setup.baseline_epochs;
    rnn_cfg.truncation = setup.truncation;

    let raf = train_model(&raf_cfg, &train_set, setup.seed, "exp2 raf")?;
    let rnn = train_model(&rnn_cfg, &train_set, setup.seed, "exp2 rnn")?;
    let held_out = samples(&test_set);
    Ok(Exp2Report {
        raf: evaluate_avg_log_density(raf.as_sequence().expect("sequence model"), &held_out)?,
        baseline: evaluate_avg_log_density(rnn.as_sequence().expect("sequence model"), &held_out)?,
    })
}

#[derive(Debug, Clone)]
pub struct Exp3Setup {
    pub seed: u64,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub batch_episodes: usize,
    pub leaky_slope: f64,
}

impl Default for Exp3Setup {
    fn default() -> Self {
        Exp3Setup {
            seed: 303,
            train_episodes: 100,
            test_episodes: 50,
            pretrain_epochs: 500,
            epochs: 300,
            batch_episodes: 10,
            leaky_slope: TRAIN_LEAKY_SLOPE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Exp3Report {
    /// Mean held-out KL per prediction step before any training.
    pub untrained_per_step: Vec<f64>,
    pub untrained_mean: f64,
    pub trained_per_step: Vec<f64>,
    pub trained_mean: f64,
}

pub fn run_exp3(setup: &Exp3Setup) -> Result<Exp3Report> {
    let len = raflow::sim::default_episode_len(Process::Fluid);
    let train_set = dataset(Process::Fluid, setup.seed, setup.train_episodes, len)?;
    let test_set = dataset(Process::Fluid, setup.seed + 1, setup.test_episodes, len)?;
    let mut cfg = TrainConfig::new(Experiment::Exp3, ModelKind::Raf);
    cfg.epochs = setup.epochs;
    cfg.pretrain_epochs = setup.pretrain_epochs;
    cfg.batch_episodes = setup.batch_episodes;
    cfg.leaky_slope = setup.leaky_slope;

    // The trainer starts from exactly this model.
    let spec = model_spec(&cfg, &train_set, setup.seed)?;
    let untrained = Model::build(&spec, &mut RngState::new(setup.seed, INIT_STREAM))?;
    let trained = train_model(&cfg, &train_set, setup.seed, "exp3")?;
    let held_out = samples(&test_set);
    let kl = |m: &Model| match m {
        Model::Field(f) => evaluate_field_kl(f, &held_out),
        _ => unreachable!("exp3 trains a field model"),
    };
    let before = kl(&untrained)?;
    let after = kl(&trained)?;
    Ok(Exp3Report {
        untrained_per_step: before.per_step,
        untrained_mean: before.mean,
        trained_per_step: after.per_step,
        trained_mean: after.mean,
    })
}
