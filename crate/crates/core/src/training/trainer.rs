//! Mini-batch training loops.
//!
//! Episodes in a batch are evaluated side by side as rows of one tape.
//! Shorter episodes are padded with their last sample and masked out of the
//! loss, which is the pooled mean negative log density over every scored
//! step in the batch. Hidden states start from zero for every episode.

use std::time::Instant;

use crate::baselines::{AutoencoderSpec, RnnGaussian, RnnGaussianSpec};
use crate::error::{Error, Result};
use crate::flow::{Conditioning, FlowGraph, GraphSpec, Standardizer};
use crate::model::{FieldModel, FieldModelSpec, Model, ModelSpec, SequenceModel};
use crate::numeric::{Gradients, ParamStore, RngState, Tape, Tensor, Var};
use crate::sim::Episode;
use crate::training::losses::composite_loss_tape;
use crate::training::{
    evaluate_avg_log_density, evaluate_field_kl, AdamState, Experiment, ModelKind, TrainConfig,
};

/// Stream used for parameter initialisation.
pub const INIT_STREAM: u64 = 0x1417_0000;
/// Stream used for shuffling episodes between epochs.
pub const SHUFFLE_STREAM: u64 = 0x1417_0001;
/// Half-width of the plane on which field distributions are modelled.
pub const FIELD_EXTENT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The trained model, or the last parameters that produced a finite
    /// update when training was aborted.
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    /// Mean L1 reconstruction loss of each autoencoder pre-training epoch
    /// (field model only).
    pub pretrain_losses: Vec<f64>,
    /// Pooled mean step log density on the training set (sequence models).
    pub final_train_log_density: Option<f64>,
    /// Mean step KL on the training set (field model).
    pub final_train_kl: Option<f64>,
    /// Why training stopped early, if it did.
    pub failure: Option<Error>,
}

fn check_data(config: &TrainConfig, episodes: &[Episode]) -> Result<usize> {
    if episodes.is_empty() {
        return Err(Error::Config("no episodes".into()));
    }
    let want = config.experiment.process();
    let mut dim = None;
    for ep in episodes {
        if ep.process != want {
            return Err(Error::Config(format!(
                "{} trains on {} data, episode {} is {}",
                config.experiment.name(),
                want,
                ep.id,
                ep.process
            )));
        }
        if ep.len() < 2 {
            return Err(Error::Config(format!("episode {} has fewer than two steps", ep.id)));
        }
        let k = ep.dim()?;
        if *dim.get_or_insert(k) != k {
            return Err(Error::Config(format!("episode {} has dimension {k}", ep.id)));
        }
    }
    Ok(dim.expect("non-empty"))
}

/// Architecture for `config`, with the data standardisation fitted to
/// `episodes`.
pub fn model_spec(config: &TrainConfig, episodes: &[Episode], seed: u64) -> Result<ModelSpec> {
    let dim = check_data(config, episodes)?;
    let fit = || Standardizer::fit(dim, episodes.iter().flat_map(|e| e.samples.iter().map(Vec::as_slice)));
    Ok(match (config.experiment, config.model) {
        (Experiment::Exp3, _) => {
            let grid = episodes[0].labels.grid.unwrap_or((dim as f64).sqrt().round() as usize);
            if grid * grid != dim {
                return Err(Error::Config(format!("fields of {dim} values are not square")));
            }
            let ae = AutoencoderSpec::dense(grid);
            let flow = GraphSpec::raf_stack(
                2,
                config.layers(),
                config.hidden(),
                config.activation(),
                config.permutation(seed),
                Conditioning::External { dim: ae.latent },
            )?;
            ModelSpec::Field {
                field: FieldModelSpec {
                    autoencoder: ae,
                    flow,
                    extent: FIELD_EXTENT,
                },
            }
        }
        (_, ModelKind::Raf) => {
            let mut graph = GraphSpec::raf_stack(
                dim,
                config.layers(),
                config.hidden(),
                config.activation(),
                config.permutation(seed),
                Conditioning::Observation,
            )?;
            graph.standardizer = fit()?;
            ModelSpec::Flow { graph }
        }
        (_, ModelKind::Realnvp) => {
            let mut graph = GraphSpec::coupling_stack(dim, config.layers())?;
            graph.standardizer = fit()?;
            ModelSpec::Flow { graph }
        }
        (_, ModelKind::Rnn) => ModelSpec::RnnGaussian {
            rnn: RnnGaussianSpec {
                dim,
                hidden: config.hidden(),
                standardizer: fit()?,
            },
        },
    })
}

/// Batched state and scoring shared by the recurrent sequence models.
trait TapeSequence {
    fn zero(&self, tape: &mut Tape, rows: usize) -> Vec<Option<Var>>;
    fn observe(&self, tape: &mut Tape, state: &[Option<Var>], x: &Tensor) -> Result<Vec<Option<Var>>>;
    fn log_prob(&self, tape: &mut Tape, state: &[Option<Var>], x: &Tensor) -> Result<Var>;
}

impl TapeSequence for FlowGraph {
    fn zero(&self, tape: &mut Tape, rows: usize) -> Vec<Option<Var>> {
        self.tape_zero_state(tape, rows)
    }
    fn observe(&self, tape: &mut Tape, state: &[Option<Var>], x: &Tensor) -> Result<Vec<Option<Var>>> {
        self.tape_observe_data(tape, &state.to_vec(), x)
    }
    fn log_prob(&self, tape: &mut Tape, state: &[Option<Var>], x: &Tensor) -> Result<Var> {
        self.tape_log_prob(tape, &state.to_vec(), x)
    }
}

impl TapeSequence for RnnGaussian {
    fn zero(&self, tape: &mut Tape, rows: usize) -> Vec<Option<Var>> {
        vec![Some(self.tape_zero_state(tape, rows))]
    }
    fn observe(&self, tape: &mut Tape, state: &[Option<Var>], x: &Tensor) -> Result<Vec<Option<Var>>> {
        let h = state[0].expect("rnn state");
        Ok(vec![Some(self.tape_observe_data(tape, h, x)?)])
    }
    fn log_prob(&self, tape: &mut Tape, state: &[Option<Var>], x: &Tensor) -> Result<Var> {
        self.tape_log_prob(tape, state[0].expect("rnn state"), x)
    }
}

/// Sum of masked step log densities of a batch and the number of scored steps.
fn batch_log_density(
    model: &dyn TapeSequence,
    tape: &mut Tape,
    batch: &[&[Vec<f64>]],
    truncation: usize,
) -> Result<(Var, usize)> {
    let rows = batch.len();
    let t_max = batch.iter().map(|e| e.len()).max().unwrap_or(0);
    let step = |t: usize| -> Result<Tensor> {
        let xs: Vec<Vec<f64>> = batch
            .iter()
            .map(|e| e[t.min(e.len() - 1)].clone())
            .collect();
        Tensor::from_rows(&xs)
    };
    let mut state = model.zero(tape, rows);
    state = model.observe(tape, &state, &step(0)?)?;
    let mut total: Option<Var> = None;
    let mut count = 0;
    for t in 1..t_max {
        if truncation > 0 && t % truncation == 0 {
            state = state
                .iter()
                .map(|h| h.map(|v| {
                    let value = tape.value(v).clone();
                    tape.constant(value)
                }))
                .collect();
        }
        let x = step(t)?;
        let lp = model.log_prob(tape, &state, &x)?;
        let mask: Vec<f64> = batch.iter().map(|e| f64::from(u8::from(t < e.len()))).collect();
        count += mask.iter().filter(|m| **m > 0.0).count();
        let lp = if mask.iter().all(|m| *m > 0.0) {
            lp
        } else {
            let m = tape.constant(Tensor::new(vec![rows, 1], mask)?);
            tape.mul(lp, m)?
        };
        let s = tape.sum(lp)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
        if t + 1 < t_max {
            state = model.observe(tape, &state, &x)?;
        }
    }
    Ok((total.expect("episodes have at least two steps"), count))
}

/// Mean negative log density of a batch and its parameter gradients.
pub fn sequence_batch_gradients(
    model: &Model,
    batch: &[&[Vec<f64>]],
    truncation: usize,
) -> Result<(f64, usize, Gradients)> {
    let store = model.store();
    let mut tape = Tape::new(store);
    let seq: &dyn TapeSequence = match model {
        Model::Flow(g) => g,
        Model::RnnGaussian(r) => r,
        Model::Field(_) => return Err(Error::Contract("field model has no sequence loss".into())),
    };
    let (total, count) = batch_log_density(seq, &mut tape, batch, truncation)?;
    let loss = tape.scale(total, -1.0 / count as f64)?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    Ok((value, count, grads))
}

/// Composite field loss of a batch (mean over episodes) and its gradients.
pub fn field_batch_gradients(
    model: &FieldModel,
    batch: &[&[Vec<f64>]],
    alpha: f64,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(model.store());
    let mut total: Option<Var> = None;
    for ep in batch {
        let (kl, l1) = model.tape_episode_terms(&mut tape, ep)?;
        let l = composite_loss_tape(&mut tape, l1, kl, alpha)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let loss = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
    Ok((tape.value(loss).item()?, tape.backward(loss)?))
}

/// Reconstruction loss of a set of fields and its gradients.
pub fn autoencoder_batch_gradients(model: &FieldModel, fields: &[Vec<f64>]) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(model.store());
    let x = tape.constant(Tensor::from_rows(fields)?);
    let z = model.autoencoder.encode_tape(&mut tape, x)?;
    let r = model.autoencoder.decode_tape(&mut tape, z)?;
    let loss = crate::training::losses::l1_loss_tape(&mut tape, x, r)?;
    Ok((tape.value(loss).item()?, tape.backward(loss)?))
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::Numeric { .. } | Error::Domain { .. })
}

/// Applies one optimiser step; on failure the store is restored.
fn apply(
    store: &mut ParamStore,
    adam: &mut AdamState,
    grads: &Gradients,
    lr: f64,
    clip: f64,
) -> Result<()> {
    let backup = store.clone();
    let backup_adam = adam.clone();
    grads.accumulate_into(store);
    store.clip_grad_norm(clip);
    if let Err(e) = adam.step(store, lr) {
        *store = backup;
        *adam = backup_adam;
        return Err(e);
    }
    Ok(())
}

fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Trains a fresh model. `on_epoch` sees every epoch's metrics as they are
/// produced.
pub fn train(
    config: &TrainConfig,
    episodes: &[Episode],
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if !(config.learning_rate >= 0.0) || config.epochs == 0 || config.batch_episodes == 0 {
        return Err(Error::Config("invalid training schedule".into()));
    }
    let spec = model_spec(config, episodes, seed)?;
    let mut model = Model::build(&spec, &mut RngState::new(seed, INIT_STREAM))?;
    let data: Vec<&[Vec<f64>]> = episodes.iter().map(|e| e.samples.as_slice()).collect();
    let mut shuffle = RngState::new(seed, SHUFFLE_STREAM);
    let mut adam = AdamState::new(model.store());
    let mut metrics = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    let mut failure = None;
    let mut pretrain_losses = Vec::new();

    if let Model::Field(fm) = &mut model {
        let fields: Vec<Vec<f64>> = data.iter().flat_map(|e| e.iter().cloned()).collect();
        let mut pre = AdamState::new(fm.store());
        let per_batch = config.batch_episodes * data[0].len();
        'pretrain: for epoch in 1..=config.pretrain_epochs {
            let mut order: Vec<usize> = (0..fields.len()).collect();
            shuffle.shuffle(&mut order);
            let mut weighted = 0.0;
            for b in batches(&order, per_batch) {
                let rows: Vec<Vec<f64>> = b.iter().map(|&i| fields[i].clone()).collect();
                let result = autoencoder_batch_gradients(fm, &rows).and_then(|(loss, grads)| {
                    if !loss.is_finite() {
                        return Err(Error::numeric("reconstruction loss"));
                    }
                    apply(&mut fm.flow.store, &mut pre, &grads, config.learning_rate, config.grad_clip)?;
                    Ok(loss)
                });
                match result {
                    Ok(loss) => weighted += loss * rows.len() as f64,
                    Err(e) if is_numeric_failure(&e) => {
                        failure = Some(Error::numeric(format!("pre-training epoch {epoch}: {e}")));
                        break 'pretrain;
                    }
                    Err(e) => return Err(e),
                }
            }
            pretrain_losses.push(weighted / fields.len() as f64);
        }
    }

    let epochs = if failure.is_some() { 0 } else { config.epochs };
    'epochs: for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        shuffle.shuffle(&mut order);
        let mut weighted = 0.0;
        let mut weight = 0usize;
        for b in batches(&order, config.batch_episodes) {
            let batch: Vec<&[Vec<f64>]> = b.iter().map(|&i| data[i]).collect();
            let step = match &model {
                Model::Field(fm) => field_batch_gradients(fm, &batch, config.alpha)
                    .map(|(l, g)| (l, batch.len(), g)),
                other => sequence_batch_gradients(other, &batch, config.truncation),
            };
            let result = step.and_then(|(loss, n, grads)| {
                if !loss.is_finite() {
                    return Err(Error::numeric("training loss"));
                }
                apply(model.store_mut(), &mut adam, &grads, config.learning_rate, config.grad_clip)?;
                Ok((loss, n))
            });
            match result {
                Ok((loss, n)) => {
                    weighted += loss * n as f64;
                    weight += n;
                }
                Err(e) if is_numeric_failure(&e) => {
                    failure = Some(Error::numeric(format!("epoch {epoch}: {e}")));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let m = EpochMetrics {
            epoch,
            loss: weighted / weight as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        metrics.push(m);
    }

    let (final_train_log_density, final_train_kl) = if failure.is_some() {
        (None, None)
    } else {
        let samples: Vec<Vec<Vec<f64>>> = data.iter().map(|e| e.to_vec()).collect();
        match &model {
            Model::Field(fm) => (None, Some(evaluate_field_kl(fm, &samples)?.mean)),
            other => {
                let seq: &dyn SequenceModel = other.as_sequence().expect("sequence model");
                (Some(evaluate_avg_log_density(seq, &samples)?.pooled_mean), None)
            }
        }
    };
    Ok(TrainOutcome {
        model,
        metrics,
        pretrain_losses,
        final_train_log_density,
        final_train_kl,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_episode, Process};

    fn central_difference(model: &Model, batch: &[&[Vec<f64>]], name: &str, k: usize) -> f64 {
        let h = 1e-5;
        let eval = |d: f64| {
            let mut m = model.clone();
            let id = m.store().id_of(name).unwrap();
            m.store_mut().value_mut(id).data_mut()[k] += d;
            sequence_batch_gradients(&m, batch, 0).unwrap().0
        };
        (eval(h) - eval(-h)) / (2.0 * h)
    }

    #[test]
    fn sequence_gradient_matches_differences() {
        let mut config = TrainConfig::new(Experiment::Exp1, ModelKind::Raf);
        config.layers = Some(2);
        config.hidden = Some(6);
        let eps: Vec<Episode> = (0..2)
            .map(|i| generate_episode(Process::Hierarchical, 3, i, 4 + i as usize).unwrap())
            .collect();
        let spec = model_spec(&config, &eps, 3).unwrap();
        let model = Model::build(&spec, &mut RngState::new(3, 1)).unwrap();
        let batch: Vec<&[Vec<f64>]> = eps.iter().map(|e| e.samples.as_slice()).collect();
        let (_, _, grads) = sequence_batch_gradients(&model, &batch, 0).unwrap();
        for p in model.store().iter() {
            let id = model.store().id_of(&p.name).unwrap();
            let g = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            for k in 0..p.value.len().min(3) {
                let fd = central_difference(&model, &batch, &p.name, k);
                let an = g.data()[k];
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "{} [{k}]: {an} vs {fd}",
                    p.name
                );
            }
        }
    }
}
