//! Mini-batch training with lazy Adam and validation-MRR early stopping.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FilterIndex, KnowledgeGraph, Triple};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_triples;
use crate::losses::{nsf_loss, ns_baseline_loss, LossConfig};
use crate::models::{build_batch, EmbeddingModel, PairForm};
use crate::tensor::{scatter_add_rows, Matrix};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Resampling budget for a filtered corruption before it is accepted anyway.
pub const MAX_CORRUPTION_ATTEMPTS: usize = 100;

/// RNG stream ids derived from the run seed.
pub mod streams {
    pub const SHUFFLE: u64 = 0;
    pub const SDBN: u64 = 1;
    pub const NEGATIVES: u64 = 2;
    pub const INIT: u64 = 3;
}

/// Seeded generator for one of the [`streams`].
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gradient rows for a subset of a parameter table, ids sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradients {
    pub ids: Vec<usize>,
    pub grads: Matrix,
}

impl RowGradients {
    /// Sums gradient rows that share an id.
    pub fn accumulate(dim: usize, parts: &[(&[usize], &Matrix)]) -> Result<Self> {
        let mut ids: Vec<usize> = parts.iter().flat_map(|(ids, _)| ids.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        let slot: HashMap<usize, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let mut grads = Matrix::zeros(ids.len(), dim);
        for (part_ids, g) in parts {
            let local: Vec<usize> = part_ids.iter().map(|id| slot[id]).collect();
            scatter_add_rows(&mut grads, &local, g)?;
        }
        Ok(RowGradients { ids, grads })
    }

    pub fn empty(dim: usize) -> Self {
        RowGradients {
            ids: Vec::new(),
            grads: Matrix::zeros(0, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub entities: RowGradients,
    pub relations: RowGradients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Matrix,
    pub v: Matrix,
}

impl Moments {
    fn like(t: &Matrix) -> Self {
        Moments {
            m: Matrix::zeros(t.rows(), t.cols()),
            v: Matrix::zeros(t.rows(), t.cols()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub entities: Moments,
    pub relations: Moments,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &EmbeddingModel) -> Self {
        AdamState {
            entities: Moments::like(&model.entities),
            relations: Moments::like(&model.relations),
            step_count: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam step. Only rows present in `grads` have their
/// moments and parameters touched; the bias correction uses the global
/// step count.
pub fn adam_step(
    model: &mut EmbeddingModel,
    grads: &ModelGradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (name, g) in [("entities", &grads.entities), ("relations", &grads.relations)] {
        if !g.grads.is_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (table, moments, g) in [
        (&mut model.entities, &mut state.entities, &grads.entities),
        (&mut model.relations, &mut state.relations, &grads.relations),
    ] {
        for (k, &id) in g.ids.iter().enumerate() {
            let grow = g.grads.row(k);
            let mrow = moments.m.row_mut(id);
            for (m, gv) in mrow.iter_mut().zip(grow) {
                *m = b1 * *m + (1.0 - b1) * gv;
            }
            let vrow = moments.v.row_mut(id);
            for (v, gv) in vrow.iter_mut().zip(grow) {
                *v = b2 * *v + (1.0 - b2) * gv * gv;
            }
            let (mrow, vrow) = (moments.m.row(id), moments.v.row(id));
            for ((p, m), v) in table.row_mut(id).iter_mut().zip(mrow).zip(vrow) {
                let m_hat = m / c1;
                let v_hat = v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// Which known triples a corruption must avoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegFilter {
    Train,
    All,
}

/// Uniform head-or-tail corruption with closed-world filtering. Counts
/// its invocations.
#[derive(Debug)]
pub struct NegativeSampler {
    rng: ChaCha8Rng,
    calls: u64,
}

impl NegativeSampler {
    pub fn new(rng: ChaCha8Rng) -> Self {
        NegativeSampler { rng, calls: 0 }
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn sample(&mut self, batch: &[Triple], index: &FilterIndex, n_entities: usize, n: usize) -> Vec<Triple> {
        self.calls += 1;
        negative_sample(batch, index, n_entities, n, &mut self.rng)
    }
}

/// `n` corruptions per positive, stored consecutively. A fair coin picks
/// the side; the replacement entity is uniform and redrawn while the
/// corrupted triple is in `index`, accepting the last draw after
/// [`MAX_CORRUPTION_ATTEMPTS`].
pub fn negative_sample<R: Rng + ?Sized>(
    batch: &[Triple],
    index: &FilterIndex,
    n_entities: usize,
    n: usize,
    rng: &mut R,
) -> Vec<Triple> {
    let mut out = Vec::with_capacity(batch.len() * n);
    for pos in batch {
        for _ in 0..n {
            let corrupt_head = rng.gen_bool(0.5);
            let mut cand = *pos;
            for _ in 0..MAX_CORRUPTION_ATTEMPTS {
                let e = rng.gen_range(0..n_entities);
                cand = if corrupt_head {
                    Triple { head: e, ..*pos }
                } else {
                    Triple { tail: e, ..*pos }
                };
                if !index.contains(&cand) {
                    break;
                }
            }
            out.push(cand);
        }
    }
    out
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// Cross-correlation loss over `H|, H, T, T|` built with `form`.
    NegativeSamplingFree {
        loss: LossConfig,
        form: PairForm,
        sdbn_group: Option<usize>,
    },
    /// Margin (TransE) or logistic (DistMult) loss against corruptions.
    NegativeSampling {
        margin: f64,
        n_negatives: usize,
        filter: NegFilter,
        normalize_entities: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub method: Method,
}

impl TrainConfig {
    pub fn nsf(form: PairForm) -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 1000,
            max_epochs: 200,
            patience: 5,
            seed: 0,
            eval_every: 1,
            method: Method::NegativeSamplingFree {
                loss: LossConfig::default(),
                form,
                sdbn_group: None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.patience < 1 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.eval_every < 1 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        match self.method {
            Method::NegativeSamplingFree { loss, sdbn_group, .. } => {
                loss.validate()?;
                if sdbn_group == Some(0) {
                    return Err(Error::invalid("SDBN group size must be at least 1"));
                }
            }
            Method::NegativeSampling { n_negatives, .. } => {
                if n_negatives < 1 {
                    return Err(Error::invalid("need at least one negative per positive"));
                }
            }
        }
        Ok(())
    }
}

/// Per-epoch metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` on epochs without validation.
    pub val_mrr_filtered: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validated epoch.
    pub model: EmbeddingModel,
    pub records: Vec<TrainRecord>,
    pub best_epoch: usize,
    pub best_val_mrr: Option<f64>,
    pub negative_sampler_calls: u64,
}

pub fn train(kg: &KnowledgeGraph, model: EmbeddingModel, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(kg, model, config, |_| Ok(()))
}

/// Like [`train`], calling `on_record` after every epoch.
pub fn train_with(
    kg: &KnowledgeGraph,
    mut model: EmbeddingModel,
    config: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.n_entities() != kg.n_entities() || model.n_relations() != kg.n_relations() {
        return Err(Error::invalid("model tables do not match the knowledge graph"));
    }
    let mut shuffle_rng = stream_rng(config.seed, streams::SHUFFLE);
    let mut sdbn_rng = stream_rng(config.seed, streams::SDBN);
    let mut sampler = NegativeSampler::new(stream_rng(config.seed, streams::NEGATIVES));
    let mut adam = AdamState::new(&model);
    let dim = model.dim();

    let mut order: Vec<usize> = (0..kg.train.len()).collect();
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, EmbeddingModel)> = None;
    let mut stale = 0;
    let mut last_epoch = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        last_epoch = epoch;
        if let Method::NegativeSampling { normalize_entities: true, .. } = config.method {
            model.normalize_entities();
        }
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let triples: Vec<Triple> = chunk.iter().map(|&i| kg.train[i]).collect();
            let step = |model: &mut EmbeddingModel, adam: &mut AdamState, sdbn_rng: &mut ChaCha8Rng, sampler: &mut NegativeSampler| -> Result<f64> {
                let (loss, grads) = match config.method {
                    Method::NegativeSamplingFree { loss, form, sdbn_group } => {
                        let batch = build_batch(model, &triples, form, sdbn_group, sdbn_rng)?;
                        let (v, g) = nsf_loss(&batch, &loss)?;
                        let grads = ModelGradients {
                            entities: RowGradients::accumulate(
                                dim,
                                &[(&batch.heads, &g.d_head), (&batch.tails, &g.d_tail)],
                            )?,
                            relations: RowGradients::accumulate(dim, &[(&batch.relations, &g.d_relation)])?,
                        };
                        (v.total, grads)
                    }
                    Method::NegativeSampling { margin, n_negatives, filter, .. } => {
                        let index = match filter {
                            NegFilter::Train => kg.train_index(),
                            NegFilter::All => kg.filter_index(),
                        };
                        let negs = sampler.sample(&triples, index, kg.n_entities(), n_negatives);
                        let form = model.kind.pair_form();
                        let pos = build_batch(model, &triples, form, None, sdbn_rng)?;
                        let neg = build_batch(model, &negs, form, None, sdbn_rng)?;
                        let (v, g) = ns_baseline_loss(&pos, &neg, model.kind, margin)?;
                        let grads = ModelGradients {
                            entities: RowGradients::accumulate(
                                dim,
                                &[
                                    (&pos.heads, &g.positive.d_head),
                                    (&pos.tails, &g.positive.d_tail),
                                    (&neg.heads, &g.negative.d_head),
                                    (&neg.tails, &g.negative.d_tail),
                                ],
                            )?,
                            relations: RowGradients::accumulate(
                                dim,
                                &[
                                    (&pos.relations, &g.positive.d_relation),
                                    (&neg.relations, &g.negative.d_relation),
                                ],
                            )?,
                        };
                        (v.total, grads)
                    }
                };
                adam_step(model, &grads, adam, config.lr)?;
                Ok(loss)
            };
            let loss = step(&mut model, &mut adam, &mut sdbn_rng, &mut sampler).map_err(|e| Error::Epoch {
                epoch,
                source: Box::new(e),
            })?;
            loss_sum += loss;
            n_batches += 1;
        }
        let train_loss = if n_batches == 0 { 0.0 } else { loss_sum / n_batches as f64 };

        let mut val_mrr = None;
        if epoch % config.eval_every == 0 && !kg.valid.is_empty() {
            let mrr = evaluate_triples(&model, kg, &kg.valid, true)?.mrr;
            val_mrr = Some(mrr);
            match &best {
                Some((b, _, _)) if mrr <= *b => stale += 1,
                _ => {
                    best = Some((mrr, epoch, model.clone()));
                    stale = 0;
                }
            }
        }
        let record = TrainRecord {
            epoch,
            train_loss,
            val_mrr_filtered: val_mrr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_record(&record)?;
        records.push(record);
        if stale >= config.patience {
            break;
        }
    }

    let negative_sampler_calls = sampler.calls();
    Ok(match best {
        Some((mrr, epoch, best_model)) => TrainOutcome {
            model: best_model,
            records,
            best_epoch: epoch,
            best_val_mrr: Some(mrr),
            negative_sampler_calls,
        },
        None => TrainOutcome {
            model,
            records,
            best_epoch: last_epoch,
            best_val_mrr: None,
            negative_sampler_calls,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn scalar_model(value: f64) -> EmbeddingModel {
        EmbeddingModel {
            kind: ModelKind::DistMult,
            entities: Matrix::from_rows(&[[value]]),
            relations: Matrix::from_rows(&[[0.0]]),
        }
    }

    fn entity_grad(id: usize, g: f64) -> ModelGradients {
        ModelGradients {
            entities: RowGradients {
                ids: vec![id],
                grads: Matrix::from_rows(&[[g]]),
            },
            relations: RowGradients::empty(1),
        }
    }

    #[test]
    fn zero_gradient_leaves_tables() {
        let mut m = scalar_model(0.3);
        let mut s = AdamState::new(&m);
        adam_step(&mut m, &entity_grad(0, 0.0), &mut s, 0.1).unwrap();
        assert_eq!(m.entities[(0, 0)], 0.3);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = scalar_model(0.0);
        let mut s = AdamState::new(&m);
        adam_step(&mut m, &entity_grad(0, 1.0), &mut s, 0.01).unwrap();
        assert!((m.entities[(0, 0)] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut m = scalar_model(0.0);
        let mut s = AdamState::new(&m);
        let err = adam_step(&mut m, &entity_grad(0, f64::NAN), &mut s, 0.01).unwrap_err();
        assert!(err.to_string().contains("entities"));
    }

    #[test]
    fn accumulate_sums_duplicates() {
        let a = Matrix::from_rows(&[[1.0], [2.0]]);
        let b = Matrix::from_rows(&[[4.0]]);
        let g = RowGradients::accumulate(1, &[(&[3, 1], &a), (&[3], &b)]).unwrap();
        assert_eq!(g.ids, vec![1, 3]);
        assert_eq!(g.grads.as_slice(), &[2.0, 5.0]);
    }

    #[test]
    fn sampler_saturates_on_complete_graph() {
        let all: Vec<Triple> = (0..2).flat_map(|h| (0..2).map(move |t| Triple::new(h, 0, t))).collect();
        let index = FilterIndex::from_triples(&all);
        let mut rng = stream_rng(0, 0);
        let negs = negative_sample(&all[..1], &index, 2, 5, &mut rng);
        assert_eq!(negs.len(), 5);
        assert!(negs.iter().all(|t| index.contains(t)));
    }

    #[test]
    fn sampler_avoids_known_triples() {
        let train: Vec<Triple> = (0..20).map(|i| Triple::new(i, 0, (i + 1) % 20)).collect();
        let index = FilterIndex::from_triples(&train);
        let mut sampler = NegativeSampler::new(stream_rng(1, 2));
        let negs = sampler.sample(&train[..4], &index, 20, 3);
        assert_eq!(negs.len(), 12);
        assert!(negs.iter().all(|t| !index.contains(t)));
        assert_eq!(sampler.calls(), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::nsf(PairForm::Bilinear);
        assert!(c.validate().is_ok());
        c.batch_size = 1;
        assert!(c.validate().is_err());
        c.batch_size = 4;
        c.patience = 0;
        assert!(c.validate().is_err());
    }
}
