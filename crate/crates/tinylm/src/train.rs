use ndarray::Array2;
use pooling_core::langgen::{ContextId, Group, ObservedCorpus};
use pooling_core::rng::{rng_from_seed, split_seed, streams};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, DropoutMasks, Vocab, LM, SEQ_LEN};
use crate::tape::softmax_rows;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(lm: &LM) -> Self {
        let zeros = |t: &Array2<f64>| Array2::zeros(t.dim());
        Self { m: lm.params.tensors.iter().map(zeros).collect(), v: lm.params.tensors.iter().map(zeros).collect(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, lm: &mut LM, grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for ((p, g), (m, v)) in lm.params.tensors.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
        }
    }
}

/// Encodes every string of the corpus as `(BOS, context, penult, final)`.
pub fn encode_corpus(corpus: &ObservedCorpus, vocab: &Vocab) -> Result<Vec<[usize; 4]>> {
    corpus.strings.iter().map(|s| vocab.encode(s)).collect()
}

/// One shuffled pass over `seqs`; the order depends only on
/// `(cfg.seed, epoch)`. Returns the mean of the per-batch losses weighted
/// by batch size.
pub fn train_epoch(lm: &mut LM, opt: &mut Adam, seqs: &[[usize; 4]], epoch: usize) -> Result<f64> {
    let cfg = lm.cfg.clone();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut rng_from_seed(split_seed(cfg.seed, streams::SHUFFLE, epoch as u64)));
    let mut drop_rng = rng_from_seed(split_seed(cfg.seed, streams::DROPOUT, epoch as u64));
    let mut total = 0.0;
    for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<[usize; 4]> = chunk.iter().map(|&i| seqs[i]).collect();
        let dropout = (cfg.dropout > 0.0).then_some(DropoutMasks { rate: cfg.dropout, rng: &mut drop_rng });
        let (loss, grads) = lm.loss_and_grads(&batch, dropout);
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss { epoch, step });
        }
        opt.update(lm, &grads, cfg.learning_rate);
        total += loss * batch.len() as f64;
    }
    Ok(total / seqs.len() as f64)
}

/// Next-token distribution after `(BOS, context, penult)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub context_id: ContextId,
    pub group: Group,
    /// `p(A) / (p(A) + p(B))`.
    pub inferred_p: f64,
    pub raw_p_a: f64,
    pub raw_p_b: f64,
    /// Sum of the softmax over the full vocabulary.
    #[serde(skip)]
    pub total_mass: f64,
}

/// `p(A) / (p(A) + p(B))`: the probe with mass on other tokens discarded.
pub fn renormalize(p_a: f64, p_b: f64) -> f64 {
    p_a / (p_a + p_b)
}

pub fn probe(lm: &LM, contexts: &[(ContextId, Group)]) -> Result<Vec<Probe>> {
    let inputs = contexts
        .iter()
        .map(|&(id, g)| Ok([Vocab::BOS, lm.vocab.context(id)?, Vocab::penult(g)]))
        .collect::<Result<Vec<[usize; SEQ_LEN]>>>()?;
    let logits = lm.logits(&inputs);
    Ok(contexts
        .iter()
        .enumerate()
        .map(|(i, &(context_id, group))| {
            let row = logits.row(i * SEQ_LEN + SEQ_LEN - 1).to_owned().insert_axis(ndarray::Axis(0));
            let p = softmax_rows(&row);
            let (a, b) = (p[[0, Vocab::A]], p[[0, Vocab::B]]);
            Probe { context_id, group, inferred_p: renormalize(a, b), raw_p_a: a, raw_p_b: b, total_mass: p.sum() }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based; recorded after the epoch's updates.
    pub epoch: usize,
    pub loss: f64,
    pub probes: Vec<Probe>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub model: LM,
}

/// One line of the probe CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub replication: u32,
    pub epoch: u32,
    pub context_id: ContextId,
    pub group: Group,
    pub inferred_p: f64,
    pub raw_p_a: f64,
    pub raw_p_b: f64,
}

/// One line of the loss CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub replication: u32,
    pub epoch: u32,
    pub loss: f64,
}

impl TrainRun {
    pub fn probe_records(&self, replication: u32) -> Vec<ProbeRecord> {
        self.epochs
            .iter()
            .flat_map(|e| {
                e.probes.iter().map(move |p| ProbeRecord {
                    replication,
                    epoch: e.epoch as u32,
                    context_id: p.context_id,
                    group: p.group,
                    inferred_p: p.inferred_p,
                    raw_p_a: p.raw_p_a,
                    raw_p_b: p.raw_p_b,
                })
            })
            .collect()
    }

    pub fn loss_records(&self, replication: u32) -> Vec<LossRecord> {
        self.epochs
            .iter()
            .map(|e| LossRecord { replication, epoch: e.epoch as u32, loss: e.loss })
            .collect()
    }
}

/// Builds a model sized to the corpus, trains for `cfg.epochs` epochs and
/// probes every context after each one. Contexts are probed in corpus
/// order (ascending id).
pub fn train_and_probe(corpus: &ObservedCorpus, cfg: &crate::model::LMConfig) -> Result<TrainRun> {
    let vocab = Vocab::new(corpus.types_x + corpus.types_y);
    let mut lm = build_model(cfg, vocab)?;
    let seqs = encode_corpus(corpus, &vocab)?;
    let contexts: Vec<(ContextId, Group)> = corpus.contexts.iter().map(|c| (c.context_id, c.group)).collect();
    let initial_loss = lm.loss(&seqs);
    let mut opt = Adam::new(&lm);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let loss = train_epoch(&mut lm, &mut opt, &seqs, epoch)?;
        epochs.push(EpochRecord { epoch, loss, probes: probe(&lm, &contexts)? });
    }
    Ok(TrainRun { initial_loss, epochs, model: lm })
}
