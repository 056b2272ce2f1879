use ndarray::Array2;
use pooling_core::langgen::{ContextId, Group, LangString};
use pooling_core::rng::{rng_from_seed, split_seed, streams};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Inputs are `(BOS, context, penult)`; targets are `(context, penult, final)`.
pub const SEQ_LEN: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LMConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            learning_rate: 3e-4,
            batch_size: 32,
            epochs: 50,
            dropout: 0.0,
            seed: 0,
            init_scale: 0.02,
        }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return bad("dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init scale {} must be positive", self.init_scale));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Token ids: `BOS = 0`, `A = 1`, `B = 2`, `X = 3`, `Y = 4`, context `k` is `4 + k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub n_contexts: usize,
}

impl Vocab {
    pub const BOS: usize = 0;
    pub const A: usize = 1;
    pub const B: usize = 2;
    pub const X: usize = 3;
    pub const Y: usize = 4;

    pub fn new(n_contexts: usize) -> Self {
        Self { n_contexts }
    }

    pub fn size(&self) -> usize {
        5 + self.n_contexts
    }

    pub fn context(&self, id: ContextId) -> Result<usize> {
        let k = id.0 as usize;
        if k == 0 || k > self.n_contexts {
            return Err(Error::UnknownContext(id.0));
        }
        Ok(4 + k)
    }

    pub fn penult(g: Group) -> usize {
        match g {
            Group::X => Self::X,
            Group::Y => Self::Y,
        }
    }

    pub fn encode(&self, s: &LangString) -> Result<[usize; 4]> {
        let last = match s.last {
            pooling_core::langgen::Final::A => Self::A,
            pooling_core::langgen::Final::B => Self::B,
        };
        Ok([Self::BOS, self.context(s.context_id)?, Self::penult(s.penult), last])
    }
}

/// Named parameter tensors in a fixed order; the order is the checkpoint
/// layout and the optimizer-state layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LM {
    pub cfg: LMConfig,
    pub vocab: Vocab,
    pub params: Params,
}

/// Closed-form parameter count for a pre-norm decoder with learned
/// positions, biased projections and a biased output head.
pub fn parameter_count(cfg: &LMConfig, vocab: &Vocab) -> usize {
    let (d, f, v) = (cfg.d_model, cfg.d_ff, vocab.size());
    let per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
    v * d + SEQ_LEN * d + cfg.n_layers * per_block + 2 * d + d * v + v
}

/// Weight matrices are drawn from `Normal(0, init_scale^2)`; biases start at
/// zero and layer-norm gains at one.
pub fn build_model(cfg: &LMConfig, vocab: Vocab) -> Result<LM> {
    cfg.validate()?;
    let (d, f, v) = (cfg.d_model, cfg.d_ff, vocab.size());
    let mut specs: Vec<(String, (usize, usize), Init)> = vec![
        ("tok_emb".into(), (v, d), Init::Normal),
        ("pos_emb".into(), (SEQ_LEN, d), Init::Normal),
    ];
    for l in 0..cfg.n_layers {
        let p = |n: &str| format!("block{l}.{n}");
        specs.extend([
            (p("ln1.gamma"), (1, d), Init::Ones),
            (p("ln1.beta"), (1, d), Init::Zeros),
            (p("attn.wq"), (d, d), Init::Normal),
            (p("attn.bq"), (1, d), Init::Zeros),
            (p("attn.wk"), (d, d), Init::Normal),
            (p("attn.bk"), (1, d), Init::Zeros),
            (p("attn.wv"), (d, d), Init::Normal),
            (p("attn.bv"), (1, d), Init::Zeros),
            (p("attn.wo"), (d, d), Init::Normal),
            (p("attn.bo"), (1, d), Init::Zeros),
            (p("ln2.gamma"), (1, d), Init::Ones),
            (p("ln2.beta"), (1, d), Init::Zeros),
            (p("ff.w1"), (d, f), Init::Normal),
            (p("ff.b1"), (1, f), Init::Zeros),
            (p("ff.w2"), (f, d), Init::Normal),
            (p("ff.b2"), (1, d), Init::Zeros),
        ]);
    }
    specs.extend([
        ("ln_f.gamma".into(), (1, d), Init::Ones),
        ("ln_f.beta".into(), (1, d), Init::Zeros),
        ("head.w".into(), (d, v), Init::Normal),
        ("head.b".into(), (1, v), Init::Zeros),
    ]);

    let mut rng = rng_from_seed(split_seed(cfg.seed, streams::INIT, 0));
    let normal = Normal::new(0.0, cfg.init_scale).expect("validated init scale");
    let mut names = Vec::with_capacity(specs.len());
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, shape, init) in specs {
        let t = match init {
            Init::Normal => Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng)),
            Init::Zeros => Array2::zeros(shape),
            Init::Ones => Array2::ones(shape),
        };
        names.push(name);
        tensors.push(t);
    }
    Ok(LM { cfg: cfg.clone(), vocab, params: Params { names, tensors } })
}

/// Dropout masks for one forward pass; `None` disables dropout.
pub struct DropoutMasks<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<R: Rng> DropoutMasks<'_, R> {
    fn mask(&mut self, shape: (usize, usize)) -> Array2<f64> {
        let keep = 1.0 - self.rate;
        Array2::from_shape_simple_fn(shape, || if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
    }
}

/// A forward pass recorded on a tape, with the leaf for each parameter.
pub struct Forward {
    pub tape: Tape,
    pub param_vars: Vec<Var>,
    pub logits: Var,
}

impl LM {
    /// Logits of shape `(batch * SEQ_LEN, vocab)` for input rows of
    /// `SEQ_LEN` token ids each.
    pub fn forward<R: Rng>(&self, inputs: &[[usize; SEQ_LEN]], mut dropout: Option<DropoutMasks<'_, R>>) -> Forward {
        let mut t = Tape::new();
        let pv: Vec<Var> = self.params.tensors.iter().map(|p| t.leaf(p.clone())).collect();
        let mut next = pv.iter().copied();
        let mut take = || next.next().expect("parameter layout matches forward");
        let tok_emb = take();
        let pos_emb = take();

        let ids: Vec<usize> = inputs.iter().flatten().copied().collect();
        let positions: Vec<usize> = (0..inputs.len()).flat_map(|_| 0..SEQ_LEN).collect();
        let rows = ids.len();
        let d = self.cfg.d_model;
        let te = t.gather(tok_emb, &ids);
        let pe = t.gather(pos_emb, &positions);
        let mut h = t.add(te, pe);
        if let Some(dm) = dropout.as_mut() {
            h = t.scale(h, dm.mask((rows, d)));
        }
        for _ in 0..self.cfg.n_layers {
            let (g1, b1) = (take(), take());
            let (wq, bq, wk, bk, wv, bv, wo, bo) = (take(), take(), take(), take(), take(), take(), take(), take());
            let (g2, b2) = (take(), take());
            let (w1, c1, w2, c2) = (take(), take(), take(), take());

            let x = t.layer_norm(h, g1, b1);
            let q = t.matmul(x, wq);
            let q = t.add_bias(q, bq);
            let k = t.matmul(x, wk);
            let k = t.add_bias(k, bk);
            let v = t.matmul(x, wv);
            let v = t.add_bias(v, bv);
            let a = t.causal_attention(q, k, v, self.cfg.n_heads, SEQ_LEN);
            let a = t.matmul(a, wo);
            let mut a = t.add_bias(a, bo);
            if let Some(dm) = dropout.as_mut() {
                a = t.scale(a, dm.mask((rows, d)));
            }
            h = t.add(h, a);

            let x = t.layer_norm(h, g2, b2);
            let f = t.matmul(x, w1);
            let f = t.add_bias(f, c1);
            let f = t.gelu(f);
            let f = t.matmul(f, w2);
            let mut f = t.add_bias(f, c2);
            if let Some(dm) = dropout.as_mut() {
                f = t.scale(f, dm.mask((rows, d)));
            }
            h = t.add(h, f);
        }
        let (gf, bf, hw, hb) = (take(), take(), take(), take());
        let x = t.layer_norm(h, gf, bf);
        let logits = t.matmul(x, hw);
        let logits = t.add_bias(logits, hb);
        Forward { tape: t, param_vars: pv, logits }
    }

    /// Forward pass without dropout.
    pub fn logits(&self, inputs: &[[usize; SEQ_LEN]]) -> Array2<f64> {
        let f = self.forward::<rand_pcg::Pcg64>(inputs, None);
        f.tape.value(f.logits).clone()
    }

    /// Mean next-token cross-entropy over every position of `seqs`, and its
    /// gradient for each parameter tensor.
    pub fn loss_and_grads<R: Rng>(
        &self,
        seqs: &[[usize; 4]],
        dropout: Option<DropoutMasks<'_, R>>,
    ) -> (f64, Vec<Array2<f64>>) {
        let (inputs, targets) = split_targets(seqs);
        let mut fw = self.forward(&inputs, dropout);
        let loss = fw.tape.cross_entropy(fw.logits, &targets);
        let value = fw.tape.value(loss)[[0, 0]];
        let grads = fw.tape.backward(loss);
        let g = fw
            .param_vars
            .iter()
            .zip(&self.params.tensors)
            .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Array2::zeros(p.dim())))
            .collect();
        (value, g)
    }

    /// Mean loss without gradients or dropout.
    pub fn loss(&self, seqs: &[[usize; 4]]) -> f64 {
        let (inputs, targets) = split_targets(seqs);
        let mut fw = self.forward::<rand_pcg::Pcg64>(&inputs, None);
        let loss = fw.tape.cross_entropy(fw.logits, &targets);
        fw.tape.value(loss)[[0, 0]]
    }
}

pub fn split_targets(seqs: &[[usize; 4]]) -> (Vec<[usize; SEQ_LEN]>, Vec<usize>) {
    let inputs = seqs.iter().map(|s| [s[0], s[1], s[2]]).collect();
    let targets = seqs.iter().flat_map(|s| [s[1], s[2], s[3]]).collect();
    (inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_dim_and_validation() {
        let cfg = LMConfig::default();
        assert_eq!(cfg.head_dim(), 16);
        assert!(LMConfig { n_heads: 5, ..cfg.clone() }.validate().is_err());
        assert!(LMConfig { epochs: 0, ..cfg.clone() }.validate().is_err());
        assert!(LMConfig { dropout: 1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn parameter_count_by_hand() {
        // d=8, ff=16, 1 layer, vocab 5 + 2 = 7:
        // embeddings 7*8 + 3*8 = 80
        // block: ln 16 + qkvo 4*72 = 288 + ln 16 + w1 8*16+16 = 144 + w2 16*8+8 = 136 -> 600
        // final ln 16, head 8*7 + 7 = 63
        let cfg = LMConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, ..Default::default() };
        let lm = build_model(&cfg, Vocab::new(2)).unwrap();
        assert_eq!(lm.params.count(), 80 + 600 + 16 + 63);
        assert_eq!(parameter_count(&cfg, &Vocab::new(2)), 759);
    }

    #[test]
    fn vocab_layout() {
        let v = Vocab::new(110);
        assert_eq!(v.size(), 115);
        assert_eq!(v.context(ContextId(1)).unwrap(), 5);
        assert_eq!(v.context(ContextId(110)).unwrap(), 114);
        assert!(v.context(ContextId(111)).is_err());
        assert!(v.context(ContextId(0)).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = LMConfig { seed: 9, ..Default::default() };
        assert_eq!(build_model(&cfg, Vocab::new(110)).unwrap(), build_model(&cfg, Vocab::new(110)).unwrap());
        let other = build_model(&LMConfig { seed: 10, ..cfg }, Vocab::new(110)).unwrap();
        assert_ne!(other, build_model(&LMConfig { seed: 9, ..Default::default() }, Vocab::new(110)).unwrap());
    }
}
