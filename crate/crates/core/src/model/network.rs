use csg_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::GraphInput;
use super::ModelError;
use crate::defaults;

pub const LEAKY_SLOPE: f64 = 0.2;
/// Floor on the attention row sum before falling back to uniform weights.
pub const ATTENTION_EPS: f64 = 1e-8;
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_feat: usize,
    pub d_hid: usize,
    pub d_k: usize,
    pub d_mlp: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_feat: defaults::D_FEAT,
            d_hid: defaults::D_HID,
            d_k: defaults::D_K,
            d_mlp: defaults::D_MLP,
        }
    }
}

impl ModelConfig {
    pub fn node_dim(&self) -> usize {
        3 * self.d_feat
    }

    pub fn edge_dim(&self) -> usize {
        2 * self.d_feat
    }

    /// Width of a fused node representation `[v*, x]`.
    pub fn fused_dim(&self) -> usize {
        self.d_k + self.node_dim()
    }

    /// Parameter names and shapes, in store order.
    pub fn layout(&self) -> Vec<(&'static str, [usize; 2])> {
        let (n, h, k, m) = (self.node_dim(), self.d_hid, self.d_k, self.d_mlp);
        vec![
            ("gat1.w", [n, h]),
            ("gat1.a", [2 * h, 1]),
            ("gat2.w", [h, h]),
            ("gat2.a", [2 * h, 1]),
            ("attn.w_q", [h, k]),
            ("attn.w_k", [h, k]),
            ("attn.w_v", [h, k]),
            ("attn.w_e", [self.edge_dim(), k]),
            ("head.w1", [2 * self.fused_dim(), m]),
            ("head.b1", [1, m]),
            ("head.w2", [m, 1]),
            ("head.b2", [1, 1]),
        ]
    }

    fn validate(&self) -> Result<(), ModelError> {
        if [self.d_feat, self.d_hid, self.d_k, self.d_mlp].contains(&0) {
            return Err(ModelError::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Graph-attention link predictor. Parameters live in a [`ParamStore`] in
/// the order given by [`ModelConfig::layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct CsgTl {
    pub config: ModelConfig,
    pub params: ParamStore,
}

const GAT1_W: ParamId = ParamId(0);
const GAT1_A: ParamId = ParamId(1);
const GAT2_W: ParamId = ParamId(2);
const GAT2_A: ParamId = ParamId(3);
const W_Q: ParamId = ParamId(4);
const W_K: ParamId = ParamId(5);
const W_V: ParamId = ParamId(6);
const W_E: ParamId = ParamId(7);
const HEAD_W1: ParamId = ParamId(8);
const HEAD_B1: ParamId = ParamId(9);
const HEAD_W2: ParamId = ParamId(10);
const HEAD_B2: ParamId = ParamId(11);

impl CsgTl {
    /// Xavier-uniform weights and zero biases from a seeded stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, [r, c]) in config.layout() {
            let data = if name.contains(".b") {
                vec![0.0; r * c]
            } else {
                let bound = (6.0 / (r + c) as f64).sqrt();
                (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            params.insert(name, Tensor::matrix(r, c, data)?);
        }
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = config.layout();
        if params.len() != layout.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(params.iter()) {
            if *name != got_name || t.shape() != shape {
                return Err(ModelError::Config(format!(
                    "parameter {got_name:?} {:?} does not match expected {name:?} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.numel()
    }

    fn check_input(&self, input: &GraphInput) -> Result<(), ModelError> {
        let fshape = input.features.shape();
        if fshape.len() != 2 || fshape[1] != self.config.node_dim() {
            return Err(ModelError::Config(format!(
                "node features {fshape:?} do not match model width {}",
                self.config.node_dim()
            )));
        }
        if let Some(e) = &input.edge_features {
            if e.cols() != self.config.edge_dim() {
                return Err(ModelError::Config(format!(
                    "edge features {:?} do not match model width {}",
                    e.shape(),
                    self.config.edge_dim()
                )));
            }
        }
        Ok(())
    }

    /// One graph-attention layer over the structural edges plus self loops.
    fn gat(tape: &mut Tape, x: Var, w: Var, a: Var, d_hid: usize, input: &GraphInput) -> Result<Var, ModelError> {
        let n = input.n;
        let h = tape.matmul(x, w)?;
        let a_src = tape.slice_rows(a, 0, d_hid)?;
        let a_dst = tape.slice_rows(a, d_hid, d_hid)?;
        let s_src = tape.matmul(h, a_src)?;
        let s_dst = tape.matmul(h, a_dst)?;
        let ones_row = tape.constant(Tensor::filled(&[1, n], 1.0))?;
        let ones_col = tape.constant(Tensor::filled(&[n, 1], 1.0))?;
        let left = tape.matmul(s_src, ones_row)?;
        let s_dst_t = tape.transpose(s_dst)?;
        let right = tape.matmul(ones_col, s_dst_t)?;
        let scores = tape.add(left, right)?;
        let scores = tape.leaky_relu(scores, LEAKY_SLOPE)?;
        let attn = tape.masked_softmax(scores, input.gat_mask())?;
        Ok(tape.matmul(attn, h)?)
    }

    /// Records the forward pass and returns the `|predict| × 1` column of
    /// link probabilities. `vars` holds one var per parameter in store order.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[Var], input: &GraphInput) -> Result<Var, ModelError> {
        self.check_input(input)?;
        let cfg = &self.config;
        let n = input.n;
        let v = |id: ParamId| vars[id.0];

        let x = tape.constant(input.features.clone())?;
        let h1 = Self::gat(tape, x, v(GAT1_W), v(GAT1_A), cfg.d_hid, input)?;
        let h1 = tape.relu(h1)?;
        let v2 = Self::gat(tape, h1, v(GAT2_W), v(GAT2_A), cfg.d_hid, input)?;

        let q = tape.matmul(v2, v(W_Q))?;
        let k = tape.matmul(v2, v(W_K))?;
        let val = tape.matmul(v2, v(W_V))?;
        let fused_msg = match &input.edge_features {
            Some(ef) => {
                let src: Vec<usize> = input.directed.iter().map(|e| e.0).collect();
                let dst: Vec<usize> = input.directed.iter().map(|e| e.1).collect();
                let qs = tape.gather_rows(q, &src)?;
                let kd = tape.gather_rows(k, &dst)?;
                let e = tape.constant(ef.clone())?;
                let ep = tape.matmul(e, v(W_E))?;
                let keys = tape.add(kd, ep)?;
                let prod = tape.mul(qs, keys)?;
                let dots = tape.row_sum(prod)?;
                let dots = tape.scale(dots, 1.0 / (cfg.d_k as f64).sqrt())?;
                let alpha = tape.relu(dots)?;
                let dense = tape.scatter_dense(alpha, input.directed.iter().copied().collect(), n)?;
                let norm = tape.normalize_rows(dense, input.edge_mask(), ATTENTION_EPS)?;
                tape.matmul(norm, val)?
            }
            None => tape.constant(Tensor::zeros(&[n, cfg.d_k]))?,
        };
        let fused = tape.concat_cols(&[fused_msg, x])?;

        let target_rows = vec![input.target; input.predict.len()];
        let zt = tape.gather_rows(fused, &target_rows)?;
        let zi = tape.gather_rows(fused, &input.predict)?;
        let z = tape.concat_cols(&[zt, zi])?;
        let hidden = tape.matmul(z, v(HEAD_W1))?;
        let hidden = tape.add_row(hidden, v(HEAD_B1))?;
        let hidden = tape.relu(hidden)?;
        let logit = tape.matmul(hidden, v(HEAD_W2))?;
        let logit = tape.add_row(logit, v(HEAD_B2))?;
        Ok(tape.sigmoid(logit)?)
    }

    /// Link probability for every node in `input.predict`.
    pub fn predict(&self, input: &GraphInput) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let vars = tape.params_from(&self.params)?;
        let p = self.forward_on_tape(&mut tape, &vars, input)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Mean BCE of one graph, its predictions and the parameter gradients in
    /// store order.
    pub fn loss_and_grads(&self, input: &GraphInput, labels: &[f64]) -> Result<(f64, Vec<f64>, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let vars = tape.params_from(&self.params)?;
        let p = self.forward_on_tape(&mut tape, &vars, input)?;
        let loss = bce_loss(&mut tape, p, labels)?;
        let value = tape.value(loss).data()[0];
        let preds = tape.value(p).data().to_vec();
        let grads = tape.backward(loss)?.for_store(&self.params);
        Ok((value, preds, grads))
    }
}

/// `-(1/N) Σ [y log p + (1 - y) log(1 - p)]` with `p` clamped away from 0 and 1.
pub fn bce_loss(tape: &mut Tape, p: Var, labels: &[f64]) -> Result<Var, ModelError> {
    let n = tape.value(p).len();
    if labels.len() != n {
        return Err(ModelError::LabelMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let y = tape.constant(Tensor::column(labels))?;
    let not_y = tape.constant(Tensor::column(&labels.iter().map(|l| 1.0 - l).collect::<Vec<_>>()))?;
    let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_p = tape.log(pc)?;
    let neg = tape.scale(pc, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let log_q = tape.log(one_minus)?;
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    Ok(tape.scale(m, -1.0)?)
}

/// Plain-number version of [`bce_loss`].
pub fn bce_value(p: &[f64], labels: &[f64]) -> Result<f64, ModelError> {
    if p.len() != labels.len() {
        return Err(ModelError::LabelMismatch {
            expected: p.len(),
            got: labels.len(),
        });
    }
    if p.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let total: f64 = p
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / p.len() as f64)
}
