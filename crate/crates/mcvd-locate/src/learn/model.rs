//! From-scratch attention-pooled MLP: parameter container, initialization,
//! and the forward pass. Gradients live in `loss`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{N_TOKENS, TOKEN_WIDTH};
use crate::rng::{derive_rng, stream_key, Domain};

pub const N_OUTPUTS: usize = 25;

/// Quaternion slots below this norm fall back to the identity rotation.
pub const QUAT_NORM_FLOOR: f64 = 1e-8;

/// Layer widths. Defaults are the production architecture; tests shrink
/// the hidden sizes for cheap finite-difference sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_in: usize,
    pub h_embed: usize,
    pub h_att: usize,
    pub h1: usize,
    pub h2: usize,
    pub n_out: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            n_in: TOKEN_WIDTH,
            h_embed: 64,
            h_att: 64,
            h1: 128,
            h2: 128,
            n_out: N_OUTPUTS,
        }
    }
}

impl Dims {
    pub fn reduced() -> Self {
        Dims {
            h_embed: 8,
            h_att: 8,
            h1: 8,
            h2: 8,
            ..Dims::default()
        }
    }
}

/// All weights, row-major. Output slots: [0..3) position (standardized),
/// [3..7) quaternion (raw, normalized on output), [7..25) tx (standardized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    /// h_embed x n_in
    pub w_embed: Vec<f64>,
    pub b_embed: Vec<f64>,
    /// h_att x h_embed
    pub w_att: Vec<f64>,
    /// attention query, h_att
    pub q_att: Vec<f64>,
    /// h1 x h_embed
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// h2 x h1
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// n_out x h2
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl ModelParams {
    /// He/Xavier-style init, deterministic in `init_seed`.
    pub fn init(dims: Dims, init_seed: u64) -> ModelParams {
        let mut rng = derive_rng(init_seed, stream_key(Domain::Train, 0, 1, 0));
        let mut normal = |n: usize, std: f64| -> Vec<f64> {
            (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
                .collect()
        };
        let Dims {
            n_in,
            h_embed,
            h_att,
            h1,
            h2,
            n_out,
        } = dims;
        ModelParams {
            dims,
            w_embed: normal(h_embed * n_in, (2.0 / n_in as f64).sqrt()),
            b_embed: vec![0.0; h_embed],
            w_att: normal(h_att * h_embed, (1.0 / h_embed as f64).sqrt()),
            q_att: normal(h_att, (1.0 / h_att as f64).sqrt()),
            w1: normal(h1 * h_embed, (2.0 / h_embed as f64).sqrt()),
            b1: vec![0.0; h1],
            w2: normal(h2 * h1, (2.0 / h1 as f64).sqrt()),
            b2: vec![0.0; h2],
            w_out: normal(n_out * h2, (1.0 / h2 as f64).sqrt()),
            b_out: vec![0.0; n_out],
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            dims: self.dims,
            w_embed: vec![0.0; self.w_embed.len()],
            b_embed: vec![0.0; self.b_embed.len()],
            w_att: vec![0.0; self.w_att.len()],
            q_att: vec![0.0; self.q_att.len()],
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
            w_out: vec![0.0; self.w_out.len()],
            b_out: vec![0.0; self.b_out.len()],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 10] {
        [
            &self.w_embed,
            &self.b_embed,
            &self.w_att,
            &self.q_att,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.w_embed,
            &mut self.b_embed,
            &mut self.w_att,
            &mut self.q_att,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// out = W x + b, W row-major (rows x cols).
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

/// out = W x (no bias).
pub(crate) fn affine_nb(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

/// out[c] = sum_r w[r,c] g[r] (transpose apply), overwriting out.
pub(crate) fn affine_t(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    out.fill(0.0);
    for (r, gv) in g.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += wv * gv;
        }
    }
}

/// gw[r,c] += g[r] * x[c].
pub(crate) fn outer_acc(gw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, gv) in g.iter().enumerate() {
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (o, xv) in row.iter_mut().zip(x) {
            *o += gv * xv;
        }
    }
}

pub(crate) fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Intermediate activations for one sample; reused across samples and read
/// back by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    /// pre-activation embeddings, per token
    pub u: Vec<Vec<f64>>,
    /// relu embeddings, per token
    pub e: Vec<Vec<f64>>,
    /// tanh(W_a e), per token
    pub t: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub alpha: Vec<f64>,
    pub pooled: Vec<f64>,
    pub h1_pre: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2_pre: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

impl Workspace {
    pub fn new(dims: &Dims) -> Workspace {
        Workspace {
            u: vec![vec![0.0; dims.h_embed]; N_TOKENS],
            e: vec![vec![0.0; dims.h_embed]; N_TOKENS],
            t: vec![vec![0.0; dims.h_att]; N_TOKENS],
            scores: vec![0.0; N_TOKENS],
            alpha: vec![0.0; N_TOKENS],
            pooled: vec![0.0; dims.h_embed],
            h1_pre: vec![0.0; dims.h1],
            h1: vec![0.0; dims.h1],
            h2_pre: vec![0.0; dims.h2],
            h2: vec![0.0; dims.h2],
            out: vec![0.0; dims.n_out],
        }
    }
}

/// Fills `ws` from standardized features `x` (n_tokens * n_in reals,
/// token-major). Returns a numeric error naming the first non-finite layer.
pub(crate) fn forward_ws(params: &ModelParams, x: &[f64], ws: &mut Workspace) -> Result<()> {
    let d = &params.dims;
    debug_assert_eq!(x.len(), N_TOKENS * d.n_in);
    for i in 0..N_TOKENS {
        let xi = &x[i * d.n_in..(i + 1) * d.n_in];
        affine(&params.w_embed, &params.b_embed, xi, &mut ws.u[i]);
        ws.e[i].copy_from_slice(&ws.u[i]);
        relu_inplace(&mut ws.e[i]);
        affine_nb(&params.w_att, &ws.e[i], &mut ws.t[i]);
        for v in ws.t[i].iter_mut() {
            *v = v.tanh();
        }
        ws.scores[i] = params.q_att.iter().zip(&ws.t[i]).map(|(q, t)| q * t).sum();
    }
    // softmax over token scores
    let max = ws.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for i in 0..N_TOKENS {
        ws.alpha[i] = (ws.scores[i] - max).exp();
        z += ws.alpha[i];
    }
    for a in ws.alpha.iter_mut() {
        *a /= z;
    }
    ws.pooled.fill(0.0);
    for i in 0..N_TOKENS {
        for (p, e) in ws.pooled.iter_mut().zip(&ws.e[i]) {
            *p += ws.alpha[i] * e;
        }
    }
    affine(&params.w1, &params.b1, &ws.pooled, &mut ws.h1_pre);
    ws.h1.copy_from_slice(&ws.h1_pre);
    relu_inplace(&mut ws.h1);
    affine(&params.w2, &params.b2, &ws.h1, &mut ws.h2_pre);
    ws.h2.copy_from_slice(&ws.h2_pre);
    relu_inplace(&mut ws.h2);
    affine(&params.w_out, &params.b_out, &ws.h2, &mut ws.out);

    if ws.out.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    // diagnose which layer went non-finite first
    let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
    let layer = if ws.u.iter().any(|u| bad(u)) {
        "embed"
    } else if ws.scores.iter().any(|v| !v.is_finite()) {
        "attention_scores"
    } else if bad(&ws.pooled) {
        "pooled"
    } else if bad(&ws.h1_pre) {
        "hidden1"
    } else if bad(&ws.h2_pre) {
        "hidden2"
    } else {
        "output"
    };
    Err(Error::Numeric(format!(
        "non-finite activation in layer {layer}"
    )))
}

/// Model-space outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// standardized position
    pub position: [f64; 3],
    /// unit quaternion (identity fallback below the norm floor)
    pub quat: [f64; 4],
    /// standardized tx coordinates
    pub tx: [f64; 18],
    pub attention: [f64; 6],
    /// pre-normalization quaternion norm (backward needs it)
    pub quat_norm: f64,
}

pub(crate) fn split_output(out: &[f64]) -> ForwardOutput {
    let mut position = [0.0; 3];
    position.copy_from_slice(&out[0..3]);
    let mut raw_q = [0.0; 4];
    raw_q.copy_from_slice(&out[3..7]);
    let quat_norm = raw_q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let quat = if quat_norm < QUAT_NORM_FLOOR {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        [
            raw_q[0] / quat_norm,
            raw_q[1] / quat_norm,
            raw_q[2] / quat_norm,
            raw_q[3] / quat_norm,
        ]
    };
    let mut tx = [0.0; 18];
    tx.copy_from_slice(&out[7..25]);
    ForwardOutput {
        position,
        quat,
        tx,
        attention: [0.0; 6],
        quat_norm,
    }
}

/// Runs the network on one sample of standardized token features.
pub fn forward(params: &ModelParams, features: &[f64]) -> Result<ForwardOutput> {
    if features.len() != N_TOKENS * params.dims.n_in {
        return Err(Error::ShapeMismatch(format!(
            "expected {} features, found {}",
            N_TOKENS * params.dims.n_in,
            features.len()
        )));
    }
    if !params.is_finite() {
        return Err(Error::Numeric("model parameters are not finite".into()));
    }
    let mut ws = Workspace::new(&params.dims);
    forward_ws(params, features, &mut ws)?;
    let mut out = split_output(&ws.out);
    out.attention.copy_from_slice(&ws.alpha);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FLAT_WIDTH;

    fn params() -> ModelParams {
        ModelParams::init(Dims::reduced(), 17)
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(params(), params());
        assert_ne!(params(), ModelParams::init(Dims::reduced(), 18));
    }

    #[test]
    fn attention_is_probability_vector() {
        let p = params();
        let mut rng = derive_rng(3, stream_key(Domain::Train, 0, 2, 0));
        for _ in 0..20 {
            let x: Vec<f64> = (0..FLAT_WIDTH)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let out = forward(&p, &x).unwrap();
            let sum: f64 = out.attention.iter().sum();
            assert!(out.attention.iter().all(|a| *a >= 0.0));
            assert!((sum - 1.0).abs() < 1e-9);
            let qn: f64 = out.quat.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((qn - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_tokens_give_uniform_attention() {
        let p = params();
        let token: Vec<f64> = (0..TOKEN_WIDTH).map(|i| (i as f64).sin()).collect();
        let x: Vec<f64> = token.iter().cycle().take(FLAT_WIDTH).copied().collect();
        let out = forward(&p, &x).unwrap();
        for a in out.attention {
            assert!((a - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_head_outputs_bias() {
        let mut p = params();
        p.w_out.fill(0.0);
        p.b_out.fill(0.0);
        p.b_out[0] = 2.5;
        p.b_out[1] = -1.0;
        let x = vec![0.3; FLAT_WIDTH];
        let out = forward(&p, &x).unwrap();
        assert_eq!(out.position, [2.5, -1.0, 0.0]);
        // raw quat slots are all zero -> identity fallback
        assert_eq!(out.quat, [1.0, 0.0, 0.0, 0.0]);
        assert!(out.quat_norm < QUAT_NORM_FLOOR);
    }

    #[test]
    fn saturated_score_selects_single_token() {
        let p = params();
        let mut x = vec![0.0; FLAT_WIDTH];
        // make token 2 distinct
        for (k, v) in x[2 * TOKEN_WIDTH..3 * TOKEN_WIDTH].iter_mut().enumerate() {
            *v = 1.0 + k as f64 * 0.1;
        }
        let base = forward(&p, &x).unwrap();
        // scores are linear in q, so scaling q stretches the score gap;
        // pick the factor so the top softmax weight must exceed 0.999
        let logs: Vec<f64> = base.attention.iter().map(|a| a.ln()).collect();
        let mut sorted = logs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let factor = 20.0 / (sorted[0] - sorted[1]);
        let mut boosted = p.clone();
        for q in boosted.q_att.iter_mut() {
            *q *= factor;
        }
        let out = forward(&boosted, &x).unwrap();
        let argmax = (0..6)
            .max_by(|&a, &b| out.attention[a].total_cmp(&out.attention[b]))
            .unwrap();
        let base_argmax = (0..6)
            .max_by(|&a, &b| base.attention[a].total_cmp(&base.attention[b]))
            .unwrap();
        assert_eq!(argmax, base_argmax);
        assert!(
            out.attention[argmax] > 0.999,
            "saturated weight {}",
            out.attention[argmax]
        );
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let mut p = params();
        p.w2[5] = f64::NAN;
        let x = vec![0.1; FLAT_WIDTH];
        assert!(matches!(forward(&p, &x), Err(Error::Numeric(_))));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let mut p = params();
        // finite params but overflow-inducing scales at the first hidden layer
        for v in p.w1.iter_mut() {
            *v = 1e308;
        }
        for v in p.b1.iter_mut() {
            *v = 1e308;
        }
        let x = vec![1.0; FLAT_WIDTH];
        let mut ws = Workspace::new(&p.dims);
        match forward_ws(&p, &x, &mut ws) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("hidden1"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
