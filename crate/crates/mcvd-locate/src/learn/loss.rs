//! Physics-informed composite loss and its reverse-mode gradients.
//!
//! Terms (batch means, reported unweighted):
//!   pos      MSE over standardized position slots
//!   quat     1 - |<q_hat, q>| (double-cover invariant)
//!   tx       MSE over standardized tx slots
//!   phys     (|p_hat_phys| - d_tilde)^2 in world units, over samples whose
//!            strongest pilot produced a finite count-inversion distance
//!   consist  MSE between predicted tx (world units) and the tx positions
//!            implied by the predicted pose through the rigid layout
//!
//! total = lambda_pos*pos + lambda_quat*quat + lambda_tx*tx
//!       + lambda_phys*phys + lambda_consist*consist

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::features::{best_pilot_distance, FLAT_WIDTH};
use crate::geom::{cross, NodeLayout, Vec3};
use crate::learn::model::{
    affine_t, forward_ws, outer_acc, split_output, Dims, ModelParams, Workspace, QUAT_NORM_FLOOR,
};
use crate::learn::scaler::Scaler;
use crate::rng::{derive_rng, stream_key, Domain};

/// Term weights; all must be non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_pos: f64,
    pub lambda_quat: f64,
    pub lambda_tx: f64,
    pub lambda_phys: f64,
    pub lambda_consist: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // lambda_phys defaults to 0: the count-inversion distance assumes a lone
        // absorbing receiver, but with Node A also absorbing (and a finite pilot
        // window) it overestimates range ~5-19x (median ~9x at d=20..50), so any
        // visible weight drags |p_A| toward the inflated estimate and wrecks
        // position accuracy. The term stays available for configs where the
        // estimate is unbiased.
        LossWeights {
            lambda_pos: 1.0,
            lambda_quat: 0.5,
            lambda_tx: 1.0,
            lambda_phys: 0.0,
            lambda_consist: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_pos,
            self.lambda_quat,
            self.lambda_tx,
            self.lambda_phys,
            self.lambda_consist,
        ];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// One ready-to-train sample: standardized features and labels, plus the
/// physics distance estimate recovered from the raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// standardized features, token-major
    pub x: Vec<f64>,
    /// labels with position/tx standardized; quaternion raw
    pub y: [f64; 25],
    /// count-inversion distance of the strongest pilot, world units
    pub d_tilde: Option<f64>,
}

/// Standardizes records into training samples. d_tilde is read from the
/// raw features (the strongest pilot's count-inversion estimate) before
/// standardization touches the sentinel encoding.
pub fn prepare_samples(rows: &[SampleRecord], scaler: &Scaler) -> Result<Vec<TrainSample>> {
    rows.iter()
        .map(|rec| {
            Ok(TrainSample {
                x: scaler.transform_features(&rec.features)?,
                y: scaler.standardize_labels(&rec.labels())?,
                d_tilde: best_pilot_distance(&rec.features),
            })
        })
        .collect()
}

/// Everything the loss needs beyond the batch itself.
pub struct LossContext<'a> {
    pub scaler: &'a Scaler,
    pub layout: NodeLayout,
}

/// Unweighted per-term values plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub pos: f64,
    pub quat: f64,
    pub tx: f64,
    pub phys: f64,
    pub consist: f64,
    /// how many samples contributed a physics term
    pub n_phys: usize,
}

impl LossTerms {
    fn zero() -> LossTerms {
        LossTerms {
            total: 0.0,
            pos: 0.0,
            quat: 0.0,
            tx: 0.0,
            phys: 0.0,
            consist: 0.0,
            n_phys: 0,
        }
    }
}

/// Evaluates the loss; when `grads` is given, accumulates dL/dparams into it.
fn run_batch(
    params: &ModelParams,
    batch: &[TrainSample],
    weights: &LossWeights,
    ctx: &LossContext,
    mut grads: Option<&mut ModelParams>,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::invalid("loss needs a non-empty batch"));
    }
    weights.validate()?;
    let dims = &params.dims;
    let b = batch.len() as f64;
    let n_phys = batch.iter().filter(|s| s.d_tilde.is_some()).count();
    let (pos_mean, pos_std) = ctx.scaler.position_moments();
    let (tx_mean, tx_std) = ctx.scaler.tx_moments();
    let tx_local = &ctx.layout.tx_local;

    let mut ws = Workspace::new(dims);
    let mut terms = LossTerms::zero();
    terms.n_phys = n_phys;

    // backward scratch
    let mut g_out = vec![0.0; dims.n_out];
    let mut g_h2 = vec![0.0; dims.h2];
    let mut g_h1 = vec![0.0; dims.h1];
    let mut g_pool = vec![0.0; dims.h_embed];
    let mut g_e = vec![0.0; dims.h_embed];
    let mut g_v = vec![0.0; dims.h_att];
    let mut g_alpha = [0.0; 6];
    let mut g_s = [0.0; 6];

    for sample in batch {
        forward_ws(params, &sample.x, &mut ws)?;
        let out = split_output(&ws.out);
        let q_hat = out.quat;
        let quat_live = out.quat_norm >= QUAT_NORM_FLOOR;

        // world-space predicted position and tx
        let mut p_phys = [0.0; 3];
        for j in 0..3 {
            p_phys[j] = out.position[j] * pos_std[j] + pos_mean[j];
        }
        let mut tx_phys = [0.0; 18];
        for j in 0..18 {
            tx_phys[j] = out.tx[j] * tx_std[j] + tx_mean[j];
        }

        // term: position
        let mut pos_sq = 0.0;
        for j in 0..3 {
            let d = out.position[j] - sample.y[j];
            pos_sq += d * d;
        }
        terms.pos += pos_sq / (3.0 * b);

        // term: quaternion
        let y_q = [sample.y[3], sample.y[4], sample.y[5], sample.y[6]];
        let qdot: f64 = q_hat.iter().zip(&y_q).map(|(a, c)| a * c).sum();
        terms.quat += (1.0 - qdot.abs()) / b;

        // term: tx
        let mut tx_sq = 0.0;
        for j in 0..18 {
            let d = out.tx[j] - sample.y[7 + j];
            tx_sq += d * d;
        }
        terms.tx += tx_sq / (18.0 * b);

        // term: physics range constraint
        let r_pred = (p_phys[0] * p_phys[0] + p_phys[1] * p_phys[1] + p_phys[2] * p_phys[2]).sqrt();
        if let Some(d_tilde) = sample.d_tilde {
            terms.phys += (r_pred - d_tilde) * (r_pred - d_tilde) / n_phys as f64;
        }

        // term: layout consistency; diffs saved for the backward pass
        let pq = crate::geom::UnitQuaternion {
            w: q_hat[0],
            x: q_hat[1],
            y: q_hat[2],
            z: q_hat[3],
        };
        let mut diffs = [Vec3::ZERO; 6];
        let mut consist_sq = 0.0;
        for (k, l) in tx_local.iter().enumerate() {
            let rotated = pq.rotate(l);
            let txw = Vec3::new(
                p_phys[0] + rotated.x,
                p_phys[1] + rotated.y,
                p_phys[2] + rotated.z,
            );
            let dk = Vec3::new(
                tx_phys[3 * k] - txw.x,
                tx_phys[3 * k + 1] - txw.y,
                tx_phys[3 * k + 2] - txw.z,
            );
            consist_sq += dk.norm_squared();
            diffs[k] = dk;
        }
        terms.consist += consist_sq / (18.0 * b);

        let Some(grads) = grads.as_deref_mut() else {
            continue;
        };

        // ---- gradient of the weighted total w.r.t. the output slots ----
        g_out.fill(0.0);

        // position slots: pos MSE
        for j in 0..3 {
            g_out[j] += weights.lambda_pos * 2.0 * (out.position[j] - sample.y[j]) / (3.0 * b);
        }
        // position slots: physics term through p_phys
        if let Some(d_tilde) = sample.d_tilde {
            if r_pred > 1e-12 {
                let coeff = weights.lambda_phys * 2.0 * (r_pred - d_tilde) / n_phys as f64;
                for j in 0..3 {
                    g_out[j] += coeff * (p_phys[j] / r_pred) * pos_std[j];
                }
            }
        }
        // consistency: d/dtxw = -2*diff/(18b), txw depends on p_phys and q_hat
        let cc = weights.lambda_consist * 2.0 / (18.0 * b);
        let mut g_qhat = [0.0; 4];
        for (k, l) in tx_local.iter().enumerate() {
            let gbar = diffs[k].scale(-cc); // dL/dtxw_k
            for j in 0..3 {
                let g = [gbar.x, gbar.y, gbar.z][j];
                g_out[j] += g * pos_std[j];
            }
            if quat_live {
                let jt = rotation_jacobian_t(&q_hat, l, &gbar);
                for c in 0..4 {
                    g_qhat[c] += jt[c];
                }
            }
            // tx slots: direct dependence of diff on tx_phys
            for j in 0..3 {
                let g = cc * [diffs[k].x, diffs[k].y, diffs[k].z][j];
                g_out[7 + 3 * k + j] += g * tx_std[3 * k + j];
            }
        }
        // tx slots: tx MSE
        for j in 0..18 {
            g_out[7 + j] += weights.lambda_tx * 2.0 * (out.tx[j] - sample.y[7 + j]) / (18.0 * b);
        }
        // quaternion slots: quat loss then normalization projection
        if quat_live {
            let sign = if qdot >= 0.0 { 1.0 } else { -1.0 };
            for c in 0..4 {
                g_qhat[c] += -weights.lambda_quat * sign * y_q[c] / b;
            }
            let gq_dot: f64 = g_qhat.iter().zip(&q_hat).map(|(g, q)| g * q).sum();
            for c in 0..4 {
                g_out[3 + c] = (g_qhat[c] - gq_dot * q_hat[c]) / out.quat_norm;
            }
        }

        // ---- backprop through the network ----
        affine_t(&params.w_out, &g_out, &mut g_h2);
        outer_acc(&mut grads.w_out, &g_out, &ws.h2);
        for (gb, g) in grads.b_out.iter_mut().zip(&g_out) {
            *gb += g;
        }
        for r in 0..dims.h2 {
            if ws.h2_pre[r] <= 0.0 {
                g_h2[r] = 0.0;
            }
        }
        affine_t(&params.w2, &g_h2, &mut g_h1);
        outer_acc(&mut grads.w2, &g_h2, &ws.h1);
        for (gb, g) in grads.b2.iter_mut().zip(&g_h2) {
            *gb += g;
        }
        for r in 0..dims.h1 {
            if ws.h1_pre[r] <= 0.0 {
                g_h1[r] = 0.0;
            }
        }
        affine_t(&params.w1, &g_h1, &mut g_pool);
        outer_acc(&mut grads.w1, &g_h1, &ws.pooled);
        for (gb, g) in grads.b1.iter_mut().zip(&g_h1) {
            *gb += g;
        }

        // attention pooling
        for i in 0..6 {
            g_alpha[i] = g_pool.iter().zip(&ws.e[i]).map(|(g, e)| g * e).sum();
        }
        let adot: f64 = (0..6).map(|i| ws.alpha[i] * g_alpha[i]).sum();
        for i in 0..6 {
            g_s[i] = ws.alpha[i] * (g_alpha[i] - adot);
        }
        for i in 0..6 {
            // query gradient
            for (gq, t) in grads.q_att.iter_mut().zip(&ws.t[i]) {
                *gq += g_s[i] * t;
            }
            // tanh score branch
            for a in 0..dims.h_att {
                g_v[a] = g_s[i] * params.q_att[a] * (1.0 - ws.t[i][a] * ws.t[i][a]);
            }
            outer_acc(&mut grads.w_att, &g_v, &ws.e[i]);
            // embedding gradient: pooled path + attention path
            affine_t(&params.w_att, &g_v, &mut g_e);
            for (ge, g) in g_e.iter_mut().zip(g_pool.iter()) {
                *ge += ws.alpha[i] * g;
            }
            for r in 0..dims.h_embed {
                if ws.u[i][r] <= 0.0 {
                    g_e[r] = 0.0;
                }
            }
            let xi = &sample.x[i * dims.n_in..(i + 1) * dims.n_in];
            outer_acc(&mut grads.w_embed, &g_e, xi);
            for (gb, g) in grads.b_embed.iter_mut().zip(&g_e) {
                *gb += g;
            }
        }
    }

    terms.total = weights.lambda_pos * terms.pos
        + weights.lambda_quat * terms.quat
        + weights.lambda_tx * terms.tx
        + weights.lambda_phys * terms.phys
        + weights.lambda_consist * terms.consist;
    if !terms.total.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok(terms)
}

/// d(R(q) l)/dq transposed, applied to a cotangent: returns dL/dq given
/// dL/d(R(q) l) = gbar, for unit q.
fn rotation_jacobian_t(q: &[f64; 4], l: &Vec3, gbar: &Vec3) -> [f64; 4] {
    let qv = Vec3::new(q[1], q[2], q[3]);
    let w = q[0];
    let mut out = [0.0; 4];
    out[0] = cross(&qv, l).scale(2.0).dot(gbar);
    let axes = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ];
    let qv_l = cross(&qv, l);
    for (i, ax) in axes.iter().enumerate() {
        let ax_l = cross(ax, l);
        let col = ax_l
            .scale(2.0 * w)
            .add(&cross(ax, &qv_l).scale(2.0))
            .add(&cross(&qv, &ax_l).scale(2.0));
        out[1 + i] = col.dot(gbar);
    }
    out
}

/// Loss and gradients over a batch.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[TrainSample],
    weights: &LossWeights,
    ctx: &LossContext,
) -> Result<(LossTerms, ModelParams)> {
    let mut grads = params.zeros_like();
    let terms = run_batch(params, batch, weights, ctx, Some(&mut grads))?;
    Ok((terms, grads))
}

/// Loss only (validation / reporting path).
pub fn batch_loss(
    params: &ModelParams,
    batch: &[TrainSample],
    weights: &LossWeights,
    ctx: &LossContext,
) -> Result<LossTerms> {
    run_batch(params, batch, weights, ctx, None)
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub draws: usize,
    pub resampled: usize,
    pub max_rel_err: f64,
}

/// Signs of every kink-prone quantity; a draw is only valid for central
/// differences when the signature is identical at theta+h and theta-h.
fn kink_signature(params: &ModelParams, batch: &[TrainSample]) -> Result<Vec<i8>> {
    let mut ws = Workspace::new(&params.dims);
    let mut sig = Vec::new();
    for sample in batch {
        forward_ws(params, &sample.x, &mut ws)?;
        for u in &ws.u {
            sig.extend(u.iter().map(|v| if *v > 0.0 { 1i8 } else { 0 }));
        }
        sig.extend(ws.h1_pre.iter().map(|v| if *v > 0.0 { 1i8 } else { 0 }));
        sig.extend(ws.h2_pre.iter().map(|v| if *v > 0.0 { 1i8 } else { 0 }));
        let out = split_output(&ws.out);
        sig.push(if out.quat_norm >= QUAT_NORM_FLOOR {
            1
        } else {
            0
        });
        let y_q = [sample.y[3], sample.y[4], sample.y[5], sample.y[6]];
        let qdot: f64 = out.quat.iter().zip(&y_q).map(|(a, c)| a * c).sum();
        sig.push(if qdot >= 0.0 { 1 } else { 0 });
    }
    Ok(sig)
}

fn perturbed(params: &ModelParams, tensor: usize, idx: usize, delta: f64) -> ModelParams {
    let mut p = params.clone();
    p.tensors_mut()[tensor][idx] += delta;
    p
}

/// Checks analytic gradients against central finite differences on a
/// reduced model, resampling draws that land on a ReLU/abs kink. Errors on
/// the first draw whose relative error exceeds `tol`.
pub fn finite_difference_check(seed: u64, n_draws: usize, step: f64, tol: f64) -> Result<FdReport> {
    let weights = LossWeights {
        lambda_pos: 1.0,
        lambda_quat: 0.7,
        lambda_tx: 1.0,
        lambda_phys: 0.3,
        lambda_consist: 0.4,
    };
    let layout = crate::config::SceneConfig::default().layout();
    let mut rng = derive_rng(seed, stream_key(Domain::Train, 0, 2, 0));

    // synthetic scaler with non-trivial target moments
    let mut tgt_mean = vec![0.0; 21];
    let mut tgt_std = vec![1.0; 21];
    for m in tgt_mean.iter_mut() {
        *m = 10.0 + 20.0 * rng.random::<f64>();
    }
    for s in tgt_std.iter_mut() {
        *s = 0.5 + 2.0 * rng.random::<f64>();
    }
    let scaler = Scaler::from_moments(
        vec![0.0; FLAT_WIDTH],
        vec![1.0; FLAT_WIDTH],
        tgt_mean,
        tgt_std,
        8,
    );
    let ctx = LossContext {
        scaler: &scaler,
        layout,
    };

    let mut report = FdReport {
        draws: 0,
        resampled: 0,
        max_rel_err: 0.0,
    };
    let mut draw = 0usize;
    while draw < n_draws {
        if report.resampled > 10 * n_draws {
            return Err(Error::Numeric(
                "finite-difference sweep kept landing on activation kinks".into(),
            ));
        }
        let params = ModelParams::init(Dims::reduced(), rng.random());
        let batch: Vec<TrainSample> = (0..3)
            .map(|_| {
                let x: Vec<f64> = (0..FLAT_WIDTH)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let mut y = [0.0; 25];
                for v in y.iter_mut() {
                    *v = rng.sample::<f64, _>(StandardNormal);
                }
                // unit label quaternion
                let qn: f64 = y[3..7].iter().map(|v| v * v).sum::<f64>().sqrt();
                for c in 3..7 {
                    y[c] /= qn;
                }
                let d_tilde = if rng.random::<f64>() < 0.7 {
                    Some(15.0 + 30.0 * rng.random::<f64>())
                } else {
                    None
                };
                TrainSample { x, y, d_tilde }
            })
            .collect();

        let n_params = params.n_params();
        let flat_idx = rng.random_range(0..n_params);
        let (tensor, idx) = {
            let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
            let mut rem = flat_idx;
            let mut t = 0;
            while rem >= sizes[t] {
                rem -= sizes[t];
                t += 1;
            }
            (t, rem)
        };

        let plus = perturbed(&params, tensor, idx, step);
        let minus = perturbed(&params, tensor, idx, -step);
        if kink_signature(&plus, &batch)? != kink_signature(&minus, &batch)? {
            report.resampled += 1;
            continue; // this draw straddles a kink; central FD is invalid there
        }

        let (_, grads) = loss_and_grad(&params, &batch, &weights, &ctx)?;
        let analytic = grads.tensors()[tensor][idx];
        let lp = batch_loss(&plus, &batch, &weights, &ctx)?.total;
        let lm = batch_loss(&minus, &batch, &weights, &ctx)?.total;
        let numeric = (lp - lm) / (2.0 * step);

        let abs_err = (analytic - numeric).abs();
        let rel = abs_err / analytic.abs().max(numeric.abs()).max(1e-7);
        report.max_rel_err = report.max_rel_err.max(rel);
        if rel > tol && abs_err > 1e-7 {
            return Err(Error::Numeric(format!(
                "gradient mismatch at tensor {tensor} index {idx}: analytic {analytic:.9e}, \
                 finite-difference {numeric:.9e}, relative error {rel:.3e}"
            )));
        }
        report.draws += 1;
        draw += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SceneConfig;
    use crate::dataset::{generate_dataset, SampleRecord};
    use crate::geom::{tx_world_positions, Pose, UnitQuaternion};

    fn quick_records() -> Vec<SampleRecord> {
        let cfg = SceneConfig {
            n_molecules: 150,
            dt: 1e-3,
            t_pilot: 0.5,
            ..SceneConfig::default()
        };
        generate_dataset(&cfg, 6, 21).unwrap().records
    }

    fn fitted(records: &[SampleRecord]) -> Scaler {
        let mut s = Scaler::default();
        s.fit(records).unwrap();
        s
    }

    /// Model whose output is the constant vector `y` regardless of input.
    fn constant_model(y: &[f64; 25]) -> ModelParams {
        let mut p = ModelParams::init(Dims::reduced(), 1);
        p.w_out.fill(0.0);
        p.b_out.copy_from_slice(y);
        p
    }

    #[test]
    fn perfect_prediction_zero_loss() {
        let records = quick_records();
        let scaler = fitted(&records);
        let samples = prepare_samples(&records[..1], &scaler).unwrap();
        let params = constant_model(&samples[0].y);
        let weights = LossWeights {
            lambda_phys: 0.0,
            ..LossWeights::default()
        };
        let ctx = LossContext {
            scaler: &scaler,
            layout: SceneConfig::default().layout(),
        };
        let terms = batch_loss(&params, &samples, &weights, &ctx).unwrap();
        assert!(terms.total < 1e-12, "total {}", terms.total);
        assert!(terms.pos < 1e-18 && terms.quat < 1e-12 && terms.tx < 1e-18);
        assert!(terms.consist < 1e-12, "consist {}", terms.consist);
    }

    #[test]
    fn negated_quaternion_costs_nothing() {
        let records = quick_records();
        let scaler = fitted(&records);
        let samples = prepare_samples(&records[..1], &scaler).unwrap();
        let mut y = samples[0].y;
        for c in 3..7 {
            y[c] = -y[c];
        }
        let params = constant_model(&y);
        let weights = LossWeights {
            lambda_pos: 0.0,
            lambda_quat: 1.0,
            lambda_tx: 0.0,
            lambda_phys: 0.0,
            lambda_consist: 0.0,
        };
        let ctx = LossContext {
            scaler: &scaler,
            layout: SceneConfig::default().layout(),
        };
        let terms = batch_loss(&params, &samples, &weights, &ctx).unwrap();
        assert!(terms.quat < 1e-12, "quat term {}", terms.quat);
    }

    #[test]
    fn all_sentinel_physics_contributes_zero() {
        let records = quick_records();
        let scaler = fitted(&records);
        let mut samples = prepare_samples(&records, &scaler).unwrap();
        for s in samples.iter_mut() {
            s.d_tilde = None;
        }
        let params = ModelParams::init(Dims::reduced(), 2);
        let weights = LossWeights {
            lambda_phys: 5.0,
            ..LossWeights::default()
        };
        let ctx = LossContext {
            scaler: &scaler,
            layout: SceneConfig::default().layout(),
        };
        let terms = batch_loss(&params, &samples, &weights, &ctx).unwrap();
        assert_eq!(terms.phys, 0.0);
        assert_eq!(terms.n_phys, 0);
    }

    #[test]
    fn loss_monotone_in_every_weight() {
        let records = quick_records();
        let scaler = fitted(&records);
        let samples = prepare_samples(&records, &scaler).unwrap();
        let params = ModelParams::init(Dims::reduced(), 3);
        let ctx = LossContext {
            scaler: &scaler,
            layout: SceneConfig::default().layout(),
        };
        let base = LossWeights::default();
        let total = |w: &LossWeights| batch_loss(&params, &samples, w, &ctx).unwrap().total;
        let l0 = total(&base);
        for bump in 0..5 {
            let mut w = base;
            match bump {
                0 => w.lambda_pos += 1.0,
                1 => w.lambda_quat += 1.0,
                2 => w.lambda_tx += 1.0,
                3 => w.lambda_phys += 1.0,
                _ => w.lambda_consist += 1.0,
            }
            assert!(total(&w) >= l0, "bumping weight {bump} decreased the loss");
        }
    }

    #[test]
    fn consistency_term_sees_layout() {
        // a record whose tx labels are exactly tx_world(pose): a constant
        // model predicting those labels has zero consistency loss; predicting
        // a shifted pose does not
        let cfg = SceneConfig::default();
        let pose = Pose {
            position: Vec3::new(24.0, 8.0, -11.0),
            orientation: UnitQuaternion::normalize(0.9, 0.1, -0.3, 0.2),
        };
        let tx = tx_world_positions(&pose, &cfg.layout());
        let rec = |id: u64, jitter: f64| SampleRecord {
            sample_id: id,
            features: (0..FLAT_WIDTH)
                .map(|i| (i as f64 * 0.37 + jitter).sin())
                .collect(),
            label_position: pose.position.add(&Vec3::new(jitter, -jitter, jitter)),
            label_quat: pose.orientation,
            label_tx: tx,
            seed_used: 0,
        };
        let records = vec![rec(0, 0.0), rec(1, 3.0), rec(2, -2.0)];
        let scaler = fitted(&records);
        let samples = prepare_samples(&records[..1], &scaler).unwrap();
        let params = constant_model(&samples[0].y);
        let weights = LossWeights {
            lambda_pos: 0.0,
            lambda_quat: 0.0,
            lambda_tx: 0.0,
            lambda_phys: 0.0,
            lambda_consist: 1.0,
        };
        let ctx = LossContext {
            scaler: &scaler,
            layout: cfg.layout(),
        };
        let aligned = batch_loss(&params, &samples, &weights, &ctx).unwrap();
        assert!(aligned.consist < 1e-12, "consist {}", aligned.consist);

        let mut shifted_y = samples[0].y;
        shifted_y[0] += 1.0; // move predicted position one std away
        let shifted = constant_model(&shifted_y);
        let moved = batch_loss(&shifted, &samples, &weights, &ctx).unwrap();
        assert!(moved.consist > 1e-3, "consist {}", moved.consist);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let report = finite_difference_check(4242, 50, 1e-5, 1e-4).unwrap();
        assert_eq!(report.draws, 50);
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn empty_batch_rejected() {
        let records = quick_records();
        let scaler = fitted(&records);
        let params = ModelParams::init(Dims::reduced(), 4);
        let ctx = LossContext {
            scaler: &scaler,
            layout: SceneConfig::default().layout(),
        };
        assert!(batch_loss(&params, &[], &LossWeights::default(), &ctx).is_err());
    }
}
