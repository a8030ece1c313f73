//! Cross-correlation objectives and negative-sampling baselines.
//!
//! Every loss returns its value together with the gradient with respect to
//! the gathered batch matrices `H`, `R`, `T`. Gradients are closed-form and
//! flow through column standardization (and through SDBN when enabled).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Batch, LossGradients, ModelKind, Norm, PairForm};
use crate::tensor::{cross_correlation_with_cache, Matrix};

/// Redundancy-term shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// off-diagonal penalty `C_ij²`
    Bt,
    /// off-diagonal penalty `(1 + C_ij)²`
    Hsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub invariance_term: f64,
    pub redundancy_term: f64,
}

impl LossValue {
    fn weighted(self, w: f64) -> LossValue {
        LossValue {
            total: self.total * w,
            invariance_term: self.invariance_term * w,
            redundancy_term: self.redundancy_term * w,
        }
    }

    fn plus(self, o: LossValue) -> LossValue {
        LossValue {
            total: self.total + o.total,
            invariance_term: self.invariance_term + o.invariance_term,
            redundancy_term: self.redundancy_term + o.redundancy_term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub objective: Objective,
    /// Trade-off weight; `None` means `1/d`.
    pub lambda: Option<f64>,
    /// Weight of `L(H|, T)`; `L(H, T|)` gets `1 − alpha`.
    pub alpha: f64,
    /// Adds `L(H, T) − L(R, H − T)`.
    pub extended_terms: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            objective: Objective::Bt,
            lambda: None,
            alpha: 0.5,
            extended_terms: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(Error::invalid(format!("lambda must be positive, got {l}")));
            }
        }
        Ok(())
    }

    pub fn lambda_for(&self, dim: usize) -> f64 {
        self.lambda.unwrap_or(1.0 / dim as f64)
    }
}

/// Value and input gradients of `L(X, Y)`.
struct PairLoss {
    value: LossValue,
    dx: Matrix,
    dy: Matrix,
}

fn correlation_loss(objective: Objective, x: &Matrix, y: &Matrix, lambda: f64, want_grad: bool) -> Result<(LossValue, Option<(Matrix, Matrix)>)> {
    let cache = cross_correlation_with_cache(x, y)?;
    let c = &cache.corr.c;
    let d = c.rows();
    let mut invariance = 0.0;
    let mut redundancy = 0.0;
    let mut grad_c = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let cij = c[(i, j)];
            if i == j {
                invariance += (1.0 - cij) * (1.0 - cij);
                grad_c[(i, j)] = -2.0 * (1.0 - cij);
            } else {
                let shifted = match objective {
                    Objective::Bt => cij,
                    Objective::Hsic => 1.0 + cij,
                };
                redundancy += shifted * shifted;
                grad_c[(i, j)] = 2.0 * lambda * shifted;
            }
        }
    }
    let value = LossValue {
        total: invariance + lambda * redundancy,
        invariance_term: invariance,
        redundancy_term: redundancy,
    };
    let grads = if want_grad { Some(cache.backward(&grad_c)?) } else { None };
    Ok((value, grads))
}

fn pair_loss(objective: Objective, x: &Matrix, y: &Matrix, lambda: f64) -> Result<PairLoss> {
    let (value, grads) = correlation_loss(objective, x, y, lambda, true)?;
    let (dx, dy) = grads.expect("gradients requested");
    Ok(PairLoss { value, dx, dy })
}

/// `Σ_i (1 − C_ii)² + λ Σ_{i≠j} C_ij²`
pub fn bt_loss(x: &Matrix, y: &Matrix, lambda: f64) -> Result<LossValue> {
    Ok(correlation_loss(Objective::Bt, x, y, lambda, false)?.0)
}

/// `Σ_i (1 − C_ii)² + λ Σ_{i≠j} (1 + C_ij)²`
pub fn hsic_loss(x: &Matrix, y: &Matrix, lambda: f64) -> Result<LossValue> {
    Ok(correlation_loss(Objective::Hsic, x, y, lambda, false)?.0)
}

/// The negative-sampling-free objective
/// `α·L(H|, T) + (1 − α)·L(H, T|)`, optionally extended with
/// `L(H, T) − L(R, H − T)`.
///
/// `α = 0.5` is half of the unweighted sum of the two terms.
pub fn nsf_loss(batch: &Batch, config: &LossConfig) -> Result<(LossValue, LossGradients)> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (b, d) = (batch.len(), batch.dim());
    let lambda = config.lambda_for(d);
    let obj = config.objective;
    let alpha = config.alpha;
    let (hp, h, t, tp) = batch.loss_inputs();

    let first = pair_loss(obj, hp, t, lambda)?;
    let second = pair_loss(obj, h, tp, lambda)?;
    let mut value = first.value.weighted(alpha).plus(second.value.weighted(1.0 - alpha));

    // gradients w.r.t. the loss inputs (H|, H, T, T|)
    let mut d_hp = first.dx.scale(alpha);
    let mut d_t = first.dy.scale(alpha);
    let mut d_h = second.dx.scale(1.0 - alpha);
    let mut d_tp = second.dy.scale(1.0 - alpha);

    let mut grads = LossGradients::zeros(b, d);
    if config.extended_terms {
        let third = pair_loss(obj, h, t, lambda)?;
        value = value.plus(third.value);
        d_h.add_scaled(&third.dx, 1.0)?;
        d_t.add_scaled(&third.dy, 1.0)?;

        let diff = batch.h.sub(&batch.t)?;
        let fourth = pair_loss(obj, &batch.r, &diff, lambda)?;
        value = value.plus(fourth.value.weighted(-1.0));
        grads.d_relation.add_scaled(&fourth.dx, -1.0)?;
        grads.d_head.add_scaled(&fourth.dy, -1.0)?;
        grads.d_tail.add_scaled(&fourth.dy, 1.0)?;
    }

    if let Some(s) = &batch.sdbn {
        d_hp = s.h_pipe.backward(&d_hp)?;
        d_h = s.h.backward(&d_h)?;
        d_t = s.t.backward(&d_t)?;
        d_tp = s.t_pipe.backward(&d_tp)?;
    }
    grads.d_head.add_scaled(&d_h, 1.0)?;
    grads.d_tail.add_scaled(&d_t, 1.0)?;
    batch.form.backward(batch, &d_hp, &d_tp, &mut grads)?;
    Ok((value, grads))
}

/// Gradients of a baseline loss for the positive and negative batches.
#[derive(Debug, Clone)]
pub struct BaselineGradients {
    pub positive: LossGradients,
    pub negative: LossGradients,
}

/// Per-row score and its gradient with respect to `(h, r, t)`.
fn score_with_grad(kind: ModelKind, batch: &Batch) -> (Vec<f64>, LossGradients) {
    let (b, d) = (batch.len(), batch.dim());
    let mut scores = Vec::with_capacity(b);
    let mut g = LossGradients::zeros(b, d);
    for i in 0..b {
        let (h, r, t) = (batch.h.row(i), batch.r.row(i), batch.t.row(i));
        scores.push(kind.score_rows(h, r, t));
        match kind {
            ModelKind::TransE(norm) => {
                let u: Vec<f64> = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect();
                let du: Vec<f64> = match norm {
                    Norm::L1 => u.iter().map(|v| -v.signum() * (*v != 0.0) as u8 as f64).collect(),
                    Norm::L2 => {
                        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n == 0.0 {
                            vec![0.0; d]
                        } else {
                            u.iter().map(|v| -v / n).collect()
                        }
                    }
                };
                g.d_head.row_mut(i).copy_from_slice(&du);
                g.d_relation.row_mut(i).copy_from_slice(&du);
                for (o, v) in g.d_tail.row_mut(i).iter_mut().zip(&du) {
                    *o = -v;
                }
            }
            ModelKind::DistMult => {
                for j in 0..d {
                    g.d_head[(i, j)] = r[j] * t[j];
                    g.d_relation[(i, j)] = h[j] * t[j];
                    g.d_tail[(i, j)] = h[j] * r[j];
                }
            }
        }
    }
    (scores, g)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_row_scaled(dst: &mut LossGradients, i: usize, src: &LossGradients, k: usize, s: f64) {
    for (dm, sm) in [
        (&mut dst.d_head, &src.d_head),
        (&mut dst.d_relation, &src.d_relation),
        (&mut dst.d_tail, &src.d_tail),
    ] {
        for (o, v) in dm.row_mut(i).iter_mut().zip(sm.row(k)) {
            *o += s * v;
        }
    }
}

/// Negative-sampling baseline loss. `negatives` holds `n` corruptions per
/// positive, positive `i` owning rows `i*n .. (i+1)*n`.
///
/// TransE: `Σ max(0, γ − f(pos) + f(neg))`.
/// DistMult: `Σ softplus(−f(pos)) + softplus(f(neg))`, summed per pair.
///
/// The returned value carries the whole loss in `total` and
/// `invariance_term`; `redundancy_term` is zero.
pub fn ns_baseline_loss(
    positives: &Batch,
    negatives: &Batch,
    kind: ModelKind,
    margin: f64,
) -> Result<(LossValue, BaselineGradients)> {
    let b = positives.len();
    if b == 0 || negatives.is_empty() || negatives.len() % b != 0 || negatives.dim() != positives.dim() {
        return Err(Error::Shape {
            op: "ns_baseline_loss",
            left: (positives.len(), positives.dim()),
            right: (negatives.len(), negatives.dim()),
        });
    }
    let n = negatives.len() / b;
    let (pos_scores, pos_g) = score_with_grad(kind, positives);
    let (neg_scores, neg_g) = score_with_grad(kind, negatives);
    let mut grads = BaselineGradients {
        positive: LossGradients::zeros(b, positives.dim()),
        negative: LossGradients::zeros(negatives.len(), negatives.dim()),
    };
    let mut total = 0.0;
    for i in 0..b {
        for k in i * n..(i + 1) * n {
            let (fp, fn_) = (pos_scores[i], neg_scores[k]);
            let (dp, dn) = match kind {
                ModelKind::TransE(_) => {
                    let l = margin - fp + fn_;
                    if l > 0.0 {
                        total += l;
                        (-1.0, 1.0)
                    } else {
                        (0.0, 0.0)
                    }
                }
                ModelKind::DistMult => {
                    total += softplus(-fp) + softplus(fn_);
                    (-sigmoid(-fp), sigmoid(fn_))
                }
            };
            if dp != 0.0 {
                add_row_scaled(&mut grads.positive, i, &pos_g, i, dp);
            }
            if dn != 0.0 {
                add_row_scaled(&mut grads.negative, k, &neg_g, k, dn);
            }
        }
    }
    Ok((
        LossValue {
            total,
            invariance_term: total,
            redundancy_term: 0.0,
        },
        grads,
    ))
}

/// TransE positive loss `Σ‖h + r − t‖²` written through non-standardized
/// correlations `cor(X, Y) = XᵀY`:
///
/// `ν + 4/3 tr cor(R, H−T) − 2/3 tr cor(H|, T) − 2/3 tr cor(H, T|) − 2/3 tr cor(T, H)`
/// with `ν = ‖H‖² + ‖R‖² + ‖T‖²`, `H| = H + R`, `T| = T − R`.
pub fn transe_trace_form(batch: &Batch) -> Result<f64> {
    let (h, r, t) = (&batch.h, &batch.r, &batch.t);
    let form = PairForm::Translational;
    let hp = form.g1(h, r)?;
    let tp = form.g2(t, r)?;
    let nu = h.frobenius_sq() + r.frobenius_sq() + t.frobenius_sq();
    let cor_trace = |x: &Matrix, y: &Matrix| -> Result<f64> { Ok(x.t_matmul(y)?.trace()) };
    Ok(nu + 4.0 / 3.0 * cor_trace(r, &h.sub(t)?)?
        - 2.0 / 3.0 * cor_trace(&hp, t)?
        - 2.0 / 3.0 * cor_trace(h, &tp)?
        - 2.0 / 3.0 * cor_trace(t, h)?)
}

/// DistMult positive score `Σ h·r·t` as the average of three traces, each
/// grouping two of the factors first:
/// `1/3 [tr(H|ᵀT) + tr(T|ᵀH) + tr(R|ᵀR)]` with `H| = H⊙R`, `T| = T⊙R`,
/// `R| = H⊙T`.
pub fn distmult_trace_form(batch: &Batch) -> Result<f64> {
    let (h, r, t) = (&batch.h, &batch.r, &batch.t);
    let hp = h.hadamard(r)?;
    let tp = t.hadamard(r)?;
    let rp = h.hadamard(t)?;
    Ok((hp.t_matmul(t)?.trace() + tp.t_matmul(h)?.trace() + rp.t_matmul(r)?.trace()) / 3.0)
}
