use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Bound, Tape, Tensor, Var};

/// Targets for one clipped-surrogate update, one entry per decision.
pub struct PpoBatch<'a> {
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

/// Clipped-surrogate settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoCoefficients {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub huber_delta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of decisions whose ratio left the clip range.
    pub clip_fraction: f64,
}

fn column(v: &[f64]) -> Tensor {
    Tensor::matrix(v.len(), 1, v.to_vec()).expect("column shape")
}

/// Per-row log-probability of `actions` and mean entropy of a categorical
/// policy given its logits `[R, A]`.
pub fn categorical_terms(tape: &mut Tape<'_>, logits: Var, actions: &[usize]) -> Result<(Var, Var)> {
    let logp_all = tape.log_softmax_rows(logits);
    let logp = tape.gather_cols(logp_all, actions)?;
    let p = tape.exp(logp_all);
    let plogp = tape.mul(p, logp_all)?;
    let rows = tape.value(logits).rows() as f64;
    let total = tape.sum(plogp);
    let entropy = tape.scale(total, -1.0 / rows);
    Ok((logp, entropy))
}

/// `-mean(min(r A, clip(r) A)) + c_v huber(V, R) - c_e H`. `logp` and
/// `values` are `[R, 1]`, `entropy` a scalar.
pub fn clipped_objective(
    tape: &mut Tape<'_>,
    logp: Var,
    entropy: Var,
    values: Var,
    batch: &PpoBatch<'_>,
    coef: &PpoCoefficients,
) -> Result<(Var, LossStats)> {
    let rows = tape.value(logp).rows();
    if batch.old_log_probs.len() != rows || batch.advantages.len() != rows || batch.returns.len() != rows {
        return shape_err(format!("ppo batch sizes differ from {rows} decisions"));
    }
    let old = tape.constant(column(batch.old_log_probs));
    let adv = tape.constant(column(batch.advantages));
    let ret = tape.constant(column(batch.returns));
    let diff = tape.sub(logp, old)?;
    let ratio = tape.exp(diff);
    let s1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - coef.clip, 1.0 + coef.clip);
    let s2 = tape.mul(clipped, adv)?;
    let surr = tape.minimum(s1, s2)?;
    let surr = tape.mean(surr);
    let policy_loss = tape.scale(surr, -1.0);
    let value_loss = tape.huber(values, ret, coef.huber_delta)?;
    let vl = tape.scale(value_loss, coef.value_coef);
    let el = tape.scale(entropy, -coef.entropy_coef);
    let loss = tape.add(policy_loss, vl)?;
    let loss = tape.add(loss, el)?;
    let lv = tape.value(loss).item();
    if !lv.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {lv}")));
    }
    let clip_fraction = tape
        .value(ratio)
        .data()
        .iter()
        .filter(|r| (**r - 1.0).abs() > coef.clip)
        .count() as f64
        / rows.max(1) as f64;
    let stats = LossStats {
        policy_loss: tape.value(policy_loss).item(),
        value_loss: tape.value(value_loss).item(),
        entropy: tape.value(entropy).item(),
        clip_fraction,
    };
    Ok((loss, stats))
}

/// Gradients of `loss` for every parameter bound in `bound`, in order.
pub fn parameter_gradients(tape: &Tape<'_>, loss: Var, bound: &Bound) -> Result<Vec<Tensor>> {
    let grads = tape.backward(loss)?;
    Ok(bound.vars().iter().map(|&v| grads.wrt(v)).collect())
}

/// Standardizes advantages in place when there are at least two.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{adam_update, softmax, AdamState, ParamSet};

    fn coef() -> PpoCoefficients {
        PpoCoefficients { clip: 0.2, value_coef: 1.0, entropy_coef: 0.0, huber_delta: 10.0 }
    }

    #[test]
    fn clip_arithmetic() {
        // Ratio 2 with a positive advantage is cut to 1.2.
        let mut tape = Tape::new();
        let logp = tape.input(column(&[2f64.ln()]));
        let ent = tape.constant(Tensor::scalar(0.0));
        let v = tape.constant(column(&[0.0]));
        let batch = PpoBatch { old_log_probs: &[0.0], advantages: &[1.0], returns: &[0.0] };
        let (_, stats) = clipped_objective(&mut tape, logp, ent, v, &batch, &coef()).unwrap();
        assert!((stats.policy_loss + 1.2).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 1.0);
    }

    #[test]
    fn zero_advantage_gives_no_policy_gradient() {
        let mut tape = Tape::new();
        let logp = tape.input(column(&[-0.3, -1.2]));
        let ent = tape.constant(Tensor::scalar(0.0));
        let v = tape.input(column(&[0.5, 0.1]));
        let batch = PpoBatch { old_log_probs: &[-0.5, -1.0], advantages: &[0.0, 0.0], returns: &[1.0, 0.0] };
        let (loss, _) = clipped_objective(&mut tape, logp, ent, v, &batch, &coef()).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(logp).data().iter().all(|&x| x == 0.0));
        assert!(g.wrt(v).data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn bandit_probability_rises() {
        // Three-armed bandit paying only on arm 2.
        let mut params = ParamSet::new();
        let logits_id = params.add("bandit.logits", Tensor::zeros(&[1, 3]));
        let value_id = params.add("bandit.value", Tensor::zeros(&[1, 1]));
        let mut adam = AdamState::new(&params, 0.05, 1e-5, 10.0);
        let actions: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let rewards: Vec<f64> = actions.iter().map(|&a| if a == 2 { 1.0 } else { 0.0 }).collect();
        let mut prev = softmax(params.get(logits_id).data())[2];
        for _ in 0..20 {
            let p = softmax(params.get(logits_id).data());
            let v = params.get(value_id).item();
            let old: Vec<f64> = actions.iter().map(|&a| p[a].ln()).collect();
            let mut adv: Vec<f64> = rewards.iter().map(|r| r - v).collect();
            normalize_advantages(&mut adv);
            let grads = {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let ones = tape.constant(Tensor::filled(&[30, 1], 1.0));
                let logits = tape.matmul(ones, bound.var(logits_id)).unwrap();
                let values = tape.matmul(ones, bound.var(value_id)).unwrap();
                let (logp, ent) = categorical_terms(&mut tape, logits, &actions).unwrap();
                let batch = PpoBatch { old_log_probs: &old, advantages: &adv, returns: &rewards };
                let (loss, _) = clipped_objective(&mut tape, logp, ent, values, &batch, &coef()).unwrap();
                parameter_gradients(&tape, loss, &bound).unwrap()
            };
            adam_update(&mut adam, &mut params, grads).unwrap();
            let now = softmax(params.get(logits_id).data())[2];
            assert!(now > prev);
            prev = now;
        }
    }

    #[test]
    fn entropy_of_uniform() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[2, 4]));
        let (logp, ent) = categorical_terms(&mut tape, logits, &[0, 3]).unwrap();
        assert!((tape.value(ent).item() - 4f64.ln()).abs() < 1e-12);
        assert!((tape.value(logp).data()[1] + 4f64.ln()).abs() < 1e-12);
    }
}
