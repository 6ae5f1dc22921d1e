use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{act, FEATURE};
use crate::nn::{Bound, GruCell, LayerParams, ParamSet, Tape, Tensor, Var};

/// Shared-parameter recurrent policy over the raw per-agent observation,
/// without commander or graph stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatPolicy {
    pub params: ParamSet,
    pub input_len: usize,
    pub num_actions: usize,
    pub torso: Vec<LayerParams>,
    pub gru: GruCell,
    pub action_head: LayerParams,
    pub value_head: LayerParams,
}

/// Heads of a batched recurrent forward pass.
pub struct FlatOutput {
    pub logits: Var,
    pub values: Var,
    pub hidden: Var,
}

impl FlatPolicy {
    pub fn new<R: Rng + ?Sized>(input_len: usize, num_actions: usize, rng: &mut R) -> Self {
        let mut p = ParamSet::new();
        let torso = vec![
            LayerParams::new(&mut p, "flat.torso.0", input_len, FEATURE, 1.0, rng),
            LayerParams::new(&mut p, "flat.torso.1", FEATURE, FEATURE, 1.0, rng),
        ];
        let gru = GruCell::new(&mut p, "flat.gru", FEATURE, FEATURE, rng);
        let action_head = LayerParams::new(&mut p, "flat.action_head", FEATURE, num_actions, 0.01, rng);
        let value_head = LayerParams::new(&mut p, "flat.value_head", FEATURE, 1, 1.0, rng);
        Self { params: p, input_len, num_actions, torso, gru, action_head, value_head }
    }

    /// `x` is `[R, input_len]`, `h_prev` `[R, 32]`.
    pub fn forward(&self, tape: &mut Tape<'_>, bound: &Bound, x: Var, h_prev: Var) -> Result<FlatOutput> {
        let mut h = x;
        for layer in &self.torso {
            h = layer.forward(tape, bound, h)?;
            h = tape.relu(h);
        }
        let hidden = self.gru.step(tape, bound, h, h_prev)?;
        let logits = self.action_head.forward(tape, bound, hidden)?;
        let values = self.value_head.forward(tape, bound, hidden)?;
        Ok(FlatOutput { logits, values, hidden })
    }
}

/// One agent's decision: `(action, log_prob, value, h_next)`.
pub fn flat_policy_forward<R: Rng + ?Sized>(
    policy: &FlatPolicy,
    obs: &[f64],
    h_prev: &[f64],
    greedy: bool,
    rng: &mut R,
) -> Result<(usize, f64, f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = policy.params.bind(&mut tape);
    let x = tape.constant(Tensor::row(obs.to_vec()));
    let h = tape.constant(Tensor::row(h_prev.to_vec()));
    let out = policy.forward(&mut tape, &bound, x, h)?;
    let logits = tape.value(out.logits);
    if !logits.is_finite() {
        return Err(Error::NonFinite("flat policy logits".into()));
    }
    let (a, lp) = act(logits, greedy, rng);
    Ok((a[0], lp[0], tape.value(out.values).item(), tape.value(out.hidden).data().to_vec()))
}
