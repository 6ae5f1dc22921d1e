use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Copies values from `other`, which must have the same layout.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Version("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return shape_err(format!("parameter shape {:?} vs {:?}", a.shape(), b.shape()));
            }
            *a = b.clone();
        }
        Ok(())
    }

    /// Binds every tensor as a gradient-tracked leaf of `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| tape.leaf_ref(t, true)).collect() }
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Hidden-layer nonlinearity choice for a layer application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

fn activate(tape: &mut Tape<'_>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => x,
        Activation::Relu => tape.relu(x),
    }
}

/// A dense layer: `weight [in_dim x out_dim]`, `bias [out_dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerParams {
    /// Orthogonally initialized weight (scaled by `gain`), zero bias.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = orthogonal(in_dim, out_dim, gain, rng);
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { name: name.to_string(), weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, bound: &Bound, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.in_dim {
            return shape_err(format!(
                "layer {}: input has {cols} features, expected {}",
                self.name, self.in_dim
            ));
        }
        let xw = tape.matmul(x, bound.var(self.weight))?;
        tape.add_row(xw, bound.var(self.bias))
    }
}

/// Orthogonal `[rows x cols]` matrix times `gain`.
///
/// For `rows >= cols` the columns are orthonormal (`W^T W = gain^2 I`),
/// otherwise the rows are.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Tensor {
    let (big, small) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(big, small, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..small {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            data.push(gain * v);
        }
    }
    Tensor::matrix(rows, cols, data).expect("orthogonal shape")
}

/// Applies `layers` in order. Hidden layers use `hidden`, the last uses `output`.
pub fn mlp_forward(
    tape: &mut Tape<'_>,
    bound: &Bound,
    layers: &[LayerParams],
    x: Var,
    hidden: Activation,
    output: Activation,
) -> Result<Var> {
    for w in layers.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return shape_err(format!(
                "layer {} outputs {} but layer {} takes {}",
                w[0].name, w[0].out_dim, w[1].name, w[1].in_dim
            ));
        }
    }
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(tape, bound, h)?;
        let act = if i + 1 == layers.len() { output } else { hidden };
        h = activate(tape, h, act);
    }
    Ok(h)
}

/// One graph convolution: `act(D^-1/2 (A + I) D^-1/2 H W + b)`.
pub fn gcn_layer(
    tape: &mut Tape<'_>,
    bound: &Bound,
    h: Var,
    adjacency: Var,
    layer: &LayerParams,
    act: Activation,
) -> Result<Var> {
    let n = tape.value(h).rows();
    if tape.value(adjacency).rows() != n {
        return shape_err(format!(
            "adjacency has {} rows for {n} nodes",
            tape.value(adjacency).rows()
        ));
    }
    let a_hat = tape.gcn_norm(adjacency)?;
    let xw = tape.matmul(h, bound.var(layer.weight))?;
    let prop = tape.matmul(a_hat, xw)?;
    let out = tape.add_row(prop, bound.var(layer.bias))?;
    Ok(activate(tape, out, act))
}

/// Gated recurrent cell with hidden size `hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub input: LayerParams,
    pub recurrent: LayerParams,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let input = LayerParams::new(params, &format!("{name}.ih"), in_dim, 3 * hidden, 1.0, rng);
        let recurrent =
            LayerParams::new(params, &format!("{name}.hh"), hidden, 3 * hidden, 1.0, rng);
        Self { input, recurrent, hidden }
    }

    /// `h' = (1 - z) * n + z * h` with reset gate `r`, update gate `z` and
    /// candidate `n = tanh(x W_in + b_in + r * (h W_hn + b_hn))`.
    pub fn step(&self, tape: &mut Tape<'_>, bound: &Bound, x: Var, h_prev: Var) -> Result<Var> {
        let hs = self.hidden;
        let (xr, hr) = (tape.value(x).rows(), tape.value(h_prev).rows());
        if xr != hr {
            return shape_err(format!("recurrent batch {xr} vs hidden batch {hr}"));
        }
        if tape.value(h_prev).cols() != hs {
            return shape_err(format!(
                "hidden state has {} features, cell expects {hs}",
                tape.value(h_prev).cols()
            ));
        }
        let gi = self.input.forward(tape, bound, x)?;
        let gh = self.recurrent.forward(tape, bound, h_prev)?;
        let (ir, iz, inn) = (
            tape.slice_cols(gi, 0, hs)?,
            tape.slice_cols(gi, hs, hs)?,
            tape.slice_cols(gi, 2 * hs, hs)?,
        );
        let (hr_, hz, hn) = (
            tape.slice_cols(gh, 0, hs)?,
            tape.slice_cols(gh, hs, hs)?,
            tape.slice_cols(gh, 2 * hs, hs)?,
        );
        let r = tape.add(ir, hr_)?;
        let r = tape.sigmoid(r);
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hn)?;
        let n = tape.add(inn, rn)?;
        let n = tape.tanh(n);
        let diff = tape.sub(h_prev, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }
}

/// Output of [`gumbel_softmax`].
pub struct GumbelSample {
    /// Relaxed sample, row-stochastic.
    pub soft: Var,
    /// One-hot rows in the forward pass, gradient of `soft` in the backward pass.
    pub hard: Var,
    /// The Gumbel noise that was added to the logits.
    pub noise: Tensor,
}

/// Draws standard Gumbel noise of the given shape.
pub fn gumbel_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("noise shape")
}

/// Row-wise straight-through Gumbel-softmax with fresh noise.
pub fn gumbel_softmax<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    logits: Var,
    temperature: f64,
    rng: &mut R,
) -> Result<GumbelSample> {
    let noise = gumbel_noise(tape.value(logits).shape(), rng);
    gumbel_softmax_with_noise(tape, logits, temperature, noise)
}

/// Row-wise straight-through Gumbel-softmax with caller-provided noise, so a
/// sample can be replayed exactly.
pub fn gumbel_softmax_with_noise(
    tape: &mut Tape<'_>,
    logits: Var,
    temperature: f64,
    noise: Tensor,
) -> Result<GumbelSample> {
    if !(temperature > 0.0) {
        return Err(Error::Param(format!("gumbel temperature must be > 0, got {temperature}")));
    }
    if noise.shape() != tape.value(logits).shape() {
        return shape_err("gumbel noise shape differs from logits");
    }
    let g = tape.constant(noise.clone());
    let perturbed = tape.add(logits, g)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    let soft = tape.softmax_rows(scaled);
    let sv = tape.value(soft);
    let c = sv.cols();
    let mut hard = Tensor::zeros(sv.shape());
    for (r, row) in sv.data().chunks(c).enumerate() {
        hard.data_mut()[r * c + argmax(row)] = 1.0;
    }
    let hard = tape.straight_through(hard, soft)?;
    Ok(GumbelSample { soft, hard, noise })
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax as a plain function.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::row(x.to_vec()));
    let s = tape.softmax_rows(v);
    tape.value(s).data().to_vec()
}

/// Mean Huber loss, quadratic within `delta` and linear outside.
pub fn huber_loss(tape: &mut Tape<'_>, pred: Var, target: Var, delta: f64) -> Result<Var> {
    tape.huber(pred, target, delta)
}
