//! Building blocks shared by every model: embedding tables and history
//! aggregation, the embedding combiners, ReLU towers, the sigmoid output
//! head and the binary cross-entropy loss, each with a hand-written backward.
//!
//! Gradients live in a second instance of the same component (see
//! `zeros_like`), so a model and its gradient buffer have identical
//! parameter enumerations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    add_outer, axpy, dot_slices, gaussian_init, gaussian_vector, matvec_into, matvec_t_into, DenseMatrix,
    DenseVector, SeededRng,
};

/// Probability clamp applied before taking logs in the loss.
pub const BCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight,
    Bias,
}

#[derive(Debug)]
pub struct ParamRef<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingRole {
    UserId,
    ItemId,
    /// Rows indexed by item; aggregated over a user's history.
    ItemHistory,
    /// Rows indexed by user; aggregated over an item's history.
    UserHistory,
}

impl EmbeddingRole {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingRole::UserId => "user_id",
            EmbeddingRole::ItemId => "item_id",
            EmbeddingRole::ItemHistory => "item_history",
            EmbeddingRole::UserHistory => "user_history",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub role: EmbeddingRole,
    pub table: DenseMatrix,
}

impl EmbeddingTable {
    pub fn new(role: EmbeddingRole, rows: usize, k: usize, stddev: f64, rng: &mut SeededRng) -> Self {
        assert!(k > 0, "embedding width must be positive");
        Self {
            role,
            table: gaussian_init(rows, k, 0.0, stddev, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            role: self.role,
            table: DenseMatrix::zeros(self.table.rows(), self.table.cols()),
        }
    }

    pub fn rows(&self) -> usize {
        self.table.rows()
    }

    pub fn width(&self) -> usize {
        self.table.cols()
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.rows() {
            return Err(Error::Index {
                what: self.role.name(),
                index,
                len: self.rows(),
            });
        }
        Ok(())
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, self.role.name()),
            kind: ParamKind::Embedding,
            dims: vec![self.table.rows(), self.table.cols()],
            data: self.table.as_slice(),
        });
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        out.push(ParamMut {
            name: join(prefix, self.role.name()),
            kind: ParamKind::Embedding,
            dims: vec![self.table.rows(), self.table.cols()],
            data: self.table.as_mut_slice(),
        });
    }
}

pub fn id_embedding(table: &EmbeddingTable, index: usize) -> Result<DenseVector> {
    table.check(index)?;
    Ok(DenseVector::from(table.table.row(index)))
}

/// A neighbor list with an optional excluded index (used for the
/// off-by-default self-exclusion of the target from its own history).
#[derive(Debug, Clone, Copy)]
pub struct Neighbors<'a> {
    list: &'a [usize],
    skip: Option<usize>,
}

impl<'a> Neighbors<'a> {
    pub fn all(list: &'a [usize]) -> Self {
        Self { list, skip: None }
    }

    /// `list` must be sorted ascending.
    pub fn without(list: &'a [usize], skip: usize) -> Self {
        let skip = list.binary_search(&skip).ok().map(|_| skip);
        Self { list, skip }
    }

    pub fn len(&self) -> usize {
        self.list.len() - usize::from(self.skip.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + 'a {
        let skip = self.skip;
        self.list.iter().copied().filter(move |&j| Some(j) != skip)
    }

    /// `|R|^{-1/2}`, defined as 0 for an empty history.
    pub fn normalizer(&self) -> f64 {
        match self.len() {
            0 => 0.0,
            n => 1.0 / (n as f64).sqrt(),
        }
    }
}

pub fn history_embedding(table: &EmbeddingTable, neighbors: &[usize]) -> Result<DenseVector> {
    for &j in neighbors {
        table.check(j)?;
    }
    let mut out = vec![0.0; table.width()];
    history_into(table, Neighbors::all(neighbors), &mut out);
    Ok(out.into())
}

/// `out = |R|^{-1/2} Σ_{j∈R} row_j`; indices must already be validated.
pub(crate) fn history_into(table: &EmbeddingTable, neighbors: Neighbors<'_>, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in neighbors.iter() {
        axpy(1.0, table.table.row(j), out);
    }
    let s = neighbors.normalizer();
    out.iter_mut().for_each(|o| *o *= s);
}

pub(crate) fn history_backward(grad: &mut EmbeddingTable, neighbors: Neighbors<'_>, d: &[f64]) {
    let s = neighbors.normalizer();
    if s == 0.0 {
        return;
    }
    for j in neighbors.iter() {
        axpy(s, d, grad.table.row_mut(j));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerKind {
    Sum,
    Mean,
    Concat,
    Attention,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 4] = [
        CombinerKind::Sum,
        CombinerKind::Mean,
        CombinerKind::Concat,
        CombinerKind::Attention,
    ];

    /// Width of the combined vector for embeddings of width `k`.
    pub fn output_width(self, k: usize) -> usize {
        match self {
            CombinerKind::Concat => 2 * k,
            _ => k,
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombinerKind::Sum => "sum",
            CombinerKind::Mean => "mean",
            CombinerKind::Concat => "concat",
            CombinerKind::Attention => "attention",
        })
    }
}

impl FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(CombinerKind::Sum),
            "mean" => Ok(CombinerKind::Mean),
            "concat" => Ok(CombinerKind::Concat),
            "attention" => Ok(CombinerKind::Attention),
            other => Err(Error::Config(format!("unknown combiner `{other}`"))),
        }
    }
}

/// One-hidden-layer scorer `att(x) = h_aᵀ ReLU(W_aᵀ x + b_a)` used to weigh
/// the ID embedding against the history embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCombiner {
    pub w_a: DenseMatrix,
    pub b_a: DenseVector,
    pub h_a: DenseVector,
}

#[derive(Debug, Clone, Default)]
pub struct AttentionScoreTape {
    pre: Vec<f64>,
}

impl AttentionCombiner {
    pub fn new(k: usize, hidden: usize, stddev: f64, rng: &mut SeededRng) -> Self {
        assert!(hidden > 0, "attention hidden width must be positive");
        Self {
            w_a: gaussian_init(k, hidden, 0.0, stddev, rng),
            b_a: DenseVector::zeros(hidden),
            h_a: gaussian_vector(hidden, 0.0, stddev, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_a: DenseMatrix::zeros(self.w_a.rows(), self.w_a.cols()),
            b_a: DenseVector::zeros(self.b_a.len()),
            h_a: DenseVector::zeros(self.h_a.len()),
        }
    }

    pub fn score(&self, x: &[f64]) -> (f64, AttentionScoreTape) {
        let mut pre = vec![0.0; self.b_a.len()];
        matvec_t_into(&self.w_a, x, &mut pre);
        axpy(1.0, self.b_a.as_slice(), &mut pre);
        let s = pre
            .iter()
            .zip(self.h_a.as_slice())
            .map(|(a, h)| a.max(0.0) * h)
            .sum();
        (s, AttentionScoreTape { pre })
    }

    /// Accumulates parameter gradients for `ds = ∂L/∂att(x)` and adds
    /// `∂L/∂x` into `dx`.
    fn score_backward(&self, x: &[f64], tape: &AttentionScoreTape, ds: f64, grad: &mut Self, dx: &mut [f64]) {
        let da: Vec<f64> = tape
            .pre
            .iter()
            .zip(self.h_a.as_slice())
            .map(|(&a, &h)| if a > 0.0 { ds * h } else { 0.0 })
            .collect();
        for (gh, &a) in grad.h_a.as_mut_slice().iter_mut().zip(&tape.pre) {
            *gh += ds * a.max(0.0);
        }
        axpy(1.0, &da, grad.b_a.as_mut_slice());
        add_outer(&mut grad.w_a, x, &da);
        for (r, dxr) in dx.iter_mut().enumerate() {
            *dxr += dot_slices(self.w_a.row(r), &da);
        }
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "w"),
            kind: ParamKind::Weight,
            dims: vec![self.w_a.rows(), self.w_a.cols()],
            data: self.w_a.as_slice(),
        });
        out.push(ParamRef {
            name: join(prefix, "b"),
            kind: ParamKind::Bias,
            dims: vec![self.b_a.len()],
            data: self.b_a.as_slice(),
        });
        out.push(ParamRef {
            name: join(prefix, "h"),
            kind: ParamKind::Weight,
            dims: vec![self.h_a.len()],
            data: self.h_a.as_slice(),
        });
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let dims_w = vec![self.w_a.rows(), self.w_a.cols()];
        let len_b = self.b_a.len();
        let len_h = self.h_a.len();
        out.push(ParamMut {
            name: join(prefix, "w"),
            kind: ParamKind::Weight,
            dims: dims_w,
            data: self.w_a.as_mut_slice(),
        });
        out.push(ParamMut {
            name: join(prefix, "b"),
            kind: ParamKind::Bias,
            dims: vec![len_b],
            data: self.b_a.as_mut_slice(),
        });
        out.push(ParamMut {
            name: join(prefix, "h"),
            kind: ParamKind::Weight,
            dims: vec![len_h],
            data: self.h_a.as_mut_slice(),
        });
    }
}

/// Record of one combine call, enough to run its backward.
#[derive(Debug, Clone, Default)]
pub struct CombineTape {
    alpha: f64,
    att_id: AttentionScoreTape,
    att_hist: AttentionScoreTape,
}

impl CombineTape {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

pub fn combine(
    method: CombinerKind,
    id_vec: &DenseVector,
    hist_vec: &DenseVector,
    attn: Option<&AttentionCombiner>,
) -> Result<DenseVector> {
    if id_vec.len() != hist_vec.len() {
        return Err(Error::Shape(format!(
            "combine: id width {} differs from history width {}",
            id_vec.len(),
            hist_vec.len()
        )));
    }
    match (method, attn) {
        (CombinerKind::Attention, None) => {
            return Err(Error::Config("attention combiner requires attention parameters".into()))
        }
        (CombinerKind::Attention, Some(a)) if a.w_a.rows() != id_vec.len() => {
            return Err(Error::Shape(format!(
                "attention network expects width {}, got {}",
                a.w_a.rows(),
                id_vec.len()
            )))
        }
        (m, Some(_)) if m != CombinerKind::Attention => {
            return Err(Error::Config(format!("{m} combiner takes no attention parameters")))
        }
        _ => {}
    }
    let mut out = Vec::new();
    combine_forward(method, id_vec.as_slice(), hist_vec.as_slice(), attn, &mut out);
    Ok(out.into())
}

pub(crate) fn combine_forward(
    method: CombinerKind,
    p: &[f64],
    m: &[f64],
    attn: Option<&AttentionCombiner>,
    out: &mut Vec<f64>,
) -> CombineTape {
    out.clear();
    match method {
        CombinerKind::Sum => {
            out.extend(p.iter().zip(m).map(|(a, b)| a + b));
            CombineTape::default()
        }
        CombinerKind::Mean => {
            out.extend(p.iter().zip(m).map(|(a, b)| 0.5 * (a + b)));
            CombineTape::default()
        }
        CombinerKind::Concat => {
            out.extend_from_slice(p);
            out.extend_from_slice(m);
            CombineTape::default()
        }
        CombinerKind::Attention => {
            let attn = attn.expect("attention parameters present");
            let (sp, att_id) = attn.score(p);
            let (sm, att_hist) = attn.score(m);
            // two-way softmax
            let alpha = sigmoid(sp - sm);
            out.extend(p.iter().zip(m).map(|(a, b)| alpha * a + (1.0 - alpha) * b));
            CombineTape {
                alpha,
                att_id,
                att_hist,
            }
        }
    }
}

/// Adds `∂L/∂p` into `dp` and `∂L/∂m` into `dm` given `dv = ∂L/∂v`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn combine_backward(
    method: CombinerKind,
    p: &[f64],
    m: &[f64],
    attn: Option<&AttentionCombiner>,
    tape: &CombineTape,
    dv: &[f64],
    dp: &mut [f64],
    dm: &mut [f64],
    attn_grad: Option<&mut AttentionCombiner>,
) {
    let k = p.len();
    match method {
        CombinerKind::Sum => {
            axpy(1.0, dv, dp);
            axpy(1.0, dv, dm);
        }
        CombinerKind::Mean => {
            axpy(0.5, dv, dp);
            axpy(0.5, dv, dm);
        }
        CombinerKind::Concat => {
            axpy(1.0, &dv[..k], dp);
            axpy(1.0, &dv[k..], dm);
        }
        CombinerKind::Attention => {
            let attn = attn.expect("attention parameters present");
            let grad = attn_grad.expect("attention gradient present");
            let alpha = tape.alpha;
            axpy(alpha, dv, dp);
            axpy(1.0 - alpha, dv, dm);
            let dalpha: f64 = dv.iter().zip(p.iter().zip(m)).map(|(d, (a, b))| d * (a - b)).sum();
            let ds = dalpha * alpha * (1.0 - alpha);
            attn.score_backward(p, &tape.att_id, ds, grad, dp);
            attn.score_backward(m, &tape.att_hist, -ds, grad, dm);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer computing `a(Wᵀ x + b)` with `W` of shape d_in x d_out.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: DenseMatrix,
    pub bias: DenseVector,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(d_in: usize, d_out: usize, activation: Activation, stddev: f64, rng: &mut SeededRng) -> Self {
        Self {
            weight: gaussian_init(d_in, d_out, 0.0, stddev, rng),
            bias: DenseVector::zeros(d_out),
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: DenseMatrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: DenseVector::zeros(self.bias.len()),
            activation: self.activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            kind: ParamKind::Weight,
            dims: vec![self.weight.rows(), self.weight.cols()],
            data: self.weight.as_slice(),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            kind: ParamKind::Bias,
            dims: vec![self.bias.len()],
            data: self.bias.as_slice(),
        });
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let dims = vec![self.weight.rows(), self.weight.cols()];
        let len = self.bias.len();
        out.push(ParamMut {
            name: join(prefix, "weight"),
            kind: ParamKind::Weight,
            dims,
            data: self.weight.as_mut_slice(),
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            kind: ParamKind::Bias,
            dims: vec![len],
            data: self.bias.as_mut_slice(),
        });
    }
}

/// Inputs and pre-activations of every layer of one tower pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

pub fn mlp_forward(layers: &[DenseLayer], z0: &DenseVector) -> Result<(DenseVector, MlpTape)> {
    let mut width = z0.len();
    for (l, layer) in layers.iter().enumerate() {
        if layer.input_width() != width || layer.bias.len() != layer.output_width() {
            return Err(Error::Shape(format!(
                "layer {l} expects input {} but receives {width}",
                layer.input_width()
            )));
        }
        width = layer.output_width();
    }
    let (z, tape) = mlp_forward_slices(layers, z0.as_slice());
    Ok((z.into(), tape))
}

pub(crate) fn mlp_forward_slices(layers: &[DenseLayer], z0: &[f64]) -> (Vec<f64>, MlpTape) {
    let mut tape = MlpTape {
        inputs: Vec::with_capacity(layers.len()),
        pre: Vec::with_capacity(layers.len()),
    };
    let mut z = z0.to_vec();
    for layer in layers {
        let mut pre = vec![0.0; layer.output_width()];
        matvec_t_into(&layer.weight, &z, &mut pre);
        axpy(1.0, layer.bias.as_slice(), &mut pre);
        let out = match layer.activation {
            Activation::Relu => pre.iter().map(|a| a.max(0.0)).collect(),
            Activation::Identity => pre.clone(),
        };
        tape.inputs.push(std::mem::replace(&mut z, out));
        tape.pre.push(pre);
    }
    (z, tape)
}

/// Accumulates layer gradients into `grads` and returns `∂L/∂z0`.
pub fn mlp_backward(layers: &[DenseLayer], tape: &MlpTape, dz_out: &[f64], grads: &mut [DenseLayer]) -> Vec<f64> {
    let mut dz = dz_out.to_vec();
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let da: Vec<f64> = match layer.activation {
            Activation::Relu => dz
                .iter()
                .zip(&tape.pre[l])
                .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
                .collect(),
            Activation::Identity => dz,
        };
        add_outer(&mut grads[l].weight, &tape.inputs[l], &da);
        axpy(1.0, &da, grads[l].bias.as_mut_slice());
        let mut dx = vec![0.0; layer.input_width()];
        matvec_into(&layer.weight, &da, &mut dx);
        dz = dx;
    }
    dz
}

/// Prediction layer `σ(hᵀ z + b_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub h: DenseVector,
    pub b_out: f64,
}

impl OutputHead {
    pub fn new(width: usize, stddev: f64, rng: &mut SeededRng) -> Self {
        Self {
            h: gaussian_vector(width, 0.0, stddev, rng),
            b_out: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            h: DenseVector::zeros(self.h.len()),
            b_out: 0.0,
        }
    }

    pub fn logit(&self, z: &[f64]) -> f64 {
        dot_slices(self.h.as_slice(), z) + self.b_out
    }

    /// Accumulates head gradients for `dlogit` and adds `∂L/∂z` into `dz`.
    pub(crate) fn backward(&self, z: &[f64], dlogit: f64, grad: &mut Self, dz: &mut [f64]) {
        axpy(dlogit, z, grad.h.as_mut_slice());
        grad.b_out += dlogit;
        axpy(dlogit, self.h.as_slice(), dz);
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "h"),
            kind: ParamKind::Weight,
            dims: vec![self.h.len()],
            data: self.h.as_slice(),
        });
        out.push(ParamRef {
            name: join(prefix, "b"),
            kind: ParamKind::Bias,
            dims: vec![],
            data: std::slice::from_ref(&self.b_out),
        });
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let len = self.h.len();
        out.push(ParamMut {
            name: join(prefix, "h"),
            kind: ParamKind::Weight,
            dims: vec![len],
            data: self.h.as_mut_slice(),
        });
        out.push(ParamMut {
            name: join(prefix, "b"),
            kind: ParamKind::Bias,
            dims: vec![],
            data: std::slice::from_mut(&mut self.b_out),
        });
    }
}

pub fn predict_head(head: &OutputHead, z_out: &DenseVector) -> Result<f64> {
    if head.h.len() != z_out.len() {
        return Err(Error::Shape(format!(
            "head expects width {}, got {}",
            head.h.len(),
            z_out.len()
        )));
    }
    Ok(sigmoid(head.logit(z_out.as_slice())))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_probability(y_hat: f64) -> f64 {
    y_hat.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

pub fn bce_loss(y_hat: f64, y: f64) -> f64 {
    let p = clamp_probability(y_hat);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `∂ bce / ∂ŷ` at the clamped prediction.
pub fn bce_grad(y_hat: f64, y: f64) -> f64 {
    let p = clamp_probability(y_hat);
    -y / p + (1.0 - y) / (1.0 - p)
}
