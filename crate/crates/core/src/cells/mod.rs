//! NALU and iNALU layers.
//!
//! Every layer owns the raw parameters `Ŵ`, `M̂` (one pair per path for the
//! independent-weights variant) and a gate parameter `G`. The effective path
//! weight is `tanh(Ŵ) ⊙ σ(M̂)`, which lies in `(−1, 1)`.
//!
//! - `nalu_*` variants: `y = g·a + (1−g)·m` with `m = exp(log(|x|+ε)·W)` and an
//!   input-dependent gate `g = σ(x·G)`.
//! - `inalu_*` variants: `y = g·a + (1−g)·m·msv` with the log-space result capped
//!   at `ω`, `m = exp(min(log(max(|x|, ε))·W, ω))`, a sign-correction factor
//!   `msv`, and a gate `g = σ(G)` that does not look at the input.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVariant {
    /// Original NALU, one gate per sample (`G: in × 1`).
    NaluVectorGate,
    /// Original NALU, one gate per sample and output (`G: in × out`).
    NaluMatrixGate,
    /// iNALU with one `(Ŵ, M̂)` pair shared by both paths.
    InaluSharedWeights,
    /// iNALU with separate `(Ŵ_a, M̂_a)` and `(Ŵ_m, M̂_m)`.
    InaluIndependentWeights,
}

impl CellVariant {
    pub const ALL: [CellVariant; 4] = [
        CellVariant::NaluVectorGate,
        CellVariant::NaluMatrixGate,
        CellVariant::InaluSharedWeights,
        CellVariant::InaluIndependentWeights,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            CellVariant::NaluVectorGate => "nalu_vector_gate",
            CellVariant::NaluMatrixGate => "nalu_matrix_gate",
            CellVariant::InaluSharedWeights => "inalu_shared_weights",
            CellVariant::InaluIndependentWeights => "inalu_independent_weights",
        }
    }

    pub fn is_inalu(self) -> bool {
        matches!(self, CellVariant::InaluSharedWeights | CellVariant::InaluIndependentWeights)
    }

    pub fn independent_weights(self) -> bool {
        self == CellVariant::InaluIndependentWeights
    }

    /// Shape of the gate parameter for a layer with the given dimensions.
    pub fn gate_shape(self, in_dim: usize, out_dim: usize) -> (usize, usize) {
        match self {
            CellVariant::NaluVectorGate => (in_dim, 1),
            CellVariant::NaluMatrixGate => (in_dim, out_dim),
            CellVariant::InaluSharedWeights | CellVariant::InaluIndependentWeights => (1, out_dim),
        }
    }
}

impl fmt::Display for CellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CellVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let found = CellVariant::ALL.into_iter().find(|v| v.tag() == s).or(match s {
            "nalu_v" | "nalu-v" => Some(CellVariant::NaluVectorGate),
            "nalu_m" | "nalu-m" => Some(CellVariant::NaluMatrixGate),
            "inalu_sw" | "inalu-sw" => Some(CellVariant::InaluSharedWeights),
            "inalu_iw" | "inalu-iw" => Some(CellVariant::InaluIndependentWeights),
            _ => None,
        });
        found.ok_or_else(|| Error::Config(format!("unknown cell variant `{s}`")))
    }
}

/// Numeric guards of the multiplicative path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellHyper {
    pub epsilon: f64,
    pub omega: f64,
}

impl Default for CellHyper {
    fn default() -> Self {
        Self { epsilon: 1e-7, omega: 20.0 }
    }
}

impl CellHyper {
    pub fn new(epsilon: f64, omega: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !(omega > 0.0) {
            return config(format!("epsilon and omega must be positive, got {epsilon}, {omega}"));
        }
        Ok(Self { epsilon, omega })
    }
}

/// Learnable matrices of one layer.
///
/// For the shared-weight variants the multiplicative path reuses `w_hat_a` and
/// `m_hat_a`, so there is one parameter and one gradient per matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    variant: CellVariant,
    in_dim: usize,
    out_dim: usize,
    w_hat_a: Tensor,
    m_hat_a: Tensor,
    w_hat_m: Option<Tensor>,
    m_hat_m: Option<Tensor>,
    gate: Tensor,
}

impl CellParams {
    /// Parameter names in storage order for a variant.
    pub fn names(variant: CellVariant) -> &'static [&'static str] {
        if variant.independent_weights() {
            &["w_hat_a", "m_hat_a", "w_hat_m", "m_hat_m", "g"]
        } else {
            &["w_hat", "m_hat", "g"]
        }
    }

    /// Builds parameters from tensors listed in [`CellParams::names`] order.
    pub fn from_tensors(variant: CellVariant, tensors: Vec<Tensor>) -> Result<Self> {
        let names = Self::names(variant);
        if tensors.len() != names.len() {
            return config(format!(
                "{variant} needs {} parameter matrices, got {}",
                names.len(),
                tensors.len()
            ));
        }
        let (in_dim, out_dim) = tensors[0].shape();
        for (name, t) in names.iter().zip(&tensors) {
            let want = if *name == "g" {
                variant.gate_shape(in_dim, out_dim)
            } else {
                (in_dim, out_dim)
            };
            if t.shape() != want {
                return config(format!("{variant}: `{name}` has shape {:?}, expected {want:?}", t.shape()));
            }
            if !t.all_finite() {
                return config(format!("{variant}: `{name}` contains non-finite values"));
            }
        }
        let mut it = tensors.into_iter();
        let w_hat_a = it.next().unwrap();
        let m_hat_a = it.next().unwrap();
        let (w_hat_m, m_hat_m) = if variant.independent_weights() {
            (it.next(), it.next())
        } else {
            (None, None)
        };
        let gate = it.next().unwrap();
        Ok(Self { variant, in_dim, out_dim, w_hat_a, m_hat_a, w_hat_m, m_hat_m, gate })
    }

    /// All-zero parameters.
    pub fn zeros(variant: CellVariant, in_dim: usize, out_dim: usize) -> Self {
        Self::filled(variant, in_dim, out_dim, |_, r, c| Tensor::zeros(r, c))
    }

    /// Fills every matrix with `make(name, rows, cols)`.
    pub fn filled(
        variant: CellVariant,
        in_dim: usize,
        out_dim: usize,
        mut make: impl FnMut(&str, usize, usize) -> Tensor,
    ) -> Self {
        let tensors = Self::names(variant)
            .iter()
            .map(|&name| {
                let (r, c) = if name == "g" {
                    variant.gate_shape(in_dim, out_dim)
                } else {
                    (in_dim, out_dim)
                };
                make(name, r, c)
            })
            .collect();
        Self::from_tensors(variant, tensors).expect("shapes built from the variant")
    }

    pub fn variant(&self) -> CellVariant {
        self.variant
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn w_hat_a(&self) -> &Tensor {
        &self.w_hat_a
    }

    pub fn m_hat_a(&self) -> &Tensor {
        &self.m_hat_a
    }

    /// `Ŵ` of the multiplicative path (aliases `w_hat_a` when shared).
    pub fn w_hat_m(&self) -> &Tensor {
        self.w_hat_m.as_ref().unwrap_or(&self.w_hat_a)
    }

    pub fn m_hat_m(&self) -> &Tensor {
        self.m_hat_m.as_ref().unwrap_or(&self.m_hat_a)
    }

    pub fn gate(&self) -> &Tensor {
        &self.gate
    }

    /// Matrices in [`CellParams::names`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.w_hat_a, &self.m_hat_a];
        out.extend(self.w_hat_m.iter());
        out.extend(self.m_hat_m.iter());
        out.push(&self.gate);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_hat_a, &mut self.m_hat_a];
        out.extend(self.w_hat_m.iter_mut());
        out.extend(self.m_hat_m.iter_mut());
        out.push(&mut self.gate);
        out
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        Self::names(self.variant).iter().copied().zip(self.tensors()).collect()
    }

    pub fn num_entries(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Records the parameters as leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let w_hat_a = tape.leaf(self.w_hat_a.clone());
        let m_hat_a = tape.leaf(self.m_hat_a.clone());
        let w_hat_m = self.w_hat_m.as_ref().map(|t| tape.leaf(t.clone()));
        let m_hat_m = self.m_hat_m.as_ref().map(|t| tape.leaf(t.clone()));
        let gate = tape.leaf(self.gate.clone());
        BoundParams { variant: self.variant, w_hat_a, m_hat_a, w_hat_m, m_hat_m, gate }
    }
}

/// Parameters of one layer as recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub variant: CellVariant,
    pub w_hat_a: Var,
    pub m_hat_a: Var,
    pub w_hat_m: Option<Var>,
    pub m_hat_m: Option<Var>,
    pub gate: Var,
}

impl BoundParams {
    /// Leaves in [`CellParams::names`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.w_hat_a, self.m_hat_a];
        out.extend(self.w_hat_m);
        out.extend(self.m_hat_m);
        out.push(self.gate);
        out
    }
}

/// Intermediate values of one layer's forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Summative path `x·W_a`.
    pub a: Var,
    /// Multiplicative path magnitude.
    pub m: Var,
    /// Gate values; `1 × out` for iNALU, `N × 1` or `N × out` for NALU.
    pub g: Var,
    /// Per output column, the `N × in` sign matrix (iNALU only).
    pub msm: Vec<Var>,
    /// `N × out` sign vector (iNALU only).
    pub msv: Option<Var>,
    pub y: Var,
}

/// `tanh(Ŵ) ⊙ σ(M̂)`.
pub fn combined_weight(tape: &mut Tape, w_hat: Var, m_hat: Var) -> Result<Var> {
    if tape.shape(w_hat) != tape.shape(m_hat) {
        return config(format!(
            "Ŵ and M̂ shapes differ: {:?} vs {:?}",
            tape.shape(w_hat),
            tape.shape(m_hat)
        ));
    }
    let t = tape.tanh(w_hat);
    let s = tape.sigmoid(m_hat);
    tape.mul(t, s)
}

pub fn summative_path(tape: &mut Tape, x: Var, w_a: Var) -> Result<Var> {
    tape.matmul(x, w_a)
}

/// `exp(log(|x|+ε)·W)` when `clipped` is false, otherwise
/// `exp(min(log(max(|x|, ε))·W, ω))`.
pub fn multiplicative_path(tape: &mut Tape, x: Var, w_m: Var, hyper: &CellHyper, clipped: bool) -> Result<Var> {
    let abs = tape.abs(x);
    let guarded = if clipped {
        tape.max_const(abs, hyper.epsilon)
    } else {
        let eps = tape.scalar(hyper.epsilon);
        tape.add(abs, eps)?
    };
    let logs = tape.log(guarded)?;
    let mut z = tape.matmul(logs, w_m)?;
    if clipped {
        z = tape.min_const(z, hyper.omega);
    }
    Ok(tape.exp(z))
}

/// Sign matrices per output column and the resulting `N × out` sign vector.
///
/// For output `j`, `msm[n, i] = sign(x[n, i])·|W[i, j]| + 1 − |W[i, j]|` and
/// `msv[n, j] = Π_i msm[n, i]`.
pub fn sign_correction(tape: &mut Tape, x: Var, w_m: Var) -> Result<(Vec<Var>, Var)> {
    let (_, in_dim) = tape.shape(x);
    let (w_in, out_dim) = tape.shape(w_m);
    if w_in != in_dim {
        return config(format!("sign correction: input has {in_dim} columns, weight has {w_in} rows"));
    }
    let sx = tape.sign(x);
    let abs_w = tape.abs(w_m);
    let abs_wt = tape.transpose(abs_w);
    let one = tape.scalar(1.0);
    let mut msm = Vec::with_capacity(out_dim);
    let mut cols = Vec::with_capacity(out_dim);
    for j in 0..out_dim {
        let wj = tape.select_row(abs_wt, j)?;
        let signed = tape.mul(sx, wj)?;
        let keep = tape.sub(one, wj)?;
        let m = tape.add(signed, keep)?;
        cols.push(tape.row_product(m));
        msm.push(m);
    }
    let msv = if cols.len() == 1 { cols[0] } else { tape.concat_cols(&cols)? };
    Ok((msm, msv))
}

/// `σ(x·G)` with `G` of shape `in × 1` or `in × out`.
pub fn gate_input_dependent(tape: &mut Tape, x: Var, g: Var) -> Result<Var> {
    let z = tape.matmul(x, g)?;
    Ok(tape.sigmoid(z))
}

/// `σ(G)` with `G` of shape `1 × out`; broadcast over the batch by the caller.
pub fn gate_independent(tape: &mut Tape, g: Var) -> Result<Var> {
    if tape.shape(g).0 != 1 {
        return config(format!("independent gate must be 1 x out, got {:?}", tape.shape(g)));
    }
    Ok(tape.sigmoid(g))
}

/// One layer's forward pass on `x: N × in`.
pub fn forward(tape: &mut Tape, params: &BoundParams, hyper: &CellHyper, x: Var) -> Result<LayerTrace> {
    let variant = params.variant;
    let w_a = combined_weight(tape, params.w_hat_a, params.m_hat_a)?;
    let w_m = match (params.w_hat_m, params.m_hat_m) {
        (Some(wh), Some(mh)) => combined_weight(tape, wh, mh)?,
        _ => w_a,
    };
    let out_dim = tape.shape(w_a).1;
    let a = summative_path(tape, x, w_a)?;
    let m = multiplicative_path(tape, x, w_m, hyper, variant.is_inalu())?;

    let (g, msm, msv, mult) = if variant.is_inalu() {
        let g = gate_independent(tape, params.gate)?;
        let (msm, msv) = sign_correction(tape, x, w_m)?;
        let signed = tape.mul(m, msv)?;
        (g, msm, Some(msv), signed)
    } else {
        let g = gate_input_dependent(tape, x, params.gate)?;
        (g, Vec::new(), None, m)
    };

    // A per-sample scalar gate is spread over all outputs.
    let g_full = if tape.shape(g).1 == 1 && out_dim > 1 {
        tape.tile_cols(g, out_dim)?
    } else {
        g
    };
    let one = tape.scalar(1.0);
    let ga = tape.mul(g_full, a)?;
    let inv = tape.sub(one, g_full)?;
    let gm = tape.mul(inv, mult)?;
    let y = tape.add(ga, gm)?;

    if variant.is_inalu() && !tape.value(y).all_finite() {
        return Err(Error::Invariant(format!("{variant} produced a non-finite output")));
    }
    Ok(LayerTrace { a, m, g, msm, msv, y })
}

/// A stack of layers applied in sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<CellParams>,
}

impl Network {
    pub fn new(layers: Vec<CellParams>) -> Result<Self> {
        if layers.is_empty() {
            return config("a network needs at least one layer");
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return config(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn single(params: CellParams) -> Self {
        Self { layers: vec![params] }
    }

    pub fn layers(&self) -> &[CellParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CellParams] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn num_entries(&self) -> usize {
        self.layers.iter().map(|l| l.num_entries()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<BoundParams> {
        self.layers.iter().map(|l| l.bind(tape)).collect()
    }

    /// Records the stacked forward pass; returns per-layer traces.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &[BoundParams],
        hyper: &CellHyper,
        x: Var,
    ) -> Result<Vec<LayerTrace>> {
        stack(tape, bound, hyper, x)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn predict(&self, hyper: &CellHyper, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim() {
            return config(format!("input has {} columns, network expects {}", x.cols(), self.in_dim()));
        }
        let mut tape = Tape::new();
        let mut h = tape.constant(x.clone());
        for layer in &self.layers {
            // Constants keep the tape from tracking gradient flags.
            let bound = BoundParams {
                variant: layer.variant(),
                w_hat_a: tape.constant(layer.w_hat_a.clone()),
                m_hat_a: tape.constant(layer.m_hat_a.clone()),
                w_hat_m: layer.w_hat_m.as_ref().map(|t| tape.constant(t.clone())),
                m_hat_m: layer.m_hat_m.as_ref().map(|t| tape.constant(t.clone())),
                gate: tape.constant(layer.gate.clone()),
            };
            h = forward(&mut tape, &bound, hyper, h)?.y;
        }
        Ok(tape.value(h).clone())
    }
}

/// Sequential application of bound layers.
pub fn stack(tape: &mut Tape, layers: &[BoundParams], hyper: &CellHyper, x: Var) -> Result<Vec<LayerTrace>> {
    if layers.is_empty() {
        return config("stack of zero layers");
    }
    let mut traces = Vec::with_capacity(layers.len());
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        let trace = forward(tape, layer, hyper, h).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("layer {i}: {msg}")),
            other => other,
        })?;
        h = trace.y;
        traces.push(trace);
    }
    Ok(traces)
}
