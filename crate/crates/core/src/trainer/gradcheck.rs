//! Central finite-difference check of the tape's gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::{CellHyper, CellParams, CellVariant, Network};
use crate::error::{config, Error, Result};
use crate::regularization::{record_total_reg, RegConfig};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Entries whose ±`KINK_RADIUS` neighbourhood crosses a branch are skipped.
pub const KINK_RADIUS: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-3;
const BATCH: usize = 8;

/// A parameter entry left out because it sits next to a non-smooth point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEntry {
    pub layer: usize,
    pub name: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e−3)`.
    pub max_rel_error: f64,
    pub checked: usize,
    pub boundary: Vec<BoundaryEntry>,
}

struct Eval {
    loss: f64,
    signature: Vec<i8>,
    grads: Vec<Tensor>,
}

fn eval(net: &Network, hyper: &CellHyper, x: &Tensor, y: &Tensor, reg: Option<&RegConfig>) -> Result<Eval> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let leaves: Vec<Var> = bound.iter().flat_map(|b| b.vars()).collect();
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let traces = net.forward(&mut tape, &bound, hyper, xv)?;
    let pred = traces.last().expect("non-empty network").y;
    let mut loss = tape.mse_loss(pred, yv)?;
    if let Some(cfg) = reg {
        let r = record_total_reg(&mut tape, &leaves, cfg)?;
        loss = tape.add(loss, r)?;
    }
    let signature = tape.branch_signature();
    let mut g = tape.backward(loss)?;
    let grads = leaves
        .iter()
        .map(|&v| {
            g.take(v).unwrap_or_else(|| {
                let (r, c) = tape.shape(v);
                Tensor::zeros(r, c)
            })
        })
        .collect();
    Ok(Eval { loss: tape.value(loss).item().expect("scalar"), signature, grads })
}

fn perturbed(net: &Network, tensor: usize, entry: usize, delta: f64) -> Network {
    let mut out = net.clone();
    let mut ts = out.tensors_mut();
    ts[tensor].data_mut()[entry] += delta;
    out
}

/// Checks every parameter entry of `net` on the batch `(x, y)`.
///
/// The loss is `MSE(forward(x), y)`, plus the regularizer when `reg` is given.
pub fn gradient_check_network(
    net: &Network,
    hyper: &CellHyper,
    x: &Tensor,
    y: &Tensor,
    reg: Option<&RegConfig>,
) -> Result<GradCheckReport> {
    let base = eval(net, hyper, x, y, reg)?;
    if !base.loss.is_finite() {
        return Err(Error::NumericDomain(format!("loss is {} at the check point", base.loss)));
    }
    let labels: Vec<(usize, &'static str)> = net
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.named_tensors().into_iter().map(move |(name, _)| (i, name)))
        .collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, boundary: Vec::new() };
    let tensors = net.tensors();
    for (k, t) in tensors.iter().enumerate() {
        for e in 0..t.len() {
            let near_kink = [KINK_RADIUS, -KINK_RADIUS].iter().any(|&d| {
                eval(&perturbed(net, k, e, d), hyper, x, y, reg)
                    .map(|ev| ev.signature != base.signature)
                    .unwrap_or(true)
            });
            if near_kink {
                let (layer, name) = labels[k];
                report.boundary.push(BoundaryEntry {
                    layer,
                    name: name.to_string(),
                    row: e / t.cols(),
                    col: e % t.cols(),
                });
                continue;
            }
            let up = eval(&perturbed(net, k, e, FD_STEP), hyper, x, y, reg)?.loss;
            let down = eval(&perturbed(net, k, e, -FD_STEP), hyper, x, y, reg)?.loss;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = base.grads[k].data()[e];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Random small instance of `variant` with `dims = (in, out)`, checked with the
/// regularizer included in the loss.
///
/// Inputs have magnitudes in `[0.2, 2]` with random signs; parameters are
/// standard normal.
pub fn gradient_check(variant: CellVariant, dims: (usize, usize), seed: u64) -> Result<GradCheckReport> {
    let (in_dim, out_dim) = dims;
    if in_dim == 0 || out_dim == 0 || in_dim > 4 || out_dim > 4 {
        return config(format!("gradient check is meant for small layers (1..=4), got {dims:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let params = CellParams::filled(variant, in_dim, out_dim, |_, r, c| {
        Tensor::new(r, c, (0..r * c).map(|_| normal.sample(&mut rng)).collect()).expect("positive dims")
    });
    let x = Tensor::new(
        BATCH,
        in_dim,
        (0..BATCH * in_dim)
            .map(|_| {
                let mag = rng.random_range(0.2..2.0);
                if rng.random_bool(0.5) { -mag } else { mag }
            })
            .collect(),
    )?;
    let y = Tensor::new(BATCH, out_dim, (0..BATCH * out_dim).map(|_| normal.sample(&mut rng)).collect())?;
    gradient_check_network(&Network::single(params), &CellHyper::default(), &x, &y, Some(&RegConfig::default()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inalu_independent_random_instance() {
        let r = gradient_check(CellVariant::InaluIndependentWeights, (3, 2), 11).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > 0);
    }

    #[test]
    fn summative_only_network_is_tight() {
        // Gate pinned open and M̂_m at −40 leave a linear model in W_a.
        let p = CellParams::filled(CellVariant::InaluIndependentWeights, 2, 1, |name, r, c| match name {
            "g" => Tensor::filled(r, c, 40.0),
            "m_hat_m" => Tensor::filled(r, c, -40.0),
            "w_hat_a" => Tensor::new(r, c, vec![0.3, -0.4]).unwrap(),
            _ => Tensor::filled(r, c, 0.5),
        });
        let x = Tensor::from_rows(&[[1.0, 2.0], [-0.5, 0.7], [1.5, -1.0]]);
        let y = Tensor::column(&[1.0, 0.0, -2.0]);
        let r = gradient_check_network(&Network::single(p), &CellHyper::default(), &x, &y, None).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn entry_at_omega_boundary_is_skipped() {
        // One input, W = tanh(1)·σ(M̂); choose x so that log|x|·W lands on ω.
        let hyper = CellHyper::default();
        let p = CellParams::filled(CellVariant::InaluSharedWeights, 1, 1, |name, r, c| match name {
            "g" => Tensor::filled(r, c, -3.0),
            "m_hat" => Tensor::filled(r, c, 2.0),
            _ => Tensor::filled(r, c, 1.0),
        });
        let w = 1f64.tanh() * crate::autodiff::sigmoid(2.0);
        let x = Tensor::column(&[(hyper.omega / w).exp()]);
        let y = Tensor::column(&[0.0]);
        let r = gradient_check_network(&Network::single(p), &hyper, &x, &y, None).unwrap();
        let names: Vec<&str> = r.boundary.iter().map(|b| b.name.as_str()).collect();
        assert!(names.contains(&"w_hat") && names.contains(&"m_hat"), "{r:?}");
    }

    #[test]
    fn rejects_large_dims() {
        assert!(gradient_check(CellVariant::NaluMatrixGate, (5, 1), 0).is_err());
    }
}
