//! Hand-computed values and property checks against the public API.

use approx::assert_relative_eq;
use proptest::prelude::*;

use inalu::autodiff::{sigmoid, Tape};
use inalu::cells::{self, read_checkpoint, write_checkpoint};
use inalu::datagen::{apply_op, build_dataset, sample, DIV_MIN_DIVISOR};
use inalu::regularization::{reg_term, total_reg};
use inalu::trainer::{gradient_check_network, init_network};
use inalu::{
    CellHyper, CellParams, CellVariant, DistributionSpec, ModelSpec, Network, Operation, RegConfig, Split, TaskKind,
    TaskSpec, Tensor,
};

fn shared(variant: CellVariant, w_hat: &[f64], m_hat: &[f64], g: &[f64]) -> Network {
    let i = w_hat.len();
    let (gr, gc) = variant.gate_shape(i, 1);
    Network::single(
        CellParams::from_tensors(
            variant,
            vec![Tensor::column(w_hat), Tensor::column(m_hat), Tensor::new(gr, gc, g.to_vec()).unwrap()],
        )
        .unwrap(),
    )
}

#[test]
fn nalu_forward_by_hand() {
    // W = tanh(1)σ(1) for both inputs, vector gate g = σ(x·G).
    let net = shared(CellVariant::NaluVectorGate, &[1.0, 1.0], &[1.0, 1.0], &[0.5, -0.25]);
    let x = Tensor::from_rows(&[[2.0, -3.0]]);
    let y = net.predict(&CellHyper::default(), &x).unwrap().item().unwrap();

    let w = 1f64.tanh() * sigmoid(1.0);
    let a = 2.0 * w - 3.0 * w;
    let m = ((2.0f64 + 1e-7).ln() * w + (3.0f64 + 1e-7).ln() * w).exp();
    let g = sigmoid(2.0 * 0.5 - 3.0 * -0.25);
    assert_relative_eq!(y, g * a + (1.0 - g) * m, max_relative = 1e-12);
}

#[test]
fn inalu_forward_by_hand() {
    // Shared weights, negative product: the sign vector flips the magnitude.
    let net = shared(CellVariant::InaluSharedWeights, &[2.0, 3.0], &[2.0, 2.0], &[-1.0]);
    let x = Tensor::from_rows(&[[2.0, -3.0]]);
    let y = net.predict(&CellHyper::default(), &x).unwrap().item().unwrap();

    let w0 = 2f64.tanh() * sigmoid(2.0);
    let w1 = 3f64.tanh() * sigmoid(2.0);
    let a = 2.0 * w0 - 3.0 * w1;
    let m = (2f64.ln() * w0 + 3f64.ln() * w1).exp();
    // msm = sign(x)·|W| + 1 − |W|, with sign(-3) = −1
    let msv = (1.0 * w0 + 1.0 - w0) * (-1.0 * w1 + 1.0 - w1);
    let g = sigmoid(-1.0);
    assert_relative_eq!(y, g * a + (1.0 - g) * m * msv, max_relative = 1e-12);
}

#[test]
fn two_layer_network_gradients_match_finite_differences() {
    let model = ModelSpec::new(CellVariant::InaluIndependentWeights, vec![3, 2, 1]).unwrap();
    let net = init_network(&model, &Default::default(), 5).unwrap();
    let x = Tensor::from_rows(&[[0.5, -1.2, 2.0], [1.5, 0.3, -0.7], [-0.9, 1.1, 0.4]]);
    let y = Tensor::column(&[1.0, -0.5, 2.0]);
    let r = gradient_check_network(&net, &CellHyper::default(), &x, &y, Some(&RegConfig::default())).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    assert!(r.checked > 20);
}

#[test]
fn checkpoint_round_trip_keeps_predictions() {
    let model = ModelSpec::new(CellVariant::InaluSharedWeights, vec![4, 3, 1]).unwrap();
    let net = init_network(&model, &Default::default(), 9).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&net, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, net);
    let x = Tensor::from_rows(&[[1.0, -2.0, 0.5, 3.0]]);
    let hyper = CellHyper::default();
    assert_eq!(back.predict(&hyper, &x).unwrap(), net.predict(&hyper, &x).unwrap());
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let net = shared(CellVariant::NaluMatrixGate, &[1.0], &[1.0], &[0.0]);
    let mut buf = Vec::new();
    write_checkpoint(&net, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cut: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
    assert!(read_checkpoint(cut.as_bytes()).is_err());
}

fn variant() -> impl Strategy<Value = CellVariant> {
    prop::sample::select(CellVariant::ALL.to_vec())
}

fn params(v: CellVariant, i: usize, o: usize, vals: &[f64]) -> CellParams {
    let mut k = 0;
    CellParams::filled(v, i, o, |_, r, c| {
        let t = Tensor::new(r, c, (0..r * c).map(|j| vals[(k + j) % vals.len()]).collect()).unwrap();
        k += r * c;
        t
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inalu_magnitude_never_exceeds_exp_omega(
        vals in prop::collection::vec(-30.0f64..30.0, 8..32),
        xs in prop::collection::vec(-1e8f64..1e8, 6),
        independent in any::<bool>(),
    ) {
        let v = if independent { CellVariant::InaluIndependentWeights } else { CellVariant::InaluSharedWeights };
        let p = params(v, 3, 2, &vals);
        let hyper = CellHyper::default();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::new(2, 3, xs).unwrap());
        let trace = cells::forward(&mut tape, &bound, &hyper, x).unwrap();
        let bound_m = hyper.omega.exp() * (1.0 + 1e-12);
        prop_assert!(tape.value(trace.m).data().iter().all(|&m| m > 0.0 && m <= bound_m));
        prop_assert!(tape.value(trace.y).all_finite());
        let msv = tape.value(trace.msv.unwrap()).clone();
        prop_assert!(msv.data().iter().all(|&s| (-1.0..=1.0).contains(&s)));
    }

    #[test]
    fn nalu_magnitude_is_positive(
        vals in prop::collection::vec(-5.0f64..5.0, 8..32),
        xs in prop::collection::vec(-50.0f64..50.0, 6),
        matrix in any::<bool>(),
    ) {
        let v = if matrix { CellVariant::NaluMatrixGate } else { CellVariant::NaluVectorGate };
        let p = params(v, 3, 2, &vals);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::new(2, 3, xs).unwrap());
        let trace = cells::forward(&mut tape, &bound, &CellHyper::default(), x).unwrap();
        prop_assert!(tape.value(trace.m).data().iter().all(|&m| m > 0.0));
    }

    #[test]
    fn combined_weight_stays_in_unit_interval(v in variant(), vals in prop::collection::vec(-40.0f64..40.0, 8..16)) {
        let p = params(v, 2, 2, &vals);
        let mut tape = Tape::new();
        let w = tape.constant(p.w_hat_a().clone());
        let m = tape.constant(p.m_hat_a().clone());
        let c = cells::combined_weight(&mut tape, w, m).unwrap();
        prop_assert!(tape.value(c).data().iter().all(|&x| (-1.0..=1.0).contains(&x)));
    }

    #[test]
    fn penalty_is_bounded_and_zero_when_saturated(w in -100.0f64..100.0) {
        let r = reg_term(w, 20.0);
        prop_assert!((0.0..=1.0).contains(&r));
        if w.abs() >= 20.0 {
            prop_assert_eq!(r, 0.0);
        }
        prop_assert!(reg_term(w * 0.5, 20.0) >= r);
    }

    #[test]
    fn total_penalty_counts_every_entry(v in variant(), fill in -25.0f64..25.0) {
        let net = Network::single(CellParams::filled(v, 2, 3, |_, r, c| Tensor::filled(r, c, fill)));
        let expected = net.num_entries() as f64 * reg_term(fill, 20.0);
        prop_assert!((total_reg(&net, &RegConfig::default()) - expected).abs() < 1e-9);
    }

    #[test]
    fn samples_stay_in_support(low in -10.0f64..10.0, width in 0.1f64..10.0, seed in 0u64..1000) {
        for spec in [
            DistributionSpec::Uniform { low, high: low + width },
            DistributionSpec::TruncatedNormal { mean: low, std: width },
            DistributionSpec::Exponential { rate: width },
        ] {
            let (lo, hi) = spec.support();
            let xs = sample(&spec, 200, seed).unwrap();
            prop_assert!(xs.iter().all(|x| (lo..=hi).contains(x)), "{spec}");
            prop_assert_eq!(&xs, &sample(&spec, 200, seed).unwrap());
        }
    }

    #[test]
    fn targets_follow_the_operation(seed in 0u64..500, op in prop::sample::select(Operation::ALL.to_vec())) {
        let task = TaskSpec::new(op, TaskKind::Minimal, seed, DistributionSpec::Uniform { low: -3.0, high: 3.0 }, vec![DistributionSpec::Uniform { low: -5.0, high: 5.0 }])
            .with_sample_count(50);
        let d = build_dataset(&task, Split::Train, seed).unwrap();
        for r in 0..d.len() {
            let row = d.x.row_slice(r);
            if op == Operation::Div {
                prop_assert!(row[1].abs() >= DIV_MIN_DIVISOR);
            }
            prop_assert_eq!(d.y.get(r, 0), apply_op(row[0], row[1], op));
        }
    }
}
