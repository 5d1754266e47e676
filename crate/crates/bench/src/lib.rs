//! Fixtures shared by the benchmarks.

use inalu::trainer::init_network;
use inalu::{CellVariant, ModelSpec, Network, Tensor};

/// Default-initialized network with the given widths.
pub fn network(variant: CellVariant, widths: &[usize]) -> Network {
    let model = ModelSpec::new(variant, widths.to_vec()).expect("valid widths");
    init_network(&model, &Default::default(), 0).expect("valid init")
}

/// Deterministic `rows × cols` batch with mixed signs and magnitudes in `[0.5, 3)`.
pub fn batch(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|k| {
            let mag = 0.5 + (k * 7919 % 250) as f64 / 100.0;
            if k % 3 == 0 { -mag } else { mag }
        })
        .collect();
    Tensor::new(rows, cols, data).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_shapes() {
        let net = network(CellVariant::InaluSharedWeights, &[100, 2, 1]);
        assert_eq!((net.in_dim(), net.out_dim()), (100, 1));
        assert_eq!(batch(64, 100).shape(), (64, 100));
    }
}
