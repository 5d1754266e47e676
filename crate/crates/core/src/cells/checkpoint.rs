//! Plain-text parameter snapshots.
//!
//! ```text
//! # inalu checkpoint v1
//! layer 0 inalu_independent_weights 2 1
//! layer0.w_hat_a 2 1 1.5e0 -2e-1
//! layer0.m_hat_a 2 1 ...
//! ```
//!
//! Each `layer` line opens a layer (index, variant tag, input and output
//! width) and is followed by one line per matrix: `layer<i>.<name> rows cols`
//! and the row-major values. Values use Rust's shortest round-trip notation,
//! so a write/read cycle reproduces the parameters bit for bit. Blank lines and
//! lines starting with `#` are ignored.

use std::io::{BufRead, Write};

use super::{CellParams, CellVariant, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HEADER: &str = "# inalu checkpoint v1";

pub fn write_checkpoint<W: Write>(net: &Network, mut out: W) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for (i, layer) in net.layers().iter().enumerate() {
        writeln!(out, "layer {i} {} {} {}", layer.variant(), layer.in_dim(), layer.out_dim())?;
        for (name, t) in layer.named_tensors() {
            write!(out, "layer{i}.{name} {} {}", t.rows(), t.cols())?;
            for v in t.data() {
                write!(out, " {v:e}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

struct PendingLayer {
    variant: CellVariant,
    in_dim: usize,
    out_dim: usize,
    tensors: Vec<Tensor>,
}

impl PendingLayer {
    fn finish(self, line: usize) -> Result<CellParams> {
        let params = CellParams::from_tensors(self.variant, self.tensors)
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if params.in_dim() != self.in_dim || params.out_dim() != self.out_dim {
            return Err(Error::Parse { line, msg: "layer dimensions disagree with its matrices".into() });
        }
        Ok(params)
    }
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Network> {
    let mut layers = Vec::new();
    let mut current: Option<PendingLayer> = None;
    let mut last_line = 0;
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let mut fields = line.split_whitespace();
        let head = fields.next().unwrap_or_default();
        if head == "layer" {
            if let Some(done) = current.take() {
                layers.push(done.finish(lineno)?);
            }
            let parts: Vec<&str> = fields.collect();
            let [index, variant, in_dim, out_dim] = parts[..] else {
                return Err(err(format!("expected `layer <idx> <variant> <in> <out>`, got `{line}`")));
            };
            if index.parse::<usize>().ok() != Some(layers.len()) {
                return Err(err(format!("layer index `{index}` out of sequence")));
            }
            current = Some(PendingLayer {
                variant: variant.parse().map_err(|e: Error| err(e.to_string()))?,
                in_dim: in_dim.parse().map_err(|_| err(format!("bad width `{in_dim}`")))?,
                out_dim: out_dim.parse().map_err(|_| err(format!("bad width `{out_dim}`")))?,
                tensors: Vec::new(),
            });
            continue;
        }
        let Some(layer) = current.as_mut() else {
            return Err(err("matrix line before any layer line".into()));
        };
        let expected_names = CellParams::names(layer.variant);
        let k = layer.tensors.len();
        let want = format!("layer{}.{}", layers.len(), expected_names.get(k).copied().unwrap_or("?"));
        if head != want {
            return Err(err(format!("expected matrix `{want}`, got `{head}`")));
        }
        let rows: usize = fields.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad row count".into()))?;
        let cols: usize = fields.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad column count".into()))?;
        let values = fields
            .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad value `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(rows, cols, values).map_err(|e| err(e.to_string()))?;
        layer.tensors.push(t);
    }
    if let Some(done) = current.take() {
        layers.push(done.finish(last_line)?);
    }
    Network::new(layers).map_err(|e| Error::Parse { line: last_line, msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_net() -> Network {
        let a = CellParams::filled(CellVariant::InaluIndependentWeights, 3, 2, |name, r, c| {
            let base = name.len() as f64;
            Tensor::new(r, c, (0..r * c).map(|i| base * 0.1 - i as f64 / 3.0).collect()).unwrap()
        });
        let b = CellParams::filled(CellVariant::NaluVectorGate, 2, 1, |_, r, c| Tensor::filled(r, c, -1e-300));
        Network::new(vec![a, b]).unwrap()
    }

    #[test]
    fn layout_is_documented_format() {
        let mut buf = Vec::new();
        write_checkpoint(&sample_net(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HEADER);
        assert_eq!(lines[1], "layer 0 inalu_independent_weights 3 2");
        assert!(lines[2].starts_with("layer0.w_hat_a 3 2 "));
        assert_eq!(lines[7], "layer 1 nalu_vector_gate 2 1");
        assert_eq!(lines[10], "layer1.g 2 1 -1e-300 -1e-300");
    }

    #[test]
    fn rejects_malformed_input() {
        let cases = [
            "layer0.w_hat 1 1 0\n",
            "layer 0 bogus 1 1\n",
            "layer 1 nalu_vector_gate 1 1\n",
            "layer 0 inalu_shared_weights 1 1\nlayer0.w_hat 1 1 0\nlayer0.m_hat 1 1 x\n",
            "layer 0 inalu_shared_weights 1 1\nlayer0.m_hat 1 1 0\n",
            "layer 0 inalu_shared_weights 1 1\nlayer0.w_hat 1 1 0\n",
            "",
        ];
        for c in cases {
            assert!(read_checkpoint(c.as_bytes()).is_err(), "accepted {c:?}");
        }
    }

    proptest! {
        #[test]
        fn write_read_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 9)) {
            let p = CellParams::from_tensors(
                CellVariant::InaluSharedWeights,
                vec![
                    Tensor::new(2, 2, values[0..4].to_vec()).unwrap(),
                    Tensor::new(2, 2, values[4..8].to_vec()).unwrap(),
                    Tensor::new(1, 2, vec![values[8], -values[8]]).unwrap(),
                ],
            ).unwrap();
            let net = Network::new(vec![p]).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&net, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back, net);
        }
    }

    #[test]
    fn multi_layer_round_trip() {
        let net = sample_net();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), net);
    }
}
