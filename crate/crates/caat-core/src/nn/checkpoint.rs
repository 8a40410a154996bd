//! Text checkpoint format for network parameters. Floats are stored as
//! hex bit patterns, so a round trip is exact to the bit, including
//! negative zero and NaN payloads.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::CoreError;
use crate::nn::mlp::{Activation, Head, Mlp, MlpSpec};
use crate::nn::tensor::Tensor;
use crate::Result;

const MAGIC: &str = "caat-mlp v1";

fn fmt_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn parse_f64(s: &str) -> Result<f64> {
    let bits = u64::from_str_radix(s, 16)
        .map_err(|_| CoreError::Checkpoint(format!("bad float word {s:?}")))?;
    Ok(f64::from_bits(bits))
}

pub fn checkpoint_to_string(net: &Mlp) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str("widths");
    for w in &net.spec.widths {
        let _ = write!(out, " {w}");
    }
    out.push('\n');
    out.push_str(match net.spec.activation {
        Activation::Tanh => "activation tanh\n",
        Activation::Relu => "activation relu\n",
    });
    match net.spec.head {
        Head::Logits => out.push_str("head logits\n"),
        Head::Softmax { tau } => {
            let _ = writeln!(out, "head softmax {}", fmt_f64(tau));
        }
    }
    for (l, (w, b)) in net.layers.iter().enumerate() {
        for (kind, t) in [("weight", w), ("bias", b)] {
            let _ = writeln!(out, "layer {l} {kind} {} {}", t.rows, t.cols);
            let words: Vec<String> = t.data.iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<Mlp> {
    let mut lines = text.lines();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| CoreError::Checkpoint(format!("unexpected end of file, wanted {what}")))
    };

    if next("magic")? != MAGIC {
        return Err(CoreError::Checkpoint(format!(
            "not a {MAGIC} checkpoint"
        )));
    }

    let widths_line = next("widths")?;
    let mut widths_it = widths_line.split_whitespace();
    if widths_it.next() != Some("widths") {
        return Err(CoreError::Checkpoint("missing widths line".into()));
    }
    let widths: Vec<usize> = widths_it
        .map(|t| {
            t.parse()
                .map_err(|_| CoreError::Checkpoint(format!("bad width {t:?}")))
        })
        .collect::<Result<_>>()?;

    let activation = match next("activation")? {
        "activation tanh" => Activation::Tanh,
        "activation relu" => Activation::Relu,
        other => {
            return Err(CoreError::Checkpoint(format!(
                "unknown activation line {other:?}"
            )))
        }
    };

    let head_line = next("head")?;
    let head = {
        let toks: Vec<&str> = head_line.split_whitespace().collect();
        match toks.as_slice() {
            ["head", "logits"] => Head::Logits,
            ["head", "softmax", bits] => Head::Softmax { tau: parse_f64(bits)? },
            _ => {
                return Err(CoreError::Checkpoint(format!(
                    "unknown head line {head_line:?}"
                )))
            }
        }
    };

    let spec = MlpSpec {
        widths,
        activation,
        head,
    };
    spec.validate()
        .map_err(|e| CoreError::Checkpoint(format!("invalid stored spec: {e}")))?;

    let mut layers = Vec::new();
    for l in 0..spec.widths.len() - 1 {
        let mut pair = Vec::new();
        for kind in ["weight", "bias"] {
            let header = next("layer header")?;
            let toks: Vec<&str> = header.split_whitespace().collect();
            let bad = || CoreError::Checkpoint(format!("bad layer header {header:?}"));
            if toks.len() != 5 || toks[0] != "layer" || toks[2] != kind {
                return Err(bad());
            }
            let idx: usize = toks[1].parse().map_err(|_| bad())?;
            if idx != l {
                return Err(CoreError::Checkpoint(format!(
                    "layer {idx} out of order, wanted {l}"
                )));
            }
            let rows: usize = toks[3].parse().map_err(|_| bad())?;
            let cols: usize = toks[4].parse().map_err(|_| bad())?;
            let (want_r, want_c) = if kind == "weight" {
                (spec.widths[l], spec.widths[l + 1])
            } else {
                (1, spec.widths[l + 1])
            };
            if (rows, cols) != (want_r, want_c) {
                return Err(CoreError::Checkpoint(format!(
                    "layer {l} {kind} is {rows}x{cols}, spec wants {want_r}x{want_c}"
                )));
            }
            let data_line = next("layer data")?;
            let data: Vec<f64> = data_line
                .split_whitespace()
                .map(parse_f64)
                .collect::<Result<_>>()?;
            if data.len() != rows * cols {
                return Err(CoreError::Checkpoint(format!(
                    "layer {l} {kind} has {} words, wanted {}",
                    data.len(),
                    rows * cols
                )));
            }
            pair.push(Tensor::from_vec(rows, cols, data)?);
        }
        let b = pair.pop().expect("two tensors");
        let w = pair.pop().expect("two tensors");
        layers.push((w, b));
    }

    if next("end marker")? != "end" {
        return Err(CoreError::Checkpoint("missing end marker".into()));
    }
    Ok(Mlp { spec, layers })
}

pub fn save_checkpoint(net: &Mlp, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(net))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let text = fs::read_to_string(path)?;
    checkpoint_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Mlp {
        let mut net = Mlp::init(
            MlpSpec {
                widths: vec![3, 5, 2],
                activation: Activation::Relu,
                head: Head::Softmax { tau: 0.37 },
            },
            42,
        )
        .unwrap();
        // Exercise the awkward bit patterns.
        net.layers[0].0.data[0] = -0.0;
        net.layers[0].0.data[1] = f64::MIN_POSITIVE / 8.0;
        net.layers[1].1.data[0] = 1.0 / 3.0;
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = net();
        let b = checkpoint_from_str(&checkpoint_to_string(&a)).unwrap();
        assert_eq!(a.spec, b.spec);
        for ((wa, ba), (wb, bb)) in a.layers.iter().zip(&b.layers) {
            for (x, y) in wa.data.iter().zip(&wb.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in ba.data.iter().zip(&bb.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn file_round_trip_works() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let a = net();
        save_checkpoint(&a, &path).unwrap();
        let b = load_checkpoint(&path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        assert!(checkpoint_from_str("something else\n").is_err());
        let full = checkpoint_to_string(&net());
        let cut: String = full.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(checkpoint_from_str(&cut).is_err());
        // Flipping the end marker off must fail too.
        let no_end = full.replace("\nend\n", "\n");
        assert!(checkpoint_from_str(&no_end).is_err());
    }

    #[test]
    fn rejects_shape_lies() {
        let full = checkpoint_to_string(&net());
        let lied = full.replace("layer 0 weight 3 5", "layer 0 weight 5 3");
        assert!(checkpoint_from_str(&lied).is_err());
    }
}
