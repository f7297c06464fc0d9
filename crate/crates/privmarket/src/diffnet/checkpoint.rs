//! Plain-text checkpoint format for sets of named networks.
//!
//! Layout (line-oriented, whitespace-separated, UTF-8):
//!
//! ```text
//! privmarket-checkpoint v1
//! meta <key> <value…>          # zero or more manifest entries, in order
//! net <name>
//! dims <d0> <d1> … <dk>
//! activation <identity|sigmoid|softmax>
//! layer <index> <out> <in>
//! <out lines of `in` weight values, row-major>
//! <one line of `out` bias values>
//! …                            # further layers, further nets
//! end
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write → read cycle reproduces every parameter bit-for-bit. The format is
//! intentionally diff-able and greppable; checkpoints here are tens of
//! thousands of parameters, not billions.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::diffnet::{Layer, Mlp, OutputActivation};
use crate::error::{Error, Result};

/// Magic first line of every checkpoint.
pub const CHECKPOINT_HEADER: &str = "privmarket-checkpoint v1";

/// One named network recovered from a checkpoint.
#[derive(Debug, Clone)]
pub struct CheckpointSection {
    /// Section name (e.g. `header`, `alloc_head`).
    pub name: String,
    /// The reconstructed network.
    pub net: Mlp,
}

/// Renders manifest entries and networks into checkpoint text.
pub fn render_checkpoint(manifest: &[(String, String)], nets: &[(&str, &Mlp)]) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    for (key, value) in manifest {
        out.push_str("meta ");
        out.push_str(key);
        out.push(' ');
        out.push_str(value);
        out.push('\n');
    }
    for (name, net) in nets {
        out.push_str("net ");
        out.push_str(name);
        out.push('\n');
        out.push_str("dims");
        for d in &net.layer_dims {
            out.push(' ');
            out.push_str(&d.to_string());
        }
        out.push('\n');
        out.push_str("activation ");
        out.push_str(net.output_activation.as_str());
        out.push('\n');
        for (idx, layer) in net.layers.iter().enumerate() {
            let (rows, cols) = layer.weight.dim();
            out.push_str(&format!("layer {idx} {rows} {cols}\n"));
            for row in layer.weight.rows() {
                push_floats(&mut out, row.iter());
            }
            push_floats(&mut out, layer.bias.iter());
        }
    }
    out.push_str("end\n");
    out
}

fn push_floats<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&format!("{v}"));
    }
    out.push('\n');
}

/// Parses checkpoint text back into manifest entries and networks.
pub fn parse_checkpoint(text: &str) -> Result<(Vec<(String, String)>, Vec<CheckpointSection>)> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| Error::invalid(format!("checkpoint line {}: {msg}", line + 1));

    let (first_no, first) = lines
        .next()
        .ok_or_else(|| Error::invalid("empty checkpoint"))?;
    if first.trim() != CHECKPOINT_HEADER {
        return Err(bad(first_no, format!("expected '{CHECKPOINT_HEADER}'")));
    }

    let mut manifest = Vec::new();
    let mut sections: Vec<CheckpointSection> = Vec::new();
    let mut saw_end = false;

    while let Some((no, raw)) = lines.next() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        match words.next().unwrap() {
            "meta" => {
                let key = words
                    .next()
                    .ok_or_else(|| bad(no, "meta needs a key".into()))?;
                let value = words.collect::<Vec<_>>().join(" ");
                manifest.push((key.to_string(), value));
            }
            "net" => {
                let name = words
                    .next()
                    .ok_or_else(|| bad(no, "net needs a name".into()))?
                    .to_string();
                let net = parse_net(&mut lines, &bad)?;
                sections.push(CheckpointSection { name, net });
            }
            "end" => {
                saw_end = true;
                break;
            }
            other => return Err(bad(no, format!("unexpected token '{other}'"))),
        }
    }
    if !saw_end {
        return Err(Error::invalid("checkpoint missing 'end' terminator"));
    }
    Ok((manifest, sections))
}

fn parse_net<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    bad: &impl Fn(usize, String) -> Error,
) -> Result<Mlp> {
    let (no, dims_line) = lines
        .next()
        .ok_or_else(|| Error::invalid("checkpoint truncated before dims"))?;
    let mut words = dims_line.trim().split_whitespace();
    if words.next() != Some("dims") {
        return Err(bad(no, "expected 'dims'".into()));
    }
    let layer_dims: Vec<usize> = words
        .map(|w| w.parse::<usize>().map_err(|e| bad(no, format!("bad dim '{w}': {e}"))))
        .collect::<Result<_>>()?;
    if layer_dims.len() < 2 {
        return Err(bad(no, "need at least two dims".into()));
    }

    let (no, act_line) = lines
        .next()
        .ok_or_else(|| Error::invalid("checkpoint truncated before activation"))?;
    let mut words = act_line.trim().split_whitespace();
    if words.next() != Some("activation") {
        return Err(bad(no, "expected 'activation'".into()));
    }
    let output_activation = OutputActivation::parse(
        words
            .next()
            .ok_or_else(|| bad(no, "activation needs a value".into()))?,
    )?;

    let mut layers = Vec::with_capacity(layer_dims.len() - 1);
    for (idx, pair) in layer_dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let (no, header) = lines
            .next()
            .ok_or_else(|| Error::invalid("checkpoint truncated before layer header"))?;
        let words: Vec<&str> = header.trim().split_whitespace().collect();
        if words.len() != 4 || words[0] != "layer" {
            return Err(bad(no, "expected 'layer <index> <out> <in>'".into()));
        }
        let (h_idx, h_out, h_in) = (
            words[1].parse::<usize>().map_err(|e| bad(no, e.to_string()))?,
            words[2].parse::<usize>().map_err(|e| bad(no, e.to_string()))?,
            words[3].parse::<usize>().map_err(|e| bad(no, e.to_string()))?,
        );
        if h_idx != idx || h_out != fan_out || h_in != fan_in {
            return Err(bad(
                no,
                format!("layer header {h_idx} {h_out} {h_in} does not match dims {idx} {fan_out} {fan_in}"),
            ));
        }
        let mut weight = Array2::zeros((fan_out, fan_in));
        for r in 0..fan_out {
            let row = parse_float_line(lines, fan_in, bad)?;
            for (c, v) in row.into_iter().enumerate() {
                weight[(r, c)] = v;
            }
        }
        let bias = Array1::from_vec(parse_float_line(lines, fan_out, bad)?);
        layers.push(Layer { weight, bias });
    }
    Ok(Mlp {
        layer_dims,
        layers,
        output_activation,
    })
}

fn parse_float_line<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    expected: usize,
    bad: &impl Fn(usize, String) -> Error,
) -> Result<Vec<f64>> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::invalid("checkpoint truncated inside parameter block"))?;
    let values: Vec<f64> = line
        .trim()
        .split_whitespace()
        .map(|w| w.parse::<f64>().map_err(|e| bad(no, format!("bad float '{w}': {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(bad(no, format!("expected {expected} values, found {}", values.len())));
    }
    Ok(values)
}

/// Writes a checkpoint file.
pub fn write_checkpoint(
    path: &Path,
    manifest: &[(String, String)],
    nets: &[(&str, &Mlp)],
) -> Result<()> {
    fs::write(path, render_checkpoint(manifest, nets))?;
    Ok(())
}

/// Reads a checkpoint file. Both I/O and format failures surface as parse
/// errors carrying the offending path, so callers can distinguish bad files
/// from bad arguments.
pub fn read_checkpoint(path: &Path) -> Result<(Vec<(String, String)>, Vec<CheckpointSection>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_checkpoint(&text).map_err(|e| match e {
        Error::InvalidArgument(message) => Error::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

/// FNV-1a hash of checkpoint text; used to fingerprint runs and verify that
/// two training invocations produced identical parameters.
pub fn checkpoint_hash(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
