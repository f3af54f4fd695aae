//! Text checkpoints:
//!
//! ```text
//! pointprops-ckpt v1
//! topology in_channels=1 desc_len=16
//! encoder.conv1a.weight 8,1,3,3 <72 floats>
//! encoder.conv1a.bias 8 <8 floats>
//! ...
//! ```
//!
//! Floats are written with 17 significant digits and reload bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelParams, Topology, LAYER_NAMES};

pub const CHECKPOINT_HEADER: &str = "pointprops-ckpt v1";

pub fn write_checkpoint(params: &ModelParams) -> String {
    let topo = params.topology();
    let mut s = String::new();
    writeln!(s, "{CHECKPOINT_HEADER}").unwrap();
    writeln!(s, "topology in_channels={} desc_len={}", topo.in_channels, topo.desc_len).unwrap();
    for (name, layer) in LAYER_NAMES.iter().zip(params.layers()) {
        let record = |s: &mut String, suffix: &str, shape: String, vals: &[f64]| {
            write!(s, "{name}.{suffix} {shape}").unwrap();
            for v in vals {
                write!(s, " {v:.16e}").unwrap();
            }
            s.push('\n');
        };
        record(
            &mut s,
            "weight",
            format!("{},{},3,3", layer.out_channels, layer.in_channels),
            &layer.weight,
        );
        record(&mut s, "bias", format!("{}", layer.out_channels), &layer.bias);
    }
    s
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("checkpoint line {line}: {msg}"))
}

pub fn read_checkpoint(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, l)) if l == CHECKPOINT_HEADER => {}
        other => {
            return Err(parse_err(1, format!("expected header {CHECKPOINT_HEADER:?}, found {:?}", other.map(|o| o.1))))
        }
    }
    let (ln, topo_line) = lines.next().ok_or_else(|| parse_err(2, "missing topology line"))?;
    let mut in_channels = None;
    let mut desc_len = None;
    let mut toks = topo_line.split_whitespace();
    if toks.next() != Some("topology") {
        return Err(parse_err(ln, "expected topology record"));
    }
    for tok in toks {
        let (k, v) = tok.split_once('=').ok_or_else(|| parse_err(ln, tok))?;
        let v: usize = v.parse().map_err(|e| parse_err(ln, e))?;
        match k {
            "in_channels" => in_channels = Some(v),
            "desc_len" => desc_len = Some(v),
            _ => return Err(parse_err(ln, format!("unknown topology key {k}"))),
        }
    }
    let topo = Topology::new(
        in_channels.ok_or_else(|| parse_err(ln, "missing in_channels"))?,
        desc_len.ok_or_else(|| parse_err(ln, "missing desc_len"))?,
    )?;
    let mut params = ModelParams::zeros(topo);
    let records: Vec<(usize, &str)> = lines.filter(|(_, l)| !l.is_empty()).collect();
    if records.len() != 2 * LAYER_NAMES.len() {
        return Err(Error::Parse(format!(
            "checkpoint has {} parameter records, expected {}",
            records.len(),
            2 * LAYER_NAMES.len()
        )));
    }
    for (k, layer) in params.layers_mut().iter_mut().enumerate() {
        for (slot, suffix) in [(0usize, "weight"), (1, "bias")] {
            let (ln, line) = records[2 * k + slot];
            let mut toks = line.split_whitespace();
            let expected_name = format!("{}.{suffix}", LAYER_NAMES[k]);
            if toks.next() != Some(expected_name.as_str()) {
                return Err(parse_err(ln, format!("expected record {expected_name}")));
            }
            let shape = toks.next().ok_or_else(|| parse_err(ln, "missing shape"))?;
            let expected_shape = if slot == 0 {
                format!("{},{},3,3", layer.out_channels, layer.in_channels)
            } else {
                format!("{}", layer.out_channels)
            };
            if shape != expected_shape {
                return Err(parse_err(ln, format!("shape {shape} does not match topology ({expected_shape})")));
            }
            let dst = if slot == 0 { &mut layer.weight } else { &mut layer.bias };
            let vals = toks
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(ln, format!("{t:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != dst.len() {
                return Err(parse_err(ln, format!("{} values, expected {}", vals.len(), dst.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(ln, "non-finite parameter"));
            }
            dst.copy_from_slice(&vals);
        }
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ModelParams::init(42, 3, 16).unwrap();
        *p.scalar_mut(0) = 1.0 / 3.0;
        *p.scalar_mut(1) = -5e-310;
        let back = read_checkpoint(&write_checkpoint(&p)).unwrap();
        for (a, b) in p.scalars().zip(back.scalars()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_wrong_header_and_truncation() {
        let p = ModelParams::init(1, 1, 4).unwrap();
        let text = write_checkpoint(&p);
        assert!(read_checkpoint(&text.replace("v1", "v2")).is_err());
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(read_checkpoint(&truncated).is_err());
    }
}
