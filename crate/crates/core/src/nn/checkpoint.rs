//! Plain-text network checkpoints.
//!
//! ```text
//! varinfer-network 1
//! layers <count>
//! layer <in> <out> <activation>
//! w <in·out values, row-major>
//! b <out values>
//! ...
//! ```
//!
//! Values are written with 17 significant digits so a dump read back
//! reproduces every parameter bit for bit.

use std::fmt::Write as _;

use super::matrix::Matrix;
use super::network::{Layer, Network};
use crate::error::{Error, Result};

pub const NETWORK_MAGIC: &str = "varinfer-network";
pub const NETWORK_VERSION: u32 = 1;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_network(net: &Network, out: &mut String) {
    let _ = writeln!(out, "{NETWORK_MAGIC} {NETWORK_VERSION}");
    let _ = writeln!(out, "layers {}", net.depth());
    for layer in net.layers() {
        let _ = writeln!(
            out,
            "layer {} {} {}",
            layer.input_dim(),
            layer.output_dim(),
            layer.activation
        );
        write_values(out, "w", layer.weights.data());
        write_values(out, "b", &layer.bias);
    }
}

fn write_values(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        out.push(' ');
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

pub fn network_to_string(net: &Network) -> String {
    let mut s = String::new();
    write_network(net, &mut s);
    s
}

/// Reads one network from a line iterator, leaving following lines untouched.
pub fn read_network<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Network> {
    let header = next_line(lines)?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(NETWORK_MAGIC) {
        return Err(Error::Checkpoint(format!(
            "expected {NETWORK_MAGIC} header, got {header:?}"
        )));
    }
    let version: u32 = parse(parts.next(), "version")?;
    if version != NETWORK_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported network version {version}"
        )));
    }
    let count: usize = parse(
        expect_tag(next_line(lines)?, "layers")?.first().copied(),
        "layer count",
    )?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let fields = expect_tag(next_line(lines)?, "layer")?;
        if fields.len() != 3 {
            return Err(Error::Checkpoint(
                "layer line needs <in> <out> <activation>".into(),
            ));
        }
        let input: usize = parse(Some(fields[0]), "layer input")?;
        let output: usize = parse(Some(fields[1]), "layer output")?;
        let activation = fields[2]
            .parse()
            .map_err(|e: Error| Error::Checkpoint(e.to_string()))?;
        let w = parse_values(expect_tag(next_line(lines)?, "w")?)?;
        let b = parse_values(expect_tag(next_line(lines)?, "b")?)?;
        let weights =
            Matrix::from_vec(input, output, w).map_err(|e| Error::Checkpoint(e.to_string()))?;
        layers.push(
            Layer::new(weights, b, activation).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
    }
    Network::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn network_from_str(s: &str) -> Result<Network> {
    let mut lines = s.lines();
    read_network(&mut lines)
}

pub(crate) fn next_line<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<&'a str> {
    lines
        .by_ref()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))
}

pub(crate) fn expect_tag<'a>(line: &'a str, tag: &str) -> Result<Vec<&'a str>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::Checkpoint(format!(
            "expected {tag:?} line, got {line:?}"
        )));
    }
    Ok(parts.collect())
}

pub(crate) fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("bad or missing {what}")))
}

fn parse_values(fields: Vec<&str>) -> Result<Vec<f64>> {
    fields
        .into_iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("bad number {f:?}")))
        })
        .collect()
}
