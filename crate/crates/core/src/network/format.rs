//! Plain-text network files.
//!
//! ```text
//! SPLINELENS-NET v1
//! widths 2 6 1
//! activation leaky 0.1
//! W 1
//! <D_1 rows of D_0 values>
//! c 1
//! <bias row, unused while BN is active>
//! BN 1
//! <mu row> <sigma row> <gamma row> <beta row>
//! W 2
//! <D_2 rows of D_1 values>
//! c 2
//! <bias row>
//! ```
//!
//! Values are written with 17 significant digits so a parse reproduces every
//! `f64` exactly. Blank lines and `#` comments are ignored.

use std::fmt::Write;

use ndarray::{Array1, Array2};

use super::{Activation, BNState, BnParams, Layer, NetworkSpec};
use crate::error::{Error, Result};

pub const FORMAT_HEADER: &str = "SPLINELENS-NET v1";

fn fmt_row<'a>(out: &mut String, row: impl IntoIterator<Item = &'a f64>) {
    let cells: Vec<String> = row.into_iter().map(|v| format!("{v:.16e}")).collect();
    out.push_str(&cells.join(" "));
    out.push('\n');
}

pub fn write_network(net: &NetworkSpec, bn: &BNState) -> String {
    let mut out = String::new();
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    let widths: Vec<String> = net.widths().iter().map(|w| w.to_string()).collect();
    writeln!(out, "widths {}", widths.join(" ")).unwrap();
    match net.activation() {
        Activation::Relu => out.push_str("activation relu\n"),
        Activation::Abs => out.push_str("activation abs\n"),
        Activation::LeakyRelu(a) => writeln!(out, "activation leaky {a:.16e}").unwrap(),
    }
    for l in 1..=net.depth() {
        writeln!(out, "W {l}").unwrap();
        for row in net.weights(l).rows() {
            fmt_row(&mut out, row.iter());
        }
        writeln!(out, "c {l}").unwrap();
        fmt_row(&mut out, net.bias(l).iter());
        if net.has_bn(l) {
            if let Some(p) = bn.get(l) {
                writeln!(out, "BN {l}").unwrap();
                for v in [&p.mu, &p.sigma, &p.gamma, &p.beta] {
                    fmt_row(&mut out, v.iter());
                }
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> =
            Box::new(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#')));
        Lines { inner: it.peekable() }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner.next().ok_or(Error::Parse { line: 0, msg: "unexpected end of file".into() })
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>> {
        let (line, text) = self.next()?;
        let vals = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("bad number {t:?}: {e}") }))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != len {
            return Err(Error::Parse { line, msg: format!("expected {len} values, found {}", vals.len()) });
        }
        Ok(vals)
    }
}

fn keyword<'a>(line: usize, text: &'a str, key: &str) -> Result<&'a str> {
    text.strip_prefix(key)
        .filter(|rest| rest.is_empty() || rest.starts_with(' '))
        .map(str::trim)
        .ok_or_else(|| Error::Parse { line, msg: format!("expected `{key}`, found {text:?}") })
}

fn layer_index(line: usize, rest: &str, expected: usize) -> Result<()> {
    match rest.parse::<usize>() {
        Ok(l) if l == expected => Ok(()),
        _ => Err(Error::Parse { line, msg: format!("expected layer {expected}, found {rest:?}") }),
    }
}

/// Parse a network file. Loaded BN statistics are marked [`super::BnMode::Fixed`].
pub fn parse_network(text: &str) -> Result<(NetworkSpec, BNState)> {
    let mut lines = Lines::new(text);
    let (line, head) = lines.next()?;
    if head != FORMAT_HEADER {
        return Err(Error::Parse { line, msg: format!("missing `{FORMAT_HEADER}` header") });
    }
    let (line, text) = lines.next()?;
    let widths = keyword(line, text, "widths")?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::Parse { line, msg: format!("bad width {t:?}") }))
        .collect::<Result<Vec<_>>>()?;
    if widths.len() < 2 {
        return Err(Error::Parse { line, msg: "need at least input and output widths".into() });
    }
    let (line, text) = lines.next()?;
    let act = keyword(line, text, "activation")?;
    let activation = match act.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["relu"] => Activation::Relu,
        ["abs"] => Activation::Abs,
        ["leaky", a] => {
            let a = a.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("bad leaky slope {a:?}") })?;
            Activation::leaky(a).map_err(|e| Error::Parse { line, msg: e.to_string() })?
        }
        _ => return Err(Error::Parse { line, msg: format!("unknown activation {act:?}") }),
    };

    let depth = widths.len() - 1;
    let mut layers = Vec::with_capacity(depth);
    let mut bn_layers = Vec::new();
    let mut pending_bn = Vec::new();
    for l in 1..=depth {
        let (rows, cols) = (widths[l], widths[l - 1]);
        let (line, text) = lines.next()?;
        layer_index(line, keyword(line, text, "W")?, l)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(lines.row(cols)?);
        }
        let weights = Array2::from_shape_vec((rows, cols), data).expect("row lengths checked");
        let mut bias = Array1::zeros(rows);
        while let Some(&(line, text)) = lines.inner.peek() {
            if let Ok(rest) = keyword(line, text, "c") {
                lines.next()?;
                layer_index(line, rest, l)?;
                bias = Array1::from(lines.row(rows)?);
            } else if let Ok(rest) = keyword(line, text, "BN") {
                lines.next()?;
                layer_index(line, rest, l)?;
                let mut rows4 = Vec::with_capacity(4);
                for _ in 0..4 {
                    rows4.push(Array1::from(lines.row(rows)?));
                }
                let beta = rows4.pop().unwrap();
                let gamma = rows4.pop().unwrap();
                let sigma = rows4.pop().unwrap();
                let mu = rows4.pop().unwrap();
                bn_layers.push(l);
                pending_bn.push((l, BnParams { mu, sigma, gamma, beta }));
            } else {
                break;
            }
        }
        layers.push(Layer::new(weights, bias));
    }
    if let Some(&(line, text)) = lines.inner.peek() {
        return Err(Error::Parse { line, msg: format!("trailing content {text:?}") });
    }
    let net = NetworkSpec::new(activation, layers, &bn_layers)?;
    let mut bn = BNState::for_network(&net);
    for (l, p) in pending_bn {
        bn.set(l, p);
    }
    bn.validate(&net)?;
    Ok((net, bn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_net;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..500, bn in any::<bool>(), abs in any::<bool>()) {
            let act = if abs { Activation::Abs } else { Activation::LeakyRelu(0.1 + (seed % 7) as f64 / 10.0) };
            let (net, state) = random_net(seed, &[2, 3, 4, 1], act, bn);
            let text = write_network(&net, &state);
            let (net2, state2) = parse_network(&text).unwrap();
            prop_assert_eq!(&net2, &net);
            for l in net.bn_layers() {
                prop_assert_eq!(state2.get(l), state.get(l));
            }
            prop_assert_eq!(write_network(&net2, &state2), text);
        }
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(matches!(parse_network("nope"), Err(Error::Parse { line: 1, .. })));
        let bad = "SPLINELENS-NET v1\nwidths 2 1\nactivation relu\nW 1\n1 2 3\n";
        assert!(matches!(parse_network(bad), Err(Error::Parse { line: 5, .. })));
        let bad_act = "SPLINELENS-NET v1\nwidths 2 1\nactivation tanh\n";
        assert!(parse_network(bad_act).is_err());
    }

    #[test]
    fn parses_hand_written_file() {
        let text = "SPLINELENS-NET v1\n# toy\nwidths 2 2 1\nactivation abs\nW 1\n1 0\n0 1\nBN 1\n0 0\n1 1\n1 1\n0 0\nW 2\n1 1\n";
        let (net, bn) = parse_network(text).unwrap();
        assert_eq!(net.widths(), vec![2, 2, 1]);
        assert!(net.has_bn(1));
        assert_eq!(bn.get(1).unwrap().sigma[1], 1.0);
        assert_eq!(net.bias(2)[0], 0.0);
    }
}
