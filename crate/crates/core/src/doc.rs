//! Self-describing `outtree-model/1` text documents.
//!
//! One entry per line, `key: type[shape] = values` or `key: str = text`.
//! Floats are written as C99 hexadecimal literals so that every bit of the
//! binary value survives a round trip.
//!
//! ```text
//! schema: str = outtree-model/1
//! family: str = gaussian
//! dim: u64[1] = 2
//! params: f64[14] = 0x1.8p+0 -0x1p-3 ...
//! ```

use std::fmt::Write;

use crate::error::{Error, Result};

pub const SCHEMA: &str = "outtree-model/1";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Ints { shape: Vec<usize>, data: Vec<u64> },
    Floats { shape: Vec<usize>, data: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    entries: Vec<(String, Value)>,
}

impl Document {
    /// A new document already carrying the schema line and the family tag.
    pub fn new(family: &str) -> Self {
        let mut d = Document::default();
        d.put_text("schema", SCHEMA);
        d.put_text("family", family);
        d
    }

    pub fn put_text(&mut self, key: &str, text: &str) {
        self.entries.push((key.to_string(), Value::Text(text.to_string())));
    }

    pub fn put_ints(&mut self, key: &str, shape: &[usize], data: Vec<u64>) {
        self.entries.push((key.to_string(), Value::Ints { shape: shape.to_vec(), data }));
    }

    pub fn put_floats(&mut self, key: &str, shape: &[usize], data: Vec<f64>) {
        self.entries.push((key.to_string(), Value::Floats { shape: shape.to_vec(), data }));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn text(&self, key: &str) -> Result<&str> {
        match self.get(key) {
            Some(Value::Text(t)) => Ok(t),
            _ => Err(missing(key, "str")),
        }
    }

    pub fn ints(&self, key: &str) -> Result<(&[usize], &[u64])> {
        match self.get(key) {
            Some(Value::Ints { shape, data }) => Ok((shape, data)),
            _ => Err(missing(key, "u64")),
        }
    }

    pub fn floats(&self, key: &str) -> Result<(&[usize], &[f64])> {
        match self.get(key) {
            Some(Value::Floats { shape, data }) => Ok((shape, data)),
            _ => Err(missing(key, "f64")),
        }
    }

    pub fn family(&self) -> Result<&str> {
        self.text("family")
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            match v {
                Value::Text(t) => writeln!(out, "{k}: str = {t}").unwrap(),
                Value::Ints { shape, data } => {
                    let vals: Vec<String> = data.iter().map(|x| x.to_string()).collect();
                    writeln!(out, "{k}: u64[{}] = {}", shape_str(shape), vals.join(" ")).unwrap()
                }
                Value::Floats { shape, data } => {
                    let vals: Vec<String> = data.iter().map(|&x| format_hex_f64(x)).collect();
                    writeln!(out, "{k}: f64[{}] = {}", shape_str(shape), vals.join(" ")).unwrap()
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Document(format!("line {}: {msg}", lineno + 1));
            let (key, rest) = line.split_once(':').ok_or_else(|| bad("expected `key: type = value`"))?;
            let (ty, value) = rest.split_once('=').ok_or_else(|| bad("missing `=`"))?;
            let ty = ty.trim();
            let value = value.trim();
            let key = key.trim().to_string();
            if ty == "str" {
                doc.entries.push((key, Value::Text(value.to_string())));
                continue;
            }
            let (kind, shape) = ty
                .strip_suffix(']')
                .and_then(|t| t.split_once('['))
                .ok_or_else(|| bad("expected `type[shape]`"))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad shape"))?;
            let expected: usize = shape.iter().product();
            let tokens: Vec<&str> = value.split_whitespace().collect();
            if tokens.len() != expected {
                return Err(bad(&format!("shape needs {expected} values, found {}", tokens.len())));
            }
            let v = match kind {
                "u64" => Value::Ints {
                    shape,
                    data: tokens
                        .iter()
                        .map(|t| t.parse::<u64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("bad integer"))?,
                },
                "f64" => Value::Floats {
                    shape,
                    data: tokens
                        .iter()
                        .map(|t| parse_hex_f64(t).ok_or_else(|| bad(&format!("bad float {t:?}"))))
                        .collect::<Result<_>>()?,
                },
                other => return Err(bad(&format!("unknown type {other:?}"))),
            };
            doc.entries.push((key, v));
        }
        let schema = doc.text("schema")?;
        if schema != SCHEMA {
            return Err(Error::Document(format!("unsupported schema {schema:?}")));
        }
        Ok(doc)
    }
}

fn missing(key: &str, ty: &str) -> Error {
    Error::Document(format!("missing or mistyped entry {key:?} (expected {ty})"))
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
}

/// Hexadecimal float literal, e.g. `0x1.8p+1` for 3.0.
pub fn format_hex_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    let mut frac = format!("{mant:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let exp_sign = if exp >= 0 { "+" } else { "" };
    if frac.is_empty() {
        format!("{sign}0x{lead}p{exp_sign}{exp}")
    } else {
        format!("{sign}0x{lead}.{frac}p{exp_sign}{exp}")
    }
}

/// Parses the output of [`format_hex_f64`] (and ordinary decimal literals).
pub fn parse_hex_f64(s: &str) -> Option<f64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = match body {
        "nan" => f64::NAN,
        "inf" => f64::INFINITY,
        _ => match body.strip_prefix("0x") {
            None => body.parse::<f64>().ok()?,
            Some(hex) => {
                let (mant_str, exp_str) = hex.split_once('p')?;
                let exp: i64 = exp_str.parse().ok()?;
                let (int_part, frac_part) = mant_str.split_once('.').unwrap_or((mant_str, ""));
                if int_part != "0" && int_part != "1" || frac_part.len() > 13 {
                    return None;
                }
                let lead = u64::from_str_radix(int_part, 16).ok()?;
                let frac = if frac_part.is_empty() {
                    0
                } else {
                    u64::from_str_radix(frac_part, 16).ok()? << (4 * (13 - frac_part.len()))
                };
                let bits = match (lead, frac) {
                    (0, 0) => 0,
                    (0, f) if exp == -1022 => f,
                    (1, f) if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << 52) | f,
                    _ => return None,
                };
                f64::from_bits(bits)
            }
        },
    };
    Some(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hex_literals() {
        assert_eq!(format_hex_f64(1.0), "0x1p+0");
        assert_eq!(format_hex_f64(3.0), "0x1.8p+1");
        assert_eq!(format_hex_f64(-0.125), "-0x1p-3");
        assert_eq!(format_hex_f64(0.0), "0x0p+0");
        assert_eq!(format_hex_f64(-0.0), "-0x0p+0");
        assert_eq!(parse_hex_f64("0x1.8p+1"), Some(3.0));
        assert_eq!(parse_hex_f64("2.5"), Some(2.5));
        assert_eq!(parse_hex_f64("0x2p+0"), None);
    }

    #[test]
    fn document_roundtrip() {
        let mut d = Document::new("gaussian");
        d.put_ints("dim", &[1], vec![2]);
        d.put_floats("params", &[2, 2], vec![0.1, -1e-310, f64::MAX, 1.0 / 3.0]);
        let text = d.render();
        let back = Document::parse(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.family().unwrap(), "gaussian");
        assert!(Document::parse("schema: str = other/2\n").is_err());
        assert!(Document::parse("schema: str = outtree-model/1\nx: f64[3] = 0x1p+0\n").is_err());
    }

    proptest! {
        #[test]
        fn hex_float_roundtrip_is_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            let back = parse_hex_f64(&format_hex_f64(x)).unwrap();
            if x.is_nan() {
                prop_assert!(back.is_nan());
            } else {
                prop_assert_eq!(back.to_bits(), x.to_bits());
            }
        }
    }
}
