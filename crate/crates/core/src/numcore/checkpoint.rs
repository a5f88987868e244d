//! Plain-text checkpoint documents.
//!
//! Every float is written in scientific notation with 17 significant digits,
//! which round-trips `f64` exactly. A document is a sequence of records:
//!
//! ```text
//! param <key> <value>
//! vector <key> <len>
//! <len values separated by spaces>
//! tensor <key> <rows> <cols>
//! <one line per row>
//! mlp <key> <size_0> <size_1> ... <size_L>
//! <for each layer: one line per weight row, then one bias line>
//! ```
//!
//! Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use super::mlp::MlpParams;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const MAGIC: &str = "# coupled-vae checkpoint v1";

#[inline]
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Param(String, String),
    Vector(String, Vec<f64>),
    Tensor(String, Tensor2),
    Mlp(String, MlpParams),
}

impl Record {
    pub fn key(&self) -> &str {
        match self {
            Record::Param(k, _) | Record::Vector(k, _) | Record::Tensor(k, _) | Record::Mlp(k, _) => k,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextDocument {
    records: Vec<Record>,
}

fn check_key(key: &str) {
    assert!(
        !key.is_empty() && !key.contains(char::is_whitespace),
        "checkpoint keys must be non-empty and whitespace-free: {key:?}"
    );
}

fn write_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

impl TextDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn push_param(&mut self, key: &str, value: impl ToString) {
        check_key(key);
        let value = value.to_string();
        assert!(!value.contains('\n'), "parameter values must be single-line");
        self.records.push(Record::Param(key.into(), value));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push_param(key, fmt_f64(value));
    }

    pub fn push_vector(&mut self, key: &str, values: &[f64]) {
        check_key(key);
        self.records.push(Record::Vector(key.into(), values.to_vec()));
    }

    pub fn push_tensor(&mut self, key: &str, t: &Tensor2) {
        check_key(key);
        self.records.push(Record::Tensor(key.into(), t.clone()));
    }

    pub fn push_mlp(&mut self, key: &str, p: &MlpParams) {
        check_key(key);
        self.records.push(Record::Mlp(key.into(), p.clone()));
    }

    fn find(&self, key: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.key() == key)
    }

    fn missing(key: &str) -> Error {
        Error::Parse {
            line: 0,
            message: format!("missing record {key:?}"),
        }
    }

    pub fn param(&self, key: &str) -> Result<&str> {
        match self.find(key) {
            Some(Record::Param(_, v)) => Ok(v),
            _ => Err(Self::missing(key)),
        }
    }

    pub fn opt_param(&self, key: &str) -> Option<&str> {
        match self.find(key) {
            Some(Record::Param(_, v)) => Some(v),
            _ => None,
        }
    }

    pub fn parse_param<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.param(key)?;
        raw.parse().map_err(|_| Error::Parse {
            line: 0,
            message: format!("record {key:?} has unparsable value {raw:?}"),
        })
    }

    pub fn vector(&self, key: &str) -> Result<&[f64]> {
        match self.find(key) {
            Some(Record::Vector(_, v)) => Ok(v),
            _ => Err(Self::missing(key)),
        }
    }

    pub fn tensor(&self, key: &str) -> Result<&Tensor2> {
        match self.find(key) {
            Some(Record::Tensor(_, t)) => Ok(t),
            _ => Err(Self::missing(key)),
        }
    }

    pub fn opt_tensor(&self, key: &str) -> Option<&Tensor2> {
        match self.find(key) {
            Some(Record::Tensor(_, t)) => Some(t),
            _ => None,
        }
    }

    pub fn mlp(&self, key: &str) -> Result<&MlpParams> {
        match self.find(key) {
            Some(Record::Mlp(_, p)) => Ok(p),
            _ => Err(Self::missing(key)),
        }
    }

    pub fn opt_mlp(&self, key: &str) -> Option<&MlpParams> {
        match self.find(key) {
            Some(Record::Mlp(_, p)) => Some(p),
            _ => None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for r in &self.records {
            match r {
                Record::Param(k, v) => {
                    let _ = writeln!(out, "param {k} {v}");
                }
                Record::Vector(k, v) => {
                    let _ = writeln!(out, "vector {k} {}", v.len());
                    write_row(&mut out, v);
                }
                Record::Tensor(k, t) => {
                    let _ = writeln!(out, "tensor {k} {} {}", t.rows(), t.cols());
                    for row in 0..t.rows() {
                        write_row(&mut out, t.row(row));
                    }
                }
                Record::Mlp(k, p) => {
                    let sizes: Vec<String> = p.layer_sizes().iter().map(|s| s.to_string()).collect();
                    let _ = writeln!(out, "mlp {k} {}", sizes.join(" "));
                    for (w, b) in p.weights().iter().zip(p.biases()) {
                        for row in 0..w.rows() {
                            write_row(&mut out, w.row(row));
                        }
                        write_row(&mut out, b);
                    }
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut doc = TextDocument::new();
        while let Some((lineno, line)) = lines.next() {
            let err = |message: String| Error::Parse { line: lineno, message };
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap_or_default();
            let key = parts
                .next()
                .ok_or_else(|| err(format!("record {kind:?} lacks a key")))?
                .to_string();
            let mut next_row = |expect: usize| -> Result<Vec<f64>> {
                let (n, l) = lines.next().ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("record {key:?} ends early"),
                })?;
                let row = parse_floats(l, n)?;
                if row.len() != expect {
                    return Err(Error::Parse {
                        line: n,
                        message: format!("expected {expect} values, found {}", row.len()),
                    });
                }
                Ok(row)
            };
            let dims: Vec<usize> = match kind {
                "param" => Vec::new(),
                _ => parts
                    .clone()
                    .map(|s| s.parse::<usize>().map_err(|_| err(format!("bad dimension {s:?}"))))
                    .collect::<Result<_>>()?,
            };
            let record = match kind {
                "param" => {
                    let value = line
                        .splitn(3, char::is_whitespace)
                        .nth(2)
                        .map(str::trim)
                        .unwrap_or_default()
                        .to_string();
                    Record::Param(key, value)
                }
                "vector" => {
                    let [len] = dims[..] else {
                        return Err(err("vector needs one length".into()));
                    };
                    let values = if len == 0 { Vec::new() } else { next_row(len)? };
                    Record::Vector(key, values)
                }
                "tensor" => {
                    let [rows, cols] = dims[..] else {
                        return Err(err("tensor needs rows and cols".into()));
                    };
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        data.extend(next_row(cols)?);
                    }
                    Record::Tensor(key, Tensor2::new(rows, cols, data)?)
                }
                "mlp" => {
                    if dims.len() < 2 {
                        return Err(err("mlp needs at least two layer sizes".into()));
                    }
                    let mut weights = Vec::new();
                    let mut biases = Vec::new();
                    for w in dims.windows(2) {
                        let mut data = Vec::with_capacity(w[0] * w[1]);
                        for _ in 0..w[1] {
                            data.extend(next_row(w[0])?);
                        }
                        weights.push(Tensor2::new(w[1], w[0], data)?);
                        biases.push(next_row(w[1])?);
                    }
                    Record::Mlp(key, MlpParams::from_parts(weights, biases)?)
                }
                other => return Err(err(format!("unknown record kind {other:?}"))),
            };
            doc.records.push(record);
        }
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn parse_floats(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|s| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad float {s:?}"),
            })
        })
        .collect()
}
