//! Text file formats for coordinate tensors and Kruskal models.
//!
//! Tensor format (whitespace-separated, LF, UTF-8):
//! ```text
//! tensor N I_1 ... I_N P
//! i_1 ... i_N value      (P lines, 1-based indices, positive counts)
//! ```
//! Model format:
//! ```text
//! ktensor N R
//! I_1 ... I_N
//! lambda_1 ... lambda_R
//! matrix I_1 R
//! <I_1 rows of R values>
//! ...
//! ```
//! Reals are written with 17 significant digits so parse -> serialize ->
//! parse is the identity; tensor entries are serialized sorted
//! lexicographically by multi-index, making serialization canonical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{CpAprError, Result};
use crate::tensor::{KruskalModel, SparseCountTensor};

fn parse_err(line: usize, msg: impl Into<String>) -> CpAprError {
    CpAprError::Parse { line, msg: msg.into() }
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines(), lineno: 0 }
    }

    /// Next non-empty line with its 1-based number.
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for line in self.inner.by_ref() {
            self.lineno += 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.is_empty() {
                return Some((self.lineno, tokens));
            }
        }
        None
    }

    fn expect_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        self.next_tokens()
            .ok_or_else(|| parse_err(self.lineno + 1, format!("unexpected end of file, expected {what}")))
    }
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite {what} `{tok}`")));
    }
    Ok(v)
}

pub fn tensor_to_string(tensor: &SparseCountTensor) -> String {
    let mut out = String::new();
    out.push_str("tensor ");
    let _ = write!(out, "{}", tensor.order());
    for e in tensor.shape() {
        let _ = write!(out, " {e}");
    }
    let _ = writeln!(out, " {}", tensor.nnz());
    for (idx, v) in tensor.entries() {
        let mut first = true;
        for i in idx {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "{i}");
            first = false;
        }
        let _ = writeln!(out, " {v}");
    }
    out
}

pub fn tensor_from_string(text: &str) -> Result<SparseCountTensor> {
    let mut lines = Lines::new(text);
    let (lno, header) = lines.expect_tokens("tensor header")?;
    if header.first() != Some(&"tensor") {
        return Err(parse_err(lno, "expected header starting with `tensor`"));
    }
    if header.len() < 2 {
        return Err(parse_err(lno, "missing tensor order"));
    }
    let n = parse_usize(header[1], lno, "tensor order")?;
    if header.len() != n + 3 {
        return Err(parse_err(
            lno,
            format!("expected `tensor N {n} extents P`, got {} fields", header.len()),
        ));
    }
    let shape: Vec<usize> = header[2..2 + n]
        .iter()
        .map(|t| parse_usize(t, lno, "extent"))
        .collect::<Result<_>>()?;
    let p = parse_usize(header[2 + n], lno, "nonzero count")?;
    let mut entries = Vec::with_capacity(p);
    for _ in 0..p {
        let (lno, tokens) = lines.expect_tokens("a tensor entry")?;
        if tokens.len() != n + 1 {
            return Err(parse_err(
                lno,
                format!("expected {n} indices and a value, got {} fields", tokens.len()),
            ));
        }
        let idx: Vec<usize> = tokens[..n]
            .iter()
            .map(|t| parse_usize(t, lno, "index"))
            .collect::<Result<_>>()?;
        let value: u64 = tokens[n]
            .parse()
            .map_err(|_| parse_err(lno, format!("invalid count `{}`", tokens[n])))?;
        if value == 0 {
            return Err(parse_err(lno, "counts must be positive"));
        }
        entries.push((idx, value));
    }
    if let Some((lno, _)) = lines.next_tokens() {
        return Err(parse_err(lno, format!("trailing content after {p} entries")));
    }
    SparseCountTensor::new(shape, entries)
        .map_err(|e| parse_err(0, format!("invalid tensor: {e}")))
}

fn write_real(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

pub fn model_to_string(model: &KruskalModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ktensor {} {}", model.order(), model.rank());
    let shape = model.shape();
    let _ = writeln!(
        out,
        "{}",
        shape.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ")
    );
    for (i, w) in model.weights().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write_real(&mut out, *w);
    }
    out.push('\n');
    for a in model.factors() {
        let _ = writeln!(out, "matrix {} {}", a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            for r in 0..a.ncols() {
                if r > 0 {
                    out.push(' ');
                }
                write_real(&mut out, a[[i, r]]);
            }
            out.push('\n');
        }
    }
    out
}

pub fn model_from_string(text: &str) -> Result<KruskalModel> {
    let mut lines = Lines::new(text);
    let (lno, header) = lines.expect_tokens("ktensor header")?;
    if header.first() != Some(&"ktensor") || header.len() != 3 {
        return Err(parse_err(lno, "expected header `ktensor N R`"));
    }
    let n = parse_usize(header[1], lno, "model order")?;
    let rank = parse_usize(header[2], lno, "model rank")?;

    let (lno, shape_toks) = lines.expect_tokens("shape line")?;
    if shape_toks.len() != n {
        return Err(parse_err(lno, format!("expected {n} extents, got {}", shape_toks.len())));
    }
    let shape: Vec<usize> = shape_toks
        .iter()
        .map(|t| parse_usize(t, lno, "extent"))
        .collect::<Result<_>>()?;

    let (lno, weight_toks) = lines.expect_tokens("weights line")?;
    if weight_toks.len() != rank {
        return Err(parse_err(lno, format!("expected {rank} weights, got {}", weight_toks.len())));
    }
    let weights: Vec<f64> = weight_toks
        .iter()
        .map(|t| parse_f64(t, lno, "weight"))
        .collect::<Result<_>>()?;

    let mut factors = Vec::with_capacity(n);
    for &extent in &shape {
        let (lno, m) = lines.expect_tokens("matrix header")?;
        if m.len() != 3 || m[0] != "matrix" {
            return Err(parse_err(lno, "expected `matrix I R` header"));
        }
        let rows = parse_usize(m[1], lno, "row count")?;
        let cols = parse_usize(m[2], lno, "column count")?;
        if rows != extent || cols != rank {
            return Err(parse_err(
                lno,
                format!("matrix {rows}x{cols} does not match shape {extent}x{rank}"),
            ));
        }
        let mut a = Array2::<f64>::zeros((rows, rank));
        for i in 0..rows {
            let (lno, toks) = lines.expect_tokens("a matrix row")?;
            if toks.len() != rank {
                return Err(parse_err(lno, format!("expected {rank} values, got {}", toks.len())));
            }
            for (r, t) in toks.iter().enumerate() {
                a[[i, r]] = parse_f64(t, lno, "factor entry")?;
            }
        }
        factors.push(a);
    }
    if let Some((lno, _)) = lines.next_tokens() {
        return Err(parse_err(lno, "trailing content after the last factor matrix"));
    }
    KruskalModel::new(Array1::from_vec(weights), factors)
        .map_err(|e| parse_err(0, format!("invalid model: {e}")))
}

pub fn write_tensor(path: &Path, tensor: &SparseCountTensor) -> Result<()> {
    fs::write(path, tensor_to_string(tensor))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<SparseCountTensor> {
    tensor_from_string(&fs::read_to_string(path)?)
}

pub fn write_model(path: &Path, model: &KruskalModel) -> Result<()> {
    fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<KruskalModel> {
    model_from_string(&fs::read_to_string(path)?)
}
