use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::objectives::{dot, sigmoid, Dataset, Example, ModelParams};
use crate::rng::{stream, Purpose};
use crate::secure_agg::ratio_of_uniforms_gaussian;

fn parse_err<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        column,
        message: message.into(),
    })
}

fn parse_label(token: &str, line: usize, column: usize) -> Result<u8> {
    match token {
        "+1" | "1" | "1.0" | "+1.0" => Ok(1),
        "-1" | "0" | "-1.0" | "0.0" => Ok(0),
        _ => parse_err(line, column, format!("label {token:?} is not one of -1, 0, 1, +1")),
    }
}

/// Parse the sparse `label idx:val ...` text format (1-based indices) into a dense
/// dataset of dimension `dim`. Blank lines and `#` comments are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, dim: usize) -> Result<Dataset> {
    if dim == 0 {
        return invalid("dimension must be >= 1");
    }
    let mut examples = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("");
        // (column, token) pairs, columns 1-based in characters.
        let mut tokens = content
            .char_indices()
            .filter(|&(i, c)| !c.is_whitespace() && (i == 0 || content[..i].ends_with(char::is_whitespace)))
            .map(|(i, _)| {
                let rest = &content[i..];
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                (content[..i].chars().count() + 1, &rest[..end])
            });
        let Some((col, label_tok)) = tokens.next() else {
            continue;
        };
        let label = parse_label(label_tok, line_no, col)?;
        let mut features = vec![0.0; dim];
        let mut last_idx = 0;
        for (col, tok) in tokens {
            let Some((idx_s, val_s)) = tok.split_once(':') else {
                return parse_err(line_no, col, format!("expected idx:val, got {tok:?}"));
            };
            let idx: usize = idx_s.parse().map_err(|_| Error::Parse {
                line: line_no,
                column: col,
                message: format!("bad feature index {idx_s:?}"),
            })?;
            if idx == 0 || idx > dim {
                return parse_err(line_no, col, format!("feature index {idx} outside 1..={dim}"));
            }
            if idx <= last_idx {
                return parse_err(line_no, col, format!("feature index {idx} not increasing"));
            }
            last_idx = idx;
            let val: f64 = val_s.parse().map_err(|_| Error::Parse {
                line: line_no,
                column: col + idx_s.len() + 1,
                message: format!("bad feature value {val_s:?}"),
            })?;
            if !val.is_finite() {
                return parse_err(
                    line_no,
                    col + idx_s.len() + 1,
                    format!("feature value {val_s:?} is not finite"),
                );
            }
            features[idx - 1] = val;
        }
        examples.push(Example::new(features, label)?);
    }
    if examples.is_empty() {
        return parse_err(0, 0, "no examples found");
    }
    Dataset::new(examples, dim)
}

pub fn load_libsvm(path: impl AsRef<Path>, dim: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_libsvm(BufReader::new(file), dim)
}

/// Largest feature index appearing in a sparse file.
pub fn infer_libsvm_dim(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut dim = 0;
    for line in BufReader::new(file).lines() {
        let line = line?;
        for tok in line.split('#').next().unwrap_or("").split_whitespace().skip(1) {
            if let Some(idx) = tok.split_once(':').and_then(|(i, _)| i.parse::<usize>().ok()) {
                dim = dim.max(idx);
            }
        }
    }
    if dim == 0 {
        return invalid(format!("{}: no feature indices found", path.display()));
    }
    Ok(dim)
}

/// Write `data` in the sparse format, labels as `+1`/`-1`, zeros omitted.
pub fn write_libsvm<W: Write>(data: &Dataset, mut writer: W) -> Result<()> {
    for ex in data.examples() {
        write!(writer, "{}", if ex.label == 1 { "+1" } else { "-1" })?;
        for (j, &x) in ex.features.iter().enumerate() {
            if x != 0.0 {
                write!(writer, " {}:{}", j + 1, x)?;
            }
        }
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

/// Two Gaussian blobs centred at `-2.5 u` (label 0) and `+2.5 u` (label 1) for a random
/// unit vector `u`, with identity covariance. Labels alternate, so both classes occur.
pub fn gen_synthetic(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d == 0 {
        return invalid(format!("synthetic data needs n >= 2 and d >= 1, got n = {n}, d = {d}"));
    }
    const SEPARATION: f64 = 2.5;
    let mut rng = stream(seed, Purpose::Synthetic, 0);
    let mut u: Vec<f64> = (0..d).map(|_| ratio_of_uniforms_gaussian(&mut rng)).collect();
    let len = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len > 0.0 {
        u.iter_mut().for_each(|x| *x /= len);
    } else {
        u[0] = 1.0;
    }
    let examples = (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let features = u
                .iter()
                .map(|&uj| sign * SEPARATION * uj + ratio_of_uniforms_gaussian(&mut rng))
                .collect();
            Example::new(features, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, d)
}

/// Fraction of `test` misclassified when predicting 1 iff `sigmoid(x^T theta) >= 0.5`.
pub fn evaluate(theta: &ModelParams, test: &Dataset) -> Result<f64> {
    if theta.dim() != test.dim() {
        return invalid(format!(
            "parameter dimension {} != test dimension {}",
            theta.dim(),
            test.dim()
        ));
    }
    let wrong = test
        .examples()
        .iter()
        .filter(|ex| {
            let predicted = u8::from(sigmoid(dot(&theta.0, &ex.features)) >= 0.5);
            predicted != ex.label
        })
        .count();
    Ok(wrong as f64 / test.len() as f64)
}
