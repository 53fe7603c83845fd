//! Plain-text matrix, label and model files.
//!
//! Matrix format: a `rows cols` header line, then `rows` lines of `cols`
//! space-separated floats written with 17 significant digits. Label files
//! hold one integer per line. A model file is a sequence of named sections
//! (`[kernel]`, `[W]`, `[train]`, `[split]`, `[assignment]`), each followed by
//! its payload.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::Dataset;
use crate::discrepancy::{DomainSplit, ManifoldAssignment};
use crate::error::{Result, TmdaError};
use crate::kernels::KernelSpec;
use crate::solver::{Basis, ProjectionModel};

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(TmdaError::Parse {
        line,
        message: message.into(),
    })
}

/// Render a matrix in the text format.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 24 + 16);
    writeln!(out, "{} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            write!(out, "{:.16e}", m[(r, c)]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parse a matrix from `lines`, numbering errors from `first_line`.
fn parse_matrix_lines<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    first_line: usize,
) -> Result<DMatrix<f64>> {
    let Some((hline, header)) = lines.next() else {
        return parse_err(first_line, "missing `rows cols` header");
    };
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return parse_err(hline, format!("expected `rows cols`, got {header:?}"));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>().map_err(|_| TmdaError::Parse {
            line: hline,
            message: format!("bad dimension {s:?}"),
        })
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let Some((ln, text)) = lines.next() else {
            return parse_err(hline + r + 1, format!("expected {rows} rows, found {r}"));
        };
        let mut count = 0;
        for tok in text.split_whitespace() {
            if count == cols {
                return parse_err(ln, format!("row {} has more than {cols} values", r + 1));
            }
            m[(r, count)] = tok.parse::<f64>().map_err(|_| TmdaError::Parse {
                line: ln,
                message: format!("non-numeric token {tok:?}"),
            })?;
            count += 1;
        }
        if count != cols {
            return parse_err(
                ln,
                format!("row {} has {count} values, expected {cols}", r + 1),
            );
        }
    }
    Ok(m)
}

/// Parse a matrix document; trailing blank lines are allowed.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let m = parse_matrix_lines(&mut lines, 1)?;
    for (ln, rest) in lines {
        if !rest.trim().is_empty() {
            return parse_err(ln, "unexpected content after matrix");
        }
    }
    Ok(m)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let x = parse_matrix(&text)?;
    Dataset::new(x)
}

pub fn write_matrix(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    fs::write(path, format_matrix(&data.x))?;
    Ok(())
}

pub fn parse_labels(text: &str) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse::<i64>().map_err(|_| TmdaError::Parse {
            line: i + 1,
            message: format!("not an integer label: {t:?}"),
        })?);
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<i64>> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn format_labels<T: std::fmt::Display>(labels: &[T]) -> String {
    let mut out = String::new();
    for l in labels {
        writeln!(out, "{l}").unwrap();
    }
    out
}

pub fn write_labels<T: std::fmt::Display>(path: impl AsRef<Path>, labels: &[T]) -> Result<()> {
    fs::write(path, format_labels(labels))?;
    Ok(())
}

fn format_basis(b: Basis) -> String {
    match b {
        Basis::Raw => "raw".into(),
        Basis::Kernel(KernelSpec::Linear) => "linear".into(),
        Basis::Kernel(KernelSpec::Rbf { gamma }) => format!("rbf {gamma:.16e}"),
    }
}

pub fn format_model(m: &ProjectionModel) -> String {
    let mut out = String::new();
    writeln!(out, "[kernel]\n{}", format_basis(m.basis)).unwrap();
    write!(out, "[W]\n{}", format_matrix(&m.w)).unwrap();
    write!(out, "[train]\n{}", format_matrix(&m.train)).unwrap();
    writeln!(
        out,
        "[split]\n1 2\n{} {}",
        m.split.n_source, m.split.n_target
    )
    .unwrap();
    writeln!(out, "[assignment]\n{} 1", m.assignment.len()).unwrap();
    for l in m.assignment.labels() {
        writeln!(out, "{l}").unwrap();
    }
    out
}

fn count(v: f64, line: usize) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        parse_err(line, format!("expected a count, got {v}"))
    }
}

pub fn parse_model(text: &str) -> Result<ProjectionModel> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut basis = None;
    let mut w = None;
    let mut train = None;
    let mut split = None;
    let mut assignment = None;
    let mut last_line = 0;
    while let Some((ln, line)) = lines.next() {
        last_line = ln;
        match line.trim() {
            "[kernel]" => {
                let Some((kl, spec)) = lines.next() else {
                    return parse_err(ln, "missing kernel line");
                };
                let toks: Vec<&str> = spec.split_whitespace().collect();
                basis = Some(match toks.as_slice() {
                    ["raw"] => Basis::Raw,
                    ["linear"] => Basis::Kernel(KernelSpec::Linear),
                    ["rbf", g] => {
                        let g: f64 = g.parse().map_err(|_| TmdaError::Parse {
                            line: kl,
                            message: format!("bad rbf bandwidth {g:?}"),
                        })?;
                        Basis::Kernel(KernelSpec::rbf(g).map_err(|e| TmdaError::Parse {
                            line: kl,
                            message: e.to_string(),
                        })?)
                    }
                    _ => return parse_err(kl, format!("unknown kernel {spec:?}")),
                });
            }
            "[W]" => w = Some(parse_matrix_lines(&mut lines, ln + 1)?),
            "[train]" => train = Some(parse_matrix_lines(&mut lines, ln + 1)?),
            "[split]" => {
                let m = parse_matrix_lines(&mut lines, ln + 1)?;
                if m.shape() != (1, 2) {
                    return parse_err(ln, "split must be a 1x2 matrix");
                }
                let s = DomainSplit::new(count(m[(0, 0)], ln)?, count(m[(0, 1)], ln)?).map_err(
                    |e| TmdaError::Parse {
                        line: ln,
                        message: e.to_string(),
                    },
                )?;
                split = Some(s);
            }
            "[assignment]" => {
                let m = parse_matrix_lines(&mut lines, ln + 1)?;
                if m.ncols() != 1 {
                    return parse_err(ln, "assignment must be a single column");
                }
                let labels = m
                    .iter()
                    .map(|&v| count(v, ln))
                    .collect::<Result<Vec<usize>>>()?;
                let k = labels.iter().copied().max().unwrap_or(1).max(1);
                assignment =
                    Some(
                        ManifoldAssignment::new(labels, k).map_err(|e| TmdaError::Parse {
                            line: ln,
                            message: e.to_string(),
                        })?,
                    );
            }
            other => return parse_err(ln, format!("unknown section {other:?}")),
        }
    }
    let missing = |name: &str| TmdaError::Parse {
        line: last_line,
        message: format!("missing [{name}] section"),
    };
    let model = ProjectionModel {
        basis: basis.ok_or_else(|| missing("kernel"))?,
        w: w.ok_or_else(|| missing("W"))?,
        train: train.ok_or_else(|| missing("train"))?,
        split: split.ok_or_else(|| missing("split"))?,
        assignment: assignment.ok_or_else(|| missing("assignment"))?,
    };
    model.validate().map_err(|e| TmdaError::Parse {
        line: last_line,
        message: e.to_string(),
    })?;
    Ok(model)
}

pub fn write_model(path: impl AsRef<Path>, m: &ProjectionModel) -> Result<()> {
    fs::write(path, format_model(m))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ProjectionModel> {
    parse_model(&fs::read_to_string(path)?)
}
