//! Dense two-phase tableau simplex for `max c.x  s.t.  A x = b, x >= 0`.
//!
//! Bland's rule picks both the entering column and the leaving row, so the
//! method cannot cycle and always stops on a vertex. The final basic
//! solution is recomputed from the original data by a least-squares solve
//! over the basic columns to shed accumulated pivoting error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const EPS: f64 = 1e-9;

/// Upper bound on `rows * cols` accepted by the text parser.
pub const MAX_DUMP_CELLS: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("constraint matrix is {rows}x{cols} but rhs has {rhs} and objective {obj} entries")]
    Dimension {
        rows: usize,
        cols: usize,
        rhs: usize,
        obj: usize,
    },
    #[error("non-finite coefficient in the program")]
    NonFinite,
    #[error("program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("program is unbounded along column {0}")]
    Unbounded(usize),
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    /// Maximized.
    pub objective: Vec<f64>,
    /// Row-major, `rows x objective.len()`.
    pub matrix: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic column per retained row.
    pub basis: Vec<usize>,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let cols = self.n_vars();
        if self.rhs.len() != self.n_rows() || self.matrix.iter().any(|r| r.len() != cols) {
            return Err(LpError::Dimension {
                rows: self.n_rows(),
                cols,
                rhs: self.rhs.len(),
                obj: cols,
            });
        }
        let finite = self
            .objective
            .iter()
            .chain(&self.rhs)
            .chain(self.matrix.iter().flatten())
            .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(LpError::NonFinite)
        }
    }

    /// `max_i |(A x - b)_i|`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.matrix
            .iter()
            .zip(&self.rhs)
            .map(|(row, &b)| (row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Plain-text form:
    ///
    /// ```text
    /// lp maximize
    /// vars <n>
    /// rows <m>
    /// objective c_1 ... c_n
    /// row a_1 ... a_n = b
    /// ```
    ///
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        out.push_str("lp maximize\n");
        out.push_str(&format!("vars {}\n", self.n_vars()));
        out.push_str(&format!("rows {}\n", self.n_rows()));
        out.push_str("objective");
        for c in &self.objective {
            out.push_str(&format!(" {c}"));
        }
        out.push('\n');
        for (row, b) in self.matrix.iter().zip(&self.rhs) {
            out.push_str("row");
            for a in row {
                out.push_str(&format!(" {a}"));
            }
            out.push_str(&format!(" = {b}\n"));
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<LinearProgram, LpError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, message: &str| LpError::Parse {
            line,
            message: message.to_string(),
        };
        let (ln, header) = lines.next().ok_or_else(|| err(0, "empty input"))?;
        if header != "lp maximize" {
            return Err(err(ln, "expected `lp maximize`"));
        }
        let n = header_count(lines.next(), "vars")?;
        let m = header_count(lines.next(), "rows")?;
        if n.saturating_mul(m.max(1)) > MAX_DUMP_CELLS {
            return Err(err(ln, "program too large"));
        }
        let (ln, obj_line) = lines.next().ok_or_else(|| err(0, "missing objective"))?;
        let objective = parse_numbers(ln, obj_line, "objective", n)?;
        let mut matrix = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, line) = lines.next().ok_or_else(|| err(0, "missing constraint row"))?;
            let (lhs, b) = line
                .split_once('=')
                .ok_or_else(|| err(ln, "constraint row lacks `=`"))?;
            matrix.push(parse_numbers(ln, lhs.trim(), "row", n)?);
            rhs.push(parse_float(ln, b.trim())?);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content"));
        }
        let lp = LinearProgram {
            objective,
            matrix,
            rhs,
        };
        lp.validate()?;
        Ok(lp)
    }
}

fn header_count(entry: Option<(usize, &str)>, key: &str) -> Result<usize, LpError> {
    let (ln, line) = entry.ok_or_else(|| LpError::Parse {
        line: 0,
        message: format!("missing `{key}` line"),
    })?;
    let value = line
        .strip_prefix(key)
        .map(str::trim)
        .and_then(|v| v.parse::<usize>().ok());
    value.ok_or_else(|| LpError::Parse {
        line: ln,
        message: format!("expected `{key} <count>`"),
    })
}

fn parse_float(line: usize, token: &str) -> Result<f64, LpError> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(LpError::Parse {
            line,
            message: format!("invalid number `{token}`"),
        }),
    }
}

fn parse_numbers(line: usize, text: &str, key: &str, n: usize) -> Result<Vec<f64>, LpError> {
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some(key) {
        return Err(LpError::Parse {
            line,
            message: format!("expected `{key}`"),
        });
    }
    let values = tokens
        .map(|t| parse_float(line, t))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != n {
        return Err(LpError::Parse {
            line,
            message: format!("expected {n} coefficients, found {}", values.len()),
        });
    }
    Ok(values)
}

struct Tableau {
    /// `rows x (cols + 1)`; the last column holds the basic values.
    t: Vec<Vec<f64>>,
    /// Reduced costs `d_j`, last entry is the objective value.
    d: Vec<f64>,
    basis: Vec<usize>,
    /// Columns allowed to enter.
    active: Vec<bool>,
    pivots: usize,
    limit: usize,
}

impl Tableau {
    fn cols(&self) -> usize {
        self.d.len() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.cols() + 1;
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for j in 0..width {
                    row[j] -= f * pivot_row[j];
                }
                row[c] = 0.0;
            }
        }
        let f = self.d[c];
        if f != 0.0 {
            for j in 0..width {
                self.d[j] -= f * pivot_row[j];
            }
            self.d[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Maximizes until every active reduced cost is non-negative.
    fn optimize(&mut self) -> Result<(), LpError> {
        loop {
            let entering = (0..self.cols()).find(|&j| self.active[j] && self.d[j] < -EPS);
            let Some(c) = entering else {
                return Ok(());
            };
            if self.pivots >= self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
            let rhs = self.cols();
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if row[c] > EPS {
                    let ratio = row[rhs] / row[c];
                    let better = match leave {
                        None => true,
                        Some((k, best)) => {
                            ratio < best - EPS
                                || (ratio <= best + EPS && self.basis[i] < self.basis[k])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, c),
                None => return Err(LpError::Unbounded(c)),
            }
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let n = lp.n_vars();
    let m = lp.n_rows();
    let width = n + m;
    let mut t = Vec::with_capacity(m);
    for (i, (row, &b)) in lp.matrix.iter().zip(&lp.rhs).enumerate() {
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let mut r: Vec<f64> = row.iter().map(|a| sign * a).collect();
        r.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
        r.push(sign * b);
        t.push(r);
    }
    // phase one: maximize -sum(artificials)
    let mut d = vec![0.0; width + 1];
    for row in &t {
        for j in 0..n {
            d[j] -= row[j];
        }
        d[width] -= row[width];
    }
    let limit = 50 * (width + 10) * (m + 10);
    let mut tab = Tableau {
        t,
        d,
        basis: (n..width).collect(),
        active: (0..width).map(|j| j < n).collect(),
        pivots: 0,
        limit,
    };
    tab.optimize()?;
    let scale = lp.rhs.iter().map(|b| b.abs()).sum::<f64>().max(1.0);
    let infeasibility = -tab.d[width];
    if infeasibility > 1e-8 * scale {
        return Err(LpError::Infeasible(infeasibility));
    }
    // drive artificials out of the basis, dropping redundant rows
    let mut r = 0;
    while r < tab.t.len() {
        if tab.basis[r] >= n {
            match (0..n).find(|&j| tab.t[r][j].abs() > EPS) {
                Some(c) => tab.pivot(r, c),
                None => {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }
    // phase two
    let mut d = vec![0.0; width + 1];
    for j in 0..n {
        d[j] = -lp.objective[j];
    }
    for (row, &b) in tab.t.iter().zip(&tab.basis) {
        let cb = lp.objective[b];
        if cb != 0.0 {
            for j in 0..=width {
                d[j] += cb * row[j];
            }
        }
    }
    for &b in &tab.basis {
        d[b] = 0.0;
    }
    tab.d = d;
    tab.optimize()?;
    let x = refine(lp, &tab)?;
    Ok(LpSolution {
        objective: lp.value(&x),
        x,
        basis: tab.basis.clone(),
        pivots: tab.pivots,
    })
}

/// Recomputes the basic solution from the original rows kept by the solve.
fn refine(lp: &LinearProgram, tab: &Tableau) -> Result<Vec<f64>, LpError> {
    let n = lp.n_vars();
    let width = tab.cols();
    let k = tab.basis.len();
    let mut x = vec![0.0; n];
    if k == 0 {
        return Ok(x);
    }
    // rows dropped as redundant are combinations of the kept ones, so the
    // full system is consistent and least squares recovers the basic values
    let m = lp.n_rows();
    let a = DMatrix::from_fn(m, k, |i, j| lp.matrix[i][tab.basis[j]]);
    let b = DVector::from_column_slice(&lp.rhs);
    let sol = a.svd(true, true).solve(&b, 1e-12).ok();
    let fallback = || -> Vec<f64> { tab.t.iter().map(|row| row[width]).collect() };
    let values: Vec<f64> = match sol {
        Some(v) if v.iter().all(|x| x.is_finite()) => v.iter().copied().collect(),
        _ => fallback(),
    };
    let tableau_values = fallback();
    for (j, &col) in tab.basis.iter().enumerate() {
        // keep the refined value only when it agrees with the tableau
        let v = if (values[j] - tableau_values[j]).abs() <= 1e-6 * tableau_values[j].abs().max(1.0) {
            values[j]
        } else {
            tableau_values[j]
        };
        x[col] = v.max(0.0);
    }
    Ok(x)
}
