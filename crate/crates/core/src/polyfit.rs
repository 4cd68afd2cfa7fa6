//! Multivariate polynomial basis expansion and (weighted) least-squares fitting.
//!
//! Fits are solved through a singular value decomposition of the
//! (row-weighted) design matrix, giving the minimum-norm solution when the
//! design is rank deficient. Rows with zero weight and columns that vanish on
//! every remaining row are dropped before the decomposition; both receive a
//! zero coefficient, which is what the minimum-norm solution assigns them
//! anyway.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Condition numbers above this are flagged in [`FitDiagnostics`].
pub const CONDITION_WARNING: f64 = 1e10;

/// Monomials of total degree at most `k` over the encoded columns, in graded
/// lexicographic order (degree ascending, then exponent vectors descending).
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialBasis {
    num_columns: usize,
    degree: u32,
    terms: Vec<Vec<u32>>,
    /// Nonzero (column, exponent) pairs of each term.
    factors: Vec<Vec<(usize, u32)>>,
}

impl MonomialBasis {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn num_columns(&self) -> usize {
        self.num_columns
    }

    pub fn terms(&self) -> &[Vec<u32>] {
        &self.terms
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.num_columns {
            return Err(Error::Dimension {
                expected: self.num_columns,
                actual: point.len(),
            });
        }
        Ok(())
    }

    fn powers(&self, point: &[f64]) -> Vec<f64> {
        // powers[c * (k + 1) + e] = x_c^e
        let stride = self.degree as usize + 1;
        let mut pw = vec![1.0; self.num_columns * stride];
        for (c, &x) in point.iter().enumerate() {
            for e in 1..stride {
                pw[c * stride + e] = pw[c * stride + e - 1] * x;
            }
        }
        pw
    }

    /// Writes every term's value at `point` into `out`.
    pub fn evaluate_terms_into(&self, point: &[f64], out: &mut [f64]) {
        let stride = self.degree as usize + 1;
        let pw = self.powers(point);
        for (o, f) in out.iter_mut().zip(&self.factors) {
            *o = f
                .iter()
                .map(|&(c, e)| pw[c * stride + e as usize])
                .product();
        }
    }

    pub fn evaluate_terms(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_point(point)?;
        let mut out = vec![0.0; self.len()];
        self.evaluate_terms_into(point, &mut out);
        Ok(out)
    }

    /// Derivative of every term with respect to `column`, at `point`.
    pub fn derivative_terms(&self, column: usize, point: &[f64]) -> Result<Vec<f64>> {
        self.check_point(point)?;
        if column >= self.num_columns {
            return Err(Error::Dimension {
                expected: self.num_columns,
                actual: column,
            });
        }
        let stride = self.degree as usize + 1;
        let pw = self.powers(point);
        Ok(self
            .factors
            .iter()
            .map(|f| {
                let Some(&(_, e)) = f.iter().find(|(c, _)| *c == column) else {
                    return 0.0;
                };
                let rest: f64 = f
                    .iter()
                    .filter(|(c, _)| *c != column)
                    .map(|&(c, e)| pw[c * stride + e as usize])
                    .product();
                e as f64 * pw[column * stride + e as usize - 1] * rest
            })
            .collect())
    }

    /// `rows.len() x q` design matrix.
    pub fn design_matrix<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<DMatrix<f64>> {
        let mut x = DMatrix::zeros(rows.len(), self.len());
        let mut buf = vec![0.0; self.len()];
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            self.check_point(r)?;
            self.evaluate_terms_into(r, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        Ok(x)
    }
}

/// Full interaction expansion of degree `k`. Exponents on binary columns are
/// capped at 1 since `b^2 = b`.
pub fn expand_basis(num_columns: usize, k: u32, binary_mask: &[bool]) -> MonomialBasis {
    expand_basis_with_groups(num_columns, k, binary_mask, &[])
}

/// Like [`expand_basis`], additionally omitting products of two columns from
/// the same mutually exclusive group (the indicators of one categorical
/// feature), which vanish identically.
pub fn expand_basis_with_groups(
    num_columns: usize,
    k: u32,
    binary_mask: &[bool],
    exclusive_groups: &[Vec<usize>],
) -> MonomialBasis {
    assert!(k >= 1, "polynomial degree must be at least 1");
    assert_eq!(binary_mask.len(), num_columns, "binary mask length");
    let mut group_of = vec![usize::MAX; num_columns];
    for (g, cols) in exclusive_groups.iter().enumerate() {
        for &c in cols {
            group_of[c] = g;
        }
    }
    let caps: Vec<u32> = binary_mask.iter().map(|&b| if b { 1 } else { k }).collect();

    let mut terms = Vec::new();
    let mut current = vec![0u32; num_columns];
    for total in 0..=k {
        enumerate(&caps, 0, total, &mut current, &mut terms);
    }
    terms.retain(|t| {
        let mut seen = Vec::new();
        t.iter().enumerate().all(|(c, &e)| {
            if e == 0 || group_of[c] == usize::MAX {
                return true;
            }
            if seen.contains(&group_of[c]) {
                return false;
            }
            seen.push(group_of[c]);
            true
        })
    });
    let factors = terms
        .iter()
        .map(|t| {
            t.iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(c, &e)| (c, e))
                .collect()
        })
        .collect();
    MonomialBasis {
        num_columns,
        degree: k,
        terms,
        factors,
    }
}

fn enumerate(caps: &[u32], col: usize, remaining: u32, current: &mut [u32], out: &mut Vec<Vec<u32>>) {
    if col == caps.len() {
        if remaining == 0 {
            out.push(current.to_vec());
        }
        return;
    }
    let top = remaining.min(caps[col]);
    for e in (0..=top).rev() {
        current[col] = e;
        enumerate(caps, col + 1, remaining - e, current, out);
    }
    current[col] = 0;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitDiagnostics {
    /// Rows with positive weight.
    pub rows: usize,
    /// Weighted residual sum of squares.
    pub rss: f64,
    pub effective_rank: usize,
    pub terms: usize,
    /// Ratio of extreme singular values of the reduced design; infinite when
    /// the design is rank deficient.
    pub condition_number: f64,
    pub ill_conditioned: bool,
}

/// Minimum-norm weighted least-squares solution of `design * beta ~ targets`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    /// `F` with `F F^T = (X^T W X)^+`, `q x rank`.
    gram_factor: DMatrix<f64>,
}

impl LeastSquares {
    /// `v^T (X^T W X)^+ v`.
    pub fn inverse_gram_form(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        (self.gram_factor.tr_mul(&v)).norm_squared()
    }
}

pub fn solve_least_squares(
    design: &DMatrix<f64>,
    targets: &[f64],
    weights: Option<&[f64]>,
) -> Result<LeastSquares> {
    let (m, q) = design.shape();
    if targets.len() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: targets.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != m {
            return Err(Error::Dimension {
                expected: m,
                actual: w.len(),
            });
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Fit("weights must be finite and nonnegative".into()));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Fit("all weights are zero".into()));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let rows: Vec<usize> = (0..m).filter(|&i| weight(i) > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::Fit("no usable rows".into()));
    }
    let cols: Vec<usize> = (0..q)
        .filter(|&j| rows.iter().any(|&i| design[(i, j)] != 0.0))
        .collect();

    let mut coefficients = vec![0.0; q];
    let mut gram_factor = DMatrix::zeros(q, 0);
    let mut rank = 0;
    let mut condition_number = f64::INFINITY;

    if !cols.is_empty() {
        let sw: Vec<f64> = rows.iter().map(|&i| weight(i).sqrt()).collect();
        let a = DMatrix::from_fn(rows.len(), cols.len(), |r, c| sw[r] * design[(rows[r], cols[c])]);
        let b = DVector::from_fn(rows.len(), |r, _| sw[r] * targets[rows[r]]);
        let svd = a.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Fit("singular value decomposition failed".into())),
        };
        let sv = &svd.singular_values;
        let s_max = sv.iter().copied().fold(0.0, f64::max);
        let s_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = s_max * rows.len().max(cols.len()) as f64 * f64::EPSILON;
        let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > tol).collect();
        rank = keep.len();
        condition_number = if rank < cols.len() || s_min == 0.0 {
            f64::INFINITY
        } else {
            s_max / s_min
        };
        gram_factor = DMatrix::zeros(q, rank);
        for (r, &s) in keep.iter().enumerate() {
            let ub = u.column(s).dot(&b) / sv[s];
            for (c, &col) in cols.iter().enumerate() {
                let vc = v_t[(s, c)];
                coefficients[col] += vc * ub;
                gram_factor[(col, r)] = vc / sv[s];
            }
        }
    }

    let rss = (0..m)
        .map(|i| {
            let fitted: f64 = (0..q).map(|j| design[(i, j)] * coefficients[j]).sum();
            weight(i) * (targets[i] - fitted).powi(2)
        })
        .sum();

    Ok(LeastSquares {
        coefficients,
        diagnostics: FitDiagnostics {
            rows: rows.len(),
            rss,
            effective_rank: rank,
            terms: q,
            condition_number,
            ill_conditioned: condition_number > CONDITION_WARNING,
        },
        gram_factor,
    })
}

/// Fitted local polynomial `g(x) = sum_l beta_l * phi_l(x)`.
#[derive(Clone, Debug)]
pub struct PolynomialSurrogate {
    basis: Arc<MonomialBasis>,
    fit: LeastSquares,
}

impl PolynomialSurrogate {
    pub fn from_solution(basis: Arc<MonomialBasis>, fit: LeastSquares) -> Result<Self> {
        if fit.coefficients.len() != basis.len() {
            return Err(Error::Dimension {
                expected: basis.len(),
                actual: fit.coefficients.len(),
            });
        }
        Ok(PolynomialSurrogate { basis, fit })
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn degree(&self) -> u32 {
        self.basis.degree
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.fit.coefficients
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.fit.diagnostics
    }

    pub fn solution(&self) -> &LeastSquares {
        &self.fit
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        let phi = self.basis.evaluate_terms(point)?;
        Ok(dot(&phi, &self.fit.coefficients))
    }

    pub fn partial_derivative(&self, column: usize, point: &[f64]) -> Result<f64> {
        let v = self.derivative_loading(column, point)?;
        Ok(dot(&v, &self.fit.coefficients))
    }

    /// Vector `v` with `partial_derivative = beta^T v`; entries of terms that
    /// do not involve `column` are zero.
    pub fn derivative_loading(&self, column: usize, point: &[f64]) -> Result<Vec<f64>> {
        self.basis.derivative_terms(column, point)
    }
}

/// Fits a degree-k polynomial to `rows` (each of `basis.num_columns()` values).
pub fn fit<R: AsRef<[f64]>>(
    rows: &[R],
    targets: &[f64],
    basis: impl Into<Arc<MonomialBasis>>,
    weights: Option<&[f64]>,
) -> Result<PolynomialSurrogate> {
    let basis = basis.into();
    if rows.is_empty() {
        return Err(Error::Fit("no usable rows".into()));
    }
    let x = basis.design_matrix(rows)?;
    let solution = solve_least_squares(&x, targets, weights)?;
    PolynomialSurrogate::from_solution(basis, solution)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
