//! Eigendecompositions, graph Laplacians and subspace comparisons.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::mdp::TabularMDP;
use crate::option::OptionDef;

/// Entries with magnitude at or below this are treated as zero when fixing
/// eigenvector signs.
const SIGN_EPS: f64 = 1e-12;
/// Relative gap below which eigenvalues count as repeated.
const REPEAT_TOL: f64 = 1e-9;
/// Residual norm a unit vector must keep to join a canonical basis.
const PIVOT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSource {
    Sr,
    Laplacian,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Descending,
    Ascending,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub eigenvalues: Vec<f64>,
    /// Unit-norm columns aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub order: Order,
    pub source: BasisSource,
    /// Largest discarded imaginary part (0 for symmetric inputs).
    pub max_imag: f64,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.eigenvectors.column(k).into_owned()
    }

    pub fn with_source(mut self, source: BasisSource) -> Self {
        self.source = source;
        self
    }

    /// CSV with one column per eigenvector; the first data row holds the
    /// eigenvalues.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut m = DMatrix::zeros(self.eigenvectors.nrows() + 1, self.len());
        for k in 0..self.len() {
            m[(0, k)] = self.eigenvalues[k];
            for i in 0..self.eigenvectors.nrows() {
                m[(i + 1, k)] = self.eigenvectors[(i, k)];
            }
        }
        crate::sr::write_matrix_csv(&m, w)
    }
}

/// Flip `v` so its first entry with |x| > 1e-12 is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    if let Some(x) = v.iter().find(|x| x.abs() > SIGN_EPS) {
        if *x < 0.0 {
            v.neg_mut();
        }
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Symmetric eigendecomposition sorted in the requested order.
pub fn symmetric_eigen(m: &DMatrix<f64>, order: Order) -> Result<EigenBasis> {
    check_finite(m)?;
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    match order {
        Order::Descending => idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a])),
        Order::Ascending => idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])),
    }
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &i) in idx.iter().enumerate() {
        let v = eig.eigenvectors.column(i).into_owned();
        vectors.set_column(k, &(&v / v.norm()));
        values.push(eig.eigenvalues[i]);
    }
    for range in clusters(&values, REPEAT_TOL) {
        if range.len() > 1 {
            let block = canonical_basis(&vectors.columns(range.start, range.len()).into_owned());
            vectors.columns_mut(range.start, range.len()).copy_from(&block);
        }
    }
    for k in 0..n {
        let mut v = vectors.column(k).into_owned();
        fix_sign(&mut v);
        vectors.set_column(k, &v);
    }
    Ok(EigenBasis { eigenvalues: values, eigenvectors: vectors, order, source: BasisSource::Other, max_imag: 0.0 })
}

/// Eigendecomposition sorted by descending eigenvalue.
///
/// With `symmetrize`, decomposes (M + Mᵀ)/2. Otherwise decomposes M itself
/// and keeps the real parts of eigenvalues and eigenvectors, warning when an
/// imaginary part exceeds 1e-9.
pub fn eigendecompose(m: &DMatrix<f64>, symmetrize: bool) -> Result<EigenBasis> {
    check_finite(m)?;
    if symmetrize {
        let sym = (m + m.transpose()) * 0.5;
        return symmetric_eigen(&sym, Order::Descending);
    }
    if m == &m.transpose() {
        return symmetric_eigen(m, Order::Descending);
    }
    raw_eigen(m)
}

fn raw_eigen(m: &DMatrix<f64>) -> Result<EigenBasis> {
    let n = m.nrows();
    let lambdas = m
        .clone()
        .complex_eigenvalues();
    let mut order: Vec<usize> = (0..n).collect();
    // by real part descending, then imaginary part descending
    order.sort_by(|&a, &b| {
        lambdas[b].re.total_cmp(&lambdas[a].re).then(lambdas[b].im.total_cmp(&lambdas[a].im))
    });
    let max_imag = lambdas.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
    let mc: DMatrix<Complex<f64>> = m.map(|x| Complex::new(x, 0.0));
    let scale = m.amax().max(1.0);
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &i) in order.iter().enumerate() {
        let lambda = lambdas[i];
        let v = inverse_iteration(&mc, lambda, scale)?;
        let mut max_vec_imag: f64 = 0.0;
        let mut re = DVector::from_iterator(
            n,
            v.iter().map(|z| {
                max_vec_imag = max_vec_imag.max(z.im.abs());
                z.re
            }),
        );
        let norm = re.norm();
        if norm > 0.0 {
            re /= norm;
        }
        fix_sign(&mut re);
        vectors.set_column(k, &re);
        values.push(lambda.re);
        if lambda.im.abs() > 1e-9 || max_vec_imag > 1e-9 {
            log::warn!("eigenpair {k} has an imaginary component ({:.3e}); keeping the real part", lambda.im.abs().max(max_vec_imag));
        }
    }
    Ok(EigenBasis { eigenvalues: values, eigenvectors: vectors, order: Order::Descending, source: BasisSource::Other, max_imag })
}

/// Eigenvector for `lambda` by shifted inverse iteration, phase-normalised
/// so its largest-magnitude entry is real and positive.
fn inverse_iteration(m: &DMatrix<Complex<f64>>, lambda: Complex<f64>, scale: f64) -> Result<DVector<Complex<f64>>> {
    let n = m.nrows();
    let shift = lambda + Complex::new(scale * 1e-10, 0.0);
    let a = m - DMatrix::<Complex<f64>>::identity(n, n) * shift;
    let lu = a.lu();
    let mut v = DVector::from_iterator(n, (0..n).map(|i| Complex::new(1.0 + (i as f64) * 1e-3, 0.0)));
    for _ in 0..3 {
        let w = lu.solve(&v).ok_or_else(|| Error::Numeric("inverse iteration hit a singular shift".into()))?;
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numeric("inverse iteration diverged".into()));
        }
        v = w / Complex::new(norm, 0.0);
    }
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
    let phase = pivot / Complex::new(pivot.norm(), 0.0);
    Ok(v.map(|z| z / phase))
}

/// L = D^{-1/2} (D − W) D^{-1/2} and its eigenbasis in ascending order.
pub fn normalized_laplacian(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, EigenBasis)> {
    check_finite(w)?;
    if w != &w.transpose() || w.iter().any(|&x| x < 0.0) {
        return Err(Error::Precondition("adjacency must be symmetric and nonnegative".into()));
    }
    let n = w.nrows();
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    if let Some(i) = deg.iter().position(|&d| d <= 0.0) {
        return Err(Error::Degree(i));
    }
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dij = if i == j { deg[i] } else { 0.0 };
            l[(i, j)] = (dij - w[(i, j)]) / (deg[i] * deg[j]).sqrt();
        }
    }
    // exact symmetry for the symmetric solver
    let l = (&l + l.transpose()) * 0.5;
    let basis = symmetric_eigen(&l, Order::Ascending)?.with_source(BasisSource::Laplacian);
    Ok((l, basis))
}

/// Combinatorial Laplacian D − W.
pub fn combinatorial_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        l[(i, i)] += w.row(i).sum();
    }
    l
}

/// Binary adjacency: W_ij = 1 iff some action moves i to j ≠ i.
pub fn adjacency(mdp: &TabularMDP) -> DMatrix<f64> {
    let n = mdp.n_states;
    let mut w = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            for &(next, _) in mdp.successors(s, a) {
                if next != s {
                    w[(s, next)] = 1.0;
                }
            }
        }
    }
    w
}

/// Binary adjacency with an extra edge from every state where an option is
/// available to the states where it lands, symmetrised.
pub fn adjacency_with_options(mdp: &TabularMDP, options: &[OptionDef]) -> DMatrix<f64> {
    let mut w = adjacency(mdp);
    let cap = crate::option::max_option_steps(mdp.n_states);
    for o in options {
        for s in o.initiation_states() {
            for (t, _) in o.landing(mdp, s, cap).states {
                if t != s {
                    w[(s, t)] = 1.0;
                    w[(t, s)] = 1.0;
                }
            }
        }
    }
    w
}

/// Action-count adjacency plus one edge in each direction between every
/// state where an option is available and the states where it lands.
pub fn action_count_adjacency_with_options(mdp: &TabularMDP, options: &[OptionDef]) -> DMatrix<f64> {
    let mut w = action_count_adjacency(mdp);
    let cap = crate::option::max_option_steps(mdp.n_states);
    for o in options {
        for s in o.initiation_states() {
            for (t, m) in o.landing(mdp, s, cap).states {
                if t != s {
                    w[(s, t)] += m;
                    w[(t, s)] += m;
                }
            }
        }
    }
    w
}

/// Action-count adjacency: W_ij = number of actions moving i to j,
/// self-loops included, so D⁻¹W is the uniform-policy transition matrix.
pub fn action_count_adjacency(mdp: &TabularMDP) -> DMatrix<f64> {
    let n = mdp.n_states;
    let mut w = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            for &(next, p) in mdp.successors(s, a) {
                w[(s, next)] += p;
            }
        }
    }
    w
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns of equal count.
pub fn subspace_angle(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> f64 {
    let proj = u2 * (u2.transpose() * u1);
    let resid = u1 - proj;
    let s = resid.singular_values();
    s.iter().copied().fold(0.0, f64::max).min(1.0).asin()
}

/// Orthonormal basis for the columns of `m` (thin QR).
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// A fixed orthonormal basis for the span of `u` (orthonormal columns):
/// project the unit vectors of states 0, 1, ... onto the span and keep each
/// one whose residual, after removing the vectors kept so far, is not
/// negligible. The result depends only on the subspace.
pub fn canonical_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = u.shape();
    let mut out = DMatrix::<f64>::zeros(n, m);
    let mut kept = 0;
    for s in 0..n {
        if kept == m {
            break;
        }
        let mut v: DVector<f64> = u * u.row(s).transpose();
        for c in 0..kept {
            let prev = out.column(c);
            let d = prev.dot(&v);
            v -= prev * d;
        }
        let norm = v.norm();
        if norm > PIVOT_EPS {
            out.set_column(kept, &(v / norm));
            kept += 1;
        }
    }
    if kept < m {
        return u.clone();
    }
    out
}

/// Group consecutive sorted eigenvalues closer than `tol` (relative to
/// max(1, |λ|)) into index ranges.
pub fn clusters(values: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=values.len() {
        let split = k == values.len() || (values[k] - values[k - 1]).abs() > tol * values[k].abs().max(1.0);
        if split {
            out.push(start..k);
            start = k;
        }
    }
    out
}

/// True when `v` is constant up to `tol` (max − min).
pub fn is_constant(v: &DVector<f64>, tol: f64) -> bool {
    v.max() - v.min() <= tol
}
