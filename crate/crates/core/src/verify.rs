//! Numerical checks of the SR/Laplacian correspondences.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::{induced_transition_matrix, Policy, TabularMDP};
use crate::rollout::TransitionDataset;
use crate::spectral::{
    action_count_adjacency, adjacency, clusters, combinatorial_laplacian, normalized_laplacian, orthonormalize,
    subspace_angle, symmetric_eigen, Order,
};
use crate::sr::sr_closed_form;

/// Relative gap below which neighbouring eigenvalues are compared as one
/// subspace.
const CLUSTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// |λ_PVF,k − (1 − (1 − 1/λ_SR,k)/γ)| for k-th SR (descending) and k-th
    /// PVF (ascending) eigenvalue.
    pub eigenvalue_residuals: Vec<f64>,
    /// Largest principal angle per eigenvalue cluster.
    pub eigenvector_angles: Vec<f64>,
    pub max_residual: f64,
    pub max_angle: f64,
}

impl EquivalenceReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual < tol && self.max_angle < tol
    }
}

/// Compare the SR of the uniform policy with the normalized-Laplacian basis.
///
/// The graph weights count actions between states, self-loops included, so
/// that D⁻¹W is the uniform-policy transition matrix.
pub fn verify_pvf_sr_equivalence(mdp: &TabularMDP, gamma: f64) -> Result<EquivalenceReport> {
    if !mdp.is_deterministic() {
        return Err(Error::Precondition("dynamics must be deterministic".into()));
    }
    let w = action_count_adjacency(mdp);
    if w != w.transpose() {
        return Err(Error::Precondition("reachability is not symmetric".into()));
    }
    let n = mdp.n_states;
    let p = induced_transition_matrix(mdp, &Policy::uniform(n, mdp.n_actions))?;
    let psi = sr_closed_form(&p, gamma)?.psi;
    let psi = (&psi + psi.transpose()) * 0.5;
    let sr = symmetric_eigen(&psi, Order::Descending)?;
    let (_, pvf) = normalized_laplacian(&w)?;

    let eigenvalue_residuals: Vec<f64> = (0..n)
        .map(|k| {
            let predicted = 1.0 - (1.0 - 1.0 / sr.eigenvalues[k]) / gamma;
            (pvf.eigenvalues[k] - predicted).abs()
        })
        .collect();

    let sqrt_d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, (0..n).map(|i| w.row(i).sum().sqrt())));
    let mapped = &sqrt_d * &sr.eigenvectors;
    let mut eigenvector_angles = Vec::new();
    for range in clusters(&pvf.eigenvalues, CLUSTER_TOL) {
        let u1 = pvf.eigenvectors.columns(range.start, range.len()).into_owned();
        let u2 = orthonormalize(&mapped.columns(range.start, range.len()).into_owned());
        eigenvector_angles.push(subspace_angle(&u1, &u2));
    }
    let max_residual = eigenvalue_residuals.iter().copied().fold(0.0, f64::max);
    let max_angle = eigenvector_angles.iter().copied().fold(0.0, f64::max);
    Ok(EquivalenceReport { eigenvalue_residuals, eigenvector_angles, max_residual, max_angle })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDiffReport {
    /// TᵀT == 2(D − W) entrywise, in integers.
    pub gram_matches: bool,
    /// Largest |(TᵀT − 2(D − W))_ij|.
    pub max_gram_error: i64,
    /// Largest principal angle between right-singular subspaces of T and
    /// eigen-subspaces of D − W.
    pub max_angle: f64,
    /// Largest |σ²/2 − λ| over matched pairs.
    pub max_value_error: f64,
    pub zero_rows: usize,
}

/// Check that stacking φ(s') − φ(s) over every transition gives TᵀT = 2(D − W).
pub fn verify_transition_diff_laplacian(data: &TransitionDataset, mdp: &TabularMDP) -> Result<TransitionDiffReport> {
    let n = mdp.n_states;
    if data.n_states != n {
        return Err(Error::Shape("dataset and mdp disagree on the state count".into()));
    }
    let w = adjacency(mdp);
    if w != w.transpose() {
        return Err(Error::Precondition("reachability is not symmetric".into()));
    }
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut zero_rows = 0;
    for t in data.records() {
        if t.s == t.next {
            zero_rows += 1;
            continue;
        }
        if w[(t.s, t.next)] == 0.0 {
            return Err(Error::Precondition(format!("transition {} -> {} is not in the kernel", t.s, t.next)));
        }
        *seen.entry((t.s, t.next)).or_default() += 1;
    }
    if let Some(((s, x), c)) = seen.iter().find(|(_, &c)| c > 1) {
        return Err(Error::Precondition(format!("transition {s} -> {x} sampled {c} times")));
    }
    let edges = w.iter().filter(|&&x| x > 0.0).count();
    if seen.len() != edges {
        return Err(Error::Precondition(format!("{} of {} transitions missing", edges - seen.len(), edges)));
    }

    // integer Gram matrix
    let mut gram = vec![0i64; n * n];
    for t in data.records().iter().filter(|t| t.s != t.next) {
        let (a, b) = (t.next, t.s);
        gram[a * n + a] += 1;
        gram[b * n + b] += 1;
        gram[a * n + b] -= 1;
        gram[b * n + a] -= 1;
    }
    let lap = combinatorial_laplacian(&w);
    let mut max_gram_error = 0i64;
    for i in 0..n {
        for j in 0..n {
            let expected = 2 * lap[(i, j)] as i64;
            max_gram_error = max_gram_error.max((gram[i * n + j] - expected).abs());
        }
    }

    let m = data.len();
    let mut t_mat = DMatrix::<f64>::zeros(m.max(n), n);
    for (r, t) in data.records().iter().enumerate() {
        if t.s != t.next {
            t_mat[(r, t.next)] += 1.0;
            t_mat[(r, t.s)] -= 1.0;
        }
    }
    let svd = t_mat.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let halves: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i].powi(2) / 2.0).collect();
    let right = DMatrix::from_fn(n, n, |r, c| v_t[(idx[c], r)]);

    let eig = symmetric_eigen(&lap, Order::Ascending)?;
    let max_value_error = (0..n).map(|k| (halves[k] - eig.eigenvalues[k]).abs()).fold(0.0, f64::max);
    let mut max_angle: f64 = 0.0;
    for range in clusters(&eig.eigenvalues, CLUSTER_TOL) {
        let u1 = eig.eigenvectors.columns(range.start, range.len()).into_owned();
        let u2 = orthonormalize(&right.columns(range.start, range.len()).into_owned());
        max_angle = max_angle.max(subspace_angle(&u1, &u2));
    }
    Ok(TransitionDiffReport { gram_matches: max_gram_error == 0, max_gram_error, max_angle, max_value_error, zero_rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;
    use crate::mdp::build_mdp;
    use crate::rollout::Transition;

    fn k2() -> TabularMDP {
        build_mdp(&parse_grid("####\n#..#\n####").unwrap(), 0.9).unwrap()
    }

    #[test]
    fn two_state_equivalence_is_exact() {
        let r = verify_pvf_sr_equivalence(&k2(), 0.9).unwrap();
        assert!(r.max_residual < 1e-12, "{r:?}");
        assert!(r.max_angle < 1e-12);
    }

    #[test]
    fn constant_vector_maps_to_zero() {
        // λ_SR = 1/(1−γ) gives λ_PVF = 0
        let g: f64 = 0.9;
        let l: f64 = 1.0 / (1.0 - g);
        assert!((1.0 - (1.0 - 1.0 / l) / g).abs() < 1e-15);
    }

    #[test]
    fn k2_gram_matrix() {
        let mut d = TransitionDataset::new(2, 4);
        d.push(Transition { s: 0, a: 2, r: 0.0, next: 1, primitive: true }).unwrap();
        d.push(Transition { s: 1, a: 3, r: 0.0, next: 0, primitive: true }).unwrap();
        d.push(Transition { s: 0, a: 0, r: 0.0, next: 0, primitive: true }).unwrap();
        let r = verify_transition_diff_laplacian(&d, &k2()).unwrap();
        assert!(r.gram_matches);
        assert_eq!(r.zero_rows, 1);
        assert!(r.max_angle < 1e-8);
    }

    #[test]
    fn duplicates_and_gaps_are_rejected() {
        let mut d = TransitionDataset::new(2, 4);
        d.push(Transition { s: 0, a: 2, r: 0.0, next: 1, primitive: true }).unwrap();
        assert!(matches!(verify_transition_diff_laplacian(&d, &k2()), Err(Error::Precondition(_))));
        d.push(Transition { s: 0, a: 2, r: 0.0, next: 1, primitive: true }).unwrap();
        d.push(Transition { s: 1, a: 3, r: 0.0, next: 0, primitive: true }).unwrap();
        assert!(matches!(verify_transition_diff_laplacian(&d, &k2()), Err(Error::Precondition(_))));
    }
}
