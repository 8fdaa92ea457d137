//! Successor representation and successor features.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rollout::TransitionDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrSource {
    ClosedForm,
    Td,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SRMatrix {
    pub psi: DMatrix<f64>,
    pub gamma: f64,
    pub source: SrSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SFMatrix {
    pub psi_phi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
}

/// Ψ = (I − γP)⁻¹.
pub fn sr_closed_form(p: &DMatrix<f64>, gamma: f64) -> Result<SRMatrix> {
    if !p.is_square() {
        return Err(Error::Shape(format!("P is {}x{}", p.nrows(), p.ncols())));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Precondition(format!("gamma {gamma} outside [0, 1)")));
    }
    let n = p.nrows();
    let psi = (DMatrix::identity(n, n) - p * gamma)
        .lu()
        .try_inverse()
        .expect("I - γP is invertible for a stochastic P and γ < 1");
    Ok(SRMatrix { psi, gamma, source: SrSource::ClosedForm })
}

/// Σ_{t ≤ T} (γP)^t.
pub fn sr_neumann(p: &DMatrix<f64>, gamma: f64, terms: usize) -> DMatrix<f64> {
    let n = p.nrows();
    let mut acc = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for _ in 0..terms {
        term = &term * p * gamma;
        acc += &term;
    }
    acc
}

/// TD estimate of the SR from a dataset, zero-initialised, replayed in order.
///
/// Each record (s, s') applies Ψ(s, i) += η (1{s = i} + γΨ(s', i) − Ψ(s, i))
/// for every i. Option records count as single transitions.
pub fn sr_td_learn(data: &TransitionDataset, eta: f64, gamma: f64, passes: usize) -> Result<SRMatrix> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Precondition(format!("step size {eta} outside (0, 1]")));
    }
    let n = data.n_states;
    // row-major copy so each update touches contiguous memory
    let mut psi = vec![0.0f64; n * n];
    for _ in 0..passes {
        for t in data.records() {
            let (s, next) = (t.s, t.next);
            for i in 0..n {
                let target = f64::from(u8::from(s == i)) + gamma * psi[next * n + i];
                let cur = psi[s * n + i];
                psi[s * n + i] = cur + eta * (target - cur);
            }
        }
    }
    Ok(SRMatrix { psi: DMatrix::from_row_slice(n, n, &psi), gamma, source: SrSource::Td })
}

/// Ψ_Φ = (I − γP)⁻¹ Φ.
pub fn successor_features(phi: &DMatrix<f64>, p: &DMatrix<f64>, gamma: f64) -> Result<SFMatrix> {
    if !p.is_square() || phi.nrows() != p.nrows() {
        return Err(Error::Shape(format!(
            "Φ is {}x{}, P is {}x{}",
            phi.nrows(),
            phi.ncols(),
            p.nrows(),
            p.ncols()
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Precondition(format!("gamma {gamma} outside [0, 1)")));
    }
    let n = p.nrows();
    let psi_phi = (DMatrix::identity(n, n) - p * gamma)
        .lu()
        .solve(phi)
        .ok_or_else(|| Error::Numeric("singular system".into()))?;
    Ok(SFMatrix { psi_phi, phi: phi.clone() })
}

/// Write a matrix as CSV: a header of column indices, then one row per line.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
    wr.write_record((0..m.ncols()).map(|j| j.to_string())).map_err(io)?;
    for i in 0..m.nrows() {
        wr.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string())).map_err(io)?;
    }
    wr.flush().map_err(|e| Error::Numeric(format!("csv write: {e}")))
}

impl SRMatrix {
    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        write_matrix_csv(&self.psi, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::Transition;

    fn toggle() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn gamma_zero_is_identity() {
        assert_eq!(sr_closed_form(&toggle(), 0.0).unwrap().psi, DMatrix::identity(2, 2));
    }

    #[test]
    fn toggle_sr_matches_inverse_and_series() {
        let psi = sr_closed_form(&toggle(), 0.5).unwrap().psi;
        let expected = DMatrix::from_row_slice(2, 2, &[4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0]);
        assert!((&psi - &expected).amax() < 1e-12);
        let series = sr_neumann(&toggle(), 0.5, 40);
        assert!((&psi - series).amax() <= 0.5f64.powi(41) / 0.5 + 1e-15);
    }

    #[test]
    fn single_td_update() {
        let mut d = TransitionDataset::new(3, 4);
        d.push(Transition { s: 0, a: 2, r: 0.0, next: 1, primitive: true }).unwrap();
        let psi = sr_td_learn(&d, 0.1, 0.9, 1).unwrap().psi;
        let mut expected = DMatrix::zeros(3, 3);
        expected[(0, 0)] = 0.1;
        assert_eq!(psi, expected);
    }

    #[test]
    fn unvisited_rows_stay_zero() {
        let mut d = TransitionDataset::new(3, 4);
        for _ in 0..5 {
            d.push(Transition { s: 0, a: 2, r: 0.0, next: 1, primitive: true }).unwrap();
            d.push(Transition { s: 1, a: 3, r: 0.0, next: 0, primitive: true }).unwrap();
        }
        let psi = sr_td_learn(&d, 0.5, 0.9, 10).unwrap().psi;
        assert!(psi.row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_features_reduce_to_sr() {
        let p = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        let sf = successor_features(&DMatrix::identity(2, 2), &p, 0.9).unwrap();
        let sr = sr_closed_form(&p, 0.9).unwrap();
        assert!((sf.psi_phi - sr.psi).amax() < 1e-10);
        let ones = successor_features(&DMatrix::from_element(2, 1, 1.0), &p, 0.9).unwrap();
        assert!(ones.psi_phi.iter().all(|&x| (x - 10.0).abs() < 1e-10));
        assert!(matches!(
            successor_features(&DMatrix::identity(3, 3), &p, 0.9),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn matrix_csv_layout() {
        let sr = sr_closed_form(&toggle(), 0.0).unwrap();
        assert_eq!(sr.to_csv(), "0,1\n1,0\n0,1\n");
    }
}
