//! Standard errors, t-values and likelihood-ratio tests.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianDiagnostics {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Ratio of largest to smallest absolute eigenvalue.
    pub condition_number: f64,
    pub negative_semidefinite: bool,
    pub pseudo_inverse: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    /// Standard errors on the reported scale; `None` where the curvature is not concave.
    pub std_errors: Vec<Option<f64>>,
    pub t_values: Vec<Option<f64>>,
    pub diagnostics: HessianDiagnostics,
}

pub fn diagnose(h: &DMatrix<f64>) -> HessianDiagnostics {
    let eig = SymmetricEigen::new(h.clone()).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let amin = eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let amax = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
    HessianDiagnostics {
        min_eigenvalue: min,
        max_eigenvalue: max,
        condition_number: if amin > 0.0 { amax / amin } else { f64::INFINITY },
        negative_semidefinite: max <= 1e-6,
        pseudo_inverse: false,
    }
}

/// Cramer-Rao standard errors from the log-likelihood Hessian `h` at `theta`.
/// Entries flagged in `log_scale` are estimated as logarithms and reported as
/// `exp(theta)` with delta-method errors.
pub fn inference(h: &DMatrix<f64>, theta: &[f64], log_scale: &[bool]) -> Result<Inference> {
    let n = theta.len();
    if h.nrows() != n || h.ncols() != n || log_scale.len() != n {
        return Err(Error::Domain("Hessian and parameter dimensions differ".into()));
    }
    let mut diagnostics = diagnose(h);
    let inv = match h.clone().try_inverse() {
        Some(m) if m.iter().all(|v| v.is_finite()) => m,
        _ => {
            diagnostics.pseudo_inverse = true;
            h.clone()
                .pseudo_inverse(1e-12 * diagnostics.max_eigenvalue.abs().max(1.0))
                .map_err(|e| Error::Domain(format!("Hessian pseudo-inverse failed: {e}")))?
        }
    };
    let mut std_errors = Vec::with_capacity(n);
    let mut t_values = Vec::with_capacity(n);
    for k in 0..n {
        let var = -inv[(k, k)];
        if !(var > 0.0) {
            std_errors.push(None);
            t_values.push(None);
            continue;
        }
        let se = var.sqrt();
        if log_scale[k] {
            let v = theta[k].exp();
            std_errors.push(Some(v * se));
            t_values.push(Some(1.0 / se));
        } else {
            std_errors.push(Some(se));
            t_values.push(Some(theta[k] / se));
        }
    }
    Ok(Inference {
        std_errors,
        t_values,
        diagnostics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatioTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Set when a slightly negative statistic from optimiser noise was clamped to 0.
    pub clamped: bool,
}

pub fn likelihood_ratio_test(ll_restricted: f64, ll_full: f64, df: usize) -> Result<LikelihoodRatioTest> {
    if df == 0 {
        return Err(Error::Domain("likelihood-ratio test needs df > 0".into()));
    }
    if !(ll_restricted.is_finite() && ll_full.is_finite()) {
        return Err(Error::Domain("log-likelihoods must be finite".into()));
    }
    let raw = -2.0 * (ll_restricted - ll_full);
    let clamped = raw < 0.0;
    let statistic = raw.max(0.0);
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        gamma_ur(df as f64 / 2.0, statistic / 2.0)
    };
    Ok(LikelihoodRatioTest {
        statistic,
        df,
        p_value,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_curvature() {
        let h = -DMatrix::<f64>::identity(2, 2);
        let inf = inference(&h, &[2.0, -2.0], &[false, false]).unwrap();
        assert_eq!(inf.std_errors, vec![Some(1.0), Some(1.0)]);
        assert_eq!(inf.t_values, vec![Some(2.0), Some(-2.0)]);
        assert!(inf.diagnostics.negative_semidefinite);
    }

    #[test]
    fn delta_method_for_log_parameters() {
        let h = DMatrix::from_diagonal_element(1, 1, -4.0);
        let inf = inference(&h, &[0.5f64.ln()], &[true]).unwrap();
        assert!((inf.std_errors[0].unwrap() - 0.25).abs() < 1e-12);
        assert!((inf.t_values[0].unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn convex_direction_is_flagged() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        let inf = inference(&h, &[1.0, 1.0], &[false, false]).unwrap();
        assert!(inf.std_errors[0].is_some());
        assert!(inf.std_errors[1].is_none() && inf.t_values[1].is_none());
        assert!(!inf.diagnostics.negative_semidefinite);
    }

    #[test]
    fn lr_test_values() {
        let same = likelihood_ratio_test(-100.0, -100.0, 3).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
        let big = likelihood_ratio_test(-1045.54, -1000.0, 5).unwrap();
        assert!((big.statistic - 91.08).abs() < 1e-9);
        assert!(big.p_value < 1e-15 && big.p_value >= 0.0);
        // chi-square(2) survival is exp(-x/2).
        let two = likelihood_ratio_test(-10.0, -8.5, 2).unwrap();
        assert!((two.p_value - (-1.5f64).exp()).abs() < 1e-12);
        assert!(likelihood_ratio_test(0.0, 0.0, 0).is_err());
        let noisy = likelihood_ratio_test(-10.0, -10.0 - 1e-9, 1).unwrap();
        assert!(noisy.clamped && noisy.statistic == 0.0);
    }
}
