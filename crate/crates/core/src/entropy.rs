//! Von Neumann entropies of the first-order single-bin state and the
//! minimum entanglement needed to merge one site's share into the other.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("mean photon number {0} must lie in [0, 1)")]
    Epsilon(f64),
    #[error("visibility magnitude {0} exceeds 1")]
    Visibility(f64),
    #[error("eigenvalues sum to {0}, not 1")]
    Normalization(f64),
}

/// Eigenvalues with a short label for each eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub eigenvalues: Vec<f64>,
    pub labels: Vec<String>,
}

impl SpectralState {
    /// Clamps round-off negatives to zero and checks normalization.
    pub fn new(eigenvalues: Vec<f64>, labels: Vec<String>) -> Result<Self, EntropyError> {
        let eigenvalues: Vec<f64> = eigenvalues
            .into_iter()
            .map(|v| if (-1e-14..0.0).contains(&v) { 0.0 } else { v })
            .collect();
        let sum: f64 = eigenvalues.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || eigenvalues.iter().any(|v| *v < 0.0) {
            return Err(EntropyError::Normalization(sum));
        }
        Ok(Self { eigenvalues, labels })
    }

    /// Entropy in bits, `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        shannon_bits(&self.eigenvalues)
    }
}

pub fn shannon_bits(p: &[f64]) -> f64 {
    p.iter().filter(|v| **v > 0.0).map(|v| -v * v.log2()).sum()
}

fn check_eps(eps: f64) -> Result<(), EntropyError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(EntropyError::Epsilon(eps));
    }
    Ok(())
}

/// Spectrum `{1-eps, eps(1+|g|)/2, eps(1-|g|)/2}` of the two-site state.
pub fn joint_spectrum(eps: f64, g: Complex64) -> Result<SpectralState, EntropyError> {
    check_eps(eps)?;
    let v = g.norm();
    if v > 1.0 + 1e-12 {
        return Err(EntropyError::Visibility(v));
    }
    let v = v.min(1.0);
    SpectralState::new(
        vec![1.0 - eps, eps * (1.0 + v) / 2.0, eps * (1.0 - v) / 2.0],
        vec!["vacuum".into(), "psi+".into(), "psi-".into()],
    )
}

/// Spectrum `{1 - eps/2, eps/2}` of one site; independent of `g`.
pub fn reduced_spectrum(eps: f64) -> Result<SpectralState, EntropyError> {
    check_eps(eps)?;
    SpectralState::new(vec![1.0 - eps / 2.0, eps / 2.0], vec!["0".into(), "1".into()])
}

/// `S(A|B) = S(AB) - S(B)` in bits.
pub fn conditional_entropy(eps: f64, g: Complex64) -> Result<f64, EntropyError> {
    Ok(joint_spectrum(eps, g)?.entropy() - reduced_spectrum(eps)?.entropy())
}

/// Ebits per detected photon needed to merge the state, `S(A|B)/eps` at
/// `|g| = 1`.
pub fn min_ebits_per_photon(eps: f64) -> Result<f64, EntropyError> {
    if eps <= 0.0 {
        return Err(EntropyError::Epsilon(eps));
    }
    Ok(conditional_entropy(eps, Complex64::new(1.0, 0.0))? / eps)
}

/// Weak-source limit of [`min_ebits_per_photon`]: `log2(1/eps)/2`.
pub fn min_ebits_asymptote(eps: f64) -> f64 {
    0.5 * (1.0 / eps).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub epsilon: f64,
    pub s_joint: f64,
    pub s_reduced: f64,
    pub s_conditional: f64,
    pub min_ebits: f64,
    pub asymptote: f64,
    /// Pairs per photon for a block of `M = 1/eps` bins, `log2(M+1)`.
    pub protocol_pairs: f64,
}

/// Entropy bound versus the protocol's per-photon cost at `M = 1/eps`.
pub fn bound_row(eps: f64) -> Result<EntropyRow, EntropyError> {
    let g = Complex64::new(1.0, 0.0);
    let s_joint = joint_spectrum(eps, g)?.entropy();
    let s_reduced = reduced_spectrum(eps)?.entropy();
    Ok(EntropyRow {
        epsilon: eps,
        s_joint,
        s_reduced,
        s_conditional: s_joint - s_reduced,
        min_ebits: min_ebits_per_photon(eps)?,
        asymptote: min_ebits_asymptote(eps),
        protocol_pairs: (1.0 / eps + 1.0).log2(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn h2(p: f64) -> f64 {
        shannon_bits(&[p, 1.0 - p])
    }

    // rho_AB on |00>,|01>,|10>,|11> (A is the high bit): vacuum weight 1-eps and
    // single-photon block eps/2 [[1, g],[g*, 1]] on |01>,|10>.
    fn dense_joint(eps: f64, g: Complex64) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 0)] = Complex64::new(1.0 - eps, 0.0);
        m[(1, 1)] = Complex64::new(eps / 2.0, 0.0);
        m[(2, 2)] = Complex64::new(eps / 2.0, 0.0);
        m[(1, 2)] = g * eps / 2.0;
        m[(2, 1)] = g.conj() * eps / 2.0;
        m
    }

    fn dense_entropy(m: DMatrix<Complex64>) -> f64 {
        let e = SymmetricEigen::new(m);
        let ev: Vec<f64> = e.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        shannon_bits(&ev)
    }

    fn trace_out_a(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut r = DMatrix::zeros(2, 2);
        for b in 0..2 {
            for b2 in 0..2 {
                for a in 0..2 {
                    r[(b, b2)] += m[(2 * a + b, 2 * a + b2)];
                }
            }
        }
        r
    }

    #[test]
    fn spectra_examples() {
        let s = joint_spectrum(0.3, Complex64::new(1.0, 0.0)).unwrap();
        assert_eq!(s.eigenvalues, vec![0.7, 0.3, 0.0]);
        let s = joint_spectrum(0.5, Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(s.eigenvalues, vec![0.5, 0.25, 0.25]);
        assert_eq!(reduced_spectrum(0.5).unwrap().eigenvalues, vec![0.75, 0.25]);
        let tiny = reduced_spectrum(1e-300).unwrap();
        assert_eq!(tiny.eigenvalues[0], 1.0);
        assert!(joint_spectrum(1.0, Complex64::new(0.0, 0.0)).is_err());
        assert!(joint_spectrum(0.1, Complex64::new(1.5, 0.0)).is_err());
    }

    #[test]
    fn conditional_entropy_half() {
        let g = Complex64::new(1.0, 0.0);
        let sab = joint_spectrum(0.5, g).unwrap().entropy();
        let sb = reduced_spectrum(0.5).unwrap().entropy();
        assert!((sab - 1.0).abs() < 1e-15);
        assert!((sb - h2(0.25)).abs() < 1e-15);
        assert!((sb - 0.8113).abs() < 1e-4);
        assert!((conditional_entropy(0.5, g).unwrap() - 0.1887).abs() < 1e-4);
    }

    #[test]
    fn weak_source_conditional_entropy() {
        let eps = 1e-6;
        let s = conditional_entropy(eps, Complex64::new(1.0, 0.0)).unwrap();
        let r = s / (eps / 2.0 * (1.0 / eps).log2());
        assert!((r - 1.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn conditional_entropy_nonnegative() {
        for i in 1..=500 {
            let eps = 0.5 * i as f64 / 500.0;
            assert!(conditional_entropy(eps, Complex64::new(1.0, 0.0)).unwrap() >= 0.0);
        }
    }

    #[test]
    fn min_ebits_examples() {
        let eps = 1e-6;
        let a = min_ebits_asymptote(eps);
        assert!((a - 9.966).abs() < 1e-3);
        let exact = min_ebits_per_photon(eps).unwrap();
        assert!((exact / a - 1.0).abs() < 0.10);
        let mut last = f64::INFINITY;
        for eps in [1e-3, 1e-4, 1e-5, 1e-6] {
            let r = min_ebits_per_photon(eps).unwrap() / min_ebits_asymptote(eps);
            assert!((r - 1.0).abs() < (last - 1.0).abs(), "{eps}: {r}");
            last = r;
        }
        let row = bound_row(1e-6).unwrap();
        let factor = row.protocol_pairs / row.min_ebits;
        assert!(factor < 2.2 && factor > 1.0, "{factor}");
    }

    #[test]
    fn entropies_match_dense_eigensolver() {
        for &eps in &[1e-6, 1e-3, 0.1, 0.5, 0.9] {
            for g in [
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::from_polar(0.6, 2.1),
            ] {
                let m = dense_joint(eps, g);
                let sab = joint_spectrum(eps, g).unwrap().entropy();
                assert!((sab - dense_entropy(m.clone())).abs() < 1e-10);
                let rb = trace_out_a(&m);
                assert!((reduced_spectrum(eps).unwrap().entropy() - dense_entropy(rb.clone())).abs() < 1e-10);
                assert!((rb[(1, 1)].re - eps / 2.0).abs() < 1e-15);
                assert!(rb[(0, 1)].norm() == 0.0);
            }
        }
    }

    #[test]
    fn weak_source_limits_converge() {
        // the subleading eps/ln2 term decays like 1/log(1/eps)
        let ratios = |eps: f64| {
            let sb = reduced_spectrum(eps).unwrap().entropy() / (eps / 2.0 * (2.0 / eps).log2());
            let sab = joint_spectrum(eps, Complex64::new(1.0, 0.0)).unwrap().entropy() / (eps * (1.0 / eps).log2());
            (sb, sab)
        };
        let (b6, ab6) = ratios(1e-6);
        let (b12, ab12) = ratios(1e-12);
        assert!((b12 - 1.0).abs() < (b6 - 1.0).abs() && (ab12 - 1.0).abs() < (ab6 - 1.0).abs());
        assert!((b12 - 1.0).abs() < 0.05 && (ab12 - 1.0).abs() < 0.05);
    }
}
