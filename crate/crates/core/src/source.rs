//! Weak thermal light arriving at the two sites.
//!
//! Per time bin the light is a vacuum-dominated bipartite state. The first
//! order single-photon part splits into the two branches
//! `|psi±_theta> = (|0,1> ± e^{i theta}|1,0>)/√2` with weights
//! `eps(1±|g|)/2`. Multi-photon content is represented only as a classical
//! event kind because the error model depolarizes it anyway.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

use crate::qsim::{Mixture, PureState, QubitId, Site};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("mean photon number must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("visibility magnitude |g| = {0} exceeds 1")]
    Visibility(f64),
    #[error("first-order state needs epsilon <= 1, got {0}")]
    FirstOrder(f64),
    #[error("closed-form Fock weights need |g| = 1, got {0}")]
    NotFullyCoherent(f64),
    #[error("block length must be at least 1")]
    EmptyBlock,
}

const UNIT_TOL: f64 = 1e-12;

/// Mean photon number per bin and complex visibility `g = |g| e^{i theta}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalSource {
    epsilon: f64,
    g: Complex64,
}

impl ThermalSource {
    pub fn new(epsilon: f64, g: Complex64) -> Result<Self, SourceError> {
        // eps = 0 is accepted for the dark-source sanity runs; everything
        // analytic requires eps > 0 and checks it separately.
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(SourceError::Epsilon(epsilon));
        }
        if g.norm() > 1.0 + UNIT_TOL || !g.norm().is_finite() {
            return Err(SourceError::Visibility(g.norm()));
        }
        Ok(Self { epsilon, g })
    }

    pub fn from_polar(epsilon: f64, magnitude: f64, phase: f64) -> Result<Self, SourceError> {
        Self::new(epsilon, Complex64::from_polar(magnitude, phase))
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn g(&self) -> Complex64 {
        self.g
    }

    pub fn visibility(&self) -> f64 {
        self.g.norm().min(1.0)
    }

    pub fn theta(&self) -> f64 {
        self.g.arg()
    }

    /// Same source with a different visibility.
    pub fn with_g(&self, g: Complex64) -> Result<Self, SourceError> {
        Self::new(self.epsilon, g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhotonBranch {
    PsiPlus,
    PsiMinus,
}

/// What happened in one bin. Bin numbers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinEvent {
    Vacuum,
    Single { bin: usize, branch: PhotonBranch },
    Multi { bin: usize },
}

impl BinEvent {
    pub fn bin_index(&self) -> Option<usize> {
        match self {
            BinEvent::Vacuum => None,
            BinEvent::Single { bin, .. } | BinEvent::Multi { bin } => Some(*bin),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockWeights {
    pub vacuum: f64,
    pub single: f64,
    pub multi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStatistics {
    pub p_vacuum: f64,
    pub p_single: f64,
    pub p_multi: f64,
}

/// Photonic dual-rail qubits, one per site. Bit 0 is site A.
pub fn photon_layout() -> Vec<QubitId> {
    vec![QubitId::photon(Site::A), QubitId::photon(Site::B)]
}

pub fn vacuum_state() -> PureState {
    PureState::zero(photon_layout()).expect("static layout")
}

/// `(|0,1> ± e^{i theta}|1,0>)/√2` with `|a,b>` = (site A, site B).
pub fn psi_state(branch: PhotonBranch, theta: f64) -> PureState {
    let s = match branch {
        PhotonBranch::PsiPlus => 1.0,
        PhotonBranch::PsiMinus => -1.0,
    };
    PureState::from_amplitudes(
        photon_layout(),
        [
            // A = 0, B = 1
            (0b10, Complex64::new(FRAC_1_SQRT_2, 0.0)),
            // A = 1, B = 0
            (0b01, Complex64::from_polar(s * FRAC_1_SQRT_2, theta)),
        ],
    )
    .expect("normalized by construction")
}

/// First-order single-bin density matrix as a mixture over the photonic
/// qubits. The O(eps^2) sector is omitted.
pub fn single_bin_state(src: &ThermalSource) -> Result<Mixture, SourceError> {
    let eps = src.epsilon;
    if eps > 1.0 {
        return Err(SourceError::FirstOrder(eps));
    }
    let g = src.visibility();
    let theta = src.theta();
    Mixture::with_layout(
        photon_layout(),
        vec![
            (1.0 - eps, vacuum_state()),
            (eps * (1.0 + g) / 2.0, psi_state(PhotonBranch::PsiPlus, theta)),
            (eps * (1.0 - g) / 2.0, psi_state(PhotonBranch::PsiMinus, theta)),
        ],
        0.0,
    )
    .map_err(|_| unreachable!("photonic branches share a layout"))
}

/// Closed-form per-bin weights of the thermal state at `|g| = 1`:
/// `1/(1+eps)`, `eps/(1+eps)^2`, `eps^2/(1+eps)^2`.
pub fn fock_coefficients(src: &ThermalSource) -> Result<FockWeights, SourceError> {
    if (src.g.norm() - 1.0).abs() > UNIT_TOL {
        return Err(SourceError::NotFullyCoherent(src.g.norm()));
    }
    Ok(unit_visibility_weights(src.epsilon))
}

fn unit_visibility_weights(eps: f64) -> FockWeights {
    let b = 1.0 + eps;
    FockWeights {
        vacuum: 1.0 / b,
        single: eps / (b * b),
        multi: eps * eps / (b * b),
    }
}

/// Exact per-bin Fock weights for arbitrary `|g|`, with `u = (1-|g|^2)/4`
/// and `D = 1 + eps + eps^2 u`:
/// vacuum `1/D`, single `eps (1 + 2 eps u)/D^2`,
/// multi `eps^2 (1 + (2 eps - 1) u + eps^2 u^2)/D^2`.
pub fn fock_coefficients_exact(src: &ThermalSource) -> FockWeights {
    let eps = src.epsilon;
    let g2 = src.g.norm_sqr().min(1.0);
    let u = (1.0 - g2) / 4.0;
    let d = 1.0 + eps + eps * eps * u;
    FockWeights {
        vacuum: 1.0 / d,
        single: eps * (1.0 + 2.0 * eps * u) / (d * d),
        multi: eps * eps * (1.0 + (2.0 * eps - 1.0) * u + eps * eps * u * u) / (d * d),
    }
}

/// Fraction of single-photon events in the `psi+` branch.
pub fn psi_plus_fraction(src: &ThermalSource, exact: bool) -> f64 {
    let g = src.visibility();
    if exact {
        let u = (1.0 - g * g) / 4.0;
        let diag = 1.0 + 2.0 * src.epsilon * u;
        (diag + g) / (2.0 * diag)
    } else {
        (1.0 + g) / 2.0
    }
}

/// Trinomial block statistics over `m` bins:
/// `p_vacuum = (1+eps)^-M`, `p_single = M eps (1+eps)^-(M+1)`.
pub fn block_statistics(src: &ThermalSource, m: u64) -> Result<BlockStatistics, SourceError> {
    if m == 0 {
        return Err(SourceError::EmptyBlock);
    }
    let b = 1.0 + src.epsilon;
    let mf = m as f64;
    let (p_vacuum, p_single) = if m < i32::MAX as u64 {
        let mi = m as i32;
        (1.0 / b.powi(mi), mf * src.epsilon / b.powi(mi + 1))
    } else {
        let l = src.epsilon.ln_1p();
        ((-mf * l).exp(), mf * src.epsilon * (-(mf + 1.0) * l).exp())
    };
    Ok(BlockStatistics {
        p_vacuum,
        p_single,
        p_multi: 1.0 - p_vacuum - p_single,
    })
}

/// Per-bin sampler for one block.
#[derive(Debug, Clone, Copy)]
pub struct BinSampler {
    vacuum: f64,
    single: f64,
    plus_fraction: f64,
}

impl BinSampler {
    pub fn new(src: &ThermalSource, exact: bool) -> Self {
        let w = if exact {
            fock_coefficients_exact(src)
        } else {
            unit_visibility_weights(src.epsilon)
        };
        Self {
            vacuum: w.vacuum,
            single: w.single,
            plus_fraction: psi_plus_fraction(src, exact),
        }
    }

    /// One bin. Draws one uniform for the event kind and, for single-photon
    /// bins, one more for the branch.
    pub fn sample<R: Rng + ?Sized>(&self, bin: usize, rng: &mut R) -> BinEvent {
        let u: f64 = rng.gen();
        if u < self.vacuum {
            BinEvent::Vacuum
        } else if u < self.vacuum + self.single {
            let v: f64 = rng.gen();
            let branch = if v < self.plus_fraction {
                PhotonBranch::PsiPlus
            } else {
                PhotonBranch::PsiMinus
            };
            BinEvent::Single { bin, branch }
        } else {
            BinEvent::Multi { bin }
        }
    }
}

/// Samples the `m` bins of one block independently.
pub fn sample_block<R: Rng + ?Sized>(src: &ThermalSource, m: usize, rng: &mut R) -> Result<Vec<BinEvent>, SourceError> {
    if m == 0 {
        return Err(SourceError::EmptyBlock);
    }
    let sampler = BinSampler::new(src, false);
    Ok((1..=m).map(|bin| sampler.sample(bin, rng)).collect())
}
