//! Worst-case depolarizing error model.
//!
//! Every non-ideal operation is a depolarizing channel that keeps the state
//! with probability `p_ideal = 2f - 1` and otherwise replaces it by the
//! maximally mixed state. Only the readout qubit's coherent fraction `c` and
//! the post-selection probability `p` matter for estimation, so the whole
//! pipeline collapses to a transformation of `(p, c)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qsim::Mixture;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("target nu = {0} must lie in (0, 1]")]
    Nu(f64),
}

/// Success probability of light-to-memory transfer and the fidelities of
/// transfer, one-qubit measurement, nontrivial two-qubit gate and shared pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub p_t: f64,
    pub f_t: f64,
    pub f_1: f64,
    pub f_2: f64,
    pub f_e: f64,
}

impl Default for ErrorBudget {
    fn default() -> Self {
        Self::ideal()
    }
}

impl ErrorBudget {
    pub const fn ideal() -> Self {
        Self { p_t: 1.0, f_t: 1.0, f_1: 1.0, f_2: 1.0, f_e: 1.0 }
    }

    pub fn new(p_t: f64, f_t: f64, f_1: f64, f_2: f64, f_e: f64) -> Result<Self, NoiseError> {
        let b = Self { p_t, f_t, f_1, f_2, f_e };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        check("p_t", self.p_t, 0.0, 1.0)?;
        for (name, v) in [("f_t", self.f_t), ("f_1", self.f_1), ("f_2", self.f_2), ("f_e", self.f_e)] {
            check(name, v, 0.5, 1.0)?;
        }
        Ok(())
    }

    /// Budget with `f_1 = f_2`, perfect pairs and transfer, such that
    /// `(2 f_1 - 1)^8 = nu`.
    pub fn with_nu(nu: f64) -> Result<Self, NoiseError> {
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(NoiseError::Nu(nu));
        }
        let f = (1.0 + nu.powf(1.0 / 8.0)) / 2.0;
        Self::new(1.0, 1.0, f, f, 1.0)
    }

    /// `p_t (2 f_t - 1)^2 (2 f_1 - 1)^2`
    pub fn mu(&self) -> f64 {
        self.p_t * depol(self.f_t).powi(2) * depol(self.f_1).powi(2)
    }

    /// `(2 f_1 - 1)^4 (2 f_2 - 1)^4 (2 f_e - 1)`
    pub fn nu(&self) -> f64 {
        depol(self.f_1).powi(4) * depol(self.f_2).powi(4) * depol(self.f_e)
    }

    pub fn is_ideal(&self) -> bool {
        *self == Self::ideal()
    }
}

fn check(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), NoiseError> {
    if !(value >= lo && value <= hi) {
        return Err(NoiseError::OutOfRange { name, value, lo, hi });
    }
    Ok(())
}

/// Coherent fraction kept by an operation of fidelity `f`.
pub fn depol(f: f64) -> f64 {
    2.0 * f - 1.0
}

/// Readout state `p (c rho1 + (1-c) rho_mix)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutState {
    pub p: f64,
    pub c: f64,
}

/// `(1+eps)^M - 1`, accurate for small `M eps`.
pub(crate) fn growth_minus_one(eps: f64, m: f64) -> f64 {
    (m * eps.ln_1p()).exp_m1()
}

/// `(1+eps)^k` for real `k`.
pub(crate) fn growth(eps: f64, k: f64) -> f64 {
    (k * eps.ln_1p()).exp()
}

/// Post-selected readout state after `M` bins with ideal operations:
/// `p = ((1+eps)^M - 1)/(1+eps)^M`, `c = M eps / ([(1+eps)^M - 1](1+eps))`.
pub fn ideal_readout_state(eps: f64, m: f64) -> ReadoutState {
    let gm1 = growth_minus_one(eps, m);
    ReadoutState {
        p: gm1 / (1.0 + gm1),
        c: m * eps / (gm1 * (1.0 + eps)),
    }
}

/// `log2(M+1)`: registers per site, real-valued so the planner can evaluate
/// any block length.
pub fn register_count(m: f64) -> f64 {
    (m + 1.0).log2()
}

/// Applies the operation count of one block to `(p, c)`:
/// `p -> p p_t^2`,
/// `c -> c (2f_t-1)^2 (2f_1-1)^{2(1+L)} (2f_2-1)^{2L} (2f_e-1)^{L/2}` with `L = log2(M+1)`.
pub fn apply_budget(rs: ReadoutState, budget: &ErrorBudget, m: f64) -> ReadoutState {
    ReadoutState {
        p: rs.p * budget.p_t * budget.p_t,
        c: rs.c * coherence_factor(budget, register_count(m)),
    }
}

pub fn coherence_factor(budget: &ErrorBudget, l: f64) -> f64 {
    depol(budget.f_t).powi(2)
        * depol(budget.f_1).powf(2.0 * (1.0 + l))
        * depol(budget.f_2).powf(2.0 * l)
        * depol(budget.f_e).powf(l / 2.0)
}

/// Depolarizing channel on a mixture with the given coherent fraction.
pub fn depolarize_mixture(state: &Mixture, p_ideal: f64) -> Mixture {
    state.depolarize(p_ideal)
}

/// Kinds of operation that can fail in one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpClass {
    Transfer,
    OneQubit,
    TwoQubit,
    Pair,
}

/// How many of each faulty operation one decoded block goes through, for
/// `L = log2(M+1)` registers: 2 transfers, `2(1+L)` one-qubit measurements,
/// `2L` nontrivial two-qubit gates, and `L` shared pairs (each carrying half
/// the pair exponent so the net factor is `(2f_e-1)^{L/2}`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationCounts {
    pub transfers: u32,
    pub one_qubit: u32,
    pub two_qubit: u32,
    pub pairs: u32,
}

impl OperationCounts {
    pub fn for_registers(k: u32) -> Self {
        Self {
            transfers: 2,
            one_qubit: 2 * (1 + k),
            two_qubit: 2 * k,
            pairs: k,
        }
    }

    pub fn total(&self) -> u32 {
        2 * self.transfers + self.one_qubit + self.two_qubit + self.pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FaultDraw {
    /// A transfer failed: the photon never reaches memory.
    pub lost: bool,
    /// First operation class that depolarized the readout, if any.
    pub depolarized_by: Option<OpClass>,
}

/// Draws the fault pattern for one block. Always consumes
/// `OperationCounts::total` uniforms so that runs at different `g` stay
/// aligned on the same random stream.
#[derive(Debug, Clone, Copy)]
pub struct FaultInjector {
    counts: OperationCounts,
    p_t: f64,
    keep_transfer: f64,
    keep_one: f64,
    keep_two: f64,
    keep_pair: f64,
}

impl FaultInjector {
    pub fn new(budget: &ErrorBudget, registers: u32) -> Self {
        Self {
            counts: OperationCounts::for_registers(registers),
            p_t: budget.p_t,
            keep_transfer: depol(budget.f_t),
            keep_one: depol(budget.f_1),
            keep_two: depol(budget.f_2),
            keep_pair: depol(budget.f_e).sqrt(),
        }
    }

    pub fn counts(&self) -> OperationCounts {
        self.counts
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> FaultDraw {
        let mut out = FaultDraw::default();
        let mut fire = |keep: f64, class: OpClass, rng: &mut R| {
            let u: f64 = rng.gen();
            if u >= keep && out.depolarized_by.is_none() {
                out.depolarized_by = Some(class);
            }
        };
        for _ in 0..self.counts.transfers {
            let u: f64 = rng.gen();
            if u >= self.p_t {
                out.lost = true;
            }
            fire(self.keep_transfer, OpClass::Transfer, rng);
        }
        for _ in 0..self.counts.one_qubit {
            fire(self.keep_one, OpClass::OneQubit, rng);
        }
        for _ in 0..self.counts.two_qubit {
            fire(self.keep_two, OpClass::TwoQubit, rng);
        }
        for _ in 0..self.counts.pairs {
            fire(self.keep_pair, OpClass::Pair, rng);
        }
        out
    }
}
