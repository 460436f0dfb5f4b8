//! Fisher information about the visibility `g = g1 + i g2` carried by the
//! post-selected readout, analytically and from Monte Carlo runs of the full
//! block simulator.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{BlockOutcome, BlockSimulator, CodecError, MemoryLayout};
use crate::exec::{map_chunks, trial_rng, Backend};
use crate::noise::{growth, growth_minus_one, register_count, ErrorBudget, ReadoutState};
use crate::qsim::XOutcome;
use crate::source::{SourceError, ThermalSource};

pub const MIN_TRIALS: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FisherError {
    #[error("{got} trials requested, at least {min} needed")]
    TooFewTrials { got: u64, min: u64 },
    #[error("phase settings must include two values a quarter turn apart")]
    PhaseSettings,
    #[error("finite-difference step {0} must lie in (0, 1)")]
    Step(f64),
    #[error("at least two batches are needed for an error estimate")]
    Batches,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Symmetric 2x2 Fisher matrix over `(g1, g2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FisherMatrix {
    pub entries: [[f64; 2]; 2],
}

impl FisherMatrix {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(entries: [[f64; 2]; 2]) -> Self {
        Self { entries }
    }

    pub fn add(&self, other: &FisherMatrix) -> FisherMatrix {
        let mut e = self.entries;
        for (i, row) in e.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += other.entries[i][j];
            }
        }
        FisherMatrix { entries: e }
    }

    pub fn scale(&self, s: f64) -> FisherMatrix {
        FisherMatrix { entries: self.entries.map(|r| r.map(|v| v * s)) }
    }

    /// Trace norm; equal to the trace for a positive semidefinite matrix.
    pub fn trace_norm(&self) -> f64 {
        let (l1, l2) = self.eigenvalues();
        l1.abs() + l2.abs()
    }

    pub fn trace(&self) -> f64 {
        self.entries[0][0] + self.entries[1][1]
    }

    pub fn determinant(&self) -> f64 {
        self.entries[0][0] * self.entries[1][1] - self.entries[0][1] * self.entries[1][0]
    }

    /// Eigenvalues of the symmetrized matrix, larger first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let a = self.entries[0][0];
        let d = self.entries[1][1];
        let b = 0.5 * (self.entries[0][1] + self.entries[1][0]);
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mean + r, mean - r)
    }

    /// Number of eigenvalues above `tol` times the largest.
    pub fn rank(&self, tol: f64) -> usize {
        let (l1, l2) = self.eigenvalues();
        if l1.abs() <= 0.0 {
            return 0;
        }
        1 + usize::from(l2.abs() > tol * l1.abs())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.entries[0][1] - self.entries[1][0]).abs() <= tol
    }

    /// Diagonal of the inverse, i.e. the per-quadrature Cramér–Rao variances.
    pub fn inverse_diagonal(&self) -> Option<[f64; 2]> {
        let det = self.determinant();
        if det.abs() <= f64::MIN_POSITIVE {
            return None;
        }
        Some([self.entries[1][1] / det, self.entries[0][0] / det])
    }
}

/// `Re(g e^{-i delta}) = g1 cos delta + g2 sin delta`
pub fn projected_visibility(g: Complex64, delta: f64) -> f64 {
    g.re * delta.cos() + g.im * delta.sin()
}

/// Subnormalized probabilities of the two readout outcomes,
/// `P(0|g) = p (1 + c Re(g e^{-i delta}))/2` and `P(1|g) = p (1 - c Re(...))/2`.
pub fn outcome_probabilities(rs: ReadoutState, g: Complex64, delta: f64) -> (f64, f64) {
    let r = rs.c * projected_visibility(g, delta);
    (rs.p * (1.0 + r) / 2.0, rs.p * (1.0 - r) / 2.0)
}

/// `F = p / (1/c^2 - Re^2(g e^{-i delta})) [[cos^2, sin cos], [sin cos, sin^2]]`.
/// Zero when `c = 0`.
pub fn analytic_fisher(rs: ReadoutState, g: Complex64, delta: f64) -> FisherMatrix {
    if rs.c == 0.0 || rs.p == 0.0 {
        return FisherMatrix::zero();
    }
    let r = projected_visibility(g, delta);
    let scale = rs.p / (1.0 / (rs.c * rs.c) - r * r);
    let (s, c) = delta.sin_cos();
    FisherMatrix::new([[c * c, s * c], [s * c, s * s]]).scale(scale)
}

/// Sum of [`analytic_fisher`] over phase settings.
pub fn analytic_fisher_sum(rs: ReadoutState, g: Complex64, deltas: &[f64]) -> FisherMatrix {
    deltas
        .iter()
        .fold(FisherMatrix::zero(), |acc, d| acc.add(&analytic_fisher(rs, g, *d)))
}

/// Lower bound on the trace norm of the single-block Fisher information,
/// `(M eps)^2 / ([(1+eps)^M - 1](1+eps)^{M+2}) mu^2 nu^{log2(M+1)}`.
/// `M` may be any real `>= 1`.
pub fn fisher_lower_bound(eps: f64, m: f64, budget: &ErrorBudget) -> f64 {
    let me = m * eps;
    let mu = budget.mu();
    let nu = budget.nu();
    let noise = if nu == 0.0 { 0.0 } else { mu * mu * nu.powf(register_count(m)) };
    me * me / (growth_minus_one(eps, m) * growth(eps, m + 2.0)) * noise
}

/// `(M eps, M eps^2)`: what any nonlocal strategy can reach and the ceiling
/// for local heterodyne detection.
pub fn benchmark_bounds(eps: f64, m: f64) -> (f64, f64) {
    (m * eps, m * eps * eps)
}

/// Monte Carlo settings for [`empirical_fisher`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSettings {
    pub deltas: Vec<f64>,
    /// Total blocks, shared round-robin among the phase settings.
    pub trials: u64,
    pub seed: u64,
    /// Finite-difference half-width in `g`. The outcome law is affine in `g`,
    /// so a wide stencil has no truncation error and less variance.
    pub step: f64,
    pub batches: usize,
    pub backend: Backend,
}

impl Default for EmpiricalSettings {
    fn default() -> Self {
        Self {
            deltas: vec![0.0, FRAC_PI_2],
            trials: 1_000_000,
            seed: 0,
            step: 0.25,
            batches: 20,
            backend: Backend::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalFisher {
    pub matrix: FisherMatrix,
    /// Trace norm of each batch's estimate.
    pub batch_norms: Vec<f64>,
    /// Standard error of the pooled trace norm from the batch spread.
    pub std_error: f64,
    /// Fraction of blocks that produced a readout.
    pub post_selection_rate: f64,
}

// stencil: base, +g1, -g1, +g2, -g2
const STENCIL: usize = 5;

#[derive(Debug, Clone, PartialEq)]
struct Tally {
    // [delta][stencil][plus, minus]
    counts: Vec<[[u64; 2]; STENCIL]>,
    blocks: Vec<u64>,
    accepted: u64,
}

impl Tally {
    fn new(n: usize) -> Self {
        Self {
            counts: vec![[[0; 2]; STENCIL]; n],
            blocks: vec![0; n],
            accepted: 0,
        }
    }

    fn merge(&mut self, other: &Tally) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for s in 0..STENCIL {
                a[s][0] += b[s][0];
                a[s][1] += b[s][1];
            }
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a += b;
        }
        self.accepted += other.accepted;
    }

    fn fisher(&self, step: f64) -> FisherMatrix {
        let mut total = FisherMatrix::zero();
        for (c, &n) in self.counts.iter().zip(&self.blocks) {
            if n == 0 {
                continue;
            }
            let n = n as f64;
            let mut f = [[0.0; 2]; 2];
            for y in 0..2 {
                let base = c[0][y] as f64 / n;
                if base <= 0.0 {
                    continue;
                }
                let d = [
                    (c[1][y] as f64 - c[2][y] as f64) / (n * 2.0 * step),
                    (c[3][y] as f64 - c[4][y] as f64) / (n * 2.0 * step),
                ];
                for k in 0..2 {
                    for l in 0..2 {
                        f[k][l] += d[k] * d[l] / base;
                    }
                }
            }
            total = total.add(&FisherMatrix::new(f));
        }
        total
    }
}

fn check_phases(deltas: &[f64]) -> bool {
    let quarter = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(std::f64::consts::PI);
        (d - FRAC_PI_2).abs() < 1e-9
    };
    deltas
        .iter()
        .enumerate()
        .any(|(i, a)| deltas[i + 1..].iter().any(|b| quarter(*a, *b)))
}

/// Estimates the summed Fisher matrix over the phase settings by running the
/// full block simulator.
///
/// Outcome frequencies are taken at `g`. Derivatives come from central
/// differences on a common-random-number stencil around `g`, pulled inward
/// when needed so every stencil point stays a valid visibility. Vacuum blocks
/// are not outcomes; probabilities are normalized by all blocks so they sum
/// to the post-selection rate.
pub fn empirical_fisher(
    src: &ThermalSource,
    layout: MemoryLayout,
    budget: &ErrorBudget,
    settings: &EmpiricalSettings,
) -> Result<EmpiricalFisher, FisherError> {
    if settings.trials < MIN_TRIALS {
        return Err(FisherError::TooFewTrials { got: settings.trials, min: MIN_TRIALS });
    }
    if !check_phases(&settings.deltas) {
        return Err(FisherError::PhaseSettings);
    }
    if !(settings.step > 0.0 && settings.step < 1.0) {
        return Err(FisherError::Step(settings.step));
    }
    if settings.batches < 2 {
        return Err(FisherError::Batches);
    }
    let h = settings.step;
    let g = src.g();
    let center = if g.norm() + h > 1.0 { g * ((1.0 - h) / g.norm()) } else { g };
    let points = [
        g,
        center + Complex64::new(h, 0.0),
        center - Complex64::new(h, 0.0),
        center + Complex64::new(0.0, h),
        center - Complex64::new(0.0, h),
    ];
    let sims = points
        .iter()
        .map(|p| Ok(BlockSimulator::new(&src.with_g(*p)?, layout, budget)))
        .collect::<Result<Vec<_>, FisherError>>()?;

    let nd = settings.deltas.len();
    let chunk = settings.trials.div_ceil(settings.batches as u64);
    let tallies = map_chunks(settings.backend, settings.trials, chunk, |range| {
        let mut t = Tally::new(nd);
        for trial in range {
            let d = (trial % nd as u64) as usize;
            let delta = settings.deltas[d];
            t.blocks[d] += 1;
            for (s, sim) in sims.iter().enumerate() {
                let mut rng = trial_rng(settings.seed, trial);
                let out = sim.run_block(delta, &mut rng)?;
                if let Some(o) = out.outcome() {
                    t.counts[d][s][usize::from(o == XOutcome::Minus)] += 1;
                    if s == 0 {
                        t.accepted += 1;
                    }
                }
                debug_assert!(s > 0 || !matches!(out, BlockOutcome::Sample { arrival_bin: 0, .. }));
            }
        }
        Ok::<_, CodecError>(t)
    });

    let mut pooled = Tally::new(nd);
    let mut batch_norms = Vec::with_capacity(tallies.len());
    for t in tallies {
        let t = t?;
        batch_norms.push(t.fisher(h).trace_norm());
        pooled.merge(&t);
    }
    let matrix = pooled.fisher(h);
    let b = batch_norms.len() as f64;
    let mean = batch_norms.iter().sum::<f64>() / b;
    let var = batch_norms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
    Ok(EmpiricalFisher {
        matrix,
        std_error: (var / b).sqrt(),
        batch_norms,
        post_selection_rate: pooled.accepted as f64 / settings.trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::noise::{apply_budget, ideal_readout_state};
    use proptest::prelude::*;

    fn rs(p: f64, c: f64) -> ReadoutState {
        ReadoutState { p, c }
    }

    fn numeric_fisher(r: ReadoutState, g: Complex64, delta: f64) -> FisherMatrix {
        let h = 1e-5;
        let dp = |k: usize| {
            let e = if k == 0 { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
            let (a0, a1) = outcome_probabilities(r, g + e, delta);
            let (b0, b1) = outcome_probabilities(r, g - e, delta);
            [(a0 - b0) / (2.0 * h), (a1 - b1) / (2.0 * h)]
        };
        let (p0, p1) = outcome_probabilities(r, g, delta);
        let d = [dp(0), dp(1)];
        let mut f = [[0.0; 2]; 2];
        for k in 0..2 {
            for l in 0..2 {
                f[k][l] = d[k][0] * d[l][0] / p0 + d[k][1] * d[l][1] / p1;
            }
        }
        FisherMatrix::new(f)
    }

    #[test]
    fn outcome_probability_examples() {
        let g = Complex64::new(0.3, -0.2);
        let (a, b) = outcome_probabilities(rs(0.4, 0.0), g, 0.7);
        assert_eq!((a, b), (0.2, 0.2));
        let (a, _) = outcome_probabilities(rs(0.4, 0.6), Complex64::new(1.0, 0.0), 0.0);
        assert!((a - 0.4 * 1.6 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_phase_gives_p_c_squared() {
        let r = rs(0.3, 0.8);
        let g = Complex64::from_polar(0.9, 0.4);
        let delta = 0.4 + FRAC_PI_2;
        let f = analytic_fisher(r, g, delta);
        assert!((f.trace_norm() - 0.3 * 0.64).abs() < 1e-12);
    }

    #[test]
    fn zero_phase_is_g1_only() {
        let f = analytic_fisher(rs(0.5, 0.5), Complex64::new(0.4, 0.4), 0.0);
        assert!(f.entries[0][0] > 0.0);
        assert_eq!(f.entries[0][1], 0.0);
        assert_eq!(f.entries[1][1], 0.0);
        assert_eq!(analytic_fisher(rs(0.5, 0.0), Complex64::new(0.4, 0.0), 0.0), FisherMatrix::zero());
    }

    #[test]
    fn benchmark_examples() {
        let (a, b) = benchmark_bounds(0.01, 100.0);
        assert!((a - 1.0).abs() < 1e-12 && (b - 0.01).abs() < 1e-12);
        for eps in [1e-4, 1e-3, 1e-2] {
            for m in [1.0, 10.0, 50.0] {
                if m * eps > 1.0 {
                    continue;
                }
                let (nl, l) = benchmark_bounds(eps, m);
                assert!((nl / l - 1.0 / eps).abs() < 1e-6 / eps);
                assert!(fisher_lower_bound(eps, m, &ErrorBudget::ideal()) <= nl);
            }
        }
    }

    #[test]
    fn lower_bound_examples() {
        let b = ErrorBudget::ideal();
        let r = fisher_lower_bound(1e-5, 4.0, &b) / 4e-5;
        assert!((r - 1.0).abs() < 1e-3);
        let v = fisher_lower_bound(1e-3, 1000.0, &b);
        // direct evaluation with (1+eps)^M ~ e
        let e = std::f64::consts::E;
        assert!((v / (1.0 / ((e - 1.0) * e)) - 1.0).abs() < 0.02, "{v}");
        assert!((v - 0.214).abs() / 0.214 < 0.02);
        let dead = ErrorBudget { f_e: 0.5, ..ErrorBudget::ideal() };
        assert_eq!(fisher_lower_bound(1e-3, 7.0, &dead), 0.0);
    }

    #[test]
    fn additivity() {
        let r = rs(0.3, 0.7);
        let g = Complex64::new(0.5, 0.1);
        let one = analytic_fisher(r, g, 0.3);
        let two = one.add(&one);
        assert!((two.trace_norm() - 2.0 * one.trace_norm()).abs() < 1e-15);
    }

    #[test]
    fn empirical_rejects_bad_settings() {
        let src = ThermalSource::from_polar(0.1, 1.0, 0.0).unwrap();
        let l = MemoryLayout::from_bins(3).unwrap();
        let b = ErrorBudget::ideal();
        let few = EmpiricalSettings { trials: 100, ..Default::default() };
        assert!(matches!(empirical_fisher(&src, l, &b, &few), Err(FisherError::TooFewTrials { .. })));
        let one = EmpiricalSettings { deltas: vec![0.0], trials: 20_000, ..Default::default() };
        assert!(matches!(empirical_fisher(&src, l, &b, &one), Err(FisherError::PhaseSettings)));
        let ok = EmpiricalSettings { deltas: vec![0.3, 0.3 + 3.0 * FRAC_PI_2], ..one };
        assert!(check_phases(&ok.deltas));
    }

    #[test]
    fn fully_depolarized_carries_no_information() {
        let src = ThermalSource::from_polar(0.1, 1.0, 0.3).unwrap();
        let l = MemoryLayout::from_bins(3).unwrap();
        let b = ErrorBudget { f_t: 0.5, ..ErrorBudget::ideal() };
        let s = EmpiricalSettings { trials: 20_000, seed: 5, ..Default::default() };
        let f = empirical_fisher(&src, l, &b, &s).unwrap();
        assert!(f.matrix.trace_norm() < 1e-3);
    }

    #[test]
    fn empirical_tracks_analytic_small_run() {
        let src = ThermalSource::from_polar(0.1, 1.0, 0.0).unwrap();
        let l = MemoryLayout::from_bins(3).unwrap();
        let b = ErrorBudget::ideal();
        let s = EmpiricalSettings { trials: 60_000, seed: 11, ..Default::default() };
        let f = empirical_fisher(&src, l, &b, &s).unwrap();
        let r = apply_budget(ideal_readout_state(0.1, 3.0), &b, 3.0);
        let want = analytic_fisher_sum(r, src.g(), &s.deltas);
        let got = f.matrix.trace_norm();
        assert!((got - want.trace_norm()).abs() < 5.0 * f.std_error + 0.02, "{got} vs {}", want.trace_norm());
        let expected_rate = r.p;
        assert!((f.post_selection_rate - expected_rate).abs() < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn analytic_matches_finite_differences(
            p in 0.05f64..1.0, c in 0.05f64..0.95,
            mag in 0.0f64..1.0, phase in -PI..PI, delta in -PI..PI,
        ) {
            let r = rs(p, c);
            let g = Complex64::from_polar(mag, phase);
            let a = analytic_fisher(r, g, delta);
            let n = numeric_fisher(r, g, delta);
            let scale = a.trace_norm().max(1e-12);
            for i in 0..2 { for j in 0..2 {
                prop_assert!((a.entries[i][j] - n.entries[i][j]).abs() <= 1e-6 * scale);
            }}
        }

        #[test]
        fn probabilities_sum_to_p(p in 0.0f64..1.0, c in 0.0f64..1.0, mag in 0.0f64..1.0,
                                  phase in -3.2f64..3.2, delta in -3.2f64..3.2) {
            let (a, b) = outcome_probabilities(rs(p, c), Complex64::from_polar(mag, phase), delta);
            prop_assert!((a + b - p).abs() < 1e-15);
            prop_assert!(a >= 0.0 && b >= 0.0);
        }

        #[test]
        fn single_phase_rank_one_pair_full_rank(
            p in 0.05f64..1.0, c in 0.05f64..0.95, mag in 0.01f64..1.0,
            phase in -3.1f64..3.1, delta in -3.1f64..3.1,
        ) {
            let r = rs(p, c);
            let g = Complex64::from_polar(mag, phase);
            let one = analytic_fisher(r, g, delta);
            prop_assert!(one.is_symmetric(0.0));
            prop_assert_eq!(one.rank(1e-9), 1);
            prop_assert!(one.eigenvalues().1 > -1e-12);
            let both = one.add(&analytic_fisher(r, g, delta + FRAC_PI_2));
            prop_assert_eq!(both.rank(1e-9), 2);
        }

        #[test]
        fn bound_is_p_c_squared(
            log_eps in -8.0f64..-0.3, log_me in -6.0f64..2.5,
            p_t in 0.5f64..1.0, f_t in 0.6f64..1.0, f_1 in 0.6f64..1.0, f_2 in 0.6f64..1.0, f_e in 0.6f64..1.0,
        ) {
            let eps = 10f64.powf(log_eps);
            let m = (10f64.powf(log_me) / eps).max(1.0);
            let b = ErrorBudget::new(p_t, f_t, f_1, f_2, f_e).unwrap();
            let r = apply_budget(ideal_readout_state(eps, m), &b, m);
            let want = r.p * r.c * r.c;
            let got = fisher_lower_bound(eps, m, &b);
            if want < 1e-290 {
                // both underflow
                prop_assert!(got < 1e-280);
            } else {
                prop_assert!(((got - want) / want).abs() < 1e-12, "{} {}", got, want);
            }
        }
    }
}
