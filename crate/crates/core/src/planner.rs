//! Block-length optimization and observatory-scale resource arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_chunks, map_items, Backend};
use crate::fisher::fisher_lower_bound;
use crate::noise::{register_count, ErrorBudget, NoiseError};

/// Photons per mode for a magnitude-10 star with the reference collector.
pub const REFERENCE_EPSILON: f64 = 7e-7;
pub const REFERENCE_MAGNITUDE: f64 = 10.0;
pub const REFERENCE_AREA_M2: f64 = 10.0;
pub const REFERENCE_LAMBDA_M: f64 = 555e-9;
/// Visual band accepted by [`epsilon_from_magnitude`].
pub const V_BAND_M: (f64, f64) = (500e-9, 600e-9);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("mean photon number {0} must be positive and finite")]
    Epsilon(f64),
    #[error("block-length ceiling must be at least 1")]
    Ceiling,
    #[error("no block length up to {m_max} gives positive Fisher information at eps = {eps}")]
    Infeasible { eps: f64, m_max: u64 },
    #[error("{name} = {value} must be positive")]
    Observatory { name: &'static str, value: f64 },
    #[error("wavelength {0} m is outside the visual band")]
    UnsupportedBand(f64),
    #[error(transparent)]
    Budget(#[from] NoiseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanQuery {
    pub epsilon: f64,
    pub budget: ErrorBudget,
    pub m_max: u64,
}

impl PlanQuery {
    /// Searches up to `4/eps`, well past the optimum for any budget.
    pub fn new(epsilon: f64, budget: ErrorBudget) -> Self {
        let m_max = if epsilon > 0.0 { (4.0 / epsilon).ceil().clamp(1.0, 1e10) as u64 } else { 1 };
        Self { epsilon, budget, m_max }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(PlanError::Epsilon(self.epsilon));
        }
        if self.m_max < 1 {
            return Err(PlanError::Ceiling);
        }
        self.budget.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub m_star: u64,
    /// `log2(M+1)`
    pub pairs_per_block: f64,
    /// `ceil(1/F)` blocks to accumulate unit Fisher information.
    pub blocks_needed: u64,
    /// `blocks_needed * pairs_per_block`
    pub total_pairs: f64,
    /// `pairs_per_block / F`, the quantity minimized over `M`.
    pub expected_pairs: f64,
    pub fisher_min: f64,
    /// Register count for hardware, `ceil(log2(M+1))`.
    pub qubits_per_site: u32,
}

fn cost(eps: f64, m: u64, budget: &ErrorBudget) -> Option<(f64, f64)> {
    let f = fisher_lower_bound(eps, m as f64, budget);
    (f > 0.0 && f.is_finite()).then(|| (register_count(m as f64) / f, f))
}

/// Finds the block length minimizing Bell pairs per unit Fisher information.
/// Exhaustive over `1..=m_max`; ties go to the smaller `M`.
pub fn optimize_block(query: &PlanQuery) -> Result<PlanResult, PlanError> {
    optimize_block_with(query, Backend::Parallel)
}

pub fn optimize_block_with(query: &PlanQuery, backend: Backend) -> Result<PlanResult, PlanError> {
    query.validate()?;
    let eps = query.epsilon;
    let chunk = (query.m_max / 64).max(1 << 16);
    let best = map_chunks(backend, query.m_max, chunk, |range| {
        let mut best: Option<(u64, f64, f64)> = None;
        for i in range {
            let m = i + 1;
            if let Some((c, f)) = cost(eps, m, &query.budget) {
                if best.is_none_or(|b| c < b.1) {
                    best = Some((m, c, f));
                }
            }
        }
        best
    })
    .into_iter()
    .flatten()
    .fold(None, |acc: Option<(u64, f64, f64)>, b| match acc {
        Some(a) if a.1 <= b.1 => Some(a),
        _ => Some(b),
    });
    let (m_star, expected_pairs, fisher_min) =
        best.ok_or(PlanError::Infeasible { eps, m_max: query.m_max })?;
    let pairs_per_block = register_count(m_star as f64);
    let blocks_needed = (1.0 / fisher_min).ceil().max(1.0) as u64;
    Ok(PlanResult {
        m_star,
        pairs_per_block,
        blocks_needed,
        total_pairs: blocks_needed as f64 * pairs_per_block,
        expected_pairs,
        fisher_min,
        qubits_per_site: pairs_per_block.ceil() as u32,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epsilon: f64,
    pub nu: f64,
    pub plan: PlanResult,
}

/// Optimal plan for every `(eps, nu)` pair, with budgets from
/// [`ErrorBudget::with_nu`]. Rows are ordered by `nu`, then `eps`.
pub fn pairs_curve(eps_grid: &[f64], nus: &[f64], backend: Backend) -> Result<Vec<CurveRow>, PlanError> {
    let mut cells = Vec::new();
    for &nu in nus {
        let budget = ErrorBudget::with_nu(nu)?;
        for &eps in eps_grid {
            cells.push((eps, nu, budget));
        }
    }
    map_items(backend, cells, |(eps, nu, budget)| {
        // cells already run in parallel
        let plan = optimize_block_with(&PlanQuery::new(eps, budget), Backend::Sequential)?;
        Ok(CurveRow { epsilon: eps, nu, plan })
    })
    .into_iter()
    .collect()
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservatorySpec {
    pub delta_f_hz: f64,
    pub area_m2: f64,
    pub lambda_m: f64,
    pub magnitude: f64,
    pub baseline_m: f64,
}

impl ObservatorySpec {
    /// 10 GHz detectors, 10 m^2 collection, 555 nm, magnitude 10, 330 m baseline.
    pub fn reference() -> Self {
        Self {
            delta_f_hz: 10e9,
            area_m2: REFERENCE_AREA_M2,
            lambda_m: REFERENCE_LAMBDA_M,
            magnitude: REFERENCE_MAGNITUDE,
            baseline_m: 330.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        for (name, value) in [
            ("delta_f_hz", self.delta_f_hz),
            ("area_m2", self.area_m2),
            ("lambda_m", self.lambda_m),
            ("baseline_m", self.baseline_m),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PlanError::Observatory { name, value });
            }
        }
        if !self.magnitude.is_finite() {
            return Err(PlanError::Observatory { name: "magnitude", value: self.magnitude });
        }
        Ok(())
    }
}

/// Photons per detector mode. Scales with collecting area, with flux as
/// `10^{-0.4 mag}`, and with wavelength through the photon energy; the
/// detector bandwidth drops out because a mode lasts `1/delta_f`.
pub fn epsilon_from_magnitude(spec: &ObservatorySpec) -> Result<f64, PlanError> {
    spec.validate()?;
    if spec.lambda_m < V_BAND_M.0 || spec.lambda_m > V_BAND_M.1 {
        return Err(PlanError::UnsupportedBand(spec.lambda_m));
    }
    Ok(REFERENCE_EPSILON
        * (spec.area_m2 / REFERENCE_AREA_M2)
        * 10f64.powf(-0.4 * (spec.magnitude - REFERENCE_MAGNITUDE))
        * (spec.lambda_m / REFERENCE_LAMBDA_M))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub epsilon: f64,
    /// `ceil(log2(1/eps))`
    pub qubits_per_site: u32,
    /// `delta_f eps log2(1/eps)`
    pub entanglement_rate_hz: f64,
    /// `lambda / b`
    pub angular_resolution_rad: f64,
    pub angular_resolution_mas: f64,
    /// Pairs per photon without memories (`1/eps`) over pairs per photon with
    /// the binary code (`log2(1/eps)`).
    pub memoryless_improvement: f64,
    pub plan: PlanResult,
}

pub const RAD_TO_MAS: f64 = 180.0 / std::f64::consts::PI * 3600.0 * 1e3;

pub fn resource_report(spec: &ObservatorySpec, budget: &ErrorBudget) -> Result<ResourceReport, PlanError> {
    let eps = epsilon_from_magnitude(spec)?;
    let bits = (1.0 / eps).log2();
    let plan = optimize_block(&PlanQuery::new(eps, *budget))?;
    let res = spec.lambda_m / spec.baseline_m;
    Ok(ResourceReport {
        epsilon: eps,
        qubits_per_site: bits.ceil() as u32,
        entanglement_rate_hz: spec.delta_f_hz * eps * bits,
        angular_resolution_rad: res,
        angular_resolution_mas: res * RAD_TO_MAS,
        memoryless_improvement: 1.0 / (eps * bits),
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(eps: f64, nu: f64) -> PlanResult {
        optimize_block(&PlanQuery::new(eps, ErrorBudget::with_nu(nu).unwrap())).unwrap()
    }

    #[test]
    fn ideal_optimum_near_point_seven_over_eps() {
        let p = plan(1e-4, 1.0);
        let x = p.m_star as f64 * 1e-4;
        assert!((x / 0.7 - 1.0).abs() <= 0.2, "{x}");
        for eps in [1e-3, 1e-4, 1e-5] {
            let x = plan(eps, 1.0).m_star as f64 * eps;
            assert!((0.4..=1.1).contains(&x), "{eps}: {x}");
        }
    }

    #[test]
    fn poor_hardware_is_memoryless() {
        assert_eq!(plan(1e-4, 0.6).m_star, 1);
    }

    #[test]
    fn invariants_hold() {
        let p = plan(1e-3, 0.8);
        assert_eq!(p.blocks_needed, (1.0 / p.fisher_min).ceil() as u64);
        assert_eq!(p.total_pairs, p.blocks_needed as f64 * p.pairs_per_block);
        let f = fisher_lower_bound(1e-3, p.m_star as f64, &ErrorBudget::with_nu(0.8).unwrap());
        assert_eq!(f.to_bits(), p.fisher_min.to_bits());
    }

    #[test]
    fn better_hardware_never_costs_more() {
        for eps in log_grid(1e-6, 1e-2, 9) {
            let a = plan(eps, 0.6).expected_pairs;
            let b = plan(eps, 0.8).expected_pairs;
            let c = plan(eps, 1.0).expected_pairs;
            assert!(c <= b && b <= a, "{eps}: {a} {b} {c}");
        }
    }

    #[test]
    fn ideal_cost_logarithmic() {
        for eps in log_grid(1e-7, 1e-3, 5) {
            let r = plan(eps, 1.0).total_pairs / (1.0 / eps).log2();
            assert!((1.0..=10.0).contains(&r), "{eps}: {r}");
        }
    }

    #[test]
    fn backends_agree() {
        let q = PlanQuery::new(3e-5, ErrorBudget::with_nu(0.8).unwrap());
        assert_eq!(
            optimize_block_with(&q, Backend::Sequential).unwrap(),
            optimize_block_with(&q, Backend::Parallel).unwrap()
        );
    }

    #[test]
    fn infeasible_is_reported() {
        let dead = ErrorBudget { f_e: 0.5, ..ErrorBudget::ideal() };
        assert!(matches!(
            optimize_block(&PlanQuery::new(1e-3, dead)),
            Err(PlanError::Infeasible { .. })
        ));
        assert!(optimize_block(&PlanQuery::new(0.0, ErrorBudget::ideal())).is_err());
    }

    #[test]
    fn magnitude_examples() {
        let s = ObservatorySpec::reference();
        assert_eq!(epsilon_from_magnitude(&s).unwrap(), 7e-7);
        let dim = ObservatorySpec { magnitude: 12.5, ..s };
        assert!((epsilon_from_magnitude(&dim).unwrap() / 7e-8 - 1.0).abs() < 1e-12);
        let big = ObservatorySpec { area_m2: 20.0, ..s };
        assert!((epsilon_from_magnitude(&big).unwrap() / 1.4e-6 - 1.0).abs() < 1e-12);
        let red = ObservatorySpec { lambda_m: 800e-9, ..s };
        assert!(matches!(epsilon_from_magnitude(&red), Err(PlanError::UnsupportedBand(_))));
    }

    #[test]
    fn reference_resources() {
        let r = resource_report(&ObservatorySpec::reference(), &ErrorBudget::ideal()).unwrap();
        assert_eq!(r.qubits_per_site, 21);
        assert!((1e5..=3e5).contains(&r.entanglement_rate_hz));
        assert!((r.angular_resolution_rad - 1.68e-9).abs() < 0.01e-9);
        assert!((r.angular_resolution_mas - 0.35).abs() < 0.01);
        assert!(r.memoryless_improvement > 2.5e4 && r.memoryless_improvement < 1e5);
        let far = ObservatorySpec { baseline_m: 10e3, ..ObservatorySpec::reference() };
        let r = resource_report(&far, &ErrorBudget::ideal()).unwrap();
        assert!((r.angular_resolution_mas * 1e3 - 11.4).abs() < 0.1);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-7, 1e-2, 6);
        assert_eq!(g.len(), 6);
        assert!((g[0] - 1e-7).abs() < 1e-20 && (g[5] - 1e-2).abs() < 1e-15);
    }
}
