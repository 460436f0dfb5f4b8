//! Estimation campaign: run blocks until a target number of post-selected
//! photon events, estimate `g` from the corrected readouts, and compare the
//! spread with the Cramér–Rao bound.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{BlockOutcome, BlockSimulator, CodecError, MemoryLayout};
use crate::exec::{map_chunks, trial_rng, Backend, DEFAULT_CHUNK};
use crate::fisher::{analytic_fisher, FisherMatrix};
use crate::noise::{apply_budget, ideal_readout_state, ErrorBudget, ReadoutState};
use crate::qsim::XOutcome;
use crate::source::ThermalSource;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CampaignError {
    #[error("at least one phase setting is required")]
    NoPhases,
    #[error("phase settings do not span both quadratures")]
    Degenerate,
    #[error("event target must be positive")]
    NoEvents,
    #[error("source never yields a usable event (post-selection probability {0})")]
    Dark(f64),
    #[error("coherent fraction is zero; the readout carries no information")]
    NoCoherence,
    #[error("only {got} of {wanted} events after {blocks} blocks")]
    Exhausted { got: u64, wanted: u64, blocks: u64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub source: ThermalSource,
    pub layout: MemoryLayout,
    pub budget: ErrorBudget,
    /// Phase settings, cycled per post-selected event.
    pub deltas: Vec<f64>,
    pub events: u64,
    pub seed: u64,
    /// Gives up after this many blocks; `None` allows 20x the expected count.
    pub max_blocks: Option<u64>,
    pub backend: Backend,
}

impl CampaignConfig {
    pub fn new(source: ThermalSource, layout: MemoryLayout, budget: ErrorBudget, events: u64, seed: u64) -> Self {
        Self {
            source,
            layout,
            budget,
            deltas: vec![0.0, FRAC_PI_2],
            events,
            seed,
            max_blocks: None,
            backend: Backend::Parallel,
        }
    }

    /// Post-selected readout state `(p, c)` for this source, code and budget.
    pub fn readout_state(&self) -> ReadoutState {
        let m = self.layout.bins() as f64;
        apply_budget(ideal_readout_state(self.source.epsilon(), m), &self.budget, m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTally {
    pub delta: f64,
    pub events: u64,
    pub plus: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub g_hat: Complex64,
    /// Estimated variance of each quadrature estimate.
    pub variance: [f64; 2],
    /// `[F^-1]_kk` for the realized events.
    pub cramer_rao: [f64; 2],
    pub variance_ratio: [f64; 2],
    /// `1/||F||` for the realized events.
    pub trace_bound: f64,
    pub events: u64,
    pub blocks: u64,
    pub post_selection_rate: f64,
    /// Share of events that came from multi-photon blocks.
    pub multi_fraction: f64,
    pub coherent_fraction: f64,
    pub phases: Vec<PhaseTally>,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    block: u64,
    phase: u16,
    plus: bool,
    multi: bool,
}

const CHUNKS_PER_ROUND: u64 = 64;

/// Runs the campaign. Blocks are simulated in fixed chunks with per-block
/// random streams; events are taken in block order, so the result does not
/// depend on the number of workers.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    if cfg.deltas.is_empty() {
        return Err(CampaignError::NoPhases);
    }
    if cfg.events == 0 {
        return Err(CampaignError::NoEvents);
    }
    let rs = cfg.readout_state();
    if rs.p.is_nan() || rs.p <= 0.0 {
        return Err(CampaignError::Dark(rs.p));
    }
    if rs.c.is_nan() || rs.c <= 0.0 {
        return Err(CampaignError::NoCoherence);
    }
    let mut gram = [[0.0; 2]; 2];
    for d in &cfg.deltas {
        let a = [d.cos(), d.sin()];
        for k in 0..2 {
            for l in 0..2 {
                gram[k][l] += a[k] * a[l];
            }
        }
    }
    if FisherMatrix::new(gram).rank(1e-9) < 2 {
        return Err(CampaignError::Degenerate);
    }
    let max_blocks = cfg
        .max_blocks
        .unwrap_or_else(|| (20.0 * cfg.events as f64 / rs.p).ceil().min(u64::MAX as f64 / 2.0) as u64 + 10_000);

    let sim = BlockSimulator::new(&cfg.source, cfg.layout, &cfg.budget);
    let nd = cfg.deltas.len();
    let mut events: Vec<Event> = Vec::with_capacity(cfg.events as usize);
    let mut next_block = 0u64;
    while (events.len() as u64) < cfg.events && next_block < max_blocks {
        let round = (CHUNKS_PER_ROUND * DEFAULT_CHUNK).min(max_blocks - next_block);
        let start = next_block;
        let chunks = map_chunks(cfg.backend, round, DEFAULT_CHUNK, |range| {
            let mut out = Vec::new();
            let mut k = 0usize;
            for i in range {
                let block = start + i;
                let phase = k % nd;
                let mut rng = trial_rng(cfg.seed, block);
                let o = sim.run_block(cfg.deltas[phase], &mut rng)?;
                if let Some(y) = o.outcome() {
                    out.push(Event {
                        block,
                        phase: phase as u16,
                        plus: y == XOutcome::Plus,
                        multi: matches!(o, BlockOutcome::Multi { .. }),
                    });
                    k += 1;
                }
            }
            Ok::<_, CodecError>(out)
        });
        for c in chunks {
            events.extend(c?);
        }
        next_block += round;
    }
    if (events.len() as u64) < cfg.events {
        return Err(CampaignError::Exhausted {
            got: events.len() as u64,
            wanted: cfg.events,
            blocks: next_block,
        });
    }
    events.truncate(cfg.events as usize);
    let blocks = events.last().map_or(0, |e| e.block + 1);
    Ok(estimate(cfg, rs, &events, blocks))
}

fn estimate(cfg: &CampaignConfig, rs: ReadoutState, events: &[Event], blocks: u64) -> CampaignResult {
    let n = events.len() as f64;
    let mut phases: Vec<PhaseTally> = cfg
        .deltas
        .iter()
        .map(|d| PhaseTally { delta: *d, events: 0, plus: 0 })
        .collect();
    let mut multi = 0u64;
    for e in events {
        let t = &mut phases[e.phase as usize];
        t.events += 1;
        t.plus += u64::from(e.plus);
        multi += u64::from(e.multi);
    }

    // least squares on x = y/c with E[x] = g1 cos d + g2 sin d
    let mut ata = [[0.0; 2]; 2];
    let mut atx = [0.0; 2];
    for t in &phases {
        let a = [t.delta.cos(), t.delta.sin()];
        let sum_x = (2.0 * t.plus as f64 - t.events as f64) / rs.c;
        for k in 0..2 {
            atx[k] += a[k] * sum_x;
            for l in 0..2 {
                ata[k][l] += a[k] * a[l] * t.events as f64;
            }
        }
    }
    let inv = invert(ata);
    let g = [
        inv[0][0] * atx[0] + inv[0][1] * atx[1],
        inv[1][0] * atx[0] + inv[1][1] * atx[1],
    ];

    // sandwich covariance from per-setting residual variance
    let mut meat = [[0.0; 2]; 2];
    for t in &phases {
        if t.events == 0 {
            continue;
        }
        let a = [t.delta.cos(), t.delta.sin()];
        let m = t.events as f64;
        let mean = (2.0 * t.plus as f64 - m) / (m * rs.c);
        // sample variance of x over this setting's events
        let ex2 = 1.0 / (rs.c * rs.c);
        let var = if m > 1.0 { (ex2 - mean * mean) * m / (m - 1.0) } else { 0.0 };
        for k in 0..2 {
            for l in 0..2 {
                meat[k][l] += a[k] * a[l] * m * var;
            }
        }
    }
    let cov = mul(mul(inv, meat), inv);
    let variance = [cov[0][0].max(0.0), cov[1][1].max(0.0)];

    let post = ReadoutState { p: 1.0, c: rs.c };
    let g_true = cfg.source.g();
    let fisher = phases.iter().fold(FisherMatrix::zero(), |acc, t| {
        acc.add(&analytic_fisher(post, g_true, t.delta).scale(t.events as f64))
    });
    let cramer_rao = fisher.inverse_diagonal().unwrap_or([f64::INFINITY; 2]);
    CampaignResult {
        g_hat: Complex64::new(g[0], g[1]),
        variance,
        cramer_rao,
        variance_ratio: [variance[0] / cramer_rao[0], variance[1] / cramer_rao[1]],
        trace_bound: 1.0 / fisher.trace_norm(),
        events: events.len() as u64,
        blocks,
        post_selection_rate: n / blocks as f64,
        multi_fraction: multi as f64 / n,
        coherent_fraction: rs.c,
        phases,
    }
}

fn invert(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(eps: f64, g: Complex64, events: u64, seed: u64) -> CampaignConfig {
        CampaignConfig::new(
            ThermalSource::new(eps, g).unwrap(),
            MemoryLayout::from_bins(7).unwrap(),
            ErrorBudget::ideal(),
            events,
            seed,
        )
    }

    #[test]
    fn recovers_visibility() {
        let r = run_campaign(&cfg(0.05, Complex64::new(1.0, 0.0), 20_000, 1)).unwrap();
        assert_eq!(r.events, 20_000);
        assert!((r.g_hat.re - 1.0).abs() < 0.05, "{:?}", r.g_hat);
        assert!(r.g_hat.im.abs() < 0.05);
        assert!(r.post_selection_rate > 0.0 && r.post_selection_rate <= 1.0);
        assert!(r.phases[0].events.abs_diff(10_000) < 100);

        let g = Complex64::from_polar(0.6, 2.0);
        let r = run_campaign(&cfg(0.05, g, 20_000, 2)).unwrap();
        assert!((r.g_hat - g).norm() < 0.08, "{:?}", r.g_hat);
    }

    #[test]
    fn deterministic_across_backends() {
        let mut a = cfg(0.1, Complex64::from_polar(0.8, 0.3), 3_000, 9);
        let r1 = run_campaign(&a).unwrap();
        a.backend = Backend::Sequential;
        let r2 = run_campaign(&a).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn variance_matches_bound() {
        let r = run_campaign(&cfg(0.05, Complex64::new(1.0, 0.0), 40_000, 3)).unwrap();
        for k in 0..2 {
            assert!((r.variance_ratio[k] - 1.0).abs() < 0.05, "{:?}", r.variance_ratio);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = cfg(0.05, Complex64::new(1.0, 0.0), 10, 0);
        c.deltas = vec![0.0, std::f64::consts::PI];
        assert_eq!(run_campaign(&c), Err(CampaignError::Degenerate));
        c.deltas.clear();
        assert_eq!(run_campaign(&c), Err(CampaignError::NoPhases));
        let dark = cfg(0.0, Complex64::new(1.0, 0.0), 10, 0);
        assert!(matches!(run_campaign(&dark), Err(CampaignError::Dark(_))));
    }
}
