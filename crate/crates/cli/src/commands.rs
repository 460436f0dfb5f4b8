//! Subcommand jobs. Each job is fully built and validated from the config
//! before anything runs.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use qinterf::campaign::{run_campaign, CampaignConfig};
use qinterf::codec::MemoryLayout;
use qinterf::entropy::bound_row;
use qinterf::exec::Backend;
use qinterf::fisher::{
    analytic_fisher_sum, benchmark_bounds, empirical_fisher, fisher_lower_bound, EmpiricalSettings,
};
use qinterf::noise::{apply_budget, ideal_readout_state, ErrorBudget};
use qinterf::planner::{
    epsilon_from_magnitude, log_grid, optimize_block, pairs_curve, resource_report, ObservatorySpec, PlanError,
    PlanQuery, V_BAND_M,
};
use qinterf::source::ThermalSource;

use crate::config::{ConfigError, RunConfig};
use crate::output::{Cell, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    FisherCurve,
    Optimize,
    Entropy,
    Resources,
}

#[derive(Debug, Clone)]
pub enum Job {
    Simulate(CampaignConfig),
    FisherCurve(FisherCurve),
    Optimize { eps: Vec<f64>, nus: Vec<f64>, m_max: Option<u64> },
    Entropy { eps: Vec<f64> },
    Resources { spec: ObservatorySpec, budget: ErrorBudget },
}

#[derive(Debug, Clone)]
pub struct FisherCurve {
    eps: Vec<f64>,
    bins: Vec<u64>,
    budget: ErrorBudget,
    magnitude: f64,
    phase: f64,
    empirical: Option<(u64, u64)>,
}

fn seed(cfg: &mut RunConfig, cli_seed: Option<u64>) -> Result<u64, ConfigError> {
    let from_file = cfg.opt_u64("seed")?;
    cli_seed
        .or(from_file)
        .ok_or_else(|| ConfigError::Missing("a seed is required: pass --seed or set `seed`".into()))
}

fn eps_grid(cfg: &mut RunConfig, lo: f64, hi: f64, n: u64, max: f64) -> Result<Vec<f64>, ConfigError> {
    if let Some(list) = cfg.opt_f64_list("epsilons")? {
        for k in ["epsilon_min", "epsilon_max", "points"] {
            if cfg.has(k) {
                return Err(cfg.invalid(k, "cannot be combined with `epsilons`"));
            }
        }
        if list.is_empty() || list.iter().any(|e| !(*e > 0.0 && *e <= max)) {
            return Err(cfg.invalid("epsilons", format!("entries must lie in (0, {max}]")));
        }
        return Ok(list);
    }
    let lo = cfg.f64_in("epsilon_min", lo, f64::MIN_POSITIVE, max)?;
    let hi = cfg.f64_in("epsilon_max", hi, lo, max)?;
    let n = cfg.u64_min("points", n, 1)?;
    Ok(log_grid(lo, hi, n as usize))
}

fn layout(cfg: &mut RunConfig) -> Result<MemoryLayout, ConfigError> {
    if cfg.has("registers") {
        if cfg.has("bins") {
            return Err(cfg.invalid("registers", "cannot be combined with `bins`"));
        }
        let k = cfg.u64_min("registers", 3, 1)?;
        return MemoryLayout::new(k.min(u32::MAX as u64) as u32)
            .ok()
            .filter(|l| l.registers() <= 5)
            .ok_or_else(|| cfg.invalid("registers", "must lie in [1, 5]"));
    }
    let m = cfg.u64_min("bins", 7, 1)?;
    MemoryLayout::from_bins(m as usize)
        .ok()
        .filter(|l| l.registers() <= 5)
        .ok_or_else(|| cfg.invalid("bins", "must be 2^k - 1 with 1 <= k <= 5"))
}

/// Reads and validates everything the command needs. Leftover keys are errors.
pub fn build(command: Command, cfg: &mut RunConfig, cli_seed: Option<u64>) -> Result<Job, ConfigError> {
    match build_job(command, cfg, cli_seed) {
        // a misspelled key usually explains a missing one
        Err(ConfigError::Missing(m)) => cfg.finish().and(Err(ConfigError::Missing(m))),
        Err(e) => Err(e),
        Ok(job) => cfg.finish().map(|_| job),
    }
}

fn build_job(command: Command, cfg: &mut RunConfig, cli_seed: Option<u64>) -> Result<Job, ConfigError> {
    let job = match command {
        Command::Simulate => {
            let eps = cfg.f64_in("epsilon", 0.05, 0.0, 1.0)?;
            if eps == 0.0 {
                return Err(cfg.invalid("epsilon", "must be positive"));
            }
            let mag = cfg.f64_in("g_magnitude", 1.0, 0.0, 1.0)?;
            let phase = cfg.f64_in("g_phase_rad", 0.0, -1e3, 1e3)?;
            let layout = layout(cfg)?;
            let budget = cfg.budget()?;
            let deltas = cfg.opt_f64_list("deltas_rad")?.unwrap_or_else(|| vec![0.0, FRAC_PI_2]);
            let events = cfg.u64_min("events", 100_000, 1)?;
            let max_blocks = cfg.opt_u64("max_blocks")?;
            let seed = seed(cfg, cli_seed)?;
            let source = ThermalSource::from_polar(eps, mag, phase).map_err(|e| cfg.invalid("epsilon", e.to_string()))?;
            let mut c = CampaignConfig::new(source, layout, budget, events, seed);
            if deltas.is_empty() {
                return Err(cfg.invalid("deltas_rad", "needs at least one phase"));
            }
            // the phase settings must make both quadratures identifiable
            let (cc, cs, ss) = deltas.iter().fold((0.0, 0.0, 0.0), |(a, b, c), d| {
                (a + d.cos() * d.cos(), b + d.cos() * d.sin(), c + d.sin() * d.sin())
            });
            let spans = cc * ss - cs * cs > 1e-9;
            if !spans {
                return Err(cfg.invalid("deltas_rad", "must cover both quadratures"));
            }
            c.deltas = deltas;
            c.max_blocks = max_blocks;
            Job::Simulate(c)
        }
        Command::FisherCurve => {
            let eps = eps_grid(cfg, 1e-6, 0.1, 21, 1.0)?;
            let bins = cfg.opt_u64_list("block_lengths")?.unwrap_or_else(|| vec![1, 7, 63, 1023]);
            if bins.is_empty() || bins.contains(&0) {
                return Err(cfg.invalid("block_lengths", "entries must be at least 1"));
            }
            let budget = cfg.budget()?;
            let magnitude = cfg.f64_in("g_magnitude", 1.0, 0.0, 1.0)?;
            let phase = cfg.f64_in("g_phase_rad", 0.0, -1e3, 1e3)?;
            let empirical = match cfg.opt_u64("trials")? {
                None => None,
                Some(t) => {
                    if t < qinterf::fisher::MIN_TRIALS {
                        return Err(cfg.invalid("trials", format!("must be at least {}", qinterf::fisher::MIN_TRIALS)));
                    }
                    if let Some(m) = bins.iter().find(|m| MemoryLayout::from_bins(**m as usize).map_or(true, |l| l.registers() > 5)) {
                        return Err(cfg.invalid("block_lengths", format!("{m} cannot be simulated; use 2^k - 1 with k <= 5")));
                    }
                    Some((t, seed(cfg, cli_seed)?))
                }
            };
            if empirical.is_none() {
                // deterministic; a seed key is tolerated but unused
                cfg.opt_u64("seed")?;
            }
            Job::FisherCurve(FisherCurve { eps, bins, budget, magnitude, phase, empirical })
        }
        Command::Optimize => {
            let eps = eps_grid(cfg, 1e-7, 1e-2, 11, 0.1)?;
            let nus = cfg.opt_f64_list("nus")?.unwrap_or_else(|| vec![1.0, 0.8, 0.6]);
            if nus.is_empty() || nus.iter().any(|n| !(*n > 0.0 && *n <= 1.0)) {
                return Err(cfg.invalid("nus", "entries must lie in (0, 1]"));
            }
            let m_max = cfg.opt_u64("m_max")?;
            if m_max == Some(0) {
                return Err(cfg.invalid("m_max", "must be at least 1"));
            }
            cfg.opt_u64("seed")?;
            Job::Optimize { eps, nus, m_max }
        }
        Command::Entropy => {
            let eps = if cfg.has("epsilon_min") || cfg.has("epsilon_max") || cfg.has("points") || cfg.has("epsilons") {
                eps_grid(cfg, 1e-6, 1e-3, 4, 0.999_999)?
            } else {
                vec![1e-3, 1e-4, 1e-5, 1e-6]
            };
            cfg.opt_u64("seed")?;
            Job::Entropy { eps }
        }
        Command::Resources => {
            let r = ObservatorySpec::reference();
            let spec = ObservatorySpec {
                delta_f_hz: cfg.positive("delta_f_hz", r.delta_f_hz)?,
                area_m2: cfg.positive("area_m2", r.area_m2)?,
                lambda_m: cfg.f64_in("lambda_m", r.lambda_m, V_BAND_M.0, V_BAND_M.1)?,
                magnitude: cfg.f64_in("magnitude", r.magnitude, -30.0, 40.0)?,
                baseline_m: cfg.positive("baseline_m", r.baseline_m)?,
            };
            let budget = cfg.budget()?;
            epsilon_from_magnitude(&spec).map_err(|e| cfg.invalid("magnitude", e.to_string()))?;
            cfg.opt_u64("seed")?;
            Job::Resources { spec, budget }
        }
    };
    Ok(job)
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

pub fn run(job: &Job, backend: Backend) -> Result<Table, CliError> {
    match job {
        Job::Simulate(c) => {
            let mut c = c.clone();
            c.backend = backend;
            let r = run_campaign(&c).map_err(numerical)?;
            let mut t = Table::new(vec![
                "g1_hat", "g2_hat", "var_g1", "var_g2", "cramer_rao_g1", "cramer_rao_g2", "ratio_g1", "ratio_g2",
                "inverse_fisher_norm", "events", "blocks", "post_selection_rate", "multi_fraction",
                "coherent_fraction",
            ]);
            t.push(vec![
                r.g_hat.re.into(),
                r.g_hat.im.into(),
                r.variance[0].into(),
                r.variance[1].into(),
                r.cramer_rao[0].into(),
                r.cramer_rao[1].into(),
                r.variance_ratio[0].into(),
                r.variance_ratio[1].into(),
                r.trace_bound.into(),
                r.events.into(),
                r.blocks.into(),
                r.post_selection_rate.into(),
                r.multi_fraction.into(),
                r.coherent_fraction.into(),
            ]);
            Ok(t)
        }
        Job::FisherCurve(f) => fisher_curve(f, backend),
        Job::Optimize { eps, nus, m_max } => {
            let rows = match m_max {
                None => pairs_curve(eps, nus, backend).map_err(numerical)?,
                Some(m) => {
                    let mut rows = Vec::new();
                    for &nu in nus {
                        let budget = ErrorBudget::with_nu(nu).map_err(numerical)?;
                        for &e in eps {
                            let q = PlanQuery { m_max: *m, ..PlanQuery::new(e, budget) };
                            let plan = optimize_block(&q).map_err(numerical)?;
                            rows.push(qinterf::planner::CurveRow { epsilon: e, nu, plan });
                        }
                    }
                    rows
                }
            };
            let mut t = Table::new(vec![
                "epsilon", "nu", "M_star", "pairs_per_block", "blocks_needed", "total_pairs", "expected_pairs",
                "fisher_min",
            ]);
            for r in rows {
                t.push(vec![
                    r.epsilon.into(),
                    r.nu.into(),
                    r.plan.m_star.into(),
                    r.plan.pairs_per_block.into(),
                    r.plan.blocks_needed.into(),
                    r.plan.total_pairs.into(),
                    r.plan.expected_pairs.into(),
                    r.plan.fisher_min.into(),
                ]);
            }
            Ok(t)
        }
        Job::Entropy { eps } => {
            let mut t = Table::new(vec![
                "epsilon", "s_joint", "s_reduced", "s_conditional", "min_ebits", "asymptote", "protocol_pairs",
            ]);
            for &e in eps {
                let r = bound_row(e).map_err(numerical)?;
                t.push(vec![
                    r.epsilon.into(),
                    r.s_joint.into(),
                    r.s_reduced.into(),
                    r.s_conditional.into(),
                    r.min_ebits.into(),
                    r.asymptote.into(),
                    r.protocol_pairs.into(),
                ]);
            }
            Ok(t)
        }
        Job::Resources { spec, budget } => {
            let r = resource_report(spec, budget).map_err(|e| match e {
                PlanError::Infeasible { .. } => numerical(e),
                other => numerical(other),
            })?;
            let mut t = Table::new(vec![
                "epsilon", "qubits_per_site", "entanglement_rate_hz", "angular_resolution_rad",
                "angular_resolution_mas", "memoryless_improvement", "M_star", "total_pairs",
            ]);
            t.push(vec![
                r.epsilon.into(),
                r.qubits_per_site.into(),
                r.entanglement_rate_hz.into(),
                r.angular_resolution_rad.into(),
                r.angular_resolution_mas.into(),
                r.memoryless_improvement.into(),
                r.plan.m_star.into(),
                r.plan.total_pairs.into(),
            ]);
            Ok(t)
        }
    }
}

fn fisher_curve(f: &FisherCurve, backend: Backend) -> Result<Table, CliError> {
    let mut cols = vec![
        "epsilon", "bins", "p", "c", "fisher_min", "nonlocal_bound", "local_bound", "two_phase_fisher",
    ];
    if f.empirical.is_some() {
        cols.extend(["empirical_fisher", "empirical_std_error"]);
    }
    let mut t = Table::new(cols);
    let deltas = [0.0, FRAC_PI_2];
    for &m in &f.bins {
        for &eps in &f.eps {
            let mf = m as f64;
            let rs = apply_budget(ideal_readout_state(eps, mf), &f.budget, mf);
            let (nl, loc) = benchmark_bounds(eps, mf);
            let src = ThermalSource::from_polar(eps, f.magnitude, f.phase).map_err(numerical)?;
            let mut row: Vec<Cell> = vec![
                eps.into(),
                m.into(),
                rs.p.into(),
                rs.c.into(),
                fisher_lower_bound(eps, mf, &f.budget).into(),
                nl.into(),
                loc.into(),
                analytic_fisher_sum(rs, src.g(), &deltas).trace_norm().into(),
            ];
            if let Some((trials, seed)) = f.empirical {
                let layout = MemoryLayout::from_bins(m as usize).map_err(numerical)?;
                let s = EmpiricalSettings { trials, seed, backend, ..Default::default() };
                let e = empirical_fisher(&src, layout, &f.budget, &s).map_err(numerical)?;
                row.push(e.matrix.trace_norm().into());
                row.push(e.std_error.into());
            }
            t.push(row);
        }
    }
    Ok(t)
}
