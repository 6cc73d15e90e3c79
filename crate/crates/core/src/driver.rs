//! Successive convex approximation loop: initialize, solve the convex
//! subproblem at the current point, move there, repeat until the surrogate
//! stops improving.
//!
//! When the first subproblem is infeasible because the starting point misses
//! the QoS targets, a restoration loop maximizes the worst QoS slack first.

use std::time::Instant;

use log::{debug, info};

use crate::error::{Error, Result};
use crate::rate::{check_feasibility, rate_breakdown, weighted_sum_rate, Allocation, RateBreakdown};
use crate::scalar::{sum, Scalar};
use crate::scenario::{ChannelRealization, Mode, ScenarioConfig};
use crate::solver::{solve, solve_from, SolverOutcome, SolverStatus};
use crate::transform::{assemble_restoration, assemble_subproblem, ExpansionPoint, SubproblemSpec};

/// Newton-step budget of one convex subproblem.
pub const SUBPROBLEM_MAX_NEWTON: usize = 600;

/// Tolerance used when deciding whether the starting point already meets
/// every constraint of the original problem.
const START_FEASIBILITY_TOL: f64 = 1e-9;

/// Fraction of a budget handed out by the initial point, leaving interior
/// room for the solver.
const FILL: f64 = 0.95;
const COMMON_SHARE: f64 = 0.7;
const SLACK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterReached,
    InfeasibleScenario,
    SolverFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterReached => "max_iter_reached",
            SolveStatus::InfeasibleScenario => "infeasible_scenario",
            SolveStatus::SolverFailure => "solver_failure",
        }
    }

    /// Whether the report carries a usable allocation.
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Converged | SolveStatus::MaxIterReached)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    pub status: SolveStatus,
    /// Exact weighted sum-rate after each SCA iteration.
    pub objective_trajectory: Vec<T>,
    /// Optimal surrogate value of each subproblem.
    pub surrogate_trajectory: Vec<T>,
    pub final_alloc: Allocation<T>,
    pub rates: RateBreakdown<T>,
    /// Main-loop subproblem solves.
    pub iterations: usize,
    /// Subproblem solves spent restoring QoS feasibility.
    pub restoration_iterations: usize,
    pub wall_time_s: f64,
}

impl<T: Scalar> SolveReport<T> {
    /// Exact objective of the final allocation, `NaN` without a solution.
    pub fn objective(&self) -> T {
        if !self.status.has_solution() {
            return T::nan();
        }
        self.objective_trajectory.last().copied().unwrap_or_else(T::nan)
    }

    pub fn total_solves(&self) -> usize {
        self.iterations + self.restoration_iterations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Restoration,
    Main,
}

/// One subproblem solve, handed to observers of [`run_observed`].
pub struct IterationEvent<'a, T> {
    pub phase: Phase,
    pub index: usize,
    pub spec: &'a SubproblemSpec<T>,
    pub outcome: &'a SolverOutcome<T>,
}

/// Deterministic strictly-interior starting point.
///
/// The budget split starts at `β = 0.5`, moving to the middle of the range
/// compatible with both SIC families when needed. NOMA powers grow
/// geometrically with rank (falling back to the minimal SIC chain plus a
/// geometric top-up); RSMA spends 70% on the common stream. Returns
/// [`Error::InfeasibleScenario`] when no budget split can satisfy SIC.
pub fn initialize<T: Scalar>(config: &ScenarioConfig, ch: &ChannelRealization<T>) -> Result<ExpansionPoint<T>> {
    let u = config.num_users;
    if ch.num_users() != u {
        return Err(Error::Config("channel and configuration disagree on the user count".into()));
    }
    let p_max = T::lit(config.p_max_w());
    let p_tol = T::lit(config.p_tol_w());
    let mode = config.mode;
    let fill = T::lit(FILL);

    // Minimal NOMA chain: m_k = Σ_{j<k} m_j + P_tol/δ_{k−1}.
    let mut chain = vec![T::zero(); u];
    for k in 1..u {
        chain[k] = sum(chain[..k].iter().copied()) + p_tol / ch.delta_noma[k - 1];
    }
    let noma_min = if mode.uses_noma() { sum(chain.iter().copied()) } else { T::zero() };
    let tau_r = if mode.uses_rsma() {
        (0..u).map(|k| p_tol / ch.delta_rsma[k]).fold(T::zero(), T::max)
    } else {
        T::zero()
    };

    let half = T::lit(0.5);
    let beta = match mode {
        Mode::NomaOnly => T::one(),
        Mode::RsmaOnly => T::zero(),
        Mode::Hybrid => {
            let lo = noma_min / p_max;
            let hi = T::one() - tau_r / p_max;
            if lo < half && half < hi {
                half
            } else {
                (lo + hi) * half
            }
        }
    };
    if noma_min >= beta * p_max && u > 1 && mode.uses_noma() {
        return Err(Error::InfeasibleScenario("NOMA SIC needs more than the available budget".into()));
    }
    if mode.uses_rsma() && tau_r >= (T::one() - beta) * p_max {
        return Err(Error::InfeasibleScenario("RSMA SIC needs more than the available budget".into()));
    }

    let mut a = Allocation::zeros(u);
    a.beta = beta;
    if mode.uses_noma() {
        let budget = beta * p_max;
        let geometric = |total: T| -> Vec<T> {
            let w: Vec<T> = (0..u).map(|k| T::lit(2f64.powi(k as i32 + 1))).collect();
            let norm = sum(w.iter().copied());
            w.into_iter().map(|w| total * w / norm).collect()
        };
        let plain = geometric(fill * budget);
        let sic_ok = (1..u).all(|k| plain[k] - sum(plain[..k].iter().copied()) > p_tol / ch.delta_noma[k - 1]);
        a.p_noma = if sic_ok {
            plain
        } else {
            // Split the remaining room half/half so the top-up neither
            // breaks SIC nor touches the budget.
            let top = geometric((budget - noma_min) * half);
            chain.iter().zip(top).map(|(&m, t)| m + t).collect()
        };
    }
    if mode.uses_rsma() {
        let budget = (T::one() - beta) * p_max;
        let mut pc = T::lit(COMMON_SHARE) * budget;
        let mut private = fill * (budget - pc);
        if pc - private <= tau_r {
            pc = tau_r + T::lit(COMMON_SHARE) * (budget - tau_r);
            private = fill * (budget - pc);
        }
        a.p_common = pc;
        a.p_private = vec![private / T::lit(u as f64); u];
        // Slacks sit strictly inside their rows so the first subproblem
        // starts interior.
        let margin = T::lit(SLACK_MARGIN);
        a.lambda_slack = (0..u).map(|k| (private + ch.a_rsma[k]) * (T::one() + margin)).collect();
        a.gamma_slack = a.lambda_slack.iter().map(|&l| pc / l * (T::one() - margin)).collect();
        let cap = a
            .gamma_slack
            .iter()
            .map(|&g| g.ln_1p() / T::ln2())
            .fold(T::infinity(), T::min);
        a.c = vec![T::lit(0.9) * cap / T::lit(u as f64); u];
    }
    ExpansionPoint::new(a, ch)
}

/// Runs SCA for the configured mode.
pub fn run<T: Scalar>(config: &ScenarioConfig, ch: &ChannelRealization<T>) -> SolveReport<T> {
    run_observed(config, ch, &mut |_| {})
}

/// Runs all three modes on the same channel draw, in [`Mode::ALL`] order.
pub fn run_mode_suite<T: Scalar>(config: &ScenarioConfig, ch: &ChannelRealization<T>) -> Vec<(Mode, SolveReport<T>)> {
    Mode::ALL
        .iter()
        .map(|&m| (m, run(&config.clone().with_mode(m), ch)))
        .collect()
}

struct Loop<'a, T> {
    config: &'a ScenarioConfig,
    ch: &'a ChannelRealization<T>,
    tol: T,
    started: Instant,
    report: SolveReport<T>,
}

impl<'a, T: Scalar> Loop<'a, T> {
    fn finish(mut self, status: SolveStatus, alloc: Option<Allocation<T>>) -> SolveReport<T> {
        self.report.status = status;
        if let Some(a) = alloc {
            self.report.rates = rate_breakdown(self.ch, &a);
            self.report.final_alloc = a;
        }
        self.report.wall_time_s = self.started.elapsed().as_secs_f64();
        info!(
            "sca mode={} status={} iterations={} restoration={} objective={:.6}",
            self.config.mode,
            status.as_str(),
            self.report.iterations,
            self.report.restoration_iterations,
            self.report.objective().as_f64()
        );
        self.report
    }

    /// Maximizes the worst linearized QoS slack until it turns positive.
    fn restore(
        &mut self,
        mut point: ExpansionPoint<T>,
        observer: &mut dyn FnMut(IterationEvent<'_, T>),
    ) -> std::result::Result<ExpansionPoint<T>, SolveStatus> {
        let eps = T::lit(self.config.epsilon1);
        let mut previous = T::neg_infinity();
        for index in 0..self.config.l_max {
            let spec = assemble_restoration(self.config, self.ch, &point, T::one()).map_err(|_| SolveStatus::SolverFailure)?;
            let outcome = solve_spec(&spec, self.tol, point.alloc());
            self.report.restoration_iterations += 1;
            observer(IterationEvent { phase: Phase::Restoration, index, spec: &spec, outcome: &outcome });
            let x = match outcome.status {
                SolverStatus::Optimal => outcome.x.as_ref().expect("optimal outcome has a point"),
                SolverStatus::Infeasible => return Err(SolveStatus::InfeasibleScenario),
                _ => return Err(SolveStatus::SolverFailure),
            };
            let slack = x[spec.layout.qos_slack.expect("restoration layout")];
            debug!("restore it={index} qos_slack={:.6e}", slack.as_f64());
            point = ExpansionPoint::new(spec.decode(x), self.ch).map_err(|_| SolveStatus::SolverFailure)?;
            if slack > T::zero() {
                return Ok(point);
            }
            if slack - previous < eps {
                break;
            }
            previous = slack;
        }
        Err(SolveStatus::InfeasibleScenario)
    }
}

/// Requested solver tolerance, floored at what the scalar type can
/// certify (only binding in single precision).
fn subproblem_tol<T: Scalar>(config: &ScenarioConfig) -> T {
    T::lit(config.solver_tol).max(T::epsilon().powf(T::lit(2.0 / 3.0)))
}

/// Solves a subproblem warm-started at the expansion point. A previous
/// optimum often sits on a bound, where Newton steps can crawl, so a
/// failed warm solve is repeated from the solver's own start.
fn solve_spec<T: Scalar>(spec: &SubproblemSpec<T>, tol: T, start: &Allocation<T>) -> SolverOutcome<T> {
    let warm = solve_from(&spec.program, tol, SUBPROBLEM_MAX_NEWTON, &spec.start_at(start));
    match warm.status {
        SolverStatus::MaxIterations | SolverStatus::NumericalFailure => {
            let cold = solve(&spec.program, tol, SUBPROBLEM_MAX_NEWTON);
            SolverOutcome { iterations: warm.iterations + cold.iterations, ..cold }
        }
        _ => warm,
    }
}

/// Runs SCA, calling `observer` after every subproblem solve.
pub fn run_observed<T: Scalar>(
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    observer: &mut dyn FnMut(IterationEvent<'_, T>),
) -> SolveReport<T> {
    let u = config.num_users;
    let mut lp = Loop {
        config,
        ch,
        tol: subproblem_tol(config),
        started: Instant::now(),
        report: SolveReport {
            status: SolveStatus::SolverFailure,
            objective_trajectory: Vec::new(),
            surrogate_trajectory: Vec::new(),
            final_alloc: Allocation::zeros(u),
            rates: rate_breakdown(ch, &Allocation::zeros(u)),
            iterations: 0,
            restoration_iterations: 0,
            wall_time_s: 0.0,
        },
    };
    if config.validate().is_err() || ch.num_users() != u {
        return lp.finish(SolveStatus::SolverFailure, None);
    }
    let mut point = match initialize(config, ch) {
        Ok(p) => p,
        Err(Error::InfeasibleScenario(why)) => {
            debug!("initialization: {why}");
            return lp.finish(SolveStatus::InfeasibleScenario, None);
        }
        Err(_) => return lp.finish(SolveStatus::SolverFailure, None),
    };
    let eps = T::lit(config.epsilon1);
    let baseline = |p: &Allocation<T>| {
        if check_feasibility(config, ch, p, START_FEASIBILITY_TOL).is_empty() {
            weighted_sum_rate(config, ch, p)
        } else {
            T::neg_infinity()
        }
    };
    let mut previous = baseline(point.alloc());
    let mut restored = false;
    loop {
        let spec = match assemble_subproblem(config, ch, &point) {
            Ok(s) => s,
            Err(_) => return lp.finish(SolveStatus::SolverFailure, Some(point.into_alloc())),
        };
        let outcome = solve_spec(&spec, lp.tol, point.alloc());
        observer(IterationEvent { phase: Phase::Main, index: lp.report.iterations, spec: &spec, outcome: &outcome });
        match outcome.status {
            SolverStatus::Optimal => {}
            SolverStatus::Infeasible if lp.report.iterations == 0 && !restored => {
                lp.report.restoration_iterations += 1;
                restored = true;
                match lp.restore(point.clone(), observer) {
                    Ok(p) => {
                        point = p;
                        previous = baseline(point.alloc());
                        continue;
                    }
                    Err(status) => return lp.finish(status, None),
                }
            }
            SolverStatus::Infeasible if lp.report.iterations == 0 => {
                return lp.finish(SolveStatus::InfeasibleScenario, None);
            }
            status => {
                debug!("subproblem failed: {status:?}");
                let keep = (lp.report.iterations > 0).then(|| point.into_alloc());
                return lp.finish(SolveStatus::SolverFailure, keep);
            }
        }
        let x = outcome.x.as_ref().expect("optimal outcome has a point");
        let next = spec.decode(x);
        let surrogate = outcome.objective_value;
        let exact = weighted_sum_rate(config, ch, &next);
        lp.report.surrogate_trajectory.push(surrogate);
        lp.report.objective_trajectory.push(exact);
        lp.report.iterations += 1;
        debug!(
            "sca it={} surrogate={:.9} exact={:.9} kkt={:.2e} newton={} viol={:.2e}",
            lp.report.iterations,
            surrogate.as_f64(),
            exact.as_f64(),
            outcome.kkt_residual.as_f64(),
            outcome.iterations,
            outcome.max_violation.as_f64()
        );
        point = match ExpansionPoint::new(next.clone(), ch) {
            Ok(p) => p,
            Err(_) => return lp.finish(SolveStatus::SolverFailure, Some(next)),
        };
        if surrogate - previous < eps {
            return lp.finish(SolveStatus::Converged, Some(next));
        }
        if lp.report.iterations >= config.l_max {
            return lp.finish(SolveStatus::MaxIterReached, Some(next));
        }
        previous = surrogate;
    }
}
