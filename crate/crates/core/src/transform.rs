//! Convex inner approximation of the weighted sum-rate problem around an
//! expansion point.
//!
//! The objective is split into differences of concave logs; every subtracted
//! log is replaced by its first-order Taylor expansion, which over-estimates
//! it, so the surrogate is a global lower bound that is tight at the
//! expansion point. The QoS rows are treated the same way. The common-rate
//! coupling goes through slacks `γ_k` (common SINR) and `λ_k` (interference
//! plus noise), with the bilinear `λ_k γ_k` bounded above by a convex
//! quadratic that is tight at the expansion point.

use crate::error::{Error, Result};
use crate::program::{Affine, ConvexProgram, LogRow, LogTerm, Objective, QuadRow};
use crate::rate::Allocation;
use crate::scalar::{sum, Scalar};
use crate::scenario::{ChannelRealization, Mode, ScenarioConfig};

/// Where each allocation field lives in the program's variable vector.
///
/// Hybrid order: `p^N (U) | p^P (U) | p^C | c (U) | γ (U) | λ (U) | β`.
/// Pure modes drop the unused scheme's fields and fix `β`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableLayout {
    pub mode: Mode,
    pub users: usize,
    pub p_noma: Option<usize>,
    pub p_private: Option<usize>,
    pub p_common: Option<usize>,
    pub c: Option<usize>,
    pub gamma: Option<usize>,
    pub lambda: Option<usize>,
    pub beta: Option<usize>,
    /// Extra minimum-QoS-slack variable of the restoration program.
    pub qos_slack: Option<usize>,
    pub num_vars: usize,
}

impl VariableLayout {
    pub fn new(mode: Mode, users: usize) -> Self {
        let mut next = 0;
        let mut take = |len: usize| {
            let at = next;
            next += len;
            Some(at)
        };
        let p_noma = if mode.uses_noma() { take(users) } else { None };
        let (p_private, p_common, c, gamma, lambda) = if mode.uses_rsma() {
            (take(users), take(1), take(users), take(users), take(users))
        } else {
            (None, None, None, None, None)
        };
        let beta = if mode == Mode::Hybrid { take(1) } else { None };
        Self {
            mode,
            users,
            p_noma,
            p_private,
            p_common,
            c,
            gamma,
            lambda,
            beta,
            qos_slack: None,
            num_vars: next,
        }
    }

    pub fn for_config(config: &ScenarioConfig) -> Self {
        Self::new(config.mode, config.num_users)
    }

    fn with_qos_slack(mut self) -> Self {
        self.qos_slack = Some(self.num_vars);
        self.num_vars += 1;
        self
    }

    fn idx(start: Option<usize>, k: usize) -> usize {
        start.expect("field present in this layout") + k
    }

    pub fn p_noma_var(&self, k: usize) -> usize {
        Self::idx(self.p_noma, k)
    }
    pub fn p_private_var(&self, k: usize) -> usize {
        Self::idx(self.p_private, k)
    }
    pub fn p_common_var(&self) -> usize {
        Self::idx(self.p_common, 0)
    }
    pub fn c_var(&self, k: usize) -> usize {
        Self::idx(self.c, k)
    }
    pub fn gamma_var(&self, k: usize) -> usize {
        Self::idx(self.gamma, k)
    }
    pub fn lambda_var(&self, k: usize) -> usize {
        Self::idx(self.lambda, k)
    }

    /// Fixed budget split for pure modes.
    pub fn fixed_beta<T: Scalar>(&self) -> Option<T> {
        match self.mode {
            Mode::Hybrid => None,
            Mode::NomaOnly => Some(T::one()),
            Mode::RsmaOnly => Some(T::zero()),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.num_vars];
        let u = self.users;
        let mut put = |start: Option<usize>, len: usize, base: &str| {
            if let Some(s) = start {
                for k in 0..len {
                    names[s + k] = if len == 1 { base.to_string() } else { format!("{base}[{k}]") };
                }
            }
        };
        put(self.p_noma, u, "p_noma");
        put(self.p_private, u, "p_private");
        put(self.p_common, 1, "p_common");
        put(self.c, u, "c");
        put(self.gamma, u, "gamma");
        put(self.lambda, u, "lambda");
        put(self.beta, 1, "beta");
        put(self.qos_slack, 1, "qos_slack");
        names
    }

    /// Program vector for an allocation; fields absent from the layout are
    /// dropped.
    pub fn encode<T: Scalar>(&self, a: &Allocation<T>) -> Vec<T> {
        let mut x = vec![T::zero(); self.num_vars];
        let mut put = |start: Option<usize>, v: &[T]| {
            if let Some(s) = start {
                x[s..s + v.len()].copy_from_slice(v);
            }
        };
        put(self.p_noma, &a.p_noma);
        put(self.p_private, &a.p_private);
        put(self.p_common, &[a.p_common]);
        put(self.c, &a.c);
        put(self.gamma, &a.gamma_slack);
        put(self.lambda, &a.lambda_slack);
        put(self.beta, &[a.beta]);
        x
    }

    /// Allocation from a program vector; absent fields are zero and `β` takes
    /// its fixed value in pure modes.
    pub fn decode<T: Scalar>(&self, x: &[T]) -> Allocation<T> {
        let u = self.users;
        let get = |start: Option<usize>, len: usize| match start {
            Some(s) => x[s..s + len].to_vec(),
            None => vec![T::zero(); len],
        };
        Allocation {
            p_noma: get(self.p_noma, u),
            p_private: get(self.p_private, u),
            p_common: get(self.p_common, 1)[0],
            c: get(self.c, u),
            beta: self
                .fixed_beta()
                .unwrap_or_else(|| x[self.beta.expect("hybrid layout has beta")]),
            gamma_slack: get(self.gamma, u),
            lambda_slack: get(self.lambda, u),
        }
    }
}

/// Allocation snapshot about which all linearizations are taken.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionPoint<T>(Allocation<T>);

impl<T: Scalar> ExpansionPoint<T> {
    /// Checks that every linearized log has a positive argument at the point.
    pub fn new(alloc: Allocation<T>, ch: &ChannelRealization<T>) -> Result<Self> {
        let u = ch.num_users();
        if alloc.num_users() != u {
            return Err(Error::DegenerateExpansionPoint("user count mismatch".into()));
        }
        let values = alloc
            .p_noma
            .iter()
            .chain(&alloc.p_private)
            .chain(&alloc.c)
            .chain(&alloc.gamma_slack)
            .chain(&alloc.lambda_slack)
            .chain([&alloc.p_common, &alloc.beta]);
        if values.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateExpansionPoint("non-finite entry".into()));
        }
        for k in 0..u {
            let dn = noma_interference(&alloc, k) + ch.a_noma[k];
            let dr = private_interference(&alloc, k) + ch.a_rsma[k];
            if !(dn > T::zero() && dr > T::zero()) {
                return Err(Error::DegenerateExpansionPoint(format!(
                    "non-positive interference-plus-noise term for user {k}"
                )));
            }
        }
        Ok(Self(alloc))
    }

    pub fn alloc(&self) -> &Allocation<T> {
        &self.0
    }

    pub fn into_alloc(self) -> Allocation<T> {
        self.0
    }
}

fn noma_interference<T: Scalar>(a: &Allocation<T>, k: usize) -> T {
    sum(a.p_noma[..k].iter().copied())
}

fn private_interference<T: Scalar>(a: &Allocation<T>, k: usize) -> T {
    sum(a.p_private.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &p)| p))
}

/// First-order Taylor expansion of `log2(Σ_{j∈vars} x_j + offset)` at the
/// point where the sum equals `at_sum`.
fn linearized_log2<T: Scalar>(vars: &[(usize, T)], offset: T) -> Affine<T> {
    let d = sum(vars.iter().map(|&(_, v)| v)) + offset;
    let slope = T::one() / (d * T::ln2());
    let mut a = Affine::constant(d.log2());
    for &(i, v) in vars {
        a.add_term(i, slope);
        a.constant -= slope * v;
    }
    a
}

/// NOMA "desired" log argument `Σ_{j≤k} p_j^N + a_k^N`.
fn noma_signal_arg<T: Scalar>(layout: &VariableLayout, ch: &ChannelRealization<T>, k: usize) -> Affine<T> {
    Affine::sum_of((0..=k).map(|j| layout.p_noma_var(j)), T::one()).plus_const(ch.a_noma[k])
}

/// Linearized NOMA interference log `log2(Σ_{j<k} p_j^N + a_k^N)`.
fn noma_interference_lin<T: Scalar>(
    layout: &VariableLayout,
    ch: &ChannelRealization<T>,
    p: &Allocation<T>,
    k: usize,
) -> Affine<T> {
    let vars: Vec<_> = (0..k).map(|j| (layout.p_noma_var(j), p.p_noma[j])).collect();
    linearized_log2(&vars, ch.a_noma[k])
}

fn rsma_signal_arg<T: Scalar>(layout: &VariableLayout, ch: &ChannelRealization<T>, k: usize) -> Affine<T> {
    Affine::sum_of((0..layout.users).map(|j| layout.p_private_var(j)), T::one()).plus_const(ch.a_rsma[k])
}

fn rsma_interference_lin<T: Scalar>(
    layout: &VariableLayout,
    ch: &ChannelRealization<T>,
    p: &Allocation<T>,
    k: usize,
) -> Affine<T> {
    let vars: Vec<_> = (0..layout.users)
        .filter(|&j| j != k)
        .map(|j| (layout.p_private_var(j), p.p_private[j]))
        .collect();
    linearized_log2(&vars, ch.a_rsma[k])
}

fn check_point<T: Scalar>(config: &ScenarioConfig, ch: &ChannelRealization<T>, point: &ExpansionPoint<T>) -> Result<()> {
    if ch.num_users() != config.num_users || point.alloc().num_users() != config.num_users {
        return Err(Error::DegenerateExpansionPoint(
            "channel, point and configuration disagree on the user count".into(),
        ));
    }
    Ok(())
}

/// Concave surrogate of the weighted sum-rate that lower-bounds it
/// everywhere and matches it at the expansion point.
pub fn build_objective_lower_bound<T: Scalar>(
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    point: &ExpansionPoint<T>,
) -> Result<Objective<T>> {
    check_point(config, ch, point)?;
    let layout = VariableLayout::for_config(config);
    Ok(objective_terms(&layout, config, ch, point.alloc()))
}

fn objective_terms<T: Scalar>(
    layout: &VariableLayout,
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    p: &Allocation<T>,
) -> Objective<T> {
    let mut obj = Objective::default();
    for k in 0..layout.users {
        if layout.mode.uses_noma() {
            let w = T::lit(config.weights_noma[k]);
            obj.logs.push(LogTerm::new(w, noma_signal_arg(layout, ch, k)));
            obj.linear = obj.linear.add(&noma_interference_lin(layout, ch, p, k).scale(-w));
        }
        if layout.mode.uses_rsma() {
            let w = T::lit(config.weights_rsma[k]);
            obj.logs.push(LogTerm::new(w, rsma_signal_arg(layout, ch, k)));
            obj.linear = obj.linear.add(&rsma_interference_lin(layout, ch, p, k).scale(-w));
            obj.linear.add_term(layout.c_var(k), w);
        }
    }
    obj
}

/// Linearized QoS rows: a lower bound on each user's total rate must reach
/// its threshold.
pub fn build_qos_constraints<T: Scalar>(
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    point: &ExpansionPoint<T>,
) -> Result<Vec<LogRow<T>>> {
    check_point(config, ch, point)?;
    let layout = VariableLayout::for_config(config);
    Ok(qos_rows(&layout, config, ch, point.alloc()))
}

fn qos_rows<T: Scalar>(
    layout: &VariableLayout,
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    p: &Allocation<T>,
) -> Vec<LogRow<T>> {
    (0..layout.users)
        .map(|k| {
            let mut logs = Vec::new();
            let mut rhs = Affine::default();
            if layout.mode.uses_noma() {
                logs.push(LogTerm::new(T::one(), noma_signal_arg(layout, ch, k)));
                rhs = rhs.add(&noma_interference_lin(layout, ch, p, k).scale(-T::one()));
            }
            if layout.mode.uses_rsma() {
                logs.push(LogTerm::new(T::one(), rsma_signal_arg(layout, ch, k)));
                rhs = rhs.add(&rsma_interference_lin(layout, ch, p, k).scale(-T::one()));
                rhs.add_term(layout.c_var(k), T::one());
            }
            let mut lhs = Affine::constant(T::lit(config.r_th[k]));
            if let Some(s) = layout.qos_slack {
                lhs.add_term(s, T::one());
            }
            LogRow { lhs, logs, rhs }
        })
        .collect()
}

/// Rows coupling the common-rate shares to the common-stream SINR through
/// the `γ`/`λ` slacks.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonRateRows<T> {
    /// `Σ_i c_i ≤ log2(1 + γ_k)`.
    pub rate: Vec<LogRow<T>>,
    /// `Σ_j p_j^P + a_k^R − λ_k ≤ 0`.
    pub interference: Vec<Affine<T>>,
    /// Convex upper bound of `λ_k γ_k` kept below `p^C`.
    pub product: Vec<QuadRow<T>>,
}

pub fn build_common_rate_constraints<T: Scalar>(
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    point: &ExpansionPoint<T>,
) -> Result<CommonRateRows<T>> {
    check_point(config, ch, point)?;
    let layout = VariableLayout::for_config(config);
    Ok(common_rate_rows(&layout, ch, point.alloc()))
}

fn common_rate_rows<T: Scalar>(layout: &VariableLayout, ch: &ChannelRealization<T>, p: &Allocation<T>) -> CommonRateRows<T> {
    let mut rows = CommonRateRows {
        rate: Vec::new(),
        interference: Vec::new(),
        product: Vec::new(),
    };
    if !layout.mode.uses_rsma() {
        return rows;
    }
    let u = layout.users;
    let quarter = T::lit(0.25);
    let half = T::lit(0.5);
    let c_sum = Affine::sum_of((0..u).map(|i| layout.c_var(i)), T::one());
    for k in 0..u {
        let (g, l) = (layout.gamma_var(k), layout.lambda_var(k));
        rows.rate.push(LogRow {
            lhs: c_sum.clone(),
            logs: vec![LogTerm::new(T::one(), Affine::var(g).plus_const(T::one()))],
            rhs: Affine::default(),
        });
        rows.interference.push(
            Affine::sum_of((0..u).map(|j| layout.p_private_var(j)), T::one())
                .plus_const(ch.a_rsma[k])
                .plus(l, -T::one()),
        );
        // p^C ≥ ¼[(λ+γ)² + d² − 2d(λ−γ)] with d = λ(t) − γ(t).
        let d = p.lambda_slack[k] - p.gamma_slack[k];
        let v = Affine::constant(quarter * d * d)
            .plus(l, -half * d)
            .plus(g, half * d)
            .plus(layout.p_common_var(), -T::one());
        rows.product.push(QuadRow {
            u: Affine::var(l).plus(g, T::one()),
            v,
        });
    }
    rows
}

/// Power budgets and both SIC families, independent of the expansion point.
///
/// SIC rows are divided by the channel `δ` they are evaluated with, so they
/// read in watts: `Σ_{j<k} p_j^N − p_k^N + P_tol/δ_{k−1}^N ≤ 0` and
/// `Σ_j p_j^P − p^C + P_tol/δ_k^R ≤ 0`.
pub fn build_linear_constraints<T: Scalar>(config: &ScenarioConfig, ch: &ChannelRealization<T>) -> Vec<Affine<T>> {
    linear_rows(&VariableLayout::for_config(config), config, ch)
}

fn linear_rows<T: Scalar>(layout: &VariableLayout, config: &ScenarioConfig, ch: &ChannelRealization<T>) -> Vec<Affine<T>> {
    let u = layout.users;
    let p_max = T::lit(config.p_max_w());
    let p_tol = T::lit(config.p_tol_w());
    let one = T::one();
    let mut rows = Vec::new();
    if layout.mode.uses_noma() {
        let mut budget = Affine::sum_of((0..u).map(|k| layout.p_noma_var(k)), one);
        match layout.beta {
            Some(b) => budget.add_term(b, -p_max),
            None => budget.constant -= p_max,
        }
        rows.push(budget);
    }
    if layout.mode.uses_rsma() {
        let mut budget = Affine::sum_of((0..u).map(|k| layout.p_private_var(k)), one).plus(layout.p_common_var(), one);
        if let Some(b) = layout.beta {
            budget.add_term(b, p_max);
        }
        budget.constant -= p_max;
        rows.push(budget);
    }
    if layout.mode.uses_noma() {
        for k in 1..u {
            rows.push(
                Affine::sum_of((0..k).map(|j| layout.p_noma_var(j)), one)
                    .plus(layout.p_noma_var(k), -one)
                    .plus_const(p_tol / ch.delta_noma[k - 1]),
            );
        }
    }
    if layout.mode.uses_rsma() {
        for k in 0..u {
            rows.push(
                Affine::sum_of((0..u).map(|j| layout.p_private_var(j)), one)
                    .plus(layout.p_common_var(), -one)
                    .plus_const(p_tol / ch.delta_rsma[k]),
            );
        }
    }
    rows
}

/// A convex subproblem plus the map from its variables back to an
/// [`Allocation`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec<T> {
    pub program: ConvexProgram<T>,
    pub layout: VariableLayout,
}

impl<T: Scalar> SubproblemSpec<T> {
    pub fn decode(&self, x: &[T]) -> Allocation<T> {
        self.layout.decode(x)
    }

    /// Warm start for the solver at an allocation.
    pub fn start_at(&self, alloc: &Allocation<T>) -> Vec<T> {
        let mut x = self.layout.encode(alloc);
        x.resize(self.layout.num_vars, T::zero());
        x
    }
}

fn base_program<T: Scalar>(layout: &VariableLayout) -> ConvexProgram<T> {
    let mut prog = ConvexProgram::new(layout.num_vars);
    prog.names = layout.names();
    if let Some(b) = layout.beta {
        prog.upper[b] = T::one();
    }
    prog
}

fn add_constraints<T: Scalar>(
    prog: &mut ConvexProgram<T>,
    layout: &VariableLayout,
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    p: &Allocation<T>,
) {
    prog.linear_rows = linear_rows(layout, config, ch);
    let common = common_rate_rows(layout, ch, p);
    prog.linear_rows.extend(common.interference);
    prog.log_rows = qos_rows(layout, config, ch, p);
    prog.log_rows.extend(common.rate);
    prog.quad_rows = common.product;
}

/// Convex subproblem at the expansion point for the configured mode.
pub fn assemble_subproblem<T: Scalar>(
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    point: &ExpansionPoint<T>,
) -> Result<SubproblemSpec<T>> {
    check_point(config, ch, point)?;
    let layout = VariableLayout::for_config(config);
    let mut program = base_program(&layout);
    program.objective = objective_terms(&layout, config, ch, point.alloc());
    add_constraints(&mut program, &layout, config, ch, point.alloc());
    Ok(SubproblemSpec { program, layout })
}

/// QoS restoration program: same constraints as the subproblem, with one
/// extra variable `s ≤ cap` subtracted from every QoS threshold, maximizing
/// `s`.
pub fn assemble_restoration<T: Scalar>(
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    point: &ExpansionPoint<T>,
    cap: T,
) -> Result<SubproblemSpec<T>> {
    check_point(config, ch, point)?;
    let layout = VariableLayout::for_config(config).with_qos_slack();
    let s = layout.qos_slack.expect("slack added");
    let mut program = base_program(&layout);
    program.lower[s] = T::neg_infinity();
    program.upper[s] = cap;
    program.objective.linear = Affine::var(s);
    add_constraints(&mut program, &layout, config, ch, point.alloc());
    Ok(SubproblemSpec { program, layout })
}
