//! Exact (non-approximated) rates, SIC margins, the weighted sum-rate
//! objective and full feasibility checking of a candidate allocation.
//!
//! User indices are zero-based ranks: user `0` has the strongest NOMA
//! channel. NOMA receivers see interference from stronger-ranked users
//! (`j < k`) only, since weaker users' signals are removed by SIC.

use std::fmt;

use crate::scalar::{sum, Scalar};
use crate::scenario::{ChannelRealization, Mode, ScenarioConfig};

/// Full decision vector of the weighted sum-rate problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    pub p_noma: Vec<T>,
    pub p_private: Vec<T>,
    pub p_common: T,
    /// Common-stream rate credited to each user.
    pub c: Vec<T>,
    /// Fraction of the power budget spent on the NOMA subchannel.
    pub beta: T,
    pub gamma_slack: Vec<T>,
    pub lambda_slack: Vec<T>,
}

impl<T: Scalar> Allocation<T> {
    pub fn zeros(num_users: usize) -> Self {
        Self {
            p_noma: vec![T::zero(); num_users],
            p_private: vec![T::zero(); num_users],
            p_common: T::zero(),
            c: vec![T::zero(); num_users],
            beta: T::zero(),
            gamma_slack: vec![T::zero(); num_users],
            lambda_slack: vec![T::zero(); num_users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.p_noma.len()
    }

    /// Converts the entries to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Allocation<U> {
        let v = |x: &[T]| x.iter().map(|&x| U::lit(x.as_f64())).collect::<Vec<_>>();
        Allocation {
            p_noma: v(&self.p_noma),
            p_private: v(&self.p_private),
            p_common: U::lit(self.p_common.as_f64()),
            c: v(&self.c),
            beta: U::lit(self.beta.as_f64()),
            gamma_slack: v(&self.gamma_slack),
            lambda_slack: v(&self.lambda_slack),
        }
    }
}

/// Per-user rates in bit/s/Hz at one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RateBreakdown<T> {
    pub r_noma: Vec<T>,
    pub r_private: Vec<T>,
    /// Capacity of the common stream at each receiver.
    pub r_common_cap: Vec<T>,
    pub r_total: Vec<T>,
}

impl<T: Scalar> RateBreakdown<T> {
    /// Largest common rate every user can decode.
    pub fn common_rate(&self) -> T {
        self.r_common_cap
            .iter()
            .copied()
            .fold(T::infinity(), T::min)
    }

    pub fn sum_rate(&self) -> T {
        sum(self.r_total.iter().copied())
    }
}

fn log2_1p<T: Scalar>(sinr: T) -> T {
    sinr.ln_1p() / T::ln2()
}

pub fn noma_rate<T: Scalar>(ch: &ChannelRealization<T>, alloc: &Allocation<T>, k: usize) -> T {
    let interference = sum(alloc.p_noma[..k].iter().copied());
    let d = ch.delta_noma[k];
    log2_1p(d * alloc.p_noma[k] / (d * interference + T::one()))
}

pub fn rsma_common_cap<T: Scalar>(
    ch: &ChannelRealization<T>,
    alloc: &Allocation<T>,
    k: usize,
) -> T {
    let private = sum(alloc.p_private.iter().copied());
    let d = ch.delta_rsma[k];
    log2_1p(d * alloc.p_common / (d * private + T::one()))
}

pub fn rsma_private_rate<T: Scalar>(
    ch: &ChannelRealization<T>,
    alloc: &Allocation<T>,
    k: usize,
) -> T {
    let others = sum(
        alloc
            .p_private
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &p)| p),
    );
    let d = ch.delta_rsma[k];
    log2_1p(d * alloc.p_private[k] / (d * others + T::one()))
}

/// NOMA SIC margin of user `k ≥ 1`, with the channel of user `k − 1`:
/// `p_k δ_{k−1} − Σ_{j<k} p_j δ_{k−1} − P_tol`. Non-negative when satisfied.
pub fn sic_margin_noma<T: Scalar>(
    ch: &ChannelRealization<T>,
    alloc: &Allocation<T>,
    k: usize,
    p_tol_w: T,
) -> T {
    assert!(k >= 1, "NOMA SIC margin is defined for k >= 1 (zero-based)");
    let d = ch.delta_noma[k - 1];
    let stronger = sum(alloc.p_noma[..k].iter().copied());
    alloc.p_noma[k] * d - stronger * d - p_tol_w
}

/// RSMA SIC margin at receiver `k`: `p^C δ_k − Σ_j p_j^P δ_k − P_tol`.
pub fn sic_margin_rsma<T: Scalar>(
    ch: &ChannelRealization<T>,
    alloc: &Allocation<T>,
    k: usize,
    p_tol_w: T,
) -> T {
    let d = ch.delta_rsma[k];
    let private = sum(alloc.p_private.iter().copied());
    alloc.p_common * d - private * d - p_tol_w
}

pub fn rate_breakdown<T: Scalar>(ch: &ChannelRealization<T>, alloc: &Allocation<T>) -> RateBreakdown<T> {
    let u = ch.num_users();
    let r_noma: Vec<T> = (0..u).map(|k| noma_rate(ch, alloc, k)).collect();
    let r_private: Vec<T> = (0..u).map(|k| rsma_private_rate(ch, alloc, k)).collect();
    let r_common_cap = (0..u).map(|k| rsma_common_cap(ch, alloc, k)).collect();
    let r_total = (0..u).map(|k| r_noma[k] + r_private[k] + alloc.c[k]).collect();
    RateBreakdown {
        r_noma,
        r_private,
        r_common_cap,
        r_total,
    }
}

/// `Σ ω_k^N R_k^N + Σ ω_k^R (R_k^P + c_k)` from exact rates.
pub fn weighted_sum_rate<T: Scalar>(
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    alloc: &Allocation<T>,
) -> T {
    let rates = rate_breakdown(ch, alloc);
    weighted_sum_of(config, &rates, alloc)
}

pub(crate) fn weighted_sum_of<T: Scalar>(
    config: &ScenarioConfig,
    rates: &RateBreakdown<T>,
    alloc: &Allocation<T>,
) -> T {
    (0..rates.r_noma.len()).fold(T::zero(), |acc, k| {
        acc + T::lit(config.weights_noma[k]) * rates.r_noma[k]
            + T::lit(config.weights_rsma[k]) * (rates.r_private[k] + alloc.c[k])
    })
}

/// One violated constraint family member, with the amount of violation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `Σc > R_k^C`.
    CommonRate { user: usize, excess: f64 },
    Qos { user: usize, deficit: f64 },
    NomaBudget { excess: f64 },
    RsmaBudget { excess: f64 },
    /// Margin normalized by the channel `δ` it was evaluated with, in watts.
    NomaSic { user: usize, deficit_w: f64 },
    RsmaSic { user: usize, deficit_w: f64 },
    Negative { field: &'static str, index: usize, value: f64 },
    BetaRange { beta: f64 },
}

impl Violation {
    pub fn amount(&self) -> f64 {
        match *self {
            Violation::CommonRate { excess, .. }
            | Violation::NomaBudget { excess }
            | Violation::RsmaBudget { excess } => excess,
            Violation::Qos { deficit, .. } => deficit,
            Violation::NomaSic { deficit_w, .. } | Violation::RsmaSic { deficit_w, .. } => deficit_w,
            Violation::Negative { value, .. } => -value,
            Violation::BetaRange { beta } => (-beta).max(beta - 1.0),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CommonRate { user, excess } => {
                write!(f, "common rate sum exceeds capacity of user {user} by {excess:.3e}")
            }
            Violation::Qos { user, deficit } => {
                write!(f, "user {user} misses its minimum rate by {deficit:.3e}")
            }
            Violation::NomaBudget { excess } => write!(f, "NOMA power budget exceeded by {excess:.3e} W"),
            Violation::RsmaBudget { excess } => write!(f, "RSMA power budget exceeded by {excess:.3e} W"),
            Violation::NomaSic { user, deficit_w } => {
                write!(f, "NOMA SIC condition of user {user} short by {deficit_w:.3e} W")
            }
            Violation::RsmaSic { user, deficit_w } => {
                write!(f, "RSMA SIC condition at user {user} short by {deficit_w:.3e} W")
            }
            Violation::Negative { field, index, value } => {
                write!(f, "{field}[{index}] is negative ({value:.3e})")
            }
            Violation::BetaRange { beta } => write!(f, "beta = {beta} outside [0, 1]"),
        }
    }
}

/// Evaluates every constraint of the original problem for the configured
/// mode and returns the ones violated by more than `tol`.
///
/// Pure modes skip the families of the unused scheme: `NomaOnly` ignores the
/// common-rate and RSMA budget/SIC rows, `RsmaOnly` ignores NOMA SIC.
pub fn check_feasibility<T: Scalar>(
    config: &ScenarioConfig,
    ch: &ChannelRealization<T>,
    alloc: &Allocation<T>,
    tol: f64,
) -> Vec<Violation> {
    let u = ch.num_users();
    let mode = config.mode;
    let f = |v: T| v.as_f64();
    let mut out = Vec::new();

    let fields: [(&'static str, &[T]); 5] = [
        ("p_noma", &alloc.p_noma),
        ("p_private", &alloc.p_private),
        ("c", &alloc.c),
        ("gamma_slack", &alloc.gamma_slack),
        ("lambda_slack", &alloc.lambda_slack),
    ];
    for (field, values) in fields {
        for (index, &v) in values.iter().enumerate() {
            if f(v) < -tol {
                out.push(Violation::Negative { field, index, value: f(v) });
            }
        }
    }
    if f(alloc.p_common) < -tol {
        out.push(Violation::Negative { field: "p_common", index: 0, value: f(alloc.p_common) });
    }
    let beta = f(alloc.beta);
    if beta < -tol || beta > 1.0 + tol {
        out.push(Violation::BetaRange { beta });
    }

    let rates = rate_breakdown(ch, alloc);
    let p_max = config.p_max_w();
    let p_tol = T::lit(config.p_tol_w());

    for k in 0..u {
        let total = match mode {
            Mode::NomaOnly => rates.r_noma[k],
            _ => rates.r_total[k],
        };
        let deficit = config.r_th[k] - f(total);
        if deficit > tol {
            out.push(Violation::Qos { user: k, deficit });
        }
    }

    let excess = f(sum(alloc.p_noma.iter().copied())) - beta * p_max;
    if excess > tol {
        out.push(Violation::NomaBudget { excess });
    }
    if mode.uses_noma() {
        for k in 1..u {
            let m = f(sic_margin_noma(ch, alloc, k, p_tol) / ch.delta_noma[k - 1]);
            if m < -tol {
                out.push(Violation::NomaSic { user: k, deficit_w: -m });
            }
        }
    }
    if mode.uses_rsma() {
        let c_total = f(sum(alloc.c.iter().copied()));
        for k in 0..u {
            let excess = c_total - f(rates.r_common_cap[k]);
            if excess > tol {
                out.push(Violation::CommonRate { user: k, excess });
            }
        }
        let excess = f(sum(alloc.p_private.iter().copied()) + alloc.p_common) - (1.0 - beta) * p_max;
        if excess > tol {
            out.push(Violation::RsmaBudget { excess });
        }
        for k in 0..u {
            let m = f(sic_margin_rsma(ch, alloc, k, p_tol) / ch.delta_rsma[k]);
            if m < -tol {
                out.push(Violation::RsmaSic { user: k, deficit_w: -m });
            }
        }
    }
    out
}
