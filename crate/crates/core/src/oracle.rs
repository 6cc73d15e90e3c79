//! Exhaustive grid search over tiny instances, used to check SCA results.
//!
//! Every power is a multiple of `P_max / density`. Hybrid points take `β` as
//! the NOMA share of the units actually spent, so the hybrid grid is the set
//! of NOMA and RSMA power vectors whose combined units fit the budget. The
//! grid at `2D` contains the grid at `D`, hence refining never lowers the
//! result.
//!
//! Common-rate shares are not gridded: for fixed powers the objective is
//! affine in `c` under one coupling row, so each user gets exactly its QoS
//! deficit and the remaining common capacity goes to the user with the
//! largest RSMA weight.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rate::{check_feasibility, noma_rate, rsma_common_cap, rsma_private_rate, Allocation};
use crate::scenario::{ChannelRealization, Mode, ScenarioConfig};
use crate::driver::SolveReport;

pub const MAX_ORACLE_USERS: usize = 3;

/// Tolerance of the feasibility screen applied to grid points and reports.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub alloc: Allocation<f64>,
    pub objective: f64,
}

/// All length-`len` vectors of non-negative integers summing to at most
/// `max`, in lexicographic order.
fn compositions(len: usize, max: usize) -> Vec<Vec<usize>> {
    fn go(len: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur.push(v);
            go(len, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(len, max, &mut Vec::with_capacity(len), &mut out);
    out
}

struct NomaCell {
    units: usize,
    powers: Vec<f64>,
    rates: Vec<f64>,
    value: f64,
}

struct RsmaCell {
    units: usize,
    private: Vec<f64>,
    common: f64,
    rates: Vec<f64>,
    /// Common capacity decodable by every user.
    cap: f64,
    value: f64,
}

struct Grid<'a> {
    config: &'a ScenarioConfig,
    ch: &'a ChannelRealization<f64>,
    unit: f64,
    density: usize,
    omega_r_best: usize,
}

impl Grid<'_> {
    fn power(&self, units: usize) -> f64 {
        units as f64 * self.unit
    }

    fn noma_cells(&self) -> Vec<NomaCell> {
        let u = self.config.num_users;
        let p_tol = self.config.p_tol_w();
        compositions(u, self.density)
            .into_iter()
            .filter_map(|units| {
                let powers: Vec<f64> = units.iter().map(|&n| self.power(n)).collect();
                let mut a = Allocation::zeros(u);
                a.p_noma = powers.clone();
                let sic_ok = (1..u).all(|k| {
                    let interference: f64 = powers[..k].iter().sum();
                    (powers[k] - interference) * self.ch.delta_noma[k - 1] >= p_tol
                });
                if !sic_ok {
                    return None;
                }
                let rates: Vec<f64> = (0..u).map(|k| noma_rate(self.ch, &a, k)).collect();
                let value = rates.iter().zip(&self.config.weights_noma).map(|(r, w)| r * w).sum();
                Some(NomaCell { units: units.iter().sum(), powers, rates, value })
            })
            .collect()
    }

    fn rsma_cells(&self) -> Vec<RsmaCell> {
        let u = self.config.num_users;
        let p_tol = self.config.p_tol_w();
        compositions(u + 1, self.density)
            .into_par_iter()
            .filter_map(|units| {
                let private: Vec<f64> = units[..u].iter().map(|&n| self.power(n)).collect();
                let common = self.power(units[u]);
                let total: f64 = private.iter().sum();
                if (0..u).any(|k| (common - total) * self.ch.delta_rsma[k] < p_tol) {
                    return None;
                }
                let mut a = Allocation::zeros(u);
                a.p_private = private.clone();
                a.p_common = common;
                let rates: Vec<f64> = (0..u).map(|k| rsma_private_rate(self.ch, &a, k)).collect();
                let cap = (0..u)
                    .map(|k| rsma_common_cap(self.ch, &a, k))
                    .fold(f64::INFINITY, f64::min);
                let value = rates.iter().zip(&self.config.weights_rsma).map(|(r, w)| r * w).sum();
                Some(RsmaCell { units: units.iter().sum(), private, common, rates, cap, value })
            })
            .collect()
    }

    /// Best objective of a NOMA/RSMA pair with its common-rate shares, or
    /// `None` when QoS cannot be met.
    fn combine(&self, noma: Option<&NomaCell>, rsma: Option<&RsmaCell>) -> Option<(f64, Vec<f64>)> {
        let u = self.config.num_users;
        let mut value = 0.0;
        let mut c = vec![0.0; u];
        let mut need = 0.0;
        for k in 0..u {
            let r = noma.map_or(0.0, |n| n.rates[k]) + rsma.map_or(0.0, |r| r.rates[k]);
            let deficit = (self.config.r_th[k] - r).max(0.0);
            c[k] = deficit;
            need += deficit;
        }
        match rsma {
            Some(r) => {
                if need > r.cap {
                    return None;
                }
                c[self.omega_r_best] += r.cap - need;
                value += r.value;
                value += c.iter().zip(&self.config.weights_rsma).map(|(c, w)| c * w).sum::<f64>();
            }
            None if need > 0.0 => return None,
            None => {}
        }
        Some((value + noma.map_or(0.0, |n| n.value), c))
    }

    fn allocation(&self, noma: Option<&NomaCell>, rsma: Option<&RsmaCell>, c: Vec<f64>) -> Allocation<f64> {
        let u = self.config.num_users;
        let mut a = Allocation::zeros(u);
        let p_max = self.config.p_max_w();
        a.beta = match self.config.mode {
            Mode::NomaOnly => 1.0,
            Mode::RsmaOnly => 0.0,
            Mode::Hybrid => noma.map_or(0.0, |n| n.powers.iter().sum::<f64>() / p_max),
        };
        if let Some(n) = noma {
            a.p_noma = n.powers.clone();
        }
        if let Some(r) = rsma {
            a.p_private = r.private.clone();
            a.p_common = r.common;
            let total: f64 = r.private.iter().sum();
            a.lambda_slack = (0..u).map(|k| total + self.ch.a_rsma[k]).collect();
            a.gamma_slack = a.lambda_slack.iter().map(|l| r.common / l).collect();
            a.c = c;
        }
        a
    }
}

/// Total order on candidates: higher value wins, ties go to the earlier
/// index pair so the result does not depend on scheduling.
fn better(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

fn pick(a: (f64, usize, usize), b: (f64, usize, usize)) -> (f64, usize, usize) {
    if better(&b, &a) {
        b
    } else {
        a
    }
}

/// Prefix-maximum of the best value per exact unit count.
fn best_by_budget(density: usize, cells: impl Iterator<Item = (usize, usize, f64)>) -> Vec<Option<(f64, usize)>> {
    let mut best: Vec<Option<(f64, usize)>> = vec![None; density + 1];
    for (i, units, v) in cells {
        if best[units].is_none_or(|(b, _)| v > b) {
            best[units] = Some((v, i));
        }
    }
    for n in 1..=density {
        if let (Some(prev), cur) = (best[n - 1], best[n]) {
            if cur.is_none_or(|(b, _)| prev.0 >= b) {
                best[n] = Some(prev);
            }
        }
    }
    best
}

/// Best feasible grid point for `mode`, `None` when the grid holds no
/// feasible point.
pub fn grid_search(
    config: &ScenarioConfig,
    ch: &ChannelRealization<f64>,
    mode: Mode,
    density: usize,
) -> Result<Option<OracleSolution>> {
    let u = config.num_users;
    if u > MAX_ORACLE_USERS {
        return Err(Error::OracleTooLarge(u));
    }
    if density == 0 {
        return Err(Error::Config("grid density must be positive".into()));
    }
    config.validate()?;
    let config = config.clone().with_mode(mode);
    let omega_r_best = (0..u)
        .fold(0, |b, k| if config.weights_rsma[k] > config.weights_rsma[b] { k } else { b });
    let grid = Grid {
        config: &config,
        ch,
        unit: config.p_max_w() / density as f64,
        density,
        omega_r_best,
    };
    let noma = if mode.uses_noma() { grid.noma_cells() } else { Vec::new() };
    let rsma = if mode.uses_rsma() { grid.rsma_cells() } else { Vec::new() };
    const NONE: usize = usize::MAX;

    let best: Option<(f64, usize, usize)> = match mode {
        Mode::NomaOnly => noma
            .iter()
            .enumerate()
            .filter_map(|(i, n)| grid.combine(Some(n), None).map(|(v, _)| (v, i, NONE)))
            .reduce(pick),
        Mode::RsmaOnly => rsma
            .par_iter()
            .enumerate()
            .filter_map(|(j, r)| grid.combine(None, Some(r)).map(|(v, _)| (v, NONE, j)))
            .reduce_with(pick),
        Mode::Hybrid if config.r_th.iter().all(|&r| r <= 0.0) => {
            // Without QoS rows the two subchannels only share the budget.
            let w = config.weights_rsma[omega_r_best];
            let bn = best_by_budget(density, noma.iter().enumerate().map(|(i, n)| (i, n.units, n.value)));
            let br = best_by_budget(density, rsma.iter().enumerate().map(|(j, r)| (j, r.units, r.value + w * r.cap)));
            (0..=density)
                .filter_map(|n| match (bn[n], br[density - n]) {
                    (Some((vn, i)), Some((vr, j))) => Some((vn + vr, i, j)),
                    _ => None,
                })
                .reduce(pick)
        }
        Mode::Hybrid => {
            // NOMA cells dominated by a cheaper cell with componentwise
            // higher rates can never win.
            let mut order: Vec<usize> = (0..noma.len()).collect();
            order.sort_by_key(|&i| noma[i].units);
            let mut front: Vec<usize> = Vec::new();
            for i in order {
                let dominated = front
                    .iter()
                    .any(|&f| noma[f].rates.iter().zip(&noma[i].rates).all(|(a, b)| a >= b));
                if !dominated {
                    front.push(i);
                }
            }
            rsma.par_iter()
                .enumerate()
                .filter_map(|(j, r)| {
                    let budget = density - r.units;
                    front
                        .iter()
                        .take_while(|&&i| noma[i].units <= budget)
                        .filter_map(|&i| grid.combine(Some(&noma[i]), Some(r)).map(|(v, _)| (v, i, j)))
                        .reduce(pick)
                })
                .reduce_with(pick)
        }
    };

    let Some((_, i, j)) = best else {
        return Ok(None);
    };
    let n = (i != NONE).then(|| &noma[i]);
    let r = (j != NONE).then(|| &rsma[j]);
    let (_, c) = grid.combine(n, r).expect("winning cell is feasible");
    let alloc = grid.allocation(n, r, c);
    let objective = crate::rate::weighted_sum_rate(&config, ch, &alloc);
    if !check_feasibility(&config, ch, &alloc, FEASIBILITY_TOL).is_empty() {
        return Ok(None);
    }
    Ok(Some(OracleSolution { alloc, objective }))
}

/// Whether an SCA report matches the oracle: its final allocation is
/// feasible and its objective is within `rel_tol` of (or above) the oracle
/// value.
pub fn verify(
    config: &ScenarioConfig,
    ch: &ChannelRealization<f64>,
    report: &SolveReport<f64>,
    oracle_value: f64,
    rel_tol: f64,
) -> bool {
    if !report.status.has_solution() {
        return false;
    }
    let objective = report.objective();
    objective >= oracle_value * (1.0 - rel_tol)
        && check_feasibility(config, ch, &report.final_alloc, FEASIBILITY_TOL).is_empty()
}
