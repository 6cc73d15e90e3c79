//! Monte Carlo sweeps over channel draws, modes and one scenario parameter,
//! with per-run metrics rows and their aggregation.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{run, SolveReport};
use crate::error::{Error, Result};
use crate::scenario::{draw_channels, ChannelRealization, Mode, ScenarioConfig};

/// Rates at or below this are treated as zero when computing fairness.
pub const FAIRNESS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Equal,
    /// `ω_k^N = e^{0.24k}` and the same sequence reversed for RSMA.
    ExpFlip,
}

impl WeightScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightScheme::Equal => "equal",
            WeightScheme::ExpFlip => "exp_flip",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "equal" => Ok(WeightScheme::Equal),
            "exp_flip" | "expflip" => Ok(WeightScheme::ExpFlip),
            other => Err(Error::Config(format!("unknown weight scheme `{other}`"))),
        }
    }
}

/// Per-rank `(ω^N, ω^R)` for `u` users.
pub fn weight_scheme(u: usize, scheme: WeightScheme) -> (Vec<f64>, Vec<f64>) {
    match scheme {
        WeightScheme::Equal => (vec![1.0; u], vec![1.0; u]),
        WeightScheme::ExpFlip => {
            let noma = (1..=u).map(|k| (0.24 * k as f64).exp()).collect();
            let rsma = (1..=u).map(|k| (0.24 * (u - k) as f64).exp()).collect();
            (noma, rsma)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Uniform per-user rate threshold, bit/s/Hz.
    Rth,
    /// Power budget, dBm.
    Pmax,
}

/// Inclusive arithmetic grid `lo, lo+step, …, hi` over one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl SweepSpec {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }

    /// Config at one sweep value.
    pub fn apply(&self, base: &ScenarioConfig, value: f64) -> ScenarioConfig {
        match self.param {
            SweepParam::Rth => base.clone().with_uniform_rth(value),
            SweepParam::Pmax => {
                let mut c = base.clone();
                c.p_max_dbm = value;
                c
            }
        }
    }
}

impl FromStr for SweepSpec {
    type Err = Error;

    /// Parses `param:lo:hi:step` with `param` one of `rth`, `pmax`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSweep(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let [param, lo, hi, step] = parts.as_slice() else {
            return Err(bad());
        };
        let param = match param.trim().to_ascii_lowercase().as_str() {
            "rth" | "r_th" => SweepParam::Rth,
            "pmax" | "p_max" | "p_max_dbm" => SweepParam::Pmax,
            _ => return Err(bad()),
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if !(lo.is_finite() && hi.is_finite() && step.is_finite() && step > 0.0 && hi >= lo) {
            return Err(bad());
        }
        if param == SweepParam::Rth && lo < 0.0 {
            return Err(bad());
        }
        Ok(SweepSpec { param, lo, hi, step })
    }
}

/// One run: a draw, a mode and a sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub draw_index: usize,
    pub mode: Mode,
    pub p_max_dbm: f64,
    pub r_th: f64,
    pub weight_scheme: WeightScheme,
    pub status: String,
    /// Subproblem solves, restoration included.
    pub iterations: usize,
    pub weighted_sum_rate: Option<f64>,
    pub sum_rate: Option<f64>,
    /// `Σ ln R_k`, absent when some rate is (numerically) zero.
    pub proportional_fairness: Option<f64>,
    pub beta: Option<f64>,
    /// `;`-separated per-user total rates.
    pub per_user_rates: String,
}

impl MetricsRecord {
    pub fn from_report(
        seed: u64,
        draw_index: usize,
        config: &ScenarioConfig,
        scheme: WeightScheme,
        report: &SolveReport<f64>,
    ) -> Self {
        let solved = report.status.has_solution();
        let rates = &report.rates.r_total;
        let fairness = rates
            .iter()
            .all(|&r| r > FAIRNESS_FLOOR)
            .then(|| rates.iter().map(|r| r.ln()).sum());
        Self {
            seed,
            draw_index,
            mode: config.mode,
            p_max_dbm: config.p_max_dbm,
            r_th: config.r_th.iter().copied().fold(0.0, f64::max),
            weight_scheme: scheme,
            status: report.status.as_str().to_string(),
            iterations: report.total_solves(),
            weighted_sum_rate: solved.then(|| report.objective()),
            sum_rate: solved.then(|| report.rates.sum_rate()),
            proportional_fairness: fairness.filter(|_| solved),
            beta: solved.then_some(report.final_alloc.beta),
            per_user_rates: if solved {
                rates.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";")
            } else {
                String::new()
            },
        }
    }

    pub fn is_solved(&self) -> bool {
        self.status == "converged" || self.status == "max_iter_reached"
    }
}

/// Everything that defines a sweep run.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: ScenarioConfig,
    pub sweep: Option<SweepSpec>,
    pub draws: usize,
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub scheme: WeightScheme,
}

/// Channel realization of draw `index`; one independent ChaCha stream per
/// draw so results do not depend on evaluation order.
pub fn draw_for(config: &ScenarioConfig, seed: u64, index: usize) -> ChannelRealization<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    draw_channels(config, &mut rng)
}

/// Runs every (sweep value, draw, mode) cell. Rows come back ordered by
/// sweep value, then draw, then mode, whatever the parallel schedule. All
/// modes and sweep values of one draw index share one channel realization.
pub fn sweep(plan: &SweepPlan) -> Result<Vec<MetricsRecord>> {
    let base = plan.base.clone().with_weights(plan.scheme);
    base.validate()?;
    let values = match &plan.sweep {
        Some(s) => s.values().into_iter().map(|v| s.apply(&base, v)).collect(),
        None => vec![base.clone()],
    };
    for c in &values {
        c.validate()?;
    }
    let channels: Vec<_> = (0..plan.draws).map(|d| draw_for(&base, plan.seed, d)).collect();
    let cells: Vec<(usize, usize, Mode)> = (0..values.len())
        .flat_map(|v| (0..plan.draws).flat_map(move |d| plan.modes.iter().map(move |&m| (v, d, m))))
        .collect();
    Ok(cells
        .into_par_iter()
        .map(|(v, d, m)| {
            let config = values[v].clone().with_mode(m);
            let report = run(&config, &channels[d]);
            MetricsRecord::from_report(plan.seed, d, &config, plan.scheme, &report)
        })
        .collect())
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const CSV_HEADER: [&str; 13] = [
    "seed",
    "draw_index",
    "mode",
    "p_max_dbm",
    "r_th",
    "weight_scheme",
    "status",
    "iterations",
    "weighted_sum_rate",
    "sum_rate",
    "proportional_fairness",
    "beta",
    "per_user_rates",
];

/// Reads rows written by [`write_csv`]. An empty input yields no rows.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    if r.headers()?.is_empty() {
        return Ok(Vec::new());
    }
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::MalformedRecord(format!("unexpected header {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::MalformedRecord(e.to_string())))
        .collect()
}

/// Aggregate over one (mode, weights, P_max, R_th) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub weight_scheme: WeightScheme,
    pub p_max_dbm: f64,
    pub r_th: f64,
    pub runs: usize,
    pub solved: usize,
    pub feasibility_rate: f64,
    pub mean_weighted_sum_rate: Option<f64>,
    pub median_weighted_sum_rate: Option<f64>,
    pub mean_sum_rate: Option<f64>,
    pub median_proportional_fairness: Option<f64>,
    pub median_iterations: Option<f64>,
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Groups rows per cell. Unsolved rows count towards the feasibility rate
/// only.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let key = |r: &MetricsRecord| (r.mode, r.weight_scheme, r.p_max_dbm.to_bits(), r.r_th.to_bits());
    let mut keys: Vec<_> = records.iter().map(key).collect();
    keys.sort_by(|a, b| {
        (a.0, a.1)
            .cmp(&(b.0, b.1))
            .then(f64::from_bits(a.2).total_cmp(&f64::from_bits(b.2)))
            .then(f64::from_bits(a.3).total_cmp(&f64::from_bits(b.3)))
    });
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let rows: Vec<&MetricsRecord> = records.iter().filter(|r| key(r) == k).collect();
            let solved: Vec<&&MetricsRecord> = rows.iter().filter(|r| r.is_solved()).collect();
            let col = |f: fn(&MetricsRecord) -> Option<f64>| solved.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let wsr = col(|r| r.weighted_sum_rate);
            SummaryRow {
                mode: k.0,
                weight_scheme: k.1,
                p_max_dbm: f64::from_bits(k.2),
                r_th: f64::from_bits(k.3),
                runs: rows.len(),
                solved: solved.len(),
                feasibility_rate: solved.len() as f64 / rows.len() as f64,
                mean_weighted_sum_rate: mean(&wsr),
                median_weighted_sum_rate: median(&wsr),
                mean_sum_rate: mean(&col(|r| r.sum_rate)),
                median_proportional_fairness: median(&col(|r| r.proportional_fairness)),
                median_iterations: median(&col(|r| Some(r.iterations as f64))),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_schemes() {
        assert_eq!(weight_scheme(3, WeightScheme::Equal), (vec![1.0; 3], vec![1.0; 3]));
        let (n, r) = weight_scheme(2, WeightScheme::ExpFlip);
        assert!((n[0] - 1.27125).abs() < 1e-5 && (n[1] - 1.61607).abs() < 1e-5);
        assert!((r[0] - 1.27125).abs() < 1e-5 && r[1] == 1.0);
        assert_eq!("exp_flip".parse::<WeightScheme>().unwrap(), WeightScheme::ExpFlip);
    }

    #[test]
    fn sweep_spec_parsing() {
        let s: SweepSpec = "rth:0:3:0.5".parse().unwrap();
        assert_eq!(s.values(), vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        let p: SweepSpec = "pmax:25:35:5".parse().unwrap();
        assert_eq!(p.param, SweepParam::Pmax);
        assert_eq!(p.values().len(), 3);
        for bad in ["rth:0:3", "foo:0:1:1", "rth:1:0:1", "rth:0:1:0", "rth:-1:1:1", "pmax:a:b:c"] {
            assert!(bad.parse::<SweepSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn medians_and_means() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(mean(&[1.0, 2.0]), Some(1.5));
    }

    #[test]
    fn empty_csv_summarizes_to_nothing() {
        assert!(read_csv(&b""[..]).unwrap().is_empty());
        assert!(summarize(&[]).is_empty());
    }

    #[test]
    fn draws_are_reproducible() {
        let c = ScenarioConfig::standard(3);
        assert_eq!(draw_for(&c, 7, 2), draw_for(&c, 7, 2));
        assert_ne!(draw_for(&c, 7, 2), draw_for(&c, 7, 3));
    }
}
