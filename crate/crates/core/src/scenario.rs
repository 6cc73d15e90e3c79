//! Scenario configuration, unit conversion, user placement and channel draws.
//!
//! Everything downstream works in watts and linear power gains; dBm and dB
//! only appear on the configuration and reporting boundary.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{weight_scheme, WeightScheme};
use crate::scalar::Scalar;

/// Which access scheme(s) the optimizer may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hybrid,
    NomaOnly,
    RsmaOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Hybrid, Mode::NomaOnly, Mode::RsmaOnly];

    pub fn uses_noma(self) -> bool {
        matches!(self, Mode::Hybrid | Mode::NomaOnly)
    }

    pub fn uses_rsma(self) -> bool {
        matches!(self, Mode::Hybrid | Mode::RsmaOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::NomaOnly => "noma",
            Mode::RsmaOnly => "rsma",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" => Ok(Mode::Hybrid),
            "noma" | "noma_only" => Ok(Mode::NomaOnly),
            "rsma" | "rsma_only" => Ok(Mode::RsmaOnly),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// All physical and algorithmic parameters of one scenario.
///
/// Weights and rate thresholds are rank-based: entry `k` belongs to whichever
/// user ends up at rank `k` after sorting by NOMA channel gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_users: usize,
    pub p_max_dbm: f64,
    pub noise_dbm: f64,
    /// SIC detection threshold.
    pub p_tol_dbm: f64,
    /// Per-user minimum rate in bit/s/Hz.
    pub r_th: Vec<f64>,
    pub weights_noma: Vec<f64>,
    pub weights_rsma: Vec<f64>,
    pub mode: Mode,
    /// SCA stopping accuracy on the surrogate improvement.
    pub epsilon1: f64,
    /// Maximum number of SCA iterations.
    pub l_max: usize,
    pub solver_tol: f64,
    pub rng_seed: u64,
    pub area_side_m: f64,
    pub bs_height_m: f64,
}

impl ScenarioConfig {
    /// Standard operating point (35 dBm budget, −110 dBm noise) with unit weights and no rate requirement.
    pub fn standard(num_users: usize) -> Self {
        Self {
            num_users,
            p_max_dbm: 35.0,
            noise_dbm: -110.0,
            p_tol_dbm: 10.0,
            r_th: vec![0.0; num_users],
            weights_noma: vec![1.0; num_users],
            weights_rsma: vec![1.0; num_users],
            mode: Mode::Hybrid,
            epsilon1: 1e-3,
            l_max: 100,
            solver_tol: 1e-7,
            rng_seed: 42,
            area_side_m: 350.0,
            bs_height_m: 4.0,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_weights(mut self, scheme: WeightScheme) -> Self {
        let (noma, rsma) = weight_scheme(self.num_users, scheme);
        self.weights_noma = noma;
        self.weights_rsma = rsma;
        self
    }

    pub fn with_uniform_rth(mut self, r_th: f64) -> Self {
        self.r_th = vec![r_th; self.num_users];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.num_users;
        let bad = |msg: String| Err(Error::Config(msg));
        if u == 0 {
            return bad("num_users must be at least 1".into());
        }
        for (name, v) in [
            ("r_th", &self.r_th),
            ("weights_noma", &self.weights_noma),
            ("weights_rsma", &self.weights_rsma),
        ] {
            if v.len() != u {
                return bad(format!("{name} has {} entries, expected {u}", v.len()));
            }
        }
        if self.r_th.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("r_th entries must be finite and non-negative".into());
        }
        if self
            .weights_noma
            .iter()
            .chain(&self.weights_rsma)
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return bad("weights must be finite and positive".into());
        }
        if !(self.epsilon1 > 0.0) {
            return bad("epsilon1 must be positive".into());
        }
        if self.l_max == 0 {
            return bad("l_max must be at least 1".into());
        }
        if !(self.solver_tol > 0.0) {
            return bad("solver_tol must be positive".into());
        }
        if !(self.area_side_m > 0.0 && self.bs_height_m > 0.0) {
            return bad("area_side_m and bs_height_m must be positive".into());
        }
        for (name, v) in [
            ("p_max_dbm", self.p_max_dbm),
            ("noise_dbm", self.noise_dbm),
            ("p_tol_dbm", self.p_tol_dbm),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    pub fn p_max_w(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    pub fn noise_w(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn p_tol_w(&self) -> f64 {
        dbm_to_watts(self.p_tol_dbm)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text)?;
        file.into_config()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::standard(4)
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PerUser {
    Uniform(f64),
    List(Vec<f64>),
}

impl PerUser {
    fn expand(self, u: usize) -> Vec<f64> {
        match self {
            PerUser::Uniform(v) => vec![v; u],
            PerUser::List(v) => v,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    num_users: Option<usize>,
    p_max_dbm: Option<f64>,
    noise_dbm: Option<f64>,
    p_tol_dbm: Option<f64>,
    r_th: Option<PerUser>,
    rng_seed: Option<u64>,
    area_side_m: Option<f64>,
    bs_height_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsSection {
    scheme: Option<WeightScheme>,
    noma: Option<PerUser>,
    rsma: Option<PerUser>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlgorithmSection {
    mode: Option<Mode>,
    epsilon1: Option<f64>,
    l_max: Option<usize>,
    solver_tol: Option<f64>,
}

/// On-disk layout: `[scenario]`, `[weights]` and `[algorithm]` sections, all
/// keys optional and defaulting to the standard operating point.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    scenario: ScenarioSection,
    #[serde(default)]
    weights: WeightsSection,
    #[serde(default)]
    algorithm: AlgorithmSection,
}

impl ConfigFile {
    fn into_config(self) -> Result<ScenarioConfig> {
        let s = self.scenario;
        let u = s.num_users.unwrap_or(4);
        let mut cfg = ScenarioConfig::standard(u);
        if let Some(v) = s.p_max_dbm {
            cfg.p_max_dbm = v;
        }
        if let Some(v) = s.noise_dbm {
            cfg.noise_dbm = v;
        }
        if let Some(v) = s.p_tol_dbm {
            cfg.p_tol_dbm = v;
        }
        if let Some(v) = s.r_th {
            cfg.r_th = v.expand(u);
        }
        if let Some(v) = s.rng_seed {
            cfg.rng_seed = v;
        }
        if let Some(v) = s.area_side_m {
            cfg.area_side_m = v;
        }
        if let Some(v) = s.bs_height_m {
            cfg.bs_height_m = v;
        }
        if let Some(scheme) = self.weights.scheme {
            cfg = cfg.with_weights(scheme);
        }
        if let Some(v) = self.weights.noma {
            cfg.weights_noma = v.expand(u);
        }
        if let Some(v) = self.weights.rsma {
            cfg.weights_rsma = v.expand(u);
        }
        let a = self.algorithm;
        if let Some(v) = a.mode {
            cfg.mode = v;
        }
        if let Some(v) = a.epsilon1 {
            cfg.epsilon1 = v;
        }
        if let Some(v) = a.l_max {
            cfg.l_max = v;
        }
        if let Some(v) = a.solver_tol {
            cfg.solver_tol = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-user linear channel quantities for both subchannels, users sorted by
/// descending NOMA gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization<T> {
    pub gains_noma: Vec<T>,
    pub gains_rsma: Vec<T>,
    /// `|h|² / σ²`, per watt.
    pub delta_noma: Vec<T>,
    pub delta_rsma: Vec<T>,
    /// `σ² / |h|²`, watts.
    pub a_noma: Vec<T>,
    pub a_rsma: Vec<T>,
    pub distances_m: Vec<T>,
}

impl<T: Scalar> ChannelRealization<T> {
    /// Builds a realization from raw per-user gains, sorting users by NOMA
    /// gain and deriving `δ` and `a` from the noise power.
    pub fn from_gains(
        gains_noma: &[T],
        gains_rsma: &[T],
        distances_m: &[T],
        noise_w: T,
    ) -> Self {
        let u = gains_noma.len();
        assert_eq!(gains_rsma.len(), u, "gain vectors differ in length");
        assert_eq!(distances_m.len(), u, "distance vector length mismatch");
        let mut order: Vec<usize> = (0..u).collect();
        order.sort_by(|&i, &j| {
            gains_noma[j]
                .partial_cmp(&gains_noma[i])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let pick = |v: &[T]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let gains_noma = pick(gains_noma);
        let gains_rsma = pick(gains_rsma);
        let distances_m = pick(distances_m);
        let delta = |g: &[T]| g.iter().map(|&g| g / noise_w).collect::<Vec<_>>();
        let inv = |d: &[T]| d.iter().map(|&d| T::one() / d).collect::<Vec<_>>();
        let delta_noma = delta(&gains_noma);
        let delta_rsma = delta(&gains_rsma);
        Self {
            a_noma: inv(&delta_noma),
            a_rsma: inv(&delta_rsma),
            gains_noma,
            gains_rsma,
            delta_noma,
            delta_rsma,
            distances_m,
        }
    }

    /// Realization with identical `δ` on both subchannels for every user,
    /// mostly useful for hand-checked examples.
    pub fn uniform(num_users: usize, delta: T) -> Self {
        Self::from_deltas(&vec![delta; num_users], &vec![delta; num_users])
    }

    /// Realization from per-user `δ` values (noise normalized to 1 W).
    pub fn from_deltas(delta_noma: &[T], delta_rsma: &[T]) -> Self {
        let d = vec![T::one(); delta_noma.len()];
        Self::from_gains(delta_noma, delta_rsma, &d, T::one())
    }

    pub fn num_users(&self) -> usize {
        self.gains_noma.len()
    }
}

/// `10^((x − 30)/10)`.
pub fn dbm_to_watts(x_dbm: f64) -> f64 {
    10f64.powf((x_dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Large-scale path loss in dB for a distance in kilometres.
pub fn path_loss_db(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(Error::NonPositiveDistance(d_km));
    }
    Ok(-128.1 - 37.6 * d_km.log10())
}

pub const MIN_DISTANCE_M: f64 = 1.0;

/// Drops `num_users` users uniformly on the square centred under the base
/// station and draws independent Rayleigh fading on both subchannels.
pub fn draw_channels<T: Scalar, R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> ChannelRealization<T> {
    let u = config.num_users;
    let half = config.area_side_m / 2.0;
    let mut gn = Vec::with_capacity(u);
    let mut gr = Vec::with_capacity(u);
    let mut dist = Vec::with_capacity(u);
    for _ in 0..u {
        let x: f64 = rng.random_range(-half..=half);
        let y: f64 = rng.random_range(-half..=half);
        let d = (x * x + y * y + config.bs_height_m * config.bs_height_m)
            .sqrt()
            .max(MIN_DISTANCE_M);
        let pl = 10f64.powf(path_loss_db(d / 1000.0).expect("distance clamped positive") / 10.0);
        let fade_n: f64 = rng.sample(Exp1);
        let fade_r: f64 = rng.sample(Exp1);
        gn.push(T::lit(pl * fade_n));
        gr.push(T::lit(pl * fade_r));
        dist.push(T::lit(d));
    }
    ChannelRealization::from_gains(&gn, &gr, &dist, T::lit(config.noise_w()))
}
