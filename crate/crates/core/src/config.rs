//! JSON configuration for simulations and experiment grids. Every file
//! carries `schema_version` (currently 1, optional on input) and unknown
//! keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Seed;
use crate::error::{Error, Result};
use crate::gcn::TrainConfig;
use crate::simulate::{
    calibrate_kuramoto, compute_snr, empirical_snr, simulate_kuramoto, simulate_slds,
    KuramotoConfig, KuramotoParams, SimOutput, SldsConfig, SnrLevel,
};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

pub const RHO_RANGE: (f64, f64) = (0.2, 0.5);
pub const P_STAY_RANGE: (f64, f64) = (0.80, 0.95);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    #[default]
    Slds,
    Kuramoto,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::Slds => "slds",
            Generator::Kuramoto => "kuramoto",
        })
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slds" => Ok(Generator::Slds),
            "kuramoto" => Ok(Generator::Kuramoto),
            _ => Err(Error::Config(format!("unknown generator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DEL")]
    Del,
    #[serde(rename = "CEL")]
    Cel,
    #[serde(rename = "CEL-Mix")]
    CelMix,
    #[serde(rename = "GCN-CEL")]
    GcnCel,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Del, Method::Cel, Method::CelMix, Method::GcnCel];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Del => "DEL",
            Method::Cel => "CEL",
            Method::CelMix => "CEL-Mix",
            Method::GcnCel => "GCN-CEL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// An SNR given by level name or as a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnrSpec {
    Level(SnrLevel),
    Value(f64),
}

impl SnrSpec {
    pub fn target(self) -> f64 {
        match self {
            SnrSpec::Level(l) => l.target(),
            SnrSpec::Value(v) => v,
        }
    }
}

impl fmt::Display for SnrSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnrSpec::Level(l) => f.write_str(l.as_str()),
            SnrSpec::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for SnrSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(SnrSpec::Level(SnrLevel::Low)),
            "medium" => Ok(SnrSpec::Level(SnrLevel::Medium)),
            "high" => Ok(SnrSpec::Level(SnrLevel::High)),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.is_finite())
                .map(SnrSpec::Value)
                .ok_or_else(|| Error::Config(format!("bad SNR {s:?}"))),
        }
    }
}

pub(crate) fn draw_rho(seed: Seed) -> f64 {
    seed.derive("rho")
        .rng()
        .random_range(RHO_RANGE.0..RHO_RANGE.1)
}

pub(crate) fn draw_p_stay(seed: Seed) -> f64 {
    seed.derive("p_stay")
        .rng()
        .random_range(P_STAY_RANGE.0..=P_STAY_RANGE.1)
}

/// Input to `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub generator: Generator,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub snr: SnrSpec,
    #[serde(default)]
    pub seed: u64,
    /// SLDS only; drawn from `[0.2, 0.5)` when absent.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Drawn from `[0.80, 0.95]` when absent.
    #[serde(default)]
    pub p_stay: Option<f64>,
    /// Kuramoto only.
    #[serde(default)]
    pub kuramoto: Option<KuramotoParams>,
}

/// Echo of a simulation with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedSim {
    pub schema_version: u32,
    pub generator: Generator,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub snr: SnrSpec,
    pub snr_target: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub p_stay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kuramoto: Option<KuramotoParams>,
    /// SNR of the true centers (SLDS) or of the standardized observables
    /// (Kuramoto).
    pub achieved_snr: f64,
}

impl SimConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        if self.n == 0 || self.k < 2 || self.t < 2 {
            return Err(Error::Config("need N >= 1, K >= 2 and T >= 2".into()));
        }
        let snr = self.snr.target();
        if !(snr >= 0.0) || !snr.is_finite() {
            return Err(Error::Config(
                "snr must be a finite nonnegative number".into(),
            ));
        }
        if let Some(r) = self.rho {
            if !(RHO_RANGE.0..RHO_RANGE.1).contains(&r) {
                return Err(Error::Config(format!("rho {r} outside [0.2, 0.5)")));
            }
        }
        if let Some(p) = self.p_stay {
            if !(P_STAY_RANGE.0..=P_STAY_RANGE.1).contains(&p) {
                return Err(Error::Config(format!("p_stay {p} outside [0.80, 0.95]")));
            }
        }
        match self.generator {
            Generator::Slds if self.kuramoto.is_some() => Err(Error::Config(
                "kuramoto settings given for an slds run".into(),
            )),
            Generator::Kuramoto if self.rho.is_some() => {
                Err(Error::Config("rho applies only to slds".into()))
            }
            Generator::Kuramoto => {
                let p = self.kuramoto.clone().unwrap_or_default();
                if !(p.dt > 0.0) || !(p.zeta >= 0.0) || !(p.coupling >= 0.0) || !(p.omega_sd >= 0.0)
                {
                    return Err(Error::Config(
                        "kuramoto needs dt > 0 and nonnegative zeta, coupling, omega_sd".into(),
                    ));
                }
                if p.alpha.is_some_and(|a| !(a > 0.0)) {
                    return Err(Error::Config("kuramoto alpha must be positive".into()));
                }
                Ok(())
            }
            Generator::Slds => Ok(()),
        }
    }

    /// Runs the generator. Missing `rho`/`p_stay` are drawn from their
    /// ranges; a missing Kuramoto `alpha` is calibrated to the SNR target.
    pub fn run(&self) -> Result<(SimOutput, ResolvedSim)> {
        self.validate()?;
        let seed = Seed(self.seed);
        let p_stay = self.p_stay.unwrap_or_else(|| draw_p_stay(seed));
        let snr_target = self.snr.target();
        match self.generator {
            Generator::Slds => {
                let rho = self.rho.unwrap_or_else(|| draw_rho(seed));
                let cfg = SldsConfig::generate(
                    self.n,
                    self.k,
                    self.t,
                    rho,
                    p_stay,
                    snr_target,
                    seed.derive("config"),
                )?;
                let out = simulate_slds(&cfg, seed.derive("run"))?;
                let achieved = compute_snr(&cfg.mus, &cfg.sigma).unwrap_or(0.0);
                Ok((
                    out,
                    self.resolved(snr_target, Some(rho), p_stay, None, achieved),
                ))
            }
            Generator::Kuramoto => {
                let mut params = self.kuramoto.clone().unwrap_or_default();
                let base = KuramotoConfig::from_params(
                    self.n,
                    self.k,
                    self.t,
                    p_stay,
                    &params,
                    seed.derive("config"),
                )?;
                let cfg = match params.alpha {
                    Some(_) => base,
                    None => calibrate_kuramoto(&base, snr_target, seed.derive("run"))?,
                };
                params.alpha = Some(cfg.alpha);
                let out = simulate_kuramoto(&cfg, seed.derive("run"))?;
                let achieved = empirical_snr(&out.x, &out.z, self.k).unwrap_or(0.0);
                Ok((
                    out,
                    self.resolved(snr_target, None, p_stay, Some(params), achieved),
                ))
            }
        }
    }

    fn resolved(
        &self,
        snr_target: f64,
        rho: Option<f64>,
        p_stay: f64,
        kuramoto: Option<KuramotoParams>,
        achieved: f64,
    ) -> ResolvedSim {
        ResolvedSim {
            schema_version: SCHEMA_VERSION,
            generator: self.generator,
            n: self.n,
            k: self.k,
            t: self.t,
            snr: self.snr,
            snr_target,
            seed: self.seed,
            rho,
            p_stay,
            kuramoto,
            achieved_snr: achieved,
        }
    }
}

fn default_generators() -> Vec<Generator> {
    vec![Generator::Slds]
}
fn default_ns() -> Vec<usize> {
    (6..=14).collect()
}
fn default_ks() -> Vec<usize> {
    vec![3, 4, 5]
}
fn default_ts() -> Vec<usize> {
    vec![500, 1000]
}
fn default_snrs() -> Vec<SnrSpec> {
    vec![
        SnrSpec::Level(SnrLevel::Low),
        SnrSpec::Level(SnrLevel::Medium),
        SnrSpec::Level(SnrLevel::High),
    ]
}
fn default_repeats() -> usize {
    50
}
fn default_methods() -> Vec<Method> {
    vec![Method::Del, Method::CelMix]
}
fn default_comparisons() -> Vec<[Method; 2]> {
    vec![[Method::CelMix, Method::Del]]
}
fn default_lambda() -> f64 {
    crate::discrete::DEFAULT_LAMBDA
}
fn default_delta() -> f64 {
    crate::graph::DEFAULT_DENSITY
}
fn default_boot() -> usize {
    crate::eval::DEFAULT_BOOTSTRAP
}
fn default_q() -> f64 {
    0.05
}
fn default_level() -> f64 {
    0.95
}

/// Input to `grid`. Defaults reproduce the full simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_generators")]
    pub generators: Vec<Generator>,
    #[serde(rename = "Ns", default = "default_ns")]
    pub ns: Vec<usize>,
    #[serde(rename = "Ks", default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(rename = "Ts", default = "default_ts")]
    pub ts: Vec<usize>,
    #[serde(default = "default_snrs")]
    pub snr_levels: Vec<SnrSpec>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub base_seed: u64,
    /// Fixed SLDS `rho`; drawn per unit when absent.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Fixed `p_stay`; drawn per unit when absent.
    #[serde(default)]
    pub p_stay: Option<f64>,
    #[serde(default)]
    pub kuramoto: KuramotoParams,
    /// Basin-recovery tolerance; half the smallest true center distance
    /// when absent.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Ising pseudolikelihood penalty.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Graph density for GCN-CEL.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// GCN-CEL rank; `min(8, N)` when absent.
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub gcn: TrainConfig,
    /// Paired tests as `[a, b]`, differences taken as `a - b`.
    #[serde(default = "default_comparisons")]
    pub comparisons: Vec<[Method; 2]>,
    #[serde(default = "default_boot")]
    pub n_boot: usize,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    #[serde(default = "default_q")]
    pub q: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all grid fields have defaults")
    }
}

impl GridConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: GridConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        let empty = [
            ("generators", self.generators.is_empty()),
            ("Ns", self.ns.is_empty()),
            ("Ks", self.ks.is_empty()),
            ("Ts", self.ts.is_empty()),
            ("snr_levels", self.snr_levels.is_empty()),
            ("methods", self.methods.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("{name} must not be empty")));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.ns.contains(&0) || self.ks.iter().any(|&k| k < 2) || self.ts.iter().any(|&t| t < 2)
        {
            return Err(Error::Config("need N >= 1, K >= 2 and T >= 2".into()));
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return Err(Error::Config("methods must be distinct".into()));
        }
        if self
            .snr_levels
            .iter()
            .any(|s| !(s.target() >= 0.0) || !s.target().is_finite())
        {
            return Err(Error::Config(
                "SNR values must be finite and nonnegative".into(),
            ));
        }
        if let Some(r) = self.rho {
            if !(RHO_RANGE.0..RHO_RANGE.1).contains(&r) {
                return Err(Error::Config(format!("rho {r} outside [0.2, 0.5)")));
            }
        }
        if let Some(p) = self.p_stay {
            if !(P_STAY_RANGE.0..=P_STAY_RANGE.1).contains(&p) {
                return Err(Error::Config(format!("p_stay {p} outside [0.80, 0.95]")));
            }
        }
        if self.kappa.is_some_and(|k| !(k >= 0.0)) || !(self.lambda >= 0.0) {
            return Err(Error::Config("kappa and lambda must be nonnegative".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config("delta must lie in (0, 1]".into()));
        }
        if self.rank == Some(0) {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0)
            || !(self.ci_level > 0.0 && self.ci_level < 1.0)
            || self.n_boot == 0
        {
            return Err(Error::Config(
                "need 0 < q < 1, 0 < ci_level < 1 and n_boot >= 1".into(),
            ));
        }
        self.gcn.validate()?;
        Ok(())
    }

    /// Comparisons whose methods both run in this grid.
    pub fn active_comparisons(&self) -> Vec<[Method; 2]> {
        self.comparisons
            .iter()
            .copied()
            .filter(|[a, b]| self.methods.contains(a) && self.methods.contains(b))
            .collect()
    }
}
