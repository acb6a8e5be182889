//! Declarative experiments: a JSON config names a type model, a population,
//! mechanisms, a revenue engine and the identity checks to run.
//!
//! Numbers in configs may be JSON numbers or strings such as `"1/3"`; their
//! text is kept, so exact runs read `0.1` as one tenth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::defaults::{
    ENUMERATION_BUDGET, EXACT_EPSILON, MC_CHUNK_SIZE, MC_EPSILON_SE, MC_SAMPLES, MC_SEED, QUADRATURE_TOL,
};
use crate::distributions::{ContinuousModel, DistributionError, FiniteTypeModel, PopulationModel, TypeModel};
use crate::identity::{self, DeviationReport, DeviationSpec, IdentityError, Notion};
use crate::mechanisms::{
    induce_dark, DisclosurePolicy, FormatTag, Mechanism, MechanismError, MechanismSpec, PriceSpec, TieRule,
};
use crate::revenue::{
    dark_revenue_formula, expected_revenue_mc_paired, revenue_by_count, RevenueError, RevenueEstimate,
};
use crate::scalar::Scalar;
use crate::Rational;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Schema(String),
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("{context}: {source}")]
    Revenue { context: String, source: RevenueError },
    #[error("{context}: {source}")]
    Identity { context: String, source: IdentityError },
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn schema(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Schema(msg.into())
}

/// A number written either as a JSON number or as a string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Number(pub String);

impl Number {
    pub fn parse<T: Scalar>(&self) -> Result<T> {
        T::parse_exact(&self.0).ok_or_else(|| schema(format!("'{}' is not a number", self.0)))
    }

    fn keyword(&self) -> Option<&str> {
        match self.0.trim() {
            k @ ("optimal" | "none") => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Number {
    fn from(s: &str) -> Self {
        Number(s.to_string())
    }
}

impl Serialize for Number {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Number {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => Ok(Number(s)),
            serde_json::Value::Number(n) => Ok(Number(n.to_string())),
            other => Err(serde::de::Error::custom(format!("expected a number, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TypeConfig {
    Uniform,
    Power { exponent: Number },
    Grid { values: Vec<Number>, masses: Vec<Number> },
    UniformGrid { points: usize },
}

impl TypeConfig {
    pub fn is_finite(&self) -> bool {
        matches!(self, TypeConfig::Grid { .. } | TypeConfig::UniformGrid { .. })
    }

    pub fn build<T: Scalar>(&self) -> Result<TypeModel<T>> {
        Ok(match self {
            TypeConfig::Uniform => TypeModel::uniform(),
            TypeConfig::Power { exponent } => {
                TypeModel::continuous(ContinuousModel::Power { exponent: exponent.parse::<f64>()? })?
            }
            TypeConfig::Grid { values, masses } => TypeModel::finite(
                values.iter().map(Number::parse).collect::<Result<_>>()?,
                masses.iter().map(Number::parse).collect::<Result<_>>()?,
            )?,
            TypeConfig::UniformGrid { points } => TypeModel::Finite(FiniteTypeModel::uniform_grid(*points)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PopulationConfig {
    Fixed {
        n: usize,
    },
    Binomial {
        pool: usize,
        participation: Number,
    },
    /// Designer prior π, with an optional participant prior p.
    Explicit {
        designer: BTreeMap<String, Number>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        participant: Option<BTreeMap<String, Number>>,
    },
    /// Participant prior p; π is recovered from it.
    Participant {
        prior: BTreeMap<String, Number>,
    },
}

fn count_map<T: Scalar>(map: &BTreeMap<String, Number>) -> Result<BTreeMap<usize, T>> {
    map.iter()
        .map(|(k, v)| {
            let n = k.trim().parse::<usize>().map_err(|_| schema(format!("'{k}' is not a buyer count")))?;
            Ok((n, v.parse()?))
        })
        .collect()
}

impl PopulationConfig {
    pub fn build<T: Scalar>(&self) -> Result<PopulationModel<T>> {
        Ok(match self {
            PopulationConfig::Fixed { n } => PopulationModel::fixed(*n)?,
            PopulationConfig::Binomial { pool, participation } => PopulationModel::binomial(*pool, participation.parse()?)?,
            PopulationConfig::Explicit { designer, participant } => PopulationModel::explicit(
                count_map(designer)?,
                participant.as_ref().map(count_map).transpose()?,
            )?,
            PopulationConfig::Participant { prior } => PopulationModel::from_participant_prior(count_map(prior)?)?,
        })
    }

    /// Parses `"2"` (fixed) or `"1:0.5,2:0.5"` (participant prior).
    pub fn from_descriptor(text: &str) -> Result<Self> {
        if let Ok(n) = text.trim().parse::<usize>() {
            return Ok(PopulationConfig::Fixed { n });
        }
        let prior = text
            .split(',')
            .map(|pair| {
                let (n, p) = pair.split_once(':').ok_or_else(|| schema(format!("bad prior entry '{pair}'")))?;
                Ok((n.trim().to_string(), Number::from(p.trim())))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(PopulationConfig::Participant { prior })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub counts: Vec<usize>,
    pub mechanism: MechanismConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub format: String,
    /// A value, `"optimal"` or `"none"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_rule: Option<String>,
    /// Posted price: a value or `"optimal"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Signals of a partitional mechanism.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signals: Vec<SignalConfig>,
}

fn price_spec<T: Scalar>(value: &Option<Number>) -> Result<Option<PriceSpec<T>>> {
    Ok(match value {
        None => None,
        Some(v) => Some(match v.keyword() {
            Some("optimal") => PriceSpec::Optimal,
            Some(_) => PriceSpec::None,
            None => PriceSpec::Value(v.parse()?),
        }),
    })
}

impl MechanismConfig {
    pub fn new(format: FormatTag) -> Self {
        Self { format: format.to_string(), reserve: None, tie_rule: None, price: None, label: None, signals: Vec::new() }
    }

    /// Parses `format[:key=value,...]` with keys `reserve`, `tie`, `price`
    /// and `label`, e.g. `dark-first-price:reserve=optimal`.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let (format, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut cfg = MechanismConfig { format: format.trim().to_string(), ..MechanismConfig::new(FormatTag::LitSecondPrice) };
        for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| schema(format!("bad mechanism option '{pair}'")))?;
            let v = v.trim();
            match k.trim() {
                "reserve" => cfg.reserve = Some(v.into()),
                "tie" | "tie_rule" => cfg.tie_rule = Some(v.to_string()),
                "price" => cfg.price = Some(v.into()),
                "label" => cfg.label = Some(v.to_string()),
                other => return Err(schema(format!("unknown mechanism option '{other}'"))),
            }
        }
        Ok(cfg)
    }

    pub fn format_tag(&self) -> Result<FormatTag> {
        Ok(FormatTag::from_str(&self.format)?)
    }

    pub fn spec<T: Scalar>(&self) -> Result<MechanismSpec<T>> {
        let mut spec = MechanismSpec::new(self.format_tag()?);
        if let Some(r) = price_spec(&self.reserve)? {
            spec.reserve = r;
        }
        if let Some(p) = price_spec(&self.price)? {
            spec.price = p;
        }
        if let Some(rule) = &self.tie_rule {
            spec = spec.tie_rule(TieRule::from_str(rule)?);
        }
        Ok(spec)
    }

    pub fn build<T: Scalar>(&self, model: &TypeModel<T>, pop: &PopulationModel<T>) -> Result<Mechanism<T>> {
        let mech = if self.format_tag()? == FormatTag::Partitional {
            if self.signals.is_empty() {
                return Err(schema("a partitional mechanism needs signals"));
            }
            let signals = self
                .signals
                .iter()
                .map(|s| {
                    let counts: BTreeSet<usize> = s.counts.iter().copied().collect();
                    let label = s.label.clone().unwrap_or_else(|| format!("{counts:?}"));
                    Ok((label, counts, s.mechanism.spec()?))
                })
                .collect::<Result<Vec<_>>>()?;
            induce_dark(&DisclosurePolicy::build(signals, model, pop)?)?
        } else {
            if !self.signals.is_empty() {
                return Err(schema(format!("signals are only allowed on partitional mechanisms, not {}", self.format)));
            }
            self.spec()?.build(model, pop)?
        };
        Ok(match &self.label {
            Some(l) => mech.with_label(l.clone()),
            None => mech,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EngineConfig {
    /// Enumeration of every profile on a grid.
    Exact,
    /// Virtual-surplus formula (enumeration on grids, quadrature otherwise).
    Formula,
    Mc {
        samples: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl EngineConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EngineConfig::Exact => "exact",
            EngineConfig::Formula => "formula",
            EngineConfig::Mc { .. } => "mc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arithmetic {
    Exact,
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub notion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_identities: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
}

impl CheckConfig {
    pub fn new(notion: Notion) -> Self {
        Self { notion: notion.to_string(), max_identities: None, lattice: None, cells: None }
    }

    pub fn notion(&self) -> Result<Notion> {
        Notion::from_str(&self.notion).map_err(|e| schema(e.to_string()))
    }

    pub fn deviation_spec(&self, budget: u64) -> DeviationSpec {
        let mut spec = DeviationSpec::default().budget(budget);
        if let Some(m) = self.max_identities {
            spec = spec.identities(m);
        }
        if let Some(l) = self.lattice {
            spec = spec.lattice(l).cells(l * crate::defaults::MIDPOINTS_PER_STEP);
        }
        if let Some(c) = self.cells {
            spec = spec.cells(c);
        }
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

impl FromStr for OutputFormat {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "both" => Ok(OutputFormat::Both),
            other => Err(schema(format!("unknown output format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub types: TypeConfig,
    pub population: PopulationConfig,
    #[serde(default)]
    pub mechanisms: Vec<MechanismConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arithmetic: Option<Arithmetic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| schema(format!("{}: {e}", path.display())))
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<()> {
        if self.scenario.trim().is_empty() {
            return Err(schema("scenario name is empty"));
        }
        if self.mechanisms.is_empty() {
            return Err(schema("mechanism list is empty"));
        }
        for m in &self.mechanisms {
            m.format_tag()?;
            if let Some(rule) = &m.tie_rule {
                TieRule::from_str(rule)?;
            }
        }
        for c in &self.checks {
            c.notion()?;
        }
        match (&self.engine, self.arithmetic) {
            (Some(EngineConfig::Exact), _) if !self.types.is_finite() => {
                return Err(schema("the exact engine needs a finite type grid"))
            }
            (Some(EngineConfig::Mc { .. }), Some(Arithmetic::Exact)) => {
                return Err(schema("Monte Carlo runs in floating point"))
            }
            (Some(EngineConfig::Mc { samples: 0, .. }), _) => return Err(schema("sample count must be positive")),
            _ => {}
        }
        if self.arithmetic == Some(Arithmetic::Exact) && !self.types.is_finite() {
            return Err(schema("exact arithmetic needs a finite type grid"));
        }
        Ok(())
    }

    /// Fills every default, so a report shows exactly what ran.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut cfg = self.clone();
        let seed = cfg.seed.unwrap_or(MC_SEED);
        cfg.seed = Some(seed);
        cfg.budget = Some(cfg.budget.unwrap_or(ENUMERATION_BUDGET));
        let engine = cfg.engine.take().unwrap_or(if cfg.types.is_finite() {
            EngineConfig::Exact
        } else {
            EngineConfig::Mc { samples: MC_SAMPLES, seed: None }
        });
        cfg.engine = Some(match engine {
            EngineConfig::Mc { samples, seed: s } => EngineConfig::Mc { samples, seed: Some(s.unwrap_or(seed)) },
            other => other,
        });
        if cfg.arithmetic.is_none() {
            let float = !cfg.types.is_finite() || matches!(cfg.engine, Some(EngineConfig::Mc { .. }));
            cfg.arithmetic = Some(if float { Arithmetic::Float } else { Arithmetic::Exact });
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRevenue {
    pub n: usize,
    pub prior: f64,
    pub revenue: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RevenueRow {
    pub mechanism: String,
    pub engine: String,
    #[serde(flatten)]
    pub estimate: RevenueEstimate,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_n: Vec<CountRevenue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub first: String,
    pub second: String,
    pub difference: f64,
    pub combined_se: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub engine: String,
    pub arithmetic: Arithmetic,
    pub seed: u64,
    pub chunk_size: u64,
    pub quadrature_tol: f64,
    pub exact_epsilon: f64,
    pub mc_epsilon_se: f64,
    pub budget: u64,
    pub threads: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub config: ExperimentConfig,
    pub revenues: Vec<RevenueRow>,
    pub comparisons: Vec<Comparison>,
    pub checks: Vec<DeviationReport>,
    pub provenance: Provenance,
}

impl ExperimentResult {
    pub fn check(&self, notion: Notion, mechanism: &str) -> Option<&DeviationReport> {
        self.checks.iter().find(|c| c.notion == notion && c.mechanism == mechanism)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }
}

struct Built<T> {
    model: TypeModel<T>,
    pop: PopulationModel<T>,
    mechs: Vec<Mechanism<T>>,
}

fn build_all<T: Scalar>(cfg: &ExperimentConfig) -> Result<Built<T>> {
    let model = cfg.types.build::<T>()?;
    let pop = cfg.population.build::<T>()?;
    let mechs = cfg.mechanisms.iter().map(|m| m.build(&model, &pop)).collect::<Result<Vec<_>>>()?;
    Ok(Built { model, pop, mechs })
}

fn revenue_rows<T: Scalar>(cfg: &ExperimentConfig, b: &Built<T>) -> Result<Vec<RevenueRow>> {
    let engine = cfg.engine.clone().expect("resolved");
    let budget = cfg.budget.expect("resolved");
    let context = |m: &Mechanism<T>| format!("revenue of {}", m.label());
    b.mechs
        .iter()
        .map(|m| {
            let wrap = |source| ExperimentError::Revenue { context: context(m), source };
            let (estimate, per_n) = match &engine {
                EngineConfig::Exact => {
                    let grid = b.model.as_finite().ok_or_else(|| schema("the exact engine needs a finite type grid"))?;
                    let rows = revenue_by_count(m, grid, &b.pop, budget).map_err(wrap)?;
                    let total = rows.iter().fold(T::zero(), |a, (_, p, r)| a + p.clone() * r.clone());
                    let per_n = rows
                        .into_iter()
                        .map(|(n, p, r)| CountRevenue {
                            n,
                            prior: p.as_f64(),
                            revenue: r.as_f64(),
                            exact: T::EXACT.then(|| r.to_string()),
                        })
                        .collect();
                    (exact_estimate(&total), per_n)
                }
                EngineConfig::Formula => {
                    let v = dark_revenue_formula(m, &b.model, &b.pop, &T::zero()).map_err(wrap)?;
                    (exact_estimate(&v), Vec::new())
                }
                EngineConfig::Mc { .. } => unreachable!("sampled revenue is handled separately"),
            };
            Ok(RevenueRow { mechanism: m.label().to_string(), engine: engine.name().into(), estimate, per_n })
        })
        .collect()
}

fn exact_estimate<T: Scalar>(v: &T) -> RevenueEstimate {
    if T::EXACT {
        RevenueEstimate::exact(v)
    } else {
        RevenueEstimate { value: v.as_f64(), se: 0.0, samples: 0, seed: None, exact: None }
    }
}

fn run_checks<T: Scalar>(
    cfg: &ExperimentConfig,
    b: &Built<T>,
    skip_bidding_zero: bool,
) -> Result<Vec<DeviationReport>> {
    let budget = cfg.budget.expect("resolved");
    let mut out = Vec::new();
    for c in &cfg.checks {
        let notion = c.notion()?;
        if skip_bidding_zero && notion == Notion::BiddingZero {
            continue;
        }
        let spec = c.deviation_spec(budget);
        for m in &b.mechs {
            let report = identity::check(notion, m, &b.model, &b.pop, &spec).map_err(|source| {
                ExperimentError::Identity { context: format!("{notion} check of {}", m.label()), source }
            })?;
            out.push(report);
        }
    }
    Ok(out)
}

fn comparisons(rows: &[RevenueRow]) -> Vec<Comparison> {
    let mut out = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let combined_se = (a.estimate.se.powi(2) + b.estimate.se.powi(2)).sqrt();
            out.push(Comparison {
                first: a.mechanism.clone(),
                second: b.mechanism.clone(),
                difference: a.estimate.value - b.estimate.value,
                combined_se,
                agree: a.estimate.agrees_with(&b.estimate, MC_EPSILON_SE),
            });
        }
    }
    out
}

/// Validates, resolves and runs a config. Nothing is written.
pub fn run_scenario(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let cfg = config.resolved();
    let start = Instant::now();
    let (revenues, checks) = match cfg.arithmetic.expect("resolved") {
        Arithmetic::Exact => {
            let b = build_all::<Rational>(&cfg)?;
            (revenue_rows(&cfg, &b)?, run_checks(&cfg, &b, false)?)
        }
        Arithmetic::Float => {
            let b = build_all::<f64>(&cfg)?;
            match cfg.engine.clone().expect("resolved") {
                EngineConfig::Mc { samples, seed } => {
                    let seed = seed.expect("resolved");
                    let refs: Vec<&Mechanism<f64>> = b.mechs.iter().collect();
                    let estimates = expected_revenue_mc_paired(&refs, &b.model, &b.pop, samples, seed).map_err(
                        |source| ExperimentError::Revenue { context: "sampled revenue".into(), source },
                    )?;
                    let rows = b
                        .mechs
                        .iter()
                        .zip(estimates)
                        .map(|(m, estimate)| RevenueRow {
                            mechanism: m.label().to_string(),
                            engine: "mc".into(),
                            estimate,
                            per_n: Vec::new(),
                        })
                        .collect();
                    let mut checks = run_checks(&cfg, &b, true)?;
                    for c in cfg.checks.iter().filter(|c| c.notion().ok() == Some(Notion::BiddingZero)) {
                        let cap = c.max_identities.unwrap_or(crate::defaults::MAX_IDENTITIES);
                        for m in &b.mechs {
                            let r = identity::bidding_zero_mc(m, &b.model, &b.pop, cap, samples, seed).map_err(
                                |source| ExperimentError::Identity {
                                    context: format!("bidding-zero check of {}", m.label()),
                                    source,
                                },
                            )?;
                            checks.push(r);
                        }
                    }
                    (rows, checks)
                }
                _ => (revenue_rows(&cfg, &b)?, run_checks(&cfg, &b, false)?),
            }
        }
    };
    let comparisons = comparisons(&revenues);
    let engine = cfg.engine.as_ref().expect("resolved");
    let provenance = Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        engine: engine.name().to_string(),
        arithmetic: cfg.arithmetic.expect("resolved"),
        seed: cfg.seed.expect("resolved"),
        chunk_size: MC_CHUNK_SIZE,
        quadrature_tol: QUADRATURE_TOL,
        exact_epsilon: EXACT_EPSILON,
        mc_epsilon_se: MC_EPSILON_SE,
        budget: cfg.budget.expect("resolved"),
        threads: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentResult { scenario: cfg.scenario.clone(), config: cfg, revenues, comparisons, checks, provenance })
}

#[derive(Serialize)]
struct RevenueCsv<'a> {
    mechanism: &'a str,
    engine: &'a str,
    value: f64,
    se: f64,
    samples: u64,
    seed: Option<u64>,
    exact: Option<&'a str>,
}

#[derive(Serialize)]
struct PerNCsv<'a> {
    mechanism: &'a str,
    n: usize,
    prior: f64,
    revenue: f64,
    exact: Option<&'a str>,
}

#[derive(Serialize)]
struct CheckCsv<'a> {
    notion: &'a str,
    mechanism: &'a str,
    equilibrium: f64,
    best: f64,
    gain: f64,
    gain_exact: Option<&'a str>,
    se: Option<f64>,
    verdict: &'a str,
    witness_identities: usize,
    witness_gain: f64,
    evaluations: u64,
}

/// Writes `<scenario>.json` and the CSV tables into `dir`; returns the paths.
pub fn write_outputs(result: &ExperimentResult, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = result.scenario.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '_', "_");
    let mut written = Vec::new();
    if format != OutputFormat::Csv {
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, result.to_json() + "\n")?;
        written.push(path);
    }
    if format != OutputFormat::Json {
        let path = dir.join(format!("{stem}_revenue.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        for r in &result.revenues {
            w.serialize(RevenueCsv {
                mechanism: &r.mechanism,
                engine: &r.engine,
                value: r.estimate.value,
                se: r.estimate.se,
                samples: r.estimate.samples,
                seed: r.estimate.seed,
                exact: r.estimate.exact.as_deref(),
            })?;
        }
        w.flush()?;
        written.push(path);
        if result.revenues.iter().any(|r| !r.per_n.is_empty()) {
            let path = dir.join(format!("{stem}_per_n.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            for r in &result.revenues {
                for c in &r.per_n {
                    w.serialize(PerNCsv {
                        mechanism: &r.mechanism,
                        n: c.n,
                        prior: c.prior,
                        revenue: c.revenue,
                        exact: c.exact.as_deref(),
                    })?;
                }
            }
            w.flush()?;
            written.push(path);
        }
        if !result.checks.is_empty() {
            let path = dir.join(format!("{stem}_checks.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            for c in &result.checks {
                w.serialize(CheckCsv {
                    notion: c.notion.as_str(),
                    mechanism: &c.mechanism,
                    equilibrium: c.equilibrium,
                    best: c.best,
                    gain: c.gain,
                    gain_exact: c.gain_exact.as_deref(),
                    se: c.se,
                    verdict: c.verdict.as_str(),
                    witness_identities: c.witness.identities,
                    witness_gain: c.witness.gain,
                    evaluations: c.evaluations,
                })?;
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Bundled scenario configs, by name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("lit-fp-shill-gain", include_str!("../scenarios/lit-fp-shill-gain.json")),
    ("revenue-equivalence-uniform", include_str!("../scenarios/revenue-equivalence-uniform.json")),
];

pub fn bundled(name: &str) -> Option<ExperimentConfig> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ExperimentConfig::from_json(text).expect("bundled configs parse"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "scenario": "k3",
                "types": {"kind": "grid", "values": [0, 0.5, 1], "masses": ["1/3", "1/3", "1/3"]},
                "population": {"kind": "fixed", "n": 2},
                "mechanisms": [
                    {"format": "lit-second-price"},
                    {"format": "tie-corrected-second-price", "reserve": "optimal"}
                ],
                "checks": [{"notion": "expost-buyer", "max_identities": 3}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn exact_run_reports_rational_revenue() {
        let r = run_scenario(&grid_config()).unwrap();
        assert_eq!(r.revenues[0].estimate.exact.as_deref(), Some("5/18"));
        assert_eq!(r.revenues[0].per_n.len(), 1);
        assert_eq!(r.config.arithmetic, Some(Arithmetic::Exact));
        assert_eq!(r.checks.len(), 2);
        assert!(r.checks[0].passes());
        assert!(!r.checks[1].passes());
        assert!(r.comparisons.len() == 1);
    }

    #[test]
    fn empty_mechanism_list_is_rejected_before_running() {
        let mut cfg = grid_config();
        cfg.mechanisms.clear();
        assert!(matches!(run_scenario(&cfg), Err(ExperimentError::Schema(_))));
    }

    #[test]
    fn unknown_fields_and_bad_numbers_are_rejected() {
        let bad = r#"{"scenario":"x","types":{"kind":"uniform"},"population":{"kind":"fixed","n":2},"mechanisms":[],"colour":1}"#;
        assert!(ExperimentConfig::from_json(bad).is_err());
        let n = Number::from("1/0");
        assert!(n.parse::<Rational>().is_err());
        assert!(MechanismConfig::from_descriptor("lit-first-price:colour=red").is_err());
    }

    #[test]
    fn numbers_keep_their_text() {
        let cfg = grid_config();
        match &cfg.types {
            TypeConfig::Grid { values, .. } => assert_eq!(values[1].0, "0.5"),
            _ => unreachable!(),
        }
        assert_eq!(Number::from("0.1").parse::<Rational>().unwrap(), Rational::ratio(1, 10));
    }

    #[test]
    fn descriptors() {
        let m = MechanismConfig::from_descriptor("dark-first-price:reserve=optimal,tie=tie-corrected").unwrap();
        assert_eq!(m.format_tag().unwrap(), FormatTag::DarkFirstPrice);
        assert_eq!(m.reserve, Some(Number::from("optimal")));
        assert_eq!(
            PopulationConfig::from_descriptor("1:0.5, 2:0.5").unwrap(),
            PopulationConfig::Participant {
                prior: BTreeMap::from([("1".into(), "0.5".into()), ("2".into(), "0.5".into())])
            }
        );
    }

    #[test]
    fn partitional_configs_build() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "scenario": "split",
                "types": {"kind": "uniform-grid", "points": 3},
                "population": {"kind": "explicit", "designer": {"1": "1/3", "2": "1/3", "3": "1/3"}},
                "mechanisms": [{"format": "partitional", "signals": [
                    {"counts": [1], "mechanism": {"format": "lit-second-price"}},
                    {"counts": [2, 3], "mechanism": {"format": "dark-first-price"}}
                ]}]
            }"#,
        )
        .unwrap();
        let r = run_scenario(&cfg).unwrap();
        assert!(r.revenues[0].estimate.value > 0.0);
    }

    #[test]
    fn outputs_are_written() {
        let r = run_scenario(&grid_config()).unwrap();
        let dir = std::env::temp_dir().join(format!("shillbench-out-{}", std::process::id()));
        let files = write_outputs(&r, &dir, OutputFormat::Both).unwrap();
        assert_eq!(files.len(), 4);
        let text = std::fs::read_to_string(&files[1]).unwrap();
        assert!(text.starts_with("mechanism,engine,value,se,samples,seed,exact"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bundled_configs_parse_and_validate() {
        for (name, _) in BUNDLED {
            bundled(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn schema_lists_every_format_and_notion() {
        let schema: serde_json::Value = serde_json::from_str(include_str!("../schema/experiment.schema.json")).unwrap();
        let names = |ptr: &str| -> Vec<String> {
            schema.pointer(ptr).unwrap().as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
        };
        let formats = names("/$defs/mechanism/properties/format/enum");
        assert_eq!(formats.len(), FormatTag::ALL.len());
        for tag in FormatTag::ALL {
            assert!(formats.contains(&tag.to_string()), "{tag}");
        }
        for notion in names("/$defs/check/properties/notion/enum") {
            notion.parse::<Notion>().unwrap();
        }
    }
}
