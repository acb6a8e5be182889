//! The bundled scenario suite: one scenario per published result, each with
//! a pass/fail predicate and a row of numbers checked against a golden CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defaults::GOLDEN_DIGITS;
use crate::distributions::{check_regular, PopulationModel, TypeModel};
use crate::enumerate::{multisets, Support};
use crate::equilibrium::{dark_first_price_bid, lit_first_price_bid, tie_corrected_fp_payment};
use crate::experiment::{bundled, run_scenario, ExperimentError};
use crate::identity::{
    bayesian_buyer_ic, bayesian_seller_ic, bidding_zero_test, expost_auctioneer_ic, expost_buyer_ic,
    expost_seller_ic, is_efficient, DeviationSpec, Verdict,
};
use crate::mechanisms::{induce_dark, DisclosurePolicy, FormatTag, Mechanism, MechanismSpec, TieRule};
use crate::revenue::{dark_revenue_formula, exact_revenue, interim_quantities, optimal_posted_price};
use crate::scalar::Scalar;
use crate::{ContinuousModel, Rational};

type Result<T> = std::result::Result<T, ExperimentError>;
type Q = Rational;

/// Golden values shipped with the crate.
pub const DEFAULT_GOLDEN: &str = include_str!("../golden/reproduce.csv");

pub const SCENARIOS: [(&str, usize); 15] = [
    ("lit-fp-bid", 1),
    ("dark-fp-bid", 2),
    ("tc-fp-monotone", 3),
    ("tc-fp-binding", 4),
    ("lit-fp-shill-gain", 5),
    ("bayes-seller-sp", 6),
    ("expost-seller-witness", 7),
    ("posted-price-auctioneer", 8),
    ("dark-fp-optimal", 9),
    ("expost-buyer-sp", 10),
    ("revenue-equivalence-uniform", 11),
    ("dark-revenue-formula", 12),
    ("partitional-equivalence", 13),
    ("posted-price-buyer-gain", 14),
    ("optimal-posted-price", 15),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub criterion: usize,
    pub passed: bool,
    pub values: Vec<(String, f64)>,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldenDiff {
    pub scenario: String,
    pub quantity: String,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub outcomes: Vec<ScenarioOutcome>,
    pub diffs: Vec<GoldenDiff>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.diffs.is_empty() && self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failing(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.outcomes.iter().filter(|o| !o.passed).map(|o| format!("{} (criterion {})", o.name, o.criterion)).collect();
        for d in &self.diffs {
            let name = format!("{} (golden mismatch)", d.scenario);
            if !names.contains(&name) {
                names.push(name);
            }
        }
        names
    }

    /// One line per scenario, then the golden diff report if any.
    pub fn matrix(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let golden = if self.diffs.iter().any(|d| d.scenario == o.name) { "golden DIFF" } else { "golden ok" };
            out.push_str(&format!(
                "{:>2} {:<28} {} {:<11} {:>7.2}s  {}\n",
                o.criterion,
                o.name,
                if o.passed { "PASS" } else { "FAIL" },
                golden,
                o.seconds,
                o.detail
            ));
        }
        if !self.diffs.is_empty() {
            out.push_str("golden differences:\n");
            for d in &self.diffs {
                out.push_str(&format!(
                    "  {}/{}: expected {}, got {}\n",
                    d.scenario,
                    d.quantity,
                    d.expected.as_deref().unwrap_or("(missing)"),
                    d.actual.as_deref().unwrap_or("(missing)")
                ));
            }
        }
        out
    }
}

/// `x` with [`GOLDEN_DIGITS`] significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{:.*e}", GOLDEN_DIGITS - 1, x)
}

#[derive(Serialize, Deserialize)]
struct GoldenRow {
    scenario: String,
    quantity: String,
    value: String,
}

pub fn golden_csv(outcomes: &[ScenarioOutcome]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for o in outcomes {
        for (q, v) in &o.values {
            w.serialize(GoldenRow { scenario: o.name.clone(), quantity: q.clone(), value: format_sig(*v) })
                .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn parse_golden(text: &str) -> Result<BTreeMap<(String, String), String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<GoldenRow>()
        .map(|row| {
            let row = row?;
            Ok(((row.scenario, row.quantity), row.value))
        })
        .collect()
}

fn same(expected: &str, actual: f64) -> bool {
    match expected.parse::<f64>() {
        Ok(e) => (e - actual).abs() <= 1e-11 * e.abs().max(actual.abs()) + 1e-12,
        Err(_) => false,
    }
}

/// Golden rows of the scenarios that ran, compared at the stored precision.
pub fn compare_golden(outcomes: &[ScenarioOutcome], golden: &BTreeMap<(String, String), String>) -> Vec<GoldenDiff> {
    let mut diffs = Vec::new();
    for o in outcomes {
        let mut seen = BTreeSet::new();
        for (q, v) in &o.values {
            seen.insert(q.clone());
            let expected = golden.get(&(o.name.clone(), q.clone()));
            if !expected.is_some_and(|e| same(e, *v)) {
                diffs.push(GoldenDiff {
                    scenario: o.name.clone(),
                    quantity: q.clone(),
                    expected: expected.cloned(),
                    actual: Some(format_sig(*v)),
                });
            }
        }
        for ((s, q), e) in golden {
            if *s == o.name && !seen.contains(q) {
                diffs.push(GoldenDiff { scenario: s.clone(), quantity: q.clone(), expected: Some(e.clone()), actual: None });
            }
        }
    }
    diffs
}

/// Runs the selected scenarios (all when `only` is empty) and compares them
/// with `golden`, or with [`DEFAULT_GOLDEN`].
pub fn reproduce(only: &[String], golden: Option<&str>, parallel: bool) -> Result<Summary> {
    for name in only {
        if !SCENARIOS.iter().any(|(n, _)| n == name) {
            return Err(ExperimentError::Schema(format!("unknown scenario '{name}'")));
        }
    }
    let selected: Vec<&str> =
        SCENARIOS.iter().map(|(n, _)| *n).filter(|n| only.is_empty() || only.iter().any(|o| o == n)).collect();
    let outcomes = if parallel {
        selected.par_iter().map(|n| run_named(n)).collect::<Result<Vec<_>>>()?
    } else {
        selected.iter().map(|n| run_named(n)).collect::<Result<Vec<_>>>()?
    };
    let golden = parse_golden(golden.unwrap_or(DEFAULT_GOLDEN))?;
    let diffs = compare_golden(&outcomes, &golden);
    Ok(Summary { outcomes, diffs })
}

pub fn run_named(name: &str) -> Result<ScenarioOutcome> {
    let criterion = SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| ExperimentError::Schema(format!("unknown scenario '{name}'")))?;
    let start = Instant::now();
    let (passed, values, detail) = match criterion {
        1 => lit_fp_bid()?,
        2 => dark_fp_bid()?,
        3 => tc_fp_monotone()?,
        4 => tc_fp_binding()?,
        5 => lit_fp_shill_gain()?,
        6 => bayes_seller_sp()?,
        7 => expost_seller_witness()?,
        8 => posted_price_auctioneer()?,
        9 => dark_fp_optimal()?,
        10 => expost_buyer_sp()?,
        11 => revenue_equivalence()?,
        12 => dark_revenue_formula_check()?,
        13 => partitional_equivalence()?,
        14 => posted_price_buyer_gain()?,
        _ => optimal_posted_prices()?,
    };
    Ok(ScenarioOutcome {
        name: name.to_string(),
        criterion,
        passed,
        values,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

type Scenario = (bool, Vec<(String, f64)>, String);

fn vals(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn q(n: i64, d: i64) -> Q {
    Q::ratio(n, d)
}

fn k3() -> TypeModel<Q> {
    TypeModel::finite(vec![q(0, 1), q(1, 2), q(1, 1)], vec![q(1, 3); 3]).expect("valid grid")
}

fn half_half<T: Scalar>() -> PopulationModel<T> {
    PopulationModel::from_participant_prior(BTreeMap::from([(1, T::ratio(1, 2)), (2, T::ratio(1, 2))]))
        .expect("valid prior")
}

fn grid_lattice() -> impl Iterator<Item = f64> {
    (0..=100).map(|i| i as f64 / 100.0)
}

fn id_err(e: crate::identity::IdentityError) -> ExperimentError {
    ExperimentError::Identity { context: "scenario".into(), source: e }
}

fn rev_err(e: crate::revenue::RevenueError) -> ExperimentError {
    ExperimentError::Revenue { context: "scenario".into(), source: e }
}

fn lit_fp_bid() -> Result<Scenario> {
    let mut worst: f64 = 0.0;
    for n in [2usize, 3, 10] {
        for t in grid_lattice() {
            let b = lit_first_price_bid(&ContinuousModel::Uniform, n, 0.0, t).map_err(crate::mechanisms::MechanismError::from)?;
            worst = worst.max((b - (n as f64 - 1.0) / n as f64 * t).abs());
        }
    }
    Ok((worst <= 1e-9, vals(&[("max_error", worst)]), format!("max error {worst:.1e}")))
}

fn dark_fp_bid() -> Result<Scenario> {
    let model = TypeModel::<f64>::uniform();
    let pop = half_half::<f64>();
    let fp = MechanismSpec::new(FormatTag::DarkFirstPrice).build(&model, &pop)?;
    let sp = MechanismSpec::new(FormatTag::DarkSecondPrice).build(&model, &pop)?;
    let (mut bid_err, mut residual): (f64, f64) = (0.0, 0.0);
    for t in grid_lattice() {
        let b = dark_first_price_bid(&ContinuousModel::Uniform, &pop, 0.0, t).map_err(crate::mechanisms::MechanismError::from)?;
        bid_err = bid_err.max((b - t * t / (2.0 * (1.0 + t))).abs());
        let a = interim_quantities(&fp, &model, &pop, &t).map_err(rev_err)?;
        let c = interim_quantities(&sp, &model, &pop, &t).map_err(rev_err)?;
        residual = residual.max((a.t - c.t).abs());
    }
    Ok((
        bid_err <= 1e-8 && residual <= 1e-8,
        vals(&[("max_bid_error", bid_err), ("payment_residual", residual)]),
        format!("bid error {bid_err:.1e}, residual {residual:.1e}"),
    ))
}

fn tc_fp_monotone() -> Result<Scenario> {
    let model = k3();
    let grid = model.as_finite().expect("grid");
    let g = |n| tie_corrected_fp_payment(grid, n, 2).map_err(crate::mechanisms::MechanismError::from);
    let payments = (1..=20).map(g).collect::<std::result::Result<Vec<_>, _>>()?;
    let increasing = payments.windows(2).all(|w| w[0] < w[1]);
    let passed = payments[1] == q(5, 8) && payments[2] == q(17, 24) && increasing;
    Ok((
        passed,
        vals(&[("g2", payments[1].as_f64()), ("g3", payments[2].as_f64()), ("g20", payments[19].as_f64())]),
        format!("g2 = {}, g3 = {}, increasing {increasing}", payments[1], payments[2]),
    ))
}

fn tc_fp_binding() -> Result<Scenario> {
    let mut checks = 0usize;
    let mut violations = 0usize;
    for k in 2..=4usize {
        let values: Vec<Q> = (0..k).map(|i| q(i as i64, k as i64 - 1)).collect();
        for code in 0..3usize.pow(k as u32) {
            let raw: Vec<i64> = (0..k).map(|i| (code / 3usize.pow(i as u32) % 3 + 1) as i64).collect();
            let total: i64 = raw.iter().sum();
            let model = TypeModel::finite(values.clone(), raw.iter().map(|w| q(*w, total)).collect())?;
            let mut specs = vec![MechanismSpec::new(FormatTag::TieCorrectedFirstPrice)];
            if check_regular(&model).is_ok() {
                specs.push(MechanismSpec::new(FormatTag::TieCorrectedFirstPrice).optimal_reserve());
            }
            for n in 1..=4 {
                let pop = PopulationModel::fixed(n)?;
                for s in &specs {
                    let m = s.build(&model, &pop)?;
                    let iq = values
                        .iter()
                        .map(|v| interim_quantities(&m, &model, &pop, v))
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(rev_err)?;
                    for j in m.reserve_index().unwrap_or(0) + 1..k {
                        checks += 1;
                        let shaded = iq[j - 1].u.clone() + (values[j].clone() - values[j - 1].clone()) * iq[j - 1].q.clone();
                        if iq[j].u != shaded {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    Ok((
        violations == 0,
        vals(&[("checks", checks as f64), ("violations", violations as f64)]),
        format!("{checks} exact checks, {violations} violations"),
    ))
}

fn lit_fp_shill_gain() -> Result<Scenario> {
    let model = TypeModel::<f64>::uniform();
    let pop = PopulationModel::fixed(2)?;
    let fp = MechanismSpec::new(FormatTag::LitFirstPrice).build(&model, &pop)?;
    let closed = bidding_zero_test(&fp, &model, &pop, 1, &DeviationSpec::default()).map_err(id_err)?;
    let result = run_scenario(&bundled("lit-fp-shill-gain").expect("bundled"))?;
    let mc = &result.checks[0];
    let se = mc.se.unwrap_or(0.0);
    let target = 1.0 / 9.0;
    let passed = (closed.gain - target).abs() <= 1e-9 && (mc.gain - target).abs() <= 3.0 * se;
    Ok((
        passed,
        vals(&[("closed_form_gain", closed.gain), ("mc_gain", mc.gain), ("mc_se", se)]),
        format!("closed form {:.9}, MC {:.5} ± {se:.1e}", closed.gain, mc.gain),
    ))
}

fn bayes_seller_sp() -> Result<Scenario> {
    let model = TypeModel::<f64>::uniform();
    let pop = PopulationModel::fixed(1)?;
    let sp = MechanismSpec::new(FormatTag::LitSecondPrice).optimal_reserve().build(&model, &pop)?;
    let r = bayesian_seller_ic(&sp, &model, &pop, 2, &DeviationSpec::default().lattice(100)).map_err(id_err)?;
    Ok((r.gain <= 1e-9, vals(&[("gain", r.gain)]), format!("gain {:.1e}, {}", r.gain, r.verdict.as_str())))
}

fn expost_seller_witness() -> Result<Scenario> {
    let model = TypeModel::<f64>::uniform();
    let pop = PopulationModel::fixed(2)?;
    let spec = DeviationSpec::default().lattice(100);
    let mut gains = Vec::new();
    for f in [FormatTag::LitFirstPrice, FormatTag::LitSecondPrice] {
        let m = MechanismSpec::new(f).optimal_reserve().build(&model, &pop)?;
        gains.push(expost_seller_ic(&m, &model, &pop, 1, &spec).map_err(id_err)?.gain);
    }
    Ok((
        gains.iter().all(|g| *g >= 0.01),
        vals(&[("gain_lit_fp", gains[0]), ("gain_lit_sp", gains[1])]),
        format!("first price {:.4}, second price {:.4}", gains[0], gains[1]),
    ))
}

fn posted_price_auctioneer() -> Result<Scenario> {
    let grids = [
        k3(),
        TypeModel::finite(vec![q(0, 1), q(1, 2), q(1, 1)], vec![q(1, 2), q(1, 4), q(1, 4)])?,
        TypeModel::finite(vec![q(0, 1), q(2, 5), q(1, 1)], vec![q(1, 5), q(3, 5), q(1, 5)])?,
    ];
    let pops = [
        PopulationModel::fixed(1)?,
        PopulationModel::fixed(2)?,
        PopulationModel::fixed(3)?,
        PopulationModel::explicit(BTreeMap::from([(1, q(1, 3)), (2, q(1, 3)), (3, q(1, 3))]), None)?,
    ];
    let spec = DeviationSpec::default();
    let mut posted_max: f64 = 0.0;
    let mut auction_min = f64::INFINITY;
    for model in &grids {
        for pop in &pops {
            let grid = model.as_finite().expect("grid");
            let mut posted: Vec<Mechanism<Q>> = grid.grid().iter().map(|p| Mechanism::posted_price(p.clone())).collect();
            posted.push(MechanismSpec::new(FormatTag::PostedPrice).build(model, pop)?);
            for m in &posted {
                posted_max = posted_max.max(expost_auctioneer_ic(m, model, pop, 3, &spec).map_err(id_err)?.gain);
            }
            for f in [FormatTag::LitSecondPrice, FormatTag::LitFirstPrice] {
                for s in [MechanismSpec::new(f), MechanismSpec::new(f).optimal_reserve()] {
                    let m = s.build(model, pop)?;
                    auction_min = auction_min.min(expost_auctioneer_ic(&m, model, pop, 3, &spec).map_err(id_err)?.gain);
                }
            }
        }
    }
    Ok((
        posted_max == 0.0 && auction_min > 0.0,
        vals(&[("posted_max_gain", posted_max), ("auction_min_gain", auction_min)]),
        format!("posted price max gain {posted_max}, smallest auction gain {auction_min:.4}"),
    ))
}

fn dark_fp_optimal() -> Result<Scenario> {
    let model = k3();
    let pop = half_half::<Q>();
    let dark = MechanismSpec::new(FormatTag::DarkFirstPrice).optimal_reserve().build(&model, &pop)?;
    let finite = expost_auctioneer_ic(&dark, &model, &pop, 3, &DeviationSpec::default()).map_err(id_err)?;
    let cont = TypeModel::<f64>::uniform();
    let popf = half_half::<f64>();
    let dark_c = MechanismSpec::new(FormatTag::DarkFirstPrice).optimal_reserve().build(&cont, &popf)?;
    let auct = expost_auctioneer_ic(&dark_c, &cont, &popf, 2, &DeviationSpec::default().lattice(50).cells(100))
        .map_err(id_err)?;
    let buyer = bayesian_buyer_ic(&dark_c, &cont, &popf, 3, &DeviationSpec::default().lattice(100)).map_err(id_err)?;
    Ok((
        finite.gain <= 1e-9 && auct.gain <= 1e-9 && buyer.gain <= 1e-6,
        vals(&[("auctioneer_gain_k3", finite.gain), ("auctioneer_gain_continuous", auct.gain), ("buyer_gain", buyer.gain)]),
        format!("auctioneer {} / {:.1e}, buyer {:.1e}", finite.gain, auct.gain, buyer.gain),
    ))
}

fn expost_buyer_sp() -> Result<Scenario> {
    let model = k3();
    let grid = model.as_finite().expect("grid");
    let pop = PopulationModel::fixed(2)?;
    let spec = DeviationSpec::default();
    let sp = MechanismSpec::new(FormatTag::LitSecondPrice).build(&model, &pop)?;
    let sp_r = expost_buyer_ic(&sp, &model, &pop, 3, &spec).map_err(id_err)?;
    let tc = MechanismSpec::new(FormatTag::TieCorrectedSecondPrice).optimal_reserve().build(&model, &pop)?;
    let tc_r = expost_buyer_ic(&tc, &model, &pop, 3, &spec).map_err(id_err)?;
    let sp_rev = exact_revenue(&sp, grid, &pop, u64::MAX).map_err(rev_err)?;
    let support = Support::from_grid(grid);
    let mut best_other = q(0, 1);
    for f in FormatTag::ALL {
        if f == FormatTag::Partitional {
            continue;
        }
        for rule in [None, Some(TieRule::TieCorrected)] {
            let s = match rule {
                Some(r) => MechanismSpec::new(f).tie_rule(r),
                None => MechanismSpec::new(f),
            };
            let Ok(m) = s.build(&model, &pop) else { continue };
            if is_efficient(&m, &support, &[2]).map_err(id_err)? && expost_buyer_ic(&m, &model, &pop, 3, &spec).map_err(id_err)?.passes() {
                let r = exact_revenue(&m, grid, &pop, u64::MAX).map_err(rev_err)?;
                if r > best_other {
                    best_other = r;
                }
            }
        }
    }
    let passed = sp_r.gain == 0.0
        && tc_r.verdict == Verdict::Violated
        && tc_r.witness.gain == 0.125
        && tc_r.witness.profile == Some(vec![1.0, 0.5])
        && best_other <= sp_rev;
    Ok((
        passed,
        vals(&[
            ("sp_gain", sp_r.gain),
            ("tc_witness_gain", tc_r.witness.gain),
            ("tc_gain", tc_r.gain),
            ("sp_revenue", sp_rev.as_f64()),
        ]),
        format!("tie-corrected witness {} at {:?}, second-price revenue {sp_rev}", tc_r.witness.gain, tc_r.witness.profile),
    ))
}

fn revenue_equivalence() -> Result<Scenario> {
    let result = run_scenario(&bundled("revenue-equivalence-uniform").expect("bundled"))?;
    let mc_ok = result.comparisons.iter().all(|c| c.agree);
    let model = k3();
    let grid = model.as_finite().expect("grid");
    let pop = half_half::<Q>();
    let exact = [
        MechanismSpec::new(FormatTag::TieCorrectedSecondPrice).optimal_reserve(),
        MechanismSpec::new(FormatTag::TieCorrectedFirstPrice).optimal_reserve(),
        MechanismSpec::new(FormatTag::DarkFirstPrice).optimal_reserve().tie_rule(TieRule::TieCorrected),
    ]
    .iter()
    .map(|s| exact_revenue(&s.build(&model, &pop)?, grid, &pop, u64::MAX).map_err(rev_err))
    .collect::<Result<Vec<Q>>>()?;
    let exact_ok = exact.iter().all(|r| *r == exact[0]);
    let mut values: Vec<(String, f64)> = Vec::new();
    for (key, r) in ["mc_lit_sp", "mc_lit_fp", "mc_dark_fp"].iter().zip(&result.revenues) {
        values.push((key.to_string(), r.estimate.value));
        values.push((format!("{key}_se"), r.estimate.se));
    }
    values.push(("exact_k3".into(), exact[0].as_f64()));
    Ok((
        mc_ok && exact_ok,
        values,
        format!(
            "MC {:.5} / {:.5} / {:.5}; exact K=3 {}",
            result.revenues[0].estimate.value, result.revenues[1].estimate.value, result.revenues[2].estimate.value, exact[0]
        ),
    ))
}

fn dark_revenue_formula_check() -> Result<Scenario> {
    let model = k3();
    let grid = model.as_finite().expect("grid");
    let pops = [PopulationModel::fixed(2)?, PopulationModel::fixed(3)?, half_half::<Q>()];
    let mut checked = 0usize;
    let mut mismatched = BTreeSet::new();
    let mut worst = q(0, 1);
    for pop in &pops {
        for f in FormatTag::ALL {
            if f == FormatTag::Partitional {
                continue;
            }
            for s in [MechanismSpec::new(f), MechanismSpec::new(f).optimal_reserve()] {
                let Ok(m) = s.build(&model, pop) else { continue };
                let formula = dark_revenue_formula(&m, &model, pop, &q(0, 1)).map_err(rev_err)?;
                let enumerated = exact_revenue(&m, grid, pop, u64::MAX).map_err(rev_err)?;
                checked += 1;
                let diff = num_traits::Signed::abs(&(formula - enumerated));
                if diff > q(0, 1) {
                    mismatched.insert(f.to_string());
                }
                if diff > worst {
                    worst = diff;
                }
            }
        }
    }
    Ok((
        mismatched.is_empty(),
        vals(&[("pairs", checked as f64), ("max_abs_difference", worst.as_f64())]),
        format!("{checked} pairs; formats with mismatches {mismatched:?}; largest gap {worst}"),
    ))
}

fn partitional_equivalence() -> Result<Scenario> {
    let model = k3();
    let pop = PopulationModel::explicit(BTreeMap::from([(1, q(1, 4)), (2, q(1, 4)), (3, q(1, 4)), (4, q(1, 4))]), None)?;
    let support = Support::from_grid(model.as_finite().expect("grid"));
    let partitions: [&[&[usize]]; 4] = [&[&[1], &[2, 3, 4]], &[&[1, 2], &[3, 4]], &[&[1], &[2], &[3], &[4]], &[&[1, 2, 3, 4]]];
    let inner = [
        MechanismSpec::new(FormatTag::DarkFirstPrice),
        MechanismSpec::new(FormatTag::LitSecondPrice).optimal_reserve(),
        MechanismSpec::new(FormatTag::TieCorrectedFirstPrice),
    ];
    let (mut profiles, mut mismatches) = (0usize, 0usize);
    for parts in partitions {
        for spec in &inner {
            let signals = parts
                .iter()
                .map(|p| (format!("{p:?}"), p.iter().copied().collect::<BTreeSet<_>>(), spec.clone()))
                .collect();
            let policy = DisclosurePolicy::build(signals, &model, &pop)?;
            let dark = induce_dark(&policy)?;
            for n in 1..=4 {
                let own = &policy.signal_for(n).expect("covered").mechanism;
                for m in multisets(support.len(), n) {
                    let reports = support.profile(&m);
                    profiles += 1;
                    if dark.outcome(&reports)? != own.outcome(&reports)? {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    Ok((
        mismatches == 0,
        vals(&[("profiles", profiles as f64), ("mismatches", mismatches as f64)]),
        format!("{profiles} profiles, {mismatches} mismatches"),
    ))
}

fn posted_price_buyer_gain() -> Result<Scenario> {
    let model = TypeModel::<f64>::uniform();
    let pop = PopulationModel::fixed(2)?;
    let r = bayesian_buyer_ic(&Mechanism::posted_price(0.5), &model, &pop, 2, &DeviationSpec::default().lattice(100))
        .map_err(id_err)?;
    let gain = r.gain_at(0.9).unwrap_or(f64::NAN);
    Ok(((gain - 0.0333).abs() <= 1e-4, vals(&[("gain_at_0.9", gain)]), format!("gain at 0.9 = {gain:.6}")))
}

fn optimal_posted_prices() -> Result<Scenario> {
    let model = TypeModel::<f64>::uniform();
    let one = optimal_posted_price(&model, &PopulationModel::fixed(1)?)?;
    let two = optimal_posted_price(&model, &PopulationModel::fixed(2)?)?;
    let s3 = 3f64.sqrt();
    let passed = (one.0 - 0.5).abs() <= 1e-6
        && (one.1 - 0.25).abs() <= 1e-6
        && (two.0 - 1.0 / s3).abs() <= 1e-6
        && (two.1 - 2.0 / (3.0 * s3)).abs() <= 1e-6;
    Ok((
        passed,
        vals(&[("price_1", one.0), ("revenue_1", one.1), ("price_2", two.0), ("revenue_2", two.1)]),
        format!("({:.6}, {:.6}) and ({:.6}, {:.6})", one.0, one.1, two.0, two.1),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(format_sig(0.0), "0");
        assert!(same("3.33333333333e-1", 1.0 / 3.0));
        assert!(!same("3.33333333334e-1", 1.0 / 3.0 + 1e-10));
    }

    #[test]
    fn only_filter_runs_one_scenario() {
        let s = reproduce(&["tc-fp-monotone".to_string()], None, false).unwrap();
        assert_eq!(s.outcomes.len(), 1);
        assert!(s.outcomes[0].passed);
        assert!(reproduce(&["no-such-scenario".to_string()], None, false).is_err());
    }

    #[test]
    fn corrupted_golden_yields_a_diff_report() {
        let only = ["tc-fp-monotone".to_string()];
        let good = reproduce(&only, None, false).unwrap();
        let corrupted = golden_csv(&good.outcomes).replace("6.25000000000e-1", "6.26000000000e-1");
        let bad = reproduce(&only, Some(&corrupted), false).unwrap();
        assert!(!bad.passed());
        assert_eq!(bad.diffs.len(), 1);
        assert_eq!(bad.diffs[0].quantity, "g2");
        assert!(bad.matrix().contains("golden differences"));
    }
}
