//! Identity-compatibility checks.
//!
//! Each check builds the deviation space of one notion (shills for the
//! seller, extra identities for a buyer, shills plus tie steering for the
//! auctioneer) and searches it exhaustively. Grids are searched exactly;
//! continuous models use a strategy lattice, so their passes are qualified.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::defaults::{
    ENUMERATION_BUDGET, EXACT_EPSILON, MAX_IDENTITIES, MC_EPSILON_SE, MIDPOINTS_PER_STEP, STRATEGY_LATTICE_STEPS,
};
use crate::distributions::{PopulationModel, TypeModel};
use crate::enumerate::{multiset_count, multisets, weighted_profiles, Support};
use crate::mechanisms::{Mechanism, MechanismError};
use crate::revenue::{buyer_revenue, interim_outcome, monte_carlo, sample_profile, RevenueError};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentityError {
    #[error("deviation search needs {needed} evaluations, budget is {budget}")]
    Budget { needed: u64, budget: u64 },
    #[error("invalid deviation space: {0}")]
    Invalid(String),
    #[error(transparent)]
    Revenue(#[from] RevenueError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

type Result<T> = std::result::Result<T, IdentityError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Notion {
    BiddingZero,
    BayesSeller,
    ExpostSeller,
    ExpostAuctioneer,
    BayesBuyer,
    ExpostBuyer,
    /// Single-identity misreports, profile by profile.
    Misreport,
}

impl Notion {
    pub const CHECKS: [Notion; 6] = [
        Notion::BiddingZero,
        Notion::BayesSeller,
        Notion::ExpostSeller,
        Notion::ExpostAuctioneer,
        Notion::BayesBuyer,
        Notion::ExpostBuyer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Notion::BiddingZero => "bidding-zero",
            Notion::BayesSeller => "bayes-seller",
            Notion::ExpostSeller => "expost-seller",
            Notion::ExpostAuctioneer => "expost-auctioneer",
            Notion::BayesBuyer => "bayes-buyer",
            Notion::ExpostBuyer => "expost-buyer",
            Notion::Misreport => "misreport",
        }
    }
}

impl fmt::Display for Notion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Notion {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self> {
        Notion::CHECKS
            .into_iter()
            .chain([Notion::Misreport])
            .find(|n| n.as_str() == s)
            .ok_or_else(|| IdentityError::Invalid(format!("unknown notion '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Compatible,
    Violated,
    /// No profitable deviation on the lattice searched.
    Qualified,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Compatible => "compatible",
            Verdict::Violated => "violated",
            Verdict::Qualified => "compatible (grid-certified only)",
        }
    }
}

/// Size of a deviation search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationSpec {
    /// Cap on shills, or on the identities a buyer controls.
    pub max_identities: usize,
    /// Strategy lattice `{0, 1/L, ..., 1}` used for continuous models.
    pub lattice_steps: usize,
    /// Midpoint cells standing in for continuous types in ex-post checks.
    pub cells: usize,
    pub budget: u64,
}

impl Default for DeviationSpec {
    fn default() -> Self {
        Self {
            max_identities: MAX_IDENTITIES,
            lattice_steps: STRATEGY_LATTICE_STEPS,
            cells: STRATEGY_LATTICE_STEPS * MIDPOINTS_PER_STEP,
            budget: ENUMERATION_BUDGET,
        }
    }
}

impl DeviationSpec {
    pub fn identities(mut self, max: usize) -> Self {
        self.max_identities = max;
        self
    }

    pub fn lattice(mut self, steps: usize) -> Self {
        self.lattice_steps = steps;
        self
    }

    pub fn cells(mut self, cells: usize) -> Self {
        self.cells = cells;
        self
    }

    pub fn budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }
}

/// Reports chosen for one group of indistinguishable buyer counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReports {
    pub counts: Vec<usize>,
    pub reports: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub identities: usize,
    pub reports: Vec<GroupReports>,
    pub deviator_type: Option<f64>,
    /// Buyer profile of an ex-post witness.
    pub profile: Option<Vec<f64>>,
    /// Gain at the witness: per type for buyer checks, per profile for
    /// ex-post checks.
    pub gain: f64,
}

impl Witness {
    fn null() -> Self {
        Self { identities: 0, reports: Vec::new(), deviator_type: None, profile: None, gain: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeGain {
    pub theta: f64,
    pub equilibrium: f64,
    pub best: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub notion: Notion,
    pub mechanism: String,
    pub equilibrium: f64,
    pub best: f64,
    pub gain: f64,
    pub gain_exact: Option<String>,
    pub se: Option<f64>,
    pub epsilon: f64,
    pub verdict: Verdict,
    pub witness: Witness,
    pub per_type: Vec<TypeGain>,
    /// Profiles where no buyer can win under any deviation.
    pub infeasible_profiles: u64,
    pub evaluations: u64,
    pub search_space: String,
}

impl DeviationReport {
    pub fn passes(&self) -> bool {
        self.verdict != Verdict::Violated
    }

    pub fn gain_at(&self, theta: f64) -> Option<f64> {
        self.per_type.iter().find(|g| (g.theta - theta).abs() < 1e-12).map(|g| g.gain)
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: gain {:.6e} ({})",
            self.notion,
            self.mechanism,
            self.gain,
            self.verdict.as_str()
        )
    }
}

struct Draft<T> {
    equilibrium: T,
    best: T,
    witness: Witness,
    per_type: Vec<TypeGain>,
    infeasible: u64,
    evaluations: u64,
}

fn finish<T: Scalar>(
    notion: Notion,
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    spec: &DeviationSpec,
    draft: Draft<T>,
    space: String,
) -> DeviationReport {
    let gain = draft.best.clone() - draft.equilibrium.clone();
    let continuous = !model.is_finite();
    let gain_f = gain.as_f64();
    let verdict = if gain_f > EXACT_EPSILON {
        Verdict::Violated
    } else if continuous {
        Verdict::Qualified
    } else {
        Verdict::Compatible
    };
    let lattice = if continuous {
        format!("; strategy lattice 1/{}", spec.lattice_steps)
    } else {
        "; full grid".to_string()
    };
    DeviationReport {
        notion,
        mechanism: mech.label().to_string(),
        equilibrium: draft.equilibrium.as_f64(),
        best: draft.best.as_f64(),
        gain: gain_f,
        gain_exact: T::EXACT.then(|| gain.to_string()),
        se: None,
        epsilon: EXACT_EPSILON,
        verdict,
        witness: draft.witness,
        per_type: draft.per_type,
        infeasible_profiles: draft.infeasible,
        evaluations: draft.evaluations,
        search_space: format!("{space}{lattice}"),
    }
}

fn check_budget(needed: u64, spec: &DeviationSpec) -> Result<()> {
    if needed > spec.budget {
        Err(IdentityError::Budget { needed, budget: spec.budget })
    } else {
        Ok(())
    }
}

/// Reports available to a deviator: the grid, or the strategy lattice.
pub fn strategy_points<T: Scalar>(model: &TypeModel<T>, spec: &DeviationSpec) -> Vec<T> {
    match model {
        TypeModel::Finite(g) => g.grid().to_vec(),
        TypeModel::Continuous(_) => {
            let l = spec.lattice_steps.max(1) as i64;
            (0..=l).map(|k| T::ratio(k, l)).collect()
        }
    }
}

/// Types over which ex-post checks take expectations.
pub fn outcome_support<T: Scalar>(model: &TypeModel<T>, spec: &DeviationSpec) -> Support<T> {
    match model {
        TypeModel::Finite(g) => Support::from_grid(g),
        TypeModel::Continuous(c) => Support::midpoints(spec.cells.max(1), |x| c.cdf(x)),
    }
}

fn to_f64<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

fn report_sets<T: Scalar>(points: &[T], sizes: std::ops::RangeInclusive<usize>) -> Vec<(usize, Vec<T>)> {
    sizes.flat_map(|c| multisets(points.len(), c).map(move |m| (c, m))).map(|(c, m)| (c, m.iter().map(|&k| points[k].clone()).collect())).collect()
}

fn interim_cost<T: Scalar>(model: &TypeModel<T>, others: usize) -> u64 {
    match model {
        TypeModel::Finite(g) => multiset_count(g.len(), others),
        TypeModel::Continuous(_) => 1,
    }
}

fn all_counts<T: Scalar>(pop: &PopulationModel<T>) -> Vec<usize> {
    pop.designer_support().map(|(n, _)| n).collect()
}

fn participant_counts<T: Scalar>(pop: &PopulationModel<T>) -> Vec<usize> {
    pop.participant_support().map(|(n, _)| n).collect()
}

/// Does adding zero-valued shills raise expected revenue?
pub fn bidding_zero_test<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    max_shills: usize,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    let counts = all_counts(pop);
    let evaluations = (max_shills as u64 + 1) * counts.iter().map(|n| interim_cost(model, *n)).sum::<u64>();
    check_budget(evaluations, spec)?;
    let values = (0..=max_shills)
        .into_par_iter()
        .map(|s| {
            let zeros = vec![T::zero(); s];
            pop.designer_support().try_fold(T::zero(), |acc, (n, pi)| {
                Ok::<T, IdentityError>(acc + pi.clone() * buyer_revenue(mech, model, n, &zeros)?)
            })
        })
        .collect::<Result<Vec<T>>>()?;
    let mut best = 0;
    for s in 1..values.len() {
        if values[s] > values[best] {
            best = s;
        }
    }
    let gain = values[best].clone() - values[0].clone();
    let witness = Witness {
        identities: best,
        reports: vec![GroupReports { counts: counts.clone(), reports: vec![0.0; best] }],
        deviator_type: None,
        profile: None,
        gain: gain.as_f64(),
    };
    let draft = Draft {
        equilibrium: values[0].clone(),
        best: values[best].clone(),
        witness,
        per_type: Vec::new(),
        infeasible: 0,
        evaluations,
    };
    Ok(finish(Notion::BiddingZero, mech, model, spec, draft, format!("|S| <= {max_shills}, all shills report 0")))
}

/// Sampling version of [`bidding_zero_test`] on common draws; the verdict
/// threshold is three standard errors of the paired difference.
pub fn bidding_zero_mc(
    mech: &Mechanism<f64>,
    model: &TypeModel<f64>,
    pop: &PopulationModel<f64>,
    max_shills: usize,
    samples: u64,
    seed: u64,
) -> Result<DeviationReport> {
    if samples == 0 {
        return Err(RevenueError::NoSamples.into());
    }
    let stats = monte_carlo(samples, seed, max_shills + 1, |rng| {
        let mut profile = sample_profile(model, pop, rng);
        let n = profile.len();
        let base = mech.outcome(&profile)?.totals(0..n).1;
        let mut out = vec![base];
        for _ in 0..max_shills {
            profile.push(0.0);
            out.push(mech.outcome(&profile)?.totals(0..n).1 - base);
        }
        Ok::<_, IdentityError>(out)
    })?;
    let mut best = 0;
    for s in 1..=max_shills {
        if best == 0 || stats[s].0 > stats[best].0 {
            best = s;
        }
    }
    let (gain, se) = if best == 0 { (0.0, 0.0) } else { stats[best] };
    let epsilon = MC_EPSILON_SE * se;
    let verdict = if gain > epsilon { Verdict::Violated } else { Verdict::Compatible };
    Ok(DeviationReport {
        notion: Notion::BiddingZero,
        mechanism: mech.label().to_string(),
        equilibrium: stats[0].0,
        best: stats[0].0 + gain,
        gain,
        gain_exact: None,
        se: Some(se),
        epsilon,
        verdict,
        witness: Witness {
            identities: best,
            reports: vec![GroupReports { counts: all_counts(pop), reports: vec![0.0; best] }],
            deviator_type: None,
            profile: None,
            gain,
        },
        per_type: Vec::new(),
        infeasible_profiles: 0,
        evaluations: samples * (max_shills as u64 + 1),
        search_space: format!("|S| <= {max_shills}, all shills report 0; {samples} samples, seed {seed}"),
    })
}

/// The seller commits to a number of shills before learning the buyer
/// count; shill reports may depend on whatever the buyers learn about it.
pub fn bayesian_seller_ic<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    max_shills: usize,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    let counts = all_counts(pop);
    let priors: Vec<T> = pop.designer_support().map(|(_, p)| p.clone()).collect();
    let points = strategy_points(model, spec);
    let sets = report_sets(&points, 0..=max_shills);
    let per_set: u64 = counts.iter().map(|n| interim_cost(model, *n)).sum();
    let evaluations = sets.len() as u64 * per_set;
    check_budget(evaluations, spec)?;
    let table = sets
        .par_iter()
        .map(|(_, v)| {
            counts
                .iter()
                .zip(&priors)
                .map(|(n, p)| Ok(p.clone() * buyer_revenue(mech, model, *n, v)?))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let groups = mech.information_groups(&counts);
    let index = |n: usize| counts.iter().position(|m| *m == n).unwrap();
    let equilibrium = table[0].iter().fold(T::zero(), |a, x| a + x.clone());
    let mut best = equilibrium.clone();
    let mut witness = Witness::null();
    for s in 1..=max_shills {
        let mut total = T::zero();
        let mut chosen = Vec::new();
        for g in &groups {
            let mut top: Option<(T, usize)> = None;
            for (i, (size, _)) in sets.iter().enumerate() {
                if *size != s {
                    continue;
                }
                let value = g.iter().fold(T::zero(), |a, n| a + table[i][index(*n)].clone());
                if top.as_ref().is_none_or(|(b, _)| value > *b) {
                    top = Some((value, i));
                }
            }
            let (value, i) = top.expect("lattice is nonempty");
            total = total + value;
            chosen.push(GroupReports { counts: g.clone(), reports: to_f64(&sets[i].1) });
        }
        if total > best {
            witness = Witness {
                identities: s,
                reports: chosen,
                deviator_type: None,
                profile: None,
                gain: (total.clone() - equilibrium.clone()).as_f64(),
            };
            best = total;
        }
    }
    let draft = Draft { equilibrium, best, witness, per_type: Vec::new(), infeasible: 0, evaluations };
    Ok(finish(Notion::BayesSeller, mech, model, spec, draft, format!("|S| <= {max_shills}")))
}

/// Weighted buyer profiles `(n, multiset, π_n · Pr[multiset])`.
fn buyer_profiles<T: Scalar>(pop: &PopulationModel<T>, support: &Support<T>) -> Vec<(usize, Vec<T>, T)> {
    pop.designer_support()
        .filter(|(n, _)| *n > 0)
        .flat_map(|(n, pi)| {
            weighted_profiles(support, n).into_iter().map(move |(m, w)| (n, support.profile(&m), pi.clone() * w))
        })
        .collect()
}

fn profile_cost<T: Scalar>(pop: &PopulationModel<T>, support: &Support<T>, offset: isize) -> u64 {
    pop.designer_support()
        .filter(|(n, _)| *n > 0)
        .map(|(n, _)| multiset_count(support.len(), (n as isize + offset) as usize))
        .sum()
}

/// The seller commits to a number of shills, then picks their reports
/// knowing the buyers' types.
pub fn expost_seller_ic<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    max_shills: usize,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    let support = outcome_support(model, spec);
    let points = strategy_points(model, spec);
    let sets = report_sets(&points, 0..=max_shills);
    let evaluations = profile_cost(pop, &support, 0) * sets.len() as u64;
    check_budget(evaluations, spec)?;
    let profiles = buyer_profiles(pop, &support);
    let rows = profiles
        .par_iter()
        .map(|(n, buyers, _)| {
            let mut best: Vec<Option<(T, usize)>> = vec![None; max_shills + 1];
            let mut reports = buyers.clone();
            for (i, (s, v)) in sets.iter().enumerate() {
                reports.truncate(*n);
                reports.extend(v.iter().cloned());
                let paid = mech.outcome(&reports)?.totals(0..*n).1;
                if best[*s].as_ref().is_none_or(|(b, _)| paid > *b) {
                    best[*s] = Some((paid, i));
                }
            }
            Ok(best.into_iter().map(|b| b.expect("every size has a report set")).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let value = |s: usize| {
        profiles.iter().zip(&rows).fold(T::zero(), |a, ((_, _, w), row)| a + w.clone() * row[s].0.clone())
    };
    let equilibrium = value(0);
    let mut best_s = 0;
    let mut best = equilibrium.clone();
    for s in 1..=max_shills {
        let v = value(s);
        if v > best {
            best = v;
            best_s = s;
        }
    }
    let mut witness = Witness::null();
    if best_s > 0 {
        let mut top: Option<(T, usize)> = None;
        for (j, row) in rows.iter().enumerate() {
            let lift = row[best_s].0.clone() - row[0].0.clone();
            if top.as_ref().is_none_or(|(b, _)| lift > *b) {
                top = Some((lift, j));
            }
        }
        let (lift, j) = top.expect("profiles are nonempty");
        witness = Witness {
            identities: best_s,
            reports: vec![GroupReports {
                counts: vec![profiles[j].0],
                reports: to_f64(&sets[rows[j][best_s].1].1),
            }],
            deviator_type: None,
            profile: Some(to_f64(&profiles[j].1)),
            gain: lift.as_f64(),
        };
    }
    let draft = Draft { equilibrium, best, witness, per_type: Vec::new(), infeasible: 0, evaluations };
    Ok(finish(Notion::ExpostSeller, mech, model, spec, draft, format!("|S| <= {max_shills}, sup per buyer profile")))
}

/// Largest payment per unit of winning probability the seller and the
/// auctioneer can extract from some buyer, profile by profile.
pub fn expost_auctioneer_ic<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    max_shills: usize,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    let support = outcome_support(model, spec);
    let points = strategy_points(model, spec);
    let sets = report_sets(&points, 0..=max_shills);
    let evaluations = profile_cost(pop, &support, 0) * sets.len() as u64;
    check_budget(evaluations, spec)?;
    let profiles = buyer_profiles(pop, &support);
    let rows = profiles
        .par_iter()
        .map(|(n, buyers, _)| {
            let equilibrium = mech.outcome(buyers)?.totals(0..*n).1;
            let mut best: Option<(T, usize)> = None;
            let mut reports = buyers.clone();
            for (i, (_, v)) in sets.iter().enumerate() {
                reports.truncate(*n);
                reports.extend(v.iter().cloned());
                let out = mech.outcome(&reports)?;
                for b in 0..*n {
                    if out.q[b] > T::zero() {
                        let per_unit = out.t[b].clone() / out.q[b].clone();
                        if best.as_ref().is_none_or(|(x, _)| per_unit > *x) {
                            best = Some((per_unit, i));
                        }
                    }
                }
            }
            Ok((equilibrium, best))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut equilibrium = T::zero();
    let mut total = T::zero();
    let mut infeasible = 0;
    let mut top: Option<(T, usize)> = None;
    for (j, ((_, _, w), (eq, best))) in profiles.iter().zip(&rows).enumerate() {
        equilibrium = equilibrium + w.clone() * eq.clone();
        let sup = match best {
            Some((x, _)) => x.clone(),
            None => {
                infeasible += 1;
                eq.clone()
            }
        };
        let lift = sup.clone() - eq.clone();
        if best.is_some() && top.as_ref().is_none_or(|(b, _)| lift > *b) {
            top = Some((lift, j));
        }
        total = total + w.clone() * sup;
    }
    let witness = match top {
        Some((lift, j)) if lift > T::zero() => {
            let i = rows[j].1.as_ref().unwrap().1;
            Witness {
                identities: sets[i].0,
                reports: vec![GroupReports { counts: vec![profiles[j].0], reports: to_f64(&sets[i].1) }],
                deviator_type: None,
                profile: Some(to_f64(&profiles[j].1)),
                gain: lift.as_f64(),
            }
        }
        _ => Witness::null(),
    };
    let draft = Draft { equilibrium, best: total, witness, per_type: Vec::new(), infeasible, evaluations };
    Ok(finish(
        Notion::ExpostAuctioneer,
        mech,
        model,
        spec,
        draft,
        format!("|S| <= {max_shills}, sup of t_i/q_i over winning buyers per profile"),
    ))
}

/// A buyer commits to a number of identities; the reports of those
/// identities may depend on what the buyer learns about the buyer count.
pub fn bayesian_buyer_ic<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    max_identities: usize,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    if max_identities == 0 {
        return Err(IdentityError::Invalid("a buyer controls at least one identity".into()));
    }
    let counts = participant_counts(pop);
    let priors: Vec<T> = pop.participant_support().map(|(_, p)| p.clone()).collect();
    let points = strategy_points(model, spec);
    let sets = report_sets(&points, 1..=max_identities);
    let per_set: u64 = counts.iter().map(|n| interim_cost(model, n - 1)).sum();
    let evaluations = sets.len() as u64 * per_set;
    check_budget(evaluations, spec)?;
    let table = sets
        .par_iter()
        .map(|(_, r)| {
            counts
                .iter()
                .zip(&priors)
                .map(|(n, p)| {
                    let (q, t) = interim_outcome(mech, model, n - 1, r, &[])?;
                    Ok((p.clone() * q, p.clone() * t))
                })
                .collect::<Result<Vec<(T, T)>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let groups: Vec<Vec<usize>> = mech
        .information_groups(&counts)
        .into_iter()
        .map(|g| g.iter().map(|n| counts.iter().position(|m| m == n).unwrap()).collect())
        .collect();
    let per_type = points
        .par_iter()
        .enumerate()
        .map(|(k, theta)| {
            let utility = |i: usize, members: &[usize]| {
                members.iter().fold(T::zero(), |a, j| {
                    let (q, t) = &table[i][*j];
                    a + theta.clone() * q.clone() - t.clone()
                })
            };
            let everyone: Vec<usize> = (0..counts.len()).collect();
            let equilibrium = utility(k, &everyone);
            let mut best = equilibrium.clone();
            let mut choice: Option<(usize, Vec<usize>)> = None;
            for c in 1..=max_identities {
                let mut total = T::zero();
                let mut picks = Vec::new();
                for g in &groups {
                    let mut top: Option<(T, usize)> = None;
                    for (i, (size, _)) in sets.iter().enumerate() {
                        if *size == c {
                            let u = utility(i, g);
                            if top.as_ref().is_none_or(|(b, _)| u > *b) {
                                top = Some((u, i));
                            }
                        }
                    }
                    let (u, i) = top.expect("lattice is nonempty");
                    total = total + u;
                    picks.push(i);
                }
                if total > best {
                    best = total;
                    choice = Some((c, picks));
                }
            }
            (theta.clone(), equilibrium, best, choice)
        })
        .collect::<Vec<_>>();
    let mut worst = 0;
    for (k, (_, eq, best, _)) in per_type.iter().enumerate() {
        let (_, eq0, best0, _) = &per_type[worst];
        if best.clone() - eq.clone() > best0.clone() - eq0.clone() {
            worst = k;
        }
    }
    let (theta, equilibrium, best, choice) = per_type[worst].clone();
    let witness = match choice {
        Some((c, picks)) => Witness {
            identities: c,
            reports: groups
                .iter()
                .zip(&picks)
                .map(|(g, i)| GroupReports {
                    counts: g.iter().map(|j| counts[*j]).collect(),
                    reports: to_f64(&sets[*i].1),
                })
                .collect(),
            deviator_type: Some(theta.as_f64()),
            profile: None,
            gain: (best.clone() - equilibrium.clone()).as_f64(),
        },
        None => Witness::null(),
    };
    let per_type = per_type
        .into_iter()
        .map(|(theta, eq, best, _)| TypeGain {
            theta: theta.as_f64(),
            equilibrium: eq.as_f64(),
            best: best.as_f64(),
            gain: (best - eq).as_f64(),
        })
        .collect();
    let draft = Draft { equilibrium, best, witness, per_type, infeasible: 0, evaluations };
    Ok(finish(Notion::BayesBuyer, mech, model, spec, draft, format!("|N_i| <= {max_identities}")))
}

struct BuyerAccumulator<T> {
    equilibrium: Vec<T>,
    by_count: Vec<Vec<T>>,
    witness: Option<(T, usize, usize, usize, usize)>,
}

/// Per-profile search over a buyer's identities: the count is committed,
/// reports are chosen knowing everyone's type. With `max_identities = 1`
/// and `misreport = true` this is the direct strategy-proofness check.
fn expost_buyer_search<T: Scalar>(
    notion: Notion,
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    max_identities: usize,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    if max_identities == 0 {
        return Err(IdentityError::Invalid("a buyer controls at least one identity".into()));
    }
    let support = outcome_support(model, spec);
    let points = strategy_points(model, spec);
    let sets = report_sets(&points, 1..=max_identities);
    let evaluations = pop
        .participant_support()
        .map(|(n, _)| multiset_count(support.len(), n - 1))
        .sum::<u64>()
        * sets.len() as u64;
    check_budget(evaluations, spec)?;
    let supp = &support;
    let opponents: Vec<(usize, Vec<T>, T)> = pop
        .participant_support()
        .flat_map(|(n, p)| {
            weighted_profiles(supp, n - 1).into_iter().map(move |(m, w)| (n, supp.profile(&m), p.clone() * w))
        })
        .collect();
    let blocks = opponents
        .par_iter()
        .enumerate()
        .map(|(j, (_, others, w))| {
            let outcomes = sets
                .iter()
                .map(|(_, r)| {
                    let mut reports = r.clone();
                    reports.extend(others.iter().cloned());
                    Ok(mech.outcome(&reports)?.totals(0..r.len()))
                })
                .collect::<Result<Vec<(T, T)>>>()?;
            let mut acc = BuyerAccumulator {
                equilibrium: Vec::with_capacity(points.len()),
                by_count: vec![Vec::with_capacity(points.len()); max_identities],
                witness: None,
            };
            for (k, theta) in points.iter().enumerate() {
                let u = |i: usize| theta.clone() * outcomes[i].0.clone() - outcomes[i].1.clone();
                // Size-one report sets come first, in grid order.
                let eq = u(k);
                acc.equilibrium.push(w.clone() * eq.clone());
                for c in 1..=max_identities {
                    let mut top: Option<(T, usize)> = None;
                    for (i, (size, _)) in sets.iter().enumerate() {
                        if *size == c {
                            let v = u(i);
                            if top.as_ref().is_none_or(|(b, _)| v > *b) {
                                top = Some((v, i));
                            }
                        }
                    }
                    let (v, i) = top.expect("lattice is nonempty");
                    let lift = v.clone() - eq.clone();
                    if acc.witness.as_ref().is_none_or(|(b, ..)| lift > *b) {
                        acc.witness = Some((lift, j, k, c, i));
                    }
                    acc.by_count[c - 1].push(w.clone() * v);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_type = Vec::with_capacity(points.len());
    let mut worst: Option<(T, T, T)> = None;
    for (k, theta) in points.iter().enumerate() {
        let eq = blocks.iter().fold(T::zero(), |a, b| a + b.equilibrium[k].clone());
        let mut best = eq.clone();
        for c in 0..max_identities {
            let v = blocks.iter().fold(T::zero(), |a, b| a + b.by_count[c][k].clone());
            if v > best {
                best = v;
            }
        }
        let gain = best.clone() - eq.clone();
        per_type.push(TypeGain { theta: theta.as_f64(), equilibrium: eq.as_f64(), best: best.as_f64(), gain: gain.as_f64() });
        if worst.as_ref().is_none_or(|(g, ..)| gain > *g) {
            worst = Some((gain, eq, best));
        }
    }
    let (_, mut equilibrium, mut best) = worst.expect("types are nonempty");
    let top = blocks.iter().filter_map(|b| b.witness.clone()).fold(None, |acc: Option<(T, usize, usize, usize, usize)>, x| {
        match acc {
            Some(a) if a.0 >= x.0 => Some(a),
            _ => Some(x),
        }
    });
    let mut witness = Witness::null();
    if let Some((lift, j, k, c, i)) = top {
        if notion == Notion::Misreport {
            equilibrium = T::zero();
            best = T::max_of(lift.clone(), T::zero());
        }
        if lift > T::zero() {
            let (n, others, _) = &opponents[j];
            let mut profile = vec![points[k].as_f64()];
            profile.extend(to_f64(others));
            witness = Witness {
                identities: c,
                reports: vec![GroupReports { counts: vec![*n], reports: to_f64(&sets[i].1) }],
                deviator_type: Some(points[k].as_f64()),
                profile: Some(profile),
                gain: lift.as_f64(),
            };
        }
    }
    let draft = Draft { equilibrium, best, witness, per_type, infeasible: 0, evaluations };
    let space = match notion {
        Notion::Misreport => "one identity, best report per profile".to_string(),
        _ => format!("|N_i| <= {max_identities}, sup per profile"),
    };
    Ok(finish(notion, mech, model, spec, draft, space))
}

pub fn expost_buyer_ic<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    max_identities: usize,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    expost_buyer_search(Notion::ExpostBuyer, mech, model, pop, max_identities, spec)
}

/// Largest gain from a single-identity misreport at any profile.
pub fn misreport_search<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    expost_buyer_search(Notion::Misreport, mech, model, pop, 1, spec)
}

/// Runs one notion with the identity cap taken from `spec`.
pub fn check<T: Scalar>(
    notion: Notion,
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    spec: &DeviationSpec,
) -> Result<DeviationReport> {
    let cap = spec.max_identities;
    match notion {
        Notion::BiddingZero => bidding_zero_test(mech, model, pop, cap, spec),
        Notion::BayesSeller => bayesian_seller_ic(mech, model, pop, cap, spec),
        Notion::ExpostSeller => expost_seller_ic(mech, model, pop, cap, spec),
        Notion::ExpostAuctioneer => expost_auctioneer_ic(mech, model, pop, cap, spec),
        Notion::BayesBuyer => bayesian_buyer_ic(mech, model, pop, cap, spec),
        Notion::ExpostBuyer => expost_buyer_ic(mech, model, pop, cap, spec),
        Notion::Misreport => misreport_search(mech, model, pop, spec),
    }
}

/// Whether every profile of every count in `counts` allocates the item to a
/// highest type.
pub fn is_efficient<T: Scalar>(mech: &Mechanism<T>, support: &Support<T>, counts: &[usize]) -> Result<bool> {
    for &n in counts {
        for m in multisets(support.len(), n) {
            let profile = support.profile(&m);
            let out = mech.outcome(&profile)?;
            let top = profile.iter().fold(T::zero(), |a, x| T::max_of(a, x.clone()));
            let to_top = (0..n).filter(|&i| profile[i] == top).fold(T::zero(), |a, i| a + out.q[i].clone());
            if (to_top - T::one()).abs() > T::slack() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{FormatTag, MechanismSpec, TieRule};
    use num_rational::BigRational;
    use std::collections::BTreeMap;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    fn third_grid() -> TypeModel<Q> {
        TypeModel::finite(vec![q(0, 1), q(1, 2), q(1, 1)], vec![q(1, 3); 3]).unwrap()
    }

    fn build(spec: MechanismSpec<Q>, pop: &PopulationModel<Q>) -> Mechanism<Q> {
        spec.build(&third_grid(), pop).unwrap()
    }

    fn spec() -> DeviationSpec {
        DeviationSpec::default()
    }

    #[test]
    fn second_price_passes_bidding_zero_and_first_price_fails() {
        let model = third_grid();
        let pop = PopulationModel::fixed(2).unwrap();
        let sp = build(MechanismSpec::new(FormatTag::LitSecondPrice), &pop);
        let r = bidding_zero_test(&sp, &model, &pop, 2, &spec()).unwrap();
        assert_eq!(r.gain, 0.0);
        assert_eq!(r.verdict, Verdict::Compatible);
        let fp = build(MechanismSpec::new(FormatTag::TieCorrectedFirstPrice), &pop);
        let r = bidding_zero_test(&fp, &model, &pop, 2, &spec()).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
    }

    #[test]
    fn expost_seller_example() {
        let model = third_grid();
        let pop = PopulationModel::fixed(2).unwrap();
        let sp = build(MechanismSpec::new(FormatTag::LitSecondPrice), &pop);
        let r = expost_seller_ic(&sp, &model, &pop, 1, &spec()).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        let posted = build(MechanismSpec::new(FormatTag::PostedPrice).price(q(1, 2)), &pop);
        let r = expost_seller_ic(&posted, &model, &pop, 2, &spec()).unwrap();
        assert_eq!(r.gain_exact.as_deref(), Some("0"));
        let dark = build(MechanismSpec::new(FormatTag::DarkFirstPrice).optimal_reserve(), &pop);
        let mixed = PopulationModel::explicit(BTreeMap::from([(1, q(1, 2)), (2, q(1, 2))]), None).unwrap();
        let r = expost_seller_ic(&dark, &model, &mixed, 2, &spec()).unwrap();
        assert_eq!(r.gain_exact.as_deref(), Some("0"));
    }

    #[test]
    fn posted_price_is_auctioneer_compatible() {
        let model = third_grid();
        let pop = PopulationModel::explicit(BTreeMap::from([(1, q(1, 3)), (2, q(1, 3)), (3, q(1, 3))]), None).unwrap();
        let posted = build(MechanismSpec::new(FormatTag::PostedPrice), &pop);
        let r = expost_auctioneer_ic(&posted, &model, &pop, 3, &spec()).unwrap();
        assert_eq!(r.gain_exact.as_deref(), Some("0"));
        let sp = build(MechanismSpec::new(FormatTag::LitSecondPrice), &pop);
        assert_eq!(expost_auctioneer_ic(&sp, &model, &pop, 3, &spec()).unwrap().verdict, Verdict::Violated);
    }

    #[test]
    fn tie_corrected_second_price_witness() {
        let model = third_grid();
        let pop = PopulationModel::fixed(2).unwrap();
        let tc = build(MechanismSpec::new(FormatTag::TieCorrectedSecondPrice).optimal_reserve(), &pop);
        let r = expost_buyer_ic(&tc, &model, &pop, 3, &spec()).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        assert!((r.witness.gain - 0.125).abs() < 1e-12);
        assert_eq!(r.witness.profile, Some(vec![1.0, 0.5]));
        assert_eq!(r.witness.reports[0].reports, vec![0.5, 0.5, 0.5]);
        assert!((r.gain_at(1.0).unwrap() - 0.125 / 3.0).abs() < 1e-12);
        let sp = build(MechanismSpec::new(FormatTag::LitSecondPrice), &pop);
        assert_eq!(expost_buyer_ic(&sp, &model, &pop, 3, &spec()).unwrap().gain_exact.as_deref(), Some("0"));
    }

    #[test]
    fn null_deviation_has_zero_gain() {
        let model = third_grid();
        let pop = PopulationModel::fixed(2).unwrap();
        let sp = build(MechanismSpec::new(FormatTag::LitSecondPrice), &pop);
        for notion in Notion::CHECKS {
            let r = check(notion, &sp, &model, &pop, &spec().identities(1)).unwrap();
            assert!(r.gain >= 0.0, "{notion}");
        }
        let r = bayesian_buyer_ic(&sp, &model, &pop, 1, &spec()).unwrap();
        assert!(r.per_type.iter().all(|g| g.gain == 0.0));
    }

    #[test]
    fn posted_price_buyer_gain_on_a_lattice() {
        let model = TypeModel::<f64>::uniform();
        let pop = PopulationModel::fixed(2).unwrap();
        let posted = Mechanism::posted_price(0.5);
        let r = bayesian_buyer_ic(&posted, &model, &pop, 2, &DeviationSpec::default().lattice(10)).unwrap();
        assert!((r.gain_at(0.9).unwrap() - 0.4 * (5.0 / 6.0 - 0.75)).abs() < 1e-12);
        assert_eq!(r.gain_at(0.4), Some(0.0));
        assert_eq!(r.verdict, Verdict::Violated);
    }

    #[test]
    fn hierarchy_and_monotonicity() {
        let model = third_grid();
        let pop = PopulationModel::explicit(BTreeMap::from([(1, q(1, 2)), (2, q(1, 2))]), None).unwrap();
        for spec_m in [
            MechanismSpec::new(FormatTag::LitSecondPrice).optimal_reserve(),
            MechanismSpec::new(FormatTag::TieCorrectedFirstPrice).optimal_reserve(),
            MechanismSpec::new(FormatTag::DarkFirstPrice).optimal_reserve(),
            MechanismSpec::new(FormatTag::PostedPrice),
        ] {
            let mech = build(spec_m, &pop);
            let mut previous = (-1.0, -1.0);
            for cap in 1..=3 {
                let bs = bayesian_seller_ic(&mech, &model, &pop, cap, &spec()).unwrap();
                let es = expost_seller_ic(&mech, &model, &pop, cap, &spec()).unwrap();
                let bb = bayesian_buyer_ic(&mech, &model, &pop, cap, &spec()).unwrap();
                let eb = expost_buyer_ic(&mech, &model, &pop, cap, &spec()).unwrap();
                assert!(bs.gain <= es.gain + 1e-15, "{}", mech.label());
                for (b, e) in bb.per_type.iter().zip(&eb.per_type) {
                    assert!(b.gain <= e.gain + 1e-15, "{}", mech.label());
                }
                assert!(es.gain >= previous.0 && eb.gain >= previous.1);
                previous = (es.gain, eb.gain);
            }
        }
    }

    #[test]
    fn misreport_search_and_efficiency() {
        let model = third_grid();
        let pop = PopulationModel::fixed(3).unwrap();
        let sp = build(MechanismSpec::new(FormatTag::LitSecondPrice), &pop);
        assert_eq!(misreport_search(&sp, &model, &pop, &spec()).unwrap().verdict, Verdict::Compatible);
        let fp = build(MechanismSpec::new(FormatTag::LitFirstPrice), &pop);
        assert_eq!(misreport_search(&fp, &model, &pop, &spec()).unwrap().verdict, Verdict::Violated);
        let support = Support::from_grid(model.as_finite().unwrap());
        assert!(is_efficient(&sp, &support, &[1, 2, 3]).unwrap());
        let posted = build(MechanismSpec::new(FormatTag::PostedPrice), &pop);
        assert!(!is_efficient(&posted, &support, &[1, 2, 3]).unwrap());
        let reserved = build(MechanismSpec::new(FormatTag::LitSecondPrice).optimal_reserve(), &pop);
        assert!(!is_efficient(&reserved, &support, &[1, 2, 3]).unwrap());
        let dark_tc = build(MechanismSpec::new(FormatTag::DarkFirstPrice).tie_rule(TieRule::TieCorrected), &pop);
        assert!(is_efficient(&dark_tc, &support, &[1, 2, 3]).unwrap());
    }

    #[test]
    fn budget_errors_are_explicit() {
        let model = third_grid();
        let pop = PopulationModel::fixed(2).unwrap();
        let sp = build(MechanismSpec::new(FormatTag::LitSecondPrice), &pop);
        let err = expost_seller_ic(&sp, &model, &pop, 3, &spec().budget(5)).unwrap_err();
        assert!(matches!(err, IdentityError::Budget { budget: 5, .. }));
    }

    #[test]
    fn notion_names_round_trip() {
        for n in Notion::CHECKS {
            assert_eq!(n.as_str().parse::<Notion>().unwrap(), n);
        }
        assert!("shill".parse::<Notion>().is_err());
    }
}
