//! Anonymous outcome rules.
//!
//! A [`Mechanism`] maps a report profile of any length to expected win
//! probabilities and expected payments. Randomized tie-breaking is always
//! integrated out, so outcomes are deterministic and exact whenever the
//! scalar is.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::defaults::{MAX_IDENTITIES, MAX_PRIORITY_ENUMERATION};
use crate::distributions::{optimal_reserve, DistributionError, FiniteTypeModel, PopulationModel, TypeModel};
use crate::equilibrium::{default_intervals, BidFunction, EquilibriumError};
use crate::scalar::{factorial, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("report {0} lies outside [0, 1]")]
    OutOfRange(String),
    #[error("no disclosure signal covers {0} bidders")]
    Uncovered(usize),
    #[error("disclosure is not partitional: {0} bidders map to two signals")]
    NotPartitional(usize),
    #[error("signal '{0}' has an empty preimage")]
    EmptySignal(String),
    #[error("reserve {0} lies above the top of the grid")]
    ReserveAboveGrid(String),
    #[error("unknown {what} '{value}'")]
    Unknown { what: &'static str, value: String },
    #[error("invalid mechanism: {0}")]
    Invalid(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

type Result<T> = std::result::Result<T, MechanismError>;

/// The auction formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FormatTag {
    LitFirstPrice,
    LitSecondPrice,
    DarkSecondPrice,
    PostedPrice,
    DarkFirstPrice,
    TieCorrectedSecondPrice,
    TieCorrectedFirstPrice,
    FixedPrioritySecondPrice,
    Partitional,
}

impl FormatTag {
    pub const ALL: [FormatTag; 9] = [
        FormatTag::LitFirstPrice,
        FormatTag::LitSecondPrice,
        FormatTag::DarkSecondPrice,
        FormatTag::PostedPrice,
        FormatTag::DarkFirstPrice,
        FormatTag::TieCorrectedSecondPrice,
        FormatTag::TieCorrectedFirstPrice,
        FormatTag::FixedPrioritySecondPrice,
        FormatTag::Partitional,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FormatTag::LitFirstPrice => "lit-first-price",
            FormatTag::LitSecondPrice => "lit-second-price",
            FormatTag::DarkSecondPrice => "dark-second-price",
            FormatTag::PostedPrice => "posted-price",
            FormatTag::DarkFirstPrice => "dark-first-price",
            FormatTag::TieCorrectedSecondPrice => "tie-corrected-second-price",
            FormatTag::TieCorrectedFirstPrice => "tie-corrected-first-price",
            FormatTag::FixedPrioritySecondPrice => "fixed-priority-second-price",
            FormatTag::Partitional => "partitional",
        }
    }

    fn default_tie_rule(&self) -> TieRule {
        match self {
            FormatTag::TieCorrectedSecondPrice | FormatTag::TieCorrectedFirstPrice => TieRule::TieCorrected,
            FormatTag::FixedPrioritySecondPrice => TieRule::PriorityUniform,
            _ => TieRule::SymmetricRandom,
        }
    }

    fn is_dark(&self) -> bool {
        matches!(self, FormatTag::DarkFirstPrice | FormatTag::DarkSecondPrice | FormatTag::Partitional)
    }
}

impl fmt::Display for FormatTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormatTag {
    type Err = MechanismError;

    fn from_str(s: &str) -> Result<Self> {
        FormatTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| MechanismError::Unknown { what: "format", value: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TieRule {
    SymmetricRandom,
    PriorityUniform,
    TieCorrected,
}

impl TieRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            TieRule::SymmetricRandom => "symmetric-random",
            TieRule::PriorityUniform => "priority-uniform",
            TieRule::TieCorrected => "tie-corrected",
        }
    }
}

impl fmt::Display for TieRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TieRule {
    type Err = MechanismError;

    fn from_str(s: &str) -> Result<Self> {
        [TieRule::SymmetricRandom, TieRule::PriorityUniform, TieRule::TieCorrected]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| MechanismError::Unknown { what: "tie rule", value: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Disclosure {
    Lit,
    Dark,
}

/// How a reserve or posted price is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceSpec<T> {
    None,
    Optimal,
    Value(T),
}

/// Declarative description of a mechanism, resolved against a type model and
/// a population by [`Mechanism::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismSpec<T> {
    pub format: FormatTag,
    pub reserve: PriceSpec<T>,
    pub tie_rule: Option<TieRule>,
    /// Posted price; ignored by auction formats.
    pub price: PriceSpec<T>,
}

impl<T: Scalar> MechanismSpec<T> {
    pub fn new(format: FormatTag) -> Self {
        let price = if format == FormatTag::PostedPrice { PriceSpec::Optimal } else { PriceSpec::None };
        Self { format, reserve: PriceSpec::None, tie_rule: None, price }
    }

    pub fn optimal_reserve(mut self) -> Self {
        self.reserve = PriceSpec::Optimal;
        self
    }

    pub fn reserve(mut self, value: T) -> Self {
        self.reserve = PriceSpec::Value(value);
        self
    }

    pub fn tie_rule(mut self, rule: TieRule) -> Self {
        self.tie_rule = Some(rule);
        self
    }

    pub fn price(mut self, value: T) -> Self {
        self.price = PriceSpec::Value(value);
        self
    }

    pub fn build(&self, model: &TypeModel<T>, pop: &PopulationModel<T>) -> Result<Mechanism<T>> {
        Mechanism::build(self, model, pop)
    }
}

/// Expected allocation and payment vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub q: Vec<T>,
    pub t: Vec<T>,
}

impl<T: Scalar> Outcome<T> {
    pub fn none(n: usize) -> Self {
        Self { q: vec![T::zero(); n], t: vec![T::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn revenue(&self) -> T {
        self.t.iter().fold(T::zero(), |a, t| a + t.clone())
    }

    pub fn sale_probability(&self) -> T {
        self.q.iter().fold(T::zero(), |a, q| a + q.clone())
    }

    /// Sums of `q` and `t` over the given bidder indices.
    pub fn totals(&self, indices: impl IntoIterator<Item = usize>) -> (T, T) {
        indices
            .into_iter()
            .fold((T::zero(), T::zero()), |(q, t), i| (q + self.q[i].clone(), t + self.t[i].clone()))
    }

    pub fn is_feasible(&self, tol: &T) -> bool {
        self.q.iter().all(|q| *q >= -tol.clone() && *q <= T::one() + tol.clone())
            && self.sale_probability() <= T::one() + tol.clone()
    }

    pub fn is_ex_post_ir(&self, types: &[T], tol: &T) -> bool {
        types.iter().zip(self.q.iter().zip(&self.t)).all(|(v, (q, t))| v.clone() * q.clone() - t.clone() >= -tol.clone())
    }

    pub fn losers_pay_zero(&self) -> bool {
        self.q.iter().zip(&self.t).all(|(q, t)| !q.is_zero() || t.is_zero())
    }

    fn share(n: usize, winners: &[usize], payment: T) -> Self {
        let mut out = Self::none(n);
        let m = T::from_count(winners.len());
        for &w in winners {
            out.q[w] = T::one() / m.clone();
            out.t[w] = payment.clone() / m.clone();
        }
        out
    }
}

/// A report profile: buyers, the seller's shills, and extra identities of
/// one designated buyer.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeProfile<T> {
    pub buyers: Vec<T>,
    pub shills: Vec<T>,
    pub extra: Vec<T>,
    pub designated: Option<usize>,
}

impl<T: Scalar> TypeProfile<T> {
    pub fn buyers(buyers: Vec<T>) -> Self {
        Self { buyers, shills: Vec::new(), extra: Vec::new(), designated: None }
    }

    pub fn with_shills(mut self, shills: Vec<T>) -> Self {
        self.shills = shills;
        self
    }

    pub fn with_identities(mut self, buyer: usize, extra: Vec<T>) -> Self {
        self.designated = Some(buyer);
        self.extra = extra;
        self
    }

    pub fn len(&self) -> usize {
        self.buyers.len() + self.shills.len() + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reports in bidder order: buyers, then shills, then extra identities.
    pub fn reports(&self) -> Vec<T> {
        self.buyers.iter().chain(&self.shills).chain(&self.extra).cloned().collect()
    }

    pub fn buyer_indices(&self) -> std::ops::Range<usize> {
        0..self.buyers.len()
    }

    pub fn shill_indices(&self) -> std::ops::Range<usize> {
        let start = self.buyers.len();
        start..start + self.shills.len()
    }

    /// Bidder indices controlled by the designated buyer.
    pub fn identity_indices(&self) -> Vec<usize> {
        let start = self.buyers.len() + self.shills.len();
        self.designated.into_iter().chain(start..start + self.extra.len()).collect()
    }
}

/// How a bidder's interim outcome depends on the other reports. Used by the
/// quadrature engines.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Reduction {
    /// Only the largest other report matters (plus the bidder count).
    MaxOfOthers,
    /// Only the number of other reports at or above the price matters.
    AcceptCount(f64),
}

#[derive(Debug, Clone)]
enum Rule<T> {
    SecondPrice(TieRule),
    FirstPrice { bids: BidFunction<T>, tie_corrected: bool },
    Posted(T),
    Partitional(Vec<Signal<T>>),
}

/// An anonymous mechanism.
#[derive(Debug, Clone)]
pub struct Mechanism<T> {
    format: FormatTag,
    tie_rule: TieRule,
    disclosure: Disclosure,
    reserve: T,
    reserve_index: Option<usize>,
    grid: Option<FiniteTypeModel<T>>,
    rule: Rule<T>,
    label: String,
}

fn check_unit<T: Scalar>(x: &T) -> Result<()> {
    if *x < T::zero() || *x > T::one() {
        Err(MechanismError::OutOfRange(x.to_string()))
    } else {
        Ok(())
    }
}

impl<T: Scalar> Mechanism<T> {
    /// Builds bid tables for up to `max_buyers + MAX_IDENTITIES` bidders.
    pub fn build(spec: &MechanismSpec<T>, model: &TypeModel<T>, pop: &PopulationModel<T>) -> Result<Self> {
        Self::build_with_capacity(spec, model, pop, pop.max_buyers() + MAX_IDENTITIES)
    }

    pub fn build_with_capacity(
        spec: &MechanismSpec<T>,
        model: &TypeModel<T>,
        pop: &PopulationModel<T>,
        capacity: usize,
    ) -> Result<Self> {
        let format = spec.format;
        if format == FormatTag::Partitional {
            return Err(MechanismError::Invalid("partitional mechanisms come from induce_dark".into()));
        }
        let default_rule = format.default_tie_rule();
        let tie_rule = spec.tie_rule.unwrap_or(default_rule);
        let fixed_rule = matches!(
            format,
            FormatTag::TieCorrectedSecondPrice | FormatTag::TieCorrectedFirstPrice | FormatTag::FixedPrioritySecondPrice
        );
        if fixed_rule && tie_rule != default_rule {
            return Err(MechanismError::Invalid(format!("{format} requires the {default_rule} tie rule")));
        }
        let grid = model.as_finite().cloned();
        let (reserve, reserve_index) = resolve_price(&spec.reserve, model)?;
        let rule = match format {
            FormatTag::LitSecondPrice
            | FormatTag::DarkSecondPrice
            | FormatTag::TieCorrectedSecondPrice
            | FormatTag::FixedPrioritySecondPrice => Rule::SecondPrice(tie_rule),
            FormatTag::LitFirstPrice | FormatTag::TieCorrectedFirstPrice | FormatTag::DarkFirstPrice => {
                let bids = first_price_bids(format, model, pop, &reserve, reserve_index, capacity.max(1))?;
                Rule::FirstPrice { bids, tie_corrected: tie_rule == TieRule::TieCorrected }
            }
            FormatTag::PostedPrice => {
                let price = match &spec.price {
                    PriceSpec::Optimal => crate::revenue::optimal_posted_price(model, pop)?.0,
                    PriceSpec::None => T::zero(),
                    PriceSpec::Value(p) => {
                        check_unit(p)?;
                        p.clone()
                    }
                };
                Rule::Posted(price)
            }
            FormatTag::Partitional => unreachable!(),
        };
        let (reserve, reserve_index) = match &rule {
            Rule::Posted(p) => (p.clone(), grid.as_ref().and_then(|g| g.ceil_index(p))),
            _ => (reserve, reserve_index),
        };
        let disclosure = if format.is_dark() { Disclosure::Dark } else { Disclosure::Lit };
        let mut mech = Self { format, tie_rule, disclosure, reserve, reserve_index, grid, rule, label: String::new() };
        mech.label = mech.default_label();
        Ok(mech)
    }

    /// Plain second-price auction with reserve `reserve` and symmetric ties.
    pub fn second_price(reserve: T) -> Self {
        let mut mech = Self {
            format: FormatTag::LitSecondPrice,
            tie_rule: TieRule::SymmetricRandom,
            disclosure: Disclosure::Lit,
            reserve,
            reserve_index: None,
            grid: None,
            rule: Rule::SecondPrice(TieRule::SymmetricRandom),
            label: String::new(),
        };
        mech.label = mech.default_label();
        mech
    }

    /// Posted price with uniform tie-breaking among accepting bidders.
    pub fn posted_price(price: T) -> Self {
        let mut mech = Self {
            format: FormatTag::PostedPrice,
            tie_rule: TieRule::SymmetricRandom,
            disclosure: Disclosure::Lit,
            reserve: price.clone(),
            reserve_index: None,
            grid: None,
            rule: Rule::Posted(price),
            label: String::new(),
        };
        mech.label = mech.default_label();
        mech
    }

    fn default_label(&self) -> String {
        match &self.rule {
            Rule::Posted(p) => format!("{}@{}", self.format, p),
            Rule::Partitional(signals) => {
                let parts: Vec<String> = signals.iter().map(|s| format!("{}:{}", s.label, s.mechanism.label)).collect();
                format!("partitional[{}]", parts.join(","))
            }
            _ => format!("{}(reserve={},ties={})", self.format, self.reserve, self.tie_rule),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn format(&self) -> FormatTag {
        self.format
    }

    pub fn tie_rule(&self) -> TieRule {
        self.tie_rule
    }

    pub fn disclosure(&self) -> Disclosure {
        self.disclosure
    }

    pub fn is_dark(&self) -> bool {
        self.disclosure == Disclosure::Dark
    }

    /// Reserve, or the price for posted-price mechanisms.
    pub fn reserve(&self) -> &T {
        &self.reserve
    }

    pub fn reserve_index(&self) -> Option<usize> {
        self.reserve_index
    }

    pub fn price(&self) -> Option<&T> {
        match &self.rule {
            Rule::Posted(p) => Some(p),
            _ => None,
        }
    }

    pub fn bid_function(&self) -> Option<&BidFunction<T>> {
        match &self.rule {
            Rule::FirstPrice { bids, .. } => Some(bids),
            _ => None,
        }
    }

    pub fn signals(&self) -> Option<&[Signal<T>]> {
        match &self.rule {
            Rule::Partitional(s) => Some(s),
            _ => None,
        }
    }

    /// The rule that applies to profiles of `n` bidders.
    pub fn resolve(&self, n: usize) -> Result<&Mechanism<T>> {
        match &self.rule {
            Rule::Partitional(signals) => signals
                .iter()
                .find(|s| s.counts.contains(&n))
                .map(|s| s.mechanism.resolve(n))
                .unwrap_or(Err(MechanismError::Uncovered(n))),
            _ => Ok(self),
        }
    }

    /// Groups of buyer counts that a participating buyer cannot tell apart:
    /// singletons when lit, one group when dark, the signal preimages when
    /// partitional.
    pub fn information_groups(&self, counts: &[usize]) -> Vec<Vec<usize>> {
        match (&self.rule, self.disclosure) {
            (Rule::Partitional(signals), _) => signals
                .iter()
                .map(|s| counts.iter().copied().filter(|n| s.counts.contains(n)).collect::<Vec<_>>())
                .filter(|g| !g.is_empty())
                .collect(),
            (_, Disclosure::Dark) => vec![counts.to_vec()],
            (_, Disclosure::Lit) => counts.iter().map(|n| vec![*n]).collect(),
        }
    }

    pub(crate) fn reduction(&self, n: usize) -> Result<Reduction> {
        Ok(match &self.resolve(n)?.rule {
            Rule::Posted(p) => Reduction::AcceptCount(p.as_f64()),
            _ => Reduction::MaxOfOthers,
        })
    }

    /// Allocation goes to a highest report whenever one clears the reserve.
    pub fn allocates_to_highest(&self) -> bool {
        match &self.rule {
            Rule::Posted(_) => false,
            Rule::Partitional(signals) => signals.iter().all(|s| s.mechanism.allocates_to_highest()),
            _ => true,
        }
    }

    /// Equilibrium report-to-bid map: first-price formats shade, the others
    /// are direct.
    pub fn equilibrium_bid(&self, theta: &T, n: usize) -> Result<T> {
        check_unit(theta)?;
        match &self.resolve(n)?.rule {
            Rule::FirstPrice { bids, .. } => Ok(first_price_bid(bids, theta, n)?),
            _ => Ok(theta.clone()),
        }
    }

    /// Expected outcome of a report profile.
    pub fn outcome(&self, reports: &[T]) -> Result<Outcome<T>> {
        for r in reports {
            check_unit(r)?;
        }
        self.outcome_unchecked(reports)
    }

    fn outcome_unchecked(&self, reports: &[T]) -> Result<Outcome<T>> {
        let n = reports.len();
        match &self.rule {
            Rule::Partitional(_) => self.resolve(n)?.outcome_unchecked(reports),
            Rule::Posted(price) => {
                let accept: Vec<usize> = (0..n).filter(|&i| reports[i] >= *price).collect();
                if accept.is_empty() {
                    Ok(Outcome::none(n))
                } else {
                    Ok(Outcome::share(n, &accept, price.clone()))
                }
            }
            Rule::SecondPrice(ties) => {
                let Some((top, winners)) = top_reports(reports, &self.reserve) else {
                    return Ok(Outcome::none(n));
                };
                if winners.len() > 1 {
                    return Ok(Outcome::share(n, &winners, top));
                }
                let w = winners[0];
                Ok(match ties {
                    TieRule::SymmetricRandom => {
                        let threshold = self.threshold(reports, w).0;
                        Outcome::share(n, &winners, threshold)
                    }
                    TieRule::TieCorrected => Outcome::share(n, &winners, self.tie_corrected_payment(reports, w)),
                    TieRule::PriorityUniform if n <= MAX_PRIORITY_ENUMERATION => self.priority_average(reports),
                    TieRule::PriorityUniform => Outcome::share(n, &winners, self.tie_corrected_payment(reports, w)),
                })
            }
            Rule::FirstPrice { bids, tie_corrected } => {
                let Some((top, winners)) = top_reports(reports, &self.reserve) else {
                    return Ok(Outcome::none(n));
                };
                if winners.len() > 1 && *tie_corrected {
                    return Ok(Outcome::share(n, &winners, top));
                }
                let bid = first_price_bid(bids, &top, n)?;
                Ok(Outcome::share(n, &winners, bid))
            }
        }
    }

    /// `τ = max(max others, ρ)` and the number of other reports equal to it.
    fn threshold(&self, reports: &[T], w: usize) -> (T, usize) {
        let others = reports.iter().enumerate().filter(|(i, _)| *i != w).map(|(_, r)| r);
        let best = others.clone().fold(None::<&T>, |m, r| match m {
            Some(x) if x >= r => Some(x),
            _ => Some(r),
        });
        let tau = match best {
            Some(b) if *b >= self.reserve => b.clone(),
            _ => self.reserve.clone(),
        };
        let ties = others.filter(|r| **r == tau).count();
        (tau, ties)
    }

    /// Smallest grid type strictly above `x`; `x` itself off a grid.
    fn next_type(&self, x: &T) -> T {
        self.grid
            .as_ref()
            .and_then(|g| g.grid().iter().find(|v| *v > x).cloned())
            .unwrap_or_else(|| x.clone())
    }

    fn tie_corrected_payment(&self, reports: &[T], w: usize) -> T {
        let (tau, ties) = self.threshold(reports, w);
        if ties == 0 {
            return tau;
        }
        let c = T::from_count(ties);
        let next = self.next_type(&tau);
        tau / (c.clone() + T::one()) + c.clone() / (c + T::one()) * next
    }

    /// Second price under every priority order, averaged: the winner is the
    /// highest report with the best priority and pays the least grid report
    /// that would still win.
    fn priority_average(&self, reports: &[T]) -> Outcome<T> {
        let n = reports.len();
        let mut out = Outcome::none(n);
        let orders = factorial::<T>(n);
        for order in permutations(n) {
            let mut rank = vec![0usize; n];
            for (pos, &i) in order.iter().enumerate() {
                rank[i] = pos;
            }
            let Some((_, winners)) = top_reports(reports, &self.reserve) else {
                return out;
            };
            let w = *winners.iter().min_by_key(|&&i| rank[i]).unwrap();
            let (tau, _) = self.threshold(reports, w);
            let beaten = (0..n).filter(|&j| j != w && reports[j] == tau).all(|j| rank[w] < rank[j]);
            let pay = if beaten { tau.clone() } else { self.next_type(&tau) };
            out.q[w] = out.q[w].clone() + T::one() / orders.clone();
            out.t[w] = out.t[w].clone() + pay / orders.clone();
        }
        out
    }
}

fn first_price_bid<T: Scalar>(bids: &BidFunction<T>, theta: &T, n: usize) -> Result<T> {
    match bids.bid(theta, n) {
        Err(EquilibriumError::TableRange { .. }) => Ok(bids.exact(theta, n)?),
        other => Ok(other?),
    }
}

/// Highest report and its holders, when it clears the reserve.
fn top_reports<T: Scalar>(reports: &[T], reserve: &T) -> Option<(T, Vec<usize>)> {
    let top = reports.iter().fold(None::<&T>, |m, r| match m {
        Some(x) if x >= r => Some(x),
        _ => Some(r),
    })?;
    if top < reserve {
        return None;
    }
    let winners = (0..reports.len()).filter(|&i| reports[i] == *top).collect();
    Some((top.clone(), winners))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

fn resolve_price<T: Scalar>(spec: &PriceSpec<T>, model: &TypeModel<T>) -> Result<(T, Option<usize>)> {
    match model {
        TypeModel::Finite(g) => {
            let index = match spec {
                PriceSpec::None => 0,
                PriceSpec::Optimal => optimal_reserve(model)?.index.expect("grid reserve has an index"),
                PriceSpec::Value(v) => {
                    check_unit(v)?;
                    g.ceil_index(v).ok_or_else(|| MechanismError::ReserveAboveGrid(v.to_string()))?
                }
            };
            Ok((g.value(index).clone(), Some(index)))
        }
        TypeModel::Continuous(_) => {
            let value = match spec {
                PriceSpec::None => T::zero(),
                PriceSpec::Optimal => optimal_reserve(model)?.value,
                PriceSpec::Value(v) => {
                    check_unit(v)?;
                    v.clone()
                }
            };
            Ok((value, None))
        }
    }
}

fn first_price_bids<T: Scalar>(
    format: FormatTag,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    reserve: &T,
    reserve_index: Option<usize>,
    capacity: usize,
) -> Result<BidFunction<T>> {
    let dark = format == FormatTag::DarkFirstPrice;
    Ok(match model {
        TypeModel::Finite(g) => {
            let r = reserve_index.expect("grid reserve has an index");
            if dark {
                BidFunction::dark_grid(g, pop, r)?
            } else {
                BidFunction::lit_grid(g, r, capacity)?
            }
        }
        TypeModel::Continuous(c) => {
            if dark {
                BidFunction::dark_continuous(*c, pop, reserve.as_f64(), default_intervals())?
            } else {
                BidFunction::lit_continuous(*c, reserve.as_f64(), capacity, default_intervals())?
            }
        }
    })
}

/// Runs `mech` on every report in `profile`.
pub fn run_mechanism<T: Scalar>(mech: &Mechanism<T>, profile: &TypeProfile<T>) -> Result<Outcome<T>> {
    mech.outcome(&profile.reports())
}

/// One signal of a disclosure policy: the bidder counts that send it and the
/// mechanism run after it.
#[derive(Debug, Clone)]
pub struct Signal<T> {
    pub label: String,
    pub counts: BTreeSet<usize>,
    pub mechanism: Mechanism<T>,
}

/// A partition of bidder counts into signals.
#[derive(Debug, Clone)]
pub struct DisclosurePolicy<T> {
    signals: Vec<Signal<T>>,
}

impl<T: Scalar> DisclosurePolicy<T> {
    pub fn new(signals: Vec<Signal<T>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &signals {
            if s.counts.is_empty() {
                return Err(MechanismError::EmptySignal(s.label.clone()));
            }
            for n in &s.counts {
                if !seen.insert(*n) {
                    return Err(MechanismError::NotPartitional(*n));
                }
            }
        }
        if signals.is_empty() {
            return Err(MechanismError::Invalid("a disclosure policy needs at least one signal".into()));
        }
        Ok(Self { signals })
    }

    /// Builds each signal's mechanism against the population conditioned on
    /// the signal's preimage.
    pub fn build(
        signals: Vec<(String, BTreeSet<usize>, MechanismSpec<T>)>,
        model: &TypeModel<T>,
        pop: &PopulationModel<T>,
    ) -> Result<Self> {
        let capacity = pop.max_buyers() + MAX_IDENTITIES;
        let built = signals
            .into_iter()
            .map(|(label, counts, spec)| {
                let conditioned = pop.condition(&counts).unwrap_or_else(|_| pop.clone());
                let mechanism = Mechanism::build_with_capacity(&spec, model, &conditioned, capacity)?;
                Ok(Signal { label, counts, mechanism })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(built)
    }

    /// Every count its own signal, each running `mech`.
    pub fn lit(mech: &Mechanism<T>, counts: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(
            counts
                .into_iter()
                .map(|n| Signal { label: n.to_string(), counts: BTreeSet::from([n]), mechanism: mech.clone() })
                .collect(),
        )
    }

    pub fn signals(&self) -> &[Signal<T>] {
        &self.signals
    }

    pub fn signal_for(&self, n: usize) -> Option<&Signal<T>> {
        self.signals.iter().find(|s| s.counts.contains(&n))
    }
}

/// The dark mechanism that runs, on a profile of `n` reports, the mechanism
/// of the signal `n` sends.
pub fn induce_dark<T: Scalar>(policy: &DisclosurePolicy<T>) -> Result<Mechanism<T>> {
    let signals = policy.signals();
    if signals.len() == 1 && signals[0].mechanism.is_dark() {
        return Ok(signals[0].mechanism.clone());
    }
    let first = &signals[0].mechanism;
    let mut mech = Mechanism {
        format: FormatTag::Partitional,
        tie_rule: first.tie_rule,
        disclosure: Disclosure::Dark,
        reserve: first.reserve.clone(),
        reserve_index: first.reserve_index,
        grid: first.grid.clone(),
        rule: Rule::Partitional(signals.to_vec()),
        label: String::new(),
    };
    mech.label = mech.default_label();
    Ok(mech)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerate::multisets;
    use num_rational::BigRational;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    fn third_grid() -> TypeModel<Q> {
        TypeModel::finite(vec![q(0, 1), q(1, 2), q(1, 1)], vec![q(1, 3); 3]).unwrap()
    }

    fn grid_formats(model: &TypeModel<Q>, pop: &PopulationModel<Q>) -> Vec<Mechanism<Q>> {
        let mut out = Vec::new();
        for format in FormatTag::ALL.into_iter().filter(|f| *f != FormatTag::Partitional) {
            for spec in [MechanismSpec::new(format), MechanismSpec::new(format).optimal_reserve()] {
                out.push(spec.build(model, pop).unwrap());
            }
        }
        out.push(MechanismSpec::new(FormatTag::DarkFirstPrice).tie_rule(TieRule::TieCorrected).build(model, pop).unwrap());
        out.push(MechanismSpec::new(FormatTag::PostedPrice).price(q(1, 1)).build(model, pop).unwrap());
        out
    }

    #[test]
    fn second_price_example() {
        let mech = Mechanism::second_price(0.0);
        let out = mech.outcome(&[0.3, 0.7]).unwrap();
        assert_eq!(out.q, vec![0.0, 1.0]);
        assert_eq!(out.t, vec![0.0, 0.3]);
    }

    #[test]
    fn tie_corrected_second_price_example() {
        let model = third_grid();
        let pop = PopulationModel::fixed(2).unwrap();
        let mech = MechanismSpec::new(FormatTag::TieCorrectedSecondPrice).optimal_reserve().build(&model, &pop).unwrap();
        let out = mech.outcome(&[q(1, 1), q(1, 2)]).unwrap();
        assert_eq!(out.q, vec![q(1, 1), q(0, 1)]);
        assert_eq!(out.t, vec![q(3, 4), q(0, 1)]);
    }

    #[test]
    fn posted_price_example() {
        let out = Mechanism::posted_price(0.5).outcome(&[0.9, 0.6]).unwrap();
        assert_eq!(out.q, vec![0.5, 0.5]);
        assert_eq!(out.t, vec![0.25, 0.25]);
    }

    #[test]
    fn dark_first_price_example() {
        let pop = PopulationModel::from_participant_prior(BTreeMap::from([(1, 0.5), (2, 0.5)])).unwrap();
        let mech = MechanismSpec::new(FormatTag::DarkFirstPrice).build(&TypeModel::uniform(), &pop).unwrap();
        let out = mech.outcome(&[0.8, 0.8]).unwrap();
        let bid: f64 = 0.64 / 3.6;
        assert_eq!(out.q, vec![0.5, 0.5]);
        for t in out.t {
            assert!((t - 0.5 * bid).abs() < 1e-9);
        }
    }

    #[test]
    fn reports_at_the_reserve_win() {
        let mech = Mechanism::second_price(0.5);
        assert_eq!(mech.outcome(&[0.5, 0.2]).unwrap().t, vec![0.5, 0.0]);
        assert_eq!(mech.outcome(&[0.49]).unwrap().q, vec![0.0]);
        assert!(mech.outcome(&[1.2]).is_err());
    }

    #[test]
    fn grid_reserves_snap_up() {
        let model = third_grid();
        let pop = PopulationModel::fixed(2).unwrap();
        let mech = MechanismSpec::new(FormatTag::LitSecondPrice).reserve(q(1, 4)).build(&model, &pop).unwrap();
        assert_eq!(mech.reserve(), &q(1, 2));
        assert_eq!(mech.reserve_index(), Some(1));
    }

    #[test]
    fn conflicting_tie_rule_is_rejected() {
        let pop = PopulationModel::fixed(2).unwrap();
        let spec = MechanismSpec::new(FormatTag::TieCorrectedSecondPrice).tie_rule(TieRule::SymmetricRandom);
        assert!(spec.build(&third_grid(), &pop).is_err());
    }

    #[test]
    fn outcomes_are_feasible_ir_and_losers_pay_nothing() {
        let model = third_grid();
        let pop = PopulationModel::fixed(4).unwrap();
        let grid = model.as_finite().unwrap().grid().to_vec();
        for mech in grid_formats(&model, &pop) {
            for n in 1..=4 {
                for m in multisets(3, n) {
                    let reports: Vec<Q> = m.iter().map(|&k| grid[k].clone()).collect();
                    let out = mech.outcome(&reports).unwrap();
                    assert!(out.is_feasible(&q(0, 1)), "{} on {:?}", mech.label(), reports);
                    assert!(out.is_ex_post_ir(&reports, &q(0, 1)), "{} on {:?}", mech.label(), reports);
                    assert!(out.losers_pay_zero());
                }
            }
        }
    }

    #[test]
    fn fixed_priority_matches_tie_corrected_second_price() {
        let model = third_grid();
        let pop = PopulationModel::fixed(4).unwrap();
        let grid = model.as_finite().unwrap().grid().to_vec();
        for reserve in [PriceSpec::None, PriceSpec::Optimal] {
            let mut fp = MechanismSpec::new(FormatTag::FixedPrioritySecondPrice);
            fp.reserve = reserve.clone();
            let mut tc = MechanismSpec::new(FormatTag::TieCorrectedSecondPrice);
            tc.reserve = reserve;
            let (fp, tc) = (fp.build(&model, &pop).unwrap(), tc.build(&model, &pop).unwrap());
            for n in 1..=4 {
                for profile in crate::enumerate::ordered_profiles(3, n) {
                    let reports: Vec<Q> = profile.iter().map(|&k| grid[k].clone()).collect();
                    assert_eq!(fp.outcome(&reports).unwrap(), tc.outcome(&reports).unwrap(), "{reports:?}");
                }
            }
        }
    }

    #[test]
    fn partitional_composite_agrees_with_signal_mechanisms() {
        let model = third_grid();
        let pop = PopulationModel::explicit(BTreeMap::from([(1, q(1, 4)), (2, q(1, 4)), (3, q(1, 4)), (4, q(1, 4))]), None)
            .unwrap();
        let policy = DisclosurePolicy::build(
            vec![
                ("a".into(), BTreeSet::from([1, 2]), MechanismSpec::new(FormatTag::LitSecondPrice)),
                ("b".into(), BTreeSet::from([3, 4]), MechanismSpec::new(FormatTag::LitSecondPrice).optimal_reserve()),
            ],
            &model,
            &pop,
        )
        .unwrap();
        let dark = induce_dark(&policy).unwrap();
        assert!(dark.is_dark());
        let grid = model.as_finite().unwrap().grid().to_vec();
        for n in 1..=4 {
            let signal = policy.signal_for(n).unwrap();
            for m in multisets(3, n) {
                let reports: Vec<Q> = m.iter().map(|&k| grid[k].clone()).collect();
                assert_eq!(dark.outcome(&reports).unwrap(), signal.mechanism.outcome(&reports).unwrap());
            }
        }
        assert!(matches!(dark.outcome(&vec![q(1, 2); 5]), Err(MechanismError::Uncovered(5))));
    }

    #[test]
    fn single_dark_signal_is_the_identity() {
        let pop = PopulationModel::from_participant_prior(BTreeMap::from([(1, 0.5), (2, 0.5)])).unwrap();
        let inner = MechanismSpec::new(FormatTag::DarkFirstPrice).build(&TypeModel::uniform(), &pop).unwrap();
        let policy = DisclosurePolicy::new(vec![Signal {
            label: "d".into(),
            counts: BTreeSet::from([1, 2]),
            mechanism: inner.clone(),
        }])
        .unwrap();
        let out = induce_dark(&policy).unwrap();
        assert_eq!(out.format(), FormatTag::DarkFirstPrice);
        assert_eq!(out.outcome(&[0.3, 0.9]).unwrap(), inner.outcome(&[0.3, 0.9]).unwrap());
    }

    #[test]
    fn overlapping_or_empty_signals_are_rejected() {
        let m = Mechanism::second_price(0.0);
        let overlap = DisclosurePolicy::new(vec![
            Signal { label: "a".into(), counts: BTreeSet::from([1, 2]), mechanism: m.clone() },
            Signal { label: "b".into(), counts: BTreeSet::from([2, 3]), mechanism: m.clone() },
        ]);
        assert!(matches!(overlap, Err(MechanismError::NotPartitional(2))));
        let empty = DisclosurePolicy::new(vec![Signal { label: "a".into(), counts: BTreeSet::new(), mechanism: m }]);
        assert!(matches!(empty, Err(MechanismError::EmptySignal(_))));
    }

    #[test]
    fn lit_policy_over_second_price_is_second_price() {
        let m = Mechanism::second_price(0.0);
        let dark = induce_dark(&DisclosurePolicy::lit(&m, 1..=4).unwrap()).unwrap();
        assert_eq!(dark.outcome(&[0.2, 0.6, 0.4]).unwrap(), m.outcome(&[0.2, 0.6, 0.4]).unwrap());
    }

    fn permuted(out: &Outcome<f64>, perm: &[usize]) -> Outcome<f64> {
        Outcome { q: perm.iter().map(|&i| out.q[i]).collect(), t: perm.iter().map(|&i| out.t[i]).collect() }
    }

    fn continuous_formats() -> &'static [Mechanism<f64>] {
        static MECHS: std::sync::OnceLock<Vec<Mechanism<f64>>> = std::sync::OnceLock::new();
        MECHS.get_or_init(|| {
            let pop = PopulationModel::fixed(4).unwrap();
            let model = TypeModel::uniform();
            FormatTag::ALL
                .into_iter()
                .filter(|f| *f != FormatTag::Partitional)
                .map(|f| MechanismSpec::new(f).optimal_reserve().build(&model, &pop).unwrap())
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn outcomes_are_anonymous(
            raw in proptest::collection::vec(0usize..5, 1..=4),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let grid = FiniteTypeModel::new(vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![0.2; 5]).unwrap();
            let model = TypeModel::Finite(grid.clone());
            let pop = PopulationModel::fixed(4).unwrap();
            let reports: Vec<f64> = raw.iter().map(|&k| *grid.value(k)).collect();
            let mut perm: Vec<usize> = (0..reports.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<f64> = perm.iter().map(|&i| reports[i]).collect();
            for format in FormatTag::ALL.into_iter().filter(|f| *f != FormatTag::Partitional) {
                let mech = MechanismSpec::new(format).optimal_reserve().build(&model, &pop).unwrap();
                let a = mech.outcome(&reports).unwrap();
                let b = mech.outcome(&shuffled).unwrap();
                let expect = permuted(&a, &perm);
                for i in 0..reports.len() {
                    prop_assert!((b.q[i] - expect.q[i]).abs() < 1e-12);
                    prop_assert!((b.t[i] - expect.t[i]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn continuous_outcomes_are_anonymous_and_ir(
            reports in proptest::collection::vec(0.0f64..=1.0, 1..=4),
        ) {
            let mut reversed = reports.clone();
            reversed.reverse();
            for mech in continuous_formats() {
                let a = mech.outcome(&reports).unwrap();
                let b = mech.outcome(&reversed).unwrap();
                prop_assert!(a.is_ex_post_ir(&reports, &1e-12));
                prop_assert!(a.is_feasible(&1e-12));
                for i in 0..reports.len() {
                    let j = reports.len() - 1 - i;
                    prop_assert!((a.q[i] - b.q[j]).abs() < 1e-12);
                    prop_assert!((a.t[i] - b.t[j]).abs() < 1e-12);
                }
            }
        }
    }
}
