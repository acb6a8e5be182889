//! Revenue engines: exact enumeration over grids, Monte Carlo sampling,
//! interim quantities, the virtual-surplus revenue formula and posted-price
//! optimization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::defaults::{ENUMERATION_BUDGET, GOLDEN_SECTION_TOL, MC_CHUNK_SIZE, QUADRATURE_TOL};
use crate::distributions::{
    check_regular, ContinuousModel, DistributionError, FiniteTypeModel, PopulationModel, TypeModel,
};
use crate::enumerate::{multiset_count, weighted_profiles, Support};
use crate::mechanisms::{Mechanism, MechanismError, Reduction};
use crate::quadrature::{golden_section_max, integrate_piecewise};
use crate::scalar::{binomial, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RevenueError {
    #[error("enumeration needs {needed} profiles, budget is {budget}")]
    Budget { needed: u64, budget: u64 },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("zero-type payment must be nonpositive, got {0}")]
    PositiveZeroPayment(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

type Result<T> = std::result::Result<T, RevenueError>;

/// A revenue figure with its sampling error. Exact estimates have `se = 0`
/// and carry the exact value as text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RevenueEstimate {
    pub value: f64,
    pub se: f64,
    pub samples: u64,
    pub seed: Option<u64>,
    pub exact: Option<String>,
}

impl RevenueEstimate {
    pub fn exact<T: Scalar>(value: &T) -> Self {
        Self { value: value.as_f64(), se: 0.0, samples: 0, seed: None, exact: Some(value.to_string()) }
    }

    /// `|a - b| <= k * sqrt(se_a² + se_b²)`, with a small absolute floor for
    /// exact pairs.
    pub fn agrees_with(&self, other: &RevenueEstimate, k: f64) -> bool {
        let combined = (self.se * self.se + other.se * other.se).sqrt();
        (self.value - other.value).abs() <= (k * combined).max(1e-12)
    }
}

/// Number of multisets the exact engine visits for `pop` on `points` types.
pub fn enumeration_size<T: Scalar>(points: usize, pop: &PopulationModel<T>) -> u64 {
    pop.designer_support().fold(0u64, |a, (n, _)| a.saturating_add(multiset_count(points, n)))
}

fn check_budget(needed: u64, budget: u64) -> Result<()> {
    if needed > budget {
        Err(RevenueError::Budget { needed, budget })
    } else {
        Ok(())
    }
}

/// Expected revenue conditional on each buyer count: `(n, π_n, R_n)`.
pub fn revenue_by_count<T: Scalar>(
    mech: &Mechanism<T>,
    grid: &FiniteTypeModel<T>,
    pop: &PopulationModel<T>,
    budget: u64,
) -> Result<Vec<(usize, T, T)>> {
    check_budget(enumeration_size(grid.len(), pop), budget)?;
    let support = Support::from_grid(grid);
    pop.designer_support()
        .map(|(n, pi)| {
            let mut total = T::zero();
            for (m, w) in weighted_profiles(&support, n) {
                total = total + w * mech.outcome(&support.profile(&m))?.revenue();
            }
            Ok((n, pi.clone(), total))
        })
        .collect()
}

/// `Σ_n π_n E[Σ_i t_i]` by enumeration, in the scalar's arithmetic.
pub fn exact_revenue<T: Scalar>(
    mech: &Mechanism<T>,
    grid: &FiniteTypeModel<T>,
    pop: &PopulationModel<T>,
    budget: u64,
) -> Result<T> {
    Ok(revenue_by_count(mech, grid, pop, budget)?.into_iter().fold(T::zero(), |a, (_, pi, r)| a + pi * r))
}

pub fn expected_revenue_exact<T: Scalar>(
    mech: &Mechanism<T>,
    grid: &FiniteTypeModel<T>,
    pop: &PopulationModel<T>,
) -> Result<RevenueEstimate> {
    exact_revenue(mech, grid, pop, ENUMERATION_BUDGET).map(|v| RevenueEstimate::exact(&v))
}

/// Draws one valuation.
pub fn sample_type<R: Rng>(model: &TypeModel<f64>, rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    match model {
        TypeModel::Continuous(c) => c.quantile(u),
        TypeModel::Finite(g) => {
            let mut acc = 0.0;
            for (v, m) in g.grid().iter().zip(g.masses()) {
                acc += m;
                if u < acc {
                    return *v;
                }
            }
            *g.value(g.len() - 1)
        }
    }
}

/// Draws a buyer count from the designer prior.
pub fn sample_count<R: Rng>(pop: &PopulationModel<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (n, p) in pop.designer_support() {
        acc += p;
        last = n;
        if u < acc {
            return n;
        }
    }
    last
}

pub fn sample_profile<R: Rng>(model: &TypeModel<f64>, pop: &PopulationModel<f64>, rng: &mut R) -> Vec<f64> {
    let n = sample_count(pop, rng);
    (0..n).map(|_| sample_type(model, rng)).collect()
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Moments = Moments { count: 0, mean: 0.0, m2: 0.0 };

    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.count as f64 / count as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.count as f64 * other.count as f64) / count as f64;
        Moments { count, mean, m2 }
    }

    fn se(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
        }
    }
}

/// Means and standard errors of `outputs` statistics over `samples` draws.
/// Draws come in chunks of [`MC_CHUNK_SIZE`], chunk `c` using the ChaCha
/// stream `c` of `seed`; chunk results are merged in chunk order, so totals
/// do not depend on the thread count.
pub fn monte_carlo<F, E>(samples: u64, seed: u64, outputs: usize, draw: F) -> std::result::Result<Vec<(f64, f64)>, E>
where
    F: Fn(&mut ChaCha8Rng) -> std::result::Result<Vec<f64>, E> + Sync,
    E: Send,
{
    let chunks = samples.div_ceil(MC_CHUNK_SIZE);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = MC_CHUNK_SIZE.min(samples - c * MC_CHUNK_SIZE);
            let mut acc = vec![Moments::EMPTY; outputs];
            for _ in 0..count {
                for (m, x) in acc.iter_mut().zip(draw(&mut rng)?) {
                    m.push(x);
                }
            }
            Ok(acc)
        })
        .collect::<std::result::Result<Vec<_>, E>>()?;
    let total = parts.into_iter().fold(vec![Moments::EMPTY; outputs], |acc, part| {
        acc.into_iter().zip(part).map(|(a, b)| a.merge(b)).collect()
    });
    Ok(total.into_iter().map(|m| (m.mean, m.se())).collect())
}

pub fn expected_revenue_mc(
    mech: &Mechanism<f64>,
    model: &TypeModel<f64>,
    pop: &PopulationModel<f64>,
    samples: u64,
    seed: u64,
) -> Result<RevenueEstimate> {
    Ok(expected_revenue_mc_paired(&[mech], model, pop, samples, seed)?.remove(0))
}

/// Revenues of several mechanisms on common draws.
pub fn expected_revenue_mc_paired(
    mechs: &[&Mechanism<f64>],
    model: &TypeModel<f64>,
    pop: &PopulationModel<f64>,
    samples: u64,
    seed: u64,
) -> Result<Vec<RevenueEstimate>> {
    if samples == 0 {
        return Err(RevenueError::NoSamples);
    }
    let stats = monte_carlo(samples, seed, mechs.len(), |rng| {
        let profile = sample_profile(model, pop, rng);
        mechs.iter().map(|m| Ok(m.outcome(&profile)?.revenue())).collect::<Result<Vec<f64>>>()
    })?;
    Ok(stats
        .into_iter()
        .map(|(value, se)| RevenueEstimate { value, se, samples, seed: Some(seed), exact: None })
        .collect())
}

/// Expected win probability and payment of one buyer count.
#[derive(Debug, Clone, PartialEq)]
pub struct InterimComponent<T> {
    pub n: usize,
    pub weight: T,
    pub q: T,
    pub t: T,
    pub u: T,
}

/// Interim quantities of a type under the participant prior.
#[derive(Debug, Clone, PartialEq)]
pub struct InterimQuantities<T> {
    pub theta: T,
    pub q: T,
    pub t: T,
    pub u: T,
    pub se: Option<f64>,
    pub per_n: Vec<InterimComponent<T>>,
}

impl<T: Scalar> InterimQuantities<T> {
    fn aggregate(theta: T, per_n: Vec<InterimComponent<T>>, se: Option<f64>) -> Self {
        let (q, t) = per_n.iter().fold((T::zero(), T::zero()), |(q, t), c| {
            (q + c.weight.clone() * c.q.clone(), t + c.weight.clone() * c.t.clone())
        });
        let u = theta.clone() * q.clone() - t.clone();
        Self { theta, q, t, u, se, per_n }
    }
}

/// Sum of `(q, t)` over the first `own.len()` bidders of the profile
/// `own ++ others ++ extra`, in expectation over `others` i.i.d. opponents.
pub(crate) fn interim_outcome<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    others: usize,
    own: &[T],
    extra: &[T],
) -> Result<(T, T)> {
    match model {
        TypeModel::Finite(g) => {
            let support = Support::from_grid(g);
            interim_on_support(mech, &support, others, own, extra)
        }
        TypeModel::Continuous(c) => {
            let (q, t) = interim_quadrature(mech, c, others, own, extra)?;
            Ok((T::from_f64_lossy(q), T::from_f64_lossy(t)))
        }
    }
}

pub(crate) fn interim_on_support<T: Scalar>(
    mech: &Mechanism<T>,
    support: &Support<T>,
    others: usize,
    own: &[T],
    extra: &[T],
) -> Result<(T, T)> {
    let mut q = T::zero();
    let mut t = T::zero();
    let mut profile: Vec<T> = Vec::with_capacity(own.len() + others + extra.len());
    for (m, w) in weighted_profiles(support, others) {
        profile.clear();
        profile.extend(own.iter().cloned());
        profile.extend(m.iter().map(|&k| support.values[k].clone()));
        profile.extend(extra.iter().cloned());
        let (dq, dt) = mech.outcome(&profile)?.totals(0..own.len());
        q = q + w.clone() * dq;
        t = t + w * dt;
    }
    Ok((q, t))
}

fn lift<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|x| T::from_f64_lossy(*x)).collect()
}

/// Continuous analogue of [`interim_on_support`]: the opponents enter only
/// through the statistic the mechanism's outcome depends on.
pub(crate) fn interim_quadrature<T: Scalar>(
    mech: &Mechanism<T>,
    model: &ContinuousModel,
    others: usize,
    own: &[T],
    extra: &[T],
) -> Result<(f64, f64)> {
    let own_f: Vec<f64> = own.iter().map(|x| x.as_f64()).collect();
    let extra_f: Vec<f64> = extra.iter().map(|x| x.as_f64()).collect();
    let total = own.len() + others + extra.len();
    let evaluate = |filler: &[f64]| -> Result<(f64, f64)> {
        let mut profile: Vec<f64> = own_f.clone();
        profile.extend_from_slice(filler);
        profile.extend_from_slice(&extra_f);
        let (q, t) = mech.outcome(&lift::<T>(&profile))?.totals(0..own.len());
        Ok((q.as_f64(), t.as_f64()))
    };
    if others == 0 {
        return evaluate(&[]);
    }
    match mech.reduction(total)? {
        Reduction::AcceptCount(price) => {
            let accept = 1.0 - model.cdf(price);
            let mut acc = (0.0, 0.0);
            for j in 0..=others {
                let w = binomial::<f64>(others, j) * accept.powi(j as i32) * (1.0 - accept).powi((others - j) as i32);
                if w == 0.0 {
                    continue;
                }
                let mut filler = vec![1.0; j];
                filler.extend(std::iter::repeat_n(0.0, others - j));
                let (q, t) = evaluate(&filler)?;
                acc.0 += w * q;
                acc.1 += w * t;
            }
            Ok(acc)
        }
        Reduction::MaxOfOthers => {
            let reserve = mech.resolve(total)?.reserve().as_f64();
            let mut breaks: Vec<f64> = own_f.iter().chain(&extra_f).copied().collect();
            breaks.push(reserve);
            let density = |y: f64| others as f64 * model.cdf(y).powi(others as i32 - 1) * model.pdf(y);
            let cell = std::cell::RefCell::new(None::<MechanismError>);
            let at = |y: f64, pick: fn((f64, f64)) -> f64| -> f64 {
                let mut filler = vec![0.0; others];
                filler[0] = y;
                match evaluate(&filler) {
                    Ok(v) => pick(v) * density(y),
                    Err(RevenueError::Mechanism(e)) => {
                        cell.borrow_mut().get_or_insert(e);
                        0.0
                    }
                    Err(_) => 0.0,
                }
            };
            let q = integrate_piecewise(|y| at(y, |v| v.0), 0.0, 1.0, &breaks, QUADRATURE_TOL).value;
            let t = integrate_piecewise(|y| at(y, |v| v.1), 0.0, 1.0, &breaks, QUADRATURE_TOL).value;
            if let Some(e) = cell.into_inner() {
                return Err(e.into());
            }
            Ok((q, t))
        }
    }
}

/// Expected payments collected from the `n` buyers when the seller adds the
/// reports `extra`.
pub(crate) fn buyer_revenue<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    n: usize,
    extra: &[T],
) -> Result<T> {
    if n == 0 {
        return Ok(T::zero());
    }
    match model {
        TypeModel::Finite(g) => buyer_revenue_on_support(mech, &Support::from_grid(g), n, extra),
        TypeModel::Continuous(c) => {
            let reserve = mech.resolve(n + extra.len())?.reserve().as_f64();
            let mut breaks: Vec<f64> = extra.iter().map(|x| x.as_f64()).collect();
            breaks.push(reserve);
            let cell = std::cell::RefCell::new(None::<RevenueError>);
            let value = integrate_piecewise(
                |x| match interim_quadrature(mech, c, n - 1, &[T::from_f64_lossy(x)], extra) {
                    Ok((_, t)) => t * c.pdf(x),
                    Err(e) => {
                        cell.borrow_mut().get_or_insert(e);
                        0.0
                    }
                },
                0.0,
                1.0,
                &breaks,
                QUADRATURE_TOL,
            )
            .value;
            if let Some(e) = cell.into_inner() {
                return Err(e);
            }
            Ok(T::from_f64_lossy(n as f64 * value))
        }
    }
}

pub(crate) fn buyer_revenue_on_support<T: Scalar>(
    mech: &Mechanism<T>,
    support: &Support<T>,
    n: usize,
    extra: &[T],
) -> Result<T> {
    let mut total = T::zero();
    let mut profile = Vec::with_capacity(n + extra.len());
    for (m, w) in weighted_profiles(support, n) {
        profile.clear();
        profile.extend(m.iter().map(|&k| support.values[k].clone()));
        profile.extend(extra.iter().cloned());
        total = total + w * mech.outcome(&profile)?.totals(0..n).1;
    }
    Ok(total)
}

/// `Q`, `T` and `U` of type `theta`, per buyer count and aggregated with
/// the participant prior. Grids are enumerated exactly; continuous models
/// integrate over the opponents' relevant order statistic.
pub fn interim_quantities<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    theta: &T,
) -> Result<InterimQuantities<T>> {
    let per_n = pop
        .participant_support()
        .map(|(n, p)| {
            let (q, t) = interim_outcome(mech, model, n - 1, std::slice::from_ref(theta), &[])?;
            let u = theta.clone() * q.clone() - t.clone();
            Ok(InterimComponent { n, weight: p.clone(), q, t, u })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InterimQuantities::aggregate(theta.clone(), per_n, None))
}

/// Sampling estimate of [`interim_quantities`]; `se` is the standard error of
/// the aggregated payment.
pub fn interim_quantities_mc(
    mech: &Mechanism<f64>,
    model: &TypeModel<f64>,
    pop: &PopulationModel<f64>,
    theta: f64,
    samples: u64,
    seed: u64,
) -> Result<InterimQuantities<f64>> {
    if samples == 0 {
        return Err(RevenueError::NoSamples);
    }
    let mut per_n = Vec::new();
    let mut var = 0.0;
    for (i, (n, p)) in pop.participant_support().enumerate() {
        let stats = monte_carlo(samples, seed.wrapping_add(i as u64), 2, |rng| {
            let mut profile = vec![theta];
            profile.extend((1..n).map(|_| sample_type(model, rng)));
            let out = mech.outcome(&profile)?;
            Ok::<_, RevenueError>(vec![out.q[0], out.t[0]])
        })?;
        let (q, t) = (stats[0].0, stats[1].0);
        var += p * p * stats[1].1 * stats[1].1;
        per_n.push(InterimComponent { n, weight: *p, q, t, u: theta * q - t });
    }
    Ok(InterimQuantities::aggregate(theta, per_n, Some(var.sqrt())))
}

/// Expected virtual surplus of the mechanism's allocation plus the zero-type
/// payments: `Σ_n π_n E[Σ_i q_i v(θ_i)] + E|B| · t0`.
pub fn dark_revenue_formula<T: Scalar>(
    mech: &Mechanism<T>,
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
    t0: &T,
) -> Result<T> {
    if *t0 > T::zero() {
        return Err(RevenueError::PositiveZeroPayment(t0.to_string()));
    }
    check_regular(model)?;
    let mut surplus = T::zero();
    match model {
        TypeModel::Finite(g) => {
            check_budget(enumeration_size(g.len(), pop), ENUMERATION_BUDGET)?;
            let support = Support::from_grid(g);
            let virtual_values = g.virtual_values();
            for (n, pi) in pop.designer_support() {
                let mut acc = T::zero();
                for (m, w) in weighted_profiles(&support, n) {
                    let out = mech.outcome(&support.profile(&m))?;
                    let s = m
                        .iter()
                        .zip(&out.q)
                        .fold(T::zero(), |a, (&k, q)| a + q.clone() * virtual_values[k].clone());
                    acc = acc + w * s;
                }
                surplus = surplus + pi.clone() * acc;
            }
        }
        TypeModel::Continuous(c) => {
            for (n, pi) in pop.designer_support() {
                if n == 0 {
                    continue;
                }
                let reserve = mech.resolve(n)?.reserve().as_f64();
                let cell = std::cell::RefCell::new(None::<RevenueError>);
                let value = integrate_piecewise(
                    |x| match interim_quadrature(mech, c, n - 1, &[T::from_f64_lossy(x)], &[]) {
                        Ok((q, _)) if q != 0.0 => q * c.virtual_value(x).unwrap_or(0.0) * c.pdf(x),
                        Ok(_) => 0.0,
                        Err(e) => {
                            cell.borrow_mut().get_or_insert(e);
                            0.0
                        }
                    },
                    0.0,
                    1.0,
                    &[reserve],
                    QUADRATURE_TOL,
                )
                .value;
                if let Some(e) = cell.into_inner() {
                    return Err(e);
                }
                surplus = surplus + pi.clone() * T::from_f64_lossy(n as f64 * value);
            }
        }
    }
    Ok(surplus + pop.expected_buyers() * t0.clone())
}

/// `price · Σ_n π_n (1 - Pr[θ < price]^n)`.
pub fn posted_price_revenue<T: Scalar>(model: &TypeModel<T>, pop: &PopulationModel<T>, price: &T) -> T {
    let below = match model {
        TypeModel::Finite(g) => g
            .grid()
            .iter()
            .zip(g.masses())
            .filter(|(v, _)| *v < price)
            .fold(T::zero(), |a, (_, m)| a + m.clone()),
        TypeModel::Continuous(c) => T::from_f64_lossy(c.cdf(price.as_f64())),
    };
    let sold = pop.designer_support().fold(T::zero(), |a, (n, pi)| a + pi.clone() * (T::one() - below.powu(n)));
    price.clone() * sold
}

/// Revenue-maximizing posted price and its revenue. Grids are searched
/// exhaustively; ties go to the lower price.
pub fn optimal_posted_price<T: Scalar>(
    model: &TypeModel<T>,
    pop: &PopulationModel<T>,
) -> std::result::Result<(T, T), DistributionError> {
    match model {
        TypeModel::Finite(g) => {
            let mut best = (g.value(0).clone(), posted_price_revenue(model, pop, g.value(0)));
            for v in g.grid().iter().skip(1) {
                let r = posted_price_revenue(model, pop, v);
                if r > best.1 {
                    best = (v.clone(), r);
                }
            }
            Ok(best)
        }
        TypeModel::Continuous(c) => {
            let weights: Vec<(usize, f64)> = pop.designer_support().map(|(n, p)| (n, p.as_f64())).collect();
            let revenue =
                |p: f64| p * weights.iter().map(|(n, w)| w * (1.0 - c.cdf(p).powi(*n as i32))).sum::<f64>();
            let (p, r) = golden_section_max(revenue, 0.0, 1.0, GOLDEN_SECTION_TOL);
            Ok((T::from_f64_lossy(p), T::from_f64_lossy(r)))
        }
    }
}
