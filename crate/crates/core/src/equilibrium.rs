//! Symmetric equilibrium bids of first-price formats.
//!
//! Continuous models use the integral forms of the lit and dark bid
//! functions. Finite grids use the tie-corrected fixed payment pinned down by
//! binding downward local incentive constraints, and its dark aggregate.

use rayon::prelude::*;
use thiserror::Error;

use crate::defaults::BID_LATTICE_INTERVALS;
use crate::distributions::{ContinuousModel, DistributionError, FiniteTypeModel, PopulationModel};
use crate::quadrature::integrate;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("valuation {0} lies outside [0, 1]")]
    OutOfRange(f64),
    #[error("bidder count must be at least 1")]
    NoBidders,
    #[error("population support is empty")]
    EmptyPopulation,
    #[error("type index {index} lies below the reserve index {reserve}")]
    BelowReserve { index: usize, reserve: usize },
    #[error("type index {0} is outside the grid")]
    IndexOutOfRange(usize),
    #[error("{0} is not a point of the type grid")]
    OffGrid(String),
    #[error("bid table covers up to {max} bidders, got {n}")]
    TableRange { n: usize, max: usize },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

type Result<T> = std::result::Result<T, EquilibriumError>;

fn check_unit(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(EquilibriumError::OutOfRange(theta))
    }
}

/// `θ - ∫_ρ^θ G(x)/G(θ) dx` for a nondecreasing weight `G`, zero below `ρ`.
fn shade(theta: f64, reserve: f64, weight: impl Fn(f64) -> f64) -> f64 {
    if theta < reserve {
        return 0.0;
    }
    let top = weight(theta);
    if top <= 0.0 {
        return theta;
    }
    theta - integrate(|x| weight(x) / top, reserve, theta, &[])
}

/// Lit first-price equilibrium bid with `n` bidders and reserve `reserve`.
pub fn lit_first_price_bid(model: &ContinuousModel, n: usize, reserve: f64, theta: f64) -> Result<f64> {
    check_unit(theta)?;
    if n == 0 {
        return Err(EquilibriumError::NoBidders);
    }
    if n == 1 {
        return Ok(if theta < reserve { 0.0 } else { reserve });
    }
    Ok(shade(theta, reserve, |x| model.cdf(x).powi(n as i32 - 1)))
}

fn participant_weights<T: Scalar>(pop: &PopulationModel<T>) -> Result<Vec<(usize, f64)>> {
    let weights: Vec<(usize, f64)> =
        pop.participant_support().map(|(n, p)| (n, p.as_f64())).filter(|(_, p)| *p > 0.0).collect();
    if weights.is_empty() {
        Err(EquilibriumError::EmptyPopulation)
    } else {
        Ok(weights)
    }
}

fn mixture(model: &ContinuousModel, weights: &[(usize, f64)], x: f64) -> f64 {
    let f = model.cdf(x);
    weights.iter().map(|(n, p)| p * f.powi(*n as i32 - 1)).sum()
}

/// Dark first-price equilibrium bid: the lit formula with `F^{n-1}` replaced
/// by its average under the participant prior.
pub fn dark_first_price_bid<T: Scalar>(
    model: &ContinuousModel,
    pop: &PopulationModel<T>,
    reserve: f64,
    theta: f64,
) -> Result<f64> {
    check_unit(theta)?;
    let weights = participant_weights(pop)?;
    Ok(shade(theta, reserve, |x| mixture(model, &weights, x)))
}

/// `Σ_{m=r+1}^{k} gap_m (F_{m-1}^n - F_{m-2}^n) / (n f_{m-1} F_{k-1}^{n-1})`
/// in zero-based indices, with the powers normalized by `F_{k-1}`.
fn information_rent<T: Scalar>(grid: &FiniteTypeModel<T>, n: usize, k: usize, reserve: usize) -> T {
    let top = grid.cdf_below(k);
    let nn = T::from_count(n);
    let mut rent = T::zero();
    for m in reserve + 1..=k {
        let gap = grid.value(m).clone() - grid.value(m - 1).clone();
        let upper = grid.cdf_below(m);
        let lower = grid.cdf_below(m - 1);
        let ratio_up = (upper.clone() / top.clone()).powu(n - 1);
        let ratio_low = (lower.clone() / top.clone()).powu(n - 1);
        let spread = upper * ratio_up - lower * ratio_low;
        rent = rent + gap * spread / (nn.clone() * grid.mass(m - 1).clone());
    }
    rent
}

/// Fixed payment of a unique winner of type index `k` (zero-based) in the
/// tie-corrected first-price auction with `n` bidders and reserve index
/// `reserve`.
pub fn tie_corrected_fp_payment_at<T: Scalar>(
    grid: &FiniteTypeModel<T>,
    n: usize,
    k: usize,
    reserve: usize,
) -> Result<T> {
    if n == 0 {
        return Err(EquilibriumError::NoBidders);
    }
    if k >= grid.len() {
        return Err(EquilibriumError::IndexOutOfRange(k));
    }
    if k < reserve {
        return Err(EquilibriumError::BelowReserve { index: k, reserve });
    }
    if k == reserve {
        return Ok(grid.value(k).clone());
    }
    Ok(grid.value(k).clone() - information_rent(grid, n, k, reserve))
}

/// [`tie_corrected_fp_payment_at`] at the optimal reserve of the grid.
pub fn tie_corrected_fp_payment<T: Scalar>(grid: &FiniteTypeModel<T>, n: usize, k: usize) -> Result<T> {
    let reserve = optimal_reserve_index(grid)?;
    tie_corrected_fp_payment_at(grid, n, k, reserve)
}

pub(crate) fn optimal_reserve_index<T: Scalar>(grid: &FiniteTypeModel<T>) -> Result<usize> {
    let model = crate::distributions::TypeModel::Finite(grid.clone());
    Ok(crate::distributions::optimal_reserve(&model)?.index.expect("grid reserve has an index"))
}

/// Dark aggregate of the tie-corrected payments: the average of `g^n`
/// weighted by the probability `p(n) F_{k-1}^{n-1}` of winning outright.
pub fn dark_tie_corrected_payment<T: Scalar>(
    grid: &FiniteTypeModel<T>,
    pop: &PopulationModel<T>,
    k: usize,
    reserve: usize,
) -> Result<T> {
    if k >= grid.len() {
        return Err(EquilibriumError::IndexOutOfRange(k));
    }
    if k < reserve {
        return Err(EquilibriumError::BelowReserve { index: k, reserve });
    }
    if k == reserve {
        return Ok(grid.value(k).clone());
    }
    let below = grid.cdf_below(k);
    let mut num = T::zero();
    let mut den = T::zero();
    for (n, p) in pop.participant_support() {
        let w = p.clone() * below.powu(n - 1);
        num = num + w.clone() * tie_corrected_fp_payment_at(grid, n, k, reserve)?;
        den = den + w;
    }
    if den.is_zero() {
        return Err(EquilibriumError::EmptyPopulation);
    }
    Ok(num / den)
}

/// Piecewise-linear interpolant of a function on `[start, 1]` with evenly
/// spaced nodes. Zero below `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeCurve {
    start: f64,
    step: f64,
    values: Vec<f64>,
}

impl LatticeCurve {
    pub fn build(start: f64, intervals: usize, f: impl Fn(f64) -> f64 + Sync) -> Self {
        let intervals = intervals.max(1);
        let step = (1.0 - start) / intervals as f64;
        let values = (0..=intervals).into_par_iter().map(|i| f(node(start, step, i, intervals))).collect();
        Self { start, step, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < self.start {
            return 0.0;
        }
        let last = self.values.len() - 1;
        if self.step <= 0.0 {
            return self.values[last];
        }
        let pos = (x - self.start) / self.step;
        let i = (pos.floor() as usize).min(last.saturating_sub(1));
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        if last == 0 {
            return self.values[0];
        }
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.values.len() - 1;
        self.values.iter().enumerate().map(move |(i, v)| (node(self.start, self.step, i, n), *v))
    }
}

fn node(start: f64, step: f64, i: usize, intervals: usize) -> f64 {
    if i == intervals {
        1.0
    } else {
        start + step * i as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BidKind {
    LitFirstPrice,
    DarkFirstPrice,
    TieCorrectedFirstPrice,
}

#[derive(Debug, Clone)]
enum BidSource<T> {
    ContinuousLit { model: ContinuousModel, curves: Vec<LatticeCurve> },
    ContinuousDark { model: ContinuousModel, weights: Vec<(usize, f64)>, curve: LatticeCurve },
    GridLit { grid: FiniteTypeModel<T>, table: Vec<Vec<T>> },
    GridDark { grid: FiniteTypeModel<T>, pop: PopulationModel<T>, table: Vec<T> },
}

/// A first-price bid schedule with a memoized table and an exact path.
#[derive(Debug, Clone)]
pub struct BidFunction<T> {
    kind: BidKind,
    reserve: T,
    reserve_index: Option<usize>,
    source: BidSource<T>,
}

impl<T: Scalar> BidFunction<T> {
    /// Lit bids `β^n` for `n = 1..=max_bidders`, tabulated on `intervals`
    /// steps above the reserve.
    pub fn lit_continuous(model: ContinuousModel, reserve: f64, max_bidders: usize, intervals: usize) -> Result<Self> {
        if max_bidders == 0 {
            return Err(EquilibriumError::NoBidders);
        }
        check_unit(reserve)?;
        let curves = (1..=max_bidders)
            .map(|n| {
                LatticeCurve::build(reserve, intervals, |x| {
                    lit_first_price_bid(&model, n, reserve, x).expect("lattice lies in [0, 1]")
                })
            })
            .collect();
        Ok(Self {
            kind: BidKind::LitFirstPrice,
            reserve: T::from_f64_lossy(reserve),
            reserve_index: None,
            source: BidSource::ContinuousLit { model, curves },
        })
    }

    pub fn dark_continuous(
        model: ContinuousModel,
        pop: &PopulationModel<T>,
        reserve: f64,
        intervals: usize,
    ) -> Result<Self> {
        check_unit(reserve)?;
        let weights = participant_weights(pop)?;
        let curve = LatticeCurve::build(reserve, intervals, |x| shade(x, reserve, |y| mixture(&model, &weights, y)));
        Ok(Self {
            kind: BidKind::DarkFirstPrice,
            reserve: T::from_f64_lossy(reserve),
            reserve_index: None,
            source: BidSource::ContinuousDark { model, weights, curve },
        })
    }

    /// Tie-corrected payments `g^n` on a grid for `n = 1..=max_bidders`.
    pub fn lit_grid(grid: &FiniteTypeModel<T>, reserve_index: usize, max_bidders: usize) -> Result<Self> {
        if max_bidders == 0 {
            return Err(EquilibriumError::NoBidders);
        }
        let table = (1..=max_bidders)
            .map(|n| grid_row(grid, reserve_index, |k| tie_corrected_fp_payment_at(grid, n, k, reserve_index)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: BidKind::TieCorrectedFirstPrice,
            reserve: grid.value(reserve_index).clone(),
            reserve_index: Some(reserve_index),
            source: BidSource::GridLit { grid: grid.clone(), table },
        })
    }

    pub fn dark_grid(grid: &FiniteTypeModel<T>, pop: &PopulationModel<T>, reserve_index: usize) -> Result<Self> {
        let table = grid_row(grid, reserve_index, |k| dark_tie_corrected_payment(grid, pop, k, reserve_index))?;
        Ok(Self {
            kind: BidKind::DarkFirstPrice,
            reserve: grid.value(reserve_index).clone(),
            reserve_index: Some(reserve_index),
            source: BidSource::GridDark { grid: grid.clone(), pop: pop.clone(), table },
        })
    }

    pub fn kind(&self) -> BidKind {
        self.kind
    }

    pub fn reserve(&self) -> &T {
        &self.reserve
    }

    pub fn reserve_index(&self) -> Option<usize> {
        self.reserve_index
    }

    /// Bids do not depend on the number of bidders.
    pub fn is_dark(&self) -> bool {
        matches!(self.source, BidSource::ContinuousDark { .. } | BidSource::GridDark { .. })
    }

    /// Largest bidder count covered by the table; `None` when unbounded.
    pub fn max_bidders(&self) -> Option<usize> {
        match &self.source {
            BidSource::ContinuousLit { curves, .. } => Some(curves.len()),
            BidSource::GridLit { table, .. } => Some(table.len()),
            _ => None,
        }
    }

    fn grid_index(grid: &FiniteTypeModel<T>, theta: &T) -> Result<usize> {
        grid.index_of(theta).ok_or_else(|| EquilibriumError::OffGrid(theta.to_string()))
    }

    /// Tabulated bid of type `theta` among `n` bidders.
    pub fn bid(&self, theta: &T, n: usize) -> Result<T> {
        if n == 0 {
            return Err(EquilibriumError::NoBidders);
        }
        if let Some(max) = self.max_bidders() {
            if n > max {
                return Err(EquilibriumError::TableRange { n, max });
            }
        }
        match &self.source {
            BidSource::ContinuousLit { curves, .. } => Ok(T::from_f64_lossy(curves[n - 1].eval(theta.as_f64()))),
            BidSource::ContinuousDark { curve, .. } => Ok(T::from_f64_lossy(curve.eval(theta.as_f64()))),
            BidSource::GridLit { grid, table } => Ok(table[n - 1][Self::grid_index(grid, theta)?].clone()),
            BidSource::GridDark { grid, table, .. } => Ok(table[Self::grid_index(grid, theta)?].clone()),
        }
    }

    /// Bid evaluated from its defining formula, bypassing the table. Lit
    /// schedules accept any `n` here.
    pub fn exact(&self, theta: &T, n: usize) -> Result<T> {
        let reserve = self.reserve.as_f64();
        match &self.source {
            BidSource::ContinuousLit { model, .. } => {
                lit_first_price_bid(model, n, reserve, theta.as_f64()).map(T::from_f64_lossy)
            }
            BidSource::ContinuousDark { model, weights, .. } => {
                check_unit(theta.as_f64())?;
                Ok(T::from_f64_lossy(shade(theta.as_f64(), reserve, |y| mixture(model, weights, y))))
            }
            BidSource::GridLit { grid, .. } => {
                let k = Self::grid_index(grid, theta)?;
                let r = self.reserve_index.expect("grid schedule");
                if k < r {
                    Ok(T::zero())
                } else {
                    tie_corrected_fp_payment_at(grid, n, k, r)
                }
            }
            BidSource::GridDark { grid, pop, .. } => {
                let k = Self::grid_index(grid, theta)?;
                let r = self.reserve_index.expect("grid schedule");
                if k < r {
                    Ok(T::zero())
                } else {
                    dark_tie_corrected_payment(grid, pop, k, r)
                }
            }
        }
    }
}

fn grid_row<T: Scalar>(
    grid: &FiniteTypeModel<T>,
    reserve: usize,
    f: impl Fn(usize) -> Result<T>,
) -> Result<Vec<T>> {
    (0..grid.len()).map(|k| if k < reserve { Ok(T::zero()) } else { f(k) }).collect()
}

/// Default lattice size for memoized bids.
pub fn default_intervals() -> usize {
    BID_LATTICE_INTERVALS
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use std::collections::BTreeMap;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    fn third_grid() -> FiniteTypeModel<Q> {
        FiniteTypeModel::new(vec![q(0, 1), q(1, 2), q(1, 1)], vec![q(1, 3); 3]).unwrap()
    }

    fn half_half() -> PopulationModel<f64> {
        PopulationModel::from_participant_prior(BTreeMap::from([(1, 0.5), (2, 0.5)])).unwrap()
    }

    #[test]
    fn lit_bid_examples() {
        let u = ContinuousModel::Uniform;
        assert!((lit_first_price_bid(&u, 3, 0.0, 0.6).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(lit_first_price_bid(&u, 1, 0.5, 0.8).unwrap(), 0.5);
        let analytic = 0.8 - (0.8f64.powi(2) - 0.25) / 2.0 / 0.8;
        assert!((analytic - 0.55625).abs() < 1e-15);
        assert!((lit_first_price_bid(&u, 2, 0.5, 0.8).unwrap() - analytic).abs() < 1e-10);
        assert_eq!(lit_first_price_bid(&u, 4, 0.5, 0.3).unwrap(), 0.0);
        assert!(lit_first_price_bid(&u, 2, 0.0, 1.2).is_err());
        assert!(lit_first_price_bid(&u, 0, 0.0, 0.5).is_err());
    }

    #[test]
    fn lit_bids_increase_with_n_and_approach_value() {
        let u = ContinuousModel::Uniform;
        for theta in [0.55, 0.7, 0.9, 1.0] {
            let bids: Vec<f64> = (1..=12).map(|n| lit_first_price_bid(&u, n, 0.5, theta).unwrap()).collect();
            assert!(bids.windows(2).all(|w| w[1] > w[0]), "{theta}: {bids:?}");
            assert!(bids.iter().all(|b| *b <= theta));
            let far = lit_first_price_bid(&u, 200, 0.5, theta).unwrap();
            assert!(far > bids[11] && theta - far < 0.01);
        }
    }

    #[test]
    fn dark_bid_closed_form_and_degenerate_cases() {
        let u = ContinuousModel::Uniform;
        let pop = half_half();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let b = dark_first_price_bid(&u, &pop, 0.0, t).unwrap();
            assert!((b - t * t / (2.0 * (1.0 + t))).abs() < 1e-10, "{t}");
        }
        assert!((dark_first_price_bid(&u, &pop, 0.0, 1.0).unwrap() - 0.25).abs() < 1e-12);
        let solo = PopulationModel::<f64>::fixed(1).unwrap();
        assert!(dark_first_price_bid(&u, &solo, 0.0, 0.7).unwrap().abs() < 1e-12);
        let three = PopulationModel::<f64>::fixed(3).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let d = dark_first_price_bid(&u, &three, 0.3, t).unwrap();
            let l = lit_first_price_bid(&u, 3, 0.3, t).unwrap();
            assert!((d - l).abs() < 1e-12);
        }
    }

    #[test]
    fn tie_corrected_payments_on_three_point_grid() {
        let g = third_grid();
        for n in 1..6 {
            assert_eq!(tie_corrected_fp_payment(&g, n, 1).unwrap(), q(1, 2));
        }
        assert_eq!(tie_corrected_fp_payment(&g, 1, 2).unwrap(), q(1, 2));
        assert_eq!(tie_corrected_fp_payment(&g, 2, 2).unwrap(), q(5, 8));
        assert_eq!(tie_corrected_fp_payment(&g, 3, 2).unwrap(), q(17, 24));
        assert!(matches!(
            tie_corrected_fp_payment(&g, 2, 0),
            Err(EquilibriumError::BelowReserve { index: 0, reserve: 1 })
        ));
    }

    #[test]
    fn tie_corrected_payments_converge_to_type() {
        let g = FiniteTypeModel::<f64>::new(vec![0.0, 0.5, 1.0], vec![1.0 / 3.0; 3]).unwrap();
        let far = tie_corrected_fp_payment(&g, 10_000, 2).unwrap();
        assert!((far - 1.0).abs() < 1e-3, "{far}");
        assert!(far < 1.0);
    }

    #[test]
    fn dark_tie_corrected_payment_is_weighted_average() {
        let g = third_grid();
        let pop = PopulationModel::<Q>::fixed(2).unwrap();
        assert_eq!(dark_tie_corrected_payment(&g, &pop, 2, 1).unwrap(), q(5, 8));
        let pop = PopulationModel::<Q>::from_participant_prior(BTreeMap::from([(1, q(1, 2)), (2, q(1, 2))])).unwrap();
        let expected = (q(1, 2) * q(1, 2) + q(1, 2) * q(2, 3) * q(5, 8)) / (q(1, 2) + q(1, 2) * q(2, 3));
        assert_eq!(dark_tie_corrected_payment(&g, &pop, 2, 1).unwrap(), expected);
    }

    #[test]
    fn lattice_curve_interpolates_and_respects_reserve() {
        let c = LatticeCurve::build(0.5, 10, |x| x * 2.0);
        assert_eq!(c.eval(0.4), 0.0);
        assert!((c.eval(0.5) - 1.0).abs() < 1e-15);
        assert!((c.eval(0.77) - 1.54).abs() < 1e-12);
        assert!((c.eval(1.0) - 2.0).abs() < 1e-15);
        assert_eq!(c.nodes().count(), 11);
    }

    #[test]
    fn tabulated_bids_track_exact_bids() {
        let pop = half_half();
        let dark = BidFunction::<f64>::dark_continuous(ContinuousModel::Uniform, &pop, 0.5, 4000).unwrap();
        let lit = BidFunction::<f64>::lit_continuous(ContinuousModel::Uniform, 0.5, 4, 4000).unwrap();
        for i in 0..=97 {
            let t = 0.03 + i as f64 / 100.0;
            let t = t.min(1.0);
            assert!((dark.bid(&t, 7).unwrap() - dark.exact(&t, 7).unwrap()).abs() < 1e-7);
            assert!((lit.bid(&t, 3).unwrap() - lit.exact(&t, 3).unwrap()).abs() < 1e-7);
        }
        assert!(matches!(lit.bid(&0.7, 5), Err(EquilibriumError::TableRange { n: 5, max: 4 })));
        assert!(dark.is_dark() && !lit.is_dark());
    }

    #[test]
    fn grid_tables() {
        let g = third_grid();
        let lit = BidFunction::lit_grid(&g, 1, 3).unwrap();
        assert_eq!(lit.bid(&q(1, 1), 3).unwrap(), q(17, 24));
        assert_eq!(lit.bid(&q(0, 1), 3).unwrap(), q(0, 1));
        assert_eq!(lit.exact(&q(1, 1), 2).unwrap(), q(5, 8));
        assert!(lit.bid(&q(1, 4), 2).is_err());
        assert_eq!(lit.kind(), BidKind::TieCorrectedFirstPrice);
    }
}
