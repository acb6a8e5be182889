//! Type distributions, bidder-count priors, virtual valuations and reserves.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::defaults::{BISECTION_TOL, PROBABILITY_SUM_TOL, REGULARITY_PROBES};
use crate::quadrature::bisect_threshold;
use crate::scalar::{binomial, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("invalid type grid: {0}")]
    InvalidGrid(String),
    #[error("invalid masses: {0}")]
    InvalidMasses(String),
    #[error("{0} is not a point of the type grid")]
    OffGrid(String),
    #[error("valuation {0} lies outside [0, 1]")]
    OutOfRange(f64),
    #[error("unsupported distribution: density vanishes at {0}")]
    ZeroDensity(f64),
    #[error("distribution is not regular: virtual valuation fails to increase near {0}")]
    NotRegular(String),
    #[error("invalid population model: {0}")]
    InvalidPopulation(String),
}

type Result<T> = std::result::Result<T, DistributionError>;

/// Continuous valuation families on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContinuousModel {
    Uniform,
    /// `F(x) = x^a`. Regular for `a >= 1`.
    Power { exponent: f64 },
}

impl ContinuousModel {
    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match *self {
            ContinuousModel::Uniform => 1.0,
            ContinuousModel::Power { exponent } => exponent * x.powf(exponent - 1.0),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        match *self {
            ContinuousModel::Uniform => x,
            ContinuousModel::Power { exponent } => x.powf(exponent),
        }
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            ContinuousModel::Uniform => u,
            ContinuousModel::Power { exponent } => u.powf(1.0 / exponent),
        }
    }

    pub fn virtual_value(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) || x.is_nan() {
            return Err(DistributionError::OutOfRange(x));
        }
        let density = self.pdf(x);
        if density <= 0.0 {
            return Err(DistributionError::ZeroDensity(x));
        }
        Ok(x - (1.0 - self.cdf(x)) / density)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ContinuousModel::Uniform => Ok(()),
            ContinuousModel::Power { exponent } if exponent > 0.0 && exponent.is_finite() => Ok(()),
            ContinuousModel::Power { exponent } => {
                Err(DistributionError::InvalidMasses(format!("power exponent {exponent} must be positive")))
            }
        }
    }
}

/// Finite type space `0 = θ^1 < ... < θ^K <= 1` with positive point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTypeModel<T> {
    grid: Vec<T>,
    masses: Vec<T>,
    cumulative: Vec<T>,
}

impl<T: Scalar> FiniteTypeModel<T> {
    pub fn new(grid: Vec<T>, masses: Vec<T>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(DistributionError::InvalidGrid("at least two types are required".into()));
        }
        if grid.len() != masses.len() {
            return Err(DistributionError::InvalidMasses(format!(
                "{} masses for {} grid points",
                masses.len(),
                grid.len()
            )));
        }
        if !grid[0].is_zero() {
            return Err(DistributionError::InvalidGrid("lowest type must be 0".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DistributionError::InvalidGrid("grid must be strictly increasing".into()));
        }
        if grid[grid.len() - 1] > T::one() {
            return Err(DistributionError::InvalidGrid("types must lie in [0, 1]".into()));
        }
        if masses.iter().any(|m| *m <= T::zero()) {
            return Err(DistributionError::InvalidMasses("every mass must be positive".into()));
        }
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = T::zero();
        for m in &masses {
            acc = acc + m.clone();
            cumulative.push(acc.clone());
        }
        if (acc.clone() - T::one()).abs() > T::from_f64_lossy(PROBABILITY_SUM_TOL) {
            return Err(DistributionError::InvalidMasses(format!("masses sum to {acc}")));
        }
        Ok(Self { grid, masses, cumulative })
    }

    /// Equal masses on an evenly spaced grid `{0, 1/(K-1), ..., 1}`.
    pub fn uniform_grid(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(DistributionError::InvalidGrid("at least two types are required".into()));
        }
        let den = (points - 1) as i64;
        let grid = (0..points).map(|k| T::ratio(k as i64, den)).collect();
        let masses = vec![T::ratio(1, points as i64); points];
        Self::new(grid, masses)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn value(&self, k: usize) -> &T {
        &self.grid[k]
    }

    pub fn mass(&self, k: usize) -> &T {
        &self.masses[k]
    }

    /// `Pr[θ <= θ^k]` (zero-based `k`).
    pub fn cdf(&self, k: usize) -> T {
        self.cumulative[k].clone()
    }

    /// `Pr[θ < θ^k]`.
    pub fn cdf_below(&self, k: usize) -> T {
        if k == 0 {
            T::zero()
        } else {
            self.cumulative[k - 1].clone()
        }
    }

    pub fn index_of(&self, value: &T) -> Option<usize> {
        self.grid.iter().position(|g| g == value)
    }

    /// Index of the smallest grid point `>= value`.
    pub fn ceil_index(&self, value: &T) -> Option<usize> {
        self.grid.iter().position(|g| g >= value)
    }

    pub fn virtual_value_at(&self, k: usize) -> T {
        let next = if k + 1 < self.len() { self.grid[k + 1].clone() } else { self.grid[k].clone() };
        let gap = next - self.grid[k].clone();
        self.grid[k].clone() - gap * (T::one() - self.cumulative[k].clone()) / self.masses[k].clone()
    }

    pub fn virtual_values(&self) -> Vec<T> {
        (0..self.len()).map(|k| self.virtual_value_at(k)).collect()
    }

    pub fn is_regular(&self) -> bool {
        self.virtual_values().windows(2).all(|w| w[1] > w[0])
    }

    fn reserve(&self) -> Result<Reserve<T>> {
        let values = self.virtual_values();
        if let Some(k) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DistributionError::NotRegular(format!("{}", self.grid[k + 1])));
        }
        let floor = -T::slack();
        let k = values.iter().position(|v| *v >= floor).expect("top virtual value is the top type");
        Ok(Reserve { value: self.grid[k].clone(), index: Some(k) })
    }
}

/// A buyer-valuation distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum TypeModel<T> {
    Continuous(ContinuousModel),
    Finite(FiniteTypeModel<T>),
}

impl<T: Scalar> TypeModel<T> {
    pub fn uniform() -> Self {
        TypeModel::Continuous(ContinuousModel::Uniform)
    }

    pub fn finite(grid: Vec<T>, masses: Vec<T>) -> Result<Self> {
        FiniteTypeModel::new(grid, masses).map(TypeModel::Finite)
    }

    pub fn continuous(model: ContinuousModel) -> Result<Self> {
        model.validate()?;
        Ok(TypeModel::Continuous(model))
    }

    pub fn as_finite(&self) -> Option<&FiniteTypeModel<T>> {
        match self {
            TypeModel::Finite(g) => Some(g),
            TypeModel::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&ContinuousModel> {
        match self {
            TypeModel::Continuous(c) => Some(c),
            TypeModel::Finite(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, TypeModel::Finite(_))
    }

    /// `Pr[θ < x]` in floating point.
    pub fn cdf_below_f64(&self, x: f64) -> f64 {
        match self {
            TypeModel::Continuous(c) => c.cdf(x),
            TypeModel::Finite(g) => g
                .grid()
                .iter()
                .zip(g.masses())
                .filter(|(v, _)| v.as_f64() < x)
                .map(|(_, m)| m.as_f64())
                .sum(),
        }
    }

    pub fn is_regular(&self) -> bool {
        check_regular(self).is_ok()
    }
}

/// Fails unless the virtual valuation is strictly increasing.
pub fn check_regular<T: Scalar>(model: &TypeModel<T>) -> Result<()> {
    match model {
        TypeModel::Finite(g) => g.reserve().map(|_| ()),
        TypeModel::Continuous(c) => {
            let mut previous: Option<f64> = None;
            for i in 0..=REGULARITY_PROBES {
                let x = i as f64 / REGULARITY_PROBES as f64;
                let v = match c.virtual_value(x) {
                    Ok(v) => v,
                    Err(DistributionError::ZeroDensity(_)) if i == 0 || i == REGULARITY_PROBES => continue,
                    Err(e) => return Err(e),
                };
                if let Some(p) = previous {
                    if v <= p {
                        return Err(DistributionError::NotRegular(format!("{x}")));
                    }
                }
                previous = Some(v);
            }
            Ok(())
        }
    }
}

/// Reserve price and, on a finite grid, its index.
#[derive(Debug, Clone, PartialEq)]
pub struct Reserve<T> {
    pub value: T,
    pub index: Option<usize>,
}

/// Virtual valuation of `theta`: `θ - (1-F)/f` on a continuum, the
/// forward-difference analogue on a grid.
pub fn virtual_valuation<T: Scalar>(model: &TypeModel<T>, theta: &T) -> Result<T> {
    match model {
        TypeModel::Finite(g) => {
            let k = g.index_of(theta).ok_or_else(|| DistributionError::OffGrid(theta.to_string()))?;
            Ok(g.virtual_value_at(k))
        }
        TypeModel::Continuous(c) => c.virtual_value(theta.as_f64()).map(T::from_f64_lossy),
    }
}

/// Smallest type with nonnegative virtual valuation.
pub fn optimal_reserve<T: Scalar>(model: &TypeModel<T>) -> Result<Reserve<T>> {
    check_regular(model)?;
    match model {
        TypeModel::Finite(g) => g.reserve(),
        TypeModel::Continuous(c) => {
            let rho = reserve_from_virtual(|x| c.virtual_value(x).ok());
            Ok(Reserve { value: T::from_f64_lossy(rho), index: None })
        }
    }
}

/// Threshold of a nondecreasing virtual valuation on `[0, 1]`; points where
/// it is undefined count as negative.
fn reserve_from_virtual(v: impl Fn(f64) -> Option<f64>) -> f64 {
    bisect_threshold(|x| v(x).map(|y| y >= 0.0).unwrap_or(false), 0.0, 1.0, BISECTION_TOL)
}

/// How the bidder-count priors were specified.
#[derive(Debug, Clone, PartialEq)]
pub enum PopulationMode<T> {
    Explicit,
    Binomial { pool: usize, participation: T },
}

/// Designer prior over the number of buyers together with the prior a
/// participating buyer holds over the same count.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel<T> {
    mode: PopulationMode<T>,
    designer: BTreeMap<usize, T>,
    participant: BTreeMap<usize, T>,
}

fn check_law<T: Scalar>(law: &BTreeMap<usize, T>, what: &str) -> Result<()> {
    if law.is_empty() {
        return Err(DistributionError::InvalidPopulation(format!("{what} has empty support")));
    }
    if law.values().any(|p| *p < T::zero()) {
        return Err(DistributionError::InvalidPopulation(format!("{what} has a negative probability")));
    }
    let total = law.values().fold(T::zero(), |a, p| a + p.clone());
    if (total.clone() - T::one()).abs() > T::from_f64_lossy(PROBABILITY_SUM_TOL) {
        return Err(DistributionError::InvalidPopulation(format!("{what} sums to {total}")));
    }
    Ok(())
}

fn size_biased<T: Scalar>(designer: &BTreeMap<usize, T>) -> Result<BTreeMap<usize, T>> {
    let mean = designer.iter().fold(T::zero(), |a, (n, p)| a + T::from_count(*n) * p.clone());
    if mean <= T::zero() {
        return Err(DistributionError::InvalidPopulation("no buyer ever participates".into()));
    }
    Ok(designer
        .iter()
        .filter(|(n, p)| **n > 0 && **p > T::zero())
        .map(|(n, p)| (*n, T::from_count(*n) * p.clone() / mean.clone()))
        .collect())
}

fn strip_zeros<T: Scalar>(law: BTreeMap<usize, T>) -> BTreeMap<usize, T> {
    law.into_iter().filter(|(_, p)| !p.is_zero()).collect()
}

impl<T: Scalar> PopulationModel<T> {
    /// `k` potential buyers, each present independently with probability `q`.
    pub fn binomial(pool: usize, participation: T) -> Result<Self> {
        if pool == 0 {
            return Err(DistributionError::InvalidPopulation("pool size must be at least 1".into()));
        }
        if participation <= T::zero() || participation > T::one() {
            return Err(DistributionError::InvalidPopulation("participation must lie in (0, 1]".into()));
        }
        let q = participation.clone();
        let miss = T::one() - q.clone();
        let designer = strip_zeros(
            (0..=pool)
                .map(|n| (n, binomial::<T>(pool, n) * q.powu(n) * miss.powu(pool - n)))
                .collect(),
        );
        let participant = strip_zeros(
            (1..=pool)
                .map(|n| (n, binomial::<T>(pool - 1, n - 1) * q.powu(n - 1) * miss.powu(pool - n)))
                .collect(),
        );
        check_law(&designer, "designer prior")?;
        check_law(&participant, "participant prior")?;
        Ok(Self { mode: PopulationMode::Binomial { pool, participation }, designer, participant })
    }

    /// Explicit designer prior; the participant prior defaults to the
    /// size-biased designer prior when omitted.
    pub fn explicit(designer: BTreeMap<usize, T>, participant: Option<BTreeMap<usize, T>>) -> Result<Self> {
        check_law(&designer, "designer prior")?;
        let designer = strip_zeros(designer);
        let participant = match participant {
            Some(p) => {
                if p.contains_key(&0) {
                    return Err(DistributionError::InvalidPopulation(
                        "participant prior is defined for n >= 1".into(),
                    ));
                }
                check_law(&p, "participant prior")?;
                strip_zeros(p)
            }
            None => size_biased(&designer)?,
        };
        Ok(Self { mode: PopulationMode::Explicit, designer, participant })
    }

    /// Exactly `n` buyers.
    pub fn fixed(n: usize) -> Result<Self> {
        Self::explicit(BTreeMap::from([(n, T::one())]), None)
    }

    /// Explicit model whose designer prior is the one that size-biases to
    /// the given participant prior.
    pub fn from_participant_prior(participant: BTreeMap<usize, T>) -> Result<Self> {
        check_law(&participant, "participant prior")?;
        if participant.contains_key(&0) {
            return Err(DistributionError::InvalidPopulation("participant prior is defined for n >= 1".into()));
        }
        let norm = participant.iter().fold(T::zero(), |a, (n, p)| a + p.clone() / T::from_count(*n));
        let designer = participant.iter().map(|(n, p)| (*n, p.clone() / T::from_count(*n) / norm.clone())).collect();
        Self::explicit(designer, Some(participant))
    }

    pub fn mode(&self) -> &PopulationMode<T> {
        &self.mode
    }

    /// `Pr[|B| = n]`.
    pub fn designer_prior(&self, n: usize) -> T {
        self.designer.get(&n).cloned().unwrap_or_else(T::zero)
    }

    /// `p(n)`: the count distribution seen by a participating buyer.
    pub fn participant_prior(&self, n: usize) -> T {
        self.participant.get(&n).cloned().unwrap_or_else(T::zero)
    }

    pub fn designer_support(&self) -> impl Iterator<Item = (usize, &T)> + '_ {
        self.designer.iter().map(|(n, p)| (*n, p))
    }

    pub fn participant_support(&self) -> impl Iterator<Item = (usize, &T)> + '_ {
        self.participant.iter().map(|(n, p)| (*n, p))
    }

    pub fn max_buyers(&self) -> usize {
        let d = self.designer.keys().next_back().copied().unwrap_or(0);
        let p = self.participant.keys().next_back().copied().unwrap_or(0);
        d.max(p)
    }

    /// `E|B|`.
    pub fn expected_buyers(&self) -> T {
        self.designer.iter().fold(T::zero(), |a, (n, p)| a + T::from_count(*n) * p.clone())
    }

    /// Whether a lone buyer occurs with positive probability.
    pub fn has_single_buyer_mass(&self) -> bool {
        self.designer_prior(1) > T::zero()
    }

    /// Both priors conditioned on `|B|` lying in `counts`.
    pub fn condition(&self, counts: &BTreeSet<usize>) -> Result<Self> {
        let restrict = |law: &BTreeMap<usize, T>, what: &str| -> Result<BTreeMap<usize, T>> {
            let kept: BTreeMap<usize, T> =
                law.iter().filter(|(n, _)| counts.contains(n)).map(|(n, p)| (*n, p.clone())).collect();
            let total = kept.values().fold(T::zero(), |a, p| a + p.clone());
            if total <= T::zero() {
                return Err(DistributionError::InvalidPopulation(format!("{what} puts no mass on {counts:?}")));
            }
            Ok(kept.into_iter().map(|(n, p)| (n, p / total.clone())).collect())
        };
        let designer = restrict(&self.designer, "designer prior").unwrap_or_default();
        let participant = restrict(&self.participant, "participant prior")?;
        let designer = if designer.is_empty() {
            participant.iter().map(|(n, p)| (*n, p.clone())).collect()
        } else {
            designer
        };
        Ok(Self { mode: PopulationMode::Explicit, designer, participant })
    }

    /// Converts the priors to another scalar type.
    pub fn map_scalar<U: Scalar>(&self, f: impl Fn(&T) -> U) -> PopulationModel<U> {
        PopulationModel {
            mode: match &self.mode {
                PopulationMode::Explicit => PopulationMode::Explicit,
                PopulationMode::Binomial { pool, participation } => {
                    PopulationMode::Binomial { pool: *pool, participation: f(participation) }
                }
            },
            designer: self.designer.iter().map(|(n, p)| (*n, f(p))).collect(),
            participant: self.participant.iter().map(|(n, p)| (*n, f(p))).collect(),
        }
    }
}

/// `p(n)`, zero outside the support.
pub fn participant_prior<T: Scalar>(pop: &PopulationModel<T>, n: usize) -> T {
    pop.participant_prior(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::ratio(n, d)
    }

    fn third_grid() -> FiniteTypeModel<Q> {
        FiniteTypeModel::new(vec![q(0, 1), q(1, 2), q(1, 1)], vec![q(1, 3); 3]).unwrap()
    }

    #[test]
    fn uniform_virtual_values() {
        let m = TypeModel::<f64>::uniform();
        assert!((virtual_valuation(&m, &0.7).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(virtual_valuation(&m, &1.0).unwrap(), 1.0);
        assert!(matches!(virtual_valuation(&m, &1.5), Err(DistributionError::OutOfRange(_))));
    }

    #[test]
    fn grid_virtual_values_and_reserve() {
        let g = TypeModel::Finite(third_grid());
        let v: Vec<Q> = [q(0, 1), q(1, 2), q(1, 1)].iter().map(|t| virtual_valuation(&g, t).unwrap()).collect();
        assert_eq!(v, vec![q(-1, 1), q(0, 1), q(1, 1)]);
        let r = optimal_reserve(&g).unwrap();
        assert_eq!(r.value, q(1, 2));
        assert_eq!(r.index, Some(1));
        assert!(matches!(virtual_valuation(&g, &q(1, 4)), Err(DistributionError::OffGrid(_))));
    }

    #[test]
    fn top_type_virtual_value_is_itself() {
        let g = FiniteTypeModel::new(vec![q(0, 1), q(1, 5), q(7, 10)], vec![q(1, 2), q(1, 4), q(1, 4)]).unwrap();
        assert_eq!(g.virtual_value_at(2), q(7, 10));
    }

    #[test]
    fn continuous_reserve() {
        let r = optimal_reserve(&TypeModel::<f64>::uniform()).unwrap();
        assert!((r.value - 0.5).abs() <= 1e-10);
        assert!(r.index.is_none());
        let p = TypeModel::<f64>::continuous(ContinuousModel::Power { exponent: 2.0 }).unwrap();
        let r = optimal_reserve(&p).unwrap();
        assert!((r.value - 1.0 / 3f64.sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn non_regular_models_are_rejected() {
        let p = TypeModel::<f64>::continuous(ContinuousModel::Power { exponent: 0.5 }).unwrap();
        assert!(matches!(optimal_reserve(&p), Err(DistributionError::NotRegular(_))));
        let g = TypeModel::finite(vec![q(0, 1), q(1, 2), q(1, 1)], vec![q(9, 20), q(1, 10), q(9, 20)]).unwrap();
        assert!(!g.is_regular());
        assert!(matches!(optimal_reserve(&g), Err(DistributionError::NotRegular(_))));
    }

    #[test]
    fn nonnegative_virtual_value_at_zero_gives_zero_reserve() {
        assert_eq!(reserve_from_virtual(|x| Some(x + 0.1)), 0.0);
        assert!((reserve_from_virtual(|x| Some(2.0 * x - 1.0)) - 0.5).abs() <= BISECTION_TOL);
    }

    #[test]
    fn grid_validation() {
        assert!(FiniteTypeModel::<f64>::new(vec![0.1, 1.0], vec![0.5, 0.5]).is_err());
        assert!(FiniteTypeModel::<f64>::new(vec![0.0, 0.5, 0.5], vec![0.2, 0.4, 0.4]).is_err());
        assert!(FiniteTypeModel::<f64>::new(vec![0.0, 1.5], vec![0.5, 0.5]).is_err());
        assert!(FiniteTypeModel::<f64>::new(vec![0.0], vec![1.0]).is_err());
        assert!(FiniteTypeModel::<f64>::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(FiniteTypeModel::<f64>::new(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(FiniteTypeModel::<f64>::new(vec![0.0, 1.0], vec![0.5, 0.5 + 1e-13]).is_ok());
    }

    #[test]
    fn binomial_priors() {
        let full = PopulationModel::<f64>::binomial(2, 1.0).unwrap();
        assert_eq!(participant_prior(&full, 2), 1.0);
        assert_eq!(participant_prior(&full, 1), 0.0);
        assert!(!full.has_single_buyer_mass());
        let half = PopulationModel::<Q>::binomial(2, q(1, 2)).unwrap();
        assert_eq!(participant_prior(&half, 1), q(1, 2));
        assert_eq!(participant_prior(&half, 2), q(1, 2));
        assert_eq!(participant_prior(&half, 3), q(0, 1));
        assert_eq!(half.designer_prior(0), q(1, 4));
        assert_eq!(half.expected_buyers(), q(1, 1));
    }

    #[test]
    fn binomial_is_size_biased() {
        for pool in 1..=6 {
            for (a, b) in [(1, 3), (1, 2), (3, 4), (1, 1)] {
                let pop = PopulationModel::<Q>::binomial(pool, q(a, b)).unwrap();
                let mean = pop.expected_buyers();
                for n in 1..=pool {
                    let biased = Q::from_count(n) * pop.designer_prior(n) / mean.clone();
                    assert_eq!(pop.participant_prior(n), biased, "pool {pool} q {a}/{b} n {n}");
                }
            }
        }
    }

    #[test]
    fn explicit_priors() {
        let p = BTreeMap::from([(1, 0.3), (4, 0.7)]);
        let pop = PopulationModel::explicit(BTreeMap::from([(1, 0.5), (2, 0.5)]), Some(p.clone())).unwrap();
        assert_eq!(participant_prior(&pop, 1), 0.3);
        assert_eq!(participant_prior(&pop, 4), 0.7);
        let pop = PopulationModel::<Q>::explicit(BTreeMap::from([(1, q(2, 3)), (2, q(1, 3))]), None).unwrap();
        assert_eq!(pop.participant_prior(1), q(1, 2));
        assert_eq!(pop.participant_prior(2), q(1, 2));
        let inverse = PopulationModel::<Q>::from_participant_prior(BTreeMap::from([(1, q(1, 2)), (2, q(1, 2))])).unwrap();
        assert_eq!(inverse.designer_prior(1), q(2, 3));
        assert!(PopulationModel::<f64>::explicit(BTreeMap::from([(1, 0.5)]), None).is_err());
        assert!(PopulationModel::<f64>::explicit(BTreeMap::new(), None).is_err());
    }

    #[test]
    fn conditioning() {
        let pop = PopulationModel::<Q>::binomial(3, q(1, 2)).unwrap();
        let cond = pop.condition(&BTreeSet::from([1, 2])).unwrap();
        assert_eq!(cond.participant_prior(1), q(1, 3));
        assert_eq!(cond.participant_prior(2), q(2, 3));
        assert_eq!(cond.participant_prior(3), q(0, 1));
        assert!(pop.condition(&BTreeSet::from([7])).is_err());
    }

    #[test]
    fn refined_uniform_grids_stay_regular_and_reserves_approach_half() {
        let mut gaps = Vec::new();
        for points in [3, 5, 11, 101] {
            let g = FiniteTypeModel::<Q>::uniform_grid(points).unwrap();
            assert!(g.is_regular(), "K = {points}");
            let r = optimal_reserve(&TypeModel::Finite(g)).unwrap();
            gaps.push((r.value.as_f64() - 0.5).abs());
        }
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
        assert!(gaps[3] <= 0.01);
    }
}
