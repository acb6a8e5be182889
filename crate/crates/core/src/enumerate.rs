//! Enumeration of type profiles over finite supports.
//!
//! Every implemented mechanism is anonymous, so expectations over i.i.d.
//! profiles reduce to sums over multisets weighted by multinomial
//! probabilities.

use crate::distributions::FiniteTypeModel;
use crate::scalar::{factorial, Scalar};

/// A finite support with probability masses: a type grid, or a midpoint
/// discretization of a continuous model.
#[derive(Debug, Clone, PartialEq)]
pub struct Support<T> {
    pub values: Vec<T>,
    pub masses: Vec<T>,
}

impl<T: Scalar> Support<T> {
    pub fn from_grid(grid: &FiniteTypeModel<T>) -> Self {
        Self { values: grid.grid().to_vec(), masses: grid.masses().to_vec() }
    }

    /// Cell midpoints `(j + 1/2) / cells` carrying the probability the
    /// continuous CDF assigns to each cell.
    pub fn midpoints(cells: usize, cdf: impl Fn(f64) -> f64) -> Self {
        let values = (0..cells).map(|j| T::ratio(2 * j as i64 + 1, 2 * cells as i64)).collect();
        let masses = (0..cells)
            .map(|j| {
                let lo = j as f64 / cells as f64;
                let hi = (j + 1) as f64 / cells as f64;
                T::from_f64_lossy(cdf(hi) - cdf(lo))
            })
            .collect();
        Self { values, masses }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn profile(&self, indices: &[usize]) -> Vec<T> {
        indices.iter().map(|&k| self.values[k].clone()).collect()
    }
}

/// Iterator over non-decreasing index vectors of length `size` drawn from
/// `0..points`.
#[derive(Debug, Clone)]
pub struct Multisets {
    points: usize,
    current: Option<Vec<usize>>,
}

impl Iterator for Multisets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let mut next = out.clone();
        let mut i = next.len();
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] + 1 < self.points {
                let v = next[i] + 1;
                for slot in next[i..].iter_mut() {
                    *slot = v;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

pub fn multisets(points: usize, size: usize) -> Multisets {
    let current = if points == 0 && size > 0 { None } else { Some(vec![0; size]) };
    Multisets { points, current }
}

/// `C(points + size - 1, size)`, saturating.
pub fn multiset_count(points: usize, size: usize) -> u64 {
    if points == 0 {
        return u64::from(size == 0);
    }
    let mut acc: u128 = 1;
    for i in 0..size as u128 {
        acc = acc * (points as u128 + i) / (i + 1);
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Number of ordered profiles represented by a multiset.
pub fn arrangements<T: Scalar>(indices: &[usize]) -> T {
    let mut out = factorial::<T>(indices.len());
    let mut run = 1;
    for i in 1..=indices.len() {
        if i < indices.len() && indices[i] == indices[i - 1] {
            run += 1;
        } else {
            out = out / factorial::<T>(run);
            run = 1;
        }
    }
    out
}

/// Probability of drawing the multiset in i.i.d. sampling from `support`.
pub fn multiset_probability<T: Scalar>(indices: &[usize], support: &Support<T>) -> T {
    indices.iter().fold(arrangements::<T>(indices), |acc, &k| acc * support.masses[k].clone())
}

/// All multisets of the given size with their probabilities.
pub fn weighted_profiles<T: Scalar>(support: &Support<T>, size: usize) -> Vec<(Vec<usize>, T)> {
    multisets(support.len(), size)
        .map(|m| {
            let w = multiset_probability(&m, support);
            (m, w)
        })
        .collect()
}

/// Every ordered profile of the given size (`points^size` of them).
pub fn ordered_profiles(points: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = (points as u64).checked_pow(size as u32).unwrap_or(u64::MAX);
    (0..total).map(move |mut code| {
        let mut out = vec![0; size];
        for slot in out.iter_mut().rev() {
            *slot = (code % points as u64) as usize;
            code /= points as u64;
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    #[test]
    fn multiset_enumeration_counts() {
        for points in 1..5 {
            for size in 0..5 {
                let all: Vec<_> = multisets(points, size).collect();
                assert_eq!(all.len() as u64, multiset_count(points, size));
                assert!(all.iter().all(|m| m.windows(2).all(|w| w[0] <= w[1])));
            }
        }
        assert_eq!(multisets(0, 0).count(), 1);
        assert_eq!(multisets(0, 2).count(), 0);
    }

    #[test]
    fn multiset_probabilities_sum_to_one() {
        let support = Support {
            values: vec![BigRational::ratio(0, 1), BigRational::ratio(1, 2), BigRational::ratio(1, 1)],
            masses: vec![BigRational::ratio(1, 6), BigRational::ratio(1, 2), BigRational::ratio(1, 3)],
        };
        for size in 0..5 {
            let total = weighted_profiles(&support, size)
                .into_iter()
                .fold(BigRational::ratio(0, 1), |a, (_, w)| a + w);
            assert_eq!(total, BigRational::ratio(1, 1));
        }
        assert_eq!(arrangements::<BigRational>(&[0, 0, 1, 2]), BigRational::ratio(12, 1));
    }

    #[test]
    fn ordered_profiles_cover_the_cube() {
        let all: Vec<_> = ordered_profiles(3, 2).collect();
        assert_eq!(all.len(), 9);
        assert_eq!(all[5], vec![1, 2]);
    }

    #[test]
    fn midpoint_support() {
        let s = Support::<f64>::midpoints(4, |x| x);
        assert_eq!(s.values, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(s.masses.iter().all(|m| (*m - 0.25).abs() < 1e-15));
    }
}
