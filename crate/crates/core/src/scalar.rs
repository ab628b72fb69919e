//! Numeric abstraction for controller loads.
//!
//! Mapping generation and master selection only need ordered addition over
//! loads, so they are written against [`Load`]. The simulator uses `f64`
//! (flow-request rates); exhaustive optimality checks use `u32` unit loads so
//! that comparisons are exact.

use std::fmt::Debug;

use num_traits::{NumCast, ToPrimitive};

/// A non-negative, totally ordered load quantity.
pub trait Load:
    num_traits::Num + NumCast + ToPrimitive + Copy + PartialOrd + Debug + Send + Sync + 'static
{
    /// Sum of an iterator of loads.
    fn total<I: IntoIterator<Item = Self>>(iter: I) -> Self {
        iter.into_iter().fold(Self::zero(), |acc, x| acc + x)
    }

    /// Larger of two loads. `PartialOrd` only, so NaN falls to `other`.
    fn max_of(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn is_negative_load(self) -> bool {
        self < Self::zero()
    }
}

impl<T> Load for T where
    T: num_traits::Num + NumCast + ToPrimitive + Copy + PartialOrd + Debug + Send + Sync + 'static
{
}

/// Ratio `max / min` used by the imbalance trigger. An idle controller next to
/// a loaded one counts as infinitely imbalanced.
pub fn imbalance_ratio<L: Load>(loads: &[L]) -> f64 {
    let mut iter = loads.iter().copied();
    let Some(first) = iter.next() else {
        return 1.0;
    };
    let (lo, hi) = iter.fold((first, first), |(lo, hi), x| {
        (if x < lo { x } else { lo }, if x > hi { x } else { hi })
    });
    if hi.is_zero() {
        1.0
    } else if lo.is_zero() {
        f64::INFINITY
    } else {
        hi.as_f64() / lo.as_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_cases() {
        assert_eq!(imbalance_ratio::<u32>(&[]), 1.0);
        assert_eq!(imbalance_ratio(&[0u32, 0]), 1.0);
        assert_eq!(imbalance_ratio(&[3u32, 0]), f64::INFINITY);
        assert_eq!(imbalance_ratio(&[2.0f64, 4.0]), 2.0);
        assert_eq!(u32::total([1, 2, 3]), 6);
        assert_eq!(2.5f64.max_of(1.0), 2.5);
    }
}
