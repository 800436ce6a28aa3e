//! Cost semirings. Both weights store a cost `-ln p`, so `times` is addition
//! in either case and only `plus` differs.

use std::fmt::Debug;

use crate::math::log_add;

pub trait Semiring: Copy + Debug + PartialEq + Send + Sync + 'static {
    const NAME: &'static str;

    fn new(cost: f64) -> Self;
    fn value(self) -> f64;
    fn plus(self, other: Self) -> Self;

    fn zero() -> Self {
        Self::new(f64::INFINITY)
    }

    fn one() -> Self {
        Self::new(0.0)
    }

    fn times(self, other: Self) -> Self {
        Self::new(self.value() + other.value())
    }

    /// Left division: the `x` with `other ⊗ x = self`. `other` must be non-zero.
    fn divide(self, other: Self) -> Self {
        if self.is_zero() {
            Self::zero()
        } else {
            Self::new(self.value() - other.value())
        }
    }

    fn is_zero(self) -> bool {
        self.value() == f64::INFINITY
    }

    fn approx_eq(self, other: Self, tol: f64) -> bool {
        let (a, b) = (self.value(), other.value());
        a == b || (a - b).abs() <= tol
    }
}

/// `(min, +)` over costs.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TropicalWeight(pub f64);

impl Semiring for TropicalWeight {
    const NAME: &'static str = "tropical";

    fn new(cost: f64) -> Self {
        Self(cost)
    }

    fn value(self) -> f64 {
        self.0
    }

    fn plus(self, other: Self) -> Self {
        if other.0 < self.0 {
            other
        } else {
            self
        }
    }
}

/// `(-ln(e^-a + e^-b), +)` over costs.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogWeight(pub f64);

impl Semiring for LogWeight {
    const NAME: &'static str = "log";

    fn new(cost: f64) -> Self {
        Self(cost)
    }

    fn value(self) -> f64 {
        self.0
    }

    fn plus(self, other: Self) -> Self {
        Self(-log_add(-self.0, -other.0))
    }
}
