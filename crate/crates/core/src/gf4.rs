//! GF(4) = GF(2)[β]/(β² + β + 1).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// `a + bβ`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct F4 {
    pub a: bool,
    pub b: bool,
}

impl F4 {
    pub const ZERO: F4 = F4 { a: false, b: false };
    pub const ONE: F4 = F4 { a: true, b: false };
    pub const BETA: F4 = F4 { a: false, b: true };
    pub const BETA1: F4 = F4 { a: true, b: true };

    /// Field elements in the fixed order 0, 1, β, 1+β.
    pub const ALL: [F4; 4] = [F4::ZERO, F4::ONE, F4::BETA, F4::BETA1];

    /// Position in [`F4::ALL`].
    pub fn index(self) -> usize {
        self.a as usize | (self.b as usize) << 1
    }

    pub fn from_index(i: usize) -> F4 {
        F4::ALL[i & 3]
    }

    pub fn is_zero(self) -> bool {
        !self.a && !self.b
    }

    pub fn square(self) -> F4 {
        self * self
    }

    /// Field trace `x + x²` (lands in GF(2)).
    pub fn trace(self) -> bool {
        let t = self + self.square();
        debug_assert!(!t.b);
        t.a
    }

    /// Constant-coefficient projection `a + bβ ↦ a`.
    pub fn const_proj(self) -> bool {
        self.a
    }

    /// `x ↦ Tr(βx)`.
    pub fn trace_beta(self) -> bool {
        (F4::BETA * self).trace()
    }

    pub fn inv(self) -> Option<F4> {
        F4::ALL.into_iter().find(|&y| self * y == F4::ONE)
    }
}

impl Add for F4 {
    type Output = F4;
    fn add(self, o: F4) -> F4 {
        F4 { a: self.a ^ o.a, b: self.b ^ o.b }
    }
}

impl Sub for F4 {
    type Output = F4;
    fn sub(self, o: F4) -> F4 {
        self + o
    }
}

impl Neg for F4 {
    type Output = F4;
    fn neg(self) -> F4 {
        self
    }
}

impl Mul for F4 {
    type Output = F4;
    fn mul(self, o: F4) -> F4 {
        // (a1 + b1β)(a2 + b2β) with β² = β + 1.
        let bb = self.b & o.b;
        F4 { a: (self.a & o.a) ^ bb, b: (self.a & o.b) ^ (self.b & o.a) ^ bb }
    }
}

impl fmt::Debug for F4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match (self.a, self.b) {
            (false, false) => "0",
            (true, false) => "1",
            (false, true) => "β",
            (true, true) => "1+β",
        };
        f.write_str(s)
    }
}

pub fn f4_mul(x: F4, y: F4) -> F4 {
    x * y
}

pub fn f4_trace(x: F4) -> bool {
    x.trace()
}

/// Projections GF(4) → GF(2) used by the dimension experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Trace,
    TraceBeta,
    ConstProj,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::Trace, Projection::TraceBeta, Projection::ConstProj];

    pub fn apply(self, x: F4) -> bool {
        match self {
            Projection::Trace => x.trace(),
            Projection::TraceBeta => x.trace_beta(),
            Projection::ConstProj => x.const_proj(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Projection::Trace => "trace",
            Projection::TraceBeta => "trace_beta",
            Projection::ConstProj => "const_proj",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_squared() {
        assert_eq!(F4::BETA * F4::BETA, F4::BETA1);
    }

    #[test]
    fn one_is_identity() {
        for x in F4::ALL {
            assert_eq!(F4::ONE * x, x);
        }
    }

    #[test]
    fn trace_values() {
        assert!(!F4::ZERO.trace());
        assert!(!F4::ONE.trace());
        assert!(F4::BETA.trace());
        assert!(F4::BETA1.trace());
    }

    #[test]
    fn inverses() {
        for x in &F4::ALL[1..] {
            assert_eq!(*x * x.inv().unwrap(), F4::ONE);
        }
        assert!(F4::ZERO.inv().is_none());
    }
}
