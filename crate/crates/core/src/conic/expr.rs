use std::collections::BTreeMap;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Handle of a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub usize);

/// Sparse affine function `Σ a_i x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(v: Var) -> Self {
        LinExpr { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn term(v: Var, coef: f64) -> Self {
        LinExpr { terms: vec![(v, coef)], constant: 0.0 }
    }

    pub fn add_term(&mut self, v: Var, coef: f64) -> &mut Self {
        self.terms.push((v, coef));
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    /// Merges duplicate variables, drops exact zeros and sorts by variable.
    pub fn compact(mut self) -> Self {
        let mut acc: BTreeMap<Var, f64> = BTreeMap::new();
        for (v, c) in self.terms.drain(..) {
            *acc.entry(v).or_insert(0.0) += c;
        }
        self.terms = acc.into_iter().filter(|&(_, c)| c != 0.0).collect();
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>() + self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::var(v)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl AddAssign<&LinExpr> for LinExpr {
    fn add_assign(&mut self, rhs: &LinExpr) {
        self.terms.extend_from_slice(&rhs.terms);
        self.constant += rhs.constant;
    }
}

impl AddAssign<LinExpr> for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        *self += &rhs;
    }
}

impl SubAssign<&LinExpr> for LinExpr {
    fn sub_assign(&mut self, rhs: &LinExpr) {
        self.terms.extend(rhs.terms.iter().map(|&(v, c)| (v, -c)));
        self.constant -= rhs.constant;
    }
}

impl SubAssign<LinExpr> for LinExpr {
    fn sub_assign(&mut self, rhs: LinExpr) {
        *self -= &rhs;
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self += rhs;
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + (-rhs)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scaled(-1.0)
    }
}

impl Mul<LinExpr> for f64 {
    type Output = LinExpr;
    fn mul(self, rhs: LinExpr) -> LinExpr {
        rhs.scaled(self)
    }
}

/// Complex affine expression held as separate real and imaginary parts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

impl ComplexExpr {
    pub fn new(re: LinExpr, im: LinExpr) -> Self {
        ComplexExpr { re, im }
    }

    pub fn real(re: LinExpr) -> Self {
        ComplexExpr { re, im: LinExpr::zero() }
    }

    pub fn constant(c: Complex64) -> Self {
        ComplexExpr { re: LinExpr::constant(c.re), im: LinExpr::constant(c.im) }
    }

    pub fn conj(self) -> Self {
        ComplexExpr { re: self.re, im: -self.im }
    }

    /// Product with a complex coefficient.
    pub fn scale(&self, a: Complex64) -> Self {
        let re = a.re * self.re.clone() - a.im * self.im.clone();
        let im = a.re * self.im.clone() + a.im * self.re.clone();
        ComplexExpr { re, im }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.eval(x), self.im.eval(x))
    }
}

impl Add for ComplexExpr {
    type Output = ComplexExpr;
    fn add(self, rhs: ComplexExpr) -> ComplexExpr {
        ComplexExpr { re: self.re + rhs.re, im: self.im + rhs.im }
    }
}

impl Sub for ComplexExpr {
    type Output = ComplexExpr;
    fn sub(self, rhs: ComplexExpr) -> ComplexExpr {
        ComplexExpr { re: self.re - rhs.re, im: self.im - rhs.im }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_scaling_matches_complex_arithmetic() {
        let x = [0.3, -1.7];
        let e = ComplexExpr::new(LinExpr::var(Var(0)), LinExpr::term(Var(1), 2.0) + LinExpr::constant(0.5));
        let a = Complex64::new(1.5, -0.25);
        let got = e.scale(a).eval(&x);
        let want = a * e.eval(&x);
        assert!((got - want).norm() < 1e-14);
        assert!((e.clone().conj().eval(&x) - e.eval(&x).conj()).norm() < 1e-15);
    }

    #[test]
    fn compact_merges_and_sorts() {
        let mut e = LinExpr::term(Var(3), 1.0);
        e.add_term(Var(1), 2.0).add_term(Var(3), -1.0).add_term(Var(1), 0.5);
        let c = e.compact();
        assert_eq!(c.terms, vec![(Var(1), 2.5)]);
    }
}
