//! Continued-fraction convergents as Padé approximants.
//!
//! With `K(z) = z/(w_1 + z/(w_2 + z/(w_3 + …)))`, the depth-`k` truncation is
//! `A_k(z)/B_k(z)` where
//!
//! ```text
//! A_k = w_k A_{k-1} + z A_{k-2},   A_{-1} = 1, A_0 = 0
//! B_k = w_k B_{k-1} + z B_{k-2},   B_{-1} = 0, B_0 = 1
//! ```
//!
//! A single-input ladder relates to `K` through `z = 1/Q²`:
//! `ladder(Q) = Q · A_d(1/Q²) / B_d(1/Q²)`.
//!
//! Everything here is generic over [`Field`] so the exact statements can be
//! checked in rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use thiserror::Error;

use crate::scalar::Field;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PadeError {
    #[error("weight list is empty")]
    Empty,
    #[error("weight w_{index} is zero")]
    ZeroWeight { index: usize },
    #[error("series division by a series with zero constant term")]
    ZeroConstantTerm,
    #[error("series truncated at order {got}, need at least {needed}")]
    TruncationTooShort { needed: usize, got: usize },
    #[error("degenerate sample point Q = {q}: denominator {denominator:e}")]
    DegenerateSample { q: f64, denominator: f64 },
    #[error("value {0} has no exact rational form")]
    NotRepresentable(f64),
}

/// Polynomial with coefficients in ascending degree, kept normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly<F> {
    coeffs: Vec<F>,
}

impl<F: Field> Poly<F> {
    pub fn new(mut coeffs: Vec<F>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(c: F) -> Self {
        Self::new(vec![c])
    }

    /// The monomial `z`.
    pub fn z() -> Self {
        Self::new(vec![F::zero(), F::one()])
    }

    pub fn coeffs(&self) -> &[F] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> F {
        self.coeffs.get(i).cloned().unwrap_or_else(F::zero)
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        Self::new((0..len).map(|i| self.coeff(i) + other.coeff(i)).collect())
    }

    pub fn scale(&self, c: &F) -> Self {
        Self::new(self.coeffs.iter().map(|a| a.clone() * c.clone()).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut out = vec![F::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] = out[i + j].clone() + a.clone() * b.clone();
            }
        }
        Self::new(out)
    }

    /// Multiplies by `z`.
    pub fn shift(&self) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let mut c = Vec::with_capacity(self.coeffs.len() + 1);
        c.push(F::zero());
        c.extend(self.coeffs.iter().cloned());
        Poly { coeffs: c }
    }

    /// Horner evaluation.
    pub fn eval(&self, z: &F) -> F {
        self.coeffs
            .iter()
            .rev()
            .fold(F::zero(), |acc, c| acc * z.clone() + c.clone())
    }
}

/// Power series `Σ_{i=0}^{K} c_i z^i` truncated at an explicit order `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct FormalSeries<F> {
    coeffs: Vec<F>,
}

impl<F: Field> FormalSeries<F> {
    /// Coefficients `c_0..=c_K`; missing entries are zero.
    pub fn new(mut coeffs: Vec<F>, order: usize) -> Self {
        coeffs.resize(order + 1, F::zero());
        FormalSeries { coeffs }
    }

    pub fn from_poly(p: &Poly<F>, order: usize) -> Self {
        Self::new(p.coeffs().iter().take(order + 1).cloned().collect(), order)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[F] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> F {
        self.coeffs.get(i).cloned().unwrap_or_else(F::zero)
    }

    pub fn set_coeff(&mut self, i: usize, c: F) {
        self.coeffs[i] = c;
    }

    pub fn add(&self, other: &Self) -> Self {
        let k = self.order().min(other.order());
        Self::new((0..=k).map(|i| self.coeff(i) + other.coeff(i)).collect(), k)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let k = self.order().min(other.order());
        Self::new((0..=k).map(|i| self.coeff(i) - other.coeff(i)).collect(), k)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let k = self.order().min(other.order());
        let mut out = vec![F::zero(); k + 1];
        for i in 0..=k {
            for j in 0..=k - i {
                out[i + j] = out[i + j].clone() + self.coeffs[i].clone() * other.coeffs[j].clone();
            }
        }
        Self::new(out, k)
    }

    /// `self / other`; requires a nonzero constant term in `other`.
    pub fn div(&self, other: &Self) -> Result<Self, PadeError> {
        let b0 = other.coeff(0);
        if b0.is_zero() {
            return Err(PadeError::ZeroConstantTerm);
        }
        let k = self.order().min(other.order());
        let mut q: Vec<F> = Vec::with_capacity(k + 1);
        for i in 0..=k {
            let mut acc = self.coeffs[i].clone();
            for j in 1..=i {
                acc = acc - other.coeffs[j].clone() * q[i - j].clone();
            }
            q.push(acc / b0.clone());
        }
        Ok(Self::new(q, k))
    }

    /// Index of the lowest nonzero coefficient, or `None` if all vanish.
    pub fn valuation(&self) -> Option<usize> {
        self.coeffs.iter().position(|c| !c.is_zero())
    }
}

/// Depth-`k` convergent `A_k / B_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergentPair<F> {
    pub a: Poly<F>,
    pub b: Poly<F>,
    pub k: usize,
}

/// Convergents for depths `1..=d` by the three-term recurrences.
pub fn convergents<F: Field>(w: &[F]) -> Result<Vec<ConvergentPair<F>>, PadeError> {
    if w.is_empty() {
        return Err(PadeError::Empty);
    }
    if let Some(i) = w.iter().position(|v| v.is_zero()) {
        return Err(PadeError::ZeroWeight { index: i + 1 });
    }
    let (mut a_prev, mut a) = (Poly::constant(F::one()), Poly::zero());
    let (mut b_prev, mut b) = (Poly::zero(), Poly::constant(F::one()));
    let mut out = Vec::with_capacity(w.len());
    for (k, wk) in w.iter().enumerate() {
        let a_next = a.scale(wk).add(&a_prev.shift());
        let b_next = b.scale(wk).add(&b_prev.shift());
        a_prev = std::mem::replace(&mut a, a_next);
        b_prev = std::mem::replace(&mut b, b_next);
        out.push(ConvergentPair {
            a: a.clone(),
            b: b.clone(),
            k: k + 1,
        });
    }
    Ok(out)
}

/// Numerator and denominator degrees `(⌊(d+1)/2⌋, ⌊d/2⌋)`.
pub fn degree_law(d: usize) -> (usize, usize) {
    (d.div_ceil(2), d / 2)
}

/// Default series truncation for depth `d`.
pub fn default_truncation(d: usize) -> usize {
    d + 6
}

/// First index where `f` and the expansion of `A/B` differ, or `K + 1`
/// when they agree through the truncation order `K` of `f`.
pub fn order_of_agreement<F: Field>(
    f: &FormalSeries<F>,
    pair: &ConvergentPair<F>,
) -> Result<usize, PadeError> {
    let k = f.order();
    let r = convergent_series(pair, k)?;
    Ok((0..=k).find(|&i| f.coeff(i) != r.coeff(i)).unwrap_or(k + 1))
}

/// Series expansion of `A/B` through order `order`.
pub fn convergent_series<F: Field>(
    pair: &ConvergentPair<F>,
    order: usize,
) -> Result<FormalSeries<F>, PadeError> {
    FormalSeries::from_poly(&pair.a, order).div(&FormalSeries::from_poly(&pair.b, order))
}

/// Series of the continued fraction `z/(w_1 + z/(w_2 + … z/w_D))`.
///
/// Evaluated from the bottom as a polynomial fraction `P/Q`, using
/// `z/(w + P/Q) = zQ/(wQ + P)`, then expanded by one series division.
/// This runs the opposite direction to the recurrences in [`convergents`].
pub fn continued_fraction_series<F: Field>(
    w: &[F],
    order: usize,
) -> Result<FormalSeries<F>, PadeError> {
    if w.is_empty() {
        return Err(PadeError::Empty);
    }
    let z = Poly::z();
    let (mut p, mut q) = (Poly::zero(), Poly::constant(F::one()));
    for wk in w.iter().rev() {
        let den = q.scale(wk).add(&p);
        p = z.mul(&q);
        q = den;
    }
    FormalSeries::from_poly(&p, order).div(&FormalSeries::from_poly(&q, order))
}

/// Lowest nonzero term of `f·B_k − A_k`: `(index, coefficient)`.
pub fn lemma_residual<F: Field>(
    f: &FormalSeries<F>,
    pair: &ConvergentPair<F>,
) -> Option<(usize, F)> {
    let order = f.order();
    let fb = f.mul(&FormalSeries::from_poly(&pair.b, order));
    let r = fb.sub(&FormalSeries::from_poly(&pair.a, order));
    r.valuation().map(|i| (i, r.coeff(i)))
}

/// Depth-`d` ladder of one input without the floor; errors when an
/// intermediate denominator is within `1e-9` of zero.
pub fn ladder_unfloored(w: &[f64], q: f64) -> Result<f64, PadeError> {
    let mut tail = 0.0;
    for wk in w.iter().rev() {
        let den = wk * q + tail;
        if den.abs() < 1e-9 {
            return Err(PadeError::DegenerateSample { q, denominator: den });
        }
        tail = 1.0 / den;
    }
    Ok(tail)
}

pub fn to_rational(x: f64) -> Result<BigRational, PadeError> {
    BigRational::from_f64(x).ok_or(PadeError::NotRepresentable(x))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub depth: usize,
    /// `(Q, ladder value, Q · A_d(1/Q²)/B_d(1/Q²))` per sample.
    pub samples: Vec<(f64, f64, f64)>,
    pub max_deviation: f64,
}

/// Compares a floating-point ladder with its convergent form evaluated in
/// exact rationals at each sample `Q`.
pub fn ladder_series_equivalence(w: &[f64], points: &[f64]) -> Result<EquivalenceReport, PadeError> {
    let wr: Vec<BigRational> = w.iter().map(|&v| to_rational(v)).collect::<Result<_, _>>()?;
    let pair = convergents(&wr)?.pop().ok_or(PadeError::Empty)?;
    let mut samples = Vec::with_capacity(points.len());
    let mut max_deviation: f64 = 0.0;
    for &q in points {
        let ladder = ladder_unfloored(w, q)?;
        let qr = to_rational(q)?;
        let z = (qr.clone() * qr.clone()).recip();
        let den = pair.b.eval(&z);
        if den.is_zero() {
            return Err(PadeError::DegenerateSample { q, denominator: 0.0 });
        }
        let exact = qr * pair.a.eval(&z) / den;
        let exact = exact.to_f64().ok_or(PadeError::NotRepresentable(q))?;
        max_deviation = max_deviation.max((ladder - exact).abs());
        samples.push((q, ladder, exact));
    }
    Ok(EquivalenceReport {
        depth: w.len(),
        samples,
        max_deviation,
    })
}

/// Sample points used by the equivalence check.
pub const EQUIVALENCE_POINTS: [f64; 4] = [2.0, 3.0, 5.0, 10.0];

/// Rational `p/q` helper.
pub fn ratio(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}
