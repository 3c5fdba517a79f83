//! Scalar abstraction so the dynamics and contact code can run on plain
//! `f64` or on forward-mode dual numbers.
//!
//! The optimizer needs exact derivatives of implied torques with respect to
//! neighboring configuration knots. Rather than hand-differentiating the
//! recursive dynamics, the whole physics stack is generic over [`Real`] and
//! gets evaluated once per seed direction with [`Dual`] inputs.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Minimal scalar interface used by the generic kinematics/dynamics code.
pub trait Real:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    fn constant(x: f64) -> Self;
    /// The primal (value) part, discarding any derivative payload.
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }
    fn one() -> Self {
        Self::constant(1.0)
    }
}

impl Real for f64 {
    fn constant(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// First-order dual number: value plus one directional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    pub fn new(re: f64, du: f64) -> Self {
        Dual { re, du }
    }

    /// A seed variable: value `re` with unit derivative.
    pub fn var(re: f64) -> Self {
        Dual { re, du: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.re + rhs.re, self.du + rhs.du)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.re - rhs.re, self.du - rhs.du)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.re * rhs.re, self.re * rhs.du + self.du * rhs.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        Dual::new(
            self.re / rhs.re,
            (self.du * rhs.re - self.re * rhs.du) / (rhs.re * rhs.re),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.du)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}

impl SubAssign for Dual {
    fn sub_assign(&mut self, rhs: Dual) {
        *self = *self - rhs;
    }
}

impl PartialOrd for Dual {
    fn partial_cmp(&self, other: &Dual) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl Real for Dual {
    fn constant(x: f64) -> Self {
        Dual::new(x, 0.0)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.du * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.du * self.re.sin())
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.du / (2.0 * s))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.du * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.du / self.re)
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, self.du * (1.0 - t * t))
    }
}

/// `ln(1 + e^x)`, with the usual overflow-safe branches. Smooth ramp used by
/// the optimizer's contact model.
pub fn softplus<T: Real>(x: T) -> T {
    // Branching on the primal value keeps the derivative exact on each
    // branch; the crossover values are far outside the region where the
    // discarded terms matter at f64 precision.
    if x.value() > 34.0 {
        x
    } else if x.value() < -34.0 {
        x.exp()
    } else {
        (T::one() + x.exp()).ln()
    }
}

/// Smooth approximation of `max(0, y)`: `0.5 * (y + sqrt(y^2 + eps^2))`.
pub fn smooth_max0<T: Real>(y: T, eps: f64) -> T {
    let e = T::constant(eps);
    T::constant(0.5) * (y + (y * y + e * e).sqrt())
}

/// Fixed-size planar vector over a generic scalar.
///
/// `nalgebra`'s types want `Scalar + RealField` bounds that a minimal dual
/// number does not satisfy, and the hot loops only ever need a handful of
/// 2-vector ops, so this stays hand-rolled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct V2<T> {
    pub x: T,
    pub z: T,
}

impl<T: Real> V2<T> {
    pub fn new(x: T, z: T) -> Self {
        V2 { x, z }
    }

    pub fn zero() -> Self {
        V2 { x: T::zero(), z: T::zero() }
    }

    pub fn from_f64(x: f64, z: f64) -> Self {
        V2 { x: T::constant(x), z: T::constant(z) }
    }

    pub fn dot(self, rhs: V2<T>) -> T {
        self.x * rhs.x + self.z * rhs.z
    }

    /// Scalar cross product `x1 * z2 - z1 * x2`.
    pub fn cross(self, rhs: V2<T>) -> T {
        self.x * rhs.z - self.z * rhs.x
    }

    /// 90-degree counterclockwise rotation `(-z, x)`.
    pub fn perp(self) -> V2<T> {
        V2 { x: -self.z, z: self.x }
    }

    pub fn scale(self, s: T) -> V2<T> {
        V2 { x: self.x * s, z: self.z * s }
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn value(self) -> V2<f64> {
        V2 { x: self.x.value(), z: self.z.value() }
    }
}

impl<T: Real> Add for V2<T> {
    type Output = V2<T>;
    fn add(self, rhs: V2<T>) -> V2<T> {
        V2::new(self.x + rhs.x, self.z + rhs.z)
    }
}

impl<T: Real> Sub for V2<T> {
    type Output = V2<T>;
    fn sub(self, rhs: V2<T>) -> V2<T> {
        V2::new(self.x - rhs.x, self.z - rhs.z)
    }
}

impl<T: Real> Neg for V2<T> {
    type Output = V2<T>;
    fn neg(self) -> V2<T> {
        V2::new(-self.x, -self.z)
    }
}

/// Planar rotation, cached as `(cos, sin)`.
#[derive(Debug, Clone, Copy)]
pub struct Rot<T> {
    pub c: T,
    pub s: T,
}

impl<T: Real> Rot<T> {
    pub fn from_angle(theta: T) -> Self {
        Rot { c: theta.cos(), s: theta.sin() }
    }

    pub fn identity() -> Self {
        Rot { c: T::one(), s: T::zero() }
    }

    pub fn apply(self, v: V2<T>) -> V2<T> {
        V2::new(self.c * v.x - self.s * v.z, self.s * v.x + self.c * v.z)
    }
}
