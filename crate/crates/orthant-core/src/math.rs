//! Float helpers that work with and without `std`.
//!
//! `f64`'s transcendental methods live in `std`; under `no_std` the same
//! operations are routed through `libm`. Callers use these functions instead
//! of the inherent methods so the crate compiles in both configurations.

#[cfg(feature = "std")]
#[inline(always)]
pub fn sqrt(x: f64) -> f64 {
    x.sqrt()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    x.exp()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    x.ln()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    x.powf(y)
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn expm1(x: f64) -> f64 {
    x.exp_m1()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn hypot(x: f64, y: f64) -> f64 {
    x.hypot(y)
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn cosh(x: f64) -> f64 {
    x.cosh()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn cosh(x: f64) -> f64 {
    libm::cosh(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn cos(x: f64) -> f64 {
    x.cos()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

/// Error function; `libm`'s implementation serves both configurations
/// (`std` has no inherent `erf`).
#[inline(always)]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Standard normal distribution function.
#[inline(always)]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z * core::f64::consts::FRAC_1_SQRT_2))
}

/// Euclidean norm of a slice.
pub fn norm2(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in v {
        s += x * x;
    }
    sqrt(s)
}

/// Infinity norm of a slice.
pub fn norm_inf(v: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for &x in v {
        let a = x.abs();
        if a > m {
            m = a;
        }
    }
    m
}

/// Dot product. Panics on length mismatch.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Compensated (Kahan-Babuska-Neumaier) accumulator.
///
/// `value()` returns `sum + carry`; both parts are exposed so chain state can
/// be checkpointed and restored bit for bit.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Kahan { sum: 0.0, carry: 0.0 }
    }

    pub fn from_parts(sum: f64, carry: f64) -> Self {
        Kahan { sum, carry }
    }

    pub fn parts(&self) -> (f64, f64) {
        (self.sum, self.carry)
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_addends() {
        // 1 + 1e-16 repeated: naive f64 summation loses every addend.
        let mut k = Kahan::new();
        k.add(1.0);
        for _ in 0..1_000_000 {
            k.add(1e-16);
        }
        let exact = 1.0 + 1e-10;
        assert!((k.value() - exact).abs() < 1e-15, "got {}", k.value());
    }

    #[test]
    fn kahan_roundtrips_parts() {
        let mut k = Kahan::new();
        for i in 1..100 {
            k.add(1.0 / i as f64);
        }
        let (s, c) = k.parts();
        let r = Kahan::from_parts(s, c);
        assert_eq!(r.value().to_bits(), k.value().to_bits());
    }

    #[test]
    fn norms_and_dot() {
        assert_eq!(norm2(&[3.0, 4.0]), 5.0);
        assert_eq!(norm_inf(&[-3.0, 2.0]), 3.0);
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
    }
}
