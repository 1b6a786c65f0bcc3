//! Deterministic randomness for unit and property tests.
//!
//! Kept separate from the production noise streams so test instances can be
//! generated without dragging chain semantics into every module's tests.

use alloc::vec::Vec;

use crate::math;
use crate::numerics::{spectral_radius_abs, Matrix};

pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        // splitmix64 step
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Standard normal via Box-Muller; fine for test data.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.unit().max(1e-300);
        let u2 = self.unit();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2)
    }
}

/// Random reflection matrix of the admissible family R = M (I - V):
/// positive diagonal scaling M, zero-diagonal V with spectral radius of |V|
/// rescaled to a random target below 1.
pub fn admissible_reflection(rng: &mut TestRng, m: usize) -> Matrix {
    let mut v = Matrix::zeros(m, m);
    if m > 1 {
        let mut any = false;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let x = rng.uniform(-1.0, 1.0);
                    v.set(i, j, x);
                    any = any || x != 0.0;
                }
            }
        }
        if any {
            let rho = spectral_radius_abs(&v).value;
            if rho > 0.0 {
                let target = rng.uniform(0.05, 0.9);
                let scale = target / rho;
                let data: Vec<f64> = v.data().iter().map(|x| x * scale).collect();
                v = Matrix::new(m, m, data).unwrap();
            }
        }
    }
    let mut r = Matrix::zeros(m, m);
    for i in 0..m {
        let d = rng.uniform(0.5, 2.0);
        for j in 0..m {
            let iv = if i == j { 1.0 } else { 0.0 };
            r.set(i, j, d * (iv - v.get(i, j)));
        }
    }
    r
}
