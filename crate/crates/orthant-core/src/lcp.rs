//! Linear complementarity: find u, v >= 0 with v = theta + R u and u.v = 0.
//!
//! Solved by Lemke's complementary pivoting with the all-ones covering
//! vector. The leaving row is chosen by a lexicographic minimum-ratio test
//! over the columns of the initial identity basis, which rules out cycling
//! on degenerate instances. For the reflection matrices this crate admits
//! (P-matrices by construction) the method cannot terminate on a secondary
//! ray, so ray termination is reported as an error rather than handled.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub enum LcpError {
    /// Dimension mismatch between the matrix and the offset vector.
    BadShape,
    /// The pivot column had no positive entry before z0 left the basis.
    RayTermination { pivots_used: usize },
    /// Safety cap on pivot count was hit; the instance is pathological.
    PivotLimitExceeded { limit: usize },
}

impl fmt::Display for LcpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LcpError::BadShape => write!(f, "LCP dimension mismatch"),
            LcpError::RayTermination { pivots_used } => {
                write!(f, "Lemke pivoting hit a secondary ray after {pivots_used} pivots")
            }
            LcpError::PivotLimitExceeded { limit } => {
                write!(f, "Lemke pivot count exceeded the cap of {limit}")
            }
        }
    }
}

impl core::error::Error for LcpError {}

#[derive(Clone, Debug)]
pub struct LcpSolution {
    pub u: Vec<f64>,
    /// Slack v = theta + R u, recomputed from u after pivoting finishes.
    pub v: Vec<f64>,
    /// Indices with u_i > 0.
    pub active_set: Vec<usize>,
    pub pivots_used: usize,
}

/// Residuals of a candidate (u, v) pair against the defining conditions,
/// all relative to `scale = max(1, |theta|_inf, |R u|_inf)`.
#[derive(Clone, Copy, Debug)]
pub struct ComplementarityReport {
    pub min_u: f64,
    pub min_v: f64,
    /// |u . v| after clamping negative components to zero.
    pub complementarity: f64,
    /// max_i |v_i - theta_i - (R u)_i|.
    pub linear_residual: f64,
    pub scale: f64,
}

impl ComplementarityReport {
    pub fn passes(&self, tol: f64) -> bool {
        let t = tol * self.scale;
        self.min_u >= -t && self.min_v >= -t && self.complementarity <= t && self.linear_residual <= t
    }
}

pub fn verify_complementarity(r: &Matrix, theta: &[f64], sol: &LcpSolution) -> ComplementarityReport {
    let ru = r.mul_vec(&sol.u);
    let scale = 1.0f64.max(math::norm_inf(theta)).max(math::norm_inf(&ru));
    let mut min_u = f64::INFINITY;
    let mut min_v = f64::INFINITY;
    let mut dot = 0.0;
    let mut lin = 0.0f64;
    for i in 0..theta.len() {
        min_u = min_u.min(sol.u[i]);
        min_v = min_v.min(sol.v[i]);
        dot += sol.u[i].max(0.0) * sol.v[i].max(0.0);
        lin = lin.max((sol.v[i] - theta[i] - ru[i]).abs());
    }
    ComplementarityReport { min_u, min_v, complementarity: dot.abs(), linear_residual: lin, scale }
}

/// Pivot cap: complementary bases are at most 2^m, clamped for large m.
fn pivot_limit(m: usize) -> usize {
    1usize << m.min(20)
}

/// Lexicographic comparison of two candidate ratio rows.
///
/// Row i is represented by the vector (rhs_i, B_i1, ..., B_im) / pivot_i
/// where B is the current tableau block of the initial identity basis.
fn lex_less(t: &[Vec<f64>], rhs: &[f64], m: usize, a: usize, b: usize, col: usize) -> bool {
    let pa = t[a][col];
    let pb = t[b][col];
    let ra = rhs[a] / pa;
    let rb = rhs[b] / pb;
    if ra != rb {
        return ra < rb;
    }
    for j in 0..m {
        let va = t[a][j] / pa;
        let vb = t[b][j] / pb;
        if va != vb {
            return va < vb;
        }
    }
    false
}

/// Solves the LCP for (R, theta).
///
/// Columns 0..m are the slacks v, columns m..2m the pushes u, column 2m the
/// covering variable. theta >= 0 short-circuits to u = 0.
pub fn solve_lcp(r: &Matrix, theta: &[f64]) -> Result<LcpSolution, LcpError> {
    if !r.is_square() || r.rows() != theta.len() {
        return Err(LcpError::BadShape);
    }
    let m = theta.len();
    if theta.iter().all(|&q| q >= 0.0) {
        return Ok(LcpSolution {
            u: vec![0.0; m],
            v: theta.to_vec(),
            active_set: Vec::new(),
            pivots_used: 0,
        });
    }

    let cover = 2 * m; // column of the covering variable
    let mut t: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs: Vec<f64> = theta.to_vec();
    for i in 0..m {
        let mut row = vec![0.0; 2 * m + 1];
        row[i] = 1.0;
        for j in 0..m {
            row[m + j] = -r.get(i, j);
        }
        row[cover] = -1.0;
        t.push(row);
    }
    // basis[i] = variable id occupying row i; ids: 0..m slacks, m..2m pushes,
    // 2m the covering variable.
    let mut basis: Vec<usize> = (0..m).collect();

    // Entry pivot: bring the covering variable in at the most negative rhs;
    // ties resolved on the identity block to keep the lexicographic invariant.
    let mut row = 0;
    for i in 1..m {
        if rhs[i] < rhs[row] {
            row = i;
        } else if rhs[i] == rhs[row] {
            for j in 0..m {
                if t[i][j] != t[row][j] {
                    if t[i][j] < t[row][j] {
                        row = i;
                    }
                    break;
                }
            }
        }
    }
    let mut pivots = 0usize;
    let limit = pivot_limit(m);
    let mut leaving = basis[row];
    pivot(&mut t, &mut rhs, row, cover);
    basis[row] = cover;
    pivots += 1;

    loop {
        // Complement of the variable that just left.
        let entering = if leaving < m { leaving + m } else { leaving - m };
        // Lexicographic minimum ratio over rows with a positive pivot entry.
        let mut choice: Option<usize> = None;
        for i in 0..m {
            let c = t[i][entering];
            if c > 1e-11 {
                match choice {
                    None => choice = Some(i),
                    Some(b) => {
                        if lex_less(&t, &rhs, m, i, b, entering) {
                            choice = Some(i);
                        }
                    }
                }
            }
        }
        let row = match choice {
            Some(i) => i,
            None => return Err(LcpError::RayTermination { pivots_used: pivots }),
        };
        leaving = basis[row];
        pivot(&mut t, &mut rhs, row, entering);
        basis[row] = entering;
        pivots += 1;
        if leaving == cover {
            break;
        }
        if pivots > limit {
            return Err(LcpError::PivotLimitExceeded { limit });
        }
    }

    let mut u = vec![0.0; m];
    for i in 0..m {
        let id = basis[i];
        if id >= m && id < 2 * m {
            // Pivoting keeps rhs >= 0 up to roundoff; clamp the dust.
            u[id - m] = rhs[i].max(0.0);
        }
    }
    let v: Vec<f64> = r.mul_vec(&u).iter().zip(theta).map(|(ru, q)| q + ru).collect();
    let active_set = (0..m).filter(|&i| u[i] > 0.0).collect();
    Ok(LcpSolution { u, v, active_set, pivots_used: pivots })
}

fn pivot(t: &mut [Vec<f64>], rhs: &mut [f64], row: usize, col: usize) {
    let d = t[row][col];
    for x in t[row].iter_mut() {
        *x /= d;
    }
    rhs[row] /= d;
    for i in 0..t.len() {
        if i == row {
            continue;
        }
        let f = t[i][col];
        if f == 0.0 {
            continue;
        }
        for j in 0..t[i].len() {
            let delta = f * t[row][j];
            t[i][j] -= delta;
        }
        t[i][col] = 0.0;
        rhs[i] -= f * rhs[row];
    }
}
