//! Skorokhod map of a linear path, evaluated by recursive localization.
//!
//! Given a start x in the orthant and a displacement theta, the constrained
//! path follows x + t*theta until a coordinate hits zero. On the active set
//! J = {j : x_j <= tol} the minimal pushes are the solution u of the
//! complementarity problem on the principal submatrix R[J,J]: the local
//! velocity becomes theta + sum_j u_j d_{i_j} with d_i the columns of R,
//! which keeps active coordinates nonnegative. The velocity is constant
//! until the active set changes, so the image is piecewise linear and the
//! whole map reduces to a short sequence of small LCP solves. Coordinates
//! leaving the wall carry zero push by complementarity, so only arrivals at
//! a wall are events.
//!
//! Chattering (event times shrinking without covering [0,1]) can only occur
//! when the true image collapses to the origin; after `max_events` segments
//! the evaluation truncates and reports exactly that point.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::lcp::{solve_lcp, LcpError};
use crate::math;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug)]
pub struct SkorokhodConfig {
    /// Coordinates at or below this are treated as on the wall.
    pub active_tol: f64,
    /// Segment cap before the evaluation truncates to the origin.
    pub max_events: usize,
    /// Record the per-segment decomposition (off in hot loops).
    pub record_segments: bool,
}

impl SkorokhodConfig {
    /// Defaults for dimension m: tolerance 1e-12, event cap 16 m.
    pub fn for_dim(m: usize) -> Self {
        SkorokhodConfig { active_tol: 1e-12, max_events: 16 * m.max(1), record_segments: false }
    }

    pub fn with_segments(mut self) -> Self {
        self.record_segments = true;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub duration: f64,
    pub start: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Push rates per face (LCP solution scattered to full dimension).
    pub push_rate: Vec<f64>,
}

/// Full account of one reflection step.
#[derive(Clone, Debug)]
pub struct ReflectionBreakdown {
    pub endpoint: Vec<f64>,
    /// Integrated push per face: L^i = integral of the face-i push rate.
    pub face_push: Vec<f64>,
    /// Piecewise-linear decomposition; empty unless segments were recorded.
    pub segments: Vec<Segment>,
    /// True when the event cap was hit before covering [0,1].
    pub truncated: bool,
    /// Unconstrained endpoint x + theta.
    pub z_end: Vec<f64>,
    /// Max Euclidean distance of the constrained path from its start,
    /// attained at segment vertices.
    pub path_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SkorokhodError {
    BadShape,
    /// A start coordinate lies below -active_tol.
    OutsideDomain { index: usize, value: f64 },
    NonFiniteInput,
    Lcp(LcpError),
    /// Path probe fell outside the covered time range of a truncated
    /// evaluation.
    ProbeBeyondCoverage,
}

impl fmt::Display for SkorokhodError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkorokhodError::BadShape => write!(f, "dimension mismatch"),
            SkorokhodError::OutsideDomain { index, value } => {
                write!(f, "coordinate {index} = {value} lies outside the orthant")
            }
            SkorokhodError::NonFiniteInput => write!(f, "nonfinite input"),
            SkorokhodError::Lcp(e) => write!(f, "local complementarity solve failed: {e}"),
            SkorokhodError::ProbeBeyondCoverage => {
                write!(f, "probe time not covered by truncated evaluation")
            }
        }
    }
}

impl core::error::Error for SkorokhodError {}

impl From<LcpError> for SkorokhodError {
    fn from(e: LcpError) -> Self {
        SkorokhodError::Lcp(e)
    }
}

/// Indices on the wall: x_j <= tol. Errors if any coordinate is below -tol.
pub fn active_set(x: &[f64], tol: f64) -> Result<Vec<usize>, SkorokhodError> {
    let mut idx = Vec::new();
    for (j, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(SkorokhodError::NonFiniteInput);
        }
        if v < -tol {
            return Err(SkorokhodError::OutsideDomain { index: j, value: v });
        }
        if v <= tol {
            idx.push(j);
        }
    }
    Ok(idx)
}

/// Evaluates the time-1 Skorokhod image of the linear path x + t*theta.
pub fn reflect(
    x: &[f64],
    theta: &[f64],
    r: &Matrix,
    cfg: &SkorokhodConfig,
) -> Result<ReflectionBreakdown, SkorokhodError> {
    let m = x.len();
    if theta.len() != m || !r.is_square() || r.rows() != m {
        return Err(SkorokhodError::BadShape);
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(SkorokhodError::NonFiniteInput);
    }
    let tol = cfg.active_tol;
    let mut p = x.to_vec();
    for (j, v) in p.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(SkorokhodError::NonFiniteInput);
        }
        if *v < -tol {
            return Err(SkorokhodError::OutsideDomain { index: j, value: *v });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    let z_end: Vec<f64> = x.iter().zip(theta).map(|(a, b)| a + b).collect();
    let mut face_push = vec![0.0; m];
    let mut segments = Vec::new();
    let mut remaining = 1.0f64;
    let mut events = 0usize;
    let mut truncated = false;
    let mut deviation = 0.0f64;
    let mut u_full = vec![0.0; m];
    let mut w = vec![0.0; m];

    loop {
        // Active set and local pushes.
        let active: Vec<usize> = (0..m).filter(|&j| p[j] <= tol).collect();
        for v in u_full.iter_mut() {
            *v = 0.0;
        }
        if active.is_empty() {
            w.copy_from_slice(theta);
        } else {
            let sub = r.principal_submatrix(&active);
            let theta_sub: Vec<f64> = active.iter().map(|&j| theta[j]).collect();
            let sol = solve_lcp(&sub, &theta_sub)?;
            for (k, &j) in active.iter().enumerate() {
                u_full[j] = sol.u[k];
            }
            w.copy_from_slice(theta);
            for (k, &j) in active.iter().enumerate() {
                let uk = sol.u[k];
                if uk != 0.0 {
                    for i in 0..m {
                        w[i] += uk * r.get(i, j);
                    }
                }
            }
            // Wall coordinates move at the complementarity slack, which is
            // nonnegative up to roundoff; freeze the dust so they cannot
            // drift below the wall within the segment.
            for (k, &j) in active.iter().enumerate() {
                w[j] = sol.v[k].max(0.0);
            }
        }

        // First wall arrival among interior coordinates.
        let mut tau = f64::INFINITY;
        for j in 0..m {
            if p[j] > tol && w[j] < 0.0 {
                let t = p[j] / -w[j];
                if t < tau {
                    tau = t;
                }
            }
        }

        let duration = if tau >= remaining { remaining } else { tau };
        if cfg.record_segments {
            segments.push(Segment {
                duration,
                start: p.clone(),
                velocity: w.clone(),
                push_rate: u_full.clone(),
            });
        }
        for j in 0..m {
            face_push[j] += duration * u_full[j];
        }

        if tau >= remaining {
            for j in 0..m {
                p[j] += remaining * w[j];
            }
            let mut d2 = 0.0;
            for j in 0..m {
                let d = p[j] - x[j];
                d2 += d * d;
            }
            deviation = deviation.max(math::sqrt(d2));
            break;
        }

        for j in 0..m {
            p[j] += tau * w[j];
            if p[j] < 0.0 {
                p[j] = 0.0;
            }
        }
        let mut d2 = 0.0;
        for j in 0..m {
            let d = p[j] - x[j];
            d2 += d * d;
        }
        deviation = deviation.max(math::sqrt(d2));
        remaining -= tau;
        events += 1;
        if events >= cfg.max_events {
            // Chattering: the true image is the origin.
            truncated = true;
            for v in p.iter_mut() {
                *v = 0.0;
            }
            break;
        }
    }

    // Endpoint snap: collapse roundoff dust onto the wall.
    for v in p.iter_mut() {
        if v.abs() <= 1e-14 || (*v < 0.0 && *v >= -tol) {
            *v = 0.0;
        }
    }
    debug_assert!(p.iter().all(|&v| v >= 0.0));

    Ok(ReflectionBreakdown {
        endpoint: p,
        face_push,
        segments,
        truncated,
        z_end,
        path_deviation: deviation,
    })
}

/// Positions of the constrained path at the given probe times in [0,1].
pub fn reflect_path_check(
    x: &[f64],
    theta: &[f64],
    r: &Matrix,
    cfg: &SkorokhodConfig,
    probes: &[f64],
) -> Result<Vec<Vec<f64>>, SkorokhodError> {
    let mut with_segments = *cfg;
    with_segments.record_segments = true;
    let bd = reflect(x, theta, r, &with_segments)?;
    let mut out = Vec::with_capacity(probes.len());
    for &t in probes {
        if !(0.0..=1.0).contains(&t) {
            return Err(SkorokhodError::BadShape);
        }
        let mut acc = 0.0;
        let mut pos: Option<Vec<f64>> = None;
        for seg in &bd.segments {
            if t <= acc + seg.duration {
                let dt = t - acc;
                pos = Some(
                    seg.start.iter().zip(&seg.velocity).map(|(s, v)| s + dt * v).collect(),
                );
                break;
            }
            acc += seg.duration;
        }
        match pos {
            Some(p) => out.push(p),
            None => {
                if bd.truncated {
                    return Err(SkorokhodError::ProbeBeyondCoverage);
                }
                // t == 1 up to roundoff against the summed durations.
                out.push(bd.endpoint.clone());
            }
        }
    }
    Ok(out)
}
