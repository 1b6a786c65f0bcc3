//! Decreasing-step Euler recursion for the reflected chain.
//!
//! One step draws an increment U, forms the free move
//! theta = b(X) lambda + sigma(X) sqrt(lambda) U, and projects X + theta
//! back into the orthant through the reflection map. The occupation atom
//! emitted for step k+1 is (X_k, lambda_{k+1}): the measure weights the
//! PRE-step state by the incoming step size, so downstream averages are
//! sums of lambda_k * f(X_{k-1}) without any off-by-one left to callers.
//!
//! Step sizes come from a schedule lambda_k = c k^{-theta} (theta = 0 is
//! the classical constant-step scheme) or an explicit list. Running sums
//! Lambda_n and Lambda_n^(alpha) use compensated accumulators: n can reach
//! 1e8 with shrinking addends, and resumes must be bitwise faithful.

use alloc::vec::Vec;
use core::fmt;

use crate::math::{self, Kahan};
use crate::model::{ModelError, ProblemSpec};
use crate::noise::{NoiseModel, RngStream};
use crate::numerics::Matrix;
use crate::skorokhod::{self, ReflectionBreakdown, SkorokhodConfig, SkorokhodError};

#[derive(Clone, Debug, PartialEq)]
pub enum SchemeError {
    /// Power schedules need c > 0 and 0 <= theta <= 1; explicit schedules
    /// need positive finite entries.
    InvalidSchedule,
    /// An explicit schedule ran out of steps.
    ScheduleExhausted,
    /// Initial state outside the orthant or with mismatched dimension.
    BadState,
    Model(ModelError),
    Skorokhod(SkorokhodError),
}

impl fmt::Display for SchemeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeError::InvalidSchedule => write!(f, "invalid step schedule"),
            SchemeError::ScheduleExhausted => write!(f, "explicit step schedule exhausted"),
            SchemeError::BadState => write!(f, "chain state invalid for this problem"),
            SchemeError::Model(e) => write!(f, "{e}"),
            SchemeError::Skorokhod(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SchemeError {}

impl From<ModelError> for SchemeError {
    fn from(e: ModelError) -> Self {
        SchemeError::Model(e)
    }
}

impl From<SkorokhodError> for SchemeError {
    fn from(e: SkorokhodError) -> Self {
        SchemeError::Skorokhod(e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleKind {
    /// lambda_k = c * k^(-theta), k = 1, 2, ...
    Power { c: f64, theta: f64 },
    Explicit(Vec<f64>),
}

/// Step-size source plus running compensated sums Lambda_n^(alpha).
///
/// alpha = 1 and alpha = 3/2 are always tracked; more exponents can be
/// requested up front. All accumulator state is exposed for checkpointing.
#[derive(Clone, Debug)]
pub struct StepSchedule {
    kind: ScheduleKind,
    n: u64,
    lambda0: f64,
    lambda_sum: Kahan,
    lambda_32_sum: Kahan,
    extra: Vec<(f64, Kahan)>,
}

impl StepSchedule {
    pub fn power(c: f64, theta: f64) -> Result<Self, SchemeError> {
        if !(c > 0.0 && c.is_finite() && (0.0..=1.0).contains(&theta)) {
            return Err(SchemeError::InvalidSchedule);
        }
        Ok(Self::fresh(ScheduleKind::Power { c, theta }, c))
    }

    pub fn explicit(lambdas: Vec<f64>) -> Result<Self, SchemeError> {
        if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(SchemeError::InvalidSchedule);
        }
        let sup = lambdas.iter().copied().fold(0.0f64, f64::max);
        Ok(Self::fresh(ScheduleKind::Explicit(lambdas), sup))
    }

    fn fresh(kind: ScheduleKind, lambda0: f64) -> Self {
        StepSchedule {
            kind,
            n: 0,
            lambda0,
            lambda_sum: Kahan::new(),
            lambda_32_sum: Kahan::new(),
            extra: Vec::new(),
        }
    }

    /// Requests Lambda_n^(alpha) tracking for an extra exponent. Only
    /// allowed before any step is consumed.
    pub fn track_alpha(&mut self, alpha: f64) -> Result<(), SchemeError> {
        if self.n != 0 || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(SchemeError::InvalidSchedule);
        }
        if !self.extra.iter().any(|(a, _)| *a == alpha) {
            self.extra.push((alpha, Kahan::new()));
        }
        Ok(())
    }

    /// Produces lambda_{n+1} and folds it into the running sums.
    pub fn next_lambda(&mut self) -> Result<f64, SchemeError> {
        let k = self.n + 1;
        let lambda = match &self.kind {
            ScheduleKind::Power { c, theta } => {
                if *theta == 0.0 {
                    *c
                } else {
                    c * math::powf(k as f64, -theta)
                }
            }
            ScheduleKind::Explicit(list) => {
                let Some(&l) = list.get(self.n as usize) else {
                    return Err(SchemeError::ScheduleExhausted);
                };
                l
            }
        };
        self.n = k;
        self.lambda_sum.add(lambda);
        self.lambda_32_sum.add(lambda * math::sqrt(lambda));
        for (alpha, acc) in &mut self.extra {
            acc.add(math::powf(lambda, *alpha));
        }
        Ok(lambda)
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// Steps consumed so far.
    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// sup_k lambda_k (the first step for power schedules).
    pub fn lambda_sup(&self) -> f64 {
        self.lambda0
    }

    /// Lambda_n = sum of consumed step sizes.
    pub fn total(&self) -> f64 {
        self.lambda_sum.value()
    }

    /// Lambda_n^(alpha) for a tracked exponent (1 and 3/2 always are).
    pub fn total_pow(&self, alpha: f64) -> Option<f64> {
        if alpha == 1.0 {
            return Some(self.lambda_sum.value());
        }
        if alpha == 1.5 {
            return Some(self.lambda_32_sum.value());
        }
        self.extra.iter().find(|(a, _)| *a == alpha).map(|(_, acc)| acc.value())
    }

    pub fn snapshot(&self) -> ScheduleSnapshot {
        ScheduleSnapshot {
            n: self.n,
            lambda0: self.lambda0,
            lambda_parts: self.lambda_sum.parts(),
            lambda_32_parts: self.lambda_32_sum.parts(),
            extra: self.extra.iter().map(|(a, acc)| (*a, acc.parts())).collect(),
        }
    }

    /// Rebuilds a schedule mid-run; bitwise faithful to `snapshot`.
    pub fn restore(kind: ScheduleKind, snap: &ScheduleSnapshot) -> Result<Self, SchemeError> {
        match &kind {
            ScheduleKind::Power { c, theta } => {
                if !(*c > 0.0 && c.is_finite() && (0.0..=1.0).contains(theta)) {
                    return Err(SchemeError::InvalidSchedule);
                }
            }
            ScheduleKind::Explicit(list) => {
                if (snap.n as usize) > list.len() {
                    return Err(SchemeError::InvalidSchedule);
                }
            }
        }
        Ok(StepSchedule {
            kind,
            n: snap.n,
            lambda0: snap.lambda0,
            lambda_sum: Kahan::from_parts(snap.lambda_parts.0, snap.lambda_parts.1),
            lambda_32_sum: Kahan::from_parts(snap.lambda_32_parts.0, snap.lambda_32_parts.1),
            extra: snap.extra.iter().map(|(a, p)| (*a, Kahan::from_parts(p.0, p.1))).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleSnapshot {
    pub n: u64,
    pub lambda0: f64,
    pub lambda_parts: (f64, f64),
    pub lambda_32_parts: (f64, f64),
    pub extra: Vec<(f64, (f64, f64))>,
}

/// Everything the recursion carries between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub k: u64,
    pub x: Vec<f64>,
    pub stream: RngStream,
    pub truncation_count: u64,
}

impl ChainState {
    pub fn new(x0: Vec<f64>, stream: RngStream) -> Result<Self, SchemeError> {
        if x0.is_empty() || x0.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(SchemeError::BadState);
        }
        Ok(ChainState { k: 0, x: x0, stream, truncation_count: 0 })
    }

    pub fn snapshot(&self) -> ChainSnapshot {
        ChainSnapshot {
            k: self.k,
            x: self.x.clone(),
            master_seed: self.stream.master_seed(),
            replication_index: self.stream.replication_index(),
            counter: self.stream.counter(),
            truncation_count: self.truncation_count,
        }
    }

    pub fn restore(snap: &ChainSnapshot) -> Result<Self, SchemeError> {
        if snap.x.is_empty() || snap.x.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(SchemeError::BadState);
        }
        Ok(ChainState {
            k: snap.k,
            x: snap.x.clone(),
            stream: RngStream::with_counter(snap.master_seed, snap.replication_index, snap.counter),
            truncation_count: snap.truncation_count,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSnapshot {
    pub k: u64,
    pub x: Vec<f64>,
    pub master_seed: u64,
    pub replication_index: u64,
    pub counter: u64,
    pub truncation_count: u64,
}

/// Consumer of the per-step output stream.
pub trait StepSink {
    /// Occupation atom: the pre-step state weighted by the incoming step
    /// size. Receives (X_k, lambda_{k+1}).
    fn atom(&mut self, x: &[f64], lambda: f64);

    /// Full reflection detail for one step; `x` and `lambda` repeat the
    /// atom just emitted, `theta` is the free displacement and `u` the raw
    /// noise increment behind it (boundary audits need its norm).
    fn reflection(
        &mut self,
        x: &[f64],
        theta: &[f64],
        u: &[f64],
        breakdown: &ReflectionBreakdown,
        lambda: f64,
    ) {
        let _ = (x, theta, u, breakdown, lambda);
    }
}

/// Feeds two sinks from one run.
pub struct SinkPair<'a, A: StepSink + ?Sized, B: StepSink + ?Sized>(pub &'a mut A, pub &'a mut B);

impl<A: StepSink + ?Sized, B: StepSink + ?Sized> StepSink for SinkPair<'_, A, B> {
    fn atom(&mut self, x: &[f64], lambda: f64) {
        self.0.atom(x, lambda);
        self.1.atom(x, lambda);
    }

    fn reflection(
        &mut self,
        x: &[f64],
        theta: &[f64],
        u: &[f64],
        breakdown: &ReflectionBreakdown,
        lambda: f64,
    ) {
        self.0.reflection(x, theta, u, breakdown, lambda);
        self.1.reflection(x, theta, u, breakdown, lambda);
    }
}

/// Swallows the stream; useful for burn-in or pure endpoint runs.
pub struct NullSink;

impl StepSink for NullSink {
    fn atom(&mut self, _x: &[f64], _lambda: f64) {}
}

/// Advances the chain one step, feeding the sink.
pub fn step(
    state: &mut ChainState,
    spec: &ProblemSpec,
    sched: &mut StepSchedule,
    model: &NoiseModel,
    cfg: &SkorokhodConfig,
    sink: &mut dyn StepSink,
) -> Result<(), SchemeError> {
    let m = spec.dim();
    if state.x.len() != m {
        return Err(SchemeError::BadState);
    }
    let lambda = sched.next_lambda()?;
    sink.atom(&state.x, lambda);

    let u = crate::noise::draw_increment(model, &mut state.stream, m);

    let drift_tmp;
    let b: &[f64] = match spec.drift().constant_value() {
        Some(c) => c,
        None => {
            drift_tmp = spec.drift().eval(&state.x, m)?;
            &drift_tmp
        }
    };
    let sigma_tmp;
    let sigma: &Matrix = match spec.diffusion().constant_value() {
        Some(s) => s,
        None => {
            sigma_tmp = spec.diffusion().eval(&state.x, m)?;
            &sigma_tmp
        }
    };

    let sqrt_lambda = math::sqrt(lambda);
    let mut theta = sigma.mul_vec(&u);
    for i in 0..m {
        theta[i] = b[i] * lambda + sqrt_lambda * theta[i];
    }

    let breakdown = skorokhod::reflect(&state.x, &theta, spec.reflection(), cfg)?;
    sink.reflection(&state.x, &theta, &u, &breakdown, lambda);
    if breakdown.truncated {
        state.truncation_count += 1;
    }
    state.x.copy_from_slice(&breakdown.endpoint);
    state.k += 1;
    Ok(())
}

/// Runs `n_steps` steps. Resuming from a snapshot and continuing is
/// bitwise identical to an uninterrupted run.
pub fn run(
    state: &mut ChainState,
    spec: &ProblemSpec,
    sched: &mut StepSchedule,
    model: &NoiseModel,
    cfg: &SkorokhodConfig,
    n_steps: u64,
    sink: &mut dyn StepSink,
) -> Result<(), SchemeError> {
    for _ in 0..n_steps {
        step(state, spec, sched, model, cfg, sink)?;
    }
    Ok(())
}
