//! Streaming weighted occupation measure and boundary measures.
//!
//! The chain emits atoms (X, lambda); everything here is a single pass over
//! that stream with compensated accumulators. Exact integrals come from
//! f-sinks registered BEFORE the run (each keeps sum lambda_k f(X_{k-1})
//! exactly); the histogram serves cdfs, quantiles and KS distances; a
//! weighted reservoir (capacity-bounded, keyed by u^(1/w) kept in log form)
//! holds a subsample for post-hoc work. Nothing stores the full stream.
//!
//! Boundary measures collect, for each face the path pushed on, atoms along
//! the segment from the unconstrained endpoint z to the reflected endpoint,
//! weighted by the face push times Gauss-Legendre node weights. Since the
//! probe segment is linear in t, the 3-node rule integrates smooth
//! integrands essentially exactly.

use alloc::collections::BinaryHeap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::math::{self, Kahan};
use crate::scheme::StepSink;
use crate::skorokhod::ReflectionBreakdown;

pub type TestFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
/// Face-indexed integrand for boundary measures: (face, point) -> value.
pub type FaceFn = dyn Fn(usize, &[f64]) -> f64 + Send + Sync;

#[derive(Clone, Debug, PartialEq)]
pub enum MeasureError {
    BadShape,
    /// Atom weight must be positive and finite; the state must sit in the
    /// orthant.
    BadAtom,
    /// integrate() was asked for a function that was never registered.
    UnregisteredFunction,
    /// Streaming sums are only exact when registration precedes all atoms.
    RegistrationAfterAbsorb,
    /// merge() requires identical binning, dimension and sink names.
    ConfigMismatch,
    EmptyMeasure,
}

impl fmt::Display for MeasureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            MeasureError::BadShape => "dimension mismatch",
            MeasureError::BadAtom => "atom outside the orthant or with bad weight",
            MeasureError::UnregisteredFunction => "function not registered for streaming",
            MeasureError::RegistrationAfterAbsorb => "register functions before absorbing atoms",
            MeasureError::ConfigMismatch => "measure configurations differ",
            MeasureError::EmptyMeasure => "measure holds no atoms",
        };
        write!(f, "{msg}")
    }
}

impl core::error::Error for MeasureError {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureConfig {
    /// Histogram bins per coordinate on [0, x_max); one overflow bin above.
    pub bins: usize,
    pub x_max: f64,
    /// Weighted reservoir capacity (0 disables the reservoir).
    pub reservoir_capacity: usize,
    /// Seed pair for the reservoir's dedicated key stream; independent of
    /// the chain noise so subsampling never perturbs the dynamics.
    pub reservoir_seed: u64,
    pub reservoir_stream: u64,
}

impl MeasureConfig {
    pub fn with_seed(reservoir_seed: u64, reservoir_stream: u64) -> Self {
        MeasureConfig {
            bins: 2000,
            x_max: 20.0,
            reservoir_capacity: 1 << 20,
            reservoir_seed,
            reservoir_stream,
        }
    }

    fn compatible(&self, other: &MeasureConfig) -> bool {
        self.bins == other.bins && self.x_max == other.x_max
    }
}

struct FnSink {
    name: String,
    f: Arc<TestFn>,
    acc: Kahan,
}

#[derive(Clone, Debug)]
struct ResAtom {
    /// ln(u)/w; larger keeps. Log form avoids underflow at tiny weights.
    log_key: f64,
    x: Vec<f64>,
    w: f64,
}

impl PartialEq for ResAtom {
    fn eq(&self, other: &Self) -> bool {
        self.log_key.total_cmp(&other.log_key) == Ordering::Equal
    }
}
impl Eq for ResAtom {}
impl PartialOrd for ResAtom {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ResAtom {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the SMALLEST key on
        // top so eviction is O(log k).
        other.log_key.total_cmp(&self.log_key)
    }
}

/// Streaming nu_n: total weight, raw moments to order 4, pairwise first
/// cross moments, per-coordinate histograms with exact edge masses, named
/// f-sinks and a weighted reservoir.
pub struct WeightedMeasure {
    dim: usize,
    config: MeasureConfig,
    n: u64,
    dropped: u64,
    total: Kahan,
    /// moments[i][p] = sum of lambda * x_i^(p+1), p = 0..3.
    moments: Vec<[Kahan; 4]>,
    /// Upper triangle i < j of sum lambda * x_i * x_j, row-major.
    cross: Vec<Kahan>,
    hist: Vec<Vec<Kahan>>,
    /// Mass sitting exactly on a bin's left edge (atom-at-wall detection;
    /// makes cdf values at grid points exact).
    at_edge: Vec<Vec<Kahan>>,
    overflow: Vec<Kahan>,
    sinks: Vec<FnSink>,
    reservoir: BinaryHeap<ResAtom>,
    key_stream: crate::noise::RngStream,
}

fn cross_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < dim);
    // Row-major upper triangle offset.
    i * dim - i * (i + 1) / 2 + (j - i - 1)
}

impl WeightedMeasure {
    pub fn new(dim: usize, config: MeasureConfig) -> Result<Self, MeasureError> {
        if dim == 0 || config.bins == 0 || !(config.x_max > 0.0) {
            return Err(MeasureError::BadShape);
        }
        Ok(WeightedMeasure {
            dim,
            config,
            n: 0,
            dropped: 0,
            total: Kahan::new(),
            moments: vec![[Kahan::new(); 4]; dim],
            cross: vec![Kahan::new(); dim * (dim - 1) / 2],
            hist: vec![vec![Kahan::new(); config.bins]; dim],
            at_edge: vec![vec![Kahan::new(); config.bins]; dim],
            overflow: vec![Kahan::new(); dim],
            sinks: Vec::new(),
            reservoir: BinaryHeap::new(),
            key_stream: crate::noise::RngStream::new(
                config.reservoir_seed,
                config.reservoir_stream,
            ),
        })
    }

    /// Registers an exact streaming integral of `f`. Must happen before the
    /// first atom so the sum covers the whole stream.
    pub fn register_fn(&mut self, name: &str, f: Arc<TestFn>) -> Result<(), MeasureError> {
        if self.n != 0 {
            return Err(MeasureError::RegistrationAfterAbsorb);
        }
        if self.sinks.iter().any(|s| s.name == name) {
            return Err(MeasureError::ConfigMismatch);
        }
        self.sinks.push(FnSink { name: name.to_string(), f, acc: Kahan::new() });
        Ok(())
    }

    pub fn absorb(&mut self, x: &[f64], lambda: f64) -> Result<(), MeasureError> {
        if x.len() != self.dim {
            return Err(MeasureError::BadShape);
        }
        if !(lambda > 0.0 && lambda.is_finite())
            || x.iter().any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(MeasureError::BadAtom);
        }
        self.n += 1;
        self.total.add(lambda);
        let width = self.config.x_max / self.config.bins as f64;
        for i in 0..self.dim {
            let xi = x[i];
            let x2 = xi * xi;
            self.moments[i][0].add(lambda * xi);
            self.moments[i][1].add(lambda * x2);
            self.moments[i][2].add(lambda * x2 * xi);
            self.moments[i][3].add(lambda * x2 * x2);
            if xi >= self.config.x_max {
                self.overflow[i].add(lambda);
            } else {
                let idx = ((xi / width) as usize).min(self.config.bins - 1);
                self.hist[i][idx].add(lambda);
                if xi == idx as f64 * width {
                    self.at_edge[i][idx].add(lambda);
                }
            }
            for j in (i + 1)..self.dim {
                self.cross[cross_index(self.dim, i, j)].add(lambda * xi * x[j]);
            }
        }
        for sink in &mut self.sinks {
            sink.acc.add(lambda * (sink.f)(x));
        }
        if self.config.reservoir_capacity > 0 {
            // One key per atom, always drawn: the stream position depends
            // only on the atom count, so resumes stay aligned.
            let u = self.key_stream.uniform_open();
            let log_key = math::ln(u) / lambda;
            if self.reservoir.len() < self.config.reservoir_capacity {
                self.reservoir.push(ResAtom { log_key, x: x.to_vec(), w: lambda });
            } else if self
                .reservoir
                .peek()
                .is_some_and(|worst| log_key > worst.log_key)
            {
                self.reservoir.pop();
                self.reservoir.push(ResAtom { log_key, x: x.to_vec(), w: lambda });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &MeasureConfig {
        &self.config
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Atoms rejected on the sink path (should stay 0 on healthy runs).
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn total_weight(&self) -> f64 {
        self.total.value()
    }

    /// nu_n(f) for a registered function: exact streaming sum / Lambda_n.
    pub fn integrate(&self, name: &str) -> Result<f64, MeasureError> {
        let sum = self.raw_sum(name)?;
        if self.n == 0 {
            return Err(MeasureError::EmptyMeasure);
        }
        Ok(sum / self.total.value())
    }

    /// Unnormalized sum lambda_k f(X_{k-1}) for a registered function.
    pub fn raw_sum(&self, name: &str) -> Result<f64, MeasureError> {
        self.sinks
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.acc.value())
            .ok_or(MeasureError::UnregisteredFunction)
    }

    pub fn registered_names(&self) -> Vec<String> {
        self.sinks.iter().map(|s| s.name.clone()).collect()
    }

    /// Normalized raw moment E[x_i^order], order 1..=4.
    pub fn moment(&self, coord: usize, order: usize) -> Result<f64, MeasureError> {
        if coord >= self.dim || order == 0 || order > 4 {
            return Err(MeasureError::BadShape);
        }
        if self.n == 0 {
            return Err(MeasureError::EmptyMeasure);
        }
        Ok(self.moments[coord][order - 1].value() / self.total.value())
    }

    pub fn mean(&self, coord: usize) -> Result<f64, MeasureError> {
        self.moment(coord, 1)
    }

    pub fn variance(&self, coord: usize) -> Result<f64, MeasureError> {
        let m1 = self.moment(coord, 1)?;
        Ok((self.moment(coord, 2)? - m1 * m1).max(0.0))
    }

    /// Normalized E[x_i x_j], i != j.
    pub fn cross_moment(&self, i: usize, j: usize) -> Result<f64, MeasureError> {
        if i >= self.dim || j >= self.dim || i == j {
            return Err(MeasureError::BadShape);
        }
        if self.n == 0 {
            return Err(MeasureError::EmptyMeasure);
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        Ok(self.cross[cross_index(self.dim, a, b)].value() / self.total.value())
    }

    /// Marginal cdf on the bin-edge grid plus summary moments.
    pub fn marginal_stats(&self, coord: usize) -> Result<MarginalStats, MeasureError> {
        if coord >= self.dim {
            return Err(MeasureError::BadShape);
        }
        if self.n == 0 {
            return Err(MeasureError::EmptyMeasure);
        }
        let bins = self.config.bins;
        let width = self.config.x_max / bins as f64;
        let total = self.total.value();
        let mut grid = Vec::with_capacity(bins + 1);
        let mut cdf = Vec::with_capacity(bins + 1);
        let mut cdf_left = Vec::with_capacity(bins + 1);
        let mut below = Kahan::new();
        for j in 0..bins {
            grid.push(j as f64 * width);
            let b = below.value();
            cdf_left.push(b / total);
            cdf.push((b + self.at_edge[coord][j].value()) / total);
            below.add(self.hist[coord][j].value());
        }
        grid.push(self.config.x_max);
        let b = below.value();
        cdf_left.push(b / total);
        cdf.push(b / total);
        Ok(MarginalStats {
            coord,
            mean: self.mean(coord)?,
            variance: self.variance(coord)?,
            overflow_mass: self.overflow[coord].value() / total,
            grid,
            cdf,
            cdf_left,
        })
    }

    /// nu_n(f) approximated over the reservoir subsample (weight-normalized
    /// average). Documented approximation; use registered sinks for exact
    /// values.
    pub fn integrate_sampled(&self, f: &TestFn) -> Result<f64, MeasureError> {
        if self.reservoir.is_empty() {
            return Err(MeasureError::EmptyMeasure);
        }
        let mut num = Kahan::new();
        let mut den = Kahan::new();
        for atom in self.reservoir.iter() {
            num.add(atom.w * f(&atom.x));
            den.add(atom.w);
        }
        Ok(num.value() / den.value())
    }

    /// Reservoir contents, best key first (deterministic order).
    pub fn reservoir_atoms(&self) -> Vec<(Vec<f64>, f64)> {
        let mut all: Vec<&ResAtom> = self.reservoir.iter().collect();
        all.sort_by(|a, b| b.log_key.total_cmp(&a.log_key));
        all.into_iter().map(|a| (a.x.clone(), a.w)).collect()
    }

    /// Accumulator-wise sum. Merging R replications estimates the same
    /// measure but is NOT the single-chain measure of the concatenated run
    /// (the weight profile restarts per replication).
    pub fn merge(&mut self, other: WeightedMeasure) -> Result<(), MeasureError> {
        if self.dim != other.dim || !self.config.compatible(&other.config) {
            return Err(MeasureError::ConfigMismatch);
        }
        let mut my_names = self.registered_names();
        let mut their_names = other.registered_names();
        my_names.sort();
        their_names.sort();
        if my_names != their_names {
            return Err(MeasureError::ConfigMismatch);
        }
        self.n += other.n;
        self.dropped += other.dropped;
        merge_kahan(&mut self.total, &other.total);
        for i in 0..self.dim {
            for p in 0..4 {
                merge_kahan(&mut self.moments[i][p], &other.moments[i][p]);
            }
            for (mine, theirs) in self.hist[i].iter_mut().zip(&other.hist[i]) {
                merge_kahan(mine, theirs);
            }
            for (mine, theirs) in self.at_edge[i].iter_mut().zip(&other.at_edge[i]) {
                merge_kahan(mine, theirs);
            }
            merge_kahan(&mut self.overflow[i], &other.overflow[i]);
        }
        for (mine, theirs) in self.cross.iter_mut().zip(&other.cross) {
            merge_kahan(mine, theirs);
        }
        for sink in &mut self.sinks {
            let theirs = other
                .sinks
                .iter()
                .find(|s| s.name == sink.name)
                .expect("checked name sets");
            merge_kahan(&mut sink.acc, &theirs.acc);
        }
        // Reservoir union keeps the globally best keys: exactly the sample
        // a single reservoir over the concatenated stream would hold.
        for atom in other.reservoir.into_iter() {
            if self.reservoir.len() < self.config.reservoir_capacity {
                self.reservoir.push(atom);
            } else if self
                .reservoir
                .peek()
                .is_some_and(|worst| atom.log_key > worst.log_key)
            {
                self.reservoir.pop();
                self.reservoir.push(atom);
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> MeasureSnapshot {
        let mut res: Vec<(f64, Vec<f64>, f64)> = self
            .reservoir
            .iter()
            .map(|a| (a.log_key, a.x.clone(), a.w))
            .collect();
        res.sort_by(|a, b| b.0.total_cmp(&a.0));
        MeasureSnapshot {
            dim: self.dim,
            config: self.config,
            n: self.n,
            dropped: self.dropped,
            total: self.total.parts(),
            moments: self
                .moments
                .iter()
                .map(|m| [m[0].parts(), m[1].parts(), m[2].parts(), m[3].parts()])
                .collect(),
            cross: self.cross.iter().map(Kahan::parts).collect(),
            hist: self
                .hist
                .iter()
                .map(|h| h.iter().map(Kahan::parts).collect())
                .collect(),
            at_edge: self
                .at_edge
                .iter()
                .map(|h| h.iter().map(Kahan::parts).collect())
                .collect(),
            overflow: self.overflow.iter().map(Kahan::parts).collect(),
            sinks: self
                .sinks
                .iter()
                .map(|s| (s.name.clone(), s.acc.parts()))
                .collect(),
            reservoir: res,
            key_counter: self.key_stream.counter(),
        }
    }

    /// Rebuilds a measure from a snapshot; functions are re-bound by name.
    pub fn restore(
        snap: &MeasureSnapshot,
        fns: &[(String, Arc<TestFn>)],
    ) -> Result<Self, MeasureError> {
        let mut m = WeightedMeasure::new(snap.dim, snap.config)?;
        if snap.moments.len() != snap.dim
            || snap.hist.len() != snap.dim
            || snap.at_edge.len() != snap.dim
            || snap.overflow.len() != snap.dim
            || snap.cross.len() != snap.dim * (snap.dim - 1) / 2
        {
            return Err(MeasureError::BadShape);
        }
        m.n = snap.n;
        m.dropped = snap.dropped;
        m.total = Kahan::from_parts(snap.total.0, snap.total.1);
        for (i, parts) in snap.moments.iter().enumerate() {
            for p in 0..4 {
                m.moments[i][p] = Kahan::from_parts(parts[p].0, parts[p].1);
            }
        }
        for (i, parts) in snap.cross.iter().enumerate() {
            m.cross[i] = Kahan::from_parts(parts.0, parts.1);
        }
        for i in 0..snap.dim {
            if snap.hist[i].len() != snap.config.bins || snap.at_edge[i].len() != snap.config.bins
            {
                return Err(MeasureError::BadShape);
            }
            for (j, parts) in snap.hist[i].iter().enumerate() {
                m.hist[i][j] = Kahan::from_parts(parts.0, parts.1);
            }
            for (j, parts) in snap.at_edge[i].iter().enumerate() {
                m.at_edge[i][j] = Kahan::from_parts(parts.0, parts.1);
            }
            m.overflow[i] = Kahan::from_parts(snap.overflow[i].0, snap.overflow[i].1);
        }
        for (name, parts) in &snap.sinks {
            let f = fns
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, f)| f.clone())
                .ok_or(MeasureError::UnregisteredFunction)?;
            m.sinks.push(FnSink {
                name: name.clone(),
                f,
                acc: Kahan::from_parts(parts.0, parts.1),
            });
        }
        for (log_key, x, w) in &snap.reservoir {
            if x.len() != snap.dim {
                return Err(MeasureError::BadShape);
            }
            m.reservoir.push(ResAtom { log_key: *log_key, x: x.clone(), w: *w });
        }
        m.key_stream = crate::noise::RngStream::with_counter(
            snap.config.reservoir_seed,
            snap.config.reservoir_stream,
            snap.key_counter,
        );
        Ok(m)
    }
}

impl StepSink for WeightedMeasure {
    fn atom(&mut self, x: &[f64], lambda: f64) {
        if self.absorb(x, lambda).is_err() {
            self.dropped += 1;
        }
    }
}

fn merge_kahan(into: &mut Kahan, from: &Kahan) {
    let (sum, carry) = from.parts();
    into.add(sum);
    into.add(carry);
}

/// Plain-data image of a measure for checkpointing; bitwise faithful.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureSnapshot {
    pub dim: usize,
    pub config: MeasureConfig,
    pub n: u64,
    pub dropped: u64,
    pub total: (f64, f64),
    pub moments: Vec<[(f64, f64); 4]>,
    pub cross: Vec<(f64, f64)>,
    pub hist: Vec<Vec<(f64, f64)>>,
    pub at_edge: Vec<Vec<(f64, f64)>>,
    pub overflow: Vec<(f64, f64)>,
    pub sinks: Vec<(String, (f64, f64))>,
    /// (log_key, x, w), best key first.
    pub reservoir: Vec<(f64, Vec<f64>, f64)>,
    pub key_counter: u64,
}

/// Marginal summary: cdf at bin edges (right-continuous values in `cdf`,
/// left limits in `cdf_left`), plus exact mean and variance from the
/// moment accumulators.
#[derive(Clone, Debug)]
pub struct MarginalStats {
    pub coord: usize,
    pub mean: f64,
    pub variance: f64,
    /// Mass at or above x_max (not represented in the grid).
    pub overflow_mass: f64,
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    pub cdf_left: Vec<f64>,
}

impl MarginalStats {
    /// Lower quantile: the smallest x with F(x) >= q. Exact at atoms that
    /// sit on bin edges; linear within bins otherwise. Saturates at x_max.
    pub fn quantile(&self, q: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&q));
        let bins = self.grid.len() - 1;
        for j in 0..bins {
            if self.cdf[j] >= q {
                return self.grid[j];
            }
            let next_left = self.cdf_left[j + 1];
            if next_left >= q {
                let inner = next_left - self.cdf[j];
                if inner <= 0.0 {
                    return self.grid[j + 1];
                }
                let frac = (q - self.cdf[j]) / inner;
                return self.grid[j] + frac * (self.grid[j + 1] - self.grid[j]);
            }
        }
        self.grid[bins]
    }

    /// Sup distance to a reference cdf over the grid, testing both the
    /// right-continuous value and the left limit at each edge (so atom
    /// jumps count fully).
    pub fn ks_against(&self, reference: &dyn Fn(f64) -> f64) -> f64 {
        let mut ks = 0.0f64;
        for (j, &x) in self.grid.iter().enumerate() {
            let r = reference(x);
            ks = ks.max((self.cdf[j] - r).abs());
            ks = ks.max((self.cdf_left[j] - r).abs());
        }
        ks
    }
}

const GL3_NODES: [f64; 3] = [0.1127016653792583, 0.5, 0.8872983346207417];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0];

struct FaceSink {
    name: String,
    f: Arc<FaceFn>,
    /// One accumulator per face.
    acc: Vec<Kahan>,
}

/// Per-face boundary measures mu^i built from reflection breakdowns.
///
/// For a step with face pushes L^i > 0, atoms sit on the probe segment
/// Pi^t = z + t (endpoint - z) at the Gauss-Legendre nodes, carrying weight
/// (node weight) * L^i. Masses and registered face integrals accumulate
/// exactly; atoms are only retained when diagnostics ask for them.
pub struct BoundaryMeasure {
    dim: usize,
    /// Coefficient bound used by the locality audit.
    a1: f64,
    masses: Vec<Kahan>,
    sinks: Vec<FaceSink>,
    /// Running max of |L|_2 / (lambda + sqrt(lambda) |U|_2): the per-step
    /// push norm the audit bound is built from.
    k_hat: f64,
    audit_violations: u64,
    steps_seen: u64,
    boundary_steps: u64,
    dropped: u64,
    retained: Option<Vec<FaceAtom>>,
}

#[derive(Clone, Debug)]
pub struct FaceAtom {
    pub face: usize,
    pub point: Vec<f64>,
    pub weight: f64,
    pub lambda: f64,
}

impl BoundaryMeasure {
    /// `a1` is the coefficient bound of the driving problem (used only to
    /// scale the locality audit).
    pub fn new(dim: usize, a1: f64) -> Result<Self, MeasureError> {
        if dim == 0 || !(a1 > 0.0 && a1.is_finite()) {
            return Err(MeasureError::BadShape);
        }
        Ok(BoundaryMeasure {
            dim,
            a1,
            masses: vec![Kahan::new(); dim],
            sinks: Vec::new(),
            k_hat: 0.0,
            audit_violations: 0,
            steps_seen: 0,
            boundary_steps: 0,
            dropped: 0,
            retained: None,
        })
    }

    /// Keeps every atom in memory; for tests and small diagnostic runs only.
    pub fn retain_atoms(mut self) -> Self {
        self.retained = Some(Vec::new());
        self
    }

    pub fn register_fn(&mut self, name: &str, f: Arc<FaceFn>) -> Result<(), MeasureError> {
        if self.steps_seen != 0 {
            return Err(MeasureError::RegistrationAfterAbsorb);
        }
        if self.sinks.iter().any(|s| s.name == name) {
            return Err(MeasureError::ConfigMismatch);
        }
        self.sinks.push(FaceSink {
            name: name.to_string(),
            f,
            acc: vec![Kahan::new(); self.dim],
        });
        Ok(())
    }

    pub fn absorb_boundary(
        &mut self,
        breakdown: &ReflectionBreakdown,
        lambda: f64,
        u: &[f64],
    ) -> Result<(), MeasureError> {
        if breakdown.endpoint.len() != self.dim || u.len() != self.dim {
            return Err(MeasureError::BadShape);
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(MeasureError::BadAtom);
        }
        self.steps_seen += 1;
        let push_norm = math::norm2(&breakdown.face_push);
        if push_norm == 0.0 {
            return Ok(());
        }
        self.boundary_steps += 1;
        let scale = lambda + math::sqrt(lambda) * math::norm2(u);
        if scale > 0.0 {
            self.k_hat = self.k_hat.max(push_norm / scale);
        }
        let bound = self.a1 * (self.k_hat + 1.0) * scale;
        let z = &breakdown.z_end;
        let end = &breakdown.endpoint;
        let mut point = vec![0.0; self.dim];
        for (t, wq) in GL3_NODES.iter().zip(GL3_WEIGHTS.iter()) {
            for i in 0..self.dim {
                point[i] = z[i] + t * (end[i] - z[i]);
            }
            for face in 0..self.dim {
                let l = breakdown.face_push[face];
                if l <= 0.0 {
                    continue;
                }
                let weight = wq * l;
                self.masses[face].add(weight);
                if point[face].abs() > bound {
                    self.audit_violations += 1;
                }
                for sink in &mut self.sinks {
                    sink.acc[face].add(weight * (sink.f)(face, &point));
                }
                if let Some(atoms) = &mut self.retained {
                    atoms.push(FaceAtom {
                        face,
                        point: point.clone(),
                        weight,
                        lambda,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Accumulated (unnormalized) mass of face i.
    pub fn mass(&self, face: usize) -> f64 {
        self.masses[face].value()
    }

    /// Unnormalized sum over face-i atoms of f; normalize by the occupation
    /// measure's Lambda_n to get mu_n^i(f).
    pub fn raw_face_sum(&self, name: &str, face: usize) -> Result<f64, MeasureError> {
        if face >= self.dim {
            return Err(MeasureError::BadShape);
        }
        self.sinks
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.acc[face].value())
            .ok_or(MeasureError::UnregisteredFunction)
    }

    /// Atoms whose face coordinate escaped the locality bound
    /// a1 (k_hat + 1)(lambda + sqrt(lambda)|U|).
    pub fn audit_violations(&self) -> u64 {
        self.audit_violations
    }

    pub fn k_hat(&self) -> f64 {
        self.k_hat
    }

    pub fn steps_seen(&self) -> u64 {
        self.steps_seen
    }

    pub fn boundary_steps(&self) -> u64 {
        self.boundary_steps
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn retained_atoms(&self) -> Option<&[FaceAtom]> {
        self.retained.as_deref()
    }

    pub fn merge(&mut self, other: BoundaryMeasure) -> Result<(), MeasureError> {
        if self.dim != other.dim {
            return Err(MeasureError::ConfigMismatch);
        }
        let mut my_names: Vec<&str> = self.sinks.iter().map(|s| s.name.as_str()).collect();
        let mut their_names: Vec<&str> = other.sinks.iter().map(|s| s.name.as_str()).collect();
        my_names.sort_unstable();
        their_names.sort_unstable();
        if my_names != their_names {
            return Err(MeasureError::ConfigMismatch);
        }
        for (mine, theirs) in self.masses.iter_mut().zip(&other.masses) {
            merge_kahan(mine, theirs);
        }
        for sink in &mut self.sinks {
            let theirs = other
                .sinks
                .iter()
                .find(|s| s.name == sink.name)
                .expect("checked name sets");
            for (mine, t) in sink.acc.iter_mut().zip(&theirs.acc) {
                merge_kahan(mine, t);
            }
        }
        self.k_hat = self.k_hat.max(other.k_hat);
        self.audit_violations += other.audit_violations;
        self.steps_seen += other.steps_seen;
        self.boundary_steps += other.boundary_steps;
        self.dropped += other.dropped;
        if let (Some(mine), Some(theirs)) = (&mut self.retained, other.retained) {
            mine.extend(theirs);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> BoundarySnapshot {
        BoundarySnapshot {
            dim: self.dim,
            a1: self.a1,
            masses: self.masses.iter().map(Kahan::parts).collect(),
            sinks: self
                .sinks
                .iter()
                .map(|s| (s.name.clone(), s.acc.iter().map(Kahan::parts).collect()))
                .collect(),
            k_hat: self.k_hat,
            audit_violations: self.audit_violations,
            steps_seen: self.steps_seen,
            boundary_steps: self.boundary_steps,
            dropped: self.dropped,
        }
    }

    pub fn restore(
        snap: &BoundarySnapshot,
        fns: &[(String, Arc<FaceFn>)],
    ) -> Result<Self, MeasureError> {
        let mut bm = BoundaryMeasure::new(snap.dim, snap.a1)?;
        if snap.masses.len() != snap.dim {
            return Err(MeasureError::BadShape);
        }
        for (i, parts) in snap.masses.iter().enumerate() {
            bm.masses[i] = Kahan::from_parts(parts.0, parts.1);
        }
        for (name, accs) in &snap.sinks {
            if accs.len() != snap.dim {
                return Err(MeasureError::BadShape);
            }
            let f = fns
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, f)| f.clone())
                .ok_or(MeasureError::UnregisteredFunction)?;
            bm.sinks.push(FaceSink {
                name: name.clone(),
                f,
                acc: accs.iter().map(|p| Kahan::from_parts(p.0, p.1)).collect(),
            });
        }
        bm.k_hat = snap.k_hat;
        bm.audit_violations = snap.audit_violations;
        bm.steps_seen = snap.steps_seen;
        bm.boundary_steps = snap.boundary_steps;
        bm.dropped = snap.dropped;
        Ok(bm)
    }
}

impl StepSink for BoundaryMeasure {
    fn atom(&mut self, _x: &[f64], _lambda: f64) {}

    fn reflection(
        &mut self,
        _x: &[f64],
        _theta: &[f64],
        u: &[f64],
        breakdown: &ReflectionBreakdown,
        lambda: f64,
    ) {
        if self.absorb_boundary(breakdown, lambda, u).is_err() {
            self.dropped += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySnapshot {
    pub dim: usize,
    pub a1: f64,
    pub masses: Vec<(f64, f64)>,
    pub sinks: Vec<(String, Vec<(f64, f64)>)>,
    pub k_hat: f64,
    pub audit_violations: u64,
    pub steps_seen: u64,
    pub boundary_steps: u64,
    pub dropped: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skorokhod::{self, SkorokhodConfig};
    use crate::testrand::TestRng;
    use approx::assert_relative_eq;

    fn cfg() -> MeasureConfig {
        MeasureConfig::with_seed(0xc0_ffee, 0)
    }

    fn small_cfg(bins: usize, x_max: f64, cap: usize) -> MeasureConfig {
        MeasureConfig {
            bins,
            x_max,
            reservoir_capacity: cap,
            reservoir_seed: 0xc0_ffee,
            reservoir_stream: 9,
        }
    }

    #[test]
    fn weighted_average_definition() {
        let mut m = WeightedMeasure::new(1, small_cfg(100, 10.0, 16)).unwrap();
        m.register_fn("one", Arc::new(|_x: &[f64]| 1.0)).unwrap();
        m.register_fn("x0", Arc::new(|x: &[f64]| x[0])).unwrap();
        m.absorb(&[2.0], 1.0).unwrap();
        m.absorb(&[5.0], 0.5).unwrap();
        assert_eq!(m.integrate("one").unwrap(), 1.0);
        // (2 + 0.5*5)/1.5 = 3
        assert_relative_eq!(m.integrate("x0").unwrap(), 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.total_weight(), 1.5, epsilon = 1e-15);
        assert!(matches!(
            m.integrate("missing"),
            Err(MeasureError::UnregisteredFunction)
        ));
    }

    #[test]
    fn unit_weight_coordinate_mean() {
        let mut m = WeightedMeasure::new(1, small_cfg(100, 10.0, 0)).unwrap();
        m.absorb(&[1.0], 1.0).unwrap();
        m.absorb(&[3.0], 1.0).unwrap();
        assert_relative_eq!(m.mean(0).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn single_atom_mean_exact() {
        let mut m = WeightedMeasure::new(3, cfg()).unwrap();
        m.absorb(&[0.25, 7.5, 0.0], 0.125).unwrap();
        assert_eq!(m.mean(0).unwrap(), 0.25);
        assert_eq!(m.mean(1).unwrap(), 7.5);
        assert_eq!(m.mean(2).unwrap(), 0.0);
        assert_eq!(m.count(), 1);
    }

    #[test]
    fn degenerate_variance_vanishes() {
        let mut m = WeightedMeasure::new(2, cfg()).unwrap();
        let x0 = [1.5, 0.75];
        let mut rng = TestRng::new(0xdead_beef);
        for _ in 0..10_000 {
            m.absorb(&x0, rng.uniform(0.1, 1.0)).unwrap();
        }
        assert!(m.variance(0).unwrap() < 1e-12);
        assert!(m.variance(1).unwrap() < 1e-12);
        assert_relative_eq!(m.cross_moment(0, 1).unwrap(), 1.5 * 0.75, epsilon = 1e-12);
    }

    #[test]
    fn streaming_matches_replayed_sum() {
        let mut m = WeightedMeasure::new(2, cfg()).unwrap();
        let f = |x: &[f64]| math::exp(-(x[0] * x[0] + x[1] * x[1]) / 10.0);
        m.register_fn("gauss", Arc::new(f)).unwrap();
        let mut rng = TestRng::new(0x0bad_cafe);
        let mut log: Vec<(Vec<f64>, f64)> = Vec::new();
        for _ in 0..1000 {
            let x = vec![rng.uniform(0.0, 5.0), rng.uniform(0.0, 5.0)];
            let w = rng.uniform(1e-4, 1.0);
            m.absorb(&x, w).unwrap();
            log.push((x, w));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, w) in &log {
            num += w * f(x);
            den += w;
        }
        assert_relative_eq!(m.integrate("gauss").unwrap(), num / den, epsilon = 1e-10);
    }

    #[test]
    fn registration_must_precede_atoms() {
        let mut m = WeightedMeasure::new(1, cfg()).unwrap();
        m.absorb(&[1.0], 1.0).unwrap();
        assert!(matches!(
            m.register_fn("late", Arc::new(|_: &[f64]| 0.0)),
            Err(MeasureError::RegistrationAfterAbsorb)
        ));
    }

    #[test]
    fn atom_validation() {
        let mut m = WeightedMeasure::new(2, cfg()).unwrap();
        assert!(matches!(m.absorb(&[1.0], 1.0), Err(MeasureError::BadShape)));
        assert!(matches!(m.absorb(&[1.0, -0.1], 1.0), Err(MeasureError::BadAtom)));
        assert!(matches!(m.absorb(&[1.0, 1.0], 0.0), Err(MeasureError::BadAtom)));
        assert!(matches!(
            m.absorb(&[1.0, f64::NAN], 1.0),
            Err(MeasureError::BadAtom)
        ));
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn atom_at_zero_dominates_cdf() {
        let mut m = WeightedMeasure::new(1, cfg()).unwrap();
        m.absorb(&[0.0], 2.5).unwrap();
        let stats = m.marginal_stats(0).unwrap();
        assert_eq!(stats.cdf[0], 1.0);
        assert_eq!(stats.cdf_left[0], 0.0);
        let exp1 = |x: f64| if x < 0.0 { 0.0 } else { 1.0 - math::exp(-x) };
        assert_relative_eq!(stats.ks_against(&exp1), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lower_median_of_two_atoms() {
        let mut m = WeightedMeasure::new(1, cfg()).unwrap();
        let ln2 = math::ln(2.0);
        m.absorb(&[0.0], 1.0).unwrap();
        m.absorb(&[ln2], 1.0).unwrap();
        let stats = m.marginal_stats(0).unwrap();
        // Lower convention: F(0) = 0.5 >= 0.5 already.
        assert_eq!(stats.quantile(0.5), 0.0);
        assert!(stats.quantile(0.75) > 0.0);
    }

    #[test]
    fn histogram_mass_accounting() {
        // Dyadic width (1/8) keeps bin edges exactly representable.
        let mut m = WeightedMeasure::new(1, small_cfg(8, 1.0, 0)).unwrap();
        m.absorb(&[0.05], 0.25).unwrap(); // bin 0
        m.absorb(&[0.375], 0.25).unwrap(); // bin 3, exactly on edge
        m.absorb(&[5.0], 0.5).unwrap(); // overflow
        let stats = m.marginal_stats(0).unwrap();
        assert_relative_eq!(stats.overflow_mass, 0.5, epsilon = 1e-15);
        // F at edge 0.375 includes the edge atom (right continuity).
        let j = 3;
        assert_relative_eq!(stats.cdf[j], 0.5, epsilon = 1e-15);
        assert_relative_eq!(stats.cdf_left[j], 0.25, epsilon = 1e-15);
        // Histogram plus overflow carries the whole mass.
        let last = stats.grid.len() - 1;
        assert_relative_eq!(stats.cdf[last] + stats.overflow_mass, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exponential_sample_ks_and_quantiles() {
        // 10^6 unit-weight Exp(1) draws: DKW puts KS below 0.002 whp, and
        // the histogram median lands within a bin width of ln 2.
        let mut m = WeightedMeasure::new(1, cfg()).unwrap();
        let mut rng = TestRng::new(0x00ab_cdef);
        for _ in 0..1_000_000 {
            let e = -math::ln(1.0 - rng.unit());
            m.absorb(&[e], 1.0).unwrap();
        }
        let stats = m.marginal_stats(0).unwrap();
        let exp1 = |x: f64| if x < 0.0 { 0.0 } else { 1.0 - math::exp(-x) };
        let ks = stats.ks_against(&exp1);
        assert!(ks <= 0.002, "KS = {ks}");
        let med = stats.quantile(0.5);
        assert!((med - math::ln(2.0)).abs() <= 0.02, "median = {med}");
        assert_relative_eq!(stats.mean, 1.0, epsilon = 5e-3);
    }

    #[test]
    fn merge_semantics() {
        let build = |seed: u64, atoms: usize| {
            let mut m = WeightedMeasure::new(2, cfg()).unwrap();
            m.register_fn("x0", Arc::new(|x: &[f64]| x[0])).unwrap();
            let mut rng = TestRng::new(seed);
            for _ in 0..atoms {
                m.absorb(
                    &[rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0)],
                    rng.uniform(0.1, 1.0),
                )
                .unwrap();
            }
            m
        };
        let a = build(1, 500);
        let b = build(2, 300);
        let (wa, wb) = (a.total_weight(), b.total_weight());
        let (sa, sb) = (a.raw_sum("x0").unwrap(), b.raw_sum("x0").unwrap());

        // Identity: merging a fresh empty measure changes nothing.
        let mut merged = build(1, 500);
        let mut empty = WeightedMeasure::new(2, cfg()).unwrap();
        empty.register_fn("x0", Arc::new(|x: &[f64]| x[0])).unwrap();
        merged.merge(empty).unwrap();
        assert_eq!(merged.total_weight(), wa);
        assert_eq!(merged.raw_sum("x0").unwrap(), sa);

        // Masses and sums add; direction does not matter (up to roundoff).
        let mut ab = build(1, 500);
        ab.merge(build(2, 300)).unwrap();
        assert_relative_eq!(ab.total_weight(), wa + wb, epsilon = 1e-12);
        assert_relative_eq!(ab.raw_sum("x0").unwrap(), sa + sb, epsilon = 1e-12);
        assert_eq!(ab.count(), 800);
        let mut ba = build(2, 300);
        ba.merge(build(1, 500)).unwrap();
        assert_relative_eq!(ab.total_weight(), ba.total_weight(), epsilon = 1e-12);
        assert_relative_eq!(
            ab.integrate("x0").unwrap(),
            ba.integrate("x0").unwrap(),
            epsilon = 1e-12
        );

        // Config and sink-name mismatches are rejected.
        let mut other = WeightedMeasure::new(2, small_cfg(100, 20.0, 4)).unwrap();
        other.register_fn("x0", Arc::new(|x: &[f64]| x[0])).unwrap();
        assert!(matches!(
            build(1, 10).merge({
                let mut w = WeightedMeasure::new(2, cfg()).unwrap();
                w.register_fn("different", Arc::new(|_: &[f64]| 0.0)).unwrap();
                w
            }),
            Err(MeasureError::ConfigMismatch)
        ));
        assert!(matches!(build(1, 10).merge(other), Err(MeasureError::ConfigMismatch)));
    }

    #[test]
    fn reservoir_caps_and_prefers_heavy_atoms() {
        let mut m = WeightedMeasure::new(1, small_cfg(100, 10.0, 100)).unwrap();
        let mut rng = TestRng::new(0x5a5a_5a5a);
        // 5000 light atoms near 1, 200 heavy atoms near 9.
        for _ in 0..5000 {
            m.absorb(&[rng.uniform(0.5, 1.5)], 1e-3).unwrap();
        }
        for _ in 0..200 {
            m.absorb(&[rng.uniform(8.5, 9.5)], 1.0).unwrap();
        }
        let atoms = m.reservoir_atoms();
        assert_eq!(atoms.len(), 100);
        let heavy = atoms.iter().filter(|(x, _)| x[0] > 5.0).count();
        // Heavy atoms carry ~97.6% of the weight; expect near-total
        // dominance of the sample.
        assert!(heavy >= 80, "only {heavy} heavy atoms retained");
        // Weighted subsample average is a usable approximation.
        let est = m.integrate_sampled(&|x: &[f64]| x[0]).unwrap();
        let exact = m.mean(0).unwrap();
        assert!((est - exact).abs() < 1.0, "sampled {est} vs exact {exact}");
    }

    #[test]
    fn snapshot_restore_roundtrip_continues_identically() {
        let fns: Vec<(String, Arc<TestFn>)> = vec![
            ("x0".to_string(), Arc::new(|x: &[f64]| x[0]) as Arc<TestFn>),
        ];
        let feed = |m: &mut WeightedMeasure, seed: u64, k: usize| {
            let mut rng = TestRng::new(seed);
            for _ in 0..k {
                m.absorb(&[rng.uniform(0.0, 25.0)], rng.uniform(0.1, 1.0)).unwrap();
            }
        };
        // Uninterrupted reference.
        let mut a = WeightedMeasure::new(1, small_cfg(50, 20.0, 32)).unwrap();
        a.register_fn("x0", fns[0].1.clone()).unwrap();
        feed(&mut a, 11, 200);

        // Interrupted halfway through the same deterministic feed.
        let mut b = WeightedMeasure::new(1, small_cfg(50, 20.0, 32)).unwrap();
        b.register_fn("x0", fns[0].1.clone()).unwrap();
        let mut rng = TestRng::new(11);
        for _ in 0..100 {
            b.absorb(&[rng.uniform(0.0, 25.0)], rng.uniform(0.1, 1.0)).unwrap();
        }
        let snap = b.snapshot();
        let mut c = WeightedMeasure::restore(&snap, &fns).unwrap();
        for _ in 0..100 {
            c.absorb(&[rng.uniform(0.0, 25.0)], rng.uniform(0.1, 1.0)).unwrap();
        }

        assert_eq!(a.total_weight().to_bits(), c.total_weight().to_bits());
        assert_eq!(
            a.raw_sum("x0").unwrap().to_bits(),
            c.raw_sum("x0").unwrap().to_bits()
        );
        assert_eq!(a.count(), c.count());
        let (ra, rc) = (a.reservoir_atoms(), c.reservoir_atoms());
        assert_eq!(ra.len(), rc.len());
        for (x, y) in ra.iter().zip(rc.iter()) {
            assert_eq!(x.0[0].to_bits(), y.0[0].to_bits());
            assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
        assert_eq!(a.snapshot(), c.snapshot());
        // Restoring with an unknown function name fails.
        assert!(matches!(
            WeightedMeasure::restore(&snap, &[]),
            Err(MeasureError::UnregisteredFunction)
        ));
    }

    // ---- boundary measures ----

    fn one_d_wall_breakdown() -> ReflectionBreakdown {
        let r = crate::numerics::Matrix::identity(1);
        skorokhod::reflect(&[0.5], &[-2.0], &r, &SkorokhodConfig::for_dim(1)).unwrap()
    }

    #[test]
    fn interior_step_leaves_boundary_empty() {
        let r = crate::numerics::Matrix::identity(2);
        let bd =
            skorokhod::reflect(&[1.0, 1.0], &[0.2, -0.3], &r, &SkorokhodConfig::for_dim(2))
                .unwrap();
        let mut bm = BoundaryMeasure::new(2, 2.0).unwrap().retain_atoms();
        bm.absorb_boundary(&bd, 0.1, &[0.2, -0.3]).unwrap();
        assert_eq!(bm.mass(0), 0.0);
        assert_eq!(bm.mass(1), 0.0);
        assert!(bm.retained_atoms().unwrap().is_empty());
        assert_eq!(bm.boundary_steps(), 0);
    }

    #[test]
    fn one_d_wall_atoms_match_hand_values() {
        let bd = one_d_wall_breakdown();
        assert_relative_eq!(bd.face_push[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(bd.z_end[0], -1.5, epsilon = 1e-12);
        assert_eq!(bd.endpoint[0], 0.0);

        let mut bm = BoundaryMeasure::new(1, 2.0).unwrap().retain_atoms();
        bm.register_fn("p0", Arc::new(|_face: usize, p: &[f64]| p[0])).unwrap();
        bm.absorb_boundary(&bd, 1.0, &[-2.0]).unwrap();
        // Total face mass = L = 1.5 (node weights sum to one).
        assert_relative_eq!(bm.mass(0), 1.5, epsilon = 1e-12);
        // Atoms live on the probe segment [z, endpoint] = [-1.5, 0].
        for atom in bm.retained_atoms().unwrap() {
            assert_eq!(atom.face, 0);
            assert!(atom.point[0] >= -1.5 - 1e-12 && atom.point[0] <= 1e-12);
        }
        // Linear integrand integrates exactly: L * (z + end)/2 = -1.125.
        assert_relative_eq!(bm.raw_face_sum("p0", 0).unwrap(), -1.125, epsilon = 1e-12);

        // Mass additivity across steps.
        bm.absorb_boundary(&bd, 1.0, &[-2.0]).unwrap();
        assert_relative_eq!(bm.mass(0), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gl3_is_exact_through_degree_five() {
        // Integrate t^p over [0,1] via the node/weight pairs.
        for (p, exact) in [(0usize, 1.0), (1, 0.5), (2, 1.0 / 3.0), (3, 0.25), (5, 1.0 / 6.0)] {
            let mut s = 0.0;
            for (t, w) in GL3_NODES.iter().zip(GL3_WEIGHTS.iter()) {
                s += w * math::powf(*t, p as f64);
            }
            assert_relative_eq!(s, exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn boundary_audit_holds_on_tandem_chain() {
        use crate::model::{DiffusionField, DriftField, ProblemSpec};
        use crate::noise::{NoiseModel, RngStream};
        use crate::scheme::{self, ChainState, SinkPair, StepSchedule};
        use alloc::string::String;

        let r = crate::numerics::Matrix::from_rows(&[&[1.0, 0.0], &[-1.0, 1.0]]).unwrap();
        let spec = ProblemSpec::new(
            r,
            DriftField::constant(vec![-1.0, 0.0]).unwrap(),
            DiffusionField::constant(crate::numerics::Matrix::identity(2)).unwrap(),
            String::from("tandem"),
        )
        .unwrap();
        let a1 = spec.drift().bound().max(spec.diffusion().bound());
        let mut sched = StepSchedule::power(1.0, 0.5).unwrap();
        let model = NoiseModel::standard_normal();
        let scfg = SkorokhodConfig::for_dim(2);
        let mut state = ChainState::new(vec![1.0, 1.0], RngStream::new(99, 0)).unwrap();

        let mut occ = WeightedMeasure::new(2, cfg()).unwrap();
        let mut bm = BoundaryMeasure::new(2, a1).unwrap();
        let mut pair = SinkPair(&mut occ, &mut bm);
        scheme::run(&mut state, &spec, &mut sched, &model, &scfg, 20_000, &mut pair).unwrap();

        assert_eq!(bm.audit_violations(), 0, "k_hat = {}", bm.k_hat());
        assert!(bm.boundary_steps() > 0, "chain never touched the wall?");
        assert!(bm.mass(0) > 0.0);
        assert_eq!(bm.dropped(), 0);
        assert_eq!(occ.dropped(), 0);
        // Occupation mass tracks the schedule exactly.
        assert_eq!(occ.total_weight().to_bits(), sched.total().to_bits());
    }

    #[test]
    fn boundary_merge_and_snapshot() {
        let bd = one_d_wall_breakdown();
        let mk = || {
            let mut bm = BoundaryMeasure::new(1, 2.0).unwrap();
            bm.register_fn("p0", Arc::new(|_f: usize, p: &[f64]| p[0])).unwrap();
            bm
        };
        let mut a = mk();
        a.absorb_boundary(&bd, 1.0, &[-2.0]).unwrap();
        let mut b = mk();
        b.absorb_boundary(&bd, 0.5, &[-2.0]).unwrap();
        b.absorb_boundary(&bd, 0.5, &[-2.0]).unwrap();
        let (sa, sb) = (
            a.raw_face_sum("p0", 0).unwrap(),
            b.raw_face_sum("p0", 0).unwrap(),
        );
        a.merge(b).unwrap();
        assert_relative_eq!(a.mass(0), 4.5, epsilon = 1e-12);
        assert_relative_eq!(a.raw_face_sum("p0", 0).unwrap(), sa + sb, epsilon = 1e-12);
        assert_eq!(a.steps_seen(), 3);

        let snap = a.snapshot();
        let fns: Vec<(String, Arc<FaceFn>)> = vec![(
            "p0".to_string(),
            Arc::new(|_f: usize, p: &[f64]| p[0]) as Arc<FaceFn>,
        )];
        let restored = BoundaryMeasure::restore(&snap, &fns).unwrap();
        assert_eq!(restored.snapshot(), snap);
        assert!(matches!(
            BoundaryMeasure::restore(&snap, &[]),
            Err(MeasureError::UnregisteredFunction)
        ));
    }
}
