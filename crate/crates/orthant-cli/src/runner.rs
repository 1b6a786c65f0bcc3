//! Drives estimation runs: per-replication chains with disjoint noise
//! streams, optional checkpoint cadence, a worker pool over replications,
//! and a merge whose result does not depend on completion order.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use orthant_core::math::Kahan;
use orthant_core::measure::{BoundaryMeasure, TestFn, WeightedMeasure};
use orthant_core::noise::RngStream;
use orthant_core::scheme::{self, ChainState, SinkPair, StepSchedule, StepSink};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{parse_test_function, CliError, Resolved};
use crate::output::RepStats;

pub struct RepOutcome {
    pub replication: u32,
    pub occ: WeightedMeasure,
    pub bnd: Option<BoundaryMeasure>,
    pub truncations: u64,
}

fn occupation_fns(res: &Resolved) -> Result<Vec<(String, std::sync::Arc<TestFn>)>, CliError> {
    let dim = res.spec.dim();
    res.file
        .sinks
        .test_functions
        .iter()
        .map(|name| Ok((name.clone(), parse_test_function(name, dim)?)))
        .collect()
}

fn fresh_rep(
    res: &Resolved,
    rep: u32,
) -> Result<(ChainState, StepSchedule, WeightedMeasure, Option<BoundaryMeasure>), CliError> {
    let dim = res.spec.dim();
    let state = ChainState::new(
        res.x0.clone(),
        RngStream::new(res.file.run.seed, rep as u64),
    )
    .map_err(|e| CliError::Runtime(format!("chain state: {e}")))?;
    let sched = match res.schedule_kind()? {
        orthant_core::scheme::ScheduleKind::Power { c, theta } => StepSchedule::power(c, theta),
        orthant_core::scheme::ScheduleKind::Explicit(l) => {
            if (l.len() as u64) < res.file.run.n_steps {
                return Err(CliError::Config(format!(
                    "explicit schedule has {} entries but n_steps is {}",
                    l.len(),
                    res.file.run.n_steps
                )));
            }
            StepSchedule::explicit(l)
        }
    }
    .map_err(|e| CliError::Config(format!("schedule: {e}")))?;
    let mut occ = WeightedMeasure::new(dim, res.measure_config(rep))
        .map_err(|e| CliError::Config(format!("measure: {e}")))?;
    for (name, f) in occupation_fns(res)? {
        occ.register_fn(&name, f)
            .map_err(|e| CliError::Config(format!("sink {name}: {e}")))?;
    }
    let bnd = if res.file.sinks.boundary {
        Some(
            BoundaryMeasure::new(dim, res.a1())
                .map_err(|e| CliError::Config(format!("boundary measure: {e}")))?,
        )
    } else {
        None
    };
    Ok((state, sched, occ, bnd))
}

fn resume_rep(
    res: &Resolved,
    cp: &Checkpoint,
) -> Result<(ChainState, StepSchedule, WeightedMeasure, Option<BoundaryMeasure>), CliError> {
    if cp.process_hash != res.process_hash {
        return Err(CliError::Config(format!(
            "checkpoint was written by process {} but this run is {}; refusing to mix",
            crate::output::hash_hex(cp.process_hash),
            crate::output::hash_hex(res.process_hash),
        )));
    }
    let state = ChainState::restore(&cp.chain)
        .map_err(|e| CliError::Runtime(format!("chain restore: {e}")))?;
    let sched = StepSchedule::restore(res.schedule_kind()?, &cp.schedule)
        .map_err(|e| CliError::Runtime(format!("schedule restore: {e}")))?;
    let occ = WeightedMeasure::restore(&cp.measure, &occupation_fns(res)?)
        .map_err(|e| CliError::Runtime(format!("measure restore: {e}")))?;
    let bnd = match (&cp.boundary, res.file.sinks.boundary) {
        (Some(snap), true) => Some(
            BoundaryMeasure::restore(snap, &[])
                .map_err(|e| CliError::Runtime(format!("boundary restore: {e}")))?,
        ),
        (None, false) => None,
        _ => {
            return Err(CliError::Config(
                "checkpoint and config disagree about boundary collection".into(),
            ))
        }
    };
    Ok((state, sched, occ, bnd))
}

/// Advances one replication to `n_steps` total steps, checkpointing at the
/// configured cadence. `resume` loads the replication's checkpoint first.
pub fn run_replication(res: &Resolved, rep: u32, resume: bool) -> Result<RepOutcome, CliError> {
    let (mut state, mut sched, mut occ, mut bnd) = if resume {
        let cp = checkpoint::load(&res.out_dir, rep)?;
        if cp.replication != rep {
            return Err(CliError::Runtime(format!(
                "checkpoint file for replication {rep} claims replication {}",
                cp.replication
            )));
        }
        resume_rep(res, &cp)?
    } else {
        fresh_rep(res, rep)?
    };

    let target = res.file.run.n_steps;
    if state.k > target {
        return Err(CliError::Config(format!(
            "replication {rep} already has {} steps, beyond the requested {target}",
            state.k
        )));
    }
    let cadence = res.file.output.checkpoint_every;
    while state.k < target {
        let chunk = if cadence > 0 { cadence.min(target - state.k) } else { target - state.k };
        let at_step = state.k;
        let step_err = move |e: orthant_core::scheme::SchemeError| {
            CliError::Runtime(format!("replication {rep} near step {at_step}: {e}"))
        };
        match bnd.as_mut() {
            Some(b) => {
                let mut pair = SinkPair(&mut occ, b);
                scheme::run(
                    &mut state,
                    &res.spec,
                    &mut sched,
                    &res.noise,
                    &res.skorokhod,
                    chunk,
                    &mut pair,
                )
                .map_err(step_err)?;
            }
            None => scheme::run(
                &mut state,
                &res.spec,
                &mut sched,
                &res.noise,
                &res.skorokhod,
                chunk,
                &mut occ,
            )
            .map_err(step_err)?,
        }
        if cadence > 0 {
            let cp = Checkpoint {
                process_hash: res.process_hash,
                replication: rep,
                chain: state.snapshot(),
                schedule: sched.snapshot(),
                measure: occ.snapshot(),
                boundary: bnd.as_ref().map(|b| b.snapshot()),
            };
            checkpoint::save(&res.out_dir, &cp)?;
        }
    }

    Ok(RepOutcome { replication: rep, occ, bnd, truncations: state.truncation_count })
}

/// Runs all replications, spreading them across the configured worker
/// threads. Replications are independent (disjoint noise streams), so the
/// outcome vector — always in replication order — is identical however the
/// workers interleave.
pub fn run_all(res: &Resolved, resume: bool) -> Result<Vec<RepOutcome>, CliError> {
    let reps = res.file.run.replications;
    let workers = res.file.run.threads.min(reps as usize).max(1);
    if workers == 1 {
        return (0..reps).map(|r| run_replication(res, r, resume)).collect();
    }

    let next = AtomicU32::new(0);
    let slots: Mutex<Vec<Option<Result<RepOutcome, CliError>>>> =
        Mutex::new((0..reps).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let rep = next.fetch_add(1, Ordering::Relaxed);
                if rep >= reps {
                    break;
                }
                let out = run_replication(res, rep, resume);
                slots.lock().unwrap()[rep as usize] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(r, slot)| {
            slot.unwrap_or_else(|| {
                Err(CliError::Runtime(format!("replication {r} never completed")))
            })
        })
        .collect()
}

/// Folds outcomes into one pooled measure pair plus per-replication stats.
/// The merge is performed in replication order regardless of how the
/// outcomes were produced.
pub fn merge_outcomes(
    outcomes: Vec<RepOutcome>,
) -> Result<(WeightedMeasure, Option<BoundaryMeasure>, u64, Vec<RepStats>), CliError> {
    let mut iter = outcomes.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| CliError::Runtime("no replications produced output".into()))?;
    let mut stats = vec![rep_stats(&first)?];
    let mut truncations = first.truncations;
    let mut occ = first.occ;
    let mut bnd = first.bnd;
    for out in iter {
        stats.push(rep_stats(&out)?);
        truncations += out.truncations;
        occ.merge(out.occ)
            .map_err(|e| CliError::Runtime(format!("merging occupation measures: {e}")))?;
        match (&mut bnd, out.bnd) {
            (Some(acc), Some(b)) => acc
                .merge(b)
                .map_err(|e| CliError::Runtime(format!("merging boundary measures: {e}")))?,
            (None, None) => {}
            _ => {
                return Err(CliError::Runtime(
                    "replications disagree about boundary collection".into(),
                ))
            }
        }
    }
    Ok((occ, bnd, truncations, stats))
}

fn rep_stats(out: &RepOutcome) -> Result<RepStats, CliError> {
    let dim = out.occ.dim();
    let mut means = Vec::with_capacity(dim);
    for i in 0..dim {
        means.push(
            out.occ
                .mean(i)
                .map_err(|e| CliError::Runtime(format!("replication mean: {e}")))?,
        );
    }
    Ok(RepStats {
        replication: out.replication,
        lambda_total: out.occ.total_weight(),
        means,
        truncations: out.truncations,
    })
}

/// Streaming estimate of nu_n(x_coord) recorded at chosen step counts
/// (a 1-2-5 ladder), for step-size exponent sweeps.
pub struct TraceSink {
    coord: usize,
    total: Kahan,
    weighted: Kahan,
    n: u64,
    record_at: Vec<u64>,
    next_idx: usize,
    pub rows: Vec<(u64, f64, f64)>,
}

impl TraceSink {
    pub fn new(coord: usize, record_at: Vec<u64>) -> Self {
        TraceSink {
            coord,
            total: Kahan::new(),
            weighted: Kahan::new(),
            n: 0,
            record_at,
            next_idx: 0,
            rows: Vec::new(),
        }
    }
}

impl StepSink for TraceSink {
    fn atom(&mut self, x: &[f64], lambda: f64) {
        self.total.add(lambda);
        self.weighted.add(lambda * x[self.coord]);
        self.n += 1;
        while self.next_idx < self.record_at.len() && self.record_at[self.next_idx] == self.n {
            let lt = self.total.value();
            self.rows.push((self.n, lt, self.weighted.value() / lt));
            self.next_idx += 1;
        }
    }
}

/// 1-2-5 ladder of record points up to and including n.
pub fn trace_points(n: u64) -> Vec<u64> {
    let mut pts = Vec::new();
    let mut base: u64 = 1;
    'outer: loop {
        for mult in [1u64, 2, 5] {
            let Some(p) = base.checked_mul(mult) else { break 'outer };
            if p >= n {
                break 'outer;
            }
            pts.push(p);
        }
        let Some(next) = base.checked_mul(10) else { break };
        base = next;
    }
    pts.push(n);
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_points_ladder() {
        assert_eq!(trace_points(1), vec![1]);
        assert_eq!(trace_points(7), vec![1, 2, 5, 7]);
        assert_eq!(
            trace_points(1000),
            vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]
        );
        // The terminal point is always present exactly once.
        assert_eq!(trace_points(500).last(), Some(&500));
        assert_eq!(trace_points(500).iter().filter(|&&p| p == 500).count(), 1);
    }
}
