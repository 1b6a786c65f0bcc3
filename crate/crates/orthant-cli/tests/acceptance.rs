//! Release acceptance suite. Each test checks one gate and prints a single
//! `criterion N: PASS/FAIL` line with the measured numbers behind the verdict
//! (visible under `--nocapture`, or in the captured output on failure).
//!
//! Criteria 1-4 drive the installed binary end to end through config files in
//! temp directories; criteria 5-7 exercise the library directly. Tolerances
//! are pinned here, next to the assertions they guard.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use orthant_core::cltlab::{self, CltConfig, Regime};
use orthant_core::lcp::{solve_lcp, verify_complementarity};
use orthant_core::math::norm_inf;
use orthant_core::measure::{BoundaryMeasure, MeasureConfig, WeightedMeasure};
use orthant_core::noise::{NoiseModel, RngStream};
use orthant_core::numerics::{solve_linear, Matrix};
use orthant_core::reference::{self, skew_product_rates, symmetric_srbm_m1};
use orthant_core::scheme::{self, ChainState, ScheduleKind, SinkPair, StepSchedule};
use orthant_core::skorokhod::{reflect, SkorokhodConfig};
use orthant_core::testrand::{admissible_reflection, TestRng};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_orthant")
}

fn run_ok(args: &[&str]) -> String {
    let out = Command::new(bin()).args(args).output().expect("spawn orthant");
    assert!(
        out.status.success(),
        "orthant {:?} failed\nstdout:\n{}\nstderr:\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).expect("write config");
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Data rows of a CSV written by the binary: skips `#` metadata lines and the
/// column-name header, returns each remaining line split on commas.
fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty() && !l.starts_with(|c: char| c.is_alphabetic()))
        .map(|l| {
            l.split(',')
                .map(|f| {
                    if f.is_empty() {
                        f64::NAN
                    } else {
                        f.parse::<f64>().unwrap_or_else(|e| panic!("bad field {f:?}: {e}"))
                    }
                })
                .collect()
        })
        .collect()
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

// Column indices in moments.csv.
const COL_MEAN: usize = 1;
const COL_RATE: usize = 9;
const COL_KS: usize = 10;

#[test]
fn two_dim_tandem_mean_lands_in_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[spec]\nname = \"tandem2\"\n\n[run]\nn_steps = 1000000\nreplications = 10\nseed = 7\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    run_ok(&["estimate", "--config", cfg.to_str().unwrap()]);
    let rows = csv_rows(&read(&out.join("moments.csv")));
    let mean = rows[0][COL_MEAN];
    let pass = (0.45..=0.55).contains(&mean);
    println!(
        "criterion 1: {} — replication-averaged E[x1] = {mean:.6}, target [0.45, 0.55] \
         (10 replications, n=10^6, alpha=0.5)",
        verdict(pass)
    );
    assert!(pass, "pooled coordinate-0 mean {mean} outside [0.45, 0.55]");
}

#[test]
fn symmetric_moment_formula_and_simulation() {
    // Closed-form first moments for the 8-d symmetric benchmark at r=0.1.
    let table = [(-0.1, 0.150), (-0.05, 0.166), (0.0, 0.182), (0.2, 0.246), (0.9, 0.468)];
    let mut worst = 0.0f64;
    for &(rho, want) in &table {
        let got = symmetric_srbm_m1(8, 0.1, rho).unwrap();
        worst = worst.max((got - want).abs());
    }
    let formula_ok = worst < 1e-3;

    // Simulated m1 at rho = 0 must land within +/-0.05 of 0.182.
    let dir = tempfile::tempdir().unwrap();
    let out0 = dir.path().join("rho0");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[spec]\nname = \"sym\"\nd = 8\nr = 0.1\nrho = 0.0\n\n[run]\nn_steps = 1000000\nseed = 1\n\n[output]\ndir = \"{}\"\n",
            out0.display()
        ),
    );
    run_ok(&["estimate", "--config", cfg.to_str().unwrap()]);
    let rows = csv_rows(&read(&out0.join("moments.csv")));
    assert_eq!(rows.len(), 8);
    let m1: f64 = rows.iter().map(|r| r[COL_MEAN]).sum::<f64>() / 8.0;
    let sim_ok = (m1 - 0.182).abs() <= 0.05;

    // rho = 0.9 is near the stability edge: the run must complete and its
    // (badly biased) estimate is recorded with no tolerance attached.
    let out9 = dir.path().join("rho9");
    let cfg9 = write_config(
        dir.path(),
        &format!(
            "[spec]\nname = \"sym\"\nd = 8\nr = 0.1\nrho = 0.9\n\n[run]\nn_steps = 1000000\nseed = 1\n\n[output]\ndir = \"{}\"\n",
            out9.display()
        ),
    );
    run_ok(&["estimate", "--config", cfg9.to_str().unwrap()]);
    let rows9 = csv_rows(&read(&out9.join("moments.csv")));
    let m1_hard: f64 = rows9.iter().map(|r| r[COL_MEAN]).sum::<f64>() / 8.0;
    let hard_ok = m1_hard.is_finite();

    let pass = formula_ok && sim_ok && hard_ok;
    println!(
        "criterion 2: {} — formula vs table worst |err| = {worst:.2e} (target < 1e-3); \
         simulated m1(rho=0) = {m1:.4} vs 0.182 (target +/-0.05); \
         m1(rho=0.9) = {m1_hard:.3} recorded, no tolerance",
        verdict(pass)
    );
    assert!(formula_ok, "closed-form m1 off by {worst}");
    assert!(sim_ok, "simulated m1 {m1} not within 0.05 of 0.182");
    assert!(hard_ok, "rho=0.9 run produced non-finite mean");
}

#[test]
fn skew_marginal_ks_within_band() {
    // The product-form rates for this benchmark follow from the skew-symmetry
    // identity 2 Sigma = R D + D R^T; the exact solution is rational. The
    // widely quoted (1.1667, 1.0938, 0.8537) fail that identity, so the KS
    // check anchors to the exact rates.
    let (spec, _law) = reference::skew3();
    let rates = skew_product_rates(&spec).unwrap();
    let exact = [22.0 / 21.0, 116.0 / 105.0, 83.0 / 105.0];
    for (got, want) in rates.iter().zip(exact.iter()) {
        assert!((got - want).abs() < 1e-12, "product rate {got} != {want}");
    }

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[spec]\nname = \"skew3\"\n\n[run]\nn_steps = 1000000\nseed = 11\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    run_ok(&["estimate", "--config", cfg.to_str().unwrap()]);
    let rows = csv_rows(&read(&out.join("moments.csv")));
    let (rate, ks) = (rows[0][COL_RATE], rows[0][COL_KS]);
    assert!((rate - exact[0]).abs() < 1e-12, "summary anchored to rate {rate}");
    let pass = ks <= 0.05;
    println!(
        "criterion 3: {} — coordinate-1 marginal KS vs Exp({rate:.6}) = {ks:.4}, target <= 0.05 \
         (exact product-form rate 22/21; the 1.1667 figure fails the skew-symmetry identity)",
        verdict(pass)
    );
    assert!(pass, "KS {ks} exceeds 0.05");
}

#[test]
fn alpha_sweep_middle_exponent_wins() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[spec]\nname = \"tandem2\"\n\n[run]\nn_steps = 1000000\nreplications = 6\nseed = 7\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    run_ok(&[
        "alpha-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--alphas",
        "0.1,0.5,0.9",
        "--coord",
        "0",
    ]);
    // traces.csv columns: alpha,replication,n,lambda_total,estimate. The
    // replications share driving noise across alphas, so the comparison is
    // paired; aggregate as the mean absolute terminal error per alpha.
    let rows = csv_rows(&read(&out.join("traces.csv")));
    let err = |alpha: f64| -> f64 {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| (r[0] - alpha).abs() < 1e-12 && r[2] == 1_000_000.0)
            .map(|r| (r[4] - 0.5).abs())
            .collect();
        assert_eq!(errs.len(), 6, "terminal rows for alpha {alpha}");
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let (e1, e5, e9) = (err(0.1), err(0.5), err(0.9));
    let pass = e5 <= e1 && e5 <= e9;
    println!(
        "criterion 4: {} — mean terminal |E[x1] - 0.5| by alpha: 0.1 -> {e1:.4}, 0.5 -> {e5:.4}, \
         0.9 -> {e9:.4}; alpha=0.5 must be no worse (6 paired replications, n=10^6)",
        verdict(pass)
    );
    assert!(pass, "alpha=0.5 error {e5} worse than {e1} / {e9}");
}

/// (a) Complementarity residuals on 10^4 random admissible instances.
fn lcp_random_residuals() -> f64 {
    let mut rng = TestRng::new(0x5eed_1c9);
    let mut worst = 0.0f64;
    for i in 0..10_000usize {
        let m = 1 + i % 8;
        let r = admissible_reflection(&mut rng, m);
        let theta: Vec<f64> = (0..m).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let sol = solve_lcp(&r, &theta).expect("admissible instance must solve");
        let rep = verify_complementarity(&r, &theta, &sol);
        assert!(rep.passes(1e-10), "instance {i}: {rep:?}");
        let defect = (-rep.min_u).max(0.0).max((-rep.min_v).max(0.0)).max(rep.complementarity).max(rep.linear_residual);
        worst = worst.max(defect / rep.scale);
    }
    worst
}

/// (b) Pivoting answer equals brute-force enumeration of active sets, m <= 4.
fn lcp_brute_force_agreement() {
    let mut rng = TestRng::new(0xb0_1dface);
    for i in 0..2_000usize {
        let m = 1 + i % 4;
        let r = admissible_reflection(&mut rng, m);
        let theta: Vec<f64> = (0..m).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let sol = solve_lcp(&r, &theta).unwrap();
        let mut found = 0usize;
        for mask in 0u32..(1 << m) {
            let s: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
            let u = match brute_candidate(&r, &theta, &s) {
                Some(u) => u,
                None => continue,
            };
            found += 1;
            // The reflection matrices are P-matrices, so the solution is
            // unique: every feasible active set must reproduce it.
            let diff: f64 = u.iter().zip(sol.u.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = 1.0 + norm_inf(&sol.u);
            assert!(diff <= 1e-7 * scale, "instance {i} mask {mask:b}: |u - u_lemke| = {diff}");
        }
        assert!(found > 0, "instance {i}: no feasible active set found by enumeration");
    }
}

/// Solves the active-set system for S and returns the full-length u if it is
/// feasible for the complementarity problem (within a small slack).
fn brute_candidate(r: &Matrix, theta: &[f64], s: &[usize]) -> Option<Vec<f64>> {
    let m = theta.len();
    let mut u = vec![0.0; m];
    if !s.is_empty() {
        let k = s.len();
        let mut sub = Matrix::zeros(k, k);
        let mut rhs = vec![0.0; k];
        for (a, &i) in s.iter().enumerate() {
            rhs[a] = -theta[i];
            for (b, &j) in s.iter().enumerate() {
                sub.set(a, b, r.get(i, j));
            }
        }
        let us = solve_linear(&sub, &rhs).ok()?;
        for (a, &i) in s.iter().enumerate() {
            u[i] = us[a];
        }
    }
    let tol = 1e-8;
    if u.iter().any(|&v| v < -tol) {
        return None;
    }
    for j in 0..m {
        let vj = theta[j] + (0..m).map(|k2| r.get(j, k2) * u[k2]).sum::<f64>();
        if vj < -tol {
            return None;
        }
    }
    Some(u)
}

/// (c) One-dimensional closed form: endpoint max(0, x+t), push max(0, -(x+t)).
fn one_dimensional_closed_form() -> f64 {
    let mut rng = TestRng::new(0x0417);
    let r = Matrix::identity(1);
    let cfg = SkorokhodConfig::for_dim(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = rng.uniform(0.0, 4.0);
        let t = rng.uniform(-4.0, 4.0);
        let b = reflect(&[x], &[t], &r, &cfg).unwrap();
        let z = x + t;
        worst = worst
            .max((b.endpoint[0] - z.max(0.0)).abs())
            .max((b.face_push[0] - (-z).max(0.0)).abs());
    }
    worst
}

/// (d) Two-dimensional worked example with a mid-step face change.
fn two_dim_worked_example() {
    let r = Matrix::from_rows(&[&[1.0, 0.0], &[-1.0, 1.0]]).unwrap();
    let cfg = SkorokhodConfig::for_dim(2).with_segments();
    let b = reflect(&[0.0, 1.0], &[-1.0, -1.0], &r, &cfg).unwrap();
    let tol = 1e-9;
    assert!(norm_inf(&b.endpoint) <= tol, "endpoint {:?}", b.endpoint);
    assert!((b.face_push[0] - 1.0).abs() <= tol && (b.face_push[1] - 1.0).abs() <= tol);
    assert_eq!(b.segments.len(), 2);
    assert!((b.segments[0].duration - 0.5).abs() <= tol);
    assert!((b.segments[1].duration - 0.5).abs() <= tol);
    assert!((b.segments[0].push_rate[0] - 1.0).abs() <= tol && b.segments[0].push_rate[1].abs() <= tol);
    assert!((b.segments[1].push_rate[0] - 1.0).abs() <= tol && (b.segments[1].push_rate[1] - 2.0).abs() <= tol);
}

/// (e) endpoint = x + theta + R L on random steps, boundary starts included.
fn decomposition_identity() -> f64 {
    let mut rng = TestRng::new(0xdeca_f00d);
    let mut worst = 0.0f64;
    for k in 0..100_000usize {
        let m = 1 + k % 6;
        let r = admissible_reflection(&mut rng, m);
        let cfg = SkorokhodConfig::for_dim(m);
        let x: Vec<f64> = (0..m)
            .map(|_| if rng.unit() < 0.3 { 0.0 } else { rng.uniform(0.0, 2.0) })
            .collect();
        let theta: Vec<f64> = (0..m).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let b = reflect(&x, &theta, &r, &cfg).unwrap();
        let mut scale = 1.0f64;
        let mut defect = 0.0f64;
        for i in 0..m {
            let push: f64 = (0..m).map(|j| r.get(i, j) * b.face_push[j]).sum();
            defect = defect.max((b.endpoint[i] - (x[i] + theta[i] + push)).abs());
            scale = scale.max(x[i].abs() + theta[i].abs() + push.abs());
        }
        worst = worst.max(defect / scale);
    }
    worst
}

fn tandem_chain(seed: u64) -> (ChainState, StepSchedule, NoiseModel, SkorokhodConfig) {
    let state = ChainState::new(vec![0.0, 0.0], RngStream::new(seed, 0)).unwrap();
    let sched = StepSchedule::power(1.0, 0.5).unwrap();
    (state, sched, NoiseModel::standard_normal(), SkorokhodConfig::for_dim(2))
}

fn small_measure(dim: usize) -> WeightedMeasure {
    let cfg = MeasureConfig {
        bins: 400,
        x_max: 20.0,
        reservoir_capacity: 256,
        reservoir_seed: 99,
        reservoir_stream: 0,
    };
    WeightedMeasure::new(dim, cfg).unwrap()
}

/// (f) The weighted occupation measure integrates the constant 1 to exactly 1.
fn unit_mass() {
    let (spec, _law) = reference::tandem2();
    let (mut state, mut sched, model, skcfg) = tandem_chain(3);
    let mut occ = small_measure(2);
    occ.register_fn("one", Arc::new(|_x: &[f64]| 1.0)).unwrap();
    scheme::run(&mut state, &spec, &mut sched, &model, &skcfg, 10_000, &mut occ).unwrap();
    assert_eq!(occ.count(), 10_000);
    assert_eq!(occ.dropped(), 0);
    let mass = occ.integrate("one").unwrap();
    assert!((mass - 1.0).abs() <= 1e-15, "nu_n(1) = {mass}");
}

/// (g) Snapshot at mid-run, restore into fresh objects, finish both ways:
/// the states and every accumulator must agree bitwise.
fn snapshot_resume_bitwise() {
    let (spec, _law) = reference::tandem2();
    let fns: Vec<(String, Arc<orthant_core::measure::TestFn>)> =
        vec![("sq".to_string(), Arc::new(|x: &[f64]| x[0] * x[0]) as _)];

    let (mut sa, mut qa, model, skcfg) = tandem_chain(17);
    let mut oa = small_measure(2);
    oa.register_fn("sq", fns[0].1.clone()).unwrap();
    scheme::run(&mut sa, &spec, &mut qa, &model, &skcfg, 1_500, &mut oa).unwrap();

    let (mut sb, mut qb, _, _) = tandem_chain(17);
    let mut ob = small_measure(2);
    ob.register_fn("sq", fns[0].1.clone()).unwrap();
    scheme::run(&mut sb, &spec, &mut qb, &model, &skcfg, 500, &mut ob).unwrap();

    let kind = ScheduleKind::Power { c: 1.0, theta: 0.5 };
    let mut sc = ChainState::restore(&sb.snapshot()).unwrap();
    let mut qc = StepSchedule::restore(kind, &qb.snapshot()).unwrap();
    let mut oc = WeightedMeasure::restore(&ob.snapshot(), &fns).unwrap();
    scheme::run(&mut sc, &spec, &mut qc, &model, &skcfg, 1_000, &mut oc).unwrap();

    assert_eq!(sa.k, sc.k);
    for (a, b) in sa.x.iter().zip(sc.x.iter()) {
        assert_eq!(a.to_bits(), b.to_bits(), "chain state diverged");
    }
    assert_eq!(qa.total().to_bits(), qc.total().to_bits(), "schedule total diverged");
    assert_eq!(oa.snapshot(), oc.snapshot(), "measure state diverged");
}

/// (h) Lambda_n for lambda_k = 1/k against the exact rational harmonic sum.
fn kahan_vs_rational() -> f64 {
    use num::{BigRational, ToPrimitive};
    let mut sched = StepSchedule::power(1.0, 1.0).unwrap();
    for _ in 0..10_000 {
        sched.next_lambda().unwrap();
    }
    let mut exact = BigRational::from_integer(0.into());
    for k in 1..=10_000u32 {
        exact += BigRational::new(1.into(), k.into());
    }
    (sched.total() - exact.to_f64().unwrap()).abs()
}

#[test]
fn solver_and_bookkeeping_property_suite() {
    let lcp_worst = lcp_random_residuals();
    lcp_brute_force_agreement();
    let oned_worst = one_dimensional_closed_form();
    two_dim_worked_example();
    let dec_worst = decomposition_identity();
    unit_mass();
    snapshot_resume_bitwise();
    let lam_err = kahan_vs_rational();

    let pass = lcp_worst <= 1e-10 && oned_worst <= 1e-12 && dec_worst <= 1e-9 && lam_err <= 1e-12;
    println!(
        "criterion 5: {} — lcp residual 1e4 instances max {lcp_worst:.1e} (<= 1e-10); \
         active-set enumeration m<=4 agrees; 1-d closed form max |err| {oned_worst:.1e}; \
         2-d worked example at 1e-9; decomposition identity 1e5 steps max {dec_worst:.1e} (<= 1e-9); \
         unit mass exact; snapshot resume bitwise; Lambda_n vs rational |err| {lam_err:.1e} (<= 1e-12)",
        verdict(pass)
    );
    assert!(pass, "lcp {lcp_worst:e}, 1-d {oned_worst:e}, decomposition {dec_worst:e}, lambda {lam_err:e}");
}

fn interior_bump() -> cltlab::TestFunction {
    // Support [0.05, 0.95] x [0.1, 1.5]: strictly inside the orthant, well
    // covered by the tandem chain's stationary bulk.
    cltlab::bump(vec![0.5, 0.8], vec![0.45, 0.7])
}

#[test]
fn fluctuation_study_fast_regime() {
    let (spec, _law) = reference::tandem2();
    let f = interior_bump();
    let cfg = CltConfig {
        c: 1.0,
        theta: 0.7,
        n: 100_000,
        replications: 200,
        master_seed: 42,
        x0: vec![0.0, 0.0],
        noise: NoiseModel::standard_normal(),
    };
    let study = cltlab::clt_study(&spec, &f, &cfg).unwrap();
    assert!(matches!(study.regime, Regime::Fast));

    let ratio = study.stat_variance / study.plug_in_mean;
    let m_tilde = study.m_tilde_mean.expect("bump carries third derivatives");
    let skew_ok = study.skewness.abs() <= 0.5;
    let var_ok = (0.5..=2.0).contains(&ratio);
    let m_ok = m_tilde.abs() <= 0.02;
    let pass = skew_ok && var_ok && m_ok;
    println!(
        "criterion 6: {} — sqrt(Lambda_n) nu_n(A phi) over 200 replications at alpha=0.7, n=10^5: \
         skewness {:.3} (|.| <= 0.5), variance ratio sample/plug-in {ratio:.3} (in [0.5, 2]), \
         symmetric-noise m-tilde {m_tilde:.2e} (|.| <= 0.02)",
        verdict(pass),
        study.skewness,
    );
    assert!(skew_ok, "skewness {}", study.skewness);
    assert!(var_ok, "variance ratio {ratio}");
    assert!(m_ok, "m-tilde {m_tilde}");
}

/// One seeded run of the stationarity diagnostic. The test function's support
/// reaches both faces, so the face measures carry real mass and the residual
/// exercises the full identity: generator and boundary terms are each O(1)
/// and cancel up to the estimator bias, which shrinks deterministically as
/// the steps decrease. An interior bump would leave only the zero-mean
/// fluctuation of the generator term, and comparing two noisy |r| draws is
/// not a reliable gate.
fn stationarity_residual(seed: u64, n: u64) -> f64 {
    let (spec, _law) = reference::tandem2();
    let f = cltlab::bump(vec![0.3, 0.4], vec![0.8, 1.0]);
    let model = NoiseModel::standard_normal();
    let skcfg = SkorokhodConfig::for_dim(2);
    let mut occ = small_measure(2);
    let mut bnd = BoundaryMeasure::new(2, 1.0).unwrap();
    let sinks = cltlab::register_echeverria(&mut occ, &mut bnd, &spec, &f, "phi").unwrap();
    let mut state = ChainState::new(vec![0.0, 0.0], RngStream::new(seed, 0)).unwrap();
    let mut sched = StepSchedule::power(1.0, 0.5).unwrap();
    let mut sink = SinkPair(&mut occ, &mut bnd);
    scheme::run(&mut state, &spec, &mut sched, &model, &skcfg, n, &mut sink).unwrap();
    cltlab::echeverria_residual(&occ, &bnd, &sinks).unwrap().residual
}

#[test]
fn stationarity_defect_shrinks_with_n() {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let coarse = stationarity_residual(seed, 10_000);
        let fine = stationarity_residual(seed, 1_000_000);
        if fine.abs() < coarse.abs() {
            wins += 1;
        }
        pairs.push(format!("{:.1e}->{:.1e}", coarse.abs(), fine.abs()));
    }
    let pass = wins >= 8;
    println!(
        "criterion 7: {} — |r_n(phi)| fell from n=10^4 to n=10^6 in {wins}/10 seeded runs \
         (need >= 8): {}",
        verdict(pass),
        pairs.join(", ")
    );
    assert!(pass, "defect shrank in only {wins}/10 runs");
}

/// Fixed-step cross-check for the 3-d product-form rates. A constant step
/// c = 1e-3 makes the occupation bias O(c) and independent of the schedule
/// question, so 5e7 steps resolve which candidate rate family the chain
/// actually settles on. Slow; run explicitly:
/// `cargo test --release -p orthant-cli --test acceptance -- --ignored --nocapture`
#[test]
#[ignore = "long fixed-step rate cross-check (~1 min); run with --ignored"]
fn oracle_fixed_step_rate_cross_check() {
    let (spec, _law) = reference::skew3();
    let product = skew_product_rates(&spec).unwrap();
    let legacy = [1.1667, 1.0938, 0.8537];

    let cfg = MeasureConfig {
        bins: 2_000,
        x_max: 20.0,
        reservoir_capacity: 4_096,
        reservoir_seed: 7,
        reservoir_stream: 0,
    };
    let mut occ = WeightedMeasure::new(3, cfg).unwrap();
    let mut state = ChainState::new(vec![0.0; 3], RngStream::new(20_260_819, 0)).unwrap();
    let mut sched = StepSchedule::power(1e-3, 0.0).unwrap();
    let model = NoiseModel::standard_normal();
    let skcfg = SkorokhodConfig::for_dim(3);
    scheme::run(&mut state, &spec, &mut sched, &model, &skcfg, 50_000_000, &mut occ).unwrap();

    let mut all_product = true;
    for i in 0..3 {
        let stats = occ.marginal_stats(i).unwrap();
        let ks_product = stats.ks_against(&|x| reference::exponential_cdf(product[i], x));
        let ks_legacy = stats.ks_against(&|x| reference::exponential_cdf(legacy[i], x));
        let mean = occ.mean(i).unwrap();
        let err_product = (mean - 1.0 / product[i]).abs();
        let err_legacy = (mean - 1.0 / legacy[i]).abs();
        println!(
            "coordinate {i}: mean {mean:.4}; vs product rate {:.4}: |mean err| {err_product:.4}, \
             ks {ks_product:.4}; vs quoted rate {:.4}: |mean err| {err_legacy:.4}, ks {ks_legacy:.4}",
            product[i], legacy[i]
        );
        all_product &= err_product < err_legacy && ks_product <= 0.05 && err_product <= 0.04;
        // KS only separates the candidates where their means differ by more
        // than the residual discretization bias (~0.02 at this step size);
        // coordinate 1's two rates are 1% apart and tie on KS.
        if (1.0 / product[i] - 1.0 / legacy[i]).abs() > 0.03 {
            all_product &= ks_product < ks_legacy;
        }
    }
    println!(
        "oracle verdict: {}",
        if all_product {
            "product-form rates (22/21, 116/105, 83/105) confirmed"
        } else {
            "cross-check did NOT confirm the product-form rates"
        }
    );
    assert!(all_product);
}
