//! Command-line front end for stationary-distribution estimation of
//! obliquely reflected diffusions in the nonnegative orthant.
//!
//! Exit codes: 0 success, 2 validation failure (problem data rejected or a
//! requested check failed), 3 runtime failure, 4 configuration error.

mod checkpoint;
mod config;
mod output;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orthant_core::cltlab;
use orthant_core::model::{self, EXACT_S_MAX_DIM};
use serde::Serialize;

use config::{CliError, Overrides, Resolved};
use output::Meta;

#[derive(Parser)]
#[command(
    name = "orthant",
    version,
    about = "Stationary distributions of reflected diffusions in the orthant",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides [output].dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides [run].seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Steps per replication (overrides [run].n_steps).
    #[arg(long)]
    n: Option<u64>,
    /// Number of replications (overrides [run].replications).
    #[arg(long)]
    replications: Option<u32>,
    /// Worker threads (overrides [run].threads).
    #[arg(long)]
    threads: Option<usize>,
    /// Checkpoint cadence in steps, 0 to disable (overrides
    /// [output].checkpoint_every).
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

impl CommonFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            n_steps: self.n,
            replications: self.replications,
            threads: self.threads,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the problem data: reflection spectral gate, completely-S
    /// status, drift cone, ellipticity. Exits 2 when a check fails.
    Validate {
        #[command(flatten)]
        common: CommonFlags,
        /// Force the exact completely-S decision on or off (default: exact
        /// for small problems, spectral implication otherwise).
        #[arg(long)]
        exact_s: Option<bool>,
    },
    /// Run the decreasing-step scheme and write the estimated stationary
    /// measure (summary.json, moments.csv, marginal_cdf.csv).
    Estimate {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Re-run the estimate under several step-size exponents with shared
    /// noise, tracing one coordinate's estimate (traces.csv).
    AlphaSweep {
        #[command(flatten)]
        common: CommonFlags,
        /// Comma-separated exponents, e.g. 0.1,0.5,0.9.
        #[arg(long, default_value = "0.1,0.5,0.9")]
        alphas: String,
        /// Coordinate whose estimate is traced.
        #[arg(long, default_value_t = 0)]
        coord: usize,
    },
    /// Replicated normalized-statistic study for the configured test
    /// function (clt_summary.json, clt_rows.csv).
    Clt {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Continue an estimate from its checkpoints up to [run].n_steps.
    Resume {
        #[command(flatten)]
        common: CommonFlags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Validate { common, exact_s } => {
            let res = config::load(&common.config, &common.overrides())?;
            cmd_validate(&res, exact_s)
        }
        Cmd::Estimate { common } => {
            let res = config::load(&common.config, &common.overrides())?;
            cmd_estimate(&res, false)
        }
        Cmd::Resume { common } => {
            let res = config::load(&common.config, &common.overrides())?;
            cmd_estimate(&res, true)
        }
        Cmd::AlphaSweep { common, alphas, coord } => {
            let res = config::load(&common.config, &common.overrides())?;
            let alphas = parse_alphas(&alphas)?;
            cmd_alpha_sweep(&res, &alphas, coord)
        }
        Cmd::Clt { common } => {
            let res = config::load(&common.config, &common.overrides())?;
            cmd_clt(&res)
        }
    }
}

fn parse_alphas(text: &str) -> Result<Vec<f64>, CliError> {
    let alphas: Result<Vec<f64>, _> =
        text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let alphas =
        alphas.map_err(|e| CliError::Config(format!("bad --alphas `{text}`: {e}")))?;
    if alphas.is_empty() || alphas.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
        return Err(CliError::Config(
            "--alphas entries must lie in [0, 1]".into(),
        ));
    }
    Ok(alphas)
}

#[derive(Serialize)]
struct ValidateOutput {
    config_hash: String,
    spec_label: String,
    dim: usize,
    exact_s: bool,
    stability: output::StabilityBlock,
}

fn stability(res: &Resolved, exact_s: Option<bool>) -> (model::StabilityReport, bool) {
    let exact = exact_s.unwrap_or(res.spec.dim() <= EXACT_S_MAX_DIM);
    (model::stability_report(&res.spec, exact, res.file.run.seed), exact)
}

fn cmd_validate(res: &Resolved, exact_s: Option<bool>) -> Result<(), CliError> {
    let (report, exact) = stability(res, exact_s);
    let out = ValidateOutput {
        config_hash: output::hash_hex(res.config_hash),
        spec_label: res.spec.label().to_string(),
        dim: res.spec.dim(),
        exact_s: exact,
        stability: output::stability_block(&report),
    };
    let text = serde_json::to_string_pretty(&out)
        .map_err(|e| CliError::Runtime(format!("serializing report: {e}")))?;
    println!("{text}");
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "problem data rejected: {}",
            report.reasons.join("; ")
        )))
    }
}

/// Shared preflight: estimation only proceeds on data that passes the
/// stability checks.
fn preflight(res: &Resolved) -> Result<model::StabilityReport, CliError> {
    let (report, _) = stability(res, None);
    if !report.pass {
        return Err(CliError::Validation(format!(
            "problem data rejected: {}",
            report.reasons.join("; ")
        )));
    }
    Ok(report)
}

fn cmd_estimate(res: &Resolved, resume: bool) -> Result<(), CliError> {
    let report = preflight(res)?;
    output::ensure_dir(&res.out_dir)?;
    let outcomes = runner::run_all(res, resume)?;
    let (occ, bnd, truncations, per_rep) = runner::merge_outcomes(outcomes)?;

    let summary = output::build_summary(res, &report, &occ, bnd.as_ref(), per_rep, truncations)?;
    output::write_json(&res.out_dir.join("summary.json"), &summary)?;
    let meta = Meta {
        config_hash: res.config_hash,
        seed: res.file.run.seed,
        label: &summary.label,
    };
    output::write_moments_csv(&res.out_dir, &meta, &summary)?;
    output::write_marginal_cdf_csv(&res.out_dir, &meta, &occ)?;

    for c in &summary.coordinates {
        let reference = match (c.reference_mean, c.abs_error) {
            (Some(rm), Some(err)) => format!(" reference {rm} (|err| {err:.6})"),
            _ => String::new(),
        };
        println!("coord {}: mean {:.6}{}", c.coord, c.mean, reference);
    }
    println!(
        "wrote {} (config {})",
        res.out_dir.join("summary.json").display(),
        summary.config_hash
    );
    Ok(())
}

fn cmd_alpha_sweep(res: &Resolved, alphas: &[f64], coord: usize) -> Result<(), CliError> {
    if coord >= res.spec.dim() {
        return Err(CliError::Config(format!(
            "--coord {coord} out of range for dimension {}",
            res.spec.dim()
        )));
    }
    preflight(res)?;
    output::ensure_dir(&res.out_dir)?;

    let n = res.file.run.n_steps;
    let points = runner::trace_points(n);
    let mut rows = Vec::new();
    for &alpha in alphas {
        for rep in 0..res.file.run.replications {
            // Same seed and replication index across exponents: every alpha
            // sees the identical noise stream.
            let mut state = orthant_core::scheme::ChainState::new(
                res.x0.clone(),
                orthant_core::noise::RngStream::new(res.file.run.seed, rep as u64),
            )
            .map_err(|e| CliError::Runtime(format!("chain state: {e}")))?;
            let mut sched = orthant_core::scheme::StepSchedule::power(res.file.schedule.c, alpha)
                .map_err(|e| CliError::Config(format!("schedule (alpha {alpha}): {e}")))?;
            let mut sink = runner::TraceSink::new(coord, points.clone());
            orthant_core::scheme::run(
                &mut state,
                &res.spec,
                &mut sched,
                &res.noise,
                &res.skorokhod,
                n,
                &mut sink,
            )
            .map_err(|e| CliError::Runtime(format!("alpha {alpha} rep {rep}: {e}")))?;
            rows.extend(sink.rows.iter().map(|&(step, lambda_total, estimate)| {
                output::TraceRow { alpha, replication: rep, n: step, lambda_total, estimate }
            }));
        }
    }

    let label = res.file.label.clone().unwrap_or_else(|| res.spec.label().to_string());
    let meta = Meta {
        config_hash: res.config_hash,
        seed: res.file.run.seed,
        label: &label,
    };
    let path = output::write_traces_csv(&res.out_dir, &meta, &rows)?;
    for &alpha in alphas {
        let last = rows
            .iter()
            .filter(|r| r.alpha == alpha)
            .last()
            .expect("each alpha records at least the terminal point");
        println!("alpha {alpha}: terminal estimate {:.6} at n={}", last.estimate, last.n);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_clt(res: &Resolved) -> Result<(), CliError> {
    if res.file.schedule.kind != "power" {
        return Err(CliError::Config(
            "the clt study needs a power schedule".into(),
        ));
    }
    let f = config::build_clt_function(&res.file.clt, res.spec.dim())?;
    preflight(res)?;
    output::ensure_dir(&res.out_dir)?;
    let cfg = cltlab::CltConfig {
        c: res.file.schedule.c,
        theta: res.file.schedule.theta,
        n: res.file.run.n_steps,
        replications: res.file.run.replications,
        master_seed: res.file.run.seed,
        x0: res.x0.clone(),
        noise: res.noise.clone(),
    };
    let study = cltlab::clt_study(&res.spec, &f, &cfg)
        .map_err(|e| CliError::Runtime(format!("clt study: {e}")))?;

    let diag = cltlab::lambda_diagnostics(&res.schedule_kind()?, res.file.run.n_steps)
        .map_err(|e| CliError::Config(format!("schedule diagnostics: {e}")))?;
    let summary = output::CltSummary {
        format_version: config::FORMAT_VERSION,
        config_hash: output::hash_hex(res.config_hash),
        rng_algorithm: orthant_core::noise::RNG_ALGORITHM,
        spec_label: res.spec.label().to_string(),
        function: res.file.clt.function.clone().unwrap_or_else(|| "bump".into()),
        theta: study.theta,
        c: res.file.schedule.c,
        regime: match study.regime {
            cltlab::Regime::Fast => "fast".into(),
            cltlab::Regime::Critical => "critical".into(),
            cltlab::Regime::Slow => "slow".into(),
        },
        n_steps: study.n,
        replications: res.file.run.replications,
        seed: res.file.run.seed,
        stat_mean: study.stat_mean,
        stat_variance: study.stat_variance,
        skewness: study.skewness,
        excess_kurtosis: study.excess_kurtosis,
        ks_fitted_normal: study.ks_fitted_normal,
        plug_in_mean: study.plug_in_mean,
        m_tilde_mean: study.m_tilde_mean,
        lambda_n: diag.lambda_n,
        lambda_32: diag.lambda_32,
    };
    output::write_json(&res.out_dir.join("clt_summary.json"), &summary)?;
    let label = res.file.label.clone().unwrap_or_else(|| res.spec.label().to_string());
    let meta = Meta {
        config_hash: res.config_hash,
        seed: res.file.run.seed,
        label: &label,
    };
    output::write_clt_rows_csv(&res.out_dir, &meta, &study)?;
    println!(
        "statistic mean {:.6}, variance {:.6} (plug-in {:.6}), skewness {:.4}, ks {:.4}",
        study.stat_mean,
        study.stat_variance,
        study.plug_in_mean,
        study.skewness,
        study.ks_fitted_normal
    );
    println!("wrote {}", res.out_dir.join("clt_summary.json").display());
    Ok(())
}
