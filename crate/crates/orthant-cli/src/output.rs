//! Output files. Every artifact carries the config hash, seed, and format
//! version so results can be traced back to their inputs; nothing here
//! records wall-clock time, so re-running a configuration reproduces each
//! file byte for byte. Floats print in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use orthant_core::measure::{BoundaryMeasure, WeightedMeasure};
use orthant_core::model::{CompletelySStatus, StabilityReport};
use orthant_core::reference::{self, ReferenceKind};
use serde::Serialize;

use crate::config::{CliError, Resolved, FORMAT_VERSION};

pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

pub struct Meta<'a> {
    pub config_hash: u64,
    pub seed: u64,
    pub label: &'a str,
}

impl Meta<'_> {
    fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# format_version={FORMAT_VERSION}");
        let _ = writeln!(s, "# config_hash={}", hash_hex(self.config_hash));
        let _ = writeln!(s, "# seed={}", self.seed);
        let _ = writeln!(s, "# rng={}", orthant_core::noise::RNG_ALGORITHM);
        let _ = writeln!(s, "# label={}", self.label);
        s
    }
}

#[derive(Serialize)]
pub struct ScheduleBlock {
    pub kind: String,
    pub c: f64,
    pub theta: f64,
}

#[derive(Serialize)]
pub struct NoiseBlock {
    pub law: String,
    pub p: Option<f64>,
}

#[derive(Serialize)]
pub struct StabilityBlock {
    pub pass: bool,
    pub spectral_radius: f64,
    pub completely_s: String,
    pub min_ellipticity: f64,
    pub cone_certificate: Option<Vec<f64>>,
    pub reasons: Vec<String>,
}

pub fn stability_block(rep: &StabilityReport) -> StabilityBlock {
    StabilityBlock {
        pass: rep.pass,
        spectral_radius: rep.spectral_radius,
        completely_s: match rep.completely_s {
            CompletelySStatus::Proven => "proven".into(),
            CompletelySStatus::Implied => "implied".into(),
            CompletelySStatus::Failed => "failed".into(),
        },
        min_ellipticity: rep.min_ellipticity,
        cone_certificate: rep.cone_certificate.clone(),
        reasons: rep.reasons.clone(),
    }
}

#[derive(Serialize)]
pub struct CoordinateBlock {
    pub coord: usize,
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
    pub overflow_mass: f64,
    /// Raw weighted moment sums normalized by total mass, orders 2..4.
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub reference_mean: Option<f64>,
    pub abs_error: Option<f64>,
    /// Exponential rate the marginal is compared against, when one exists.
    pub reference_rate: Option<f64>,
    /// Kolmogorov-Smirnov distance to Exp(reference_rate) on the cdf grid.
    pub ks: Option<f64>,
}

#[derive(Serialize)]
pub struct ReferenceBlock {
    pub kind: String,
    pub rates: Option<Vec<f64>>,
    pub value: Option<f64>,
    pub note: String,
    /// Rates recomputed from the problem data via the skew-symmetry
    /// product form, when the data admits it.
    pub product_form_rates: Option<Vec<f64>>,
}

#[derive(Serialize)]
pub struct BoundaryBlock {
    pub masses: Vec<f64>,
    pub k_hat: f64,
    pub audit_violations: u64,
    pub steps_seen: u64,
    pub boundary_steps: u64,
    pub dropped: u64,
}

#[derive(Serialize)]
pub struct RepStats {
    pub replication: u32,
    pub lambda_total: f64,
    pub means: Vec<f64>,
    pub truncations: u64,
}

#[derive(Serialize)]
pub struct Summary {
    pub format_version: u32,
    pub config_hash: String,
    pub rng_algorithm: &'static str,
    pub label: String,
    pub spec_label: String,
    pub dim: usize,
    pub schedule: ScheduleBlock,
    pub noise: NoiseBlock,
    pub seed: u64,
    pub n_steps: u64,
    pub replications: u32,
    pub lambda_total: f64,
    pub atoms: u64,
    pub dropped_atoms: u64,
    pub truncation_count: u64,
    pub stability: StabilityBlock,
    pub coordinates: Vec<CoordinateBlock>,
    pub cross_moments: Vec<CrossMoment>,
    pub integrals: BTreeMap<String, f64>,
    pub reference: Option<ReferenceBlock>,
    pub boundary: Option<BoundaryBlock>,
    pub per_replication: Vec<RepStats>,
}

#[derive(Serialize)]
pub struct CrossMoment {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Exponential rates to compare marginals against: the product form
/// recomputed from the data wins; a product-exponential law fills in
/// otherwise.
fn marginal_rates(res: &Resolved) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let computed = reference::skew_product_rates(&res.spec).ok();
    let law_rates = res.law.as_ref().and_then(|l| match l.kind() {
        ReferenceKind::ProductExponential(r) => Some(r.clone()),
        ReferenceKind::ScalarMoment(_) => None,
    });
    (computed, law_rates)
}

pub fn build_summary(
    res: &Resolved,
    stability: &StabilityReport,
    occ: &WeightedMeasure,
    bnd: Option<&BoundaryMeasure>,
    per_rep: Vec<RepStats>,
    truncation_count: u64,
) -> Result<Summary, CliError> {
    let dim = res.spec.dim();
    let (product_rates, law_rates) = marginal_rates(res);
    let compare_rates = product_rates.clone().or_else(|| law_rates.clone());
    let total = occ.total_weight();

    let mut coordinates = Vec::with_capacity(dim);
    for i in 0..dim {
        let stats = occ
            .marginal_stats(i)
            .map_err(|e| CliError::Runtime(format!("marginal {i}: {e}")))?;
        let rate = compare_rates.as_ref().map(|r| r[i]);
        let ks = rate.map(|rho| stats.ks_against(&move |x| reference::exponential_cdf(rho, x)));
        let reference_mean = res.law.as_ref().and_then(|l| l.mean(i));
        let mean = stats.mean;
        coordinates.push(CoordinateBlock {
            coord: i,
            mean,
            variance: stats.variance,
            median: stats.quantile(0.5),
            overflow_mass: stats.overflow_mass,
            m2: occ.moment(i, 2).unwrap_or(f64::NAN),
            m3: occ.moment(i, 3).unwrap_or(f64::NAN),
            m4: occ.moment(i, 4).unwrap_or(f64::NAN),
            reference_mean,
            abs_error: reference_mean.map(|rm| (mean - rm).abs()),
            reference_rate: rate,
            ks,
        });
    }

    let mut cross_moments = Vec::new();
    for i in 0..dim {
        for j in (i + 1)..dim {
            let value = occ
                .cross_moment(i, j)
                .map_err(|e| CliError::Runtime(format!("cross moment ({i},{j}): {e}")))?;
            cross_moments.push(CrossMoment { i, j, value });
        }
    }

    let mut integrals = BTreeMap::new();
    for name in occ.registered_names() {
        let v = occ
            .integrate(&name)
            .map_err(|e| CliError::Runtime(format!("integral {name}: {e}")))?;
        integrals.insert(name, v);
    }

    let reference = res.law.as_ref().map(|law| {
        let (kind, rates, value) = match law.kind() {
            ReferenceKind::ProductExponential(r) => {
                ("product_exponential".to_string(), Some(r.clone()), None)
            }
            ReferenceKind::ScalarMoment(v) => ("scalar_moment".to_string(), None, Some(*v)),
        };
        ReferenceBlock {
            kind,
            rates,
            value,
            note: law.note().to_string(),
            product_form_rates: product_rates.clone(),
        }
    });
    // A product form without a catalogued law still deserves reporting.
    let reference = reference.or_else(|| {
        product_rates.clone().map(|rates| ReferenceBlock {
            kind: "product_exponential".into(),
            rates: None,
            value: None,
            note: "rates recomputed from the problem data".into(),
            product_form_rates: Some(rates),
        })
    });

    let boundary = bnd.map(|b| BoundaryBlock {
        masses: (0..dim).map(|i| b.mass(i)).collect(),
        k_hat: b.k_hat(),
        audit_violations: b.audit_violations(),
        steps_seen: b.steps_seen(),
        boundary_steps: b.boundary_steps(),
        dropped: b.dropped(),
    });

    Ok(Summary {
        format_version: FORMAT_VERSION,
        config_hash: hash_hex(res.config_hash),
        rng_algorithm: orthant_core::noise::RNG_ALGORITHM,
        label: res.file.label.clone().unwrap_or_else(|| res.spec.label().to_string()),
        spec_label: res.spec.label().to_string(),
        dim,
        schedule: ScheduleBlock {
            kind: res.file.schedule.kind.clone(),
            c: res.file.schedule.c,
            theta: res.file.schedule.theta,
        },
        noise: NoiseBlock { law: res.file.noise.law.clone(), p: res.file.noise.p },
        seed: res.file.run.seed,
        n_steps: res.file.run.n_steps,
        replications: res.file.run.replications,
        lambda_total: total,
        atoms: occ.count(),
        dropped_atoms: occ.dropped(),
        truncation_count,
        stability: stability_block(stability),
        coordinates,
        cross_moments,
        integrals,
        reference,
        boundary,
        per_replication: per_rep,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub fn write_moments_csv(
    dir: &Path,
    meta: &Meta,
    summary: &Summary,
) -> Result<PathBuf, CliError> {
    let path = dir.join("moments.csv");
    let mut s = meta.header();
    s.push_str("coord,mean,variance,median,m2,m3,m4,reference_mean,abs_error,reference_rate,ks\n");
    for c in &summary.coordinates {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.coord,
            c.mean,
            c.variance,
            c.median,
            c.m2,
            c.m3,
            c.m4,
            fmt_opt(c.reference_mean),
            fmt_opt(c.abs_error),
            fmt_opt(c.reference_rate),
            fmt_opt(c.ks),
        );
    }
    std::fs::write(&path, s)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

pub fn write_marginal_cdf_csv(
    dir: &Path,
    meta: &Meta,
    occ: &WeightedMeasure,
) -> Result<PathBuf, CliError> {
    let path = dir.join("marginal_cdf.csv");
    let mut s = meta.header();
    s.push_str("coord,x,cdf,cdf_left\n");
    for i in 0..occ.dim() {
        let stats = occ
            .marginal_stats(i)
            .map_err(|e| CliError::Runtime(format!("marginal {i}: {e}")))?;
        let _ = writeln!(s, "# coord={i} overflow_mass={}", stats.overflow_mass);
        for (j, &x) in stats.grid.iter().enumerate() {
            let _ = writeln!(s, "{i},{x},{},{}", stats.cdf[j], stats.cdf_left[j]);
        }
    }
    std::fs::write(&path, s)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

pub struct TraceRow {
    pub alpha: f64,
    pub replication: u32,
    pub n: u64,
    pub lambda_total: f64,
    pub estimate: f64,
}

pub fn write_traces_csv(dir: &Path, meta: &Meta, rows: &[TraceRow]) -> Result<PathBuf, CliError> {
    let path = dir.join("traces.csv");
    let mut s = meta.header();
    s.push_str("alpha,replication,n,lambda_total,estimate\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.alpha, r.replication, r.n, r.lambda_total, r.estimate
        );
    }
    std::fs::write(&path, s)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

pub fn write_clt_rows_csv(
    dir: &Path,
    meta: &Meta,
    study: &orthant_core::cltlab::CltStudy,
) -> Result<PathBuf, CliError> {
    let path = dir.join("clt_rows.csv");
    let mut s = meta.header();
    s.push_str("replication,statistic,lambda_n,lambda_32,plug_in_variance,m_tilde\n");
    for row in &study.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            row.replication,
            row.statistic,
            row.lambda_n,
            row.lambda_32,
            row.plug_in_variance,
            fmt_opt(row.m_tilde),
        );
    }
    std::fs::write(&path, s)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

#[derive(Serialize)]
pub struct CltSummary {
    pub format_version: u32,
    pub config_hash: String,
    pub rng_algorithm: &'static str,
    pub spec_label: String,
    pub function: String,
    pub theta: f64,
    pub c: f64,
    pub regime: String,
    pub n_steps: u64,
    pub replications: u32,
    pub seed: u64,
    pub stat_mean: f64,
    pub stat_variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_fitted_normal: f64,
    pub plug_in_mean: f64,
    pub m_tilde_mean: Option<f64>,
    pub lambda_n: f64,
    pub lambda_32: f64,
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))
}
