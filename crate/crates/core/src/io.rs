//! File formats: CSV ingestion, the flat key-value settings format, output
//! tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariates::{prepare_covariates, ColumnTransform};
use crate::error::{Error, Result};
use crate::estimands::{PosteriorSummary, SubjectEffectSummary};
use crate::mcmc::{ChainDiagnostics, McmcConfig, PosteriorDraws};
use crate::model::{Dataset, HyperPriorConfig, OutcomeMode, ProposalScales};
use crate::simulation::{Family, Overlap, ReplicationReport, ScenarioSpec};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Full-precision (17 significant digit) rendering used in every table.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTransform {
    pub column: String,
    pub transform: ColumnTransform,
}

/// A dataset read from disk with the preprocessing applied to it.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: Dataset<f64>,
    pub raw_x: DMatrix<f64>,
    pub transforms: Vec<NamedTransform>,
    pub key: Option<Vec<f64>>,
    pub digest: String,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Reads `path` (header row required), selects the named columns and builds
/// a dataset. Continuous covariates are standardized; two-valued ones map to
/// {0,1}. Rows are numbered from 1 after the header in errors.
pub fn ingest_csv(
    path: &Path,
    outcome: &str,
    treatment: &str,
    covariates: &[String],
    key_column: Option<&str>,
    mode: OutcomeMode,
) -> Result<Ingested> {
    let bytes = read_file(path)?;
    let digest = sha256_hex(&bytes);
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: shown.clone(),
            reason: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::EmptyFile(shown));
    }
    let mut wanted: Vec<&str> = vec![outcome, treatment];
    wanted.extend(covariates.iter().map(String::as_str));
    wanted.extend(key_column);
    let index: Vec<usize> = wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut missing = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(index.len());
        let mut has_missing = false;
        for (&col, name) in index.iter().zip(&wanted) {
            let cell = record.get(col).unwrap_or("");
            if is_missing(cell) {
                has_missing = true;
                row.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                column: name.to_string(),
                row: r + 1,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumericCell {
                    column: name.to_string(),
                    row: r + 1,
                    value: cell.to_string(),
                });
            }
            row.push(v);
        }
        if has_missing {
            missing.push(r + 1);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(shown));
    }
    if !missing.is_empty() {
        return Err(Error::MissingValues { rows: missing });
    }
    for (r, row) in rows.iter().enumerate() {
        if row[1] != 0.0 && row[1] != 1.0 {
            return Err(Error::NonBinaryTreatment {
                column: treatment.to_string(),
                row: r + 1,
                value: format!("{}", row[1]),
            });
        }
    }
    let n = rows.len();
    let treated = rows.iter().filter(|r| r[1] == 1.0).count();
    if treated == 0 || treated == n {
        return Err(Error::SingleArm { treated, n });
    }
    let p = covariates.len();
    let raw_x = DMatrix::from_fn(n, p, |i, j| rows[i][2 + j]);
    let (x, transforms) = prepare_covariates(&raw_x, covariates)?;
    let y = DVector::from_fn(n, |i, _| rows[i][0]);
    let a = DVector::from_fn(n, |i, _| rows[i][1]);
    let key = key_column.map(|_| rows.iter().map(|r| r[2 + p]).collect());
    Ok(Ingested {
        data: Dataset::new(y, a, x, mode)?,
        raw_x,
        transforms: covariates
            .iter()
            .cloned()
            .zip(transforms)
            .map(|(column, transform)| NamedTransform { column, transform })
            .collect(),
        key,
        digest,
    })
}

/// Parses `key = value` lines; `#` starts a comment. Returns (line, key, value).
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            line: i + 1,
            reason: format!("expected 'key = value', got {line:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config {
                line: i + 1,
                reason: format!("empty key or value in {line:?}"),
            });
        }
        out.push((i + 1, k.to_ascii_lowercase(), v.to_string()));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        reason: format!("invalid value {v:?} for {key}"),
    })
}

fn parse_flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            reason: format!("invalid flag {v:?} for {key}"),
        }),
    }
}

/// Applies one sampler or hyperprior setting. Returns false for keys it does
/// not know.
pub fn apply_setting(
    line: usize,
    key: &str,
    v: &str,
    mcmc: &mut McmcConfig,
    hp: &mut HyperPriorConfig,
) -> Result<bool> {
    let f = |v: &str| parse_value::<f64>(line, key, v);
    let u = |v: &str| parse_value::<usize>(line, key, v);
    match key {
        "burnin" => mcmc.n_burnin = u(v)?,
        "kept" | "iterations" => mcmc.n_kept_iterations = u(v)?,
        "thin" => mcmc.thin = u(v)?,
        "chains" => mcmc.n_chains = u(v)?,
        "seed" => mcmc.seed = parse_value(line, key, v)?,
        "adapt" => mcmc.adapt = parse_flag(line, key, v)?,
        "target_acceptance" => mcmc.target_acceptance = f(v)?,
        "conjugate_sigma2" => mcmc.conjugate_sigma2 = parse_flag(line, key, v)?,
        "overdisperse" => mcmc.overdisperse = parse_flag(line, key, v)?,
        "sigma2_beta" => hp.sigma2_beta = f(v)?,
        "l_mu.shape" => hp.l_mu.shape = f(v)?,
        "l_mu.rate" => hp.l_mu.rate = f(v)?,
        "eta_mu.shape" => hp.eta_mu.shape = f(v)?,
        "eta_mu.rate" => hp.eta_mu.rate = f(v)?,
        "l_delta.shape" => hp.l_delta.shape = f(v)?,
        "l_delta.rate" => hp.l_delta.rate = f(v)?,
        "eta_delta.shape" => hp.eta_delta.shape = f(v)?,
        "eta_delta.rate" => hp.eta_delta.rate = f(v)?,
        "sigma2.shape" => hp.sigma2.shape = f(v)?,
        "sigma2.scale" => hp.sigma2.scale = f(v)?,
        "tau" => hp.proposal = ProposalScales::uniform(f(v)?),
        "tau.l_mu" => hp.proposal.l_mu = f(v)?,
        "tau.eta_mu" => hp.proposal.eta_mu = f(v)?,
        "tau.l_delta" => hp.proposal.l_delta = f(v)?,
        "tau.eta_delta" => hp.proposal.eta_delta = f(v)?,
        "tau.sigma2" => hp.proposal.sigma2 = f(v)?,
        "jitter.initial_relative" => hp.jitter.initial_relative = f(v)?,
        "jitter.growth" => hp.jitter.growth = f(v)?,
        "jitter.max_retries" => hp.jitter.max_retries = parse_value(line, key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses a scenario file. `family` is required; everything else defaults.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::default();
    let mut family = None;
    for (line, key, v) in parse_kv(text)? {
        if apply_setting(line, &key, &v, &mut spec.mcmc, &mut spec.hyperpriors)? {
            if key == "seed" {
                spec.seed = spec.mcmc.seed;
            }
            continue;
        }
        match key.as_str() {
            "family" => family = Some(v.parse::<Family>()?),
            "overlap" => {
                spec.overlap = match v.to_ascii_lowercase().as_str() {
                    "some" => Overlap::SOME,
                    "substantial" => Overlap::SUBSTANTIAL,
                    _ => {
                        return Err(Error::Config {
                            line,
                            reason: format!("overlap must be 'some' or 'substantial', got {v:?}"),
                        })
                    }
                }
            }
            "mu1" => spec.overlap.mu1 = parse_value(line, &key, &v)?,
            "mu2" => spec.overlap.mu2 = parse_value(line, &key, &v)?,
            "p" => spec.overlap.p = parse_value(line, &key, &v)?,
            "c" => spec.c = parse_value(line, &key, &v)?,
            "n" => spec.n = parse_value(line, &key, &v)?,
            "replications" | "k" => spec.replications = parse_value(line, &key, &v)?,
            "baseline" => spec.baseline = parse_flag(line, &key, &v)?,
            _ => {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key '{key}'"),
                })
            }
        }
    }
    spec.family = family.ok_or(Error::Config {
        line: 0,
        reason: "missing required key 'family'".into(),
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Posterior draw table: one row per kept draw per chain.
pub fn draws_csv(draws: &PosteriorDraws<f64>) -> String {
    let binary = draws.mode == OutcomeMode::Binary;
    let mut out = String::from(if binary {
        "chain,iteration,p1,p0,psi_rd,l_mu,eta_mu,l_delta,eta_delta\n"
    } else {
        "chain,iteration,psi,l_mu,eta_mu,l_delta,eta_delta,sigma2\n"
    });
    for (chain, d) in draws.draws() {
        let s = &d.state;
        let mut cells = vec![chain.to_string(), d.iteration.to_string()];
        match (&d.risk, binary) {
            (Some(r), true) => cells.extend([r.p1, r.p0, r.risk_difference].map(fmt_f64)),
            _ => cells.push(fmt_f64(d.psi)),
        }
        cells.extend([s.l_mu, s.eta_mu, s.l_delta, s.eta_delta].map(fmt_f64));
        if !binary {
            cells.push(fmt_f64(s.sigma2));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn subjects_csv(summary: &SubjectEffectSummary) -> String {
    let scale = if summary.latent_scale { "latent" } else { "outcome" };
    let mut out = String::from("subject,key,delta_mean,delta_sd,scale\n");
    for s in &summary.subjects {
        let key = s.key.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.index + 1,
            key,
            fmt_f64(s.mean),
            fmt_f64(s.sd),
            scale
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AteRecord {
    pub estimand: String,
    pub mode: OutcomeMode,
    pub chains: usize,
    #[serde(flatten)]
    pub summary: PosteriorSummary,
}

/// Method-level table, one row per method. Nethery scenarios report
/// mean absolute bias in place of the ATE.
pub fn report_csv(report: &ReplicationReport) -> String {
    let first = if report.reports_abs_bias() { "AbsBias" } else { "ATE" };
    let mut out = format!("Method,{first},%Bias,SDbar,SE,Coverage,Valid,Failed\n");
    for m in &report.methods {
        let lead = if report.reports_abs_bias() { m.abs_bias } else { m.ate };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.method,
            fmt_f64(lead),
            fmt_f64(m.pct_bias),
            fmt_f64(m.sd_bar),
            fmt_f64(m.se),
            fmt_f64(m.coverage),
            m.valid,
            m.failed
        ));
    }
    out
}

pub fn replications_csv(report: &ReplicationReport) -> String {
    let mut out = String::from(
        "replication,truth,gp_estimate,gp_sd,gp_lower,gp_upper,glm_estimate,glm_sd,glm_lower,glm_upper,error\n",
    );
    for r in &report.rows {
        let mut cells = vec![r.replication.to_string(), fmt_f64(r.truth)];
        for e in [r.gp, r.baseline] {
            match e {
                Some(e) => cells.extend([e.estimate, e.sd, e.lower, e.upper].map(fmt_f64)),
                None => cells.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        cells.push(r.error.clone().unwrap_or_default().replace([',', '\n'], ";"));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Everything needed to regenerate a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub input: PathBuf,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub key_column: Option<String>,
    pub mode: OutcomeMode,
    pub mcmc: McmcConfig,
    pub hyperpriors: HyperPriorConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftwareInfo {
    pub name: String,
    pub version: String,
}

impl Default for SoftwareInfo {
    fn default() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: SoftwareInfo,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit: Option<FitSettings>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scenario: Option<ScenarioSpec>,
    /// SHA-256 of the input data or scenario file.
    pub input_digest: Option<String>,
    #[serde(default)]
    pub covariate_transforms: Vec<NamedTransform>,
    #[serde(default)]
    pub chains: Vec<ChainDiagnostics>,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn cols(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn toy_file_matches_hand_construction() {
        let f = csv_file("y,a,age,sex\n1.5,1,30,m\n2.0,0,40,f\n0.5,1,50,f\n1.0,0,60,m\n".replace(",m", ",1").replace(",f", ",0").as_str());
        let got = ingest_csv(f.path(), "y", "a", &cols(&["age", "sex"]), None, OutcomeMode::Continuous).unwrap();
        assert_eq!(got.data.y().as_slice(), &[1.5, 2.0, 0.5, 1.0]);
        assert_eq!(got.data.a().as_slice(), &[1.0, 0.0, 1.0, 0.0]);
        let sd = (500.0f64 / 3.0).sqrt();
        for (i, age) in [30.0, 40.0, 50.0, 60.0].iter().enumerate() {
            assert!((got.data.x()[(i, 0)] - (age - 45.0) / sd).abs() < 1e-12);
        }
        assert_eq!(got.data.x().column(1).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(got.digest.len(), 64);
    }

    #[test]
    fn structured_ingest_errors() {
        let f = csv_file("y,a,x\n1,1,2\n2,2,3\n3,0,4\n");
        let err = ingest_csv(f.path(), "y", "a", &cols(&["x"]), None, OutcomeMode::Continuous).unwrap_err();
        assert!(matches!(err, Error::NonBinaryTreatment { row: 2, ref value, .. } if value == "2"));

        let f = csv_file("y,a,x\n1,1,2\n2,0,2\n3,0,2\n");
        let err = ingest_csv(f.path(), "y", "a", &cols(&["x"]), None, OutcomeMode::Continuous).unwrap_err();
        assert!(matches!(err, Error::ZeroVarianceCovariate(_)));

        let f = csv_file("y,a,x\n1,1,2\n2,0,abc\n");
        let err = ingest_csv(f.path(), "y", "a", &cols(&["x"]), None, OutcomeMode::Continuous).unwrap_err();
        assert!(matches!(err, Error::NonNumericCell { row: 2, .. }));

        let f = csv_file("y,a,x\n1,1,2\n2,0,\n3,0,NA\n");
        let err = ingest_csv(f.path(), "y", "a", &cols(&["x"]), None, OutcomeMode::Continuous).unwrap_err();
        assert!(matches!(err, Error::MissingValues { ref rows } if rows == &vec![2, 3]));

        let f = csv_file("y,a,x\n1,1,2\n2,1,3\n");
        let err = ingest_csv(f.path(), "y", "a", &cols(&["x"]), None, OutcomeMode::Continuous).unwrap_err();
        assert!(matches!(err, Error::SingleArm { treated: 2, n: 2 }));

        let f = csv_file("y,a\n1,1\n");
        let err = ingest_csv(f.path(), "y", "a", &cols(&["x"]), None, OutcomeMode::Continuous).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "x"));

        let f = csv_file("");
        let err = ingest_csv(f.path(), "y", "a", &cols(&["x"]), None, OutcomeMode::Continuous).unwrap_err();
        assert!(matches!(err, Error::EmptyFile(_)));
    }

    #[test]
    fn scenario_file_round_trip() {
        let spec = parse_scenario(
            "# desk-scale run\nfamily = linear-y1\noverlap = substantial\nn = 200\nK = 100\nburnin = 2000\nkept = 1000\nthin = 5\nseed = 9\nl_mu.shape = 3\n",
        )
        .unwrap();
        assert_eq!(spec.family, Family::LinearY1);
        assert_eq!(spec.overlap, Overlap::SUBSTANTIAL);
        assert_eq!((spec.n, spec.replications, spec.seed), (200, 100, 9));
        assert_eq!(spec.mcmc.n_burnin, 2000);
        assert_eq!(spec.hyperpriors.l_mu.shape, 3.0);
    }

    #[test]
    fn scenario_errors() {
        assert!(matches!(parse_scenario("family = tobit\n"), Err(Error::UnknownFamily { .. })));
        assert!(matches!(parse_scenario("family = nethery\nbogus = 1\n"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(parse_scenario("n = 10\n"), Err(Error::Config { .. })));
        assert!(matches!(parse_scenario("family nethery\n"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn numbers_print_with_17_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
