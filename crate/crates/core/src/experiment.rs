//! Experiment configs, the end-to-end pipeline, sweeps and report output.
//!
//! A config is a TOML document:
//!
//! ```toml
//! id = "clipper"
//! seed = 1
//! samples = 1000000
//! k-min = 4
//! k-max = 12
//!
//! [distribution]
//! kind = "uniform-box"
//! lo = [-1.0]
//! hi = [1.0]
//!
//! [system]
//! kind = "center-clipper"
//! c = 0.5
//! ```
//!
//! The curve uses `seed`; the reconstructor trains on `seed + 1` and is
//! evaluated on `seed + 2`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::entropy::{entropy_curve, CurveSettings, EntropyCurve, Mode, MIN_SAMPLES};
use crate::error::{Error, Result};
use crate::loss::LossReport;
use crate::measure::DistributionSpec;
use crate::reconstruct::{fano_check, pe_sequence, FanoCheck, PeSequence};
use crate::systems::{analytic_relative_loss, SystemSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest `k-max` a config may ask for.
pub const MAX_K: u32 = 20;

fn default_k_min() -> u32 {
    4
}
fn default_k_max() -> u32 {
    12
}
fn default_samples() -> usize {
    1_000_000
}
fn yes() -> bool {
    true
}

/// Which optional checks a run performs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Checks {
    #[serde(default = "yes")]
    pub fano: bool,
    /// Per-axis curves and the componentwise bound (inputs with N ≥ 2).
    #[serde(default)]
    pub componentwise: bool,
    #[serde(default = "yes")]
    pub conjecture: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            fano: true,
            componentwise: false,
            conjecture: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub distribution: DistributionSpec,
    pub system: SystemSpec,
    #[serde(default = "default_k_min")]
    pub k_min: u32,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Estimator mode; atom-oracle when the system has structure on the
    /// input, else two-sided with factor 16.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub miller_madow: bool,
    #[serde(default)]
    pub checks: Checks,
    /// Training and evaluation batch size for the reconstructor; defaults
    /// to `samples`.
    #[serde(default)]
    pub reconstruct_samples: Option<usize>,
    /// Path prefix of the `.csv` and `.json` outputs; defaults to `id`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the pair under study.
    pub fn new(id: impl Into<String>, distribution: DistributionSpec, system: SystemSpec) -> Self {
        ExperimentConfig {
            id: id.into(),
            distribution,
            system,
            k_min: default_k_min(),
            k_max: default_k_max(),
            samples: default_samples(),
            seed: 0,
            mode: None,
            miller_madow: false,
            checks: Checks::default(),
            reconstruct_samples: None,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.k_min && self.k_min < self.k_max && self.k_max <= MAX_K) {
            return Err(Error::config(format!(
                "need 1 <= k-min < k-max <= {MAX_K}, got k-min = {}, k-max = {}",
                self.k_min, self.k_max
            )));
        }
        if self.samples < MIN_SAMPLES {
            return Err(Error::config(format!("samples must be at least {MIN_SAMPLES}, got {}", self.samples)));
        }
        if self.id.is_empty() {
            return Err(Error::config("id must not be empty"));
        }
        let n = self.distribution.validate().map_err(|e| e.context("distribution"))?;
        self.system.validate(n).map_err(|e| e.context("system"))?;
        Ok(())
    }

    pub fn resolved_mode(&self) -> Mode {
        self.mode
            .unwrap_or_else(|| Mode::default_for(&self.system, &self.distribution))
    }

    pub fn output_prefix(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from(&self.id))
    }
}

fn config_from_value(value: toml::Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            Error::config(inner.to_string())
        } else {
            Error::config(format!("at `{path}`: {inner}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(text: &str) -> Result<toml::Value> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("invalid TOML: {e}")))?;
    Ok(toml::Value::Table(table))
}

/// Parses and validates a TOML config. Errors name the offending key.
///
/// ```
/// use infoloss::experiment::parse_config;
///
/// let err = parse_config(r#"
///     id = "x"
///     [distribution]
///     kind = "uniform-box"
///     lo = [0.0]
///     hi = [1.0]
///     [system]
///     kind = "center-clipper"
///     threshold = 0.5
/// "#).unwrap_err();
/// assert!(err.to_string().contains("system"));
/// ```
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    config_from_value(parse_value(text)?)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    parse_config(&text).map_err(|e| e.context(path.display().to_string()))
}

/// Everything one run produced.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub mode: Mode,
    pub curve: EntropyCurve,
    pub loss: LossReport,
    pub pe: Option<PeSequence>,
    pub fano: Option<FanoCheck>,
    pub unreliable_rows: Vec<u32>,
    pub wall_time_secs: f64,
    pub version: String,
}

/// Runs the whole pipeline for one config. Nothing is written to disk.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    config.validate()?;
    let mode = config.resolved_mode();
    let dist = &config.distribution;
    let system = &config.system;
    let per_axis = config.checks.componentwise && dist.dim() >= 2;
    let settings = CurveSettings::new(config.k_min, config.k_max, config.samples, config.seed, mode)
        .with_miller_madow(config.miller_madow)
        .with_per_axis(per_axis);
    let curve = entropy_curve(dist, system, &settings).map_err(|e| e.context("entropy"))?;
    let mut loss = LossReport::build(dist, system, &curve).map_err(|e| e.context("loss"))?;
    if !config.checks.conjecture {
        loss.conjecture_gap = None;
    }
    let has_structure = crate::model::ConditionalModel::new(system, dist).is_some();
    let (pe, fano) = if config.checks.fano && has_structure {
        let m = config.reconstruct_samples.unwrap_or(config.samples);
        let pe = pe_sequence(
            dist,
            system,
            config.k_min,
            config.k_max,
            m,
            config.seed.wrapping_add(1),
            m,
            config.seed.wrapping_add(2),
        )
        .map_err(|e| e.context("reconstruct"))?;
        let f = fano_check(loss.relative.slope, &pe);
        (Some(pe), Some(f))
    } else {
        (None, None)
    };
    let unreliable_rows = curve.rows.iter().filter(|r| !r.reliable).map(|r| r.k).collect();
    Ok(RunReport {
        config: config.clone(),
        mode,
        curve,
        loss,
        pe,
        fano,
        unreliable_rows,
        wall_time_secs: start.elapsed().as_secs_f64(),
        version: VERSION.to_string(),
    })
}

pub const CURVE_HEADER: [&str; 10] = [
    "experiment-id",
    "system",
    "distribution",
    "k",
    "n",
    "samples",
    "H-marginal-bits",
    "H-conditional-bits",
    "ratio",
    "reliable-flag",
];

pub const REPORT_HEADER: [&str; 12] = [
    "experiment-id",
    "d-X",
    "d-cond",
    "relative-ratio",
    "relative-slope",
    "analytic",
    "absolute-or-diverging",
    "bound-joint",
    "bound-marginal",
    "conjecture-gap",
    "Pe-max",
    "fano-satisfied",
];

fn num(x: f64) -> String {
    let s = format!("{x:.6}");
    // no negative zero in the output
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), num)
}

/// Curve section followed, after a blank line, by the report section.
/// Numbers use six decimals so reruns are byte-identical.
pub fn write_csv<W: std::io::Write>(reports: &[RunReport], mut out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::data(format!("writing CSV: {e}"));
    w.write_record(CURVE_HEADER).map_err(io)?;
    for r in reports {
        let sys = r.config.system.label();
        let dist = r.config.distribution.label();
        for row in &r.curve.rows {
            w.write_record([
                r.config.id.clone(),
                sys.clone(),
                dist.clone(),
                row.k.to_string(),
                row.n.to_string(),
                r.curve.sample_count.to_string(),
                num(row.h_marginal),
                num(row.h_conditional),
                num(row.ratio()),
                row.reliable.to_string(),
            ])
            .map_err(io)?;
        }
    }
    let curves = w.into_inner().map_err(|e| Error::data(format!("writing CSV: {e}")))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER).map_err(io)?;
    for r in reports {
        let l = &r.loss;
        let cw = l.componentwise.as_ref();
        w.write_record([
            r.config.id.clone(),
            num(l.relative.marginal.slope),
            num(l.relative.conditional.slope),
            num(l.relative.ratio),
            num(l.relative.slope),
            opt(l.analytic),
            l.absolute.label(),
            opt(cw.map(|c| c.joint)),
            opt(cw.map(|c| c.marginal)),
            opt(l.conjecture_gap),
            opt(r.fano.as_ref().map(|f| f.pe_max)),
            r.fano.as_ref().map_or_else(|| "NA".into(), |f| f.satisfied.to_string()),
        ])
        .map_err(io)?;
    }
    let report = w.into_inner().map_err(|e| Error::data(format!("writing CSV: {e}")))?;
    out.write_all(&curves)?;
    out.write_all(b"\n")?;
    out.write_all(&report)?;
    Ok(())
}

pub fn csv_string(reports: &[RunReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
}

/// Writes `<prefix>.csv` and `<prefix>.json`; returns both paths.
pub fn write_outputs(reports: &[RunReport], prefix: &Path, trailer: Option<&str>) -> Result<(PathBuf, PathBuf)> {
    let with_ext = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    let csv_path = with_ext(".csv");
    let json_path = with_ext(".json");
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = csv_string(reports)?;
    if let Some(t) = trailer {
        text.push_str(&format!("# {t}\n"));
    }
    std::fs::write(&csv_path, text)?;
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])
    } else {
        serde_json::to_string_pretty(reports)
    }
    .map_err(|e| Error::data(format!("writing JSON: {e}")))?;
    std::fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

/// Sets `path` (dot-separated, e.g. `system.c`) in a TOML template.
fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let (leaf, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = root;
    for p in parents {
        cur = cur
            .get_mut(*p)
            .ok_or_else(|| Error::config(format!("sweep parameter `{path}`: no table `{p}` in the template")))?;
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("sweep parameter `{path}` does not name a table entry")))?;
    if !parents.is_empty() && !table.contains_key(*leaf) {
        return Err(Error::config(format!("sweep parameter `{path}` is not in the template")));
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

/// A sweep value as TOML: numbers, booleans and arrays parse as such,
/// anything else is taken as a string.
fn sweep_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Result of a sweep: the completed runs and, if one failed, where.
#[derive(Debug)]
pub struct SweepOutcome {
    pub reports: Vec<RunReport>,
    pub failure: Option<(String, Error)>,
}

/// One run per value of `param`, in order. Stops at the first failing
/// value and keeps the runs before it.
pub fn sweep(template: &str, param: &str, values: &[String], seed: Option<u64>) -> Result<SweepOutcome> {
    let base = parse_value(template)?;
    let base_cfg = config_from_value(base.clone())?;
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let mut reports = Vec::with_capacity(values.len());
    for v in values {
        let attempt = (|| {
            let mut doc = base.clone();
            set_path(&mut doc, param, sweep_value(v))?;
            let mut cfg = config_from_value(doc)?;
            cfg.id = format!("{}/{param}={v}", base_cfg.id);
            if let Some(s) = seed {
                cfg.seed = s;
            }
            run_experiment(&cfg)
        })();
        match attempt {
            Ok(r) => reports.push(r),
            Err(e) => {
                return Ok(SweepOutcome {
                    reports,
                    failure: Some((v.clone(), e.context(format!("{param}={v}")))),
                })
            }
        }
    }
    Ok(SweepOutcome { reports, failure: None })
}

/// A built-in (system, distribution) pair with its closed-form loss.
#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub system: SystemSpec,
    pub distribution: DistributionSpec,
    pub analytic: Option<f64>,
}

/// The reference cases used throughout the docs and tests.
pub fn catalog() -> Vec<CatalogEntry> {
    let u01 = DistributionSpec::uniform(0.0, 1.0);
    let u11 = DistributionSpec::uniform(-1.0, 1.0);
    let u2 = DistributionSpec::uniform_box(vec![0.0, 0.0], vec![1.0, 1.0]);
    let u2s = DistributionSpec::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0]);
    let q8 = SystemSpec::uniform_quantizer(8, 0.0, 1.0);
    let entries = vec![
        ("identity", SystemSpec::Identity, u01.clone()),
        ("affine", SystemSpec::affine(2.0, -1.0), u01.clone()),
        ("quantizer-8", q8.clone(), u01.clone()),
        ("quantizer-then-affine", SystemSpec::compose(q8.clone(), SystemSpec::affine(3.0, 1.0)), u01.clone()),
        ("center-clipper", SystemSpec::center_clipper(0.5), u11.clone()),
        ("magnitude-clipper", SystemSpec::magnitude_clipper(0.5), u11.clone()),
        ("square", SystemSpec::Square, u11.clone()),
        ("magnitude", SystemSpec::Magnitude, u11.clone()),
        (
            "center-clipper-gaussian",
            SystemSpec::center_clipper(1.0),
            DistributionSpec::truncated_gaussian(0.0, 1.0, -4.0, 4.0),
        ),
        ("identity-2d", SystemSpec::Identity, u2.clone()),
        ("identity-quantizer-2d", SystemSpec::componentwise(vec![SystemSpec::Identity, q8]), u2.clone()),
        (
            "clipper-pair-2d",
            SystemSpec::componentwise(vec![SystemSpec::center_clipper(0.5), SystemSpec::center_clipper(0.5)]),
            u2s,
        ),
        ("projection-2d", SystemSpec::projection(vec![0]), u2),
    ];
    entries
        .into_iter()
        .map(|(name, system, distribution)| CatalogEntry {
            name,
            analytic: analytic_relative_loss(&system, &distribution),
            system,
            distribution,
        })
        .collect()
}
