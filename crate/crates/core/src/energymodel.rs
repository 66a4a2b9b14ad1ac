//! Base-station energy models.
//!
//! Two candidate formulas over load `L`, maximum transmit power `MTX` and
//! symbol-shutdown duration `DSS`:
//!
//! - `eq1`: `E = c·L·MTX·DSS` (with `c = 1` this is the bare product),
//! - `eq2`: `E = PS − alpha·DSS + beta·L·MTX`, where `beta = 1/ε` for amplifier
//!   efficiency `ε`.
//!
//! Both are linear in their parameters and fitted by ordinary least squares.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TASK1_PARAMETERS: [&str; 9] = [
    "BS load",
    "latitude",
    "longitude",
    "serial number",
    "production year",
    "maximum transmit power",
    "duration of activation of symbol shutdown",
    "weight",
    "number of antennas",
];

pub const EXPECTED_FEATURES: [&str; 3] = [
    "BS load",
    "maximum transmit power",
    "duration of activation of symbol shutdown",
];

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("missing column {0:?} (expected bs_id,L,MTX,DSS,E)")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    InvalidRecord { row: usize, message: String },
    #[error("need at least {needed} records to fit {kind}, got {got}")]
    TooFewRecords { kind: EnergyKind, needed: usize, got: usize },
    #[error("degenerate data for {kind}: regressors {} are collinear or constant", .regressors.join(", "))]
    Degenerate { kind: EnergyKind, regressors: Vec<String> },
    #[error("MAPE undefined: record {bs_id} has zero energy")]
    ZeroEnergy { bs_id: String },
    #[error("invalid generator settings: {0}")]
    Params(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub bs_id: String,
    #[serde(rename = "L")]
    pub load: f64,
    #[serde(rename = "MTX")]
    pub mtx: f64,
    #[serde(rename = "DSS")]
    pub dss: f64,
    #[serde(rename = "E")]
    pub energy: f64,
}

impl EnergyRecord {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !unit(self.load) {
            return Err(format!("L = {} is outside [0, 1]", self.load));
        }
        if !unit(self.dss) {
            return Err(format!("DSS = {} is outside [0, 1]", self.dss));
        }
        if !(self.mtx.is_finite() && self.mtx >= 0.0) {
            return Err(format!("MTX = {} must be finite and non-negative", self.mtx));
        }
        if !(self.energy.is_finite() && self.energy >= 0.0) {
            return Err(format!("E = {} must be finite and non-negative", self.energy));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    Eq1,
    Eq2,
}

impl fmt::Display for EnergyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnergyKind::Eq1 => "eq1",
            EnergyKind::Eq2 => "eq2",
        })
    }
}

pub fn eval_eq1(load: f64, mtx: f64, dss: f64, c: f64) -> f64 {
    c * load * mtx * dss
}

pub fn eval_eq2(load: f64, mtx: f64, dss: f64, ps: f64, alpha: f64, beta: f64) -> f64 {
    ps - alpha * dss + beta * load * mtx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eq2Params {
    #[serde(rename = "PS")]
    pub ps: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Eq2Params {
    /// Amplifier efficiency, when `beta` is positive.
    pub fn efficiency(&self) -> Option<f64> {
        (self.beta > 0.0).then(|| 1.0 / self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnergyParams {
    Eq1 { c: f64 },
    Eq2(Eq2Params),
}

impl EnergyParams {
    pub fn kind(&self) -> EnergyKind {
        match self {
            EnergyParams::Eq1 { .. } => EnergyKind::Eq1,
            EnergyParams::Eq2(_) => EnergyKind::Eq2,
        }
    }

    pub fn predict(&self, r: &EnergyRecord) -> f64 {
        match *self {
            EnergyParams::Eq1 { c } => eval_eq1(r.load, r.mtx, r.dss, c),
            EnergyParams::Eq2(p) => eval_eq2(r.load, r.mtx, r.dss, p.ps, p.alpha, p.beta),
        }
    }

    fn as_vec(&self) -> Vec<f64> {
        match *self {
            EnergyParams::Eq1 { c } => vec![c],
            EnergyParams::Eq2(p) => vec![p.ps, p.alpha, p.beta],
        }
    }

    fn from_vec(kind: EnergyKind, v: &[f64]) -> Self {
        match kind {
            EnergyKind::Eq1 => EnergyParams::Eq1 { c: v[0] },
            EnergyKind::Eq2 => EnergyParams::Eq2(Eq2Params {
                ps: v[0],
                alpha: v[1],
                beta: v[2],
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEnergyModel {
    pub kind: EnergyKind,
    pub params: EnergyParams,
    pub mape_percent: f64,
    pub n_records: usize,
}

impl FittedEnergyModel {
    pub fn predict(&self, r: &EnergyRecord) -> f64 {
        self.params.predict(r)
    }
}

fn regressor_names(kind: EnergyKind) -> &'static [&'static str] {
    match kind {
        EnergyKind::Eq1 => &["L·MTX·DSS"],
        EnergyKind::Eq2 => &["1", "-DSS", "L·MTX"],
    }
}

fn design_row(kind: EnergyKind, r: &EnergyRecord) -> Vec<f64> {
    match kind {
        EnergyKind::Eq1 => vec![r.load * r.mtx * r.dss],
        EnergyKind::Eq2 => vec![1.0, -r.dss, r.load * r.mtx],
    }
}

/// Sum of squared residuals of `params` on `records`.
pub fn sse(records: &[EnergyRecord], params: &EnergyParams) -> f64 {
    records
        .iter()
        .map(|r| (params.predict(r) - r.energy).powi(2))
        .sum()
}

/// Least-squares fit of `kind`, reporting MAPE of the fitted model.
pub fn fit(records: &[EnergyRecord], kind: EnergyKind) -> Result<FittedEnergyModel, EnergyError> {
    let names = regressor_names(kind);
    let p = names.len();
    if records.len() < p {
        return Err(EnergyError::TooFewRecords {
            kind,
            needed: p,
            got: records.len(),
        });
    }
    let rows: Vec<f64> = records.iter().flat_map(|r| design_row(kind, r)).collect();
    let x = DMatrix::from_row_slice(records.len(), p, &rows);
    let y = DVector::from_iterator(records.len(), records.iter().map(|r| r.energy));

    check_rank(kind, &x)?;

    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx
            .pseudo_inverse(1e-12)
            .map_err(|_| EnergyError::Degenerate {
                kind,
                regressors: names.iter().map(|s| s.to_string()).collect(),
            })?
            * xty,
    };
    let params = EnergyParams::from_vec(kind, beta.as_slice());
    let mape_percent = mape(records, |r| params.predict(r))?;
    Ok(FittedEnergyModel {
        kind,
        params,
        mape_percent,
        n_records: records.len(),
    })
}

/// Constant scalar regressors and rank-deficient designs are both rejected.
/// A scalar fit on identical values would only rescale one number.
fn check_rank(kind: EnergyKind, x: &DMatrix<f64>) -> Result<(), EnergyError> {
    let names = regressor_names(kind);
    if x.ncols() == 1 {
        let col = x.column(0);
        let first = col[0];
        if col.iter().all(|v| (v - first).abs() <= 1e-12 * first.abs().max(1.0)) {
            return Err(EnergyError::Degenerate {
                kind,
                regressors: vec![names[0].to_string()],
            });
        }
        return Ok(());
    }
    let svd = x.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * x.nrows().max(x.ncols()) as f64;
    let v_t = svd.v_t.expect("requested V^T");
    let mut involved = BTreeSet::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= tol {
            for (j, w) in v_t.row(i).iter().enumerate() {
                if w.abs() > 1e-6 {
                    involved.insert(j);
                }
            }
        }
    }
    if smax == 0.0 {
        involved.extend(0..names.len());
    }
    if involved.is_empty() {
        Ok(())
    } else {
        Err(EnergyError::Degenerate {
            kind,
            regressors: involved.into_iter().map(|j| names[j].to_string()).collect(),
        })
    }
}

/// Mean absolute percentage error of `predict` against recorded energy.
pub fn mape(records: &[EnergyRecord], predict: impl Fn(&EnergyRecord) -> f64) -> Result<f64, EnergyError> {
    if records.is_empty() {
        return Err(EnergyError::Params("no records".into()));
    }
    let mut total = 0.0;
    for r in records {
        if r.energy == 0.0 {
            return Err(EnergyError::ZeroEnergy {
                bs_id: r.bs_id.clone(),
            });
        }
        total += ((predict(r) - r.energy) / r.energy).abs();
    }
    Ok(100.0 * total / records.len() as f64)
}

/// Synthetic network generator. Shutdown opportunity falls with load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_bs: usize,
    pub params: Eq2Params,
    /// Relative standard deviation of multiplicative gaussian noise on `E`.
    pub noise_sd: f64,
    pub seed: u64,
    pub dss_intercept: f64,
    pub dss_slope: f64,
    pub dss_jitter_sd: f64,
    pub mtx_min: f64,
    pub mtx_max: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_bs: 90,
            params: Eq2Params {
                ps: 0.31,
                alpha: 0.18,
                beta: 3.4,
            },
            noise_sd: 0.02,
            seed: 0,
            dss_intercept: 0.8,
            dss_slope: 0.7,
            dss_jitter_sd: 0.05,
            mtx_min: 0.5,
            mtx_max: 1.0,
        }
    }
}

const MIN_ENERGY: f64 = 1e-6;

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<EnergyRecord>, EnergyError> {
    if cfg.n_bs == 0 {
        return Err(EnergyError::Params("n_bs must be at least 1".into()));
    }
    if !(cfg.noise_sd >= 0.0 && cfg.dss_jitter_sd >= 0.0) {
        return Err(EnergyError::Params("standard deviations must be non-negative".into()));
    }
    if !(0.0 <= cfg.mtx_min && cfg.mtx_min <= cfg.mtx_max) {
        return Err(EnergyError::Params("need 0 <= mtx_min <= mtx_max".into()));
    }
    let p = cfg.params;
    if ![p.ps, p.alpha, p.beta].iter().all(|v| v.is_finite()) {
        return Err(EnergyError::Params("eq2 parameters must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(cfg.n_bs);
    for i in 0..cfg.n_bs {
        let load: f64 = rng.random_range(0.0..=1.0);
        let mtx = if cfg.mtx_max > cfg.mtx_min {
            rng.random_range(cfg.mtx_min..=cfg.mtx_max)
        } else {
            cfg.mtx_min
        };
        let jitter = cfg.dss_jitter_sd * std_normal.sample(&mut rng);
        let dss = ((cfg.dss_intercept - cfg.dss_slope * load).max(0.0) + jitter).clamp(0.0, 1.0);
        let clean = eval_eq2(load, mtx, dss, p.ps, p.alpha, p.beta);
        let noise = 1.0 + cfg.noise_sd * std_normal.sample(&mut rng);
        out.push(EnergyRecord {
            bs_id: format!("bs{:03}", i + 1),
            load,
            mtx,
            dss,
            energy: (clean * noise).max(MIN_ENERGY),
        });
    }
    Ok(out)
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<EnergyRecord>, EnergyError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    for col in ["bs_id", "L", "MTX", "DSS", "E"] {
        if !headers.iter().any(|h| h == col) {
            return Err(EnergyError::MissingColumn(col.to_string()));
        }
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<EnergyRecord>().enumerate() {
        let row_no = i + 2;
        let record = row.map_err(|e| EnergyError::InvalidRecord {
            row: row_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| EnergyError::InvalidRecord { row: row_no, message })?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<EnergyRecord>, EnergyError> {
    read_records(std::fs::File::open(path)?)
}

pub fn write_records<W: Write>(out: W, records: &[EnergyRecord]) -> Result<(), EnergyError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Load against ground truth and each model's prediction, sorted by load.
pub fn write_plot_csv<W: Write>(
    out: W,
    records: &[EnergyRecord],
    models: &[FittedEnergyModel],
) -> Result<(), EnergyError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["bs_id".to_string(), "L".into(), "ground_truth".into()];
    header.extend(models.iter().map(|m| m.kind.to_string()));
    w.write_record(&header)?;
    let mut sorted: Vec<&EnergyRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.load.total_cmp(&b.load).then_with(|| a.bs_id.cmp(&b.bs_id)));
    for r in sorted {
        let mut row = vec![r.bs_id.clone(), r.load.to_string(), r.energy.to_string()];
        row.extend(models.iter().map(|m| m.predict(r).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The feature-selection prompt and the formula-derivation prompt.
pub fn render_task_prompts() -> (String, String) {
    let mut task1 = String::from(
        "Instruct: Select, based on your knowledge, the most important parameters for estimating the energy consumption of a mobile base station in a mathematical model. Select the relevant parameters from the list:\n",
    );
    for p in TASK1_PARAMETERS {
        task1.push_str(&format!("- {p}\n"));
    }
    task1.push_str("Output:");
    let task2 = "Instruct: write a mathematical formula to estimate the energy consumption of a base station using the following parameters:\n\
- BS load (L)\n\
- maximum transmit power (MTX)\n\
- duration of activation of symbol shutdown (DSS)\n\
Output:"
        .to_string();
    (task1, task2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelection {
    /// Named parameters, in list order.
    pub selected: Vec<String>,
    pub matches_expected: bool,
}

/// Which of the nine listed parameters a reply names.
pub fn check_feature_selection(model_output: &str) -> FeatureSelection {
    let selected: Vec<String> = TASK1_PARAMETERS
        .iter()
        .filter(|p| {
            let pattern = format!(r"(?i)\b{}\b", regex::escape(p).replace(' ', r"\s+"));
            Regex::new(&pattern).expect("static pattern").is_match(model_output)
        })
        .map(|p| p.to_string())
        .collect();
    let matches_expected = selected.len() == EXPECTED_FEATURES.len()
        && EXPECTED_FEATURES.iter().all(|e| selected.iter().any(|s| s == e));
    FeatureSelection {
        selected,
        matches_expected,
    }
}

/// Fitted parameters perturbed one at a time by `±rel`, for optimality checks.
pub fn perturbations(params: &EnergyParams, rel: f64) -> Vec<EnergyParams> {
    let base = params.as_vec();
    let mut out = Vec::new();
    for i in 0..base.len() {
        for sign in [-1.0, 1.0] {
            let mut v = base.clone();
            v[i] += sign * rel * v[i].abs().max(1e-12);
            out.push(EnergyParams::from_vec(params.kind(), &v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(load: f64, mtx: f64, dss: f64, energy: f64) -> EnergyRecord {
        EnergyRecord {
            bs_id: "x".into(),
            load,
            mtx,
            dss,
            energy,
        }
    }

    #[test]
    fn formulas() {
        assert_eq!(eval_eq1(0.0, 0.7, 0.3, 5.0), 0.0);
        assert_eq!(eval_eq1(1.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(eval_eq1(0.4, 0.7, 0.0, 2.0), 0.0);
        assert!((eval_eq2(0.5, 1.0, 0.0, 0.2, 0.1, 4.0) - 2.2).abs() < 1e-12);
        assert_eq!(eval_eq2(0.0, 0.9, 0.0, 0.2, 0.1, 4.0), 0.2);
        assert!(eval_eq2(0.5, 1.0, 0.6, 0.2, 0.1, 4.0) < eval_eq2(0.5, 1.0, 0.5, 0.2, 0.1, 4.0));
        let p = Eq2Params { ps: 0.2, alpha: 0.1, beta: 4.0 };
        assert_eq!(p.efficiency(), Some(0.25));
    }

    #[test]
    fn mape_cases() {
        let rs = vec![rec(0.5, 1.0, 0.2, 2.0), rec(0.2, 1.0, 0.1, 4.0)];
        assert_eq!(mape(&rs, |r| r.energy).unwrap(), 0.0);
        assert!((mape(&rs, |r| r.energy * 1.1).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(mape(&rs[..1], |_| 1.0).unwrap(), 50.0);
        assert!(matches!(
            mape(&[rec(0.1, 1.0, 0.1, 0.0)], |_| 1.0),
            Err(EnergyError::ZeroEnergy { .. })
        ));
    }

    #[test]
    fn noiseless_eq2_recovery() {
        let cfg = SyntheticConfig {
            noise_sd: 0.0,
            seed: 11,
            ..SyntheticConfig::default()
        };
        let rs = generate_synthetic(&cfg).unwrap();
        assert_eq!(rs.len(), 90);
        let fitted = fit(&rs, EnergyKind::Eq2).unwrap();
        let EnergyParams::Eq2(p) = fitted.params else { panic!() };
        for (got, want) in [(p.ps, 0.31), (p.alpha, 0.18), (p.beta, 3.4)] {
            assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!(fitted.mape_percent < 1e-6);
        let max_residual = rs
            .iter()
            .map(|r| (fitted.predict(r) - r.energy).abs())
            .fold(0.0, f64::max);
        assert!(max_residual <= 1e-9);
    }

    #[test]
    fn eq1_degenerate_on_constant_regressor() {
        let rs = vec![rec(0.5, 1.0, 0.4, 1.0), rec(0.4, 1.0, 0.5, 2.0), rec(1.0, 0.5, 0.4, 3.0)];
        let err = fit(&rs, EnergyKind::Eq1).unwrap_err();
        assert!(err.to_string().contains("L·MTX·DSS"), "{err}");
    }

    #[test]
    fn eq2_degenerate_names_regressors() {
        // DSS constant: collinear with the intercept
        let rs: Vec<_> = (0..10).map(|i| rec(i as f64 / 10.0, 1.0, 0.3, 1.0 + i as f64)).collect();
        let EnergyError::Degenerate { regressors, .. } = fit(&rs, EnergyKind::Eq2).unwrap_err() else {
            panic!()
        };
        assert_eq!(regressors, vec!["1", "-DSS"]);
        assert!(matches!(
            fit(&rs[..2], EnergyKind::Eq2),
            Err(EnergyError::TooFewRecords { needed: 3, got: 2, .. })
        ));
    }

    #[test]
    fn eq1_vanishes_without_shutdown() {
        let rs = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let fitted = fit(&rs, EnergyKind::Eq1).unwrap();
        let probe = rec(0.9, 1.0, 0.0, 3.0);
        assert_eq!(fitted.predict(&probe), 0.0);
    }

    #[test]
    fn eq1_is_much_worse_than_eq2() {
        let rs = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let e1 = fit(&rs, EnergyKind::Eq1).unwrap().mape_percent;
        let e2 = fit(&rs, EnergyKind::Eq2).unwrap().mape_percent;
        assert!(e1 > 10.0 * e2, "eq1 {e1} eq2 {e2}");
    }

    #[test]
    fn synthetic_is_seeded() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
        assert!(generate_synthetic(&SyntheticConfig { n_bs: 0, ..cfg }).is_err());
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let rs = generate_synthetic(&SyntheticConfig { n_bs: 5, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &rs).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("bs_id,L,MTX,DSS,E\n"));
        assert_eq!(read_records(&buf[..]).unwrap(), rs);

        let err = read_records("bs_id,L,MTX,E\na,0.1,1,2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("\"DSS\""));
        let err = read_records("bs_id,L,MTX,DSS,E\na,1.5,1,0.2,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, EnergyError::InvalidRecord { row: 2, .. }));
    }

    #[test]
    fn task_prompts() {
        let (t1, t2) = render_task_prompts();
        assert_eq!(
            t1,
            "Instruct: Select, based on your knowledge, the most important parameters for estimating the energy consumption of a mobile base station in a mathematical model. Select the relevant parameters from the list:\n\
- BS load\n- latitude\n- longitude\n- serial number\n- production year\n- maximum transmit power\n\
- duration of activation of symbol shutdown\n- weight\n- number of antennas\nOutput:"
        );
        assert_eq!(
            t2,
            "Instruct: write a mathematical formula to estimate the energy consumption of a base station using the following parameters:\n\
- BS load (L)\n- maximum transmit power (MTX)\n- duration of activation of symbol shutdown (DSS)\nOutput:"
        );
        assert_eq!(render_task_prompts(), (t1, t2));
    }

    #[test]
    fn feature_selection() {
        let good = check_feature_selection(
            "The key parameters are BS load, Maximum Transmit Power and duration of activation of symbol shutdown.",
        );
        assert!(good.matches_expected);
        let extra = check_feature_selection(
            "BS load, maximum transmit power, duration of activation of symbol shutdown, weight",
        );
        assert!(!extra.matches_expected);
        assert_eq!(extra.selected.len(), 4);
        let none = check_feature_selection("");
        assert!(none.selected.is_empty() && !none.matches_expected);
        assert!(check_feature_selection("lightweight design").selected.is_empty());
    }

    #[test]
    fn fit_json_shape() {
        let rs = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let v = serde_json::to_value(fit(&rs, EnergyKind::Eq2).unwrap()).unwrap();
        assert_eq!(v["kind"], "eq2");
        assert!(v["params"]["PS"].is_f64() && v["params"]["beta"].is_f64());
        assert_eq!(v["n_records"], 90);
        let v = serde_json::to_value(fit(&rs, EnergyKind::Eq1).unwrap()).unwrap();
        assert!(v["params"]["c"].is_f64());
    }

    #[test]
    fn plot_csv_sorted_by_load() {
        let rs = generate_synthetic(&SyntheticConfig { n_bs: 20, ..Default::default() }).unwrap();
        let models = [fit(&rs, EnergyKind::Eq1).unwrap(), fit(&rs, EnergyKind::Eq2).unwrap()];
        let mut buf = Vec::new();
        write_plot_csv(&mut buf, &rs, &models).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("bs_id,L,ground_truth,eq1,eq2"));
        let loads: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(loads.len(), 20);
        assert!(loads.windows(2).all(|w| w[0] <= w[1]));
    }
}
