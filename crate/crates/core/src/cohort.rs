//! Patient data model, CSV ingestion, endpoint binarization and synthetic
//! cohorts with known structure.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HPV: &str = "hpv";
pub const OS: &str = "os";
pub const DM: &str = "dm";
pub const BIN_OS: &str = "bin_os";

/// Two years, in days.
pub const DEFAULT_BINARIZE_DAYS: f64 = 730.0;

const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Survival,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time_days: f64,
    pub event: bool,
}

impl SurvivalOutcome {
    pub fn new(time_days: f64, event: bool) -> Result<Self> {
        if !time_days.is_finite() || time_days < 0.0 {
            return Err(Error::invalid(format!(
                "survival time must be finite and non-negative, got {time_days}"
            )));
        }
        Ok(Self { time_days, event })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryOutcome {
    label: u8,
}

impl BinaryOutcome {
    pub fn new(label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::invalid(format!("binary label must be 0 or 1, got {label}")));
        }
        Ok(Self { label })
    }

    pub fn label(&self) -> u8 {
        self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Survival(SurvivalOutcome),
    Binary(BinaryOutcome),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub outcomes: BTreeMap<String, Outcome>,
}

impl PatientRecord {
    pub fn survival(&self, endpoint: &str) -> Option<SurvivalOutcome> {
        match self.outcomes.get(endpoint) {
            Some(Outcome::Survival(s)) => Some(*s),
            _ => None,
        }
    }

    pub fn binary(&self, endpoint: &str) -> Option<BinaryOutcome> {
        match self.outcomes.get(endpoint) {
            Some(Outcome::Binary(b)) => Some(*b),
            _ => None,
        }
    }
}

/// An ordered set of patients. Node index in every graph built from a
/// cohort is the patient's position here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    patients: Vec<PatientRecord>,
    feature_names: Vec<String>,
}

impl Cohort {
    pub fn new(patients: Vec<PatientRecord>, feature_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(patients.len());
        for p in &patients {
            if p.id.is_empty() {
                return Err(Error::invalid("patient id must be non-empty"));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(Error::DuplicateId(p.id.clone()));
            }
            if p.features.len() != feature_names.len() {
                return Err(Error::shape(format!(
                    "patient {} has {} features, cohort has {}",
                    p.id,
                    p.features.len(),
                    feature_names.len()
                )));
            }
            if let Some(j) = p.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: 0,
                    column: feature_names[j].clone(),
                    message: format!("non-finite feature for patient {}", p.id),
                });
            }
        }
        Ok(Self {
            patients,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.id.clone()).collect()
    }

    pub fn feature_matrix(&self) -> Array2<f64> {
        let n = self.len();
        let p = self.n_features();
        Array2::from_shape_fn((n, p), |(i, j)| self.patients[i].features[j])
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.patients.iter().map(|p| p.features[j]).collect()
    }

    /// Binary labels for `endpoint`; every patient must carry one.
    pub fn labels(&self, endpoint: &str) -> Result<Vec<u8>> {
        self.patients
            .iter()
            .map(|p| {
                p.binary(endpoint).map(|b| b.label()).ok_or_else(|| {
                    Error::MissingData(format!("patient {} has no binary outcome {endpoint}", p.id))
                })
            })
            .collect()
    }

    /// Times and event flags for `endpoint`; every patient must carry one.
    pub fn survival(&self, endpoint: &str) -> Result<(Vec<f64>, Vec<bool>)> {
        let mut times = Vec::with_capacity(self.len());
        let mut events = Vec::with_capacity(self.len());
        for p in &self.patients {
            let s = p.survival(endpoint).ok_or_else(|| {
                Error::MissingData(format!("patient {} has no survival outcome {endpoint}", p.id))
            })?;
            times.push(s.time_days);
            events.push(s.event);
        }
        Ok((times, events))
    }

    /// Patients that carry an outcome for `endpoint`.
    pub fn with_endpoint(&self, endpoint: &str) -> Cohort {
        Cohort {
            patients: self
                .patients
                .iter()
                .filter(|p| p.outcomes.contains_key(endpoint))
                .cloned()
                .collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Rows at `indices`, in that order. Indices must be distinct.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Keep only the named features, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<Cohort> {
        let index: HashMap<&str, usize> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let cols = names
            .iter()
            .map(|n| {
                index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::MissingData(format!("feature {n} not in cohort")))
            })
            .collect::<Result<Vec<_>>>()?;
        let patients = self
            .patients
            .iter()
            .map(|p| PatientRecord {
                id: p.id.clone(),
                features: cols.iter().map(|&j| p.features[j]).collect(),
                outcomes: p.outcomes.clone(),
            })
            .collect();
        Ok(Cohort {
            patients,
            feature_names: names.to_vec(),
        })
    }

    /// Replace the feature values, keeping ids and outcomes.
    pub fn with_feature_matrix(&self, x: &Array2<f64>) -> Result<Cohort> {
        if x.nrows() != self.len() || x.ncols() != self.n_features() {
            return Err(Error::shape(format!(
                "expected {}x{} feature matrix, got {}x{}",
                self.len(),
                self.n_features(),
                x.nrows(),
                x.ncols()
            )));
        }
        let patients = self
            .patients
            .iter()
            .zip(x.rows())
            .map(|(p, row)| PatientRecord {
                id: p.id.clone(),
                features: row.to_vec(),
                outcomes: p.outcomes.clone(),
            })
            .collect();
        Cohort::new(patients, self.feature_names.clone())
    }

    pub(crate) fn from_parts_unchecked(patients: Vec<PatientRecord>, feature_names: Vec<String>) -> Cohort {
        Cohort {
            patients,
            feature_names,
        }
    }
}

fn read_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_cell<T: std::str::FromStr>(cell: &str, row: usize, column: &str) -> Result<T> {
    cell.parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("cannot parse {cell:?}"),
    })
}

enum EndpointColumn {
    Label(String),
    Time(String),
    Event(String),
}

fn classify_column(name: &str) -> Option<EndpointColumn> {
    if let Some(e) = name.strip_suffix("_label") {
        Some(EndpointColumn::Label(e.to_string()))
    } else if let Some(e) = name.strip_suffix("_time") {
        Some(EndpointColumn::Time(e.to_string()))
    } else {
        name.strip_suffix("_event")
            .map(|e| EndpointColumn::Event(e.to_string()))
    }
}

/// Read a features CSV and an endpoints CSV into a cohort.
///
/// Endpoint columns follow `<name>_label` for binary endpoints and
/// `<name>_time` / `<name>_event` for time-to-event endpoints. Empty
/// cells mean the outcome is absent.
pub fn load_cohort(features_path: impl AsRef<Path>, endpoints_path: impl AsRef<Path>) -> Result<Cohort> {
    let features_path = features_path.as_ref();
    let mut rdr = read_csv(features_path)?;
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("patient_id") {
        return Err(Error::Parse {
            row: 0,
            column: header.get(0).unwrap_or("").to_string(),
            message: "first column must be patient_id".into(),
        });
    }
    let feature_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut patients = Vec::new();
    let mut index = HashMap::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let id = record.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                column: "patient_id".into(),
                message: "empty id".into(),
            });
        }
        let mut features = Vec::with_capacity(feature_names.len());
        for (j, name) in feature_names.iter().enumerate() {
            let cell = record.get(j + 1).unwrap_or("");
            let v: f64 = parse_cell(cell, row, name)?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            features.push(v);
        }
        if index.insert(id.clone(), patients.len()).is_some() {
            return Err(Error::DuplicateId(id));
        }
        patients.push(PatientRecord {
            id,
            features,
            outcomes: BTreeMap::new(),
        });
    }

    let endpoints_path = endpoints_path.as_ref();
    let mut rdr = read_csv(endpoints_path)?;
    let header = rdr.headers()?.clone();
    let id_col = header
        .iter()
        .position(|h| h == "patient_id")
        .ok_or_else(|| Error::Parse {
            row: 0,
            column: "patient_id".into(),
            message: "endpoints file has no patient_id column".into(),
        })?;
    let columns: Vec<(usize, EndpointColumn)> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id_col)
        .filter_map(|(i, h)| classify_column(h).map(|c| (i, c)))
        .collect();

    let mut seen = HashSet::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let id = record.get(id_col).unwrap_or("");
        let &pi = index.get(id).ok_or_else(|| {
            Error::MissingData(format!("endpoint row {row}: id {id} has no matching feature row"))
        })?;
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        let mut times: BTreeMap<String, f64> = BTreeMap::new();
        let mut events: BTreeMap<String, bool> = BTreeMap::new();
        let outcomes = &mut patients[pi].outcomes;
        for (ci, col) in &columns {
            let cell = record.get(*ci).unwrap_or("");
            if cell.is_empty() {
                continue;
            }
            let name = &header[*ci];
            match col {
                EndpointColumn::Label(e) => {
                    let label: u8 = parse_cell(cell, row, name)?;
                    let b = BinaryOutcome::new(label).map_err(|err| Error::Parse {
                        row,
                        column: name.to_string(),
                        message: err.to_string(),
                    })?;
                    outcomes.insert(e.clone(), Outcome::Binary(b));
                }
                EndpointColumn::Time(e) => {
                    times.insert(e.clone(), parse_cell(cell, row, name)?);
                }
                EndpointColumn::Event(e) => {
                    let flag: u8 = parse_cell(cell, row, name)?;
                    if flag > 1 {
                        return Err(Error::Parse {
                            row,
                            column: name.to_string(),
                            message: format!("event flag must be 0 or 1, got {flag}"),
                        });
                    }
                    events.insert(e.clone(), flag == 1);
                }
            }
        }
        for (e, t) in &times {
            let event = events.remove(e).ok_or_else(|| Error::Parse {
                row,
                column: format!("{e}_event"),
                message: "time given without event flag".into(),
            })?;
            let s = SurvivalOutcome::new(*t, event).map_err(|err| Error::Parse {
                row,
                column: format!("{e}_time"),
                message: err.to_string(),
            })?;
            outcomes.insert(e.clone(), Outcome::Survival(s));
        }
        if let Some(e) = events.keys().next() {
            return Err(Error::Parse {
                row,
                column: format!("{e}_time"),
                message: "event flag given without time".into(),
            });
        }
    }

    Cohort::new(patients, feature_names)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write the cohort back out in the two-file CSV layout read by
/// [`load_cohort`].
pub fn save_cohort(cohort: &Cohort, features_path: impl AsRef<Path>, endpoints_path: impl AsRef<Path>) -> Result<()> {
    let features_path = features_path.as_ref();
    let file = std::fs::File::create(features_path).map_err(|e| Error::io(features_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["patient_id".to_string()];
    header.extend(cohort.feature_names.iter().cloned());
    w.write_record(&header)?;
    for p in &cohort.patients {
        let mut rec = vec![p.id.clone()];
        rec.extend(p.features.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(features_path, e))?;

    // Standard endpoints first, then anything else found in the cohort.
    let mut binary: Vec<String> = vec![HPV.into()];
    let mut survival: Vec<String> = vec![OS.into(), DM.into()];
    for p in &cohort.patients {
        for (name, o) in &p.outcomes {
            let list = match o {
                Outcome::Binary(_) => &mut binary,
                Outcome::Survival(_) => &mut survival,
            };
            if !list.contains(name) {
                list.push(name.clone());
            }
        }
    }
    let endpoints_path = endpoints_path.as_ref();
    let file = std::fs::File::create(endpoints_path).map_err(|e| Error::io(endpoints_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["patient_id".to_string()];
    header.push(format!("{}_label", binary[0]));
    for s in &survival[..2] {
        header.push(format!("{s}_time"));
        header.push(format!("{s}_event"));
    }
    for b in &binary[1..] {
        header.push(format!("{b}_label"));
    }
    for s in &survival[2..] {
        header.push(format!("{s}_time"));
        header.push(format!("{s}_event"));
    }
    w.write_record(&header)?;
    for p in &cohort.patients {
        let mut rec = vec![p.id.clone()];
        let push_bin = |rec: &mut Vec<String>, name: &str| {
            rec.push(p.binary(name).map(|b| b.label().to_string()).unwrap_or_default());
        };
        let push_surv = |rec: &mut Vec<String>, name: &str| match p.survival(name) {
            Some(s) => {
                rec.push(fmt_f64(s.time_days));
                rec.push(u8::from(s.event).to_string());
            }
            None => {
                rec.push(String::new());
                rec.push(String::new());
            }
        };
        push_bin(&mut rec, &binary[0]);
        for s in &survival[..2] {
            push_surv(&mut rec, s);
        }
        for b in &binary[1..] {
            push_bin(&mut rec, b);
        }
        for s in &survival[2..] {
            push_surv(&mut rec, s);
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(endpoints_path, e))?;
    Ok(())
}

/// Result of [`binarize_survival`]: the retained cohort plus the ids removed
/// because they were censored before the threshold.
#[derive(Debug, Clone)]
pub struct Binarization {
    pub cohort: Cohort,
    pub excluded: Vec<String>,
}

/// Name of the binary endpoint derived from a survival endpoint.
pub fn binarized_name(endpoint: &str) -> String {
    format!("bin_{endpoint}")
}

/// Turn a survival endpoint into a binary one: an event at or before
/// `threshold_days` is label 1, follow-up past the threshold is label 0,
/// and patients censored at or before the threshold are dropped.
pub fn binarize_survival(cohort: &Cohort, endpoint: &str, threshold_days: f64) -> Result<Binarization> {
    if !(threshold_days > 0.0) || !threshold_days.is_finite() {
        return Err(Error::invalid(format!("threshold_days must be positive, got {threshold_days}")));
    }
    let target = binarized_name(endpoint);
    let mut kept = Vec::with_capacity(cohort.len());
    let mut excluded = Vec::new();
    for p in &cohort.patients {
        let s = p.survival(endpoint).ok_or_else(|| {
            Error::MissingData(format!("patient {} has no survival outcome {endpoint}", p.id))
        })?;
        let label = if s.time_days > threshold_days {
            0
        } else if s.event {
            1
        } else {
            excluded.push(p.id.clone());
            continue;
        };
        let mut p = p.clone();
        p.outcomes
            .insert(target.clone(), Outcome::Binary(BinaryOutcome::new(label)?));
        kept.push(p);
    }
    if !excluded.is_empty() {
        log::info!(
            "binarize {endpoint} at {threshold_days} days: excluded {} censored patients: {}",
            excluded.len(),
            excluded.join(",")
        );
    }
    Ok(Binarization {
        cohort: Cohort::from_parts_unchecked(kept, cohort.feature_names.clone()),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub task: Task,
    pub signal: Vec<f64>,
    pub censor_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `p` features where the first entries of `leading` carry the signal
    /// and the rest are noise.
    pub fn with_leading_signal(n: usize, p: usize, task: Task, leading: &[f64], censor_rate: f64, seed: u64) -> Self {
        let mut signal = vec![0.0; p];
        for (s, v) in signal.iter_mut().zip(leading) {
            *s = *v;
        }
        Self {
            n,
            p,
            task,
            signal,
            censor_rate,
            seed,
        }
    }
}

/// Synthetic cohort: i.i.d. standard normal features, a logistic label
/// (`hpv`) or exponential proportional-hazards times (`os`) driven by the
/// linear predictor `signal · x`.
pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<Cohort> {
    let SyntheticSpec {
        n,
        p,
        task,
        ref signal,
        censor_rate,
        seed,
    } = *spec;
    if n < 2 {
        return Err(Error::invalid("synthetic cohort needs n >= 2"));
    }
    if p < 1 {
        return Err(Error::invalid("synthetic cohort needs p >= 1"));
    }
    if signal.len() != p {
        return Err(Error::shape(format!("signal has length {}, expected {p}", signal.len())));
    }
    if !(0.0..1.0).contains(&censor_rate) {
        return Err(Error::invalid(format!("censor_rate must lie in [0, 1), got {censor_rate}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (p.max(2) - 1).to_string().len();
    let feature_names: Vec<String> = (0..p).map(|j| format!("f{j:0width$}")).collect();
    let id_width = n.to_string().len();

    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let eta: Vec<f64> = features
        .iter()
        .map(|x| x.iter().zip(signal).map(|(a, b)| a * b).sum())
        .collect();

    let outcomes: Vec<(String, Outcome)> = match task {
        Task::Classification => eta
            .iter()
            .map(|&e| {
                let prob = 1.0 / (1.0 + (-e).exp());
                let label = u8::from(rng.random::<f64>() < prob);
                (HPV.to_string(), Outcome::Binary(BinaryOutcome { label }))
            })
            .collect(),
        Task::Survival => {
            let hazards: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
            let censor_hazard = censoring_hazard(&hazards, censor_rate);
            hazards
                .iter()
                .map(|&h| {
                    let e1: f64 = rng.sample(Exp1);
                    let e2: f64 = rng.sample(Exp1);
                    let t = e1 / h;
                    let (time, event) = match censor_hazard {
                        Some(c) if e2 / c < t => (e2 / c, false),
                        _ => (t, true),
                    };
                    let s = SurvivalOutcome {
                        time_days: time * DAYS_PER_YEAR,
                        event,
                    };
                    (OS.to_string(), Outcome::Survival(s))
                })
                .collect()
        }
    };

    let patients = features
        .into_iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (features, (name, o)))| PatientRecord {
            id: format!("S{:0id_width$}", i + 1),
            features,
            outcomes: BTreeMap::from([(name, o)]),
        })
        .collect();
    Cohort::new(patients, feature_names)
}

/// Rate of an independent exponential censoring time such that the expected
/// censored fraction over the given event hazards equals `rate`.
fn censoring_hazard(hazards: &[f64], rate: f64) -> Option<f64> {
    if rate <= 0.0 {
        return None;
    }
    let frac = |c: f64| hazards.iter().map(|h| c / (c + h)).sum::<f64>() / hazards.len() as f64;
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid.exp()) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((0.5 * (lo + hi)).exp())
}
