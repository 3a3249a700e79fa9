//! Ramsey outcome probabilities and synthetic binomial measurement records.

use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{check_time, Error, Result};
use crate::noise::NoiseModel;
use crate::rng::rng_from_seed;

/// Probability of reading `outcome` (0 or 1) in the x basis after free
/// evolution for time `t`: `½(1 + (-1)^m e^{-Γ(t)})`.
pub fn ramsey_prob(model: &NoiseModel, t: f64, outcome: u8) -> Result<f64> {
    check_time(t)?;
    let p1 = phase_flip_prob_unchecked(model, t);
    match outcome {
        0 => Ok(1.0 - p1),
        1 => Ok(p1),
        _ => Err(Error::InvalidParameter(format!("outcome must be 0 or 1, got {outcome}"))),
    }
}

/// Phase-flip probability `½(1 - e^{-Γ(t)})`.
pub fn phase_flip_prob(model: &NoiseModel, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(phase_flip_prob_unchecked(model, t))
}

pub(crate) fn phase_flip_prob_unchecked(model: &NoiseModel, t: f64) -> f64 {
    -0.5 * (-model.attenuation_unchecked(t)).exp_m1()
}

/// Measurement times with the number of shots taken at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, u64)>", into = "Vec<(f64, u64)>")]
pub struct Schedule {
    entries: Vec<(f64, u64)>,
}

impl TryFrom<Vec<(f64, u64)>> for Schedule {
    type Error = Error;

    fn try_from(entries: Vec<(f64, u64)>) -> Result<Self> {
        Schedule::new(entries)
    }
}

impl From<Schedule> for Vec<(f64, u64)> {
    fn from(s: Schedule) -> Self {
        s.entries
    }
}

impl Schedule {
    /// Times must be finite, strictly positive and strictly increasing; every
    /// shot count positive.
    pub fn new(entries: Vec<(f64, u64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("schedule is empty".into()));
        }
        let mut prev = 0.0;
        for (i, &(t, n)) in entries.iter().enumerate() {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::domain("schedule time", t));
            }
            if i > 0 && t <= prev {
                return Err(Error::InvalidParameter(format!(
                    "schedule times must be strictly increasing ({prev} then {t})"
                )));
            }
            if n == 0 {
                return Err(Error::InvalidParameter(format!("zero shots at t = {t}")));
            }
            prev = t;
        }
        Ok(Schedule { entries })
    }

    /// Splits `total` shots as evenly as possible over `times`; the remainder
    /// goes one shot each to the earliest times.
    pub fn equal_split(times: &[f64], total: u64) -> Result<Self> {
        let k = times.len() as u64;
        if k == 0 {
            return Err(Error::InvalidParameter("schedule is empty".into()));
        }
        if total < k {
            return Err(Error::InvalidParameter(format!(
                "{total} shots cannot cover {k} times"
            )));
        }
        let base = total / k;
        let rem = total % k;
        Schedule::new(
            times
                .iter()
                .enumerate()
                .map(|(i, &t)| (t, base + u64::from((i as u64) < rem)))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(f64, u64)] {
        &self.entries
    }

    pub fn times(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_shots(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Same times with every shot count multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Result<Self> {
        Schedule::new(self.entries.iter().map(|&(t, n)| (t, n * factor)).collect())
    }
}

/// One measurement block: `shots` repetitions at time `t`, of which `count0`
/// gave outcome 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub shots: u64,
    pub count0: u64,
}

impl Record {
    pub fn new(t: f64, shots: u64, count0: u64) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::domain("record time", t));
        }
        if shots == 0 {
            return Err(Error::InvalidParameter(format!("record at t = {t} has no shots")));
        }
        if count0 > shots {
            return Err(Error::InvalidParameter(format!(
                "count0 = {count0} exceeds shots = {shots} at t = {t}"
            )));
        }
        Ok(Record { t, shots, count0 })
    }

    pub fn count1(&self) -> u64 {
        self.shots - self.count0
    }

    /// Relative frequency of outcome 0.
    pub fn freq0(&self) -> f64 {
        self.count0 as f64 / self.shots as f64
    }
}

/// Measured counts plus provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    pub records: Vec<Record>,
    pub seed: Option<u64>,
    pub model_truth: Option<NoiseModel>,
}

/// Metadata stored next to the CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub seed: Option<u64>,
    pub model_truth: Option<NoiseModel>,
}

pub const CSV_HEADER: [&str; 3] = ["t", "shots", "count0"];

impl DataSet {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let ds = DataSet { records, seed: None, model_truth: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            Record::new(r.t, r.shots, r.count0)?;
        }
        if let Some(m) = &self.model_truth {
            m.validate()?;
        }
        Ok(())
    }

    pub fn total_shots(&self) -> u64 {
        self.records.iter().map(|r| r.shots).sum()
    }

    /// Number of distinct measurement times.
    pub fn distinct_times(&self) -> usize {
        let mut ts: Vec<f64> = self.records.iter().map(|r| r.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts.len()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([r.t.to_string(), r.shots.to_string(), r.count0.to_string()])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses the `t,shots,count0` table. Provenance fields are left empty.
    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(s.as_bytes());
        let header = rdr.headers().map_err(csv_err)?;
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Parse(format!(
                "expected header {:?}, got {:?}",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for row in rdr.deserialize::<Record>() {
            let r = row.map_err(csv_err)?;
            records.push(Record::new(r.t, r.shots, r.count0)?);
        }
        Ok(DataSet { records, seed: None, model_truth: None })
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar { seed: self.seed, model_truth: self.model_truth }
    }

    /// Writes `path` (CSV) and the sidecar next to it; returns the sidecar path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        fs::write(path, self.to_csv_string()?)?;
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(side)
    }

    /// Reads a CSV file and, if present, its sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let mut ds = DataSet::from_csv_str(&fs::read_to_string(path)?)?;
        let side = sidecar_path(path);
        if side.exists() {
            let sc: Sidecar = serde_json::from_str(&fs::read_to_string(side)?)?;
            ds.seed = sc.seed;
            ds.model_truth = sc.model_truth;
        }
        Ok(ds)
    }
}

/// `data.csv` → `data.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Draws binomial counts for every schedule entry. Deterministic in `seed`.
pub fn sample_dataset(model: &NoiseModel, schedule: &Schedule, seed: u64) -> DataSet {
    let mut rng = rng_from_seed(seed);
    let records = schedule
        .entries()
        .iter()
        .map(|&(t, shots)| {
            let p0 = 1.0 - phase_flip_prob_unchecked(model, t);
            Record { t, shots, count0: sample_binomial(shots, p0, &mut rng) }
        })
        .collect();
    DataSet { records, seed: Some(seed), model_truth: Some(*model) }
}

pub(crate) fn sample_binomial(n: u64, p: f64, rng: &mut crate::rng::Rng) -> u64 {
    let p = p.clamp(0.0, 1.0);
    // p is clamped into [0, 1], which Binomial::new always accepts.
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}
