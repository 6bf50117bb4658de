//! Model files (JSON) and observation files (CSV).
//!
//! A model file is a JSON object whose `type` field selects one of
//! `dph`, `rrdph_bernoulli`, `rrdph_geometric`, `iem`, `iem_regression` or
//! `reward_chain`. Matrices are arrays of rows.
//!
//! Observation files have the header `id,y1,y2` followed by optional covariate
//! columns. `y1` is the accumulated reward. `y2` is the number of unrewarded
//! steps: the absorption time for geometric models and absorption time minus
//! reward for Bernoulli models.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compare::{RewardChain, StateReward};
use crate::dph::DphModel;
use crate::error::Error;
use crate::iem::{iem_model, IemSpec, RewardMode};
use crate::rrdph::{expand_bernoulli, expand_geometric, ExpandedModel, JointObservation, RewardProbs};

/// Failures while reading or writing files.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{location}: {message}")]
    Format {
        path: String,
        location: Location,
        message: String,
    },
}

/// Line (and column, when known) within an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub column: Option<usize>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.column {
            Some(c) => write!(f, "line {} column {c}", self.line),
            None => write!(f, "line {}", self.line),
        }
    }
}

/// Where the covariates of a regression model come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateSource {
    /// One covariate per subject, drawn with replacement from these values.
    Pool(Vec<f64>),
    /// Explicit covariate rows, one per subject, without the intercept.
    Rows(Vec<Vec<f64>>),
}

/// The raw contents of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFile {
    Dph {
        pi: Vec<f64>,
        #[serde(rename = "T")]
        t: Vec<Vec<f64>>,
    },
    RrdphBernoulli {
        pi: Vec<f64>,
        #[serde(rename = "T")]
        t: Vec<Vec<f64>>,
        p: Vec<f64>,
    },
    RrdphGeometric {
        pi: Vec<f64>,
        #[serde(rename = "T")]
        t: Vec<Vec<f64>>,
        q: Vec<f64>,
    },
    Iem {
        d: usize,
        nu: f64,
        eta: f64,
        reward: RewardMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<Vec<f64>>,
    },
    IemRegression {
        d: usize,
        beta_nu: Vec<f64>,
        beta_eta: Vec<f64>,
        reward: RewardMode,
        covariates: CovariateSource,
    },
    RewardChain {
        pi: Vec<f64>,
        #[serde(rename = "T")]
        t: Vec<Vec<f64>>,
        rewards: Vec<StateReward>,
    },
}

/// A validated regression model; subjects are materialised by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub d: usize,
    pub beta_nu: Vec<f64>,
    pub beta_eta: Vec<f64>,
    pub reward: RewardMode,
    pub covariates: CovariateSource,
}

/// A validated model.
#[derive(Debug, Clone)]
pub enum Model {
    Dph(DphModel),
    Expanded(ExpandedModel),
    Regression(RegressionModel),
    RewardChain(RewardChain),
}

impl ModelFile {
    /// Checks every constraint and builds the model.
    pub fn validate(&self) -> Result<Model, Error> {
        match self {
            ModelFile::Dph { pi, t } => Ok(Model::Dph(DphModel::from_rows(pi, t)?)),
            ModelFile::RrdphBernoulli { pi, t, p } => Ok(Model::Expanded(expand_bernoulli(
                &DphModel::from_rows(pi, t)?,
                &RewardProbs(p.clone()),
            )?)),
            ModelFile::RrdphGeometric { pi, t, q } => Ok(Model::Expanded(expand_geometric(
                &DphModel::from_rows(pi, t)?,
                &RewardProbs(q.clone()),
            )?)),
            ModelFile::Iem {
                d,
                nu,
                eta,
                reward,
                start,
            } => {
                let spec = IemSpec {
                    d: *d,
                    nu: *nu,
                    eta: *eta,
                    q: reward.probs(*d)?,
                    start: start.clone(),
                };
                Ok(Model::Expanded(iem_model(&spec)?))
            }
            ModelFile::IemRegression {
                d,
                beta_nu,
                beta_eta,
                reward,
                covariates,
            } => {
                let width = match covariates {
                    CovariateSource::Pool(pool) => {
                        if pool.is_empty() || pool.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Invalid(
                                "covariates.pool must be a nonempty list of finite numbers".into(),
                            ));
                        }
                        1
                    }
                    CovariateSource::Rows(rows) => {
                        if rows.is_empty() {
                            return Err(Error::Invalid("covariates.rows is empty".into()));
                        }
                        if rows.iter().flatten().any(|v| !v.is_finite()) {
                            return Err(Error::Invalid("covariates.rows has non-finite entries".into()));
                        }
                        crate::iem::RegressionIemSpec::design_from_covariates(rows)?.ncols() - 1
                    }
                };
                for (what, b) in [("beta_nu", beta_nu), ("beta_eta", beta_eta)] {
                    if b.len() != width + 1 {
                        return Err(Error::DimensionMismatch {
                            what,
                            expected: width + 1,
                            found: b.len(),
                        });
                    }
                }
                // checks d and the reward vector
                expand_geometric(&crate::iem::iem_base(0.5, 0.5, *d, None)?, &reward.probs(*d)?)?;
                Ok(Model::Regression(RegressionModel {
                    d: *d,
                    beta_nu: beta_nu.clone(),
                    beta_eta: beta_eta.clone(),
                    reward: reward.clone(),
                    covariates: covariates.clone(),
                }))
            }
            ModelFile::RewardChain { pi, t, rewards } => Ok(Model::RewardChain(RewardChain::new(
                DphModel::from_rows(pi, t)?,
                rewards.clone(),
            )?)),
        }
    }
}

/// JSON key most closely associated with a validation error.
fn error_key(e: &Error) -> Option<String> {
    let head = |s: &str| s.split(['[', ' ', '.']).next().unwrap_or(s).to_string();
    match e {
        Error::NegativeEntry { what, .. } | Error::EntryExceedsOne { what, .. } => Some(head(what)),
        Error::RowSumExceedsOne { .. } | Error::AbsorptionNotGuaranteed => Some("T".into()),
        Error::InitialNotNormalized { .. } => Some("pi".into()),
        Error::ZeroRewardProbability { .. } => Some("q".into()),
        Error::InvalidParameter { name, .. } => Some(head(name)),
        Error::DimensionMismatch { what, .. } => Some(head(what)),
        Error::DimensionTooSmall(_) => Some("d".into()),
        _ => None,
    }
}

/// First line on which `"key"` appears as an object key.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn read_text(path: &Path) -> Result<String, IoError> {
    let mut text = String::new();
    let mut file = std::fs::File::open(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.read_to_string(&mut text).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text)
}

/// Parses and validates model JSON; `origin` labels error messages.
pub fn parse_model(text: &str, origin: &str) -> Result<(ModelFile, Model), IoError> {
    let raw: ModelFile = serde_json::from_str(text).map_err(|e| IoError::Format {
        path: origin.to_string(),
        location: Location {
            line: e.line(),
            column: Some(e.column()),
        },
        message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
    })?;
    let model = raw.validate().map_err(|e| {
        let line = error_key(&e).and_then(|k| key_line(text, &k)).unwrap_or(1);
        IoError::Format {
            path: origin.to_string(),
            location: Location { line, column: None },
            message: e.to_string(),
        }
    })?;
    Ok((raw, model))
}

/// Reads and validates a model file.
pub fn read_model(path: &Path) -> Result<(ModelFile, Model), IoError> {
    parse_model(&read_text(path)?, &path.display().to_string())
}

/// Observations with their identifiers and selected covariates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub observations: Vec<JointObservation>,
    pub covariate_names: Vec<String>,
    /// One row per observation, in the order of `covariate_names`.
    pub covariates: Vec<Vec<f64>>,
}

/// Parses observation CSV, keeping the named covariate columns.
pub fn parse_dataset(input: impl Read, origin: &str, covariates: &[String]) -> Result<Dataset, IoError> {
    let format = |line: usize, message: String| IoError::Format {
        path: origin.to_string(),
        location: Location { line, column: None },
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| format(1, format!("cannot read header: {e}")))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (id, y1, y2) = match (column("id"), column("y1"), column("y2")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(format(1, "header must contain the columns id, y1 and y2".into())),
    };
    let cov_idx = covariates
        .iter()
        .map(|name| column(name).ok_or_else(|| format(1, format!("no covariate column named '{name}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = Dataset {
        covariate_names: covariates.to_vec(),
        ..Dataset::default()
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            format(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let count = |idx: usize, name: &str| -> Result<usize, IoError> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<usize>()
                .map_err(|_| format(line, format!("column {name}: '{raw}' is not a nonnegative integer")))
        };
        let obs = JointObservation::new(count(y1, "y1")?, count(y2, "y2")?);
        let row = cov_idx
            .iter()
            .zip(covariates)
            .map(|(&idx, name)| {
                let raw = record.get(idx).unwrap_or("");
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(format(line, format!("column {name}: '{raw}' is not a finite number"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        data.ids.push(record.get(id).unwrap_or("").to_string());
        data.observations.push(obs);
        data.covariates.push(row);
    }
    if data.observations.is_empty() {
        return Err(format(1, "no observations".into()));
    }
    Ok(data)
}

/// Reads an observation file.
pub fn read_dataset(path: &Path, covariates: &[String]) -> Result<Dataset, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(std::io::BufReader::new(file), &path.display().to_string(), covariates)
}

/// Writes observations as `id,y1,y2[,x1..]` with ids `1..=n`.
pub fn write_dataset(
    out: impl Write,
    observations: &[JointObservation],
    covariates: Option<&[Vec<f64>]>,
) -> csv::Result<()> {
    let width = covariates.and_then(|c| c.first()).map(|r| r.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "y1".into(), "y2".into()];
    header.extend((1..=width).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (i, y) in observations.iter().enumerate() {
        let mut row = vec![(i + 1).to_string(), y.y1.to_string(), y.y2.to_string()];
        if let Some(c) = covariates {
            row.extend(c[i].iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Model, IoError> {
        parse_model(text, "model.json").map(|(_, m)| m)
    }

    #[test]
    fn reads_each_model_type() {
        let cases = [
            r#"{"type": "dph", "pi": [1, 0], "T": [[0, 0.5], [0, 0]]}"#,
            r#"{"type": "rrdph_bernoulli", "pi": [1], "T": [[0.5]], "p": [0.3]}"#,
            r#"{"type": "rrdph_geometric", "pi": [1], "T": [[0.5]], "q": [0.3]}"#,
            r#"{"type": "iem", "d": 3, "nu": 0.3, "eta": 0.7, "reward": {"mode": "free", "q": [0.5, 0.5, 0.5]}}"#,
            r#"{"type": "iem", "d": 4, "nu": 0.3, "eta": 0.7, "reward": {"mode": "linear", "b0": -3, "b1": 0.8}}"#,
            r#"{"type": "iem_regression", "d": 4, "beta_nu": [-0.1, 0.2], "beta_eta": [0.1, -0.25],
                "reward": {"mode": "linear", "b0": -3.064788, "b1": 0.8675632},
                "covariates": {"pool": [-10, 0, 5, 20]}}"#,
            r#"{"type": "reward_chain", "pi": [1, 0, 0], "T": [[0, 0.5, 0.5], [0, 0, 0], [0, 0, 0]],
                "rewards": [{"fixed": 0}, {"fixed": 1}, {"geometric": 0.25}]}"#,
        ];
        for text in cases {
            parse(text).unwrap_or_else(|e| panic!("{text}: {e}"));
        }
        assert!(matches!(parse(cases[3]).unwrap(), Model::Expanded(_)));
        assert!(matches!(parse(cases[5]).unwrap(), Model::Regression(_)));
        assert!(matches!(parse(cases[6]).unwrap(), Model::RewardChain(_)));
    }

    #[test]
    fn zero_geometric_reward_names_field_and_line() {
        let text = "{\n  \"type\": \"rrdph_geometric\",\n  \"pi\": [1, 0],\n  \"T\": [[0, 0.5], [0, 0]],\n  \"q\": [0.5, 0]\n}";
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("model.json:line 5"), "{err}");
        assert!(err.contains("q[2]"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse("{\n  \"type\": \"dph\",\n  \"pi\": [1,\n}").unwrap_err();
        match err {
            IoError::Format { location, .. } => assert_eq!(location.line, 4),
            other => panic!("{other}"),
        }
        let err = parse(r#"{"type": "dph", "pi": [1], "T": [[0.5]], "extra": 1}"#).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
        let err = parse(r#"{"type": "iem", "d": 1, "nu": 0.3, "eta": 0.7, "reward": {"mode": "free", "q": [0.5]}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("2 severity levels"), "{err}");
    }

    #[test]
    fn regression_coefficient_length_checked() {
        let text = r#"{"type": "iem_regression", "d": 3, "beta_nu": [0.1], "beta_eta": [0.1, 0.2],
            "reward": {"mode": "free", "q": [0.5, 0.5, 0.5]}, "covariates": {"pool": [1, 2]}}"#;
        assert!(parse(text).unwrap_err().to_string().contains("beta_nu"));
    }

    #[test]
    fn dataset_round_trip() {
        let obs = vec![JointObservation::new(2, 0), JointObservation::new(0, 7)];
        let cov = vec![vec![1.5], vec![-10.0]];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &obs, Some(&cov)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,y1,y2,x1\n1,2,0,1.5\n"));
        let back = parse_dataset(text.as_bytes(), "d.csv", &["x1".into()]).unwrap();
        assert_eq!(back.observations, obs);
        assert_eq!(back.covariates, cov);
        assert_eq!(back.ids, vec!["1", "2"]);
    }

    #[test]
    fn dataset_errors_are_line_numbered() {
        let err = parse_dataset("id,y1,y2\n1,2,0\n2,-1,3\n".as_bytes(), "d.csv", &[]).unwrap_err();
        assert!(err.to_string().starts_with("d.csv:line 3"), "{err}");
        assert!(err.to_string().contains("y1"));
        let err = parse_dataset("id,y1\n1,2\n".as_bytes(), "d.csv", &[]).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let err = parse_dataset("id,y1,y2\n1,2,0\n".as_bytes(), "d.csv", &["age".into()]).unwrap_err();
        assert!(err.to_string().contains("age"));
    }
}
