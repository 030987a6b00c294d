//! Factorizations of verb × frame counts and externally computed sentence
//! features, all turned into regression inputs.

mod glove;
mod lda;
mod lfa;

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use glove::{glove_fit, glove_loss, glove_weight, nonzero_cells, GloveConfig, GloveParams};
pub use lda::{lda_fit, LdaConfig, LdaParams};
pub use lfa::{lfa_fit, lfa_fit_from, lfa_init, lfa_objective, LfaConfig, LfaParams};

use crate::data::{CountsTable, FeatureMatrix, RowKey, Vocab};
use crate::freq::{bnb_map, dc_map, BnbConfig};
use crate::{Error, Result};

/// Component counts evaluated by default.
pub const DEFAULT_K_GRID: [usize; 11] = [2, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorModel {
    Lda,
    Lfa,
    Glove,
}

impl FactorModel {
    pub fn name(self) -> &'static str {
        match self {
            FactorModel::Lda => "lda",
            FactorModel::Lfa => "lfa",
            FactorModel::Glove => "glove",
        }
    }
}

impl std::str::FromStr for FactorModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lda" => Ok(FactorModel::Lda),
            "lfa" => Ok(FactorModel::Lfa),
            "glove" => Ok(FactorModel::Glove),
            _ => Err(Error::Config(format!("unknown factor model `{s}` (lda, lfa, glove)"))),
        }
    }
}

/// Which view of a fitted factorization becomes the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssemblyMode {
    /// The model's reconstructed verb × frame table.
    #[default]
    Reconstruction,
    /// The verb factors themselves (θ for LDA, U for LFA).
    Latent,
}

pub enum FactorOutput<'a> {
    Lda(&'a LdaParams),
    Lfa(&'a LfaParams),
    Glove(&'a GloveParams),
}

fn named_columns(prefix: &str, frames: &Vocab) -> Vec<String> {
    frames.iter().map(|f| format!("{prefix}:{f}")).collect()
}

fn numbered_columns(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|t| format!("{prefix}{t}")).collect()
}

/// Feature matrix for a fitted model, optionally followed by the columns of
/// `base`. GloVe always contributes its verb vectors.
pub fn assemble_features(out: FactorOutput<'_>, base: Option<&FeatureMatrix>, mode: AssemblyMode) -> Result<FeatureMatrix> {
    let (verbs, columns, values): (&Vocab, Vec<String>, DMatrix<f64>) = match (out, mode) {
        (FactorOutput::Lda(p), AssemblyMode::Reconstruction) => (&p.verbs, named_columns("lda", &p.frames), p.reconstruction()),
        (FactorOutput::Lda(p), AssemblyMode::Latent) => (&p.verbs, numbered_columns("topic", p.k), p.theta.clone()),
        (FactorOutput::Lfa(p), AssemblyMode::Reconstruction) => (&p.verbs, named_columns("lfa", &p.frames), p.reconstruction()),
        (FactorOutput::Lfa(p), AssemblyMode::Latent) => (&p.verbs, numbered_columns("factor", p.u.ncols()), p.u.clone()),
        (FactorOutput::Glove(p), _) => (&p.verbs, numbered_columns("dim", p.w.ncols()), p.w.clone()),
    };
    let own = FeatureMatrix::for_verbs(verbs, columns, values)?;
    match base {
        None => Ok(own),
        Some(b) => {
            if b.keys != own.keys {
                return Err(Error::Domain("base features and model output cover different verbs".into()));
            }
            own.concat(b)
        }
    }
}

/// The direct representation each factorization is paired with: the raw
/// relative frequencies for LDA and the γ = 0.1 negative-binomial π for
/// LFA. GloVe has none.
pub fn default_base(model: FactorModel, counts: &CountsTable, bnb: &BnbConfig) -> Result<Option<FeatureMatrix>> {
    let cols = |prefix: &str| named_columns(prefix, &counts.frames);
    match model {
        FactorModel::Lda => Ok(Some(FeatureMatrix::for_verbs(&counts.verbs, cols("dc"), dc_map(counts, 0.0)?.theta)?)),
        FactorModel::Lfa => Ok(Some(FeatureMatrix::for_verbs(&counts.verbs, cols("bnb"), bnb_map(counts, 0.1, bnb)?.pi)?)),
        FactorModel::Glove => Ok(None),
    }
}

/// Reads sentence-level features: one row per `(verb, frame)` item,
/// `verb<TAB>frame<TAB>x1 … xd`. A first line whose values are not numbers
/// is taken as a header.
pub fn load_sentence_features(path: &Path) -> Result<FeatureMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    let mut columns: Option<Vec<String>> = None;
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::data(path, lineno, "expected verb, frame and at least one value"));
        }
        let parsed: std::result::Result<Vec<f64>, _> = fields[2..].iter().map(|x| x.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if keys.is_empty() && columns.is_none() => {
                columns = Some(fields[2..].iter().map(|s| s.trim().to_string()).collect());
                continue;
            }
            Err(_) => return Err(Error::data(path, lineno, "non-numeric feature value")),
        };
        let width = columns.get_or_insert_with(|| (0..row.len()).map(|t| format!("x{t}")).collect()).len();
        if row.len() != width {
            return Err(Error::data(path, lineno, format!("ragged row: {} values, expected {width}", row.len())));
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::data(path, lineno, format!("non-finite value in column {}", j + 1)));
        }
        let key = (fields[0].trim().to_string(), fields[1].trim().to_string());
        if !seen.insert(key.clone()) {
            return Err(Error::data(path, lineno, format!("duplicate item ({}, {})", key.0, key.1)));
        }
        keys.push(RowKey::Item(key.0, key.1));
        values.extend(row);
    }
    if keys.is_empty() {
        return Err(Error::data(path, 1, "no feature rows"));
    }
    let columns = columns.unwrap_or_default();
    let m = DMatrix::from_row_slice(keys.len(), columns.len(), &values);
    FeatureMatrix::new(keys, columns, m)
}
