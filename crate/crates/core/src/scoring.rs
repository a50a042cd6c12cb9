//! LHF-Score tables and sequence scoring.
//!
//! A key's weight is its percentage increase divided by 1000; a sequence
//! scores the sum of its tokens' weights, and keys outside the table score 0.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{LemmaKey, TaggedToken, Upos};
use crate::divergence::DivergenceReport;
use crate::{Error, Result};

pub const WEIGHT_DIVISOR: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableConfig {
    pub only_significant: bool,
    pub only_positive: bool,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            only_significant: true,
            only_positive: true,
        }
    }
}

impl TableConfig {
    /// Every key of the report, including non-significant and negative ones.
    pub fn permissive() -> Self {
        TableConfig {
            only_significant: false,
            only_positive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub weights: BTreeMap<LemmaKey, f64>,
    pub source_report_id: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableBuild {
    pub table: ScoreTable,
    pub warning: Option<String>,
}

pub fn build_score_table(report: &DivergenceReport, report_id: &str, config: TableConfig) -> TableBuild {
    let weights: BTreeMap<LemmaKey, f64> = report
        .rows
        .iter()
        .filter(|r| !config.only_significant || r.significant)
        .filter(|r| !config.only_positive || r.increase_pct > 0.0)
        .map(|r| (r.key.clone(), r.increase_pct / WEIGHT_DIVISOR))
        .collect();

    let mut hasher = Sha256::new();
    hasher.update(report_id.as_bytes());
    hasher.update([config.only_significant as u8, config.only_positive as u8]);
    hasher.update(report.alpha.to_le_bytes());
    let fingerprint = hex::encode(hasher.finalize());

    let warning = weights
        .is_empty()
        .then(|| format!("score table built from {report_id:?} is empty; every sequence will score 0"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    TableBuild {
        table: ScoreTable {
            weights,
            source_report_id: report_id.to_string(),
            fingerprint,
        },
        warning,
    }
}

impl ScoreTable {
    pub fn from_weights(weights: impl IntoIterator<Item = (LemmaKey, f64)>) -> Self {
        ScoreTable {
            weights: weights.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn score_token(&self, key: &LemmaKey) -> f64 {
        self.weights.get(key).copied().unwrap_or(0.0)
    }

    pub fn score_sequence(&self, tokens: &[TaggedToken]) -> SequenceScore {
        let per_token: Vec<(LemmaKey, f64)> = tokens
            .iter()
            .map(|t| {
                let k = t.key();
                let s = self.score_token(&k);
                (k, s)
            })
            .collect();
        SequenceScore {
            total: per_token.iter().map(|(_, s)| s).sum(),
            per_token,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub total: f64,
    pub per_token: Vec<(LemmaKey, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightRow {
    lemma: String,
    upos: Upos,
    weight: String,
}

/// `lemma,upos,weight` with weights rounded to four decimals.
pub fn write_table_csv<W: Write>(table: &ScoreTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if table.weights.is_empty() {
        w.write_record(["lemma", "upos", "weight"])?;
    }
    for (k, v) in &table.weights {
        w.serialize(WeightRow {
            lemma: k.lemma.clone(),
            upos: k.upos,
            weight: format!("{v:.4}"),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table_csv<R: Read>(input: R, source: &str) -> Result<ScoreTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut weights = BTreeMap::new();
    for (i, row) in rdr.deserialize::<WeightRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(i + 2, e.to_string()))?;
        let weight: f64 = row
            .weight
            .parse()
            .map_err(|e| Error::parse(i + 2, format!("weight {:?}: {e}", row.weight)))?;
        weights.insert(LemmaKey::new(row.lemma, row.upos), weight);
    }
    Ok(ScoreTable {
        weights,
        source_report_id: source.to_string(),
        fingerprint: String::new(),
    })
}
