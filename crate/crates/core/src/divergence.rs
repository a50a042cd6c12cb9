//! Frequency comparison between a baseline corpus (a) and a comparison
//! corpus (b): occurrences per million, relative increase and a 2×2
//! chi-square test per lemma+POS key.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{FrequencyTable, LemmaKey, Upos};
use crate::exec::Execution;
use crate::stats::chi2_sf;
use crate::{Error, Result};

/// Occurrences per million tokens.
pub fn opm(count: u64, total: u64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Domain("opm is undefined for N = 0".into()));
    }
    if count > total {
        return Err(Error::Domain(format!("count {count} exceeds N = {total}")));
    }
    Ok(count as f64 / total as f64 * 1e6)
}

/// Relative change of `opm_b` over the baseline `opm_a`, in percent.
pub fn increase_pct(opm_a: f64, opm_b: f64) -> f64 {
    (opm_b - opm_a) / opm_a * 100.0
}

/// Pearson chi-square for the table `[[a, b], [c, d]]`, df = 1.
pub fn chi2_2x2(a: u64, b: u64, c: u64, d: u64, yates: bool) -> Result<(f64, f64)> {
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let n = a + b + c + d;
    let marginals = [a + b, c + d, a + c, b + d];
    if n == 0.0 || marginals.contains(&0.0) {
        return Err(Error::Domain(
            "chi-square undefined: a row or column sums to zero".into(),
        ));
    }
    let mut diff = (a * d - b * c).abs();
    if yates {
        diff = (diff - n / 2.0).max(0.0);
    }
    let denom: f64 = marginals.iter().product();
    let statistic = n * diff * diff / denom;
    Ok((statistic, chi2_sf(statistic, 1)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareConfig {
    pub min_count_a: u64,
    pub alpha: f64,
    pub yates: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            min_count_a: 1,
            alpha: 0.05,
            yates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub key: LemmaKey,
    pub count_a: u64,
    pub count_b: u64,
    pub opm_a: f64,
    pub opm_b: f64,
    pub increase_pct: f64,
    pub chi2: f64,
    pub p: f64,
    pub significant: bool,
    /// Lower-cased surface forms seen for the key in either corpus.
    #[serde(skip)]
    pub forms: BTreeSet<String>,
}

impl DivergenceRow {
    pub fn significantly_increased(&self) -> bool {
        self.significant && self.increase_pct > 0.0
    }
}

/// A key too rare in the baseline to carry an increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelRow {
    pub key: LemmaKey,
    pub count_a: u64,
    pub count_b: u64,
    pub opm_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
    pub novel: Vec<NovelRow>,
    pub n_a: u64,
    pub n_b: u64,
    pub alpha: f64,
}

impl DivergenceReport {
    pub fn row(&self, key: &LemmaKey) -> Option<&DivergenceRow> {
        self.rows.iter().find(|r| &r.key == key)
    }
}

fn sort_rows(rows: &mut [DivergenceRow]) {
    rows.sort_by(|x, y| {
        y.increase_pct
            .total_cmp(&x.increase_pct)
            .then_with(|| x.key.cmp(&y.key))
    });
}

pub fn compare(a: &FrequencyTable, b: &FrequencyTable, config: &CompareConfig) -> Result<DivergenceReport> {
    compare_with(a, b, config, Execution::default())
}

pub fn compare_with(
    a: &FrequencyTable,
    b: &FrequencyTable,
    config: &CompareConfig,
    exec: Execution,
) -> Result<DivergenceReport> {
    if a.total == 0 || b.total == 0 {
        return Err(Error::validation(format!(
            "both corpora need tokens (N_a = {}, N_b = {})",
            a.total, b.total
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("both frequency tables must be non-empty"));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", config.alpha)));
    }

    let keys: Vec<&LemmaKey> = a
        .counts
        .keys()
        .chain(b.counts.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let threshold = config.min_count_a.max(1);

    enum Entry {
        Row(DivergenceRow),
        Novel(NovelRow),
    }

    let entries = exec.map(&keys, |key| -> Result<Entry> {
        let (ca, cb) = (a.count(key), b.count(key));
        let opm_b = opm(cb, b.total)?;
        if ca < threshold {
            return Ok(Entry::Novel(NovelRow {
                key: (*key).clone(),
                count_a: ca,
                count_b: cb,
                opm_b,
            }));
        }
        let opm_a = opm(ca, a.total)?;
        let (chi2, p) = chi2_2x2(ca, a.total - ca, cb, b.total - cb, config.yates).unwrap_or((0.0, 1.0));
        let mut forms = BTreeSet::new();
        for t in [a, b] {
            if let Some(f) = t.forms.get(*key) {
                forms.extend(f.iter().cloned());
            }
        }
        Ok(Entry::Row(DivergenceRow {
            key: (*key).clone(),
            count_a: ca,
            count_b: cb,
            opm_a,
            opm_b,
            increase_pct: increase_pct(opm_a, opm_b),
            chi2,
            p,
            significant: p < config.alpha,
            forms,
        }))
    });

    let mut rows = Vec::new();
    let mut novel = Vec::new();
    for e in entries {
        match e? {
            Entry::Row(r) => rows.push(r),
            Entry::Novel(n) => novel.push(n),
        }
    }
    sort_rows(&mut rows);
    novel.sort_by(|x, y| y.count_b.cmp(&x.count_b).then_with(|| x.key.cmp(&y.key)));
    Ok(DivergenceReport {
        rows,
        novel,
        n_a: a.total,
        n_b: b.total,
        alpha: config.alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapResult {
    pub matched: Vec<LemmaKey>,
    pub matched_forms: Vec<String>,
    pub matched_count: usize,
    pub reference_count: usize,
}

/// Counts reference entries that name a significantly increased key, either
/// by lemma or by one of the surface forms recorded for it.
pub fn overlap_with_reference(report: &DivergenceReport, reference: &[String]) -> OverlapResult {
    let increased: Vec<&DivergenceRow> = report.rows.iter().filter(|r| r.significantly_increased()).collect();
    let mut matched = BTreeSet::new();
    let mut matched_forms = Vec::new();
    for entry in reference {
        let needle = entry.trim().to_lowercase();
        let hits: Vec<&LemmaKey> = increased
            .iter()
            .filter(|r| r.key.lemma == needle || r.forms.contains(&needle))
            .map(|r| &r.key)
            .collect();
        if !hits.is_empty() {
            matched_forms.push(entry.clone());
            matched.extend(hits.into_iter().cloned());
        }
    }
    OverlapResult {
        matched: matched.into_iter().collect(),
        matched_count: matched_forms.len(),
        matched_forms,
        reference_count: reference.len(),
    }
}

/// Of the keys significantly increased in `ab`, how many are also
/// significantly increased in `ac`, and how many are not.
pub fn cross_overlap(ab: &DivergenceReport, ac: &DivergenceReport) -> (usize, usize) {
    let other: BTreeSet<&LemmaKey> = ac
        .rows
        .iter()
        .filter(|r| r.significantly_increased())
        .map(|r| &r.key)
        .collect();
    let mut both = 0;
    let mut only = 0;
    for r in ab.rows.iter().filter(|r| r.significantly_increased()) {
        if other.contains(&r.key) {
            both += 1;
        } else {
            only += 1;
        }
    }
    (both, only)
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportCsvRow {
    lemma: String,
    upos: Upos,
    count_a: u64,
    count_b: u64,
    opm_a: String,
    opm_b: String,
    increase_pct: String,
    chi2: String,
    p: String,
    significant: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct NovelCsvRow {
    lemma: String,
    upos: Upos,
    count_b: u64,
    opm_b: String,
}

pub fn write_report_csv<W: Write>(report: &DivergenceReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.rows {
        w.serialize(ReportCsvRow {
            lemma: r.key.lemma.clone(),
            upos: r.key.upos,
            count_a: r.count_a,
            count_b: r.count_b,
            opm_a: format!("{:.6}", r.opm_a),
            opm_b: format!("{:.6}", r.opm_b),
            increase_pct: format!("{:.6}", r.increase_pct),
            chi2: format!("{:.6}", r.chi2),
            p: format!("{:.6e}", r.p),
            significant: r.significant,
        })?;
    }
    if report.rows.is_empty() {
        w.write_record([
            "lemma",
            "upos",
            "count_a",
            "count_b",
            "opm_a",
            "opm_b",
            "increase_pct",
            "chi2",
            "p",
            "significant",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_novel_csv<W: Write>(report: &DivergenceReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.novel {
        w.serialize(NovelCsvRow {
            lemma: r.key.lemma.clone(),
            upos: r.key.upos,
            count_b: r.count_b,
            opm_b: format!("{:.6}", r.opm_b),
        })?;
    }
    if report.novel.is_empty() {
        w.write_record(["lemma", "upos", "count_b", "opm_b"])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a report CSV back. Surface forms and the novel annex are not part
/// of the CSV and come back empty; `n_a`, `n_b` are recovered from the rows
/// when possible.
pub fn read_report_csv<R: Read>(input: R, alpha: f64) -> Result<DivergenceReport> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    let float = |s: &str, line: usize| -> Result<f64> {
        s.parse::<f64>().map_err(|e| Error::parse(line, format!("{s:?}: {e}")))
    };
    for (i, rec) in rdr.deserialize::<ReportCsvRow>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        rows.push(DivergenceRow {
            key: LemmaKey::new(rec.lemma, rec.upos),
            count_a: rec.count_a,
            count_b: rec.count_b,
            opm_a: float(&rec.opm_a, line)?,
            opm_b: float(&rec.opm_b, line)?,
            increase_pct: float(&rec.increase_pct, line)?,
            chi2: float(&rec.chi2, line)?,
            p: float(&rec.p, line)?,
            significant: rec.significant,
            forms: BTreeSet::new(),
        });
    }
    let recover = |count: fn(&DivergenceRow) -> (u64, f64)| {
        rows.iter()
            .map(count)
            .find(|(c, o)| *c > 0 && *o > 0.0)
            .map(|(c, o)| (c as f64 * 1e6 / o).round() as u64)
            .unwrap_or(0)
    };
    let n_a = recover(|r| (r.count_a, r.opm_a));
    let n_b = recover(|r| (r.count_b, r.opm_b));
    sort_rows(&mut rows);
    Ok(DivergenceReport {
        rows,
        novel: Vec::new(),
        n_a,
        n_b,
        alpha,
    })
}
