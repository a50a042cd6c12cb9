//! Variant filtering and selection of length-matched low/high score pairs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{read_tagged_records, word_count, TaggedRecord, TaggedToken};
use crate::exec::Execution;
use crate::scoring::ScoreTable;
use crate::{Error, Result};

/// Overuse words collected from the literature; the default banned list.
pub const LITERATURE_OVERUSE_WORDS: [&str; 32] = [
    "advancements",
    "aligns",
    "boasts",
    "commendable",
    "comprehending",
    "crucial",
    "delve",
    "delved",
    "delves",
    "delving",
    "emphasizing",
    "garnered",
    "groundbreaking",
    "intricacies",
    "intricate",
    "invaluable",
    "meticulous",
    "meticulously",
    "notable",
    "noteworthy",
    "pivotal",
    "potential",
    "realm",
    "showcases",
    "showcasing",
    "significant",
    "strategically",
    "surpasses",
    "surpassing",
    "underscore",
    "underscores",
    "underscoring",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub abstract_id: String,
    pub variant_id: String,
    pub text: String,
    pub tokens: Vec<TaggedToken>,
    pub word_count: usize,
    pub lhf_score: f64,
}

impl Variant {
    pub fn new(
        abstract_id: impl Into<String>,
        variant_id: impl Into<String>,
        text: impl Into<String>,
        tokens: Vec<TaggedToken>,
        table: &ScoreTable,
    ) -> Self {
        let text = text.into();
        let lhf_score = table.score_sequence(&tokens).total;
        Variant {
            abstract_id: abstract_id.into(),
            variant_id: variant_id.into(),
            word_count: word_count(&text),
            text,
            tokens,
            lhf_score,
        }
    }

    pub fn from_record(record: TaggedRecord, table: &ScoreTable) -> Result<Self> {
        let abstract_id = record
            .abstract_id
            .clone()
            .ok_or_else(|| Error::validation(format!("variant {:?} has no abstract_id", record.doc_id)))?;
        let variant_id = record.variant_id.clone().unwrap_or_else(|| record.doc_id.clone());
        let text = record
            .text
            .clone()
            .ok_or_else(|| Error::validation(format!("variant {:?} has no text", record.doc_id)))?;
        let doc = record.into_document()?;
        Ok(Variant::new(abstract_id, variant_id, text, doc.tokens, table))
    }
}

/// Reads tagged variant records (`abstract_id`, `variant_id`, `text` and
/// `tokens` present) and scores them against `table`.
pub fn read_variants<R: BufRead>(input: R, table: &ScoreTable) -> Result<Vec<Variant>> {
    read_tagged_records(input)?
        .into_iter()
        .map(|r| Variant::from_record(r, table))
        .collect()
}

/// Numeric-aware id order: ids that both parse as integers compare
/// numerically, everything else lexicographically.
pub fn cmp_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub min_words: usize,
    pub max_words: usize,
    pub banned: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_words: 90,
            max_words: 110,
            banned: LITERATURE_OVERUSE_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn filter_variants(variants: Vec<Variant>, config: &FilterConfig) -> Vec<Variant> {
    let banned: BTreeSet<String> = config.banned.iter().map(|w| w.to_lowercase()).collect();
    variants
        .into_iter()
        .filter(|v| v.word_count >= config.min_words && v.word_count <= config.max_words)
        .filter(|v| !v.tokens.iter().any(|t| banned.contains(&t.form.to_lowercase())))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemPair {
    pub abstract_id: String,
    pub low: Variant,
    pub high: Variant,
    pub delta: f64,
    pub length_diff: usize,
}

impl ItemPair {
    fn new(low: &Variant, high: &Variant) -> Self {
        ItemPair {
            abstract_id: low.abstract_id.clone(),
            delta: high.lhf_score - low.lhf_score,
            length_diff: low.word_count.abs_diff(high.word_count),
            low: low.clone(),
            high: high.clone(),
        }
    }
}

fn group_by_abstract(variants: &[Variant]) -> BTreeMap<&str, Vec<&Variant>> {
    let mut groups: BTreeMap<&str, Vec<&Variant>> = BTreeMap::new();
    for v in variants {
        groups.entry(v.abstract_id.as_str()).or_default().push(v);
    }
    groups
}

/// Lowest score first; ties on the lowest id.
fn low_order(a: &Variant, b: &Variant) -> Ordering {
    a.lhf_score
        .total_cmp(&b.lhf_score)
        .then_with(|| cmp_ids(&a.variant_id, &b.variant_id))
}

/// Highest score first; ties on the lowest id.
fn high_order(a: &Variant, b: &Variant) -> Ordering {
    b.lhf_score
        .total_cmp(&a.lhf_score)
        .then_with(|| cmp_ids(&a.variant_id, &b.variant_id))
}

fn extreme_pair(group: &[&Variant]) -> Option<ItemPair> {
    if group.len() < 2 {
        return None;
    }
    let low = group.iter().copied().min_by(|a, b| low_order(a, b))?;
    let high = group
        .iter()
        .copied()
        .filter(|v| !std::ptr::eq(*v, low))
        .min_by(|a, b| high_order(a, b))?;
    Some(ItemPair::new(low, high))
}

/// One (lowest, highest) candidate per abstract. Groups with fewer than two
/// variants are skipped with a warning.
pub fn pair_per_abstract(variants: &[Variant]) -> Vec<ItemPair> {
    group_by_abstract(variants)
        .into_iter()
        .filter_map(|(id, group)| {
            let pair = extreme_pair(&group);
            if pair.is_none() {
                log::warn!("abstract {id:?} has {} variant(s); skipped", group.len());
            }
            pair
        })
        .collect()
}

/// Tie order for equal deltas: lowest low id, then lowest high id.
fn better_pair(a: (&Variant, &Variant), b: (&Variant, &Variant)) -> bool {
    let delta = |(lo, hi): (&Variant, &Variant)| hi.lhf_score - lo.lhf_score;
    match delta(a).total_cmp(&delta(b)) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => {
            cmp_ids(&a.0.variant_id, &b.0.variant_id).then_with(|| cmp_ids(&a.1.variant_id, &b.1.variant_id))
                == Ordering::Less
        }
    }
}

/// Largest-delta pair within one abstract whose word counts differ by at most
/// `length_tol`.
///
/// Variants are bucketed by word count. For a pair of buckets the best pair
/// takes the bucket minimum as low and the bucket maximum as high, so only
/// bucket pairs within the tolerance need visiting.
pub fn best_admissible_pair(group: &[&Variant], length_tol: usize) -> Option<ItemPair> {
    let mut buckets: BTreeMap<usize, Vec<&Variant>> = BTreeMap::new();
    for v in group {
        buckets.entry(v.word_count).or_default().push(v);
    }
    // Per bucket: two lowest and two highest, enough to pick distinct
    // variants when low and high come from the same bucket.
    let summaries: Vec<(usize, Vec<&Variant>, Vec<&Variant>)> = buckets
        .into_iter()
        .map(|(len, mut vs)| {
            vs.sort_by(|a, b| low_order(a, b));
            let lows = vs.iter().take(2).copied().collect();
            vs.sort_by(|a, b| high_order(a, b));
            let highs = vs.iter().take(2).copied().collect();
            (len, lows, highs)
        })
        .collect();

    let mut best: Option<(&Variant, &Variant)> = None;
    for (len_lo, lows, _) in &summaries {
        for (len_hi, _, highs) in &summaries {
            if len_lo.abs_diff(*len_hi) > length_tol {
                continue;
            }
            for &low in lows {
                for &high in highs {
                    if std::ptr::eq(low, high) || high.lhf_score < low.lhf_score {
                        continue;
                    }
                    if best.is_none_or(|b| better_pair((low, high), b)) {
                        best = Some((low, high));
                    }
                }
            }
        }
    }
    best.map(|(low, high)| ItemPair::new(low, high))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunnerUpMode {
    /// Fall back to the next-best admissible pair inside the same abstract.
    WithinAbstract,
    /// Keep each abstract's extreme pair; skip abstracts whose extreme pair is
    /// not length-matched and move down the ranking.
    AbstractReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectConfig {
    pub k: usize,
    pub length_tol: usize,
    pub mode: RunnerUpMode,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            k: 30,
            length_tol: 2,
            mode: RunnerUpMode::WithinAbstract,
        }
    }
}

fn rank(pairs: &mut [ItemPair]) {
    pairs.sort_by(|a, b| {
        b.delta
            .total_cmp(&a.delta)
            .then_with(|| a.abstract_id.cmp(&b.abstract_id))
    });
}

/// The `k` abstracts with the largest length-admissible deltas.
pub fn select_top_pairs(variants: &[Variant], config: &SelectConfig) -> Result<Vec<ItemPair>> {
    select_top_pairs_with(variants, config, Execution::default())
}

pub fn select_top_pairs_with(variants: &[Variant], config: &SelectConfig, exec: Execution) -> Result<Vec<ItemPair>> {
    let groups: Vec<Vec<&Variant>> = group_by_abstract(variants).into_values().collect();
    let mut admissible: Vec<ItemPair> = match config.mode {
        RunnerUpMode::WithinAbstract => exec
            .map(&groups, |g| best_admissible_pair(g, config.length_tol))
            .into_iter()
            .flatten()
            .collect(),
        RunnerUpMode::AbstractReplacement => exec
            .map(&groups, |g| extreme_pair(g))
            .into_iter()
            .flatten()
            .filter(|p| p.length_diff <= config.length_tol)
            .collect(),
    };
    rank(&mut admissible);
    if admissible.len() < config.k {
        return Err(Error::validation(format!(
            "only {} abstract(s) have a length-admissible pair (tolerance {} words); {} requested, shortfall {}",
            admissible.len(),
            config.length_tol,
            config.k,
            config.k - admissible.len()
        )));
    }
    admissible.truncate(config.k);
    Ok(admissible)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub pairs: usize,
    pub mean_high_score: f64,
    pub mean_high_length: f64,
    pub mean_low_score: f64,
    pub mean_low_length: f64,
    pub mean_delta: f64,
}

impl SelectionSummary {
    pub fn of(pairs: &[ItemPair]) -> Self {
        let n = pairs.len().max(1) as f64;
        let mean = |f: &dyn Fn(&ItemPair) -> f64| pairs.iter().map(f).sum::<f64>() / n;
        SelectionSummary {
            pairs: pairs.len(),
            mean_high_score: mean(&|p| p.high.lhf_score),
            mean_high_length: mean(&|p| p.high.word_count as f64),
            mean_low_score: mean(&|p| p.low.lhf_score),
            mean_low_length: mean(&|p| p.low.word_count as f64),
            mean_delta: mean(&|p| p.delta),
        }
    }
}

impl fmt::Display for SelectionSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} pairs: average LHF-Score of high variants {:.1} (average length: {:.0} words); \
             average LHF-Score of low variants {:.1} (average length: {:.0} words)",
            self.pairs, self.mean_high_score, self.mean_high_length, self.mean_low_score, self.mean_low_length
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestToken {
    form: String,
    lemma: String,
    upos: crate::corpus::Upos,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestVariant {
    variant_id: String,
    text: String,
    word_count: usize,
    lhf_score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tokens: Vec<ManifestToken>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestPair {
    abstract_id: String,
    low: ManifestVariant,
    high: ManifestVariant,
    delta: f64,
}

impl ManifestVariant {
    fn from_variant(v: &Variant) -> Self {
        ManifestVariant {
            variant_id: v.variant_id.clone(),
            text: v.text.clone(),
            word_count: v.word_count,
            lhf_score: v.lhf_score,
            tokens: v
                .tokens
                .iter()
                .map(|t| ManifestToken {
                    form: t.form.clone(),
                    lemma: t.lemma.clone(),
                    upos: t.upos,
                })
                .collect(),
        }
    }

    fn into_variant(self, abstract_id: &str) -> Result<Variant> {
        let tokens = self
            .tokens
            .into_iter()
            .map(|t| TaggedToken::new(&t.form, Some(&t.lemma), t.upos))
            .collect::<Result<Vec<_>>>()?;
        Ok(Variant {
            abstract_id: abstract_id.to_string(),
            variant_id: self.variant_id,
            text: self.text,
            tokens,
            word_count: self.word_count,
            lhf_score: self.lhf_score,
        })
    }
}

/// One JSON object per pair: `{"abstract_id", "low": {...}, "high": {...}, "delta"}`.
pub fn write_pairs<W: Write>(pairs: &[ItemPair], mut out: W) -> Result<()> {
    for p in pairs {
        let m = ManifestPair {
            abstract_id: p.abstract_id.clone(),
            low: ManifestVariant::from_variant(&p.low),
            high: ManifestVariant::from_variant(&p.high),
            delta: p.delta,
        };
        serde_json::to_writer(&mut out, &m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<ItemPair>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestPair = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let low = m.low.into_variant(&m.abstract_id)?;
        let high = m.high.into_variant(&m.abstract_id)?;
        out.push(ItemPair {
            abstract_id: m.abstract_id,
            length_diff: low.word_count.abs_diff(high.word_count),
            delta: m.delta,
            low,
            high,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Upos;

    fn variant(abs: &str, id: &str, words: usize, score: f64) -> Variant {
        let text = vec!["w"; words].join(" ");
        Variant {
            abstract_id: abs.into(),
            variant_id: id.into(),
            tokens: vec![TaggedToken::new("w", None, Upos::X).unwrap(); words],
            text,
            word_count: words,
            lhf_score: score,
        }
    }

    #[test]
    fn length_and_banned_filters() {
        let mut delve = variant("a", "2", 100, 0.0);
        delve.tokens[50] = TaggedToken::new("Delve", None, Upos::VERB).unwrap();
        let kept = filter_variants(
            vec![
                variant("a", "0", 89, 0.0),
                variant("a", "1", 100, 0.0),
                delve,
                variant("a", "3", 111, 0.0),
            ],
            &FilterConfig {
                banned: vec!["delve".into()],
                ..FilterConfig::default()
            },
        );
        assert_eq!(kept.iter().map(|v| v.variant_id.as_str()).collect::<Vec<_>>(), ["1"]);
        let boundary = filter_variants(
            vec![variant("a", "0", 90, 0.0), variant("a", "1", 110, 0.0)],
            &FilterConfig::default(),
        );
        assert_eq!(boundary.len(), 2);
    }

    #[test]
    fn default_banned_list_catches_named_words() {
        let mut v = variant("a", "0", 100, 0.0);
        v.tokens[3] = TaggedToken::new("realm", None, Upos::NOUN).unwrap();
        let mut w = variant("a", "1", 100, 0.0);
        w.tokens[3] = TaggedToken::new("Groundbreaking", None, Upos::ADJ).unwrap();
        assert!(filter_variants(vec![v, w], &FilterConfig::default()).is_empty());
        assert_eq!(LITERATURE_OVERUSE_WORDS.len(), 32);
    }

    #[test]
    fn extreme_pair_per_abstract() {
        let vs = vec![
            variant("a", "0", 100, 1.0),
            variant("a", "1", 100, 4.5),
            variant("a", "2", 100, 2.2),
        ];
        let pairs = pair_per_abstract(&vs);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].low.lhf_score, 1.0);
        assert_eq!(pairs[0].high.lhf_score, 4.5);
        assert!((pairs[0].delta - 3.5).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_pick_lowest_ids() {
        let vs = vec![
            variant("a", "10", 100, 2.0),
            variant("a", "2", 100, 2.0),
            variant("a", "7", 100, 2.0),
        ];
        let p = &pair_per_abstract(&vs)[0];
        assert_eq!(p.delta, 0.0);
        assert_eq!((p.low.variant_id.as_str(), p.high.variant_id.as_str()), ("2", "7"));
    }

    #[test]
    fn singleton_group_skipped() {
        assert!(pair_per_abstract(&[variant("a", "0", 100, 1.0)]).is_empty());
    }

    #[test]
    fn ranking_by_delta() {
        let vs = vec![
            variant("A", "0", 100, 0.0),
            variant("A", "1", 100, 5.5),
            variant("B", "0", 100, 1.0),
            variant("B", "1", 100, 4.0),
            variant("C", "0", 100, 1.0),
            variant("C", "1", 100, 2.0),
        ];
        let sel = select_top_pairs(
            &vs,
            &SelectConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            sel.iter().map(|p| p.abstract_id.as_str()).collect::<Vec<_>>(),
            ["A", "B"]
        );
    }

    #[test]
    fn runner_up_within_abstract() {
        // A's extreme pair (0.0 @ 90 words, 5.5 @ 105 words) is 15 words apart;
        // its best admissible pair is 3.0 -> 5.5 at 104/105 words, delta 2.5.
        let vs = vec![
            variant("A", "0", 90, 0.0),
            variant("A", "1", 105, 5.5),
            variant("A", "2", 104, 3.0),
            variant("B", "0", 100, 1.0),
            variant("B", "1", 101, 4.0),
            variant("C", "0", 100, 1.0),
            variant("C", "1", 100, 2.0),
        ];
        let sel = select_top_pairs(
            &vs,
            &SelectConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(sel[0].abstract_id, "B");
        assert!((sel[0].delta - 3.0).abs() < 1e-12);
        assert_eq!(sel[1].abstract_id, "A");
        assert!((sel[1].delta - 2.5).abs() < 1e-12);
        assert!(sel.iter().all(|p| p.length_diff <= 2));

        let replaced = select_top_pairs(
            &vs,
            &SelectConfig {
                k: 2,
                mode: RunnerUpMode::AbstractReplacement,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            replaced.iter().map(|p| p.abstract_id.as_str()).collect::<Vec<_>>(),
            ["B", "C"]
        );
    }

    #[test]
    fn shortfall_is_an_error() {
        let vs = vec![variant("A", "0", 90, 0.0), variant("A", "1", 110, 1.0)];
        let err = select_top_pairs(
            &vs,
            &SelectConfig {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("shortfall 1"));
    }

    #[test]
    fn summary_format() {
        let pairs = vec![ItemPair::new(
            &variant("A", "0", 104, 1.7),
            &variant("A", "1", 105, 7.2),
        )];
        let s = SelectionSummary::of(&pairs).to_string();
        assert!(s.contains("high variants 7.2 (average length: 105 words)"));
        assert!(s.contains("low variants 1.7 (average length: 104 words)"));
    }

    #[test]
    fn manifest_round_trip() {
        let pairs = vec![ItemPair::new(
            &variant("A", "0", 100, 1.0),
            &variant("A", "1", 101, 2.5),
        )];
        let mut buf = Vec::new();
        write_pairs(&pairs, &mut buf).unwrap();
        let first: serde_json::Value = serde_json::from_slice(buf.split(|b| *b == b'\n').next().unwrap()).unwrap();
        for field in ["abstract_id", "low", "high", "delta"] {
            assert!(first.get(field).is_some(), "{field}");
        }
        let back = read_pairs(buf.as_slice()).unwrap();
        assert_eq!(back, pairs);
    }
}
