//! Tagged corpus ingestion, word counting and lemma+POS frequency tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::{Error, Result};

/// Universal POS inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Upos {
    ADJ,
    ADP,
    ADV,
    AUX,
    CCONJ,
    DET,
    INTJ,
    NOUN,
    NUM,
    PART,
    PRON,
    PROPN,
    PUNCT,
    SCONJ,
    SYM,
    VERB,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::ADJ,
        Upos::ADP,
        Upos::ADV,
        Upos::AUX,
        Upos::CCONJ,
        Upos::DET,
        Upos::INTJ,
        Upos::NOUN,
        Upos::NUM,
        Upos::PART,
        Upos::PRON,
        Upos::PROPN,
        Upos::PUNCT,
        Upos::SCONJ,
        Upos::SYM,
        Upos::VERB,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::ADJ => "ADJ",
            Upos::ADP => "ADP",
            Upos::ADV => "ADV",
            Upos::AUX => "AUX",
            Upos::CCONJ => "CCONJ",
            Upos::DET => "DET",
            Upos::INTJ => "INTJ",
            Upos::NOUN => "NOUN",
            Upos::NUM => "NUM",
            Upos::PART => "PART",
            Upos::PRON => "PRON",
            Upos::PROPN => "PROPN",
            Upos::PUNCT => "PUNCT",
            Upos::SCONJ => "SCONJ",
            Upos::SYM => "SYM",
            Upos::VERB => "VERB",
            Upos::X => "X",
        }
    }

    pub fn is_punct(self) -> bool {
        matches!(self, Upos::PUNCT | Upos::SYM)
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Upos::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown UPOS tag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub form: String,
    pub lemma: String,
    pub upos: Upos,
}

impl TaggedToken {
    /// Lemmas are lower-cased; a missing or `_` lemma falls back to the
    /// lower-cased form.
    pub fn new(form: &str, lemma: Option<&str>, upos: Upos) -> Result<Self> {
        if form.is_empty() {
            return Err(Error::validation("token form is empty"));
        }
        let lemma = match lemma {
            Some(l) if !l.is_empty() && l != "_" => l.to_lowercase(),
            _ => form.to_lowercase(),
        };
        Ok(TaggedToken {
            form: form.to_string(),
            lemma,
            upos,
        })
    }

    pub fn key(&self) -> LemmaKey {
        LemmaKey {
            lemma: self.lemma.clone(),
            upos: self.upos,
        }
    }
}

/// The unit of analysis, rendered canonically as `lemma_UPOS`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LemmaKey {
    pub lemma: String,
    pub upos: Upos,
}

impl LemmaKey {
    pub fn new(lemma: impl Into<String>, upos: Upos) -> Self {
        LemmaKey {
            lemma: lemma.into(),
            upos,
        }
    }

    pub fn canonical(&self) -> String {
        format!("{}_{}", self.lemma, self.upos)
    }
}

impl fmt::Display for LemmaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.lemma, self.upos)
    }
}

impl FromStr for LemmaKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lemma, upos) = s
            .rsplit_once('_')
            .ok_or_else(|| Error::validation(format!("{s:?} is not of the form lemma_UPOS")))?;
        if lemma.is_empty() {
            return Err(Error::validation(format!("{s:?} has an empty lemma")));
        }
        Ok(LemmaKey::new(lemma, upos.parse()?))
    }
}

impl Serialize for LemmaKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LemmaKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// Ordering follows the canonical rendering so that report tie-breaks are
// independent of how the key is stored.
impl Ord for LemmaKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let a = self
            .lemma
            .bytes()
            .chain(std::iter::once(b'_'))
            .chain(self.upos.as_str().bytes());
        let b = other
            .lemma
            .bytes()
            .chain(std::iter::once(b'_'))
            .chain(other.upos.as_str().bytes());
        a.cmp(b)
    }
}

impl PartialOrd for LemmaKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<TaggedToken>,
    pub raw_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub corpus_id: String,
    pub documents: Vec<Document>,
    total_tokens: u64,
}

impl Corpus {
    pub fn new(corpus_id: impl Into<String>, documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::validation(format!("duplicate doc_id {:?}", doc.doc_id)));
            }
        }
        let total_tokens = documents.iter().map(|d| d.tokens.len() as u64).sum();
        Ok(Corpus {
            corpus_id: corpus_id.into(),
            documents,
            total_tokens,
        })
    }

    /// N: the total token count over all documents.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordToken {
    form: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lemma: Option<String>,
    upos: String,
}

/// One line of the tagged line-record format. Extra fields used by later
/// stages (`text`, `abstract_id`, `variant_id`) are optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggedRecord {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstract_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    tokens: Vec<RecordToken>,
}

impl TaggedRecord {
    pub fn from_document(doc: &Document) -> Self {
        TaggedRecord {
            doc_id: doc.doc_id.clone(),
            abstract_id: None,
            variant_id: None,
            text: doc.raw_text.clone(),
            tokens: doc
                .tokens
                .iter()
                .map(|t| RecordToken {
                    form: t.form.clone(),
                    lemma: Some(t.lemma.clone()),
                    upos: t.upos.to_string(),
                })
                .collect(),
        }
    }

    pub fn into_document(self) -> Result<Document> {
        let tokens = self
            .tokens
            .iter()
            .map(|t| TaggedToken::new(&t.form, t.lemma.as_deref(), t.upos.parse()?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Document {
            doc_id: self.doc_id,
            tokens,
            raw_text: self.text,
        })
    }
}

/// Reads one [`TaggedRecord`] per non-blank line.
pub fn read_tagged_records<R: BufRead>(reader: R) -> Result<Vec<TaggedRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaggedRecord = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn parse_tagged_records<R: BufRead>(corpus_id: &str, reader: R) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaggedRecord = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let doc = record.into_document().map_err(|e| Error::parse(i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Corpus::new(corpus_id, docs)
}

pub fn write_tagged_records<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for doc in &corpus.documents {
        serde_json::to_writer(&mut out, &TaggedRecord::from_document(doc))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads the FORM, LEMMA and UPOS columns of CoNLL-U input.
///
/// `# newdoc` comments start a new document and blank-line separated
/// sentences are merged into it. Without any `# newdoc` marker each sentence
/// becomes its own document. Multiword ranges (`3-4`) and empty nodes (`5.1`)
/// are skipped.
pub fn parse_conllu_subset<R: BufRead>(corpus_id: &str, reader: R) -> Result<Corpus> {
    struct Pending {
        id: Option<String>,
        tokens: Vec<TaggedToken>,
    }

    let mut docs: Vec<Document> = Vec::new();
    let mut current = Pending {
        id: None,
        tokens: Vec::new(),
    };
    let mut saw_newdoc = false;

    let flush = |pending: &mut Pending, docs: &mut Vec<Document>| {
        if pending.tokens.is_empty() {
            pending.id = None;
            return;
        }
        let doc_id = pending.id.take().unwrap_or_else(|| format!("doc{}", docs.len() + 1));
        docs.push(Document {
            doc_id,
            tokens: std::mem::take(&mut pending.tokens),
            raw_text: None,
        });
    };

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix("newdoc") {
                saw_newdoc = true;
                flush(&mut current, &mut docs);
                let id = rest
                    .trim()
                    .strip_prefix("id")
                    .map(|r| r.trim().trim_start_matches('=').trim());
                current.id = id.filter(|s| !s.is_empty()).map(str::to_string);
            }
            continue;
        }
        if line.trim().is_empty() {
            if !saw_newdoc {
                flush(&mut current, &mut docs);
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(Error::parse(
                i + 1,
                format!("expected at least 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let upos: Upos = cols[3].parse().map_err(|e: Error| Error::parse(i + 1, e.to_string()))?;
        let token = TaggedToken::new(cols[1], Some(cols[2]), upos).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        current.tokens.push(token);
    }
    flush(&mut current, &mut docs);
    Corpus::new(corpus_id, docs)
}

/// Number of maximal whitespace-free substrings.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits `text` after the first `floor(n / 2)` words. Both halves are
/// re-joined with single spaces.
pub fn split_for_continuation(text: &str) -> Result<(String, String)> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < 2 {
        return Err(Error::Domain(format!("cannot split a text of {} word(s)", words.len())));
    }
    let mid = words.len() / 2;
    Ok((words[..mid].join(" "), words[mid..].join(" ")))
}

/// A raw (untagged) abstract, one JSON object per line: `{"id", "text"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAbstract {
    pub id: String,
    pub text: String,
}

pub fn filter_min_words(documents: Vec<RawAbstract>, min_words: usize) -> Vec<RawAbstract> {
    documents
        .into_iter()
        .filter(|d| word_count(&d.text) >= min_words)
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountOptions {
    /// Drop PUNCT and SYM tokens from both the counts and N.
    pub exclude_punct: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrequencyTable {
    pub corpus_id: String,
    pub counts: BTreeMap<LemmaKey, u64>,
    /// Surface forms observed for each key, kept for reference-list matching.
    pub forms: BTreeMap<LemmaKey, BTreeSet<String>>,
    pub total: u64,
}

impl FrequencyTable {
    pub fn count(&self, key: &LemmaKey) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Key-wise sum of two tables.
    pub fn merge(mut self, other: FrequencyTable) -> FrequencyTable {
        self.total += other.total;
        for (k, c) in other.counts {
            *self.counts.entry(k).or_insert(0) += c;
        }
        for (k, f) in other.forms {
            self.forms.entry(k).or_default().extend(f);
        }
        self
    }

    fn from_document(doc: &Document, opts: CountOptions) -> FrequencyTable {
        let mut table = FrequencyTable::default();
        for tok in &doc.tokens {
            if opts.exclude_punct && tok.upos.is_punct() {
                continue;
            }
            let key = tok.key();
            table.total += 1;
            table
                .forms
                .entry(key.clone())
                .or_default()
                .insert(tok.form.to_lowercase());
            *table.counts.entry(key).or_insert(0) += 1;
        }
        table
    }
}

pub fn count_lemmas(corpus: &Corpus, opts: CountOptions) -> Result<FrequencyTable> {
    count_lemmas_with(corpus, opts, Execution::default())
}

pub fn count_lemmas_with(corpus: &Corpus, opts: CountOptions, exec: Execution) -> Result<FrequencyTable> {
    if let Some(doc) = corpus.documents.iter().find(|d| d.tokens.is_empty()) {
        return Err(Error::validation(format!(
            "document {:?} is untagged (no tokens)",
            doc.doc_id
        )));
    }
    let mut table = exec.map_reduce(
        &corpus.documents,
        |doc| FrequencyTable::from_document(doc, opts),
        FrequencyTable::default,
        FrequencyTable::merge,
    );
    table.corpus_id = corpus.corpus_id.clone();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(form: &str, upos: Upos) -> TaggedToken {
        TaggedToken::new(form, None, upos).unwrap()
    }

    #[test]
    fn record_stream_counts_tokens() {
        let input = r#"{"doc_id":"d1","tokens":[{"form":"This","lemma":"this","upos":"PRON"},{"form":"is","lemma":"be","upos":"AUX"},{"form":"nuanced","lemma":"nuanced","upos":"ADJ"}]}"#;
        let corpus = parse_tagged_records("c", input.as_bytes()).unwrap();
        assert_eq!(corpus.total_tokens(), 3);
        assert_eq!(corpus.documents[0].tokens[0].lemma, "this");
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        let corpus = parse_tagged_records("c", "".as_bytes()).unwrap();
        assert!(corpus.is_empty());
        assert_eq!(corpus.total_tokens(), 0);
    }

    #[test]
    fn missing_upos_names_the_line() {
        let input = "{\"doc_id\":\"a\",\"tokens\":[{\"form\":\"x\",\"lemma\":\"x\",\"upos\":\"X\"}]}\n{\"doc_id\":\"b\",\"tokens\":[{\"form\":\"x\",\"lemma\":\"x\"}]}\n";
        match parse_tagged_records("c", input.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let line = r#"{"doc_id":"a","tokens":[{"form":"x","upos":"X"}]}"#;
        let input = format!("{line}\n{line}\n");
        assert!(matches!(
            parse_tagged_records("c", input.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn lemma_falls_back_to_lowercased_form() {
        let t = TaggedToken::new("Delves", None, Upos::VERB).unwrap();
        assert_eq!(t.lemma, "delves");
        let t = TaggedToken::new("This", Some("This"), Upos::PRON).unwrap();
        assert_eq!(t.lemma, "this");
    }

    #[test]
    fn conllu_two_documents() {
        let mut s = String::new();
        for d in 0..2 {
            s.push_str(&format!("# newdoc id = d{d}\n"));
            for i in 1..=5 {
                s.push_str(&format!("{i}\tw{i}\tw{i}\tNOUN\t_\t_\t0\t_\t_\t_\n"));
            }
            s.push('\n');
        }
        let corpus = parse_conllu_subset("c", s.as_bytes()).unwrap();
        assert_eq!(corpus.documents.len(), 2);
        assert_eq!(corpus.total_tokens(), 10);
        assert_eq!(corpus.documents[1].doc_id, "d1");
    }

    #[test]
    fn conllu_comment_only() {
        let corpus = parse_conllu_subset("c", "# sent_id = 1\n# text = nothing\n".as_bytes()).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn conllu_skips_multiword_ranges() {
        // "don't" as a range over do + n't; 10 lines, 2 ranges, 1 empty node.
        let fixture = "\
# newdoc id = a
1\tI\tI\tPRON\t_
2-3\tdon't\t_\t_\t_
2\tdo\tdo\tAUX\t_
3\tn't\tnot\tPART\t_
4\tdelve\tdelve\tVERB\t_
4.1\tgone\tgo\tVERB\t_
5-6\tinto'em\t_\t_\t_
5\tinto\tinto\tADP\t_
6\t'em\tthey\tPRON\t_
";
        let corpus = parse_conllu_subset("c", fixture.as_bytes()).unwrap();
        // Hand count: I, do, n't, delve, into, 'em.
        assert_eq!(corpus.total_tokens(), 6);
    }

    #[test]
    fn conllu_short_line_is_error() {
        let err = parse_conllu_subset("c", "1\tword\tword\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn conllu_without_newdoc_splits_on_blank_lines() {
        let s = "1\ta\ta\tDET\n\n1\tb\tb\tNOUN\n2\tc\tc\tNOUN\n";
        let corpus = parse_conllu_subset("c", s.as_bytes()).unwrap();
        assert_eq!(corpus.documents.len(), 2);
        assert_eq!(corpus.total_tokens(), 3);
    }

    #[test]
    fn word_counts() {
        assert_eq!(word_count("a b  c"), 3);
        assert_eq!(word_count(""), 0);
        let text: String = (0..100).map(|i| format!("w{i}\n\t ")).collect();
        assert_eq!(word_count(&text), 100);
    }

    #[test]
    fn split_rounds_down() {
        let words = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        for (n, first) in [(40, 20), (41, 20), (2, 1)] {
            let (a, b) = split_for_continuation(&words(n)).unwrap();
            assert_eq!(word_count(&a), first);
            assert_eq!(word_count(&b), n - first);
            assert_eq!(format!("{a} {b}"), words(n));
        }
        assert!(split_for_continuation("single").is_err());
    }

    #[test]
    fn min_word_filter() {
        let mk = |id: &str, n: usize| RawAbstract {
            id: id.into(),
            text: vec!["w"; n].join(" "),
        };
        let kept = filter_min_words(vec![mk("a", 39), mk("b", 40), mk("c", 41)], 40);
        assert_eq!(kept.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert!(filter_min_words(vec![], 40).is_empty());
        let all = vec![mk("a", 50), mk("b", 40)];
        assert_eq!(filter_min_words(all.clone(), 40), all);
    }

    #[test]
    fn counts_distinguish_pos() {
        let doc = Document {
            doc_id: "d".into(),
            tokens: vec![tok("run", Upos::VERB), tok("run", Upos::VERB), tok("run", Upos::NOUN)],
            raw_text: None,
        };
        let corpus = Corpus::new("c", vec![doc]).unwrap();
        let table = count_lemmas(&corpus, CountOptions::default()).unwrap();
        assert_eq!(table.count(&LemmaKey::new("run", Upos::VERB)), 2);
        assert_eq!(table.count(&LemmaKey::new("run", Upos::NOUN)), 1);
        assert_eq!(table.total, 3);
    }

    #[test]
    fn empty_corpus_counts() {
        let corpus = Corpus::new("c", vec![]).unwrap();
        let table = count_lemmas(&corpus, CountOptions::default()).unwrap();
        assert!(table.is_empty());
        assert_eq!(table.total, 0);
    }

    #[test]
    fn untagged_corpus_rejected() {
        let doc = Document {
            doc_id: "d".into(),
            tokens: vec![],
            raw_text: Some("raw only".into()),
        };
        let corpus = Corpus::new("c", vec![doc]).unwrap();
        assert!(count_lemmas(&corpus, CountOptions::default()).is_err());
    }

    #[test]
    fn punct_flag_changes_n() {
        let doc = Document {
            doc_id: "d".into(),
            tokens: vec![tok("word", Upos::NOUN), tok(".", Upos::PUNCT)],
            raw_text: None,
        };
        let corpus = Corpus::new("c", vec![doc]).unwrap();
        assert_eq!(count_lemmas(&corpus, CountOptions::default()).unwrap().total, 2);
        let t = count_lemmas(&corpus, CountOptions { exclude_punct: true }).unwrap();
        assert_eq!(t.total, 1);
        assert_eq!(t.counts.len(), 1);
    }

    #[test]
    fn key_round_trip_and_order() {
        let k: LemmaKey = "nuanced_ADJ".parse().unwrap();
        assert_eq!(k, LemmaKey::new("nuanced", Upos::ADJ));
        assert_eq!(k.to_string(), "nuanced_ADJ");
        let k: LemmaKey = "state_of_art_NOUN".parse().unwrap();
        assert_eq!(k.lemma, "state_of_art");
        let x = LemmaKey::new("a_b", Upos::NOUN);
        let y = LemmaKey::new("a", Upos::NOUN);
        assert_eq!(x.cmp(&y), x.canonical().cmp(&y.canonical()));
    }
}
