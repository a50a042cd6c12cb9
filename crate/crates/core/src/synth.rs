//! Seeded synthetic fixtures: tagged corpora with planted overused lemmas,
//! tagged generation variants, simulated study participants and rating
//! data with known variance components.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, LemmaKey, TaggedRecord, TaggedToken, Upos};
use crate::itemgen::{ItemPair, Variant};
use crate::qc::RetainedRating;
use crate::scoring::ScoreTable;
use crate::study::{ChoiceVariant, ItemType, Session, Side, StudyEngine, TrialRecord};
use crate::Result;

/// A lemma whose rate differs between the two synthetic corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct Planted {
    pub lemma: &'static str,
    pub upos: Upos,
    pub forms: &'static [&'static str],
    pub opm_a: f64,
    pub opm_b: f64,
}

impl Planted {
    pub fn key(&self) -> LemmaKey {
        LemmaKey::new(self.lemma, self.upos)
    }
}

macro_rules! planted {
    ($lemma:literal, $upos:ident, [$($f:literal),+], $a:expr, $b:expr) => {
        Planted { lemma: $lemma, upos: Upos::$upos, forms: &[$($f),+], opm_a: $a, opm_b: $b }
    };
}

pub const PLANTED: [Planted; 12] = [
    planted!("nuanced", ADJ, ["nuanced"], 40.0, 900.0),
    planted!("nuance", VERB, ["nuance", "nuances"], 30.0, 400.0),
    planted!("firstly", ADV, ["firstly"], 60.0, 800.0),
    planted!("reliance", NOUN, ["reliance"], 50.0, 600.0),
    planted!("generalizability", NOUN, ["generalizability"], 40.0, 500.0),
    planted!("underscore", VERB, ["underscores", "underscore"], 50.0, 700.0),
    planted!("radar", NOUN, ["radar"], 30.0, 300.0),
    planted!("delve", VERB, ["delves", "delve"], 20.0, 500.0),
    planted!("intricate", ADJ, ["intricate"], 40.0, 500.0),
    planted!("pivotal", ADJ, ["pivotal"], 60.0, 600.0),
    planted!("crucial", ADJ, ["crucial"], 200.0, 900.0),
    planted!("showcase", VERB, ["showcases", "showcase"], 30.0, 400.0),
];

const FUNCTION_WORDS: [(&str, Upos); 16] = [
    ("the", Upos::DET),
    ("of", Upos::ADP),
    ("and", Upos::CCONJ),
    ("in", Upos::ADP),
    ("a", Upos::DET),
    ("to", Upos::PART),
    ("be", Upos::AUX),
    ("we", Upos::PRON),
    ("with", Upos::ADP),
    ("for", Upos::ADP),
    ("this", Upos::DET),
    ("that", Upos::SCONJ),
    ("by", Upos::ADP),
    ("on", Upos::ADP),
    ("from", Upos::ADP),
    ("these", Upos::DET),
];

const ONSETS: [&str; 12] = ["b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "s", "l", "m"];

/// Background vocabulary shared by both corpora, Zipf-weighted.
struct Vocabulary {
    entries: Vec<(String, Upos)>,
    index: WeightedAliasIndex<f64>,
}

impl Vocabulary {
    fn new(size: usize) -> Self {
        let content = [Upos::NOUN, Upos::VERB, Upos::ADJ, Upos::NOUN, Upos::ADV];
        let mut entries: Vec<(String, Upos)> = FUNCTION_WORDS.iter().map(|(w, u)| (w.to_string(), *u)).collect();
        let mut i = 0usize;
        while entries.len() < size {
            let mut word = String::new();
            let mut n = i;
            for _ in 0..3 {
                word.push_str(ONSETS[n % ONSETS.len()]);
                n /= ONSETS.len();
                word.push_str(NUCLEI[n % NUCLEI.len()]);
                n /= NUCLEI.len();
            }
            word.push_str(CODAS[i % CODAS.len()]);
            entries.push((word, content[i % content.len()]));
            i += 1;
        }
        let weights = (0..entries.len()).map(|r| 1.0 / (r as f64 + 2.0).powf(1.07)).collect();
        Vocabulary {
            entries,
            index: WeightedAliasIndex::new(weights).expect("valid weights"),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> TaggedToken {
        let (w, u) = &self.entries[self.index.sample(rng)];
        TaggedToken::new(w, None, *u).expect("non-empty form")
    }
}

fn planted_token(p: &Planted, rng: &mut ChaCha8Rng) -> TaggedToken {
    let form = p.forms.choose(rng).expect("planted forms");
    TaggedToken::new(form, Some(p.lemma), p.upos).expect("non-empty form")
}

fn punct(form: &str) -> TaggedToken {
    TaggedToken::new(form, None, Upos::PUNCT).expect("non-empty form")
}

/// Renders tokens as text: words separated by spaces, punctuation attached.
pub fn render_text(tokens: &[TaggedToken]) -> String {
    let mut out = String::new();
    for t in tokens {
        if !out.is_empty() && t.upos != Upos::PUNCT {
            out.push(' ');
        }
        out.push_str(&t.form);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub documents: usize,
    pub tokens_per_document: usize,
    pub vocabulary: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            documents: 1000,
            tokens_per_document: 150,
            vocabulary: 2000,
            seed: 1,
        }
    }
}

fn synth_corpus(id: &str, config: &CorpusConfig, vocab: &Vocabulary, rates: &[f64], seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted_rate: f64 = rates.iter().sum::<f64>() / 1e6;
    let planted_index = WeightedAliasIndex::new(rates.to_vec()).expect("positive planted rates");
    let documents = (0..config.documents)
        .map(|d| {
            let mut tokens = Vec::with_capacity(config.tokens_per_document);
            let mut sentence = 0;
            while tokens.len() + 1 < config.tokens_per_document {
                let t = if rng.random_bool(planted_rate) {
                    planted_token(&PLANTED[planted_index.sample(&mut rng)], &mut rng)
                } else {
                    vocab.sample(&mut rng)
                };
                tokens.push(t);
                sentence += 1;
                if tokens.len() + 1 >= config.tokens_per_document {
                    break;
                }
                if sentence >= 12 && rng.random_bool(0.15) {
                    tokens.push(punct("."));
                    sentence = 0;
                } else if sentence > 3 && rng.random_bool(0.04) {
                    tokens.push(punct(","));
                }
            }
            tokens.push(punct("."));
            Document {
                doc_id: format!("{id}-{:05}", d + 1),
                raw_text: Some(render_text(&tokens)),
                tokens,
            }
        })
        .collect();
    Corpus::new(id, documents)
}

/// A baseline corpus `a` and a comparison corpus `b` sharing one background
/// distribution; only the [`PLANTED`] lemmas change rate.
pub fn corpus_pair(config: &CorpusConfig) -> Result<(Corpus, Corpus)> {
    let vocab = Vocabulary::new(config.vocabulary);
    let a: Vec<f64> = PLANTED.iter().map(|p| p.opm_a).collect();
    let b: Vec<f64> = PLANTED.iter().map(|p| p.opm_b).collect();
    Ok((
        synth_corpus("base", config, &vocab, &a, config.seed.wrapping_mul(2))?,
        synth_corpus(
            "instruct",
            config,
            &vocab,
            &b,
            config.seed.wrapping_mul(2).wrapping_add(1),
        )?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub abstracts: usize,
    pub per_abstract: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Upper bound of the per-variant probability that a word is planted.
    pub max_intensity: f64,
    pub seed: u64,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            abstracts: 50,
            per_abstract: 40,
            min_words: 85,
            max_words: 115,
            max_intensity: 0.08,
            seed: 1,
        }
    }
}

/// Tagged variant records with `abstract_id`, `variant_id` and `text` set.
/// Variant intensity varies, so LHF-Scores spread within each abstract.
pub fn variant_records(config: &VariantConfig) -> Vec<TaggedRecord> {
    let vocab = Vocabulary::new(800);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.abstracts * config.per_abstract);
    for a in 0..config.abstracts {
        let abstract_id = format!("{}", a + 1);
        for v in 0..config.per_abstract {
            let words = rng.random_range(config.min_words..=config.max_words);
            let intensity = rng.random_range(0.0..=config.max_intensity);
            let mut tokens = Vec::with_capacity(words + words / 10);
            let mut since_stop = 0;
            for w in 0..words {
                let t = if rng.random_bool(intensity) {
                    planted_token(PLANTED.choose(&mut rng).expect("planted"), &mut rng)
                } else {
                    let mut t = vocab.sample(&mut rng);
                    while t.upos == Upos::PUNCT {
                        t = vocab.sample(&mut rng);
                    }
                    t
                };
                tokens.push(t);
                since_stop += 1;
                if w + 1 == words || (since_stop >= 10 && rng.random_bool(0.12)) {
                    tokens.push(punct("."));
                    since_stop = 0;
                }
            }
            let doc = Document {
                doc_id: format!("{abstract_id}-{}", v + 1),
                raw_text: Some(render_text(&tokens)),
                tokens,
            };
            let mut rec = TaggedRecord::from_document(&doc);
            rec.abstract_id = Some(abstract_id.clone());
            rec.variant_id = Some(format!("{}", v + 1));
            out.push(rec);
        }
    }
    out
}

/// Scored variants built directly from [`variant_records`].
pub fn variants(config: &VariantConfig, table: &ScoreTable) -> Result<Vec<Variant>> {
    variant_records(config)
        .into_iter()
        .map(|r| Variant::from_record(r, table))
        .collect()
}

const TOY_WORDS: [&str; 24] = [
    "results",
    "suggest",
    "patients",
    "treatment",
    "improved",
    "outcomes",
    "across",
    "several",
    "clinical",
    "sites",
    "data",
    "were",
    "collected",
    "over",
    "two",
    "years",
    "analysis",
    "shows",
    "consistent",
    "effects",
    "study",
    "design",
    "sample",
    "measures",
];

fn toy_text(seed: u64, words: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body: Vec<&str> = (0..words)
        .map(|_| *TOY_WORDS.choose(&mut rng).expect("words"))
        .collect();
    let mut s = body.join(" ");
    s.push('.');
    s
}

fn toy_variant(abstract_id: &str, variant_id: &str, seed: u64, score: f64) -> Variant {
    let text = toy_text(seed, 100);
    Variant {
        abstract_id: abstract_id.into(),
        variant_id: variant_id.into(),
        word_count: 100,
        tokens: text
            .split_whitespace()
            .map(|w| TaggedToken::new(w, None, Upos::NOUN).expect("non-empty"))
            .collect(),
        text,
        lhf_score: score,
    }
}

/// `n` item pairs with ids `"1".."n"` and 100-word placeholder texts.
pub fn toy_pairs(n: usize) -> Vec<ItemPair> {
    (0..n)
        .map(|i| {
            let id = format!("{}", i + 1);
            let low = toy_variant(&id, "1", 2 * i as u64, 1.0);
            let high = toy_variant(&id, "2", 2 * i as u64 + 1, 5.0 + i as f64 / 10.0);
            ItemPair {
                abstract_id: id,
                delta: high.lhf_score - low.lhf_score,
                length_diff: 0,
                low,
                high,
            }
        })
        .collect()
}

/// A symmetric bounded effect `half_width * (2B - 1)` with `B ~ Beta(shape, shape)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentEffect {
    pub half_width: f64,
    pub shape: f64,
}

impl LatentEffect {
    pub const ZERO: LatentEffect = LatentEffect {
        half_width: 0.0,
        shape: 1.0,
    };

    pub fn variance(&self) -> f64 {
        self.half_width * self.half_width / (2.0 * self.shape + 1.0)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.half_width == 0.0 {
            return 0.0;
        }
        let b = Beta::new(self.shape, self.shape).expect("positive shape");
        self.half_width * (2.0 * b.sample(rng) - 1.0)
    }
}

/// Ground truth for the rating simulator: `P(high) = beta + u + v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpmTruth {
    pub beta: f64,
    pub user: LatentEffect,
    pub item: LatentEffect,
}

impl LpmTruth {
    /// Participant variance 0.10, item variance 0.006, intercept 0.52.
    pub fn reference() -> Self {
        LpmTruth {
            beta: 0.52,
            user: LatentEffect {
                half_width: 0.36,
                shape: 0.148,
            },
            item: LatentEffect {
                half_width: 0.11,
                shape: 0.508,
            },
        }
    }

    /// Expected residual variance `E[p(1 - p)]`.
    pub fn resid_variance(&self) -> f64 {
        self.beta * (1.0 - self.beta) - self.user.variance() - self.item.variance()
    }

    fn p_bounds_ok(&self) -> bool {
        let reach = self.user.half_width + self.item.half_width;
        self.beta - reach >= 0.0 && self.beta + reach <= 1.0
    }
}

/// Fully crossed binary ratings: every participant rates every item once.
pub fn lpm_ratings(truth: &LpmTruth, participants: usize, items: usize, seed: u64) -> Vec<RetainedRating> {
    assert!(truth.p_bounds_ok(), "effects must keep probabilities inside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..participants).map(|_| truth.user.sample(&mut rng)).collect();
    let v: Vec<f64> = (0..items).map(|_| truth.item.sample(&mut rng)).collect();
    let mut out = Vec::with_capacity(participants * items);
    for (pi, ui) in u.iter().enumerate() {
        for (ii, vi) in v.iter().enumerate() {
            let high = rng.random_bool((truth.beta + ui + vi).clamp(0.0, 1.0));
            out.push(RetainedRating {
                participant_id: format!("p{:04}", pi + 1),
                item_id: format!("i{:03}", ii + 1),
                choice_variant: if high { ChoiceVariant::High } else { ChoiceVariant::Low },
                rt_ms: 5000.0,
            });
        }
    }
    out
}

/// How a simulated participant behaves in a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    /// Trials answered before abandoning the session.
    pub answered: usize,
    /// Number of gotcha trials answered on the wrong side.
    pub wrong_gotchas: usize,
    /// Number of critical trials answered below the speed floor.
    pub fast_critical: usize,
    pub user_effect: f64,
}

impl Behavior {
    pub fn attentive(trials: usize) -> Self {
        Behavior {
            answered: trials,
            wrong_gotchas: 0,
            fast_critical: 0,
            user_effect: 0.0,
        }
    }
}

/// Probability of choosing the high variant: `beta + user + item`, clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseModel {
    pub beta: f64,
    pub item_effects: HashMap<String, f64>,
}

/// Drives one participant through a fresh session.
pub fn run_participant(
    engine: &StudyEngine,
    participant_id: &str,
    behavior: &Behavior,
    model: &ResponseModel,
    rng: &mut ChaCha8Rng,
) -> Result<Session> {
    let session = engine.create_session(participant_id)?;
    let mut gotchas_seen = 0;
    let mut critical_seen = 0;
    for spec in session.plan.iter().take(behavior.answered) {
        let side = match spec.item_type {
            ItemType::Critical => {
                let v = model.item_effects.get(&spec.item_id).copied().unwrap_or(0.0);
                let high = rng.random_bool((model.beta + behavior.user_effect + v).clamp(0.0, 1.0));
                // High sits on the right unless flipped.
                if high != spec.flipped {
                    Side::Right
                } else {
                    Side::Left
                }
            }
            ItemType::Gotcha => {
                gotchas_seen += 1;
                let instructed = spec.instructed_side.unwrap_or(Side::Left);
                if gotchas_seen <= behavior.wrong_gotchas {
                    instructed.other()
                } else {
                    instructed
                }
            }
            ItemType::Calibration | ItemType::Proficiency => {
                let correct = if spec.flipped { Side::Right } else { Side::Left };
                if rng.random_bool(0.95) {
                    correct
                } else {
                    correct.other()
                }
            }
        };
        let floor = crate::qc::speed_floor_with(engine.config().speed_factor, engine.char_length(spec));
        let fast = spec.item_type == ItemType::Critical && critical_seen < behavior.fast_critical;
        if spec.item_type == ItemType::Critical {
            critical_seen += 1;
        }
        let rt = if fast {
            floor * rng.random_range(0.3..0.9)
        } else {
            floor * rng.random_range(1.2..3.0)
        };
        engine.record_response(&session.session_id, spec.trial_index, side, rt)?;
    }
    Ok(session)
}

fn item_effects(engine: &StudyEngine, effect: &LatentEffect, rng: &mut ChaCha8Rng) -> HashMap<String, f64> {
    engine
        .config()
        .pairs
        .iter()
        .map(|p| (p.abstract_id.clone(), effect.sample(rng)))
        .collect()
}

/// 50 participants with planted violations: 3 incomplete, 5 failing a
/// gotcha, 2 with five or more fast ratings and 7 individually fast critical
/// ratings among the rest. Returns the exported records.
pub fn qc_fixture(engine: &StudyEngine, seed: u64) -> Result<Vec<TrialRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = engine.config().trials_per_session();
    let model = ResponseModel {
        beta: 0.52,
        item_effects: item_effects(engine, &LpmTruth::reference().item, &mut rng),
    };
    for i in 1..=50usize {
        let mut b = Behavior::attentive(trials);
        match i {
            1..=3 => {
                b.answered = 9;
                b.wrong_gotchas = 2;
            }
            // p08 is also fast: the gotcha rule claims it first.
            4..=8 => {
                b.wrong_gotchas = 1 + i % 2;
                b.fast_critical = if i == 8 { 6 } else { 0 };
            }
            9 => b.fast_critical = 5,
            10 => b.fast_critical = 8,
            11 => b.fast_critical = 1,
            12 => b.fast_critical = 2,
            13 => b.fast_critical = 4,
            _ => {}
        }
        b.user_effect = LpmTruth::reference().user.sample(&mut rng);
        run_participant(engine, &format!("p{i:02}"), &b, &model, &mut rng)?;
    }
    Ok(engine.export())
}

/// Contamination rates for [`simulate_study`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudySimConfig {
    pub participants: usize,
    pub p_incomplete: f64,
    pub p_inattentive: f64,
    pub p_speeder: f64,
    pub p_single_fast: f64,
    pub truth: LpmTruth,
    pub seed: u64,
}

impl Default for StudySimConfig {
    fn default() -> Self {
        StudySimConfig {
            participants: 200,
            p_incomplete: 0.03,
            p_inattentive: 0.15,
            p_speeder: 0.02,
            p_single_fast: 0.1,
            truth: LpmTruth::reference(),
            seed: 1,
        }
    }
}

/// Runs `config.participants` simulated participants against `engine`.
pub fn simulate_study(engine: &StudyEngine, config: &StudySimConfig) -> Result<Vec<TrialRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let trials = engine.config().trials_per_session();
    let model = ResponseModel {
        beta: config.truth.beta,
        item_effects: item_effects(engine, &config.truth.item, &mut rng),
    };
    for i in 1..=config.participants {
        let mut b = Behavior::attentive(trials);
        b.user_effect = config.truth.user.sample(&mut rng);
        let roll: f64 = rng.random();
        if roll < config.p_incomplete {
            b.answered = rng.random_range(1..10);
        } else if roll < config.p_incomplete + config.p_inattentive {
            b.wrong_gotchas = rng.random_range(1..=2);
        } else if roll < config.p_incomplete + config.p_inattentive + config.p_speeder {
            b.fast_critical = rng.random_range(5..=12);
        } else if rng.random_bool(config.p_single_fast) {
            b.fast_critical = rng.random_range(1..=3);
        }
        run_participant(engine, &format!("p{i:04}"), &b, &model, &mut rng)?;
    }
    Ok(engine.export())
}
