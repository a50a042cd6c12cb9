use proptest::prelude::*;

use lexdrift_core::corpus::{
    count_lemmas_with, split_for_continuation, Corpus, CountOptions, Document, TaggedToken, Upos,
};
use lexdrift_core::divergence::{chi2_2x2, compare_with, CompareConfig};
use lexdrift_core::exec::Execution;
use lexdrift_core::itemgen::{select_top_pairs, RunnerUpMode, SelectConfig, Variant};
use lexdrift_core::scoring::ScoreTable;
use lexdrift_core::stats::{chi2_gof, chi2_sf};

const POS: [Upos; 5] = [Upos::NOUN, Upos::VERB, Upos::ADJ, Upos::PUNCT, Upos::SYM];

fn token() -> impl Strategy<Value = TaggedToken> {
    (0usize..12, 0usize..POS.len()).prop_map(|(w, p)| TaggedToken::new(&format!("w{w}"), None, POS[p]).unwrap())
}

fn corpus(id: &'static str) -> impl Strategy<Value = Corpus> {
    prop::collection::vec(prop::collection::vec(token(), 1..30), 1..12).prop_map(move |docs| {
        let documents = docs
            .into_iter()
            .enumerate()
            .map(|(i, tokens)| Document {
                doc_id: format!("d{i}"),
                tokens,
                raw_text: None,
            })
            .collect();
        Corpus::new(id, documents).unwrap()
    })
}

fn split(c: &Corpus, at: usize) -> (Corpus, Corpus) {
    let at = at % (c.documents.len() + 1);
    (
        Corpus::new("x", c.documents[..at].to_vec()).unwrap(),
        Corpus::new("y", c.documents[at..].to_vec()).unwrap(),
    )
}

proptest! {
    #[test]
    fn counts_sum_to_total(c in corpus("a"), exclude in any::<bool>()) {
        let t = count_lemmas_with(&c, CountOptions { exclude_punct: exclude }, Execution::Sequential).unwrap();
        prop_assert_eq!(t.counts.values().sum::<u64>(), t.total);
        if !exclude {
            prop_assert_eq!(t.total, c.total_tokens());
        }
    }

    #[test]
    fn counting_is_a_merge_over_documents(c in corpus("a"), at in 0usize..20) {
        let opts = CountOptions::default();
        let whole = count_lemmas_with(&c, opts, Execution::Sequential).unwrap();
        let (x, y) = split(&c, at);
        let part = |c: &Corpus| {
            if c.is_empty() {
                Default::default()
            } else {
                count_lemmas_with(c, opts, Execution::Sequential).unwrap()
            }
        };
        let merged = part(&x).merge(part(&y));
        prop_assert_eq!(merged.counts, whole.counts);
        prop_assert_eq!(merged.total, whole.total);
    }

    #[test]
    fn execution_modes_agree(a in corpus("a"), b in corpus("b")) {
        let opts = CountOptions { exclude_punct: true };
        let seq_a = count_lemmas_with(&a, opts, Execution::Sequential).unwrap();
        let par_a = count_lemmas_with(&a, opts, Execution::Parallel).unwrap();
        prop_assert_eq!(&seq_a, &par_a);
        let seq_b = count_lemmas_with(&b, opts, Execution::Sequential).unwrap();
        prop_assume!(seq_a.total > 0 && seq_b.total > 0);
        let cfg = CompareConfig::default();
        let s = compare_with(&seq_a, &seq_b, &cfg, Execution::Sequential).unwrap();
        let p = compare_with(&seq_a, &seq_b, &cfg, Execution::Parallel).unwrap();
        prop_assert_eq!(s.rows, p.rows);
        prop_assert_eq!(s.novel, p.novel);
    }

    #[test]
    fn chi2_is_symmetric(a in 1u64..5000, b in 1u64..5000, c in 1u64..5000, d in 1u64..5000, yates in any::<bool>()) {
        let (x, p) = chi2_2x2(a, b, c, d, yates).unwrap();
        for (s, q) in [
            chi2_2x2(c, d, a, b, yates).unwrap(),
            chi2_2x2(b, a, d, c, yates).unwrap(),
            chi2_2x2(a, c, b, d, yates).unwrap(),
        ] {
            prop_assert!((s - x).abs() <= 1e-9 * x.max(1.0));
            prop_assert!((q - p).abs() <= 1e-9);
        }
        prop_assert!(x >= 0.0 && (0.0..=1.0).contains(&p));
    }

    #[test]
    fn gof_mirrors_around_half(n in 1u64..10_000, frac in 0.0f64..=1.0) {
        let x = ((n as f64) * frac).floor() as u64;
        let a = chi2_gof(x, n, 0.5).unwrap();
        let b = chi2_gof(n - x, n, 0.5).unwrap();
        prop_assert!((a.statistic - b.statistic).abs() <= 1e-9 * a.statistic.max(1.0));
        prop_assert!((a.p - b.p).abs() <= 1e-12);
    }

    #[test]
    fn sf_decreases_in_x(x in 0.0f64..80.0, dx in 0.001f64..10.0, df in 1u32..40) {
        let lo = chi2_sf(x, df).unwrap();
        let hi = chi2_sf(x + dx, df).unwrap();
        prop_assert!(hi <= lo + 1e-15);
        prop_assert!((0.0..=1.0).contains(&hi));
    }

    #[test]
    fn split_halves_rejoin(words in prop::collection::vec("[a-z]{1,8}", 2..200)) {
        let text = words.join("  ");
        let (first, second) = split_for_continuation(&text).unwrap();
        prop_assert_eq!(first.split(' ').count(), words.len() / 2);
        prop_assert_eq!(format!("{first} {second}"), words.join(" "));
    }

    #[test]
    fn scores_add_over_concatenation(a in prop::collection::vec(token(), 0..50), b in prop::collection::vec(token(), 0..50)) {
        let table = ScoreTable::from_weights((0..12).map(|i| {
            (TaggedToken::new(&format!("w{i}"), None, Upos::NOUN).unwrap().key(), i as f64 * 0.37 - 1.0)
        }));
        let joined: Vec<TaggedToken> = a.iter().chain(&b).cloned().collect();
        let total = table.score_sequence(&joined).total;
        let parts = table.score_sequence(&a).total + table.score_sequence(&b).total;
        prop_assert!((total - parts).abs() < 1e-9);
    }

    #[test]
    fn selection_ignores_input_order(
        specs in prop::collection::vec((0usize..8, 0u32..60, 95usize..106), 40..200),
        seed in any::<u64>(),
        replacement in any::<bool>(),
    ) {
        let variants: Vec<Variant> = specs
            .iter()
            .enumerate()
            .map(|(i, (a, s, w))| Variant {
                abstract_id: format!("{}", a + 1),
                variant_id: format!("{}", i + 1),
                text: String::new(),
                tokens: vec![],
                word_count: *w,
                lhf_score: *s as f64 / 10.0,
            })
            .collect();
        let mut shuffled = variants.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let cfg = SelectConfig {
            k: 3,
            length_tol: 2,
            mode: if replacement { RunnerUpMode::AbstractReplacement } else { RunnerUpMode::WithinAbstract },
        };
        let a = select_top_pairs(&variants, &cfg);
        let b = select_top_pairs(&shuffled, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one order failed: {:?} / {:?}", a.is_ok(), b.is_ok()),
        }
    }
}
