use std::io::Write;

use anyhow::Context;
use lexdrift_core::corpus::{read_tagged_records, word_count};
use lexdrift_core::divergence::read_report_csv;
use lexdrift_core::itemgen::{
    filter_variants, read_variants, select_top_pairs, write_pairs, FilterConfig, RunnerUpMode, SelectConfig,
    SelectionSummary, LITERATURE_OVERUSE_WORDS,
};
use lexdrift_core::scoring::{build_score_table, read_table_csv, write_table_csv, TableConfig};

use super::{read_word_list, stem};
use crate::config::pick;
use crate::manifest::{digest, Run};
use crate::{BuildTableArgs, Ctx, RunnerUp, ScoreArgs, SelectPairsArgs};

pub fn build_table(ctx: &Ctx, args: BuildTableArgs) -> anyhow::Result<()> {
    let permissive = args.permissive || ctx.file.table.permissive.unwrap_or(false);
    let alpha = ctx.file.compare.alpha.unwrap_or(0.05);
    let mut run = Run::start("build-table", &args)?;
    // The report's content hash identifies it, so the table fingerprint does
    // not depend on where the file lives.
    let report_id = digest(&args.report)?.sha256;
    let report = read_report_csv(run.input(&args.report)?, alpha)
        .with_context(|| format!("reading {}", args.report.display()))?;
    let config = if permissive {
        TableConfig::permissive()
    } else {
        TableConfig::default()
    };
    let built = build_score_table(&report, &report_id, config);
    let mut out = run.output(&args.out)?;
    write_table_csv(&built.table, &mut out)?;
    out.flush()?;
    drop(out);
    run.finish()?;
    ctx.say(format!(
        "{} weighted keys (fingerprint {})",
        built.table.weights.len(),
        &built.table.fingerprint[..12]
    ));
    Ok(())
}

pub fn score(ctx: &Ctx, args: ScoreArgs) -> anyhow::Result<()> {
    let mut run = Run::start("score", &args)?;
    let table = read_table_csv(run.input(&args.table)?, &stem(&args.table))?;
    let records =
        read_tagged_records(run.input(&args.input)?).with_context(|| format!("reading {}", args.input.display()))?;
    let mut out = csv::Writer::from_writer(run.output(&args.out)?);
    out.write_record(["abstract_id", "variant_id", "word_count", "lhf_score"])?;
    let n = records.len();
    for rec in records {
        let abstract_id = rec.abstract_id.clone().unwrap_or_else(|| rec.doc_id.clone());
        let variant_id = rec.variant_id.clone().unwrap_or_else(|| rec.doc_id.clone());
        let doc = rec.into_document()?;
        let words = match &doc.raw_text {
            Some(t) => word_count(t),
            None => doc.tokens.iter().filter(|t| !t.upos.is_punct()).count(),
        };
        let s = table.score_sequence(&doc.tokens).total;
        out.write_record([abstract_id, variant_id, words.to_string(), format!("{s:.4}")])?;
    }
    out.flush()?;
    drop(out);
    run.finish()?;
    ctx.say(format!("scored {n} records"));
    Ok(())
}

fn parse_mode(s: &str) -> anyhow::Result<RunnerUpMode> {
    match s {
        "within-abstract" | "within_abstract" => Ok(RunnerUpMode::WithinAbstract),
        "abstract-replacement" | "abstract_replacement" => Ok(RunnerUpMode::AbstractReplacement),
        other => Err(lexdrift_core::Error::Config(format!("unknown selection mode {other:?}")).into()),
    }
}

pub fn select_pairs(ctx: &Ctx, args: SelectPairsArgs) -> anyhow::Result<()> {
    let file = &ctx.file.select;
    let defaults = SelectConfig::default();
    let mode = match (args.mode, &file.mode) {
        (Some(RunnerUp::WithinAbstract), _) => RunnerUpMode::WithinAbstract,
        (Some(RunnerUp::AbstractReplacement), _) => RunnerUpMode::AbstractReplacement,
        (None, Some(s)) => parse_mode(s)?,
        (None, None) => defaults.mode,
    };
    let select = SelectConfig {
        k: pick(args.k, file.k, defaults.k),
        length_tol: pick(args.length_tol, file.length_tol, defaults.length_tol),
        mode,
    };
    let filter_defaults = FilterConfig::default();
    let mut run = Run::start(
        "select-pairs",
        serde_json::json!({
            "args": &args,
            "k": select.k,
            "length_tol": select.length_tol,
            "mode": select.mode,
            "min_words": pick(args.min_words, file.min_words, filter_defaults.min_words),
            "max_words": pick(args.max_words, file.max_words, filter_defaults.max_words),
        }),
    )?;
    let banned = match &args.banned {
        Some(path) => read_word_list(run.input(path)?)?,
        None => LITERATURE_OVERUSE_WORDS.iter().map(|s| s.to_string()).collect(),
    };
    let filter = FilterConfig {
        min_words: pick(args.min_words, file.min_words, filter_defaults.min_words),
        max_words: pick(args.max_words, file.max_words, filter_defaults.max_words),
        banned,
    };
    let table = read_table_csv(run.input(&args.table)?, &stem(&args.table))?;
    let variants = read_variants(run.input(&args.variants)?, &table)
        .with_context(|| format!("reading {}", args.variants.display()))?;
    let total = variants.len();
    let kept = filter_variants(variants, &filter);
    log::info!(
        "{} of {} variants pass the length and banned-word filter",
        kept.len(),
        total
    );
    let pairs = select_top_pairs(&kept, &select)?;

    let mut out = run.output(&args.out)?;
    write_pairs(&pairs, &mut out)?;
    out.flush()?;
    drop(out);
    run.finish()?;
    ctx.say(SelectionSummary::of(&pairs));
    Ok(())
}
