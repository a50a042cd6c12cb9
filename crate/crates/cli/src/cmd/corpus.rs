use std::io::Write;
use std::path::Path;

use lexdrift_core::corpus::{
    count_lemmas, parse_conllu_subset, parse_tagged_records, write_tagged_records, Corpus, CountOptions,
};
use lexdrift_core::divergence::{self, CompareConfig};

use super::{read_word_list, stem};
use crate::config::pick;
use crate::manifest::Run;
use crate::{CompareArgs, Ctx, IngestArgs, InputFormat};

fn load(run: &mut Run, path: &Path, format: InputFormat, id: &str) -> anyhow::Result<Corpus> {
    let reader = run.input(path)?;
    let corpus = match format {
        InputFormat::Records => parse_tagged_records(id, reader),
        InputFormat::Conllu => parse_conllu_subset(id, reader),
    }
    .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    if corpus.is_empty() {
        anyhow::bail!("{} contains no documents", path.display());
    }
    Ok(corpus)
}

pub fn ingest(ctx: &Ctx, args: IngestArgs) -> anyhow::Result<()> {
    let mut run = Run::start("ingest", &args)?;
    let id = args.corpus_id.clone().unwrap_or_else(|| stem(&args.input));
    let corpus = load(&mut run, &args.input, args.format, &id)?;
    let mut out = run.output(&args.out)?;
    write_tagged_records(&corpus, &mut out)?;
    out.flush()?;
    drop(out);
    run.finish()?;
    ctx.say(format!(
        "{}: {} documents, {} tokens",
        corpus.corpus_id,
        corpus.documents.len(),
        corpus.total_tokens()
    ));
    Ok(())
}

pub fn compare(ctx: &Ctx, args: CompareArgs) -> anyhow::Result<()> {
    let file = &ctx.file.compare;
    let config = CompareConfig {
        alpha: pick(args.alpha, file.alpha, 0.05),
        min_count_a: pick(args.min_count_a, file.min_count_a, 1),
        yates: args.yates || file.yates.unwrap_or(false),
    };
    let opts = CountOptions {
        exclude_punct: args.exclude_punct || file.exclude_punct.unwrap_or(false),
    };
    let mut run = Run::start(
        "compare",
        serde_json::json!({
            "args": &args,
            "alpha": config.alpha,
            "min_count_a": config.min_count_a,
            "yates": config.yates,
            "exclude_punct": opts.exclude_punct,
        }),
    )?;
    let a = load(&mut run, &args.a, args.format, &stem(&args.a))?;
    let b = load(&mut run, &args.b, args.format, &stem(&args.b))?;
    let report = divergence::compare(&count_lemmas(&a, opts)?, &count_lemmas(&b, opts)?, &config)?;

    let mut out = run.output(&args.out)?;
    divergence::write_report_csv(&report, &mut out)?;
    out.flush()?;
    drop(out);
    if let Some(path) = &args.novel {
        let mut out = run.output(path)?;
        divergence::write_novel_csv(&report, &mut out)?;
        out.flush()?;
    }
    let overlap = match &args.reference {
        Some(path) => Some(divergence::overlap_with_reference(
            &report,
            &read_word_list(run.input(path)?)?,
        )),
        None => None,
    };
    run.finish()?;

    let increased = report.rows.iter().filter(|r| r.significantly_increased()).count();
    ctx.say(format!(
        "{} keys compared (N_a = {}, N_b = {}); {} significantly increased; {} novel",
        report.rows.len(),
        report.n_a,
        report.n_b,
        increased,
        report.novel.len()
    ));
    if let Some(o) = overlap {
        ctx.say(format!(
            "reference overlap: {} of {} entries ({})",
            o.matched_count,
            o.reference_count,
            o.matched_forms.join(", ")
        ));
    }
    Ok(())
}
