use std::io::Write;

use anyhow::Context;
use lexdrift_core::corpus::LemmaKey;
use lexdrift_core::itemgen::read_pairs;
use lexdrift_core::qc::{
    apply_exclusions, read_qc_records, read_retained_csv, write_retained_csv, GotchaRule, QcConfig,
};
use lexdrift_core::stats::{self, FitConfig, LpmData, Solver};
use serde_json::json;

use crate::config::pick;
use crate::manifest::Run;
use crate::{AnalyzeArgs, Ctx, ExcludeArgs, GotchaRuleArg, SolverArg};

fn gotcha_rule(flag: Option<GotchaRuleArg>, file: Option<&str>) -> anyhow::Result<GotchaRule> {
    Ok(match (flag, file) {
        (Some(GotchaRuleArg::Strict), _) => GotchaRule::Strict,
        (Some(GotchaRuleArg::Lenient), _) => GotchaRule::Lenient,
        (None, None | Some("strict")) => GotchaRule::Strict,
        (None, Some("lenient")) => GotchaRule::Lenient,
        (None, Some(other)) => {
            return Err(lexdrift_core::Error::Config(format!("unknown gotcha rule {other:?}")).into());
        }
    })
}

pub fn exclude(ctx: &Ctx, args: ExcludeArgs) -> anyhow::Result<()> {
    let file = &ctx.file.qc;
    let defaults = QcConfig::default();
    let config = QcConfig {
        min_items: pick(args.min_items, file.min_items, defaults.min_items),
        speed_factor: pick(args.speed_factor, file.speed_factor, defaults.speed_factor),
        fast_trial_limit: pick(args.fast_trial_limit, file.fast_trial_limit, defaults.fast_trial_limit),
        gotcha_rule: gotcha_rule(args.gotcha_rule, file.gotcha_rule.as_deref())?,
        required_gotchas: defaults.required_gotchas,
    };
    let mut run = Run::start("exclude", json!({"args": &args, "qc": config}))?;
    let records =
        read_qc_records(run.input(&args.input)?).with_context(|| format!("reading {}", args.input.display()))?;
    let outcome = apply_exclusions(&records, &config)?;
    debug_assert!(outcome.report.reconciles());

    let mut out = run.output(&args.out)?;
    write_retained_csv(&outcome.retained, &mut out)?;
    out.flush()?;
    drop(out);
    let mut rep = run.output(&args.report)?;
    serde_json::to_writer_pretty(&mut rep, &outcome.report)?;
    rep.write_all(b"\n")?;
    rep.flush()?;
    drop(rep);
    run.finish()?;
    ctx.say(&outcome.report);
    Ok(())
}

pub fn analyze(ctx: &Ctx, args: AnalyzeArgs) -> anyhow::Result<()> {
    let mut run = Run::start("analyze", &args)?;
    let ratings =
        read_retained_csv(run.input(&args.input)?).with_context(|| format!("reading {}", args.input.display()))?;
    if ratings.is_empty() {
        anyhow::bail!("{} holds no ratings", args.input.display());
    }
    let desc = stats::item_descriptives(&ratings)?;
    let gof = stats::chi2_gof(desc.n_high, desc.n_ratings, 0.5)?;

    let subgroup = match (&args.marker, &args.pairs) {
        (Some(marker), Some(path)) => {
            let key: LemmaKey = marker.parse()?;
            let pairs = read_pairs(run.input(path)?)?;
            Some(stats::subgroup_descriptives(&ratings, &pairs, &key)?)
        }
        (Some(_), None) => anyhow::bail!("--marker needs --pairs"),
        _ => None,
    };

    let fit = stats::fit_mixed_lpm_with(
        &LpmData::from_ratings(&ratings)?,
        &FitConfig {
            solver: match args.solver {
                SolverArg::Structured => Solver::Structured,
                SolverArg::Dense => Solver::Dense,
            },
            ..FitConfig::default()
        },
    )?;
    if !fit.converged {
        log::warn!("mixed model did not converge; estimates are the best point found");
    }
    let participants = {
        let mut ids: Vec<&str> = ratings.iter().map(|r| r.participant_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };

    let report = json!({
        "n_ratings": desc.n_ratings,
        "n_participants": participants,
        "n_items": desc.items.len(),
        "n_high": desc.n_high,
        "pooled_high_preference": desc.pooled_high_preference,
        "goodness_of_fit": gof,
        "subgroup": subgroup,
        "model": fit,
    });
    let mut out = run.output(&args.out)?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    drop(out);
    if let Some(path) = &args.items {
        let mut w = csv::Writer::from_writer(run.output(path)?);
        w.write_record(["item_id", "n", "mean_high_preference"])?;
        for item in &desc.items {
            w.write_record([
                item.item_id.clone(),
                item.n_ratings.to_string(),
                format!("{:.4}", item.mean_high_preference),
            ])?;
        }
        w.flush()?;
    }
    run.finish()?;

    ctx.say(format!(
        "{} ratings from {} participants on {} items",
        desc.n_ratings,
        participants,
        desc.items.len()
    ));
    ctx.say(format!(
        "high-score variant preferred in {:.1}% of ratings ({gof})",
        desc.pooled_high_preference * 100.0
    ));
    if let Some(s) = &subgroup {
        ctx.say(s);
    }
    ctx.say(&fit);
    Ok(())
}
