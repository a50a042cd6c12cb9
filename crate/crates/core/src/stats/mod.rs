//! Chi-square tests, per-item descriptives and the REML mixed model.

mod dist;
mod optim;
mod reml;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::LemmaKey;
use crate::itemgen::ItemPair;
use crate::qc::RetainedRating;
use crate::study::ChoiceVariant;
use crate::{Error, Result};

pub use dist::{chi2_sf, gamma_q, ln_gamma, normal_two_sided_p};
pub use optim::{Minimum, NelderMead};
pub use reml::{
    fit_mixed_lpm, fit_mixed_lpm_with, reml_loglik, Components, FitConfig, LpmData, ModelFit, Solver,
    VarianceComponents,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: u32,
    pub p: f64,
}

impl fmt::Display for TestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "χ² = {:.1}, {}", self.statistic, format_p(self.p))
    }
}

/// `p < 0.001`, `p < 0.01`, or `p = 0.123`.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "p < 0.001".to_string()
    } else if p < 0.01 {
        "p < 0.01".to_string()
    } else {
        format!("p = {p:.3}")
    }
}

/// Two-cell goodness of fit of `x` successes out of `n` against `p0`.
pub fn chi2_gof(x: u64, n: u64, p0: f64) -> Result<TestResult> {
    if n == 0 || x > n {
        return Err(Error::Domain(format!("need 0 <= x <= n and n > 0, got x={x}, n={n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::Domain(format!("p0 must lie in (0, 1), got {p0}")));
    }
    let n_f = n as f64;
    let cells = [(x as f64, n_f * p0), ((n - x) as f64, n_f * (1.0 - p0))];
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    Ok(TestResult {
        statistic,
        df: 1,
        p: chi2_sf(statistic, 1)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDescriptives {
    pub item_id: String,
    pub n_ratings: u64,
    pub mean_high_preference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptives {
    pub items: Vec<ItemDescriptives>,
    pub n_ratings: u64,
    pub n_high: u64,
    pub pooled_high_preference: f64,
}

fn chose_high(r: &RetainedRating) -> Result<bool> {
    match r.choice_variant {
        ChoiceVariant::High => Ok(true),
        ChoiceVariant::Low => Ok(false),
        other => Err(Error::validation(format!(
            "rating for item {:?} has non-critical choice {other:?}",
            r.item_id
        ))),
    }
}

pub fn item_descriptives(ratings: &[RetainedRating]) -> Result<Descriptives> {
    let mut per_item: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in ratings {
        let high = chose_high(r)?;
        let e = per_item.entry(r.item_id.as_str()).or_default();
        e.0 += 1;
        e.1 += high as u64;
    }
    let items = per_item
        .into_iter()
        .map(|(id, (n, h))| ItemDescriptives {
            item_id: id.to_string(),
            n_ratings: n,
            mean_high_preference: h as f64 / n as f64,
        })
        .collect::<Vec<_>>();
    let n_ratings: u64 = items.iter().map(|i| i.n_ratings).sum();
    let n_high = ratings
        .iter()
        .filter(|r| r.choice_variant == ChoiceVariant::High)
        .count() as u64;
    Ok(Descriptives {
        items,
        n_ratings,
        n_high,
        pooled_high_preference: if n_ratings > 0 {
            n_high as f64 / n_ratings as f64
        } else {
            f64::NAN
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub marker: String,
    pub items_with: Vec<String>,
    pub n_with: u64,
    pub n_without: u64,
    /// `None` when the partition is empty.
    pub mean_with: Option<f64>,
    pub mean_without: Option<f64>,
}

impl fmt::Display for SubgroupResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
        write!(
            f,
            "items containing {}: {} vs. without: {}",
            self.marker,
            pct(self.mean_with),
            pct(self.mean_without)
        )
    }
}

/// Splits ratings by whether the item's high-score variant contains `marker`.
pub fn subgroup_descriptives(
    ratings: &[RetainedRating],
    pairs: &[ItemPair],
    marker: &LemmaKey,
) -> Result<SubgroupResult> {
    let mut marked: BTreeMap<&str, bool> = BTreeMap::new();
    for pair in pairs {
        if pair.high.tokens.is_empty() {
            return Err(Error::validation(format!(
                "high variant of item {:?} is not tokenized",
                pair.abstract_id
            )));
        }
        let has = pair
            .high
            .tokens
            .iter()
            .any(|t| t.lemma == marker.lemma && t.upos == marker.upos);
        marked.insert(pair.abstract_id.as_str(), has);
    }
    let (mut n_with, mut h_with, mut n_without, mut h_without) = (0u64, 0u64, 0u64, 0u64);
    for r in ratings {
        let high = chose_high(r)? as u64;
        match marked.get(r.item_id.as_str()) {
            Some(true) => {
                n_with += 1;
                h_with += high;
            }
            Some(false) => {
                n_without += 1;
                h_without += high;
            }
            None => {
                return Err(Error::validation(format!("rating for unknown item {:?}", r.item_id)));
            }
        }
    }
    let mean = |h: u64, n: u64| (n > 0).then(|| h as f64 / n as f64);
    if n_with == 0 || n_without == 0 {
        log::warn!("subgroup split on {marker} has an empty partition");
    }
    Ok(SubgroupResult {
        marker: marker.canonical(),
        items_with: marked
            .iter()
            .filter(|(_, m)| **m)
            .map(|(id, _)| id.to_string())
            .collect(),
        n_with,
        n_without,
        mean_with: mean(h_with, n_with),
        mean_without: mean(h_without, n_without),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::ChoiceVariant;

    fn rating(p: &str, item: &str, high: bool) -> RetainedRating {
        RetainedRating {
            participant_id: p.into(),
            item_id: item.into(),
            choice_variant: if high { ChoiceVariant::High } else { ChoiceVariant::Low },
            rt_ms: 5000.0,
        }
    }

    #[test]
    fn gof_examples() {
        let r = chi2_gof(5, 10, 0.5).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p, 1.0);

        let r = chi2_gof(0, 10, 0.5).unwrap();
        assert!((r.statistic - 10.0).abs() < 1e-12);
        assert!((r.p - 0.001565).abs() < 1e-5);

        let r = chi2_gof(2117, 4039, 0.5).unwrap();
        assert!((r.statistic - 9.41).abs() < 0.01);
        assert!((r.p - 0.0021).abs() < 1e-4);
        assert_eq!(r.to_string(), "χ² = 9.4, p < 0.01");

        assert!(chi2_gof(11, 10, 0.5).is_err());
        assert!(chi2_gof(1, 10, 1.0).is_err());
    }

    #[test]
    fn gof_symmetry() {
        for (x, n, p0) in [(3u64, 17u64, 0.3), (40, 41, 0.9), (0, 5, 0.5)] {
            let a = chi2_gof(x, n, p0).unwrap();
            let b = chi2_gof(n - x, n, 1.0 - p0).unwrap();
            assert!((a.statistic - b.statistic).abs() < 1e-12);
        }
    }

    #[test]
    fn all_high_item() {
        let d = item_descriptives(&[rating("a", "i1", true), rating("b", "i1", true)]).unwrap();
        assert_eq!(d.items[0].mean_high_preference, 1.0);
        assert_eq!(d.pooled_high_preference, 1.0);
    }

    #[test]
    fn pooled_on_paper_shaped_counts() {
        let mut ratings = Vec::new();
        for i in 0..4039 {
            ratings.push(rating(&format!("p{}", i % 400), &format!("i{}", i % 30), i < 2117));
        }
        let d = item_descriptives(&ratings).unwrap();
        assert!((d.pooled_high_preference - 0.524).abs() < 0.0005);
        assert_eq!(d.n_ratings, 4039);
    }
}
