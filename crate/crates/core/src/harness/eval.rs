use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Task;
use super::model::{KeyedPrediction, Model};
use crate::data::{rotate, transform_order, Document, OrderMode};
use crate::error::{Error, Result};
use crate::heads::{Entity, Link};

/// Input transformation applied before evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Identity,
    Permute,
    Xy,
    Yx,
    Rotate { angle: f64 },
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Identity => "identity".into(),
            Variant::Permute => "permute".into(),
            Variant::Xy => "xy".into(),
            Variant::Yx => "yx".into(),
            Variant::Rotate { angle } => format!("rotate{angle:+}"),
        }
    }

    pub fn parse(s: &str, angle: f64) -> Result<Variant> {
        Ok(match s {
            "identity" => Variant::Identity,
            "permute" => Variant::Permute,
            "xy" => Variant::Xy,
            "yx" => Variant::Yx,
            "rotate" => Variant::Rotate { angle },
            _ => return Err(Error::Config(format!("unknown variant `{s}`"))),
        })
    }

    /// Transform document `index` of an evaluation set. Permutations are
    /// seeded by `(seed, index)`.
    pub fn apply(&self, doc: &Document, seed: u64, index: usize) -> Result<Document> {
        Ok(match *self {
            Variant::Identity => doc.clone(),
            Variant::Permute => {
                let s = seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ index as u64;
                transform_order(doc, OrderMode::Permute, s)
            }
            Variant::Xy => transform_order(doc, OrderMode::Xy, 0),
            Variant::Yx => transform_order(doc, OrderMode::Yx, 0),
            Variant::Rotate { angle } => rotate(doc, angle)?,
        })
    }
}

/// Precision, recall and F1 with the counts behind them; 0/0 is 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Prf {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            gold,
            predicted,
            correct,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub variant: String,
    pub documents: usize,
    pub micro: Prf,
    pub per_class: BTreeMap<String, Prf>,
}

/// Multiset overlap: each gold item can be matched at most once.
fn overlap<T: Ord + Clone>(pred: &[T], gold: &[T]) -> usize {
    let mut counts: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for p in pred {
        counts.entry(p).or_default().0 += 1;
    }
    for g in gold {
        counts.entry(g).or_default().1 += 1;
    }
    counts.values().map(|&(p, g)| p.min(g)).sum()
}

/// Exact-match entity scores per class and micro-averaged. An entity
/// counts only if class and full token sequence match.
pub fn score_entities(pred: &[Vec<Entity>], gold: &[Vec<Entity>], classes: &[String]) -> (Prf, BTreeMap<String, Prf>) {
    let mut per: Vec<(usize, usize, usize)> = vec![(0, 0, 0); classes.len()];
    for (p, g) in pred.iter().zip(gold) {
        for (c, slot) in per.iter_mut().enumerate() {
            let pc: Vec<&Entity> = p.iter().filter(|e| e.class == c).collect();
            let gc: Vec<&Entity> = g.iter().filter(|e| e.class == c).collect();
            slot.0 += gc.len();
            slot.1 += pc.len();
            slot.2 += overlap(&pc, &gc);
        }
    }
    let total = per.iter().fold((0, 0, 0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
    let map = classes
        .iter()
        .zip(&per)
        .map(|(name, s)| (name.clone(), Prf::from_counts(s.0, s.1, s.2)))
        .collect();
    (Prf::from_counts(total.0, total.1, total.2), map)
}

/// Exact-match directed link scores.
pub fn score_links(pred: &[Vec<Link>], gold: &[Vec<Link>]) -> Prf {
    let (mut g, mut p, mut c) = (0, 0, 0);
    for (pl, gl) in pred.iter().zip(gold) {
        g += gl.len();
        p += pl.len();
        c += overlap(pl, gl);
    }
    Prf::from_counts(g, p, c)
}

/// Predictions and gold for every document under `variant`.
pub fn predict_all(model: &Model, docs: &[Document], variant: Variant) -> Result<Vec<(KeyedPrediction, KeyedPrediction)>> {
    let seed = model.config.seed;
    docs.par_iter()
        .enumerate()
        .map(|(i, d)| model.predict(&variant.apply(d, seed, i)?))
        .collect()
}

pub fn evaluate(model: &Model, docs: &[Document], variant: Variant) -> Result<EvalReport> {
    let results = predict_all(model, docs, variant)?;
    let (pred, gold): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let (micro, per_class) = match model.task {
        Task::ElSpade => {
            let pl: Vec<Vec<Link>> = pred.into_iter().map(|p| p.links).collect();
            let gl: Vec<Vec<Link>> = gold.into_iter().map(|g| g.links).collect();
            (score_links(&pl, &gl), BTreeMap::new())
        }
        _ => {
            let pe: Vec<Vec<Entity>> = pred.into_iter().map(|p| p.entities).collect();
            let ge: Vec<Vec<Entity>> = gold.into_iter().map(|g| g.entities).collect();
            score_entities(&pe, &ge, &model.classes)
        }
    };
    Ok(EvalReport {
        task: model.task.name().into(),
        variant: variant.name(),
        documents: docs.len(),
        micro,
        per_class,
    })
}

/// Scores on the original order, a random permutation, both coordinate
/// sorts and a rotation.
pub fn order_study(model: &Model, docs: &[Document]) -> Result<Vec<EvalReport>> {
    let angle = model.config.eval.rotate_angle;
    [
        Variant::Identity,
        Variant::Permute,
        Variant::Xy,
        Variant::Yx,
        Variant::Rotate { angle },
    ]
    .iter()
    .map(|v| evaluate(model, docs, *v))
    .collect()
}

/// Plain-text table, one row per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:<10} {:>6} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}", "task", "variant", "docs", "precision", "recall", "f1", "gold", "pred", "correct");
    for r in reports {
        let m = &r.micro;
        let _ = writeln!(
            s,
            "{:<10} {:<10} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}",
            r.task, r.variant, r.documents, m.precision, m.recall, m.f1, m.gold, m.predicted, m.correct
        );
        for (class, p) in &r.per_class {
            let _ = writeln!(
                s,
                "{:<10} {:<10} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}",
                "", format!("  {class}"), "", p.precision, p.recall, p.f1, p.gold, p.predicted, p.correct
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(class: usize, tokens: &[usize]) -> Entity {
        Entity {
            class,
            tokens: tokens.to_vec(),
        }
    }

    #[test]
    fn zero_over_zero_is_zero() {
        let p = Prf::from_counts(0, 0, 0);
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_computed_scores() {
        let classes = vec!["q".to_string(), "a".to_string()];
        let gold = vec![vec![e(0, &[1, 2]), e(1, &[3]), e(1, &[4])]];
        // Wrong span, right span, wrong class.
        let pred = vec![vec![e(0, &[1]), e(1, &[3]), e(0, &[4])]];
        let (micro, per) = score_entities(&pred, &gold, &classes);
        assert_eq!((micro.gold, micro.predicted, micro.correct), (3, 3, 1));
        assert!((micro.f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(per["a"].correct, 1);
        assert_eq!(per["a"].predicted, 1);
        assert!((per["a"].recall - 0.5).abs() < 1e-12);
        assert_eq!(per["q"].correct, 0);
    }

    #[test]
    fn duplicates_match_once() {
        let classes = vec!["q".to_string()];
        let gold = vec![vec![e(0, &[1])]];
        let pred = vec![vec![e(0, &[1]), e(0, &[1])]];
        let (micro, _) = score_entities(&pred, &gold, &classes);
        assert_eq!(micro.correct, 1);
        assert!((micro.precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn links_are_directed() {
        let l = |s, t| Link { source: s, target: t };
        let p = score_links(&[vec![l(1, 2), l(3, 4)]], &[vec![l(2, 1), l(3, 4)]]);
        assert_eq!((p.correct, p.gold, p.predicted), (1, 2, 2));
    }
}
