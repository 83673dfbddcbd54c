//! Held-out evaluation: PR curve, AUC, P@N, best micro-F1, and the
//! false-negative removal experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::aligner::{attend_bag, best_relation, classify, AlignerModel, PseudoLabel};
use crate::corpus::{BagKey, BagSet, GroundTruth, RelationVocab, Sample};
use crate::encoder::encode;
use crate::error::{FanError, Result};
use crate::miner::{write_text, MinedSet};
use crate::trainer::{seeded_rng, RngStream};

/// One scored (bag, relation) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub bag: BagKey,
    pub relation: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRPoint {
    /// 1-based rank in the sorted prediction list.
    pub rank: usize,
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

/// A held-out fact: (bag, relation).
pub type Fact = (BagKey, usize);

/// Gold facts of held-out evaluation: the DS label of every non-NA bag.
pub fn gold_facts(bags: &BagSet, relations: &RelationVocab) -> BTreeSet<Fact> {
    bags.bags
        .iter()
        .filter(|b| !relations.is_na(b.key.relation))
        .map(|b| (b.key.clone(), b.key.relation))
        .collect()
}

/// Scores every bag against every non-NA relation: the posterior of `r`
/// when the bag is attended with `r`'s query. Ordered by (bag key, relation).
pub fn score_all(bags: &BagSet, model: &AlignerModel, relations: &RelationVocab) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(bags.len() * relations.len().saturating_sub(1));
    for b in 0..bags.len() {
        let reps = bags
            .sentences(b)
            .map(|s| encode(s, &model.encoder))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
        for r in relations.predefined() {
            let rep = attend_bag(&views, model.queries.value.row(r))?;
            let probs = classify(&rep.g, &model.cls_weight.value, model.cls_bias.value.data())?;
            if !probs[r].is_finite() {
                return Err(FanError::Numeric(format!(
                    "non-finite score for bag {} relation {r}",
                    bags.bags[b].key
                )));
            }
            out.push(Prediction {
                bag: bags.bags[b].key.clone(),
                relation: r,
                score: probs[r],
            });
        }
    }
    out.sort_by(|a, b| a.bag.cmp(&b.bag).then(a.relation.cmp(&b.relation)));
    Ok(out)
}

/// Sort order of the curve: score descending, then bag key, then relation.
pub fn ranked(predictions: &[Prediction]) -> Vec<&Prediction> {
    let mut order: Vec<&Prediction> = predictions.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.bag.cmp(&b.bag))
            .then(a.relation.cmp(&b.relation))
    });
    order
}

fn is_hit(p: &Prediction, gold: &BTreeSet<Fact>) -> bool {
    gold.contains(&(p.bag.clone(), p.relation))
}

pub fn pr_curve(predictions: &[Prediction], gold: &BTreeSet<Fact>) -> Result<Vec<PRPoint>> {
    if gold.is_empty() {
        return Err(FanError::Config(
            "held-out evaluation needs at least one gold fact".into(),
        ));
    }
    let total = gold.len() as f64;
    let mut hits = 0usize;
    Ok(ranked(predictions)
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            if is_hit(p, gold) {
                hits += 1;
            }
            PRPoint {
                rank: i + 1,
                score: p.score,
                precision: hits as f64 / (i + 1) as f64,
                recall: hits as f64 / total,
            }
        })
        .collect())
}

/// Trapezoidal area under (recall, precision), starting at recall 0 with
/// the first point's precision.
pub fn auc(points: &[PRPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (mut r0, mut p0) = (0.0, first.precision);
    let mut area = 0.0;
    for pt in points {
        area += (pt.recall - r0) * (pt.precision + p0) / 2.0;
        r0 = pt.recall;
        p0 = pt.precision;
    }
    area
}

/// Percentage of gold facts among the `n` best predictions.
pub fn p_at_n(predictions: &[Prediction], gold: &BTreeSet<Fact>, n: usize) -> f64 {
    let top = n.min(predictions.len());
    if top == 0 {
        return 0.0;
    }
    let hits = ranked(predictions)
        .into_iter()
        .take(top)
        .filter(|p| is_hit(p, gold))
        .count();
    100.0 * hits as f64 / top as f64
}

pub fn best_micro_f1(points: &[PRPoint]) -> f64 {
    points
        .iter()
        .map(|p| {
            let s = p.precision + p.recall;
            if s > 0.0 {
                2.0 * p.precision * p.recall / s
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Summary metrics, serialized as the evaluation JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub p_at: BTreeMap<String, f64>,
    pub best_micro_f1: f64,
}

impl Metrics {
    pub const P_AT: [usize; 3] = [100, 200, 300];

    pub fn compute(predictions: &[Prediction], gold: &BTreeSet<Fact>) -> Result<(Metrics, Vec<PRPoint>)> {
        let points = pr_curve(predictions, gold)?;
        let metrics = Metrics {
            auc: auc(&points),
            p_at: Self::P_AT
                .iter()
                .map(|&n| (n.to_string(), p_at_n(predictions, gold, n)))
                .collect(),
            best_micro_f1: best_micro_f1(&points),
        };
        Ok((metrics, points))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }
}

pub fn pr_csv(points: &[PRPoint]) -> String {
    let mut out = String::from("rank,score,precision,recall\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.rank, p.score, p.precision, p.recall);
    }
    out
}

/// Everything held-out evaluation produces for one test set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub points: Vec<PRPoint>,
    pub metrics: Metrics,
}

pub fn evaluate(bags: &BagSet, model: &AlignerModel, relations: &RelationVocab) -> Result<Evaluation> {
    let predictions = score_all(bags, model, relations)?;
    let gold = gold_facts(bags, relations);
    let (metrics, points) = Metrics::compute(&predictions, &gold)?;
    Ok(Evaluation {
        predictions,
        points,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnRemovalReport {
    pub removed: usize,
    pub before: Metrics,
    pub after: Metrics,
    pub random: Metrics,
}

impl FnRemovalReport {
    pub fn gain(&self) -> f64 {
        self.after.auc - self.before.auc
    }

    pub fn random_gain(&self) -> f64 {
        self.random.auc - self.before.auc
    }
}

fn without(samples: &[Sample], drop: &BTreeSet<String>) -> BagSet {
    BagSet::new(samples.iter().filter(|s| !drop.contains(&s.id)).cloned().collect())
}

/// The three test sets of the removal experiment: full, with the mined
/// false negatives removed, and with as many random NA sentences removed.
#[derive(Debug, Clone)]
pub struct RemovalSets {
    pub full: BagSet,
    pub mined_removed: BagSet,
    pub random_removed: BagSet,
    pub removed: usize,
}

pub fn removal_sets(test: &[Sample], mined: &MinedSet, relations: &RelationVocab, seed: u64) -> Result<RemovalSets> {
    let na: Vec<&str> = test
        .iter()
        .filter(|s| relations.is_na(s.ds_relation))
        .map(|s| s.id.as_str())
        .collect();
    let na_set: BTreeSet<&str> = na.iter().copied().collect();
    let drop = mined.ids();
    if let Some(stray) = drop.iter().find(|id| !na_set.contains(id.as_str())) {
        return Err(FanError::Consistency(format!(
            "mined id {stray} is not an NA sentence of the test set"
        )));
    }
    let mut rng = seeded_rng(seed, RngStream::RandomRemoval);
    let random_drop: BTreeSet<String> = sample(&mut rng, na.len(), drop.len())
        .into_iter()
        .map(|i| na[i].to_string())
        .collect();
    Ok(RemovalSets {
        full: BagSet::new(test.to_vec()),
        mined_removed: without(test, &drop),
        random_removed: without(test, &random_drop),
        removed: drop.len(),
    })
}

/// Compares metrics on the full test set, with the mined test FN removed,
/// and with an equal number of random NA sentences removed.
pub fn fn_removal_experiment(
    test: &[Sample],
    mined: &MinedSet,
    model: &AlignerModel,
    relations: &RelationVocab,
    seed: u64,
) -> Result<FnRemovalReport> {
    let sets = removal_sets(test, mined, relations, seed)?;
    Ok(FnRemovalReport {
        removed: sets.removed,
        before: evaluate(&sets.full, model, relations)?.metrics,
        after: evaluate(&sets.mined_removed, model, relations)?.metrics,
        random: evaluate(&sets.random_removed, model, relations)?.metrics,
    })
}

/// Pseudo-label accuracy over the mined bags that hold a planted false negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelQuality {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// A bag counts when one of its sentences is planted; its true relation is
/// that of the first planted member.
pub fn pseudo_label_quality(labels: &[PseudoLabel], mined: &BagSet, truth: &GroundTruth) -> PseudoLabelQuality {
    let index: BTreeMap<&BagKey, usize> = mined.bags.iter().enumerate().map(|(i, b)| (&b.key, i)).collect();
    let (mut correct, mut total) = (0, 0);
    for label in labels {
        let Some(&b) = index.get(&label.bag) else {
            continue;
        };
        let planted = mined
            .sentences(b)
            .find_map(|s| truth.get(&s.id).filter(|&t| t != s.ds_relation));
        if let Some(t) = planted {
            total += 1;
            correct += usize::from(t == label.relation);
        }
    }
    PseudoLabelQuality {
        correct,
        total,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
    }
}

/// Bag representations for inspection: each bag attended with the query of
/// its best relation. Columns: `bag,ds_relation,best_relation,confidence,g0..`.
pub fn bag_rep_csv(bags: &BagSet, model: &AlignerModel, relations: &RelationVocab) -> Result<String> {
    let dim = model.queries.value.row_len();
    let mut out = String::from("bag,ds_relation,best_relation,confidence");
    for k in 0..dim {
        let _ = write!(out, ",g{k}");
    }
    out.push('\n');
    for b in 0..bags.len() {
        let reps = bags
            .sentences(b)
            .map(|s| encode(s, &model.encoder))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
        let (r, conf, rep, _) = best_relation(&views, model, relations)?;
        let key = &bags.bags[b].key;
        let _ = write!(
            out,
            "{key},{},{},{conf}",
            relations.name(key.relation),
            relations.name(r)
        );
        for x in &rep.g {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    Ok(out)
}
