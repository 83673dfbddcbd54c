//! Stage one: a binary noise filter trained briefly on P versus N, then
//! used to pull probable false negatives out of the N/A set.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{GroundTruth, RelationVocab, Sample};
use crate::encoder::{backward_sentence, encode, encode_sentence, EncoderConfig, EncoderParams};
use crate::error::{FanError, Result};
use crate::numerics::{affine, affine_backward, sigmoid, Param, ParamKind, ParamSet};
use crate::trainer::{init_params, seeded_rng, sgd_step, RngStream, TrainConfig};

/// Probability clamp shared by the cross-entropy losses.
pub const PROB_FLOOR: f64 = 1e-12;

/// Encoder plus the logistic head `o = σ(W_f·v + b_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub encoder: EncoderParams,
    pub weight: Param,
    pub bias: Param,
}

impl FilterModel {
    pub fn zeros(config: &EncoderConfig, vocab_size: usize) -> Self {
        FilterModel {
            encoder: EncoderParams::zeros(config, vocab_size),
            weight: Param::zeros(&[1, config.output_dim()], ParamKind::Weight),
            bias: Param::zeros(&[1], ParamKind::Bias),
        }
    }
}

impl ParamSet for FilterModel {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = self.encoder.named();
        out.push(("filter.weight".into(), &self.weight));
        out.push(("filter.bias".into(), &self.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = self.encoder.named_mut();
        out.push(("filter.weight".into(), &mut self.weight));
        out.push(("filter.bias".into(), &mut self.bias));
        out
    }
}

/// `f(r)`: 0 for the no-relation label, 1 for any predefined relation.
pub fn binary_map(relation: usize, relations: &RelationVocab) -> u8 {
    u8::from(!relations.is_na(relation))
}

/// Probability that `sample` belongs to P (inference mode).
pub fn filter_score(sample: &Sample, model: &FilterModel) -> Result<f64> {
    let v = encode(sample, &model.encoder)?;
    let z = affine(&v, &model.weight.value, model.bias.value.data())?;
    Ok(sigmoid(z[0]))
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-12, 1 − 1e-12]`.
pub fn filter_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(FanError::Dimension(format!(
            "filter loss over {} probabilities and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let total: f64 = probs.iter().zip(labels).map(|(&o, &y)| bce(o, y)).sum();
    Ok(total / probs.len() as f64)
}

fn bce(o: f64, y: u8) -> f64 {
    let o = o.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if y == 1 {
        -o.ln()
    } else {
        -(1.0 - o).ln()
    }
}

/// Forward-only batch loss; dropout is never applied here.
pub fn filter_objective(model: &FilterModel, batch: &[&Sample], labels: &[u8]) -> Result<f64> {
    let probs = batch
        .iter()
        .map(|s| filter_score(s, model))
        .collect::<Result<Vec<_>>>()?;
    filter_loss(&probs, labels)
}

/// Batch loss with gradients accumulated into `model`.
pub fn filter_loss_and_grad(
    model: &mut FilterModel,
    batch: &[&Sample],
    labels: &[u8],
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<f64> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(FanError::Dimension(format!(
            "filter batch of {} samples with {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (sample, &y) in batch.iter().zip(labels) {
        let drop = dropout.as_mut().map(|(rng, rate)| (&mut **rng, *rate));
        let trace = encode_sentence(sample, &model.encoder, drop)?;
        let z = affine(&trace.v, &model.weight.value, model.bias.value.data())?[0];
        let o = sigmoid(z);
        total += bce(o, y);
        // d/dz of the clamped BCE is (o − y) inside the clamp and 0 outside.
        let dz = if (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&o) {
            (o - f64::from(y)) * scale
        } else {
            0.0
        };
        let mut dv = vec![0.0; trace.v.len()];
        affine_backward(
            &trace.v,
            &model.weight.value,
            &[dz],
            Some(&mut dv),
            Some(&mut model.weight.grad),
            Some(model.bias.grad.data_mut()),
        );
        backward_sentence(&trace, &dv, &mut model.encoder);
    }
    Ok(total * scale)
}

/// One epoch of filter training.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub mean_score_p: f64,
    pub mean_score_n: f64,
    /// Counts of N-set scores in ten equal-width bins over `[0, 1]`.
    pub n_histogram: [usize; 10],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterLog {
    pub epochs: Vec<FilterEpoch>,
}

impl FilterLog {
    /// CSV columns: `epoch,filter_loss,mean_score_P,mean_score_N`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,filter_loss,mean_score_P,mean_score_N\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.loss, e.mean_score_p, e.mean_score_n
            ));
        }
        write_text(path, &out)
    }

    /// CSV columns: `epoch,bin_low,bin_high,count` for the N-set score histogram.
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,bin_low,bin_high,count\n");
        for e in &self.epochs {
            for (b, count) in e.n_histogram.iter().enumerate() {
                out.push_str(&format!(
                    "{},{:.1},{:.1},{}\n",
                    e.epoch,
                    b as f64 / 10.0,
                    (b + 1) as f64 / 10.0,
                    count
                ));
            }
        }
        write_text(path, &out)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FanError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| FanError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| FanError::io(path, e))
}

fn histogram(scores: &[f64]) -> [usize; 10] {
    let mut bins = [0; 10];
    for &s in scores {
        bins[((s * 10.0) as usize).min(9)] += 1;
    }
    bins
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Trains encoder + filter head on `f(r)` labels for `config.filter_epochs`
/// epochs. Every epoch keeps all of P and a fresh random subset of N of
/// size `|P|`, so the two classes are balanced.
pub fn train_filter(
    samples: &[Sample],
    relations: &RelationVocab,
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<(FilterModel, FilterLog)> {
    config.validate()?;
    let labels: Vec<u8> = samples.iter().map(|s| binary_map(s.ds_relation, relations)).collect();
    let positives: Vec<usize> = (0..samples.len()).filter(|&i| labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..samples.len()).filter(|&i| labels[i] == 0).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(FanError::Config(format!(
            "filter training needs both classes, got |P| = {} and |N| = {}",
            positives.len(),
            negatives.len()
        )));
    }

    let mut model = FilterModel::zeros(&config.encoder, vocab_size);
    init_params(&mut model, &mut seeded_rng(config.seed, RngStream::FilterInit));
    let mut rng = seeded_rng(config.seed, RngStream::FilterTrain);
    let mut log = FilterLog::default();

    for epoch in 1..=config.filter_epochs {
        let mut negs = negatives.clone();
        negs.shuffle(&mut rng);
        negs.truncate(positives.len());
        let mut order: Vec<usize> = positives.iter().copied().chain(negs).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            model.zero_grad();
            let loss = filter_loss_and_grad(&mut model, &batch, &ys, Some((&mut rng, config.encoder.dropout)))?;
            if !loss.is_finite() {
                return Err(FanError::Numeric(format!("filter loss became {loss} in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            sgd_step(&mut model, config.learning_rate, config.weight_decay)?;
            model.check_finite()?;
        }

        let score =
            |idx: &[usize]| -> Result<Vec<f64>> { idx.iter().map(|&i| filter_score(&samples[i], &model)).collect() };
        let p_scores = score(&positives)?;
        let n_scores = score(&negatives)?;
        log.epochs.push(FilterEpoch {
            epoch,
            loss: loss_sum / order.len() as f64,
            mean_score_p: mean(&p_scores),
            mean_score_n: mean(&n_scores),
            n_histogram: histogram(&n_scores),
        });
    }
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedEntry {
    pub id: String,
    pub score: f64,
}

/// The false-negative candidate set M.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedSet {
    pub entries: Vec<MinedEntry>,
    pub threshold: f64,
}

impl MinedSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }
}

/// Scores every candidate from N; those with `score ≥ θ` form M, the rest N′.
pub fn mine(candidates: &[Sample], model: &FilterModel, threshold: f64) -> Result<(MinedSet, Vec<String>)> {
    let scores = candidates
        .iter()
        .map(|s| filter_score(s, model))
        .collect::<Result<Vec<_>>>()?;
    mine_scored(candidates, &scores, threshold)
}

/// Thresholding step of [`mine`] over precomputed scores.
pub fn mine_scored(candidates: &[Sample], scores: &[f64], threshold: f64) -> Result<(MinedSet, Vec<String>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(FanError::Config(format!(
            "mining threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let mut mined = MinedSet {
        entries: Vec::new(),
        threshold,
    };
    let mut rest = Vec::new();
    for (s, &score) in candidates.iter().zip(scores) {
        if score >= threshold {
            mined.entries.push(MinedEntry {
                id: s.id.clone(),
                score,
            });
        } else {
            rest.push(s.id.clone());
        }
    }
    Ok((mined, rest))
}

/// Mining quality against known planted false negatives.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MiningQuality {
    pub precision: f64,
    pub recall: f64,
    /// Fraction of N that is planted.
    pub base_rate: f64,
    pub mined: usize,
    pub planted: usize,
}

pub fn mining_quality(mined: &MinedSet, candidates: &[Sample], truth: &GroundTruth) -> MiningQuality {
    let planted = truth.planted(candidates);
    let hits = mined.entries.iter().filter(|e| planted.contains(&e.id)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    MiningQuality {
        precision: ratio(hits, mined.len()),
        recall: ratio(hits, planted.len()),
        base_rate: ratio(planted.len(), candidates.len()),
        mined: mined.len(),
        planted: planted.len(),
    }
}
