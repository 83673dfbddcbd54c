//! Stage two: selective-attention bag encoder, relation classifier,
//! gradient reversal, discriminator, and the adversarial, contrastive and
//! classification losses that train them jointly.
//!
//! Losses are defined twice: as plain functions of their inputs
//! ([`cls_loss`], [`gen_loss`], [`disc_loss`], [`contrastive_loss`],
//! [`total_loss`]) and as the model-level pass ([`forward`] and
//! [`backward`]) that composes them over a mini-batch of bags.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BagKey, BagSet, RelationVocab};
use crate::encoder::{backward_sentence, encode, encode_sentence, EncoderConfig, EncoderParams, SentenceTrace};
use crate::error::{FanError, Result};
use crate::miner::PROB_FLOOR;
use crate::numerics::{
    affine, affine_backward, cosine_gradients, cosine_similarity, dot, norm, sigmoid, softmax, softmax_backward, Param,
    ParamKind, ParamSet, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignerModel {
    pub encoder: EncoderParams,
    /// One attention query per relation, `[l × 3m]`.
    pub queries: Param,
    pub cls_weight: Param,
    pub cls_bias: Param,
    pub disc_weight: Param,
    pub disc_bias: Param,
}

impl AlignerModel {
    pub fn zeros(config: &EncoderConfig, vocab_size: usize, relation_count: usize) -> Self {
        let dim = config.output_dim();
        AlignerModel {
            encoder: EncoderParams::zeros(config, vocab_size),
            queries: Param::zeros(&[relation_count, dim], ParamKind::Weight),
            cls_weight: Param::zeros(&[relation_count, dim], ParamKind::Weight),
            cls_bias: Param::zeros(&[relation_count], ParamKind::Bias),
            disc_weight: Param::zeros(&[1, dim], ParamKind::Weight),
            disc_bias: Param::zeros(&[1], ParamKind::Bias),
        }
    }

    pub fn relation_count(&self) -> usize {
        self.queries.value.rows()
    }
}

impl ParamSet for AlignerModel {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = self.encoder.named();
        out.extend([
            ("aligner.queries".to_string(), &self.queries),
            ("aligner.cls_weight".to_string(), &self.cls_weight),
            ("aligner.cls_bias".to_string(), &self.cls_bias),
            ("aligner.disc_weight".to_string(), &self.disc_weight),
            ("aligner.disc_bias".to_string(), &self.disc_bias),
        ]);
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = self.encoder.named_mut();
        out.extend([
            ("aligner.queries".to_string(), &mut self.queries),
            ("aligner.cls_weight".to_string(), &mut self.cls_weight),
            ("aligner.cls_bias".to_string(), &mut self.cls_bias),
            ("aligner.disc_weight".to_string(), &mut self.disc_weight),
            ("aligner.disc_bias".to_string(), &mut self.disc_bias),
        ]);
        out
    }
}

/// Attention-weighted bag representation.
#[derive(Debug, Clone, PartialEq)]
pub struct BagRep {
    pub g: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// `α = softmax(v_j · query)`, `g = Σ α_j v_j`.
pub fn attend_bag(reps: &[&[f64]], query: &[f64]) -> Result<BagRep> {
    if reps.is_empty() {
        return Err(FanError::Dimension("attention over an empty bag".into()));
    }
    if let Some(bad) = reps.iter().find(|v| v.len() != query.len()) {
        return Err(FanError::Dimension(format!(
            "sentence representation of length {} against query of length {}",
            bad.len(),
            query.len()
        )));
    }
    let scores: Vec<f64> = reps.iter().map(|v| dot(v, query)).collect();
    let alpha = softmax(&scores)?;
    let mut g = vec![0.0; query.len()];
    for (v, &a) in reps.iter().zip(&alpha) {
        for (gi, &vi) in g.iter_mut().zip(v.iter()) {
            *gi += a * vi;
        }
    }
    Ok(BagRep { g, alpha })
}

/// Reverse rule for [`attend_bag`]: accumulates into `dreps` and `dquery`.
pub fn attend_backward(
    reps: &[&[f64]],
    query: &[f64],
    rep: &BagRep,
    dg: &[f64],
    dreps: &mut [Vec<f64>],
    dquery: &mut [f64],
) {
    let dalpha: Vec<f64> = reps.iter().map(|v| dot(dg, v)).collect();
    let dscores = softmax_backward(&rep.alpha, &dalpha);
    for (j, v) in reps.iter().enumerate() {
        let a = rep.alpha[j];
        let ds = dscores[j];
        for ((d, &gi), &qi) in dreps[j].iter_mut().zip(dg).zip(query) {
            *d += a * gi + ds * qi;
        }
        for (dq, &vi) in dquery.iter_mut().zip(v.iter()) {
            *dq += ds * vi;
        }
    }
}

/// `softmax(W_c·g + b_c)`.
pub fn classify(g: &[f64], weight: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    softmax(&affine(g, weight, bias)?)
}

/// Mean of `−log P(gold | g)` over the batch, probabilities clamped below at 1e-12.
pub fn cls_loss(posteriors: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
    if posteriors.is_empty() || posteriors.len() != gold.len() {
        return Err(FanError::Dimension(format!(
            "classification loss over {} posteriors and {} labels",
            posteriors.len(),
            gold.len()
        )));
    }
    let total: f64 = posteriors
        .iter()
        .zip(gold)
        .map(|(p, &y)| -p[y].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln())
        .sum();
    Ok(total / gold.len() as f64)
}

/// Gradient reversal: the identity going forward.
pub fn grl(g: &[f64]) -> Vec<f64> {
    g.to_vec()
}

/// Gradient reversal going backward: flips the incoming gradient's sign.
pub fn grl_backward(dg: &[f64]) -> Vec<f64> {
    dg.iter().map(|x| -x).collect()
}

/// `σ(W_d·g + b_d)`.
pub fn discriminate(g: &[f64], weight: &Tensor, bias: &[f64]) -> Result<f64> {
    Ok(sigmoid(affine(g, weight, bias)?[0]))
}

/// Generator objective over discriminator outputs on M-bags: `−mean D(G(s))`.
/// An empty batch contributes 0.
pub fn gen_loss(d_mined: &[f64]) -> f64 {
    if d_mined.is_empty() {
        return 0.0;
    }
    -d_mined.iter().sum::<f64>() / d_mined.len() as f64
}

/// Discriminator objective `−mean_P D(s) + mean_M D(G(s))`; 0 if either side is empty.
pub fn disc_loss(d_pos: &[f64], d_mined: &[f64]) -> f64 {
    if d_pos.is_empty() || d_mined.is_empty() {
        return 0.0;
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    -mean(d_pos) + mean(d_mined)
}

/// `(max(τ − cos, 0))²`
pub fn dist_pos(cos: f64, tau: f64) -> f64 {
    (tau - cos).max(0.0).powi(2)
}

/// `1 − (max(cos, 0))²`
pub fn dist_neg(cos: f64) -> f64 {
    1.0 - cos.max(0.0).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// `dL/dg` for every input representation.
    pub grads: Vec<Vec<f64>>,
}

/// Batch-scoped contrastive loss.
///
/// For each bag, the hardest positive (largest `dist₊` among other bags of
/// the same relation) is pulled in and the hardest negative (smallest
/// `dist₋` among bags of other relations) pushed out. A missing side drops
/// its term; zero vectors take no part. The result is averaged over all bags.
pub fn contrastive_loss(reps: &[Vec<f64>], relations: &[usize], tau: f64) -> Result<ContrastiveOutput> {
    if reps.len() != relations.len() {
        return Err(FanError::Dimension(format!(
            "{} representations with {} relations",
            reps.len(),
            relations.len()
        )));
    }
    let n = reps.len();
    let mut out = ContrastiveOutput {
        loss: 0.0,
        grads: reps.iter().map(|g| vec![0.0; g.len()]).collect(),
    };
    if n < 2 {
        return Ok(out);
    }
    let live: Vec<bool> = reps.iter().map(|g| norm(g) > 0.0).collect();
    let scale = 1.0 / n as f64;
    for i in (0..n).filter(|&i| live[i]) {
        let mut hardest_pos: Option<(usize, f64, f64)> = None;
        let mut hardest_neg: Option<(usize, f64, f64)> = None;
        for j in (0..n).filter(|&j| j != i && live[j]) {
            let cos = cosine_similarity(&reps[i], &reps[j])?;
            if relations[j] == relations[i] {
                let d = dist_pos(cos, tau);
                if hardest_pos.is_none_or(|(_, best, _)| d > best) {
                    hardest_pos = Some((j, d, cos));
                }
            } else {
                let d = dist_neg(cos);
                if hardest_neg.is_none_or(|(_, best, _)| d < best) {
                    hardest_neg = Some((j, d, cos));
                }
            }
        }
        if let Some((j, d, cos)) = hardest_pos {
            out.loss += d * scale;
            let dcos = -2.0 * (tau - cos).max(0.0) * scale;
            add_cos_grad(&mut out.grads, &reps[i], &reps[j], i, j, dcos)?;
        }
        if let Some((j, d, cos)) = hardest_neg {
            out.loss -= d * scale;
            // d(−dist₋)/dcos = 2·max(cos, 0)
            let dcos = 2.0 * cos.max(0.0) * scale;
            add_cos_grad(&mut out.grads, &reps[i], &reps[j], i, j, dcos)?;
        }
    }
    Ok(out)
}

fn add_cos_grad(grads: &mut [Vec<f64>], a: &[f64], b: &[f64], i: usize, j: usize, dcos: f64) -> Result<()> {
    if dcos == 0.0 {
        return Ok(());
    }
    let (da, db) = cosine_gradients(a, b)?;
    grads[i].iter_mut().zip(&da).for_each(|(g, d)| *g += dcos * d);
    grads[j].iter_mut().zip(&db).for_each(|(g, d)| *g += dcos * d);
    Ok(())
}

/// Loss weights and margins of the joint objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Objective {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Use `log D` terms in the adversarial losses instead of raw `D`.
    pub log_adversarial: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            alpha: 0.01,
            beta: 0.01,
            gamma: 1e-4,
            tau: 1.0,
            log_adversarial: false,
        }
    }
}

/// `L = L_cls + α·L_g + β·L_d + γ·L_ctra`.
pub fn total_loss(cls: f64, gen: f64, disc: f64, ctra: f64, objective: &Objective) -> f64 {
    cls + objective.alpha * gen + objective.beta * disc + objective.gamma * ctra
}

/// How gradients are routed during backward.
///
/// `Training` is what the optimizer follows: the discriminator term reaches
/// the bag encoder through the reversal layer, and the generator term does
/// not move the discriminator head. `Exact` is the plain gradient of the
/// scalar objective, which is what finite differences can certify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradFlow {
    Training,
    Exact,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub gen: f64,
    pub disc: f64,
    pub ctra: f64,
    pub total: f64,
}

/// Bags drawn for one optimisation step: indices into D′ and into M.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub labeled: Vec<usize>,
    pub mined: Vec<usize>,
}

struct BagPass {
    traces: Vec<SentenceTrace>,
    relation: usize,
    rep: BagRep,
    logits_probs: Vec<f64>,
    disc: Option<f64>,
}

/// Forward state of one mini-batch, kept for [`backward`].
pub struct Forward {
    labeled: Vec<BagPass>,
    mined: Vec<BagPass>,
    positive: Vec<usize>,
    contrastive: Option<ContrastiveOutput>,
    pub losses: LossBreakdown,
}

impl Forward {
    /// Relation whose query attended each mined bag.
    pub fn mined_relations(&self) -> Vec<usize> {
        self.mined.iter().map(|b| b.relation).collect()
    }

    /// Representation of each labeled bag, in batch order.
    pub fn labeled_reps(&self) -> Vec<&[f64]> {
        self.labeled.iter().map(|b| b.rep.g.as_slice()).collect()
    }
}

fn encode_bag(
    bags: &BagSet,
    bag: usize,
    model: &AlignerModel,
    dropout: &mut Option<(&mut ChaCha8Rng, f64)>,
) -> Result<Vec<SentenceTrace>> {
    bags.sentences(bag)
        .map(|s| {
            let drop = dropout.as_mut().map(|(rng, rate)| (&mut **rng, *rate));
            encode_sentence(s, &model.encoder, drop)
        })
        .collect()
}

/// Picks the relation whose own-query posterior is largest (lowest index on
/// ties); returns it with that posterior and the matching representation.
pub fn best_relation(
    reps: &[&[f64]],
    model: &AlignerModel,
    relations: &RelationVocab,
) -> Result<(usize, f64, BagRep, Vec<f64>)> {
    let mut best: Option<(usize, f64, BagRep, Vec<f64>)> = None;
    for r in relations.predefined() {
        let rep = attend_bag(reps, model.queries.value.row(r))?;
        let probs = classify(&rep.g, &model.cls_weight.value, model.cls_bias.value.data())?;
        if best.as_ref().is_none_or(|(_, p, _, _)| probs[r] > *p) {
            best = Some((r, probs[r], rep, probs));
        }
    }
    best.ok_or_else(|| FanError::Config("relation vocabulary has no predefined relation".into()))
}

/// Forward pass over a mixed batch; dropout applies when an RNG is given.
pub fn forward(
    model: &AlignerModel,
    dprime: &BagSet,
    mined: &BagSet,
    batch: &Batch,
    relations: &RelationVocab,
    objective: &Objective,
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<Forward> {
    if batch.labeled.is_empty() {
        return Err(FanError::Dimension("stage-two batch has no labeled bags".into()));
    }
    let mut labeled = Vec::with_capacity(batch.labeled.len());
    for &b in &batch.labeled {
        let traces = encode_bag(dprime, b, model, &mut dropout)?;
        let relation = dprime.bags[b].key.relation;
        let reps: Vec<&[f64]> = traces.iter().map(|t| t.v.as_slice()).collect();
        let rep = attend_bag(&reps, model.queries.value.row(relation))?;
        let probs = classify(&rep.g, &model.cls_weight.value, model.cls_bias.value.data())?;
        labeled.push(BagPass {
            traces,
            relation,
            rep,
            logits_probs: probs,
            disc: None,
        });
    }
    let mut mined_passes = Vec::with_capacity(batch.mined.len());
    for &b in &batch.mined {
        let traces = encode_bag(mined, b, model, &mut dropout)?;
        let reps: Vec<&[f64]> = traces.iter().map(|t| t.v.as_slice()).collect();
        let (relation, _, rep, probs) = best_relation(&reps, model, relations)?;
        mined_passes.push(BagPass {
            traces,
            relation,
            rep,
            logits_probs: probs,
            disc: None,
        });
    }

    let positive: Vec<usize> = (0..labeled.len())
        .filter(|&i| !relations.is_na(labeled[i].relation))
        .collect();
    let mut losses = LossBreakdown::default();
    let posteriors: Vec<Vec<f64>> = labeled.iter().map(|b| b.logits_probs.clone()).collect();
    let gold: Vec<usize> = labeled.iter().map(|b| b.relation).collect();
    losses.cls = cls_loss(&posteriors, &gold)?;

    let dw = &model.disc_weight.value;
    let db = model.disc_bias.value.data();
    if !mined_passes.is_empty() {
        for pass in &mut mined_passes {
            pass.disc = Some(discriminate(&grl(&pass.rep.g), dw, db)?);
        }
        let d_mined: Vec<f64> = mined_passes.iter().filter_map(|p| p.disc).collect();
        losses.gen = adversarial_gen(&d_mined, objective.log_adversarial);
        if !positive.is_empty() {
            for &i in &positive {
                labeled[i].disc = Some(discriminate(&grl(&labeled[i].rep.g), dw, db)?);
            }
            let d_pos: Vec<f64> = positive.iter().filter_map(|&i| labeled[i].disc).collect();
            losses.disc = adversarial_disc(&d_pos, &d_mined, objective.log_adversarial);
        }
    }

    let contrastive = if positive.len() >= 2 {
        let reps: Vec<Vec<f64>> = positive.iter().map(|&i| labeled[i].rep.g.clone()).collect();
        let rels: Vec<usize> = positive.iter().map(|&i| labeled[i].relation).collect();
        Some(contrastive_loss(&reps, &rels, objective.tau)?)
    } else {
        None
    };
    losses.ctra = contrastive.as_ref().map_or(0.0, |c| c.loss);
    losses.total = total_loss(losses.cls, losses.gen, losses.disc, losses.ctra, objective);
    if !losses.total.is_finite() {
        return Err(FanError::Numeric(format!("stage-two loss became {}", losses.total)));
    }
    Ok(Forward {
        labeled,
        mined: mined_passes,
        positive,
        contrastive,
        losses,
    })
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn adversarial_gen(d_mined: &[f64], log: bool) -> f64 {
    if !log {
        return gen_loss(d_mined);
    }
    if d_mined.is_empty() {
        return 0.0;
    }
    -d_mined.iter().map(|&d| clamp_prob(d).ln()).sum::<f64>() / d_mined.len() as f64
}

fn adversarial_disc(d_pos: &[f64], d_mined: &[f64], log: bool) -> f64 {
    if !log {
        return disc_loss(d_pos, d_mined);
    }
    if d_pos.is_empty() || d_mined.is_empty() {
        return 0.0;
    }
    let pos = -d_pos.iter().map(|&d| clamp_prob(d).ln()).sum::<f64>() / d_pos.len() as f64;
    let neg = -d_mined.iter().map(|&d| (1.0 - clamp_prob(d)).ln()).sum::<f64>() / d_mined.len() as f64;
    pos + neg
}

/// `d(term)/dD` for one discriminator output.
fn adversarial_slope(d: f64, count: usize, sign: f64, log: bool, complement: bool) -> f64 {
    let n = count as f64;
    if !log {
        return sign / n;
    }
    let c = clamp_prob(d);
    if c != d {
        return 0.0;
    }
    if complement {
        // −log(1 − D)
        1.0 / (n * (1.0 - d))
    } else {
        // −log D
        -1.0 / (n * d)
    }
}

/// Accumulates gradients of the batch objective into `model`.
pub fn backward(fwd: &Forward, model: &mut AlignerModel, objective: &Objective, flow: GradFlow) {
    let dim = model.queries.value.row_len();
    let mut dg_labeled: Vec<Vec<f64>> = fwd.labeled.iter().map(|_| vec![0.0; dim]).collect();
    let mut dg_mined: Vec<Vec<f64>> = fwd.mined.iter().map(|_| vec![0.0; dim]).collect();

    // classification
    let scale = 1.0 / fwd.labeled.len() as f64;
    for (pass, dg) in fwd.labeled.iter().zip(&mut dg_labeled) {
        let y = pass.relation;
        let p = &pass.logits_probs;
        if clamp_prob(p[y]) != p[y] {
            continue;
        }
        let dlogits: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(r, &pr)| (pr - f64::from(u8::from(r == y))) * scale)
            .collect();
        affine_backward(
            &pass.rep.g,
            &model.cls_weight.value,
            &dlogits,
            Some(dg),
            Some(&mut model.cls_weight.grad),
            Some(model.cls_bias.grad.data_mut()),
        );
    }

    let log = objective.log_adversarial;
    let reverse = flow == GradFlow::Training;
    if !fwd.mined.is_empty() {
        let m = fwd.mined.len();
        // generator term
        for (pass, dg) in fwd.mined.iter().zip(&mut dg_mined) {
            let d = pass.disc.expect("mined bags are discriminated");
            let dz = objective.alpha * adversarial_slope(d, m, -1.0, log, false) * d * (1.0 - d);
            let head = if flow == GradFlow::Training {
                (None, None)
            } else {
                (Some(&mut model.disc_weight.grad), Some(model.disc_bias.grad.data_mut()))
            };
            affine_backward(&pass.rep.g, &model.disc_weight.value, &[dz], Some(dg), head.0, head.1);
        }
        // discriminator term, reversed on its way into the bag encoder
        if !fwd.positive.is_empty() {
            let p = fwd.positive.len();
            let sides = fwd
                .positive
                .iter()
                .map(|&i| (&fwd.labeled[i], i, false))
                .chain(fwd.mined.iter().enumerate().map(|(i, pass)| (pass, i, true)));
            for (pass, i, is_mined) in sides {
                let d = pass.disc.expect("discriminated");
                let slope = if is_mined {
                    adversarial_slope(d, m, 1.0, log, true)
                } else {
                    adversarial_slope(d, p, -1.0, log, false)
                };
                let dz = objective.beta * slope * d * (1.0 - d);
                let mut dgrl = vec![0.0; dim];
                affine_backward(
                    &pass.rep.g,
                    &model.disc_weight.value,
                    &[dz],
                    Some(&mut dgrl),
                    Some(&mut model.disc_weight.grad),
                    Some(model.disc_bias.grad.data_mut()),
                );
                let dgrl = if reverse { grl_backward(&dgrl) } else { dgrl };
                let target = if is_mined { &mut dg_mined[i] } else { &mut dg_labeled[i] };
                target.iter_mut().zip(&dgrl).for_each(|(t, d)| *t += d);
            }
        }
    }

    if let Some(ctra) = &fwd.contrastive {
        for (k, &i) in fwd.positive.iter().enumerate() {
            dg_labeled[i]
                .iter_mut()
                .zip(&ctra.grads[k])
                .for_each(|(t, d)| *t += objective.gamma * d);
        }
    }

    for (pass, dg) in fwd
        .labeled
        .iter()
        .zip(&dg_labeled)
        .chain(fwd.mined.iter().zip(&dg_mined))
    {
        bag_backward(pass, dg, model);
    }
}

fn bag_backward(pass: &BagPass, dg: &[f64], model: &mut AlignerModel) {
    if dg.iter().all(|&x| x == 0.0) {
        return;
    }
    let reps: Vec<&[f64]> = pass.traces.iter().map(|t| t.v.as_slice()).collect();
    let mut dreps: Vec<Vec<f64>> = reps.iter().map(|v| vec![0.0; v.len()]).collect();
    let query = model.queries.value.row(pass.relation).to_vec();
    attend_backward(
        &reps,
        &query,
        &pass.rep,
        dg,
        &mut dreps,
        model.queries.grad.row_mut(pass.relation),
    );
    for (trace, dv) in pass.traces.iter().zip(&dreps) {
        backward_sentence(trace, dv, &mut model.encoder);
    }
}

/// Forward-only objective without dropout, for gradient checking.
pub fn objective_value(
    model: &AlignerModel,
    dprime: &BagSet,
    mined: &BagSet,
    batch: &Batch,
    relations: &RelationVocab,
    objective: &Objective,
) -> Result<f64> {
    Ok(forward(model, dprime, mined, batch, relations, objective, None)?
        .losses
        .total)
}

/// Relation assigned to a mined bag, with the classifier posterior as confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub bag: BagKey,
    pub relation: usize,
    pub confidence: f64,
}

/// Pseudo-labels every bag of M (inference mode).
pub fn assign_pseudo_labels(
    mined: &BagSet,
    model: &AlignerModel,
    relations: &RelationVocab,
) -> Result<Vec<PseudoLabel>> {
    (0..mined.len())
        .map(|b| {
            let reps = mined
                .sentences(b)
                .map(|s| encode(s, &model.encoder))
                .collect::<Result<Vec<_>>>()?;
            let views: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
            let (relation, confidence, _, _) = best_relation(&views, model, relations)?;
            Ok(PseudoLabel {
                bag: mined.bags[b].key.clone(),
                relation,
                confidence,
            })
        })
        .collect()
}
