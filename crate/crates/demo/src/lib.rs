//! Browser demo. A small synthetic corpus is generated and the noise filter
//! trained once per session; the page then explores the mining threshold,
//! the removal experiment and the contrastive distance profile.
//!
//! Every exported method returns a JSON string so the page needs no glue
//! beyond `JSON.parse`.

use fan_core::aligner::{dist_neg, dist_pos, AlignerModel};
use fan_core::corpus::{retokenize, synth_generate, BagSet, Sample, SynthConfig, SynthCorpus};
use fan_core::evalkit::{evaluate, removal_sets, Evaluation};
use fan_core::miner::{filter_score, mine_scored, mining_quality, MiningQuality};
use fan_core::trainer::{run_stage1, run_stage2, StageOne, TrainConfig};
use fan_core::{FanError, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_CURVE_POINTS: usize = 150;
const BINS: usize = 20;

/// Demo scale: about half the default corpus and a narrow encoder, so a
/// session starts in well under a second. With fewer steps per epoch the
/// filter needs more epochs before it fits the clean patterns.
fn demo_configs(seed: u64, fn_rate: f64) -> (SynthConfig, TrainConfig) {
    let synth = SynthConfig {
        seed,
        fn_rate,
        sentences_per_relation: 60,
        na_sentences: 360,
        ..SynthConfig::default()
    };
    let mut train = TrainConfig {
        seed,
        epochs: 15,
        filter_epochs: 16,
        ..TrainConfig::default()
    };
    train.encoder.word_dim = 24;
    train.encoder.filters_per_size = 4;
    (synth, train)
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub sentences: usize,
    pub na_sentences: usize,
    pub planted: usize,
    pub test_sentences: usize,
    pub filter_loss: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MiningView {
    pub theta: f64,
    pub quality: MiningQuality,
    /// Filter-score histograms over the training N/A set, `BINS` equal bins on [0, 1].
    pub planted_hist: Vec<usize>,
    pub genuine_hist: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub auc: f64,
    /// `(recall, precision)` pairs, thinned for plotting.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RemovalView {
    pub theta: f64,
    pub removed: usize,
    pub before: Curve,
    pub after: Curve,
    pub random: Curve,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastiveProfile {
    pub tau: f64,
    pub cos: Vec<f64>,
    pub dist_pos: Vec<f64>,
    pub dist_neg: Vec<f64>,
}

#[wasm_bindgen]
pub struct Session {
    seed: u64,
    train: SynthCorpus,
    test: SynthCorpus,
    config: TrainConfig,
    stage1: StageOne,
    /// Training N/A sentences with their filter scores.
    train_na: Vec<Sample>,
    train_scores: Vec<f64>,
    test_na: Vec<Sample>,
    test_scores: Vec<f64>,
    aligner: Option<AlignerModel>,
}

fn na_with_scores(corpus: &SynthCorpus, stage1: &StageOne) -> Result<(Vec<Sample>, Vec<f64>)> {
    let na: Vec<Sample> = corpus
        .samples
        .iter()
        .filter(|s| corpus.relations.is_na(s.ds_relation))
        .cloned()
        .collect();
    let scores = na
        .iter()
        .map(|s| filter_score(s, &stage1.filter))
        .collect::<Result<Vec<_>>>()?;
    Ok((na, scores))
}

fn histogram(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let mut bins = vec![0; BINS];
    for s in scores {
        bins[((s * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    bins
}

fn curve(e: &Evaluation) -> Curve {
    let step = e.points.len().div_ceil(MAX_CURVE_POINTS).max(1);
    let mut points: Vec<(f64, f64)> = e.points.iter().step_by(step).map(|p| (p.recall, p.precision)).collect();
    if let Some(last) = e.points.last().filter(|_| !(e.points.len() - 1).is_multiple_of(step)) {
        points.push((last.recall, last.precision));
    }
    Curve {
        auc: e.metrics.auc,
        points,
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(FanError::Config(format!("theta must lie in (0, 1), got {theta}")))
    }
}

impl Session {
    /// Generates the corpora and runs stage one.
    pub fn create(seed: u64, fn_rate: f64) -> Result<Session> {
        let (synth, config) = demo_configs(seed, fn_rate);
        synth.validate()?;
        let train = synth_generate(&synth)?;
        let mut test = synth_generate(&synth.held_out())?;
        retokenize(&mut test.samples, &train.tokens);
        let stage1 = run_stage1(&train.samples, &train.relations, train.tokens.len(), &config)?;
        let (train_na, train_scores) = na_with_scores(&train, &stage1)?;
        let (test_na, test_scores) = na_with_scores(&test, &stage1)?;
        Ok(Session {
            seed,
            train,
            test,
            config,
            stage1,
            train_na,
            train_scores,
            test_na,
            test_scores,
            aligner: None,
        })
    }

    pub fn summary_view(&self) -> Summary {
        Summary {
            sentences: self.train.samples.len(),
            na_sentences: self.train_na.len(),
            planted: self.train.truth.planted(&self.train.samples).len(),
            test_sentences: self.test.samples.len(),
            filter_loss: self.stage1.log.epochs.iter().map(|e| e.loss).collect(),
        }
    }

    /// Mining quality on the training N/A set at threshold `theta`.
    pub fn mining_view(&self, theta: f64) -> Result<MiningView> {
        check_theta(theta)?;
        let (mined, _) = mine_scored(&self.train_na, &self.train_scores, theta)?;
        let planted = self.train.truth.planted(&self.train_na);
        let split = |want: bool| {
            let planted = &planted;
            self.train_na
                .iter()
                .zip(&self.train_scores)
                .filter(move |(s, _)| planted.contains(&s.id) == want)
                .map(|(_, &p)| p)
        };
        Ok(MiningView {
            theta,
            quality: mining_quality(&mined, &self.train_na, &self.train.truth),
            planted_hist: histogram(split(true)),
            genuine_hist: histogram(split(false)),
        })
    }

    /// Trains the aligner for `epochs` epochs on D′ and M mined at the
    /// configured threshold. Returns the mean classification loss per epoch.
    pub fn train_aligner(&mut self, epochs: usize) -> Result<Vec<f64>> {
        let config = TrainConfig {
            epochs,
            ..self.config.clone()
        };
        let refined = BagSet::new(self.stage1.refined.clone());
        let mined = BagSet::new(self.stage1.mined_samples.clone());
        let out = run_stage2(
            &refined,
            &mined,
            &self.train.relations,
            self.train.tokens.len(),
            &config,
        )?;
        let losses = out.state.log.epoch_means().into_iter().map(|(_, l)| l.cls).collect();
        self.aligner = Some(out.state.model);
        Ok(losses)
    }

    /// PR curves of the removal experiment with the test N/A set mined at `theta`.
    pub fn removal_view(&mut self, theta: f64) -> Result<RemovalView> {
        check_theta(theta)?;
        if self.aligner.is_none() {
            self.train_aligner(self.config.epochs)?;
        }
        let model = self.aligner.as_ref().expect("trained above");
        let (mined, _) = mine_scored(&self.test_na, &self.test_scores, theta)?;
        let sets = removal_sets(&self.test.samples, &mined, &self.train.relations, self.seed)?;
        let rels = &self.train.relations;
        Ok(RemovalView {
            theta,
            removed: sets.removed,
            before: curve(&evaluate(&sets.full, model, rels)?),
            after: curve(&evaluate(&sets.mined_removed, model, rels)?),
            random: curve(&evaluate(&sets.random_removed, model, rels)?),
        })
    }
}

pub fn contrastive_view(tau: f64, steps: usize) -> ContrastiveProfile {
    let steps = steps.max(2);
    let cos: Vec<f64> = (0..steps).map(|i| -1.0 + 2.0 * i as f64 / (steps - 1) as f64).collect();
    ContrastiveProfile {
        tau,
        dist_pos: cos.iter().map(|&c| dist_pos(c, tau)).collect(),
        dist_neg: cos.iter().map(|&c| dist_neg(c)).collect(),
        cos,
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

fn js(e: FanError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, fn_rate: f64) -> std::result::Result<Session, JsError> {
        Session::create(u64::from(seed), fn_rate).map_err(js)
    }

    pub fn summary(&self) -> String {
        to_json(&self.summary_view())
    }

    pub fn mining(&self, theta: f64) -> std::result::Result<String, JsError> {
        self.mining_view(theta).map(|v| to_json(&v)).map_err(js)
    }

    pub fn train(&mut self, epochs: u32) -> std::result::Result<String, JsError> {
        self.train_aligner(epochs as usize).map(|v| to_json(&v)).map_err(js)
    }

    pub fn removal(&mut self, theta: f64) -> std::result::Result<String, JsError> {
        self.removal_view(theta).map(|v| to_json(&v)).map_err(js)
    }
}

#[wasm_bindgen]
pub fn contrastive_profile(tau: f64) -> String {
    to_json(&contrastive_view(tau, 81))
}
