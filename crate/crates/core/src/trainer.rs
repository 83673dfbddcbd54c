//! Initialisation, plain SGD with weight decay, mini-batch scheduling and
//! the two-stage driver.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::{
    assign_pseudo_labels, backward, forward, AlignerModel, Batch, GradFlow, LossBreakdown, Objective, PseudoLabel,
};
use crate::corpus::{split_pn, BagSet, RelationVocab, Sample};
use crate::encoder::EncoderConfig;
use crate::error::{FanError, Result};
use crate::miner::{mine, train_filter, FilterLog, FilterModel, MinedSet};
use crate::numerics::{ParamKind, ParamSet};

/// Every hyperparameter of a run. Defaults are the desk-scale setting:
/// loss weights, threshold, margin, optimiser and dropout are the full
/// setting's, while sizes are shrunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Stage-two epochs.
    pub epochs: usize,
    /// Stage-one epoch budget; kept small so the filter stops before memorising noise.
    pub filter_epochs: usize,
    pub seed: u64,
    /// Mining threshold on the filter probability.
    pub theta: f64,
    pub objective: Objective,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 0.1,
            weight_decay: 1e-5,
            epochs: 50,
            filter_epochs: 8,
            seed: 1,
            theta: 0.5,
            objective: Objective::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Full-size model: 768-d embeddings, 230 filters per width, batch 160.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 160,
            encoder: EncoderConfig {
                word_dim: 768,
                pos_dim: 50,
                filters_per_size: 230,
                ..EncoderConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(FanError::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        // written so that NaN fails too
        let (lr_ok, wd_ok) = (self.learning_rate > 0.0, self.weight_decay >= 0.0);
        if !lr_ok || !wd_ok {
            return Err(FanError::Config(
                "learning_rate must be positive and weight_decay non-negative".into(),
            ));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(FanError::Config(format!(
                "theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        let o = &self.objective;
        if [o.alpha, o.beta, o.gamma, o.tau]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(FanError::Config(
                "loss weights and tau must be finite and non-negative".into(),
            ));
        }
        self.encoder.validate()
    }
}

/// Independent random streams derived from the single run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    FilterInit = 1,
    FilterTrain = 2,
    AlignerInit = 3,
    AlignerTrain = 4,
    RandomRemoval = 5,
}

pub fn seeded_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Xavier-uniform weights, zero biases, embeddings uniform in `±1/√dim`.
pub fn init_params<P: ParamSet>(model: &mut P, rng: &mut ChaCha8Rng) {
    for (_, p) in model.params_mut() {
        match p.kind {
            ParamKind::Bias => p.value.fill(0.0),
            ParamKind::Weight => {
                let (fan_out, fan_in) = (p.value.rows(), p.value.row_len());
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                p.value
                    .data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.gen_range(-bound..=bound));
            }
            ParamKind::Embedding => {
                let scale = 1.0 / (p.value.row_len() as f64).sqrt();
                p.value
                    .data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.gen_range(-1.0..=1.0) * scale);
            }
        }
    }
}

/// `w ← w − lr·(g + wd·w)`. Biases are not decayed, and embedding rows
/// without gradient this step are left untouched.
pub fn sgd_step<P: ParamSet>(model: &mut P, lr: f64, weight_decay: f64) -> Result<()> {
    for (name, p) in model.params_mut() {
        if p.grad.shape() != p.value.shape() {
            return Err(FanError::Dimension(format!(
                "{name}: gradient {:?} does not match value {:?}",
                p.grad.shape(),
                p.value.shape()
            )));
        }
        match p.kind {
            ParamKind::Bias => {
                for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                    *w -= lr * g;
                }
            }
            ParamKind::Weight => {
                for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                    *w -= lr * (g + weight_decay * *w);
                }
            }
            ParamKind::Embedding => {
                for row in 0..p.value.rows() {
                    let grad = p.grad.row(row);
                    if grad.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    let grad = grad.to_vec();
                    for (w, g) in p.value.row_mut(row).iter_mut().zip(grad) {
                        *w -= lr * (g + weight_decay * *w);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Outcome of stage one.
#[derive(Debug, Clone)]
pub struct StageOne {
    pub filter: FilterModel,
    pub log: FilterLog,
    pub mined: MinedSet,
    /// D′ = P ∪ N′.
    pub refined: Vec<Sample>,
    /// The samples of M, in corpus order.
    pub mined_samples: Vec<Sample>,
    pub n_prime: Vec<String>,
}

/// Trains the noise filter on D, then mines M from N.
///
/// With no N/A sentence there is nothing to mine: the filter stays at its
/// initialization, M is empty and D′ is D.
pub fn run_stage1(
    samples: &[Sample],
    relations: &RelationVocab,
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<StageOne> {
    let negatives: Vec<Sample> = samples
        .iter()
        .filter(|s| relations.is_na(s.ds_relation))
        .cloned()
        .collect();
    let (filter, log) = if negatives.is_empty() {
        config.validate()?;
        let mut filter = FilterModel::zeros(&config.encoder, vocab_size);
        init_params(&mut filter, &mut seeded_rng(config.seed, RngStream::FilterInit));
        (filter, FilterLog::default())
    } else {
        train_filter(samples, relations, vocab_size, config)?
    };
    let (mined, n_prime) = mine(&negatives, &filter, config.theta)?;
    let (refined, mined_samples) = partition_mined(samples, &mined);
    Ok(StageOne {
        filter,
        log,
        mined,
        refined,
        mined_samples,
        n_prime,
    })
}

/// Splits a corpus into (D′, M-samples) given the mined ids.
pub fn partition_mined(samples: &[Sample], mined: &MinedSet) -> (Vec<Sample>, Vec<Sample>) {
    let ids = mined.ids();
    samples.iter().cloned().partition(|s| !ids.contains(&s.id))
}

/// One optimisation step of stage two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
}

impl TrainLog {
    /// CSV columns: `step,epoch,L_cls,L_g,L_d,L_ctra,L_total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,L_cls,L_g,L_d,L_ctra,L_total\n");
        for s in &self.steps {
            let l = &s.losses;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.step, s.epoch, l.cls, l.gen, l.disc, l.ctra, l.total
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::miner::write_text(path, &self.to_csv())
    }

    /// Mean of each loss over the steps of every epoch, ascending by epoch.
    pub fn epoch_means(&self) -> Vec<(usize, LossBreakdown)> {
        let mut out: Vec<(usize, LossBreakdown, usize)> = Vec::new();
        for s in &self.steps {
            if out.last().is_none_or(|(e, _, _)| *e != s.epoch) {
                out.push((s.epoch, LossBreakdown::default(), 0));
            }
            let (_, acc, n) = out.last_mut().expect("pushed above");
            acc.cls += s.losses.cls;
            acc.gen += s.losses.gen;
            acc.disc += s.losses.disc;
            acc.ctra += s.losses.ctra;
            acc.total += s.losses.total;
            *n += 1;
        }
        out.into_iter()
            .map(|(e, l, n)| {
                let k = n as f64;
                (
                    e,
                    LossBreakdown {
                        cls: l.cls / k,
                        gen: l.gen / k,
                        disc: l.disc / k,
                        ctra: l.ctra / k,
                        total: l.total / k,
                    },
                )
            })
            .collect()
    }
}

/// Serializable state of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, as a decimal string (it is a u128).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| FanError::Format(format!("bad RNG word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Stage-two training loop over D′ bags and M bags.
///
/// Each step takes `batch_size` bags of D′ (for the classification and
/// contrastive terms) and `min(batch_size, |M|)` bags of M (for the
/// adversarial terms), cycling through a per-epoch shuffle of M.
pub struct StageTwoTrainer<'a> {
    pub model: AlignerModel,
    pub config: TrainConfig,
    pub epoch: usize,
    pub log: TrainLog,
    rng: ChaCha8Rng,
    refined: &'a BagSet,
    mined: &'a BagSet,
    relations: &'a RelationVocab,
}

impl<'a> StageTwoTrainer<'a> {
    pub fn new(
        refined: &'a BagSet,
        mined: &'a BagSet,
        relations: &'a RelationVocab,
        vocab_size: usize,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if relations.len() < 2 {
            return Err(FanError::Config(
                "stage two needs at least one predefined relation".into(),
            ));
        }
        let mut model = AlignerModel::zeros(&config.encoder, vocab_size, relations.len());
        init_params(&mut model, &mut seeded_rng(config.seed, RngStream::AlignerInit));
        Ok(StageTwoTrainer {
            model,
            config: config.clone(),
            epoch: 0,
            log: TrainLog::default(),
            rng: seeded_rng(config.seed, RngStream::AlignerTrain),
            refined,
            mined,
            relations,
        })
    }

    /// Resumes from a saved state. The data must be the same the state was trained on.
    pub fn resume(
        state: TrainerState,
        refined: &'a BagSet,
        mined: &'a BagSet,
        relations: &'a RelationVocab,
    ) -> Result<Self> {
        state.config.validate()?;
        Ok(StageTwoTrainer {
            model: state.model,
            config: state.config,
            epoch: state.epoch,
            log: state.log,
            rng: state.rng.restore()?,
            refined,
            mined,
            relations,
        })
    }

    /// Snapshot with gradients cleared; they are scratch space, not state.
    pub fn state(&self) -> TrainerState {
        let mut model = self.model.clone();
        model.zero_grad();
        TrainerState {
            model,
            config: self.config.clone(),
            epoch: self.epoch,
            log: self.log.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn train_epoch(&mut self) -> Result<()> {
        if self.refined.is_empty() {
            return Err(FanError::Config("D′ has no bags to train on".into()));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.refined.len()).collect();
        order.shuffle(&mut self.rng);
        let mut mined_order: Vec<usize> = (0..self.mined.len()).collect();
        mined_order.shuffle(&mut self.rng);
        let per_step = self.config.batch_size.min(mined_order.len());
        let mut cursor = 0;

        for chunk in order.chunks(self.config.batch_size) {
            let mut batch = Batch {
                labeled: chunk.to_vec(),
                mined: Vec::with_capacity(per_step),
            };
            for _ in 0..per_step {
                batch.mined.push(mined_order[cursor]);
                cursor = (cursor + 1) % mined_order.len();
            }
            let dropout = Some((&mut self.rng, self.config.encoder.dropout));
            let fwd = forward(
                &self.model,
                self.refined,
                self.mined,
                &batch,
                self.relations,
                &self.config.objective,
                dropout,
            )?;
            self.model.zero_grad();
            backward(&fwd, &mut self.model, &self.config.objective, GradFlow::Training);
            sgd_step(&mut self.model, self.config.learning_rate, self.config.weight_decay)?;
            self.model.check_finite()?;
            self.log.steps.push(StepLog {
                step: self.log.steps.len() + 1,
                epoch: self.epoch,
                losses: fwd.losses,
            });
        }
        Ok(())
    }

    pub fn train_to(&mut self, epochs: usize) -> Result<()> {
        while self.epoch < epochs {
            self.train_epoch()?;
        }
        Ok(())
    }
}

/// Everything needed to continue stage-two training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub model: AlignerModel,
    pub config: TrainConfig,
    pub epoch: usize,
    pub log: TrainLog,
    pub rng: RngState,
}

/// Outcome of stage two.
#[derive(Debug, Clone)]
pub struct StageTwo {
    pub state: TrainerState,
    pub pseudo_labels: Vec<PseudoLabel>,
}

/// Trains the aligner for `config.epochs` epochs, then pseudo-labels every M bag.
pub fn run_stage2(
    refined: &BagSet,
    mined: &BagSet,
    relations: &RelationVocab,
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<StageTwo> {
    let mut trainer = StageTwoTrainer::new(refined, mined, relations, vocab_size, config)?;
    trainer.train_to(config.epochs)?;
    let pseudo_labels = assign_pseudo_labels(mined, &trainer.model, relations)?;
    Ok(StageTwo {
        state: trainer.state(),
        pseudo_labels,
    })
}

/// Counts of the P/N split, for reporting.
pub fn split_counts(samples: &[Sample], relations: &RelationVocab) -> (usize, usize) {
    let (p, n) = split_pn(samples, relations);
    (p.len(), n.len())
}
