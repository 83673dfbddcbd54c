#![allow(dead_code)]

use fan_core::aligner::{AlignerModel, Batch};
use fan_core::corpus::{BagSet, Entity, RelationVocab, Sample, Span};
use fan_core::encoder::EncoderConfig;
use fan_core::numerics::ParamSet;
use fan_core::trainer::init_params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 12;

pub fn micro_encoder() -> EncoderConfig {
    EncoderConfig {
        word_dim: 4,
        pos_dim: 2,
        max_relative: 5,
        kernel_sizes: vec![2, 3],
        filters_per_size: 2,
        dropout: 0.0,
    }
}

pub fn relations(l: usize) -> RelationVocab {
    let mut names = vec!["NA".to_string()];
    names.extend((1..l).map(|r| format!("r{r}")));
    RelationVocab::new(names, "NA").unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random sentence with single-token entities at distinct positions.
pub fn random_sample(rng: &mut ChaCha8Rng, id: &str, pair: &str, relation: usize) -> Sample {
    let n = rng.gen_range(3..=8);
    let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(1..VOCAB)).collect();
    let h = rng.gen_range(0..n);
    let t = (h + rng.gen_range(1..n)) % n;
    Sample {
        id: id.to_string(),
        words: tokens.iter().map(|t| format!("w{t}")).collect(),
        tokens,
        head: Entity {
            id: format!("{pair}h"),
            name: format!("{pair}h"),
        },
        tail: Entity {
            id: format!("{pair}t"),
            name: format!("{pair}t"),
        },
        head_span: Span::new(h, h + 1),
        tail_span: Span::new(t, t + 1),
        ds_relation: relation,
    }
}

/// One bag per entry of `bag_relations`, each with 1 to 3 sentences.
pub fn random_bags(rng: &mut ChaCha8Rng, prefix: &str, bag_relations: &[usize]) -> BagSet {
    let mut samples = Vec::new();
    for (b, &r) in bag_relations.iter().enumerate() {
        for k in 0..rng.gen_range(1..=3) {
            samples.push(random_sample(
                rng,
                &format!("{prefix}{b}.{k}"),
                &format!("{prefix}{b}"),
                r,
            ));
        }
    }
    BagSet::new(samples)
}

pub fn random_model(rng: &mut ChaCha8Rng, l: usize) -> AlignerModel {
    let mut model = AlignerModel::zeros(&micro_encoder(), VOCAB, l);
    init_params(&mut model, rng);
    for b in [&mut model.cls_bias, &mut model.disc_bias] {
        b.value
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-0.5..0.5));
    }
    model.zero_grad();
    model
}

/// A micro stage-two problem: labeled bags over four relations and two mined bags.
pub struct Micro {
    pub model: AlignerModel,
    pub dprime: BagSet,
    pub mined: BagSet,
    pub relations: RelationVocab,
    pub batch: Batch,
}

pub fn micro(seed: u64) -> Micro {
    let mut rng = rng(seed);
    let relations = relations(4);
    let dprime = random_bags(&mut rng, "d", &[1, 1, 2, 3, 0, 2]);
    let mined = random_bags(&mut rng, "m", &[0, 0]);
    let model = random_model(&mut rng, relations.len());
    let batch = Batch {
        labeled: (0..dprime.len()).collect(),
        mined: (0..mined.len()).collect(),
    };
    Micro {
        model,
        dprime,
        mined,
        relations,
        batch,
    }
}
