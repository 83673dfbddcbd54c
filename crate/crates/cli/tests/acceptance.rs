//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion
//! and fails if any criterion fails.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fan_core::aligner::{
    assign_pseudo_labels, attend_bag, backward, forward, grl, AlignerModel, Batch, GradFlow, LossBreakdown, Objective,
};
use fan_core::checkpoint::Checkpoint;
use fan_core::corpus::{
    retokenize, synth_generate, BagKey, BagSet, Entity, RelationVocab, Sample, Span, SynthConfig, SynthCorpus,
};
use fan_core::encoder::{convolve, piecewise_max_pool, EncoderConfig};
use fan_core::evalkit::{
    auc, best_micro_f1, fn_removal_experiment, p_at_n, pr_curve, pseudo_label_quality, Prediction,
};
use fan_core::miner::{
    filter_loss_and_grad, filter_objective, mine, mining_quality, FilterModel, MinedEntry, MinedSet,
};
use fan_core::numerics::{finite_difference_check, GradCheck, ParamSet, Tensor};
use fan_core::trainer::{init_params, partition_mined, run_stage1, run_stage2, StageTwoTrainer, TrainConfig};
use fan_core::{FanError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---- micro networks ----

const VOCAB: usize = 12;
const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_COORDS: usize = 100;

fn micro_encoder() -> EncoderConfig {
    EncoderConfig {
        word_dim: 4,
        pos_dim: 2,
        max_relative: 5,
        kernel_sizes: vec![2, 3],
        filters_per_size: 2,
        dropout: 0.0,
    }
}

fn relations(l: usize) -> RelationVocab {
    let mut names = vec!["NA".to_string()];
    names.extend((1..l).map(|r| format!("r{r}")));
    RelationVocab::new(names, "NA").unwrap()
}

fn random_sample(rng: &mut ChaCha8Rng, id: &str, pair: &str, relation: usize) -> Sample {
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

fn random_bags(rng: &mut ChaCha8Rng, prefix: &str, bag_relations: &[usize]) -> BagSet {
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

fn random_biases<P: ParamSet>(model: &mut P, rng: &mut ChaCha8Rng) {
    for (name, p) in model.params_mut() {
        if name.contains("bias") {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
    }
}

struct Micro {
    model: AlignerModel,
    dprime: BagSet,
    mined: BagSet,
    relations: RelationVocab,
    batch: Batch,
}

fn micro(seed: u64) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = relations(4);
    let dprime = random_bags(&mut rng, "d", &[1, 1, 2, 3, 0, 2]);
    let mined = random_bags(&mut rng, "m", &[0, 0]);
    let mut model = AlignerModel::zeros(&micro_encoder(), VOCAB, relations.len());
    init_params(&mut model, &mut rng);
    random_biases(&mut model, &mut rng);
    model.zero_grad();
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

fn weights(alpha: f64, beta: f64, gamma: f64) -> Objective {
    Objective {
        alpha,
        beta,
        gamma,
        ..Objective::default()
    }
}

fn grads(m: &Micro, objective: &Objective, flow: GradFlow) -> Result<AlignerModel> {
    let fwd = forward(&m.model, &m.dprime, &m.mined, &m.batch, &m.relations, objective, None)?;
    let mut model = m.model.clone();
    model.zero_grad();
    backward(&fwd, &mut model, objective, flow);
    Ok(model)
}

/// Gradient of one auxiliary term alone, as full minus classification-only.
fn term_grads(m: &Micro, objective: &Objective, flow: GradFlow) -> Result<AlignerModel> {
    let mut full = grads(m, objective, flow)?;
    let base = grads(m, &weights(0.0, 0.0, 0.0), flow)?;
    for ((_, a), (_, b)) in full.params_mut().into_iter().zip(base.params()) {
        a.grad
            .data_mut()
            .iter_mut()
            .zip(b.grad.data())
            .for_each(|(x, y)| *x -= y);
    }
    Ok(full)
}

fn aligner_check(
    m: &Micro,
    objective: &Objective,
    pick: fn(&LossBreakdown) -> f64,
    isolate: bool,
    seed: u64,
) -> Result<GradCheck> {
    let model = if isolate {
        term_grads(m, objective, GradFlow::Exact)?
    } else {
        grads(m, objective, GradFlow::Exact)?
    };
    let loss = |p: &AlignerModel| -> Result<f64> {
        let fwd = forward(p, &m.dprime, &m.mined, &m.batch, &m.relations, objective, None)?;
        Ok(pick(&fwd.losses))
    };
    finite_difference_check(&model, loss, FD_EPS, FD_COORDS, seed)
}

// ---- criterion 1 ----

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut report = Vec::new();
    let mut record = |name: &str, check: Result<GradCheck>| -> std::result::Result<(), String> {
        let c = check.map_err(fail)?;
        ensure(c.coordinates >= FD_COORDS && c.max_rel_error < FD_TOL, || {
            format!(
                "{name}: {} coords, max rel error {:.2e}, worst {:?}",
                c.coordinates, c.max_rel_error, c.worst
            )
        })?;
        report.push(format!("{name} {:.1e}", c.max_rel_error));
        Ok(())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let samples: Vec<Sample> = (0..6)
        .map(|i| random_sample(&mut rng, &format!("f{i}"), &format!("p{i}"), i % 2))
        .collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    let labels: Vec<u8> = samples.iter().map(|s| u8::from(s.ds_relation != 0)).collect();
    let mut filter = FilterModel::zeros(&micro_encoder(), VOCAB);
    init_params(&mut filter, &mut rng);
    random_biases(&mut filter, &mut rng);
    filter.zero_grad();
    let check = filter_loss_and_grad(&mut filter, &batch, &labels, None).and_then(|_| {
        finite_difference_check(
            &filter,
            |f: &FilterModel| filter_objective(f, &batch, &labels),
            FD_EPS,
            FD_COORDS,
            1,
        )
    });
    record("filter", check)?;

    let m = micro(102);
    record("cls", aligner_check(&m, &weights(0.0, 0.0, 0.0), |l| l.cls, false, 2))?;
    record("gen", aligner_check(&m, &weights(1.0, 0.0, 0.0), |l| l.gen, true, 3))?;
    record("disc", aligner_check(&m, &weights(0.0, 1.0, 0.0), |l| l.disc, true, 4))?;
    record("ctra", aligner_check(&m, &weights(0.0, 0.0, 1.0), |l| l.ctra, true, 5))?;
    record("total", aligner_check(&m, &Objective::default(), |l| l.total, false, 6))?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{} ({:.1}s)", report.join(", "), elapsed.as_secs_f64()))
}

// ---- criterion 2 ----

fn c2_grl() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let m = micro(200 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        ensure(grl(&g).iter().zip(&g).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            "grl forward is not the identity".into()
        })?;

        let objective = weights(0.0, 1.0, 0.0);
        let exact = term_grads(&m, &objective, GradFlow::Exact).map_err(fail)?;
        let reversed = term_grads(&m, &objective, GradFlow::Training).map_err(fail)?;
        ensure(exact.disc_weight.grad == reversed.disc_weight.grad, || {
            format!("seed {seed}: head gradient changed")
        })?;
        let mut pairs: Vec<(String, &Tensor, &Tensor)> = reversed
            .encoder
            .named()
            .into_iter()
            .zip(exact.encoder.named())
            .map(|((n, r), (_, e))| (n, &r.grad, &e.grad))
            .collect();
        pairs.push(("queries".into(), &reversed.queries.grad, &exact.queries.grad));
        let mut moved = false;
        for (name, r, e) in pairs {
            for (a, b) in r.data().iter().zip(e.data()) {
                worst = worst.max((a + b).abs());
                moved |= b.abs() > 1e-8;
                ensure((a + b).abs() <= 1e-10, || format!("seed {seed} {name}: {a} vs -{b}"))?;
            }
        }
        ensure(moved, || format!("seed {seed}: disc term left the encoder untouched"))?;
    }
    Ok(format!("10 micro-networks, max |reversed + exact| = {worst:.1e}"))
}

// ---- criterion 3 ----

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10
}

fn oracle_convolve(h: &Tensor, k: usize, w: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = (h.rows(), h.row_len());
    // explicit left padding, then a flat window dot product
    let mut padded = vec![0.0; (k - 1) * d];
    padded.extend_from_slice(h.data());
    (0..w.rows())
        .map(|f| {
            (0..n)
                .map(|j| {
                    padded[j * d..(j + k) * d]
                        .iter()
                        .zip(w.row(f))
                        .map(|(x, y)| x * y)
                        .sum()
                })
                .collect()
        })
        .collect()
}

fn oracle_pool(p: &[f64], head: Span, tail: Span) -> [f64; 3] {
    let a = (head.end - 1).min(tail.end - 1);
    let b = (head.end - 1).max(tail.end - 1);
    let seg = |keep: &dyn Fn(usize) -> bool| {
        let vals: Vec<f64> = (0..p.len()).filter(|&j| keep(j)).map(|j| p[j]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.into_iter().fold(f64::NEG_INFINITY, f64::max)
        }
    };
    [seg(&|j| j <= a), seg(&|j| j > a && j <= b), seg(&|j| j > b)]
}

fn oracle_attend(reps: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = reps.iter().map(|r| r.iter().zip(q).map(|(a, b)| a * b).sum()).collect();
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = e.iter().map(|x| (x - m).exp()).sum();
    (0..q.len())
        .map(|c| reps.iter().zip(&e).map(|(r, x)| (x - m).exp() / z * r[c]).sum())
        .collect()
}

fn bag(i: usize) -> BagKey {
    BagKey {
        head: format!("h{i:02}"),
        tail: "t".into(),
        relation: 0,
    }
}

/// Position of `p` in the ranking: how many predictions strictly precede it.
fn rank_of(p: &Prediction, all: &[Prediction]) -> usize {
    all.iter()
        .filter(|q| q.score > p.score || (q.score == p.score && (&q.bag, q.relation) < (&p.bag, p.relation)))
        .count()
}

fn top_hits(preds: &[Prediction], gold: &BTreeSet<(BagKey, usize)>, k: usize) -> usize {
    preds
        .iter()
        .filter(|p| rank_of(p, preds) < k && gold.contains(&(p.bag.clone(), p.relation)))
        .count()
}

fn random_ranking(rng: &mut ChaCha8Rng) -> (Vec<Prediction>, BTreeSet<(BagKey, usize)>) {
    let bags = rng.gen_range(1..10);
    let mut preds = Vec::new();
    let mut gold = BTreeSet::new();
    for b in 0..bags {
        for r in 1..4 {
            if rng.gen_bool(0.7) {
                // coarse scores so ties are common
                preds.push(Prediction {
                    bag: bag(b),
                    relation: r,
                    score: f64::from(rng.gen_range(0..8u8)) / 8.0,
                });
            }
            if rng.gen_bool(0.3) {
                gold.insert((bag(b), r));
            }
        }
    }
    if gold.is_empty() {
        gold.insert((bag(0), 1));
    }
    (preds, gold)
}

fn c3_oracles() -> Outcome {
    const CASES: usize = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..CASES {
        let (n, d, k, f) = (
            rng.gen_range(1..9),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..4),
        );
        let h = Tensor::from_vec(&[n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::from_vec(&[f, k * d], (0..f * k * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let got = convolve(&h, k, &w);
        let want = oracle_convolve(&h, k, &w);
        ensure(
            got.iter()
                .flatten()
                .zip(want.iter().flatten())
                .all(|(a, b)| close(*a, *b)),
            || format!("convolve case {case}"),
        )?;

        let p: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(-5..5i8))).collect();
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (head, tail) = (Span::new(a, a + 1), Span::new(b, b + 1));
        ensure(
            piecewise_max_pool(&p, head, tail).values == oracle_pool(&p, head, tail),
            || format!("pool case {case}"),
        )?;

        let reps: Vec<Vec<f64>> = (0..rng.gen_range(1..5))
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let views: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
        let g = attend_bag(&views, &q).map_err(fail)?.g;
        ensure(
            g.iter().zip(oracle_attend(&reps, &q)).all(|(a, b)| close(*a, b)),
            || format!("attend case {case}"),
        )?;

        let (preds, gold) = random_ranking(&mut rng);
        let points = pr_curve(&preds, &gold).map_err(fail)?;
        ensure(points.len() == preds.len(), || format!("pr_curve length, case {case}"))?;
        for (i, pt) in points.iter().enumerate() {
            let hits = top_hits(&preds, &gold, i + 1);
            ensure(
                pt.precision == hits as f64 / (i + 1) as f64 && pt.recall == hits as f64 / gold.len() as f64,
                || format!("pr_curve case {case} rank {}", i + 1),
            )?;
        }

        let mut xs = vec![0.0];
        let mut ys = vec![points.first().map_or(0.0, |p| p.precision)];
        xs.extend(points.iter().map(|p| p.recall));
        ys.extend(points.iter().map(|p| p.precision));
        let area: f64 = (1..xs.len())
            .map(|i| (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0)
            .sum();
        ensure(close(auc(&points), area), || format!("auc case {case}"))?;

        for n_top in [1, 3, 100] {
            let top = n_top.min(preds.len());
            let want = if top == 0 {
                0.0
            } else {
                100.0 * top_hits(&preds, &gold, top) as f64 / top as f64
            };
            ensure(p_at_n(&preds, &gold, n_top) == want, || {
                format!("p_at_n case {case} n {n_top}")
            })?;
        }

        let f1 = (1..=preds.len())
            .map(|k| {
                let tp = top_hits(&preds, &gold, k) as f64;
                let (fp, fnn) = (k as f64 - tp, gold.len() as f64 - tp);
                if tp == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (2.0 * tp + fp + fnn)
                }
            })
            .fold(0.0, f64::max);
        ensure(close(best_micro_f1(&points), f1), || {
            format!("best_micro_f1 case {case}")
        })?;
    }
    Ok(format!(
        "{CASES} random instances for each of convolve, pool, attend, pr_curve, auc, p_at_n, best_micro_f1"
    ))
}

// ---- criteria 4 to 6 ----

const SEEDS: [u64; 3] = [1, 2, 3];

struct SeedRun {
    seed: u64,
    stage1_time: Duration,
    recall: f64,
    precision: f64,
    base_rate: f64,
    pseudo_accuracy: f64,
    pseudo_total: usize,
    gain: f64,
    random_gain: f64,
    auc_before: f64,
    partition_ok: bool,
}

fn na(corpus: &SynthCorpus) -> Vec<Sample> {
    corpus
        .samples
        .iter()
        .filter(|s| corpus.relations.is_na(s.ds_relation))
        .cloned()
        .collect()
}

fn ids(samples: &[Sample]) -> BTreeSet<String> {
    samples.iter().map(|s| s.id.clone()).collect()
}

fn fixture_run(seed: u64) -> Result<SeedRun> {
    let synth = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let train = synth_generate(&synth)?;
    let mut test = synth_generate(&synth.held_out())?;
    retokenize(&mut test.samples, &train.tokens);

    let start = Instant::now();
    let s1 = run_stage1(&train.samples, &train.relations, train.tokens.len(), &config)?;
    let stage1_time = start.elapsed();
    let negatives = na(&train);
    let quality = mining_quality(&s1.mined, &negatives, &train.truth);
    let n_prime: BTreeSet<String> = s1.n_prime.iter().cloned().collect();
    let partition_ok = n_prime.is_disjoint(&s1.mined.ids())
        && n_prime.union(&s1.mined.ids()).cloned().collect::<BTreeSet<_>>() == ids(&negatives);

    let dprime = BagSet::new(s1.refined.clone());
    let mset = BagSet::new(s1.mined_samples.clone());
    let s2 = run_stage2(&dprime, &mset, &train.relations, train.tokens.len(), &config)?;
    let pseudo = pseudo_label_quality(&s2.pseudo_labels, &mset, &train.truth);

    let (test_mined, _) = mine(&na(&test), &s1.filter, config.theta)?;
    let report = fn_removal_experiment(&test.samples, &test_mined, &s2.state.model, &train.relations, seed)?;
    Ok(SeedRun {
        seed,
        stage1_time,
        recall: quality.recall,
        precision: quality.precision,
        base_rate: quality.base_rate,
        pseudo_accuracy: pseudo.accuracy,
        pseudo_total: pseudo.total,
        gain: report.gain(),
        random_gain: report.random_gain(),
        auc_before: report.before.auc,
        partition_ok,
    })
}

fn c4_mining(runs: &[SeedRun]) -> Outcome {
    let mut lines = Vec::new();
    for r in runs {
        ensure(
            r.recall >= 0.5 && r.precision >= 2.0 * r.base_rate && r.stage1_time < Duration::from_secs(300),
            || {
                format!(
                    "seed {}: recall {:.3}, precision {:.3} vs base rate {:.3}, stage I {:.1}s",
                    r.seed,
                    r.recall,
                    r.precision,
                    r.base_rate,
                    r.stage1_time.as_secs_f64()
                )
            },
        )?;
        lines.push(format!(
            "seed {} recall {:.3} precision {:.3} (base {:.3}) {:.1}s",
            r.seed,
            r.recall,
            r.precision,
            r.base_rate,
            r.stage1_time.as_secs_f64()
        ));
    }
    Ok(lines.join("; "))
}

fn c5_pseudo(runs: &[SeedRun]) -> Outcome {
    let chance = 1.0 / (SynthConfig::default().relation_count - 1) as f64;
    let mut lines = Vec::new();
    for r in runs {
        ensure(r.pseudo_total > 0 && r.pseudo_accuracy >= 2.0 * chance, || {
            format!(
                "seed {}: accuracy {:.3} over {} bags, need {:.2}",
                r.seed,
                r.pseudo_accuracy,
                r.pseudo_total,
                2.0 * chance
            )
        })?;
        lines.push(format!(
            "seed {} {:.3} over {} bags",
            r.seed, r.pseudo_accuracy, r.pseudo_total
        ));
    }
    Ok(format!("{} (chance {chance:.2})", lines.join("; ")))
}

fn c6_removal(runs: &[SeedRun]) -> Outcome {
    let mut lines = Vec::new();
    for r in runs {
        ensure(r.gain > 0.0 && r.gain > r.random_gain, || {
            format!("seed {}: gain {:.4}, random gain {:.4}", r.seed, r.gain, r.random_gain)
        })?;
        lines.push(format!(
            "seed {} AUC {:.3} +{:.3} (random {:+.3})",
            r.seed, r.auc_before, r.gain, r.random_gain
        ));
    }
    Ok(lines.join("; "))
}

// ---- CLI helpers for criteria 7 and 8 ----

const SMALL: &[&str] = &[
    "--set",
    "synth.sentences_per_relation=30",
    "--set",
    "synth.na_sentences=120",
    "--set",
    "train.epochs=3",
    "--set",
    "train.filter_epochs=3",
    "--set",
    "train.encoder.word_dim=16",
    "--set",
    "train.encoder.filters_per_size=4",
];

fn fan(out: &Path, args: &[&str]) -> i32 {
    let o = Command::new(env!("CARGO_BIN_EXE_fan"))
        .args(SMALL)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs");
    o.status.code().unwrap_or(-1)
}

fn pipeline(out: &Path, extra: &[&str]) -> std::result::Result<(), String> {
    for (cmd, flags) in [
        ("synth", &[][..]),
        ("mine", &[]),
        ("train", &[]),
        ("eval", &["--mine-test", "--dump-bag-reps"]),
    ] {
        let mut args = vec![cmd];
        args.extend_from_slice(flags);
        args.extend_from_slice(extra);
        let code = fan(out, &args);
        ensure(code == 0, || format!("`fan {}` exited {code}", args.join(" ")))?;
    }
    Ok(())
}

fn read(path: &Path) -> std::result::Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn lines(path: &Path) -> std::result::Result<usize, String> {
    Ok(String::from_utf8_lossy(&read(path)?)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count())
}

fn json(path: &Path) -> std::result::Result<serde_json::Value, String> {
    serde_json::from_slice(&read(path)?).map_err(fail)
}

// ---- criterion 7 ----

const ARTIFACTS: &[&str] = &[
    "train.jsonl",
    "test.jsonl",
    "mined.jsonl",
    "filter.ckpt",
    "filter_log.csv",
    "model.ckpt",
    "train_log.csv",
    "pseudo_labels.jsonl",
    "metrics.json",
    "pr_curve.csv",
    "mined_test.jsonl",
    "fn_removal.json",
    "bag_reps.csv",
];

fn c7_determinism(runs: &[SeedRun]) -> Outcome {
    for r in runs {
        ensure(r.partition_ok, || {
            format!("seed {}: M and N' do not partition N", r.seed)
        })?;
    }

    let (a, b) = (tempfile::tempdir().map_err(fail)?, tempfile::tempdir().map_err(fail)?);
    pipeline(a.path(), &["--seed", "11"])?;
    pipeline(b.path(), &["--seed", "11"])?;
    for f in ARTIFACTS {
        ensure(read(&a.path().join(f))? == read(&b.path().join(f))?, || {
            format!("{f} differs between identical runs")
        })?;
    }

    // the mined file partitions the training N/A set
    let rels = RelationVocab::from_rel2id(&a.path().join("rel2id.json"), "NA").map_err(fail)?;
    let corpus = fan_core::corpus::load_jsonl(&a.path().join("train.jsonl"), &rels, None).map_err(fail)?;
    let mined: BTreeSet<String> = fan_core::corpus::read_annotations(&a.path().join("mined.jsonl"))
        .map_err(fail)?
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    let negatives: BTreeSet<String> = corpus
        .samples
        .iter()
        .filter(|s| rels.is_na(s.ds_relation))
        .map(|s| s.id.clone())
        .collect();
    ensure(mined.is_subset(&negatives), || {
        "mined file holds a positive sentence".into()
    })?;

    for f in ["filter.ckpt", "model.ckpt"] {
        let bytes = read(&a.path().join(f))?;
        let again = Checkpoint::from_bytes(&bytes).map_err(fail)?.to_bytes();
        ensure(again == bytes, || format!("{f} does not round-trip"))?;
    }

    // interrupted training resumes bit-exactly
    let ckpt = Checkpoint::from_bytes(&read(&a.path().join("model.ckpt"))?).map_err(fail)?;
    let entries = mined
        .iter()
        .map(|id| MinedEntry {
            id: id.clone(),
            score: 1.0,
        })
        .collect();
    let (refined, m) = partition_mined(
        &corpus.samples,
        &MinedSet {
            entries,
            threshold: 0.5,
        },
    );
    let (dprime, mset) = (BagSet::new(refined), BagSet::new(m));
    let mut config = ckpt.config.clone();
    config.epochs = 3;
    let mut straight = StageTwoTrainer::new(&dprime, &mset, &rels, corpus.tokens.len(), &config).map_err(fail)?;
    straight.train_to(3).map_err(fail)?;
    let mut first = StageTwoTrainer::new(&dprime, &mset, &rels, corpus.tokens.len(), &config).map_err(fail)?;
    first.train_to(1).map_err(fail)?;
    let saved = Checkpoint::aligner(&first.state(), &rels, &corpus.tokens).to_bytes();
    let state = Checkpoint::from_bytes(&saved)
        .and_then(|c| c.trainer_state())
        .map_err(fail)?;
    let mut resumed = StageTwoTrainer::resume(state, &dprime, &mset, &rels).map_err(fail)?;
    resumed.train_to(3).map_err(fail)?;
    let end = |t: &StageTwoTrainer| Checkpoint::aligner(&t.state(), &rels, &corpus.tokens).to_bytes();
    ensure(end(&resumed) == end(&straight), || "resumed training diverged".into())?;
    ensure(end(&straight) == read(&a.path().join("model.ckpt"))?, || {
        "library and CLI training disagree".into()
    })?;

    Ok(format!(
        "M and N' partition N on {} seeds; {} artifacts bit-identical across runs; checkpoints round-trip; resume bit-exact",
        runs.len(),
        ARTIFACTS.len()
    ))
}

// ---- criterion 8 ----

fn c8_degenerate() -> Outcome {
    let mut done = Vec::new();

    // empty M
    let m = micro(800);
    let empty = BagSet::new(Vec::new());
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        encoder: micro_encoder(),
        ..TrainConfig::default()
    };
    let out = run_stage2(&m.dprime, &empty, &m.relations, VOCAB, &config).map_err(fail)?;
    ensure(out.pseudo_labels.is_empty(), || "pseudo labels without M".into())?;
    ensure(
        out.state
            .log
            .steps
            .iter()
            .all(|s| s.losses.gen == 0.0 && s.losses.disc == 0.0),
        || "adversarial terms ran without M".into(),
    )?;
    done.push("empty M");

    // l = 2: every pseudo label is the single predefined relation
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let rels = relations(2);
    let mut model = AlignerModel::zeros(&micro_encoder(), VOCAB, 2);
    init_params(&mut model, &mut rng);
    let labels = assign_pseudo_labels(&random_bags(&mut rng, "m", &[0, 0, 0]), &model, &rels).map_err(fail)?;
    ensure(labels.iter().all(|l| l.relation == 1), || {
        "l = 2 pseudo label is not the predefined relation".into()
    })?;

    // whole-pipeline runs through the CLI
    let cases: [(&str, &[&str]); 4] = [
        ("rho = 0", &["--set", "synth.fn_rate=0.0"]),
        ("singleton bags", &["--set", "synth.max_bag_size=1"]),
        ("l = 2", &["--set", "synth.relation_count=2"]),
        (
            "zero epochs",
            &["--set", "train.epochs=0", "--set", "train.filter_epochs=0"],
        ),
    ];
    for (name, extra) in cases {
        let dir = tempfile::tempdir().map_err(fail)?;
        let d = dir.path();
        pipeline(d, extra).map_err(|e| format!("{name}: {e}"))?;
        let metrics = json(&d.join("metrics.json"))?;
        ensure(
            metrics["auc"].as_f64().is_some_and(|a| (0.0..=1.0).contains(&a)),
            || format!("{name}: bad metrics"),
        )?;
        match name {
            "rho = 0" => {
                let q = json(&d.join("mining_quality.json"))?;
                ensure(q["planted"] == 0, || format!("rho = 0: {q}"))?;
            }
            "singleton bags" => {
                let summary = json(&d.join("train_summary.json"))?;
                let bags = summary["bags_refined"].as_u64().unwrap_or(0) + summary["bags_mined"].as_u64().unwrap_or(0);
                ensure(bags as usize == lines(&d.join("train.jsonl"))?, || {
                    "singleton bags: bag count".into()
                })?;
            }
            "l = 2" => {
                let rels = RelationVocab::from_rel2id(&d.join("rel2id.json"), "NA").map_err(fail)?;
                ensure(rels.len() == 2, || "l = 2: relation file".into())?;
            }
            _ => {
                let ckpt = Checkpoint::from_bytes(&read(&d.join("model.ckpt"))?).map_err(fail)?;
                ensure(ckpt.epoch == 0 && ckpt.log.is_empty(), || {
                    "zero epochs: checkpoint trained".into()
                })?;
                ensure(lines(&d.join("train_log.csv"))? == 1, || {
                    "zero epochs: log has steps".into()
                })?;
            }
        }
        done.push(name);
    }

    // exit codes
    let dir = tempfile::tempdir().map_err(fail)?;
    let d = dir.path();
    let codes = [
        ("missing input", fan(d, &["mine"]), 2),
        ("bad config", fan(d, &["synth", "--set", "train.batch_size=1"]), 3),
        ("unknown key", fan(d, &["synth", "--set", "train.nope=1"]), 3),
        ("synth", fan(d, &["synth"]), 0),
        (
            "divergence",
            fan(d, &["train", "--no-mined", "--set", "train.learning_rate=1e300"]),
            1,
        ),
    ];
    for (name, got, want) in codes {
        ensure(got == want, || format!("{name}: exit {got}, expected {want}"))?;
    }
    std::fs::write(d.join("model.ckpt"), b"garbage").map_err(fail)?;
    let got = fan(d, &["eval"]);
    ensure(got == 2, || format!("damaged checkpoint: exit {got}"))?;
    done.push("exit codes 0/1/2/3");
    Ok(done.join(", "))
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    std::thread::scope(|scope| {
        let fixtures: Vec<_> = SEEDS.iter().map(|&s| scope.spawn(move || fixture_run(s))).collect();
        let c1 = scope.spawn(c1_gradients);
        let c2 = scope.spawn(c2_grl);
        let c3 = scope.spawn(c3_oracles);
        let c8 = scope.spawn(c8_degenerate);
        let runs: std::result::Result<Vec<SeedRun>, FanError> =
            fixtures.into_iter().map(|h| h.join().unwrap()).collect();

        results.push(("1 gradient correctness", c1.join().unwrap()));
        results.push(("2 gradient reversal law", c2.join().unwrap()));
        results.push(("3 oracle equivalence", c3.join().unwrap()));
        match &runs {
            Ok(runs) => {
                results.push(("4 mining recovery", c4_mining(runs)));
                results.push(("5 pseudo-label quality", c5_pseudo(runs)));
                results.push(("6 false-negative removal", c6_removal(runs)));
                results.push(("7 partition and determinism", c7_determinism(runs)));
            }
            Err(e) => {
                for name in [
                    "4 mining recovery",
                    "5 pseudo-label quality",
                    "6 false-negative removal",
                    "7 partition and determinism",
                ] {
                    results.push((name, Err(format!("fixture run failed: {e}"))));
                }
            }
        }
        results.push(("8 degenerate paths", c8.join().unwrap()));
    });

    let mut text = String::from("\nacceptance criteria\n");
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => text += &format!("PASS  {name}: {detail}\n"),
            Err(why) => text += &format!("FAIL  {name}: {why}\n"),
        }
    }
    // bypass the test harness capture so the summary is always visible
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).unwrap();
    out.flush().unwrap();

    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
