//! The `fan` command line: synth, mine, train and eval over one config file.
//!
//! Exit codes: 0 success, 1 numeric or training failure, 2 input error,
//! 3 configuration error.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fan_core::checkpoint::Checkpoint;
use fan_core::corpus::{
    load_jsonl, read_annotations, synth_generate, write_annotated_jsonl, write_jsonl, Annotation, BagSet, GroundTruth,
    RelationVocab, Sample, SynthCorpus,
};
use fan_core::evalkit::{bag_rep_csv, evaluate, fn_removal_experiment, pr_csv, pseudo_label_quality};
use fan_core::miner::{mine, mining_quality, MinedEntry, MinedSet};
use fan_core::trainer::{partition_mined, run_stage1, run_stage2};
use fan_core::{FanError, Result};
use serde::Serialize;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "fan",
    version,
    about = "False-negative mining and adversarial alignment for distant supervision"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for corpus generation and training (overrides the config).
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test corpus with planted false negatives.
    Synth,
    /// Train the noise filter and mine false-negative candidates from N/A.
    Mine,
    /// Train the aligner on the refined data and pseudo-label the mined set.
    Train {
        /// Train without the mined set (adversarial terms switched off).
        #[arg(long)]
        no_mined: bool,
    },
    /// Held-out evaluation of a trained checkpoint.
    Eval {
        /// Mine the test N/A set with the filter and report the removal experiment.
        #[arg(long)]
        mine_test: bool,
        /// Write every test bag representation to bag_reps.csv.
        #[arg(long)]
        dump_bag_reps: bool,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed, cli.out.as_deref())?;
    let out = config.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| FanError::io(&out, e))?;
    match cli.command {
        Command::Synth => cmd_synth(&config),
        Command::Mine => cmd_mine(&config),
        Command::Train { no_mined } => cmd_train(&config, no_mined),
        Command::Eval {
            mine_test,
            dump_bag_reps,
        } => cmd_eval(&config, mine_test, dump_bag_reps),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FanError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| FanError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(
        path,
        &(serde_json::to_string_pretty(value).expect("serializable") + "\n"),
    )
}

fn relations(config: &RunConfig) -> Result<RelationVocab> {
    RelationVocab::from_rel2id(&config.rel2id_path(), &config.na_name)
}

fn read_truth(path: &Path, relations: &RelationVocab) -> Result<Option<GroundTruth>> {
    if path.exists() {
        GroundTruth::read(path, relations).map(Some)
    } else {
        Ok(None)
    }
}

fn na_samples<'a>(samples: &'a [Sample], relations: &RelationVocab) -> Vec<&'a Sample> {
    samples.iter().filter(|s| relations.is_na(s.ds_relation)).collect()
}

fn describe(name: &str, corpus: &SynthCorpus) -> String {
    let na = na_samples(&corpus.samples, &corpus.relations).len();
    format!(
        "{name}: {} sentences, {} positive, {} N/A, {} planted false negatives",
        corpus.samples.len(),
        corpus.samples.len() - na,
        na,
        corpus.truth.planted(&corpus.samples).len()
    )
}

pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    let train = synth_generate(&config.synth)?;
    let test = synth_generate(&config.synth.held_out())?;
    for (corpus, data, truth) in [
        (&train, config.train_path(), config.train_truth_path()),
        (&test, config.test_path(), config.test_truth_path()),
    ] {
        write_jsonl(&data, &corpus.samples, &corpus.relations)?;
        corpus.truth.write(&truth, &corpus.relations)?;
    }
    train.relations.write_rel2id(&config.rel2id_path())?;
    println!("{}", describe("train", &train));
    println!("{}", describe("test", &test));
    Ok(())
}

pub fn cmd_mine(config: &RunConfig) -> Result<()> {
    let rels = relations(config)?;
    let corpus = load_jsonl(&config.train_path(), &rels, None)?;
    let stage = run_stage1(&corpus.samples, &rels, corpus.tokens.len(), &config.train)?;
    let out = config.out_dir();

    let scores: BTreeMap<&str, f64> = stage.mined.entries.iter().map(|e| (e.id.as_str(), e.score)).collect();
    let rows: Vec<(&Sample, Annotation)> = stage
        .mined_samples
        .iter()
        .map(|s| {
            let note = Annotation {
                pseudo_relation: None,
                confidence: scores[s.id.as_str()],
            };
            (s, note)
        })
        .collect();
    write_annotated_jsonl(&config.mined_path(), &rows, &rels)?;
    Checkpoint::filter(&stage.filter, &config.train, &rels, &corpus.tokens).save(&config.filter_checkpoint_path())?;
    stage.log.write_csv(&out.join("filter_log.csv"))?;
    stage.log.write_histogram_csv(&out.join("filter_hist.csv"))?;

    let n = na_samples(&corpus.samples, &rels).len();
    println!(
        "mined {} of {} N/A sentences (theta = {}), {} remain in N'",
        stage.mined.len(),
        n,
        config.train.theta,
        stage.n_prime.len()
    );
    if let Some(truth) = read_truth(&config.train_truth_path(), &rels)? {
        let negatives: Vec<Sample> = na_samples(&corpus.samples, &rels).into_iter().cloned().collect();
        let q = mining_quality(&stage.mined, &negatives, &truth);
        println!(
            "against ground truth: precision {:.3}, recall {:.3}, base rate {:.3}",
            q.precision, q.recall, q.base_rate
        );
        write_json(&out.join("mining_quality.json"), &q)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    steps: usize,
    bags_refined: usize,
    bags_mined: usize,
    final_losses: Option<fan_core::aligner::LossBreakdown>,
    pseudo_labels: Option<fan_core::evalkit::PseudoLabelQuality>,
}

pub fn cmd_train(config: &RunConfig, no_mined: bool) -> Result<()> {
    let rels = relations(config)?;
    let corpus = load_jsonl(&config.train_path(), &rels, None)?;
    let mined_ids: Vec<(String, f64)> = if no_mined {
        Vec::new()
    } else {
        read_annotations(&config.mined_path())?
    };
    let na: BTreeSet<&str> = na_samples(&corpus.samples, &rels)
        .iter()
        .map(|s| s.id.as_str())
        .collect();
    if let Some((stray, _)) = mined_ids.iter().find(|(id, _)| !na.contains(id.as_str())) {
        return Err(FanError::Consistency(format!(
            "mined id {stray} is not an N/A sentence of {}",
            config.train_path().display()
        )));
    }
    let mined = MinedSet {
        entries: mined_ids
            .into_iter()
            .map(|(id, score)| MinedEntry { id, score })
            .collect(),
        threshold: config.train.theta,
    };
    let (refined, mined_samples) = partition_mined(&corpus.samples, &mined);
    let dprime = BagSet::new(refined);
    let mset = BagSet::new(mined_samples);
    let stage = run_stage2(&dprime, &mset, &rels, corpus.tokens.len(), &config.train)?;
    let out = config.out_dir();

    Checkpoint::aligner(&stage.state, &rels, &corpus.tokens).save(&config.checkpoint_path())?;
    stage.state.log.write_csv(&out.join("train_log.csv"))?;
    let by_bag: BTreeMap<_, _> = stage.pseudo_labels.iter().map(|p| (&p.bag, p)).collect();
    let samples = &mset.samples;
    let rows: Vec<(&Sample, Annotation)> = mset
        .bags
        .iter()
        .flat_map(|b| {
            let label = by_bag[&b.key];
            b.members.iter().map(move |&i| {
                let note = Annotation {
                    pseudo_relation: Some(label.relation),
                    confidence: label.confidence,
                };
                (&samples[i], note)
            })
        })
        .collect();
    write_annotated_jsonl(&out.join("pseudo_labels.jsonl"), &rows, &rels)?;

    let quality = read_truth(&config.train_truth_path(), &rels)?
        .map(|truth| pseudo_label_quality(&stage.pseudo_labels, &mset, &truth));
    let summary = TrainSummary {
        epochs: stage.state.epoch,
        steps: stage.state.log.steps.len(),
        bags_refined: dprime.len(),
        bags_mined: mset.len(),
        final_losses: stage.state.log.steps.last().map(|s| s.losses),
        pseudo_labels: quality,
    };
    write_json(&out.join("train_summary.json"), &summary)?;

    println!(
        "trained {} epochs ({} steps) on {} refined bags with {} mined bags",
        summary.epochs, summary.steps, summary.bags_refined, summary.bags_mined
    );
    if let Some(l) = summary.final_losses {
        println!(
            "last step: L_cls {:.4}  L_g {:.4}  L_d {:.4}  L_ctra {:.4}  L {:.4}",
            l.cls, l.gen, l.disc, l.ctra, l.total
        );
    }
    if let Some(q) = quality {
        println!(
            "pseudo-label accuracy on planted false negatives: {}/{} = {:.3}",
            q.correct, q.total, q.accuracy
        );
    }
    Ok(())
}

pub fn cmd_eval(config: &RunConfig, mine_test: bool, dump_bag_reps: bool) -> Result<()> {
    let ckpt = Checkpoint::load(&config.checkpoint_path())?;
    let model = ckpt.aligner_model()?;
    let rels = &ckpt.relations;
    let test = load_jsonl(&config.test_path(), rels, Some(&ckpt.tokens))?;
    let bags = BagSet::new(test.samples.clone());
    let out = config.out_dir();

    let evaluation = evaluate(&bags, &model, rels)?;
    evaluation.metrics.write_json(&out.join("metrics.json"))?;
    write_file(&out.join("pr_curve.csv"), &pr_csv(&evaluation.points))?;
    let m = &evaluation.metrics;
    println!(
        "AUC {:.4}  P@100 {:.1}  P@200 {:.1}  P@300 {:.1}  best micro-F1 {:.4}",
        m.auc, m.p_at["100"], m.p_at["200"], m.p_at["300"], m.best_micro_f1
    );

    if mine_test {
        let fck = Checkpoint::load(&config.filter_checkpoint_path())?;
        if fck.tokens != ckpt.tokens || &fck.relations != rels {
            return Err(FanError::Consistency(
                "filter and aligner checkpoints were trained on different vocabularies".into(),
            ));
        }
        let filter = fck.filter_model()?;
        let negatives: Vec<Sample> = na_samples(&test.samples, rels).into_iter().cloned().collect();
        let (mined, _) = mine(&negatives, &filter, config.train.theta)?;
        let ids = mined.ids();
        let scores: BTreeMap<&str, f64> = mined.entries.iter().map(|e| (e.id.as_str(), e.score)).collect();
        let rows: Vec<(&Sample, Annotation)> = negatives
            .iter()
            .filter(|s| ids.contains(&s.id))
            .map(|s| {
                let note = Annotation {
                    pseudo_relation: None,
                    confidence: scores[s.id.as_str()],
                };
                (s, note)
            })
            .collect();
        write_annotated_jsonl(&out.join("mined_test.jsonl"), &rows, rels)?;
        let report = fn_removal_experiment(&test.samples, &mined, &model, rels, config.train.seed)?;
        write_json(&out.join("fn_removal.json"), &report)?;
        println!(
            "removed {} mined test sentences: AUC {:.4} -> {:.4} (random removal {:.4})",
            report.removed, report.before.auc, report.after.auc, report.random.auc
        );
        if let Some(truth) = read_truth(&config.test_truth_path(), rels)? {
            let q = mining_quality(&mined, &negatives, &truth);
            println!("test mining: precision {:.3}, recall {:.3}", q.precision, q.recall);
        }
    }
    if dump_bag_reps {
        write_file(&out.join("bag_reps.csv"), &bag_rep_csv(&bags, &model, rels)?)?;
    }
    Ok(())
}
