//! End-to-end syntactic-generalization pipeline on the synthetic
//! agreement corpus: train a model on generated trees, measure
//! minimal-pair accuracy against an untrained baseline, and compare
//! reranked attachment accuracy with a random-pick baseline.
//!
//! Run with `cargo run --release --example agreement_pipeline`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use dtg::decode::{rerank, ProposalSet};
use dtg::evalharness::{minimal_pairs_gold, uas};
use dtg::model::{
    examples_from_corpus, train, Model, ModelConfig, Optimizer, TrainSchedule,
};
use dtg::synth;
use dtg::transitions::System;
use dtg::treebank::DepTree;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let sentences = arg("--sentences", 5000.0) as usize;
    let steps = arg("--steps", 600.0) as usize;
    let batch = arg("--batch", 16.0) as usize;
    let lr = arg("--lr", 1e-3);
    let dim = arg("--dim", 64.0) as usize;
    let ff = arg("--ff", 256.0) as usize;

    let start = Instant::now();
    let corpus = synth::generate_corpus(sentences, 101).expect("corpus");
    let pairs = synth::generate_pairs(200, 202).expect("pairs");
    let heldout = synth::generate_trees(200, 303).expect("heldout");
    println!(
        "data: {} train sentences, {} pairs, {} held-out ({:.1?})",
        corpus.trees.len(),
        pairs.len(),
        heldout.len(),
        start.elapsed()
    );

    let mut config = ModelConfig::desk_default(System::Standard, corpus.vocab.size());
    config.model_dim = dim;
    config.ff_dim = ff;
    config.rel_clip_k = 8;
    let mut model = Model::new(config, corpus.vocab.clone()).expect("model");

    let untrained = minimal_pairs_gold(&model, &pairs, 4).expect("untrained pairs");
    println!("untrained pair accuracy: {:.3}", untrained.accuracy);

    let examples = examples_from_corpus(&corpus, System::Standard, &model.vocab, 8)
        .expect("examples");
    let schedule = TrainSchedule {
        steps,
        batch_size: batch,
        lr,
        warmup: steps / 10,
        weight_decay: 0.01,
        grad_clip: Some(1.0),
        optimizer: Optimizer::AdamW,
        emb_lr_mult: 1.0,
        seed: 7,
    };
    let t0 = Instant::now();
    let mut progress = |step: usize, loss: f64, lr: f64| {
        if step % 50 == 0 {
            println!("step {step}: loss {loss:.4} lr {lr:.2e} ({:.1?})", t0.elapsed());
        }
    };
    let (report, _) = train(&mut model, &examples, &schedule, Some(&mut progress)).expect("train");
    println!(
        "trained {} steps in {:.1?}; final loss {:.4}",
        report.steps_run,
        t0.elapsed(),
        report.losses.last().unwrap()
    );

    let trained = minimal_pairs_gold(&model, &pairs, 4).expect("trained pairs");
    println!("trained pair accuracy: {:.3}", trained.accuracy);
    for (tag, acc, n) in &trained.per_tag {
        println!("  {tag}: {acc:.3} ({n})");
    }

    // Reranking: 20 candidate trees per held-out sentence (gold plus 19
    // seeded distractors); baseline picks uniformly from the same set.
    let t1 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut reranked: Vec<DepTree> = Vec::new();
    let mut random_pick: Vec<DepTree> = Vec::new();
    for tree in &heldout {
        let set = proposal_set_with_gold(tree, 20, rng.next_u64());
        let outcome = rerank(&model, &set).expect("rerank");
        reranked.push(outcome.best_tree);
        let pick = rng.random_range(0..set.trees.len());
        random_pick.push(set.trees[pick].clone());
    }
    let uas_model = uas(&reranked, &heldout).expect("uas");
    let uas_random = uas(&random_pick, &heldout).expect("uas");
    println!(
        "reranked UAS {:.3} vs random-pick {:.3} (margin {:+.3}, {:.1?})",
        uas_model,
        uas_random,
        uas_model - uas_random,
        t1.elapsed()
    );
    println!("total {:.1?}", start.elapsed());
}

/// Builds a candidate set containing the gold tree plus seeded random
/// distinct projective distractors.
fn proposal_set_with_gold(gold: &DepTree, size: usize, seed: u64) -> ProposalSet {
    let words: Vec<String> = gold.tokens().iter().map(|t| t.form.clone()).collect();
    let rollouts = ProposalSet::rollouts(&words, size * 2, seed).expect("rollouts");
    let mut trees = vec![gold.clone()];
    for tree in rollouts.trees {
        if trees.len() >= size {
            break;
        }
        if tree.heads() != gold.heads() {
            trees.push(tree);
        }
    }
    ProposalSet::new(trees, "gold+rollouts").expect("proposal set")
}
