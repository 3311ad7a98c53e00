//! Word-synchronous beam search: per-word surprisals and marginal scores.
//!
//! The beam marginalises over derivations, advancing all hypotheses to
//! the next word boundary together, which yields an incremental surprisal
//! for every word plus an end-of-sentence term. The example trains a
//! small model on the synthetic agreement grammar just long enough to
//! pick up the verb-agreement rule, then contrasts the surprisal profiles
//! of a grammatical sentence and its minimally different ungrammatical
//! twin: the violation shows up as a spike on the verb.
//!
//! Run with:
//!
//! ```text
//! cargo run --release --example beam_surprisals -- [--steps N] [--beam N]
//! ```

use dtg::decode::beam_search;
use dtg::model::{
    examples_from_corpus, train, Model, ModelConfig, Optimizer, TrainSchedule,
};
use dtg::synth;
use dtg::transitions::System;

fn arg(flag: &str, default: usize) -> usize {
    let args: Vec<String> = std::env::args().collect();
    args.iter()
        .position(|a| a == flag)
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

fn main() {
    let steps = arg("--steps", 800);
    let beam = arg("--beam", 8);

    let corpus = synth::generate_corpus(3000, 101).expect("synthetic corpus");
    let mut config = ModelConfig::tiny(System::Standard, corpus.vocab.size());
    config.layers = 4;
    config.heads = 4;
    config.model_dim = 64;
    config.ff_dim = 256;
    let mut model = Model::new(config, corpus.vocab.clone()).expect("model init");
    let examples = examples_from_corpus(&corpus, System::Standard, &model.vocab, model.config.rel_clip_k)
        .expect("training examples");

    let schedule = TrainSchedule {
        steps,
        batch_size: 16,
        lr: 1.5e-3,
        warmup: steps / 10,
        weight_decay: 0.01,
        grad_clip: Some(1.0),
        optimizer: Optimizer::AdamW,
        emb_lr_mult: 1.0,
        seed: 7,
    };
    println!("training {} steps on {} sentences...", steps, corpus.trees.len());
    let (report, _) = train(&mut model, &examples, &schedule, None).expect("train");
    println!("final loss {:.4}", report.losses.last().unwrap());
    println!();

    // A grammatical / ungrammatical minimal pair from the same grammar.
    let pair = &synth::generate_pairs(1, 42).expect("pairs")[0];
    for (tag, sentence) in [("good", &pair.good), ("bad", &pair.bad)] {
        let toks = words(&sentence.text());
        let out = beam_search(&model, &toks, beam, beam).expect("beam search");
        println!("{tag:5} {}", sentence.text());
        for (word, s) in toks.iter().zip(&out.surprisals) {
            println!("       {word:12} {s:7.3} nats");
        }
        println!("       {:12} {:7.3} nats", "<end>", out.end_term);
        let total: f64 = out.surprisals.iter().sum::<f64>() + out.end_term;
        println!("       total {total:.3} = -log p(x) {:.3}", -out.log_prob);
        assert!((total + out.log_prob).abs() < 1e-9, "surprisals must telescope");
        println!("       best tree: {:?}", out.best_tree.heads());
        println!();
    }
}
