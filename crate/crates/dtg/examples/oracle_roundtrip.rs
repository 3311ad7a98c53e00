//! Walks a sentence through every generative transition system.
//!
//! For each system the example extracts the oracle transition sequence
//! from a gold dependency tree, prints it, replays it back into a tree,
//! and checks the round trip. It finishes with a step-by-step legality
//! walk that shows how the parser state evolves under arc-standard.
//!
//! Run with:
//!
//! ```text
//! cargo run --example oracle_roundtrip
//! ```

use dtg::transitions::{extract_oracle, replay, serialize_transitions, State, System, Transition};
use dtg::treebank::{parse_conllu, ParseOptions};

fn main() {
    // "There is a difference": `is` heads the sentence, `There` and
    // `difference` attach to it, and `a` attaches to `difference`.
    let block = "1\tThere\t2\n2\tis\t0\n3\ta\t4\n4\tdifference\t2\n";
    let corpus = parse_conllu(block, &ParseOptions::default()).expect("parse example sentence");
    let tree = &corpus.trees[0];

    println!("sentence: {}", tree.text());
    println!("heads:    {:?}", tree.heads());
    println!();

    for system in [System::Standard, System::Eager, System::Swift, System::Hybrid] {
        let seq = extract_oracle(system, tree).expect("oracle extraction");
        let replayed = replay(system, &seq).expect("replay");
        let ok = replayed.heads() == tree.heads();
        println!("{:10} {} transitions, round-trip {}", system.name(), seq.len(), if ok { "ok" } else { "FAILED" });
        println!("{:10} {}", "", serialize_transitions(&seq));
        assert!(ok, "{} oracle failed to round-trip", system.name());
    }

    // Replay the arc-standard sequence one transition at a time and show
    // which structural moves are legal before each step. `legal` takes
    // the transition kind plus a flag saying whether generation is over,
    // which gates the closing reductions onto the root.
    println!();
    println!("arc-standard legality walk:");
    let seq = extract_oracle(System::Standard, tree).expect("oracle extraction");
    let mut state = State::new(System::Standard);
    let mut gens_left = seq.iter().filter(|t| matches!(t, Transition::Gen(_))).count();
    for t in &seq {
        let done = gens_left == 0;
        let legal_now: Vec<&str> = [
            Transition::Gen(String::new()),
            Transition::LeftArc(1),
            Transition::RightArc(1),
        ]
        .iter()
        .filter(|cand| state.legal(cand.kind(), done))
        .map(|cand| match cand {
            Transition::Gen(_) => "GEN",
            Transition::LeftArc(_) => "LA",
            Transition::RightArc(_) => "RA",
            Transition::Pop => "POP",
        })
        .collect();
        println!("  take {:16} (legal here: {})", serialize_transitions(std::slice::from_ref(t)), legal_now.join(" "));
        assert!(state.legal(t.kind(), done), "oracle step must be legal");
        if matches!(t, Transition::Gen(_)) {
            gens_left -= 1;
        }
        state.apply(t).expect("apply oracle step");
    }
    assert!(state.is_terminal(), "walk must end in a terminal state");
    println!("  terminal: yes");
}
