//! Prints the expanded transition table and attention-mask matrix for a
//! sentence, the machinery that lets a plain transformer decoder emulate
//! a transition-based parser.
//!
//! Each oracle transition expands into one or two input rows: stack rows
//! attend to everything currently visible, while composition rows narrow
//! attention to the new arc's head and dependent. The example prints, per
//! row, its input symbol, row type, attended columns, stack-relative
//! positions, and predicted target, then verifies that feeding rows one
//! at a time through the incremental masker reproduces the batch result.
//!
//! Run with:
//!
//! ```text
//! cargo run --example mask_trace
//! ```

use dtg::attnmask::{build_masks, expand, item_label, AttnForm, Masker};
use dtg::transitions::{extract_oracle, System};
use dtg::treebank::{parse_conllu, ParseOptions};

fn main() {
    let block = "1\tThere\t2\n2\tis\t0\n3\ta\t4\n4\tdifference\t2\n";
    let corpus = parse_conllu(block, &ParseOptions::default()).expect("parse example sentence");
    let tree = &corpus.trees[0];
    let vocab = &corpus.vocab;

    let seq = extract_oracle(System::Standard, tree).expect("oracle extraction");
    let items = expand(System::Standard, &seq, vocab).expect("expand transitions");
    let bundle = build_masks(System::Standard, &items).expect("build masks");

    println!("sentence: {}", tree.text());
    println!("{} transitions expand into {} rows", seq.len(), items.len());
    println!();
    println!(
        "{:>3}  {:16} {:7} {:24} {:18} {}",
        "row", "input", "type", "attends", "relpos", "predicts"
    );
    for (i, item) in items.iter().enumerate() {
        let attends: Vec<String> = (0..bundle.rows)
            .filter(|&j| bundle.attend[i][j])
            .map(|j| j.to_string())
            .collect();
        let relpos: Vec<String> = (0..bundle.rows)
            .filter(|&j| bundle.attend[i][j])
            .map(|j| bundle.relpos[i][j].to_string())
            .collect();
        let form = match item.form {
            AttnForm::Stack => "stack",
            AttnForm::Compose => "compose",
            AttnForm::PopStack => "pop",
        };
        let predicts = bundle
            .prediction_positions
            .iter()
            .position(|&p| p == i)
            .map(|slot| vocab.form_of(bundle.target_ids[slot]))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>3}  {:16} {:7} {:24} {:18} {}",
            i,
            item_label(item, vocab),
            form,
            attends.join(","),
            relpos.join(","),
            predicts
        );
    }

    // The same masks fall out of the incremental interface, which is what
    // constrained decoding uses: one row per expanded item, in order.
    let mut masker = Masker::new(System::Standard);
    for (i, item) in items.iter().enumerate() {
        let row = masker.step(item).expect("incremental mask row");
        let batch: Vec<usize> = (0..bundle.rows).filter(|&j| bundle.attend[i][j]).collect();
        assert_eq!(row.attend, batch, "row {i} diverges from the batch mask");
    }
    println!();
    println!("incremental masker reproduced all {} rows exactly", items.len());
}
