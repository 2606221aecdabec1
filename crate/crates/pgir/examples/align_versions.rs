//! Aligns two versions of a rule and shows which phase matched each node.
//!
//! Phase 1 anchors unique exact leaves, phase 2 matches operators on
//! anchored evidence, phase 3 resolves duplicate leaves scope-locally, and
//! phase 4 matches the remaining leaves fuzzily (the retuned threshold and
//! the whitespace-variant wildcard below).
//!
//! Run with `cargo run -p pgir --example align_versions`.

use pgir::align::{analyze_pair, AlignParams, Tree};
use pgir::graph::{canonicalize, Metadata, Polarity};
use pgir::spl::extract_detection;

const VERSION_1: &str =
    "EventCode=4688 CommandLine=\"* -e*\" (path=\"*\\\\temp\\\\*\" OR path=\"*\\\\tmp\\\\*\") count>10";

const VERSION_2: &str =
    "EventCode=4688 CommandLine=\"*-e*\" (path=\"*\\\\temp\\\\*\" OR path=\"*\\\\tmp\\\\*\") count>25";

fn describe(t: &Tree, i: usize) -> String {
    if t.is_leaf(i) {
        let p = t.leaf(i);
        let neg = if p.polarity == Polarity::Negative { "NOT " } else { "" };
        format!("{neg}{} {} {}", p.field, p.comparator.as_str(), p.payload.display_inline())
    } else {
        format!("{}", t.op_label(i).expect("operator node"))
    }
}

fn main() -> pgir::Result<()> {
    let ga = canonicalize(
        &extract_detection(VERSION_1)?.expect("filtering stages"),
        Metadata::default(),
    );
    let gb = canonicalize(
        &extract_detection(VERSION_2)?.expect("filtering stages"),
        Metadata::default(),
    );

    let pa = analyze_pair(&ga, &gb, &AlignParams::default());
    println!("version 1: {VERSION_1}");
    println!("version 2: {VERSION_2}\n");

    println!("matched pairs:");
    for (a, b) in pa.alignment.matched_pairs() {
        let phase = pa.alignment.phase_a[a].expect("matched node has a phase");
        println!(
            "  {:3} {:40} -> {}",
            phase.as_str(),
            describe(&pa.ta, a),
            describe(&pa.tb, b)
        );
    }

    let unmatched_a: Vec<String> = (0..pa.ta.len())
        .filter(|&i| pa.alignment.a2b[i].is_none())
        .map(|i| describe(&pa.ta, i))
        .collect();
    let unmatched_b: Vec<String> = (0..pa.tb.len())
        .filter(|&j| pa.alignment.b2a[j].is_none())
        .map(|j| describe(&pa.tb, j))
        .collect();
    println!("\nunmatched in version 1: {unmatched_a:?}");
    println!("unmatched in version 2: {unmatched_b:?}");
    Ok(())
}
