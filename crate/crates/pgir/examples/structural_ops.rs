//! Labels the structural operations a revision performs.
//!
//! Three revision steps: the first widens an OR scope (`or+`), the second
//! retunes a value in place (`val-update`), and the third rewrites a
//! conjunction into a disjunction over the same leaves, which the flip
//! detector reports as one `flip` instead of a delete/insert pair.
//!
//! Run with `cargo run -p pgir --example structural_ops`.

use pgir::align::{analyze_pair, AlignParams};
use pgir::cost::{edit_script, CostWeights};
use pgir::graph::{canonicalize, Metadata, PredicateGraph};
use pgir::spl::extract_detection;
use pgir::structops::label_step;

const V1: &str =
    "EventCode=4688 (Image=\"*\\\\mimikatz.exe\" OR Image=\"*\\\\procdump.exe\")";
const V2: &str = "EventCode=4688 (Image=\"*\\\\mimikatz.exe\" OR Image=\"*\\\\procdump.exe\" OR Image=\"*\\\\lsassdump.exe\")";
const V3: &str = "EventCode=4688 (Image=\"*\\\\mimikatz.exe\" OR Image=\"*\\\\procdump64.exe\" OR Image=\"*\\\\lsassdump.exe\")";

const NARROW: &str = "user=\"admin\" host=\"dc1\"";
const WIDE: &str = "user=\"admin\" OR host=\"dc1\"";

fn graph(rule: &str) -> pgir::Result<PredicateGraph> {
    let expr = extract_detection(rule)?.expect("rule has filtering stages");
    Ok(canonicalize(&expr, Metadata::default()))
}

fn main() -> pgir::Result<()> {
    let steps = [(V1, V2), (V2, V3), (NARROW, WIDE)];
    let params = AlignParams::default();
    let weights = CostWeights::default();

    for (before, after) in steps {
        let ga = graph(before)?;
        let gb = graph(after)?;
        let pa = analyze_pair(&ga, &gb, &params);
        let script = edit_script(&pa, &weights);
        let ops = label_step(&pa, &script, 0.5);

        println!("step: {before}");
        println!("  ->  {after}");
        println!("  d_pred = {}", script.total);
        print!("  ops:");
        for (label, count) in &ops.counts {
            print!(" {label}x{count}");
        }
        println!();
        for flip in &ops.flips {
            println!("  flip witness: {} -> {}", flip.from, flip.to);
        }
        println!();
    }
    Ok(())
}
