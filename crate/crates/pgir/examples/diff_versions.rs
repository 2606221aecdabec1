//! Scores a revision with the weighted predicate edit distance.
//!
//! Unmatched leaves are charged as insertions/deletions, matched-but-changed
//! leaves as component updates (field, comparator/polarity, value), and
//! unmatched operators as Boolean structure edits. The revision below
//! narrows one wildcard value, drops one conjunct, and adds an exclusion.
//!
//! Run with `cargo run -p pgir --example diff_versions`.

use pgir::align::{analyze_pair, AlignParams};
use pgir::cost::{edit_script, CostWeights, Edit};
use pgir::graph::{canonicalize, Metadata};
use pgir::spl::extract_detection;

const BEFORE: &str =
    "EventCode=4688 CommandLine=\"*schtasks*create*\" source=\"xmlwineventlog\"";

const AFTER: &str =
    "EventCode=4688 CommandLine=\"*schtasks*create*sc*\" NOT user=\"SYSTEM\"";

fn main() -> pgir::Result<()> {
    let ga = canonicalize(
        &extract_detection(BEFORE)?.expect("filtering stages"),
        Metadata::default(),
    );
    let gb = canonicalize(
        &extract_detection(AFTER)?.expect("filtering stages"),
        Metadata::default(),
    );

    let pa = analyze_pair(&ga, &gb, &AlignParams::default());
    let weights = CostWeights::default();
    let script = edit_script(&pa, &weights);

    println!("before: {BEFORE}");
    println!("after:  {AFTER}\n");

    println!("edit script:");
    for edit in &script.edits {
        match edit {
            Edit::PredDelete { a, cost } => {
                println!("  delete leaf A{a}                     {cost:.1}")
            }
            Edit::PredInsert { b, cost } => {
                println!("  insert leaf B{b}                     {cost:.1}")
            }
            Edit::PredUpdate { a, b, changed, cost } => println!(
                "  update leaf A{a}->B{b} (field={} cmp={} value={})  {cost:.1}",
                changed.field, changed.operator, changed.value
            ),
            Edit::OpDelete { a, cost } => {
                println!("  delete operator A{a}                 {cost:.1}")
            }
            Edit::OpInsert { b, cost } => {
                println!("  insert operator B{b}                 {cost:.1}")
            }
            Edit::OpRelabel { a, b, cost } => {
                println!("  relabel operator A{a}->B{b}          {cost:.1}")
            }
        }
    }

    let bd = &script.breakdown;
    println!("\nbreakdown:");
    println!("  predicate deletes: {} ({:.1})", bd.pred_deletes, bd.pred_delete_cost);
    println!("  predicate inserts: {} ({:.1})", bd.pred_inserts, bd.pred_insert_cost);
    println!("  predicate updates: {} ({:.1})", bd.pred_updates, bd.pred_update_cost);
    println!("  operator edits:    {}", bd.op_deletes + bd.op_inserts + bd.op_relabels);
    println!("\nd_pred = {}", script.total);
    Ok(())
}
