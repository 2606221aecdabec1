//! Canonicalizes two logically equivalent rule spellings to the same graph.
//!
//! Negations are pushed down to leaf polarity with De Morgan's laws, nested
//! same-label operators are flattened, duplicate subtrees are removed, and
//! children are deterministically ordered, so both spellings serialize to
//! byte-identical text.
//!
//! Run with `cargo run -p pgir --example canonicalize_rule`.

use pgir::graph::{canonicalize, serialize, Metadata};
use pgir::spl::extract_detection;

const SPELLING_A: &str =
    "NOT (user=\"SYSTEM\" OR user=\"LOCAL SERVICE\") (EventCode=4688 OR (EventCode=4689 OR EventCode=4688))";

const SPELLING_B: &str =
    "(EventCode=4689 OR EventCode=4688) user!=\"LOCAL SERVICE\" user!=\"SYSTEM\"";

fn canonical_text(rule: &str) -> pgir::Result<String> {
    let expr = extract_detection(rule)?.expect("rule has filtering stages");
    Ok(serialize(&canonicalize(&expr, Metadata::default())))
}

fn main() -> pgir::Result<()> {
    let a = canonical_text(SPELLING_A)?;
    let b = canonical_text(SPELLING_B)?;

    println!("spelling A:\n  {SPELLING_A}\n");
    println!("spelling B:\n  {SPELLING_B}\n");
    println!("canonical form of A:\n{a}");
    println!("canonical forms identical: {}", a == b);
    Ok(())
}
