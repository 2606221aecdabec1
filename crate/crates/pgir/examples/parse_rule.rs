//! Parses an SPL search into its raw predicate expression.
//!
//! Splits the pipeline into stages, classifies each as filtering or
//! non-filtering, and prints the Boolean expression extracted from the
//! filtering stages.
//!
//! Run with `cargo run -p pgir --example parse_rule`.

use pgir::graph::serialize_raw;
use pgir::spl::{extract_detection, split_stages, StageKind};

const RULE: &str = concat!(
    "sourcetype=\"win:security\" EventCode=4688 ",
    "(Image=\"*\\\\mimikatz.exe\" OR CommandLine=\"*sekurlsa*\") ",
    "NOT user=\"SYSTEM\" ",
    "| stats count by host ",
    "| where count > 5"
);

fn main() -> pgir::Result<()> {
    println!("rule text:\n  {RULE}\n");

    println!("stages:");
    for stage in split_stages(RULE)? {
        let kind = match &stage.kind {
            StageKind::Filtering(f) => format!("filtering ({f:?})"),
            StageKind::NonFiltering(cmd) => format!("non-filtering ({cmd})"),
        };
        println!("  [{}] {kind}: {}", stage.index, stage.text);
    }

    let expr = extract_detection(RULE)?.expect("rule has filtering stages");
    println!("\nraw predicate expression:\n{}", serialize_raw(&expr));
    Ok(())
}
