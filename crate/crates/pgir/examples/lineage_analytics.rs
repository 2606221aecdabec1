//! Aggregates a small corpus of lineages into longitudinal analytics.
//!
//! Three hand-built lineages: one grows twice (an early and a late
//! expansion), one tightens a scope and then reverts it two days later (an
//! exact A-B-A), and one is never edited. The corpus summary, lifecycle
//! archetypes, revision patterns, and reversion report all fall out of
//! `analyze_corpus`.
//!
//! Run with `cargo run -p pgir --example lineage_analytics`.

use chrono::{DateTime, SecondsFormat};
use pgir::analytics::{analyze_corpus, AnalyzeParams};
use pgir::ingest::{parse_status, Lineage, LineageStatus, VersionRecord};
use pgir::util::sha256_hex;

const CREATED: i64 = 1_546_300_800;

fn rfc(day: f64) -> String {
    DateTime::from_timestamp(CREATED + (day * 86_400.0) as i64, 0)
        .expect("valid timestamp")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn version(index: usize, day: f64, text: &str) -> VersionRecord {
    let status = parse_status(text);
    VersionRecord {
        version_index: index,
        commit: format!("{index:040x}"),
        time: rfc(day),
        path: "rules/example.spl".to_string(),
        text: text.to_string(),
        text_digest: sha256_hex(text.as_bytes()),
        parse_ok: status.parse_ok,
        parse_error: status.parse_error,
        empty_detection: status.empty_detection,
    }
}

fn lineage(name: &str, versions: Vec<VersionRecord>) -> Lineage {
    Lineage {
        lineage_id: format!("{:040x}:rules/{name}.spl", 0),
        name: name.to_string(),
        status: LineageStatus::Active,
        created_at: versions.first().expect("non-empty").time.clone(),
        last_seen: versions.last().expect("non-empty").time.clone(),
        versions,
    }
}

fn main() -> pgir::Result<()> {
    let corpus = vec![
        lineage(
            "grows",
            vec![
                version(0, 0.0, "EventCode=4688 Image=\"*\\\\psexec.exe\""),
                version(1, 10.0, "EventCode=4688 Image=\"*\\\\psexec.exe\" user=\"admin\""),
                version(
                    2,
                    800.0,
                    "EventCode=4688 Image=\"*\\\\psexec.exe\" user=\"admin\" host=\"dc1\"",
                ),
            ],
        ),
        lineage(
            "reverts",
            vec![
                version(0, 0.0, "EventCode=4104 Message=\"*-enc*\""),
                version(1, 300.0, "EventCode=4104 Message=\"*-enc*\" NOT user=\"svc\""),
                version(2, 302.0, "EventCode=4104 Message=\"*-enc*\""),
            ],
        ),
        lineage("untouched", vec![version(0, 5.0, "sourcetype=\"dns\" query=\"*.onion\"")]),
    ];

    let snapshot = DateTime::from_timestamp(CREATED + 1200 * 86_400, 0);
    let out = analyze_corpus(&corpus, &AnalyzeParams::default(), snapshot)?;

    let s = &out.summary;
    println!("corpus summary:");
    println!("  rules: {} ({} edited)", s.total_rules, s.edited_rules);
    println!("  revision steps: {}", s.revision_steps);
    println!("  predicate-changing steps: {}", s.predicate_changing_steps);
    if let Some(m) = &s.magnitude {
        println!("  step magnitude: median {} max {}", m.median, m.max);
    }

    println!("\nlifecycle archetypes ({} eligible):", out.archetypes.eligible);
    for (name, count) in &out.archetypes.counts {
        if *count > 0 {
            println!("  {name}: {count}");
        }
    }

    println!("\nrevision patterns ({} lineages with changes):", out.patterns.lineages);
    for (name, count) in &out.patterns.counts {
        if *count > 0 {
            println!("  {name}: {count}");
        }
    }

    println!("\nexact reversions:");
    for t in &out.aba.triplets {
        println!(
            "  {} v{} -> v{} -> v{} restored after {} hours",
            t.lineage_id, t.first_index, t.middle_index, t.restored_index, t.restore_hours
        );
    }

    println!("\nper-step records:");
    for step in out.steps.iter().filter(|s| !s.excluded) {
        let ops = step.ops.as_ref().expect("analyzed step carries ops");
        let labels: Vec<String> =
            ops.counts.iter().map(|(l, n)| format!("{l}x{n}")).collect();
        println!(
            "  {} v{}->v{} d_pred={} ops=[{}]",
            step.lineage_id,
            step.from_index,
            step.to_index,
            step.d_pred.expect("analyzed step carries distance"),
            labels.join(" ")
        );
    }
    Ok(())
}
