//! Replays a recorded labeling transcript through the intent stage.
//!
//! Rebuilds each pair's prompt, verifies it against the recorded request,
//! parses the recorded responses, and derives the validation, trajectory,
//! and transition-gap reports with zero network access. The single lineage
//! below widens, narrows, and widens again, so its trajectory oscillates.
//!
//! Run with `cargo run -p pgir --example intent_replay`.

use chrono::{DateTime, SecondsFormat};
use pgir::ingest::{parse_status, Lineage, LineageStatus, VersionRecord};
use pgir::intent::{
    render_prompt, run_intent, IntentParams, ReplayLabeler, TranscriptEntry,
};
use pgir::util::sha256_hex;

const CREATED: i64 = 1_546_300_800;

const TEXTS: [&str; 4] = [
    "EventCode=4688 (Image=\"*\\\\wmic.exe\" OR Image=\"*\\\\wmiprvse.exe\")",
    "EventCode=4688 (Image=\"*\\\\wmic.exe\" OR Image=\"*\\\\wmiprvse.exe\" OR Image=\"*\\\\winrm.exe\")",
    "EventCode=4688 (Image=\"*\\\\wmic.exe\" OR Image=\"*\\\\wmiprvse.exe\" OR Image=\"*\\\\winrm.exe\") NOT user=\"svc_inv\"",
    "EventCode=4688 (Image=\"*\\\\wmic.exe\" OR Image=\"*\\\\wmiprvse.exe\" OR Image=\"*\\\\winrm.exe\" OR Image=\"*\\\\wsmprovhost.exe\") NOT user=\"svc_inv\"",
];

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
        path: "rules/wmi_spawn.spl".to_string(),
        text: text.to_string(),
        text_digest: sha256_hex(text.as_bytes()),
        parse_ok: status.parse_ok,
        parse_error: status.parse_error,
        empty_detection: status.empty_detection,
    }
}

fn response(direction: &str, label: &str, added: bool, removed: bool) -> String {
    serde_json::json!({
        "from_commit": "A",
        "to_commit": "B",
        "match_set_direction": direction,
        "predicate_modified_present": false,
        "predicate_added": added,
        "predicate_removed": removed,
        "summary": "recorded during the live run",
        "rationale_label": label,
        "rationale_confidence": "high",
        "rationale_support": "recorded during the live run",
    })
    .to_string()
}

fn main() -> pgir::Result<()> {
    let versions: Vec<VersionRecord> = TEXTS
        .iter()
        .enumerate()
        .map(|(i, text)| version(i, (i as f64) * 30.0, text))
        .collect();
    let lineage = Lineage {
        lineage_id: format!("{:040x}:rules/wmi_spawn.spl", 0),
        name: "wmi_spawn".to_string(),
        status: LineageStatus::Active,
        created_at: versions[0].time.clone(),
        last_seen: versions[3].time.clone(),
        versions,
    };

    let labels = [
        ("broader", "coverage_expansion", true, false),
        ("narrower", "false_positive_reduction", true, false),
        ("broader", "coverage_expansion", true, false),
    ];
    let transcript: Vec<TranscriptEntry> = labels
        .iter()
        .enumerate()
        .map(|(i, (direction, label, added, removed))| TranscriptEntry {
            pair_id: format!("{}#{}-{}", lineage.lineage_id, i, i + 1),
            request: render_prompt(&TEXTS[i], &TEXTS[i + 1]),
            response: response(direction, label, *added, *removed),
            timestamp: rfc(100.0),
        })
        .collect();

    let labeler = ReplayLabeler::from_entries(transcript);
    let out = run_intent(&[lineage], &labeler, &IntentParams::default())?;

    println!("labeled pairs:");
    for row in &out.rows {
        let record = row.record.as_ref().expect("replayed pair is labeled");
        println!(
            "  {} d_pred={} direction={} label={}",
            row.pair_id,
            row.d_pred,
            record.match_set_direction.as_str(),
            record.rationale_label.short()
        );
    }

    let v = &out.validation;
    println!("\nvalidation:");
    println!("  labeled {}/{} pairs", v.labeled_pairs, v.total_pairs);
    println!(
        "  change claims supported: {}/{}",
        v.change.supported, v.change.asserted
    );
    println!(
        "  addition flags supported: {}/{}",
        v.addition.supported, v.addition.asserted
    );

    let t = &out.trajectories;
    println!("\ntrajectories:");
    println!("  lineages: {} (multi-revision: {})", t.lineages, t.multi_revision);
    println!("  oscillating: {}  phased: {}", t.oscillating, t.phased);

    let g = &out.gaps;
    println!("\ntransition gaps:");
    if let Some(days) = g.ce_to_fpr.median_days {
        println!("  widen -> narrow median: {days} days");
    }
    if let Some(days) = g.fpr_to_ce.median_days {
        println!("  narrow -> widen median: {days} days");
    }
    if let Some(days) = g.first_flip_median_days {
        println!("  first direction flip after: {days} days");
    }
    Ok(())
}
