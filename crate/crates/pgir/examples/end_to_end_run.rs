//! Runs the full pipeline on a throwaway repository.
//!
//! Mines the history, analyzes every lineage, writes the artifact directory,
//! and prints the digest manifest. The intent stage is skipped because no
//! labeler is configured; pass a transcript or endpoint through `RunConfig`
//! to enable it.
//!
//! Run with `cargo run -p pgir --example end_to_end_run`.

use std::fs;
use std::path::Path;
use std::process::Command;

use pgir::pipeline::{run_pipeline, Manifest, RunConfig};

fn git(repo: &Path, clock: i64, args: &[&str]) {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["-c", "user.name=example", "-c", "user.email=example@example.invalid"])
        .args(args)
        .env("GIT_AUTHOR_DATE", format!("{clock} +0000"))
        .env("GIT_COMMITTER_DATE", format!("{clock} +0000"))
        .output()
        .expect("run git");
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn main() -> pgir::Result<()> {
    let dir = tempfile::tempdir()?;
    let repo = dir.path().join("repo");
    let day = 86_400;
    let base = 1_600_000_000;
    fs::create_dir_all(repo.join("rules"))?;
    git(&repo, base, &["init", "-q", "-b", "main"]);

    fs::write(repo.join("rules/lateral.spl"), "EventCode=4624 LogonType=3")?;
    git(&repo, base + day, &["add", "-A"]);
    git(&repo, base + day, &["commit", "-q", "-m", "add lateral movement rule"]);

    fs::write(
        repo.join("rules/lateral.spl"),
        "EventCode=4624 LogonType=3 NOT user=\"backup_svc\"",
    )?;
    git(&repo, base + 30 * day, &["add", "-A"]);
    git(&repo, base + 30 * day, &["commit", "-q", "-m", "exclude backup account"]);

    let mut config = RunConfig::new(&repo, dir.path().join("out"));
    config.path_filters = vec!["rules/**/*.spl".to_string()];
    config.dump_canonical = true;
    let report = run_pipeline(&config)?;

    println!(
        "mined {} lineages / {} versions, {} revision steps, intent {}",
        report.lineages, report.versions, report.revision_steps, report.intent
    );

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(
        config.out_dir.join("manifest.json"),
    )?)
    .map_err(|e| pgir::Error::Other(e.to_string()))?;
    println!("\nartifacts:");
    for entry in &manifest.artifacts {
        println!("  {:9} bytes  {}  {}", entry.bytes, &entry.sha256[..12], entry.path);
    }
    Ok(())
}
