//! Mines a git repository into rule lineages.
//!
//! Builds a small throwaway repository (three commits, one rename, one
//! delete), walks its first-parent history, and prints the assembled
//! lineages. The rename is recovered by canonical-graph similarity, so the
//! moved file continues its original lineage.
//!
//! Run with `cargo run -p pgir --example mine_repository`.

use std::path::Path;
use std::process::Command;

use pgir::ingest::{mine_repository, ScanOptions};

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
    let repo = dir.path();
    let day = 86_400;
    let base = 1_600_000_000;
    git(repo, base, &["init", "-q", "-b", "main"]);

    std::fs::create_dir_all(repo.join("rules"))?;
    std::fs::write(repo.join("rules/encoded_ps.spl"), "EventCode=4104 Message=\"*-enc*\"")?;
    std::fs::write(repo.join("rules/temp_exec.spl"), "Image=\"*\\\\temp\\\\*\" EventCode=4688")?;
    git(repo, base + day, &["add", "-A"]);
    git(repo, base + day, &["commit", "-q", "-m", "add two rules"]);

    std::fs::write(
        repo.join("rules/encoded_ps.spl"),
        "EventCode=4104 Message=\"*-enc*\" NOT user=\"svc_scan\"",
    )?;
    git(repo, base + 2 * day, &["add", "-A"]);
    git(repo, base + 2 * day, &["commit", "-q", "-m", "exclude the scanner account"]);

    std::fs::rename(
        repo.join("rules/encoded_ps.spl"),
        repo.join("rules/windows_encoded_ps.spl"),
    )?;
    std::fs::remove_file(repo.join("rules/temp_exec.spl"))?;
    git(repo, base + 3 * day, &["add", "-A"]);
    git(repo, base + 3 * day, &["commit", "-q", "-m", "rename one rule, retire the other"]);

    let opts = ScanOptions {
        path_filters: vec!["rules/**/*.spl".to_string()],
        ..ScanOptions::new(repo)
    };
    let mined = mine_repository(&opts)?;

    for lineage in &mined.lineages {
        println!("lineage {} ({:?})", lineage.name, lineage.status);
        println!("  created {}  last seen {}", lineage.created_at, lineage.last_seen);
        for v in &lineage.versions {
            println!(
                "  v{} {} {}  parse_ok={}",
                v.version_index,
                &v.commit[..8.min(v.commit.len())],
                v.path,
                v.parse_ok
            );
        }
    }
    for w in &mined.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
