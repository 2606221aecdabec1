//! Repository mining: walk a git history and assemble rule lineages.
//!
//! The scan visits commits in first-parent order from the root to a chosen
//! snapshot ref, collecting every change to files matching the path filters.
//! Lineage assembly then threads those changes into per-rule version
//! sequences, carrying lineages across renames, splits, and merges by
//! canonical-graph similarity.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use chrono::{DateTime, Utc};
use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};

use crate::align::{analyze_pair, matched_leaf_fraction, AlignParams};
use crate::error::{Error, Result};
use crate::graph::{canonicalize, Metadata, PredicateGraph};
use crate::spl::extract_detection;
use crate::util::sha256_hex;

/// One stored version of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionRecord {
    pub version_index: usize,
    pub commit: String,
    /// Author time, RFC 3339 UTC, clamped to be non-decreasing per lineage.
    pub time: String,
    pub path: String,
    pub text: String,
    pub text_digest: String,
    pub parse_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    /// Parses cleanly but contains no filtering logic.
    pub empty_detection: bool,
}

impl VersionRecord {
    /// True when this version carries predicate logic usable for diffing.
    pub fn analyzable(&self) -> bool {
        self.parse_ok && !self.empty_detection
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineageStatus {
    Active,
    Deleted,
}

/// The full version sequence of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    /// First commit plus original path; stable across renames.
    pub lineage_id: String,
    /// In-file `id`/`name` when present, else the original path.
    pub name: String,
    pub status: LineageStatus,
    pub created_at: String,
    pub last_seen: String,
    pub versions: Vec<VersionRecord>,
}

/// Parse outcome of one rule text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseStatus {
    pub parse_ok: bool,
    pub parse_error: Option<String>,
    pub empty_detection: bool,
}

/// Classifies a rule body without building the canonical graph.
pub fn parse_status(text: &str) -> ParseStatus {
    match extract_detection(text) {
        Ok(Some(_)) => {
            ParseStatus { parse_ok: true, parse_error: None, empty_detection: false }
        }
        Ok(None) => ParseStatus { parse_ok: true, parse_error: None, empty_detection: true },
        Err(e) => {
            ParseStatus { parse_ok: false, parse_error: Some(e.to_string()), empty_detection: false }
        }
    }
}

/// Parses and canonicalizes a rule body; `None` when unparseable or empty.
pub fn rule_graph(text: &str) -> Option<PredicateGraph> {
    let expr = extract_detection(text).ok()??;
    Some(canonicalize(&expr, Metadata::default()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeKind {
    Added,
    Modified,
    Deleted,
}

/// One file change inside a commit; `text` is absent for deletions.
#[derive(Debug, Clone)]
pub struct FileChange {
    pub kind: ChangeKind,
    pub path: String,
    pub text: Option<String>,
    /// Converter failure message when the hook rejected this version.
    pub convert_error: Option<String>,
}

/// All rule-file changes of one commit.
#[derive(Debug, Clone)]
pub struct CommitChanges {
    pub commit: String,
    pub author_time: i64,
    pub changes: Vec<FileChange>,
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub repo: PathBuf,
    pub snapshot_ref: String,
    /// Glob patterns over repository-relative paths; empty matches nothing.
    pub path_filters: Vec<String>,
    /// Shell command converting a raw rule body (stdin) to SPL (stdout).
    pub convert_cmd: Option<String>,
    pub rename_threshold: f64,
    pub align_params: AlignParams,
}

impl ScanOptions {
    pub fn new(repo: impl Into<PathBuf>) -> ScanOptions {
        ScanOptions {
            repo: repo.into(),
            snapshot_ref: "HEAD".to_string(),
            path_filters: vec!["**/*".to_string()],
            convert_cmd: None,
            rename_threshold: 0.6,
            align_params: AlignParams::default(),
        }
    }
}

/// Assembled lineages plus any per-file or per-commit warnings.
#[derive(Debug, Clone)]
pub struct MineOutput {
    pub lineages: Vec<Lineage>,
    pub warnings: Vec<String>,
}

fn git(repo: &Path, args: &[&str]) -> Result<Vec<u8>> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .map_err(|e| Error::Git(format!("failed to run git: {e}")))?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(Error::Git(format!(
            "git {} failed: {}",
            args.join(" "),
            stderr.trim()
        )));
    }
    Ok(out.stdout)
}

fn git_text(repo: &Path, args: &[&str]) -> Result<String> {
    let bytes = git(repo, args)?;
    String::from_utf8(bytes)
        .map_err(|_| Error::Git(format!("git {} produced non-UTF-8 output", args.join(" "))))
}

#[derive(Debug, Clone)]
struct CommitInfo {
    id: String,
    author_time: i64,
    first_parent: Option<String>,
}

fn log_first_parent(repo: &Path, snapshot_ref: &str) -> Result<Vec<CommitInfo>> {
    let out = git_text(
        repo,
        &["log", "--first-parent", "--reverse", "--format=%H %at %P", snapshot_ref],
    )?;
    let mut commits = Vec::new();
    for line in out.lines() {
        let mut parts = line.split_whitespace();
        let id = parts.next().ok_or_else(|| Error::Git("empty log line".into()))?;
        let time = parts
            .next()
            .and_then(|t| t.parse::<i64>().ok())
            .ok_or_else(|| Error::Git(format!("bad author time in log line {line:?}")))?;
        let first_parent = parts.next().map(str::to_string);
        commits.push(CommitInfo { id: id.to_string(), author_time: time, first_parent });
    }
    Ok(commits)
}

const EMPTY_TREE: &str = "4b825dc642cb6eb9a060e54bf8d69288fbee4904";

fn diff_entries(repo: &Path, base: &str, commit: &str) -> Result<Vec<(ChangeKind, String)>> {
    let out = git_text(
        repo,
        &["diff-tree", "-r", "-z", "--no-renames", "--name-status", base, commit],
    )?;
    let mut fields = out.split('\0').filter(|s| !s.is_empty());
    let mut entries = Vec::new();
    while let Some(status) = fields.next() {
        let path = fields
            .next()
            .ok_or_else(|| Error::Git(format!("diff-tree status {status:?} without a path")))?;
        let kind = match status.chars().next() {
            Some('A') => ChangeKind::Added,
            Some('D') => ChangeKind::Deleted,
            Some('M') | Some('T') => ChangeKind::Modified,
            _ => continue,
        };
        entries.push((kind, path.to_string()));
    }
    Ok(entries)
}

fn show_file(repo: &Path, commit: &str, path: &str) -> Result<Vec<u8>> {
    git(repo, &["show", &format!("{commit}:{path}")])
}

fn build_globset(patterns: &[String]) -> Result<GlobSet> {
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        let glob = Glob::new(p).map_err(|e| Error::Other(format!("bad path filter {p:?}: {e}")))?;
        b.add(glob);
    }
    b.build().map_err(|e| Error::Other(format!("bad path filters: {e}")))
}

fn run_converter(cmd: &str, input: &str) -> std::result::Result<String, String> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("converter failed to start: {e}"))?;
    child
        .stdin
        .take()
        .expect("stdin piped")
        .write_all(input.as_bytes())
        .map_err(|e| format!("converter rejected input: {e}"))?;
    let out = child.wait_with_output().map_err(|e| format!("converter did not finish: {e}"))?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(format!("converter exited nonzero: {}", stderr.trim()));
    }
    String::from_utf8(out.stdout).map_err(|_| "converter produced non-UTF-8 output".to_string())
}

/// Walks the history and returns every matching file change with content,
/// commit by commit in first-parent order.
pub fn scan_repository(opts: &ScanOptions) -> Result<(Vec<CommitChanges>, Vec<String>)> {
    let globs = build_globset(&opts.path_filters)?;
    let commits = log_first_parent(&opts.repo, &opts.snapshot_ref)?;
    let mut warnings = Vec::new();
    let mut stream = Vec::new();

    for c in &commits {
        let base = c.first_parent.as_deref().unwrap_or(EMPTY_TREE);
        let mut entries = diff_entries(&opts.repo, base, &c.id)?;
        entries.retain(|(_, path)| globs.is_match(path));
        entries.sort_by(|a, b| a.1.cmp(&b.1));

        let mut changes = Vec::new();
        for (kind, path) in entries {
            if kind == ChangeKind::Deleted {
                changes.push(FileChange { kind, path, text: None, convert_error: None });
                continue;
            }
            let bytes = show_file(&opts.repo, &c.id, &path)?;
            let raw = match String::from_utf8(bytes) {
                Ok(s) => s,
                Err(_) => {
                    warnings.push(format!(
                        "skipped undecodable file {path} at commit {}",
                        c.id
                    ));
                    continue;
                }
            };
            let (text, convert_error) = match &opts.convert_cmd {
                None => (raw, None),
                Some(cmd) => match run_converter(cmd, &raw) {
                    Ok(converted) => (converted, None),
                    Err(msg) => {
                        warnings.push(format!(
                            "converter failed for {path} at commit {}: {msg}",
                            c.id
                        ));
                        (raw, Some(msg))
                    }
                },
            };
            changes.push(FileChange { kind, path, text: Some(text), convert_error });
        }
        if !changes.is_empty() {
            stream.push(CommitChanges {
                commit: c.id.clone(),
                author_time: c.author_time,
                changes,
            });
        }
    }
    Ok((stream, warnings))
}

fn infile_name(text: &str) -> Option<String> {
    let clean = |v: &str| {
        let v = v.trim().trim_matches('"').trim_matches('\'').trim();
        if v.is_empty() { None } else { Some(v.to_string()) }
    };
    let mut name = None;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("id:") {
            if let Some(v) = clean(rest) {
                return Some(v);
            }
        }
        if name.is_none() {
            if let Some(rest) = line.strip_prefix("name:") {
                name = clean(rest);
            }
        }
    }
    name
}

fn rfc3339(unix: i64) -> String {
    DateTime::<Utc>::from_timestamp(unix, 0)
        .unwrap_or_else(|| DateTime::<Utc>::from_timestamp(0, 0).expect("epoch"))
        .to_rfc3339()
}

struct LiveLineage {
    id: String,
    name: String,
    created_at: String,
    versions: Vec<VersionRecord>,
    last_time: i64,
}

impl LiveLineage {
    fn push_version(
        &mut self,
        commit: &str,
        author_time: i64,
        path: &str,
        text: String,
        convert_error: Option<String>,
        warnings: &mut Vec<String>,
    ) {
        let mut t = author_time;
        if t < self.last_time {
            warnings.push(format!(
                "clamped non-monotone author time at commit {commit} for {path}"
            ));
            t = self.last_time;
        }
        self.last_time = t;
        let status = match convert_error {
            Some(msg) => {
                ParseStatus { parse_ok: false, parse_error: Some(msg), empty_detection: false }
            }
            None => parse_status(&text),
        };
        self.versions.push(VersionRecord {
            version_index: self.versions.len(),
            commit: commit.to_string(),
            time: rfc3339(t),
            path: path.to_string(),
            text_digest: sha256_hex(text.as_bytes()),
            text,
            parse_ok: status.parse_ok,
            parse_error: status.parse_error,
            empty_detection: status.empty_detection,
        });
    }

    fn finish(self, status: LineageStatus, last_seen: String) -> Lineage {
        Lineage {
            lineage_id: self.id,
            name: self.name,
            status,
            created_at: self.created_at,
            last_seen,
            versions: self.versions,
        }
    }
}

/// Similarity between two rule bodies: 1.0 for identical text, otherwise the
/// matched-leaf fraction of the aligned canonical graphs, and 0.0 when
/// either side has no usable predicate logic.
pub fn rule_similarity(a: &str, b: &str, params: &AlignParams) -> f64 {
    if a == b {
        return 1.0;
    }
    match (rule_graph(a), rule_graph(b)) {
        (Some(ga), Some(gb)) => matched_leaf_fraction(&analyze_pair(&ga, &gb, params)),
        _ => 0.0,
    }
}

/// Threads a change stream into lineages, pairing same-commit deletions and
/// additions as renames when similar enough. On a split the most similar
/// descendant continues the lineage; on a merge the most similar
/// predecessor does.
pub fn build_lineages(
    stream: &[CommitChanges],
    rename_threshold: f64,
    params: &AlignParams,
) -> MineOutput {
    let mut warnings = Vec::new();
    let mut live: BTreeMap<String, LiveLineage> = BTreeMap::new();
    let mut finished: Vec<Lineage> = Vec::new();

    for cc in stream {
        let mut dels: Vec<String> = Vec::new();
        let mut adds: Vec<&FileChange> = Vec::new();
        let mut mods: Vec<&FileChange> = Vec::new();
        for ch in &cc.changes {
            match ch.kind {
                ChangeKind::Deleted => {
                    if live.contains_key(&ch.path) {
                        dels.push(ch.path.clone());
                    }
                }
                ChangeKind::Added => {
                    if live.contains_key(&ch.path) {
                        mods.push(ch);
                    } else {
                        adds.push(ch);
                    }
                }
                ChangeKind::Modified => {
                    if live.contains_key(&ch.path) {
                        mods.push(ch);
                    } else {
                        adds.push(ch);
                    }
                }
            }
        }

        let mut candidates: Vec<(f64, String, String)> = Vec::new();
        for d in &dels {
            let old_text = live[d].versions.last().expect("live lineage has versions").text.clone();
            for a in &adds {
                let text = a.text.as_deref().expect("additions carry text");
                let sim = rule_similarity(&old_text, text, params);
                if sim >= rename_threshold {
                    candidates.push((sim, d.clone(), a.path.clone()));
                }
            }
        }
        candidates.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .expect("similarities are finite")
                .then_with(|| x.1.cmp(&y.1))
                .then_with(|| x.2.cmp(&y.2))
        });

        let mut renamed_from: BTreeMap<String, String> = BTreeMap::new();
        let mut used_del: Vec<String> = Vec::new();
        for (_, d, a) in candidates {
            if used_del.contains(&d) || renamed_from.contains_key(&a) {
                continue;
            }
            used_del.push(d.clone());
            renamed_from.insert(a, d);
        }

        for d in &dels {
            if used_del.contains(d) {
                continue;
            }
            let ll = live.remove(d).expect("deletion of a live path");
            let last_seen = rfc3339(cc.author_time.max(ll.last_time));
            finished.push(ll.finish(LineageStatus::Deleted, last_seen));
        }

        for a in &adds {
            let text = a.text.clone().expect("additions carry text");
            if let Some(old_path) = renamed_from.get(&a.path) {
                let mut ll = live.remove(old_path).expect("rename source is live");
                ll.push_version(
                    &cc.commit,
                    cc.author_time,
                    &a.path,
                    text,
                    a.convert_error.clone(),
                    &mut warnings,
                );
                live.insert(a.path.clone(), ll);
            } else {
                let mut ll = LiveLineage {
                    id: format!("{}:{}", cc.commit, a.path),
                    name: infile_name(&text).unwrap_or_else(|| a.path.clone()),
                    created_at: rfc3339(cc.author_time),
                    versions: Vec::new(),
                    last_time: cc.author_time,
                };
                ll.push_version(
                    &cc.commit,
                    cc.author_time,
                    &a.path,
                    text,
                    a.convert_error.clone(),
                    &mut warnings,
                );
                live.insert(a.path.clone(), ll);
            }
        }

        for m in &mods {
            let text = m.text.clone().expect("modifications carry text");
            let ll = live.get_mut(&m.path).expect("modification of a live path");
            ll.push_version(
                &cc.commit,
                cc.author_time,
                &m.path,
                text,
                m.convert_error.clone(),
                &mut warnings,
            );
        }
    }

    for (_, ll) in live {
        let last_seen = rfc3339(ll.last_time);
        finished.push(ll.finish(LineageStatus::Active, last_seen));
    }
    finished.sort_by(|a, b| {
        a.created_at.cmp(&b.created_at).then_with(|| a.lineage_id.cmp(&b.lineage_id))
    });
    MineOutput { lineages: finished, warnings }
}

/// Scans a repository and assembles its lineages in one call.
pub fn mine_repository(opts: &ScanOptions) -> Result<MineOutput> {
    let (stream, mut warnings) = scan_repository(opts)?;
    let mut out = build_lineages(&stream, opts.rename_threshold, &opts.align_params);
    warnings.append(&mut out.warnings);
    Ok(MineOutput { lineages: out.lineages, warnings })
}

/// Writes one JSON object per lineage.
pub fn write_lineages(path: &Path, lineages: &[Lineage]) -> Result<()> {
    let mut out = String::new();
    for l in lineages {
        out.push_str(&serde_json::to_string(l).map_err(|e| Error::Other(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a lineages JSONL file.
pub fn read_lineages(path: &Path) -> Result<Vec<Lineage>> {
    let text = std::fs::read_to_string(path)?;
    let mut lineages = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: Lineage = serde_json::from_str(line)
            .map_err(|e| Error::Other(format!("{}:{}: {e}", path.display(), n + 1)))?;
        lineages.push(l);
    }
    Ok(lineages)
}
