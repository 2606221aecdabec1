//! End-to-end run orchestration: mine a repository, analyze every lineage,
//! optionally label revision intents, and leave a self-describing artifact
//! directory with a content-digest manifest.
//!
//! Artifacts are staged in a sibling directory and moved into place only on
//! success, so a failed run never leaves partial outputs behind.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::AlignParams;
use crate::analytics::{analyze_corpus, parse_time, write_corpus, AnalyzeParams};
use crate::cost::CostWeights;
use crate::graph::serialize;
use crate::ingest::{mine_repository, rule_graph, write_lineages, Lineage, ScanOptions};
use crate::intent::{run_intent, write_intent, HttpLabeler, IntentParams, ReplayLabeler};
use crate::util::sha256_hex;
use crate::{Error, Result};

/// Intent-stage endpoint configuration. With `replay` set the stage replays
/// the transcript offline; with only `endpoint` set it queries live; with
/// neither it is skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: Option<String>,
    pub model: String,
    pub replay: Option<PathBuf>,
    pub context_budget_tokens: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: None,
            model: "gpt-5".to_string(),
            replay: None,
            context_budget_tokens: 200_000,
        }
    }
}

/// Fully resolved run configuration; every run writes it out as config.json
/// so each threshold and default is auditable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub repo: PathBuf,
    pub snapshot_ref: String,
    pub path_filters: Vec<String>,
    pub convert_cmd: Option<String>,
    pub rename_threshold: f64,
    pub align: AlignParams,
    pub weights: CostWeights,
    pub theta_flip: f64,
    /// Analytics reference time (RFC 3339); defaults to the newest version
    /// timestamp in the corpus.
    pub snapshot_time: Option<String>,
    pub skip_intent: bool,
    pub llm: LlmConfig,
    /// Also dump the canonical text of every analyzable version.
    pub dump_canonical: bool,
    /// Labeler calls in flight during the intent stage.
    pub jobs: usize,
    /// Seeds reproducible corpus generation in tests; the run itself never
    /// draws randomness.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn new(repo: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> RunConfig {
        let scan = ScanOptions::new("");
        RunConfig {
            repo: repo.into(),
            snapshot_ref: scan.snapshot_ref,
            path_filters: scan.path_filters,
            convert_cmd: None,
            rename_threshold: scan.rename_threshold,
            align: AlignParams::default(),
            weights: CostWeights::default(),
            theta_flip: AnalyzeParams::default().theta_flip,
            snapshot_time: None,
            skip_intent: false,
            llm: LlmConfig::default(),
            dump_canonical: false,
            jobs: 4,
            seed: 0,
            out_dir: out_dir.into(),
        }
    }
}

/// One manifest line: an artifact's path relative to the run directory, its
/// size, and its SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Digest manifest over every artifact of a run, sorted by path; the
/// manifest file itself is not listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
}

/// Run-level counts and notes, written as run.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub lineages: usize,
    pub versions: usize,
    pub revision_steps: usize,
    /// `written`, `skipped (--skip-intent)`, or `skipped (no labeler
    /// configured)`.
    pub intent: String,
    pub warnings: Vec<String>,
}

/// Runs the complete pipeline into `config.out_dir`. An existing output
/// directory is replaced only when empty or left by a previous run.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    let out = &config.out_dir;
    let name = out
        .file_name()
        .ok_or_else(|| Error::Other(format!("output path {} has no name", out.display())))?;
    let staging = out.with_file_name(format!("{}.staging", name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }

    match build_artifacts(config, &staging) {
        Ok(report) => {
            replace_dir(&staging, out)?;
            Ok(report)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn replace_dir(staging: &Path, out: &Path) -> Result<()> {
    if out.exists() {
        let previous_run = out.join("manifest.json").exists();
        let empty = fs::read_dir(out)?.next().is_none();
        if !previous_run && !empty {
            fs::remove_dir_all(staging)?;
            return Err(Error::Other(format!(
                "output directory {} exists and is not a previous run; refusing to replace it",
                out.display()
            )));
        }
        fs::remove_dir_all(out)?;
    }
    fs::rename(staging, out)?;
    Ok(())
}

fn build_artifacts(config: &RunConfig, dir: &Path) -> Result<RunReport> {
    fs::create_dir_all(dir)?;
    let mut warnings = Vec::new();

    let opts = ScanOptions {
        repo: config.repo.clone(),
        snapshot_ref: config.snapshot_ref.clone(),
        path_filters: config.path_filters.clone(),
        convert_cmd: config.convert_cmd.clone(),
        rename_threshold: config.rename_threshold,
        align_params: config.align,
    };
    let mined = mine_repository(&opts)?;
    warnings.extend(mined.warnings.iter().cloned());
    write_lineages(&dir.join("lineages.jsonl"), &mined.lineages)?;

    if config.dump_canonical {
        dump_canonical(dir, &mined.lineages)?;
    }

    let analyze = AnalyzeParams {
        align: config.align,
        weights: config.weights,
        theta_flip: config.theta_flip,
    };
    let snapshot = config.snapshot_time.as_deref().map(parse_time).transpose()?;
    let corpus = analyze_corpus(&mined.lineages, &analyze, snapshot)?;
    warnings.extend(corpus.warnings.iter().cloned());
    write_corpus(dir, &corpus)?;

    let intent = if config.skip_intent {
        "skipped (--skip-intent)".to_string()
    } else if config.llm.replay.is_none() && config.llm.endpoint.is_none() {
        "skipped (no labeler configured)".to_string()
    } else {
        let params = IntentParams {
            analyze: analyze.clone(),
            context_budget_tokens: config.llm.context_budget_tokens,
            jobs: config.jobs,
        };
        let out = if let Some(path) = &config.llm.replay {
            let labeler = ReplayLabeler::from_path(path)?;
            let out = run_intent(&mined.lineages, &labeler, &params)?;
            write_intent(dir, &out, false)?;
            out
        } else {
            let endpoint = config.llm.endpoint.as_deref().expect("checked above");
            let labeler = HttpLabeler::new(endpoint, &config.llm.model);
            let out = run_intent(&mined.lineages, &labeler, &params)?;
            write_intent(dir, &out, true)?;
            out
        };
        format!("written ({} pairs)", out.rows.len())
    };

    let report = RunReport {
        lineages: mined.lineages.len(),
        versions: mined.lineages.iter().map(|l| l.versions.len()).sum(),
        revision_steps: corpus.summary.revision_steps,
        intent,
        warnings,
    };
    write_json(&dir.join("config.json"), config)?;
    write_json(&dir.join("run.json"), &report)?;
    write_json(&dir.join("manifest.json"), &build_manifest(dir)?)?;
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    let mut f = fs::File::create(path)?;
    writeln!(f, "{text}")?;
    Ok(())
}

fn dump_canonical(dir: &Path, lineages: &[Lineage]) -> Result<()> {
    for (i, lineage) in lineages.iter().enumerate() {
        let sub = dir.join("canonical").join(format!("{:03}_{}", i, sanitize(&lineage.name)));
        fs::create_dir_all(&sub)?;
        for v in &lineage.versions {
            if let Some(g) = rule_graph(&v.text) {
                fs::write(sub.join(format!("v{}.pg", v.version_index)), serialize(&g))?;
            }
        }
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Digests every file under `dir` except manifest.json itself.
pub fn build_manifest(dir: &Path) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut artifacts = Vec::new();
    for rel in files {
        if rel == Path::new("manifest.json") {
            continue;
        }
        let data = fs::read(dir.join(&rel))?;
        let path = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        artifacts.push(ManifestEntry {
            path,
            bytes: data.len() as u64,
            sha256: sha256_hex(&data),
        });
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(Manifest { artifacts })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(
                path.strip_prefix(root)
                    .expect("walk stays under the root")
                    .to_path_buf(),
            );
        }
    }
    Ok(())
}
