//! Thin command-line front end: every subcommand dispatches straight into
//! the library.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pgir::align::{analyze_pair, AlignParams, PairAnalysis, Tree};
use pgir::analytics::{
    analyze_corpus, ops_matrix_rows, parse_time, write_corpus, AnalyzeParams, StepRecord,
};
use pgir::cost::{edit_script, CostWeights};
use pgir::graph::{
    canonicalize, parse_canonical, serialize, serialize_raw, Metadata, Polarity, PredicateGraph,
    CANONICAL_FORMAT_VERSION,
};
use pgir::ingest::read_lineages;
use pgir::intent::{run_intent, write_intent, HttpLabeler, IntentParams, Labeler, ReplayLabeler};
use pgir::pipeline::{run_pipeline, LlmConfig, RunConfig};
use pgir::spl::extract_detection;
use pgir::structops::{cooccurrence_matrix, label_step};
use pgir::util::csv_string;
use pgir::{Error, Result};

fn version() -> &'static str {
    Box::leak(
        format!("{} (canonical format {})", env!("CARGO_PKG_VERSION"), CANONICAL_FORMAT_VERSION)
            .into_boxed_str(),
    )
}

#[derive(Parser)]
#[command(
    name = "pgir",
    about = "Predicate-graph analysis of detection rule histories",
    version = version(),
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct AlignFlags {
    /// Minimum anchored-evidence support for an operator match.
    #[arg(long, default_value_t = AlignParams::default().theta_sup)]
    theta_sup: f64,
    /// Minimum evidence coverage on each side for an operator match.
    #[arg(long, default_value_t = AlignParams::default().theta_cov)]
    theta_cov: f64,
    /// Minimum evidence set size on each side.
    #[arg(long, default_value_t = AlignParams::default().min_anchors)]
    min_anchors: usize,
    /// Minimum value similarity for a fuzzy leaf match.
    #[arg(long, default_value_t = AlignParams::default().fuzzy_floor)]
    fuzzy_floor: f64,
    /// Maximum fuzzy candidates scored per leaf.
    #[arg(long, default_value_t = AlignParams::default().cap)]
    cap: usize,
}

impl AlignFlags {
    fn params(&self) -> AlignParams {
        AlignParams {
            theta_sup: self.theta_sup,
            theta_cov: self.theta_cov,
            min_anchors: self.min_anchors,
            fuzzy_floor: self.fuzzy_floor,
            cap: self.cap,
        }
    }
}

#[derive(Args)]
struct WeightFlags {
    /// Cost-weight override, repeatable (e.g. --weights value_update=1.2).
    #[arg(long = "weights", value_name = "NAME=VALUE")]
    weights: Vec<String>,
}

impl WeightFlags {
    fn resolve(&self) -> Result<CostWeights> {
        let mut w = CostWeights::default();
        for spec in &self.weights {
            let (name, value) = spec
                .split_once('=')
                .ok_or_else(|| Error::Other(format!("--weights {spec}: expected NAME=VALUE")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::Other(format!("--weights {spec}: bad number")))?;
            w.set(name, value).map_err(Error::Other)?;
        }
        Ok(w)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a rule file and print its raw predicate expression.
    Parse { file: PathBuf },
    /// Print a rule file's canonical predicate graph.
    Canon { file: PathBuf },
    /// Align two rule versions and print the node mapping as JSON.
    Align {
        file_a: PathBuf,
        file_b: PathBuf,
        #[command(flatten)]
        align: AlignFlags,
    },
    /// Print the weighted predicate edit distance between two rule versions.
    Diff {
        file_a: PathBuf,
        file_b: PathBuf,
        #[command(flatten)]
        align: AlignFlags,
        #[command(flatten)]
        weights: WeightFlags,
    },
    /// Print the structural operations one revision step performs.
    Ops {
        file_a: PathBuf,
        file_b: PathBuf,
        #[command(flatten)]
        align: AlignFlags,
        #[command(flatten)]
        weights: WeightFlags,
        /// Matched-leaf overlap threshold for flip detection.
        #[arg(long, default_value_t = AnalyzeParams::default().theta_flip)]
        theta_flip: f64,
    },
    /// Rebuild the operation co-occurrence matrix from a steps.jsonl file.
    OpsMatrix { steps: PathBuf },
    /// Run longitudinal analytics over mined lineages.
    Analyze {
        lineages: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        align: AlignFlags,
        #[command(flatten)]
        weights: WeightFlags,
        #[arg(long, default_value_t = AnalyzeParams::default().theta_flip)]
        theta_flip: f64,
        /// Corpus reference time (RFC 3339); defaults to the newest version.
        #[arg(long)]
        snapshot_time: Option<String>,
    },
    /// Label revision intents over mined lineages.
    Intent {
        lineages: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replay a recorded transcript instead of querying an endpoint.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Chat-completion endpoint URL for live labeling.
        #[arg(long)]
        llm_endpoint: Option<String>,
        #[arg(long, default_value = "gpt-5")]
        llm_model: String,
        /// Prompts estimated above this many tokens are excluded.
        #[arg(long, default_value_t = 200_000)]
        context_budget: usize,
        /// Labeler calls in flight.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        #[command(flatten)]
        align: AlignFlags,
        #[command(flatten)]
        weights: WeightFlags,
        #[arg(long, default_value_t = AnalyzeParams::default().theta_flip)]
        theta_flip: f64,
    },
    /// Mine a repository and run the full pipeline into an output directory.
    Run {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Snapshot ref to walk back from.
        #[arg(long, default_value = "HEAD")]
        rev: String,
        /// Rule path glob, repeatable.
        #[arg(long = "paths", value_name = "GLOB", default_values_t = vec!["**/*".to_string()])]
        paths: Vec<String>,
        /// Shell command converting a raw rule body (stdin) to SPL (stdout).
        #[arg(long)]
        convert_cmd: Option<String>,
        /// Matched-leaf similarity at or above which a delete+add is a rename.
        #[arg(long, default_value_t = 0.6)]
        rename_threshold: f64,
        #[command(flatten)]
        align: AlignFlags,
        #[command(flatten)]
        weights: WeightFlags,
        #[arg(long, default_value_t = AnalyzeParams::default().theta_flip)]
        theta_flip: f64,
        #[arg(long)]
        snapshot_time: Option<String>,
        /// Skip the intent stage entirely.
        #[arg(long)]
        skip_intent: bool,
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        llm_endpoint: Option<String>,
        #[arg(long, default_value = "gpt-5")]
        llm_model: String,
        #[arg(long, default_value_t = 200_000)]
        context_budget: usize,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        /// Also dump the canonical text of every analyzable version.
        #[arg(long)]
        dump_canonical: bool,
        /// Seed for reproducible corpus generation in tests.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Reads a rule file as canonical graph text when it starts with a canonical
/// header or node line, as SPL otherwise.
fn load_graph(path: &Path) -> Result<PredicateGraph> {
    let text = fs::read_to_string(path)?;
    let head = text.trim_start();
    if head.starts_with("Rule:") || head.starts_with("EXPR(") || head.starts_with("PRED(") {
        let parsed = parse_canonical(&text)?;
        return Ok(canonicalize(&parsed.expr, parsed.meta));
    }
    match extract_detection(&text)? {
        Some(expr) => Ok(canonicalize(&expr, Metadata::default())),
        None => Err(Error::Parse(format!("{}: no filtering stages", path.display()))),
    }
}

#[derive(Serialize)]
struct MatchedPair {
    a: usize,
    b: usize,
    phase: &'static str,
    a_node: String,
    b_node: String,
}

#[derive(Serialize)]
struct NodeRef {
    index: usize,
    node: String,
}

#[derive(Serialize)]
struct AlignReport {
    matched: Vec<MatchedPair>,
    unmatched_a: Vec<NodeRef>,
    unmatched_b: Vec<NodeRef>,
}

fn describe(t: &Tree, i: usize) -> String {
    if t.is_leaf(i) {
        let p = t.leaf(i);
        let neg = if p.polarity == Polarity::Negative { "NOT " } else { "" };
        format!("{neg}{} {} {}", p.field, p.comparator.as_str(), p.payload.display_inline())
    } else {
        let label = t.op_label(i).expect("non-leaf node is an operator");
        format!("{label}[{} leaves]", t.leaves_under(i).len())
    }
}

fn align_report(pa: &PairAnalysis) -> AlignReport {
    let al = &pa.alignment;
    let matched = al
        .matched_pairs()
        .map(|(a, b)| MatchedPair {
            a,
            b,
            phase: al.phase_a[a].expect("matched node has a phase").as_str(),
            a_node: describe(&pa.ta, a),
            b_node: describe(&pa.tb, b),
        })
        .collect();
    let unmatched = |t: &Tree, map: &[Option<usize>]| {
        map.iter()
            .enumerate()
            .filter(|(_, m)| m.is_none())
            .map(|(i, _)| NodeRef { index: i, node: describe(t, i) })
            .collect()
    };
    AlignReport {
        matched,
        unmatched_a: unmatched(&pa.ta, &al.a2b),
        unmatched_b: unmatched(&pa.tb, &al.b2a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn intent_labeler(
    replay: Option<PathBuf>,
    endpoint: Option<String>,
    model: String,
) -> Result<(Box<dyn Labeler>, bool)> {
    match (replay, endpoint) {
        (Some(path), _) => Ok((Box::new(ReplayLabeler::from_path(&path)?), false)),
        (None, Some(url)) => Ok((Box::new(HttpLabeler::new(url, model)), true)),
        (None, None) => Err(Error::Other(
            "no labeler configured: pass --replay or --llm-endpoint".to_string(),
        )),
    }
}

fn real_main(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Parse { file } => {
            let text = fs::read_to_string(&file)?;
            match extract_detection(&text)? {
                Some(expr) => print!("{}", serialize_raw(&expr)),
                None => eprintln!("{}: no filtering stages", file.display()),
            }
        }
        Cmd::Canon { file } => {
            print!("{}", serialize(&load_graph(&file)?));
        }
        Cmd::Align { file_a, file_b, align } => {
            let ga = load_graph(&file_a)?;
            let gb = load_graph(&file_b)?;
            let pa = analyze_pair(&ga, &gb, &align.params());
            print_json(&align_report(&pa))?;
        }
        Cmd::Diff { file_a, file_b, align, weights } => {
            let ga = load_graph(&file_a)?;
            let gb = load_graph(&file_b)?;
            let pa = analyze_pair(&ga, &gb, &align.params());
            let script = edit_script(&pa, &weights.resolve()?);
            print_json(&serde_json::json!({
                "d_pred": script.total,
                "breakdown": script.breakdown,
                "edits": script.edits,
            }))?;
        }
        Cmd::Ops { file_a, file_b, align, weights, theta_flip } => {
            let ga = load_graph(&file_a)?;
            let gb = load_graph(&file_b)?;
            let pa = analyze_pair(&ga, &gb, &align.params());
            let script = edit_script(&pa, &weights.resolve()?);
            print_json(&label_step(&pa, &script, theta_flip))?;
        }
        Cmd::OpsMatrix { steps } => {
            let text = fs::read_to_string(&steps)?;
            let mut ops = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: StepRecord = serde_json::from_str(line)
                    .map_err(|e| Error::Other(format!("steps line {}: {e}", i + 1)))?;
                ops.extend(rec.ops);
            }
            print!("{}", csv_string(&ops_matrix_rows(&cooccurrence_matrix(&ops)))?);
        }
        Cmd::Analyze { lineages, out, align, weights, theta_flip, snapshot_time } => {
            let lineages = read_lineages(&lineages)?;
            let params = AnalyzeParams {
                align: align.params(),
                weights: weights.resolve()?,
                theta_flip,
            };
            let snapshot = snapshot_time.as_deref().map(parse_time).transpose()?;
            let corpus = analyze_corpus(&lineages, &params, snapshot)?;
            for w in &corpus.warnings {
                eprintln!("warning: {w}");
            }
            write_corpus(&out, &corpus)?;
            eprintln!("analyzed {} lineages -> {}", lineages.len(), out.display());
        }
        Cmd::Intent {
            lineages,
            out,
            replay,
            llm_endpoint,
            llm_model,
            context_budget,
            jobs,
            align,
            weights,
            theta_flip,
        } => {
            let lineages = read_lineages(&lineages)?;
            let (labeler, live) = intent_labeler(replay, llm_endpoint, llm_model)?;
            let params = IntentParams {
                analyze: AnalyzeParams {
                    align: align.params(),
                    weights: weights.resolve()?,
                    theta_flip,
                },
                context_budget_tokens: context_budget,
                jobs,
            };
            let result = run_intent(&lineages, labeler.as_ref(), &params)?;
            write_intent(&out, &result, live)?;
            eprintln!("labeled {} pairs -> {}", result.rows.len(), out.display());
        }
        Cmd::Run {
            repo,
            out,
            rev,
            paths,
            convert_cmd,
            rename_threshold,
            align,
            weights,
            theta_flip,
            snapshot_time,
            skip_intent,
            replay,
            llm_endpoint,
            llm_model,
            context_budget,
            jobs,
            dump_canonical,
            seed,
        } => {
            let config = RunConfig {
                repo,
                snapshot_ref: rev,
                path_filters: paths,
                convert_cmd,
                rename_threshold,
                align: align.params(),
                weights: weights.resolve()?,
                theta_flip,
                snapshot_time,
                skip_intent,
                llm: LlmConfig {
                    endpoint: llm_endpoint,
                    model: llm_model,
                    replay,
                    context_budget_tokens: context_budget,
                },
                dump_canonical,
                jobs,
                seed,
                out_dir: out,
            };
            let report = run_pipeline(&config)?;
            print_json(&report)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = real_main(cli) {
        let report =
            serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() });
        eprintln!("{report}");
        std::process::exit(e.exit_code());
    }
}
