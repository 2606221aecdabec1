//! LLM intent labeling of revision steps: prompt rendering, a pluggable
//! labeling endpoint with replay transcripts, label validation against the
//! structural analysis, and lineage-level intent trajectories with
//! transition timing.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics::{pair_stream, parse_time, AnalyzeParams, StepRecord};
use crate::ingest::Lineage;
use crate::structops::StructuralOpSet;
use crate::util::{fmt_f64 as fmt, median, parallel_map, write_csv};
use crate::{Error, Result};

/// The versioned prompt template; `__COMMIT_A__` and `__COMMIT_B__` are
/// spliced with the two rule texts.
pub const PROMPT_TEMPLATE: &str = include_str!("../assets/intent_prompt_v1.txt");

/// Coarse match-set direction emitted by the labeler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Broader,
    Narrower,
    Mixed,
    Unclear,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Broader => "broader",
            Direction::Narrower => "narrower",
            Direction::Mixed => "mixed",
            Direction::Unclear => "unclear",
        }
    }

    pub const ALL: [Direction; 4] =
        [Direction::Broader, Direction::Narrower, Direction::Mixed, Direction::Unclear];
}

/// Operational rationale behind a revision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleLabel {
    CoverageExpansion,
    FalsePositiveReduction,
    MixedTradeoff,
    InsufficientEvidence,
}

impl RationaleLabel {
    /// Two-to-three-letter shorthand used in reports.
    pub fn short(self) -> &'static str {
        match self {
            RationaleLabel::CoverageExpansion => "CE",
            RationaleLabel::FalsePositiveReduction => "FPR",
            RationaleLabel::MixedTradeoff => "MT",
            RationaleLabel::InsufficientEvidence => "IE",
        }
    }

    /// True for the two labels that assign a direction.
    pub fn is_directional(self) -> bool {
        matches!(
            self,
            RationaleLabel::CoverageExpansion | RationaleLabel::FalsePositiveReduction
        )
    }

    pub const ALL: [RationaleLabel; 4] = [
        RationaleLabel::CoverageExpansion,
        RationaleLabel::FalsePositiveReduction,
        RationaleLabel::MixedTradeoff,
        RationaleLabel::InsufficientEvidence,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

/// The labeler's structured output, mirroring the prompt's JSON schema
/// exactly; unknown fields or enum values are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentRecord {
    pub from_commit: String,
    pub to_commit: String,
    pub match_set_direction: Direction,
    pub predicate_modified_present: bool,
    pub predicate_added: bool,
    pub predicate_removed: bool,
    pub summary: String,
    pub rationale_label: RationaleLabel,
    pub rationale_confidence: Confidence,
    pub rationale_support: String,
}

impl IntentRecord {
    /// True when any structural flag asserts a predicate-level change.
    pub fn claims_change(&self) -> bool {
        self.predicate_modified_present || self.predicate_added || self.predicate_removed
    }
}

/// Splices the two rule texts into the prompt template.
pub fn render_prompt(text_a: &str, text_b: &str) -> String {
    let (head, rest) =
        PROMPT_TEMPLATE.split_once("__COMMIT_A__").expect("template has commit A slot");
    let (mid, tail) = rest.split_once("__COMMIT_B__").expect("template has commit B slot");
    format!("{head}{text_a}{mid}{text_b}{tail}")
}

/// Conservative token estimate for context budgeting.
pub fn estimate_tokens(prompt: &str) -> usize {
    prompt.len().div_ceil(4)
}

/// A labeling endpoint: given a pair id and its rendered prompt, return the
/// raw response text. Errors become labeler-failure records.
pub trait Labeler: Sync {
    fn label(&self, pair_id: &str, prompt: &str) -> Result<String>;
}

/// One transcript line: the exact request and response for a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub pair_id: String,
    pub request: String,
    pub response: String,
    pub timestamp: String,
}

/// Replays a recorded transcript with no network access. A missing pair or a
/// stored request that differs from the rendered prompt is a failure.
pub struct ReplayLabeler {
    entries: HashMap<String, (String, String)>,
}

impl ReplayLabeler {
    pub fn from_entries(entries: Vec<TranscriptEntry>) -> ReplayLabeler {
        ReplayLabeler {
            entries: entries
                .into_iter()
                .map(|e| (e.pair_id, (e.request, e.response)))
                .collect(),
        }
    }

    pub fn from_path(path: &Path) -> Result<ReplayLabeler> {
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(line).map_err(|e| {
                Error::Labeler(format!("transcript line {}: {e}", i + 1))
            })?;
            entries.push(entry);
        }
        Ok(ReplayLabeler::from_entries(entries))
    }
}

impl Labeler for ReplayLabeler {
    fn label(&self, pair_id: &str, prompt: &str) -> Result<String> {
        match self.entries.get(pair_id) {
            None => Err(Error::Labeler(format!("no transcript entry for pair {pair_id}"))),
            Some((request, _)) if request != prompt => Err(Error::Labeler(format!(
                "transcript request for pair {pair_id} does not match the rendered prompt"
            ))),
            Some((_, response)) => Ok(response.clone()),
        }
    }
}

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "PGIR_LLM_API_KEY";

/// Queries a JSON-over-HTTP chat-completion endpoint at temperature 0,
/// retrying transport errors with exponential backoff.
pub struct HttpLabeler {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_retries: usize,
}

impl HttpLabeler {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> HttpLabeler {
        HttpLabeler {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            max_retries: 3,
        }
    }

    fn attempt(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = ureq::post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(body)
            .map_err(|e| Error::Labeler(format!("endpoint request failed: {e}")))?;
        let value: serde_json::Value = resp
            .into_json()
            .map_err(|e| Error::Labeler(format!("endpoint response unreadable: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Labeler("endpoint response missing message content".into()))
    }
}

impl Labeler for HttpLabeler {
    fn label(&self, _pair_id: &str, prompt: &str) -> Result<String> {
        let mut last = None;
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(100 << (2 * attempt)));
            }
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt ran"))
    }
}

/// Outcome of labeling one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStatus {
    Labeled,
    ContextOverflow,
    LabelerFailure,
}

/// One line of intent.jsonl: a revision pair with its labeling outcome and
/// the structural facts it is validated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRow {
    pub pair_id: String,
    pub lineage_id: String,
    pub from_index: usize,
    pub to_index: usize,
    pub from_commit: String,
    pub to_commit: String,
    pub from_time: String,
    pub to_time: String,
    pub d_pred: f64,
    pub ops: StructuralOpSet,
    pub status: LabelStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<IntentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Direction a rationale label should accompany.
pub fn expected_rationale(direction: Direction) -> RationaleLabel {
    match direction {
        Direction::Broader => RationaleLabel::CoverageExpansion,
        Direction::Narrower => RationaleLabel::FalsePositiveReduction,
        Direction::Mixed => RationaleLabel::MixedTradeoff,
        Direction::Unclear => RationaleLabel::InsufficientEvidence,
    }
}

/// Internal-consistency check: does the rationale label match the direction?
/// The mismatch kind reads like `narrower->IE`.
pub fn validate_internal(record: &IntentRecord) -> std::result::Result<(), String> {
    if record.rationale_label == expected_rationale(record.match_set_direction) {
        Ok(())
    } else {
        Err(format!(
            "{}->{}",
            record.match_set_direction.as_str(),
            record.rationale_label.short()
        ))
    }
}

const ADDITION_OPS: [&str; 3] = ["and+", "or+", "branch+"];
const REMOVAL_OPS: [&str; 3] = ["and-", "or-", "branch-"];
const SCOPE_OPS: [&str; 2] = ["move", "flip"];

/// Cross-method check of one asserted flag against the structural op set.
/// Scope-changing operations back any flag.
pub fn flag_supported(flag: Flag, ops: &StructuralOpSet) -> bool {
    if SCOPE_OPS.iter().any(|l| ops.count(l) > 0) {
        return true;
    }
    match flag {
        Flag::Added => ADDITION_OPS.iter().any(|l| ops.count(l) > 0),
        Flag::Removed => REMOVAL_OPS.iter().any(|l| ops.count(l) > 0),
        Flag::Modified => ops.count("val-update") > 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    Added,
    Removed,
    Modified,
}

/// Count of pairs asserting a claim and the subset the structural analysis
/// supports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimStat {
    pub asserted: usize,
    pub supported: usize,
}

impl ClaimStat {
    fn bump(&mut self, supported: bool) {
        self.asserted += 1;
        if supported {
            self.supported += 1;
        }
    }
}

/// Cross-method and internal-consistency tallies over the labeled corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total_pairs: usize,
    pub context_overflow: usize,
    pub labeler_failures: usize,
    pub labeled_pairs: usize,
    /// LLM asserts no predicate change; supported when d_pred = 0.
    pub no_change: ClaimStat,
    /// LLM asserts a predicate change; supported when d_pred > 0.
    pub change: ClaimStat,
    /// Flag claims over pairs where both methods agree a change occurred.
    pub addition: ClaimStat,
    pub removal: ClaimStat,
    pub modification: ClaimStat,
    /// Per-direction internal consistency (direction, labeled, consistent).
    pub directions: Vec<(String, usize, usize)>,
}

/// Lineage cohort by number of non-IE revisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cohort {
    IeOnly,
    Singleton,
    MultiRevision,
}

/// Multi-revision trajectory class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiClass {
    Coupled,
    CeOnly,
    FprOnly,
    /// τ counts direction changes in the CE/FPR subsequence.
    Alternating { tau: usize },
}

/// Lineage-level intent trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub cohort: Cohort,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi: Option<MultiClass>,
}

/// Priority-ordered trajectory classification over a lineage's ordered
/// rationale labels; `None` for an empty list.
pub fn classify_trajectory(labels: &[RationaleLabel]) -> Option<Trajectory> {
    if labels.is_empty() {
        return None;
    }
    let non_ie: Vec<RationaleLabel> = labels
        .iter()
        .copied()
        .filter(|l| *l != RationaleLabel::InsufficientEvidence)
        .collect();
    let cohort = match non_ie.len() {
        0 => return Some(Trajectory { cohort: Cohort::IeOnly, multi: None }),
        1 => return Some(Trajectory { cohort: Cohort::Singleton, multi: None }),
        _ => Cohort::MultiRevision,
    };
    let mt = non_ie.iter().filter(|l| **l == RationaleLabel::MixedTradeoff).count();
    if (mt as f64) / (non_ie.len() as f64) >= 0.5 {
        return Some(Trajectory { cohort, multi: Some(MultiClass::Coupled) });
    }
    let directional: Vec<RationaleLabel> =
        non_ie.into_iter().filter(|l| l.is_directional()).collect();
    let multi = if directional.iter().all(|l| *l == RationaleLabel::CoverageExpansion) {
        MultiClass::CeOnly
    } else if directional.iter().all(|l| *l == RationaleLabel::FalsePositiveReduction) {
        MultiClass::FprOnly
    } else {
        let tau = directional.windows(2).filter(|w| w[0] != w[1]).count();
        MultiClass::Alternating { tau }
    };
    Some(Trajectory { cohort, multi: Some(multi) })
}

/// Pair-label distribution and trajectory counts (Table-8 shape).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    /// Pairs where both methods agree predicate logic changed (failures on
    /// changed pairs included as IE).
    pub revision_pairs: usize,
    /// CE, FPR, MT, IE counts over those pairs.
    pub pair_labels: [usize; 4],
    /// Lineages with at least one such pair.
    pub lineages: usize,
    pub ie_only: usize,
    pub singleton: usize,
    pub multi_revision: usize,
    pub coupled: usize,
    pub ce_only: usize,
    pub fpr_only: usize,
    pub alternating: usize,
    pub oscillating: usize,
    pub phased: usize,
}

/// Transition-gap and oscillator timing statistics (Table-9 shape).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub ce_to_ce: GapStat,
    pub ce_to_fpr: GapStat,
    pub fpr_to_ce: GapStat,
    pub fpr_to_fpr: GapStat,
    pub oscillating_lineages: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_flip_median_days: Option<f64>,
    pub still_flipping: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapStat {
    pub gaps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_days: Option<f64>,
}

fn gap_stat(mut days: Vec<f64>) -> GapStat {
    days.sort_by(f64::total_cmp);
    GapStat {
        gaps: days.len(),
        median_days: (!days.is_empty()).then(|| median(&days)),
    }
}

/// One trajectory input record: an agreed-changed pair's label and time.
#[derive(Debug, Clone)]
pub struct TrajectoryInput {
    pub label: RationaleLabel,
    pub to_time: DateTime<Utc>,
}

/// Buckets wall-clock gaps between consecutive directional revisions,
/// skipping IE and MT records, and computes oscillator timing over the
/// lineages classified Alternating with τ ≥ 2.
pub fn transition_gaps(
    lineages: &[(DateTime<Utc>, Vec<TrajectoryInput>)],
) -> GapReport {
    let mut buckets: HashMap<(RationaleLabel, RationaleLabel), Vec<f64>> = HashMap::new();
    let mut first_flips = Vec::new();
    let mut oscillating = 0usize;
    let mut still_flipping = 0usize;

    for (created, records) in lineages {
        let directional: Vec<&TrajectoryInput> =
            records.iter().filter(|r| r.label.is_directional()).collect();
        for w in directional.windows(2) {
            let days = (w[1].to_time - w[0].to_time).num_seconds() as f64 / 86_400.0;
            buckets.entry((w[0].label, w[1].label)).or_default().push(days);
        }
        let labels: Vec<RationaleLabel> = records.iter().map(|r| r.label).collect();
        let is_oscillating = matches!(
            classify_trajectory(&labels),
            Some(Trajectory { multi: Some(MultiClass::Alternating { tau }), .. }) if tau >= 2
        );
        if !is_oscillating {
            continue;
        }
        oscillating += 1;
        if let Some(w) = directional.windows(2).find(|w| w[0].label != w[1].label) {
            first_flips.push((w[1].to_time - *created).num_seconds() as f64 / 86_400.0);
        }
        if directional.len() >= 2
            && directional[directional.len() - 1].label != directional[directional.len() - 2].label
        {
            still_flipping += 1;
        }
    }

    let mut take = |from, to| gap_stat(buckets.remove(&(from, to)).unwrap_or_default());
    let ce = RationaleLabel::CoverageExpansion;
    let fpr = RationaleLabel::FalsePositiveReduction;
    first_flips.sort_by(f64::total_cmp);
    GapReport {
        ce_to_ce: take(ce, ce),
        ce_to_fpr: take(ce, fpr),
        fpr_to_ce: take(fpr, ce),
        fpr_to_fpr: take(fpr, fpr),
        oscillating_lineages: oscillating,
        first_flip_median_days: (!first_flips.is_empty()).then(|| median(&first_flips)),
        still_flipping,
    }
}

/// Knobs for the intent pipeline.
#[derive(Debug, Clone)]
pub struct IntentParams {
    pub analyze: AnalyzeParams,
    /// Prompts estimated above this many tokens are excluded.
    pub context_budget_tokens: usize,
    /// Labeler calls in flight.
    pub jobs: usize,
}

impl Default for IntentParams {
    fn default() -> Self {
        IntentParams {
            analyze: AnalyzeParams::default(),
            context_budget_tokens: 200_000,
            jobs: 4,
        }
    }
}

/// Everything `pgir intent` writes, in memory.
#[derive(Debug)]
pub struct IntentOutput {
    pub rows: Vec<IntentRow>,
    pub validation: ValidationReport,
    pub trajectories: TrajectoryReport,
    pub gaps: GapReport,
    /// Request/response log for live runs; empty under replay-only failures.
    pub transcript: Vec<TranscriptEntry>,
}

fn version_text<'a>(lineage: &'a Lineage, index: usize) -> &'a str {
    lineage
        .versions
        .iter()
        .find(|v| v.version_index == index)
        .map(|v| v.text.as_str())
        .expect("step record references an existing version")
}

/// Labels every analyzed revision pair of every lineage and folds the
/// validation, trajectory, and timing reports.
pub fn run_intent(
    lineages: &[Lineage],
    labeler: &dyn Labeler,
    params: &IntentParams,
) -> Result<IntentOutput> {
    struct Task {
        lineage: usize,
        step: StepRecord,
        prompt: Option<String>,
    }

    let mut tasks = Vec::new();
    for (li, lineage) in lineages.iter().enumerate() {
        for step in pair_stream(lineage, &params.analyze)? {
            if step.excluded {
                continue;
            }
            let prompt = render_prompt(
                version_text(lineage, step.from_index),
                version_text(lineage, step.to_index),
            );
            let prompt =
                (estimate_tokens(&prompt) <= params.context_budget_tokens).then_some(prompt);
            tasks.push(Task { lineage: li, step, prompt });
        }
    }

    let responses: Vec<Option<Result<String>>> = parallel_map(
        tasks
            .iter()
            .map(|t| {
                t.prompt.as_ref().map(|p| {
                    let id = pair_id(&t.step);
                    (id, p.clone())
                })
            })
            .collect(),
        params.jobs.max(1),
        |slot| slot.as_ref().map(|(id, prompt)| labeler.label(id, prompt)),
    );

    let mut rows = Vec::with_capacity(tasks.len());
    let mut transcript = Vec::new();
    let mut per_lineage_inputs: Vec<Vec<TrajectoryInput>> = vec![Vec::new(); lineages.len()];
    let now = || Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);

    for (task, response) in tasks.into_iter().zip(responses) {
        let id = pair_id(&task.step);
        let d = task.step.d_pred.expect("analyzed record carries distance");
        let ops = task.step.ops.clone().expect("analyzed record carries ops");
        let (status, record, error) = match (&task.prompt, response) {
            (None, _) => (LabelStatus::ContextOverflow, None, None),
            (Some(prompt), Some(Ok(text))) => {
                transcript.push(TranscriptEntry {
                    pair_id: id.clone(),
                    request: prompt.clone(),
                    response: text.clone(),
                    timestamp: now(),
                });
                match serde_json::from_str::<IntentRecord>(text.trim()) {
                    Ok(rec) => (LabelStatus::Labeled, Some(rec), None),
                    Err(e) => (
                        LabelStatus::LabelerFailure,
                        None,
                        Some(format!("response violates the schema: {e}")),
                    ),
                }
            }
            (Some(_), Some(Err(e))) => (LabelStatus::LabelerFailure, None, Some(e.to_string())),
            (Some(_), None) => unreachable!("prompted task always gets a response slot"),
        };

        if d > 0.0 {
            let input_label = match (&status, &record) {
                (LabelStatus::Labeled, Some(rec)) if rec.claims_change() => {
                    Some(rec.rationale_label)
                }
                (LabelStatus::Labeled, Some(_)) => None,
                (LabelStatus::LabelerFailure, _) => Some(RationaleLabel::InsufficientEvidence),
                _ => None,
            };
            if let Some(label) = input_label {
                per_lineage_inputs[task.lineage].push(TrajectoryInput {
                    label,
                    to_time: parse_time(&task.step.to_time)?,
                });
            }
        }

        rows.push(IntentRow {
            pair_id: id,
            lineage_id: task.step.lineage_id.clone(),
            from_index: task.step.from_index,
            to_index: task.step.to_index,
            from_commit: task.step.from_commit.clone(),
            to_commit: task.step.to_commit.clone(),
            from_time: task.step.from_time.clone(),
            to_time: task.step.to_time.clone(),
            d_pred: d,
            ops,
            status,
            record,
            error,
        });
    }

    let validation = build_validation(&rows);

    let mut traj_lineages = Vec::new();
    for (lineage, inputs) in lineages.iter().zip(per_lineage_inputs) {
        if inputs.is_empty() {
            continue;
        }
        traj_lineages.push((parse_time(&lineage.created_at)?, inputs));
    }
    let trajectories = build_trajectories(&traj_lineages);
    let gaps = transition_gaps(&traj_lineages);

    Ok(IntentOutput { rows, validation, trajectories, gaps, transcript })
}

/// Stable pair identifier: `<lineage_id>#<from>-<to>`.
pub fn pair_id(step: &StepRecord) -> String {
    format!("{}#{}-{}", step.lineage_id, step.from_index, step.to_index)
}

fn build_validation(rows: &[IntentRow]) -> ValidationReport {
    let mut v = ValidationReport {
        total_pairs: rows.len(),
        ..ValidationReport::default()
    };
    let mut directions: Vec<(String, usize, usize)> = Direction::ALL
        .iter()
        .map(|d| (d.as_str().to_string(), 0, 0))
        .collect();
    for row in rows {
        match row.status {
            LabelStatus::ContextOverflow => v.context_overflow += 1,
            LabelStatus::LabelerFailure => v.labeler_failures += 1,
            LabelStatus::Labeled => v.labeled_pairs += 1,
        }
        let Some(rec) = &row.record else { continue };
        let pgir_change = row.d_pred > 0.0;
        if rec.claims_change() {
            v.change.bump(pgir_change);
        } else {
            v.no_change.bump(!pgir_change);
        }
        if rec.claims_change() && pgir_change {
            if rec.predicate_added {
                v.addition.bump(flag_supported(Flag::Added, &row.ops));
            }
            if rec.predicate_removed {
                v.removal.bump(flag_supported(Flag::Removed, &row.ops));
            }
            if rec.predicate_modified_present {
                v.modification.bump(flag_supported(Flag::Modified, &row.ops));
            }
        }
        let slot = Direction::ALL
            .iter()
            .position(|d| *d == rec.match_set_direction)
            .expect("direction is one of four");
        directions[slot].1 += 1;
        if validate_internal(rec).is_ok() {
            directions[slot].2 += 1;
        }
    }
    v.directions = directions;
    v
}

fn build_trajectories(
    lineages: &[(DateTime<Utc>, Vec<TrajectoryInput>)],
) -> TrajectoryReport {
    let mut report = TrajectoryReport::default();
    for (_, inputs) in lineages {
        report.lineages += 1;
        report.revision_pairs += inputs.len();
        for input in inputs {
            let slot = RationaleLabel::ALL
                .iter()
                .position(|l| *l == input.label)
                .expect("label is one of four");
            report.pair_labels[slot] += 1;
        }
        let labels: Vec<RationaleLabel> = inputs.iter().map(|i| i.label).collect();
        let Some(trajectory) = classify_trajectory(&labels) else { continue };
        match trajectory.cohort {
            Cohort::IeOnly => report.ie_only += 1,
            Cohort::Singleton => report.singleton += 1,
            Cohort::MultiRevision => report.multi_revision += 1,
        }
        match trajectory.multi {
            Some(MultiClass::Coupled) => report.coupled += 1,
            Some(MultiClass::CeOnly) => report.ce_only += 1,
            Some(MultiClass::FprOnly) => report.fpr_only += 1,
            Some(MultiClass::Alternating { tau }) => {
                report.alternating += 1;
                if tau >= 2 {
                    report.oscillating += 1;
                } else {
                    report.phased += 1;
                }
            }
            None => {}
        }
    }
    report
}

fn share(n: usize, denom: usize) -> String {
    if denom == 0 { String::new() } else { fmt(n as f64 / denom as f64) }
}

/// Writes intent.jsonl, validation.csv, trajectories.csv, and gaps.csv under
/// `dir`; the transcript is written only when `write_transcript` is set (live
/// runs), so replays never touch their input.
pub fn write_intent(dir: &Path, out: &IntentOutput, write_transcript: bool) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut f = fs::File::create(dir.join("intent.jsonl"))?;
    for row in &out.rows {
        let line = serde_json::to_string(row).map_err(|e| Error::Other(e.to_string()))?;
        writeln!(f, "{line}")?;
    }

    if write_transcript {
        let mut f = fs::File::create(dir.join("transcript.jsonl"))?;
        for entry in &out.transcript {
            let line = serde_json::to_string(entry).map_err(|e| Error::Other(e.to_string()))?;
            writeln!(f, "{line}")?;
        }
    }

    let v = &out.validation;
    let mut rows = vec![vec![
        "metric".to_string(),
        "count".to_string(),
        "supported".to_string(),
        "share".to_string(),
    ]];
    let blank = |m: &str, n: usize| vec![m.to_string(), n.to_string(), String::new(), String::new()];
    rows.push(blank("total_pairs", v.total_pairs));
    rows.push(blank("context_overflow", v.context_overflow));
    rows.push(blank("labeler_failures", v.labeler_failures));
    rows.push(blank("labeled_pairs", v.labeled_pairs));
    for (m, s) in [
        ("llm_no_predicate_change", v.no_change),
        ("llm_predicate_change", v.change),
        ("addition_flag", v.addition),
        ("removal_flag", v.removal),
        ("modification_flag", v.modification),
    ] {
        rows.push(vec![
            m.to_string(),
            s.asserted.to_string(),
            s.supported.to_string(),
            share(s.supported, s.asserted),
        ]);
    }
    for (direction, labeled, consistent) in &v.directions {
        rows.push(vec![
            format!("direction_{direction}"),
            labeled.to_string(),
            consistent.to_string(),
            share(*consistent, *labeled),
        ]);
    }
    write_csv(&dir.join("validation.csv"), &rows)?;

    let t = &out.trajectories;
    let mut rows =
        vec![vec!["metric".to_string(), "count".to_string(), "share".to_string()]];
    rows.push(vec!["revision_pairs".to_string(), t.revision_pairs.to_string(), String::new()]);
    for (label, n) in RationaleLabel::ALL.iter().zip(t.pair_labels) {
        rows.push(vec![
            format!("pairs_{}", label.short().to_lowercase()),
            n.to_string(),
            share(n, t.revision_pairs),
        ]);
    }
    rows.push(vec!["lineages".to_string(), t.lineages.to_string(), String::new()]);
    for (m, n) in [
        ("ie_only", t.ie_only),
        ("singleton", t.singleton),
        ("multi_revision", t.multi_revision),
    ] {
        rows.push(vec![m.to_string(), n.to_string(), share(n, t.lineages)]);
    }
    for (m, n) in [
        ("coupled", t.coupled),
        ("ce_only", t.ce_only),
        ("fpr_only", t.fpr_only),
        ("alternating", t.alternating),
        ("oscillating", t.oscillating),
        ("phased", t.phased),
    ] {
        rows.push(vec![m.to_string(), n.to_string(), share(n, t.multi_revision)]);
    }
    write_csv(&dir.join("trajectories.csv"), &rows)?;

    let g = &out.gaps;
    let mut rows =
        vec![vec!["metric".to_string(), "count".to_string(), "value".to_string()]];
    for (m, s) in [
        ("ce_to_ce", &g.ce_to_ce),
        ("fpr_to_fpr", &g.fpr_to_fpr),
        ("ce_to_fpr", &g.ce_to_fpr),
        ("fpr_to_ce", &g.fpr_to_ce),
    ] {
        rows.push(vec![
            m.to_string(),
            s.gaps.to_string(),
            s.median_days.map(fmt).unwrap_or_default(),
        ]);
    }
    rows.push(vec![
        "oscillating_lineages".to_string(),
        g.oscillating_lineages.to_string(),
        String::new(),
    ]);
    rows.push(vec![
        "first_flip".to_string(),
        g.oscillating_lineages.to_string(),
        g.first_flip_median_days.map(fmt).unwrap_or_default(),
    ]);
    rows.push(vec![
        "still_flipping".to_string(),
        g.still_flipping.to_string(),
        share(g.still_flipping, g.oscillating_lineages),
    ]);
    write_csv(&dir.join("gaps.csv"), &rows)?;

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_status, LineageStatus, VersionRecord};
    use crate::util::sha256_hex;

    const T0: i64 = 1_600_000_000;

    fn rfc(secs: i64) -> String {
        DateTime::from_timestamp(secs, 0)
            .expect("valid timestamp")
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }

    fn version(i: usize, day: f64, text: &str) -> VersionRecord {
        let status = parse_status(text);
        VersionRecord {
            version_index: i,
            commit: format!("c{i}"),
            time: rfc(T0 + (day * 86_400.0) as i64),
            path: "rules/r.spl".to_string(),
            text: text.to_string(),
            text_digest: sha256_hex(text.as_bytes()),
            parse_ok: status.parse_ok,
            parse_error: status.parse_error,
            empty_detection: status.empty_detection,
        }
    }

    fn lineage(id: &str, texts_by_day: &[(f64, &str)]) -> Lineage {
        let versions: Vec<VersionRecord> = texts_by_day
            .iter()
            .enumerate()
            .map(|(i, (day, text))| version(i, *day, text))
            .collect();
        Lineage {
            lineage_id: id.to_string(),
            name: id.to_string(),
            status: LineageStatus::Active,
            created_at: versions.first().expect("non-empty").time.clone(),
            last_seen: versions.last().expect("non-empty").time.clone(),
            versions,
        }
    }

    fn response(
        direction: &str,
        label: &str,
        added: bool,
        removed: bool,
        modified: bool,
    ) -> String {
        serde_json::json!({
            "from_commit": "A",
            "to_commit": "B",
            "match_set_direction": direction,
            "predicate_modified_present": modified,
            "predicate_added": added,
            "predicate_removed": removed,
            "summary": "test",
            "rationale_label": label,
            "rationale_confidence": "high",
            "rationale_support": "test",
        })
        .to_string()
    }

    struct MapLabeler(HashMap<String, String>);

    impl Labeler for MapLabeler {
        fn label(&self, pair_id: &str, _prompt: &str) -> Result<String> {
            self.0
                .get(pair_id)
                .cloned()
                .ok_or_else(|| Error::Labeler(format!("no stub response for {pair_id}")))
        }
    }

    fn ce() -> RationaleLabel {
        RationaleLabel::CoverageExpansion
    }
    fn fpr() -> RationaleLabel {
        RationaleLabel::FalsePositiveReduction
    }
    fn mt() -> RationaleLabel {
        RationaleLabel::MixedTradeoff
    }
    fn ie() -> RationaleLabel {
        RationaleLabel::InsufficientEvidence
    }

    #[test]
    fn prompt_splices_both_texts() {
        let p = render_prompt("alpha=1", "alpha=2");
        assert!(p.contains("### Commit A\nalpha=1\n### Commit B\nalpha=2\n"));
        assert!(p.contains("\"rationale_label\": \"mixed_tradeoff\""));
        assert!(!p.contains("__COMMIT_A__"));
        assert!(!p.contains("__COMMIT_B__"));
    }

    #[test]
    fn prompt_splice_ignores_placeholder_text_inside_rules() {
        let p = render_prompt("a=\"__COMMIT_B__\"", "b=2");
        assert!(p.contains("### Commit A\na=\"__COMMIT_B__\"\n"));
        assert!(p.contains("### Commit B\nb=2\n"));
    }

    #[test]
    fn token_estimate_is_byte_quarter_ceiling() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn schema_accepts_the_template_example() {
        let text = response("mixed", "mixed_tradeoff", true, true, true);
        let rec: IntentRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(rec.rationale_label, mt());
        assert_eq!(rec.match_set_direction, Direction::Mixed);
        assert!(rec.claims_change());
    }

    #[test]
    fn schema_rejects_unknown_values_and_fields() {
        let bad_label = response("mixed", "other", true, true, true);
        assert!(serde_json::from_str::<IntentRecord>(&bad_label).is_err());

        let mut extra: serde_json::Value =
            serde_json::from_str(&response("broader", "coverage_expansion", true, false, false))
                .unwrap();
        extra["unexpected"] = serde_json::json!(1);
        assert!(serde_json::from_str::<IntentRecord>(&extra.to_string()).is_err());
    }

    #[test]
    fn internal_validation_maps_directions() {
        for (direction, label) in [
            ("broader", "coverage_expansion"),
            ("narrower", "false_positive_reduction"),
            ("mixed", "mixed_tradeoff"),
            ("unclear", "insufficient_evidence"),
        ] {
            let rec: IntentRecord =
                serde_json::from_str(&response(direction, label, true, false, false)).unwrap();
            assert_eq!(validate_internal(&rec), Ok(()));
        }
        let rec: IntentRecord =
            serde_json::from_str(&response("narrower", "insufficient_evidence", true, false, false))
                .unwrap();
        assert_eq!(validate_internal(&rec), Err("narrower->IE".to_string()));
    }

    fn ops_with(labels: &[&str]) -> StructuralOpSet {
        let mut ops = StructuralOpSet::default();
        for l in labels {
            *ops.counts.entry(l.to_string()).or_insert(0) += 1;
        }
        ops
    }

    #[test]
    fn flag_support_follows_op_families() {
        assert!(flag_supported(Flag::Added, &ops_with(&["and+"])));
        assert!(!flag_supported(Flag::Added, &ops_with(&["and-"])));
        assert!(flag_supported(Flag::Removed, &ops_with(&["branch-"])));
        assert!(flag_supported(Flag::Modified, &ops_with(&["val-update"])));
        assert!(!flag_supported(Flag::Modified, &ops_with(&["and+"])));
        for flag in [Flag::Added, Flag::Removed, Flag::Modified] {
            assert!(flag_supported(flag, &ops_with(&["move"])));
            assert!(flag_supported(flag, &ops_with(&["flip"])));
        }
    }

    #[test]
    fn trajectory_priority_order() {
        assert_eq!(classify_trajectory(&[]), None);
        assert_eq!(
            classify_trajectory(&[ie(), ie()]).unwrap(),
            Trajectory { cohort: Cohort::IeOnly, multi: None }
        );
        assert_eq!(
            classify_trajectory(&[ie(), ce()]).unwrap(),
            Trajectory { cohort: Cohort::Singleton, multi: None }
        );
        assert_eq!(
            classify_trajectory(&[mt(), mt(), ce()]).unwrap().multi,
            Some(MultiClass::Coupled)
        );
        assert_eq!(
            classify_trajectory(&[ce(), ce(), ie()]).unwrap().multi,
            Some(MultiClass::CeOnly)
        );
        assert_eq!(
            classify_trajectory(&[fpr(), fpr()]).unwrap().multi,
            Some(MultiClass::FprOnly)
        );
        assert_eq!(
            classify_trajectory(&[ce(), fpr(), ce()]).unwrap().multi,
            Some(MultiClass::Alternating { tau: 2 })
        );
        assert_eq!(
            classify_trajectory(&[ce(), ce(), fpr(), fpr()]).unwrap().multi,
            Some(MultiClass::Alternating { tau: 1 })
        );
    }

    #[test]
    fn tau_ignores_ie_and_mt_records() {
        let with_noise = [ce(), ie(), mt(), fpr(), ie(), ce()];
        let without = [ce(), fpr(), ce()];
        assert_eq!(
            classify_trajectory(&with_noise).unwrap().multi,
            classify_trajectory(&without).unwrap().multi
        );
    }

    fn input(label: RationaleLabel, day: f64) -> TrajectoryInput {
        TrajectoryInput {
            label,
            to_time: DateTime::from_timestamp(T0 + (day * 86_400.0) as i64, 0).unwrap(),
        }
    }

    #[test]
    fn gaps_skip_intervening_nondirectional_records() {
        let created = DateTime::from_timestamp(T0, 0).unwrap();
        let lineages = vec![(
            created,
            vec![input(ce(), 0.0), input(ie(), 10.0), input(fpr(), 44.0)],
        )];
        let g = transition_gaps(&lineages);
        assert_eq!(g.ce_to_fpr.gaps, 1);
        assert_eq!(g.ce_to_fpr.median_days, Some(44.0));
        assert_eq!(g.ce_to_ce.gaps, 0);
        assert_eq!(g.oscillating_lineages, 0);
    }

    #[test]
    fn gap_medians_recover_planted_values() {
        let created = DateTime::from_timestamp(T0, 0).unwrap();
        let lineages = vec![
            (created, vec![input(ce(), 0.0), input(ce(), 100.0), input(ce(), 250.0)]),
            (created, vec![input(fpr(), 0.0), input(fpr(), 30.0)]),
        ];
        let g = transition_gaps(&lineages);
        assert_eq!(g.ce_to_ce.gaps, 2);
        assert_eq!(g.ce_to_ce.median_days, Some(125.0));
        assert_eq!(g.fpr_to_fpr.median_days, Some(30.0));
    }

    #[test]
    fn oscillator_timing_tracks_first_flip_and_settling() {
        let created = DateTime::from_timestamp(T0, 0).unwrap();
        let still = vec![input(ce(), 10.0), input(fpr(), 50.0), input(ce(), 90.0)];
        let settled = vec![
            input(ce(), 10.0),
            input(fpr(), 20.0),
            input(ce(), 30.0),
            input(ce(), 40.0),
        ];
        let g = transition_gaps(&[(created, still), (created, settled)]);
        assert_eq!(g.oscillating_lineages, 2);
        assert_eq!(g.still_flipping, 1);
        assert_eq!(g.first_flip_median_days, Some(35.0));
    }

    #[test]
    fn replay_labeler_enforces_request_match() {
        let entries = vec![TranscriptEntry {
            pair_id: "r#0-1".to_string(),
            request: "prompt".to_string(),
            response: "resp".to_string(),
            timestamp: rfc(T0),
        }];
        let replay = ReplayLabeler::from_entries(entries);
        assert_eq!(replay.label("r#0-1", "prompt").unwrap(), "resp");
        assert!(replay.label("r#0-1", "different").is_err());
        assert!(replay.label("r#9-9", "prompt").is_err());
    }

    fn corpus() -> Vec<Lineage> {
        vec![
            lineage("r1", &[
                (0.0, "a=1 a0=0"),
                (10.0, "a=1 a0=0 b=2"),
                (50.0, "a=1 a0=0"),
                (90.0, "a=1 a0=0 c=3"),
            ]),
            lineage("r2", &[(0.0, "x=1 x0=0"), (5.0, "x=1 x0=0 y=2")]),
        ]
    }

    fn corpus_responses() -> HashMap<String, String> {
        HashMap::from([
            (
                "r1#0-1".to_string(),
                response("broader", "coverage_expansion", true, false, false),
            ),
            (
                "r1#1-2".to_string(),
                response("narrower", "false_positive_reduction", false, true, false),
            ),
            (
                "r1#2-3".to_string(),
                response("broader", "coverage_expansion", true, false, false),
            ),
            (
                "r2#0-1".to_string(),
                response("broader", "coverage_expansion", true, false, false),
            ),
        ])
    }

    #[test]
    fn end_to_end_labels_validates_and_classifies() {
        let lineages = corpus();
        let labeler = MapLabeler(corpus_responses());
        let out = run_intent(&lineages, &labeler, &IntentParams::default()).unwrap();

        assert_eq!(out.rows.len(), 4);
        assert!(out.rows.iter().all(|r| r.status == LabelStatus::Labeled));
        assert_eq!(out.validation.total_pairs, 4);
        assert_eq!(out.validation.labeled_pairs, 4);
        assert_eq!(out.validation.change.asserted, 4);
        assert_eq!(out.validation.change.supported, 4);
        assert_eq!(out.validation.addition.asserted, 3);
        assert_eq!(out.validation.addition.supported, 3);
        assert_eq!(out.validation.removal.asserted, 1);
        assert_eq!(out.validation.removal.supported, 1);

        assert_eq!(out.trajectories.lineages, 2);
        assert_eq!(out.trajectories.revision_pairs, 4);
        assert_eq!(out.trajectories.multi_revision, 1);
        assert_eq!(out.trajectories.singleton, 1);
        assert_eq!(out.trajectories.oscillating, 1);
        assert_eq!(out.gaps.oscillating_lineages, 1);
        assert_eq!(out.gaps.still_flipping, 1);
        assert_eq!(out.gaps.ce_to_fpr.median_days, Some(40.0));
        assert_eq!(out.gaps.fpr_to_ce.median_days, Some(40.0));
        assert_eq!(out.gaps.first_flip_median_days, Some(50.0));
        assert_eq!(out.transcript.len(), 4);
    }

    #[test]
    fn labeler_failure_counts_as_ie_on_changed_pairs() {
        let lineages = vec![lineage("r1", &[
            (0.0, "a=1 a0=0"),
            (10.0, "a=1 a0=0 b=2"),
            (20.0, "a=1 a0=0 b=2 c=3"),
        ])];
        let labeler = MapLabeler(HashMap::from([(
            "r1#0-1".to_string(),
            response("broader", "coverage_expansion", true, false, false),
        )]));
        let out = run_intent(&lineages, &labeler, &IntentParams::default()).unwrap();
        assert_eq!(out.validation.labeler_failures, 1);
        assert_eq!(out.trajectories.revision_pairs, 2);
        assert_eq!(out.trajectories.pair_labels[3], 1);
        assert_eq!(out.trajectories.singleton, 1);
    }

    #[test]
    fn disagreeing_pairs_are_excluded_from_trajectories() {
        let lineages = vec![lineage("r1", &[
            (0.0, "a=1 a0=0"),
            (10.0, "a=1  a0=0"),
            (20.0, "a=1 a0=0 b=2"),
        ])];
        let labeler = MapLabeler(HashMap::from([
            (
                "r1#0-1".to_string(),
                response("broader", "coverage_expansion", true, false, false),
            ),
            (
                "r1#1-2".to_string(),
                response("broader", "coverage_expansion", true, false, false),
            ),
        ]));
        let out = run_intent(&lineages, &labeler, &IntentParams::default()).unwrap();
        assert_eq!(out.validation.change.asserted, 2);
        assert_eq!(out.validation.change.supported, 1);
        assert_eq!(out.trajectories.revision_pairs, 1);
        assert_eq!(out.trajectories.singleton, 1);
    }

    #[test]
    fn agreed_no_change_pairs_are_not_revisions() {
        let lineages = vec![lineage("r1", &[
            (0.0, "a=1 a0=0"),
            (10.0, "a=1  a0=0"),
            (20.0, "a=1 a0=0 b=2"),
        ])];
        let labeler = MapLabeler(HashMap::from([
            ("r1#0-1".to_string(), response("unclear", "insufficient_evidence", false, false, false)),
            ("r1#1-2".to_string(), response("broader", "coverage_expansion", true, false, false)),
        ]));
        let out = run_intent(&lineages, &labeler, &IntentParams::default()).unwrap();
        assert_eq!(out.validation.no_change.asserted, 1);
        assert_eq!(out.validation.no_change.supported, 1);
        assert_eq!(out.trajectories.revision_pairs, 1);
    }

    #[test]
    fn oversized_prompts_are_excluded() {
        let big = format!("a=1 a0=0 big=\"{}\"", "x".repeat(4096));
        let lineages = vec![lineage("r1", &[(0.0, "a=1 a0=0"), (10.0, &big)])];
        let labeler = MapLabeler(HashMap::new());
        let params = IntentParams { context_budget_tokens: 1000, ..IntentParams::default() };
        let out = run_intent(&lineages, &labeler, &params).unwrap();
        assert_eq!(out.validation.context_overflow, 1);
        assert_eq!(out.rows[0].status, LabelStatus::ContextOverflow);
        assert_eq!(out.trajectories.revision_pairs, 0);
        assert!(out.transcript.is_empty());
    }

    #[test]
    fn replay_run_is_byte_identical_to_the_live_run() {
        let lineages = corpus();
        let live = run_intent(
            &lineages,
            &MapLabeler(corpus_responses()),
            &IntentParams::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let live_dir = dir.path().join("live");
        write_intent(&live_dir, &live, true).unwrap();

        let replay = ReplayLabeler::from_path(&live_dir.join("transcript.jsonl")).unwrap();
        let rerun = run_intent(&lineages, &replay, &IntentParams::default()).unwrap();
        let replay_dir = dir.path().join("replay");
        write_intent(&replay_dir, &rerun, false).unwrap();

        for name in ["intent.jsonl", "validation.csv", "trajectories.csv", "gaps.csv"] {
            let a = fs::read(live_dir.join(name)).unwrap();
            let b = fs::read(replay_dir.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between live and replay");
        }
        assert!(!replay_dir.join("transcript.jsonl").exists());
    }

    #[test]
    fn intent_rows_round_trip_through_json() {
        let lineages = corpus();
        let out = run_intent(
            &lineages,
            &MapLabeler(corpus_responses()),
            &IntentParams::default(),
        )
        .unwrap();
        for row in &out.rows {
            let line = serde_json::to_string(row).unwrap();
            let back: IntentRow = serde_json::from_str(&line).unwrap();
            assert_eq!(&back, row);
        }
    }

    fn spawn_http_stub(
        responses: Vec<(u16, String)>,
    ) -> (String, std::thread::JoinHandle<Vec<String>>) {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body_buf = vec![0u8; content_length];
                reader.read_exact(&mut body_buf).unwrap();
                bodies.push(String::from_utf8(body_buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn chat_reply(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string()
    }

    #[test]
    fn http_labeler_posts_chat_completion() {
        let (endpoint, handle) = spawn_http_stub(vec![(200, chat_reply("{\"ok\":1}"))]);
        let labeler = HttpLabeler {
            endpoint,
            model: "test-model".to_string(),
            api_key: Some("secret".to_string()),
            max_retries: 0,
        };
        assert_eq!(labeler.label("p", "the prompt").unwrap(), "{\"ok\":1}");
        let bodies = handle.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 0);
        assert_eq!(sent["messages"][0]["content"], "the prompt");
    }

    #[test]
    fn http_labeler_retries_transport_errors() {
        let (endpoint, handle) = spawn_http_stub(vec![
            (500, "{}".to_string()),
            (200, chat_reply("ok")),
        ]);
        let labeler = HttpLabeler {
            endpoint,
            model: "m".to_string(),
            api_key: None,
            max_retries: 3,
        };
        assert_eq!(labeler.label("p", "x").unwrap(), "ok");
        assert_eq!(handle.join().unwrap().len(), 2);
    }

    #[test]
    fn http_labeler_gives_up_after_retries() {
        let (endpoint, handle) = spawn_http_stub(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        let labeler = HttpLabeler {
            endpoint,
            model: "m".to_string(),
            api_key: None,
            max_retries: 1,
        };
        assert!(labeler.label("p", "x").is_err());
        handle.join().unwrap();
    }
}
