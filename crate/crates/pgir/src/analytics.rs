//! Longitudinal analytics over mined lineages.
//!
//! Turns each lineage's version sequence into a stream of revision-step
//! records (alignment, distance, structural ops), then folds the corpus into
//! summary tables: revision prevalence and timing, lifecycle archetypes,
//! structural evolution patterns, A-B-A reversions, creation-cohort lag
//! aggregation, and the structural-op co-occurrence matrix.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::align::{analyze_pair, AlignParams};
use crate::cost::{predicate_distance, Breakdown, CostWeights};
use crate::graph::{serialize, PredicateGraph};
use crate::ingest::{rule_graph, Lineage, LineageStatus};
use crate::structops::{cooccurrence_matrix, label_step, CooccurrenceMatrix, StructuralOpSet};
use crate::util::{median, quantile};
use crate::{Error, Result};

/// Window length used for lag and archetype arithmetic, in days.
pub const QUARTER_DAYS: f64 = 91.3125;
/// End of the mid window (eight quarters), in days.
pub const MID_WINDOW_END_DAYS: f64 = 8.0 * QUARTER_DAYS;
/// Minimum observed lifetime for archetype eligibility (twelve quarters).
pub const ARCHETYPE_MIN_LIFETIME_DAYS: f64 = 12.0 * QUARTER_DAYS;

const DAY_SECONDS: f64 = 86_400.0;

/// Knobs for per-step analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeParams {
    pub align: AlignParams,
    pub weights: CostWeights,
    /// Matched-leaf overlap threshold for flip detection.
    pub theta_flip: f64,
}

impl Default for AnalyzeParams {
    fn default() -> Self {
        AnalyzeParams {
            align: AlignParams::default(),
            weights: CostWeights::default(),
            theta_flip: 0.5,
        }
    }
}

/// One adjacency in a lineage's version sequence.
///
/// Analyzed records pair consecutive versions of the analyzable subsequence
/// and carry distance, breakdown, and structural ops; `bridged` marks pairs
/// whose endpoints are not adjacent in the raw sequence. Excluded records
/// mark raw adjacencies touching an unparseable or logic-free version and
/// carry no analysis fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub lineage_id: String,
    pub from_index: usize,
    pub to_index: usize,
    pub from_commit: String,
    pub to_commit: String,
    pub from_time: String,
    pub to_time: String,
    pub gap_days: f64,
    pub excluded: bool,
    pub bridged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_pred: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Breakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ops: Option<StructuralOpSet>,
}

impl StepRecord {
    /// True when the step changed predicate logic (d_pred > 0).
    pub fn predicate_changing(&self) -> bool {
        self.d_pred.is_some_and(|d| d > 0.0)
    }
}

/// Parses an RFC 3339 timestamp as written by the miner.
pub fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Other(format!("bad timestamp {s:?}: {e}")))
}

fn days_between(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    (to - from).num_seconds() as f64 / DAY_SECONDS
}

fn version_graphs(lineage: &Lineage) -> Vec<Option<PredicateGraph>> {
    lineage.versions.iter().map(|v| rule_graph(&v.text)).collect()
}

fn base_record(lineage: &Lineage, from: usize, to: usize) -> Result<StepRecord> {
    let a = &lineage.versions[from];
    let b = &lineage.versions[to];
    let gap = days_between(parse_time(&a.time)?, parse_time(&b.time)?);
    Ok(StepRecord {
        lineage_id: lineage.lineage_id.clone(),
        from_index: a.version_index,
        to_index: b.version_index,
        from_commit: a.commit.clone(),
        to_commit: b.commit.clone(),
        from_time: a.time.clone(),
        to_time: b.time.clone(),
        gap_days: gap,
        excluded: false,
        bridged: false,
        d_pred: None,
        breakdown: None,
        ops: None,
    })
}

/// Builds the ordered step records of one lineage: analyzed records for each
/// adjacent pair of the analyzable subsequence (bridging over versions that
/// fail to parse or carry no predicate logic), plus excluded markers for
/// every raw adjacency touching such a version.
pub fn pair_stream(lineage: &Lineage, params: &AnalyzeParams) -> Result<Vec<StepRecord>> {
    let graphs = version_graphs(lineage);
    pair_stream_from(lineage, &graphs, params)
}

fn pair_stream_from(
    lineage: &Lineage,
    graphs: &[Option<PredicateGraph>],
    params: &AnalyzeParams,
) -> Result<Vec<StepRecord>> {
    let n = lineage.versions.len();
    let mut records = Vec::new();

    for i in 1..n {
        if graphs[i - 1].is_none() || graphs[i].is_none() {
            let mut rec = base_record(lineage, i - 1, i)?;
            rec.excluded = true;
            records.push(rec);
        }
    }

    let analyzable: Vec<usize> = (0..n).filter(|&i| graphs[i].is_some()).collect();
    for w in analyzable.windows(2) {
        let (i, j) = (w[0], w[1]);
        let ga = graphs[i].as_ref().unwrap();
        let gb = graphs[j].as_ref().unwrap();
        let pa = analyze_pair(ga, gb, &params.align);
        let (d, script) = predicate_distance(&pa, &params.weights);
        let ops = label_step(&pa, &script, params.theta_flip);
        let mut rec = base_record(lineage, i, j)?;
        rec.bridged = j != i + 1;
        rec.d_pred = Some(d);
        rec.breakdown = Some(script.breakdown);
        rec.ops = Some(ops);
        records.push(rec);
    }

    records.sort_by_key(|r| (r.from_index, r.to_index));
    Ok(records)
}

/// Mean, median, and 90th percentile of predicate-changing revision counts
/// over edited rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionCountStats {
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

/// Distribution of d_pred over predicate-changing steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeStats {
    pub mean: f64,
    pub p25: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

/// Corpus-level A-B-A reversion statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbaSummary {
    pub lineages_with_triplets: usize,
    pub total_triplets: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_restore_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restored_within_24h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restored_within_7d: Option<f64>,
}

/// Corpus revision summary: prevalence, per-rule revision counts, timing of
/// first revisions, and edit magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total_rules: usize,
    pub active_rules: usize,
    pub deleted_rules: usize,
    pub revision_steps: usize,
    pub predicate_changing_steps: usize,
    pub excluded_adjacencies: usize,
    pub bridged_steps: usize,
    pub step_eligible_rules: usize,
    pub rules_with_pairs: usize,
    pub edited_rules: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proportion_edited: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revisions_per_edited_rule: Option<RevisionCountStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub days_to_first_revision_median: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_revision_within_90_days: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_revision_after_two_years: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<MagnitudeStats>,
    pub aba: AbaSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_time: Option<String>,
}

/// Lifecycle archetype: which lifetime windows saw at least one
/// predicate-changing edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Archetype {
    NeverEdited,
    CreationOnly,
    MidOnly,
    LateOnly,
    CreationMid,
    CreationLate,
    MidLate,
    AllThree,
}

impl Archetype {
    pub const ALL: [Archetype; 8] = [
        Archetype::NeverEdited,
        Archetype::CreationOnly,
        Archetype::MidOnly,
        Archetype::LateOnly,
        Archetype::CreationMid,
        Archetype::CreationLate,
        Archetype::MidLate,
        Archetype::AllThree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::NeverEdited => "never-edited",
            Archetype::CreationOnly => "creation-only",
            Archetype::MidOnly => "mid-only",
            Archetype::LateOnly => "late-only",
            Archetype::CreationMid => "creation+mid",
            Archetype::CreationLate => "creation+late",
            Archetype::MidLate => "mid+late",
            Archetype::AllThree => "all-three",
        }
    }

    /// (creation quarter, remainder of first two years, beyond two years).
    pub fn windows(self) -> (bool, bool, bool) {
        match self {
            Archetype::NeverEdited => (false, false, false),
            Archetype::CreationOnly => (true, false, false),
            Archetype::MidOnly => (false, true, false),
            Archetype::LateOnly => (false, false, true),
            Archetype::CreationMid => (true, true, false),
            Archetype::CreationLate => (true, false, true),
            Archetype::MidLate => (false, true, true),
            Archetype::AllThree => (true, true, true),
        }
    }

    fn from_windows(w: (bool, bool, bool)) -> Archetype {
        Archetype::ALL
            .into_iter()
            .find(|a| a.windows() == w)
            .expect("all eight window triples are covered")
    }
}

/// Archetype counts over eligible lineages, in taxonomy order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeTable {
    pub eligible: usize,
    pub counts: Vec<(String, usize)>,
}

/// Classifies one lineage, or `None` when its observed lifetime is under
/// three years. Windows are measured from creation; membership comes from the
/// to-version time of each predicate-changing step.
pub fn classify_archetype(
    lineage: &Lineage,
    records: &[StepRecord],
    snapshot: DateTime<Utc>,
) -> Result<Option<Archetype>> {
    let created = parse_time(&lineage.created_at)?;
    let end = match lineage.status {
        LineageStatus::Active => snapshot,
        LineageStatus::Deleted => parse_time(&lineage.last_seen)?,
    };
    if days_between(created, end) < ARCHETYPE_MIN_LIFETIME_DAYS {
        return Ok(None);
    }
    let mut windows = (false, false, false);
    for rec in records.iter().filter(|r| r.predicate_changing()) {
        let days = days_between(created, parse_time(&rec.to_time)?);
        if days < QUARTER_DAYS {
            windows.0 = true;
        } else if days < MID_WINDOW_END_DAYS {
            windows.1 = true;
        } else {
            windows.2 = true;
        }
    }
    Ok(Some(Archetype::from_windows(windows)))
}

/// Lineage-level structural evolution pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternClass {
    ValueOnly,
    ExpandOnly,
    ContractOnly,
    RestructureOnly,
    Mixed,
}

impl PatternClass {
    pub const ALL: [PatternClass; 5] = [
        PatternClass::ValueOnly,
        PatternClass::ExpandOnly,
        PatternClass::ContractOnly,
        PatternClass::RestructureOnly,
        PatternClass::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternClass::ValueOnly => "value-only",
            PatternClass::ExpandOnly => "expand-only",
            PatternClass::ContractOnly => "contract-only",
            PatternClass::RestructureOnly => "restructure-only",
            PatternClass::Mixed => "mixed",
        }
    }
}

/// How a mixed lineage combines expansion and contraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixingDetail {
    /// Some step carries both families; no cross-step split exists.
    IntraOnly,
    /// The families only ever appear in different steps.
    InterOnly,
    Both,
}

impl MixingDetail {
    pub fn name(self) -> &'static str {
        match self {
            MixingDetail::IntraOnly => "intra-only",
            MixingDetail::InterOnly => "inter-only",
            MixingDetail::Both => "both",
        }
    }
}

const EXPANSION: [&str; 3] = ["and+", "or+", "branch+"];
const CONTRACTION: [&str; 3] = ["and-", "or-", "branch-"];
const REORGANIZATION: [&str; 2] = ["move", "flip"];

fn has_family(ops: &StructuralOpSet, family: &[&str]) -> bool {
    family.iter().any(|l| ops.count(l) > 0)
}

/// Classifies a lineage's step records, or `None` when it has no
/// predicate-changing step. Families are drawn from every analyzed step, so a
/// zero-cost relocation step still marks the lineage as reorganizing.
pub fn classify_pattern(records: &[StepRecord]) -> Option<(PatternClass, Option<MixingDetail>)> {
    if !records.iter().any(StepRecord::predicate_changing) {
        return None;
    }
    let ops: Vec<&StructuralOpSet> = records.iter().filter_map(|r| r.ops.as_ref()).collect();
    let exp: Vec<bool> = ops.iter().map(|o| has_family(o, &EXPANSION)).collect();
    let con: Vec<bool> = ops.iter().map(|o| has_family(o, &CONTRACTION)).collect();
    let any_exp = exp.iter().any(|&b| b);
    let any_con = con.iter().any(|&b| b);
    let any_reorg = ops.iter().any(|o| has_family(o, &REORGANIZATION));

    if any_exp && any_con {
        let intra = exp.iter().zip(&con).any(|(&e, &c)| e && c);
        let inter = (0..ops.len())
            .any(|i| exp[i] && (0..ops.len()).any(|j| j != i && con[j]));
        let detail = match (intra, inter) {
            (true, true) => MixingDetail::Both,
            (true, false) => MixingDetail::IntraOnly,
            (false, _) => MixingDetail::InterOnly,
        };
        Some((PatternClass::Mixed, Some(detail)))
    } else if any_exp {
        Some((PatternClass::ExpandOnly, None))
    } else if any_con {
        Some((PatternClass::ContractOnly, None))
    } else if any_reorg {
        Some((PatternClass::RestructureOnly, None))
    } else {
        Some((PatternClass::ValueOnly, None))
    }
}

/// Pattern counts over lineages with at least one predicate-changing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTable {
    pub lineages: usize,
    pub counts: Vec<(String, usize)>,
    pub mixed_intra_only: usize,
    pub mixed_inter_only: usize,
    pub mixed_both: usize,
}

/// One exact structural reversion: v_i and v_{i+2} share a canonical form
/// that v_{i+1} lacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbaTriplet {
    pub lineage_id: String,
    pub first_index: usize,
    pub middle_index: usize,
    pub restored_index: usize,
    /// Hours between the middle and restoring versions.
    pub restore_hours: f64,
}

/// Finds all A-B-A triplets over strictly consecutive version indices.
/// Equality is canonical-form equality, so triplets may overlap and an
/// unparseable middle version still anchors a reversion.
pub fn detect_aba(lineage: &Lineage) -> Result<Vec<AbaTriplet>> {
    let graphs = version_graphs(lineage);
    detect_aba_from(lineage, &graphs)
}

fn detect_aba_from(
    lineage: &Lineage,
    graphs: &[Option<PredicateGraph>],
) -> Result<Vec<AbaTriplet>> {
    let canon: Vec<Option<String>> =
        graphs.iter().map(|g| g.as_ref().map(serialize)).collect();
    let eq = |i: usize, j: usize| match (&canon[i], &canon[j]) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    };
    let mut out = Vec::new();
    for i in 0..lineage.versions.len().saturating_sub(2) {
        if eq(i, i + 2) && !eq(i, i + 1) {
            let middle = parse_time(&lineage.versions[i + 1].time)?;
            let restored = parse_time(&lineage.versions[i + 2].time)?;
            out.push(AbaTriplet {
                lineage_id: lineage.lineage_id.clone(),
                first_index: lineage.versions[i].version_index,
                middle_index: lineage.versions[i + 1].version_index,
                restored_index: lineage.versions[i + 2].version_index,
                restore_hours: (restored - middle).num_seconds() as f64 / 3600.0,
            });
        }
    }
    Ok(out)
}

/// All A-B-A triplets plus their corpus summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbaReport {
    pub triplets: Vec<AbaTriplet>,
    pub summary: AbaSummary,
}

fn aba_summary(per_lineage: &[Vec<AbaTriplet>]) -> AbaSummary {
    let lineages_with = per_lineage.iter().filter(|v| !v.is_empty()).count();
    let mut hours: Vec<f64> =
        per_lineage.iter().flatten().map(|t| t.restore_hours).collect();
    hours.sort_by(f64::total_cmp);
    let total = hours.len();
    if total == 0 {
        return AbaSummary {
            lineages_with_triplets: lineages_with,
            total_triplets: 0,
            median_restore_hours: None,
            restored_within_24h: None,
            restored_within_7d: None,
        };
    }
    let frac = |limit: f64| hours.iter().filter(|&&h| h <= limit).count() as f64 / total as f64;
    AbaSummary {
        lineages_with_triplets: lineages_with,
        total_triplets: total,
        median_restore_hours: Some(median(&hours)),
        restored_within_24h: Some(frac(24.0)),
        restored_within_7d: Some(frac(7.0 * 24.0)),
    }
}

/// Mean accumulated d_pred per rule, by creation cohort and lag window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    /// Calendar quarter of creation, e.g. `2016Q4`.
    pub cohort: String,
    /// Lineages created in the quarter, edited or not.
    pub rules: usize,
    /// Indexed by lag quarter; every row spans the corpus-wide maximum lag.
    pub cells: Vec<f64>,
}

/// Cohort-by-lag magnitude matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortMatrix {
    pub rows: Vec<CohortRow>,
}

fn cohort_label(t: DateTime<Utc>) -> String {
    format!("{}Q{}", t.year(), (t.month() - 1) / 3 + 1)
}

/// Builds the cohort lag matrix from per-lineage step records.
pub fn cohort_lag_matrix(
    lineages: &[Lineage],
    per_lineage: &[Vec<StepRecord>],
) -> Result<CohortMatrix> {
    let mut cohorts: BTreeMap<(i32, u32), (String, usize, BTreeMap<usize, f64>)> =
        BTreeMap::new();
    let mut max_lag = 0usize;
    for (lineage, records) in lineages.iter().zip(per_lineage) {
        let created = parse_time(&lineage.created_at)?;
        let key = (created.year(), (created.month() - 1) / 3 + 1);
        let entry = cohorts
            .entry(key)
            .or_insert_with(|| (cohort_label(created), 0, BTreeMap::new()));
        entry.1 += 1;
        for rec in records {
            let Some(d) = rec.d_pred else { continue };
            if d <= 0.0 {
                continue;
            }
            let days = days_between(created, parse_time(&rec.to_time)?);
            let lag = (days / QUARTER_DAYS).floor() as usize;
            max_lag = max_lag.max(lag);
            *entry.2.entry(lag).or_insert(0.0) += d;
        }
    }
    let width = if cohorts.is_empty() { 0 } else { max_lag + 1 };
    let rows = cohorts
        .into_values()
        .map(|(cohort, rules, sums)| {
            let mut cells = vec![0.0; width];
            for (lag, sum) in sums {
                cells[lag] = sum / rules as f64;
            }
            CohortRow { cohort, rules, cells }
        })
        .collect();
    Ok(CohortMatrix { rows })
}

/// Everything `pgir analyze` writes, in memory.
#[derive(Debug)]
pub struct CorpusAnalytics {
    pub steps: Vec<StepRecord>,
    pub summary: CorpusSummary,
    pub archetypes: ArchetypeTable,
    pub patterns: PatternTable,
    pub aba: AbaReport,
    pub cohorts: CohortMatrix,
    pub ops_matrix: CooccurrenceMatrix,
    pub warnings: Vec<String>,
}

/// Runs the full longitudinal analysis. The snapshot time bounds observed
/// lifetimes of active lineages; when absent it defaults to the newest
/// `last_seen` across the corpus.
pub fn analyze_corpus(
    lineages: &[Lineage],
    params: &AnalyzeParams,
    snapshot: Option<DateTime<Utc>>,
) -> Result<CorpusAnalytics> {
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4);
    let indices: Vec<usize> = (0..lineages.len()).collect();
    let per: Vec<Result<(Vec<StepRecord>, Vec<AbaTriplet>)>> =
        crate::util::parallel_map(indices, jobs, |&i| {
            let lineage = &lineages[i];
            let graphs = version_graphs(lineage);
            let records = pair_stream_from(lineage, &graphs, params)?;
            let triplets = detect_aba_from(lineage, &graphs)?;
            Ok((records, triplets))
        });
    let mut per_records = Vec::with_capacity(lineages.len());
    let mut per_triplets = Vec::with_capacity(lineages.len());
    for r in per {
        let (records, triplets) = r?;
        per_records.push(records);
        per_triplets.push(triplets);
    }

    let mut warnings = Vec::new();
    for records in &per_records {
        for rec in records.iter().filter(|r| r.bridged) {
            warnings.push(format!(
                "lineage {}: step v{}->v{} bridges {} excluded version(s)",
                rec.lineage_id,
                rec.from_index,
                rec.to_index,
                rec.to_index - rec.from_index - 1
            ));
        }
    }

    let snapshot = match snapshot {
        Some(t) => Some(t),
        None => {
            let mut max: Option<DateTime<Utc>> = None;
            for l in lineages {
                let t = parse_time(&l.last_seen)?;
                max = Some(max.map_or(t, |m| m.max(t)));
            }
            max
        }
    };

    let aba = AbaReport {
        triplets: per_triplets.iter().flatten().cloned().collect(),
        summary: aba_summary(&per_triplets),
    };

    let mut archetype_counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut eligible = 0usize;
    if let Some(snap) = snapshot {
        for (lineage, records) in lineages.iter().zip(&per_records) {
            if let Some(a) = classify_archetype(lineage, records, snap)? {
                eligible += 1;
                *archetype_counts.entry(a.name()).or_insert(0) += 1;
            }
        }
    }
    let archetypes = ArchetypeTable {
        eligible,
        counts: Archetype::ALL
            .into_iter()
            .map(|a| (a.name().to_string(), archetype_counts.get(a.name()).copied().unwrap_or(0)))
            .collect(),
    };

    let mut pattern_counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    let (mut intra_only, mut inter_only, mut both) = (0usize, 0usize, 0usize);
    let mut pattern_lineages = 0usize;
    for records in &per_records {
        let Some((class, detail)) = classify_pattern(records) else { continue };
        pattern_lineages += 1;
        *pattern_counts.entry(class.name()).or_insert(0) += 1;
        match detail {
            Some(MixingDetail::IntraOnly) => intra_only += 1,
            Some(MixingDetail::InterOnly) => inter_only += 1,
            Some(MixingDetail::Both) => both += 1,
            None => {}
        }
    }
    let patterns = PatternTable {
        lineages: pattern_lineages,
        counts: PatternClass::ALL
            .into_iter()
            .map(|c| (c.name().to_string(), pattern_counts.get(c.name()).copied().unwrap_or(0)))
            .collect(),
        mixed_intra_only: intra_only,
        mixed_inter_only: inter_only,
        mixed_both: both,
    };

    let cohorts = cohort_lag_matrix(lineages, &per_records)?;

    let all_ops: Vec<StructuralOpSet> = per_records
        .iter()
        .flatten()
        .filter_map(|r| r.ops.clone())
        .collect();
    let ops_matrix = cooccurrence_matrix(&all_ops);

    let summary = build_summary(lineages, &per_records, aba.summary.clone(), snapshot)?;

    let steps = per_records.into_iter().flatten().collect();
    Ok(CorpusAnalytics {
        steps,
        summary,
        archetypes,
        patterns,
        aba,
        cohorts,
        ops_matrix,
        warnings,
    })
}

fn build_summary(
    lineages: &[Lineage],
    per_records: &[Vec<StepRecord>],
    aba: AbaSummary,
    snapshot: Option<DateTime<Utc>>,
) -> Result<CorpusSummary> {
    let total = lineages.len();
    let active = lineages.iter().filter(|l| l.status == LineageStatus::Active).count();

    let mut revision_steps = 0usize;
    let mut changing_steps = 0usize;
    let mut excluded = 0usize;
    let mut bridged = 0usize;
    let mut rules_with_pairs = 0usize;
    let mut edited = 0usize;
    let mut per_rule_changing: Vec<f64> = Vec::new();
    let mut first_days: Vec<f64> = Vec::new();
    let mut magnitudes: Vec<f64> = Vec::new();

    for (lineage, records) in lineages.iter().zip(per_records) {
        let analyzed: Vec<&StepRecord> = records.iter().filter(|r| !r.excluded).collect();
        revision_steps += analyzed.len();
        excluded += records.len() - analyzed.len();
        bridged += analyzed.iter().filter(|r| r.bridged).count();
        if !analyzed.is_empty() {
            rules_with_pairs += 1;
        }
        let changing: Vec<&&StepRecord> =
            analyzed.iter().filter(|r| r.predicate_changing()).collect();
        changing_steps += changing.len();
        magnitudes.extend(changing.iter().map(|r| r.d_pred.unwrap()));
        if changing.is_empty() {
            continue;
        }
        edited += 1;
        per_rule_changing.push(changing.len() as f64);
        let created = parse_time(&lineage.created_at)?;
        let first = parse_time(&changing[0].to_time)?;
        first_days.push(days_between(created, first));
    }

    per_rule_changing.sort_by(f64::total_cmp);
    first_days.sort_by(f64::total_cmp);
    magnitudes.sort_by(f64::total_cmp);

    let revisions_per_edited_rule = (!per_rule_changing.is_empty()).then(|| RevisionCountStats {
        mean: per_rule_changing.iter().sum::<f64>() / per_rule_changing.len() as f64,
        median: median(&per_rule_changing),
        p90: quantile(&per_rule_changing, 0.9),
    });
    let magnitude = (!magnitudes.is_empty()).then(|| MagnitudeStats {
        mean: magnitudes.iter().sum::<f64>() / magnitudes.len() as f64,
        p25: quantile(&magnitudes, 0.25),
        median: median(&magnitudes),
        p90: quantile(&magnitudes, 0.9),
        max: *magnitudes.last().unwrap(),
    });
    let n_edited = first_days.len() as f64;

    Ok(CorpusSummary {
        total_rules: total,
        active_rules: active,
        deleted_rules: total - active,
        revision_steps,
        predicate_changing_steps: changing_steps,
        excluded_adjacencies: excluded,
        bridged_steps: bridged,
        step_eligible_rules: lineages.iter().filter(|l| l.versions.len() >= 2).count(),
        rules_with_pairs,
        edited_rules: edited,
        proportion_edited: (total > 0).then(|| edited as f64 / total as f64),
        revisions_per_edited_rule,
        days_to_first_revision_median: (!first_days.is_empty()).then(|| median(&first_days)),
        first_revision_within_90_days: (!first_days.is_empty())
            .then(|| first_days.iter().filter(|&&d| d <= 90.0).count() as f64 / n_edited),
        first_revision_after_two_years: (!first_days.is_empty())
            .then(|| first_days.iter().filter(|&&d| d > MID_WINDOW_END_DAYS).count() as f64 / n_edited),
        magnitude,
        aba,
        snapshot_time: snapshot.map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
    })
}

use crate::util::{fmt_f64 as fmt, write_csv};

fn window_mark(on: bool) -> String {
    if on { ">=1".to_string() } else { "0".to_string() }
}

/// Writes steps.jsonl, summary.json, archetypes.csv, patterns.csv, aba.csv,
/// cohort_matrix.csv, and ops_matrix.csv under `dir`.
pub fn write_corpus(dir: &Path, out: &CorpusAnalytics) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut steps = fs::File::create(dir.join("steps.jsonl"))?;
    for rec in &out.steps {
        let line = serde_json::to_string(rec).map_err(|e| Error::Other(e.to_string()))?;
        writeln!(steps, "{line}")?;
    }

    let summary =
        serde_json::to_string_pretty(&out.summary).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(dir.join("summary.json"), summary + "\n")?;

    let mut rows = vec![vec![
        "archetype".to_string(),
        "l0".to_string(),
        "l1_7".to_string(),
        "l8_plus".to_string(),
        "lineages".to_string(),
        "share".to_string(),
    ]];
    rows.push(vec![
        "eligible".to_string(),
        String::new(),
        String::new(),
        String::new(),
        out.archetypes.eligible.to_string(),
        String::new(),
    ]);
    for (a, (name, count)) in Archetype::ALL.iter().zip(&out.archetypes.counts) {
        let (w0, w1, w2) = a.windows();
        let share = if out.archetypes.eligible > 0 {
            fmt(*count as f64 / out.archetypes.eligible as f64)
        } else {
            String::new()
        };
        rows.push(vec![
            name.clone(),
            window_mark(w0),
            window_mark(w1),
            window_mark(w2),
            count.to_string(),
            share,
        ]);
    }
    write_csv(&dir.join("archetypes.csv"), &rows)?;

    let mut rows = vec![vec!["pattern".to_string(), "lineages".to_string(), "share".to_string()]];
    rows.push(vec![
        "number-of-lineages".to_string(),
        out.patterns.lineages.to_string(),
        String::new(),
    ]);
    let total = out.patterns.lineages;
    let mut mixed_count = 0usize;
    for (name, count) in &out.patterns.counts {
        if name == "mixed" {
            mixed_count = *count;
        }
        let share = if total > 0 { fmt(*count as f64 / total as f64) } else { String::new() };
        rows.push(vec![name.clone(), count.to_string(), share]);
    }
    for (name, count) in [
        ("mixed/intra-only", out.patterns.mixed_intra_only),
        ("mixed/inter-only", out.patterns.mixed_inter_only),
        ("mixed/both", out.patterns.mixed_both),
    ] {
        let share =
            if mixed_count > 0 { fmt(count as f64 / mixed_count as f64) } else { String::new() };
        rows.push(vec![name.to_string(), count.to_string(), share]);
    }
    write_csv(&dir.join("patterns.csv"), &rows)?;

    let mut rows = vec![vec![
        "lineage_id".to_string(),
        "first_index".to_string(),
        "middle_index".to_string(),
        "restored_index".to_string(),
        "restore_hours".to_string(),
    ]];
    for t in &out.aba.triplets {
        rows.push(vec![
            t.lineage_id.clone(),
            t.first_index.to_string(),
            t.middle_index.to_string(),
            t.restored_index.to_string(),
            fmt(t.restore_hours),
        ]);
    }
    write_csv(&dir.join("aba.csv"), &rows)?;

    let width = out.cohorts.rows.first().map_or(0, |r| r.cells.len());
    let mut header = vec!["cohort".to_string(), "rules".to_string()];
    header.extend((0..width).map(|i| format!("lag{i}")));
    let mut rows = vec![header];
    for row in &out.cohorts.rows {
        let mut r = vec![row.cohort.clone(), row.rules.to_string()];
        r.extend(row.cells.iter().map(|&c| fmt(c)));
        rows.push(r);
    }
    write_csv(&dir.join("cohort_matrix.csv"), &rows)?;

    write_csv(&dir.join("ops_matrix.csv"), &ops_matrix_rows(&out.ops_matrix))?;

    Ok(())
}

/// CSV rows for a co-occurrence matrix: header, one conditional-probability
/// row per label, and a final appearance-count row.
pub fn ops_matrix_rows(m: &CooccurrenceMatrix) -> Vec<Vec<String>> {
    let mut header = vec!["label".to_string()];
    header.extend(m.labels.iter().map(|l| l.to_string()));
    let mut rows = vec![header];
    for (r, label) in m.labels.iter().enumerate() {
        let mut row = vec![label.to_string()];
        row.extend(m.p[r].iter().map(|&v| fmt(v)));
        rows.push(row);
    }
    let mut appearances = vec!["appearances".to_string()];
    appearances.extend(m.appearances.iter().map(|n| n.to_string()));
    rows.push(appearances);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_status, VersionRecord};
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
            time: rfc(T0 + (day * DAY_SECONDS) as i64),
            path: "rules/r.spl".to_string(),
            text: text.to_string(),
            text_digest: sha256_hex(text.as_bytes()),
            parse_ok: status.parse_ok,
            parse_error: status.parse_error,
            empty_detection: status.empty_detection,
        }
    }

    fn lineage(id: &str, status: LineageStatus, versions: Vec<VersionRecord>) -> Lineage {
        Lineage {
            lineage_id: id.to_string(),
            name: id.to_string(),
            status,
            created_at: versions.first().expect("non-empty").time.clone(),
            last_seen: versions.last().expect("non-empty").time.clone(),
            versions,
        }
    }

    fn active(id: &str, texts_by_day: &[(f64, &str)]) -> Lineage {
        let versions = texts_by_day
            .iter()
            .enumerate()
            .map(|(i, (day, text))| version(i, *day, text))
            .collect();
        lineage(id, LineageStatus::Active, versions)
    }

    fn days_after(day: f64) -> DateTime<Utc> {
        DateTime::from_timestamp(T0 + (day * DAY_SECONDS) as i64, 0).expect("valid timestamp")
    }

    #[test]
    fn unparseable_middle_version_is_bridged() {
        let l = active("r", &[
            (0.0, "a=1 x=9"),
            (1.0, "a=1 [subsearch not supported]"),
            (2.0, "a=1 x=9 b=2"),
        ]);
        let records = pair_stream(&l, &AnalyzeParams::default()).unwrap();
        let analyzed: Vec<&StepRecord> = records.iter().filter(|r| !r.excluded).collect();
        assert_eq!(analyzed.len(), 1);
        assert_eq!((analyzed[0].from_index, analyzed[0].to_index), (0, 2));
        assert!(analyzed[0].bridged);
        assert_eq!(analyzed[0].d_pred, Some(1.0));
        let markers: Vec<(usize, usize)> = records
            .iter()
            .filter(|r| r.excluded)
            .map(|r| (r.from_index, r.to_index))
            .collect();
        assert_eq!(markers, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn five_versions_two_changing() {
        let l = active("r", &[
            (0.0, "a=1"),
            (1.0, "a=1 b=2"),
            (2.0, "a=1 b=2"),
            (3.0, "a=1 b=2 c=3"),
            (4.0, "a=1 b=2 c=3"),
        ]);
        let records = pair_stream(&l, &AnalyzeParams::default()).unwrap();
        assert_eq!(records.len(), 4);
        assert!(records.iter().all(|r| !r.excluded && !r.bridged));
        let changing = records.iter().filter(|r| r.predicate_changing()).count();
        assert_eq!(changing, 2);
    }

    #[test]
    fn single_version_yields_no_pairs() {
        let l = active("r", &[(0.0, "a=1")]);
        assert!(pair_stream(&l, &AnalyzeParams::default()).unwrap().is_empty());
    }

    #[test]
    fn gap_days_measures_wall_clock() {
        let l = active("r", &[(0.0, "a=1"), (2.5, "a=2")]);
        let records = pair_stream(&l, &AnalyzeParams::default()).unwrap();
        assert!((records[0].gap_days - 2.5).abs() < 1e-9);
    }

    #[test]
    fn step_record_round_trips_through_json() {
        let l = active("r", &[(0.0, "a=1 (b=2 OR c=3)"), (1.0, "a=1 (b=2 OR c=3 OR d=4)")]);
        let records = pair_stream(&l, &AnalyzeParams::default()).unwrap();
        for rec in records {
            let line = serde_json::to_string(&rec).unwrap();
            let back: StepRecord = serde_json::from_str(&line).unwrap();
            assert_eq!(back, rec);
        }
    }

    #[test]
    fn summary_recovers_planted_magnitudes() {
        let lineages = vec![
            active("r1", &[
                (0.0, "a=1 a0=0"),
                (10.0, "a=1 a0=0 b=2"),
                (20.0, "a=1 a0=0 b=2 c=3 d=4"),
            ]),
            active("r2", &[
                (0.0, "x=1 x0=0"),
                (100.0, "x=1 x0=0 p=2 q=3 r=4"),
                (200.0, "x=1 x0=0 p=2 q=3 r=4 s=5 t=6 u=7 v=8"),
            ]),
            active("r3", &[(0.0, "k=9"), (5.0, "k=9")]),
            active("r4", &[(0.0, "z=0")]),
        ];
        let out = analyze_corpus(&lineages, &AnalyzeParams::default(), None).unwrap();
        let s = &out.summary;
        assert_eq!(s.total_rules, 4);
        assert_eq!(s.active_rules, 4);
        assert_eq!(s.step_eligible_rules, 3);
        assert_eq!(s.rules_with_pairs, 3);
        assert_eq!(s.revision_steps, 5);
        assert_eq!(s.predicate_changing_steps, 4);
        assert_eq!(s.edited_rules, 2);
        assert_eq!(s.proportion_edited, Some(0.5));
        let m = s.magnitude.as_ref().unwrap();
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.p25, 1.75);
        assert_eq!(m.median, 2.5);
        assert!((m.p90 - 3.7).abs() < 1e-9);
        assert_eq!(m.max, 4.0);
        let r = s.revisions_per_edited_rule.as_ref().unwrap();
        assert_eq!(r.mean, 2.0);
        assert_eq!(r.median, 2.0);
        assert_eq!(s.days_to_first_revision_median, Some(55.0));
        assert_eq!(s.first_revision_within_90_days, Some(0.5));
        assert_eq!(s.first_revision_after_two_years, Some(0.0));
    }

    #[test]
    fn empty_corpus_summary_is_null() {
        let out = analyze_corpus(&[], &AnalyzeParams::default(), None).unwrap();
        let s = &out.summary;
        assert_eq!(s.total_rules, 0);
        assert_eq!(s.proportion_edited, None);
        assert_eq!(s.revisions_per_edited_rule, None);
        assert_eq!(s.magnitude, None);
        assert_eq!(s.days_to_first_revision_median, None);
        assert_eq!(s.snapshot_time, None);
        assert!(out.steps.is_empty());
        assert!(out.cohorts.rows.is_empty());
        assert!(out.ops_matrix.is_empty());
    }

    #[test]
    fn archetype_windows_split_at_quarter_and_two_years() {
        let snapshot = days_after(1200.0);
        let creation_only = active("r", &[(0.0, "a=1"), (30.0, "a=1 b=2")]);
        let records = pair_stream(&creation_only, &AnalyzeParams::default()).unwrap();
        assert_eq!(
            classify_archetype(&creation_only, &records, snapshot).unwrap(),
            Some(Archetype::CreationOnly)
        );

        let mid_late = active("r", &[(0.0, "a=1"), (400.0, "a=1 b=2"), (900.0, "a=1 b=2 c=3")]);
        let records = pair_stream(&mid_late, &AnalyzeParams::default()).unwrap();
        assert_eq!(
            classify_archetype(&mid_late, &records, snapshot).unwrap(),
            Some(Archetype::MidLate)
        );

        let never = active("r", &[(0.0, "a=1"), (50.0, "a=1")]);
        let records = pair_stream(&never, &AnalyzeParams::default()).unwrap();
        assert_eq!(
            classify_archetype(&never, &records, snapshot).unwrap(),
            Some(Archetype::NeverEdited)
        );
    }

    #[test]
    fn short_lifetimes_are_archetype_ineligible() {
        let l = active("r", &[(0.0, "a=1"), (30.0, "a=1 b=2")]);
        let records = pair_stream(&l, &AnalyzeParams::default()).unwrap();
        let short = days_after(912.5);
        assert_eq!(classify_archetype(&l, &records, short).unwrap(), None);
        let exactly = days_after(ARCHETYPE_MIN_LIFETIME_DAYS);
        assert!(classify_archetype(&l, &records, exactly).unwrap().is_some());
    }

    #[test]
    fn deleted_lineage_lifetime_ends_at_last_seen() {
        let mut l = active("r", &[(0.0, "a=1"), (30.0, "a=1 b=2")]);
        l.status = LineageStatus::Deleted;
        l.last_seen = rfc(T0 + (500.0 * DAY_SECONDS) as i64);
        let records = pair_stream(&l, &AnalyzeParams::default()).unwrap();
        let snapshot = days_after(5000.0);
        assert_eq!(classify_archetype(&l, &records, snapshot).unwrap(), None);
    }

    fn record_with_ops(d: f64, labels: &[&str]) -> StepRecord {
        let mut ops = StructuralOpSet::default();
        for l in labels {
            *ops.counts.entry(l.to_string()).or_insert(0) += 1;
        }
        StepRecord {
            lineage_id: "r".to_string(),
            from_index: 0,
            to_index: 1,
            from_commit: "a".to_string(),
            to_commit: "b".to_string(),
            from_time: rfc(T0),
            to_time: rfc(T0 + 3600),
            gap_days: 0.0,
            excluded: false,
            bridged: false,
            d_pred: Some(d),
            breakdown: None,
            ops: Some(ops),
        }
    }

    #[test]
    fn pattern_classes_cover_the_taxonomy() {
        let expand = vec![record_with_ops(1.0, &["and+"]), record_with_ops(1.0, &["or+"])];
        assert_eq!(classify_pattern(&expand), Some((PatternClass::ExpandOnly, None)));

        let intra = vec![record_with_ops(2.0, &["and+", "and-"])];
        assert_eq!(
            classify_pattern(&intra),
            Some((PatternClass::Mixed, Some(MixingDetail::IntraOnly)))
        );

        let inter = vec![record_with_ops(1.0, &["and+"]), record_with_ops(1.0, &["and-"])];
        assert_eq!(
            classify_pattern(&inter),
            Some((PatternClass::Mixed, Some(MixingDetail::InterOnly)))
        );

        let both = vec![
            record_with_ops(2.0, &["and+", "and-"]),
            record_with_ops(1.0, &["or+"]),
        ];
        assert_eq!(
            classify_pattern(&both),
            Some((PatternClass::Mixed, Some(MixingDetail::Both)))
        );

        let value = vec![record_with_ops(0.8, &["val-update"])];
        assert_eq!(classify_pattern(&value), Some((PatternClass::ValueOnly, None)));

        let contract = vec![record_with_ops(1.0, &["or-"])];
        assert_eq!(classify_pattern(&contract), Some((PatternClass::ContractOnly, None)));

        assert_eq!(classify_pattern(&[record_with_ops(0.0, &["move"])]), None);
    }

    #[test]
    fn reorganization_does_not_force_mixed() {
        let records = vec![
            record_with_ops(1.0, &["and+", "move"]),
            record_with_ops(0.0, &["flip"]),
        ];
        assert_eq!(classify_pattern(&records), Some((PatternClass::ExpandOnly, None)));
    }

    #[test]
    fn zero_cost_relocation_marks_restructure_only() {
        let records = vec![
            record_with_ops(0.8, &["val-update"]),
            record_with_ops(0.0, &["move"]),
        ];
        assert_eq!(classify_pattern(&records), Some((PatternClass::RestructureOnly, None)));
    }

    #[test]
    fn aba_triplets_slide_over_alternations() {
        let a = "a=1 b=2";
        let b = "a=1 c=3";
        let l = active("r", &[(0.0, a), (1.0, b), (2.0, a), (3.0, b), (4.0, a)]);
        let trips = detect_aba(&l).unwrap();
        assert_eq!(trips.len(), 3);
        assert_eq!(
            trips
                .iter()
                .map(|t| (t.first_index, t.middle_index, t.restored_index))
                .collect::<Vec<_>>(),
            vec![(0, 1, 2), (1, 2, 3), (2, 3, 4)]
        );
        assert!(trips.iter().all(|t| (t.restore_hours - 24.0).abs() < 1e-9));
    }

    #[test]
    fn aba_requires_exact_canonical_restore() {
        let l = active("r", &[(0.0, "a=1"), (1.0, "a=2"), (2.0, "a=3")]);
        assert!(detect_aba(&l).unwrap().is_empty());
        let spaced = active("r", &[(0.0, "a=1   b=2"), (1.0, "a=9"), (2.0, "b=2 a=1")]);
        assert_eq!(detect_aba(&spaced).unwrap().len(), 1);
    }

    #[test]
    fn unparseable_middle_still_anchors_a_reversion() {
        let l = active("r", &[
            (0.0, "a=1"),
            (1.0, "a=1 [subsearch not supported]"),
            (2.0, "a=1"),
        ]);
        let trips = detect_aba(&l).unwrap();
        assert_eq!(trips.len(), 1);
        assert_eq!(trips[0].restore_hours, 24.0);
    }

    #[test]
    fn aba_summary_counts_fractions() {
        let a = "a=1";
        let b = "a=2";
        let fast = active("r1", &[(0.0, a), (0.1, b), (0.2, a)]);
        let slow = active("r2", &[(0.0, a), (1.0, b), (11.0, a)]);
        let out = analyze_corpus(&[fast, slow], &AnalyzeParams::default(), None).unwrap();
        let s = &out.summary.aba;
        assert_eq!(s.lineages_with_triplets, 2);
        assert_eq!(s.total_triplets, 2);
        assert_eq!(s.restored_within_24h, Some(0.5));
        assert_eq!(s.restored_within_7d, Some(0.5));
    }

    #[test]
    fn cohort_cell_holds_per_rule_mean() {
        let edited =
            active("r1", &[(0.0, "a=1 a0=0"), (200.0, "a=1 a0=0 b=2 c=3 d=4 e=5 f=6 g=7")]);
        let quiet = active("r2", &[(1.0, "x=1")]);
        let lineages = vec![edited, quiet];
        let per: Vec<Vec<StepRecord>> = lineages
            .iter()
            .map(|l| pair_stream(l, &AnalyzeParams::default()).unwrap())
            .collect();
        let m = cohort_lag_matrix(&lineages, &per).unwrap();
        assert_eq!(m.rows.len(), 1);
        let row = &m.rows[0];
        assert_eq!(row.cohort, "2020Q3");
        assert_eq!(row.rules, 2);
        assert_eq!(row.cells.len(), 3);
        assert_eq!(row.cells[2], 3.0);
        assert_eq!(row.cells[0], 0.0);
    }

    #[test]
    fn cohort_row_sums_conserve_total_magnitude() {
        let lineages = vec![
            active("r1", &[
                (0.0, "a=1 a0=0"),
                (10.0, "a=1 a0=0 b=2"),
                (400.0, "a=1 a0=0 b=2 c=3 d=4"),
            ]),
            active("r2", &[(10.0, "x=10000"), (500.0, "x=10001")]),
            active("r3", &[(2000.0, "y=1 y0=0"), (2100.0, "y=1 y0=0 z=2")]),
        ];
        let per: Vec<Vec<StepRecord>> = lineages
            .iter()
            .map(|l| pair_stream(l, &AnalyzeParams::default()).unwrap())
            .collect();
        let m = cohort_lag_matrix(&lineages, &per).unwrap();
        assert_eq!(m.rows.len(), 2);
        let first = &m.rows[0];
        let total: f64 = first.cells.iter().sum::<f64>() * first.rules as f64;
        assert!((total - 3.8).abs() < 1e-9);
        let second = &m.rows[1];
        assert_eq!(second.cohort, "2026Q1");
        let total: f64 = second.cells.iter().sum::<f64>() * second.rules as f64;
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_ops_matrix_counts_multi_label_steps() {
        let l = active("r", &[
            (0.0, "a=1 (b=2 OR c=3)"),
            (1.0, "a=1 d=9 (b=2 OR c=3 OR e=4)"),
        ]);
        let out = analyze_corpus(&[l], &AnalyzeParams::default(), None).unwrap();
        assert_eq!(out.ops_matrix.multi_label_steps, 1);
        let and_row = out.ops_matrix.labels.iter().position(|&l| l == "and+").unwrap();
        let or_col = out.ops_matrix.labels.iter().position(|&l| l == "or+").unwrap();
        assert_eq!(out.ops_matrix.p[and_row][or_col], 1.0);
    }

    #[test]
    fn bridged_steps_surface_as_warnings() {
        let l = active("r", &[
            (0.0, "a=1"),
            (1.0, "a=1 [subsearch not supported]"),
            (2.0, "a=1 b=2"),
        ]);
        let out = analyze_corpus(&[l], &AnalyzeParams::default(), None).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("bridges 1 excluded version(s)"));
        assert_eq!(out.summary.bridged_steps, 1);
        assert_eq!(out.summary.excluded_adjacencies, 2);
    }

    #[test]
    fn snapshot_defaults_to_newest_last_seen() {
        let lineages = vec![
            active("r1", &[(0.0, "a=1")]),
            active("r2", &[(0.0, "b=1"), (1300.0, "b=2")]),
        ];
        let out = analyze_corpus(&lineages, &AnalyzeParams::default(), None).unwrap();
        assert_eq!(out.summary.snapshot_time.as_deref(), Some(rfc(T0 + (1300.0 * DAY_SECONDS) as i64).as_str()));
        assert_eq!(out.archetypes.eligible, 2);
        let never: usize = out
            .archetypes
            .counts
            .iter()
            .filter(|(n, _)| n == "never-edited")
            .map(|(_, c)| *c)
            .sum();
        assert_eq!(never, 1);
    }

    #[test]
    fn write_corpus_emits_all_artifacts() {
        let lineages = vec![
            active("r1", &[(0.0, "a=1"), (10.0, "a=1 b=2"), (20.0, "a=1")]),
            active("r2", &[(0.0, "x=1 (y=2 OR z=3)"), (30.0, "x=1 w=9 (y=2 OR z=3 OR v=4)")]),
        ];
        let out = analyze_corpus(&lineages, &AnalyzeParams::default(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &out).unwrap();
        for name in [
            "steps.jsonl",
            "summary.json",
            "archetypes.csv",
            "patterns.csv",
            "aba.csv",
            "cohort_matrix.csv",
            "ops_matrix.csv",
        ] {
            assert!(dir.path().join(name).is_file(), "{name} missing");
        }
        let steps = fs::read_to_string(dir.path().join("steps.jsonl")).unwrap();
        assert_eq!(steps.lines().count(), out.steps.len());
        for line in steps.lines() {
            let _: StepRecord = serde_json::from_str(line).unwrap();
        }
        let patterns = fs::read_to_string(dir.path().join("patterns.csv")).unwrap();
        assert!(patterns.starts_with("pattern,lineages,share\n"));
        assert!(patterns.contains("number-of-lineages,2,"));
        let ops = fs::read_to_string(dir.path().join("ops_matrix.csv")).unwrap();
        assert!(ops.starts_with("label,and+,and-,or+,or-,branch+,branch-,move,flip\n"));
        assert!(ops.lines().last().unwrap().starts_with("appearances,"));
        let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let parsed: CorpusSummary = serde_json::from_str(&summary).unwrap();
        assert_eq!(parsed, out.summary);
    }
}
