//! Structural operation labels for a revision step.
//!
//! The edit script says which nodes changed; this module says what kind of
//! rewrite the step performed: predicate growth or shrinkage inside a
//! conjunctive or disjunctive scope (`and+`, `and-`, `or+`, `or-`), whole
//! subtree introduction or removal (`branch+`, `branch-`), relocation of a
//! kept predicate (`move`), a scope changing Boolean type (`flip`), and
//! in-place leaf edits (`val-update`).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::align::{PairAnalysis, Tree};
use crate::cost::{CostWeights, Edit, EditScript};
use crate::graph::OpLabel;

/// The eight structural labels, in taxonomy order.
pub const STRUCTURAL_LABELS: [&str; 8] =
    ["and+", "and-", "or+", "or-", "branch+", "branch-", "move", "flip"];

/// All step labels, the structural eight plus `val-update`.
pub const ALL_LABELS: [&str; 9] =
    ["and+", "and-", "or+", "or-", "branch+", "branch-", "move", "flip", "val-update"];

/// A detected scope relabel: an unmatched operator on each side, opposite
/// labels, sharing enough matched leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipWitness {
    pub a: usize,
    pub b: usize,
    pub from: String,
    pub to: String,
    pub overlap: usize,
}

/// The labeled operations of one revision step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralOpSet {
    /// Label to occurrence count; absent labels have count zero.
    pub counts: BTreeMap<String, usize>,
    pub flips: Vec<FlipWitness>,
}

impl StructuralOpSet {
    pub fn count(&self, label: &str) -> usize {
        self.counts.get(label).copied().unwrap_or(0)
    }

    fn bump(&mut self, label: &str) {
        *self.counts.entry(label.to_string()).or_insert(0) += 1;
    }

    /// Present structural labels, `val-update` excluded.
    pub fn structural_labels(&self) -> BTreeSet<&str> {
        STRUCTURAL_LABELS.iter().copied().filter(|l| self.count(l) > 0).collect()
    }

    /// Present labels of any kind.
    pub fn labels(&self) -> BTreeSet<&str> {
        ALL_LABELS.iter().copied().filter(|l| self.count(l) > 0).collect()
    }

    /// A step carrying two or more distinct structural labels.
    pub fn is_multi_label(&self) -> bool {
        self.structural_labels().len() >= 2
    }

    /// A step whose only label is `val-update`.
    pub fn is_value_only(&self) -> bool {
        self.structural_labels().is_empty() && self.count("val-update") > 0
    }
}

/// Finds scope relabels: pairs of unmatched operators with opposite labels
/// whose matched-leaf descendants overlap in at least `theta_flip` of the
/// smaller side. Each scope joins at most one flip; candidates are taken
/// greedily by descending overlap.
pub fn detect_flip(pa: &PairAnalysis, theta_flip: f64) -> Vec<FlipWitness> {
    let al = &pa.alignment;
    let unmatched_a: Vec<usize> =
        pa.ta.op_indices().into_iter().filter(|&i| al.a2b[i].is_none()).collect();
    let unmatched_b: Vec<usize> =
        pa.tb.op_indices().into_iter().filter(|&j| al.b2a[j].is_none()).collect();

    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for &oa in &unmatched_a {
        let sa: Vec<usize> =
            pa.ta.leaves_under(oa).into_iter().filter(|&i| al.a2b[i].is_some()).collect();
        if sa.is_empty() {
            continue;
        }
        for &ob in &unmatched_b {
            if pa.ta.op_label(oa) == pa.tb.op_label(ob) {
                continue;
            }
            let sb: Vec<usize> =
                pa.tb.leaves_under(ob).into_iter().filter(|&j| al.b2a[j].is_some()).collect();
            if sb.is_empty() {
                continue;
            }
            let overlap = sa
                .iter()
                .filter(|&&i| {
                    let j = al.a2b[i].expect("sa holds matched leaves");
                    pa.tb.is_strict_descendant(j, ob)
                })
                .count();
            let smaller = sa.len().min(sb.len());
            if overlap >= 1 && overlap as f64 >= theta_flip * smaller as f64 {
                candidates.push((overlap, oa, ob));
            }
        }
    }

    candidates.sort_by(|x, y| {
        y.0.cmp(&x.0)
            .then_with(|| pa.ta.nodes[x.1].serial.cmp(&pa.ta.nodes[y.1].serial))
            .then_with(|| pa.tb.nodes[x.2].serial.cmp(&pa.tb.nodes[y.2].serial))
            .then_with(|| x.1.cmp(&y.1))
            .then_with(|| x.2.cmp(&y.2))
    });

    let mut used_a = BTreeSet::new();
    let mut used_b = BTreeSet::new();
    let mut flips = Vec::new();
    for (overlap, oa, ob) in candidates {
        if used_a.contains(&oa) || used_b.contains(&ob) {
            continue;
        }
        used_a.insert(oa);
        used_b.insert(ob);
        flips.push(FlipWitness {
            a: oa,
            b: ob,
            from: pa.ta.op_label(oa).expect("operator index").as_str().to_string(),
            to: pa.tb.op_label(ob).expect("operator index").as_str().to_string(),
            overlap,
        });
    }
    flips
}

fn scope_label(l: OpLabel, grow: bool) -> &'static str {
    match (l, grow) {
        (OpLabel::And, true) => "and+",
        (OpLabel::And, false) => "and-",
        (OpLabel::Or, true) => "or+",
        (OpLabel::Or, false) => "or-",
    }
}

/// Nearest proper ancestor that is matched or flip-paired.
fn nearest_covered_ancestor(
    tree: &Tree,
    mapped: &[Option<usize>],
    flipped: &BTreeMap<usize, usize>,
    node: usize,
) -> Option<usize> {
    let mut cur = tree.nodes[node].parent;
    while let Some(p) = cur {
        if mapped[p].is_some() || flipped.contains_key(&p) {
            return Some(p);
        }
        cur = tree.nodes[p].parent;
    }
    None
}

/// Classifies one side's unmatched nodes into grow or shrink labels.
///
/// An unmatched leaf takes its parent scope's label when the parent is
/// matched, flip-paired, or the root; below an unmatched interior operator
/// it is subsumed by that operator's branch label. An unmatched operator
/// emits a branch label when no unmatched, unflipped interior operator
/// stands above it; an unmatched root folds into its descendants' labels
/// and only falls back to a branch label when nothing under it changed.
fn classify_side(
    tree: &Tree,
    mapped: &[Option<usize>],
    flipped: &BTreeMap<usize, usize>,
    grow: bool,
    out: &mut StructuralOpSet,
) {
    let covered = |n: usize| mapped[n].is_some() || flipped.contains_key(&n);
    let subsumed = |n: usize| {
        let mut cur = tree.nodes[n].parent;
        while let Some(p) = cur {
            if p != 0 && !covered(p) {
                return true;
            }
            cur = tree.nodes[p].parent;
        }
        false
    };

    for i in 0..tree.len() {
        if covered(i) {
            continue;
        }
        if tree.is_leaf(i) {
            match tree.nodes[i].parent {
                None => out.bump(scope_label(OpLabel::And, grow)),
                Some(p) => {
                    if covered(p) || p == 0 {
                        let label = tree.op_label(p).expect("parent is an operator");
                        out.bump(scope_label(label, grow));
                    }
                }
            }
        } else if i == 0 {
            let any_unmatched_below = (1..tree.len()).any(|n| !covered(n));
            if !any_unmatched_below {
                out.bump(if grow { "branch+" } else { "branch-" });
            }
        } else if !subsumed(i) {
            out.bump(if grow { "branch+" } else { "branch-" });
        }
    }
}

/// Labels a revision step from its alignment and edit script.
pub fn label_step(pa: &PairAnalysis, script: &EditScript, theta_flip: f64) -> StructuralOpSet {
    let mut out = StructuralOpSet::default();
    let flips = detect_flip(pa, theta_flip);
    let flip_a: BTreeMap<usize, usize> = flips.iter().map(|f| (f.a, f.b)).collect();
    let flip_b: BTreeMap<usize, usize> = flips.iter().map(|f| (f.b, f.a)).collect();
    let al = &pa.alignment;

    for (i, j) in al.matched_pairs() {
        if !pa.ta.is_leaf(i) {
            continue;
        }
        let anc_a = nearest_covered_ancestor(&pa.ta, &al.a2b, &flip_a, i);
        let anc_b = nearest_covered_ancestor(&pa.tb, &al.b2a, &flip_b, j);
        let moved = match (anc_a, anc_b) {
            (Some(x), Some(y)) => {
                let image = al.a2b[x].or_else(|| flip_a.get(&x).copied());
                image != Some(y)
            }
            (None, None) => false,
            _ => true,
        };
        if moved {
            out.bump("move");
        }
    }

    for _ in 0..script.breakdown.pred_updates {
        out.bump("val-update");
    }

    classify_side(&pa.ta, &al.a2b, &flip_a, false, &mut out);
    classify_side(&pa.tb, &al.b2a, &flip_b, true, &mut out);

    for _ in 0..flips.len() {
        out.bump("flip");
    }
    out.flips = flips;
    out
}

/// Rewrites each flip pair's scope delete and insert into a single relabel,
/// recomputing the total, for reporting alongside the structural labels.
pub fn apply_flips(script: &EditScript, flips: &[FlipWitness], weights: &CostWeights) -> EditScript {
    let flip_a: BTreeSet<usize> = flips.iter().map(|f| f.a).collect();
    let flip_b: BTreeSet<usize> = flips.iter().map(|f| f.b).collect();
    let mut out = EditScript { edits: Vec::new(), total: 0.0, breakdown: script.breakdown };

    for e in &script.edits {
        match e {
            Edit::OpDelete { a, cost } => {
                if flip_a.contains(a) {
                    out.breakdown.op_deletes -= 1;
                    out.breakdown.op_delete_cost -= cost;
                } else {
                    out.edits.push(e.clone());
                }
            }
            Edit::OpInsert { b, cost } => {
                if flip_b.contains(b) {
                    out.breakdown.op_inserts -= 1;
                    out.breakdown.op_insert_cost -= cost;
                } else {
                    out.edits.push(e.clone());
                }
            }
            other => out.edits.push(other.clone()),
        }
    }
    for f in flips {
        out.breakdown.op_relabels += 1;
        out.breakdown.op_relabel_cost += weights.bool_relabel;
        out.edits.push(Edit::OpRelabel { a: f.a, b: f.b, cost: weights.bool_relabel });
    }
    out.total = out.edits.iter().map(Edit::cost).sum();
    out
}

/// Conditional co-occurrence over the eight structural labels, computed on
/// multi-label steps only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CooccurrenceMatrix {
    pub labels: Vec<&'static str>,
    /// Multi-label steps containing each row label (the row denominators).
    pub appearances: Vec<usize>,
    /// `p[r][c]` = P(column label present | row label present).
    pub p: Vec<Vec<f64>>,
    pub multi_label_steps: usize,
}

impl CooccurrenceMatrix {
    pub fn is_empty(&self) -> bool {
        self.multi_label_steps == 0
    }
}

/// Builds the conditional probability table P(column op | row op) over steps
/// carrying at least two distinct structural labels.
pub fn cooccurrence_matrix(steps: &[StructuralOpSet]) -> CooccurrenceMatrix {
    let n = STRUCTURAL_LABELS.len();
    let mut appearances = vec![0usize; n];
    let mut joint = vec![vec![0usize; n]; n];
    let mut multi = 0usize;

    for step in steps {
        let present = step.structural_labels();
        if present.len() < 2 {
            continue;
        }
        multi += 1;
        for (r, rl) in STRUCTURAL_LABELS.iter().enumerate() {
            if !present.contains(rl) {
                continue;
            }
            appearances[r] += 1;
            for (c, cl) in STRUCTURAL_LABELS.iter().enumerate() {
                if present.contains(cl) {
                    joint[r][c] += 1;
                }
            }
        }
    }

    let p = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    if appearances[r] == 0 {
                        0.0
                    } else {
                        joint[r][c] as f64 / appearances[r] as f64
                    }
                })
                .collect()
        })
        .collect();

    CooccurrenceMatrix {
        labels: STRUCTURAL_LABELS.to_vec(),
        appearances,
        p,
        multi_label_steps: multi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{analyze_pair, AlignParams};
    use crate::cost::edit_script;
    use crate::graph::{canonicalize, Metadata, PredicateGraph};
    use crate::spl::extract_detection;

    fn graph(text: &str) -> PredicateGraph {
        let expr = extract_detection(text).unwrap().unwrap();
        canonicalize(&expr, Metadata::default())
    }

    fn ops(a: &str, b: &str) -> StructuralOpSet {
        let ga = graph(a);
        let gb = graph(b);
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        let script = edit_script(&pa, &CostWeights::default());
        label_step(&pa, &script, 0.5)
    }

    fn label_string(set: &StructuralOpSet) -> String {
        set.labels().into_iter().collect::<Vec<_>>().join(",")
    }

    #[test]
    fn leaf_added_under_root_and() {
        let set = ops("a=1 b=2", "a=1 b=2 c=3");
        assert_eq!(label_string(&set), "and+");
        assert_eq!(set.count("and+"), 1);
    }

    #[test]
    fn leaf_removed_from_or_scope() {
        let set = ops("k=0 (a=1 OR b=2 OR c=3)", "k=0 (a=1 OR b=2)");
        assert_eq!(label_string(&set), "or-");
    }

    #[test]
    fn root_type_change_is_one_flip() {
        let set = ops("a=1 AND b=2 AND c=3", "a=1 OR b=2 OR c=3");
        assert_eq!(label_string(&set), "flip");
        assert_eq!(set.count("flip"), 1);
        assert_eq!(set.flips.len(), 1);
        assert_eq!((set.flips[0].from.as_str(), set.flips[0].to.as_str()), ("AND", "OR"));
    }

    #[test]
    fn disjoint_opposite_scopes_do_not_flip() {
        let ga = graph("k=1 (a=1 OR b=2)");
        let gb = graph("k=1 (c=3 AND d=4) j=9");
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        assert!(detect_flip(&pa, 0.5).is_empty());
    }

    #[test]
    fn inserted_subtree_is_one_branch_and_subsumes_its_leaves() {
        let set = ops("a=1 (b=2 OR c=3)", "a=1 (b=2 OR c=3 OR (d=4 AND e=5))");
        assert_eq!(label_string(&set), "branch+");
        assert_eq!(set.count("branch+"), 1);
    }

    #[test]
    fn removed_subtree_mirrors_to_branch_minus() {
        let set = ops("a=1 (b=2 OR c=3 OR (d=4 AND e=5))", "a=1 (b=2 OR c=3)");
        assert_eq!(label_string(&set), "branch-");
    }

    #[test]
    fn relocation_into_a_matched_scope_is_a_move() {
        let set = ops("a=1 (b=2 OR c=3) d=4", "a=1 (b=2 OR c=3 OR d=4)");
        assert_eq!(label_string(&set), "move");
        assert_eq!(set.count("move"), 1);
    }

    #[test]
    fn flip_with_leaf_redistribution_emits_move_too() {
        let set = ops(
            "k=1 (e=1 OR f=2 OR g=3 OR h=4 OR i=5) (a=10 OR b=11 OR c=12 OR d=13)",
            "k=1 (e=1 OR f=2 OR g=3 OR h=4 OR i=5 OR (a=10 AND b=11 AND c=12)) d=13",
        );
        assert_eq!(label_string(&set), "flip,move");
        assert_eq!(set.count("move"), 1, "d left the flipped scope");
        assert_eq!(set.count("flip"), 1, "the a,b,c scope changed Boolean type");
    }

    #[test]
    fn value_retune_is_value_only() {
        let set = ops("a=1 cmd=\"*powershell*\"", "a=1 cmd=\"*powershel?*\"");
        assert_eq!(label_string(&set), "val-update");
        assert!(set.is_value_only());
        assert!(!set.is_multi_label());
    }

    #[test]
    fn single_leaf_rule_growing_a_conjunct_counts_as_and_plus() {
        let set = ops("a=1", "a=1 b=2");
        assert_eq!(label_string(&set), "and+");
    }

    #[test]
    fn unmatched_root_with_no_changed_descendants_falls_back_to_branch() {
        let ga = graph("a=1 AND b=2");
        let gb = graph("a=1 OR b=2");
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        let script = edit_script(&pa, &CostWeights::default());
        let set = label_step(&pa, &script, 2.0);
        assert_eq!(set.count("flip"), 0);
        assert_eq!(set.count("branch+"), 1);
        assert_eq!(set.count("branch-"), 1);
    }

    #[test]
    fn flip_adjusted_script_charges_the_relabel_weight() {
        let ga = graph("a=1 AND b=2 AND c=3");
        let gb = graph("a=1 OR b=2 OR c=3");
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        let w = CostWeights::default();
        let script = edit_script(&pa, &w);
        assert_eq!(script.total, 6.0);
        let set = label_step(&pa, &script, 0.5);
        let adjusted = apply_flips(&script, &set.flips, &w);
        assert_eq!(adjusted.total, 4.5);
        assert_eq!(adjusted.breakdown.op_relabels, 1);
        assert_eq!(adjusted.breakdown.op_deletes, 0);
        assert_eq!(adjusted.breakdown.op_inserts, 0);
    }

    #[test]
    fn mirrored_pairs_reverse_grow_and_shrink_labels() {
        let fwd = ops("a=1 b=2", "a=1 b=2 (c=3 OR d=4)");
        let rev = ops("a=1 b=2 (c=3 OR d=4)", "a=1 b=2");
        assert_eq!(fwd.count("branch+"), rev.count("branch-"));
        assert_eq!(fwd.count("and+"), rev.count("and-"));
        assert_eq!(fwd.count("move"), rev.count("move"));
    }

    #[test]
    fn cooccurrence_on_one_two_label_step() {
        let mut s = StructuralOpSet::default();
        s.bump("and+");
        s.bump("and-");
        let m = cooccurrence_matrix(&[s]);
        assert_eq!(m.multi_label_steps, 1);
        let r = STRUCTURAL_LABELS.iter().position(|&l| l == "and+").unwrap();
        let c = STRUCTURAL_LABELS.iter().position(|&l| l == "and-").unwrap();
        assert_eq!(m.p[r][c], 1.0);
        assert_eq!(m.p[r][r], 1.0, "diagonal is 1.0 where the row appears");
        assert_eq!(m.appearances[r], 1);
    }

    #[test]
    fn cooccurrence_skips_single_label_steps_and_handles_empty_input() {
        let mut single = StructuralOpSet::default();
        single.bump("or+");
        single.bump("val-update");
        let m = cooccurrence_matrix(&[single]);
        assert!(m.is_empty(), "val-update does not count toward multi-label");
        let empty = cooccurrence_matrix(&[]);
        assert!(empty.is_empty());
    }

    #[test]
    fn conditional_ratios_match_direct_counting() {
        let mk = |labels: &[&str]| {
            let mut s = StructuralOpSet::default();
            for l in labels {
                s.bump(l);
            }
            s
        };
        let steps = vec![
            mk(&["and+", "or-"]),
            mk(&["and+", "move"]),
            mk(&["and+", "or-", "move"]),
            mk(&["or-"]),
        ];
        let m = cooccurrence_matrix(&steps);
        assert_eq!(m.multi_label_steps, 3);
        let i = |l: &str| STRUCTURAL_LABELS.iter().position(|&x| x == l).unwrap();
        assert_eq!(m.appearances[i("and+")], 3);
        assert_eq!(m.appearances[i("or-")], 2);
        assert!((m.p[i("and+")][i("or-")] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.p[i("or-")][i("and+")], 1.0);
        assert_eq!(m.p[i("move")][i("move")], 1.0);
    }
}
