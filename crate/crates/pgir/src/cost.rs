//! Weighted predicate edit distance over an alignment.
//!
//! Every unmatched leaf is a deletion or insertion, every unmatched operator
//! a scope deletion or insertion, and every matched leaf pair that differs
//! contributes one update charging the changed components (field, operator,
//! value). A polarity difference charges the operator component. Relocations
//! of matched nodes cost nothing; they surface as `move` structural
//! operations instead.

use serde::{Deserialize, Serialize};

use crate::align::{PairAnalysis, Tree};
use crate::graph::Predicate;

/// Weights for the edit cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub pred_insert: f64,
    pub pred_delete: f64,
    pub field_update: f64,
    pub operator_update: f64,
    pub value_update: f64,
    pub bool_insert: f64,
    pub bool_delete: f64,
    pub bool_relabel: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            pred_insert: 1.0,
            pred_delete: 1.0,
            field_update: 0.2,
            operator_update: 0.5,
            value_update: 0.8,
            bool_insert: 3.0,
            bool_delete: 3.0,
            bool_relabel: 4.5,
        }
    }
}

impl CostWeights {
    /// An update never costs more than replacing the leaf outright.
    pub fn update_cap(&self) -> f64 {
        self.pred_delete + self.pred_insert
    }

    /// Returns a copy with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> CostWeights {
        CostWeights {
            pred_insert: self.pred_insert * factor,
            pred_delete: self.pred_delete * factor,
            field_update: self.field_update * factor,
            operator_update: self.operator_update * factor,
            value_update: self.value_update * factor,
            bool_insert: self.bool_insert * factor,
            bool_delete: self.bool_delete * factor,
            bool_relabel: self.bool_relabel * factor,
        }
    }

    /// Sets one weight by its serialized name; unknown names are rejected.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), String> {
        match name {
            "pred_insert" => self.pred_insert = value,
            "pred_delete" => self.pred_delete = value,
            "field_update" => self.field_update = value,
            "operator_update" => self.operator_update = value,
            "value_update" => self.value_update = value,
            "bool_insert" => self.bool_insert = value,
            "bool_delete" => self.bool_delete = value,
            "bool_relabel" => self.bool_relabel = value,
            other => return Err(format!("unknown cost weight {other:?}")),
        }
        Ok(())
    }
}

/// Components of a matched leaf pair that differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Changed {
    pub field: bool,
    pub operator: bool,
    pub value: bool,
}

impl Changed {
    pub fn any(&self) -> bool {
        self.field || self.operator || self.value
    }
}

/// Compares two matched leaves. A comparator or polarity difference sets the
/// operator component.
pub fn changed_components(a: &Predicate, b: &Predicate) -> Changed {
    Changed {
        field: a.field_lower() != b.field_lower(),
        operator: a.comparator != b.comparator || a.polarity != b.polarity,
        value: a.payload.display_inline() != b.payload.display_inline(),
    }
}

/// One edit in a script. Node indices refer to the preorder-flattened trees
/// of the pair the script was computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Edit {
    PredDelete { a: usize, cost: f64 },
    PredInsert { b: usize, cost: f64 },
    PredUpdate { a: usize, b: usize, changed: Changed, cost: f64 },
    OpDelete { a: usize, cost: f64 },
    OpInsert { b: usize, cost: f64 },
    /// Never produced by the aligner (operator matches keep their label);
    /// the flip detector rewrites a delete and insert of opposite-label
    /// scopes into one relabel for reporting.
    OpRelabel { a: usize, b: usize, cost: f64 },
}

impl Edit {
    pub fn cost(&self) -> f64 {
        match self {
            Edit::PredDelete { cost, .. }
            | Edit::PredInsert { cost, .. }
            | Edit::PredUpdate { cost, .. }
            | Edit::OpDelete { cost, .. }
            | Edit::OpInsert { cost, .. }
            | Edit::OpRelabel { cost, .. } => *cost,
        }
    }
}

/// Per-class edit counts and cost totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub pred_deletes: usize,
    pub pred_inserts: usize,
    pub pred_updates: usize,
    pub op_deletes: usize,
    pub op_inserts: usize,
    pub op_relabels: usize,
    pub pred_delete_cost: f64,
    pub pred_insert_cost: f64,
    pub pred_update_cost: f64,
    pub op_delete_cost: f64,
    pub op_insert_cost: f64,
    pub op_relabel_cost: f64,
}

/// A deterministic edit script with its total cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditScript {
    pub edits: Vec<Edit>,
    pub total: f64,
    pub breakdown: Breakdown,
}

/// Derives the edit script for an aligned pair: deletions in A preorder,
/// then updates in A preorder, then insertions in B preorder.
pub fn edit_script(pa: &PairAnalysis, weights: &CostWeights) -> EditScript {
    let mut edits = Vec::new();
    let mut breakdown = Breakdown::default();
    let al = &pa.alignment;

    for i in 0..pa.ta.len() {
        if al.a2b[i].is_some() {
            continue;
        }
        if pa.ta.is_leaf(i) {
            breakdown.pred_deletes += 1;
            breakdown.pred_delete_cost += weights.pred_delete;
            edits.push(Edit::PredDelete { a: i, cost: weights.pred_delete });
        } else {
            breakdown.op_deletes += 1;
            breakdown.op_delete_cost += weights.bool_delete;
            edits.push(Edit::OpDelete { a: i, cost: weights.bool_delete });
        }
    }

    for (i, j) in al.matched_pairs() {
        if !pa.ta.is_leaf(i) {
            continue;
        }
        let changed = changed_components(pa.ta.leaf(i), pa.tb.leaf(j));
        if !changed.any() {
            continue;
        }
        let raw = f64::from(u8::from(changed.field)) * weights.field_update
            + f64::from(u8::from(changed.operator)) * weights.operator_update
            + f64::from(u8::from(changed.value)) * weights.value_update;
        let cost = raw.min(weights.update_cap());
        breakdown.pred_updates += 1;
        breakdown.pred_update_cost += cost;
        edits.push(Edit::PredUpdate { a: i, b: j, changed, cost });
    }

    for j in 0..pa.tb.len() {
        if al.b2a[j].is_some() {
            continue;
        }
        if pa.tb.is_leaf(j) {
            breakdown.pred_inserts += 1;
            breakdown.pred_insert_cost += weights.pred_insert;
            edits.push(Edit::PredInsert { b: j, cost: weights.pred_insert });
        } else {
            breakdown.op_inserts += 1;
            breakdown.op_insert_cost += weights.bool_insert;
            edits.push(Edit::OpInsert { b: j, cost: weights.bool_insert });
        }
    }

    let total = edits.iter().map(Edit::cost).sum();
    EditScript { edits, total, breakdown }
}

/// Multiset inventory check used by tests: after applying the script's
/// intent (matched leaves take the B side's content, unmatched B nodes are
/// fresh), the node contents must reproduce the B tree exactly, and every
/// node of both trees is covered by exactly one disposition.
pub fn verify_script_coverage(pa: &PairAnalysis, script: &EditScript) -> Result<(), String> {
    let al = &pa.alignment;
    let updated: std::collections::BTreeSet<usize> = script
        .edits
        .iter()
        .filter_map(|e| match e {
            Edit::PredUpdate { a, .. } => Some(*a),
            _ => None,
        })
        .collect();
    let deleted_a: Vec<usize> = script
        .edits
        .iter()
        .filter_map(|e| match e {
            Edit::PredDelete { a, .. } | Edit::OpDelete { a, .. } => Some(*a),
            _ => None,
        })
        .collect();
    let inserted_b: Vec<usize> = script
        .edits
        .iter()
        .filter_map(|e| match e {
            Edit::PredInsert { b, .. } | Edit::OpInsert { b, .. } => Some(*b),
            _ => None,
        })
        .collect();

    for i in 0..pa.ta.len() {
        let is_deleted = deleted_a.contains(&i);
        let is_matched = al.a2b[i].is_some();
        if is_deleted == is_matched {
            return Err(format!("A node {i} must be exactly one of deleted or matched"));
        }
        if updated.contains(&i) && !is_matched {
            return Err(format!("A node {i} updated but unmatched"));
        }
    }
    for j in 0..pa.tb.len() {
        let is_inserted = inserted_b.contains(&j);
        let is_matched = al.b2a[j].is_some();
        if is_inserted == is_matched {
            return Err(format!("B node {j} must be exactly one of inserted or matched"));
        }
    }

    let mut produced: Vec<String> = Vec::new();
    for j in 0..pa.tb.len() {
        if pa.tb.is_leaf(j) {
            produced.push(pa.tb.leaf(j).exact_key());
        }
    }
    let mut expected: Vec<String> = Vec::new();
    for (i, j) in al.matched_pairs() {
        if pa.ta.is_leaf(i) {
            let a = pa.ta.leaf(i);
            let b = pa.tb.leaf(j);
            if updated.contains(&i) {
                expected.push(b.exact_key());
            } else {
                if a.exact_key() != b.exact_key() {
                    return Err(format!(
                        "matched pair ({i}, {j}) differs but has no update edit"
                    ));
                }
                expected.push(a.exact_key());
            }
        }
    }
    for &j in &inserted_b {
        if pa.tb.is_leaf(j) {
            expected.push(pa.tb.leaf(j).exact_key());
        }
    }
    produced.sort();
    expected.sort();
    if produced != expected {
        return Err("replayed leaf inventory does not reproduce the target tree".to_string());
    }
    Ok(())
}

/// Convenience wrapper: alignment plus edit script plus distance.
pub fn predicate_distance(pa: &PairAnalysis, weights: &CostWeights) -> (f64, EditScript) {
    let script = edit_script(pa, weights);
    (script.total, script)
}

/// True when the two trees serialize identically, the ground truth for zero
/// distance on move-free pairs.
pub fn trees_identical(ta: &Tree, tb: &Tree) -> bool {
    ta.len() == tb.len()
        && (0..ta.len()).all(|i| ta.nodes[i].serial == tb.nodes[i].serial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{analyze_pair, AlignParams};
    use crate::graph::{canonicalize, Metadata, PredicateGraph};
    use crate::spl::extract_detection;

    fn graph(text: &str) -> PredicateGraph {
        let expr = extract_detection(text).unwrap().unwrap();
        canonicalize(&expr, Metadata::default())
    }

    fn distance(a: &str, b: &str) -> f64 {
        let ga = graph(a);
        let gb = graph(b);
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        edit_script(&pa, &CostWeights::default()).total
    }

    #[test]
    fn identical_versions_cost_zero() {
        assert_eq!(distance("a=1 b=2 (c=3 OR d=4)", "a=1 b=2 (c=3 OR d=4)"), 0.0);
    }

    #[test]
    fn leaf_insert_and_delete_cost_one_each() {
        assert_eq!(distance("a=1 b=2", "a=1 b=2 c=3"), 1.0);
        assert_eq!(distance("a=1 b=2 c=3", "a=1 b=2"), 1.0);
    }

    #[test]
    fn value_retune_costs_the_value_weight() {
        let d = distance(
            "anchor=1 CommandLine=\"*powershell*\"",
            "anchor=1 CommandLine=\"*powershel?*\"",
        );
        assert!((d - 0.8).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn comparator_change_costs_the_operator_weight() {
        let d = distance("anchor=1 count>5", "anchor=1 count>=5");
        assert!((d - 0.5).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn polarity_flip_charges_the_operator_component() {
        let ga = graph("anchor=1 u=\"x\"");
        let gb = graph("anchor=1 NOT u=\"x\"");
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        let p = pa
            .ta
            .leaf_indices()
            .into_iter()
            .find(|&i| pa.ta.leaf(i).field == "u")
            .unwrap();
        assert_eq!(pa.alignment.a2b[p], None, "polarity gate blocks fuzzy matching");
        let script = edit_script(&pa, &CostWeights::default());
        assert_eq!(script.total, 2.0, "unmatched polarity flip is delete plus insert");

        let a = crate::graph::Predicate {
            field: "u".into(),
            comparator: crate::graph::Comparator::Eq,
            payload: crate::graph::Payload::Scalar(crate::graph::Scalar {
                kind: crate::graph::ScalarKind::String,
                text: "x".into(),
            }),
            polarity: crate::graph::Polarity::Positive,
        };
        let b = crate::graph::Predicate { polarity: crate::graph::Polarity::Negative, ..a.clone() };
        let changed = changed_components(&a, &b);
        assert!(changed.operator && !changed.field && !changed.value);
    }

    #[test]
    fn max_update_is_field_plus_operator_plus_value() {
        let a = crate::graph::Predicate {
            field: "f1".into(),
            comparator: crate::graph::Comparator::Eq,
            payload: crate::graph::Payload::Scalar(crate::graph::Scalar {
                kind: crate::graph::ScalarKind::String,
                text: "abcdefgh".into(),
            }),
            polarity: crate::graph::Polarity::Negative,
        };
        let b = crate::graph::Predicate {
            field: "f2".into(),
            comparator: crate::graph::Comparator::Neq,
            payload: crate::graph::Payload::Scalar(crate::graph::Scalar {
                kind: crate::graph::ScalarKind::String,
                text: "abcdefgX".into(),
            }),
            polarity: crate::graph::Polarity::Negative,
        };
        let changed = changed_components(&a, &b);
        assert!(changed.field && changed.operator && changed.value);
        let w = CostWeights::default();
        let raw = w.field_update + w.operator_update + w.value_update;
        assert!((raw - 1.5).abs() < 1e-12);
        assert!(raw < w.update_cap(), "the cap never binds at default weights");
    }

    #[test]
    fn scope_insertion_costs_three_plus_members() {
        let d = distance("a=1 b=2", "a=1 b=2 (new1=3 OR new2=4)");
        assert!((d - 5.0).abs() < 1e-12, "3.0 for the operator, 1.0 per new leaf; got {d}");
    }

    #[test]
    fn scope_deletion_is_symmetric() {
        let d = distance("a=1 b=2 (old1=3 OR old2=4)", "a=1 b=2");
        assert!((d - 5.0).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn weights_scale_distance_linearly() {
        let ga = graph("a=1 b=2 c=\"abcdefgh\"");
        let gb = graph("a=1 c=\"abcdefgX\" (d=4 OR e=5)");
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        let base = edit_script(&pa, &CostWeights::default()).total;
        let scaled = edit_script(&pa, &CostWeights::default().scaled(2.5)).total;
        assert!((scaled - 2.5 * base).abs() < 1e-9);
    }

    #[test]
    fn script_coverage_holds_on_a_mixed_pair() {
        let ga = graph("a=1 b=2 c=\"abcdefgh\" (x=1 OR y=2)");
        let gb = graph("a=1 c=\"abcdefgX\" (x=1 OR z=3) extra=9");
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        let script = edit_script(&pa, &CostWeights::default());
        verify_script_coverage(&pa, &script).unwrap();
    }

    #[test]
    fn moves_cost_nothing() {
        let ga = graph("a=1 (b=2 OR c=3) d=4");
        let gb = graph("a=1 (b=2 OR c=3 OR d=4)");
        let pa = analyze_pair(&ga, &gb, &AlignParams::default());
        let d_moved: Vec<usize> = pa
            .ta
            .leaf_indices()
            .into_iter()
            .filter(|&i| pa.ta.leaf(i).field == "d")
            .collect();
        assert_eq!(pa.alignment.a2b[d_moved[0]].is_some(), true, "d must stay matched");
        let script = edit_script(&pa, &CostWeights::default());
        assert_eq!(script.total, 0.0, "pure relocation is free");
    }
}
