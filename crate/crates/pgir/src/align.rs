//! Four-phase greedy alignment between two canonical predicate graphs.
//!
//! Phase 1 anchors leaves whose exact identity key appears exactly once in
//! both trees. Phase 2 matches same-label operators using anchored evidence.
//! Phase 3 completes duplicate-key leaves scope-locally under already matched
//! operator pairs. Phase 4 matches the remaining leaves fuzzily under hard
//! polarity/type/comparator-class gates, after which Phase 2 reruns with all
//! matched leaves as evidence.
//!
//! Every insertion preserves whole-mapping ancestry consistency: for any two
//! matched pairs, an ancestor relation on the A side implies the same
//! relation on the B side. The mapping is injective by construction.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::{Node, OpLabel, Payload, Predicate, PredicateGraph};
use crate::util::levenshtein;

/// Thresholds and caps for the alignment phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    /// Minimum anchored-evidence support for an operator match.
    pub theta_sup: f64,
    /// Minimum evidence coverage on each side for an operator match.
    pub theta_cov: f64,
    /// Minimum evidence set size on each side.
    pub min_anchors: usize,
    /// Minimum value similarity for a fuzzy leaf match.
    pub fuzzy_floor: f64,
    /// Maximum fuzzy candidates scored per leaf.
    pub cap: usize,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams { theta_sup: 0.5, theta_cov: 0.5, min_anchors: 1, fuzzy_floor: 0.7, cap: 8 }
    }
}

/// Phase that produced a matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Unique exact-key leaf anchor.
    P1,
    /// Operator match on anchored evidence.
    P2,
    /// Scope-local duplicate completion.
    P3,
    /// Fuzzy leaf match.
    P4,
    /// Operator match rerun with all matched leaves as evidence.
    P2b,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::P1 => "P1",
            Phase::P2 => "P2",
            Phase::P3 => "P3",
            Phase::P4 => "P4",
            Phase::P2b => "P2b",
        }
    }
}

/// Node payload in a flattened tree.
#[derive(Debug)]
pub enum TreeKind<'g> {
    Leaf(&'g Predicate),
    Op(OpLabel),
}

/// One node of a flattened canonical tree.
#[derive(Debug)]
pub struct TreeNode<'g> {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Leaf height is 0; an operator is one above its tallest child.
    pub height: u32,
    /// Number of nodes in this subtree, itself included.
    pub size: usize,
    pub kind: TreeKind<'g>,
    /// Exact identity key (leaves only).
    pub exact_key: Option<String>,
    /// Single-line canonical rendering of the subtree, used for tiebreaks.
    pub serial: String,
}

/// A canonical graph flattened to preorder with cached structure data.
#[derive(Debug)]
pub struct Tree<'g> {
    pub nodes: Vec<TreeNode<'g>>,
}

impl<'g> Tree<'g> {
    pub fn build(g: &'g PredicateGraph) -> Tree<'g> {
        let mut tree = Tree { nodes: Vec::with_capacity(g.root.node_count()) };
        build_node(&g.root, None, &mut tree.nodes);
        tree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        matches!(self.nodes[i].kind, TreeKind::Leaf(_))
    }

    pub fn leaf(&self, i: usize) -> &'g Predicate {
        match self.nodes[i].kind {
            TreeKind::Leaf(p) => p,
            TreeKind::Op(_) => panic!("node {i} is an operator"),
        }
    }

    pub fn op_label(&self, i: usize) -> Option<OpLabel> {
        match self.nodes[i].kind {
            TreeKind::Op(l) => Some(l),
            TreeKind::Leaf(_) => None,
        }
    }

    /// True when `desc` lies strictly inside the subtree rooted at `anc`.
    pub fn is_strict_descendant(&self, desc: usize, anc: usize) -> bool {
        desc > anc && desc < anc + self.nodes[anc].size
    }

    /// Preorder leaf indices inside the subtree rooted at `i`.
    pub fn leaves_under(&self, i: usize) -> Vec<usize> {
        (i..i + self.nodes[i].size).filter(|&n| self.is_leaf(n)).collect()
    }

    pub fn leaf_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&n| self.is_leaf(n)).collect()
    }

    pub fn op_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&n| !self.is_leaf(n)).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, TreeKind::Leaf(_))).count()
    }
}

fn build_node<'g>(n: &'g Node, parent: Option<usize>, nodes: &mut Vec<TreeNode<'g>>) -> usize {
    let idx = nodes.len();
    let serial = crate::graph::serialize_node_inline(n);
    match n {
        Node::Leaf(p) => {
            nodes.push(TreeNode {
                parent,
                children: Vec::new(),
                height: 0,
                size: 1,
                kind: TreeKind::Leaf(p),
                exact_key: Some(p.exact_key()),
                serial,
            });
        }
        Node::Op { label, children } => {
            nodes.push(TreeNode {
                parent,
                children: Vec::new(),
                height: 0,
                size: 1,
                kind: TreeKind::Op(*label),
                exact_key: None,
                serial,
            });
            let mut height = 0;
            let mut size = 1;
            let mut child_ids = Vec::with_capacity(children.len());
            for child in children {
                let c = build_node(child, Some(idx), nodes);
                child_ids.push(c);
                height = height.max(nodes[c].height + 1);
                size += nodes[c].size;
            }
            nodes[idx].children = child_ids;
            nodes[idx].height = height;
            nodes[idx].size = size;
        }
    }
    idx
}

/// An injective, ancestry-consistent node mapping between two trees.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub a2b: Vec<Option<usize>>,
    pub b2a: Vec<Option<usize>>,
    /// Phase that matched each A-side node.
    pub phase_a: Vec<Option<Phase>>,
}

impl Alignment {
    fn new(na: usize, nb: usize) -> Alignment {
        Alignment { a2b: vec![None; na], b2a: vec![None; nb], phase_a: vec![None; na] }
    }

    pub fn matched_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.a2b.iter().enumerate().filter_map(|(i, m)| m.map(|j| (i, j)))
    }

    pub fn matched_count(&self) -> usize {
        self.a2b.iter().filter(|m| m.is_some()).count()
    }

    /// Whether matching `i` to `j` keeps the whole mapping ancestry
    /// consistent: whenever one matched node sits strictly inside another on
    /// the A side, its partner must sit strictly inside the other's partner
    /// on the B side. The converse is not required, so a node may map into a
    /// scope its counterpart stood outside of; such relocations surface
    /// later as `move` operations.
    pub fn can_insert(&self, ta: &Tree, tb: &Tree, i: usize, j: usize) -> bool {
        if self.a2b[i].is_some() || self.b2a[j].is_some() {
            return false;
        }
        for (x, y) in self.matched_pairs() {
            if ta.is_strict_descendant(x, i) && !tb.is_strict_descendant(y, j) {
                return false;
            }
            if ta.is_strict_descendant(i, x) && !tb.is_strict_descendant(j, y) {
                return false;
            }
        }
        true
    }

    fn insert(&mut self, i: usize, j: usize, phase: Phase) {
        debug_assert!(self.a2b[i].is_none() && self.b2a[j].is_none());
        self.a2b[i] = Some(j);
        self.b2a[j] = Some(i);
        self.phase_a[i] = Some(phase);
    }

    /// Nearest matched proper ancestor of an A-side node.
    pub fn nearest_matched_ancestor_a(&self, ta: &Tree, i: usize) -> Option<usize> {
        let mut cur = ta.nodes[i].parent;
        while let Some(p) = cur {
            if self.a2b[p].is_some() {
                return Some(p);
            }
            cur = ta.nodes[p].parent;
        }
        None
    }

    /// Nearest matched proper ancestor of a B-side node.
    pub fn nearest_matched_ancestor_b(&self, tb: &Tree, j: usize) -> Option<usize> {
        let mut cur = tb.nodes[j].parent;
        while let Some(p) = cur {
            if self.b2a[p].is_some() {
                return Some(p);
            }
            cur = tb.nodes[p].parent;
        }
        None
    }

    /// Panics if the mapping violates injectivity, label compatibility, or
    /// whole-mapping ancestry consistency.
    pub fn assert_consistent(&self, ta: &Tree, tb: &Tree) {
        let mut seen_b = BTreeSet::new();
        for (i, j) in self.matched_pairs() {
            assert!(seen_b.insert(j), "B node {j} matched twice");
            assert_eq!(self.b2a[j], Some(i), "reverse map out of sync at ({i}, {j})");
            match (&ta.nodes[i].kind, &tb.nodes[j].kind) {
                (TreeKind::Leaf(_), TreeKind::Leaf(_)) => {}
                (TreeKind::Op(la), TreeKind::Op(lb)) => {
                    assert_eq!(la, lb, "operator pair ({i}, {j}) changes label");
                }
                _ => panic!("pair ({i}, {j}) mixes a leaf with an operator"),
            }
            for (x, y) in self.matched_pairs() {
                assert!(
                    !ta.is_strict_descendant(x, i) || tb.is_strict_descendant(y, j),
                    "ancestry inconsistency between pairs ({i}, {j}) and ({x}, {y})"
                );
            }
        }
    }
}

/// Evidence mode for operator matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Evidence {
    /// Phase 1 anchors only.
    Anchors,
    /// Any matched leaf.
    AllMatched,
}

/// The result of aligning two graphs, bundling the flattened trees with the
/// node mapping.
#[derive(Debug)]
pub struct PairAnalysis<'a, 'b> {
    pub ta: Tree<'a>,
    pub tb: Tree<'b>,
    pub alignment: Alignment,
}

/// Aligns two canonical graphs.
pub fn analyze_pair<'a, 'b>(
    ga: &'a PredicateGraph,
    gb: &'b PredicateGraph,
    params: &AlignParams,
) -> PairAnalysis<'a, 'b> {
    let ta = Tree::build(ga);
    let tb = Tree::build(gb);
    let alignment = align_trees(&ta, &tb, params);
    PairAnalysis { ta, tb, alignment }
}

/// Runs the four alignment phases and the final operator rerun.
pub fn align_trees(ta: &Tree, tb: &Tree, params: &AlignParams) -> Alignment {
    let mut al = Alignment::new(ta.len(), tb.len());
    phase1_anchors(ta, tb, &mut al);
    match_operators(ta, tb, &mut al, params, Evidence::Anchors, Phase::P2);
    phase3_duplicates(ta, tb, &mut al);
    phase4_fuzzy(ta, tb, &mut al, params);
    match_operators(ta, tb, &mut al, params, Evidence::AllMatched, Phase::P2b);
    if cfg!(debug_assertions) {
        al.assert_consistent(ta, tb);
    }
    al
}

fn phase1_anchors(ta: &Tree, tb: &Tree, al: &mut Alignment) {
    let keys_a = leaf_key_map(ta);
    let keys_b = leaf_key_map(tb);
    for (key, ids_a) in &keys_a {
        if ids_a.len() != 1 {
            continue;
        }
        if let Some(ids_b) = keys_b.get(key) {
            if ids_b.len() == 1 {
                debug_assert!(al.can_insert(ta, tb, ids_a[0], ids_b[0]));
                al.insert(ids_a[0], ids_b[0], Phase::P1);
            }
        }
    }
}

fn leaf_key_map<'t>(t: &'t Tree) -> BTreeMap<&'t str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for i in t.leaf_indices() {
        map.entry(t.nodes[i].exact_key.as_deref().unwrap()).or_default().push(i);
    }
    map
}

fn match_operators(
    ta: &Tree,
    tb: &Tree,
    al: &mut Alignment,
    params: &AlignParams,
    evidence: Evidence,
    phase: Phase,
) {
    let mut ops_a = ta.op_indices();
    ops_a.sort_by_key(|&i| (ta.nodes[i].height, i));
    let ops_b = tb.op_indices();

    for &oa in &ops_a {
        if al.a2b[oa].is_some() {
            continue;
        }
        let e_a = evidence_leaves_a(ta, al, oa, evidence);
        if e_a.len() < params.min_anchors {
            continue;
        }
        let label = ta.op_label(oa).unwrap();
        let mut best: Option<(f64, u32, usize)> = None;
        for &ob in &ops_b {
            if al.b2a[ob].is_some() || tb.op_label(ob) != Some(label) {
                continue;
            }
            let e_b = evidence_leaves_b(tb, al, ob, evidence);
            if e_b.len() < params.min_anchors {
                continue;
            }
            let overlap = e_a
                .iter()
                .filter(|&&p| tb.is_strict_descendant(al.a2b[p].unwrap(), ob))
                .count();
            let support = overlap as f64 / e_a.len().min(e_b.len()) as f64;
            let cov_a = overlap as f64 / e_a.len() as f64;
            let cov_b = overlap as f64 / e_b.len() as f64;
            if support < params.theta_sup || cov_a < params.theta_cov || cov_b < params.theta_cov {
                continue;
            }
            if !al.can_insert(ta, tb, oa, ob) {
                continue;
            }
            let dh = ta.nodes[oa].height.abs_diff(tb.nodes[ob].height);
            let better = match &best {
                None => true,
                Some((bs, bdh, bj)) => {
                    support > *bs
                        || (support == *bs && dh < *bdh)
                        || (support == *bs && dh == *bdh && tb.nodes[ob].serial < tb.nodes[*bj].serial)
                }
            };
            if better {
                best = Some((support, dh, ob));
            }
        }
        if let Some((_, _, ob)) = best {
            al.insert(oa, ob, phase);
        }
    }
}

fn evidence_leaves_a(ta: &Tree, al: &Alignment, oa: usize, evidence: Evidence) -> Vec<usize> {
    ta.leaves_under(oa)
        .into_iter()
        .filter(|&p| match evidence {
            Evidence::Anchors => al.phase_a[p] == Some(Phase::P1),
            Evidence::AllMatched => al.a2b[p].is_some(),
        })
        .collect()
}

fn evidence_leaves_b(tb: &Tree, al: &Alignment, ob: usize, evidence: Evidence) -> Vec<usize> {
    tb.leaves_under(ob)
        .into_iter()
        .filter(|&q| match evidence {
            Evidence::Anchors => {
                al.b2a[q].map(|p| al.phase_a[p] == Some(Phase::P1)).unwrap_or(false)
            }
            Evidence::AllMatched => al.b2a[q].is_some(),
        })
        .collect()
}

fn phase3_duplicates(ta: &Tree, tb: &Tree, al: &mut Alignment) {
    let mut op_pairs: Vec<(usize, usize)> = al
        .matched_pairs()
        .filter(|&(i, _)| !ta.is_leaf(i))
        .collect();
    op_pairs.sort_by_key(|&(i, _)| (ta.nodes[i].height, i));

    for (oa, ob) in op_pairs {
        let groups_a = unmatched_leaf_groups(ta, &al.a2b, oa);
        let groups_b = unmatched_leaf_groups(tb, &al.b2a, ob);
        for (key, list_a) in &groups_a {
            let Some(list_b) = groups_b.get(key) else { continue };
            if list_a.len() != list_b.len() {
                continue;
            }
            for (&p, &q) in list_a.iter().zip(list_b.iter()) {
                if al.a2b[p].is_none() && al.b2a[q].is_none() && al.can_insert(ta, tb, p, q) {
                    al.insert(p, q, Phase::P3);
                }
            }
        }
    }
}

fn unmatched_leaf_groups(
    t: &Tree,
    mapped: &[Option<usize>],
    op: usize,
) -> BTreeMap<String, Vec<usize>> {
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for leaf in t.leaves_under(op) {
        if mapped[leaf].is_none() {
            map.entry(t.nodes[leaf].exact_key.clone().unwrap()).or_default().push(leaf);
        }
    }
    map
}

fn phase4_fuzzy(ta: &Tree, tb: &Tree, al: &mut Alignment, params: &AlignParams) {
    let leaves_b = tb.leaf_indices();
    for p in ta.leaf_indices() {
        if al.a2b[p].is_some() {
            continue;
        }
        let pa = ta.leaf(p);
        let mut same_field = Vec::new();
        let mut cross_field = Vec::new();
        for &q in &leaves_b {
            if al.b2a[q].is_some() {
                continue;
            }
            let pb = tb.leaf(q);
            if pb.polarity != pa.polarity
                || pb.payload.type_tag() != pa.payload.type_tag()
                || pb.comparator.class() != pa.comparator.class()
            {
                continue;
            }
            if !al.can_insert(ta, tb, p, q) {
                continue;
            }
            if pb.field_lower() == pa.field_lower() {
                same_field.push(q);
            } else {
                cross_field.push(q);
            }
        }
        let chosen = pick_fuzzy(ta, tb, al, p, same_field, params)
            .or_else(|| pick_fuzzy(ta, tb, al, p, cross_field, params));
        if let Some(q) = chosen {
            al.insert(p, q, Phase::P4);
        }
    }
}

/// Scores a candidate pool and returns the accepted candidate, if any.
fn pick_fuzzy(
    ta: &Tree,
    tb: &Tree,
    al: &Alignment,
    p: usize,
    pool: Vec<usize>,
    params: &AlignParams,
) -> Option<usize> {
    if pool.is_empty() {
        return None;
    }
    let pa = ta.leaf(p);
    let mut sims: Vec<(f64, usize)> =
        pool.into_iter().map(|q| (value_similarity(pa, tb.leaf(q)), q)).collect();
    sims.sort_by(|(sa, qa), (sb, qb)| {
        sb.partial_cmp(sa)
            .unwrap()
            .then_with(|| tb.nodes[*qa].serial.cmp(&tb.nodes[*qb].serial))
            .then_with(|| qa.cmp(qb))
    });
    sims.truncate(params.cap);

    let mut best: Option<(f64, f64, usize)> = None;
    for (sim, q) in sims {
        let scope = scope_compatibility(ta, tb, al, p, q);
        let cmp_eq = if ta.leaf(p).comparator == tb.leaf(q).comparator { 1.0 } else { 0.0 };
        let score = 0.6 * sim + 0.3 * scope + 0.1 * cmp_eq;
        let better = match &best {
            None => true,
            Some((bscore, _, bq)) => {
                score > *bscore
                    || (score == *bscore && tb.nodes[q].serial < tb.nodes[*bq].serial)
            }
        };
        if better {
            best = Some((score, sim, q));
        }
    }
    match best {
        Some((_, sim, q)) if sim >= params.fuzzy_floor => Some(q),
        _ => None,
    }
}

/// 1.0 when the A leaf's nearest matched ancestor maps to an ancestor of the
/// candidate (or it has none), else 0.0.
fn scope_compatibility(ta: &Tree, tb: &Tree, al: &Alignment, p: usize, q: usize) -> f64 {
    match al.nearest_matched_ancestor_a(ta, p) {
        None => 1.0,
        Some(anc) => {
            let img = al.a2b[anc].unwrap();
            if tb.is_strict_descendant(q, img) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Value similarity between two leaves: normalized character edit similarity
/// for scalars, Jaccard similarity of member sets for lists, 0 across kinds.
pub fn value_similarity(a: &Predicate, b: &Predicate) -> f64 {
    match (&a.payload, &b.payload) {
        (Payload::Scalar(x), Payload::Scalar(y)) => {
            let xs: Vec<char> = x.text.chars().collect();
            let ys: Vec<char> = y.text.chars().collect();
            let max_len = xs.len().max(ys.len());
            if max_len == 0 {
                return 1.0;
            }
            1.0 - levenshtein(&xs, &ys) as f64 / max_len as f64
        }
        (Payload::List(xs), Payload::List(ys)) => {
            let sa: BTreeSet<String> = xs.iter().map(|m| m.display()).collect();
            let sb: BTreeSet<String> = ys.iter().map(|m| m.display()).collect();
            let inter = sa.intersection(&sb).count();
            let union = sa.union(&sb).count();
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        }
        _ => 0.0,
    }
}

/// Fraction of leaves matched across the pair, over the larger leaf count.
/// Used as the rename-detection similarity.
pub fn matched_leaf_fraction(pa: &PairAnalysis) -> f64 {
    let matched = pa
        .alignment
        .matched_pairs()
        .filter(|&(i, _)| pa.ta.is_leaf(i))
        .count();
    let denom = pa.ta.leaf_count().max(pa.tb.leaf_count());
    if denom == 0 {
        return 0.0;
    }
    matched as f64 / denom as f64
}
