//! Helpers shared by the integration suites.

#![allow(dead_code)]

pub mod fixtures;
pub mod gen;
pub mod oracle;
pub mod repo;

use pgir::graph::{Node, PredicateGraph, RawExpr};

/// Parses rule text into its canonical predicate graph, panicking on
/// fixtures that fail to parse.
pub fn graph(text: &str) -> PredicateGraph {
    pgir::ingest::rule_graph(text).unwrap_or_else(|| panic!("fixture does not parse: {text}"))
}

/// Rebuilds a raw expression from a canonical node, so a canonical graph can
/// be fed through canonicalization again.
pub fn node_to_raw(node: &Node) -> RawExpr {
    match node {
        Node::Leaf(p) => RawExpr::Leaf(p.clone()),
        Node::Op { label, children } => {
            let children = children.iter().map(node_to_raw).collect();
            match label {
                pgir::graph::OpLabel::And => RawExpr::and(children),
                pgir::graph::OpLabel::Or => RawExpr::or(children),
            }
        }
    }
}

/// Character-level Levenshtein distance, kept separate from the library's
/// implementation so similarity arithmetic is checked independently.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let xs: Vec<char> = a.chars().collect();
    let ys: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=ys.len()).collect();
    let mut cur = vec![0usize; ys.len() + 1];
    for (i, x) in xs.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in ys.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[ys.len()]
}

/// Normalized edit similarity between two strings: 1 minus the edit distance
/// over the longer length.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max_len as f64
}
