//! Canonical predicate graph model.
//!
//! A rule version is represented as a tree of `AND`/`OR` operator nodes over
//! atomic predicates. Negation lives on the leaves as a polarity bit; `NOT`
//! nodes from the raw parse are pushed down with De Morgan's laws during
//! canonicalization. Canonical trees are flattened (no operator has a child
//! with the same label), deduplicated, collapsed (every operator keeps at
//! least two children), and deterministically ordered, so two equivalent
//! versions serialize to byte-identical text.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Version tag of the canonical text format; golden-file tested, bumped on
/// any change to the serialized form.
pub const CANONICAL_FORMAT_VERSION: &str = "pgir-canonical-v1";

/// Comparison operator carried by an atomic predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Comparator {
    Eq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    NotIn,
    Contains,
    Regex,
}

impl Comparator {
    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Eq => "EQ",
            Comparator::Neq => "NEQ",
            Comparator::Lt => "LT",
            Comparator::Le => "LE",
            Comparator::Gt => "GT",
            Comparator::Ge => "GE",
            Comparator::In => "IN",
            Comparator::NotIn => "NOT_IN",
            Comparator::Contains => "CONTAINS",
            Comparator::Regex => "REGEX",
        }
    }

    pub fn parse(s: &str) -> Option<Comparator> {
        Some(match s {
            "EQ" => Comparator::Eq,
            "NEQ" => Comparator::Neq,
            "LT" => Comparator::Lt,
            "LE" => Comparator::Le,
            "GT" => Comparator::Gt,
            "GE" => Comparator::Ge,
            "IN" => Comparator::In,
            "NOT_IN" => Comparator::NotIn,
            "CONTAINS" => Comparator::Contains,
            "REGEX" => Comparator::Regex,
            _ => return None,
        })
    }

    /// Coarse comparator family used to gate fuzzy leaf matching.
    pub fn class(self) -> CmpClass {
        match self {
            Comparator::Eq | Comparator::Neq => CmpClass::Equality,
            Comparator::Lt | Comparator::Le | Comparator::Gt | Comparator::Ge => {
                CmpClass::Ordering
            }
            Comparator::In | Comparator::NotIn => CmpClass::Membership,
            Comparator::Contains => CmpClass::Containment,
            Comparator::Regex => CmpClass::Regex,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Comparator family: fuzzy matching never pairs leaves across families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpClass {
    Equality,
    Ordering,
    Membership,
    Containment,
    Regex,
}

/// Kind tag attached to a normalized scalar value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScalarKind {
    String,
    Number,
    Wildcard,
    Regex,
}

impl ScalarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarKind::String => "STRING",
            ScalarKind::Number => "NUMBER",
            ScalarKind::Wildcard => "WILDCARD",
            ScalarKind::Regex => "REGEX",
        }
    }

    pub fn parse(s: &str) -> Option<ScalarKind> {
        Some(match s {
            "STRING" => ScalarKind::String,
            "NUMBER" => ScalarKind::Number,
            "WILDCARD" => ScalarKind::Wildcard,
            "REGEX" => ScalarKind::Regex,
            _ => return None,
        })
    }
}

/// A normalized scalar value: kind tag plus normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scalar {
    pub kind: ScalarKind,
    pub text: String,
}

impl Scalar {
    /// Single-line display form, e.g. `WILDCARD("*sudo *")`.
    pub fn display(&self) -> String {
        format!("{}(\"{}\")", self.kind.as_str(), escape_display(&self.text))
    }
}

/// Predicate value: a single scalar or a membership list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Scalar(Scalar),
    List(Vec<Scalar>),
}

impl Payload {
    /// Single-line display form; lists render as `[m1,m2,...]` in canonical
    /// member order.
    pub fn display_inline(&self) -> String {
        match self {
            Payload::Scalar(s) => s.display(),
            Payload::List(ms) => {
                let parts: Vec<String> = ms.iter().map(Scalar::display).collect();
                format!("[{}]", parts.join(","))
            }
        }
    }

    /// Value-type tag used to gate fuzzy matching; a list is its own type.
    pub fn type_tag(&self) -> &'static str {
        match self {
            Payload::Scalar(s) => s.kind.as_str(),
            Payload::List(_) => "LIST",
        }
    }
}

/// Leaf polarity: `Negative` marks a negated predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// Atomic predicate: field, comparator, normalized value, polarity.
///
/// Field names keep their original spelling for display but compare
/// case-insensitively everywhere (keys, signatures, sorting).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub field: String,
    pub comparator: Comparator,
    pub payload: Payload,
    pub polarity: Polarity,
}

impl Predicate {
    pub fn field_lower(&self) -> String {
        self.field.to_lowercase()
    }

    /// Exact identity key: lowercased field, comparator, serialized value,
    /// polarity. Two leaves with equal keys are interchangeable.
    pub fn exact_key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            escape_sig(&self.field_lower()),
            self.comparator.as_str(),
            escape_sig(&self.payload.display_inline()),
            polarity_tag(self.polarity)
        )
    }

    pub fn negated(&self) -> Predicate {
        Predicate {
            polarity: self.polarity.flipped(),
            ..self.clone()
        }
    }
}

/// Boolean operator label on internal nodes of a canonical graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpLabel {
    And,
    Or,
}

impl OpLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            OpLabel::And => "AND",
            OpLabel::Or => "OR",
        }
    }

    pub fn flipped(self) -> OpLabel {
        match self {
            OpLabel::And => OpLabel::Or,
            OpLabel::Or => OpLabel::And,
        }
    }
}

impl fmt::Display for OpLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operator label in a raw (pre-canonical) expression; `Not` is only legal
/// here and is eliminated during canonicalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RawOp {
    And,
    Or,
    Not,
}

impl RawOp {
    pub fn as_str(self) -> &'static str {
        match self {
            RawOp::And => "AND",
            RawOp::Or => "OR",
            RawOp::Not => "NOT",
        }
    }
}

/// Expression tree as produced by a frontend parser, before canonicalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawExpr {
    Leaf(Predicate),
    Op { op: RawOp, children: Vec<RawExpr> },
}

impl RawExpr {
    pub fn and(children: Vec<RawExpr>) -> RawExpr {
        RawExpr::Op { op: RawOp::And, children }
    }

    pub fn or(children: Vec<RawExpr>) -> RawExpr {
        RawExpr::Op { op: RawOp::Or, children }
    }

    pub fn not(child: RawExpr) -> RawExpr {
        RawExpr::Op { op: RawOp::Not, children: vec![child] }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            RawExpr::Leaf(_) => 1,
            RawExpr::Op { children, .. } => children.iter().map(RawExpr::leaf_count).sum(),
        }
    }
}

/// Node of a canonical predicate graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Leaf(Predicate),
    Op { label: OpLabel, children: Vec<Node> },
}

impl Node {
    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Op { children, .. } => children.iter().map(Node::leaf_count).sum(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Op { children, .. } => {
                1 + children.iter().map(Node::node_count).sum::<usize>()
            }
        }
    }

    /// Structural signature: identical subtrees (modulo field case and child
    /// order, which canonicalization already fixes) share a signature.
    pub fn signature(&self) -> String {
        match self {
            Node::Leaf(p) => format!("P({})", p.exact_key()),
            Node::Op { label, children } => {
                let parts: Vec<String> = children.iter().map(Node::signature).collect();
                format!("E({}|{})", label.as_str(), parts.join("|"))
            }
        }
    }
}

/// Provenance header attached to a serialized graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub rule: String,
    pub repo: String,
    pub version: u64,
    pub commit: String,
}

impl Default for Metadata {
    fn default() -> Self {
        Metadata {
            rule: "-".to_string(),
            repo: "-".to_string(),
            version: 0,
            commit: "-".to_string(),
        }
    }
}

/// A canonical predicate graph with provenance metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateGraph {
    pub meta: Metadata,
    pub root: Node,
}

impl PredicateGraph {
    pub fn predicate_count(&self) -> usize {
        self.root.leaf_count()
    }
}

fn polarity_tag(p: Polarity) -> &'static str {
    match p {
        Polarity::Positive => "pos",
        Polarity::Negative => "neg",
    }
}

/// Escapes signature separator characters so embedded text cannot collide
/// with structure.
fn escape_sig(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' | '|' | '(' | ')' | ',' => {
                out.push('\\');
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

/// Escapes a scalar's text for the quoted display form.
fn escape_display(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape_display(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next()? {
                '\\' => out.push('\\'),
                '"' => out.push('"'),
                'n' => out.push('\n'),
                other => {
                    out.push('\\');
                    out.push(other);
                }
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// Normalizes raw value text into a typed scalar.
///
/// Surrounding double quotes are stripped; `\\` and `\"` are unescaped while
/// any other backslash escape keeps both characters; runs of whitespace
/// collapse to a single space and the ends are trimmed. Text that reads as a
/// decimal or scientific number becomes a `NUMBER` rendered in Rust's
/// shortest round-trip form; otherwise the value is a `WILDCARD` when an
/// unescaped `*` or `?` survived, else a `STRING`.
pub fn normalize_scalar(raw: &str) -> Scalar {
    let (unescaped, saw_wildcard) = unquote_unescape(raw);
    let collapsed = collapse_whitespace(&unescaped);
    if let Some(num) = normalize_number(&collapsed) {
        return Scalar { kind: ScalarKind::Number, text: num };
    }
    let kind = if saw_wildcard { ScalarKind::Wildcard } else { ScalarKind::String };
    Scalar { kind, text: collapsed }
}

/// Normalizes a regex pattern: quotes are stripped and `\\`/`\"` unescaped,
/// but whitespace and numeric shape are preserved because they are
/// significant inside a pattern.
pub fn normalize_regex(raw: &str) -> Scalar {
    let (unescaped, _) = unquote_unescape(raw);
    Scalar { kind: ScalarKind::Regex, text: unescaped }
}

fn unquote_unescape(raw: &str) -> (String, bool) {
    let inner = if raw.len() >= 2 && raw.starts_with('"') && raw.ends_with('"') {
        &raw[1..raw.len() - 1]
    } else {
        raw
    };
    let mut out = String::with_capacity(inner.len());
    let mut saw_wildcard = false;
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('\\') => out.push('\\'),
                Some('"') => out.push('"'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            },
            '*' | '?' => {
                saw_wildcard = true;
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    (out, saw_wildcard)
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Returns the shortest round-trip rendering when `s` is a decimal or
/// scientific numeric literal, `None` otherwise.
fn normalize_number(s: &str) -> Option<String> {
    if !is_numeric_literal(s) {
        return None;
    }
    s.parse::<f64>().ok().map(|v| format!("{v}"))
}

fn is_numeric_literal(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_digits = count_digits(b, &mut i);
    let mut frac_digits = 0;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        frac_digits = count_digits(b, &mut i);
    }
    if int_digits == 0 && frac_digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        if count_digits(b, &mut i) == 0 {
            return false;
        }
    }
    i == b.len()
}

fn count_digits(b: &[u8], i: &mut usize) -> usize {
    let start = *i;
    while *i < b.len() && b[*i].is_ascii_digit() {
        *i += 1;
    }
    *i - start
}

/// Builds a normalized membership list: members are individually normalized
/// and put into canonical order.
pub fn normalize_list(raw_members: Vec<Scalar>) -> Vec<Scalar> {
    let mut members = raw_members;
    sort_list_members(&mut members);
    members
}

fn sort_list_members(members: &mut [Scalar]) {
    members.sort_by(|a, b| b.display().cmp(&a.display()));
}

/// Canonicalizes a raw expression: negation is pushed to the leaves, nested
/// same-label operators are flattened, duplicate children are dropped,
/// single-child operators collapse, and children are put into canonical
/// order.
pub fn canonicalize(expr: &RawExpr, meta: Metadata) -> PredicateGraph {
    let pushed = push_negation(expr, false);
    let root = canon_node(pushed);
    PredicateGraph { meta, root }
}

fn push_negation(e: &RawExpr, neg: bool) -> Node {
    match e {
        RawExpr::Leaf(p) => Node::Leaf(if neg { p.negated() } else { p.clone() }),
        RawExpr::Op { op: RawOp::Not, children } => {
            if children.len() == 1 {
                push_negation(&children[0], !neg)
            } else {
                let inner = RawExpr::and(children.clone());
                push_negation(&inner, !neg)
            }
        }
        RawExpr::Op { op, children } => {
            let base = match op {
                RawOp::And => OpLabel::And,
                RawOp::Or => OpLabel::Or,
                RawOp::Not => unreachable!(),
            };
            let label = if neg { base.flipped() } else { base };
            let kids = children.iter().map(|c| push_negation(c, neg)).collect();
            Node::Op { label, children: kids }
        }
    }
}

fn canon_node(n: Node) -> Node {
    match n {
        Node::Leaf(mut p) => {
            if let Payload::List(members) = &mut p.payload {
                sort_list_members(members);
            }
            Node::Leaf(p)
        }
        Node::Op { label, children } => {
            let mut flat: Vec<Node> = Vec::with_capacity(children.len());
            for child in children {
                match canon_node(child) {
                    Node::Op { label: l2, children: inner } if l2 == label => {
                        flat.extend(inner);
                    }
                    other => flat.push(other),
                }
            }
            let mut keyed: Vec<(SortKey, Node)> =
                flat.into_iter().map(|c| (SortKey::of(&c), c)).collect();
            keyed.sort_by(|a, b| a.0.cmp(&b.0));
            keyed.dedup_by(|cur, prev| cur.0.sig == prev.0.sig);
            let mut kids: Vec<Node> = keyed.into_iter().map(|(_, c)| c).collect();
            if kids.len() == 1 {
                kids.pop().unwrap()
            } else {
                Node::Op { label, children: kids }
            }
        }
    }
}

/// Canonical child ordering key.
///
/// Leaves come before operators; within a kind, children order by descending
/// field or label, descending comparator, descending value text, positive
/// polarity first, then descending signature and display text as final
/// tiebreakers. The descending direction on text components is what the
/// published canonical listings use.
struct SortKey {
    kind_rank: u8,
    label_or_field: String,
    cmp_rank: u8,
    value_text: String,
    polarity_rank: u8,
    sig: String,
    display: String,
}

impl SortKey {
    fn of(n: &Node) -> SortKey {
        match n {
            Node::Leaf(p) => SortKey {
                kind_rank: 0,
                label_or_field: p.field_lower(),
                cmp_rank: comparator_rank(p.comparator),
                value_text: p.payload.display_inline(),
                polarity_rank: if p.polarity == Polarity::Positive { 0 } else { 1 },
                sig: n.signature(),
                display: serialize_node_inline(n),
            },
            Node::Op { label, .. } => SortKey {
                kind_rank: 1,
                label_or_field: label.as_str().to_string(),
                cmp_rank: 0,
                value_text: String::new(),
                polarity_rank: 0,
                sig: n.signature(),
                display: serialize_node_inline(n),
            },
        }
    }

    fn cmp(&self, o: &SortKey) -> Ordering {
        self.kind_rank
            .cmp(&o.kind_rank)
            .then_with(|| o.label_or_field.cmp(&self.label_or_field))
            .then_with(|| o.cmp_rank.cmp(&self.cmp_rank))
            .then_with(|| o.value_text.cmp(&self.value_text))
            .then_with(|| self.polarity_rank.cmp(&o.polarity_rank))
            .then_with(|| o.sig.cmp(&self.sig))
            .then_with(|| o.display.cmp(&self.display))
    }
}

fn comparator_rank(c: Comparator) -> u8 {
    match c {
        Comparator::Eq => 0,
        Comparator::Neq => 1,
        Comparator::Lt => 2,
        Comparator::Le => 3,
        Comparator::Gt => 4,
        Comparator::Ge => 5,
        Comparator::In => 6,
        Comparator::NotIn => 7,
        Comparator::Contains => 8,
        Comparator::Regex => 9,
    }
}

/// Compact single-line node rendering used for ordering and tiebreaks.
pub(crate) fn serialize_node_inline(n: &Node) -> String {
    match n {
        Node::Leaf(p) => format!(
            "PRED({},{},{},{})",
            p.field,
            p.comparator,
            p.payload.display_inline(),
            polarity_tag(p.polarity)
        ),
        Node::Op { label, children } => {
            let parts: Vec<String> = children.iter().map(serialize_node_inline).collect();
            format!("EXPR({}|{})", label.as_str(), parts.join("|"))
        }
    }
}

/// Serializes a canonical graph to its text form, header included.
pub fn serialize(g: &PredicateGraph) -> String {
    let mut out = String::new();
    out.push_str(&format!("Rule: {}\n", g.meta.rule));
    out.push_str(&format!("Repo: {}\n", g.meta.repo));
    out.push_str(&format!("Version: {}\n", g.meta.version));
    out.push_str(&format!("Commit: {}\n", g.meta.commit));
    out.push_str(&format!("Predicate count: {}\n", g.predicate_count()));
    out.push('\n');
    out.push_str("Predicate graph:\n");
    out.push_str(&serialize_body(&g.root));
    out
}

/// Serializes just the node tree (the part after the `Predicate graph:`
/// header line).
pub fn serialize_body(root: &Node) -> String {
    let mut out = String::new();
    write_node(root, 0, &mut out);
    out
}

fn write_node(n: &Node, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    match n {
        Node::Op { label, children } => {
            out.push_str(&format!("{indent}EXPR(op={label})\n"));
            for child in children {
                write_node(child, depth + 1, out);
            }
        }
        Node::Leaf(p) => write_pred(p, &indent, out),
    }
}

fn write_pred(p: &Predicate, indent: &str, out: &mut String) {
    let cont = " ".repeat(indent.len() + 5);
    out.push_str(&format!("{indent}PRED(field={},\n", p.field));
    out.push_str(&format!("{cont}operator={},\n", p.comparator));
    match &p.payload {
        Payload::Scalar(s) => {
            out.push_str(&format!("{cont}value={}", s.display()));
        }
        Payload::List(members) => {
            let member_cont = " ".repeat(cont.len() + 7);
            for (i, m) in members.iter().enumerate() {
                let prefix = if i == 0 { format!("{cont}value=[") } else { member_cont.clone() };
                if i + 1 == members.len() {
                    out.push_str(&format!("{prefix}{}]", m.display()));
                } else {
                    out.push_str(&format!("{prefix}{},\n", m.display()));
                }
            }
            if members.is_empty() {
                out.push_str(&format!("{cont}value=[]"));
            }
        }
    }
    if p.polarity == Polarity::Negative {
        out.push_str(",\n");
        out.push_str(&format!("{cont}polarity=neg)"));
    } else {
        out.push(')');
    }
    out.push('\n');
}

/// Serializes a raw (pre-canonical) expression in the same layout as a
/// canonical graph; `NOT` operators render as `EXPR(op=NOT)`.
pub fn serialize_raw(expr: &RawExpr) -> String {
    let mut out = String::new();
    write_raw_node(expr, 0, &mut out);
    out
}

fn write_raw_node(e: &RawExpr, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    match e {
        RawExpr::Op { op, children } => {
            out.push_str(&format!("{indent}EXPR(op={})\n", op.as_str()));
            for child in children {
                write_raw_node(child, depth + 1, out);
            }
        }
        RawExpr::Leaf(p) => write_pred(p, &indent, out),
    }
}

/// Outcome of reading canonical graph text: the expression may still contain
/// raw `NOT` operators when the text was produced by `pgir parse`.
#[derive(Debug)]
pub struct ParsedCanonical {
    pub meta: Metadata,
    pub expr: RawExpr,
}

/// Parses canonical graph text (optionally headerless) back into an
/// expression tree. Reports the first malformed line.
pub fn parse_canonical(text: &str) -> Result<ParsedCanonical> {
    let mut meta = Metadata::default();
    let mut lines = text.lines().enumerate().peekable();
    let mut saw_header = false;

    while let Some(&(_, line)) = lines.peek() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("EXPR(") || trimmed.starts_with("PRED(") {
            break;
        }
        let (num, line) = lines.next().unwrap();
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix("Rule:") {
            meta.rule = rest.trim().to_string();
            saw_header = true;
        } else if let Some(rest) = t.strip_prefix("Repo:") {
            meta.repo = rest.trim().to_string();
            saw_header = true;
        } else if let Some(rest) = t.strip_prefix("Version:") {
            meta.version = rest.trim().parse().map_err(|_| Error::CanonicalText {
                line: num + 1,
                msg: format!("invalid version number {:?}", rest.trim()),
            })?;
            saw_header = true;
        } else if let Some(rest) = t.strip_prefix("Commit:") {
            meta.commit = rest.trim().to_string();
            saw_header = true;
        } else if t.starts_with("Predicate count:") || t == "Predicate graph:" {
            saw_header = true;
        } else {
            return Err(Error::CanonicalText {
                line: num + 1,
                msg: format!("unexpected line {t:?}"),
            });
        }
    }
    let _ = saw_header;

    let mut stack: Vec<(usize, RawExpr)> = Vec::new();
    let mut pending: Option<(usize, usize, String)> = None;
    let mut roots: Vec<RawExpr> = Vec::new();

    fn close_pred(
        pending: &mut Option<(usize, usize, String)>,
        stack: &mut Vec<(usize, RawExpr)>,
        roots: &mut Vec<RawExpr>,
    ) -> Result<()> {
        if let Some((line, depth, text)) = pending.take() {
            let pred = parse_pred_text(&text, line)?;
            attach(RawExpr::Leaf(pred), depth, stack, roots, line)?;
        }
        Ok(())
    }

    fn attach(
        node: RawExpr,
        depth: usize,
        stack: &mut Vec<(usize, RawExpr)>,
        roots: &mut Vec<RawExpr>,
        line: usize,
    ) -> Result<()> {
        while let Some(&(d, _)) = stack.last() {
            if d >= depth {
                let (d2, done) = stack.pop().unwrap();
                reduce(done, d2, stack, roots, line)?;
            } else {
                break;
            }
        }
        match node {
            RawExpr::Op { .. } => {
                stack.push((depth, node));
                Ok(())
            }
            leaf => reduce(leaf, depth, stack, roots, line),
        }
    }

    fn reduce(
        node: RawExpr,
        depth: usize,
        stack: &mut Vec<(usize, RawExpr)>,
        roots: &mut Vec<RawExpr>,
        line: usize,
    ) -> Result<()> {
        match stack.last_mut() {
            Some((d, RawExpr::Op { children, .. })) if *d < depth => {
                if depth != *d + 1 {
                    return Err(Error::CanonicalText {
                        line,
                        msg: format!("indent jumps from depth {d} to {depth}"),
                    });
                }
                children.push(node);
                Ok(())
            }
            Some(_) => unreachable!("stack holds only operator nodes"),
            None => {
                if depth != 0 {
                    return Err(Error::CanonicalText {
                        line,
                        msg: format!("node at depth {depth} has no parent"),
                    });
                }
                roots.push(node);
                Ok(())
            }
        }
    }

    for (idx, line) in lines {
        let num = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let stripped = line.trim_start_matches(' ');
        let indent = line.len() - stripped.len();
        let starts_node = stripped.starts_with("EXPR(") || stripped.starts_with("PRED(");
        if !starts_node {
            match &mut pending {
                Some((_, _, text)) => {
                    text.push('\n');
                    text.push_str(line);
                    continue;
                }
                None => {
                    return Err(Error::CanonicalText {
                        line: num,
                        msg: format!("unexpected continuation line {:?}", line.trim()),
                    });
                }
            }
        }
        close_pred(&mut pending, &mut stack, &mut roots)?;
        if indent % 2 != 0 {
            return Err(Error::CanonicalText {
                line: num,
                msg: format!("odd indentation of {indent} spaces"),
            });
        }
        let depth = indent / 2;
        if let Some(rest) = stripped.strip_prefix("EXPR(op=") {
            let label = rest.strip_suffix(')').ok_or(Error::CanonicalText {
                line: num,
                msg: "EXPR line not closed with ')'".to_string(),
            })?;
            let op = match label {
                "AND" => RawOp::And,
                "OR" => RawOp::Or,
                "NOT" => RawOp::Not,
                other => {
                    return Err(Error::CanonicalText {
                        line: num,
                        msg: format!("unknown operator {other:?}"),
                    })
                }
            };
            attach(RawExpr::Op { op, children: Vec::new() }, depth, &mut stack, &mut roots, num)?;
        } else {
            pending = Some((num, depth, line.to_string()));
        }
    }
    close_pred(&mut pending, &mut stack, &mut roots)?;
    while let Some((d, done)) = stack.pop() {
        reduce(done, d, &mut stack, &mut roots, text.lines().count())?;
    }

    let mut check = vec![&roots];
    while let Some(nodes) = check.pop() {
        for n in nodes {
            if let RawExpr::Op { children, .. } = n {
                if children.is_empty() {
                    return Err(Error::CanonicalText {
                        line: text.lines().count(),
                        msg: "operator node with no children".to_string(),
                    });
                }
                check.push(children);
            }
        }
    }

    match roots.len() {
        0 => Err(Error::CanonicalText { line: 1, msg: "no predicate graph found".to_string() }),
        1 => Ok(ParsedCanonical { meta, expr: roots.pop().unwrap() }),
        n => Err(Error::CanonicalText {
            line: text.lines().count(),
            msg: format!("expected one root node, found {n}"),
        }),
    }
}

fn parse_pred_text(text: &str, line: usize) -> Result<Predicate> {
    let err = |msg: String| Error::CanonicalText { line, msg };
    let t = text.trim_start();
    let body = t
        .strip_prefix("PRED(")
        .ok_or_else(|| err("expected PRED(".to_string()))?;
    let fields = split_pred_fields(body).map_err(|m| err(m))?;

    let mut field: Option<String> = None;
    let mut operator: Option<Comparator> = None;
    let mut payload: Option<Payload> = None;
    let mut polarity = Polarity::Positive;

    for part in fields {
        let part = part.trim();
        if let Some(v) = part.strip_prefix("field=") {
            field = Some(v.to_string());
        } else if let Some(v) = part.strip_prefix("operator=") {
            operator =
                Some(Comparator::parse(v).ok_or_else(|| err(format!("unknown operator {v:?}")))?);
        } else if let Some(v) = part.strip_prefix("value=") {
            payload = Some(parse_payload_text(v).map_err(|m| err(m))?);
        } else if let Some(v) = part.strip_prefix("polarity=") {
            polarity = match v {
                "neg" => Polarity::Negative,
                "pos" => Polarity::Positive,
                other => return Err(err(format!("unknown polarity {other:?}"))),
            };
        } else {
            return Err(err(format!("unexpected predicate attribute {part:?}")));
        }
    }

    Ok(Predicate {
        field: field.ok_or_else(|| err("predicate missing field".to_string()))?,
        comparator: operator.ok_or_else(|| err("predicate missing operator".to_string()))?,
        payload: payload.ok_or_else(|| err("predicate missing value".to_string()))?,
        polarity,
    })
}

/// Splits `field=...,operator=...,value=...` on top-level commas, honoring
/// quotes and brackets, and checks the trailing `)`.
fn split_pred_fields(body: &str) -> std::result::Result<Vec<String>, String> {
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    let mut in_quote = false;
    let mut escaped = false;
    let mut closed = false;
    for c in body.chars() {
        if closed {
            if !c.is_whitespace() {
                return Err(format!("trailing text after PRED: {c:?}"));
            }
            continue;
        }
        if in_quote {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_quote = true;
                cur.push(c);
            }
            '[' => {
                depth += 1;
                cur.push(c);
            }
            ']' => {
                depth = depth.checked_sub(1).ok_or("unbalanced ']'")?;
                cur.push(c);
            }
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                if depth == 0 {
                    parts.push(std::mem::take(&mut cur));
                    closed = true;
                } else {
                    depth -= 1;
                    cur.push(c);
                }
            }
            ',' if depth == 0 => parts.push(std::mem::take(&mut cur)),
            '\n' => cur.push(' '),
            _ => cur.push(c),
        }
    }
    if !closed {
        return Err("PRED not closed with ')'".to_string());
    }
    if in_quote {
        return Err("unterminated quote in PRED".to_string());
    }
    Ok(parts.into_iter().map(|p| p.trim().to_string()).collect())
}

fn parse_payload_text(v: &str) -> std::result::Result<Payload, String> {
    let v = v.trim();
    if let Some(inner) = v.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or("list value not closed with ']'")?;
        let mut members = Vec::new();
        for part in split_list_members(inner)? {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            members.push(parse_scalar_text(part)?);
        }
        if members.is_empty() {
            return Err("empty membership list".to_string());
        }
        Ok(Payload::List(members))
    } else {
        Ok(Payload::Scalar(parse_scalar_text(v)?))
    }
}

fn split_list_members(inner: &str) -> std::result::Result<Vec<String>, String> {
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut in_quote = false;
    let mut escaped = false;
    for c in inner.chars() {
        if in_quote {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_quote = true;
                cur.push(c);
            }
            ',' => parts.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    if in_quote {
        return Err("unterminated quote in list".to_string());
    }
    parts.push(cur);
    Ok(parts)
}

fn parse_scalar_text(v: &str) -> std::result::Result<Scalar, String> {
    let open = v.find("(\"").ok_or_else(|| format!("malformed scalar {v:?}"))?;
    let kind = ScalarKind::parse(&v[..open]).ok_or_else(|| format!("unknown value kind in {v:?}"))?;
    let rest = &v[open + 2..];
    let inner = rest
        .strip_suffix("\")")
        .ok_or_else(|| format!("scalar not closed with '\")': {v:?}"))?;
    let text = unescape_display(inner).ok_or_else(|| format!("bad escape in {v:?}"))?;
    Ok(Scalar { kind, text })
}
