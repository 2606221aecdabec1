//! SPL frontend: pipeline stage splitting and filter parsing.
//!
//! A rule's search text is split on top-level `|` into stages. Stages that
//! filter events (a leading bare search, `search`, `where`, `regex`, and the
//! `where` clauses of `tstats`/`datamodel`) are parsed into a raw predicate
//! expression; aggregation and presentation stages are recorded but carry no
//! predicates. Multiple filtering stages are conjoined under a root `AND`.

use crate::error::{Error, Result};
use crate::graph::{
    normalize_list, normalize_regex, normalize_scalar, Comparator, Payload, Polarity, Predicate,
    RawExpr,
};

/// Field name given to bare and quoted search terms.
pub const RAW_FIELD: &str = "_raw";

/// One pipeline stage with its classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub index: usize,
    pub text: String,
    pub kind: StageKind,
}

/// Whether a stage constrains matched events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageKind {
    Filtering(FilterKind),
    NonFiltering(String),
}

/// The recognized filtering stage forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    /// Leading bare search or an explicit `search` command.
    Search,
    /// A `where` command.
    Where,
    /// A `regex` command.
    Regex,
    /// The `where` clause of a `tstats` or `datamodel` stage.
    StatsWhere,
}

/// Splits rule text on top-level `|`, honoring quotes and parentheses.
/// Unbalanced quotes or parentheses fail the whole version.
pub fn split_stages(text: &str) -> Result<Vec<Stage>> {
    let mut pieces: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut in_quote = false;
    let mut escaped = false;
    let mut paren_depth: i64 = 0;
    let mut bracket_depth: i64 = 0;
    for c in text.chars() {
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
            '(' => {
                paren_depth += 1;
                cur.push(c);
            }
            ')' => {
                paren_depth -= 1;
                if paren_depth < 0 {
                    return Err(Error::Parse("unbalanced ')'".to_string()));
                }
                cur.push(c);
            }
            '[' => {
                bracket_depth += 1;
                cur.push(c);
            }
            ']' => {
                bracket_depth -= 1;
                if bracket_depth < 0 {
                    return Err(Error::Parse("unbalanced ']'".to_string()));
                }
                cur.push(c);
            }
            '|' if paren_depth == 0 && bracket_depth == 0 => {
                pieces.push(std::mem::take(&mut cur));
            }
            _ => cur.push(c),
        }
    }
    if in_quote {
        return Err(Error::Parse("unterminated quote".to_string()));
    }
    if paren_depth != 0 {
        return Err(Error::Parse("unbalanced '('".to_string()));
    }
    if bracket_depth != 0 {
        return Err(Error::Parse("unbalanced '['".to_string()));
    }
    pieces.push(cur);

    let mut stages = Vec::new();
    for (i, piece) in pieces.iter().enumerate() {
        let trimmed = piece.trim();
        if trimmed.is_empty() {
            if i == 0 {
                continue;
            }
            return Err(Error::Parse(format!("empty pipeline stage at position {i}")));
        }
        let first = first_word(trimmed).to_lowercase();
        let kind = match first.as_str() {
            "search" => StageKind::Filtering(FilterKind::Search),
            "where" => StageKind::Filtering(FilterKind::Where),
            "regex" => StageKind::Filtering(FilterKind::Regex),
            "tstats" | "datamodel" => {
                if find_top_level_word(trimmed, "where").is_some() {
                    StageKind::Filtering(FilterKind::StatsWhere)
                } else {
                    StageKind::NonFiltering(first)
                }
            }
            _ if stages.is_empty() && i == 0 => StageKind::Filtering(FilterKind::Search),
            _ => StageKind::NonFiltering(first),
        };
        stages.push(Stage { index: stages.len(), text: trimmed.to_string(), kind });
    }
    Ok(stages)
}

fn first_word(s: &str) -> &str {
    let end = s
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_alphanumeric() || *c == '_'))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    &s[..end]
}

/// Byte range of the first top-level occurrence of `word` (matched
/// case-insensitively as a whole word outside quotes and parentheses).
fn find_top_level_word(text: &str, word: &str) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut in_quote = false;
    let mut escaped = false;
    let mut depth = 0i64;
    let mut word_start: Option<usize> = None;
    let mut result = None;
    for (i, c) in text.char_indices() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_quote = false;
            }
            word_start = None;
            continue;
        }
        let is_word_char = c.is_ascii_alphanumeric() || c == '_';
        if is_word_char {
            if word_start.is_none() {
                word_start = Some(i);
            }
        } else {
            if let Some(start) = word_start.take() {
                if depth == 0 && text[start..i].eq_ignore_ascii_case(word) {
                    result = Some((start, i));
                    break;
                }
            }
            match c {
                '"' => in_quote = true,
                '(' => depth += 1,
                ')' => depth -= 1,
                _ => {}
            }
        }
    }
    if result.is_none() {
        if let Some(start) = word_start {
            if depth == 0 && text[start..].eq_ignore_ascii_case(word) {
                result = Some((start, bytes.len()));
            }
        }
    }
    result
}

/// Extracts the conjoined filter expression from rule text.
///
/// Returns `Ok(None)` when the pipeline parses but contains no filtering
/// stage (an empty detection); malformed text is an error.
pub fn extract_detection(text: &str) -> Result<Option<RawExpr>> {
    let stages = split_stages(text)?;
    let mut exprs = Vec::new();
    for stage in &stages {
        if let StageKind::Filtering(kind) = &stage.kind {
            exprs.push(parse_filter_stage(stage, *kind)?);
        }
    }
    Ok(match exprs.len() {
        0 => None,
        1 => Some(exprs.pop().unwrap()),
        _ => Some(RawExpr::and(exprs)),
    })
}

fn parse_filter_stage(stage: &Stage, kind: FilterKind) -> Result<RawExpr> {
    let text = &stage.text;
    match kind {
        FilterKind::Search => {
            let body = match first_word(text).to_lowercase().as_str() {
                "search" => &text[first_word(text).len()..],
                _ => text.as_str(),
            };
            parse_filter_body(body)
        }
        FilterKind::Where => {
            let body = &text[first_word(text).len()..];
            parse_filter_body(body)
        }
        FilterKind::Regex => parse_regex_stage(&text[first_word(text).len()..]),
        FilterKind::StatsWhere => {
            let (_, where_end) = find_top_level_word(text, "where")
                .ok_or_else(|| Error::Parse("tstats stage lost its where clause".to_string()))?;
            let rest = &text[where_end..];
            let body_end = find_top_level_word(rest, "by")
                .or_else(|| find_top_level_word(rest, "groupby"))
                .map(|(s, _)| s)
                .unwrap_or(rest.len());
            parse_filter_body(&rest[..body_end])
        }
    }
}

fn parse_regex_stage(body: &str) -> Result<RawExpr> {
    let toks = tokenize(body)?;
    let pred = match toks.as_slice() {
        [value] if value.is_value() => Predicate {
            field: RAW_FIELD.to_string(),
            comparator: Comparator::Regex,
            payload: Payload::Scalar(normalize_regex(value.value_text())),
            polarity: Polarity::Positive,
        },
        [Tok::Word(field), Tok::Cmp(cmp), value]
            if value.is_value() && matches!(cmp, Comparator::Eq | Comparator::Neq) =>
        {
            Predicate {
                field: field.clone(),
                comparator: Comparator::Regex,
                payload: Payload::Scalar(normalize_regex(value.value_text())),
                polarity: if *cmp == Comparator::Eq {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
            }
        }
        _ => return Err(Error::Parse("malformed regex stage".to_string())),
    };
    Ok(RawExpr::Leaf(pred))
}

/// Parses a search/where filter body into a raw expression.
///
/// Grammar: `OR` over `AND` over unary `NOT` over atoms; juxtaposition is an
/// implicit `AND`; connectives are recognized in upper case only; `IN (...)`
/// is recognized case-insensitively; bare and quoted terms become
/// `_raw CONTAINS` predicates.
pub fn parse_filter_body(body: &str) -> Result<RawExpr> {
    let toks = tokenize(body)?;
    if toks.is_empty() {
        return Err(Error::Parse("empty filter stage".to_string()));
    }
    let mut p = Parser { toks, pos: 0 };
    let expr = p.parse_or()?;
    if p.pos != p.toks.len() {
        return Err(Error::Parse(format!("unexpected trailing {}", p.describe_current())));
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LParen,
    RParen,
    Comma,
    Cmp(Comparator),
    And,
    Or,
    Not,
    /// Bare token, raw text.
    Word(String),
    /// Quoted token, raw text including the surrounding quotes.
    Quoted(String),
}

impl Tok {
    fn is_value(&self) -> bool {
        matches!(self, Tok::Word(_) | Tok::Quoted(_))
    }

    fn value_text(&self) -> &str {
        match self {
            Tok::Word(w) => w,
            Tok::Quoted(q) => q,
            _ => unreachable!("not a value token"),
        }
    }
}

fn tokenize(body: &str) -> Result<Vec<Tok>> {
    let mut toks = Vec::new();
    let chars: Vec<char> = body.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                toks.push(Tok::Comma);
                i += 1;
            }
            '[' | ']' => {
                return Err(Error::Parse("subsearches are not supported".to_string()));
            }
            '"' => {
                let mut text = String::from('"');
                let mut escaped = false;
                let mut closed = false;
                i += 1;
                while i < chars.len() {
                    let q = chars[i];
                    text.push(q);
                    i += 1;
                    if escaped {
                        escaped = false;
                    } else if q == '\\' {
                        escaped = true;
                    } else if q == '"' {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(Error::Parse("unterminated quote".to_string()));
                }
                toks.push(Tok::Quoted(text));
            }
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 2;
                } else {
                    i += 1;
                }
                toks.push(Tok::Cmp(Comparator::Eq));
            }
            '!' if chars.get(i + 1) == Some(&'=') => {
                toks.push(Tok::Cmp(Comparator::Neq));
                i += 2;
            }
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push(Tok::Cmp(Comparator::Le));
                    i += 2;
                } else {
                    toks.push(Tok::Cmp(Comparator::Lt));
                    i += 1;
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    toks.push(Tok::Cmp(Comparator::Ge));
                    i += 2;
                } else {
                    toks.push(Tok::Cmp(Comparator::Gt));
                    i += 1;
                }
            }
            _ => {
                let mut word = String::new();
                while i < chars.len() {
                    let w = chars[i];
                    if w.is_whitespace() || matches!(w, '(' | ')' | ',' | '"' | '=' | '<' | '>' | '[' | ']') {
                        break;
                    }
                    if w == '!' && chars.get(i + 1) == Some(&'=') {
                        break;
                    }
                    word.push(w);
                    i += 1;
                }
                toks.push(match word.as_str() {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    _ => Tok::Word(word),
                });
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn describe_current(&self) -> String {
        match self.peek() {
            Some(t) => format!("{t:?}"),
            None => "end of input".to_string(),
        }
    }

    fn parse_or(&mut self) -> Result<RawExpr> {
        let mut terms = vec![self.parse_and()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            terms.push(self.parse_and()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { RawExpr::or(terms) })
    }

    fn parse_and(&mut self) -> Result<RawExpr> {
        let mut terms = vec![self.parse_unary()?];
        loop {
            match self.peek() {
                Some(Tok::And) => {
                    self.pos += 1;
                    terms.push(self.parse_unary()?);
                }
                Some(Tok::Not) | Some(Tok::LParen) | Some(Tok::Word(_)) | Some(Tok::Quoted(_)) => {
                    terms.push(self.parse_unary()?);
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { RawExpr::and(terms) })
    }

    fn parse_unary(&mut self) -> Result<RawExpr> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            return Ok(RawExpr::not(self.parse_unary()?));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<RawExpr> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.parse_or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(Error::Parse(format!(
                        "expected ')', found {}",
                        self.describe_current()
                    )));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Word(w)) => {
                self.pos += 1;
                match self.peek().cloned() {
                    Some(Tok::Cmp(cmp)) => {
                        self.pos += 1;
                        let value = self.expect_value()?;
                        Ok(RawExpr::Leaf(Predicate {
                            field: w,
                            comparator: cmp,
                            payload: Payload::Scalar(normalize_scalar(&value)),
                            polarity: Polarity::Positive,
                        }))
                    }
                    Some(Tok::Word(kw))
                        if kw.eq_ignore_ascii_case("in")
                            && self.toks.get(self.pos + 1) == Some(&Tok::LParen) =>
                    {
                        self.pos += 2;
                        let members = self.parse_in_list()?;
                        Ok(RawExpr::Leaf(Predicate {
                            field: w,
                            comparator: Comparator::In,
                            payload: Payload::List(normalize_list(members)),
                            polarity: Polarity::Positive,
                        }))
                    }
                    _ => Ok(term_leaf(&w)),
                }
            }
            Some(Tok::Quoted(q)) => {
                self.pos += 1;
                Ok(term_leaf(&q))
            }
            Some(other) => Err(Error::Parse(format!("expected expression, found {other:?}"))),
            None => Err(Error::Parse("expected expression, found end of input".to_string())),
        }
    }

    fn expect_value(&mut self) -> Result<String> {
        match self.peek().cloned() {
            Some(t) if t.is_value() => {
                self.pos += 1;
                Ok(t.value_text().to_string())
            }
            _ => Err(Error::Parse(format!(
                "expected comparison value, found {}",
                self.describe_current()
            ))),
        }
    }

    fn parse_in_list(&mut self) -> Result<Vec<crate::graph::Scalar>> {
        let mut members = Vec::new();
        loop {
            let raw = self.expect_value().map_err(|_| {
                Error::Parse(format!(
                    "expected membership value, found {}",
                    self.describe_current()
                ))
            })?;
            members.push(normalize_scalar(&raw));
            match self.peek() {
                Some(Tok::Comma) => {
                    self.pos += 1;
                }
                Some(Tok::RParen) => {
                    self.pos += 1;
                    break;
                }
                _ => {
                    return Err(Error::Parse(format!(
                        "expected ',' or ')' in membership list, found {}",
                        self.describe_current()
                    )))
                }
            }
        }
        if members.is_empty() {
            return Err(Error::Parse("empty membership list".to_string()));
        }
        Ok(members)
    }
}

fn term_leaf(raw: &str) -> RawExpr {
    RawExpr::Leaf(Predicate {
        field: RAW_FIELD.to_string(),
        comparator: Comparator::Contains,
        payload: Payload::Scalar(normalize_scalar(raw)),
        polarity: Polarity::Positive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{canonicalize, serialize, Metadata, Node, OpLabel, RawOp, ScalarKind};

    const AUDITD: &str = "sourcetype=\"auditd\" proctitle IN (\"*sudo *\", \"*su *\") \
| rename host as dest \
| stats count min(_time) as firstTime max(_time) as lastTime by proctitle dest \
| convert timeformat=\"%Y-%m-%dT%H:%M:%S\" ctime(firstTime) \
| convert timeformat=\"%Y-%m-%dT%H:%M:%S\" ctime(lastTime)";

    #[test]
    fn splits_auditd_pipeline_into_five_stages() {
        let stages = split_stages(AUDITD).unwrap();
        assert_eq!(stages.len(), 5);
        assert_eq!(stages[0].kind, StageKind::Filtering(FilterKind::Search));
        assert_eq!(stages[1].kind, StageKind::NonFiltering("rename".to_string()));
        assert_eq!(stages[2].kind, StageKind::NonFiltering("stats".to_string()));
        assert_eq!(stages[3].kind, StageKind::NonFiltering("convert".to_string()));
        assert_eq!(stages[4].kind, StageKind::NonFiltering("convert".to_string()));
    }

    #[test]
    fn pipe_inside_quotes_does_not_split() {
        let stages = split_stages("CommandLine=\"a|b\" | stats count").unwrap();
        assert_eq!(stages.len(), 2);
    }

    #[test]
    fn auditd_filter_parses_to_two_predicates() {
        let expr = extract_detection(AUDITD).unwrap().unwrap();
        let g = canonicalize(&expr, Metadata::default());
        assert_eq!(g.predicate_count(), 2);
        match &g.root {
            Node::Op { label: OpLabel::And, children } => assert_eq!(children.len(), 2),
            other => panic!("expected AND root, got {other:?}"),
        }
    }

    #[test]
    fn keyword_framing_parses_to_or_under_and() {
        let text = "(\"kw one\" OR \"kw two\" OR \"kw three\") NOT EventID=15";
        let expr = extract_detection(text).unwrap().unwrap();
        match &expr {
            RawExpr::Op { op: RawOp::And, children } => {
                assert_eq!(children.len(), 2);
                assert!(matches!(&children[0], RawExpr::Op { op: RawOp::Or, children: c } if c.len() == 3));
                assert!(matches!(&children[1], RawExpr::Op { op: RawOp::Not, .. }));
            }
            other => panic!("expected AND, got {other:?}"),
        }
        let g = canonicalize(&expr, Metadata::default());
        assert_eq!(g.predicate_count(), 4);
    }

    #[test]
    fn implicit_and_and_explicit_and_agree() {
        let a = extract_detection("a=1 b=2").unwrap().unwrap();
        let b = extract_detection("a=1 AND b=2").unwrap().unwrap();
        assert_eq!(
            serialize(&canonicalize(&a, Metadata::default())),
            serialize(&canonicalize(&b, Metadata::default()))
        );
    }

    #[test]
    fn connectives_are_uppercase_only() {
        let expr = extract_detection("a=1 or b=2").unwrap().unwrap();
        let g = canonicalize(&expr, Metadata::default());
        assert_eq!(g.predicate_count(), 3);
        match &g.root {
            Node::Op { label: OpLabel::And, .. } => {}
            other => panic!("lowercase 'or' should be a term, got {other:?}"),
        }
    }

    #[test]
    fn not_binds_tighter_than_and() {
        let expr = extract_detection("a=1 NOT b=2 c=3").unwrap().unwrap();
        match &expr {
            RawExpr::Op { op: RawOp::And, children } => {
                assert_eq!(children.len(), 3);
                assert!(matches!(&children[1], RawExpr::Op { op: RawOp::Not, .. }));
            }
            other => panic!("expected three-way AND, got {other:?}"),
        }
    }

    #[test]
    fn neq_is_positive_polarity_neq_not_negated_eq() {
        let expr = extract_detection("User!=\"SYSTEM\"").unwrap().unwrap();
        match &expr {
            RawExpr::Leaf(p) => {
                assert_eq!(p.comparator, Comparator::Neq);
                assert_eq!(p.polarity, Polarity::Positive);
            }
            other => panic!("expected leaf, got {other:?}"),
        }
    }

    #[test]
    fn double_equals_is_tolerated_as_eq() {
        let expr = extract_detection("count==5").unwrap().unwrap();
        match &expr {
            RawExpr::Leaf(p) => {
                assert_eq!(p.comparator, Comparator::Eq);
                assert_eq!(p.payload, Payload::Scalar(crate::graph::Scalar {
                    kind: ScalarKind::Number,
                    text: "5".to_string(),
                }));
            }
            other => panic!("expected leaf, got {other:?}"),
        }
    }

    #[test]
    fn in_keyword_is_case_insensitive_when_parenthesized() {
        let a = extract_detection("f in (\"x\", \"y\")").unwrap().unwrap();
        let b = extract_detection("f IN (\"x\", \"y\")").unwrap().unwrap();
        assert_eq!(a, b);
        match &a {
            RawExpr::Leaf(p) => assert_eq!(p.comparator, Comparator::In),
            other => panic!("expected IN leaf, got {other:?}"),
        }
    }

    #[test]
    fn bare_in_without_parens_is_a_term() {
        let expr = extract_detection("logged in users").unwrap().unwrap();
        let g = canonicalize(&expr, Metadata::default());
        assert_eq!(g.predicate_count(), 3);
    }

    #[test]
    fn empty_in_list_is_a_parse_failure() {
        assert!(extract_detection("f IN ()").is_err());
    }

    #[test]
    fn wildcard_value_keeps_eq_comparator() {
        let expr = extract_detection("Image=\"*\\\\powershell.exe\"").unwrap().unwrap();
        match &expr {
            RawExpr::Leaf(p) => {
                assert_eq!(p.comparator, Comparator::Eq);
                match &p.payload {
                    Payload::Scalar(s) => {
                        assert_eq!(s.kind, ScalarKind::Wildcard);
                        assert_eq!(s.text, "*\\powershell.exe");
                    }
                    other => panic!("expected scalar, got {other:?}"),
                }
            }
            other => panic!("expected leaf, got {other:?}"),
        }
    }

    #[test]
    fn where_stage_parses_comparisons() {
        let expr = extract_detection("index=main | where count > 5 AND dest=\"x\"")
            .unwrap()
            .unwrap();
        let g = canonicalize(&expr, Metadata::default());
        assert_eq!(g.predicate_count(), 3);
    }

    #[test]
    fn tstats_where_clause_is_extracted_up_to_by() {
        let text = "tstats summariesonly=true count from datamodel=Endpoint.Processes \
where Processes.process=\"*mimikatz*\" Processes.dest=\"srv\" by Processes.dest";
        let expr = extract_detection(text).unwrap().unwrap();
        let g = canonicalize(&expr, Metadata::default());
        assert_eq!(g.predicate_count(), 2);
    }

    #[test]
    fn tstats_without_where_is_non_filtering() {
        let stages = split_stages("tstats count from datamodel=X by dest").unwrap();
        assert_eq!(stages[0].kind, StageKind::NonFiltering("tstats".to_string()));
    }

    #[test]
    fn regex_stage_forms() {
        let pos = extract_detection("index=x | regex _raw=\"^4[0-9]+$\"").unwrap().unwrap();
        match &pos {
            RawExpr::Op { op: RawOp::And, children } => match &children[1] {
                RawExpr::Leaf(p) => {
                    assert_eq!(p.comparator, Comparator::Regex);
                    assert_eq!(p.polarity, Polarity::Positive);
                }
                other => panic!("expected regex leaf, got {other:?}"),
            },
            other => panic!("expected AND of stages, got {other:?}"),
        }

        let neg = extract_detection("index=x | regex user!=\"^svc_\"").unwrap().unwrap();
        match &neg {
            RawExpr::Op { children, .. } => match &children[1] {
                RawExpr::Leaf(p) => assert_eq!(p.polarity, Polarity::Negative),
                other => panic!("expected regex leaf, got {other:?}"),
            },
            other => panic!("expected AND of stages, got {other:?}"),
        }

        let bare = extract_detection("index=x | regex \"\\\\d+\"").unwrap().unwrap();
        match &bare {
            RawExpr::Op { children, .. } => match &children[1] {
                RawExpr::Leaf(p) => assert_eq!(p.field, RAW_FIELD),
                other => panic!("expected regex leaf, got {other:?}"),
            },
            other => panic!("expected AND of stages, got {other:?}"),
        }
    }

    #[test]
    fn regex_whitespace_is_preserved() {
        let expr = extract_detection("regex _raw=\"a  b\"").unwrap().unwrap();
        match &expr {
            RawExpr::Leaf(p) => match &p.payload {
                Payload::Scalar(s) => assert_eq!(s.text, "a  b"),
                other => panic!("expected scalar, got {other:?}"),
            },
            other => panic!("expected leaf, got {other:?}"),
        }
    }

    #[test]
    fn multiple_filtering_stages_conjoin() {
        let expr = extract_detection("a=1 | search b=2 | stats count | where c>3")
            .unwrap()
            .unwrap();
        match &expr {
            RawExpr::Op { op: RawOp::And, children } => assert_eq!(children.len(), 3),
            other => panic!("expected AND of stages, got {other:?}"),
        }
    }

    #[test]
    fn aggregation_only_pipeline_is_an_empty_detection() {
        assert_eq!(extract_detection("| stats count by host").unwrap(), None);
    }

    #[test]
    fn unbalanced_input_fails_the_version() {
        assert!(extract_detection("a=\"unclosed").is_err());
        assert!(extract_detection("(a=1").is_err());
        assert!(extract_detection("a=1)").is_err());
    }

    #[test]
    fn subsearch_is_a_parse_failure() {
        assert!(extract_detection("index=x [search y=2]").is_err());
    }

    #[test]
    fn stray_comparator_is_a_parse_failure() {
        assert!(extract_detection("= 5").is_err());
        assert!(extract_detection("a = ").is_err());
        assert!(extract_detection("a=1 OR").is_err());
    }
}
