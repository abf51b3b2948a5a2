//! Domain types for networks, queries and answers, plus the textual query
//! form.
//!
//! The query grammar is a small select-from-where language:
//!
//! ```text
//! query      = "Select" attr { "," attr } "From" ident { "," ident } "Where" expr ;
//! expr       = operand { logical operand } ;      (* one logical operator per level *)
//! operand    = "(" expr ")" | comparison ;
//! comparison = attr op attr ;
//! attr       = ident "." ident ;
//! op         = "EQ" | "GT" | "LT" ;
//! logical    = "And" | "Or" ;
//! ```
//!
//! Keywords are case-insensitive. Mixing `And` and `Or` at one level without
//! parentheses is rejected; repeated use of the same operator associates to
//! the left.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of a source type, e.g. `"A"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceTypeId(String);

/// Name of a value type, e.g. `"Value1"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueTypeId(String);

macro_rules! name_newtype {
    ($ty:ident) => {
        impl $ty {
            /// Panics on an empty name; use `try_new` for untrusted input.
            pub fn new(name: impl Into<String>) -> Self {
                Self::try_new(name).expect("identifier must be non-empty")
            }

            pub fn try_new(name: impl Into<String>) -> Result<Self, ModelError> {
                let name = name.into();
                if name.is_empty() {
                    return Err(ModelError::EmptyIdentifier);
                }
                Ok(Self(name))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $ty {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }
    };
}

name_newtype!(SourceTypeId);
name_newtype!(ValueTypeId);

/// Network-wide identifier of one source instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u32);

impl InstanceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Comparison operator of a `Where` leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CompareOp {
    Eq,
    Gt,
    Lt,
}

impl CompareOp {
    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CompareOp::Eq => lhs == rhs,
            CompareOp::Gt => lhs > rhs,
            CompareOp::Lt => lhs < rhs,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            CompareOp::Eq => "EQ",
            CompareOp::Gt => "GT",
            CompareOp::Lt => "LT",
        }
    }
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Logical connective of an internal `Where` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Logical {
    And,
    Or,
}

impl fmt::Display for Logical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Logical::And => "And",
            Logical::Or => "Or",
        })
    }
}

/// A `(source type, value type)` reference such as `A.Value1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Attr {
    pub source: SourceTypeId,
    pub value: ValueTypeId,
}

impl Attr {
    pub fn new(source: impl Into<SourceTypeId>, value: impl Into<ValueTypeId>) -> Self {
        Self {
            source: source.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for Attr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.source, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Comparison {
    pub lhs: Attr,
    pub op: CompareOp,
    pub rhs: Attr,
}

impl Comparison {
    pub fn new(lhs: Attr, op: CompareOp, rhs: Attr) -> Self {
        Self { lhs, op, rhs }
    }

    /// Both sides reference the same source type.
    pub fn is_same_type(&self) -> bool {
        self.lhs.source == self.rhs.source
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op, self.rhs)
    }
}

/// Boolean tree of comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WhereTree {
    Leaf(Comparison),
    Node {
        left: Box<WhereTree>,
        logical: Logical,
        right: Box<WhereTree>,
    },
}

impl WhereTree {
    pub fn node(left: WhereTree, logical: Logical, right: WhereTree) -> Self {
        WhereTree::Node {
            left: Box::new(left),
            logical,
            right: Box::new(right),
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&Comparison> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Comparison>) {
        match self {
            WhereTree::Leaf(c) => out.push(c),
            WhereTree::Node { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            WhereTree::Leaf(_) => 1,
            WhereTree::Node { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Evaluates the tree given a lookup for attribute values.
    pub fn eval_with(&self, value_of: &mut impl FnMut(&Attr) -> i64) -> bool {
        match self {
            WhereTree::Leaf(c) => c.op.holds(value_of(&c.lhs), value_of(&c.rhs)),
            WhereTree::Node {
                left,
                logical: Logical::And,
                right,
            } => left.eval_with(value_of) && right.eval_with(value_of),
            WhereTree::Node {
                left,
                logical: Logical::Or,
                right,
            } => left.eval_with(value_of) || right.eval_with(value_of),
        }
    }

    fn render_top(&self, out: &mut String) {
        match self {
            WhereTree::Leaf(c) => {
                out.push('(');
                out.push_str(&c.to_string());
                out.push(')');
            }
            WhereTree::Node {
                left,
                logical,
                right,
            } => {
                left.render_group(out);
                out.push(' ');
                out.push_str(&logical.to_string());
                out.push(' ');
                right.render_group(out);
            }
        }
    }

    fn render_group(&self, out: &mut String) {
        out.push('(');
        self.render_flat(out);
        out.push(')');
    }

    fn render_flat(&self, out: &mut String) {
        match self {
            WhereTree::Leaf(c) => out.push_str(&c.to_string()),
            WhereTree::Node {
                left,
                logical,
                right,
            } => {
                for (i, side) in [left, right].into_iter().enumerate() {
                    if i == 1 {
                        out.push(' ');
                        out.push_str(&logical.to_string());
                        out.push(' ');
                    }
                    match side.as_ref() {
                        WhereTree::Leaf(_) => side.render_flat(out),
                        WhereTree::Node { .. } => side.render_group(out),
                    }
                }
            }
        }
    }
}

/// A validated select-from-where query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    select: Vec<Attr>,
    from: Vec<SourceTypeId>,
    #[serde(rename = "where")]
    where_: WhereTree,
}

impl Query {
    pub fn new(
        select: Vec<Attr>,
        from: Vec<SourceTypeId>,
        where_: WhereTree,
    ) -> Result<Self, ModelError> {
        if select.is_empty() {
            return Err(ModelError::EmptySelect);
        }
        if from.is_empty() {
            return Err(ModelError::EmptyFrom);
        }
        let mut seen = HashSet::new();
        for t in &from {
            if !seen.insert(t) {
                return Err(ModelError::DuplicateFrom(t.clone()));
            }
        }
        for a in &select {
            if !seen.contains(&a.source) {
                return Err(ModelError::SelectOutsideFrom(a.source.clone()));
            }
        }
        for leaf in where_.leaves() {
            for side in [&leaf.lhs, &leaf.rhs] {
                if !seen.contains(&side.source) {
                    return Err(ModelError::LeafOutsideFrom(side.source.clone()));
                }
            }
            if leaf.lhs == leaf.rhs {
                return Err(ModelError::IdenticalSides(leaf.lhs.clone()));
            }
        }
        Ok(Self {
            select,
            from,
            where_,
        })
    }

    pub fn select(&self) -> &[Attr] {
        &self.select
    }

    pub fn from(&self) -> &[SourceTypeId] {
        &self.from
    }

    pub fn where_tree(&self) -> &WhereTree {
        &self.where_
    }

    /// Non-fatal oddities, currently repeated select entries.
    pub fn warnings(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.select
            .iter()
            .filter(|a| !seen.insert(*a))
            .map(|a| format!("duplicate select entry {a}"))
            .collect()
    }

    /// Canonical textual form; `parse_query(&q.render())` yields `q`.
    pub fn render(&self) -> String {
        let mut out = String::from("Select ");
        let select: Vec<String> = self.select.iter().map(ToString::to_string).collect();
        out.push_str(&select.join(", "));
        out.push_str(" From ");
        let from: Vec<&str> = self.from.iter().map(SourceTypeId::as_str).collect();
        out.push_str(&from.join(", "));
        out.push_str(" Where ");
        self.where_.render_top(&mut out);
        out
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn render_query(q: &Query) -> String {
    q.render()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("identifier must be non-empty")]
    EmptyIdentifier,
    #[error("select clause is empty")]
    EmptySelect,
    #[error("from clause is empty")]
    EmptyFrom,
    #[error("source type {0} listed twice in from clause")]
    DuplicateFrom(SourceTypeId),
    #[error("select references {0}, which is not in the from clause")]
    SelectOutsideFrom(SourceTypeId),
    #[error("where clause references {0}, which is not in the from clause")]
    LeafOutsideFrom(SourceTypeId),
    #[error("comparison has {0} on both sides")]
    IdenticalSides(Attr),
    #[error("select type {0} is not bound")]
    UnboundSelect(SourceTypeId),
    #[error("unknown source type {0}")]
    UnknownSourceType(SourceTypeId),
    #[error("unknown value type {0}")]
    UnknownValueType(ValueTypeId),
    #[error("network: {0}")]
    InvalidNetwork(String),
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("invalid query: {0}")]
    Semantic(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Comma,
    Dot,
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (at, tok) = lx.next()?;
            let end = tok == Tok::End;
            out.push((at, tok));
            if end {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(usize, Tok), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&b) = bytes.get(self.pos) else {
            return Ok((start, Tok::End));
        };
        let single = match b {
            b',' => Some(Tok::Comma),
            b'.' => Some(Tok::Dot),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            return Ok((start, t));
        }
        if b.is_ascii_alphabetic() || b == b'_' {
            while self.pos < bytes.len()
                && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
            {
                self.pos += 1;
            }
            return Ok((start, Tok::Ident(self.src[start..self.pos].to_string())));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError::Syntax {
            pos: start,
            message: format!("unexpected character {ch:?}"),
        })
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    i: usize,
}

const CLAUSES: [&str; 3] = ["select", "from", "where"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].1
    }

    fn pos(&self) -> usize {
        self.toks[self.i].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].1.clone();
        if t != Tok::End {
            self.i += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.peek_keyword(kw) {
            self.bump();
            return Ok(());
        }
        if let Tok::Ident(s) = self.peek() {
            if let Some(other) = CLAUSES.iter().find(|c| s.eq_ignore_ascii_case(c)) {
                return self.err(format!("clause {other:?} out of order, expected {kw:?}"));
            }
        }
        self.err(format!("expected {kw:?}"))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Ident(s) if !is_reserved(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            Tok::Ident(s) => self.err(format!("reserved word {s:?} used as identifier")),
            _ => self.err("expected identifier"),
        }
    }

    fn attr(&mut self) -> Result<Attr, ParseError> {
        let source = self.ident()?;
        self.expect(Tok::Dot, "'.'")?;
        let value = self.ident()?;
        Ok(Attr::new(
            SourceTypeId::new(source),
            ValueTypeId::new(value),
        ))
    }

    fn op(&mut self) -> Result<CompareOp, ParseError> {
        let op = match self.peek() {
            Tok::Ident(s) if s.eq_ignore_ascii_case("eq") => CompareOp::Eq,
            Tok::Ident(s) if s.eq_ignore_ascii_case("gt") => CompareOp::Gt,
            Tok::Ident(s) if s.eq_ignore_ascii_case("lt") => CompareOp::Lt,
            _ => return self.err("expected comparison operator EQ, GT or LT"),
        };
        self.bump();
        Ok(op)
    }

    fn logical(&self) -> Option<Logical> {
        if self.peek_keyword("and") {
            Some(Logical::And)
        } else if self.peek_keyword("or") {
            Some(Logical::Or)
        } else {
            None
        }
    }

    fn expr(&mut self) -> Result<WhereTree, ParseError> {
        let mut tree = self.operand()?;
        let mut level_op: Option<Logical> = None;
        while let Some(op) = self.logical() {
            if level_op.is_some_and(|prev| prev != op) {
                return self.err("mixed And/Or at one level; add parentheses");
            }
            level_op = Some(op);
            self.bump();
            let rhs = self.operand()?;
            tree = WhereTree::node(tree, op, rhs);
        }
        Ok(tree)
    }

    fn operand(&mut self) -> Result<WhereTree, ParseError> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let inner = self.expr()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(inner);
        }
        let lhs = self.attr()?;
        let op = self.op()?;
        let rhs = self.attr()?;
        Ok(WhereTree::Leaf(Comparison::new(lhs, op, rhs)))
    }

    fn query(&mut self) -> Result<Query, ParseError> {
        self.expect_keyword("select")?;
        let mut select = vec![self.attr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            select.push(self.attr()?);
        }
        self.expect_keyword("from")?;
        let mut from = vec![SourceTypeId::new(self.ident()?)];
        while *self.peek() == Tok::Comma {
            self.bump();
            from.push(SourceTypeId::new(self.ident()?));
        }
        self.expect_keyword("where")?;
        let tree = self.expr()?;
        if *self.peek() != Tok::End {
            return self.err("unexpected trailing input");
        }
        Ok(Query::new(select, from, tree)?)
    }
}

fn is_reserved(s: &str) -> bool {
    ["select", "from", "where", "and", "or", "eq", "gt", "lt"]
        .iter()
        .any(|k| s.eq_ignore_ascii_case(k))
}

pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let toks = Lexer::tokens(text)?;
    Parser { toks, i: 0 }.query()
}

impl std::str::FromStr for Query {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_query(s)
    }
}

// ---------------------------------------------------------------------------
// Networks

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceInstance {
    pub id: InstanceId,
    pub source_type: SourceTypeId,
    /// 1-based position within its type; `A3` is the third `A` instance.
    pub ordinal: u32,
    values: Vec<i64>,
}

impl SourceInstance {
    pub fn label(&self) -> String {
        format!("{}{}", self.source_type, self.ordinal)
    }

    /// Values in catalog order.
    pub fn values(&self) -> &[i64] {
        &self.values
    }
}

/// Catalog of source and value types plus every concrete instance.
///
/// Instances are grouped by type: ids of one type are contiguous and ordered.
#[derive(Debug, Clone)]
pub struct Network {
    source_types: Vec<SourceTypeId>,
    value_types: Vec<ValueTypeId>,
    instances: Vec<SourceInstance>,
    by_type: Vec<Vec<InstanceId>>,
    type_index: HashMap<SourceTypeId, usize>,
    value_index: HashMap<ValueTypeId, usize>,
}

impl Network {
    /// `rows[t]` holds one value vector per instance of `source_types[t]`.
    pub fn new(
        source_types: Vec<SourceTypeId>,
        value_types: Vec<ValueTypeId>,
        rows: Vec<Vec<Vec<i64>>>,
    ) -> Result<Self, ModelError> {
        if rows.len() != source_types.len() {
            return Err(ModelError::InvalidNetwork(format!(
                "{} source types but {} instance groups",
                source_types.len(),
                rows.len()
            )));
        }
        let mut type_index = HashMap::new();
        for (i, t) in source_types.iter().enumerate() {
            if type_index.insert(t.clone(), i).is_some() {
                return Err(ModelError::InvalidNetwork(format!(
                    "duplicate source type {t}"
                )));
            }
        }
        let mut value_index = HashMap::new();
        for (i, v) in value_types.iter().enumerate() {
            if value_index.insert(v.clone(), i).is_some() {
                return Err(ModelError::InvalidNetwork(format!(
                    "duplicate value type {v}"
                )));
            }
        }
        let mut instances = Vec::new();
        let mut by_type = Vec::with_capacity(source_types.len());
        for (t, group) in rows.into_iter().enumerate() {
            let mut ids = Vec::with_capacity(group.len());
            for (k, values) in group.into_iter().enumerate() {
                if values.len() != value_types.len() {
                    return Err(ModelError::InvalidNetwork(format!(
                        "instance {}{} has {} values, catalog has {}",
                        source_types[t],
                        k + 1,
                        values.len(),
                        value_types.len()
                    )));
                }
                let id = InstanceId(instances.len() as u32);
                instances.push(SourceInstance {
                    id,
                    source_type: source_types[t].clone(),
                    ordinal: k as u32 + 1,
                    values,
                });
                ids.push(id);
            }
            by_type.push(ids);
        }
        Ok(Self {
            source_types,
            value_types,
            instances,
            by_type,
            type_index,
            value_index,
        })
    }

    pub fn source_types(&self) -> &[SourceTypeId] {
        &self.source_types
    }

    pub fn value_types(&self) -> &[ValueTypeId] {
        &self.value_types
    }

    pub fn instances(&self) -> &[SourceInstance] {
        &self.instances
    }

    pub fn instance(&self, id: InstanceId) -> &SourceInstance {
        &self.instances[id.index()]
    }

    pub fn type_index(&self, t: &SourceTypeId) -> Option<usize> {
        self.type_index.get(t).copied()
    }

    pub fn value_index(&self, v: &ValueTypeId) -> Option<usize> {
        self.value_index.get(v).copied()
    }

    /// Instances of a type, in id order. Empty for unknown types.
    pub fn instances_of(&self, t: &SourceTypeId) -> &[InstanceId] {
        self.type_index(t).map_or(&[], |i| &self.by_type[i])
    }

    pub fn instances_of_index(&self, t: usize) -> &[InstanceId] {
        &self.by_type[t]
    }

    pub fn value(&self, id: InstanceId, v: &ValueTypeId) -> Option<i64> {
        let vi = self.value_index(v)?;
        Some(self.instances[id.index()].values[vi])
    }

    pub fn value_at(&self, id: InstanceId, value_index: usize) -> i64 {
        self.instances[id.index()].values[value_index]
    }

    pub fn label(&self, id: InstanceId) -> String {
        self.instance(id).label()
    }

    /// Checks every attribute in `q` against the catalog.
    pub fn check_query(&self, q: &Query) -> Result<(), ModelError> {
        let attrs = q.select().iter().chain(
            q.where_tree()
                .leaves()
                .into_iter()
                .flat_map(|c| [&c.lhs, &c.rhs]),
        );
        for t in q.from() {
            self.type_index(t)
                .ok_or_else(|| ModelError::UnknownSourceType(t.clone()))?;
        }
        for a in attrs {
            self.value_index(&a.value)
                .ok_or_else(|| ModelError::UnknownValueType(a.value.clone()))?;
        }
        Ok(())
    }
}

/// Result of answering one query.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Answer {
    /// One instance per bound source type.
    pub bindings: BTreeMap<SourceTypeId, InstanceId>,
    /// Sum of the selected values; 0 when unsatisfied.
    pub value: i64,
    pub satisfied: bool,
}

impl Answer {
    pub fn unsatisfied() -> Self {
        Self::default()
    }
}

/// Sum of the bound instances' values over the select list.
pub fn answer_value(
    bindings: &BTreeMap<SourceTypeId, InstanceId>,
    q: &Query,
    net: &Network,
) -> Result<i64, ModelError> {
    q.select().iter().try_fold(0i64, |acc, a| {
        let id = bindings
            .get(&a.source)
            .ok_or_else(|| ModelError::UnboundSelect(a.source.clone()))?;
        let v = net
            .value(*id, &a.value)
            .ok_or_else(|| ModelError::UnknownValueType(a.value.clone()))?;
        Ok(acc + v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER_QUERY: &str = "Select A.Value1, B.Value2 From A, B, C Where (A.Value3 EQ B.Value4) And (B.Value2 EQ C.Value1 Or B.Value3 EQ C.Value2)";

    #[test]
    fn parses_example_query() {
        let q = parse_query(PAPER_QUERY).unwrap();
        assert_eq!(q.from().len(), 3);
        assert_eq!(q.select().len(), 2);
        assert_eq!(q.where_tree().leaf_count(), 3);
        match q.where_tree() {
            WhereTree::Node {
                logical: Logical::And,
                right,
                ..
            } => {
                assert!(matches!(
                    right.as_ref(),
                    WhereTree::Node {
                        logical: Logical::Or,
                        ..
                    }
                ));
            }
            other => panic!("unexpected tree {other:?}"),
        }
    }

    #[test]
    fn renders_example_query_verbatim() {
        let q = parse_query(PAPER_QUERY).unwrap();
        assert_eq!(q.render(), PAPER_QUERY);
    }

    #[test]
    fn same_type_gt_leaf() {
        let q = parse_query("Select A.Value1 From A Where (A.Value2 GT A.Value3)").unwrap();
        let leaves = q.where_tree().leaves();
        assert_eq!(leaves.len(), 1);
        assert_eq!(leaves[0].op, CompareOp::Gt);
        assert!(leaves[0].is_same_type());
    }

    #[test]
    fn select_outside_from_is_semantic_error() {
        let err = parse_query("Select B.Value1 From A Where (A.Value1 EQ A.Value2)").unwrap_err();
        assert_eq!(
            err,
            ParseError::Semantic(ModelError::SelectOutsideFrom("B".into()))
        );
    }

    #[test]
    fn single_leaf_render() {
        let q = Query::new(
            vec![Attr::new("A", "Value1")],
            vec!["A".into(), "B".into()],
            WhereTree::Leaf(Comparison::new(
                Attr::new("A", "Value1"),
                CompareOp::Eq,
                Attr::new("B", "Value1"),
            )),
        )
        .unwrap();
        assert_eq!(
            q.render(),
            "Select A.Value1 From A, B Where (A.Value1 EQ B.Value1)"
        );
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let q = parse_query(
            "select A.Value1 from A, B where (A.Value1 eq B.Value1) or (A.Value2 lt B.Value2)",
        )
        .unwrap();
        assert_eq!(
            q.render(),
            "Select A.Value1 From A, B Where (A.Value1 EQ B.Value1) Or (A.Value2 LT B.Value2)"
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_query("Select A.Value1 From A Where (A.Value1 XX A.Value2)") {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos, 39),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_query("From A Select A.Value1 Where (A.Value1 EQ A.Value2)"),
            Err(ParseError::Syntax { pos: 0, .. })
        ));
        assert!(matches!(
            parse_query("Select A.Value1 From A Where (A.Value1 EQ A.Value2"),
            Err(ParseError::Syntax { .. })
        ));
    }

    #[test]
    fn mixed_connectives_need_parentheses() {
        let err = parse_query(
            "Select A.Value1 From A, B Where A.Value1 EQ B.Value1 And A.Value2 EQ B.Value2 Or A.Value3 EQ B.Value3",
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }));
        let chained = parse_query(
            "Select A.Value1 From A, B Where A.Value1 EQ B.Value1 And A.Value2 EQ B.Value2 And A.Value3 EQ B.Value3",
        )
        .unwrap();
        assert_eq!(parse_query(&chained.render()).unwrap(), chained);
    }

    #[test]
    fn rejects_identical_sides() {
        assert!(matches!(
            parse_query("Select A.Value1 From A Where (A.Value1 EQ A.Value1)"),
            Err(ParseError::Semantic(ModelError::IdenticalSides(_)))
        ));
    }

    #[test]
    fn duplicate_select_entries_warn() {
        let q =
            parse_query("Select A.Value1, A.Value1 From A Where (A.Value1 EQ A.Value2)").unwrap();
        assert_eq!(q.warnings().len(), 1);
    }

    fn two_by_two() -> Network {
        Network::new(
            vec!["A".into(), "B".into()],
            vec!["Value1".into(), "Value2".into()],
            vec![vec![vec![7, 3], vec![3, 1]], vec![vec![2, 9], vec![5, 4]]],
        )
        .unwrap()
    }

    #[test]
    fn answer_value_single_and_sum() {
        let net = two_by_two();
        let q = parse_query("Select A.Value1 From A Where (A.Value1 GT A.Value2)").unwrap();
        let b: BTreeMap<_, _> = [("A".into(), InstanceId(0))].into();
        assert_eq!(answer_value(&b, &q, &net).unwrap(), 7);

        let q = parse_query("Select A.Value1, B.Value2 From A, B Where (A.Value1 EQ B.Value1)")
            .unwrap();
        let b: BTreeMap<_, _> = [("A".into(), InstanceId(1)), ("B".into(), InstanceId(2))].into();
        assert_eq!(answer_value(&b, &q, &net).unwrap(), 3 + 9);
    }

    #[test]
    fn answer_value_unbound_select() {
        let net = two_by_two();
        let q = parse_query("Select A.Value1, B.Value2 From A, B Where (A.Value1 EQ B.Value1)")
            .unwrap();
        let b: BTreeMap<_, _> = [("A".into(), InstanceId(1))].into();
        assert_eq!(
            answer_value(&b, &q, &net),
            Err(ModelError::UnboundSelect("B".into()))
        );
    }

    #[test]
    fn network_grouping_and_labels() {
        let net = two_by_two();
        assert_eq!(
            net.instances_of(&"B".into()),
            &[InstanceId(2), InstanceId(3)]
        );
        assert_eq!(net.label(InstanceId(3)), "B2");
        assert_eq!(net.value(InstanceId(3), &"Value2".into()), Some(4));
    }

    #[test]
    fn network_rejects_ragged_rows() {
        let err = Network::new(
            vec!["A".into()],
            vec!["Value1".into()],
            vec![vec![vec![1, 2]]],
        );
        assert!(matches!(err, Err(ModelError::InvalidNetwork(_))));
    }
}
