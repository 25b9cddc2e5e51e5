//! `.cid` source format: lexer, parser and canonical serializer, plus the
//! event-expression and `.ct` transform-script grammars.
//!
//! The grammar is documented in `docs/dsl.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use num_bigint::BigInt;
use thiserror::Error;

use crate::diagram::{Annotation, Diagram, FunctionTable, Kernel, NatId, Node, NodeKind};
use crate::error::{Error, Result};
use crate::inference::{CmpOp, Expr, Term};
use crate::template::{DiagramTemplate, Horizon, NodePattern, NodeRef};
use crate::transform::Transform;
use crate::value::{format_rational, parse_int, value_tuples, Domain, Rational, Value};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{line}:{column}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(String),
    Punct(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Int(s) => write!(f, "`{s}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    /// Byte offset just past the token, for adjacency checks.
    end: usize,
    start: usize,
}

const PUNCTS: [&str; 22] = [
    "->", "<=", ">=", "!=", "==", "&&", "||", "{", "}", "(", ")", ",", ";", "=", "|", "/", "+", "-", "*", "<", ">", "!",
];

fn lex(src: &str) -> std::result::Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let (sl, sc) = (line, col);
        let tok = if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            Tok::Ident(src[start..i].to_string())
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'^' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            Tok::Int(src[start..i].to_string())
        } else if let Some(p) = PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            i += p.len();
            Tok::Punct(p)
        } else {
            let ch = src[i..].chars().next().unwrap();
            return Err(ParseError {
                line,
                column: col,
                expected: "a token".into(),
                found: format!("`{ch}`"),
            });
        };
        col += src[start..i].chars().count();
        out.push(Token {
            tok,
            line: sl,
            col: sc,
            end: i,
            start,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
        end: i,
        start: i,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = std::result::Result<T, ParseError>;

impl Parser {
    fn new(src: &str) -> PResult<Parser> {
        Ok(Parser { toks: lex(src)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, tok: &Token, expected: impl Into<String>) -> ParseError {
        ParseError {
            line: tok.line,
            column: tok.col,
            expected: expected.into(),
            found: tok.tok.to_string(),
        }
    }

    fn err(&self, expected: impl Into<String>) -> ParseError {
        self.err_at(self.here(), expected)
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.err(format!("`{p}`")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("`{kw}`")))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Token)> {
        match self.peek().clone() {
            Tok::Ident(s) => Ok((s, self.bump())),
            _ => Err(self.err(what)),
        }
    }

    fn int(&mut self) -> PResult<BigInt> {
        let neg = self.eat_punct("-");
        match self.peek().clone() {
            Tok::Int(s) => {
                let t = self.bump();
                let n = parse_int(&s).ok_or_else(|| self.err_at(&t, "an integer"))?;
                Ok(if neg { -n } else { n })
            }
            _ => Err(self.err("an integer")),
        }
    }

    fn value(&mut self) -> PResult<Value> {
        match self.peek() {
            Tok::Ident(_) => Ok(Value::Sym(self.ident("a value")?.0)),
            Tok::Int(_) => Ok(Value::Int(self.int()?)),
            Tok::Punct("-") => Ok(Value::Int(self.int()?)),
            _ => Err(self.err("a value")),
        }
    }

    fn rational(&mut self) -> PResult<Rational> {
        let here = self.here().clone();
        let n = self.int()?;
        let d = if self.eat_punct("/") { self.int()? } else { BigInt::from(1) };
        if d == BigInt::from(0) {
            return Err(self.err_at(&here, "a non-zero denominator"));
        }
        Ok(Rational::new(n, d))
    }

    fn list<T>(&mut self, open: &str, close: &str, mut item: impl FnMut(&mut Self) -> PResult<T>) -> PResult<Vec<T>> {
        self.expect_punct(open)?;
        let mut out = Vec::new();
        if self.eat_punct(close) {
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.eat_punct(close) {
                return Ok(out);
            }
            self.expect_punct(",")?;
        }
    }

    /// `S_0`, or inside a repeat block `S_{t}`, `S_{t+1}`, `S_{t-1}`.
    fn node_ref(&mut self, index_var: Option<&str>) -> PResult<NodeRef> {
        let (name, tok) = self.ident("a node id")?;
        let adjacent = self.is_punct("{") && self.here().start == tok.end;
        if !adjacent {
            return Ok(NodeRef::Fixed(name));
        }
        let Some(stem) = name.strip_suffix('_').filter(|s| !s.is_empty()) else {
            return Err(self.err_at(&tok, "an indexed id of the form `stem_{t}`"));
        };
        let Some(var) = index_var else {
            return Err(self.err("`;` (indexed ids are only allowed inside `repeat`)"));
        };
        self.bump();
        let (v, vt) = self.ident("the repeat index")?;
        if v != var {
            return Err(self.err_at(&vt, format!("index variable `{var}`")));
        }
        let offset = if self.eat_punct("+") {
            self.small_int()?
        } else if self.eat_punct("-") {
            -self.small_int()?
        } else {
            0
        };
        self.expect_punct("}")?;
        Ok(NodeRef::at(stem, offset))
    }

    fn small_int(&mut self) -> PResult<i64> {
        let here = self.here().clone();
        let n = self.int()?;
        i64::try_from(n).map_err(|_| self.err_at(&here, "a small integer"))
    }

    fn annotation(&mut self) -> PResult<Annotation> {
        let (kw, t) = self.ident("an annotation (`const`, `det`, `stoch` or `policy`)")?;
        Ok(match kw.as_str() {
            "const" => Annotation::Const(self.value()?),
            "det" => Annotation::Det(self.ident("a table name")?.0),
            "stoch" => Annotation::Stoch(self.ident("a kernel name")?.0),
            "policy" => Annotation::Policy(self.ident("a policy name")?.0),
            _ => return Err(self.err_at(&t, "an annotation (`const`, `det`, `stoch` or `policy`)")),
        })
    }

    /// Body of a node declaration after the `node` keyword.
    fn node_decl(&mut self, index_var: Option<&str>) -> PResult<RawNode> {
        let id_tok = self.here().clone();
        let id = self.node_ref(index_var)?;
        let mut kind = None;
        let mut domain = None;
        let mut parents = Vec::new();
        let mut ann = None;
        let mut index = None;
        while !self.is_punct(";") {
            let (key, kt) = self.ident("a node attribute or `;`")?;
            self.expect_punct("=")?;
            match key.as_str() {
                "kind" => {
                    let (k, t) = self.ident("a node kind")?;
                    kind = Some(k.parse::<NodeKind>().map_err(|_| self.err_at(&t, "`chance`, `decision` or `utility`"))?);
                }
                "domain" => domain = Some(self.ident("a domain name")?),
                "parents" => parents = self.list("(", ")", |p| p.node_ref(index_var))?,
                "ann" => ann = Some(self.annotation()?),
                "index" => index = Some(self.small_int()?),
                _ => return Err(self.err_at(&kt, "`kind`, `domain`, `parents`, `ann` or `index`")),
            }
        }
        let semi = self.here().clone();
        self.bump();
        let missing = |what: &str| self.err_at(&semi, format!("`{what}=` before `;`"));
        Ok(RawNode {
            id,
            id_tok,
            kind: kind.ok_or_else(|| missing("kind"))?,
            domain: domain.ok_or_else(|| missing("domain"))?,
            parents,
            ann: ann.ok_or_else(|| missing("ann"))?,
            index,
        })
    }

    fn domain_decl(&mut self) -> PResult<(String, Token, Vec<Value>)> {
        let (name, t) = self.ident("a domain name")?;
        self.expect_punct("=")?;
        let vals = self.list("{", "}", |p| p.value())?;
        self.expect_punct(";")?;
        Ok((name, t, vals))
    }

    fn signature(&mut self) -> PResult<(Vec<(String, Token)>, (String, Token))> {
        let ins = self.list("(", ")", |p| p.ident("a domain name"))?;
        self.expect_punct("->")?;
        let out = self.ident("a domain name")?;
        Ok((ins, out))
    }

    fn table_decl(&mut self) -> PResult<RawTable> {
        let (name, _) = self.ident("a table name")?;
        let (ins, out) = self.signature()?;
        self.expect_punct("{")?;
        let mut rows = Vec::new();
        while !self.eat_punct("}") {
            let key = self.list("(", ")", |p| p.value())?;
            self.expect_punct("->")?;
            let v = self.value()?;
            self.expect_punct(";")?;
            rows.push((key, v));
        }
        Ok(RawTable { name, ins, out, rows })
    }

    fn kernel_decl(&mut self) -> PResult<RawKernel> {
        let (name, _) = self.ident("a kernel name")?;
        let (ins, out) = self.signature()?;
        self.expect_punct("{")?;
        let mut rows = Vec::new();
        while !self.eat_punct("}") {
            self.expect_punct("(")?;
            let v = self.value()?;
            let mut key = Vec::new();
            if self.eat_punct("|") {
                if !self.is_punct(")") {
                    loop {
                        key.push(self.value()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
            }
            self.expect_punct(")")?;
            self.expect_punct("=")?;
            let p = self.rational()?;
            self.expect_punct(";")?;
            rows.push((key, v, p));
        }
        Ok(RawKernel { name, ins, out, rows })
    }
}

struct RawNode {
    id: NodeRef,
    id_tok: Token,
    kind: NodeKind,
    domain: (String, Token),
    parents: Vec<NodeRef>,
    ann: Annotation,
    index: Option<i64>,
}

struct RawTable {
    name: String,
    ins: Vec<(String, Token)>,
    out: (String, Token),
    rows: Vec<(Vec<Value>, Value)>,
}

struct RawKernel {
    name: String,
    ins: Vec<(String, Token)>,
    out: (String, Token),
    rows: Vec<(Vec<Value>, Value, Rational)>,
}

/// Library declarations shared by diagrams, templates and scripts.
#[derive(Default)]
struct Library {
    domains: BTreeMap<String, Domain>,
    tables: Vec<RawTable>,
    kernels: Vec<RawKernel>,
}

impl Library {
    fn resolve(&self, p: &Parser, extra: &BTreeMap<String, Domain>, name: &(String, Token)) -> PResult<Domain> {
        self.domains
            .get(&name.0)
            .or_else(|| extra.get(&name.0))
            .cloned()
            .ok_or_else(|| p.err_at(&name.1, "a declared domain"))
    }

    fn build(
        &self,
        p: &Parser,
        extra: &BTreeMap<String, Domain>,
    ) -> PResult<(BTreeMap<String, FunctionTable>, BTreeMap<String, Kernel>)> {
        let mut tables = BTreeMap::new();
        for t in &self.tables {
            let ins = t.ins.iter().map(|n| self.resolve(p, extra, n)).collect::<PResult<Vec<_>>>()?;
            let out = self.resolve(p, extra, &t.out)?;
            let mut tab = FunctionTable::new(t.name.clone(), ins, out);
            for (k, v) in &t.rows {
                tab.set(k.clone(), v.clone());
            }
            tables.insert(t.name.clone(), tab);
        }
        let mut kernels = BTreeMap::new();
        for k in &self.kernels {
            let ins = k.ins.iter().map(|n| self.resolve(p, extra, n)).collect::<PResult<Vec<_>>>()?;
            let out = self.resolve(p, extra, &k.out)?;
            let mut ker = Kernel::new(k.name.clone(), ins, out);
            for (key, v, pr) in &k.rows {
                ker.add(key.clone(), v.clone(), pr.clone());
            }
            kernels.insert(k.name.clone(), ker);
        }
        Ok((tables, kernels))
    }
}

/// Result of parsing a `.cid` file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Diagram(Diagram),
    Template(DiagramTemplate),
}

impl Source {
    pub fn label(&self) -> &str {
        match self {
            Source::Diagram(d) => &d.label,
            Source::Template(t) => &t.label,
        }
    }
}

/// Syntax-only parse of a `.cid` source. Semantic checks are left to
/// [`Diagram::validate`].
pub fn parse(src: &str) -> std::result::Result<Source, ParseError> {
    let mut p = Parser::new(src)?;
    let is_template = match p.peek() {
        Tok::Ident(s) if s == "diagram" => false,
        Tok::Ident(s) if s == "template" => true,
        _ => return Err(p.err("`diagram` or `template`")),
    };
    p.bump();
    let (label, _) = p.ident("a label")?;
    p.expect_punct("{")?;
    let mut lib = Library::default();
    let mut gamma = None;
    let mut horizon = None;
    let mut nodes: Vec<RawNode> = Vec::new();
    let mut patterns: Vec<RawNode> = Vec::new();
    let mut repeat_seen = false;
    while !p.eat_punct("}") {
        let head = p.here().clone();
        let (kw, _) = p.ident("a declaration or `}`")?;
        match kw.as_str() {
            "gamma" => {
                gamma = Some(p.rational()?);
                p.expect_punct(";")?;
            }
            "horizon" => {
                horizon = Some(if p.is_kw("infinite") {
                    if !is_template {
                        return Err(p.err("a step count (only templates may be infinite)"));
                    }
                    p.bump();
                    Horizon::Infinite
                } else {
                    let here = p.here().clone();
                    let n = p.small_int()?;
                    Horizon::Finite(u32::try_from(n).map_err(|_| p.err_at(&here, "a non-negative step count"))?)
                });
                p.expect_punct(";")?;
            }
            "domain" => {
                let (name, t, vals) = p.domain_decl()?;
                if lib.domains.contains_key(&name) {
                    return Err(p.err_at(&t, "a new domain name"));
                }
                lib.domains.insert(name.clone(), Domain::new(name, vals));
            }
            "table" => {
                let t = p.table_decl()?;
                if lib.tables.iter().any(|x| x.name == t.name) {
                    return Err(p.err_at(&head, "a new table name"));
                }
                lib.tables.push(t);
            }
            "kernel" => {
                let k = p.kernel_decl()?;
                if lib.kernels.iter().any(|x| x.name == k.name) {
                    return Err(p.err_at(&head, "a new kernel name"));
                }
                lib.kernels.push(k);
            }
            "node" => nodes.push(p.node_decl(None)?),
            "repeat" if is_template && !repeat_seen => {
                repeat_seen = true;
                let (var, _) = p.ident("an index variable")?;
                p.expect_punct("{")?;
                while !p.eat_punct("}") {
                    p.expect_kw("node")?;
                    patterns.push(p.node_decl(Some(&var))?);
                }
            }
            _ => {
                let what = if is_template && !repeat_seen {
                    "`gamma`, `horizon`, `domain`, `table`, `kernel`, `node` or `repeat`"
                } else {
                    "`gamma`, `horizon`, `domain`, `table`, `kernel` or `node`"
                };
                return Err(p.err_at(&head, what));
            }
        }
    }
    if !matches!(p.peek(), Tok::Eof) {
        return Err(p.err("end of input"));
    }
    let (tables, kernels) = lib.build(&p, &BTreeMap::new())?;
    let mut base = BTreeMap::new();
    for n in nodes {
        let NodeRef::Fixed(id) = &n.id else { unreachable!() };
        let node = Node {
            id: id.clone(),
            kind: n.kind,
            domain: n.domain.0.clone(),
            parents: n
                .parents
                .iter()
                .map(|r| match r {
                    NodeRef::Fixed(s) => s.clone(),
                    NodeRef::Indexed { .. } => unreachable!(),
                })
                .collect(),
            annotation: n.ann.clone(),
            index: n.index,
        };
        if base.insert(id.clone(), node).is_some() {
            return Err(p.err_at(&n.id_tok, "a new node id"));
        }
    }
    if is_template {
        let horizon = horizon.ok_or_else(|| p.err("`horizon` declaration in template"))?;
        let mut tpl = DiagramTemplate::new(label, horizon);
        tpl.gamma = gamma.unwrap_or_else(|| Rational::from_integer(1.into()));
        tpl.domains = lib.domains;
        tpl.tables = tables;
        tpl.kernels = kernels;
        tpl.base = base;
        let mut seen = BTreeSet::new();
        for n in patterns {
            let (stem, offset) = match &n.id {
                NodeRef::Indexed { stem, offset } => (stem.clone(), *offset),
                NodeRef::Fixed(_) => return Err(p.err_at(&n.id_tok, "an indexed id such as `S_{t}`")),
            };
            if !seen.insert((stem.clone(), offset)) || n.index.is_some() {
                return Err(p.err_at(&n.id_tok, "a new pattern id without `index=`"));
            }
            tpl.patterns.push(NodePattern {
                stem,
                offset,
                kind: n.kind,
                domain: n.domain.0,
                parents: n.parents,
                annotation: n.ann,
            });
        }
        Ok(Source::Template(tpl))
    } else {
        let mut d = Diagram::new(label);
        if let Some(g) = gamma {
            d.gamma = g;
        }
        d.horizon = match horizon {
            Some(Horizon::Finite(n)) => Some(n),
            _ => None,
        };
        d.domains = lib.domains;
        d.tables = tables;
        d.kernels = kernels;
        d.nodes = base;
        Ok(Source::Diagram(d))
    }
}

/// Parses and validates a diagram source.
pub fn load_diagram(src: &str) -> Result<Diagram> {
    match parse(src)? {
        Source::Diagram(d) => d.validated(),
        Source::Template(t) => Err(Error::Template(format!("`{}` is a template, not a diagram", t.label))),
    }
}

/// Parses and validates a template source.
pub fn load_template(src: &str) -> Result<DiagramTemplate> {
    match parse(src)? {
        Source::Template(t) => {
            t.validate()?;
            Ok(t)
        }
        Source::Diagram(d) => Err(Error::Template(format!("`{}` is a diagram, not a template", d.label))),
    }
}

fn write_library(
    out: &mut String,
    domains: &BTreeMap<String, Domain>,
    tables: &BTreeMap<String, FunctionTable>,
    kernels: &BTreeMap<String, Kernel>,
) {
    for d in domains.values() {
        let vals: Vec<String> = d.values().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "  domain {} = {{{}}};", d.name(), vals.join(", "));
    }
    for t in tables.values() {
        let _ = writeln!(out, "  table {}{} {{", t.name, sig_text(&t.inputs, &t.output));
        let mut rows: Vec<(&Vec<Value>, &Value)> = t.rows().collect();
        rows.sort_by_key(|(k, _)| canonical_key(k, &t.inputs));
        for (k, v) in rows {
            let _ = writeln!(out, "    {} -> {v};", tuple_text(k));
        }
        out.push_str("  }\n");
    }
    for k in kernels.values() {
        let _ = writeln!(out, "  kernel {}{} {{", k.name, sig_text(&k.inputs, &k.output));
        let mut rows: Vec<(&Vec<Value>, &Value, &Rational)> = k.entries().collect();
        rows.sort_by_key(|(key, v, _)| (canonical_key(key, &k.inputs), canonical_key(std::slice::from_ref(*v), std::slice::from_ref(&k.output))));
        for (key, v, p) in rows {
            let ins: Vec<String> = key.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "    ({v} | {}) = {};", ins.join(", "), format_rational(p));
        }
        out.push_str("  }\n");
    }
}

fn canonical_key(key: &[Value], doms: &[Domain]) -> Vec<(usize, Value)> {
    key.iter()
        .enumerate()
        .map(|(i, v)| (doms.get(i).and_then(|d| d.index_of(v)).unwrap_or(usize::MAX), v.clone()))
        .collect()
}

fn sig_text(ins: &[Domain], out: &Domain) -> String {
    let names: Vec<&str> = ins.iter().map(|d| d.name()).collect();
    format!("({}) -> {}", names.join(", "), out.name())
}

fn tuple_text(vals: &[Value]) -> String {
    let parts: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(", "))
}

fn ann_text(a: &Annotation) -> String {
    match a {
        Annotation::Const(v) => format!("const {v}"),
        Annotation::Det(t) => format!("det {t}"),
        Annotation::Stoch(k) => format!("stoch {k}"),
        Annotation::Policy(p) => format!("policy {p}"),
    }
}

fn node_text(id: &str, kind: NodeKind, domain: &str, parents: &[String], ann: &Annotation, index: Option<i64>) -> String {
    let mut s = format!(
        "node {id} kind={} domain={domain} parents=({}) ann={}",
        kind.as_str(),
        parents.join(", "),
        ann_text(ann)
    );
    if let Some(i) = index {
        let _ = write!(s, " index={i}");
    }
    s.push(';');
    s
}

fn node_order(nodes: &BTreeMap<String, Node>) -> Vec<String> {
    let mut d = Diagram::new("_");
    d.nodes = nodes.clone();
    // Parents outside the map are dropped for ordering purposes only.
    for n in d.nodes.values_mut() {
        n.parents.retain(|p| nodes.contains_key(p));
    }
    d.topological_order().unwrap_or_else(|_| {
        let mut ids: Vec<String> = nodes.keys().cloned().collect();
        ids.sort_by(|a, b| NatId(a.clone()).cmp(&NatId(b.clone())));
        ids
    })
}

/// Canonical text of a diagram: library sorted by name, nodes in
/// topological order, two-space indentation.
pub fn serialize(d: &Diagram) -> String {
    let mut out = format!("diagram {} {{\n", d.label);
    let _ = writeln!(out, "  gamma {};", format_rational(&d.gamma));
    if let Some(h) = d.horizon {
        let _ = writeln!(out, "  horizon {h};");
    }
    write_library(&mut out, &d.domains, &d.tables, &d.kernels);
    for id in node_order(&d.nodes) {
        let n = &d.nodes[&id];
        let _ = writeln!(out, "  {}", node_text(&n.id, n.kind, &n.domain, &n.parents, &n.annotation, n.index));
    }
    out.push_str("}\n");
    out
}

pub fn serialize_template(t: &DiagramTemplate) -> String {
    let mut out = format!("template {} {{\n", t.label);
    let _ = writeln!(out, "  gamma {};", format_rational(&t.gamma));
    let _ = writeln!(out, "  horizon {};", t.horizon);
    write_library(&mut out, &t.domains, &t.tables, &t.kernels);
    for id in node_order(&t.base) {
        let n = &t.base[&id];
        let _ = writeln!(out, "  {}", node_text(&n.id, n.kind, &n.domain, &n.parents, &n.annotation, n.index));
    }
    out.push_str("  repeat t {\n");
    for p in &t.patterns {
        let parents: Vec<String> = p.parents.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(
            out,
            "    {}",
            node_text(&p.id_ref().to_string(), p.kind, &p.domain, &parents, &p.annotation, None)
        );
    }
    out.push_str("  }\n}\n");
    out
}

pub fn serialize_source(s: &Source) -> String {
    match s {
        Source::Diagram(d) => serialize(d),
        Source::Template(t) => serialize_template(t),
    }
}

/// Event expression such as `S_c > S_f && X = 6`.
pub fn parse_event(src: &str) -> std::result::Result<Expr, ParseError> {
    let mut p = Parser::new(src)?;
    let e = event_or(&mut p)?;
    if !matches!(p.peek(), Tok::Eof) {
        return Err(p.err("an operator or end of input"));
    }
    Ok(e)
}

/// Numeric term such as `R_0 + 2 * R_1`.
pub fn parse_term(src: &str) -> std::result::Result<Term, ParseError> {
    let mut p = Parser::new(src)?;
    let t = term_sum(&mut p)?;
    if !matches!(p.peek(), Tok::Eof) {
        return Err(p.err("an operator or end of input"));
    }
    Ok(t)
}

fn event_or(p: &mut Parser) -> PResult<Expr> {
    let mut e = event_and(p)?;
    while p.eat_punct("||") {
        e = e.or(event_and(p)?);
    }
    Ok(e)
}

fn event_and(p: &mut Parser) -> PResult<Expr> {
    let mut e = event_not(p)?;
    while p.eat_punct("&&") {
        e = e.and(event_not(p)?);
    }
    Ok(e)
}

fn event_not(p: &mut Parser) -> PResult<Expr> {
    if p.eat_punct("!") {
        return Ok(event_not(p)?.negate());
    }
    if p.is_kw("true") || p.is_kw("false") {
        let is_cmp = matches!(p.peek_at(1), Tok::Punct(q) if ["=", "==", "!=", "<", "<=", ">", ">="].contains(q));
        if !is_cmp {
            let (kw, _) = p.ident("a boolean")?;
            return Ok(Expr::Bool(kw == "true"));
        }
    }
    if p.is_punct("(") {
        let save = p.pos;
        p.bump();
        if let Ok(e) = event_or(p) {
            if p.eat_punct(")") {
                return Ok(e);
            }
        }
        p.pos = save;
    }
    let a = term_sum(p)?;
    let op = match p.peek() {
        Tok::Punct("=") | Tok::Punct("==") => CmpOp::Eq,
        Tok::Punct("!=") => CmpOp::Ne,
        Tok::Punct("<") => CmpOp::Lt,
        Tok::Punct("<=") => CmpOp::Le,
        Tok::Punct(">") => CmpOp::Gt,
        Tok::Punct(">=") => CmpOp::Ge,
        _ => return Err(p.err("a comparison operator")),
    };
    p.bump();
    let b = term_sum(p)?;
    Ok(Expr::Cmp(op, a, b))
}

fn term_sum(p: &mut Parser) -> PResult<Term> {
    let mut t = term_product(p)?;
    loop {
        if p.eat_punct("+") {
            t = Term::Add(Box::new(t), Box::new(term_product(p)?));
        } else if p.eat_punct("-") {
            t = Term::Sub(Box::new(t), Box::new(term_product(p)?));
        } else {
            return Ok(t);
        }
    }
}

fn term_product(p: &mut Parser) -> PResult<Term> {
    let mut t = term_unary(p)?;
    while p.eat_punct("*") {
        t = Term::Mul(Box::new(t), Box::new(term_unary(p)?));
    }
    Ok(t)
}

fn term_unary(p: &mut Parser) -> PResult<Term> {
    if p.eat_punct("-") {
        return Ok(Term::Neg(Box::new(term_unary(p)?)));
    }
    if p.eat_punct("(") {
        let t = term_sum(p)?;
        p.expect_punct(")")?;
        return Ok(t);
    }
    match p.peek().clone() {
        Tok::Ident(s) => {
            p.bump();
            Ok(Term::Name(s))
        }
        Tok::Int(_) => Ok(Term::Lit(Value::Int(p.int()?))),
        _ => Err(p.err("a node id, value or `(`")),
    }
}

/// Parsed `.ct` transform script.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Script {
    pub label: Option<String>,
    pub transforms: Vec<Transform>,
}

/// Parses a transform script. Table and kernel definitions resolve their
/// domains against `target` and domains defined earlier in the script.
pub fn parse_script(src: &str, target: &Diagram) -> std::result::Result<Script, ParseError> {
    let mut p = Parser::new(src)?;
    let mut label = None;
    let mut transforms = Vec::new();
    let mut extra = target.domains.clone();
    while !matches!(p.peek(), Tok::Eof) {
        let head = p.here().clone();
        let (kw, _) = p.ident("a script command")?;
        match kw.as_str() {
            "label" => {
                label = Some(p.ident("a label")?.0);
                p.expect_punct(";")?;
            }
            "reroute" => {
                let child = p.ident("a node id")?.0;
                let old_parent = p.ident("a node id")?.0;
                p.expect_punct("->")?;
                let new_parent = p.ident("a node id")?.0;
                p.expect_punct(";")?;
                transforms.push(Transform::RerouteArrow {
                    child,
                    old_parent,
                    new_parent,
                });
            }
            "delete_arrow" => {
                let child = p.ident("a node id")?.0;
                let parent = p.ident("a node id")?.0;
                p.expect_punct(";")?;
                transforms.push(Transform::DeleteArrow { child, parent });
            }
            "set" => {
                let node = p.ident("a node id")?.0;
                let annotation = p.annotation()?;
                p.expect_punct(";")?;
                transforms.push(Transform::SetAnnotation { node, annotation });
            }
            "freeze" => {
                let node = p.ident("a node id")?.0;
                let value = p.value()?;
                p.expect_punct(";")?;
                transforms.push(Transform::FreezeDecision { node, value });
            }
            "delete_node" => {
                let node = p.ident("a node id")?.0;
                p.expect_punct(";")?;
                transforms.push(Transform::DeleteNode(node));
            }
            "node" => {
                let n = p.node_decl(None)?;
                let NodeRef::Fixed(id) = n.id else { unreachable!() };
                transforms.push(Transform::AddNode(Node {
                    id,
                    kind: n.kind,
                    domain: n.domain.0,
                    parents: n.parents.iter().map(|r| r.to_string()).collect(),
                    annotation: n.ann,
                    index: n.index,
                }));
            }
            "domain" => {
                let (name, _, vals) = p.domain_decl()?;
                let d = Domain::new(name.clone(), vals);
                extra.insert(name, d.clone());
                transforms.push(Transform::DefineDomain(d));
            }
            "table" => {
                let raw = p.table_decl()?;
                let lib = Library {
                    tables: vec![raw],
                    ..Default::default()
                };
                let (mut tabs, _) = lib.build(&p, &extra)?;
                transforms.push(Transform::DefineTable(tabs.pop_first().unwrap().1));
            }
            "kernel" => {
                let raw = p.kernel_decl()?;
                let lib = Library {
                    kernels: vec![raw],
                    ..Default::default()
                };
                let (_, mut ks) = lib.build(&p, &extra)?;
                transforms.push(Transform::DefineKernel(ks.pop_first().unwrap().1));
            }
            _ => {
                return Err(p.err_at(
                    &head,
                    "`label`, `reroute`, `delete_arrow`, `set`, `freeze`, `delete_node`, `node`, `domain`, `table` or `kernel`",
                ))
            }
        }
    }
    Ok(Script { label, transforms })
}

/// Text of a transform list in script form.
pub fn serialize_script(s: &Script) -> String {
    let mut out = String::new();
    if let Some(l) = &s.label {
        let _ = writeln!(out, "label {l};");
    }
    for t in &s.transforms {
        match t {
            Transform::RerouteArrow {
                child,
                old_parent,
                new_parent,
            } => {
                let _ = writeln!(out, "reroute {child} {old_parent} -> {new_parent};");
            }
            Transform::DeleteArrow { child, parent } => {
                let _ = writeln!(out, "delete_arrow {child} {parent};");
            }
            Transform::SetAnnotation { node, annotation } => {
                let _ = writeln!(out, "set {node} {};", ann_text(annotation));
            }
            Transform::FreezeDecision { node, value } => {
                let _ = writeln!(out, "freeze {node} {value};");
            }
            Transform::DeleteNode(n) => {
                let _ = writeln!(out, "delete_node {n};");
            }
            Transform::AddNode(n) => {
                let _ = writeln!(out, "{}", node_text(&n.id, n.kind, &n.domain, &n.parents, &n.annotation, n.index));
            }
            Transform::DefineDomain(d) => {
                let vals: Vec<String> = d.values().iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "domain {} = {{{}}};", d.name(), vals.join(", "));
            }
            Transform::DefineTable(tab) => {
                let mut body = String::new();
                let mut m = BTreeMap::new();
                m.insert(tab.name.clone(), tab.clone());
                write_library(&mut body, &BTreeMap::new(), &m, &BTreeMap::new());
                out.push_str(&dedent(&body));
            }
            Transform::DefineKernel(k) => {
                let mut body = String::new();
                let mut m = BTreeMap::new();
                m.insert(k.name.clone(), k.clone());
                write_library(&mut body, &BTreeMap::new(), &BTreeMap::new(), &m);
                out.push_str(&dedent(&body));
            }
        }
    }
    out
}

fn dedent(s: &str) -> String {
    s.lines().map(|l| format!("{}\n", l.strip_prefix("  ").unwrap_or(l))).collect()
}

/// Every value tuple of the given domains rendered as source text; used by
/// the docs generator and tests.
pub fn tuples_text(doms: &[Domain]) -> Vec<String> {
    let refs: Vec<&Domain> = doms.iter().collect();
    value_tuples(&refs).map(|t| tuple_text(&t)).collect()
}
