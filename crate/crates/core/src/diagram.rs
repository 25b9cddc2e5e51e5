//! Annotated DAG world models: nodes, annotations, tables, kernels and their
//! structural validation.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::value::{format_rational, natural_cmp, split_index, value_tuples, Domain, Rational, Value};

/// Deterministic function from parent values to a node value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionTable {
    pub name: String,
    pub inputs: Vec<Domain>,
    pub output: Domain,
    rows: BTreeMap<Vec<Value>, Value>,
}

impl FunctionTable {
    pub fn new(name: impl Into<String>, inputs: Vec<Domain>, output: Domain) -> Self {
        FunctionTable {
            name: name.into(),
            inputs,
            output,
            rows: BTreeMap::new(),
        }
    }

    /// Builds a total table by evaluating `f` on every input tuple.
    pub fn from_fn(
        name: impl Into<String>,
        inputs: Vec<Domain>,
        output: Domain,
        f: impl Fn(&[Value]) -> Value,
    ) -> Self {
        let mut t = FunctionTable::new(name, inputs, output);
        let doms: Vec<&Domain> = t.inputs.iter().collect();
        let rows: Vec<_> = value_tuples(&doms).map(|tup| (f(&tup), tup)).collect();
        for (out, tup) in rows {
            t.rows.insert(tup, out);
        }
        t
    }

    pub fn arity(&self) -> usize {
        self.inputs.len()
    }

    pub fn set(&mut self, input: Vec<Value>, output: Value) {
        self.rows.insert(input, output);
    }

    pub fn get(&self, input: &[Value]) -> Option<&Value> {
        self.rows.get(input)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Vec<Value>, &Value)> {
        self.rows.iter()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn renamed(&self, name: impl Into<String>) -> Self {
        FunctionTable {
            name: name.into(),
            ..self.clone()
        }
    }

    /// Problems with totality and value ranges; empty when well formed.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let doms: Vec<&Domain> = self.inputs.iter().collect();
        for tup in value_tuples(&doms) {
            match self.rows.get(&tup) {
                None => out.push(format!("table `{}` has no row for {}", self.name, fmt_tuple(&tup))),
                Some(v) if !self.output.contains(v) => out.push(format!(
                    "table `{}` maps {} to `{v}`, outside domain `{}`",
                    self.name,
                    fmt_tuple(&tup),
                    self.output.name()
                )),
                _ => {}
            }
        }
        for key in self.rows.keys() {
            if !tuple_in(key, &self.inputs) {
                out.push(format!("table `{}` has a row for foreign input {}", self.name, fmt_tuple(key)));
            }
        }
        out
    }
}

/// Conditional distribution over an output domain given an input tuple.
/// Zero entries are never stored, so equal kernels compare equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    pub name: String,
    pub inputs: Vec<Domain>,
    pub output: Domain,
    rows: BTreeMap<Vec<Value>, BTreeMap<Value, Rational>>,
}

impl Kernel {
    pub fn new(name: impl Into<String>, inputs: Vec<Domain>, output: Domain) -> Self {
        Kernel {
            name: name.into(),
            inputs,
            output,
            rows: BTreeMap::new(),
        }
    }

    /// Builds a kernel by asking `f` for the distribution of each input tuple.
    pub fn from_fn(
        name: impl Into<String>,
        inputs: Vec<Domain>,
        output: Domain,
        f: impl Fn(&[Value]) -> Vec<(Value, Rational)>,
    ) -> Self {
        let mut k = Kernel::new(name, inputs, output);
        let doms: Vec<&Domain> = k.inputs.iter().collect();
        let rows: Vec<_> = value_tuples(&doms).map(|tup| (f(&tup), tup)).collect();
        for (dist, tup) in rows {
            for (v, p) in dist {
                k.add(tup.clone(), v, p);
            }
        }
        k
    }

    /// Point-mass kernel reproducing a function table.
    pub fn from_table(name: impl Into<String>, t: &FunctionTable) -> Self {
        Kernel::from_fn(name, t.inputs.clone(), t.output.clone(), |tup| {
            vec![(t.get(tup).expect("total table").clone(), Rational::one())]
        })
    }

    /// The same distribution for every input tuple.
    pub fn constant_row(
        name: impl Into<String>,
        inputs: Vec<Domain>,
        output: Domain,
        dist: &[(Value, Rational)],
    ) -> Self {
        Kernel::from_fn(name, inputs, output, |_| dist.to_vec())
    }

    pub fn arity(&self) -> usize {
        self.inputs.len()
    }

    pub fn set(&mut self, input: Vec<Value>, output: Value, p: Rational) {
        let row = self.rows.entry(input.clone()).or_default();
        if p.is_zero() {
            row.remove(&output);
            if row.is_empty() {
                self.rows.remove(&input);
            }
        } else {
            row.insert(output, p);
        }
    }

    /// Adds `p` to the stored probability of `output` given `input`.
    pub fn add(&mut self, input: Vec<Value>, output: Value, p: Rational) {
        let cur = self.prob(&input, &output);
        self.set(input, output, cur + p);
    }

    pub fn prob(&self, input: &[Value], output: &Value) -> Rational {
        self.rows
            .get(input)
            .and_then(|r| r.get(output))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    /// Non-zero entries of one row in output-value order.
    pub fn row(&self, input: &[Value]) -> impl Iterator<Item = (&Value, &Rational)> {
        self.rows.get(input).into_iter().flat_map(|r| r.iter())
    }

    /// Row as a dense vector in canonical output order.
    pub fn dense_row(&self, input: &[Value]) -> Vec<Rational> {
        self.output.values().iter().map(|v| self.prob(input, v)).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<Value>, &Value, &Rational)> {
        self.rows
            .iter()
            .flat_map(|(k, r)| r.iter().map(move |(v, p)| (k, v, p)))
    }

    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Kernel {
            name: name.into(),
            ..self.clone()
        }
    }

    /// Support of the kernel is a single value on every row.
    pub fn is_deterministic(&self) -> bool {
        self.rows.values().all(|r| r.len() == 1)
    }

    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (key, row) in &self.rows {
            if !tuple_in(key, &self.inputs) {
                out.push(format!("kernel `{}` has a row for foreign input {}", self.name, fmt_tuple(key)));
            }
            for (v, p) in row {
                if !self.output.contains(v) {
                    out.push(format!(
                        "kernel `{}` puts mass on `{v}`, outside domain `{}`",
                        self.name,
                        self.output.name()
                    ));
                }
                if p.is_negative() || *p > Rational::one() {
                    out.push(format!(
                        "kernel `{}` has probability {} outside [0,1] at {}",
                        self.name,
                        format_rational(p),
                        fmt_tuple(key)
                    ));
                }
            }
        }
        let doms: Vec<&Domain> = self.inputs.iter().collect();
        for tup in value_tuples(&doms) {
            let total: Rational = self.row(&tup).map(|(_, p)| p.clone()).sum();
            if !total.is_one() {
                out.push(format!(
                    "kernel `{}` row {} sums to {}, not 1",
                    self.name,
                    fmt_tuple(&tup),
                    format_rational(&total)
                ));
            }
        }
        out
    }
}

fn tuple_in(t: &[Value], doms: &[Domain]) -> bool {
    t.len() == doms.len() && t.iter().zip(doms).all(|(v, d)| d.contains(v))
}

pub(crate) fn fmt_tuple(t: &[Value]) -> String {
    let parts: Vec<String> = t.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(","))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Annotation {
    Const(Value),
    Det(String),
    Stoch(String),
    Policy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Chance,
    Decision,
    Utility,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Chance => "chance",
            NodeKind::Decision => "decision",
            NodeKind::Utility => "utility",
        }
    }
}

impl std::str::FromStr for NodeKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "chance" => Ok(NodeKind::Chance),
            "decision" => Ok(NodeKind::Decision),
            "utility" => Ok(NodeKind::Utility),
            other => Err(format!("unknown node kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    /// Name of a domain declared in the owning diagram.
    pub domain: String,
    /// Parent order is the argument order of the annotation.
    pub parents: Vec<String>,
    pub annotation: Annotation,
    /// Explicit time index for utility discounting; overrides the id suffix.
    pub index: Option<i64>,
}

impl Node {
    pub fn new(
        id: impl Into<String>,
        kind: NodeKind,
        domain: impl Into<String>,
        parents: &[&str],
        annotation: Annotation,
    ) -> Self {
        Node {
            id: id.into(),
            kind,
            domain: domain.into(),
            parents: parents.iter().map(|p| p.to_string()).collect(),
            annotation,
            index: None,
        }
    }

    pub fn chance(id: &str, domain: &str, parents: &[&str], annotation: Annotation) -> Self {
        Node::new(id, NodeKind::Chance, domain, parents, annotation)
    }

    pub fn decision(id: &str, domain: &str, parents: &[&str], policy: &str) -> Self {
        Node::new(id, NodeKind::Decision, domain, parents, Annotation::Policy(policy.into()))
    }

    pub fn utility(id: &str, domain: &str, parents: &[&str], table: &str) -> Self {
        Node::new(id, NodeKind::Utility, domain, parents, Annotation::Det(table.into()))
    }

    /// Discount exponent: explicit index, else the numeric id suffix, else 0.
    pub fn time_index(&self) -> i64 {
        self.index.or_else(|| split_index(&self.id).1).unwrap_or(0)
    }
}

/// Identifier wrapper ordered naturally (`S_2 < S_10`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct NatId(pub String);

impl Ord for NatId {
    fn cmp(&self, other: &Self) -> Ordering {
        natural_cmp(&self.0, &other.0).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for NatId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagram {
    pub label: String,
    pub gamma: Rational,
    /// Number of decision steps when the diagram was unrolled from a template.
    /// Informational; the node set is authoritative.
    pub horizon: Option<u32>,
    pub domains: BTreeMap<String, Domain>,
    pub tables: BTreeMap<String, FunctionTable>,
    pub kernels: BTreeMap<String, Kernel>,
    pub nodes: BTreeMap<String, Node>,
}

impl Diagram {
    pub fn new(label: impl Into<String>) -> Self {
        Diagram {
            label: label.into(),
            gamma: Rational::one(),
            horizon: None,
            domains: BTreeMap::new(),
            tables: BTreeMap::new(),
            kernels: BTreeMap::new(),
            nodes: BTreeMap::new(),
        }
    }

    pub fn with_gamma(mut self, gamma: Rational) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn add_domain(&mut self, d: Domain) -> &mut Self {
        self.domains.insert(d.name().to_string(), d);
        self
    }

    pub fn add_table(&mut self, t: FunctionTable) -> &mut Self {
        for d in t.inputs.iter().chain(std::iter::once(&t.output)) {
            self.domains.entry(d.name().to_string()).or_insert_with(|| d.clone());
        }
        self.tables.insert(t.name.clone(), t);
        self
    }

    pub fn add_kernel(&mut self, k: Kernel) -> &mut Self {
        for d in k.inputs.iter().chain(std::iter::once(&k.output)) {
            self.domains.entry(d.name().to_string()).or_insert_with(|| d.clone());
        }
        self.kernels.insert(k.name.clone(), k);
        self
    }

    pub fn add_node(&mut self, n: Node) -> &mut Self {
        self.nodes.insert(n.id.clone(), n);
        self
    }

    pub fn node(&self, id: &str) -> Result<&Node> {
        self.nodes.get(id).ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn node_mut(&mut self, id: &str) -> Result<&mut Node> {
        self.nodes.get_mut(id).ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn domain_of(&self, id: &str) -> Result<&Domain> {
        let n = self.node(id)?;
        self.domains
            .get(&n.domain)
            .ok_or_else(|| Error::DomainMismatch(format!("node `{id}` uses undeclared domain `{}`", n.domain)))
    }

    pub fn children(&self, id: &str) -> Vec<&str> {
        self.nodes
            .values()
            .filter(|n| n.parents.iter().any(|p| p == id))
            .map(|n| n.id.as_str())
            .collect()
    }

    pub fn ids_of_kind(&self, kind: NodeKind) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .nodes
            .values()
            .filter(|n| n.kind == kind)
            .map(|n| n.id.as_str())
            .collect();
        ids.sort_by(|a, b| natural_cmp(a, b));
        ids
    }

    pub fn decision_nodes(&self) -> Vec<&str> {
        self.ids_of_kind(NodeKind::Decision)
    }

    pub fn utility_nodes(&self) -> Vec<&str> {
        self.ids_of_kind(NodeKind::Utility)
    }

    /// Decision nodes still annotated with a free policy parameter.
    pub fn policy_nodes(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .nodes
            .values()
            .filter(|n| matches!(n.annotation, Annotation::Policy(_)))
            .map(|n| n.id.as_str())
            .collect();
        ids.sort_by(|a, b| natural_cmp(a, b));
        ids
    }

    /// Parents-before-children order; among ready nodes the naturally
    /// smallest id goes first.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let mut indeg: HashMap<&str, usize> = HashMap::new();
        let mut kids: HashMap<&str, Vec<&str>> = HashMap::new();
        for n in self.nodes.values() {
            indeg.entry(&n.id).or_insert(0);
            for p in &n.parents {
                if !self.nodes.contains_key(p) {
                    return Err(Error::UnknownNode(p.clone()));
                }
                *indeg.entry(&n.id).or_insert(0) += 1;
                kids.entry(p.as_str()).or_default().push(&n.id);
            }
        }
        let mut heap: BinaryHeap<Reverse<NatId>> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(id, _)| Reverse(NatId(id.to_string())))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(NatId(id))) = heap.pop() {
            if let Some(ks) = kids.get(id.as_str()) {
                for k in ks {
                    let d = indeg.get_mut(k).expect("known node");
                    *d -= 1;
                    if *d == 0 {
                        heap.push(Reverse(NatId(k.to_string())));
                    }
                }
            }
            order.push(id);
        }
        if order.len() != self.nodes.len() {
            let placed: BTreeSet<&str> = order.iter().map(String::as_str).collect();
            let stuck: Vec<&str> = self
                .nodes
                .keys()
                .map(String::as_str)
                .filter(|k| !placed.contains(k))
                .collect();
            return Err(Error::Invalid(ValidationReport {
                errors: vec![ValidationError {
                    node: stuck.first().map(|s| s.to_string()),
                    rule: Rule::Cycle,
                    message: format!("cycle through {}", stuck.join(", ")),
                }],
            }));
        }
        Ok(order)
    }

    /// All ancestors of the given nodes, the nodes themselves included.
    pub fn ancestors<'a>(&'a self, ids: impl IntoIterator<Item = &'a str>) -> BTreeSet<&'a str> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = ids.into_iter().collect();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(n) = self.nodes.get(id) {
                stack.extend(n.parents.iter().map(String::as_str));
            }
        }
        seen
    }

    /// All descendants of the given nodes, the nodes themselves included.
    pub fn descendants<'a>(&'a self, ids: impl IntoIterator<Item = &'a str>) -> BTreeSet<&'a str> {
        let mut kids: HashMap<&str, Vec<&str>> = HashMap::new();
        for n in self.nodes.values() {
            for p in &n.parents {
                kids.entry(p.as_str()).or_default().push(&n.id);
            }
        }
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = ids.into_iter().collect();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(ks) = kids.get(id) {
                stack.extend(ks.iter().copied());
            }
        }
        seen
    }

    /// Shared policy shape: (policy id, parent domains, action domain).
    pub fn policy_signature(&self) -> Option<(String, Vec<&Domain>, &Domain)> {
        let first = self.policy_nodes().into_iter().next()?;
        let n = &self.nodes[first];
        let pid = match &n.annotation {
            Annotation::Policy(p) => p.clone(),
            _ => unreachable!(),
        };
        let sig = n
            .parents
            .iter()
            .map(|p| self.domain_of(p))
            .collect::<Result<Vec<_>>>()
            .ok()?;
        let act = self.domains.get(&n.domain)?;
        Some((pid, sig, act))
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    /// Validates and returns the diagram, or the report as an error.
    pub fn validated(self) -> Result<Self> {
        let r = validate(&self);
        if r.is_ok() {
            Ok(self)
        } else {
            Err(Error::Invalid(r))
        }
    }

    /// Places several diagrams side by side. Node ids get `_<suffix>`
    /// appended; library entries with clashing names but different content
    /// are suffixed as well.
    pub fn disjoint_union(label: &str, parts: &[(&Diagram, &str)]) -> Result<Diagram> {
        let mut out = Diagram::new(label);
        if let Some((first, _)) = parts.first() {
            out.gamma = first.gamma.clone();
            out.horizon = first.horizon;
        }
        for (d, suffix) in parts {
            let mut table_names = HashMap::new();
            let mut kernel_names = HashMap::new();
            for (name, dom) in &d.domains {
                match out.domains.get(name) {
                    Some(existing) if existing != dom => {
                        return Err(Error::DomainMismatch(format!("domain `{name}` differs between parts")))
                    }
                    _ => {
                        out.domains.insert(name.clone(), dom.clone());
                    }
                }
            }
            for (name, t) in &d.tables {
                let new_name = match out.tables.get(name) {
                    Some(e) if e != t => format!("{name}_{suffix}"),
                    _ => name.clone(),
                };
                out.tables.insert(new_name.clone(), t.renamed(new_name.clone()));
                table_names.insert(name.clone(), new_name);
            }
            for (name, k) in &d.kernels {
                let new_name = match out.kernels.get(name) {
                    Some(e) if e != k => format!("{name}_{suffix}"),
                    _ => name.clone(),
                };
                out.kernels.insert(new_name.clone(), k.renamed(new_name.clone()));
                kernel_names.insert(name.clone(), new_name);
            }
            for n in d.nodes.values() {
                let mut m = n.clone();
                m.id = format!("{}_{suffix}", n.id);
                m.parents = n.parents.iter().map(|p| format!("{p}_{suffix}")).collect();
                if m.index.is_none() && m.kind == NodeKind::Utility {
                    m.index = Some(n.time_index());
                }
                m.annotation = match &n.annotation {
                    Annotation::Det(t) => Annotation::Det(table_names[t].clone()),
                    Annotation::Stoch(k) => Annotation::Stoch(kernel_names[k].clone()),
                    a => a.clone(),
                };
                if out.nodes.insert(m.id.clone(), m).is_some() {
                    return Err(Error::Template(format!("union produces duplicate id `{}_{suffix}`", n.id)));
                }
            }
        }
        Ok(out)
    }

    /// Like [`Diagram::disjoint_union`], but a node of a later part that has
    /// the same domain, annotation and (shared) parents as the node of the same
    /// id in the first part shares its draw: it becomes a copy of that node.
    /// This couples the worlds so that questions such as `S_c > S_f` compare
    /// outcomes of one underlying roll.
    pub fn joined(label: &str, parts: &[(&Diagram, &str)]) -> Result<Diagram> {
        let mut out = Diagram::disjoint_union(label, parts)?;
        let Some((first, fs)) = parts.first() else {
            return Ok(out);
        };
        for (d, suffix) in &parts[1..] {
            let mut shared: BTreeSet<String> = BTreeSet::new();
            for id in d.topological_order()? {
                let n = &d.nodes[&id];
                let Some(m) = first.nodes.get(&id) else { continue };
                let same = n.kind == m.kind
                    && n.kind != NodeKind::Decision
                    && n.domain == m.domain
                    && n.parents == m.parents
                    && n.parents.iter().all(|p| shared.contains(p))
                    && annotation_content(d, &n.annotation) == annotation_content(first, &m.annotation);
                if !same {
                    continue;
                }
                let dom = d.domain_of(&id)?.clone();
                let copy = format!("__same_{}", dom.name());
                out.add_table(FunctionTable::from_fn(&copy, vec![dom.clone()], dom, |t| t[0].clone()));
                let node = out.node_mut(&format!("{id}_{suffix}"))?;
                node.parents = vec![format!("{id}_{fs}")];
                node.annotation = Annotation::Det(copy);
                shared.insert(id);
            }
        }
        Ok(out)
    }
}

/// Annotation compared by library content rather than by entry name.
#[derive(PartialEq)]
enum AnnContent<'a> {
    Const(&'a Value),
    Det(Option<FunctionTable>),
    Stoch(Option<Kernel>),
    Policy(&'a str),
}

fn annotation_content<'a>(d: &Diagram, a: &'a Annotation) -> AnnContent<'a> {
    match a {
        Annotation::Const(v) => AnnContent::Const(v),
        Annotation::Det(t) => AnnContent::Det(d.tables.get(t).map(|t| t.renamed(""))),
        Annotation::Stoch(k) => AnnContent::Stoch(d.kernels.get(k).map(|k| k.renamed(""))),
        Annotation::Policy(p) => AnnContent::Policy(p),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    UnknownDomain,
    BadDomain,
    UnknownParent,
    DuplicateParent,
    Cycle,
    ConstWithParents,
    ValueOutOfDomain,
    MissingTable,
    MissingKernel,
    Arity,
    SignatureMismatch,
    TableNotTotal,
    Normalization,
    PolicyOnNonDecision,
    PolicyMismatch,
    UtilityNotNumeric,
    Gamma,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationError {
    pub node: Option<String>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "{n}: {:?}: {}", self.rule, self.message),
            None => write!(f, "{:?}: {}", self.rule, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.errors.iter().any(|e| e.rule == rule)
    }

    fn push(&mut self, node: Option<&str>, rule: Rule, message: impl Into<String>) {
        self.errors.push(ValidationError {
            node: node.map(str::to_string),
            rule,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.errors.is_empty() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.errors.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate(d: &Diagram) -> ValidationReport {
    let mut r = ValidationReport::default();
    if !d.gamma.is_positive() || d.gamma > Rational::one() {
        r.push(None, Rule::Gamma, format!("gamma {} not in (0,1]", format_rational(&d.gamma)));
    }
    for (name, dom) in &d.domains {
        if dom.name() != name {
            r.push(None, Rule::BadDomain, format!("domain registered as `{name}` is named `{}`", dom.name()));
        }
        if dom.is_empty() {
            r.push(None, Rule::BadDomain, format!("domain `{name}` is empty"));
        }
        if dom.has_duplicates() {
            r.push(None, Rule::BadDomain, format!("domain `{name}` repeats a value"));
        }
    }
    let declared = |dom: &Domain| d.domains.get(dom.name()).is_some_and(|x| x == dom);
    for t in d.tables.values() {
        for dom in t.inputs.iter().chain(std::iter::once(&t.output)) {
            if !declared(dom) {
                r.push(None, Rule::UnknownDomain, format!("table `{}` uses undeclared domain `{}`", t.name, dom.name()));
            }
        }
        for m in t.check() {
            r.push(None, Rule::TableNotTotal, m);
        }
    }
    for k in d.kernels.values() {
        for dom in k.inputs.iter().chain(std::iter::once(&k.output)) {
            if !declared(dom) {
                r.push(None, Rule::UnknownDomain, format!("kernel `{}` uses undeclared domain `{}`", k.name, dom.name()));
            }
        }
        for m in k.check() {
            r.push(None, Rule::Normalization, m);
        }
    }

    let mut policy_ids = BTreeSet::new();
    let mut signatures = BTreeSet::new();
    for n in d.nodes.values() {
        let id = Some(n.id.as_str());
        let dom = match d.domains.get(&n.domain) {
            Some(dom) => Some(dom),
            None => {
                r.push(id, Rule::UnknownDomain, format!("domain `{}` is not declared", n.domain));
                None
            }
        };
        let mut seen = BTreeSet::new();
        let mut parent_doms = Vec::new();
        for p in &n.parents {
            if !seen.insert(p) {
                r.push(id, Rule::DuplicateParent, format!("parent `{p}` listed twice"));
            }
            match d.nodes.get(p) {
                None => r.push(id, Rule::UnknownParent, format!("parent `{p}` does not exist")),
                Some(pn) => parent_doms.push(d.domains.get(&pn.domain)),
            }
        }
        let parents_resolved = parent_doms.len() == n.parents.len();
        if n.kind == NodeKind::Utility {
            if let Some(dom) = dom {
                if !dom.is_numeric() {
                    r.push(id, Rule::UtilityNotNumeric, format!("utility domain `{}` is not integer-valued", dom.name()));
                }
            }
        }
        let check_sig = |r: &mut ValidationReport, what: &str, name: &str, inputs: &[Domain], output: &Domain| {
            if inputs.len() != n.parents.len() {
                r.push(
                    id,
                    Rule::Arity,
                    format!("{what} `{name}` takes {} inputs but node has {} parents", inputs.len(), n.parents.len()),
                );
                return;
            }
            if parents_resolved {
                for (i, (pd, want)) in parent_doms.iter().zip(inputs).enumerate() {
                    if pd.is_some_and(|pd| pd != want) {
                        r.push(
                            id,
                            Rule::SignatureMismatch,
                            format!("{what} `{name}` input {i} is `{}` but parent `{}` differs", want.name(), n.parents[i]),
                        );
                    }
                }
            }
            if dom.is_some_and(|dom| dom != output) {
                r.push(id, Rule::SignatureMismatch, format!("{what} `{name}` outputs `{}`, node domain differs", output.name()));
            }
        };
        match &n.annotation {
            Annotation::Const(v) => {
                if !n.parents.is_empty() {
                    r.push(id, Rule::ConstWithParents, "constant annotation on a node with parents");
                }
                if dom.is_some_and(|dom| !dom.contains(v)) {
                    r.push(id, Rule::ValueOutOfDomain, format!("constant `{v}` outside domain `{}`", n.domain));
                }
            }
            Annotation::Det(t) => match d.tables.get(t) {
                None => r.push(id, Rule::MissingTable, format!("table `{t}` is not defined")),
                Some(tab) => check_sig(&mut r, "table", t, &tab.inputs, &tab.output),
            },
            Annotation::Stoch(k) => match d.kernels.get(k) {
                None => r.push(id, Rule::MissingKernel, format!("kernel `{k}` is not defined")),
                Some(ker) => check_sig(&mut r, "kernel", k, &ker.inputs, &ker.output),
            },
            Annotation::Policy(p) => {
                if n.kind != NodeKind::Decision {
                    r.push(id, Rule::PolicyOnNonDecision, format!("policy `{p}` on a {} node", n.kind.as_str()));
                }
                policy_ids.insert(p.clone());
                let sig: Vec<String> = n
                    .parents
                    .iter()
                    .map(|p| d.nodes.get(p).map(|pn| pn.domain.clone()).unwrap_or_default())
                    .collect();
                signatures.insert((sig, n.domain.clone()));
            }
        }
    }
    if policy_ids.len() > 1 {
        let ids: Vec<_> = policy_ids.into_iter().collect();
        r.push(None, Rule::PolicyMismatch, format!("decision nodes carry different policies: {}", ids.join(", ")));
    }
    if signatures.len() > 1 {
        r.push(None, Rule::PolicyMismatch, "decision nodes sharing a policy have different parent or action domains");
    }
    if let Err(Error::Invalid(rep)) = d.topological_order() {
        r.errors.extend(rep.errors);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::rat;

    fn dice() -> Diagram {
        let d = Domain::ints("D", 1..=6);
        let s = Domain::ints("Sum", 2..=12);
        let mut g = Diagram::new("f");
        g.add_domain(d.clone()).add_domain(s.clone());
        g.add_kernel(Kernel::constant_row(
            "Die",
            vec![],
            d.clone(),
            &d.values().iter().map(|v| (v.clone(), rat(1, 6))).collect::<Vec<_>>(),
        ));
        g.add_table(FunctionTable::from_fn("sum", vec![d.clone(), d.clone()], s, |t| {
            Value::Int(t[0].as_int().unwrap() + t[1].as_int().unwrap())
        }));
        g.add_node(Node::chance("X", "D", &[], Annotation::Stoch("Die".into())));
        g.add_node(Node::chance("Y", "D", &[], Annotation::Stoch("Die".into())));
        g.add_node(Node::chance("S", "Sum", &["X", "Y"], Annotation::Det("sum".into())));
        g
    }

    #[test]
    fn dice_validates_and_orders() {
        let g = dice();
        assert!(g.validate().is_ok(), "{}", g.validate());
        assert_eq!(g.topological_order().unwrap(), vec!["X", "Y", "S"]);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut g = dice();
        g.node_mut("S").unwrap().parents.push("S".into());
        let r = g.validate();
        assert!(r.has(Rule::Cycle));
    }

    #[test]
    fn short_row_names_the_tuple() {
        let mut g = dice();
        let mut k = g.kernels["Die"].clone();
        k.set(vec![], Value::from(6), Rational::zero());
        g.add_kernel(k);
        let r = g.validate();
        assert!(r.has(Rule::Normalization));
        assert!(r.to_string().contains("5/6"));
    }

    #[test]
    fn const_needs_no_parents() {
        let mut g = dice();
        g.node_mut("S").unwrap().annotation = Annotation::Const(Value::from(7));
        assert!(g.validate().has(Rule::ConstWithParents));
    }

    #[test]
    fn policies_must_match() {
        let mut g = dice();
        g.add_node(Node::decision("A", "D", &["X"], "pi"));
        g.add_node(Node::decision("B", "D", &["S"], "pi"));
        assert!(g.validate().has(Rule::PolicyMismatch));
        g.node_mut("B").unwrap().parents = vec!["Y".into()];
        assert!(g.validate().is_ok());
        g.node_mut("B").unwrap().annotation = Annotation::Policy("rho".into());
        assert!(g.validate().has(Rule::PolicyMismatch));
    }

    #[test]
    fn union_suffixes_ids() {
        let f = dice();
        let mut c = dice();
        c.label = "c".into();
        c.node_mut("Y").unwrap().annotation = Annotation::Const(Value::from(6));
        let j = Diagram::disjoint_union("j", &[(&f, "f"), (&c, "c")]).unwrap();
        assert_eq!(j.nodes.len(), 6);
        assert_eq!(j.node("S_c").unwrap().parents, vec!["X_c", "Y_c"]);
        assert!(j.validate().is_ok());
    }

    #[test]
    fn joined_shares_unchanged_draws() {
        use crate::inference::{CmpOp, Expr, Model, Term};
        let f = dice();
        let mut c = dice();
        c.node_mut("Y").unwrap().annotation = Annotation::Const(Value::from(6));
        let j = Diagram::joined("j", &[(&f, "f"), (&c, "c")]).unwrap();
        assert!(j.validate().is_ok(), "{}", j.validate());
        assert_eq!(j.node("X_c").unwrap().parents, vec!["X_f"]);
        assert_eq!(j.node("S_c").unwrap().parents, vec!["X_c", "Y_c"]);
        let m = Model::new(&j).unwrap();
        let e = Expr::cmp(CmpOp::Gt, Term::node("S_c"), Term::node("S_f"));
        assert_eq!(m.prob(&e).unwrap(), crate::value::rat(5, 6));
        let u = Model::new(&Diagram::disjoint_union("u", &[(&f, "f"), (&c, "c")]).unwrap()).unwrap();
        assert_eq!(u.prob(&e).unwrap(), crate::value::rat(20, 27));
    }
}
