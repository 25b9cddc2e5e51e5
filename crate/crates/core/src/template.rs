//! Repeating time-series structure: base nodes plus per-step patterns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::One;

use crate::diagram::{Annotation, Diagram, FunctionTable, Kernel, Node, NodeKind};
use crate::error::{Error, Result};
use crate::value::{Domain, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Finite(u32),
    Infinite,
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(n) => write!(f, "{n}"),
            Horizon::Infinite => f.write_str("infinite"),
        }
    }
}

/// Reference from a pattern to another node: either a fixed id such as
/// `I_0`, or `stem_{t+offset}` relative to the current step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Fixed(String),
    Indexed { stem: String, offset: i64 },
}

impl NodeRef {
    pub fn fixed(id: &str) -> Self {
        NodeRef::Fixed(id.to_string())
    }

    pub fn at(stem: &str, offset: i64) -> Self {
        NodeRef::Indexed {
            stem: stem.to_string(),
            offset,
        }
    }

    pub fn resolve(&self, t: i64) -> Result<String> {
        match self {
            NodeRef::Fixed(id) => Ok(id.clone()),
            NodeRef::Indexed { stem, offset } => {
                let k = t + offset;
                if k < 0 {
                    return Err(Error::Template(format!("`{self}` at t={t} has a negative index")));
                }
                Ok(format!("{stem}_{k}"))
            }
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Fixed(id) => f.write_str(id),
            NodeRef::Indexed { stem, offset } => match offset {
                0 => write!(f, "{stem}_{{t}}"),
                o if *o > 0 => write!(f, "{stem}_{{t+{o}}}"),
                o => write!(f, "{stem}_{{t-{}}}", -o),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodePattern {
    pub stem: String,
    pub offset: i64,
    pub kind: NodeKind,
    pub domain: String,
    pub parents: Vec<NodeRef>,
    pub annotation: Annotation,
}

impl NodePattern {
    pub fn new(stem: &str, offset: i64, kind: NodeKind, domain: &str, parents: Vec<NodeRef>, annotation: Annotation) -> Self {
        NodePattern {
            stem: stem.into(),
            offset,
            kind,
            domain: domain.into(),
            parents,
            annotation,
        }
    }

    pub fn id_ref(&self) -> NodeRef {
        NodeRef::at(&self.stem, self.offset)
    }

    pub fn instantiate(&self, t: i64) -> Result<Node> {
        Ok(Node {
            id: self.id_ref().resolve(t)?,
            kind: self.kind,
            domain: self.domain.clone(),
            parents: self.parents.iter().map(|p| p.resolve(t)).collect::<Result<_>>()?,
            annotation: self.annotation.clone(),
            index: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiagramTemplate {
    pub label: String,
    pub gamma: Rational,
    pub horizon: Horizon,
    pub domains: BTreeMap<String, Domain>,
    pub tables: BTreeMap<String, FunctionTable>,
    pub kernels: BTreeMap<String, Kernel>,
    pub base: BTreeMap<String, Node>,
    /// Per-step patterns in declaration order.
    pub patterns: Vec<NodePattern>,
}

impl DiagramTemplate {
    pub fn new(label: impl Into<String>, horizon: Horizon) -> Self {
        DiagramTemplate {
            label: label.into(),
            gamma: Rational::one(),
            horizon,
            domains: BTreeMap::new(),
            tables: BTreeMap::new(),
            kernels: BTreeMap::new(),
            base: BTreeMap::new(),
            patterns: Vec::new(),
        }
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

    pub fn add_base(&mut self, n: Node) -> &mut Self {
        self.base.insert(n.id.clone(), n);
        self
    }

    pub fn add_pattern(&mut self, p: NodePattern) -> &mut Self {
        self.patterns.push(p);
        self
    }

    pub fn pattern(&self, stem: &str) -> Option<&NodePattern> {
        self.patterns.iter().find(|p| p.stem == stem)
    }

    pub fn pattern_mut(&mut self, stem: &str) -> Option<&mut NodePattern> {
        self.patterns.iter_mut().find(|p| p.stem == stem)
    }

    /// Diagram with the library and base nodes only.
    pub fn base_diagram(&self) -> Diagram {
        let mut d = Diagram::new(self.label.clone());
        d.gamma = self.gamma.clone();
        d.domains = self.domains.clone();
        d.tables = self.tables.clone();
        d.kernels = self.kernels.clone();
        d.nodes = self.base.clone();
        d
    }

    /// Materialises steps `0..steps`. Validation is left to the caller.
    pub fn unroll(&self, steps: u32) -> Result<Diagram> {
        if steps == 0 {
            return Err(Error::Template("unroll needs at least one step".into()));
        }
        let mut d = self.base_diagram();
        d.horizon = Some(steps);
        for t in 0..steps as i64 {
            for p in &self.patterns {
                let n = p.instantiate(t)?;
                if d.nodes.contains_key(&n.id) {
                    return Err(Error::Template(format!(
                        "pattern `{}` at t={t} collides with existing node `{}`",
                        p.id_ref(),
                        n.id
                    )));
                }
                d.nodes.insert(n.id.clone(), n);
            }
        }
        Ok(d)
    }

    /// Unrolls at the template's own horizon.
    pub fn unroll_default(&self) -> Result<Diagram> {
        match self.horizon {
            Horizon::Finite(n) => self.unroll(n),
            Horizon::Infinite => Err(Error::Template("infinite template has no default unrolling".into())),
        }
    }

    /// Structural checks, plus validation of the one- and two-step unrollings.
    pub fn validate(&self) -> Result<()> {
        if self.horizon == Horizon::Infinite && self.gamma >= Rational::one() {
            let has_utility = self.patterns.iter().any(|p| p.kind == NodeKind::Utility);
            if has_utility {
                return Err(Error::GammaNotBelowOne);
            }
        }
        let mut stems = BTreeSet::new();
        for p in &self.patterns {
            if !stems.insert((&p.stem, p.offset)) {
                return Err(Error::Template(format!("pattern `{}` declared twice", p.id_ref())));
            }
        }
        for steps in [1, 2] {
            let d = self.unroll(steps)?;
            let r = d.validate();
            if !r.is_ok() {
                return Err(Error::Invalid(r));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;

    fn plan() -> DiagramTemplate {
        let s = Domain::symbols("S", &["a", "b"]);
        let a = Domain::symbols("A", &["x", "y"]);
        let u = Domain::ints("U", [0, 1]);
        let mut tpl = DiagramTemplate::new("p", Horizon::Finite(2));
        tpl.add_kernel(Kernel::from_fn("L", vec![s.clone(), a.clone()], s.clone(), |t| {
            vec![(t[0].clone(), Rational::one())]
        }));
        tpl.add_table(FunctionTable::from_fn("R", vec![s.clone(), a, s.clone()], u, |t| {
            Value::from(i64::from(t[2] == Value::from("b")))
        }));
        tpl.add_base(Node::chance("S_0", "S", &[], Annotation::Const(Value::from("a"))));
        tpl.add_pattern(NodePattern::new("A", 0, NodeKind::Decision, "A", vec![NodeRef::at("S", 0)], Annotation::Policy("pi".into())));
        tpl.add_pattern(NodePattern::new(
            "S",
            1,
            NodeKind::Chance,
            "S",
            vec![NodeRef::at("S", 0), NodeRef::at("A", 0)],
            Annotation::Stoch("L".into()),
        ));
        tpl.add_pattern(NodePattern::new(
            "R",
            0,
            NodeKind::Utility,
            "U",
            vec![NodeRef::at("S", 0), NodeRef::at("A", 0), NodeRef::at("S", 1)],
            Annotation::Det("R".into()),
        ));
        tpl
    }

    #[test]
    fn unroll_two_steps() {
        let d = plan().unroll(2).unwrap();
        let ids: BTreeSet<&str> = d.nodes.keys().map(String::as_str).collect();
        let want: BTreeSet<&str> = ["S_0", "A_0", "R_0", "S_1", "A_1", "R_1", "S_2"].into();
        assert_eq!(ids, want);
        assert!(d.validate().is_ok());
        assert_eq!(d.decision_nodes().len(), 2);
    }

    #[test]
    fn one_step_order() {
        let d = plan().unroll(1).unwrap();
        assert_eq!(d.topological_order().unwrap(), vec!["S_0", "A_0", "S_1", "R_0"]);
    }

    #[test]
    fn collisions_are_errors() {
        let mut tpl = plan();
        tpl.add_base(Node::chance("S_1", "S", &[], Annotation::Const(Value::from("a"))));
        assert!(matches!(tpl.unroll(1), Err(Error::Template(_))));
    }

    #[test]
    fn negative_index_rejected() {
        let mut tpl = plan();
        tpl.pattern_mut("A").unwrap().parents = vec![NodeRef::at("S", -1)];
        assert!(tpl.unroll(1).is_err());
    }
}
