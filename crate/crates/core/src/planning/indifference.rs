//! Indifference of a planning world to a node: graph criteria, a numeric
//! check by parameter substitution, and arrow surgery that severs value paths.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{solve_enumeration, DEFAULT_CAP};
use crate::diagram::{Annotation, Diagram, FunctionTable, Kernel, NodeKind};
use crate::error::{Error, Result};
use crate::transform::{apply_transforms, Transform};
use crate::value::{rat, split_index, value_tuples, Domain, Rational, Value};

/// Some decision node has a directed path to `x`.
pub fn is_downstream(d: &Diagram, x: &str) -> Result<bool> {
    d.node(x)?;
    Ok(reaches_from_decision(d, x))
}

fn reaches_from_decision(d: &Diagram, x: &str) -> bool {
    d.decision_nodes()
        .into_iter()
        .any(|dec| d.descendants(d.children(dec)).contains(x))
}

/// Some directed path starts at a decision node, runs via `x` and ends at a
/// utility node. A decision node may start the path itself.
pub fn is_on_path_to_value(d: &Diagram, x: &str) -> Result<bool> {
    let node = d.node(x)?;
    if node.kind != NodeKind::Decision && !reaches_from_decision(d, x) {
        return Ok(false);
    }
    if node.kind == NodeKind::Utility {
        return Ok(true);
    }
    Ok(d
        .descendants(d.children(x))
        .into_iter()
        .any(|id| d.nodes[id].kind == NodeKind::Utility))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IndifferenceMode {
    /// Original, constant and single-context kernels.
    Vertex,
    /// Vertex candidates plus this many seeded random kernels.
    Sampled { k: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NumericCheck {
    Passed,
    /// Kernels under which the optimised utility differs, with that utility.
    Failed { witnesses: Vec<(String, Rational)> },
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndifferenceReport {
    pub node: String,
    pub graph_downstream: bool,
    pub graph_on_path_to_value: bool,
    pub numeric_check: NumericCheck,
    pub utility: Option<Rational>,
    pub candidates: usize,
    /// Passing on finitely many kernels does not prove indifference for all
    /// kernels once the policy is re-optimised.
    pub complete: bool,
}

impl IndifferenceReport {
    pub fn passed(&self) -> bool {
        self.numeric_check == NumericCheck::Passed
    }

    pub fn witness_labels(&self) -> Vec<&str> {
        match &self.numeric_check {
            NumericCheck::Failed { witnesses } => witnesses.iter().map(|(w, _)| w.as_str()).collect(),
            _ => vec![],
        }
    }
}

impl fmt::Display for IndifferenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "node {}", self.node)?;
        writeln!(f, "downstream {}", self.graph_downstream)?;
        writeln!(f, "on_path_to_value {}", self.graph_on_path_to_value)?;
        match &self.numeric_check {
            NumericCheck::Passed => write!(f, "numeric passed ({} kernels)", self.candidates)?,
            NumericCheck::Failed { witnesses } => {
                write!(f, "numeric failed")?;
                for (w, u) in witnesses {
                    write!(f, "\n  witness {w} gives U = {}", crate::value::format_rational(u))?;
                }
            }
            NumericCheck::Skipped(why) => write!(f, "numeric skipped: {why}")?,
        }
        if !self.complete && self.numeric_check == NumericCheck::Passed {
            write!(f, "\n(incomplete under re-optimisation)")?;
        }
        Ok(())
    }
}

/// Candidate kernels for node `x`, labelled.
fn candidates(d: &Diagram, x: &str, mode: &IndifferenceMode) -> Result<Vec<(String, Kernel)>> {
    let node = d.node(x)?;
    let dom = d.domain_of(x)?.clone();
    let pdoms: Vec<Domain> = node.parents.iter().map(|p| d.domain_of(p).cloned()).collect::<Result<_>>()?;
    let name = format!("__D_{x}");
    let mut out = Vec::new();
    let original = match &node.annotation {
        Annotation::Const(v) => Kernel::from_fn(&name, pdoms.clone(), dom.clone(), |_| vec![(v.clone(), rat(1, 1))]),
        Annotation::Det(t) => Kernel::from_table(&name, &d.tables[t]),
        Annotation::Stoch(k) => d.kernels[k].renamed(&name),
        Annotation::Policy(_) => unreachable!("decision nodes are skipped"),
    };
    out.push(("original".to_string(), original));
    for v in dom.values() {
        out.push((
            format!("{x} := {v}"),
            Kernel::from_fn(&name, pdoms.clone(), dom.clone(), |_| vec![(v.clone(), rat(1, 1))]),
        ));
    }
    let base = dom.value(0).clone();
    let prefs: Vec<&Domain> = pdoms.iter().collect();
    if !pdoms.is_empty() {
        for ctx in value_tuples(&prefs) {
            for v in dom.values().iter().skip(1) {
                let k = Kernel::from_fn(&name, pdoms.clone(), dom.clone(), |t| {
                    let out = if t == ctx.as_slice() { v.clone() } else { base.clone() };
                    vec![(out, rat(1, 1))]
                });
                out.push((format!("{x} := {v} at {}, else {base}", crate::diagram::fmt_tuple(&ctx)), k));
            }
        }
    }
    if let IndifferenceMode::Sampled { k, seed } = mode {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        for i in 0..*k {
            let mut ker = Kernel::new(&name, pdoms.clone(), dom.clone());
            for ctx in value_tuples(&prefs) {
                for (v, q) in random_row(&mut rng, &dom) {
                    ker.set(ctx.clone(), v, q);
                }
            }
            out.push((format!("{x} := random kernel #{i}"), ker));
        }
    }
    Ok(out)
}

fn random_row(rng: &mut ChaCha8Rng, dom: &Domain) -> Vec<(Value, Rational)> {
    let w: Vec<i64> = (0..dom.len()).map(|_| rng.random_range(0..5)).collect();
    let total: i64 = w.iter().sum();
    if total == 0 {
        return vec![(dom.value(0).clone(), rat(1, 1))];
    }
    dom.values()
        .iter()
        .zip(w)
        .filter(|(_, w)| *w > 0)
        .map(|(v, w)| (v.clone(), rat(w, total)))
        .collect()
}

/// Replaces the annotation of `x` by candidate kernels and compares the
/// re-optimised utility with the original one.
pub fn indifference_check(d: &Diagram, x: &str, mode: &IndifferenceMode) -> Result<IndifferenceReport> {
    let node = d.node(x)?;
    let mut report = IndifferenceReport {
        node: x.to_string(),
        graph_downstream: is_downstream(d, x)?,
        graph_on_path_to_value: is_on_path_to_value(d, x)?,
        numeric_check: NumericCheck::Passed,
        utility: None,
        candidates: 0,
        complete: false,
    };
    match node.kind {
        NodeKind::Decision => {
            report.numeric_check = NumericCheck::Skipped("decision node".into());
            return Ok(report);
        }
        NodeKind::Utility => {
            report.numeric_check = NumericCheck::Skipped("utility node".into());
            return Ok(report);
        }
        NodeKind::Chance => {}
    }
    let up = solve_enumeration(d, DEFAULT_CAP)?.utility;
    let cands = candidates(d, x, mode)?;
    report.candidates = cands.len();
    let mut witnesses = Vec::new();
    for (label, ker) in cands {
        let mut q = d.clone();
        q.add_kernel(ker.clone());
        q.node_mut(x)?.annotation = Annotation::Stoch(ker.name.clone());
        let uq = solve_enumeration(&q, DEFAULT_CAP)?.utility;
        if uq != up {
            witnesses.push((label, uq));
        }
    }
    report.utility = Some(up);
    if !witnesses.is_empty() {
        report.numeric_check = NumericCheck::Failed { witnesses };
    }
    Ok(report)
}

/// Advisory arrow surgery for [`design_for_indifference`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub transforms: Vec<Transform>,
    /// Value paths found before the surgery, decision first.
    pub paths: Vec<Vec<String>>,
}

fn value_paths(d: &Diagram, x: &str, limit: usize) -> Vec<Vec<String>> {
    let utility_anc = d.ancestors(d.utility_nodes());
    let mut out = Vec::new();
    // Paths decision -> x.
    let mut heads: Vec<Vec<String>> = Vec::new();
    for dec in d.decision_nodes() {
        let mut stack = vec![vec![dec.to_string()]];
        while let Some(p) = stack.pop() {
            let last = p.last().unwrap().clone();
            if last == x && p.len() > 1 {
                heads.push(p);
                continue;
            }
            for c in d.children(&last) {
                if c == x || d.descendants([c]).contains(x) {
                    let mut q = p.clone();
                    q.push(c.to_string());
                    stack.push(q);
                }
            }
        }
    }
    for h in heads {
        let mut stack = vec![h];
        while let Some(p) = stack.pop() {
            if out.len() >= limit {
                return out;
            }
            let last = p.last().unwrap().clone();
            if d.nodes[&last].kind == NodeKind::Utility {
                out.push(p);
                continue;
            }
            for c in d.children(&last) {
                if utility_anc.contains(c) {
                    let mut q = p.clone();
                    q.push(c.to_string());
                    stack.push(q);
                }
            }
        }
    }
    out.sort();
    out
}

/// Proposes reroutes and deletions that take every target off all paths to
/// value. Arrows into other nodes are rerouted to the earliest same-stem
/// ancestor of the target that no decision influences; arrows into decision
/// nodes are deleted at the same argument slot of every decision node so the
/// shared policy keeps one signature.
pub fn design_for_indifference(p: &Diagram, targets: &[&str]) -> Result<Proposal> {
    let tset: BTreeSet<&str> = targets.iter().copied().collect();
    let mut paths = Vec::new();
    for t in &tset {
        let n = p.node(t)?;
        if is_on_path_to_value(p, t)? {
            if n.kind == NodeKind::Utility {
                return Err(Error::Transform(format!(
                    "`{t}` is a utility node; only deleting it removes its paths to value"
                )));
            }
            paths.extend(value_paths(p, t, 64));
        }
    }
    let utility_anc = p.ancestors(p.utility_nodes());
    let downstream: BTreeSet<String> = p
        .nodes
        .keys()
        .filter(|id| reaches_from_decision(p, id))
        .cloned()
        .collect();
    let mut ts: Vec<Transform> = Vec::new();
    let mut decision_slots: BTreeSet<usize> = BTreeSet::new();
    let mut fixed_nodes: BTreeSet<String> = BTreeSet::new();
    for t in &tset {
        if !is_on_path_to_value(p, t)? {
            continue;
        }
        let dom = p.domain_of(t)?;
        for child in p.children(t) {
            if tset.contains(child) {
                continue;
            }
            let cn = &p.nodes[child];
            let leads = cn.kind == NodeKind::Utility || utility_anc.contains(child);
            if !leads {
                continue;
            }
            if cn.kind == NodeKind::Decision {
                decision_slots.insert(cn.parents.iter().position(|x| x == t).unwrap());
                continue;
            }
            let source = reroute_source(p, t, dom, &downstream, &tset)
                .filter(|s| !cn.parents.iter().any(|x| x == s));
            match source {
                Some(s) => ts.push(Transform::RerouteArrow {
                    child: child.to_string(),
                    old_parent: t.to_string(),
                    new_parent: s,
                }),
                None => {
                    ts.push(Transform::DeleteArrow {
                        child: child.to_string(),
                        parent: t.to_string(),
                    });
                    fixed_nodes.insert(child.to_string());
                }
            }
        }
    }
    // Drop the same argument slot from every decision node.
    for dec in p.decision_nodes() {
        let n = &p.nodes[dec];
        for &slot in decision_slots.iter().rev() {
            ts.push(Transform::DeleteArrow {
                child: dec.to_string(),
                parent: n.parents[slot].clone(),
            });
        }
    }
    // Nodes that lost an input get annotations with that input pinned to the
    // first value of its domain.
    let cut = apply_partial(p, &ts)?;
    for child in fixed_nodes {
        let n = cut.node(&child)?;
        let old = &p.nodes[&child];
        let keep: Vec<usize> = old
            .parents
            .iter()
            .enumerate()
            .filter(|(_, x)| n.parents.contains(x))
            .map(|(i, _)| i)
            .collect();
        let full = |short: &[Value]| -> Vec<Value> {
            old.parents
                .iter()
                .enumerate()
                .map(|(i, x)| match keep.iter().position(|&k| k == i) {
                    Some(j) => short[j].clone(),
                    None => p.domain_of(x).expect("validated").value(0).clone(),
                })
                .collect()
        };
        let pdoms: Vec<Domain> = n.parents.iter().map(|x| p.domain_of(x).cloned()).collect::<Result<_>>()?;
        let dom = p.domain_of(&child)?.clone();
        let name = format!("{child}_cut");
        match &old.annotation {
            Annotation::Det(t) => {
                let tab = &p.tables[t];
                let nt = FunctionTable::from_fn(&name, pdoms, dom, |s| tab.get(&full(s)).expect("total").clone());
                ts.push(Transform::DefineTable(nt));
                ts.push(Transform::SetAnnotation {
                    node: child.clone(),
                    annotation: Annotation::Det(name),
                });
            }
            Annotation::Stoch(k) => {
                let ker = &p.kernels[k];
                let nk = Kernel::from_fn(&name, pdoms, dom, |s| {
                    ker.row(&full(s)).map(|(v, q)| (v.clone(), q.clone())).collect()
                });
                ts.push(Transform::DefineKernel(nk));
                ts.push(Transform::SetAnnotation {
                    node: child.clone(),
                    annotation: Annotation::Stoch(name),
                });
            }
            _ => {}
        }
    }
    Ok(Proposal { transforms: ts, paths })
}

/// Arrow deletions only; annotations are fixed up afterwards.
fn apply_partial(p: &Diagram, ts: &[Transform]) -> Result<Diagram> {
    let mut d = p.clone();
    for t in ts {
        if let Transform::DeleteArrow { child, parent } = t {
            d.node_mut(child)?.parents.retain(|x| x != parent);
        }
    }
    Ok(d)
}

fn reroute_source(
    p: &Diagram,
    target: &str,
    dom: &Domain,
    downstream: &BTreeSet<String>,
    targets: &BTreeSet<&str>,
) -> Option<String> {
    let (stem, _) = split_index(target);
    let anc = p.ancestors([target]);
    let mut cands: Vec<(i64, String)> = anc
        .into_iter()
        .filter(|a| *a != target && !downstream.contains(*a) && !targets.contains(a))
        .filter_map(|a| match split_index(a) {
            (s, Some(k)) if s == stem => Some((k, a.to_string())),
            _ => None,
        })
        .filter(|(_, a)| p.domain_of(a).map(|d| d == dom).unwrap_or(false))
        .collect();
    cands.sort();
    cands.into_iter().next().map(|(_, a)| a)
}

/// Applies a proposal and checks that no target is left on a path to value.
pub fn verify_proposal(p: &Diagram, prop: &Proposal, targets: &[&str], label: &str) -> Result<Diagram> {
    let out = apply_transforms(p, &prop.transforms, label)?;
    for t in targets {
        if is_on_path_to_value(&out, t)? {
            return Err(Error::Transform(format!("`{t}` is still on a path to value")));
        }
    }
    Ok(out)
}
