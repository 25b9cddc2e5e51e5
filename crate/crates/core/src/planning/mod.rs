//! Optimal and approximate policies for diagrams and stationary templates.

mod indifference;
mod mdp;

pub use indifference::{
    design_for_indifference, indifference_check, is_downstream, is_on_path_to_value, IndifferenceMode,
    IndifferenceReport, NumericCheck, Proposal, verify_proposal,
};
pub use mdp::{solve_policy_evaluation, solve_policy_iteration, Mdp};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_traits::Zero;

use crate::diagram::{Annotation, Diagram, FunctionTable, NodeKind};
use crate::error::{Error, Result};
use crate::inference::{discount, Model};
use crate::value::{tuple_rank, Domain, Rational, TupleIter, Value};

/// Default cap on the number of policy tables enumerated.
pub const DEFAULT_CAP: u64 = 1 << 20;

/// Deterministic shared decision rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub id: String,
    pub signature: Vec<Domain>,
    pub actions: Domain,
    /// Action index for each signature tuple, in canonical tuple order.
    pub rule: Vec<usize>,
}

impl Policy {
    pub fn constant(id: &str, signature: Vec<Domain>, actions: Domain, action: usize) -> Policy {
        let n = signature.iter().map(Domain::len).product();
        Policy {
            id: id.into(),
            signature,
            actions,
            rule: vec![action; n],
        }
    }

    /// The policy shape of a diagram with all rows set to the first action.
    pub fn shape_of(d: &Diagram) -> Result<Policy> {
        let (id, sig, act) = d.policy_signature().ok_or(Error::NoDecision)?;
        Ok(Policy::constant(&id, sig.into_iter().cloned().collect(), act.clone(), 0))
    }

    pub fn cards(&self) -> Vec<usize> {
        self.signature.iter().map(Domain::len).collect()
    }

    pub fn action_index(&self, pa: &[usize]) -> usize {
        self.rule[tuple_rank(pa, &self.cards())]
    }

    pub fn action(&self, pa: &[Value]) -> Result<&Value> {
        let idx: Vec<usize> = pa
            .iter()
            .zip(&self.signature)
            .map(|(v, d)| {
                d.index_of(v)
                    .ok_or_else(|| Error::DomainMismatch(format!("`{v}` is not in `{}`", d.name())))
            })
            .collect::<Result<_>>()?;
        if idx.len() != self.signature.len() {
            return Err(Error::DomainMismatch("policy input has the wrong arity".into()));
        }
        Ok(self.actions.value(self.action_index(&idx)))
    }

    pub fn to_table(&self) -> FunctionTable {
        let doms: Vec<&Domain> = self.signature.iter().collect();
        let mut t = FunctionTable::new(self.id.clone(), self.signature.clone(), self.actions.clone());
        for (k, tup) in crate::value::value_tuples(&doms).enumerate() {
            t.set(tup, self.actions.value(self.rule[k]).clone());
        }
        t
    }

    /// Substitutes the policy for every matching policy annotation.
    pub fn apply(&self, d: &Diagram) -> Result<Diagram> {
        let mut out = d.clone();
        let table = self.to_table();
        if let Some(existing) = out.tables.get(&self.id) {
            if existing != &table {
                return Err(Error::Transform(format!("table `{}` already exists", self.id)));
            }
        }
        out.add_table(table);
        for n in out.nodes.values_mut() {
            if n.annotation == Annotation::Policy(self.id.clone()) {
                n.annotation = Annotation::Det(self.id.clone());
            }
        }
        out.validated()
    }

    /// Readable `(pa) -> a` rows.
    pub fn rows(&self) -> Vec<(Vec<Value>, Value)> {
        let doms: Vec<&Domain> = self.signature.iter().collect();
        crate::value::value_tuples(&doms)
            .enumerate()
            .map(|(k, tup)| (tup, self.actions.value(self.rule[k]).clone()))
            .collect()
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<String> = self
            .rows()
            .into_iter()
            .map(|(k, v)| format!("{} -> {v}", crate::diagram::fmt_tuple(&k)))
            .collect();
        write!(f, "{} {{ {} }}", self.id, rows.join("; "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Enumeration,
    BackwardInduction,
    PolicyIteration,
    DepthLimited(u32),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Enumeration => f.write_str("enumeration"),
            Method::BackwardInduction => f.write_str("backward_induction"),
            Method::PolicyIteration => f.write_str("policy_iteration"),
            Method::DepthLimited(k) => write!(f, "depth_limited({k})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveResult {
    pub policy: Policy,
    pub utility: Rational,
    pub method: Method,
    /// Per-decision rules in topological order (backward induction only).
    pub rules: Vec<(String, Policy)>,
    /// False when backward induction found different rules per step.
    pub stationary: bool,
}

impl SolveResult {
    fn single(policy: Policy, utility: Rational, method: Method) -> Self {
        SolveResult {
            policy,
            utility,
            method,
            rules: vec![],
            stationary: true,
        }
    }
}

/// Over-approximates the values each node can take with positive probability
/// under some policy.
pub(crate) fn supports(d: &Diagram) -> Result<BTreeMap<String, BTreeSet<usize>>> {
    let mut sup: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for id in d.topological_order()? {
        let n = &d.nodes[&id];
        let dom = d.domain_of(&id)?;
        let pdoms: Vec<&Domain> = n.parents.iter().map(|p| d.domain_of(p)).collect::<Result<_>>()?;
        let psup: Vec<Vec<usize>> = n.parents.iter().map(|p| sup[p].iter().copied().collect()).collect();
        let mut s = BTreeSet::new();
        let combos = TupleIter::new(psup.iter().map(Vec::len).collect());
        match &n.annotation {
            Annotation::Const(v) => {
                s.insert(dom.index_of(v).expect("validated"));
            }
            Annotation::Policy(_) => s.extend(0..dom.len()),
            Annotation::Det(t) => {
                let tab = &d.tables[t];
                for c in combos {
                    let key: Vec<Value> = c.iter().enumerate().map(|(k, &j)| pdoms[k].value(psup[k][j]).clone()).collect();
                    s.insert(dom.index_of(tab.get(&key).expect("total")).expect("in domain"));
                }
            }
            Annotation::Stoch(k) => {
                let ker = &d.kernels[k];
                for c in combos {
                    let key: Vec<Value> = c.iter().enumerate().map(|(k, &j)| pdoms[k].value(psup[k][j]).clone()).collect();
                    for (v, _) in ker.row(&key) {
                        s.insert(dom.index_of(v).expect("in domain"));
                    }
                }
            }
        }
        sup.insert(id, s);
    }
    Ok(sup)
}

/// Signature ranks that some decision node may see with positive probability.
fn reachable_ranks(d: &Diagram, shape: &Policy) -> Result<Vec<usize>> {
    let sup = supports(d)?;
    let cards = shape.cards();
    let mut ranks = BTreeSet::new();
    for id in d.policy_nodes() {
        let n = &d.nodes[id];
        let psup: Vec<Vec<usize>> = n.parents.iter().map(|p| sup[p].iter().copied().collect()).collect();
        for c in TupleIter::new(psup.iter().map(Vec::len).collect()) {
            let idx: Vec<usize> = c.iter().enumerate().map(|(k, &j)| psup[k][j]).collect();
            ranks.insert(tuple_rank(&idx, &cards));
        }
    }
    Ok(ranks.into_iter().collect())
}

/// Exhaustive search over deterministic shared policies. Ties go to the
/// lexicographically smallest table. Rows the decision nodes can never see
/// are fixed to the first action, which keeps that tie-break intact.
pub fn solve_enumeration(d: &Diagram, cap: u64) -> Result<SolveResult> {
    let mut model = Model::new(d)?;
    let shape = Policy::shape_of(d)?;
    let ranks = reachable_ranks(d, &shape)?;
    let na = shape.actions.len();
    let count = num_traits::pow(BigInt::from(na), ranks.len());
    if count > BigInt::from(cap) {
        return Err(Error::CapExceeded {
            count: count.to_string(),
            cap,
        });
    }
    let mut best: Option<(Rational, Vec<usize>)> = None;
    let mut rule = shape.rule.clone();
    for choice in TupleIter::new(vec![na; ranks.len()]) {
        for (k, &r) in ranks.iter().enumerate() {
            rule[r] = choice[k];
        }
        model.set_policy_rule(&rule);
        let u = model.expected_utility()?;
        if best.as_ref().is_none_or(|(b, _)| u > *b) {
            best = Some((u, rule.clone()));
        }
    }
    let (utility, rule) = best.expect("at least one policy");
    Ok(SolveResult::single(Policy { rule, ..shape }, utility, Method::Enumeration))
}

/// Expected utility of a diagram under a shared policy.
pub fn evaluate_policy(d: &Diagram, pol: &Policy) -> Result<Rational> {
    let mut m = Model::new(d)?;
    m.set_policy_rule(&pol.rule);
    m.expected_utility()
}

/// Backward induction with one rule per decision node.
///
/// Requires that everything downstream of each decision that matters for
/// utility depends only on that decision, its parents, later nodes and
/// constant roots.
pub fn solve_backward_induction(d: &Diagram) -> Result<SolveResult> {
    let mut model = Model::new(d)?;
    let shape = Policy::shape_of(d)?;
    let order = d.topological_order()?;
    let decisions: Vec<String> = order
        .iter()
        .filter(|id| matches!(d.nodes[*id].annotation, Annotation::Policy(_)))
        .cloned()
        .collect();
    let utilities = d.utility_nodes();
    if utilities.is_empty() {
        return Err(Error::NoUtility);
    }
    let value_anc = d.ancestors(utilities.iter().copied());
    let const_roots: BTreeSet<&str> = d
        .nodes
        .values()
        .filter(|n| n.parents.is_empty() && matches!(n.annotation, Annotation::Const(_)))
        .map(|n| n.id.as_str())
        .collect();
    let mut rules: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let na = shape.actions.len();
    let cards = shape.cards();
    for dec in decisions.iter().rev() {
        let node = &d.nodes[dec];
        let desc: BTreeSet<&str> = d
            .descendants([dec.as_str()])
            .into_iter()
            .filter(|x| value_anc.contains(x))
            .collect();
        let allowed: BTreeSet<&str> = desc
            .iter()
            .copied()
            .chain(node.parents.iter().map(String::as_str))
            .chain(const_roots.iter().copied())
            .collect();
        for x in &desc {
            for p in &d.nodes[*x].parents {
                if !allowed.contains(p.as_str()) {
                    return Err(Error::NotMdpShaped(format!(
                        "`{x}` below decision `{dec}` depends on `{p}`, which `{dec}` does not observe"
                    )));
                }
            }
        }
        // Sub-diagram: the decision's parents and the decision become roots
        // whose values are installed per query.
        let mut sub = Diagram::new(format!("{}_bi_{dec}", d.label));
        sub.gamma = d.gamma.clone();
        sub.domains = d.domains.clone();
        sub.tables = d.tables.clone();
        sub.kernels = d.kernels.clone();
        for id in allowed.iter() {
            let mut n = d.nodes[*id].clone();
            if node.parents.contains(&n.id) || n.id == *dec {
                let dom = d.domain_of(&n.id)?;
                n.parents.clear();
                n.kind = NodeKind::Chance;
                n.annotation = Annotation::Const(dom.value(0).clone());
            }
            if n.kind == NodeKind::Utility && n.index.is_none() {
                n.index = Some(n.time_index());
            }
            sub.nodes.insert(n.id.clone(), n);
        }
        let mut sm = Model::new(&sub)?;
        for (later, rule) in &rules {
            if sub.nodes.contains_key(later) {
                sm.set_rule(sm.var(later)?, rule);
            }
        }
        let pvars: Vec<usize> = node.parents.iter().map(|p| sm.var(p)).collect::<Result<_>>()?;
        let dvar = sm.var(dec)?;
        let uvars = sm.utility_vars();
        let mut rule = vec![0; cards.iter().product()];
        for pa in TupleIter::new(cards.clone()) {
            for (k, &v) in pvars.iter().enumerate() {
                sm.set_rule(v, &[pa[k]]);
            }
            let mut best: Option<Rational> = None;
            for a in 0..na {
                sm.set_rule(dvar, &[a]);
                let mut q = Rational::zero();
                for &u in &uvars {
                    let ev = sm.expected_value(u)?;
                    if !ev.is_zero() {
                        q += discount(&d.gamma, time_of(&sub, sm.names()[u].as_str())) * ev;
                    }
                }
                if best.as_ref().is_none_or(|b| q > *b) {
                    best = Some(q);
                    rule[tuple_rank(&pa, &cards)] = a;
                }
            }
        }
        rules.insert(dec.clone(), rule);
    }
    for (dec, rule) in &rules {
        model.set_rule(model.var(dec)?, rule);
    }
    let utility = model.expected_utility()?;
    let per_step: Vec<(String, Policy)> = decisions
        .iter()
        .map(|dec| {
            (
                dec.clone(),
                Policy {
                    rule: rules[dec].clone(),
                    ..shape.clone()
                },
            )
        })
        .collect();
    let stationary = per_step.windows(2).all(|w| w[0].1 == w[1].1);
    Ok(SolveResult {
        policy: per_step[0].1.clone(),
        utility,
        method: Method::BackwardInduction,
        rules: per_step,
        stationary,
    })
}

fn time_of(d: &Diagram, id: &str) -> i64 {
    d.nodes[id].time_index()
}

/// Planning budget for [`approx_policy`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    Unlimited,
    /// Look ahead this many decisions; utility beyond the window is ignored.
    Depth(u32),
}

/// Depth-limited planner: solves the diagram truncated after `k` decisions
/// and applies the first decision's rule at every step.
pub fn approx_policy(d: &Diagram, budget: Budget) -> Result<SolveResult> {
    let k = match budget {
        Budget::Unlimited => return solve_enumeration(d, DEFAULT_CAP),
        Budget::Depth(k) => k.max(1) as usize,
    };
    let order = d.topological_order()?;
    let decisions: Vec<&String> = order
        .iter()
        .filter(|id| matches!(d.nodes[*id].annotation, Annotation::Policy(_)))
        .collect();
    if decisions.is_empty() {
        return Err(Error::NoDecision);
    }
    let mut window = d.clone();
    if let Some(cut) = decisions.get(k) {
        let drop = d.descendants([cut.as_str()]);
        window.nodes.retain(|id, _| !drop.contains(id.as_str()));
    }
    let shape = Policy::shape_of(d)?;
    let policy = if window.utility_nodes().is_empty() {
        shape
    } else {
        let first = decisions[0];
        match solve_backward_induction(&window) {
            Ok(r) => r.rules.into_iter().find(|(id, _)| id == first).map(|(_, p)| p).expect("first rule"),
            Err(Error::NotMdpShaped(_)) => solve_enumeration(&window, DEFAULT_CAP)?.policy,
            Err(e) => return Err(e),
        }
    };
    let utility = evaluate_policy(d, &policy)?;
    Ok(SolveResult::single(policy, utility, Method::DepthLimited(k as u32)))
}

/// Float value iteration used as an independent cross-check in tests.
pub fn value_iteration_f64(
    trans: &[Vec<Vec<(usize, f64)>>],
    reward: &[Vec<f64>],
    gamma: f64,
    eps: f64,
) -> Vec<f64> {
    let n = trans.len();
    let mut v = vec![0.0; n];
    loop {
        let mut delta: f64 = 0.0;
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..trans[s].len())
                    .map(|a| reward[s][a] + gamma * trans[s][a].iter().map(|(t, p)| p * v[*t]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for s in 0..n {
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta < eps * (1.0 - gamma) {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{Kernel, Node};
    use crate::value::rat;

    /// One decision, chance outcome, utility.
    fn bet() -> Diagram {
        let a = Domain::symbols("Act", &["safe", "risky"]);
        let o = Domain::symbols("Out", &["win", "lose"]);
        let u = Domain::ints("U", [0, 1, 3]);
        let mut d = Diagram::new("bet");
        d.add_domain(a.clone());
        d.add_kernel(Kernel::from_fn("out", vec![a.clone()], o.clone(), |t| {
            if t[0] == Value::from("safe") {
                vec![(Value::from("win"), rat(1, 1))]
            } else {
                vec![(Value::from("win"), rat(1, 2)), (Value::from("lose"), rat(1, 2))]
            }
        }));
        d.add_table(FunctionTable::from_fn("pay", vec![a, o], u, |t| {
            Value::from(match (t[0].as_sym().unwrap(), t[1].as_sym().unwrap()) {
                ("safe", _) => 1,
                ("risky", "win") => 3,
                _ => 0,
            })
        }));
        d.add_node(Node::decision("A", "Act", &[], "pi"));
        d.add_node(Node::chance("O", "Out", &["A"], Annotation::Stoch("out".into())));
        d.add_node(Node::utility("R", "U", &["A", "O"], "pay"));
        d
    }

    #[test]
    fn enumeration_picks_best_and_breaks_ties_low() {
        let d = bet();
        let r = solve_enumeration(&d, DEFAULT_CAP).unwrap();
        assert_eq!(r.utility, rat(3, 2));
        assert_eq!(r.policy.rule, vec![1]);
        assert_eq!(evaluate_policy(&d, &r.policy).unwrap(), r.utility);

        // Make both actions worth 1: the first action wins the tie.
        let mut d2 = d.clone();
        let u = Domain::ints("U", [0, 1, 3]);
        let o = Domain::symbols("Out", &["win", "lose"]);
        let a = Domain::symbols("Act", &["safe", "risky"]);
        d2.add_table(FunctionTable::from_fn("pay", vec![a, o], u, |_| Value::from(1)));
        let r2 = solve_enumeration(&d2, DEFAULT_CAP).unwrap();
        assert_eq!(r2.policy.rule, vec![0]);
    }

    #[test]
    fn single_action_is_trivial() {
        let mut d = bet();
        let one = Domain::symbols("One", &["only"]);
        let u = Domain::ints("U", [0, 1, 3]);
        d.add_domain(one.clone());
        d.add_table(FunctionTable::from_fn("c", vec![one], u, |_| Value::from(3)));
        d.nodes.clear();
        d.add_node(Node::decision("A", "One", &[], "pi"));
        d.add_node(Node::utility("R", "U", &["A"], "c"));
        let r = solve_enumeration(&d, DEFAULT_CAP).unwrap();
        assert_eq!(r.policy.actions.value(r.policy.rule[0]), &Value::from("only"));
        assert_eq!(r.utility, crate::inference::expected_utility(&r.policy.apply(&d).unwrap()).unwrap());
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(solve_enumeration(&bet(), 1), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn backward_induction_matches_on_one_step() {
        let d = bet();
        let bi = solve_backward_induction(&d).unwrap();
        assert_eq!(bi.utility, rat(3, 2));
        assert!(bi.stationary);
        assert_eq!(bi.policy.rule, vec![1]);
    }
}
