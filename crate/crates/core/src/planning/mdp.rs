//! Stationary templates viewed as finite discounted MDPs.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_traits::{One, Zero};

use super::{Method, Policy, SolveResult};
use crate::diagram::{Annotation, Node, NodeKind};
use crate::error::{Error, Result};
use crate::inference::Model;
use crate::template::{DiagramTemplate, NodeRef};
use crate::value::{tuple_rank, Domain, Rational, Value};

const FIXED_PREFIX: &str = "__fixed_";

#[derive(Clone, Debug)]
enum Component {
    /// Evolves through the `stem_{t+1}` pattern.
    Stem { stem: String, domain: Domain },
    /// Base node referenced by id from the patterns; never changes.
    Static { id: String, domain: Domain },
}

impl Component {
    fn domain(&self) -> &Domain {
        match self {
            Component::Stem { domain, .. } | Component::Static { domain, .. } => domain,
        }
    }

    fn base_id(&self) -> String {
        match self {
            Component::Stem { stem, .. } => format!("{stem}_0"),
            Component::Static { id, .. } => id.clone(),
        }
    }

    fn placeholder(&self) -> String {
        match self {
            Component::Stem { stem, .. } => format!("{stem}_0"),
            Component::Static { id, .. } => format!("{FIXED_PREFIX}{id}"),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Component::Stem { stem, .. } => stem,
            Component::Static { id, .. } => id,
        }
    }
}

/// Finite MDP over the reachable states of a stationary template. States are
/// tuples of value indices over the relevant components.
#[derive(Clone, Debug)]
pub struct Mdp {
    components: Vec<Component>,
    pub states: Vec<Vec<usize>>,
    pub actions: Domain,
    /// `trans[s][a]`: successor states with positive probability.
    pub trans: Vec<Vec<Vec<(usize, Rational)>>>,
    /// Expected one-step reward.
    pub reward: Vec<Vec<Rational>>,
    pub start: Vec<(usize, Rational)>,
    pub gamma: Rational,
    policy_id: String,
    signature: Vec<Domain>,
    /// Component index feeding each signature slot.
    sig_source: Vec<usize>,
}

impl Mdp {
    pub fn from_template(tpl: &DiagramTemplate) -> Result<Mdp> {
        if tpl.gamma >= Rational::one() {
            return Err(Error::GammaNotBelowOne);
        }
        let decisions: Vec<_> = tpl.patterns.iter().filter(|p| p.kind == NodeKind::Decision).collect();
        let dec = match decisions.as_slice() {
            [] => return Err(Error::NoDecision),
            [d] if d.offset == 0 => *d,
            [_] => return Err(Error::NotMdpShaped("the decision pattern must sit at offset 0".into())),
            _ => return Err(Error::NotMdpShaped("more than one decision pattern".into())),
        };
        let policy_id = match &dec.annotation {
            Annotation::Policy(p) => p.clone(),
            _ => return Err(Error::NotMdpShaped("decision pattern without a policy annotation".into())),
        };
        let actions = tpl
            .domains
            .get(&dec.domain)
            .cloned()
            .ok_or_else(|| Error::Template(format!("unknown domain `{}`", dec.domain)))?;

        let domain = |name: &str| {
            tpl.domains
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Template(format!("unknown domain `{name}`")))
        };
        let mut comps: Vec<Component> = Vec::new();
        for p in &tpl.patterns {
            if p.offset == 1 && p.kind == NodeKind::Chance {
                if !tpl.base.contains_key(&format!("{}_0", p.stem)) {
                    return Err(Error::NotMdpShaped(format!("state `{}` has no initial node `{}_0`", p.stem, p.stem)));
                }
                comps.push(Component::Stem {
                    stem: p.stem.clone(),
                    domain: domain(&p.domain)?,
                });
            } else if p.offset != 0 {
                return Err(Error::NotMdpShaped(format!("pattern `{}` has an unsupported offset", p.id_ref())));
            }
        }
        let mut fixed: BTreeSet<String> = BTreeSet::new();
        for p in &tpl.patterns {
            for r in &p.parents {
                match r {
                    NodeRef::Fixed(id) => {
                        fixed.insert(id.clone());
                    }
                    NodeRef::Indexed { offset, .. } if !(0..=1).contains(offset) => {
                        return Err(Error::NotMdpShaped(format!("reference `{r}` spans more than one step")));
                    }
                    _ => {}
                }
            }
        }
        for id in &fixed {
            let n = tpl
                .base
                .get(id)
                .ok_or_else(|| Error::Template(format!("fixed reference to unknown node `{id}`")))?;
            comps.push(Component::Static {
                id: id.clone(),
                domain: domain(&n.domain)?,
            });
        }

        // One-step diagram with placeholders for every component and the action.
        let stem_comp: HashMap<String, usize> = comps
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match c {
                Component::Stem { stem, .. } => Some((stem.clone(), i)),
                _ => None,
            })
            .collect();
        let resolve = |r: &NodeRef| -> String {
            match r {
                NodeRef::Fixed(id) => format!("{FIXED_PREFIX}{id}"),
                NodeRef::Indexed { stem, offset } => format!("{stem}_{offset}"),
            }
        };
        let mut one = tpl.base_diagram();
        one.nodes.clear();
        for c in &comps {
            one.add_node(Node::chance(
                &c.placeholder(),
                c.domain().name(),
                &[],
                Annotation::Const(c.domain().value(0).clone()),
            ));
        }
        let act_id = format!("{}_0", dec.stem);
        one.add_node(Node::chance(&act_id, actions.name(), &[], Annotation::Const(actions.value(0).clone())));
        for p in &tpl.patterns {
            if p.kind == NodeKind::Decision {
                continue;
            }
            let mut n = p.instantiate(0)?;
            n.parents = p.parents.iter().map(resolve).collect();
            if p.kind == NodeKind::Utility {
                n.index = Some(0);
            }
            one.add_node(n);
        }
        let report = one.validate();
        if !report.is_ok() {
            return Err(Error::Invalid(report));
        }

        // Components that matter: reward inputs, observations, and their
        // transition inputs, closed.
        let placeholder_comp: HashMap<String, usize> =
            comps.iter().enumerate().map(|(i, c)| (c.placeholder(), i)).collect();
        let comp_deps = |ids: Vec<&str>| -> BTreeSet<usize> {
            one.ancestors(ids)
                .into_iter()
                .filter_map(|a| placeholder_comp.get(a).copied())
                .collect()
        };
        let mut sig_source = Vec::new();
        for r in &dec.parents {
            let c = match r {
                NodeRef::Fixed(id) => placeholder_comp[&format!("{FIXED_PREFIX}{id}")],
                NodeRef::Indexed { stem, offset: 0 } => *stem_comp
                    .get(stem)
                    .ok_or_else(|| Error::NotMdpShaped(format!("decision observes `{r}`, which is not a state")))?,
                _ => return Err(Error::NotMdpShaped(format!("decision observes `{r}`"))),
            };
            sig_source.push(c);
        }
        let utilities = one.utility_nodes();
        if utilities.is_empty() {
            return Err(Error::NoUtility);
        }
        let mut relevant: BTreeSet<usize> = comp_deps(utilities.clone());
        relevant.extend(sig_source.iter().copied());
        loop {
            let mut next = relevant.clone();
            for &c in &relevant {
                if let Component::Stem { stem, .. } = &comps[c] {
                    let succ = format!("{stem}_1");
                    next.extend(comp_deps(vec![succ.as_str()]));
                }
            }
            if next == relevant {
                break;
            }
            relevant = next;
        }
        let rel: Vec<usize> = relevant.into_iter().collect();

        // Start distribution over the relevant components.
        let base = tpl.base_diagram().validated()?;
        let base_model = Model::new(&base)?;
        let base_ids: Vec<String> = rel.iter().map(|&c| comps[c].base_id()).collect();
        let mut uniq: Vec<String> = base_ids.clone();
        uniq.sort();
        uniq.dedup();
        let uvars: Vec<usize> = uniq.iter().map(|id| base_model.var(id)).collect::<Result<_>>()?;
        let start_dist = base_model.distribution(&uvars, None)?;
        let pos_in_uniq: Vec<usize> = base_ids.iter().map(|id| uniq.iter().position(|u| u == id).unwrap()).collect();
        let start_states: Vec<(Vec<usize>, Rational)> = start_dist
            .into_iter()
            .map(|(ix, p)| (pos_in_uniq.iter().map(|&k| ix[k]).collect(), p))
            .collect();

        let observed: BTreeSet<usize> = sig_source.iter().copied().collect();
        for (k, &c) in rel.iter().enumerate() {
            if observed.contains(&c) {
                continue;
            }
            let values: BTreeSet<usize> = start_states.iter().map(|(s, _)| s[k]).collect();
            let is_static = matches!(comps[c], Component::Static { .. });
            if !(is_static && values.len() == 1) {
                return Err(Error::NotMdpShaped(format!(
                    "`{}` affects utility but the decision does not observe it",
                    comps[c].name()
                )));
            }
        }

        let mut model = Model::new(&one)?;
        let in_vars: Vec<usize> = rel.iter().map(|&c| model.var(&comps[c].placeholder())).collect::<Result<_>>()?;
        let act_var = model.var(&act_id)?;
        let out_vars: Vec<Option<usize>> = rel
            .iter()
            .map(|&c| match &comps[c] {
                Component::Stem { stem, .. } => model.var(&format!("{stem}_1")).map(Some),
                Component::Static { .. } => Ok(None),
            })
            .collect::<Result<_>>()?;
        let moving: Vec<usize> = out_vars.iter().flatten().copied().collect();
        let util_vars = model.utility_vars();

        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut states: Vec<Vec<usize>> = Vec::new();
        let mut queue = VecDeque::new();
        let mut intern = |s: Vec<usize>, states: &mut Vec<Vec<usize>>, queue: &mut VecDeque<usize>| -> usize {
            *index.entry(s.clone()).or_insert_with(|| {
                states.push(s);
                queue.push_back(states.len() - 1);
                states.len() - 1
            })
        };
        let mut start = Vec::new();
        let mut sorted_start = start_states;
        sorted_start.sort();
        for (s, p) in sorted_start {
            let i = intern(s, &mut states, &mut queue);
            start.push((i, p));
        }
        let mut trans: Vec<Vec<Vec<(usize, Rational)>>> = Vec::new();
        let mut reward: Vec<Vec<Rational>> = Vec::new();
        while let Some(si) = queue.pop_front() {
            let s = states[si].clone();
            for (k, &v) in in_vars.iter().enumerate() {
                model.set_rule(v, &[s[k]]);
            }
            let mut row_t = Vec::new();
            let mut row_r = Vec::new();
            for a in 0..actions.len() {
                model.set_rule(act_var, &[a]);
                let mut r = Rational::zero();
                for &u in &util_vars {
                    r += model.expected_value(u)?;
                }
                let dist = model.distribution(&moving, None)?;
                let mut succ: BTreeMap<usize, Rational> = BTreeMap::new();
                for (ix, p) in dist {
                    let mut it = ix.into_iter();
                    let next: Vec<usize> = out_vars
                        .iter()
                        .enumerate()
                        .map(|(k, o)| if o.is_some() { it.next().unwrap() } else { s[k] })
                        .collect();
                    let j = intern(next, &mut states, &mut queue);
                    *succ.entry(j).or_insert_with(Rational::zero) += p;
                }
                row_t.push(succ.into_iter().collect());
                row_r.push(r);
            }
            if trans.len() <= si {
                trans.resize(si + 1, Vec::new());
                reward.resize(si + 1, Vec::new());
            }
            trans[si] = row_t;
            reward[si] = row_r;
        }
        let signature: Vec<Domain> = sig_source.iter().map(|&c| comps[c].domain().clone()).collect();
        let rel_comps: Vec<Component> = rel.iter().map(|&c| comps[c].clone()).collect();
        let sig_source = sig_source.iter().map(|c| rel.iter().position(|r| r == c).unwrap()).collect();
        Ok(Mdp {
            components: rel_comps,
            states,
            actions,
            trans,
            reward,
            start,
            gamma: tpl.gamma.clone(),
            policy_id,
            signature,
            sig_source,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Names of the state components in tuple order.
    pub fn component_names(&self) -> Vec<&str> {
        self.components.iter().map(Component::name).collect()
    }

    pub fn state_values(&self, s: usize) -> Vec<Value> {
        self.states[s]
            .iter()
            .zip(&self.components)
            .map(|(&i, c)| c.domain().value(i).clone())
            .collect()
    }

    /// State index for component values, if the state is reachable.
    pub fn find_state(&self, values: &[Value]) -> Option<usize> {
        let ix: Vec<usize> = values
            .iter()
            .zip(&self.components)
            .map(|(v, c)| c.domain().index_of(v))
            .collect::<Option<_>>()?;
        self.states.iter().position(|s| *s == ix)
    }

    fn sig_rank(&self, s: usize) -> usize {
        let ix: Vec<usize> = self.sig_source.iter().map(|&k| self.states[s][k]).collect();
        tuple_rank(&ix, &self.shape().cards())
    }

    fn shape(&self) -> Policy {
        Policy::constant(&self.policy_id, self.signature.clone(), self.actions.clone(), 0)
    }

    /// Per-state actions of a shared policy.
    pub fn state_actions(&self, pol: &Policy) -> Result<Vec<usize>> {
        if pol.signature != self.signature || pol.actions != self.actions {
            return Err(Error::DomainMismatch(format!("policy `{}` does not fit this template", pol.id)));
        }
        Ok((0..self.len()).map(|s| pol.rule[self.sig_rank(s)]).collect())
    }

    /// Exact state values of a per-state action assignment.
    pub fn evaluate(&self, acts: &[usize]) -> Vec<Rational> {
        let n = self.len();
        let mut m = vec![vec![Rational::zero(); n + 1]; n];
        for s in 0..n {
            m[s][s] = Rational::one();
            for (t, p) in &self.trans[s][acts[s]] {
                m[s][*t] -= &self.gamma * p;
            }
            m[s][n] = self.reward[s][acts[s]].clone();
        }
        solve_linear(m)
    }

    pub fn start_value(&self, v: &[Rational]) -> Rational {
        self.start.iter().map(|(s, p)| p * &v[*s]).sum()
    }

    pub fn q_value(&self, v: &[Rational], s: usize, a: usize) -> Rational {
        let future: Rational = self.trans[s][a].iter().map(|(t, p)| p * &v[*t]).sum();
        &self.reward[s][a] + &self.gamma * future
    }

    fn greedy(&self, v: &[Rational], s: usize) -> usize {
        let mut best = 0;
        let mut bq = self.q_value(v, s, 0);
        for a in 1..self.actions.len() {
            let q = self.q_value(v, s, a);
            if q > bq {
                bq = q;
                best = a;
            }
        }
        best
    }

    /// Exact policy iteration; returns per-state actions and values.
    pub fn optimal(&self) -> (Vec<usize>, Vec<Rational>) {
        let mut acts = vec![0; self.len()];
        loop {
            let v = self.evaluate(&acts);
            let mut changed = false;
            for s in 0..self.len() {
                let cur = self.q_value(&v, s, acts[s]);
                let g = self.greedy(&v, s);
                if self.q_value(&v, s, g) > cur {
                    acts[s] = g;
                    changed = true;
                }
            }
            if !changed {
                let acts: Vec<usize> = (0..self.len()).map(|s| self.greedy(&v, s)).collect();
                return (acts, v);
            }
        }
    }

    /// Shared policy from per-state actions; unseen signature rows get the
    /// first action.
    pub fn to_policy(&self, acts: &[usize]) -> Result<Policy> {
        let mut pol = self.shape();
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for (s, &a) in acts.iter().enumerate() {
            let r = self.sig_rank(s);
            if let Some(prev) = seen.insert(r, a) {
                if prev != a {
                    return Err(Error::NotMdpShaped("states sharing an observation need different actions".into()));
                }
            }
            pol.rule[r] = a;
        }
        Ok(pol)
    }
}

/// Gauss-Jordan elimination on an augmented matrix with a unique solution.
fn solve_linear(mut m: Vec<Vec<Rational>>) -> Vec<Rational> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero()).expect("nonsingular system");
        m.swap(col, piv);
        let inv = m[col][col].recip();
        for x in m[col].iter_mut().skip(col) {
            *x *= &inv;
        }
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r == col || row[col].is_zero() {
                continue;
            }
            let f = row[col].clone();
            for (x, p) in row.iter_mut().zip(&pivot_row).skip(col) {
                *x -= &f * p;
            }
        }
    }
    m.into_iter().map(|row| row[n].clone()).collect()
}

/// Expected discounted utility of a stationary policy from the start
/// distribution, exact.
pub fn solve_policy_evaluation(tpl: &DiagramTemplate, pol: &Policy) -> Result<Rational> {
    let mdp = Mdp::from_template(tpl)?;
    let acts = mdp.state_actions(pol)?;
    Ok(mdp.start_value(&mdp.evaluate(&acts)))
}

/// Optimal stationary policy by exact policy iteration.
pub fn solve_policy_iteration(tpl: &DiagramTemplate) -> Result<SolveResult> {
    let mdp = Mdp::from_template(tpl)?;
    let (acts, v) = mdp.optimal();
    let policy = mdp.to_policy(&acts)?;
    Ok(SolveResult::single(policy, mdp.start_value(&v), Method::PolicyIteration))
}
