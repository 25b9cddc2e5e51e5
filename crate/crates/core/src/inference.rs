//! Exact probabilistic semantics of fully resolved diagrams.
//!
//! Every node contributes one factor `P(X = x | Pa = pa)`. Queries prune
//! barren nodes (non-ancestors of the query) and run variable elimination in
//! min-fill order, ties broken by natural node id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::diagram::{Annotation, Diagram, NodeKind, NatId};
use crate::error::{Error, Result};
use crate::value::{natural_cmp, Domain, Rational, TupleIter, Value};

/// Total mapping from node id to value.
pub type Assignment = BTreeMap<String, Value>;

/// Dense table over a set of variables. Variables are kept in ascending
/// index order; the last one varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub values: Vec<Rational>,
}

impl Factor {
    pub fn scalar(v: Rational) -> Self {
        Factor {
            vars: vec![],
            cards: vec![],
            values: vec![v],
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.vars.is_empty()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.vars.len()];
        for i in (0..self.vars.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    pub fn product(&self, other: &Factor) -> Factor {
        let mut vars: Vec<usize> = self.vars.iter().chain(&other.vars).copied().collect();
        vars.sort_unstable();
        vars.dedup();
        let card_of = |v: usize| {
            self.vars
                .iter()
                .position(|&x| x == v)
                .map(|i| self.cards[i])
                .or_else(|| other.vars.iter().position(|&x| x == v).map(|i| other.cards[i]))
                .expect("variable in one factor")
        };
        let cards: Vec<usize> = vars.iter().map(|&v| card_of(v)).collect();
        let embed = |f: &Factor| -> Vec<usize> {
            let st = f.strides();
            vars.iter()
                .map(|v| f.vars.iter().position(|x| x == v).map_or(0, |i| st[i]))
                .collect()
        };
        let sa = embed(self);
        let sb = embed(other);
        let n: usize = cards.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut counter = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..n {
            let (a, b) = (&self.values[ia], &other.values[ib]);
            values.push(if a.is_zero() || b.is_zero() {
                Rational::zero()
            } else {
                a * b
            });
            for pos in (0..vars.len()).rev() {
                counter[pos] += 1;
                ia += sa[pos];
                ib += sb[pos];
                if counter[pos] < cards[pos] {
                    break;
                }
                ia -= sa[pos] * cards[pos];
                ib -= sb[pos] * cards[pos];
                counter[pos] = 0;
            }
        }
        Factor { vars, cards, values }
    }

    pub fn sum_out(&self, var: usize) -> Factor {
        let Some(pos) = self.vars.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let st = self.strides();
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        let card = cards.remove(pos);
        let inner = st[pos];
        let outer = self.values.len() / (inner * card);
        let mut values = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = Rational::zero();
                for k in 0..card {
                    let v = &self.values[o * inner * card + k * inner + i];
                    if !v.is_zero() {
                        acc += v;
                    }
                }
                values.push(acc);
            }
        }
        Factor { vars, cards, values }
    }

    pub fn total(&self) -> Rational {
        self.values.iter().filter(|v| !v.is_zero()).cloned().sum()
    }

    /// Value at an assignment given as (var, value index) pairs covering the
    /// factor's scope.
    pub fn at(&self, idx: &HashMap<usize, usize>) -> &Rational {
        let st = self.strides();
        let off: usize = self.vars.iter().zip(&st).map(|(v, s)| idx[v] * s).sum();
        &self.values[off]
    }

    /// Entries as (value indices in `vars` order, weight).
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, &Rational)> {
        TupleIter::new(self.cards.clone()).zip(self.values.iter())
    }
}

/// Arithmetic over node values, used by events and expectations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Term {
    /// Node id, or a symbol literal when no node carries that name.
    Name(String),
    Lit(Value),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
    Neg(Box<Term>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Boolean event over assignments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Bool(bool),
    Cmp(CmpOp, Term, Term),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn eq(node: &str, v: impl Into<Value>) -> Expr {
        Expr::Cmp(CmpOp::Eq, Term::Name(node.into()), Term::Lit(v.into()))
    }

    pub fn cmp(op: CmpOp, a: Term, b: Term) -> Expr {
        Expr::Cmp(op, a, b)
    }

    pub fn and(self, other: Expr) -> Expr {
        Expr::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Expr) -> Expr {
        Expr::Or(Box::new(self), Box::new(other))
    }

    pub fn negate(self) -> Expr {
        Expr::Not(Box::new(self))
    }
}

impl Term {
    pub fn node(id: &str) -> Term {
        Term::Name(id.into())
    }

    fn names<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Term::Name(n) => {
                out.insert(n);
            }
            Term::Lit(_) => {}
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) => {
                a.names(out);
                b.names(out);
            }
            Term::Neg(a) => a.names(out),
        }
    }

    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<Value>) -> Result<Value> {
        let int = |t: &Term| -> Result<BigInt> {
            match t.eval(lookup)? {
                Value::Int(n) => Ok(n),
                Value::Sym(s) => Err(Error::Event(format!("arithmetic on symbol `{s}`"))),
            }
        };
        Ok(match self {
            Term::Name(n) => lookup(n).unwrap_or_else(|| Value::Sym(n.clone())),
            Term::Lit(v) => v.clone(),
            Term::Add(a, b) => Value::Int(int(a)? + int(b)?),
            Term::Sub(a, b) => Value::Int(int(a)? - int(b)?),
            Term::Mul(a, b) => Value::Int(int(a)? * int(b)?),
            Term::Neg(a) => Value::Int(-int(a)?),
        })
    }
}

impl Expr {
    fn names<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Bool(_) => {}
            Expr::Cmp(_, a, b) => {
                a.names(out);
                b.names(out);
            }
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.names(out);
                b.names(out);
            }
            Expr::Not(a) => a.names(out),
        }
    }

    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<Value>) -> Result<bool> {
        Ok(match self {
            Expr::Bool(b) => *b,
            Expr::Cmp(op, a, b) => {
                let (x, y) = (a.eval(lookup)?, b.eval(lookup)?);
                match op {
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                    _ => {
                        let (Value::Int(x), Value::Int(y)) = (&x, &y) else {
                            return Err(Error::Event(format!("ordering comparison between `{x}` and `{y}`")));
                        };
                        match op {
                            CmpOp::Lt => x < y,
                            CmpOp::Le => x <= y,
                            CmpOp::Gt => x > y,
                            CmpOp::Ge => x >= y,
                            _ => unreachable!(),
                        }
                    }
                }
            }
            Expr::And(a, b) => a.eval(lookup)? && b.eval(lookup)?,
            Expr::Or(a, b) => a.eval(lookup)? || b.eval(lookup)?,
            Expr::Not(a) => !a.eval(lookup)?,
        })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Name(n) => f.write_str(n),
            Term::Lit(v) => write!(f, "{v}"),
            Term::Add(a, b) => write!(f, "({a} + {b})"),
            Term::Sub(a, b) => write!(f, "({a} - {b})"),
            Term::Mul(a, b) => write!(f, "({a} * {b})"),
            Term::Neg(a) => write!(f, "-{a}"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Cmp(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
            Expr::And(a, b) => write!(f, "({a} && {b})"),
            Expr::Or(a, b) => write!(f, "({a} || {b})"),
            Expr::Not(a) => write!(f, "!({a})"),
        }
    }
}

/// A diagram compiled to one factor per node. Decision rules can be swapped
/// without recompiling the rest.
#[derive(Clone, Debug)]
pub struct Model {
    names: Vec<String>,
    index: HashMap<String, usize>,
    domains: Vec<Domain>,
    parents: Vec<Vec<usize>>,
    kinds: Vec<NodeKind>,
    time: Vec<i64>,
    cpts: Vec<Option<Factor>>,
    policy_of: Vec<Option<String>>,
    gamma: Rational,
}

impl Model {
    pub fn new(d: &Diagram) -> Result<Model> {
        let report = d.validate();
        if !report.is_ok() {
            return Err(Error::Invalid(report));
        }
        let names = d.topological_order()?;
        let index: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut m = Model {
            domains: names.iter().map(|n| d.domain_of(n).cloned()).collect::<Result<_>>()?,
            parents: names.iter().map(|n| d.nodes[n].parents.iter().map(|p| index[p]).collect()).collect(),
            kinds: names.iter().map(|n| d.nodes[n].kind).collect(),
            time: names.iter().map(|n| d.nodes[n].time_index()).collect(),
            cpts: vec![None; names.len()],
            policy_of: vec![None; names.len()],
            gamma: d.gamma.clone(),
            names,
            index,
        };
        for i in 0..m.names.len() {
            let node = &d.nodes[&m.names[i]];
            let cpt = match &node.annotation {
                Annotation::Const(v) => {
                    let k = m.domains[i].index_of(v).expect("validated");
                    Some(m.det_factor(i, |_| k))
                }
                Annotation::Det(t) => {
                    let tab = &d.tables[t];
                    let dom = m.domains[i].clone();
                    let pdoms: Vec<Domain> = m.parents[i].iter().map(|&p| m.domains[p].clone()).collect();
                    Some(m.det_factor(i, |pa| {
                        let key: Vec<Value> = pa.iter().zip(&pdoms).map(|(&j, d)| d.value(j).clone()).collect();
                        dom.index_of(tab.get(&key).expect("total")).expect("in domain")
                    }))
                }
                Annotation::Stoch(k) => {
                    let ker = &d.kernels[k];
                    let pdoms: Vec<Domain> = m.parents[i].iter().map(|&p| m.domains[p].clone()).collect();
                    Some(m.kernel_factor(i, |pa| {
                        let key: Vec<Value> = pa.iter().zip(&pdoms).map(|(&j, d)| d.value(j).clone()).collect();
                        ker.dense_row(&key)
                    }))
                }
                Annotation::Policy(p) => {
                    m.policy_of[i] = Some(p.clone());
                    None
                }
            };
            m.cpts[i] = cpt;
        }
        Ok(m)
    }

    fn scope(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        // Factor scope in ascending index order plus the permutation that maps
        // (parents..., self) onto it.
        let mut vars: Vec<usize> = self.parents[i].clone();
        vars.push(i);
        let mut sorted = vars.clone();
        sorted.sort_unstable();
        let perm = vars.iter().map(|v| sorted.iter().position(|x| x == v).unwrap()).collect();
        (sorted, perm)
    }

    fn kernel_factor(&self, i: usize, row: impl Fn(&[usize]) -> Vec<Rational>) -> Factor {
        let (vars, perm) = self.scope(i);
        let cards: Vec<usize> = vars.iter().map(|&v| self.domains[v].len()).collect();
        let pcards: Vec<usize> = self.parents[i].iter().map(|&p| self.domains[p].len()).collect();
        let mut f = Factor {
            values: vec![Rational::zero(); cards.iter().product()],
            vars,
            cards,
        };
        let st = f.strides();
        for pa in TupleIter::new(pcards) {
            let probs = row(&pa);
            let base: usize = pa.iter().enumerate().map(|(k, &j)| j * st[perm[k]]).sum();
            let self_stride = st[*perm.last().unwrap()];
            for (x, p) in probs.into_iter().enumerate() {
                f.values[base + x * self_stride] = p;
            }
        }
        f
    }

    fn det_factor(&self, i: usize, out: impl Fn(&[usize]) -> usize) -> Factor {
        let n = self.domains[i].len();
        self.kernel_factor(i, |pa| {
            let mut row = vec![Rational::zero(); n];
            row[out(pa)] = Rational::one();
            row
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn var(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn domain(&self, i: usize) -> &Domain {
        &self.domains[i]
    }

    pub fn parents_of(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn gamma(&self) -> &Rational {
        &self.gamma
    }

    /// Nodes whose factor still waits for a decision rule.
    pub fn unresolved(&self) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| self.cpts[i].is_none()).collect()
    }

    /// Installs a deterministic rule: `rule[rank of parent tuple]` is the
    /// action index.
    pub fn set_rule(&mut self, i: usize, rule: &[usize]) {
        let cards: Vec<usize> = self.parents[i].iter().map(|&p| self.domains[p].len()).collect();
        let f = self.det_factor(i, |pa| rule[crate::value::tuple_rank(pa, &cards)]);
        self.cpts[i] = Some(f);
    }

    /// Installs a rule on every node still carrying a policy parameter.
    pub fn set_policy_rule(&mut self, rule: &[usize]) {
        for i in 0..self.names.len() {
            if self.policy_of[i].is_some() {
                self.set_rule(i, rule);
            }
        }
    }

    pub fn policy_nodes(&self) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| self.policy_of[i].is_some()).collect()
    }

    fn relevant(&self, seeds: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = seeds.iter().copied().collect();
        while let Some(i) = stack.pop() {
            if seen.insert(i) {
                stack.extend(self.parents[i].iter().copied());
            }
        }
        seen
    }

    /// Unnormalised joint over `keep` after multiplying in `extra` factors.
    pub fn query(&self, keep: &[usize], extra: Vec<Factor>) -> Result<Factor> {
        let mut seeds: BTreeSet<usize> = keep.iter().copied().collect();
        for f in &extra {
            seeds.extend(f.vars.iter().copied());
        }
        let rel = self.relevant(&seeds);
        let mut pool = extra;
        for &i in &rel {
            match &self.cpts[i] {
                Some(f) => pool.push(f.clone()),
                None => {
                    return Err(Error::UnresolvedPolicy(
                        self.policy_of[i].clone().unwrap_or_else(|| self.names[i].clone()),
                    ))
                }
            }
        }
        let keep: BTreeSet<usize> = keep.iter().copied().collect();
        Ok(self.eliminate(pool, &keep))
    }

    fn eliminate(&self, mut pool: Vec<Factor>, keep: &BTreeSet<usize>) -> Factor {
        loop {
            let mut vars: BTreeSet<usize> = BTreeSet::new();
            for f in &pool {
                vars.extend(f.vars.iter().copied());
            }
            let todo: Vec<usize> = vars.difference(keep).copied().collect();
            if todo.is_empty() {
                break;
            }
            let var = self.min_fill(&pool, &todo);
            let (with, without): (Vec<Factor>, Vec<Factor>) = pool.into_iter().partition(|f| f.vars.contains(&var));
            pool = without;
            let prod = with
                .iter()
                .skip(1)
                .fold(with[0].clone(), |acc, f| acc.product(f));
            pool.push(prod.sum_out(var));
        }
        // Multiply smaller factors first to keep intermediates small.
        pool.sort_by_key(|f| f.values.len());
        pool.into_iter()
            .fold(Factor::scalar(Rational::one()), |acc, f| acc.product(&f))
    }

    fn min_fill(&self, pool: &[Factor], todo: &[usize]) -> usize {
        let mut adj: HashMap<usize, BTreeSet<usize>> = HashMap::new();
        for f in pool {
            for &a in &f.vars {
                let e = adj.entry(a).or_default();
                for &b in &f.vars {
                    if a != b {
                        e.insert(b);
                    }
                }
            }
        }
        let empty = BTreeSet::new();
        let fill = |v: usize| -> usize {
            let nb: Vec<usize> = adj.get(&v).unwrap_or(&empty).iter().copied().collect();
            let mut c = 0;
            for (k, &a) in nb.iter().enumerate() {
                for &b in &nb[k + 1..] {
                    if !adj[&a].contains(&b) {
                        c += 1;
                    }
                }
            }
            c
        };
        *todo
            .iter()
            .min_by(|&&a, &&b| {
                fill(a)
                    .cmp(&fill(b))
                    .then_with(|| NatId(self.names[a].clone()).cmp(&NatId(self.names[b].clone())))
            })
            .expect("non-empty")
    }

    /// Indicator factor of an event over the nodes it mentions.
    pub fn event_factor(&self, e: &Expr) -> Result<Factor> {
        let mut names = BTreeSet::new();
        e.names(&mut names);
        let vars: Vec<usize> = names.iter().filter_map(|n| self.index.get(*n).copied()).collect::<BTreeSet<_>>().into_iter().collect();
        self.tabulate(&vars, |lookup| {
            Ok(if e.eval(lookup)? {
                Rational::one()
            } else {
                Rational::zero()
            })
        })
    }

    /// Value factor of a numeric term over the nodes it mentions.
    pub fn term_factor(&self, t: &Term) -> Result<Factor> {
        let mut names = BTreeSet::new();
        t.names(&mut names);
        let vars: Vec<usize> = names.iter().filter_map(|n| self.index.get(*n).copied()).collect::<BTreeSet<_>>().into_iter().collect();
        self.tabulate(&vars, |lookup| match t.eval(lookup)? {
            Value::Int(n) => Ok(Rational::from_integer(n)),
            Value::Sym(s) => Err(Error::Event(format!("term evaluates to symbol `{s}`"))),
        })
    }

    fn tabulate(&self, vars: &[usize], f: impl Fn(&dyn Fn(&str) -> Option<Value>) -> Result<Rational>) -> Result<Factor> {
        let cards: Vec<usize> = vars.iter().map(|&v| self.domains[v].len()).collect();
        let mut values = Vec::new();
        for tup in TupleIter::new(cards.clone()) {
            let lookup = |name: &str| -> Option<Value> {
                let i = *self.index.get(name)?;
                let k = vars.iter().position(|&v| v == i)?;
                Some(self.domains[i].value(tup[k]).clone())
            };
            values.push(f(&lookup)?);
        }
        Ok(Factor {
            vars: vars.to_vec(),
            cards,
            values,
        })
    }

    pub fn prob(&self, e: &Expr) -> Result<Rational> {
        let ind = self.event_factor(e)?;
        Ok(self.query(&[], vec![ind])?.total())
    }

    pub fn cond_prob(&self, e: &Expr, c: &Expr) -> Result<Rational> {
        let pc = self.prob(c)?;
        if pc.is_zero() {
            return Err(Error::ZeroProbability);
        }
        let pec = self.prob(&e.clone().and(c.clone()))?;
        Ok(pec / pc)
    }

    pub fn expectation(&self, t: &Term) -> Result<Rational> {
        let tf = self.term_factor(t)?;
        let joint = self.query(&tf.vars, vec![])?;
        Ok(joint.product(&tf).total())
    }

    /// Distribution of one node, dense in domain order.
    pub fn marginal(&self, i: usize) -> Result<Vec<Rational>> {
        Ok(self.query(&[i], vec![])?.values)
    }

    /// Joint distribution over several nodes, optionally restricted by an
    /// event; returns non-zero entries with value indices in `vars` order.
    pub fn distribution(&self, vars: &[usize], evidence: Option<&Expr>) -> Result<Vec<(Vec<usize>, Rational)>> {
        let extra = match evidence {
            Some(e) => vec![self.event_factor(e)?],
            None => vec![],
        };
        let f = self.query(vars, extra)?;
        // f.vars is sorted; re-map to the caller's order.
        let pos: Vec<usize> = vars.iter().map(|v| f.vars.iter().position(|x| x == v).expect("kept")).collect();
        Ok(f.entries()
            .filter(|(_, p)| !p.is_zero())
            .map(|(ix, p)| (pos.iter().map(|&k| ix[k]).collect(), p.clone()))
            .collect())
    }

    /// Expected value of one utility node, undiscounted.
    pub fn expected_value(&self, i: usize) -> Result<Rational> {
        let marg = self.marginal(i)?;
        Ok(marg
            .iter()
            .zip(self.domains[i].values())
            .filter(|(p, _)| !p.is_zero())
            .map(|(p, v)| p * v.to_rational().expect("numeric utility"))
            .sum())
    }

    pub fn utility_vars(&self) -> Vec<usize> {
        let mut u: Vec<usize> = (0..self.names.len()).filter(|&i| self.kinds[i] == NodeKind::Utility).collect();
        u.sort_by(|&a, &b| natural_cmp(&self.names[a], &self.names[b]));
        u
    }

    /// Σ γ^t E(R_t) over utility nodes; a single utility node is undiscounted.
    pub fn expected_utility(&self) -> Result<Rational> {
        let us = self.utility_vars();
        if us.is_empty() {
            return Err(Error::NoUtility);
        }
        if us.len() == 1 {
            return self.expected_value(us[0]);
        }
        let mut total = Rational::zero();
        for &u in &us {
            let ev = self.expected_value(u)?;
            if !ev.is_zero() {
                total += discount(&self.gamma, self.time[u]) * ev;
            }
        }
        Ok(total)
    }

    /// Probability of a full assignment: the product of node factors.
    pub fn joint(&self, a: &Assignment) -> Result<Rational> {
        let mut idx = HashMap::new();
        for (i, name) in self.names.iter().enumerate() {
            let v = a
                .get(name)
                .ok_or_else(|| Error::Event(format!("assignment misses node `{name}`")))?;
            let k = self.domains[i]
                .index_of(v)
                .ok_or_else(|| Error::Event(format!("`{v}` is not in the domain of `{name}`")))?;
            idx.insert(i, k);
        }
        if a.len() != self.names.len() {
            return Err(Error::Event("assignment names nodes outside the diagram".into()));
        }
        let mut p = Rational::one();
        for i in 0..self.names.len() {
            let f = self.cpts[i]
                .as_ref()
                .ok_or_else(|| Error::UnresolvedPolicy(self.policy_of[i].clone().unwrap_or_default()))?;
            let v = f.at(&idx);
            if v.is_zero() {
                return Ok(Rational::zero());
            }
            p *= v;
        }
        Ok(p)
    }
}

pub fn discount(gamma: &Rational, t: i64) -> Rational {
    if t >= 0 {
        num_traits::pow(gamma.clone(), t as usize)
    } else {
        num_traits::pow(gamma.recip(), (-t) as usize)
    }
}

pub fn joint(d: &Diagram, a: &Assignment) -> Result<Rational> {
    Model::new(d)?.joint(a)
}

pub fn prob(d: &Diagram, e: &Expr) -> Result<Rational> {
    Model::new(d)?.prob(e)
}

pub fn cond_prob(d: &Diagram, e: &Expr, c: &Expr) -> Result<Rational> {
    Model::new(d)?.cond_prob(e, c)
}

pub fn expectation(d: &Diagram, t: &Term) -> Result<Rational> {
    Model::new(d)?.expectation(t)
}

pub fn expected_utility(d: &Diagram) -> Result<Rational> {
    Model::new(d)?.expected_utility()
}

/// Marginal of one node keyed by value.
pub fn marginal(d: &Diagram, node: &str) -> Result<Vec<(Value, Rational)>> {
    let m = Model::new(d)?;
    let i = m.var(node)?;
    Ok(m.marginal(i)?
        .into_iter()
        .enumerate()
        .map(|(k, p)| (m.domain(i).value(k).clone(), p))
        .collect())
}
