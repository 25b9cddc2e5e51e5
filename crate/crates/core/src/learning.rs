//! Observational records and the tabular learning function.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagram::{Diagram, FunctionTable, Kernel};
use crate::error::{Error, Result};
use crate::inference::Model;
use crate::value::{value_tuples, Domain, Rational, Value};

/// One observation: the state reached, the state before, the action taken.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub now: Vec<Value>,
    pub prev: Vec<Value>,
    pub action: Value,
}

#[derive(Debug)]
struct Link {
    triple: Triple,
    prev: Option<Arc<Link>>,
}

/// Append-only record with value semantics: `append` returns a new record
/// that shares its prefix with the old one.
#[derive(Clone, Debug, Default)]
pub struct ObservationalRecord {
    len: usize,
    head: Option<Arc<Link>>,
}

impl PartialEq for ObservationalRecord {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.triples() == other.triples()
    }
}

impl ObservationalRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples(ts: impl IntoIterator<Item = Triple>) -> Self {
        ts.into_iter().fold(Self::new(), |o, t| o.append(t))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn append(&self, t: Triple) -> Self {
        ObservationalRecord {
            len: self.len + 1,
            head: Some(Arc::new(Link {
                triple: t,
                prev: self.head.clone(),
            })),
        }
    }

    /// Appends after checking every value against the state and action domains.
    pub fn append_checked(&self, t: Triple, states: &[Domain], actions: &Domain) -> Result<Self> {
        let fits = |vs: &[Value]| vs.len() == states.len() && vs.iter().zip(states).all(|(v, d)| d.contains(v));
        if !fits(&t.now) || !fits(&t.prev) || !actions.contains(&t.action) {
            return Err(Error::DomainMismatch("observation outside the declared domains".into()));
        }
        Ok(self.append(t))
    }

    pub fn last(&self) -> Option<&Triple> {
        self.head.as_ref().map(|l| &l.triple)
    }

    /// Triples in append order.
    pub fn triples(&self) -> Vec<&Triple> {
        let mut out = Vec::with_capacity(self.len);
        let mut cur = self.head.as_deref();
        while let Some(l) = cur {
            out.push(&l.triple);
            cur = l.prev.as_deref();
        }
        out.reverse();
        out
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.triples()
            .into_iter()
            .map(|t| serde_json::to_string(t).expect("plain data") + "\n")
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearnerConfig {
    /// Additive smoothing; zero gives plain frequencies.
    pub alpha: Rational,
    pub exploration_rate: Rational,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            alpha: Rational::zero(),
            exploration_rate: Rational::zero(),
            seed: 0,
        }
    }
}

/// Domains a learned model ranges over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub components: Vec<(String, Domain)>,
    pub actions: Domain,
}

impl ModelShape {
    pub fn state_domains(&self) -> Vec<Domain> {
        self.components.iter().map(|(_, d)| d.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearnedModel {
    /// One kernel per state component, over (all components, action).
    pub kernels: Vec<Kernel>,
    pub record_len: usize,
    pub alpha: Rational,
}

/// Tabular add-alpha estimate of every component's next value given the full
/// previous state and the action. Unseen rows are uniform.
pub fn fit(o: &ObservationalRecord, shape: &ModelShape, cfg: &LearnerConfig) -> LearnedModel {
    let all: Vec<usize> = (0..shape.components.len()).collect();
    let kernels = (0..shape.components.len())
        .map(|c| fit_component(o, shape, cfg, c, &all))
        .collect();
    LearnedModel {
        kernels,
        record_len: o.len(),
        alpha: cfg.alpha.clone(),
    }
}

/// Estimate of component `c` from the given previous-state components and
/// the action only.
pub fn fit_component(o: &ObservationalRecord, shape: &ModelShape, cfg: &LearnerConfig, c: usize, inputs: &[usize]) -> Kernel {
    let (cname, out) = &shape.components[c];
    let mut counts: BTreeMap<Vec<Value>, BTreeMap<Value, u64>> = BTreeMap::new();
    for t in o.triples() {
        let mut key: Vec<Value> = inputs.iter().map(|&i| t.prev[i].clone()).collect();
        key.push(t.action.clone());
        *counts.entry(key).or_default().entry(t.now[c].clone()).or_default() += 1;
    }
    let mut in_doms: Vec<Domain> = inputs.iter().map(|&i| shape.components[i].1.clone()).collect();
    in_doms.push(shape.actions.clone());
    let n = Rational::from_integer(BigInt::from(out.len()));
    Kernel::from_fn(format!("L_{cname}"), in_doms, out.clone(), |key| {
        let row = counts.get(key);
        let total: u64 = row.map(|r| r.values().sum()).unwrap_or(0);
        let denom = Rational::from_integer(total.into()) + &cfg.alpha * &n;
        if denom.is_zero() {
            let p = n.recip();
            return out.values().iter().map(|v| (v.clone(), p.clone())).collect();
        }
        out.values()
            .iter()
            .map(|v| {
                let c = row.and_then(|r| r.get(v)).copied().unwrap_or(0);
                (v.clone(), (Rational::from_integer(c.into()) + &cfg.alpha) / &denom)
            })
            .collect()
    })
}

/// Largest total-variation distance between corresponding rows.
pub fn kernel_divergence(a: &Kernel, b: &Kernel) -> Result<Rational> {
    if a.inputs != b.inputs || a.output != b.output {
        return Err(Error::DomainMismatch(format!("kernels `{}` and `{}` differ in shape", a.name, b.name)));
    }
    let doms: Vec<&Domain> = a.inputs.iter().collect();
    let mut worst = Rational::zero();
    for key in value_tuples(&doms) {
        let tv: Rational = a
            .output
            .values()
            .iter()
            .map(|v| (a.prob(&key, v) - b.prob(&key, v)).abs())
            .sum::<Rational>()
            / Rational::from_integer(2.into());
        if tv > worst {
            worst = tv;
        }
    }
    Ok(worst)
}

/// Max-TV divergence across all components.
pub fn divergence(l: &LearnedModel, truth: &[Kernel]) -> Result<Rational> {
    if l.kernels.len() != truth.len() {
        return Err(Error::DomainMismatch("component count differs".into()));
    }
    let mut worst = Rational::zero();
    for (a, b) in l.kernels.iter().zip(truth) {
        let d = kernel_divergence(a, b)?;
        if d > worst {
            worst = d;
        }
    }
    Ok(worst)
}

pub fn is_reasonable(l: &LearnedModel, truth: &[Kernel], epsilon: &Rational) -> Result<bool> {
    Ok(divergence(l, truth)? <= *epsilon)
}

/// Records proportional to the true transition frequencies, so that an
/// alpha-zero fit reproduces the kernels exactly. Components are sampled
/// independently given the previous state and action.
pub fn frequency_records(shape: &ModelShape, truth: &[Kernel]) -> Result<ObservationalRecord> {
    let doms: Vec<&Domain> = shape.components.iter().map(|(_, d)| d).collect();
    let mut o = ObservationalRecord::new();
    for prev in value_tuples(&doms) {
        for a in shape.actions.values() {
            let mut key = prev.clone();
            key.push(a.clone());
            let mut joint: Vec<(Vec<Value>, Rational)> = vec![(vec![], Rational::one())];
            for k in truth {
                let mut next = Vec::new();
                for (partial, p) in &joint {
                    for (v, q) in k.row(&key) {
                        let mut s = partial.clone();
                        s.push(v.clone());
                        next.push((s, p * q));
                    }
                }
                joint = next;
            }
            let scale = joint.iter().fold(BigInt::one(), |acc, (_, p)| acc.lcm(p.denom()));
            for (now, p) in joint {
                let n = (p * Rational::from_integer(scale.clone())).to_integer();
                let n = n
                    .to_u64()
                    .ok_or_else(|| Error::Env("transition probabilities need too many records".into()))?;
                for _ in 0..n {
                    o = o.append(Triple {
                        now: now.clone(),
                        prev: prev.clone(),
                        action: a.clone(),
                    });
                }
            }
        }
    }
    Ok(o)
}

/// Random stream for one purpose within a run.
pub fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose);
    r
}

/// True with probability `p`, drawn exactly on the common denominator.
pub fn bernoulli(rng: &mut ChaCha8Rng, p: &Rational) -> Result<bool> {
    if p.is_zero() {
        return Ok(false);
    }
    if *p >= Rational::one() {
        return Ok(true);
    }
    let d = p.denom().to_u64().ok_or_else(|| Error::Env("probability denominator too large".into()))?;
    let n = p.numer().to_u64().expect("below one");
    Ok(rng.random_range(0..d) < n)
}

/// Draws from a finite distribution whose probabilities sum to one.
pub fn sample<'a, T>(rng: &mut ChaCha8Rng, dist: &'a [(T, Rational)]) -> Result<&'a T> {
    let scale = dist.iter().fold(BigInt::one(), |acc, (_, p)| acc.lcm(p.denom()));
    let total = scale
        .to_u64()
        .ok_or_else(|| Error::Env("probability denominators too large to sample".into()))?;
    let mut r = rng.random_range(0..total);
    for (x, p) in dist {
        let w = (p * Rational::from_integer(scale.clone())).to_integer().to_u64().expect("fits");
        if r < w {
            return Ok(x);
        }
        r -= w;
    }
    Err(Error::Env("distribution does not sum to one".into()))
}

/// Checks that sensor readings one step ahead agree between a learning-world
/// step and a planning-world step, for every start state and action.
///
/// Both diagrams must have root nodes `S_0` and `A_0` and a node `S_1`. The
/// planning world may instead have a root `E_0` carrying the observed state,
/// with `S_0` estimated from it.
pub fn check_grounding(
    lw: &Diagram,
    pw: &Diagram,
    sr: &FunctionTable,
    srp: &FunctionTable,
    approx: &Rational,
) -> Result<bool> {
    if sr.output != srp.output {
        return Err(Error::DomainMismatch("sensor readings have different domains".into()));
    }
    let mut ml = Model::new(lw)?;
    let mut mp = Model::new(pw)?;
    let obs_p = if pw.nodes.contains_key("E_0") { "E_0" } else { "S_0" };
    let (ls0, la0, ls1) = (ml.var("S_0")?, ml.var("A_0")?, ml.var("S_1")?);
    let (pe, pa0, ps0, ps1) = (mp.var(obs_p)?, mp.var("A_0")?, mp.var("S_0")?, mp.var("S_1")?);
    if [ls0, la0].iter().any(|&v| !ml.parents_of(v).is_empty()) || !mp.parents_of(pe).is_empty() {
        return Err(Error::DomainMismatch("start state and action must be root nodes".into()));
    }
    let read = |m: &Model, var: usize, table: &FunctionTable| -> Result<BTreeMap<Value, Rational>> {
        let mut out = BTreeMap::new();
        for (i, p) in m.marginal(var)?.into_iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            let r = table
                .get(&[m.domain(var).value(i).clone()])
                .ok_or_else(|| Error::DomainMismatch(format!("sensor `{}` is not defined on the state", table.name)))?
                .clone();
            *out.entry(r).or_insert_with(Rational::zero) += p;
        }
        Ok(out)
    };
    let tv = |a: &BTreeMap<Value, Rational>, b: &BTreeMap<Value, Rational>| -> Rational {
        let zero = Rational::zero();
        let keys: std::collections::BTreeSet<&Value> = a.keys().chain(b.keys()).collect();
        keys.into_iter()
            .map(|k| (a.get(k).unwrap_or(&zero) - b.get(k).unwrap_or(&zero)).abs())
            .sum::<Rational>()
            / Rational::from_integer(2.into())
    };
    let sdom = ml.domain(ls0).clone();
    let adom = ml.domain(la0).clone();
    for s in 0..sdom.len() {
        let pe_ix = mp
            .domain(pe)
            .index_of(sdom.value(s))
            .ok_or_else(|| Error::DomainMismatch("planning world cannot observe this state".into()))?;
        ml.set_rule(ls0, &[s]);
        mp.set_rule(pe, &[pe_ix]);
        for a in 0..adom.len() {
            let pa_ix = mp
                .domain(pa0)
                .index_of(adom.value(a))
                .ok_or_else(|| Error::DomainMismatch("action domains differ".into()))?;
            ml.set_rule(la0, &[a]);
            mp.set_rule(pa0, &[pa_ix]);
            if tv(&read(&ml, ls0, sr)?, &read(&mp, ps0, srp)?) > *approx {
                return Ok(false);
            }
            if tv(&read(&ml, ls1, sr)?, &read(&mp, ps1, srp)?) > *approx {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::rat;

    fn shape() -> ModelShape {
        ModelShape {
            components: vec![("S".into(), Domain::symbols("S", &["x1", "x2"]))],
            actions: Domain::symbols("A", &["a"]),
        }
    }

    fn tr(now: &str, prev: &str) -> Triple {
        Triple {
            now: vec![Value::from(now)],
            prev: vec![Value::from(prev)],
            action: Value::from("a"),
        }
    }

    #[test]
    fn append_is_persistent() {
        let o = ObservationalRecord::new();
        let o1 = o.append(tr("x1", "x2"));
        let o2 = o1.append(tr("x2", "x1"));
        assert_eq!(o.len(), 0);
        assert_eq!(o1.len(), 1);
        assert_eq!(o1.last(), Some(&tr("x1", "x2")));
        assert_eq!(o2.triples(), vec![&tr("x1", "x2"), &tr("x2", "x1")]);
    }

    #[test]
    fn counting_fit() {
        let o = ObservationalRecord::from_triples([tr("x1", "x1"), tr("x1", "x1"), tr("x1", "x1"), tr("x2", "x1")]);
        let l = fit(&o, &shape(), &LearnerConfig::default());
        let k = &l.kernels[0];
        let key = [Value::from("x1"), Value::from("a")];
        assert_eq!(k.dense_row(&key), vec![rat(3, 4), rat(1, 4)]);
        // Unseen row is uniform.
        assert_eq!(k.dense_row(&[Value::from("x2"), Value::from("a")]), vec![rat(1, 2), rat(1, 2)]);
        let smooth = fit(&o, &shape(), &LearnerConfig { alpha: rat(1, 1), ..Default::default() });
        assert_eq!(smooth.kernels[0].dense_row(&key), vec![rat(4, 6), rat(2, 6)]);
    }

    #[test]
    fn tv_examples() {
        let s = shape();
        let dom = s.components[0].1.clone();
        let ins = vec![dom.clone(), s.actions.clone()];
        let det = Kernel::from_fn("S", ins.clone(), dom.clone(), |_| vec![(Value::from("x1"), rat(1, 1))]);
        let uni = Kernel::from_fn("U", ins.clone(), dom.clone(), |_| {
            vec![(Value::from("x1"), rat(1, 2)), (Value::from("x2"), rat(1, 2))]
        });
        assert_eq!(kernel_divergence(&det, &det).unwrap(), rat(0, 1));
        assert_eq!(kernel_divergence(&det, &uni).unwrap(), rat(1, 2));
        let shifted = Kernel::from_fn("V", ins, dom, |t| {
            if t[0] == Value::from("x1") {
                vec![(Value::from("x1"), rat(3, 4)), (Value::from("x2"), rat(1, 4))]
            } else {
                vec![(Value::from("x1"), rat(1, 1))]
            }
        });
        assert_eq!(kernel_divergence(&det, &shifted).unwrap(), rat(1, 4));
    }

    #[test]
    fn frequency_records_reproduce_kernel() {
        let s = shape();
        let dom = s.components[0].1.clone();
        let k = Kernel::from_fn("S", vec![dom.clone(), s.actions.clone()], dom, |_| {
            vec![(Value::from("x1"), rat(1, 3)), (Value::from("x2"), rat(2, 3))]
        });
        let o = frequency_records(&s, std::slice::from_ref(&k)).unwrap();
        assert_eq!(o.len(), 6);
        let l = fit(&o, &s, &LearnerConfig::default());
        assert_eq!(divergence(&l, &[k]).unwrap(), rat(0, 1));
    }

    #[test]
    fn sampling_is_seeded() {
        let dist = vec![("a", rat(1, 3)), ("b", rat(2, 3))];
        let draw = |seed| {
            let mut r = stream(seed, 0);
            (0..20).map(|_| *sample(&mut r, &dist).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        let mut r = stream(1, 1);
        assert!(!bernoulli(&mut r, &rat(0, 1)).unwrap());
        assert!(bernoulli(&mut r, &rat(1, 1)).unwrap());
    }
}
