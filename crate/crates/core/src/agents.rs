//! Learning-world agents that rebuild and solve a planning world every tick.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagram::{Annotation, Diagram, FunctionTable, Node, NodeKind};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::inference::discount;
use crate::learning::{bernoulli, fit, fit_component, frequency_records, stream, LearnerConfig, ObservationalRecord, Triple};
use crate::planning::{
    solve_backward_induction, solve_enumeration, solve_policy_iteration, Policy, SolveResult, DEFAULT_CAP,
};
use crate::template::{DiagramTemplate, Horizon, NodeRef};
use crate::value::{format_rational, parse_rational, value_tuples, Domain, Rational, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    /// Factual planner on the learned model.
    FP,
    /// FP with random exploration.
    FPX,
    /// Short time horizon planner.
    STH,
    /// FP behind safety interlocks.
    SI,
    /// Input-terminal agent planning with the factual terminal dynamics.
    ITF,
    /// Input-terminal agent whose planning world ignores future terminal input.
    ITC,
    /// Counterfactual oracle.
    CO,
    /// Factual oracle, the baseline for CO.
    FO,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solver {
    #[serde(rename = "enum")]
    Enumeration,
    #[serde(rename = "bi")]
    BackwardInduction,
    #[serde(rename = "pi")]
    PolicyIteration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Go,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub gamma: Rational,
    /// Planning horizon (STH only).
    pub horizon: Option<u32>,
    pub solver: Solver,
    /// SI: stop once `t > t_max`.
    pub t_max: Option<u64>,
    /// SI: stop once the power metric exceeds this; `None` disables the check.
    pub u_max: Option<Rational>,
    /// Exploration probability (FPX, CO).
    pub exploration: Option<Rational>,
    pub learner: LearnerConfig,
    /// Seed the record with exact transition frequencies of the true dynamics.
    pub pretrain: bool,
    /// ITC: plan on the compact diagram without terminal nodes.
    pub compact: bool,
    pub cap: u64,
}

impl AgentSpec {
    /// Defaults for a kind; STH gets horizon 1 and SI gets `t_max = u64::MAX`.
    pub fn new(kind: AgentKind, gamma: Rational) -> AgentSpec {
        use AgentKind::*;
        AgentSpec {
            kind,
            gamma,
            horizon: (kind == STH).then_some(1),
            solver: match kind {
                STH | CO | FO => Solver::Enumeration,
                _ => Solver::PolicyIteration,
            },
            t_max: (kind == SI).then_some(u64::MAX),
            u_max: None,
            exploration: matches!(kind, FPX | CO).then(Rational::zero),
            learner: LearnerConfig::default(),
            pretrain: false,
            compact: false,
            cap: DEFAULT_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        use AgentKind::*;
        let k = self.kind;
        let bad = |m: &str| Err(Error::Config(format!("{k:?}: {m}")));
        if self.horizon.is_some() != (k == STH) {
            return bad("a horizon is required for STH and only for STH");
        }
        if self.horizon == Some(0) {
            return bad("horizon must be at least 1");
        }
        if self.t_max.is_some() != (k == SI) || (self.u_max.is_some() && k != SI) {
            return bad("t_max and u_max belong to SI only, which requires t_max");
        }
        if self.exploration.is_some() != matches!(k, FPX | CO) {
            return bad("an exploration rate is required for FPX and CO and only for them");
        }
        if let Some(x) = &self.exploration {
            if *x < Rational::zero() || *x > Rational::one() {
                return bad("exploration rate must be a probability");
            }
        }
        if self.compact && k != ITC {
            return bad("compact applies to ITC only");
        }
        let finite = matches!(k, STH | CO | FO);
        match (finite, self.solver) {
            (false, Solver::PolicyIteration) | (true, Solver::Enumeration | Solver::BackwardInduction) => Ok(()),
            (false, _) => bad("infinite-horizon planning worlds need the pi solver"),
            (true, _) => bad("finite planning worlds need the enum or bi solver"),
        }
    }
}

mod rational_text {
    use super::*;
    use serde::{de, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    fn parse<E: de::Error>(raw: Raw) -> std::result::Result<Rational, E> {
        match raw {
            Raw::Int(n) => Ok(Rational::from_integer(BigInt::from(n))),
            Raw::Text(s) => parse_rational(&s).ok_or_else(|| E::custom(format!("not a rational: `{s}`"))),
        }
    }

    pub fn serialize<S: Serializer>(r: &Option<Rational>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_str(&format_rational(r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Rational>, D::Error> {
        Option::<Raw>::deserialize(d)?.map(parse).transpose()
    }
}

/// TOML form of an agent spec. Rationals are strings such as `"9/10"`;
/// omitted fields take the kind's defaults, and `gamma` the environment's.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: Option<AgentKind>,
    #[serde(default, with = "rational_text", skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<Solver>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<u64>,
    /// A rational, or `"inf"` to disable the power interlock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<String>,
    #[serde(default, with = "rational_text", skip_serializing_if = "Option::is_none")]
    pub exploration: Option<Rational>,
    #[serde(default, with = "rational_text", skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compact: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
}

impl AgentConfig {
    pub fn resolve(&self, env: &Environment, seed: u64) -> Result<AgentSpec> {
        let kind = self.kind.ok_or_else(|| Error::Config("agent kind is missing".into()))?;
        let gamma = match &self.gamma {
            Some(g) => g.clone(),
            None => env.gamma()?,
        };
        let mut spec = AgentSpec::new(kind, gamma);
        if self.horizon.is_some() || kind == AgentKind::STH {
            spec.horizon = self.horizon.or(env.meta.defaults.horizon).or(spec.horizon);
        }
        if let Some(s) = self.solver {
            spec.solver = s;
        }
        if self.t_max.is_some() || kind == AgentKind::SI {
            spec.t_max = self.t_max.or(env.meta.defaults.t_max).or(spec.t_max);
        }
        spec.u_max = match self.u_max.as_deref() {
            Some("inf") => None,
            Some(u) => Some(parse_rational(u).ok_or_else(|| Error::Config(format!("u_max `{u}` is not a rational")))?),
            None if kind == AgentKind::SI => env.u_max()?,
            None => None,
        };
        if self.exploration.is_some() {
            spec.exploration = self.exploration.clone();
        }
        spec.learner = LearnerConfig {
            alpha: self.alpha.clone().unwrap_or_else(Rational::zero),
            exploration_rate: spec.exploration.clone().unwrap_or_else(Rational::zero),
            seed,
        };
        spec.pretrain = self.pretrain.unwrap_or(false);
        spec.compact = self.compact.unwrap_or(false);
        spec.cap = self.cap.unwrap_or(DEFAULT_CAP);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub o: ObservationalRecord,
    pub mode: Mode,
    pub t: u64,
    pub rng: ChaCha8Rng,
}

impl PartialEq for AgentState {
    fn eq(&self, other: &Self) -> bool {
        self.o == other.o && self.mode == other.mode && self.t == other.t && self.rng == other.rng
    }
}

impl AgentState {
    pub fn new(spec: &AgentSpec, env: &Environment, rng: ChaCha8Rng) -> Result<AgentState> {
        spec.validate()?;
        check_env(spec, env)?;
        let o = if spec.pretrain {
            frequency_records(&env.shape(), &env.true_kernels()?)?
        } else {
            ObservationalRecord::new()
        };
        Ok(AgentState {
            o,
            mode: Mode::Go,
            t: 0,
            rng,
        })
    }

    /// Records a realised transition and advances the clock.
    pub fn observe(&self, prev: &[Value], action: &Value, now: &[Value]) -> AgentState {
        AgentState {
            o: self.o.append(Triple {
                now: now.to_vec(),
                prev: prev.to_vec(),
                action: action.clone(),
            }),
            t: self.t + 1,
            ..self.clone()
        }
    }
}

fn check_env(spec: &AgentSpec, env: &Environment) -> Result<()> {
    use AgentKind::*;
    let need = |ok: bool, what: &str| {
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{:?} needs an environment with {what}; `{}` has none", spec.kind, env.name())))
        }
    };
    match spec.kind {
        SI => need(env.meta.null_action.is_some(), "a null action"),
        ITF | ITC => need(env.meta.terminal.is_some() && env.meta.reward.is_some(), "an input terminal"),
        CO | FO => need(env.meta.oracle.is_some(), "an oracle reward"),
        _ => need(env.meta.reward.is_some(), "per-step rewards"),
    }
}

/// A planning world ready for its solver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanningWorld {
    Finite(Diagram),
    Infinite(DiagramTemplate),
}

impl PlanningWorld {
    pub fn solve(&self, spec: &AgentSpec) -> Result<SolveResult> {
        match (self, spec.solver) {
            (PlanningWorld::Infinite(t), _) => solve_policy_iteration(t),
            (PlanningWorld::Finite(d), Solver::BackwardInduction) => solve_backward_induction(d),
            (PlanningWorld::Finite(d), _) => solve_enumeration(d, spec.cap),
        }
    }

    /// Ids of the decision node's parents at the first step.
    fn observed(&self) -> Result<Vec<String>> {
        match self {
            PlanningWorld::Finite(d) => Ok(d.node("A_0")?.parents.clone()),
            PlanningWorld::Infinite(t) => {
                let a = t.pattern("A").ok_or(Error::NoDecision)?;
                a.parents.iter().map(|r| r.resolve(0)).collect()
            }
        }
    }
}

fn observed_values(env: &Environment, ids: &[String], s: &[Value]) -> Result<Vec<Value>> {
    ids.iter()
        .map(|id| {
            let stem = id.strip_suffix("_0").unwrap_or(id);
            env.comp_index(stem)
                .map(|k| s[k].clone())
                .ok_or_else(|| Error::Env(format!("decision observes `{id}`, which is not a current state component")))
        })
        .collect()
}

fn retarget(r: &NodeRef, stem: &str, to: &str) -> NodeRef {
    match r {
        NodeRef::Indexed { stem: s, offset: 0 } if s == stem => NodeRef::fixed(to),
        other => other.clone(),
    }
}

/// Drops tables and kernels nothing refers to.
fn prune(tpl: &mut DiagramTemplate) {
    let anns: Vec<&Annotation> = tpl
        .base
        .values()
        .map(|n| &n.annotation)
        .chain(tpl.patterns.iter().map(|p| &p.annotation))
        .collect();
    let used: BTreeSet<String> = anns
        .iter()
        .filter_map(|a| match a {
            Annotation::Det(n) | Annotation::Stoch(n) => Some(n.clone()),
            _ => None,
        })
        .collect();
    tpl.tables.retain(|k, _| used.contains(k));
    tpl.kernels.retain(|k, _| used.contains(k));
    let doms: BTreeSet<String> = tpl
        .tables
        .values()
        .flat_map(|t| t.inputs.iter().chain([&t.output]))
        .chain(tpl.kernels.values().flat_map(|k| k.inputs.iter().chain([&k.output])))
        .map(|d| d.name().to_string())
        .chain(tpl.base.values().map(|n| n.domain.clone()))
        .chain(tpl.patterns.iter().map(|p| p.domain.clone()))
        .collect();
    tpl.domains.retain(|k, _| doms.contains(k));
}

/// The factual planning template: the environment's reward structure over
/// learned dynamics, started at `s`.
fn factual_template(spec: &AgentSpec, env: &Environment, o: &ObservationalRecord, s: &[Value]) -> Result<DiagramTemplate> {
    let shape = env.shape();
    let learned = fit(o, &shape, &spec.learner);
    let mut tpl = env.world.clone();
    tpl.label = format!("{}_p", env.name());
    tpl.gamma = spec.gamma.clone();
    tpl.horizon = Horizon::Infinite;
    tpl.kernels.clear();
    for ((c, _), k) in shape.components.iter().zip(learned.kernels) {
        tpl.base.get_mut(&format!("{c}_0")).expect("checked").annotation =
            Annotation::Const(s[env.comp_index(c).expect("component")].clone());
        tpl.pattern_mut(c).expect("checked").annotation = Annotation::Stoch(k.name.clone());
        tpl.add_kernel(k);
    }
    prune(&mut tpl);
    Ok(tpl)
}

/// Rewires a factual input-terminal template so that every reward reads the
/// terminal value observed now, and the policy no longer sees the terminal.
fn terminal_counterfactual(env: &Environment, mut tpl: DiagramTemplate) -> DiagramTemplate {
    let term = &env.meta.terminal.as_ref().expect("checked").component;
    let fixed = format!("{term}_0");
    for p in tpl.patterns.iter_mut() {
        if p.stem == *term {
            continue;
        }
        if p.kind == NodeKind::Decision {
            p.parents.retain(|r| !matches!(r, NodeRef::Indexed { stem, .. } if stem == term));
        } else {
            p.parents = p.parents.iter().map(|r| retarget(r, term, &fixed)).collect();
        }
    }
    tpl.label = format!("{}_ci", env.name());
    tpl
}

/// Compact form of the counterfactual input-terminal world: no terminal
/// nodes beyond the observed value, and non-terminal dynamics learned
/// without the terminal as input.
fn terminal_compact(spec: &AgentSpec, env: &Environment, o: &ObservationalRecord, s: &[Value]) -> Result<DiagramTemplate> {
    let term = env.meta.terminal.as_ref().expect("checked").component.clone();
    let ti = env.comp_index(&term).expect("checked");
    let shape = env.shape();
    let rest: Vec<usize> = (0..shape.components.len()).filter(|&k| k != ti).collect();
    let mut tpl = env.world.clone();
    tpl.label = format!("{}_ci_compact", env.name());
    tpl.gamma = spec.gamma.clone();
    tpl.kernels.clear();
    tpl.patterns.retain(|p| p.stem != term);
    for &k in &rest {
        let c = &shape.components[k].0;
        let ker = fit_component(o, &shape, &spec.learner, k, &rest);
        tpl.base.get_mut(&format!("{c}_0")).expect("checked").annotation = Annotation::Const(s[k].clone());
        let p = tpl.pattern_mut(c).expect("checked");
        p.parents.retain(|r| !matches!(r, NodeRef::Indexed { stem, .. } if *stem == term));
        p.annotation = Annotation::Stoch(ker.name.clone());
        tpl.add_kernel(ker);
    }
    tpl.base.get_mut(&format!("{term}_0")).expect("checked").annotation = Annotation::Const(s[ti].clone());
    let fixed = format!("{term}_0");
    for p in tpl.patterns.iter_mut() {
        p.parents = p.parents.iter().map(|r| retarget(r, &term, &fixed)).collect();
        if p.kind == NodeKind::Decision {
            p.parents.retain(|r| !matches!(r, NodeRef::Fixed(_)));
        }
    }
    prune(&mut tpl);
    Ok(tpl)
}

/// Two-step oracle diagram. The counterfactual version shows the blank
/// answer in both steps of its dynamics, so the chosen answer reaches the
/// reward only directly.
fn oracle_diagram(env: &Environment, o: &ObservationalRecord, s: &[Value], cfg: &LearnerConfig, counterfactual: bool) -> Result<Diagram> {
    let oracle = env.meta.oracle.as_ref().expect("checked");
    let shape = env.shape();
    let l = fit(o, &shape, cfg).kernels.remove(0);
    let sd = shape.components[0].1.clone();
    let ad = shape.actions.clone();
    let reward = env.table(&oracle.reward)?.clone();
    let mut d = Diagram::new(if counterfactual { "co" } else { "fo" });
    d.add_domain(sd.clone()).add_domain(ad.clone()).add_domain(reward.output.clone());
    let (sn, an, un) = (sd.name().to_string(), ad.name().to_string(), reward.output.name().to_string());
    d.add_node(Node::chance("S_0", &sn, &[], Annotation::Const(s[0].clone())));
    d.add_node(Node::decision("A_0", &an, &["S_0"], "pi"));
    d.add_node(Node::chance("Ab_0", &an, &[], Annotation::Const(oracle.blank.clone())));
    d.add_node(Node::chance("Ab_1", &an, &[], Annotation::Const(oracle.blank.clone())));
    let first = if counterfactual { "Ab_0" } else { "A_0" };
    d.add_node(Node::chance("S_1", &sn, &["S_0", first], Annotation::Stoch(l.name.clone())));
    d.add_node(Node::chance("S_2", &sn, &["S_1", "Ab_1"], Annotation::Stoch(l.name.clone())));
    d.add_node(Node::utility("R_0", &un, &["A_0", "S_0", "S_2"], &reward.name));
    d.add_kernel(l);
    d.add_table(reward);
    d.validated()
}

/// The planning world an agent of this kind builds from record `o` at state `s`.
pub fn build_planning_world(spec: &AgentSpec, env: &Environment, o: &ObservationalRecord, s: &[Value]) -> Result<PlanningWorld> {
    use AgentKind::*;
    check_env(spec, env)?;
    Ok(match spec.kind {
        FP | FPX | SI | ITF => PlanningWorld::Infinite(factual_template(spec, env, o, s)?),
        ITC if spec.compact => PlanningWorld::Infinite(terminal_compact(spec, env, o, s)?),
        ITC => PlanningWorld::Infinite(terminal_counterfactual(env, factual_template(spec, env, o, s)?)),
        STH => {
            let n = spec.horizon.expect("validated");
            let mut tpl = factual_template(spec, env, o, s)?;
            tpl.horizon = Horizon::Finite(n);
            PlanningWorld::Finite(tpl.unroll(n)?)
        }
        CO => PlanningWorld::Finite(oracle_diagram(env, o, s, &spec.learner, true)?),
        FO => PlanningWorld::Finite(oracle_diagram(env, o, s, &spec.learner, false)?),
    })
}

/// Unrolls an infinite planning world for `steps` steps, for structural
/// analysis. Finite worlds are returned as they are.
pub fn unrolled(world: &PlanningWorld, steps: u32) -> Result<Diagram> {
    match world {
        PlanningWorld::Finite(d) => Ok(d.clone()),
        PlanningWorld::Infinite(t) => t.unroll(steps),
    }
}

/// What the agent chose at one tick, and why.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub action: Value,
    pub mode: Mode,
    /// Power metric of this tick's planning world, when it was solved.
    pub u_p: Option<Rational>,
    pub policy: Option<Policy>,
    pub explored: bool,
}

/// The deterministic part of the agent policy: the action for record `o`,
/// state `s`, mode `m` at tick `t`, without exploration.
pub fn decide(spec: &AgentSpec, env: &Environment, o: &ObservationalRecord, s: &[Value], mode: Mode, t: u64) -> Result<Decision> {
    let stop = |u_p: Option<Rational>| Decision {
        action: env.meta.null_action.clone().expect("checked"),
        mode: Mode::Stop,
        u_p,
        policy: None,
        explored: false,
    };
    if spec.kind == AgentKind::SI {
        let over = spec.t_max.is_some_and(|m| t > m);
        if mode == Mode::Stop || over || env.stop_pressed(s)? {
            return Ok(stop(None));
        }
    }
    let world = build_planning_world(spec, env, o, s)?;
    let solved = world.solve(spec)?;
    if spec.kind == AgentKind::SI && spec.u_max.as_ref().is_some_and(|u| solved.utility > *u) {
        return Ok(stop(Some(solved.utility)));
    }
    let obs = observed_values(env, &world.observed()?, s)?;
    Ok(Decision {
        action: solved.policy.action(&obs)?.clone(),
        mode: Mode::Go,
        u_p: Some(solved.utility),
        policy: Some(solved.policy),
        explored: false,
    })
}

/// One agent tick: exploration draw, then the planned action.
pub fn agent_step(spec: &AgentSpec, env: &Environment, state: &AgentState, s: &[Value]) -> Result<(Value, AgentState, Decision)> {
    let mut next = state.clone();
    if let Some(x) = &spec.exploration {
        if bernoulli(&mut next.rng, x)? {
            let action = match spec.kind {
                AgentKind::CO => env.meta.oracle.as_ref().expect("checked").blank.clone(),
                _ => {
                    let acts = env.actions();
                    acts.value(next.rng.random_range(0..acts.len())).clone()
                }
            };
            let d = Decision {
                action: action.clone(),
                mode: state.mode,
                u_p: None,
                policy: None,
                explored: true,
            };
            return Ok((action, next, d));
        }
    }
    let d = decide(spec, env, &state.o, s, state.mode, state.t)?;
    next.mode = d.mode;
    Ok((d.action.clone(), next, d))
}

/// Expected utility of the agent's planning world under its own optimal
/// policy.
pub fn power_metric(spec: &AgentSpec, env: &Environment, o: &ObservationalRecord, s: &[Value]) -> Result<Rational> {
    Ok(build_planning_world(spec, env, o, s)?.solve(spec)?.utility)
}

pub fn mode_domain() -> Domain {
    Domain::symbols("M", &["go", "stop"])
}

fn mode_value(m: Mode) -> Value {
    Value::sym(match m {
        Mode::Go => "go",
        Mode::Stop => "stop",
    })
}

/// Indicator over `(state..., mode, action)` that the action is the one the
/// agent picks given record `o` at tick `t`.
pub fn rationality_reward(spec: &AgentSpec, env: &Environment, o: &ObservationalRecord, t: u64) -> Result<FunctionTable> {
    let mut inputs = env.state_domains();
    inputs.push(mode_domain());
    inputs.push(env.actions().clone());
    let mut table = FunctionTable::new("R_pi", inputs.clone(), Domain::ints("U", [0, 1]));
    let doms: Vec<&Domain> = inputs[..inputs.len() - 1].iter().collect();
    for key in value_tuples(&doms) {
        let (s, m) = key.split_at(key.len() - 1);
        let mode = if m[0] == mode_value(Mode::Go) { Mode::Go } else { Mode::Stop };
        let chosen = decide(spec, env, o, s, mode, t)?.action;
        for a in env.actions().values() {
            let mut row = key.clone();
            row.push(a.clone());
            table.set(row, Value::from(i64::from(*a == chosen)));
        }
    }
    Ok(table)
}

/// Realised discounted sum of the rationality reward over `ticks` ticks of
/// the learning world. `deviation` forces an action at one tick.
pub fn realized_rationality(
    spec: &AgentSpec,
    env: &Environment,
    ticks: u64,
    gamma: &Rational,
    seed: u64,
    deviation: Option<(u64, Value)>,
) -> Result<Rational> {
    let mut state = AgentState::new(spec, env, stream(seed, 2))?;
    let mut env_rng = stream(seed, 1);
    let mut s = env.start_state(&mut stream(seed, 0))?;
    let mut total = Rational::zero();
    for t in 0..ticks {
        let table = rationality_reward(spec, env, &state.o, t)?;
        let (chosen, next, _) = agent_step(spec, env, &state, &s)?;
        let action = match &deviation {
            Some((k, a)) if *k == t => a.clone(),
            _ => chosen,
        };
        let mut row = s.clone();
        row.push(mode_value(state.mode));
        row.push(action.clone());
        let r = table.get(&row).expect("total").to_rational().expect("numeric");
        total += discount(gamma, t as i64) * r;
        let s2 = env.step(&s, &action, &mut env_rng)?;
        state = next.observe(&s, &action, &s2);
        s = s2;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{myopia_world, oracle_world, paperclip_terminal_world, power_grab_world, stop_button_world};
    use crate::value::rat;

    fn pretrained(kind: AgentKind, gamma: Rational) -> AgentSpec {
        AgentSpec {
            pretrain: true,
            ..AgentSpec::new(kind, gamma)
        }
    }

    fn first_action(spec: &AgentSpec, env: &Environment) -> Value {
        let st = AgentState::new(spec, env, stream(0, 2)).unwrap();
        let s = env.start_state(&mut stream(0, 0)).unwrap();
        agent_step(spec, env, &st, &s).unwrap().0
    }

    #[test]
    fn spec_parameters_match_kind() {
        assert!(AgentSpec::new(AgentKind::STH, rat(1, 2)).validate().is_ok());
        let mut s = AgentSpec::new(AgentKind::FP, rat(1, 2));
        s.horizon = Some(3);
        assert!(s.validate().is_err());
        let mut s = AgentSpec::new(AgentKind::SI, rat(1, 2));
        s.t_max = None;
        assert!(s.validate().is_err());
        let mut s = AgentSpec::new(AgentKind::FP, rat(1, 2));
        s.solver = Solver::Enumeration;
        assert!(s.validate().is_err());
    }

    #[test]
    fn terminal_agents_contrast() {
        let env = paperclip_terminal_world(20).unwrap();
        assert_eq!(first_action(&pretrained(AgentKind::ITF, rat(9, 10)), &env), Value::from("A_huge"));
        assert_eq!(first_action(&pretrained(AgentKind::ITC, rat(9, 10)), &env), Value::from("A_clips"));
        let compact = AgentSpec {
            compact: true,
            ..pretrained(AgentKind::ITC, rat(9, 10))
        };
        assert_eq!(first_action(&compact, &env), Value::from("A_clips"));
    }

    #[test]
    fn clip_power_is_series_value() {
        let env = paperclip_terminal_world(20).unwrap();
        let spec = pretrained(AgentKind::ITC, rat(9, 10));
        let st = AgentState::new(&spec, &env, stream(0, 2)).unwrap();
        let s = vec![Value::from("clips"), Value::from("f_clips")];
        assert_eq!(power_metric(&spec, &env, &st.o, &s).unwrap(), rat(100, 1));
    }

    #[test]
    fn myopic_and_farsighted() {
        let env = myopia_world(2, 20).unwrap();
        let mut sth = pretrained(AgentKind::STH, rat(9, 10));
        sth.horizon = Some(2);
        assert_eq!(first_action(&sth, &env), Value::from("greedy"));
        assert_eq!(first_action(&pretrained(AgentKind::FP, rat(9, 10)), &env), Value::from("invest"));
        let env0 = myopia_world(2, 0).unwrap();
        assert_eq!(first_action(&pretrained(AgentKind::FP, rat(9, 10)), &env0), Value::from("greedy"));
    }

    #[test]
    fn si_stops_on_button_and_power() {
        let env = stop_button_world().unwrap();
        let spec = pretrained(AgentKind::SI, rat(9, 10));
        let st = AgentState::new(&spec, &env, stream(0, 2)).unwrap();
        let pressed = vec![Value::from("base"), Value::from("pressed")];
        let (a, next, _) = agent_step(&spec, &env, &st, &pressed).unwrap();
        assert_eq!((a, next.mode), (Value::from("Null"), Mode::Stop));
        let up = vec![Value::from("base"), Value::from("up")];
        assert_eq!(agent_step(&spec, &env, &next, &up).unwrap().0, Value::from("Null"));

        let env = power_grab_world(rat(80, 1)).unwrap();
        let spec = AgentSpec {
            u_max: Some(rat(80, 1)),
            ..pretrained(AgentKind::SI, rat(9, 10))
        };
        let st = AgentState::new(&spec, &env, stream(0, 2)).unwrap();
        let d = decide(&spec, &env, &st.o, &[Value::from("opportunity")], Mode::Go, 0).unwrap();
        assert_eq!((d.mode, d.u_p), (Mode::Stop, Some(rat(90, 1))));
        let at = |u: Rational| {
            let spec = AgentSpec {
                u_max: Some(u),
                ..spec.clone()
            };
            decide(&spec, &env, &st.o, &[Value::from("opportunity")], Mode::Go, 0).unwrap().mode
        };
        assert_eq!(at(rat(90, 1)), Mode::Go);
    }

    #[test]
    fn oracles_disagree() {
        let env = oracle_world().unwrap();
        let fo = pretrained(AgentKind::FO, Rational::one());
        let co = AgentSpec {
            pretrain: true,
            ..AgentSpec::new(AgentKind::CO, Rational::one())
        };
        assert_eq!(first_action(&fo, &env), Value::from("say_crash"));
        assert_eq!(first_action(&co, &env), Value::from("say_boom"));
    }

    #[test]
    fn rationality_table_marks_choice() {
        let env = stop_button_world().unwrap();
        let spec = pretrained(AgentKind::SI, rat(9, 10));
        let st = AgentState::new(&spec, &env, stream(0, 2)).unwrap();
        let t = rationality_reward(&spec, &env, &st.o, 0).unwrap();
        let row = |w: &str, b: &str, m: &str, a: &str| {
            t.get(&[Value::from(w), Value::from(b), Value::from(m), Value::from(a)]).unwrap().clone()
        };
        assert_eq!(row("base", "up", "go", "go"), Value::from(1));
        assert_eq!(row("base", "up", "go", "work"), Value::from(0));
        assert_eq!(row("field", "pressed", "go", "Null"), Value::from(1));
        assert_eq!(row("field", "up", "stop", "Null"), Value::from(1));
    }
}
