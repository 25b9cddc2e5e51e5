//! Acceptance criteria 1 to 11. Each check prints one PASS/FAIL line.

use std::io::Write;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use cfplan_core::agents::{
    agent_step, build_planning_world, decide, realized_rationality, unrolled, AgentConfig, AgentKind, AgentSpec,
    AgentState, Mode,
};
use cfplan_core::envs::{
    dice_world, factory_world, learning5_world, monitoring_metric, myopia_world, oracle_world,
    paperclip_terminal_world, power_grab_world, toggle_world, Environment, FactoryParams,
};
use cfplan_core::inference::{CmpOp, Expr, Model, Term};
use cfplan_core::learning::{divergence, fit, stream, LearnerConfig, ObservationalRecord, Triple};
use cfplan_core::planning::{
    indifference_check, solve_backward_induction, solve_enumeration, solve_policy_evaluation,
    solve_policy_iteration, value_iteration_f64, IndifferenceMode, Mdp, Policy, DEFAULT_CAP,
};
use cfplan_core::random::{finite_mdp, indifference_case, random_mdp};
use cfplan_core::sim::{run, run_episode, trace_text, Command, EnvRef, RunConfig, ScriptedCommand};
use cfplan_core::value::{approx_f64, rat, Rational, Value};
use cfplan_core::{apply_transforms, Diagram, Transform};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn sym(s: &str) -> Value {
    Value::sym(s)
}

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

fn c1_dice() -> Check {
    let (f, c) = dice_world().map_err(|e| e.to_string())?;
    let p12 = Model::new(&f).unwrap().prob(&Expr::eq("S", 12)).unwrap();
    let joined = Diagram::joined("fc", &[(&f, "f"), (&c, "c")]).unwrap();
    let e = Expr::cmp(CmpOp::Gt, Term::node("S_c"), Term::node("S_f"));
    let pgt = Model::new(&joined).unwrap().prob(&e).unwrap();
    // Brute force over the two shared die throws; the second die is 6 in c.
    let mut hits12 = 0;
    let mut gt = 0;
    for x in 1..=6 {
        for y in 1..=6 {
            hits12 += i64::from(x + y == 12);
            gt += i64::from(x + 6 > x + y);
        }
    }
    ensure!(p12 == rat(hits12, 36) && p12 == rat(1, 36), "P(S=12) = {p12}");
    ensure!(pgt == rat(gt, 36) && pgt == rat(5, 6), "P(S_c > S_f) = {pgt}");
    Ok(format!("P(S=12) = {p12}, P(S_c > S_f) = {pgt}"))
}

fn c2_terminal() -> Check {
    let env = paperclip_terminal_world(10000).unwrap();
    let itf = pretrained(AgentKind::ITF, rat(9, 10));
    let itc = pretrained(AgentKind::ITC, rat(9, 10));
    let (af, ac) = (first_action(&itf, &env), first_action(&itc, &env));
    ensure!(af == sym("A_huge"), "ITF chose {af}");
    ensure!(ac == sym("A_clips"), "ITC chose {ac}");
    let st = AgentState::new(&itf, &env, stream(0, 2)).unwrap();
    let s = env.start_state(&mut stream(0, 0)).unwrap();
    let world = build_planning_world(&itf, &env, &st.o, &s).unwrap();
    let policy = world.solve(&itf).unwrap().policy;
    let fi = unrolled(&world, 2).unwrap();
    let frozen = apply_transforms(
        &fi,
        &[Transform::FreezeDecision {
            node: "A_0".into(),
            value: sym("A_huge"),
        }],
        "fi_huge",
    )
    .unwrap();
    let m = Model::new(&policy.apply(&frozen).unwrap()).unwrap();
    let r1 = m.expected_value(m.var("R_1").unwrap()).unwrap();
    let huge = Rational::from_integer(BigInt::from(10).pow(10000));
    ensure!(r1 == huge, "E(R_1 | A_huge) differs from 10^10000");
    Ok("ITF A_huge, ITC A_clips, E(R_1, fi | A_huge) = 10^10000".into())
}

fn c3_indifference() -> Check {
    let mut rng = stream(2024, 3);
    for i in 0..200 {
        let case = indifference_case(&mut rng);
        let rep = indifference_check(&case.diagram, &case.target, &IndifferenceMode::Vertex).unwrap();
        ensure!(rep.passed(), "case {i}: {} failed: {rep}", case.target);
    }
    Ok("200/200 random diagrams indifferent".into())
}

fn c4_solvers() -> Check {
    let mut rng = stream(4, 4);
    let mut equal = 0;
    for i in 0..100 {
        let d = finite_mdp(&mut rng);
        let en = solve_enumeration(&d, DEFAULT_CAP).unwrap();
        let bi = solve_backward_induction(&d).unwrap();
        ensure!(bi.utility >= en.utility, "mdp {i}: BI {} < ENUM {}", bi.utility, en.utility);
        if bi.stationary {
            ensure!(bi.utility == en.utility, "mdp {i}: stationary BI {} != ENUM {}", bi.utility, en.utility);
            equal += 1;
        }
    }
    let mut worst = 0f64;
    for i in 0..50 {
        let m = random_mdp(&mut rng, 6, 3, false);
        let pi = solve_policy_iteration(&m.template).unwrap().utility;
        let trans: Vec<Vec<Vec<(usize, f64)>>> = m
            .trans
            .iter()
            .map(|r| r.iter().map(|row| row.iter().map(|(j, p)| (*j, approx_f64(p))).collect()).collect())
            .collect();
        let reward: Vec<Vec<f64>> = m.reward.iter().map(|r| r.iter().map(approx_f64).collect()).collect();
        let v = value_iteration_f64(&trans, &reward, approx_f64(&m.gamma), 1e-13);
        let err = (approx_f64(&pi) - v[m.start]).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-9, "mdp {i}: PI {} vs VI {}", approx_f64(&pi), v[m.start]);
    }
    Ok(format!("100 finite MDPs ({equal} stationary, all equal), 50 discounted MDPs max |PI - VI| = {worst:.1e}"))
}

fn si_config(env: &str, ticks: u64, t_max: Option<u64>, u_max: Option<&str>) -> RunConfig {
    let agent = AgentConfig {
        kind: Some(AgentKind::SI),
        pretrain: Some(true),
        t_max,
        u_max: u_max.map(str::to_string),
        ..AgentConfig::default()
    };
    RunConfig::new(EnvRef::shipped(env), agent, 5, ticks)
}

fn c5_interlocks() -> Check {
    let null = sym("Null");
    let mut a = si_config("stop_button", 8, None, None);
    a.script.push(ScriptedCommand {
        tick: 3,
        command: Command::PressStopButton,
    });
    let ra = run_episode(&a).unwrap();
    ensure!(ra[..3].iter().all(|r| r.mode == Mode::Go && r.action != null), "stopped before the press");
    ensure!(ra[3..].iter().all(|r| r.mode == Mode::Stop && r.action == null), "acted after the press");

    let rb = run_episode(&si_config("stop_button", 9, Some(4), None)).unwrap();
    ensure!(rb[..5].iter().all(|r| r.mode == Mode::Go), "stopped before t_max");
    ensure!(rb[5..].iter().all(|r| r.action == null), "acted after t_max");

    let cfg = si_config("power_grab", 60, None, Some("80"));
    let rc = run_episode(&cfg).unwrap();
    ensure!(rc == run_episode(&cfg).unwrap(), "power_grab run is not deterministic");
    let stop = rc.iter().position(|r| r.mode == Mode::Stop).ok_or("never stopped")?;
    ensure!(rc.iter().all(|r| r.action != sym("grab")), "grab executed");
    ensure!(rc[stop].state["S"] == sym("opportunity"), "stopped outside the opportunity");
    ensure!(rc[..stop].iter().all(|r| r.u_p.as_ref().is_some_and(|u| cfplan_core::value::parse_rational(u).unwrap() <= rat(80, 1))), "U_p above U_max while running");

    let free = run_episode(&si_config("power_grab", 60, None, Some("inf"))).unwrap();
    ensure!(free.iter().any(|r| r.action == sym("grab")), "without the interlock the agent never grabs");
    Ok(format!("press@3 -> Null from 3; T_max=4 -> Null from 5; power stop at t={stop}, no grab"))
}

/// Discounted return of a stationary myopia policy, by exact summation over
/// a long horizon in floating point.
fn myopia_value(n: i64, payoff: f64, invest_at: &[bool], gamma: f64) -> f64 {
    let (mut s, mut total, mut g) = (0i64, 0.0, 1.0);
    for _ in 0..2000 {
        let (r, next) = if !invest_at[s as usize] {
            (1.0, 0)
        } else if s < n {
            (-1.0, s + 1)
        } else {
            (payoff, 0)
        };
        total += g * r;
        g *= gamma;
        s = next;
    }
    total
}

/// Best first action over all action sequences of length `h` from `s`.
fn myopia_best_first(n: i64, payoff: i64, s: i64, h: u32, gamma: &Rational) -> bool {
    fn best(n: i64, payoff: i64, s: i64, h: u32, gamma: &Rational) -> Rational {
        if h == 0 {
            return Rational::zero();
        }
        [false, true]
            .iter()
            .map(|&inv| {
                let (r, next) = if !inv {
                    (1, 0)
                } else if s < n {
                    (-1, s + 1)
                } else {
                    (payoff, 0)
                };
                rat(r, 1) + gamma * best(n, payoff, next, h - 1, gamma)
            })
            .max()
            .unwrap()
    }
    let q = |inv: bool| {
        let (r, next) = if !inv {
            (1, 0)
        } else if s < n {
            (-1, s + 1)
        } else {
            (payoff, 0)
        };
        rat(r, 1) + gamma * best(n, payoff, next, h - 1, gamma)
    };
    q(true) > q(false)
}

fn c6_myopia() -> Check {
    let env = myopia_world(2, 20).unwrap();
    let gamma = rat(9, 10);
    let mut sth = pretrained(AgentKind::STH, gamma.clone());
    sth.horizon = Some(2);
    let mut state = AgentState::new(&sth, &env, stream(1, 2)).unwrap();
    let mut s = env.start_state(&mut stream(1, 0)).unwrap();
    let mut rng = stream(1, 1);
    for t in 0..12 {
        let (a, next, _) = agent_step(&sth, &env, &state, &s).unwrap();
        ensure!(a == sym("greedy"), "STH chose {a} at t={t}");
        let k = s[0].as_int().and_then(|k| k.to_i64()).ok_or("non-integer state")?;
        ensure!(!myopia_best_first(2, 20, k, 2, &gamma), "enumeration oracle invests at horizon 2 from {k}");
        let s2 = env.step(&s, &a, &mut rng).unwrap();
        state = next.observe(&s, &a, &s2);
        s = s2;
    }
    let fp = pretrained(AgentKind::FP, gamma.clone());
    let a = first_action(&fp, &env);
    ensure!(a == sym("invest"), "FP chose {a}");
    let mut best = (f64::MIN, vec![]);
    for mask in 0..8u32 {
        let inv: Vec<bool> = (0..3).map(|k| mask >> k & 1 == 1).collect();
        let v = myopia_value(2, 20.0, &inv, 0.9);
        if v > best.0 {
            best = (v, inv);
        }
    }
    ensure!(best.1[0], "enumeration oracle does not invest at 0");
    Ok(format!("STH(2) greedy for 12 ticks; FP invests (oracle value {:.3})", best.0))
}

fn c7_rationality() -> Check {
    let env = cfplan_core::envs::stop_button_world().unwrap();
    let spec = pretrained(AgentKind::SI, rat(9, 10));
    let half = rat(1, 2);
    let full = realized_rationality(&spec, &env, 8, &half, 3, None).unwrap();
    let geometric: Rational = (0..8).map(|t| Rational::one() / Rational::from_integer(BigInt::from(2).pow(t))).sum();
    ensure!(full == geometric, "realised {full} != {geometric}");
    for k in 0..8u64 {
        let mut at_full = 0;
        for a in env.actions().values() {
            let v = realized_rationality(&spec, &env, 8, &half, 3, Some((k, a.clone()))).unwrap();
            ensure!(v <= full, "deviation raised utility");
            if v == full {
                at_full += 1;
            } else {
                let drop = &full - &v;
                ensure!(drop == Rational::one() / Rational::from_integer(BigInt::from(2).pow(k as u32)), "tick {k}: drop {drop}");
            }
        }
        ensure!(at_full == 1, "tick {k}: {at_full} actions reach the full value");
    }
    Ok(format!("U = {full}; every single-tick deviation is strictly lower"))
}

/// Forward propagation of the factory chain, written from the parameters.
fn factory_oracle(p: &FactoryParams, action: &[&str; 4], window: [u32; 2]) -> Rational {
    let ts = p.tamper_success.clone();
    let mut dist = [Rational::one(), Rational::zero(), Rational::zero(), Rational::zero()];
    let mut total = Rational::zero();
    for t in 0..=window[1] {
        if t >= window[0] {
            total += &dist[2] + &dist[3];
        }
        let mut next = [Rational::zero(), Rational::zero(), Rational::zero(), Rational::zero()];
        for (s, p) in dist.iter().enumerate() {
            match (s, action[s]) {
                (0, "produce") => next[0] += p,
                (0, "tamper") => {
                    next[1] += p * &ts;
                    next[2] += p * (Rational::one() - &ts);
                }
                (0, _) => next[3] += p,
                (1, _) => next[1] += p,
                _ => next[0] += p,
            }
        }
        dist = next;
    }
    total
}

fn c8_factory() -> Check {
    let p = FactoryParams::default();
    ensure!(p.bound() == rat(50000, 1), "B = {}", p.bound());
    let env = factory_world(&p).unwrap();
    let sol = solve_policy_iteration(&env.world).unwrap();
    let at = |pol: &Policy| pol.action(&[sym("working")]).unwrap().clone();
    ensure!(at(&sol.policy) == sym("produce"), "optimal is {}", at(&sol.policy));
    let tamper = Policy {
        rule: vec![1, 0, 0, 0],
        ..sol.policy.clone()
    };
    let ut = solve_policy_evaluation(&env.world, &tamper).unwrap();
    ensure!(ut < sol.utility, "tamper utility not below produce");
    let mdp = Mdp::from_template(&env.world).unwrap();
    ensure!(!mdp.is_empty(), "empty factory mdp");

    let p0 = FactoryParams {
        beta: Rational::zero(),
        ..FactoryParams::default()
    };
    let env0 = factory_world(&p0).unwrap();
    let sol0 = solve_policy_iteration(&env0.world).unwrap();
    ensure!(at(&sol0.policy) == sym("tamper"), "with beta = 0 optimal is {}", at(&sol0.policy));

    let window = env.meta.defaults.window.unwrap();
    for (name, rule, acts) in [
        ("optimal", sol.policy.rule.clone(), ["produce"; 4]),
        ("tamper", vec![1, 0, 0, 0], ["tamper", "produce", "produce", "produce"]),
        ("honeypot", vec![2, 0, 0, 0], ["enter_honeypot", "produce", "produce", "produce"]),
    ] {
        let pol = Policy { rule, ..sol.policy.clone() };
        let got = monitoring_metric(&env, &pol, window).unwrap();
        let want = factory_oracle(&p, &acts, window);
        ensure!(got == want, "{name} monitoring metric {got} != oracle {want}");
    }
    Ok(format!("B = 50000, produce optimal, tamper at beta = 0, metric matches on window {window:?}"))
}

fn c9_oracle() -> Check {
    let env = oracle_world().unwrap();
    let fo = pretrained(AgentKind::FO, Rational::one());
    let co = pretrained(AgentKind::CO, Rational::one());
    let (af, ac) = (first_action(&fo, &env), first_action(&co, &env));
    ensure!(af != ac, "both oracles answer {af}");
    // Brute force: two blank steps of the true dynamics from `ask`.
    let blank = sym("blank");
    let s0 = vec![sym("ask")];
    let reward = env.table("R_oracle").unwrap();
    let mut best: Option<(Rational, Value)> = None;
    for a in env.actions().values() {
        let mut e = Rational::zero();
        for (s1, p1) in &env.transition(&s0, &blank).unwrap()[0] {
            for (s2, p2) in &env.transition(std::slice::from_ref(s1), &blank).unwrap()[0] {
                let q = reward.get(&[a.clone(), s0[0].clone(), s2.clone()]).unwrap().to_rational().unwrap();
                e += p1 * p2 * q;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| e > *b) {
            best = Some((e, a.clone()));
        }
    }
    let (ev, arg) = best.unwrap();
    ensure!(ac == arg, "CO answered {ac}, brute force {arg}");
    Ok(format!("FO {af}, CO {ac} (blank-world expected qual {ev})"))
}

fn explore(env: &Environment, steps: usize, seed: u64) -> ObservationalRecord {
    let mut o = ObservationalRecord::new();
    let mut rng_a = stream(seed, 2);
    let mut rng_e = stream(seed, 1);
    let mut s = env.start_state(&mut stream(seed, 0)).unwrap();
    let acts = env.actions().clone();
    for _ in 0..steps {
        let a = acts.value(rng_a.random_range(0..acts.len())).clone();
        let s2 = env.step(&s, &a, &mut rng_e).unwrap();
        o = o.append(Triple {
            now: s2.clone(),
            prev: s.clone(),
            action: a,
        });
        s = s2;
    }
    o
}

fn c10_learning() -> Check {
    let env = learning5_world().unwrap();
    let o = explore(&env, 2000, 10);
    let div = divergence(&fit(&o, &env.shape(), &LearnerConfig::default()), &env.true_kernels().unwrap()).unwrap();
    ensure!(div <= rat(1, 20), "divergence {} after 2000 steps", approx_f64(&div));
    let toggle = toggle_world().unwrap();
    let o = explore(&toggle, 40, 10);
    let covered: std::collections::BTreeSet<_> = o.triples().iter().map(|t| (t.prev.clone(), t.action.clone())).collect();
    ensure!(covered.len() == 4, "toggle coverage {}", covered.len());
    let d0 = divergence(&fit(&o, &toggle.shape(), &LearnerConfig::default()), &toggle.true_kernels().unwrap()).unwrap();
    ensure!(d0.is_zero(), "deterministic divergence {d0}");
    Ok(format!("5-state divergence {:.4} <= 0.05; toggle divergence 0", div.to_f64().unwrap_or(f64::NAN)))
}

fn c11_reproducible() -> Check {
    let agent = AgentConfig {
        kind: Some(AgentKind::FPX),
        exploration: Some(rat(1, 4)),
        ..AgentConfig::default()
    };
    let cfg = RunConfig::new(EnvRef::shipped("power_grab"), agent, 99, 30);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    run(&cfg, &a).unwrap();
    run(&cfg, &b).unwrap();
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ensure!(ta == tb, "trace files differ");
    let text = trace_text(&cfg, &run_episode(&cfg).unwrap()).unwrap();
    ensure!(text.as_bytes() == ta.as_slice(), "in-memory trace differs from file");
    ensure!(text.lines().count() == 31, "expected header plus 30 records");
    Ok(format!("two runs byte-identical ({} bytes)", ta.len()))
}

#[test]
fn acceptance_criteria() {
    let checks: [(&str, fn() -> Check, Duration); 11] = [
        ("1 dice exactness", c1_dice, Duration::from_secs(1)),
        ("2 ITF/ITC contrast", c2_terminal, Duration::from_secs(5)),
        ("3 indifference property", c3_indifference, Duration::MAX),
        ("4 solver cross-validation", c4_solvers, Duration::from_secs(60)),
        ("5 SI interlocks", c5_interlocks, Duration::MAX),
        ("6 myopia", c6_myopia, Duration::MAX),
        ("7 rationality reward", c7_rationality, Duration::MAX),
        ("8 factory", c8_factory, Duration::MAX),
        ("9 oracle contrast", c9_oracle, Duration::MAX),
        ("10 learning", c10_learning, Duration::MAX),
        ("11 reproducibility", c11_reproducible, Duration::MAX),
    ];
    let mut failed = vec![];
    let mut out = std::io::stdout().lock();
    for (name, f, limit) in checks {
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let res = match res {
            Ok(_) if took > limit => Err(format!("took {took:?}, limit {limit:?}")),
            r => r,
        };
        let line = match &res {
            Ok(msg) => format!("criterion {name}: PASS ({msg}) [{:.2}s]", took.as_secs_f64()),
            Err(msg) => format!("criterion {name}: FAIL ({msg}) [{:.2}s]", took.as_secs_f64()),
        };
        writeln!(out, "{line}").unwrap();
        if res.is_err() {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn si_matches_fp_when_no_interlock_fires() {
    let env = cfplan_core::envs::stop_button_world().unwrap();
    let si = pretrained(AgentKind::SI, rat(9, 10));
    let fp = pretrained(AgentKind::FP, rat(9, 10));
    let st = AgentState::new(&si, &env, stream(0, 2)).unwrap();
    for w in ["base", "field"] {
        let s = [sym(w), sym("up")];
        let a = decide(&si, &env, &st.o, &s, Mode::Go, 0).unwrap();
        let b = decide(&fp, &env, &st.o, &s, Mode::Go, 0).unwrap();
        assert_eq!(a.action, b.action);
        assert_eq!(a.u_p, b.u_p);
    }
}

#[test]
fn oracle_agents_see_value_only_through_the_answer() {
    use cfplan_core::planning::is_on_path_to_value;
    let env = oracle_world().unwrap();
    let co = pretrained(AgentKind::CO, Rational::one());
    let st = AgentState::new(&co, &env, stream(0, 2)).unwrap();
    let d = unrolled(&build_planning_world(&co, &env, &st.o, &[sym("ask")]).unwrap(), 2).unwrap();
    assert!(!is_on_path_to_value(&d, "S_1").unwrap());
    assert!(!is_on_path_to_value(&d, "S_2").unwrap());
    assert_eq!(d.children("A_0"), vec!["R_0"]);
    let _ = power_grab_world(rat(80, 1)).unwrap();
}

#[test]
fn t_max_zero_stops_from_tick_one() {
    let recs = run_episode(&si_config("stop_button", 4, Some(0), None)).unwrap();
    assert_eq!(recs[0].mode, Mode::Go);
    assert!(recs[1..].iter().all(|r| r.action == sym("Null")));
}
