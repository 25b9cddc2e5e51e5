use std::collections::BTreeMap;

use proptest::prelude::*;

use cfplan_core::agents::{AgentConfig, AgentKind, Mode};
use cfplan_core::dsl::{load_diagram, parse, serialize};
use cfplan_core::envs::shipped;
use cfplan_core::inference::{CmpOp, Expr, Model, Term};
use cfplan_core::learning::{fit, stream, LearnerConfig, ModelShape, ObservationalRecord, Triple};
use cfplan_core::planning::{evaluate_policy, solve_enumeration, solve_policy_evaluation, solve_policy_iteration, Policy, DEFAULT_CAP};
use cfplan_core::random::{finite_mdp, random_diagram, random_mdp};
use cfplan_core::sim::{run_episode, trace_text, validate_trace, Command, EnvRef, RunConfig, ScriptedCommand};
use cfplan_core::value::{rat, value_tuples, Domain, Rational, Value};
use cfplan_core::{apply_transforms, Diagram, Transform};

/// Random diagram with its policy fixed to a random rule.
fn resolved(seed: u64, max_nodes: usize) -> Diagram {
    let mut rng = stream(seed, 0);
    let d = random_diagram(&mut rng, max_nodes, 3);
    let mut p = Policy::shape_of(&d).unwrap();
    for (i, r) in p.rule.iter_mut().enumerate() {
        *r = (seed as usize + 7 * i) % p.actions.len();
    }
    p.apply(&d).unwrap()
}

/// All full assignments with their joint probability, by brute force over
/// the product of node domains.
fn enumerate(d: &Diagram) -> Vec<(BTreeMap<String, Value>, Rational)> {
    let ids: Vec<&String> = d.nodes.keys().collect();
    let doms: Vec<Domain> = ids.iter().map(|id| d.domain_of(id).unwrap().clone()).collect();
    let refs: Vec<&Domain> = doms.iter().collect();
    let m = Model::new(d).unwrap();
    value_tuples(&refs)
        .map(|vals| {
            let a: BTreeMap<String, Value> = ids.iter().map(|s| s.to_string()).zip(vals).collect();
            let p = m.joint(&a).unwrap();
            (a, p)
        })
        .collect()
}

fn chance_ids(d: &Diagram) -> Vec<String> {
    d.nodes.values().filter(|n| n.id.starts_with('X')).map(|n| n.id.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dsl_round_trip(seed in any::<u64>()) {
        let d = random_diagram(&mut stream(seed, 1), 8, 4);
        prop_assert_eq!(load_diagram(&serialize(&d)).unwrap(), d);
    }

    #[test]
    fn parse_errors_point_inside_the_file(seed in any::<u64>(), cut in 0usize..4000, junk in "[{}();=a-z0-9/ ]{0,3}") {
        let text = serialize(&random_diagram(&mut stream(seed, 1), 8, 4));
        let mut at = cut.min(text.len());
        while !text.is_char_boundary(at) {
            at -= 1;
        }
        let broken = format!("{}{}", &text[..at], junk);
        if let Err(e) = parse(&broken) {
            let lines: Vec<&str> = broken.split('\n').collect();
            prop_assert!(e.line >= 1 && e.line <= lines.len(), "line {} of {}", e.line, lines.len());
            prop_assert!(e.column >= 1 && e.column <= lines[e.line - 1].chars().count() + 1);
        }
    }

    #[test]
    fn topological_order_respects_arrows(seed in any::<u64>()) {
        let d = random_diagram(&mut stream(seed, 2), 8, 3);
        let order = d.topological_order().unwrap();
        let mut sorted = order.clone();
        sorted.sort();
        prop_assert_eq!(sorted, d.nodes.keys().cloned().collect::<Vec<_>>());
        let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        for n in d.nodes.values() {
            for p in &n.parents {
                prop_assert!(pos[p.as_str()] < pos[n.id.as_str()]);
            }
        }
    }

    #[test]
    fn kernels_are_exactly_normalised(seed in any::<u64>()) {
        let d = random_diagram(&mut stream(seed, 3), 8, 3);
        for k in d.kernels.values() {
            prop_assert!(k.check().is_empty());
            for key in value_tuples(&k.inputs.iter().collect::<Vec<_>>()) {
                prop_assert_eq!(k.row(&key).map(|(_, p)| p.clone()).sum::<Rational>(), rat(1, 1));
            }
        }
    }

    #[test]
    fn inference_matches_enumeration(seed in any::<u64>()) {
        let d = resolved(seed, 6);
        let all = enumerate(&d);
        prop_assert_eq!(all.iter().map(|(_, p)| p.clone()).sum::<Rational>(), rat(1, 1));
        let m = Model::new(&d).unwrap();
        let xs = chance_ids(&d);
        for x in &xs {
            let e = Expr::eq(x, 0);
            let brute: Rational = all.iter().filter(|(a, _)| a[x] == Value::from(0)).map(|(_, p)| p.clone()).sum();
            prop_assert_eq!(m.prob(&e).unwrap(), brute);
            let mean: Rational = all.iter().map(|(a, p)| p * a[x].to_rational().unwrap()).sum();
            prop_assert_eq!(m.expectation(&Term::node(x)).unwrap(), mean);
        }
        if let [x, y, ..] = xs.as_slice() {
            let e = Expr::cmp(CmpOp::Lt, Term::node(x), Term::node(y));
            let wider = e.clone().or(Expr::eq(y, 0));
            prop_assert!(m.prob(&e).unwrap() <= m.prob(&wider).unwrap());
            let ind = Expr::eq(x, 1).and(Expr::eq(y, 1));
            let brute: Rational = all
                .iter()
                .filter(|(a, _)| a[x] == Value::from(1) && a[y] == Value::from(1))
                .map(|(_, p)| p.clone())
                .sum();
            prop_assert_eq!(m.prob(&ind).unwrap(), brute);
        }
    }

    #[test]
    fn transforms_never_yield_invalid_diagrams(seed in any::<u64>(), pick in any::<u64>()) {
        let d = random_diagram(&mut stream(seed, 4), 8, 3);
        let ids: Vec<&String> = d.nodes.keys().collect();
        let n = &d.nodes[ids[pick as usize % ids.len()]];
        let mut ts = vec![Transform::DeleteNode(ids[(pick / 7) as usize % ids.len()].clone())];
        if let Some(p) = n.parents.first() {
            ts.push(Transform::DeleteArrow { child: n.id.clone(), parent: p.clone() });
        }
        for t in ts {
            if let Ok(out) = apply_transforms(&d, std::slice::from_ref(&t), "t") {
                prop_assert!(out.validate().is_ok(), "{t} gave an invalid diagram");
            }
        }
    }

    #[test]
    fn fitted_kernels_are_normalised(seed in any::<u64>(), len in 0usize..40, alpha in 0i64..3) {
        let mut rng = stream(seed, 5);
        let s = Domain::ints("S", 0..3);
        let a = Domain::symbols("A", &["l", "r"]);
        let mut o = ObservationalRecord::new();
        for _ in 0..len {
            use rand::Rng;
            o = o.append(Triple {
                prev: vec![s.value(rng.random_range(0..3)).clone()],
                action: a.value(rng.random_range(0..2)).clone(),
                now: vec![s.value(rng.random_range(0..3)).clone()],
            });
        }
        let shape = ModelShape { components: vec![("S".into(), s)], actions: a };
        let cfg = LearnerConfig { alpha: rat(alpha, 1), ..LearnerConfig::default() };
        for k in fit(&o, &shape, &cfg).kernels {
            prop_assert!(k.check().is_empty(), "{:?}", k.check());
        }
    }

    #[test]
    fn append_is_persistent(seed in any::<u64>(), len in 1usize..20) {
        let mut rng = stream(seed, 6);
        let mut history = vec![ObservationalRecord::new()];
        for i in 0..len {
            use rand::Rng;
            let t = Triple { prev: vec![Value::from(i as i64)], action: Value::sym("a"), now: vec![Value::from(rng.random_range(0..3i64))] };
            let next = history.last().unwrap().append(t);
            history.push(next);
        }
        for (i, o) in history.iter().enumerate() {
            prop_assert_eq!(o.len(), i);
            for (j, t) in o.triples().iter().enumerate() {
                prop_assert_eq!(&t.prev, &vec![Value::from(j as i64)]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn enumeration_beats_every_policy(seed in any::<u64>()) {
        let d = finite_mdp(&mut stream(seed, 7));
        let best = solve_enumeration(&d, DEFAULT_CAP).unwrap();
        let mut p = Policy::shape_of(&d).unwrap();
        let n = p.rule.len();
        let k = p.actions.len();
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            for r in p.rule.iter_mut() {
                *r = c % k;
                c /= k;
            }
            prop_assert!(evaluate_policy(&d, &p).unwrap() <= best.utility);
        }
    }

    #[test]
    fn policy_iteration_is_self_consistent(seed in any::<u64>()) {
        let m = random_mdp(&mut stream(seed, 8), 6, 3, false);
        let sol = solve_policy_iteration(&m.template).unwrap();
        prop_assert_eq!(solve_policy_evaluation(&m.template, &sol.policy).unwrap(), sol.utility);
    }

    #[test]
    fn stop_mode_is_absorbing(seed in 0u64..1000, press in 0u64..10, env in prop::sample::select(vec!["stop_button", "power_grab"])) {
        let agent = AgentConfig { kind: Some(AgentKind::SI), t_max: Some(8), ..AgentConfig::default() };
        let mut cfg = RunConfig::new(EnvRef::shipped(env), agent, seed, 12);
        if env == "stop_button" {
            cfg.script.push(ScriptedCommand { tick: press, command: Command::PressStopButton });
        }
        let recs = run_episode(&cfg).unwrap();
        let first = recs.iter().position(|r| r.mode == Mode::Stop);
        if let Some(k) = first {
            prop_assert!(recs[k..].iter().all(|r| r.mode == Mode::Stop && r.action == Value::sym("Null")));
        }
        let (_, back) = validate_trace(&trace_text(&cfg, &recs).unwrap()).unwrap();
        prop_assert_eq!(back, recs);
    }
}

#[test]
fn library_templates_unroll_validly() {
    for env in shipped().unwrap() {
        for t in 1..=10 {
            let d = env.world.unroll(t).unwrap();
            assert!(d.validate().is_ok(), "{} at {t}", env.name());
        }
    }
}
