use cfplan_core::agents::{build_planning_world, unrolled, AgentKind, AgentSpec, AgentState};
use cfplan_core::envs::paperclip_terminal_world;
use cfplan_core::learning::stream;
use cfplan_core::planning::{indifference_check, is_downstream, is_on_path_to_value, IndifferenceMode};
use cfplan_core::value::{rat, Value};

fn spec(kind: AgentKind, compact: bool) -> AgentSpec {
    AgentSpec {
        pretrain: true,
        compact,
        ..AgentSpec::new(kind, rat(9, 10))
    }
}

fn world(kind: AgentKind, compact: bool, s: &[Value]) -> cfplan_core::agents::PlanningWorld {
    let env = paperclip_terminal_world(3).unwrap();
    let sp = spec(kind, compact);
    let st = AgentState::new(&sp, &env, stream(0, 2)).unwrap();
    build_planning_world(&sp, &env, &st.o, s).unwrap()
}

fn start() -> Vec<Value> {
    let env = paperclip_terminal_world(3).unwrap();
    env.start_state(&mut stream(0, 0)).unwrap()
}

#[test]
fn counterfactual_world_is_indifferent_to_later_terminals() {
    let d = unrolled(&world(AgentKind::ITC, false, &start()), 2).unwrap();
    for x in ["I_1", "I_2"] {
        assert!(!is_on_path_to_value(&d, x).unwrap(), "{x}");
        let rep = indifference_check(&d, x, &IndifferenceMode::Vertex).unwrap();
        assert!(rep.passed(), "{x}: {rep}");
    }
}

#[test]
fn factual_world_is_not_indifferent_to_later_terminals() {
    let d = unrolled(&world(AgentKind::ITF, false, &start()), 2).unwrap();
    assert!(is_on_path_to_value(&d, "I_1").unwrap());
    assert!(is_downstream(&d, "I_1").unwrap());
    let rep = indifference_check(&d, "I_1", &IndifferenceMode::Vertex).unwrap();
    assert!(!rep.passed());
    assert!(!rep.witness_labels().is_empty());
}

#[test]
fn compact_and_full_counterfactual_worlds_agree() {
    let env = paperclip_terminal_world(3).unwrap();
    let full = spec(AgentKind::ITC, false);
    let compact = spec(AgentKind::ITC, true);
    for i in env.state_domains()[env.comp_index("I").unwrap()].values() {
        let mut s = start();
        s[env.comp_index("I").unwrap()] = i.clone();
        let a = world(AgentKind::ITC, false, &s).solve(&full).unwrap();
        let b = world(AgentKind::ITC, true, &s).solve(&compact).unwrap();
        assert_eq!(a.utility, b.utility, "I = {i}");
        assert_eq!(a.policy.action(&s).unwrap(), b.policy.action(&s).unwrap(), "I = {i}");
    }
}
