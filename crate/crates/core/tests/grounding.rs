use cfplan_core::learning::check_grounding;
use cfplan_core::value::{rat, Domain, Rational};
use cfplan_core::{Annotation, Diagram, FunctionTable, Kernel, Node, Value};

fn sym(s: &str) -> Value {
    Value::sym(s)
}

fn doms() -> (Domain, Domain) {
    (Domain::symbols("S", &["a", "b"]), Domain::symbols("Act", &["stay", "flip"]))
}

fn truth() -> Kernel {
    let (s, a) = doms();
    Kernel::from_fn("T", vec![s.clone(), a], s, |k| {
        let next = match (k[0].as_sym().unwrap(), k[1].as_sym().unwrap()) {
            (x, "stay") => x,
            ("a", _) => "b",
            _ => "a",
        };
        vec![(sym(next), rat(1, 1))]
    })
}

fn learning_world(k: &Kernel) -> Diagram {
    let (s, a) = doms();
    let mut d = Diagram::new("lw");
    d.add_domain(s).add_domain(a).add_kernel(k.renamed("T"));
    d.add_node(Node::chance("S_0", "S", &[], Annotation::Const(sym("a"))));
    d.add_node(Node::chance("A_0", "Act", &[], Annotation::Const(sym("stay"))));
    d.add_node(Node::chance("S_1", "S", &["S_0", "A_0"], Annotation::Stoch("T".into())));
    d.validated().unwrap()
}

/// Planning world that observes `E_0` and estimates `S_0` as a delta on it.
fn planning_world(l: &Kernel) -> Diagram {
    let (s, a) = doms();
    let mut d = Diagram::new("pw");
    d.add_domain(s.clone()).add_domain(a).add_kernel(l.renamed("L"));
    d.add_table(FunctionTable::from_fn("est", vec![s.clone()], s, |k| k[0].clone()));
    d.add_node(Node::chance("E_0", "S", &[], Annotation::Const(sym("a"))));
    d.add_node(Node::chance("S_0", "S", &["E_0"], Annotation::Det("est".into())));
    d.add_node(Node::chance("A_0", "Act", &[], Annotation::Const(sym("stay"))));
    d.add_node(Node::chance("S_1", "S", &["S_0", "A_0"], Annotation::Stoch("L".into())));
    d.validated().unwrap()
}

fn identity() -> FunctionTable {
    let (s, _) = doms();
    FunctionTable::from_fn("sr", vec![s.clone()], s, |k| k[0].clone())
}

#[test]
fn perfect_model_is_grounded() {
    let k = truth();
    assert!(check_grounding(&learning_world(&k), &planning_world(&k), &identity(), &identity(), &Rational::from_integer(0.into())).unwrap());
}

#[test]
fn corrupted_transition_is_caught() {
    let mut bad = truth();
    bad.set(vec![sym("b"), sym("flip")], sym("a"), rat(0, 1));
    bad.set(vec![sym("b"), sym("flip")], sym("b"), rat(1, 1));
    assert!(bad.check().is_empty());
    let zero = Rational::from_integer(0.into());
    assert!(!check_grounding(&learning_world(&truth()), &planning_world(&bad), &identity(), &identity(), &zero).unwrap());
    // Within tolerance 1 every pair of distributions agrees.
    assert!(check_grounding(&learning_world(&truth()), &planning_world(&bad), &identity(), &identity(), &rat(1, 1)).unwrap());
}

#[test]
fn constant_sensor_carries_no_information() {
    let (s, _) = doms();
    let flat = Domain::symbols("R", &["on"]);
    let sr = FunctionTable::from_fn("sr", vec![s], flat, |_| sym("on"));
    let uniform = Kernel::from_fn("U", truth().inputs.clone(), doms().0, |_| vec![(sym("a"), rat(1, 2)), (sym("b"), rat(1, 2))]);
    let zero = Rational::from_integer(0.into());
    assert!(check_grounding(&learning_world(&truth()), &planning_world(&uniform), &sr, &sr, &zero).unwrap());
}
