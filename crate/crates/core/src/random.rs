//! Seeded generators of small random diagrams and MDPs for property tests.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diagram::{Annotation, Diagram, FunctionTable, Kernel, Node, NodeKind};
use crate::planning::{is_downstream, is_on_path_to_value};
use crate::template::{DiagramTemplate, Horizon, NodePattern, NodeRef};
use crate::value::{rat, Domain, Rational, Value};

/// Random distribution over `dom` with small integer weights.
pub fn random_row(rng: &mut ChaCha8Rng, dom: &Domain) -> Vec<(Value, Rational)> {
    loop {
        let w: Vec<i64> = (0..dom.len()).map(|_| rng.random_range(0..4)).collect();
        let total: i64 = w.iter().sum();
        if total == 0 {
            continue;
        }
        return dom
            .values()
            .iter()
            .zip(w)
            .filter(|(_, w)| *w > 0)
            .map(|(v, w)| (v.clone(), rat(w, total)))
            .collect();
    }
}

fn random_kernel(rng: &mut ChaCha8Rng, name: &str, inputs: Vec<Domain>, output: Domain) -> Kernel {
    let mut rows = Vec::new();
    let doms: Vec<&Domain> = inputs.iter().collect();
    for key in crate::value::value_tuples(&doms) {
        rows.push((key, random_row(rng, &output)));
    }
    let mut k = Kernel::new(name, inputs, output);
    for (key, row) in rows {
        for (v, p) in row {
            k.set(key.clone(), v, p);
        }
    }
    k
}

fn random_table(rng: &mut ChaCha8Rng, name: &str, inputs: Vec<Domain>, output: Domain) -> FunctionTable {
    let mut t = FunctionTable::new(name, inputs.clone(), output.clone());
    let doms: Vec<&Domain> = inputs.iter().collect();
    for key in crate::value::value_tuples(&doms) {
        t.set(key, output.values().choose(rng).expect("nonempty").clone());
    }
    t
}

/// A diagram together with a chance node that some decision reaches and
/// that reaches no utility node.
#[derive(Clone, Debug)]
pub struct IndifferenceCase {
    pub diagram: Diagram,
    pub target: String,
}

/// Random diagram of at most six nodes with domains of at most three values,
/// one decision node and at least one utility node, drawn until it contains
/// a chance node downstream of the decision and off every path to value.
pub fn indifference_case(rng: &mut ChaCha8Rng) -> IndifferenceCase {
    loop {
        let d = random_diagram(rng, 6, 3);
        let mut targets = vec![];
        for id in d.ids_of_kind(NodeKind::Chance) {
            if is_downstream(&d, id).unwrap() && !is_on_path_to_value(&d, id).unwrap() {
                targets.push(id.to_string());
            }
        }
        if let Some(t) = targets.choose(rng) {
            return IndifferenceCase {
                target: t.clone(),
                diagram: d,
            };
        }
    }
}

/// Random valid diagram: nodes in creation order, each with up to two
/// earlier non-utility parents; exactly one decision and at least one
/// utility node, which is never a parent.
pub fn random_diagram(rng: &mut ChaCha8Rng, max_nodes: usize, max_card: usize) -> Diagram {
    let n = rng.random_range(3..=max_nodes);
    let dec = rng.random_range(0..n - 1);
    let mut d = Diagram::new("random");
    let u = Domain::ints("U", 0..=2);
    d.add_domain(u.clone());
    let mut ids: Vec<(String, Domain)> = Vec::new();
    for i in 0..n {
        let utility = i == n - 1 || (i > dec && rng.random_bool(0.2));
        let card = rng.random_range(2..=max_card);
        let dom = if utility {
            u.clone()
        } else {
            Domain::ints(format!("D{i}"), 0..card as i64)
        };
        d.add_domain(dom.clone());
        let k = rng.random_range(0..=ids.len().min(2));
        let mut parents: Vec<(String, Domain)> = ids.choose_multiple(rng, k).cloned().collect();
        parents.sort_by(|a, b| a.0.cmp(&b.0));
        let pids: Vec<&str> = parents.iter().map(|(p, _)| p.as_str()).collect();
        let pdoms: Vec<Domain> = parents.iter().map(|(_, d)| d.clone()).collect();
        let node = if i == dec {
            let id = format!("D{i}");
            let node = Node::decision(&id, dom.name(), &pids, "pi");
            ids.push((id, dom));
            node
        } else if utility {
            let id = format!("U{i}");
            d.add_table(random_table(rng, &format!("r{i}"), pdoms, dom.clone()));
            Node::utility(&id, dom.name(), &pids, &format!("r{i}"))
        } else {
            let id = format!("X{i}");
            let ann = match rng.random_range(0..3) {
                0 => {
                    d.add_table(random_table(rng, &format!("f{i}"), pdoms, dom.clone()));
                    Annotation::Det(format!("f{i}"))
                }
                1 if pids.is_empty() => Annotation::Const(dom.values().choose(rng).expect("nonempty").clone()),
                _ => {
                    d.add_kernel(random_kernel(rng, &format!("k{i}"), pdoms, dom.clone()));
                    Annotation::Stoch(format!("k{i}"))
                }
            };
            let node = Node::chance(&id, dom.name(), &pids, ann);
            ids.push((id, dom));
            node
        };
        d.add_node(node);
    }
    d.validated().expect("generated diagrams are valid")
}

fn rand_gamma(rng: &mut ChaCha8Rng, allow_one: bool) -> Rational {
    let choices: &[(i64, i64)] = if allow_one {
        &[(1, 2), (9, 10), (3, 4), (1, 1)]
    } else {
        &[(1, 2), (9, 10), (3, 4), (1, 3)]
    };
    let (n, d) = *choices.choose(rng).expect("nonempty");
    rat(n, d)
}

/// A stationary MDP template with its raw tables.
#[derive(Clone, Debug)]
pub struct RandomMdp {
    pub template: DiagramTemplate,
    /// `trans[s][a]` as (next state, probability).
    pub trans: Vec<Vec<Vec<(usize, Rational)>>>,
    pub reward: Vec<Vec<Rational>>,
    pub gamma: Rational,
    pub start: usize,
}

/// Random MDP over `2..=max_states` states and `2..=max_actions` actions,
/// rewarded on `(S_t, A_t)`.
pub fn random_mdp(rng: &mut ChaCha8Rng, max_states: usize, max_actions: usize, allow_gamma_one: bool) -> RandomMdp {
    let ns = rng.random_range(2..=max_states);
    let na = rng.random_range(2..=max_actions);
    let s = Domain::ints("S", 0..ns as i64);
    let a = Domain::ints("Act", 0..na as i64);
    let u = Domain::ints("U", 0..=4);
    let gamma = rand_gamma(rng, allow_gamma_one);
    let kernel = random_kernel(rng, "T", vec![s.clone(), a.clone()], s.clone());
    let table = random_table(rng, "R", vec![s.clone(), a.clone()], u.clone());
    let start = rng.random_range(0..ns);
    let mut trans = vec![vec![vec![]; na]; ns];
    let mut reward = vec![vec![Rational::from_integer(0.into()); na]; ns];
    for i in 0..ns {
        for j in 0..na {
            let key = [s.value(i).clone(), a.value(j).clone()];
            trans[i][j] = kernel.row(&key).map(|(v, p)| (s.index_of(v).expect("in domain"), p.clone())).collect();
            reward[i][j] = table.get(&key).expect("total").to_rational().expect("numeric");
        }
    }
    let mut tpl = DiagramTemplate::new("mdp", Horizon::Infinite);
    tpl.gamma = gamma.clone();
    tpl.add_domain(s).add_domain(a).add_domain(u);
    tpl.add_kernel(kernel).add_table(table);
    tpl.add_base(Node::chance("S_0", "S", &[], Annotation::Const(Value::from(start as i64))));
    tpl.add_pattern(NodePattern::new("A", 0, NodeKind::Decision, "Act", vec![NodeRef::at("S", 0)], Annotation::Policy("pi".into())));
    tpl.add_pattern(NodePattern::new(
        "S",
        1,
        NodeKind::Chance,
        "S",
        vec![NodeRef::at("S", 0), NodeRef::at("A", 0)],
        Annotation::Stoch("T".into()),
    ));
    tpl.add_pattern(NodePattern::new(
        "R",
        0,
        NodeKind::Utility,
        "U",
        vec![NodeRef::at("S", 0), NodeRef::at("A", 0)],
        Annotation::Det("R".into()),
    ));
    RandomMdp {
        template: tpl,
        trans,
        reward,
        gamma,
        start,
    }
}

/// Random finite-horizon MDP diagram with at most three steps, states and
/// actions.
pub fn finite_mdp(rng: &mut ChaCha8Rng) -> Diagram {
    let m = random_mdp(rng, 3, 3, true);
    let steps = rng.random_range(1..=3);
    m.template.unroll(steps).expect("valid template")
}
