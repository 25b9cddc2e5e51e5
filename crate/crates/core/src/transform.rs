//! Diagram surgery: rerouting and deleting arrows, replacing annotations.

use std::fmt;

use crate::diagram::{Annotation, Diagram, FunctionTable, Kernel, Node, NodeKind};
use crate::error::{Error, Result};
use crate::value::{Domain, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transform {
    /// Replaces `old_parent` by `new_parent`, keeping the argument slot.
    RerouteArrow {
        child: String,
        old_parent: String,
        new_parent: String,
    },
    DeleteArrow {
        child: String,
        parent: String,
    },
    AddNode(Node),
    SetAnnotation {
        node: String,
        annotation: Annotation,
    },
    /// Turns a decision node into a parentless chance node with a constant.
    FreezeDecision {
        node: String,
        value: Value,
    },
    DeleteNode(String),
    DefineDomain(Domain),
    DefineTable(FunctionTable),
    DefineKernel(Kernel),
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::RerouteArrow {
                child,
                old_parent,
                new_parent,
            } => write!(f, "reroute {child} {old_parent} -> {new_parent}"),
            Transform::DeleteArrow { child, parent } => write!(f, "delete_arrow {child} {parent}"),
            Transform::AddNode(n) => write!(f, "add node {}", n.id),
            Transform::SetAnnotation { node, annotation } => write!(f, "set {node} {annotation:?}"),
            Transform::FreezeDecision { node, value } => write!(f, "freeze {node} {value}"),
            Transform::DeleteNode(n) => write!(f, "delete_node {n}"),
            Transform::DefineDomain(d) => write!(f, "domain {}", d.name()),
            Transform::DefineTable(t) => write!(f, "table {}", t.name),
            Transform::DefineKernel(k) => write!(f, "kernel {}", k.name),
        }
    }
}

fn apply_one(d: &mut Diagram, t: &Transform) -> Result<()> {
    let missing_arrow = |child: &str, parent: &str| Error::Transform(format!("no arrow {parent} -> {child}"));
    match t {
        Transform::RerouteArrow {
            child,
            old_parent,
            new_parent,
        } => {
            if !d.nodes.contains_key(new_parent) {
                return Err(Error::Transform(format!("reroute target `{new_parent}` does not exist")));
            }
            let n = d.node_mut(child).map_err(|_| Error::Transform(format!("unknown node `{child}`")))?;
            let slot = n
                .parents
                .iter()
                .position(|p| p == old_parent)
                .ok_or_else(|| missing_arrow(child, old_parent))?;
            n.parents[slot] = new_parent.clone();
        }
        Transform::DeleteArrow { child, parent } => {
            let n = d.node_mut(child).map_err(|_| Error::Transform(format!("unknown node `{child}`")))?;
            let slot = n
                .parents
                .iter()
                .position(|p| p == parent)
                .ok_or_else(|| missing_arrow(child, parent))?;
            n.parents.remove(slot);
        }
        Transform::AddNode(n) => {
            if d.nodes.contains_key(&n.id) {
                return Err(Error::Transform(format!("node `{}` already exists", n.id)));
            }
            d.add_node(n.clone());
        }
        Transform::SetAnnotation { node, annotation } => {
            d.node_mut(node)
                .map_err(|_| Error::Transform(format!("unknown node `{node}`")))?
                .annotation = annotation.clone();
        }
        Transform::FreezeDecision { node, value } => {
            let n = d.node_mut(node).map_err(|_| Error::Transform(format!("unknown node `{node}`")))?;
            if n.kind != NodeKind::Decision {
                return Err(Error::Transform(format!("`{node}` is not a decision node")));
            }
            n.kind = NodeKind::Chance;
            n.parents.clear();
            n.annotation = Annotation::Const(value.clone());
        }
        Transform::DeleteNode(id) => {
            if !d.nodes.contains_key(id) {
                return Err(Error::Transform(format!("unknown node `{id}`")));
            }
            let kids = d.children(id);
            if !kids.is_empty() {
                return Err(Error::Transform(format!("`{id}` still has children: {}", kids.join(", "))));
            }
            d.nodes.remove(id);
        }
        Transform::DefineDomain(dom) => {
            d.add_domain(dom.clone());
        }
        Transform::DefineTable(tab) => {
            d.add_table(tab.clone());
        }
        Transform::DefineKernel(k) => {
            d.add_kernel(k.clone());
        }
    }
    Ok(())
}

/// Applies transforms in order and validates the result once at the end.
pub fn apply_transforms(d: &Diagram, ts: &[Transform], label: &str) -> Result<Diagram> {
    let mut out = d.clone();
    for t in ts {
        apply_one(&mut out, t)?;
    }
    out.label = label.to_string();
    out.validated()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::rat;

    fn small() -> Diagram {
        let b = Domain::ints("B", [0, 1]);
        let mut d = Diagram::new("g");
        d.add_kernel(Kernel::constant_row("coin", vec![], b.clone(), &[(Value::from(0), rat(1, 2)), (Value::from(1), rat(1, 2))]));
        d.add_table(FunctionTable::from_fn("id", vec![b.clone()], b.clone(), |t| t[0].clone()));
        d.add_node(Node::chance("X", "B", &[], Annotation::Stoch("coin".into())));
        d.add_node(Node::chance("Z", "B", &[], Annotation::Stoch("coin".into())));
        d.add_node(Node::chance("Y", "B", &["X"], Annotation::Det("id".into())));
        d
    }

    #[test]
    fn empty_list_relabels_only() {
        let d = small();
        let e = apply_transforms(&d, &[], "h").unwrap();
        assert_eq!(e.label, "h");
        assert_eq!(e.nodes, d.nodes);
    }

    #[test]
    fn reroute_keeps_slot_and_errors_on_missing_arrow() {
        let d = small();
        let e = apply_transforms(
            &d,
            &[Transform::RerouteArrow {
                child: "Y".into(),
                old_parent: "X".into(),
                new_parent: "Z".into(),
            }],
            "h",
        )
        .unwrap();
        assert_eq!(e.nodes["Y"].parents, vec!["Z"]);
        let bad = apply_transforms(
            &d,
            &[Transform::DeleteArrow {
                child: "Y".into(),
                parent: "Z".into(),
            }],
            "h",
        );
        assert!(matches!(bad, Err(Error::Transform(_))));
    }

    #[test]
    fn invalid_result_is_reported() {
        let d = small();
        // Deleting the only arrow into Y breaks the arity of its table.
        let r = apply_transforms(
            &d,
            &[Transform::DeleteArrow {
                child: "Y".into(),
                parent: "X".into(),
            }],
            "h",
        );
        assert!(matches!(r, Err(Error::Invalid(_))));
        assert!(apply_transforms(&d, &[Transform::DeleteNode("X".into())], "h").is_err());
    }
}
