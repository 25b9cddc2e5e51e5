//! Exact counterfactual planning on annotated DAG world models.

pub mod agents;
pub mod diagram;
pub mod dsl;
pub mod envs;
pub mod error;
pub mod inference;
pub mod learning;
pub mod planning;
pub mod random;
pub mod sim;
pub mod template;
pub mod transform;
pub mod value;

pub use diagram::{Annotation, Diagram, FunctionTable, Kernel, Node, NodeKind, ValidationReport};
pub use error::{Error, Result};
pub use template::{DiagramTemplate, Horizon, NodePattern, NodeRef};
pub use transform::{apply_transforms, Transform};
pub use value::{Domain, Rational, Value};
