//! Material graph IR, operator library, evaluator, sequencer, dataset tools and metrics.

pub mod dataset;
pub mod evaluate;
pub mod graph;
pub mod graphfile;
pub mod image;
pub mod library;
pub mod metrics;
pub mod ops;
pub mod schema;
pub mod sequencer;

pub use evaluate::{evaluate_graph, EvalError, MaterialOutput};
pub use graph::{validate, DepthMode, Edge, GraphError, MaterialGraph, Node, NodeId, ParamValue, SlotDirection, SlotRef};
pub use image::ChannelImage;
pub use library::{Library, LibraryError, ParamSet};
pub use schema::{MaterialChannel, OperatorSchema, OperatorType, ParamKind, ParamSchema};
