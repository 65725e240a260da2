//! Memory-reference simulation and FLOP counting.

mod activation;
mod dataflow;
mod flops;

pub use activation::{load_activations, ActEntry, ActivationMap};
pub use dataflow::{
    generate_activations, simulate_layer, simulate_model, simulate_model_with, LayerMemRef,
    MemRefReport, MemRefTotals, OutputMap, SimConfig, SkippedLayer,
};
pub use flops::{count_dense_flops, count_flops, FlopsReport, LayerFlops};
