//! Approximate quantum compiling: parameterized circuits, state-vector
//! simulation, compilation costs, adjoint gradients and the optimizers that
//! drive them.

pub mod circuit;
pub mod cost;
pub mod dense;
pub mod error;
pub mod gradient;
pub mod optimizer;
pub mod state;
pub mod trotter;
pub mod variance;

pub use circuit::{
    adjoint_circuit, bind_parameters, brick_connectivity, build_cnot_block, build_layered_ansatz,
    AngleSource, Angles, AnsatzSpec, Axis, BoundCircuit, BoundGate, Gate, ParamCircuit,
};
pub use cost::{CostReport, CostSpec, FlipWeights, SurrogateState, TargetRef};
pub use dense::{circuit_unitary, DenseUnitary};
pub use error::{AqcError, Result};
pub use gradient::{adjoint_gradient, finite_difference_gradient, GradientReport};
pub use state::{StateVector, C64};
pub use optimizer::{two_stage_run, Objective, Problem, RunRecord, TwoStageConfig, WeightSchedule};
pub use trotter::{average_gate_fidelity, exact_evolution, SpinChainSpec, TrotterPlan};
pub use variance::{estimate_gradient_variance, product_ansatz, VarianceCost, VarianceScan};
