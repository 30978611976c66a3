use thiserror::Error;

/// Errors raised by the compiling engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AqcError {
    #[error("invalid CNOT block: control and target are both qubit {0}")]
    InvalidBlock(usize),

    #[error("invalid ansatz spec: {0}")]
    InvalidSpec(String),

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("bind error: circuit has {expected} parameters, got {got} angles")]
    Bind { expected: usize, got: usize },

    #[error("cannot take the adjoint of a circuit with unbound parameter slots")]
    AdjointOfUnbound,

    #[error("qubit index {qubit} out of range for {n_qubits} qubits")]
    QubitIndex { qubit: usize, n_qubits: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} needs {required_bytes} bytes; limit is {limit} qubits, requested {requested}")]
    Resource {
        what: &'static str,
        requested: usize,
        limit: usize,
        required_bytes: u128,
    },

    #[error("flip-term budget exceeded: {terms} subsets requested, budget is {budget}")]
    TermBudget { terms: u128, budget: u128 },

    #[error("truncation order k={k} violates k <= n-1 for n={n}")]
    Truncation { k: usize, n: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("surrogate is degenerate: all projections vanish")]
    DegenerateSurrogate,

    #[error("unsupported cost/target pairing: {0}")]
    Capability(String),

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, AqcError>;
