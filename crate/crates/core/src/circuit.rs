//! Parametric circuits built from single-qubit rotations and CNOT blocks.
//!
//! A [`ParamCircuit`] is an ordered gate list in application order: the first
//! gate acts on the state first. Rotation angles are either fixed or read from
//! a parameter slot; binding an [`Angles`] vector resolves every slot and
//! yields a [`BoundCircuit`], which is what the simulator consumes.

use serde::{Deserialize, Serialize};

use crate::error::{AqcError, Result};

/// Pauli axis of a rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AngleSource {
    /// Fixed angle in radians.
    Fixed(f64),
    /// Index into the circuit's parameter vector.
    Slot(usize),
}

/// `R_axis(θ) = exp(-i θ σ_axis / 2)` on one qubit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationGate {
    pub axis: Axis,
    pub qubit: usize,
    pub angle: AngleSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CnotGate {
    pub control: usize,
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    Rotation(RotationGate),
    Cnot(CnotGate),
}

impl Gate {
    pub fn rotation(axis: Axis, qubit: usize, angle: AngleSource) -> Self {
        Gate::Rotation(RotationGate { axis, qubit, angle })
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Gate::Cnot(CnotGate { control, target })
    }

    fn max_qubit(&self) -> usize {
        match self {
            Gate::Rotation(r) => r.qubit,
            Gate::Cnot(c) => c.control.max(c.target),
        }
    }
}

/// A CNOT followed by `Ry, Rz` on the control and `Ry, Rx` on the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CnotBlock {
    pub control: usize,
    pub target: usize,
    pub param_slots: [usize; 4],
}

impl CnotBlock {
    pub fn gates(&self) -> [Gate; 5] {
        let [s1, s2, s3, s4] = self.param_slots;
        [
            Gate::cnot(self.control, self.target),
            Gate::rotation(Axis::Y, self.control, AngleSource::Slot(s1)),
            Gate::rotation(Axis::Z, self.control, AngleSource::Slot(s2)),
            Gate::rotation(Axis::Y, self.target, AngleSource::Slot(s3)),
            Gate::rotation(Axis::X, self.target, AngleSource::Slot(s4)),
        ]
    }
}

/// Emits one CNOT block consuming slots `slot_base..slot_base + 4`.
pub fn build_cnot_block(control: usize, target: usize, slot_base: usize) -> Result<Vec<Gate>> {
    if control == target {
        return Err(AqcError::InvalidBlock(control));
    }
    let block = CnotBlock {
        control,
        target,
        param_slots: [slot_base, slot_base + 1, slot_base + 2, slot_base + 3],
    };
    Ok(block.gates().to_vec())
}

/// Shape of the layered brick ansatz.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub n_qubits: usize,
    pub layers: usize,
    /// Consecutive repetitions of each connectivity block within a layer.
    pub block_reps: usize,
    /// `(control, target)` pairs visited once per layer, in order.
    pub connectivity: Vec<(usize, usize)>,
}

impl AnsatzSpec {
    /// Spec with the default brick connectivity.
    pub fn brick(n_qubits: usize, layers: usize, block_reps: usize) -> Self {
        Self {
            n_qubits,
            layers,
            block_reps,
            connectivity: brick_connectivity(n_qubits),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits;
        if n < 2 {
            return Err(AqcError::InvalidSpec(format!("need at least 2 qubits, got {n}")));
        }
        if self.layers < 1 {
            return Err(AqcError::InvalidSpec("need at least one layer".into()));
        }
        if !(1..=3).contains(&self.block_reps) {
            return Err(AqcError::InvalidSpec(format!(
                "block repetitions must be in 1..=3, got {}",
                self.block_reps
            )));
        }
        if self.connectivity.is_empty() {
            return Err(AqcError::InvalidSpec("empty connectivity".into()));
        }
        for &(c, t) in &self.connectivity {
            if c == t || c >= n || t >= n {
                return Err(AqcError::InvalidSpec(format!(
                    "connectivity pair ({c}, {t}) invalid for {n} qubits"
                )));
            }
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.layers * self.block_reps * self.connectivity.len()
    }

    pub fn n_params(&self) -> usize {
        3 * self.n_qubits + 4 * self.n_blocks()
    }
}

/// Pairs `(0,1), (2,3), …` followed by `(1,2), (3,4), …`; `n - 1` pairs total.
pub fn brick_connectivity(n: usize) -> Vec<(usize, usize)> {
    let even = (0..n.saturating_sub(1)).step_by(2).map(|q| (q, q + 1));
    let odd = (1..n.saturating_sub(1)).step_by(2).map(|q| (q, q + 1));
    even.chain(odd).collect()
}

/// Builds the initial `Rz Ry Rz` sweep followed by `layers` layers of blocks.
///
/// Slots `3q, 3q+1, 3q+2` belong to qubit `q`'s sweep; block slots follow in
/// emission order.
pub fn build_layered_ansatz(spec: &AnsatzSpec) -> Result<ParamCircuit> {
    spec.validate()?;
    let n = spec.n_qubits;
    let mut gates = Vec::with_capacity(3 * n + 5 * spec.n_blocks());
    for q in 0..n {
        gates.push(Gate::rotation(Axis::Z, q, AngleSource::Slot(3 * q)));
        gates.push(Gate::rotation(Axis::Y, q, AngleSource::Slot(3 * q + 1)));
        gates.push(Gate::rotation(Axis::Z, q, AngleSource::Slot(3 * q + 2)));
    }
    let mut slot = 3 * n;
    for _ in 0..spec.layers {
        for &(c, t) in &spec.connectivity {
            for _ in 0..spec.block_reps {
                gates.extend(build_cnot_block(c, t, slot)?);
                slot += 4;
            }
        }
    }
    ParamCircuit::new(n, gates, slot)
}

/// Parameter vector bound to a circuit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angles(pub Vec<f64>);

impl Angles {
    pub fn zeros(n: usize) -> Self {
        Angles(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Angles {
    fn from(v: Vec<f64>) -> Self {
        Angles(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCircuit {
    n_qubits: usize,
    gates: Vec<Gate>,
    n_params: usize,
}

impl ParamCircuit {
    /// Checks qubit ranges, finite fixed angles, and that each slot in
    /// `0..n_params` is used by exactly one gate.
    pub fn new(n_qubits: usize, gates: Vec<Gate>, n_params: usize) -> Result<Self> {
        if n_qubits == 0 {
            return Err(AqcError::InvalidCircuit("zero qubits".into()));
        }
        let mut seen = vec![false; n_params];
        for (i, gate) in gates.iter().enumerate() {
            if gate.max_qubit() >= n_qubits {
                return Err(AqcError::QubitIndex {
                    qubit: gate.max_qubit(),
                    n_qubits,
                });
            }
            match gate {
                Gate::Cnot(c) if c.control == c.target => {
                    return Err(AqcError::InvalidCircuit(format!(
                        "gate {i}: CNOT control equals target"
                    )));
                }
                Gate::Rotation(RotationGate {
                    angle: AngleSource::Fixed(a),
                    ..
                }) if !a.is_finite() => {
                    return Err(AqcError::InvalidCircuit(format!("gate {i}: non-finite angle")));
                }
                Gate::Rotation(RotationGate {
                    angle: AngleSource::Slot(s),
                    ..
                }) => {
                    if *s >= n_params {
                        return Err(AqcError::InvalidCircuit(format!(
                            "gate {i}: slot {s} out of range for {n_params} parameters"
                        )));
                    }
                    if std::mem::replace(&mut seen[*s], true) {
                        return Err(AqcError::InvalidCircuit(format!(
                            "slot {s} referenced more than once"
                        )));
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = seen.iter().position(|used| !used) {
            return Err(AqcError::InvalidCircuit(format!("slot {s} is never referenced")));
        }
        Ok(Self {
            n_qubits,
            gates,
            n_params,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn cnot_count(&self) -> usize {
        self.gates.iter().filter(|g| matches!(g, Gate::Cnot(_))).count()
    }

    pub fn bind(&self, angles: &Angles) -> Result<BoundCircuit> {
        bind_parameters(self, angles)
    }

    /// Adjoint of a circuit without parameter slots.
    pub fn adjoint(&self) -> Result<BoundCircuit> {
        if self.n_params > 0 {
            return Err(AqcError::AdjointOfUnbound);
        }
        Ok(self.bind(&Angles::zeros(0))?.adjoint())
    }
}

/// A gate with its angle resolved. `slot` remembers where the angle came from
/// so gradients can be scattered back onto the parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundGate {
    Rotation {
        axis: Axis,
        qubit: usize,
        angle: f64,
        slot: Option<usize>,
    },
    Cnot {
        control: usize,
        target: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCircuit {
    pub n_qubits: usize,
    pub gates: Vec<BoundGate>,
}

impl BoundCircuit {
    pub fn empty(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            gates: Vec::new(),
        }
    }

    /// Reversed gate order with every rotation angle negated.
    pub fn adjoint(&self) -> BoundCircuit {
        adjoint_circuit(self)
    }

    pub fn cnot_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, BoundGate::Cnot { .. }))
            .count()
    }

    /// Concatenation: `self` first, then `other`.
    pub fn then(mut self, other: &BoundCircuit) -> Result<BoundCircuit> {
        if self.n_qubits != other.n_qubits {
            return Err(AqcError::Shape(format!(
                "cannot concatenate {}-qubit and {}-qubit circuits",
                self.n_qubits, other.n_qubits
            )));
        }
        self.gates.extend_from_slice(&other.gates);
        Ok(self)
    }

    /// Forgets slot provenance; every angle becomes fixed.
    pub fn to_fixed(&self) -> ParamCircuit {
        let gates = self
            .gates
            .iter()
            .map(|g| match *g {
                BoundGate::Rotation {
                    axis, qubit, angle, ..
                } => Gate::rotation(axis, qubit, AngleSource::Fixed(angle)),
                BoundGate::Cnot { control, target } => Gate::cnot(control, target),
            })
            .collect();
        ParamCircuit {
            n_qubits: self.n_qubits,
            gates,
            n_params: 0,
        }
    }
}

pub fn bind_parameters(circuit: &ParamCircuit, angles: &Angles) -> Result<BoundCircuit> {
    if angles.len() != circuit.n_params {
        return Err(AqcError::Bind {
            expected: circuit.n_params,
            got: angles.len(),
        });
    }
    if let Some(i) = angles.0.iter().position(|a| !a.is_finite()) {
        return Err(AqcError::Input(format!("angle {i} is not finite")));
    }
    let gates = circuit
        .gates
        .iter()
        .map(|g| match *g {
            Gate::Rotation(RotationGate { axis, qubit, angle }) => {
                let (angle, slot) = match angle {
                    AngleSource::Fixed(a) => (a, None),
                    AngleSource::Slot(s) => (angles.0[s], Some(s)),
                };
                BoundGate::Rotation {
                    axis,
                    qubit,
                    angle,
                    slot,
                }
            }
            Gate::Cnot(CnotGate { control, target }) => BoundGate::Cnot { control, target },
        })
        .collect();
    Ok(BoundCircuit {
        n_qubits: circuit.n_qubits,
        gates,
    })
}

pub fn adjoint_circuit(circuit: &BoundCircuit) -> BoundCircuit {
    let gates = circuit
        .gates
        .iter()
        .rev()
        .map(|g| match *g {
            BoundGate::Rotation {
                axis,
                qubit,
                angle,
                slot,
            } => BoundGate::Rotation {
                axis,
                qubit,
                angle: -angle,
                slot,
            },
            cnot => cnot,
        })
        .collect();
    BoundCircuit {
        n_qubits: circuit.n_qubits,
        gates,
    }
}

// JSON document: {n_qubits, gates: [{kind, qubits, axis?, slot?|angle?}], n_params}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircuitDoc {
    n_qubits: usize,
    gates: Vec<GateDoc>,
    n_params: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateDoc {
    kind: GateKind,
    qubits: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    axis: Option<Axis>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    slot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    angle: Option<f64>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum GateKind {
    Rotation,
    Cnot,
}

impl ParamCircuit {
    pub fn to_json(&self) -> String {
        let gates = self
            .gates
            .iter()
            .map(|g| match *g {
                Gate::Rotation(r) => {
                    let (slot, angle) = match r.angle {
                        AngleSource::Fixed(a) => (None, Some(a)),
                        AngleSource::Slot(s) => (Some(s), None),
                    };
                    GateDoc {
                        kind: GateKind::Rotation,
                        qubits: vec![r.qubit],
                        axis: Some(r.axis),
                        slot,
                        angle,
                    }
                }
                Gate::Cnot(c) => GateDoc {
                    kind: GateKind::Cnot,
                    qubits: vec![c.control, c.target],
                    axis: None,
                    slot: None,
                    angle: None,
                },
            })
            .collect();
        let doc = CircuitDoc {
            n_qubits: self.n_qubits,
            gates,
            n_params: self.n_params,
        };
        serde_json::to_string_pretty(&doc).expect("circuit document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CircuitDoc =
            serde_json::from_str(text).map_err(|e| AqcError::InvalidCircuit(e.to_string()))?;
        let gates = doc
            .gates
            .into_iter()
            .enumerate()
            .map(|(i, g)| match g.kind {
                GateKind::Rotation => {
                    let [qubit] = g.qubits[..] else {
                        return Err(AqcError::InvalidCircuit(format!(
                            "gate {i}: rotation needs exactly one qubit"
                        )));
                    };
                    let axis = g.axis.ok_or_else(|| {
                        AqcError::InvalidCircuit(format!("gate {i}: rotation without axis"))
                    })?;
                    let angle = match (g.slot, g.angle) {
                        (Some(s), None) => AngleSource::Slot(s),
                        (None, Some(a)) => AngleSource::Fixed(a),
                        _ => {
                            return Err(AqcError::InvalidCircuit(format!(
                                "gate {i}: rotation needs exactly one of slot or angle"
                            )))
                        }
                    };
                    Ok(Gate::rotation(axis, qubit, angle))
                }
                GateKind::Cnot => {
                    let [control, target] = g.qubits[..] else {
                        return Err(AqcError::InvalidCircuit(format!(
                            "gate {i}: cnot needs exactly two qubits"
                        )));
                    };
                    if g.axis.is_some() || g.slot.is_some() || g.angle.is_some() {
                        return Err(AqcError::InvalidCircuit(format!(
                            "gate {i}: cnot takes no axis or angle"
                        )));
                    }
                    Ok(Gate::cnot(control, target))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ParamCircuit::new(doc.n_qubits, gates, doc.n_params)
    }
}
