//! Isotropic Heisenberg chain targets: first-order Trotter circuits built from
//! the two-site gate, and exact evolution by diagonalization.
//!
//! The chain is open with bonds `(ℓ, ℓ+1)` for `ℓ = 0..L−2` and
//! `H = −Σ_ℓ (XX + YY + ZZ)_{ℓ,ℓ+1}`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::circuit::{Axis, BoundCircuit, BoundGate};
use crate::dense::{check_dense_limit, trace_vdag_u, DenseUnitary, DENSE_QUBIT_LIMIT};
use crate::error::{AqcError, Result};
use crate::state::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpinChainSpec {
    pub sites: usize,
}

impl SpinChainSpec {
    pub fn new(sites: usize) -> Result<Self> {
        if sites < 2 {
            return Err(AqcError::Input(format!("spin chain needs at least 2 sites, got {sites}")));
        }
        Ok(Self { sites })
    }

    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize)> {
        (0..self.sites - 1).map(|l| (l, l + 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrotterPlan {
    pub dt: f64,
    pub steps: usize,
}

impl TrotterPlan {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
            return Err(AqcError::Input(format!(
                "Trotter plan needs dt > 0 and at least one step (dt={dt}, steps={steps})"
            )));
        }
        Ok(Self { dt, steps })
    }

    pub fn total_time(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

fn rot(axis: Axis, qubit: usize, angle: f64) -> BoundGate {
    BoundGate::Rotation {
        axis,
        qubit,
        angle,
        slot: None,
    }
}

fn cnot(control: usize, target: usize) -> BoundGate {
    BoundGate::Cnot { control, target }
}

/// Gates of `exp(i(α XX + β YY + γ ZZ))` on qubits `a < b`, up to global phase.
pub fn two_site_gates(a: usize, b: usize, alpha: f64, beta: f64, gamma: f64) -> Vec<BoundGate> {
    vec![
        rot(Axis::Z, b, -FRAC_PI_2),
        cnot(b, a),
        rot(Axis::Z, a, FRAC_PI_2 - 2.0 * gamma),
        rot(Axis::Y, b, 2.0 * alpha - FRAC_PI_2),
        cnot(a, b),
        rot(Axis::Y, b, FRAC_PI_2 - 2.0 * beta),
        cnot(b, a),
        rot(Axis::Z, a, FRAC_PI_2),
    ]
}

/// Two-qubit circuit for `exp(i(α XX + β YY + γ ZZ))`, up to global phase.
pub fn two_site_gate(alpha: f64, beta: f64, gamma: f64) -> BoundCircuit {
    BoundCircuit {
        n_qubits: 2,
        gates: two_site_gates(0, 1, alpha, beta, gamma),
    }
}

/// One first-order step: every even bond, then every odd bond.
pub fn trotter_step_circuit(spec: &SpinChainSpec, dt: f64) -> BoundCircuit {
    let mut gates = Vec::new();
    for parity in [0, 1] {
        for (a, b) in spec.bonds().filter(|(a, _)| a % 2 == parity) {
            gates.extend(two_site_gates(a, b, dt, dt, dt));
        }
    }
    BoundCircuit {
        n_qubits: spec.sites,
        gates,
    }
}

/// `plan.steps` repetitions of the Trotter step.
pub fn trotter_circuit(spec: &SpinChainSpec, plan: &TrotterPlan) -> BoundCircuit {
    let step = trotter_step_circuit(spec, plan.dt);
    let mut gates = Vec::with_capacity(step.gates.len() * plan.steps);
    for _ in 0..plan.steps {
        gates.extend_from_slice(&step.gates);
    }
    BoundCircuit {
        n_qubits: spec.sites,
        gates,
    }
}

/// Dense real-symmetric Hamiltonian.
pub fn hamiltonian(spec: &SpinChainSpec) -> Result<DMatrix<f64>> {
    check_dense_limit("spin-chain Hamiltonian", spec.sites, DENSE_QUBIT_LIMIT)?;
    let d = 1usize << spec.sites;
    let mut h = DMatrix::<f64>::zeros(d, d);
    for (a, b) in spec.bonds() {
        let mask = (1 << a) | (1 << b);
        for i in 0..d {
            let aligned = ((i >> a) & 1) == ((i >> b) & 1);
            // ZZ is ±1 on the diagonal; XX + YY maps |01⟩ ↔ |10⟩ with weight 2
            h[(i, i)] -= if aligned { 1.0 } else { -1.0 };
            if !aligned {
                h[(i ^ mask, i)] -= 2.0;
            }
        }
    }
    Ok(h)
}

/// `exp(−iHt)` via the eigendecomposition of `H`.
pub fn exact_evolution(spec: &SpinChainSpec, t: f64) -> Result<DenseUnitary> {
    let h = hamiltonian(spec)?;
    let eig = SymmetricEigen::new(h);
    let q = eig.eigenvectors.map(|v| C64::new(v, 0.0));
    let phases: Vec<C64> = eig
        .eigenvalues
        .iter()
        .map(|&l| C64::from_polar(1.0, -l * t))
        .collect();
    let mut qd = q.clone();
    for (j, p) in phases.iter().enumerate() {
        qd.column_mut(j).iter_mut().for_each(|v| *v *= p);
    }
    DenseUnitary::from_matrix(qd * q.transpose())
}

/// `(1 + |Tr(V†U)|²/d) / (d + 1)`.
pub fn average_gate_fidelity(u: &DenseUnitary, v: &DenseUnitary) -> Result<f64> {
    let t = trace_vdag_u(v, u)?;
    let d = u.dim() as f64;
    Ok((1.0 + t.norm_sqr() / d) / (d + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{circuit_unitary, phase_aligned_distance, phase_aligned_frobenius};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pauli(p: char) -> DMatrix<C64> {
        let (z, o, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
        let e = match p {
            'x' => [z, o, o, z],
            'y' => [z, -i, i, z],
            _ => [o, z, z, -o],
        };
        DMatrix::from_row_slice(2, 2, &e)
    }

    /// `exp(i(αXX + βYY + γZZ))` with qubit 0 as the low bit; the three
    /// products commute and square to the identity.
    fn oracle(alpha: f64, beta: f64, gamma: f64) -> DenseUnitary {
        let id = DMatrix::<C64>::identity(4, 4);
        let mut u = id.clone();
        for (c, p) in [(alpha, 'x'), (beta, 'y'), (gamma, 'z')] {
            let pp = pauli(p).kronecker(&pauli(p));
            u *= id.map(|v| v * c.cos()) + pp.map(|v| v * C64::new(0.0, c.sin()));
        }
        DenseUnitary::from_matrix(u).unwrap()
    }

    #[test]
    fn two_site_gate_zero_is_identity() {
        let u = circuit_unitary(&two_site_gate(0.0, 0.0, 0.0)).unwrap();
        assert!(phase_aligned_distance(&DenseUnitary::identity(2), &u).unwrap() < 1e-12);
    }

    #[test]
    fn two_site_gate_matches_oracle() {
        let u = circuit_unitary(&two_site_gate(0.2, 0.2, 0.2)).unwrap();
        assert!(phase_aligned_distance(&oracle(0.2, 0.2, 0.2), &u).unwrap() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let (a, b, g) = (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let u = circuit_unitary(&two_site_gate(a, b, g)).unwrap();
            assert!(phase_aligned_distance(&oracle(a, b, g), &u).unwrap() < 1e-10);
        }
    }

    #[test]
    fn hamiltonian_is_symmetric() {
        let h = hamiltonian(&SpinChainSpec::new(4).unwrap()).unwrap();
        assert_eq!(h, h.transpose());
        // fully aligned state sits at −(L−1)
        assert_eq!(h[(0, 0)], -3.0);
    }

    #[test]
    fn two_sites_trotter_is_exact() {
        let spec = SpinChainSpec::new(2).unwrap();
        let exact = exact_evolution(&spec, 0.3).unwrap();
        let trot = circuit_unitary(&trotter_step_circuit(&spec, 0.3)).unwrap();
        assert!(phase_aligned_distance(&exact, &trot).unwrap() < 1e-10);
        assert!(phase_aligned_distance(&exact, &oracle(0.3, 0.3, 0.3)).unwrap() < 1e-10);
    }

    #[test]
    fn evolution_group_and_identity() {
        let spec = SpinChainSpec::new(4).unwrap();
        let e0 = exact_evolution(&spec, 0.0).unwrap();
        assert!(phase_aligned_distance(&DenseUnitary::identity(4), &e0).unwrap() < 1e-12);
        let a = exact_evolution(&spec, 0.17).unwrap();
        let b = exact_evolution(&spec, 0.41).unwrap();
        let ab = exact_evolution(&spec, 0.58).unwrap();
        let diff = (a.matrix() * b.matrix() - ab.matrix()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10);
        assert!(ab.unitarity_residual() < 1e-10);
    }

    #[test]
    fn evolution_commutes_with_h() {
        let spec = SpinChainSpec::new(4).unwrap();
        let h = hamiltonian(&spec).unwrap().map(|v| C64::new(v, 0.0));
        let u = exact_evolution(&spec, 0.9).unwrap();
        let c = (&h * u.matrix() - u.matrix() * &h).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(c < 1e-10);
    }

    #[test]
    fn trotter_error_is_second_order() {
        let spec = SpinChainSpec::new(4).unwrap();
        let err = |dt: f64| {
            let t = circuit_unitary(&trotter_step_circuit(&spec, dt)).unwrap();
            phase_aligned_frobenius(&exact_evolution(&spec, dt).unwrap(), &t).unwrap()
        };
        let ratio = err(0.2) / err(0.1);
        assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fidelity_bounds() {
        let id = DenseUnitary::identity(2);
        let u = id.scale(C64::from_polar(1.0, 0.4));
        assert!((average_gate_fidelity(&id, &u).unwrap() - 1.0).abs() < 1e-15);
        // Z⊗I is traceless against I
        let z = circuit_unitary(&BoundCircuit {
            n_qubits: 2,
            gates: vec![rot(Axis::Z, 0, std::f64::consts::PI)],
        })
        .unwrap();
        assert!((average_gate_fidelity(&id, &z).unwrap() - 0.2).abs() < 1e-15);
        assert!(average_gate_fidelity(&id, &DenseUnitary::identity(3)).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(TrotterPlan::new(0.0, 1).is_err());
        assert!(TrotterPlan::new(0.1, 0).is_err());
        assert!(SpinChainSpec::new(1).is_err());
        assert!((TrotterPlan::new(0.2, 2).unwrap().total_time() - 0.4).abs() < 1e-15);
    }
}
