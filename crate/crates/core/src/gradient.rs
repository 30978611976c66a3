//! Analytic gradients by a single reverse sweep, plus a central-difference
//! oracle.
//!
//! Every cost here has the form `C = 1 − E` with `E` a real quadratic form in
//! the pulled-back object `F = V†(θ)·T` (`T` the target state, or the target
//! unitary's columns). Writing `V = G_N ⋯ G_1`, the sweep starts from
//! `F₁ = V†T` and the seed `L₁ = ∂E/∂F̄`, and walks the gates forward:
//! at gate `j` the derivative is `∂E/∂θ = −½ Im ⟨L_j|σ|F_j⟩`, then both
//! vectors are pushed through `G_j`.

use serde::{Deserialize, Serialize};

use crate::circuit::{Angles, BoundCircuit, BoundGate, ParamCircuit};
use crate::cost::{
    check_pairing, composite_objective, evaluate_cost, flipped_trace, max_objective,
    surrogate_index, unitary_flip_terms, CostSpec, FlipWeights, TargetRef,
};
use crate::dense::{check_dense_limit, DENSE_QUBIT_LIMIT};
use crate::error::{AqcError, Result};
use crate::state::{apply_bound_gate_raw, pauli_expectation_raw, pairwise_sum, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub gradient: Vec<f64>,
    pub cost_at_point: f64,
    /// Global cost at the same point (state overlap or Hilbert–Schmidt),
    /// computed from the same forward state.
    pub global_cost: f64,
}

impl GradientReport {
    pub fn norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Pulled-back columns `F` (one for state targets, `d` for unitaries), stored
/// back to back.
struct Sweep {
    dim: usize,
    f: Vec<C64>,
    l: Vec<C64>,
}

impl Sweep {
    fn columns(&self) -> usize {
        self.f.len() / self.dim
    }

    fn apply(buf: &mut [C64], dim: usize, gate: &BoundGate) {
        for col in buf.chunks_mut(dim) {
            apply_bound_gate_raw(col, gate);
        }
    }

    fn run(mut self, circuit: &BoundCircuit, n_params: usize) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; n_params];
        let d = self.dim;
        for gate in &circuit.gates {
            if let BoundGate::Rotation {
                axis,
                qubit,
                slot: Some(slot),
                ..
            } = *gate
            {
                let cols = self.columns();
                let (f, l) = (&self.f, &self.l);
                let z = pairwise_sum(0..cols, &|c| {
                    let r = c * d..(c + 1) * d;
                    pauli_expectation_raw(&l[r.clone()], &f[r], axis, qubit)
                });
                // C = 1 − E, dE/dθ = −½ Im z
                grad[slot] += 0.5 * z.im;
            }
            Self::apply(&mut self.f, d, gate);
            Self::apply(&mut self.l, d, gate);
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(AqcError::Divergence(format!("gradient entry {i} is not finite")));
        }
        Ok(grad)
    }
}

fn popcount_weight(weights: &FlipWeights, i: usize) -> f64 {
    weights.weight_of_order(i.count_ones() as usize)
}

/// Seed `2Pφ` for the state costs, together with `(C, C_global)`.
fn state_seed(spec: &CostSpec, phi: &[C64], n: usize) -> (Vec<C64>, f64, f64) {
    let zero = C64::new(0.0, 0.0);
    let mut l = vec![zero; phi.len()];
    let global = 1.0 - phi[0].norm_sqr();
    let cost = match spec {
        CostSpec::StateGlobal => {
            l[0] = 2.0 * phi[0];
            global
        }
        CostSpec::StateLocal(w) => {
            for (i, (li, p)) in l.iter_mut().zip(phi).enumerate() {
                let a = popcount_weight(w, i);
                if a != 0.0 {
                    *li = 2.0 * a * p;
                }
            }
            // value summed by order, as in the cost module
            let terms = crate::cost::state_flip_terms(phi, n, w.k);
            1.0 - terms[0] - w.alphas.iter().zip(&terms[1..]).map(|(a, t)| a * t).sum::<f64>()
        }
        CostSpec::SurrogateComposite { alpha, betas } => {
            let proj: C64 = betas
                .iter()
                .enumerate()
                .map(|(j, b)| b.conj() * phi[surrogate_index(j)])
                .sum();
            l[0] += 2.0 * (1.0 - alpha) * phi[0];
            for (j, b) in betas.iter().enumerate() {
                l[surrogate_index(j)] += 2.0 * alpha * proj * b;
            }
            composite_objective(phi, n, *alpha, betas)
        }
        CostSpec::SurrogateMax { alpha, leader } => {
            l[0] += 2.0 * (1.0 - alpha) * phi[0];
            let idx = surrogate_index(*leader);
            l[idx] += 2.0 * alpha * phi[idx];
            max_objective(phi, *alpha, *leader)
        }
        _ => unreachable!("state seed requested for a unitary cost"),
    };
    (l, cost, global)
}

/// Seed for the unitary costs: `L_c = Σ_S (2w_S/d²) t_S e_{c⊕s}` for the
/// trace-squared family, `e_c / d` for Frobenius.
fn unitary_seed(spec: &CostSpec, m: &[C64], n: usize) -> (Vec<C64>, f64, f64) {
    let d = 1usize << n;
    let d2 = (d * d) as f64;
    let mut l = vec![C64::new(0.0, 0.0); d * d];
    let t0 = flipped_trace(m, d, 0);
    let global = 1.0 - t0.norm_sqr() / d2;
    let add_mask = |l: &mut [C64], mask: usize, coeff: C64| {
        for c in 0..d {
            l[c * d + (c ^ mask)] += coeff;
        }
    };
    let cost = match spec {
        CostSpec::Frobenius => {
            add_mask(&mut l, 0, C64::new(1.0 / d as f64, 0.0));
            1.0 - t0.re / d as f64
        }
        CostSpec::HilbertSchmidt => {
            add_mask(&mut l, 0, t0 * (2.0 / d2));
            global
        }
        CostSpec::UnitaryLocal(w) => {
            add_mask(&mut l, 0, t0 * (2.0 / d2));
            for (order, &a) in (1..=w.k).zip(&w.alphas) {
                if a == 0.0 {
                    continue;
                }
                for mask in crate::cost::flip_masks(n, order) {
                    let t = flipped_trace(m, d, mask);
                    add_mask(&mut l, mask, t * (2.0 * a / d2));
                }
            }
            let terms = unitary_flip_terms(m, n, w.k);
            1.0 - terms[0] - w.alphas.iter().zip(&terms[1..]).map(|(a, t)| a * t).sum::<f64>()
        }
        _ => unreachable!("unitary seed requested for a state cost"),
    };
    (l, cost, global)
}

/// Exact gradient of a frozen cost at `angles`.
pub fn adjoint_gradient(
    spec: &CostSpec,
    circuit: &ParamCircuit,
    angles: &Angles,
    target: TargetRef<'_>,
) -> Result<GradientReport> {
    let n = circuit.n_qubits();
    check_pairing(spec, target, n)?;
    let bound = circuit.bind(angles)?;
    let adj = bound.adjoint();
    let (sweep, cost, global) = match target {
        TargetRef::State(t) => {
            let phi = crate::cost::pull_back(&bound, t)?.into_amplitudes();
            let (l, cost, global) = state_seed(spec, &phi, n);
            (
                Sweep {
                    dim: phi.len(),
                    f: phi,
                    l,
                },
                cost,
                global,
            )
        }
        TargetRef::Unitary(u) => {
            check_dense_limit("unitary gradient", n, DENSE_QUBIT_LIMIT)?;
            let mut m = u.matrix().clone();
            crate::dense::apply_circuit_to_columns(&mut m, &adj);
            let f: Vec<C64> = m.as_slice().to_vec();
            let (l, cost, global) = unitary_seed(spec, &f, n);
            (
                Sweep {
                    dim: 1 << n,
                    f,
                    l,
                },
                cost,
                global,
            )
        }
    };
    let gradient = sweep.run(&bound, circuit.n_params())?;
    Ok(GradientReport {
        gradient,
        cost_at_point: cost,
        global_cost: global,
    })
}

/// Central differences `(C(θ+h e_j) − C(θ−h e_j)) / 2h`, evaluated through the
/// direct cost path.
pub fn finite_difference_gradient(
    spec: &CostSpec,
    circuit: &ParamCircuit,
    angles: &Angles,
    target: TargetRef<'_>,
    h: f64,
) -> Result<GradientReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(AqcError::Input(format!("step h={h} must be positive")));
    }
    let cost_at_point = evaluate_cost(spec, circuit, angles, target)?;
    let global_spec = if spec.needs_unitary_target() {
        CostSpec::HilbertSchmidt
    } else {
        CostSpec::StateGlobal
    };
    let global_cost = evaluate_cost(&global_spec, circuit, angles, target)?;
    let mut gradient = Vec::with_capacity(angles.len());
    let mut probe = angles.clone();
    for j in 0..angles.len() {
        let x = angles.0[j];
        probe.0[j] = x + h;
        let plus = evaluate_cost(spec, circuit, &probe, target)?;
        probe.0[j] = x - h;
        let minus = evaluate_cost(spec, circuit, &probe, target)?;
        probe.0[j] = x;
        gradient.push((plus - minus) / (2.0 * h));
    }
    Ok(GradientReport {
        gradient,
        cost_at_point,
        global_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_layered_ansatz, AngleSource, AnsatzSpec, Axis, Gate};
    use crate::dense::DenseUnitary;
    use crate::state::StateVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn product_rx(n: usize) -> ParamCircuit {
        let gates = (0..n)
            .map(|q| Gate::rotation(Axis::X, q, AngleSource::Slot(q)))
            .collect();
        ParamCircuit::new(n, gates, n).unwrap()
    }

    fn random_angles(n: usize, rng: &mut ChaCha8Rng) -> Angles {
        Angles((0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect())
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        for (x, y) in a.iter().zip(b) {
            let tol = rel * x.abs().max(y.abs()).max(1e-4);
            assert!((x - y).abs() <= tol.max(1e-10), "{x} vs {y}");
        }
    }

    #[test]
    fn product_ansatz_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = product_rx(5);
        let zero = StateVector::zero(5);
        for _ in 0..10 {
            let a = random_angles(5, &mut rng);
            let g = adjoint_gradient(&CostSpec::StateGlobal, &c, &a, TargetRef::State(&zero)).unwrap();
            for j in 0..5 {
                let others: f64 = (0..5)
                    .filter(|&i| i != j)
                    .map(|i| (a.0[i] / 2.0).cos().powi(2))
                    .product();
                let expected = 0.5 * a.0[j].sin() * others;
                assert!((g.gradient[j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stationary_at_exact_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let c = build_layered_ansatz(&AnsatzSpec::brick(3, 1, 1)).unwrap();
        let a = random_angles(c.n_params(), &mut rng);
        let mut t = StateVector::zero(3);
        t.apply_circuit(&c.bind(&a).unwrap()).unwrap();
        let spec = CostSpec::StateLocal(FlipWeights::full_local(3));
        let g = adjoint_gradient(&spec, &c, &a, TargetRef::State(&t)).unwrap();
        assert!(g.norm() < 1e-8);
        assert!(g.cost_at_point.abs() < 1e-12);
    }

    #[test]
    fn state_costs_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let c = build_layered_ansatz(&AnsatzSpec::brick(4, 1, 1)).unwrap();
        let t = StateVector::random(4, &mut rng);
        let a = random_angles(c.n_params(), &mut rng);
        let betas: Vec<C64> = (0..5)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let specs = [
            CostSpec::StateGlobal,
            CostSpec::StateLocal(FlipWeights::local_pattern(4, 1)),
            CostSpec::StateLocal(solve_weights(4, 2)),
            CostSpec::SurrogateComposite { alpha: 0.4, betas },
            CostSpec::SurrogateMax { alpha: 0.7, leader: 2 },
            CostSpec::SurrogateMax { alpha: 0.7, leader: 0 },
        ];
        for spec in &specs {
            let g = adjoint_gradient(spec, &c, &a, TargetRef::State(&t)).unwrap();
            let f = finite_difference_gradient(spec, &c, &a, TargetRef::State(&t), 1e-5).unwrap();
            assert_close(&g.gradient, &f.gradient, 1e-6);
            assert_eq!(g.cost_at_point, f.cost_at_point, "{spec:?}");
        }
    }

    fn solve_weights(n: usize, k: usize) -> FlipWeights {
        crate::cost::solve_alpha_system(n, k).unwrap()
    }

    #[test]
    fn unitary_costs_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let c = build_layered_ansatz(&AnsatzSpec::brick(3, 1, 1)).unwrap();
        let u = DenseUnitary::random_haar(3, &mut rng);
        let a = random_angles(c.n_params(), &mut rng);
        for spec in [
            CostSpec::Frobenius,
            CostSpec::HilbertSchmidt,
            CostSpec::UnitaryLocal(FlipWeights::full_local(3)),
        ] {
            let g = adjoint_gradient(&spec, &c, &a, TargetRef::Unitary(&u)).unwrap();
            let f = finite_difference_gradient(&spec, &c, &a, TargetRef::Unitary(&u), 1e-5).unwrap();
            assert_close(&g.gradient, &f.gradient, 1e-6);
            assert!((g.cost_at_point - f.cost_at_point).abs() < 1e-12);
        }
    }

    #[test]
    fn hs_gradient_ignores_target_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let c = build_layered_ansatz(&AnsatzSpec::brick(2, 1, 2)).unwrap();
        let u = DenseUnitary::random_haar(2, &mut rng);
        let up = u.scale(C64::from_polar(1.0, 1.3));
        let a = random_angles(c.n_params(), &mut rng);
        let g = adjoint_gradient(&CostSpec::HilbertSchmidt, &c, &a, TargetRef::Unitary(&u)).unwrap();
        let gp = adjoint_gradient(&CostSpec::HilbertSchmidt, &c, &a, TargetRef::Unitary(&up)).unwrap();
        for (x, y) in g.gradient.iter().zip(&gp.gradient) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_qubit_fd() {
        let c = product_rx(1);
        let zero = StateVector::zero(1);
        let a = Angles(vec![PI / 2.0]);
        // C = (1 − cos θ)/2, so C' = ½ at π/2 with an h²/12 truncation error
        let f1 = finite_difference_gradient(&CostSpec::StateGlobal, &c, &a, TargetRef::State(&zero), 1e-3).unwrap();
        let f2 = finite_difference_gradient(&CostSpec::StateGlobal, &c, &a, TargetRef::State(&zero), 1e-2).unwrap();
        assert!((f1.gradient[0] - 0.5).abs() < 1e-7);
        assert!((f2.gradient[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn fd_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let c = product_rx(3);
        let zero = StateVector::zero(3);
        let a = random_angles(3, &mut rng);
        let exact = adjoint_gradient(&CostSpec::StateGlobal, &c, &a, TargetRef::State(&zero)).unwrap();
        let err = |h: f64| {
            let f = finite_difference_gradient(&CostSpec::StateGlobal, &c, &a, TargetRef::State(&zero), h)
                .unwrap();
            f.gradient
                .iter()
                .zip(&exact.gradient)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn capability_and_step_errors() {
        let c = product_rx(2);
        let s = StateVector::zero(2);
        let a = Angles(vec![0.1, 0.2]);
        assert!(matches!(
            adjoint_gradient(&CostSpec::Frobenius, &c, &a, TargetRef::State(&s)),
            Err(AqcError::Capability(_))
        ));
        assert!(finite_difference_gradient(&CostSpec::StateGlobal, &c, &a, TargetRef::State(&s), 0.0).is_err());
    }
}
