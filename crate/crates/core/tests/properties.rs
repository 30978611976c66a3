use aqc_core::cost::{frobenius_cost, hs_cost, pull_back, state_local_cost};
use aqc_core::dense::phase_aligned_distance;
use aqc_core::{
    adjoint_gradient, build_layered_ansatz, circuit_unitary, finite_difference_gradient, Angles,
    AnsatzSpec, CostSpec, DenseUnitary, FlipWeights, ParamCircuit, StateVector, TargetRef, C64,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ansatz(n: usize, layers: usize, reps: usize) -> ParamCircuit {
    build_layered_ansatz(&AnsatzSpec::brick(n, layers, reps)).unwrap()
}

fn case() -> impl Strategy<Value = (ParamCircuit, Angles, u64)> {
    (2usize..=5, 1usize..=2, 1usize..=2, any::<u64>()).prop_flat_map(|(n, l, b, seed)| {
        let c = ansatz(n, l, b);
        let p = c.n_params();
        (
            Just(c),
            prop::collection::vec(-7.0f64..7.0, p).prop_map(Angles),
            Just(seed),
        )
    })
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parameter_count(n in 2usize..=9, l in 1usize..=3, b in 1usize..=3) {
        let c = ansatz(n, l, b);
        prop_assert_eq!(c.n_params(), 3 * n + 4 * l * b * (n - 1));
        prop_assert_eq!(c.cnot_count(), l * b * (n - 1));
    }

    #[test]
    fn kernel_matches_dense((c, a, _) in case()) {
        let bound = c.bind(&a).unwrap();
        let u = circuit_unitary(&bound).unwrap();
        prop_assert!(u.unitarity_residual() < 1e-12);
        let d = u.dim();
        for j in [0, d / 2 + 1, d - 1] {
            let mut s = StateVector::basis(c.n_qubits(), j);
            s.apply_circuit(&bound).unwrap();
            let col: Vec<C64> = u.matrix().column(j).iter().copied().collect();
            prop_assert!(max_diff(s.amplitudes(), &col) < 1e-12);
        }
    }

    #[test]
    fn adjoint_undoes_circuit((c, a, seed) in case()) {
        let bound = c.bind(&a).unwrap();
        prop_assert_eq!(bound.adjoint().adjoint(), bound.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s0 = StateVector::random(c.n_qubits(), &mut rng);
        let mut s = s0.clone();
        s.apply_circuit(&bound).unwrap();
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        s.apply_circuit(&bound.adjoint()).unwrap();
        prop_assert!(max_diff(s.amplitudes(), s0.amplitudes()) < 1e-12);
    }

    /// Flip terms over every subset sum to the squared norm, so the full
    /// local cost equals one minus the mean single-qubit zero marginal.
    #[test]
    fn flip_expansion_telescopes((c, a, seed) in case()) {
        let n = c.n_qubits();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = StateVector::random(n, &mut rng);
        let bound = c.bind(&a).unwrap();
        let phi = pull_back(&bound, &target).unwrap();
        let total: f64 = phi.amplitudes().iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let marginal: f64 = (0..n)
            .map(|j| {
                phi.amplitudes()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| (i >> j) & 1 == 0)
                    .map(|(_, v)| v.norm_sqr())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        let local = state_local_cost(&bound, &target, &FlipWeights::full_local(n)).unwrap().value;
        prop_assert!((local - (1.0 - marginal)).abs() < 1e-12);
    }

    #[test]
    fn unitary_distances_ordered(n in 1usize..=4, seed in any::<u64>(), phase in 0.0f64..6.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, v) = (DenseUnitary::random_haar(n, &mut rng), DenseUnitary::random_haar(n, &mut rng));
        let hs = hs_cost(&v, &u).unwrap();
        let fro = frobenius_cost(&v, &u).unwrap();
        prop_assert!(1.0 - hs - (1.0 - fro).powi(2) >= -1e-12);
        let shifted = v.scale(C64::from_polar(1.0, phase));
        prop_assert!((hs_cost(&shifted, &u).unwrap() - hs).abs() < 1e-12);
        prop_assert!(phase_aligned_distance(&v, &shifted).unwrap() < 1e-10);
    }

    #[test]
    fn adjoint_gradient_matches_differences((c, a, seed) in case(), k in 1usize..=2) {
        let n = c.n_qubits();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = StateVector::random(n, &mut rng);
        let u = DenseUnitary::random_haar(n, &mut rng);
        let k = k.min(n - 1);
        let w = FlipWeights::local_pattern(n, k);
        for (spec, target) in [
            (CostSpec::StateGlobal, TargetRef::State(&t)),
            (CostSpec::StateLocal(w.clone()), TargetRef::State(&t)),
            (CostSpec::HilbertSchmidt, TargetRef::Unitary(&u)),
            (CostSpec::UnitaryLocal(w.clone()), TargetRef::Unitary(&u)),
        ] {
            let g = adjoint_gradient(&spec, &c, &a, target).unwrap();
            let f = finite_difference_gradient(&spec, &c, &a, target, 1e-5).unwrap();
            prop_assert!((g.cost_at_point - f.cost_at_point).abs() < 1e-12);
            let scale = f.norm().max(1e-3);
            for (x, y) in g.gradient.iter().zip(&f.gradient) {
                prop_assert!((x - y).abs() / scale < 1e-6, "{spec:?}: {x} vs {y}");
            }
        }
    }
}
