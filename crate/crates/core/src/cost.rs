//! Compilation costs: Frobenius and Hilbert–Schmidt distances, the global and
//! bit-flip-expanded local state costs, their truncated and unitary variants,
//! and the two surrogate models.
//!
//! Every state cost works on the pulled-back state `φ = V†(θ)|ψ₀⟩`. A bit-flip
//! term `|⟨0|X_S φ⟩|²` is simply `|φ[mask(S)]|²`, so once `φ` is known each
//! term is a single amplitude lookup.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::circuit::{Angles, BoundCircuit, ParamCircuit};
use crate::dense::{circuit_unitary, trace_vdag_u, DenseUnitary};
use crate::error::{AqcError, Result};
use crate::state::{StateVector, C64};

/// Default cap on the number of flip subsets per evaluation.
pub const DEFAULT_TERM_BUDGET: u128 = 1_000_000;
/// Default relative hysteresis of the max surrogate.
pub const DEFAULT_HYSTERESIS: f64 = 0.10;
/// Targets whose squared norm is further than this from 1 are rejected.
pub const NORM_TOLERANCE: f64 = 1e-8;

const DEGENERATE_PROJECTION: f64 = 1e-150;

/// Truncation order `k` and flip weights `α_1..α_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipWeights {
    pub k: usize,
    pub alphas: Vec<f64>,
}

impl FlipWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if let Some(i) = alphas.iter().position(|a| !a.is_finite()) {
            return Err(AqcError::Input(format!("flip weight {} is not finite", i + 1)));
        }
        Ok(Self {
            k: alphas.len(),
            alphas,
        })
    }

    /// No flip terms.
    pub fn none() -> Self {
        Self {
            k: 0,
            alphas: Vec::new(),
        }
    }

    /// `α_m = (n − m)/n` for `m = 1..=k`.
    pub fn local_pattern(n: usize, k: usize) -> Self {
        let alphas = (1..=k).map(|m| (n - m) as f64 / n as f64).collect();
        Self { k, alphas }
    }

    /// The complete local cost: `k = n − 1` with the `(n − m)/n` pattern.
    pub fn full_local(n: usize) -> Self {
        Self::local_pattern(n, n - 1)
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            k: self.k,
            alphas: self.alphas.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.alphas.len() != self.k {
            return Err(AqcError::Input(format!(
                "k={} but {} weights given",
                self.k,
                self.alphas.len()
            )));
        }
        if self.k > 0 && self.k + 1 > n {
            return Err(AqcError::Truncation { k: self.k, n });
        }
        if self.alphas.iter().any(|a| !a.is_finite()) {
            return Err(AqcError::Input("non-finite flip weight".into()));
        }
        Ok(())
    }

    /// Weight of a basis index with Hamming weight `m` (1 for `m = 0`).
    pub fn weight_of_order(&self, m: usize) -> f64 {
        match m {
            0 => 1.0,
            m if m <= self.k => self.alphas[m - 1],
            _ => 0.0,
        }
    }
}

pub fn binomial(n: usize, m: usize) -> u128 {
    if m > n {
        return 0;
    }
    let m = m.min(n - m);
    (0..m).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Checks that orders `1..=k` together stay within `budget` subsets.
pub fn check_term_budget(n: usize, k: usize, budget: u128) -> Result<()> {
    let terms: u128 = (1..=k).map(|m| binomial(n, m)).sum();
    if terms > budget {
        return Err(AqcError::TermBudget { terms, budget });
    }
    Ok(())
}

/// Masks of all `m`-subsets of `0..n` in lexicographic order of the sorted
/// qubit tuples.
pub fn flip_masks(n: usize, m: usize) -> FlipMasks {
    FlipMasks {
        n,
        idx: if m <= n { Some((0..m).collect()) } else { None },
    }
}

pub struct FlipMasks {
    n: usize,
    idx: Option<Vec<usize>>,
}

impl Iterator for FlipMasks {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let idx = self.idx.as_mut()?;
        let mask = idx.iter().fold(0usize, |acc, &q| acc | 1 << q);
        let m = idx.len();
        // advance to the next combination
        let mut i = m;
        loop {
            if i == 0 {
                self.idx = None;
                break;
            }
            i -= 1;
            if idx[i] < self.n - m + i {
                idx[i] += 1;
                for j in i + 1..m {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(mask)
    }
}

/// Cost value with its per-order constituents.
///
/// `terms[0]` is the zero-flip overlap term and `terms[m]` the unweighted sum
/// over all `m`-flip subsets; `value = 1 − terms[0] − Σ α_m terms[m]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub value: f64,
    pub terms: Vec<f64>,
    pub weights: FlipWeights,
    #[serde(skip)]
    pub term_counts: Vec<u128>,
}

impl CostReport {
    fn assemble(terms: Vec<f64>, weights: &FlipWeights, n: usize) -> Self {
        let flips: f64 = weights
            .alphas
            .iter()
            .zip(&terms[1..])
            .map(|(a, t)| a * t)
            .sum();
        let term_counts = (0..terms.len()).map(|m| binomial(n, m)).collect();
        Self {
            value: 1.0 - terms[0] - flips,
            terms,
            weights: weights.clone(),
            term_counts,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cost report serializes")
    }
}

fn check_normalized(target: &StateVector) -> Result<()> {
    let dev = (target.norm_sqr() - 1.0).abs();
    if dev > NORM_TOLERANCE {
        return Err(AqcError::Input(format!(
            "target state is not normalized (|‖ψ‖² − 1| = {dev:.3e})"
        )));
    }
    Ok(())
}

/// `V†|ψ₀⟩`.
pub fn pull_back(circuit: &BoundCircuit, target: &StateVector) -> Result<StateVector> {
    check_normalized(target)?;
    let mut phi = target.clone();
    phi.apply_circuit(&circuit.adjoint())?;
    Ok(phi)
}

/// `1 − (1/d) Re Tr(V†U)`.
pub fn frobenius_cost(v: &DenseUnitary, u: &DenseUnitary) -> Result<f64> {
    let t = trace_vdag_u(v, u)?;
    Ok(1.0 - t.re / v.dim() as f64)
}

/// `1 − |Tr(V†U)|² / d²`.
pub fn hs_cost(v: &DenseUnitary, u: &DenseUnitary) -> Result<f64> {
    let t = trace_vdag_u(v, u)?;
    let d = v.dim() as f64;
    Ok(1.0 - t.norm_sqr() / (d * d))
}

/// `1 − |⟨0|V†|ψ₀⟩|²`.
pub fn state_global_cost(circuit: &BoundCircuit, target: &StateVector) -> Result<f64> {
    let phi = pull_back(circuit, target)?;
    let zero = StateVector::zero(phi.n_qubits());
    Ok(1.0 - crate::state::overlap(&zero, &phi)?.norm_sqr())
}

/// Per-order flip sums of a pulled-back state.
pub(crate) fn state_flip_terms(phi: &[C64], n: usize, k: usize) -> Vec<f64> {
    let mut terms = Vec::with_capacity(k + 1);
    terms.push(phi[0].norm_sqr());
    for m in 1..=k {
        terms.push(flip_masks(n, m).map(|mask| phi[mask].norm_sqr()).sum());
    }
    terms
}

pub fn state_local_cost(
    circuit: &BoundCircuit,
    target: &StateVector,
    weights: &FlipWeights,
) -> Result<CostReport> {
    state_local_cost_with_budget(circuit, target, weights, DEFAULT_TERM_BUDGET)
}

pub fn state_local_cost_with_budget(
    circuit: &BoundCircuit,
    target: &StateVector,
    weights: &FlipWeights,
    budget: u128,
) -> Result<CostReport> {
    let n = circuit.n_qubits;
    weights.validate_for(n)?;
    check_term_budget(n, weights.k, budget)?;
    let phi = pull_back(circuit, target)?;
    let terms = state_flip_terms(phi.amplitudes(), n, weights.k);
    Ok(CostReport::assemble(terms, weights, n))
}

/// `Tr(X_S M)` for every mask, with `M` given column-major.
pub(crate) fn flipped_trace(m: &[C64], d: usize, mask: usize) -> C64 {
    (0..d).fold(C64::new(0.0, 0.0), |acc, i| acc + m[i * d + (i ^ mask)])
}

pub(crate) fn unitary_flip_terms(m: &[C64], n: usize, k: usize) -> Vec<f64> {
    let d = 1usize << n;
    let d2 = (d * d) as f64;
    let mut terms = Vec::with_capacity(k + 1);
    terms.push(flipped_trace(m, d, 0).norm_sqr() / d2);
    for order in 1..=k {
        terms.push(
            flip_masks(n, order)
                .map(|mask| flipped_trace(m, d, mask).norm_sqr() / d2)
                .sum(),
        );
    }
    terms
}

/// `1 − (1/d²)[|Tr(V†U)|² + Σ_m α_m Σ_{|S|=m} |Tr(X_S V†U)|²]`.
pub fn unitary_local_cost(
    v: &DenseUnitary,
    u: &DenseUnitary,
    weights: &FlipWeights,
) -> Result<CostReport> {
    unitary_local_cost_with_budget(v, u, weights, DEFAULT_TERM_BUDGET)
}

pub fn unitary_local_cost_with_budget(
    v: &DenseUnitary,
    u: &DenseUnitary,
    weights: &FlipWeights,
    budget: u128,
) -> Result<CostReport> {
    if v.dim() != u.dim() {
        return Err(AqcError::Shape(format!("dimension {} vs {}", v.dim(), u.dim())));
    }
    let n = v.n_qubits();
    weights.validate_for(n)?;
    check_term_budget(n, weights.k, budget)?;
    let m = v.matrix().adjoint() * u.matrix();
    let terms = unitary_flip_terms(m.as_slice(), n, weights.k);
    Ok(CostReport::assemble(terms, weights, n))
}

/// Weights `α_1..α_k` under which the truncated cost of the product-`Rx`
/// ansatz collapses to `1 − C(n,k)⁻¹ Σ_{|T|=k} Π_{j∉T} cos²(θ_j/2)`.
///
/// Expanding each flip term `Π_{S} sin² Π_{∉S} cos²` with `sin² = 1 − cos²`
/// makes the coefficient of every monomial missing `r < k` cosines equal to
/// `Σ_{m=r}^{k} (−1)^{m−r} C(n−r, m−r) α_m` (with `α_0 = 1`). Setting those
/// `k` coefficients to zero gives the linear system solved here.
pub fn solve_alpha_system(n: usize, k: usize) -> Result<FlipWeights> {
    if k == 0 || k + 1 > n {
        return Err(AqcError::Truncation { k, n });
    }
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for r in 0..k {
        // constant from α_0 only enters the r = 0 row
        if r == 0 {
            b[0] = -1.0;
        }
        for m in r.max(1)..=k {
            let sign = if (m - r) % 2 == 0 { 1.0 } else { -1.0 };
            a[(r, m - 1)] = sign * binomial(n - r, m - r) as f64;
        }
    }
    let alphas = a
        .lu()
        .solve(&b)
        .ok_or_else(|| AqcError::Solver(format!("singular weight system for n={n}, k={k}")))?;
    FlipWeights::new(alphas.iter().copied().collect())
}

/// Surrogate bookkeeping threaded between optimizer iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateState {
    /// `β_0..β_n`; `β_0` pairs with `|0⟩`, `β_j` with `X_{j−1}|0⟩`.
    pub betas: Vec<C64>,
    /// Leading basis state: 0 for `|0⟩`, `j ≥ 1` for qubit `j − 1` flipped.
    pub leader: Option<usize>,
    pub hysteresis: f64,
}

impl Default for SurrogateState {
    fn default() -> Self {
        Self {
            betas: Vec::new(),
            leader: None,
            hysteresis: DEFAULT_HYSTERESIS,
        }
    }
}

/// Basis index of surrogate slot `j` (0 = no flip).
pub fn surrogate_index(j: usize) -> usize {
    if j == 0 {
        0
    } else {
        1 << (j - 1)
    }
}

/// `y_0 = ⟨0|φ⟩, y_j = ⟨0|X_{j−1}|φ⟩`.
pub(crate) fn surrogate_projections(phi: &[C64], n: usize) -> Vec<C64> {
    (0..=n).map(|j| phi[surrogate_index(j)]).collect()
}

/// Leader after hysteresis: the incumbent is kept unless its projection is
/// more than `hysteresis` (relative) below the best one. Ties go to the
/// lowest index.
pub fn select_leader(incumbent: Option<usize>, projections: &[f64], hysteresis: f64) -> usize {
    let best = projections
        .iter()
        .enumerate()
        .fold(0, |b, (j, &p)| if p > projections[b] { j } else { b });
    match incumbent {
        Some(inc) if inc < projections.len() => {
            if projections[inc] < (1.0 - hysteresis) * projections[best] {
                best
            } else {
                inc
            }
        }
        _ => best,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AqcError::Input(format!("surrogate weight {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `1 − (1−α)|y_0|² − α|Σ_j β_j* y_j|²` for fixed `β`.
pub(crate) fn composite_objective(phi: &[C64], n: usize, alpha: f64, betas: &[C64]) -> f64 {
    let y = surrogate_projections(phi, n);
    let proj: C64 = betas.iter().zip(&y).map(|(b, y)| b.conj() * y).sum();
    1.0 - (1.0 - alpha) * y[0].norm_sqr() - alpha * proj.norm_sqr()
}

/// `1 − (1−α)|y_0|² − α|y_leader|²`.
pub(crate) fn max_objective(phi: &[C64], alpha: f64, leader: usize) -> f64 {
    1.0 - (1.0 - alpha) * phi[0].norm_sqr() - alpha * phi[surrogate_index(leader)].norm_sqr()
}

/// Normalized `β ∝ y`, the maximizer of `|Σ β_j* y_j|²` on the unit sphere.
pub(crate) fn optimal_betas(phi: &[C64], n: usize) -> Result<Vec<C64>> {
    let y = surrogate_projections(phi, n);
    let norm = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm < DEGENERATE_PROJECTION {
        return Err(AqcError::DegenerateSurrogate);
    }
    Ok(y.into_iter().map(|v| v / norm).collect())
}

/// Refreshes `β` at the current circuit and evaluates the composite surrogate.
pub fn surrogate_composite_cost(
    circuit: &BoundCircuit,
    target: &StateVector,
    alpha: f64,
    prior: &SurrogateState,
) -> Result<(f64, SurrogateState)> {
    check_alpha(alpha)?;
    let n = circuit.n_qubits;
    let phi = pull_back(circuit, target)?;
    let betas = optimal_betas(phi.amplitudes(), n)?;
    let cost = composite_objective(phi.amplitudes(), n, alpha, &betas);
    Ok((
        cost,
        SurrogateState {
            betas,
            leader: prior.leader,
            hysteresis: prior.hysteresis,
        },
    ))
}

/// Updates the leader under hysteresis and evaluates the max surrogate.
pub fn surrogate_max_cost(
    circuit: &BoundCircuit,
    target: &StateVector,
    alpha: f64,
    prior: &SurrogateState,
) -> Result<(f64, SurrogateState)> {
    check_alpha(alpha)?;
    let n = circuit.n_qubits;
    let phi = pull_back(circuit, target)?;
    let (leader, cost) = refresh_leader(phi.amplitudes(), n, alpha, prior)?;
    Ok((
        cost,
        SurrogateState {
            betas: prior.betas.clone(),
            leader: Some(leader),
            hysteresis: prior.hysteresis,
        },
    ))
}

pub(crate) fn refresh_leader(
    phi: &[C64],
    n: usize,
    alpha: f64,
    prior: &SurrogateState,
) -> Result<(usize, f64)> {
    let mags: Vec<f64> = surrogate_projections(phi, n).iter().map(|y| y.norm()).collect();
    if mags.iter().all(|&m| m < DEGENERATE_PROJECTION) {
        return Err(AqcError::DegenerateSurrogate);
    }
    let leader = select_leader(prior.leader, &mags, prior.hysteresis);
    Ok((leader, max_objective(phi, alpha, leader)))
}

/// A cost with any per-iteration state (surrogate β, leader) frozen.
#[derive(Clone, Debug, PartialEq)]
pub enum CostSpec {
    StateGlobal,
    StateLocal(FlipWeights),
    SurrogateComposite { alpha: f64, betas: Vec<C64> },
    SurrogateMax { alpha: f64, leader: usize },
    Frobenius,
    HilbertSchmidt,
    UnitaryLocal(FlipWeights),
}

impl CostSpec {
    pub fn needs_unitary_target(&self) -> bool {
        matches!(
            self,
            CostSpec::Frobenius | CostSpec::HilbertSchmidt | CostSpec::UnitaryLocal(_)
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub enum TargetRef<'a> {
    State(&'a StateVector),
    Unitary(&'a DenseUnitary),
}

impl TargetRef<'_> {
    pub fn n_qubits(&self) -> usize {
        match self {
            TargetRef::State(s) => s.n_qubits(),
            TargetRef::Unitary(u) => u.n_qubits(),
        }
    }
}

pub(crate) fn check_pairing(spec: &CostSpec, target: TargetRef<'_>, n: usize) -> Result<()> {
    let unitary = matches!(target, TargetRef::Unitary(_));
    if spec.needs_unitary_target() != unitary {
        return Err(AqcError::Capability(format!(
            "{spec:?} cannot be evaluated against a {} target",
            if unitary { "unitary" } else { "state" }
        )));
    }
    if target.n_qubits() != n {
        return Err(AqcError::Shape(format!(
            "{n}-qubit circuit vs {}-qubit target",
            target.n_qubits()
        )));
    }
    match spec {
        CostSpec::StateLocal(w) | CostSpec::UnitaryLocal(w) => {
            w.validate_for(n)?;
            check_term_budget(n, w.k, DEFAULT_TERM_BUDGET)
        }
        CostSpec::SurrogateComposite { alpha, betas } => {
            check_alpha(*alpha)?;
            if betas.len() != n + 1 {
                return Err(AqcError::Shape(format!(
                    "{} surrogate coefficients for {n} qubits",
                    betas.len()
                )));
            }
            Ok(())
        }
        CostSpec::SurrogateMax { alpha, leader } => {
            check_alpha(*alpha)?;
            if *leader > n {
                return Err(AqcError::Input(format!("leader {leader} out of range")));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Evaluates a frozen cost by direct simulation (no gradient machinery).
pub fn evaluate_cost(
    spec: &CostSpec,
    circuit: &ParamCircuit,
    angles: &Angles,
    target: TargetRef<'_>,
) -> Result<f64> {
    let n = circuit.n_qubits();
    check_pairing(spec, target, n)?;
    let bound = circuit.bind(angles)?;
    match (spec, target) {
        (CostSpec::StateGlobal, TargetRef::State(t)) => state_global_cost(&bound, t),
        (CostSpec::StateLocal(w), TargetRef::State(t)) => {
            Ok(state_local_cost(&bound, t, w)?.value)
        }
        (CostSpec::SurrogateComposite { alpha, betas }, TargetRef::State(t)) => {
            let phi = pull_back(&bound, t)?;
            Ok(composite_objective(phi.amplitudes(), n, *alpha, betas))
        }
        (CostSpec::SurrogateMax { alpha, leader }, TargetRef::State(t)) => {
            let phi = pull_back(&bound, t)?;
            Ok(max_objective(phi.amplitudes(), *alpha, *leader))
        }
        (CostSpec::Frobenius, TargetRef::Unitary(u)) => frobenius_cost(&circuit_unitary(&bound)?, u),
        (CostSpec::HilbertSchmidt, TargetRef::Unitary(u)) => hs_cost(&circuit_unitary(&bound)?, u),
        (CostSpec::UnitaryLocal(w), TargetRef::Unitary(u)) => {
            Ok(unitary_local_cost(&circuit_unitary(&bound)?, u, w)?.value)
        }
        _ => unreachable!("pairing checked above"),
    }
}
