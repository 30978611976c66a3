//! State vectors and the in-place gate kernels.
//!
//! Qubit `q` is bit `q` of the computational-basis index (little-endian), so
//! `|q1=0, q0=1⟩` lives at index 1. Kernels parallelize over amplitude strides
//! for wide registers; every reduction goes through [`pairwise_sum`] with fixed
//! split points, so results do not depend on the thread count.

use std::io::{Read, Write};
use std::ops::{Add, Range};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::circuit::{Axis, BoundCircuit, BoundGate};
use crate::error::{AqcError, Result};

pub type C64 = Complex64;

/// Registers at least this wide use the parallel kernels.
pub const PARALLEL_MIN_QUBITS: usize = 14;
/// Largest register the state-vector paths accept (2^30 amplitudes = 16 GiB).
pub const MAX_STATE_QUBITS: usize = 30;

const SUM_LEAF: usize = 256;
const SUM_PAR_LEN: usize = 1 << 14;

/// Tree summation of `f(i)` over `range` with data-independent split points.
pub fn pairwise_sum<T, F>(range: Range<usize>, f: &F) -> T
where
    T: Add<Output = T> + Default + Send,
    F: Fn(usize) -> T + Sync,
{
    let len = range.end - range.start;
    if len <= SUM_LEAF {
        return range.fold(T::default(), |acc, i| acc + f(i));
    }
    let mid = range.start + len / 2;
    let (lo, hi) = if len >= SUM_PAR_LEN {
        rayon::join(|| pairwise_sum(range.start..mid, f), || pairwise_sum(mid..range.end, f))
    } else {
        (pairwise_sum(range.start..mid, f), pairwise_sum(mid..range.end, f))
    };
    lo + hi
}

/// 2×2 matrix of `exp(-i θ σ_axis / 2)`, row-major.
pub fn rotation_matrix(axis: Axis, angle: f64) -> [[C64; 2]; 2] {
    let (s, c) = (angle / 2.0).sin_cos();
    let zero = C64::new(0.0, 0.0);
    match axis {
        Axis::X => [[C64::new(c, 0.0), C64::new(0.0, -s)], [C64::new(0.0, -s), C64::new(c, 0.0)]],
        Axis::Y => [[C64::new(c, 0.0), C64::new(-s, 0.0)], [C64::new(s, 0.0), C64::new(c, 0.0)]],
        Axis::Z => [[C64::new(c, -s), zero], [zero, C64::new(c, s)]],
    }
}

fn for_each_pair<F>(amps: &mut [C64], qubit: usize, f: F)
where
    F: Fn(&mut C64, &mut C64) + Sync,
{
    let stride = 1usize << qubit;
    let parallel = amps.len() >= 1 << PARALLEL_MIN_QUBITS;
    let chunk = |c: &mut [C64]| {
        let (lo, hi) = c.split_at_mut(stride);
        lo.iter_mut().zip(hi.iter_mut()).for_each(|(a, b)| f(a, b));
    };
    if !parallel {
        amps.chunks_mut(2 * stride).for_each(chunk);
    } else if amps.len() / (2 * stride) >= 64 {
        amps.par_chunks_mut(2 * stride).for_each(chunk);
    } else {
        for c in amps.chunks_mut(2 * stride) {
            let (lo, hi) = c.split_at_mut(stride);
            lo.par_iter_mut()
                .zip(hi.par_iter_mut())
                .for_each(|(a, b)| f(a, b));
        }
    }
}

pub(crate) fn apply_rotation_raw(amps: &mut [C64], axis: Axis, qubit: usize, angle: f64) {
    let m = rotation_matrix(axis, angle);
    match axis {
        Axis::Z => {
            let (d0, d1) = (m[0][0], m[1][1]);
            for_each_pair(amps, qubit, |a, b| {
                *a *= d0;
                *b *= d1;
            });
        }
        _ => for_each_pair(amps, qubit, |a, b| {
            let (x, y) = (*a, *b);
            *a = m[0][0] * x + m[0][1] * y;
            *b = m[1][0] * x + m[1][1] * y;
        }),
    }
}

pub(crate) fn apply_cnot_raw(amps: &mut [C64], control: usize, target: usize) {
    let tstride = 1usize << target;
    let cbit = 1usize << control;
    let body = |(ci, c): (usize, &mut [C64])| {
        let base = ci * 2 * tstride;
        let (lo, hi) = c.split_at_mut(tstride);
        for (off, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
            if (base + off) & cbit != 0 {
                std::mem::swap(a, b);
            }
        }
    };
    if amps.len() >= 1 << PARALLEL_MIN_QUBITS {
        amps.par_chunks_mut(2 * tstride).enumerate().for_each(body);
    } else {
        amps.chunks_mut(2 * tstride).enumerate().for_each(body);
    }
}

pub(crate) fn apply_bound_gate_raw(amps: &mut [C64], gate: &BoundGate) {
    match *gate {
        BoundGate::Rotation {
            axis, qubit, angle, ..
        } => apply_rotation_raw(amps, axis, qubit, angle),
        BoundGate::Cnot { control, target } => apply_cnot_raw(amps, control, target),
    }
}

/// Moves the amplitude at index `i` to `i ^ mask`.
pub(crate) fn apply_x_mask_raw(amps: &mut [C64], mask: usize) {
    if mask == 0 {
        return;
    }
    // Pair (i, i ^ mask) is visited once, from the side whose highest mask bit is clear.
    let top = 1usize << (usize::BITS - 1 - mask.leading_zeros());
    for i in 0..amps.len() {
        if i & top == 0 {
            amps.swap(i, i ^ mask);
        }
    }
}

/// `⟨bra|σ_axis(qubit)|ket⟩` without materializing `σ|ket⟩`.
pub(crate) fn pauli_expectation_raw(bra: &[C64], ket: &[C64], axis: Axis, qubit: usize) -> C64 {
    let bit = 1usize << qubit;
    let i_unit = C64::new(0.0, 1.0);
    match axis {
        Axis::X => pairwise_sum(0..ket.len(), &|i| bra[i].conj() * ket[i ^ bit]),
        Axis::Y => pairwise_sum(0..ket.len(), &|i| {
            // (σy ψ)_i = -i ψ_{i|bit} when bit clear, +i ψ_{i&!bit} when set.
            let v = if i & bit == 0 {
                -i_unit * ket[i | bit]
            } else {
                i_unit * ket[i & !bit]
            };
            bra[i].conj() * v
        }),
        Axis::Z => pairwise_sum(0..ket.len(), &|i| {
            let v = bra[i].conj() * ket[i];
            if i & bit == 0 {
                v
            } else {
                -v
            }
        }),
    }
}

pub(crate) fn inner_raw(bra: &[C64], ket: &[C64]) -> C64 {
    pairwise_sum(0..ket.len(), &|i| bra[i].conj() * ket[i])
}

pub(crate) fn check_qubit(qubit: usize, n_qubits: usize) -> Result<()> {
    if qubit >= n_qubits {
        Err(AqcError::QubitIndex { qubit, n_qubits })
    } else {
        Ok(())
    }
}

pub(crate) fn check_gate(gate: &BoundGate, n_qubits: usize) -> Result<()> {
    match *gate {
        BoundGate::Rotation { qubit, angle, .. } => {
            check_qubit(qubit, n_qubits)?;
            if !angle.is_finite() {
                return Err(AqcError::Input("non-finite rotation angle".into()));
            }
            Ok(())
        }
        BoundGate::Cnot { control, target } => {
            check_qubit(control, n_qubits)?;
            check_qubit(target, n_qubits)?;
            if control == target {
                return Err(AqcError::InvalidCircuit("CNOT control equals target".into()));
            }
            Ok(())
        }
    }
}

pub(crate) fn check_circuit(circuit: &BoundCircuit, n_qubits: usize) -> Result<()> {
    if circuit.n_qubits != n_qubits {
        return Err(AqcError::Shape(format!(
            "{}-qubit circuit applied to {}-qubit state",
            circuit.n_qubits, n_qubits
        )));
    }
    circuit.gates.iter().try_for_each(|g| check_gate(g, n_qubits))
}

/// `2^n` complex amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// `|0…0⟩`.
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        assert!(n_qubits <= MAX_STATE_QUBITS, "register too wide");
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        amps[index] = C64::new(1.0, 0.0);
        Self { n_qubits, amps }
    }

    /// Wraps raw amplitudes; the length must be a power of two. Normalization
    /// is not enforced here.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(AqcError::Shape(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        Ok(Self {
            n_qubits: len.trailing_zeros() as usize,
            amps,
        })
    }

    /// Haar-random pure state (normalized complex Gaussian vector).
    pub fn random<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Self {
        let amps = (0..1usize << n_qubits)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let mut s = Self { n_qubits, amps };
        s.normalize();
        s
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        pairwise_sum(0..self.amps.len(), &|i| self.amps[i].norm_sqr())
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        self.amps.iter_mut().for_each(|a| *a /= n);
    }

    pub fn apply_gate(&mut self, gate: &BoundGate) -> Result<()> {
        check_gate(gate, self.n_qubits)?;
        apply_bound_gate_raw(&mut self.amps, gate);
        Ok(())
    }

    /// Applies the gates in list order.
    pub fn apply_circuit(&mut self, circuit: &BoundCircuit) -> Result<()> {
        check_circuit(circuit, self.n_qubits)?;
        for g in &circuit.gates {
            apply_bound_gate_raw(&mut self.amps, g);
        }
        Ok(())
    }

    /// Applies `Π_{q∈S} X_q`; duplicates in `qubits` cancel pairwise.
    pub fn apply_pauli_x_set(&mut self, qubits: &[usize]) -> Result<()> {
        let mut mask = 0usize;
        for &q in qubits {
            check_qubit(q, self.n_qubits)?;
            mask ^= 1 << q;
        }
        apply_x_mask_raw(&mut self.amps, mask);
        Ok(())
    }

    pub fn apply_x_mask(&mut self, mask: usize) -> Result<()> {
        if mask >> self.n_qubits != 0 {
            return Err(AqcError::QubitIndex {
                qubit: (usize::BITS - 1 - mask.leading_zeros()) as usize,
                n_qubits: self.n_qubits,
            });
        }
        apply_x_mask_raw(&mut self.amps, mask);
        Ok(())
    }

    /// Binary dump: u64 LE qubit count, then `2^n` (re, im) f64 LE pairs.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.n_qubits as u64).to_le_bytes())?;
        write_complex(&mut w, &self.amps)
    }

    pub fn read_dump<R: Read>(mut r: R) -> std::io::Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        let n = u64::from_le_bytes(head) as usize;
        if n == 0 || n > MAX_STATE_QUBITS {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("qubit count {n} out of range"),
            ));
        }
        let amps = read_complex(&mut r, 1 << n)?;
        Ok(Self { n_qubits: n, amps })
    }
}

pub(crate) fn write_complex<W: Write>(w: &mut W, data: &[C64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(16 * data.len());
    for a in data {
        buf.extend_from_slice(&a.re.to_le_bytes());
        buf.extend_from_slice(&a.im.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_complex<R: Read>(r: &mut R, count: usize) -> std::io::Result<Vec<C64>> {
    let mut buf = vec![0u8; 16 * count];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            C64::new(re, im)
        })
        .collect())
}

pub fn apply_gate(state: &mut StateVector, gate: &BoundGate) -> Result<()> {
    state.apply_gate(gate)
}

pub fn apply_circuit(state: &mut StateVector, circuit: &BoundCircuit) -> Result<()> {
    state.apply_circuit(circuit)
}

pub fn apply_pauli_x_set(state: &mut StateVector, qubits: &[usize]) -> Result<()> {
    state.apply_pauli_x_set(qubits)
}

/// `Σ conj(bra_i) · ket_i`.
pub fn overlap(bra: &StateVector, ket: &StateVector) -> Result<C64> {
    if bra.dim() != ket.dim() {
        return Err(AqcError::Shape(format!(
            "overlap of {}- and {}-amplitude states",
            bra.dim(),
            ket.dim()
        )));
    }
    Ok(inner_raw(&bra.amps, &ket.amps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn rot(axis: Axis, qubit: usize, angle: f64) -> BoundGate {
        BoundGate::Rotation {
            axis,
            qubit,
            angle,
            slot: None,
        }
    }

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn cnot_adds_control_into_target() {
        let mut s = StateVector::basis(2, 1);
        s.apply_gate(&BoundGate::Cnot {
            control: 0,
            target: 1,
        })
        .unwrap();
        assert_eq!(s, StateVector::basis(2, 3));
        // control clear: untouched
        let mut s = StateVector::basis(2, 2);
        s.apply_gate(&BoundGate::Cnot {
            control: 0,
            target: 1,
        })
        .unwrap();
        assert_eq!(s, StateVector::basis(2, 2));
    }

    #[test]
    fn rz_is_a_phase_on_zero() {
        let theta = 0.83;
        let mut s = StateVector::zero(1);
        s.apply_gate(&rot(Axis::Z, 0, theta)).unwrap();
        assert!(close(s.amplitudes()[0], C64::from_polar(1.0, -theta / 2.0), 1e-15));
        assert_eq!(s.amplitudes()[1], C64::new(0.0, 0.0));
    }

    #[test]
    fn ry_half_pi_makes_plus_state() {
        let mut s = StateVector::zero(1);
        s.apply_gate(&rot(Axis::Y, 0, PI / 2.0)).unwrap();
        assert!(close(s.amplitudes()[0], C64::new(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(close(s.amplitudes()[1], C64::new(FRAC_1_SQRT_2, 0.0), 1e-15));
    }

    #[test]
    fn rz_pi_matrix() {
        let m = rotation_matrix(Axis::Z, PI);
        assert!(close(m[0][0], C64::new(0.0, -1.0), 1e-15));
        assert!(close(m[1][1], C64::new(0.0, 1.0), 1e-15));
    }

    #[test]
    fn gate_index_errors() {
        let mut s = StateVector::zero(2);
        assert!(matches!(
            s.apply_gate(&rot(Axis::X, 2, 0.1)),
            Err(AqcError::QubitIndex { qubit: 2, .. })
        ));
        assert!(s.apply_pauli_x_set(&[5]).is_err());
        assert!(s.apply_circuit(&BoundCircuit::empty(3)).is_err());
    }

    #[test]
    fn empty_circuit_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = StateVector::random(3, &mut rng);
        let mut s = s0.clone();
        s.apply_circuit(&BoundCircuit::empty(3)).unwrap();
        assert_eq!(s, s0);
    }

    #[test]
    fn pauli_x_sets() {
        let mut s = StateVector::zero(2);
        s.apply_pauli_x_set(&[]).unwrap();
        assert_eq!(s, StateVector::zero(2));
        s.apply_pauli_x_set(&[0]).unwrap();
        assert_eq!(s, StateVector::basis(2, 1));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = StateVector::random(4, &mut rng);
        let mut t = r.clone();
        t.apply_pauli_x_set(&[0, 2, 3]).unwrap();
        t.apply_pauli_x_set(&[0, 2, 3]).unwrap();
        assert_eq!(t, r);
    }

    #[test]
    fn overlap_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = StateVector::random(3, &mut rng);
        assert!(close(overlap(&x, &x).unwrap(), C64::new(1.0, 0.0), 1e-14));
        let z = overlap(&StateVector::basis(1, 0), &StateVector::basis(1, 1)).unwrap();
        assert_eq!(z, C64::new(0.0, 0.0));
        assert!(overlap(&StateVector::zero(1), &StateVector::zero(2)).is_err());

        let y = StateVector::random(3, &mut rng);
        let before = overlap(&x, &y).unwrap();
        let (mut xf, mut yf) = (x.clone(), y.clone());
        xf.apply_pauli_x_set(&[1, 2]).unwrap();
        yf.apply_pauli_x_set(&[1, 2]).unwrap();
        assert!(close(overlap(&xf, &yf).unwrap(), before, 1e-15));
    }

    #[test]
    fn pauli_expectation_matches_explicit_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = StateVector::random(3, &mut rng);
        let b = StateVector::random(3, &mut rng);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            for q in 0..3 {
                // σ = i·R(π) for every axis.
                let mut sb = b.clone();
                sb.apply_gate(&rot(axis, q, PI)).unwrap();
                let explicit = C64::new(0.0, 1.0) * overlap(&a, &sb).unwrap();
                let fast = pauli_expectation_raw(a.amplitudes(), b.amplitudes(), axis, q);
                assert!(close(explicit, fast, 1e-14), "{axis:?} q{q}");
            }
        }
    }

    #[test]
    fn dump_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = StateVector::random(3, &mut rng);
        let mut buf = Vec::new();
        s.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 16 * 8);
        assert_eq!(&buf[..8], &3u64.to_le_bytes());
        assert_eq!(StateVector::read_dump(&buf[..]).unwrap(), s);
    }

    #[test]
    fn wide_register_kernels_match_reference_order() {
        // Above the parallel threshold the kernels must give the same bits
        // as a plain sequential pass.
        let n = PARALLEL_MIN_QUBITS;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s0 = StateVector::random(n, &mut rng);
        let gates = [
            rot(Axis::X, 0, 0.3),
            rot(Axis::Y, n - 1, -1.1),
            rot(Axis::Z, 5, 2.0),
            BoundGate::Cnot {
                control: n - 1,
                target: 0,
            },
            BoundGate::Cnot {
                control: 2,
                target: n - 2,
            },
        ];
        let mut fast = s0.clone();
        for g in &gates {
            fast.apply_gate(g).unwrap();
        }
        let mut slow = s0.into_amplitudes();
        for g in &gates {
            match *g {
                BoundGate::Rotation {
                    axis, qubit, angle, ..
                } => {
                    let m = rotation_matrix(axis, angle);
                    let bit = 1 << qubit;
                    for i in 0..slow.len() {
                        if i & bit == 0 {
                            let (x, y) = (slow[i], slow[i | bit]);
                            slow[i] = m[0][0] * x + m[0][1] * y;
                            slow[i | bit] = m[1][0] * x + m[1][1] * y;
                        }
                    }
                }
                BoundGate::Cnot { control, target } => {
                    for i in 0..slow.len() {
                        if i & (1 << control) != 0 && i & (1 << target) == 0 {
                            slow.swap(i, i | (1 << target));
                        }
                    }
                }
            }
        }
        for (a, b) in fast.amplitudes().iter().zip(&slow) {
            assert!(close(*a, *b, 1e-15));
        }
    }
}
