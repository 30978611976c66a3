//! Dense `2^n × 2^n` unitaries for small registers.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::circuit::BoundCircuit;
use crate::error::{AqcError, Result};
use crate::state::{apply_bound_gate_raw, check_circuit, read_complex, write_complex, C64};

/// Default cap on dense matrices: 2^12 × 2^12 complex doubles is 256 MiB.
pub const DENSE_QUBIT_LIMIT: usize = 12;

pub(crate) fn check_dense_limit(what: &'static str, n_qubits: usize, limit: usize) -> Result<()> {
    if n_qubits > limit {
        let d = 1u128 << n_qubits;
        return Err(AqcError::Resource {
            what,
            requested: n_qubits,
            limit,
            required_bytes: d * d * 16,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseUnitary {
    n_qubits: usize,
    m: DMatrix<C64>,
}

impl DenseUnitary {
    pub fn identity(n_qubits: usize) -> Self {
        let d = 1 << n_qubits;
        Self {
            n_qubits,
            m: DMatrix::identity(d, d),
        }
    }

    /// Wraps a square power-of-two matrix; rejects it if `‖U†U − I‖_max ≥ 1e-10`.
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        let u = Self::from_matrix_unchecked(m)?;
        let r = u.unitarity_residual();
        if r >= 1e-10 {
            return Err(AqcError::Input(format!("matrix is not unitary (residual {r:.3e})")));
        }
        Ok(u)
    }

    /// Shape checks only.
    pub fn from_matrix_unchecked(m: DMatrix<C64>) -> Result<Self> {
        let d = m.nrows();
        if d != m.ncols() || d < 2 || !d.is_power_of_two() {
            return Err(AqcError::Shape(format!(
                "{}×{} is not a square power-of-two matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self {
            n_qubits: d.trailing_zeros() as usize,
            m,
        })
    }

    /// Haar-random unitary: QR of a complex Ginibre matrix with the phases of
    /// `diag(R)` pushed back into `Q`.
    pub fn random_haar<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Self {
        let d = 1 << n_qubits;
        let g = DMatrix::from_fn(d, d, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..d {
            let rjj = r[(j, j)];
            let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { C64::new(1.0, 0.0) };
            q.column_mut(j).iter_mut().for_each(|x| *x *= phase);
        }
        Self { n_qubits, m: q }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        Self {
            n_qubits: self.n_qubits,
            m: self.m.adjoint(),
        }
    }

    /// Operator product `self · rhs`.
    pub fn mul(&self, rhs: &DenseUnitary) -> Result<Self> {
        same_dim(self, rhs)?;
        Ok(Self {
            n_qubits: self.n_qubits,
            m: &self.m * &rhs.m,
        })
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            n_qubits: self.n_qubits,
            m: self.m.map(|x| x * factor),
        }
    }

    /// `max |(U†U − I)_ij|`.
    pub fn unitarity_residual(&self) -> f64 {
        let p = self.m.adjoint() * &self.m;
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let e = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                worst = worst.max((p[(i, j)] - e).norm());
            }
        }
        worst
    }

    /// Binary dump: u64 LE dimension `d`, then `d²` row-major (re, im) f64 LE pairs.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        w.write_all(&(d as u64).to_le_bytes())?;
        let row_major: Vec<C64> = (0..d)
            .flat_map(|r| (0..d).map(move |c| (r, c)))
            .map(|(r, c)| self.m[(r, c)])
            .collect();
        write_complex(&mut w, &row_major)
    }

    pub fn read_dump<R: Read>(mut r: R) -> std::io::Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        let d = u64::from_le_bytes(head) as usize;
        if d < 2 || !d.is_power_of_two() || d > 1 << DENSE_QUBIT_LIMIT {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("dimension {d} is not a supported power of two"),
            ));
        }
        let data = read_complex(&mut r, d * d)?;
        Ok(Self {
            n_qubits: d.trailing_zeros() as usize,
            m: DMatrix::from_row_slice(d, d, &data),
        })
    }
}

fn same_dim(a: &DenseUnitary, b: &DenseUnitary) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(AqcError::Shape(format!(
            "dimension {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `Tr(V† U)`.
pub fn trace_vdag_u(v: &DenseUnitary, u: &DenseUnitary) -> Result<C64> {
    same_dim(v, u)?;
    let (vm, um) = (v.matrix(), u.matrix());
    let d = v.dim();
    // Tr(V†U) = Σ_ij conj(V_ij) U_ij, summed column by column.
    let cols: Vec<C64> = (0..d)
        .map(|j| {
            vm.column(j)
                .iter()
                .zip(um.column(j).iter())
                .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
        })
        .collect();
    Ok(crate::state::pairwise_sum(0..d, &|j| cols[j]))
}

/// Applies `circuit` to every column of `m` in place (`m ← C·m`).
pub(crate) fn apply_circuit_to_columns(m: &mut DMatrix<C64>, circuit: &BoundCircuit) {
    let d = m.nrows();
    let cols = m.as_mut_slice();
    let body = |col: &mut [C64]| {
        for g in &circuit.gates {
            apply_bound_gate_raw(col, g);
        }
    };
    if d >= 64 {
        cols.par_chunks_mut(d).for_each(body);
    } else {
        cols.chunks_mut(d).for_each(body);
    }
}

/// Dense matrix of a bound circuit, using the default dense limit.
pub fn circuit_unitary(circuit: &BoundCircuit) -> Result<DenseUnitary> {
    circuit_unitary_with_limit(circuit, DENSE_QUBIT_LIMIT)
}

pub fn circuit_unitary_with_limit(circuit: &BoundCircuit, limit: usize) -> Result<DenseUnitary> {
    check_dense_limit("dense circuit unitary", circuit.n_qubits, limit)?;
    check_circuit(circuit, circuit.n_qubits)?;
    let mut u = DenseUnitary::identity(circuit.n_qubits);
    apply_circuit_to_columns(&mut u.m, circuit);
    Ok(u)
}

/// Phase-aligned max-entry distance: `min_φ max|e^{iφ}V − U|` with `φ`
/// taken from `Tr(V†U)`.
pub fn phase_aligned_distance(u: &DenseUnitary, v: &DenseUnitary) -> Result<f64> {
    let t = trace_vdag_u(v, u)?;
    let phase = if t.norm() > 0.0 { t / t.norm() } else { C64::new(1.0, 0.0) };
    Ok(u.matrix()
        .iter()
        .zip(v.matrix().iter())
        .map(|(a, b)| (b * phase - a).norm())
        .fold(0.0, f64::max))
}

/// Phase-aligned Frobenius distance `‖e^{iφ}V − U‖_F`.
pub fn phase_aligned_frobenius(u: &DenseUnitary, v: &DenseUnitary) -> Result<f64> {
    let t = trace_vdag_u(v, u)?;
    let phase = if t.norm() > 0.0 { t / t.norm() } else { C64::new(1.0, 0.0) };
    Ok(u.matrix()
        .iter()
        .zip(v.matrix().iter())
        .map(|(a, b)| (b * phase - a).norm_sqr())
        .sum::<f64>()
        .sqrt())
}
