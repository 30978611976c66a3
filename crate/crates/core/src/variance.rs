//! Monte-Carlo estimates of gradient variance for the product-`Rx` ansatz.
//!
//! Samples are split into fixed blocks, each with its own generator stream,
//! so the table is identical for any thread count. Block statistics are
//! merged in block order; the standard error comes from the delete-one-block
//! jackknife.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{AngleSource, Angles, Axis, Gate, ParamCircuit};
use crate::cost::{solve_alpha_system, CostSpec, FlipWeights, TargetRef};
use crate::error::{AqcError, Result};
use crate::gradient::adjoint_gradient;
use crate::state::{StateVector, MAX_STATE_QUBITS};

pub const DEFAULT_BLOCKS: usize = 100;

/// `⊗_j exp(−iθ_j X/2)`.
pub fn product_ansatz(n: usize) -> Result<ParamCircuit> {
    if n == 0 {
        return Err(AqcError::Input("product ansatz needs at least one qubit".into()));
    }
    let gates = (0..n)
        .map(|q| Gate::rotation(Axis::X, q, AngleSource::Slot(q)))
        .collect();
    ParamCircuit::new(n, gates, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VarianceCost {
    Global,
    /// All orders with the `(n − m)/n` weights.
    FullLocal,
    /// Orders up to `k` with weights from [`solve_alpha_system`].
    Truncated { k: usize },
    /// Orders up to `alphas.len()` with fixed weights.
    Explicit { alphas: Vec<f64> },
}

impl VarianceCost {
    pub fn label(&self) -> &'static str {
        match self {
            VarianceCost::Global => "global",
            VarianceCost::FullLocal => "full_local",
            VarianceCost::Truncated { .. } => "truncated",
            VarianceCost::Explicit { .. } => "explicit",
        }
    }

    pub fn k(&self, n: usize) -> usize {
        match self {
            VarianceCost::Global => 0,
            VarianceCost::FullLocal => n - 1,
            VarianceCost::Truncated { k } => *k,
            VarianceCost::Explicit { alphas } => alphas.len(),
        }
    }

    pub fn spec(&self, n: usize) -> Result<CostSpec> {
        let incompatible = |e: AqcError| AqcError::Config(format!("{} cost at n={n}: {e}", self.label()));
        Ok(match self {
            VarianceCost::Global => CostSpec::StateGlobal,
            VarianceCost::FullLocal => CostSpec::StateLocal(FlipWeights::full_local(n)),
            VarianceCost::Truncated { k } => {
                CostSpec::StateLocal(solve_alpha_system(n, *k).map_err(incompatible)?)
            }
            VarianceCost::Explicit { alphas } => {
                let w = FlipWeights::new(alphas.clone())?;
                w.validate_for(n).map_err(incompatible)?;
                CostSpec::StateLocal(w)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceScan {
    pub n_range: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub cost: VarianceCost,
    /// Which `∂C/∂θ_j` to sample.
    pub component: usize,
    pub blocks: usize,
}

impl VarianceScan {
    pub fn validate(&self) -> Result<()> {
        if self.n_range.is_empty() {
            return Err(AqcError::Config("variance scan has no qubit counts".into()));
        }
        if self.blocks < 2 || self.samples < 2 * self.blocks {
            return Err(AqcError::Config(format!(
                "need at least two samples in each of {} blocks, got {} samples",
                self.blocks, self.samples
            )));
        }
        for &n in &self.n_range {
            if n == 0 || n > MAX_STATE_QUBITS {
                return Err(AqcError::Config(format!("qubit count {n} out of range")));
            }
            if self.component >= n {
                return Err(AqcError::Config(format!(
                    "component {} does not exist at n={n}",
                    self.component
                )));
            }
            self.cost.spec(n)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub n: usize,
    pub cost_kind: String,
    pub k: usize,
    pub samples: usize,
    pub mean: f64,
    pub mean_stderr: f64,
    pub variance: f64,
    pub stderr: f64,
    pub seed: u64,
}

/// Streaming count, mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Pairwise merge.
    pub fn merge(&self, other: &Welford) -> Welford {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        Welford {
            count,
            mean: self.mean + delta * nb / count as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / count as f64,
        }
    }

    pub fn variance(&self) -> f64 {
        self.m2 / (self.count as f64 - 1.0)
    }
}

fn block_rng(seed: u64, n: usize, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | block as u64);
    rng
}

fn sample_block(
    circuit: &ParamCircuit,
    spec: &CostSpec,
    target: &StateVector,
    component: usize,
    count: usize,
    mut rng: ChaCha8Rng,
) -> Result<Welford> {
    let n = circuit.n_params();
    let mut acc = Welford::default();
    let mut angles = Angles::zeros(n);
    for _ in 0..count {
        for a in angles.0.iter_mut() {
            *a = rng.random_range(0.0..TAU);
        }
        let g = adjoint_gradient(spec, circuit, &angles, TargetRef::State(target))?;
        acc.push(g.gradient[component]);
    }
    Ok(acc)
}

fn merge_all<'a>(blocks: impl Iterator<Item = &'a Welford>) -> Welford {
    blocks.fold(Welford::default(), |acc, b| acc.merge(b))
}

/// Jackknife standard errors `(SE[mean], SE[variance])` from per-block stats.
pub fn jackknife(blocks: &[Welford]) -> (f64, f64) {
    let b = blocks.len();
    let loo: Vec<Welford> = (0..b)
        .map(|skip| {
            merge_all(
                blocks
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, w)| w),
            )
        })
        .collect();
    let se = |vals: Vec<f64>| {
        let m = vals.iter().sum::<f64>() / b as f64;
        let ss: f64 = vals.iter().map(|v| (v - m) * (v - m)).sum();
        ((b as f64 - 1.0) / b as f64 * ss).sqrt()
    };
    (
        se(loo.iter().map(|w| w.mean).collect()),
        se(loo.iter().map(|w| w.variance()).collect()),
    )
}

/// Sample variance of `∂C/∂θ_j` at each `n`, target `|0…0⟩`.
pub fn estimate_gradient_variance(scan: &VarianceScan) -> Result<Vec<VariancePoint>> {
    scan.validate()?;
    let mut table = Vec::with_capacity(scan.n_range.len());
    for &n in &scan.n_range {
        let circuit = product_ansatz(n)?;
        let spec = scan.cost.spec(n)?;
        let target = StateVector::zero(n);
        let per = scan.samples / scan.blocks;
        let extra = scan.samples % scan.blocks;
        let blocks: Vec<Welford> = (0..scan.blocks)
            .into_par_iter()
            .map(|b| {
                let count = per + usize::from(b < extra);
                sample_block(
                    &circuit,
                    &spec,
                    &target,
                    scan.component,
                    count,
                    block_rng(scan.seed, n, b),
                )
            })
            .collect::<Result<_>>()?;
        let total = merge_all(blocks.iter());
        let (mean_stderr, stderr) = jackknife(&blocks);
        table.push(VariancePoint {
            n,
            cost_kind: scan.cost.label().to_string(),
            k: scan.cost.k(n),
            samples: scan.samples,
            mean: total.mean,
            mean_stderr,
            variance: total.variance(),
            stderr,
            seed: scan.seed,
        });
    }
    Ok(table)
}

/// Least-squares line through `(x, ln y)`: returns `(slope, intercept)`.
pub fn fit_log_linear(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(AqcError::Input("log fit needs at least two matching points".into()));
    }
    if ys.iter().any(|&y| !(y > 0.0)) {
        return Err(AqcError::Input("log fit needs positive values".into()));
    }
    let m = xs.len() as f64;
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::binomial;

    /// Exact variance of `∂C/∂θ_0` for the truncated cost at order `k`:
    /// `∂C/∂θ_0 = (sin θ_0 / 2) C(n−1,k)/C(n,k) · (avg over |T|=k, T ⊆ others
    /// of Π_{j∉T} c_j)`, with `E[c²] = 3/8`, `E[c] = 1/2`, `E[sin²] = 1/2`.
    fn exact_truncated(n: usize, k: usize) -> f64 {
        let m = n - 1;
        let subsets: Vec<usize> = (0usize..1 << m).filter(|s| s.count_ones() as usize == k).collect();
        let mut total = 0.0;
        for &a in &subsets {
            for &b in &subsets {
                let union = (a | b).count_ones() as i32;
                let sym = (a ^ b).count_ones() as i32;
                total += 0.375f64.powi(m as i32 - union) * 0.5f64.powi(sym);
            }
        }
        0.125 * total / (binomial(n, k) as f64).powi(2)
    }

    fn scan(n_range: Vec<usize>, samples: usize, cost: VarianceCost) -> VarianceScan {
        VarianceScan {
            n_range,
            samples,
            seed: 2024,
            cost,
            component: 0,
            blocks: DEFAULT_BLOCKS,
        }
    }

    #[test]
    fn product_ansatz_structure() {
        let c = product_ansatz(3).unwrap();
        assert_eq!(c.n_params(), 3);
        assert_eq!(c.cnot_count(), 0);
        assert!(product_ansatz(0).is_err());
    }

    #[test]
    fn exact_oracle_limits() {
        // k = 0 reduces to (1/8)(3/8)^{n−1}
        assert!((exact_truncated(6, 0) - 0.125 * 0.375f64.powi(5)).abs() < 1e-18);
    }

    #[test]
    fn welford_merge_matches_direct() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut all = Welford::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..17].iter().for_each(|&x| a.push(x));
        xs[17..].iter().for_each(|&x| b.push(x));
        let m = a.merge(&b);
        assert!((m.mean - all.mean).abs() < 1e-14);
        assert!((m.variance() - all.variance()).abs() < 1e-13);
    }

    #[test]
    fn global_variance_matches_closed_form() {
        let t = estimate_gradient_variance(&scan(vec![3, 6], 20_000, VarianceCost::Global)).unwrap();
        for p in &t {
            let expected = 0.125 * 0.375f64.powi(p.n as i32 - 1);
            assert!((p.variance - expected).abs() < 3.0 * p.stderr, "{p:?} vs {expected}");
            assert!(p.mean.abs() < 3.0 * p.mean_stderr);
        }
    }

    #[test]
    fn truncated_variance_matches_exact_oracle() {
        let t = estimate_gradient_variance(&scan(vec![4, 5], 20_000, VarianceCost::Truncated { k: 1 }))
            .unwrap();
        for p in &t {
            let expected = exact_truncated(p.n, 1);
            assert!((p.variance - expected).abs() < 3.0 * p.stderr, "{p:?} vs {expected}");
        }
    }

    #[test]
    fn full_local_variance() {
        let t = estimate_gradient_variance(&scan(vec![4], 20_000, VarianceCost::FullLocal)).unwrap();
        let expected = 1.0 / (8.0 * 16.0);
        assert!((t[0].variance - expected).abs() < 3.0 * t[0].stderr);
        assert_eq!(t[0].k, 3);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let s = scan(vec![3, 4], 2_000, VarianceCost::Truncated { k: 1 });
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| estimate_gradient_variance(&s)).unwrap();
        let b = four.install(|| estimate_gradient_variance(&s)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn incompatible_weights_are_config_errors() {
        let s = scan(vec![2, 3], 1_000, VarianceCost::Truncated { k: 2 });
        assert!(matches!(estimate_gradient_variance(&s), Err(AqcError::Config(_))));
        let mut s = scan(vec![3], 1_000, VarianceCost::Global);
        s.component = 3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn log_fit_recovers_exponential() {
        let xs: Vec<f64> = (2..9).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 * (-0.7 * x).exp()).collect();
        let (s, i) = fit_log_linear(&xs, &ys).unwrap();
        assert!((s + 0.7).abs() < 1e-12);
        assert!((i - 0.3f64.ln()).abs() < 1e-12);
    }
}
