//! Experiment configuration: strict TOML with defaults, validation and a
//! content hash.

use std::path::{Path, PathBuf};

use aqc_core::optimizer::{ScheduleMode, TwoStageConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    CompileState,
    CompileUnitary,
    VarianceScan,
    TrotterBenchmark,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::CompileState => "compile-state",
            Mode::CompileUnitary => "compile-unitary",
            Mode::VarianceScan => "variance-scan",
            Mode::TrotterBenchmark => "trotter-benchmark",
        }
    }

    fn is_unitary(self) -> bool {
        matches!(self, Mode::CompileUnitary | Mode::TrotterBenchmark)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnsatzConfig {
    /// Taken from the chain length for Trotter targets when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_qubits: Option<usize>,
    pub layers: usize,
    pub block_reps: usize,
    /// Explicit (control, target) pairs; brick pattern when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<Vec<[usize; 2]>>,
}

impl Default for AnsatzConfig {
    fn default() -> Self {
        Self {
            n_qubits: None,
            layers: 1,
            block_reps: 1,
            connectivity: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompileTo {
    /// Exact `exp(−iHt)`; the Trotter circuit is the baseline.
    #[default]
    Exact,
    /// The Trotter circuit itself; fidelity is still measured against exact evolution.
    Trotter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum TargetConfig {
    /// Same ansatz at uniformly random angles.
    RandomAnsatzState {
        /// Start the optimizer at the generating angles.
        #[serde(default)]
        start_at_target: bool,
    },
    /// Haar-random unitary.
    HaarUnitary,
    /// Binary state or unitary dump.
    File { path: PathBuf },
    Trotter {
        sites: usize,
        dt: f64,
        steps: usize,
        /// Evolution time of the exact reference, `dt·steps` when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time: Option<f64>,
        #[serde(default)]
        compile_to: CompileTo,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// State overlap, or Hilbert–Schmidt for unitaries.
    Global,
    Frobenius,
    /// Truncated bit-flip cost (state or unitary).
    Local,
    SurrogateComposite,
    SurrogateMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsSource {
    /// Solve the cancellation system for the given k.
    Solve,
    /// `α_m = (n − m)/n`.
    Pattern,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub kind: CostKind,
    /// Truncation order for `local`; `n − 1` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub weights: WeightsSource,
    pub schedule: ScheduleMode,
    pub hysteresis: f64,
    /// Also run the pure global cost from the same seed.
    pub twin_global: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            kind: CostKind::Local,
            k: Some(1),
            weights: WeightsSource::Solve,
            schedule: ScheduleMode::Ema,
            hysteresis: 0.1,
            twin_global: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceConfig {
    pub n_range: Vec<usize>,
    pub samples: usize,
    pub blocks: usize,
    pub component: usize,
    /// `global`, `full-local`, or `truncated` (uses `orders`).
    pub costs: Vec<String>,
    pub orders: Vec<usize>,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        Self {
            n_range: (2..=8).collect(),
            samples: 100_000,
            blocks: 100,
            component: 0,
            costs: vec!["global".into(), "full-local".into(), "truncated".into()],
            orders: vec![1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Runs use seeds `seed, seed+1, …`.
    pub seeds: u64,
    /// Truncation orders to compare; 0 is the Hilbert–Schmidt cost.
    pub orders: Vec<usize>,
    /// Step sizes for the Trotter error table.
    pub order_check_dts: Vec<f64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            orders: vec![0, 1, 2],
            order_check_dts: vec![0.4, 0.2, 0.1, 0.05],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Write binary dumps of the target and the compiled result.
    pub dumps: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            checkpoint_every: 0,
            dumps: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    #[serde(default)]
    pub ansatz: AnsatzConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub optimizer: TwoStageConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    /// Register width after resolving Trotter targets.
    pub fn n_qubits(&self) -> Option<usize> {
        match (&self.target, self.ansatz.n_qubits) {
            (_, Some(n)) => Some(n),
            (Some(TargetConfig::Trotter { sites, .. }), None) => Some(*sites),
            _ => None,
        }
    }

    pub fn target(&self) -> TargetConfig {
        self.target.clone().unwrap_or(match self.mode {
            Mode::CompileUnitary => TargetConfig::HaarUnitary,
            _ => TargetConfig::RandomAnsatzState { start_at_target: false },
        })
    }

    /// Effective truncation order for the local cost.
    pub fn k(&self, n: usize) -> usize {
        self.cost.k.unwrap_or(n.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.optimizer
            .validate()
            .map_err(|e| invalid(format!("[optimizer] {e}")))?;
        if self.mode == Mode::VarianceScan {
            let v = self.variance.clone().unwrap_or_default();
            if v.n_range.is_empty() || v.samples == 0 || v.blocks < 2 {
                return Err(invalid("[variance] needs n_range, samples and at least 2 blocks"));
            }
            for c in &v.costs {
                if !matches!(c.as_str(), "global" | "full-local" | "truncated") {
                    return Err(invalid(format!("[variance] unknown cost `{c}`")));
                }
            }
            return Ok(());
        }

        let n = self
            .n_qubits()
            .ok_or_else(|| invalid("[ansatz] n_qubits is required for this target"))?;
        if n == 0 {
            return Err(invalid("[ansatz] n_qubits must be positive"));
        }
        if self.ansatz.layers > 0 && self.ansatz.block_reps == 0 {
            return Err(invalid("[ansatz] block_reps must be positive"));
        }
        let target = self.target();
        match (&target, self.mode.is_unitary()) {
            (TargetConfig::RandomAnsatzState { .. }, true) => {
                return Err(invalid("random-ansatz-state target needs mode compile-state"))
            }
            (TargetConfig::HaarUnitary | TargetConfig::Trotter { .. }, false) => {
                return Err(invalid(format!(
                    "{} target needs a unitary mode",
                    if matches!(target, TargetConfig::HaarUnitary) { "haar-unitary" } else { "trotter" }
                )))
            }
            _ => {}
        }
        if let TargetConfig::Trotter {
            sites,
            dt,
            steps,
            time,
            ..
        } = &target
        {
            if *sites < 2 || *sites != n {
                return Err(invalid(format!(
                    "[target] trotter sites={sites} must be at least 2 and match n_qubits={n}"
                )));
            }
            if !(*dt > 0.0) || *steps == 0 || time.is_some_and(|t| !t.is_finite()) {
                return Err(invalid("[target] trotter needs dt > 0 and steps >= 1"));
            }
        }
        if self.mode == Mode::TrotterBenchmark {
            if !matches!(target, TargetConfig::Trotter { .. }) {
                return Err(invalid("trotter-benchmark needs a trotter target"));
            }
            let b = self.benchmark.clone().unwrap_or_default();
            if b.seeds == 0 || b.orders.is_empty() {
                return Err(invalid("[benchmark] needs seeds >= 1 and at least one order"));
            }
            if let Some(&k) = b.orders.iter().find(|&&k| k > 0 && k + 1 > n) {
                return Err(invalid(format!("[benchmark] order k={k} violates k <= n-1 (n={n})")));
            }
        }

        match self.cost.kind {
            CostKind::Local => {
                let k = self.k(n);
                if k == 0 || k + 1 > n {
                    return Err(invalid(format!(
                        "[cost] truncation order k={k} violates k <= n-1 (n={n})"
                    )));
                }
                if let WeightsSource::Explicit(a) = &self.cost.weights {
                    if a.len() != k {
                        return Err(invalid(format!("[cost] {} explicit weights for k={k}", a.len())));
                    }
                }
            }
            CostKind::Frobenius if !self.mode.is_unitary() => {
                return Err(invalid("[cost] frobenius needs a unitary mode"))
            }
            CostKind::SurrogateComposite | CostKind::SurrogateMax if self.mode.is_unitary() => {
                return Err(invalid("[cost] surrogate costs need mode compile-state"))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.cost.hysteresis) {
            return Err(invalid("[cost] hysteresis must lie in [0, 1)"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, excluding `[output]`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "compile-state"
seed = 7

[ansatz]
n_qubits = 4
"#;

    #[test]
    fn minimal_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.ansatz.layers, 1);
        assert_eq!(c.ansatz.block_reps, 1);
        assert_eq!(c.target(), TargetConfig::RandomAnsatzState { start_at_target: false });
        assert_eq!(c.cost.kind, CostKind::Local);
        assert_eq!(c.k(4), 1);
        assert_eq!(c.cost.schedule, ScheduleMode::Ema);
        assert_eq!(c.optimizer.threshold, 0.9);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\nlayer = 2\n");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&text),
            Err(HarnessError::Parse(_))
        ));
        let text = MINIMAL.replace("n_qubits = 4", "n_qubits = 4\nlayres = 2");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn truncation_bound_named() {
        let text = format!("{MINIMAL}\n[cost]\nk = 4\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("k <= n-1"), "{err}");
    }

    #[test]
    fn trotter_config_accepted() {
        let text = r#"
mode = "compile-unitary"
seed = 1
[ansatz]
layers = 2
block_reps = 3
[target]
kind = "trotter"
sites = 8
dt = 0.2
steps = 2
[cost]
kind = "local"
k = 2
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.n_qubits(), Some(8));
        assert!(matches!(
            c.target(),
            TargetConfig::Trotter {
                compile_to: CompileTo::Exact,
                ..
            }
        ));
    }

    #[test]
    fn round_trip_is_identity() {
        for text in [MINIMAL, "mode = \"variance-scan\"\nseed = 3\n[variance]\nsamples = 500\n"] {
            let c = ExperimentConfig::from_toml_str(text).unwrap();
            let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
            assert_eq!(c, again);
        }
    }

    #[test]
    fn hash_ignores_output_only() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn mode_target_mismatch() {
        let text = "mode = \"compile-unitary\"\nseed = 1\n[ansatz]\nn_qubits = 2\n[target]\nkind = \"random-ansatz-state\"\n";
        assert!(matches!(
            ExperimentConfig::from_toml_str(text),
            Err(HarnessError::Validation(_))
        ));
    }
}
