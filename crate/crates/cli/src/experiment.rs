//! Builds ansatz, target and objective from a config, runs the optimizer or
//! the variance scan, and writes every artifact.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use aqc_core::circuit::{build_layered_ansatz, brick_connectivity, Angles, AnsatzSpec, ParamCircuit};
use aqc_core::cost::{solve_alpha_system, FlipWeights, TargetRef};
use aqc_core::dense::{circuit_unitary, phase_aligned_frobenius, DenseUnitary};
use aqc_core::optimizer::{Objective, Problem, RunRecord, TwoStageRunner, WeightSchedule};
use aqc_core::state::StateVector;
use aqc_core::trotter::{
    average_gate_fidelity, exact_evolution, trotter_circuit, trotter_step_circuit, SpinChainSpec,
    TrotterPlan,
};
use aqc_core::variance::{estimate_gradient_variance, fit_log_linear, VarianceCost, VariancePoint, VarianceScan};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{self, checkpoint_path, Checkpoint};
use crate::config::{CompileTo, CostKind, ExperimentConfig, Mode, TargetConfig, WeightsSource};
use crate::emit::{self, write_file, write_json, Provenance, RunSummary};
use crate::error::{HarnessError, Result};

/// Per-invocation settings that do not change results.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides `[output] dir`.
    pub out_dir: Option<PathBuf>,
    /// Directory holding checkpoints to continue from.
    pub resume: Option<PathBuf>,
    /// Overrides `[output] checkpoint_every`.
    pub checkpoint_every: Option<usize>,
    /// Stop every run once this many iterations are logged (after checkpointing).
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkRow {
    pub order: usize,
    pub seed: u64,
    pub iterations: usize,
    pub best_cost: f64,
    pub final_fidelity: f64,
    pub converged: bool,
    pub stalled: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkSummary {
    pub trotter_baseline_fidelity: f64,
    pub rows: Vec<BenchmarkRow>,
    /// `(order, best final fidelity over seeds)`.
    pub best_by_order: Vec<(usize, f64)>,
    pub trotter_error: Vec<(f64, f64)>,
    pub trotter_error_slope: f64,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub config_hash: String,
    pub out_dir: PathBuf,
    pub runs: Vec<(String, RunRecord)>,
    pub summaries: Vec<RunSummary>,
    pub trotter_baseline_fidelity: Option<f64>,
    pub variance: Vec<VariancePoint>,
    pub benchmark: Option<BenchmarkSummary>,
    /// Some run stopped early on `stop_after`.
    pub interrupted: bool,
}

impl Outcome {
    pub fn record(&self, label: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|(l, _)| l == label).map(|(_, r)| r)
    }
}

enum BuiltTarget {
    /// State and, for ansatz-generated targets, the angles to start from.
    State(StateVector, Option<Angles>),
    Unitary {
        target: DenseUnitary,
        reference: DenseUnitary,
        baseline: Option<f64>,
    },
}

impl BuiltTarget {
    fn as_ref(&self) -> TargetRef<'_> {
        match self {
            BuiltTarget::State(s, _) => TargetRef::State(s),
            BuiltTarget::Unitary { target, .. } => TargetRef::Unitary(target),
        }
    }

    fn reference(&self) -> Option<&DenseUnitary> {
        match self {
            BuiltTarget::State(..) => None,
            BuiltTarget::Unitary { reference, .. } => Some(reference),
        }
    }

    fn start(&self) -> Option<Angles> {
        match self {
            BuiltTarget::State(_, a) => a.clone(),
            BuiltTarget::Unitary { .. } => None,
        }
    }

    fn baseline(&self) -> Option<f64> {
        match self {
            BuiltTarget::State(..) => None,
            BuiltTarget::Unitary { baseline, .. } => *baseline,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Generator for target construction; stream 1 keeps it apart from the
/// optimizer's initial-angle draws.
fn target_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub fn build_ansatz(config: &ExperimentConfig) -> Result<ParamCircuit> {
    let n = config
        .n_qubits()
        .ok_or_else(|| HarnessError::Validation("n_qubits missing".into()))?;
    let spec = AnsatzSpec {
        n_qubits: n,
        layers: config.ansatz.layers,
        block_reps: config.ansatz.block_reps,
        connectivity: match &config.ansatz.connectivity {
            Some(pairs) => pairs.iter().map(|p| (p[0], p[1])).collect(),
            None => brick_connectivity(n),
        },
    };
    Ok(build_layered_ansatz(&spec)?)
}

fn build_target(config: &ExperimentConfig, circuit: &ParamCircuit) -> Result<BuiltTarget> {
    let n = circuit.n_qubits();
    let unitary = matches!(config.mode, Mode::CompileUnitary | Mode::TrotterBenchmark);
    let plain = |u: DenseUnitary| BuiltTarget::Unitary {
        reference: u.clone(),
        target: u,
        baseline: None,
    };
    Ok(match config.target() {
        TargetConfig::RandomAnsatzState { start_at_target } => {
            let mut rng = target_rng(config.seed);
            let angles = Angles((0..circuit.n_params()).map(|_| rng.random_range(0.0..TAU)).collect());
            let mut s = StateVector::zero(n);
            s.apply_circuit(&circuit.bind(&angles)?)?;
            BuiltTarget::State(s, start_at_target.then_some(angles))
        }
        TargetConfig::HaarUnitary => plain(DenseUnitary::random_haar(n, &mut target_rng(config.seed))),
        TargetConfig::File { path } => {
            let r = BufReader::new(File::open(&path).map_err(io_err(&path))?);
            if unitary {
                let u = DenseUnitary::read_dump(r).map_err(io_err(&path))?;
                if u.n_qubits() != n {
                    return Err(HarnessError::Validation(format!(
                        "target unitary has {} qubits, ansatz has {n}",
                        u.n_qubits()
                    )));
                }
                plain(u)
            } else {
                let s = StateVector::read_dump(r).map_err(io_err(&path))?;
                if s.n_qubits() != n {
                    return Err(HarnessError::Validation(format!(
                        "target state has {} qubits, ansatz has {n}",
                        s.n_qubits()
                    )));
                }
                BuiltTarget::State(s, None)
            }
        }
        TargetConfig::Trotter {
            sites,
            dt,
            steps,
            time,
            compile_to,
        } => {
            let spec = SpinChainSpec::new(sites)?;
            let plan = TrotterPlan::new(dt, steps)?;
            let trot = circuit_unitary(&trotter_circuit(&spec, &plan))?;
            let exact = exact_evolution(&spec, time.unwrap_or(plan.total_time()))?;
            let baseline = average_gate_fidelity(&exact, &trot)?;
            info!("Trotter baseline fidelity {baseline}");
            BuiltTarget::Unitary {
                target: match compile_to {
                    CompileTo::Exact => exact.clone(),
                    CompileTo::Trotter => trot,
                },
                reference: exact,
                baseline: Some(baseline),
            }
        }
    })
}

fn base_weights(config: &ExperimentConfig, n: usize, k: usize) -> Result<FlipWeights> {
    Ok(match &config.cost.weights {
        WeightsSource::Solve => solve_alpha_system(n, k)?,
        WeightsSource::Pattern => FlipWeights::local_pattern(n, k),
        WeightsSource::Explicit(a) => FlipWeights::new(a.clone())?,
    })
}

fn objective(config: &ExperimentConfig, kind: CostKind, n: usize, unitary: bool) -> Result<Objective> {
    Ok(match (kind, unitary) {
        (CostKind::Global, false) => Objective::StateGlobal,
        (CostKind::Global, true) => Objective::HilbertSchmidt,
        (CostKind::Frobenius, true) => Objective::Frobenius,
        (CostKind::Local, false) => Objective::StateLocal {
            base: base_weights(config, n, config.k(n))?,
        },
        (CostKind::Local, true) => Objective::UnitaryLocal {
            base: base_weights(config, n, config.k(n))?,
        },
        (CostKind::SurrogateComposite, false) => Objective::SurrogateComposite,
        (CostKind::SurrogateMax, false) => Objective::SurrogateMax {
            hysteresis: config.cost.hysteresis,
        },
        (k, _) => {
            return Err(HarnessError::Validation(format!(
                "cost {k:?} does not fit mode {}",
                config.mode.as_str()
            )))
        }
    })
}

fn cost_label(config: &ExperimentConfig, kind: CostKind, n: usize) -> String {
    match kind {
        CostKind::Global => "global".into(),
        CostKind::Frobenius => "frobenius".into(),
        CostKind::Local => format!("local_k{}", config.k(n)),
        CostKind::SurrogateComposite => "surrogate_composite".into(),
        CostKind::SurrogateMax => "surrogate_max".into(),
    }
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    hash: &'a str,
    out_dir: &'a Path,
    opts: &'a RunOptions,
}

impl RunContext<'_> {
    fn checkpoint_every(&self) -> usize {
        self.opts
            .checkpoint_every
            .unwrap_or(self.config.output.checkpoint_every)
    }

    /// One optimizer run with checkpointing: best angles and record, or
    /// `None` if stopped early.
    fn run(
        &self,
        label: &str,
        problem: Problem<'_>,
        seed: u64,
        initial: Option<Angles>,
    ) -> Result<Option<(Angles, RunRecord)>> {
        let cfg = self.config.optimizer.clone();
        let saved = match &self.opts.resume {
            Some(dir) => checkpoint::find(dir, label, self.hash)?,
            None => None,
        };
        let mut runner = match saved {
            Some(cp) => {
                info!("{label}: resuming at iteration {}", cp.iteration);
                TwoStageRunner::resume(problem, cfg, cp.state)?
            }
            None => TwoStageRunner::new(
                problem,
                cfg,
                WeightSchedule::new(self.config.cost.schedule),
                seed,
                initial,
            )?,
        };
        let fresh = runner.state().record.rows.is_empty();
        let every = self.checkpoint_every() as u64;
        let path = checkpoint_path(self.out_dir, label);
        let save = |st: &aqc_core::optimizer::RunState| Checkpoint::new(self.hash, label, st).save(&path);
        if fresh && every > 0 {
            save(runner.state())?;
        }
        loop {
            let st = runner.state();
            if !st.finished && self.opts.stop_after.is_some_and(|s| st.record.rows.len() as u64 >= s) {
                save(st)?;
                return Ok(None);
            }
            let done = runner.step()?;
            let st = runner.state();
            if every > 0 && (done || st.iteration % every == 0) {
                save(st)?;
            }
            if done {
                break;
            }
        }
        let (best, record) = runner.finish();
        info!(
            "{label}: {} iterations, best global cost {:e}",
            record.rows.len(),
            record.best_cost
        );
        Ok(Some((best, record)))
    }
}

fn out_dir(config: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir.clone().unwrap_or_else(|| config.output.dir.clone())
}

/// Runs the experiment described by `config` and writes its artifacts.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    config.validate()?;
    let hash = config.hash();
    let dir = out_dir(config, opts);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let prov = Provenance::new(&hash);
    write_file(&dir.join("config.toml"), config.to_toml_string()?)?;
    let ctx = RunContext {
        config,
        hash: &hash,
        out_dir: &dir,
        opts,
    };
    let mut outcome = match config.mode {
        Mode::CompileState | Mode::CompileUnitary => compile(&ctx, &prov)?,
        Mode::VarianceScan => variance_scan(&ctx, &prov)?,
        Mode::TrotterBenchmark => trotter_benchmark(&ctx, &prov)?,
    };
    outcome.config_hash = hash;
    outcome.out_dir = dir;
    Ok(outcome)
}

fn emit_circuit(
    path: &Path,
    circuit: &ParamCircuit,
    angles: &Angles,
    prov: &Provenance,
) -> Result<()> {
    let fixed = circuit.bind(angles)?.to_fixed();
    let doc: serde_json::Value = serde_json::from_str(&fixed.to_json()).expect("circuit JSON");
    write_json(path, &json!({ "angles": angles.as_slice(), "circuit": doc }), prov)
}

fn dump<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(BufWriter<File>) -> std::io::Result<()>,
{
    let f = File::create(path).map_err(io_err(path))?;
    write(BufWriter::new(f)).map_err(io_err(path))
}

fn compile(ctx: &RunContext<'_>, prov: &Provenance) -> Result<Outcome> {
    let config = ctx.config;
    let circuit = build_ansatz(config)?;
    let n = circuit.n_qubits();
    let unitary = config.mode == Mode::CompileUnitary;
    let target = build_target(config, &circuit)?;
    let baseline = target.baseline();

    let mut plan = vec![(cost_label(config, config.cost.kind, n), config.cost.kind)];
    if config.cost.twin_global {
        if config.cost.kind == CostKind::Global {
            warn!("twin_global ignored: the primary run already uses the global cost");
        } else {
            plan.push(("global".to_string(), CostKind::Global));
        }
    }

    let mut outcome = Outcome {
        trotter_baseline_fidelity: baseline,
        ..Outcome::default()
    };
    let mut best = Vec::new();
    for (label, kind) in &plan {
        let problem = Problem {
            circuit: &circuit,
            target: target.as_ref(),
            objective: objective(config, *kind, n, unitary)?,
            fidelity_reference: target.reference(),
        };
        match ctx.run(label, problem, config.seed, target.start())? {
            Some((a, r)) => {
                best.push(a);
                outcome.runs.push((label.clone(), r));
            }
            None => outcome.interrupted = true,
        }
    }
    if outcome.interrupted {
        return Ok(outcome);
    }

    let dir = ctx.out_dir;
    for ((label, record), angles) in outcome.runs.iter().zip(&best) {
        outcome
            .summaries
            .push(emit::emit_convergence(record, dir, label, prov, baseline)?);
        emit_circuit(&dir.join(format!("{label}.circuit.json")), &circuit, angles, prov)?;
        if config.output.dumps {
            let bound = circuit.bind(angles)?;
            let path = dir.join(format!("{label}.compiled.bin"));
            if unitary {
                let v = circuit_unitary(&bound)?;
                dump(&path, |w| v.write_dump(w))?;
            } else {
                let mut s = StateVector::zero(n);
                s.apply_circuit(&bound)?;
                dump(&path, |w| s.write_dump(w))?;
            }
        }
    }
    if config.output.dumps {
        let path = dir.join("target.bin");
        match &target {
            BuiltTarget::State(s, _) => dump(&path, |w| s.write_dump(w))?,
            BuiltTarget::Unitary { target, .. } => dump(&path, |w| target.write_dump(w))?,
        }
    }
    if let [(a, ra), (b, rb)] = &outcome.runs[..] {
        write_file(
            &dir.join("comparison.csv"),
            emit::comparison_csv((a, ra), (b, rb), prov),
        )?;
    }
    write_json(
        &dir.join("summary.json"),
        &json!({
            "mode": config.mode.as_str(),
            "seed": config.seed,
            "n_qubits": n,
            "n_params": circuit.n_params(),
            "cnot_count": circuit.cnot_count(),
            "trotter_baseline_fidelity": baseline,
            "runs": outcome.summaries,
        }),
        prov,
    )?;
    Ok(outcome)
}

fn variance_costs(config: &ExperimentConfig) -> Vec<VarianceCost> {
    let v = config.variance.clone().unwrap_or_default();
    let mut out = Vec::new();
    for c in &v.costs {
        match c.as_str() {
            "global" => out.push(VarianceCost::Global),
            "full-local" => out.push(VarianceCost::FullLocal),
            _ => out.extend(v.orders.iter().map(|&k| VarianceCost::Truncated { k })),
        }
    }
    out
}

fn variance_scan(ctx: &RunContext<'_>, prov: &Provenance) -> Result<Outcome> {
    let config = ctx.config;
    let v = config.variance.clone().unwrap_or_default();
    let mut points = Vec::new();
    let mut fits = Vec::new();
    for cost in variance_costs(config) {
        let k = match cost {
            VarianceCost::Truncated { k } => k,
            _ => 0,
        };
        // truncation order k needs n ≥ k + 1
        let n_range: Vec<usize> = v.n_range.iter().copied().filter(|&n| n > k).collect();
        if n_range.is_empty() {
            warn!("no qubit count admits truncation order {k}; skipped");
            continue;
        }
        let scan = VarianceScan {
            n_range,
            samples: v.samples,
            seed: config.seed,
            cost: cost.clone(),
            component: v.component,
            blocks: v.blocks,
        };
        let table = estimate_gradient_variance(&scan)?;
        if table.len() >= 2 {
            let xs: Vec<f64> = table.iter().map(|p| p.n as f64).collect();
            let ys: Vec<f64> = table.iter().map(|p| p.variance).collect();
            let (slope, intercept) = fit_log_linear(&xs, &ys)?;
            fits.push(json!({ "cost_kind": cost.label(), "k": k, "slope": slope, "intercept": intercept }));
        }
        points.extend(table);
    }
    write_file(&ctx.out_dir.join("variance.csv"), emit::variance_csv(&points, prov))?;
    write_json(
        &ctx.out_dir.join("variance.summary.json"),
        &json!({ "points": points, "log_linear_fits": fits }),
        prov,
    )?;
    Ok(Outcome {
        variance: points,
        ..Outcome::default()
    })
}

/// Frobenius distance, minimized over global phase, between one Trotter
/// step and exact evolution.
pub fn trotter_step_error(spec: &SpinChainSpec, dt: f64) -> Result<f64> {
    let step = circuit_unitary(&trotter_step_circuit(spec, dt))?;
    Ok(phase_aligned_frobenius(&exact_evolution(spec, dt)?, &step)?)
}

fn trotter_benchmark(ctx: &RunContext<'_>, prov: &Provenance) -> Result<Outcome> {
    let config = ctx.config;
    let bench = config.benchmark.clone().unwrap_or_default();
    let circuit = build_ansatz(config)?;
    let n = circuit.n_qubits();
    let target = build_target(config, &circuit)?;
    let baseline = target.baseline().expect("trotter target has a baseline");
    let runs_dir = ctx.out_dir.join("runs");
    let sub = RunContext {
        out_dir: &runs_dir,
        ..*ctx
    };
    std::fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;

    let jobs: Vec<(usize, u64)> = bench
        .orders
        .iter()
        .flat_map(|&k| (0..bench.seeds).map(move |s| (k, config.seed + s)))
        .collect();
    let results: Vec<Option<(Angles, RunRecord)>> = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let objective = if k == 0 {
                Objective::HilbertSchmidt
            } else {
                Objective::UnitaryLocal {
                    base: solve_alpha_system(n, k)?,
                }
            };
            let problem = Problem {
                circuit: &circuit,
                target: target.as_ref(),
                objective,
                fidelity_reference: target.reference(),
            };
            sub.run(&format!("k{k}_s{seed}"), problem, seed, None)
        })
        .collect::<Result<_>>()?;

    let mut outcome = Outcome {
        trotter_baseline_fidelity: Some(baseline),
        ..Outcome::default()
    };
    let mut rows = Vec::new();
    for (&(k, seed), rec) in jobs.iter().zip(results) {
        let Some((_, rec)) = rec else {
            outcome.interrupted = true;
            continue;
        };
        let label = format!("k{k}_s{seed}");
        outcome
            .summaries
            .push(emit::emit_convergence(&rec, &runs_dir, &label, prov, Some(baseline))?);
        rows.push(BenchmarkRow {
            order: k,
            seed,
            iterations: rec.rows.len(),
            best_cost: rec.best_cost,
            final_fidelity: rec.final_fidelity.unwrap_or(f64::NAN),
            converged: rec.converged,
            stalled: rec.stalled,
        });
        outcome.runs.push((label, rec));
    }
    if outcome.interrupted {
        return Ok(outcome);
    }

    let best_by_order: Vec<(usize, f64)> = bench
        .orders
        .iter()
        .map(|&k| {
            let best = rows
                .iter()
                .filter(|r| r.order == k)
                .map(|r| r.final_fidelity)
                .fold(f64::NEG_INFINITY, f64::max);
            (k, best)
        })
        .collect();

    let spec = SpinChainSpec::new(n)?;
    let trotter_error = bench
        .order_check_dts
        .iter()
        .map(|&dt| Ok((dt, trotter_step_error(&spec, dt)?)))
        .collect::<Result<Vec<_>>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = trotter_error.iter().map(|&(dt, e)| (dt.ln(), e)).unzip();
    let trotter_error_slope = if xs.len() >= 2 {
        fit_log_linear(&xs, &ys)?.0
    } else {
        f64::NAN
    };

    let mut csv = prov.csv_comment();
    csv.push_str("order,seed,iterations,best_cost,final_fidelity,trotter_baseline_fidelity,converged,stalled\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.order, r.seed, r.iterations, r.best_cost, r.final_fidelity, baseline, r.converged, r.stalled
        ));
    }
    write_file(&ctx.out_dir.join("benchmark.csv"), csv)?;
    let mut csv = prov.csv_comment();
    csv.push_str("dt,error\n");
    for (dt, e) in &trotter_error {
        csv.push_str(&format!("{dt},{e}\n"));
    }
    write_file(&ctx.out_dir.join("trotter_error.csv"), csv)?;

    let summary = BenchmarkSummary {
        trotter_baseline_fidelity: baseline,
        rows,
        best_by_order,
        trotter_error,
        trotter_error_slope,
    };
    write_json(&ctx.out_dir.join("summary.json"), &summary, prov)?;
    outcome.benchmark = Some(summary);
    Ok(outcome)
}
