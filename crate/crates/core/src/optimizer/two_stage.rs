//! Adam until the cost drops below a threshold, then L-BFGS, with the flip
//! weight following a schedule and random restarts on stalls.
//!
//! The runner is an explicit state machine so that a run can be checkpointed
//! after any iteration and resumed bitwise.

use std::f64::consts::TAU;
use std::time::Instant;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::lbfgs::{initial_step, strong_wolfe, LbfgsConfig, LbfgsMemory, Point};
use super::record::{IterationRow, RunRecord, Stage};
use super::schedule::{update_weight, WeightSchedule};
use crate::circuit::{Angles, ParamCircuit};
use crate::cost::{
    surrogate_composite_cost, surrogate_max_cost, CostSpec, FlipWeights, SurrogateState,
    TargetRef, DEFAULT_HYSTERESIS,
};
use crate::dense::{circuit_unitary, DenseUnitary};
use crate::error::{AqcError, Result};
use crate::gradient::{adjoint_gradient, GradientReport};
use crate::trotter::average_gate_fidelity;

/// The cost family being minimized. Flip weights given here are the base
/// pattern the schedule rescales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    StateGlobal,
    StateLocal { base: FlipWeights },
    SurrogateComposite,
    SurrogateMax { hysteresis: f64 },
    Frobenius,
    HilbertSchmidt,
    UnitaryLocal { base: FlipWeights },
}

impl Objective {
    /// Whether the schedule weight enters the cost at all.
    pub fn is_weighted(&self) -> bool {
        !matches!(
            self,
            Objective::StateGlobal | Objective::Frobenius | Objective::HilbertSchmidt
        )
    }

    pub fn surrogate_max() -> Self {
        Objective::SurrogateMax {
            hysteresis: DEFAULT_HYSTERESIS,
        }
    }
}

pub struct Problem<'a> {
    pub circuit: &'a ParamCircuit,
    pub target: TargetRef<'a>,
    pub objective: Objective,
    /// Unitary against which a per-iteration fidelity is logged.
    pub fidelity_reference: Option<&'a DenseUnitary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoStageConfig {
    /// Adam hands over to L-BFGS at the first cost below this.
    pub threshold: f64,
    pub adam_max_iterations: usize,
    /// Iteration budget per attempt (both stages).
    pub max_iterations: usize,
    pub grad_tol: f64,
    /// Success once the global cost falls below this.
    pub cost_tol: f64,
    pub restarts: u32,
    pub stall_window: usize,
    pub stall_tol: f64,
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            adam_max_iterations: 1000,
            max_iterations: 3000,
            grad_tol: 1e-10,
            cost_tol: 1e-10,
            restarts: 0,
            stall_window: 50,
            stall_tol: 1e-10,
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
        }
    }
}

impl TwoStageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(AqcError::Config(format!(
                "threshold {} must lie in (0, 1]",
                self.threshold
            )));
        }
        if self.max_iterations == 0 || self.stall_window == 0 || self.lbfgs.max_line_search == 0 {
            return Err(AqcError::Config("iteration budgets must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(AqcError::Config("Adam learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub iteration: u64,
    pub restart: u32,
    pub attempt_iteration: usize,
    pub stage: Stage,
    pub angles: Angles,
    pub adam: AdamState,
    pub memory: LbfgsMemory,
    pub schedule: WeightSchedule,
    pub initial_schedule: WeightSchedule,
    pub surrogate: SurrogateState,
    pub rng: ChaCha8Rng,
    #[serde(with = "super::record::extended_f64")]
    pub best_driving: f64,
    pub since_improvement: usize,
    pub best_angles: Angles,
    pub record: RunRecord,
    pub finished: bool,
    pub elapsed_ms: f64,
}

pub struct TwoStageRunner<'a> {
    problem: Problem<'a>,
    config: TwoStageConfig,
    state: RunState,
}

fn random_angles(rng: &mut ChaCha8Rng, n: usize) -> Angles {
    Angles((0..n).map(|_| rng.random_range(0.0..TAU)).collect())
}

fn initial_surrogate(objective: &Objective) -> SurrogateState {
    let hysteresis = match objective {
        Objective::SurrogateMax { hysteresis } => *hysteresis,
        _ => DEFAULT_HYSTERESIS,
    };
    SurrogateState {
        hysteresis,
        ..SurrogateState::default()
    }
}

fn evaluate(problem: &Problem<'_>, spec: &CostSpec, x: &[f64]) -> Result<GradientReport> {
    adjoint_gradient(spec, problem.circuit, &Angles(x.to_vec()), problem.target)
}

enum AttemptEnd {
    Converged,
    Stalled,
    Budget,
}

impl<'a> TwoStageRunner<'a> {
    /// Fresh run. Without `initial` the starting angles are drawn uniformly
    /// from `[0, 2π)` with the seeded generator.
    pub fn new(
        problem: Problem<'a>,
        config: TwoStageConfig,
        schedule: WeightSchedule,
        seed: u64,
        initial: Option<Angles>,
    ) -> Result<Self> {
        config.validate()?;
        let n = problem.circuit.n_params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles = match initial {
            Some(a) if a.len() != n => {
                return Err(AqcError::Bind {
                    expected: n,
                    got: a.len(),
                })
            }
            Some(a) => a,
            None => random_angles(&mut rng, n),
        };
        let record = RunRecord::new(if problem.objective.is_weighted() {
            schedule.describe()
        } else {
            "none".to_string()
        });
        let state = RunState {
            iteration: 0,
            restart: 0,
            attempt_iteration: 0,
            stage: Stage::Adam,
            best_angles: angles.clone(),
            angles,
            adam: AdamState::new(n, config.adam),
            memory: LbfgsMemory::new(config.lbfgs.memory),
            initial_schedule: schedule.clone(),
            schedule,
            surrogate: initial_surrogate(&problem.objective),
            rng,
            best_driving: f64::INFINITY,
            since_improvement: 0,
            record,
            finished: false,
            elapsed_ms: 0.0,
        };
        Ok(Self {
            problem,
            config,
            state,
        })
    }

    /// Continues from a saved state.
    pub fn resume(problem: Problem<'a>, config: TwoStageConfig, state: RunState) -> Result<Self> {
        config.validate()?;
        if state.angles.len() != problem.circuit.n_params() {
            return Err(AqcError::Bind {
                expected: problem.circuit.n_params(),
                got: state.angles.len(),
            });
        }
        Ok(Self {
            problem,
            config,
            state,
        })
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    /// Cost with the surrogate refreshed and the weight applied at the
    /// current angles, plus the weight to log.
    fn frozen_spec(&mut self) -> Result<(CostSpec, f64)> {
        let st = &mut self.state;
        let w = st.schedule.w;
        let p = &self.problem;
        let surrogate_target = || match p.target {
            TargetRef::State(t) => Ok(t),
            TargetRef::Unitary(_) => Err(AqcError::Capability(
                "surrogate costs need a state target".into(),
            )),
        };
        let refreshed = match &p.objective {
            Objective::StateGlobal => return Ok((CostSpec::StateGlobal, 0.0)),
            Objective::Frobenius => return Ok((CostSpec::Frobenius, 0.0)),
            Objective::HilbertSchmidt => return Ok((CostSpec::HilbertSchmidt, 0.0)),
            Objective::StateLocal { base } => {
                return Ok((CostSpec::StateLocal(st.schedule.weights(base)), w))
            }
            Objective::UnitaryLocal { base } => {
                return Ok((CostSpec::UnitaryLocal(st.schedule.weights(base)), w))
            }
            Objective::SurrogateComposite => {
                let bound = p.circuit.bind(&st.angles)?;
                surrogate_composite_cost(&bound, surrogate_target()?, w, &st.surrogate)
                    .map(|(_, s)| s)
            }
            Objective::SurrogateMax { .. } => {
                let bound = p.circuit.bind(&st.angles)?;
                surrogate_max_cost(&bound, surrogate_target()?, w, &st.surrogate).map(|(_, s)| s)
            }
        };
        match refreshed {
            Ok(s) => {
                let spec = match p.objective {
                    Objective::SurrogateComposite => CostSpec::SurrogateComposite {
                        alpha: w,
                        betas: s.betas.clone(),
                    },
                    _ => CostSpec::SurrogateMax {
                        alpha: w,
                        leader: s.leader.expect("leader set by refresh"),
                    },
                };
                st.surrogate = s;
                Ok((spec, w))
            }
            Err(AqcError::DegenerateSurrogate) => {
                let msg = format!(
                    "iteration {}: surrogate degenerate, using the global cost",
                    st.iteration
                );
                warn!("{msg}");
                st.record.warnings.push(msg);
                Ok((CostSpec::StateGlobal, 0.0))
            }
            Err(e) => Err(e),
        }
    }

    fn fidelity_at(&self, angles: &Angles) -> Result<Option<f64>> {
        match self.problem.fidelity_reference {
            Some(r) => {
                let v = circuit_unitary(&self.problem.circuit.bind(angles)?)?;
                Ok(Some(average_gate_fidelity(r, &v)?))
            }
            None => Ok(None),
        }
    }

    /// Runs one iteration. Returns `true` once the run is finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.state.finished {
            return Ok(true);
        }
        let clock = Instant::now();
        let (spec, weight) = self.frozen_spec()?;
        let rep = evaluate(&self.problem, &spec, self.state.angles.as_slice())?;
        if !rep.cost_at_point.is_finite() {
            return Err(AqcError::Divergence(format!(
                "cost is {} at iteration {}",
                rep.cost_at_point, self.state.iteration
            )));
        }
        let grad_norm = rep.norm();
        let fidelity = self.fidelity_at(&self.state.angles)?;

        let st = &mut self.state;
        if rep.global_cost < st.record.best_cost {
            st.best_angles = st.angles.clone();
        }
        let row_ms = st.elapsed_ms + clock.elapsed().as_secs_f64() * 1e3;
        st.record.push(IterationRow {
            iteration: st.iteration,
            restart: st.restart,
            stage: st.stage,
            cost: rep.cost_at_point,
            global_cost: rep.global_cost,
            weight,
            grad_norm,
            fidelity,
            wall_ms: row_ms,
        });

        let end = if rep.global_cost <= self.config.cost_tol {
            Some(AttemptEnd::Converged)
        } else {
            if rep.cost_at_point < st.best_driving - self.config.stall_tol {
                st.best_driving = rep.cost_at_point;
                st.since_improvement = 0;
            } else {
                st.since_improvement += 1;
            }
            if st.since_improvement >= self.config.stall_window || grad_norm < self.config.grad_tol
            {
                Some(AttemptEnd::Stalled)
            } else if st.attempt_iteration + 1 >= self.config.max_iterations {
                Some(AttemptEnd::Budget)
            } else {
                None
            }
        };

        let end = match end {
            Some(e) => Some(e),
            None => {
                if st.stage == Stage::Adam
                    && (rep.cost_at_point < self.config.threshold
                        || st.attempt_iteration >= self.config.adam_max_iterations)
                {
                    st.stage = Stage::Lbfgs;
                    st.record.handoff_iteration.get_or_insert(st.iteration);
                }
                self.take_step(&spec, rep)?
            }
        };

        let st = &mut self.state;
        if end.is_none() && self.problem.objective.is_weighted() {
            let driving = st.record.rows.last().map(|r| r.cost).unwrap_or(1.0);
            st.schedule = update_weight(&st.schedule, driving)?;
        }
        st.iteration += 1;
        st.attempt_iteration += 1;
        st.elapsed_ms += clock.elapsed().as_secs_f64() * 1e3;
        if let Some(e) = end {
            self.end_attempt(e)?;
        }
        Ok(self.state.finished)
    }

    fn take_step(&mut self, spec: &CostSpec, rep: GradientReport) -> Result<Option<AttemptEnd>> {
        match self.state.stage {
            Stage::Adam => {
                let adam = std::mem::replace(&mut self.state.adam, AdamState::new(0, self.config.adam));
                let (adam, next) = adam_step(adam, &rep.gradient, &self.state.angles)?;
                self.state.adam = adam;
                self.state.angles = next;
                Ok(None)
            }
            Stage::Lbfgs => {
                let start = Point {
                    x: self.state.angles.0.clone(),
                    f: rep.cost_at_point,
                    g: rep.gradient,
                };
                let mut memory = std::mem::take(&mut self.state.memory);
                let cfg = self.config.lbfgs;
                let problem = &self.problem;
                let mut eval =
                    |x: &[f64]| evaluate(problem, spec, x).map(|r| (r.cost_at_point, r.gradient));
                let mut accepted = None;
                for attempt in 0..2 {
                    let mut p = memory.direction(&start.g);
                    if attempt == 1 || !(p.iter().zip(&start.g).map(|(a, b)| a * b).sum::<f64>() < 0.0)
                    {
                        memory.clear();
                        p = memory.direction(&start.g);
                    }
                    let ls = strong_wolfe(&mut eval, &start, &p, initial_step(&memory, &start.g), &cfg)?;
                    if let Some((_, pt)) = ls.accepted {
                        accepted = Some(pt);
                        break;
                    }
                    if memory.is_empty() {
                        break;
                    }
                }
                let result = match accepted {
                    Some(next) => {
                        let s = next.x.iter().zip(&start.x).map(|(a, b)| a - b).collect();
                        let y = next.g.iter().zip(&start.g).map(|(a, b)| a - b).collect();
                        memory.push(s, y);
                        self.state.angles = Angles(next.x);
                        None
                    }
                    None => Some(AttemptEnd::Stalled),
                };
                self.state.memory = memory;
                Ok(result)
            }
        }
    }

    fn end_attempt(&mut self, end: AttemptEnd) -> Result<()> {
        let st = &mut self.state;
        match end {
            AttemptEnd::Converged => {
                st.record.converged = true;
                st.record.stalled = false;
                st.finished = true;
            }
            AttemptEnd::Stalled | AttemptEnd::Budget => {
                let stalled = matches!(end, AttemptEnd::Stalled);
                if st.restart < self.config.restarts {
                    st.restart += 1;
                    st.record.restarts_used = st.restart;
                    let n = self.problem.circuit.n_params();
                    st.angles = random_angles(&mut st.rng, n);
                    st.attempt_iteration = 0;
                    st.stage = Stage::Adam;
                    st.adam = AdamState::new(n, self.config.adam);
                    st.memory = LbfgsMemory::new(self.config.lbfgs.memory);
                    st.schedule = st.initial_schedule.clone();
                    st.surrogate = initial_surrogate(&self.problem.objective);
                    st.best_driving = f64::INFINITY;
                    st.since_improvement = 0;
                } else {
                    st.record.stalled = stalled;
                    st.finished = true;
                }
            }
        }
        if st.finished {
            let best = st.best_angles.clone();
            let f = self.fidelity_at(&best)?;
            self.state.record.final_fidelity = f;
        }
        Ok(())
    }

    /// Runs to completion, calling `on_iteration` after every step.
    pub fn run_with<F>(&mut self, mut on_iteration: F) -> Result<()>
    where
        F: FnMut(&RunState) -> Result<()>,
    {
        while !self.step()? {
            on_iteration(&self.state)?;
        }
        on_iteration(&self.state)
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    /// Best angles by global cost, and the record.
    pub fn finish(self) -> (Angles, RunRecord) {
        (self.state.best_angles, self.state.record)
    }
}

/// Runs the two-stage optimizer from seeded random angles.
pub fn two_stage_run(
    problem: Problem<'_>,
    config: TwoStageConfig,
    schedule: WeightSchedule,
    seed: u64,
) -> Result<(Angles, RunRecord)> {
    let mut runner = TwoStageRunner::new(problem, config, schedule, seed, None)?;
    runner.run()?;
    Ok(runner.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_layered_ansatz, AnsatzSpec};
    use crate::optimizer::schedule::ScheduleMode;
    use crate::state::StateVector;

    fn ansatz_target(n: usize, seed: u64) -> (ParamCircuit, Angles, StateVector) {
        let c = build_layered_ansatz(&AnsatzSpec::brick(n, 1, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_angles(&mut rng, c.n_params());
        let mut t = StateVector::zero(n);
        t.apply_circuit(&c.bind(&a).unwrap()).unwrap();
        (c, a, t)
    }

    #[test]
    fn converges_at_iteration_zero_from_solution() {
        let (c, a, t) = ansatz_target(4, 5);
        let problem = Problem {
            circuit: &c,
            target: TargetRef::State(&t),
            objective: Objective::StateLocal {
                base: FlipWeights::local_pattern(4, 1),
            },
            fidelity_reference: None,
        };
        let mut r = TwoStageRunner::new(
            problem,
            TwoStageConfig::default(),
            WeightSchedule::new(ScheduleMode::Ema),
            1,
            Some(a.clone()),
        )
        .unwrap();
        r.run().unwrap();
        let (best, rec) = r.finish();
        assert_eq!(rec.rows.len(), 1);
        assert!(rec.converged);
        assert_eq!(best, a);
    }

    #[test]
    fn small_state_compiles_and_is_deterministic() {
        let (c, _, t) = ansatz_target(3, 6);
        let run = || {
            let problem = Problem {
                circuit: &c,
                target: TargetRef::State(&t),
                objective: Objective::StateLocal {
                    base: FlipWeights::local_pattern(3, 1),
                },
                fidelity_reference: None,
            };
            let cfg = TwoStageConfig {
                cost_tol: 1e-8,
                restarts: 3,
                ..Default::default()
            };
            two_stage_run(problem, cfg, WeightSchedule::new(ScheduleMode::Ema), 11).unwrap()
        };
        let (_, a) = run();
        let (_, b) = run();
        assert!(a.converged, "best {}", a.best_cost);
        assert_eq!(a.untimed_rows(), b.untimed_rows());
        let best = a.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        // handoff happens at the first driving cost below the threshold
        if let Some(h) = a.handoff_iteration {
            let first = a.rows.iter().find(|r| r.cost < 0.9).map(|r| r.iteration);
            assert!(first.is_none_or(|f| f <= h));
            assert!(a.rows.iter().filter(|r| r.iteration < h).all(|r| r.stage == Stage::Adam));
        }
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (c, _, t) = ansatz_target(3, 7);
        let problem = || Problem {
            circuit: &c,
            target: TargetRef::State(&t),
            objective: Objective::surrogate_max(),
            fidelity_reference: None,
        };
        let cfg = TwoStageConfig {
            max_iterations: 120,
            adam_max_iterations: 60,
            ..Default::default()
        };
        let sched = WeightSchedule::new(ScheduleMode::Ema);
        let mut full = TwoStageRunner::new(problem(), cfg.clone(), sched.clone(), 3, None).unwrap();
        full.run().unwrap();

        let mut first = TwoStageRunner::new(problem(), cfg.clone(), sched, 3, None).unwrap();
        for _ in 0..70 {
            first.step().unwrap();
        }
        let json = serde_json::to_string(first.state()).unwrap();
        let saved: RunState = serde_json::from_str(&json).unwrap();
        let mut second = TwoStageRunner::resume(problem(), cfg, saved).unwrap();
        second.run().unwrap();
        assert_eq!(full.state().record.untimed_rows(), second.state().record.untimed_rows());
    }

    #[test]
    fn global_runs_log_zero_weight() {
        let (c, _, t) = ansatz_target(2, 8);
        let problem = Problem {
            circuit: &c,
            target: TargetRef::State(&t),
            objective: Objective::StateGlobal,
            fidelity_reference: None,
        };
        let cfg = TwoStageConfig {
            max_iterations: 5,
            ..Default::default()
        };
        let (_, rec) =
            two_stage_run(problem, cfg, WeightSchedule::new(ScheduleMode::Ema), 2).unwrap();
        assert!(rec.rows.iter().all(|r| r.weight == 0.0));
        assert_eq!(rec.weight_rule, "none");
    }

    #[test]
    fn config_validation() {
        let mut cfg = TwoStageConfig {
            threshold: 0.0,
            ..TwoStageConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.threshold = 1.0;
        assert!(cfg.validate().is_ok());
    }
}
