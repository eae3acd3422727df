//! Lazy open-loop synthesis and its receding-horizon driver.
//!
//! The open-loop loop solves the MILP with the currently active predicate
//! groups, monitors the resulting trajectory on the resized predicates, and
//! activates the group of the critical `(occurrence, index)` pair until the
//! trajectory satisfies the formula.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{EncodedScenario, EncodingError};
use crate::milp::{Budget, Solution, Status};
use crate::mtl::OccId;
use crate::predicate::Predicate;
use crate::robustness::{self, RobustnessError, Trajectory, Witness};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
    #[error("solver reported an unbounded relaxation")]
    Unbounded,
    #[error("receding-horizon run already finished")]
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthesisStatus {
    Feasible,
    /// Only reported on the conjunctive/globally fragment, where the lazy
    /// loop is complete.
    InfeasibleProven,
    /// The MILP became infeasible on a formula outside the fragment the
    /// lazy loop is complete for.
    NoTrajectoryFound,
    BudgetExhausted,
    IterationCapped,
    /// The critical pair was already active; re-activating cannot help.
    Stalled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SolverUsage {
    pub pivots: u64,
    pub nodes: u64,
    pub solves: u64,
}

impl SolverUsage {
    fn add<S>(&mut self, sol: &Solution<S>) {
        self.pivots += sol.stats.simplex_iterations;
        self.nodes += sol.stats.nodes;
        self.solves += 1;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisResult<S> {
    pub status: SynthesisStatus,
    pub trajectory: Option<Trajectory<S>>,
    pub inputs: Option<Vec<Vec<S>>>,
    /// Effort of `inputs`.
    pub objective: Option<S>,
    /// Number of MILP solves.
    pub iterations: usize,
    pub activations: Vec<(OccId, usize)>,
    /// Monitor verdict on the resized predicates.
    pub robustness_resized: Option<Witness<S>>,
    /// Monitor verdict on the original predicates.
    pub robustness_original: Option<Witness<S>>,
    pub usage: SolverUsage,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SynthesisOptions {
    /// Defaults to `N * occurrences`.
    pub max_iterations: Option<usize>,
    pub budget: Budget,
}

/// Budget left after `used` pivots.
fn remaining(budget: &Budget, used: u64) -> Budget {
    Budget {
        deadline: budget.deadline,
        max_pivots: budget.max_pivots.map(|m| m.saturating_sub(used)),
    }
}

fn exhausted(budget: &Budget, used: u64) -> bool {
    budget.max_pivots.is_some_and(|m| used >= m)
        || budget.deadline.is_some_and(|d| Instant::now() >= d)
}

/// Outcome of one pass of the lazy loop, shared by the open-loop and
/// receding-horizon drivers.
struct LoopOutcome<S> {
    status: SynthesisStatus,
    /// Last trajectory the solver produced (incumbent under a budget).
    plan: Option<(Vec<Vec<S>>, Vec<Vec<S>>)>,
    witness: Option<Witness<S>>,
    iterations: usize,
    usage: SolverUsage,
    /// True when the critical index lies in a pinned prefix.
    unrepairable: bool,
}

fn lazy_loop<S: Scalar>(
    enc: &mut EncodedScenario<S>,
    max_iterations: usize,
    budget: &Budget,
) -> Result<LoopOutcome<S>, SynthesisError> {
    let complete = enc.problem.formula.is_conjunctive_globally();
    let mut out = LoopOutcome {
        status: SynthesisStatus::IterationCapped,
        plan: None,
        witness: None,
        iterations: 0,
        usage: SolverUsage::default(),
        unrepairable: false,
    };
    while out.iterations < max_iterations {
        if out.iterations > 0 && exhausted(budget, out.usage.pivots) {
            out.status = SynthesisStatus::BudgetExhausted;
            return Ok(out);
        }
        out.iterations += 1;
        let sol = enc.solve(&remaining(budget, out.usage.pivots))?;
        out.usage.add(&sol);
        match sol.status {
            Status::Infeasible => {
                out.status = if complete && enc.prefix_len() <= 1 {
                    SynthesisStatus::InfeasibleProven
                } else {
                    SynthesisStatus::NoTrajectoryFound
                };
                return Ok(out);
            }
            Status::Unbounded => return Err(SynthesisError::Unbounded),
            Status::BudgetExceeded | Status::Optimal => {}
        }
        let (Some(states), Some(inputs)) = (enc.states(&sol), enc.inputs(&sol)) else {
            out.status = SynthesisStatus::BudgetExhausted;
            return Ok(out);
        };
        let traj = Trajectory::new(states.clone(), enc.problem.system.dt);
        let w = robustness::evaluate(&enc.problem.formula, enc.resized_predicates(), &traj, 0)?;
        out.plan = Some((states, inputs));
        out.witness = Some(w);
        if w.value >= S::zero() {
            out.status = SynthesisStatus::Feasible;
            return Ok(out);
        }
        if sol.status == Status::BudgetExceeded {
            out.status = SynthesisStatus::BudgetExhausted;
            return Ok(out);
        }
        if w.index < enc.prefix_len() {
            out.unrepairable = true;
            out.status = SynthesisStatus::Stalled;
            return Ok(out);
        }
        if !enc.activate(w.occurrence, w.index)? {
            out.status = SynthesisStatus::Stalled;
            return Ok(out);
        }
    }
    Ok(out)
}

fn default_cap<S: Scalar>(enc: &EncodedScenario<S>) -> usize {
    (enc.horizon() * enc.problem.formula.occurrences.len()).max(1)
}

/// Lazy open-loop synthesis. Activations made here stay in `enc`, so a later
/// call resumes from them.
pub fn synthesize_open_loop<S: Scalar>(
    enc: &mut EncodedScenario<S>,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult<S>, SynthesisError> {
    let cap = opts.max_iterations.unwrap_or_else(|| default_cap(enc));
    let out = lazy_loop(enc, cap, &opts.budget)?;
    finish(enc, out)
}

/// Solves the encoding as is (no monitoring or activation), e.g. the fully
/// activated model used to check lazy results.
pub fn solve_direct<S: Scalar>(
    enc: &mut EncodedScenario<S>,
    budget: &Budget,
) -> Result<SynthesisResult<S>, SynthesisError> {
    let sol = enc.solve(budget)?;
    let mut usage = SolverUsage::default();
    usage.add(&sol);
    let mut out = LoopOutcome {
        status: match sol.status {
            Status::Optimal => SynthesisStatus::Feasible,
            Status::Infeasible => SynthesisStatus::InfeasibleProven,
            Status::BudgetExceeded => SynthesisStatus::BudgetExhausted,
            Status::Unbounded => return Err(SynthesisError::Unbounded),
        },
        plan: None,
        witness: None,
        iterations: 1,
        usage,
        unrepairable: false,
    };
    if let (Some(s), Some(u)) = (enc.states(&sol), enc.inputs(&sol)) {
        out.plan = Some((s, u));
    }
    finish(enc, out)
}

fn finish<S: Scalar>(
    enc: &EncodedScenario<S>,
    out: LoopOutcome<S>,
) -> Result<SynthesisResult<S>, SynthesisError> {
    let dt = enc.problem.system.dt;
    let (trajectory, inputs, resized, original, objective) = match out.plan {
        Some((states, inputs)) => {
            let traj = Trajectory::new(states, dt);
            let r = robustness::evaluate(&enc.problem.formula, enc.resized_predicates(), &traj, 0)?;
            let o =
                robustness::evaluate(&enc.problem.formula, enc.original_predicates(), &traj, 0)?;
            let obj = enc.effort(&inputs);
            (Some(traj), Some(inputs), Some(r), Some(o), Some(obj))
        }
        None => (None, None, None, None, None),
    };
    Ok(SynthesisResult {
        status: out.status,
        trajectory,
        inputs,
        objective,
        iterations: out.iterations,
        activations: enc.activations().to_vec(),
        robustness_resized: resized,
        robustness_original: original,
        usage: out.usage,
    })
}

/// How per-step solve time is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Clock {
    /// Time is charged per simplex pivot; runs are reproducible.
    Simulated {
        seconds_per_pivot: f64,
    },
    WallClock,
}

/// Pivot cost used by the simulated clock. An optimized build of the
/// built-in solver averages about 1.4e-5 s per pivot on the bundled reactive
/// replay (branch-and-bound heavy steps included); this rounds it up.
pub const DEFAULT_SECONDS_PER_PIVOT: f64 = 2.0e-5;

impl Default for Clock {
    fn default() -> Self {
        Clock::Simulated {
            seconds_per_pivot: DEFAULT_SECONDS_PER_PIVOT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhcConfig {
    /// Per-step solve allowance in seconds.
    pub step_deadline: f64,
    pub clock: Clock,
    /// Solves per step; defaults to `N * occurrences`.
    pub max_iterations: Option<usize>,
}

impl Default for RhcConfig {
    fn default() -> Self {
        RhcConfig {
            step_deadline: 0.5,
            clock: Clock::default(),
            max_iterations: None,
        }
    }
}

/// Geometry change for a named predicate, applied at the start of `step`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredicateUpdate<S> {
    pub step: usize,
    pub name: String,
    pub predicate: Predicate<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    /// The combined trajectory satisfies the formula on the resized sets.
    Feasible,
    /// An incumbent was committed that does not yet satisfy the formula.
    Infeasible,
    /// No new plan; the previous plan (or zero input) was held.
    Held,
    /// The violation lies in the executed prefix and cannot be repaired.
    Unrepairable,
    /// Final bookkeeping step with an empty remaining horizon.
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepEvent<S> {
    pub step: usize,
    /// Time of the last executed state.
    pub t: f64,
    /// Output coordinates of the combined trajectory (executed prefix plus
    /// current plan).
    pub plan: Vec<Vec<S>>,
    pub robustness: Option<S>,
    /// Critical `(occurrence, index)` of the combined trajectory.
    pub critical: Option<(OccId, usize)>,
    /// Groups activated during this step.
    pub activations: Vec<(OccId, usize)>,
    pub status: StepStatus,
    pub solve_ms: f64,
    pub iterations: usize,
    pub pivots: u64,
    pub updates: Vec<String>,
    pub warning: Option<String>,
}

/// Receding-horizon driver: step `i` pins `x_0 .. x_{i-1}`, applies queued
/// geometry updates, re-runs the lazy loop under the step allowance and
/// commits `x_i` from the best plan found.
#[derive(Debug, Clone)]
pub struct RhcRunner<S> {
    enc: EncodedScenario<S>,
    config: RhcConfig,
    step: usize,
    states: Vec<Vec<S>>,
    inputs: Vec<Vec<S>>,
    plan: Option<(Vec<Vec<S>>, Vec<Vec<S>>)>,
    pending: Vec<PredicateUpdate<S>>,
    events: Vec<StepEvent<S>>,
    usage: SolverUsage,
}

impl<S: Scalar> RhcRunner<S> {
    pub fn new(enc: EncodedScenario<S>, config: RhcConfig) -> Self {
        let x0 = enc.problem.x0.clone();
        RhcRunner {
            enc,
            config,
            step: 1,
            states: vec![x0],
            inputs: Vec::new(),
            plan: None,
            pending: Vec::new(),
            events: Vec::new(),
            usage: SolverUsage::default(),
        }
    }

    pub fn encoding(&self) -> &EncodedScenario<S> {
        &self.enc
    }

    pub fn config(&self) -> &RhcConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: RhcConfig) {
        self.config = config;
    }

    /// Next step to run, `1..=N+1`.
    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step > self.enc.horizon() + 1
    }

    pub fn executed_states(&self) -> &[Vec<S>] {
        &self.states
    }

    pub fn executed_inputs(&self) -> &[Vec<S>] {
        &self.inputs
    }

    /// Current combined plan (executed prefix plus planned remainder).
    pub fn plan(&self) -> Option<&(Vec<Vec<S>>, Vec<Vec<S>>)> {
        self.plan.as_ref()
    }

    pub fn events(&self) -> &[StepEvent<S>] {
        &self.events
    }

    /// Queues a geometry update; it takes effect at the start of
    /// `max(update.step, current step)`.
    pub fn queue_update(&mut self, update: PredicateUpdate<S>) {
        self.pending.push(update);
    }

    fn budget(&self) -> Budget {
        match self.config.clock {
            Clock::Simulated { seconds_per_pivot } => {
                let pivots = if seconds_per_pivot > 0.0 {
                    (self.config.step_deadline / seconds_per_pivot).floor()
                } else {
                    f64::MAX
                };
                Budget {
                    deadline: None,
                    max_pivots: Some(pivots.clamp(0.0, u64::MAX as f64) as u64),
                }
            }
            Clock::WallClock => Budget::until(
                Instant::now()
                    + std::time::Duration::from_secs_f64(self.config.step_deadline.max(0.0)),
            ),
        }
    }

    /// Runs one step and returns its event.
    pub fn step(&mut self) -> Result<StepEvent<S>, SynthesisError> {
        if self.is_done() {
            return Err(SynthesisError::Finished);
        }
        let i = self.step;
        let n = self.enc.horizon();
        let dt = self.enc.problem.system.dt;
        self.enc.fix_prefix(&self.states, &self.inputs)?;

        let mut updates = Vec::new();
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|u| u.step <= i);
        self.pending = later;
        for u in due {
            self.enc.update_predicate(&u.name, &u.predicate)?;
            updates.push(u.name);
        }

        let started = Instant::now();
        let before = self.enc.activations().len();
        let mut warning = None;
        let (status, iterations, pivots) = if i == n + 1 {
            (StepStatus::Done, 0, 0)
        } else {
            let cap = self
                .config
                .max_iterations
                .unwrap_or_else(|| default_cap(&self.enc));
            let budget = self.budget();
            let out = lazy_loop(&mut self.enc, cap, &budget)?;
            self.usage.pivots += out.usage.pivots;
            self.usage.nodes += out.usage.nodes;
            self.usage.solves += out.usage.solves;
            let status = match (&out.plan, out.status) {
                (None, _) => StepStatus::Held,
                (Some(_), SynthesisStatus::Feasible) => StepStatus::Feasible,
                (Some(_), _) if out.unrepairable => StepStatus::Unrepairable,
                (Some(_), _) => StepStatus::Infeasible,
            };
            if let Some(p) = out.plan {
                self.plan = Some(p);
            } else {
                warning = Some(match self.plan {
                    Some(_) => {
                        "no plan within the step allowance; holding the previous plan".to_string()
                    }
                    None => "no plan within the step allowance; applying zero input".to_string(),
                });
            }
            (status, out.iterations, out.usage.pivots)
        };
        let solve_ms = match self.config.clock {
            Clock::Simulated { seconds_per_pivot } => pivots as f64 * seconds_per_pivot * 1e3,
            Clock::WallClock => started.elapsed().as_secs_f64() * 1e3,
        };

        // commit x_i
        if i <= n {
            let k = i - 1;
            let (x_next, u_k) = match &self.plan {
                Some((xs, us)) => (xs[i].clone(), us[k].clone()),
                None => {
                    let zero = vec![S::zero(); self.enc.problem.system.input_dim()];
                    (self.enc.problem.system.step(&self.states[k], &zero), zero)
                }
            };
            self.states.push(x_next);
            self.inputs.push(u_k);
        }

        let combined = self.combined();
        let traj = Trajectory::new(combined.clone(), dt);
        let w = robustness::evaluate(
            &self.enc.problem.formula,
            self.enc.resized_predicates(),
            &traj,
            0,
        )
        .ok();
        let ny = self.enc.problem.system.outputs;
        let event = StepEvent {
            step: i,
            t: (i - 1) as f64 * dt,
            plan: combined.iter().map(|x| x[..ny].to_vec()).collect(),
            robustness: w.map(|w| w.value),
            critical: w.map(|w| (w.occurrence, w.index)),
            activations: self.enc.activations()[before..].to_vec(),
            status,
            solve_ms,
            iterations,
            pivots,
            updates,
            warning,
        };
        self.events.push(event.clone());
        self.step += 1;
        Ok(event)
    }

    /// Executed states followed by the rest of the current plan (or the
    /// executed states alone when there is no plan).
    pub fn combined(&self) -> Vec<Vec<S>> {
        let mut out = self.states.clone();
        if let Some((xs, _)) = &self.plan {
            out.extend(xs.iter().skip(self.states.len()).cloned());
        }
        out
    }

    /// Runs the remaining steps and summarizes the executed trajectory.
    pub fn run(&mut self) -> Result<SynthesisResult<S>, SynthesisError> {
        while !self.is_done() {
            self.step()?;
        }
        self.result()
    }

    /// Summary of the executed trajectory so far.
    pub fn result(&self) -> Result<SynthesisResult<S>, SynthesisError> {
        let dt = self.enc.problem.system.dt;
        let traj = Trajectory::new(self.combined(), dt);
        let r = robustness::evaluate(
            &self.enc.problem.formula,
            self.enc.resized_predicates(),
            &traj,
            0,
        )?;
        let o = robustness::evaluate(
            &self.enc.problem.formula,
            self.enc.original_predicates(),
            &traj,
            0,
        )?;
        let inputs = match &self.plan {
            Some((_, us)) if self.inputs.len() < us.len() => {
                let mut all = self.inputs.clone();
                all.extend(us.iter().skip(self.inputs.len()).cloned());
                all
            }
            _ => self.inputs.clone(),
        };
        Ok(SynthesisResult {
            status: if r.value >= S::zero() {
                SynthesisStatus::Feasible
            } else {
                SynthesisStatus::NoTrajectoryFound
            },
            objective: Some(self.enc.effort(&inputs)),
            trajectory: Some(traj),
            inputs: Some(inputs),
            iterations: self.usage.solves as usize,
            activations: self.enc.activations().to_vec(),
            robustness_resized: Some(r),
            robustness_original: Some(o),
            usage: self.usage,
        })
    }
}
