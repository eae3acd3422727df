//! The planner worker: a single thread that owns the receding-horizon run and
//! talks to network tasks only through queues. Commands arrive on one
//! channel; every client has an ordered outbound channel the worker writes
//! both broadcasts and direct replies to.

use std::collections::BTreeSet;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use tokio::sync::{mpsc::UnboundedSender, oneshot};

use lazymtl::encoding::EncodedScenario;
use lazymtl::mtl::Polarity;
use lazymtl::predicate::Predicate;
use lazymtl::scenario::{EventFile, PlaceholderSpec, PredicateSpec, Scenario, TimedEvent};
use lazymtl::synthesis::{PredicateUpdate, RhcConfig, RhcRunner, StepEvent, StepStatus};

use crate::protocol::*;
use crate::{ServerError, ServerOptions};

pub(crate) enum WorkerMsg {
    Connect(UnboundedSender<String>),
    Command {
        reply: UnboundedSender<String>,
        text: String,
    },
    Scenario(oneshot::Sender<Scenario>),
    Shutdown,
}

/// Tolerance for convexity and workspace containment checks on client
/// geometry.
const GEOMETRY_TOL: f64 = 1e-9;

struct Pending {
    name: String,
    predicate: Predicate<f64>,
    spec: PredicateSpec,
}

pub(crate) struct Worker {
    scenario: Scenario,
    scripted: Vec<(usize, Pending)>,
    opts: ServerOptions,
    runner: RhcRunner<f64>,
    clients: Vec<UnboundedSender<String>>,
    seq: u64,
    paused: bool,
    speed: f64,
    /// Acknowledged commands waiting for the next step boundary.
    pending: Vec<Pending>,
    /// Geometry changes applied so far, as replayable events.
    log: Vec<TimedEvent>,
    /// Placeholders bound to an obstacle (acknowledged, maybe not applied).
    bound: BTreeSet<String>,
    next_step_at: Instant,
    done_sent: bool,
}

fn build_runner(scenario: &Scenario, opts: &ServerOptions) -> Result<RhcRunner<f64>, ServerError> {
    let enc = EncodedScenario::encode(scenario.problem::<f64>()?)?;
    let config = RhcConfig {
        step_deadline: opts.deadline.unwrap_or(scenario.deadline),
        clock: opts.clock,
        max_iterations: opts.max_iterations,
    };
    Ok(RhcRunner::new(enc, config))
}

fn scripted_updates(
    scenario: &Scenario,
    events: &EventFile,
) -> Result<Vec<(usize, Pending)>, ServerError> {
    let updates: Vec<PredicateUpdate<f64>> = scenario.updates(events)?;
    Ok(updates
        .into_iter()
        .zip(&events.events)
        .map(|(u, e)| {
            (
                u.step,
                Pending {
                    name: u.name,
                    predicate: u.predicate,
                    spec: e.predicate.clone(),
                },
            )
        })
        .collect())
}

fn xy(v: &[f64]) -> [f64; 2] {
    [v[0], v.get(1).copied().unwrap_or(0.0)]
}

impl Worker {
    pub(crate) fn new(
        scenario: Scenario,
        events: &EventFile,
        opts: ServerOptions,
    ) -> Result<Self, ServerError> {
        if scenario.placeholders.is_empty() {
            return Err(ServerError::NoPlaceholder);
        }
        if scenario.workspace.lo.len() != 2 {
            return Err(ServerError::NotPlanar);
        }
        let runner = build_runner(&scenario, &opts)?;
        let scripted = scripted_updates(&scenario, events)?;
        Ok(Worker {
            scripted,
            runner,
            clients: Vec::new(),
            seq: 0,
            paused: opts.start_paused,
            speed: opts.speed,
            pending: Vec::new(),
            log: Vec::new(),
            bound: BTreeSet::new(),
            next_step_at: Instant::now(),
            done_sent: false,
            scenario,
            opts,
        })
    }

    fn period(&self) -> Duration {
        let base = self
            .opts
            .step_period
            .unwrap_or_else(|| Duration::from_secs_f64(self.scenario.dt()));
        base.div_f64(self.speed)
    }

    fn stepping(&self) -> bool {
        !self.paused && !self.runner.is_done()
    }

    pub(crate) fn run(mut self, rx: Receiver<WorkerMsg>) {
        self.next_step_at = Instant::now() + self.period();
        loop {
            let msg = if self.stepping() {
                let wait = self.next_step_at.saturating_duration_since(Instant::now());
                rx.recv_timeout(wait)
            } else {
                rx.recv().map_err(|_| RecvTimeoutError::Disconnected)
            };
            match msg {
                Ok(WorkerMsg::Connect(tx)) => {
                    let snap = self.message(ServerBody::Snapshot(self.snapshot()));
                    if tx.send(snap).is_ok() {
                        self.clients.push(tx);
                    }
                }
                Ok(WorkerMsg::Command { reply, text }) => self.command(&reply, &text),
                Ok(WorkerMsg::Scenario(tx)) => {
                    let _ = tx.send(self.scenario.clone());
                }
                Ok(WorkerMsg::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {
                    self.step();
                    self.next_step_at += self.period();
                    // do not try to catch up after a slow step
                    let now = Instant::now();
                    if self.next_step_at < now {
                        self.next_step_at = now;
                    }
                }
            }
        }
    }

    fn message(&self, body: ServerBody) -> String {
        let m = ServerMessage {
            v: PROTOCOL_VERSION,
            seq: self.seq,
            step: self.runner.current_step(),
            body,
        };
        serde_json::to_string(&m).expect("messages serialize")
    }

    fn broadcast(&mut self, body: ServerBody) {
        self.seq += 1;
        let text = self.message(body);
        self.clients.retain(|c| c.send(text.clone()).is_ok());
    }

    fn reply(&self, to: &UnboundedSender<String>, body: ServerBody) {
        let _ = to.send(self.message(body));
    }

    fn role(&self, name: &str) -> Role {
        if self.scenario.is_placeholder(name) {
            return Role::Placeholder;
        }
        let unsafe_ = self
            .runner
            .encoding()
            .problem
            .formula
            .occurrences
            .iter()
            .any(|o| o.name == name && o.polarity == Polarity::Unsafe);
        if unsafe_ {
            Role::Unsafe
        } else {
            Role::Safe
        }
    }

    fn views(&self) -> Vec<PredicateView> {
        let rho = self.scenario.robustness;
        let applied: BTreeSet<&str> = self.log.iter().map(|e| e.predicate.name.as_str()).collect();
        self.runner
            .encoding()
            .problem
            .predicates
            .iter()
            .map(|p| {
                let role = self.role(&p.name);
                let resized = match role {
                    Role::Safe => p.offset(-rho),
                    Role::Unsafe | Role::Placeholder => p.offset(rho),
                };
                let in_use = role != Role::Placeholder
                    || (applied.contains(p.name.as_str()) && self.bound.contains(&p.name));
                PredicateView {
                    name: p.name.clone(),
                    role,
                    in_use,
                    vertices: p.vertices_2d(),
                    resized: resized.vertices_2d(),
                }
            })
            .collect()
    }

    fn snapshot(&self) -> Snapshot {
        let enc = self.runner.encoding();
        let combined = self.runner.combined();
        let rob = lazymtl::robustness::evaluate(
            &enc.problem.formula,
            enc.resized_predicates(),
            &lazymtl::robustness::Trajectory::new(combined.clone(), self.scenario.dt()),
            0,
        )
        .ok()
        .filter(|_| self.runner.plan().is_some() || self.runner.is_done());
        let ws = &self.scenario.workspace;
        Snapshot {
            scenario: self.scenario.name.clone(),
            formula: enc.problem.formula.formula.to_string(),
            dt: self.scenario.dt(),
            horizon: enc.horizon(),
            robustness_target: self.scenario.robustness,
            workspace: [[ws.lo[0], ws.lo[1]], [ws.hi[0], ws.hi[1]]],
            predicates: self.views(),
            executed: self
                .runner
                .executed_states()
                .iter()
                .map(|s| xy(s))
                .collect(),
            plan: combined.iter().map(|s| xy(s)).collect(),
            robustness: rob.map(|w| w.value),
            paused: self.paused,
            speed: self.speed,
            done: self.runner.is_done(),
        }
    }

    fn step(&mut self) {
        if self.runner.is_done() {
            return;
        }
        let i = self.runner.current_step();
        let dt = self.scenario.dt();
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.scripted)
            .into_iter()
            .partition(|(s, _)| *s <= i);
        self.scripted = later;
        let mut changed = Vec::new();
        for p in due
            .into_iter()
            .map(|(_, p)| p)
            .chain(std::mem::take(&mut self.pending))
        {
            if self.scenario.is_placeholder(&p.name) {
                self.bound.insert(p.name.clone());
            }
            self.runner.queue_update(PredicateUpdate {
                step: i,
                name: p.name.clone(),
                predicate: p.predicate,
            });
            self.log.push(TimedEvent {
                t: i as f64 * dt,
                predicate: p.spec,
            });
            changed.push(p.name);
        }
        let ev = match self.runner.step() {
            Ok(ev) => ev,
            Err(e) => {
                self.broadcast(ServerBody::Warning(Warning {
                    message: format!("step {i} failed: {e}"),
                }));
                return;
            }
        };
        if !changed.is_empty() {
            self.broadcast(ServerBody::PlanUpdate(PlanUpdate {
                reason: format!("geometry of {} applied at step {i}", changed.join(", ")),
                predicates: self.views(),
            }));
        }
        let warning = ev.warning.clone();
        let payload = self.step_payload(&ev);
        self.broadcast(ServerBody::StepEvent(payload));
        if let Some(message) = warning {
            self.broadcast(ServerBody::Warning(Warning { message }));
        }
        if ev.status == StepStatus::Done && !self.done_sent {
            self.done_sent = true;
            self.finish();
        }
    }

    fn step_payload(&self, ev: &StepEvent<f64>) -> StepPayload {
        let occs = &self.runner.encoding().problem.formula.occurrences;
        let name = |o: usize| occs[o].name.clone();
        StepPayload {
            ran: ev.step,
            t: ev.t,
            status: ev.status,
            executed: self.runner.executed_states().len(),
            plan: ev.plan.iter().map(|p| xy(p)).collect(),
            robustness: ev.robustness,
            critical: ev.critical.map(|(o, k)| Critical {
                predicate: name(o),
                occurrence: o,
                index: k,
                t: k as f64 * self.scenario.dt(),
            }),
            activations: ev
                .activations
                .iter()
                .map(|&(o, k)| Activation {
                    predicate: name(o),
                    occurrence: o,
                    index: k,
                })
                .collect(),
            iterations: ev.iterations,
            pivots: ev.pivots,
            solve_ms: ev.solve_ms,
            updates: ev.updates.clone(),
        }
    }

    fn events(&self) -> EventFile {
        EventFile {
            events: self.log.clone(),
        }
    }

    fn finish(&mut self) {
        let events = self.events();
        if let Some(path) = &self.opts.record {
            if let Err(e) = std::fs::write(path, events.to_json()) {
                self.broadcast(ServerBody::Warning(Warning {
                    message: format!("writing {}: {e}", path.display()),
                }));
            }
        }
        let body = match self.runner.result() {
            Ok(r) => ServerBody::Done(DonePayload {
                status: r.status,
                robustness_resized: r.robustness_resized.map_or(f64::NAN, |w| w.value),
                robustness_original: r.robustness_original.map_or(f64::NAN, |w| w.value),
                objective: r.objective.unwrap_or(f64::NAN),
                trajectory: self.runner.combined(),
                inputs: self.runner.executed_inputs().to_vec(),
                events,
            }),
            Err(e) => ServerBody::Warning(Warning {
                message: format!("summarizing the run failed: {e}"),
            }),
        };
        self.broadcast(body);
    }

    fn command(&mut self, reply: &UnboundedSender<String>, text: &str) {
        let cmd: ClientCommand = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(text)
                    .ok()
                    .and_then(|v| v.get("id")?.as_str().map(str::to_string));
                self.reply(
                    reply,
                    ServerBody::Error(ErrorReply {
                        id,
                        message: format!("malformed command: {e}"),
                    }),
                );
                return;
            }
        };
        if cmd.v != PROTOCOL_VERSION {
            self.reply(
                reply,
                ServerBody::Error(ErrorReply {
                    id: cmd.id,
                    message: format!(
                        "unsupported protocol version {} (server speaks {PROTOCOL_VERSION})",
                        cmd.v
                    ),
                }),
            );
            return;
        }
        let kind = cmd.body.name();
        match self.apply(cmd.body) {
            Ok((predicate, effective_step)) => self.reply(
                reply,
                ServerBody::Ack(Ack {
                    id: cmd.id,
                    command: kind.to_string(),
                    predicate,
                    effective_step,
                }),
            ),
            Err(message) => self.reply(
                reply,
                ServerBody::Error(ErrorReply {
                    id: cmd.id,
                    message,
                }),
            ),
        }
    }

    /// Validates and queues (or applies) a command. Returns the bound
    /// predicate and the effective step.
    fn apply(&mut self, body: CommandBody) -> Result<(Option<String>, Option<usize>), String> {
        let boundary = Some(self.runner.current_step());
        match body {
            CommandBody::AddObstacle { vertices } => {
                self.ensure_running()?;
                let name = self
                    .scenario
                    .placeholders
                    .iter()
                    .find(|p| !self.bound.contains(&p.name))
                    .map(|p| p.name.clone())
                    .ok_or_else(|| {
                        format!(
                            "placeholder budget exhausted ({} obstacles)",
                            self.scenario.placeholders.len()
                        )
                    })?;
                let pending = self.polygon(&name, vertices)?;
                self.bound.insert(name.clone());
                self.pending.push(pending);
                Ok((Some(name), boundary))
            }
            CommandBody::UpdateObstacle { name, vertices } => {
                self.ensure_running()?;
                match self.role(&name) {
                    Role::Placeholder if !self.bound.contains(&name) => {
                        return Err(format!("obstacle `{name}` has not been added"))
                    }
                    Role::Safe => return Err(format!("`{name}` is not an obstacle")),
                    _ => {}
                }
                let pending = self.polygon(&name, vertices)?;
                self.pending.push(pending);
                Ok((Some(name), boundary))
            }
            CommandBody::RemoveObstacle { name } => {
                self.ensure_running()?;
                if self.role(&name) == Role::Safe {
                    return Err(format!("`{name}` is not an obstacle"));
                }
                if !self.known(&name) {
                    return Err(format!("unknown predicate `{name}`"));
                }
                let faces = self.faces(&name);
                let far: Predicate<f64> = self
                    .scenario
                    .placeholder_geometry(&PlaceholderSpec {
                        name: name.clone(),
                        faces,
                    })
                    .map_err(|e| e.to_string())?;
                self.bound.remove(&name);
                self.pending.push(Pending {
                    spec: PredicateSpec::from_predicate(&far),
                    name: name.clone(),
                    predicate: far,
                });
                Ok((Some(name), boundary))
            }
            CommandBody::MoveGoal { name, vertices } => {
                self.ensure_running()?;
                let name = match name {
                    Some(n) => n,
                    None => self.default_goal()?,
                };
                if !self.known(&name) || self.role(&name) != Role::Safe {
                    return Err(format!("`{name}` is not a goal predicate"));
                }
                let pending = self.polygon(&name, vertices)?;
                let rho = self.scenario.robustness;
                let shrunk = pending
                    .predicate
                    .offset(-rho)
                    .chebyshev_radius(1e6)
                    .map_err(|e| e.to_string())?;
                if shrunk.is_none_or(|r| r <= 0.0) {
                    return Err(format!(
                        "goal is empty after shrinking by the robustness target {rho}"
                    ));
                }
                self.pending.push(pending);
                Ok((Some(name), boundary))
            }
            CommandBody::Pause => {
                self.paused = true;
                Ok((None, None))
            }
            CommandBody::Resume => {
                if self.paused {
                    self.paused = false;
                    self.next_step_at = Instant::now() + self.period();
                }
                Ok((None, None))
            }
            CommandBody::SetSpeed { speed } => {
                if !(speed > 0.0 && speed.is_finite()) {
                    return Err(format!("speed must be positive, got {speed}"));
                }
                let now = Instant::now();
                let left = self.next_step_at.saturating_duration_since(now);
                self.next_step_at = now + left.mul_f64(self.speed / speed);
                self.speed = speed;
                Ok((None, None))
            }
            CommandBody::Reset { scenario } => {
                let (new, scripted) = match scenario {
                    Some(text) => {
                        let s = Scenario::from_toml(&text).map_err(|e| e.to_string())?;
                        if s.placeholders.is_empty() {
                            return Err(ServerError::NoPlaceholder.to_string());
                        }
                        if s.workspace.lo.len() != 2 {
                            return Err(ServerError::NotPlanar.to_string());
                        }
                        (s, None)
                    }
                    None => (self.scenario.clone(), Some(&self.opts.events)),
                };
                let runner = build_runner(&new, &self.opts).map_err(|e| e.to_string())?;
                self.scripted = match scripted {
                    Some(ev) => scripted_updates(&new, ev).map_err(|e| e.to_string())?,
                    None => Vec::new(),
                };
                self.scenario = new;
                self.runner = runner;
                self.pending.clear();
                self.log.clear();
                self.bound.clear();
                self.done_sent = false;
                self.next_step_at = Instant::now() + self.period();
                let snap = self.snapshot();
                self.broadcast(ServerBody::Snapshot(snap));
                Ok((None, Some(1)))
            }
        }
    }

    fn ensure_running(&self) -> Result<(), String> {
        if self.runner.is_done() {
            Err("the run has finished; send reset to start over".into())
        } else {
            Ok(())
        }
    }

    fn known(&self, name: &str) -> bool {
        self.runner.encoding().problem.predicate(name).is_some()
    }

    fn faces(&self, name: &str) -> usize {
        self.scenario
            .placeholders
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.faces)
            .or_else(|| {
                self.runner
                    .encoding()
                    .problem
                    .predicate(name)
                    .map(|p| p.faces())
            })
            .unwrap_or(0)
    }

    fn default_goal(&self) -> Result<String, String> {
        let goals: Vec<String> = self
            .runner
            .encoding()
            .problem
            .predicates
            .iter()
            .filter(|p| self.role(&p.name) == Role::Safe)
            .map(|p| p.name.clone())
            .collect();
        match goals.as_slice() {
            [one] => Ok(one.clone()),
            [] => Err("the scenario has no goal predicate".into()),
            _ => Err(format!(
                "several goal predicates ({}); name one",
                goals.join(", ")
            )),
        }
    }

    /// Checks client geometry: a convex polygon with positive area inside
    /// the workspace, with no more faces than were encoded for `name`.
    fn polygon(&self, name: &str, vertices: Vec<[f64; 2]>) -> Result<Pending, String> {
        if vertices.len() < 3 {
            return Err("a polygon needs at least 3 vertices".into());
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err("vertices must be finite".into());
        }
        let ws = &self.scenario.workspace;
        let outside = vertices.iter().any(|v| {
            (0..2).any(|d| v[d] < ws.lo[d] - GEOMETRY_TOL || v[d] > ws.hi[d] + GEOMETRY_TOL)
        });
        if outside {
            return Err("polygon leaves the workspace".into());
        }
        let pred = Predicate::from_vertices_2d(name, &vertices).map_err(|e| e.to_string())?;
        let scale = vertices
            .iter()
            .flatten()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        if vertices
            .iter()
            .any(|v| pred.signed_distance(v).abs() > GEOMETRY_TOL * scale)
        {
            return Err("polygon is not convex".into());
        }
        let faces = self.faces(name);
        if pred.faces() > faces {
            return Err(format!(
                "polygon has {} edges but `{name}` allows at most {faces}",
                pred.faces()
            ));
        }
        Ok(Pending {
            name: name.to_string(),
            predicate: pred,
            spec: PredicateSpec::from_vertices(name, vertices),
        })
    }
}
