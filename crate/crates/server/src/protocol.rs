//! Websocket message schemas. Every frame is one JSON object; see
//! `docs/protocol.md` for the field-by-field description.

use serde::{Deserialize, Serialize};

use lazymtl::scenario::EventFile;
use lazymtl::synthesis::{StepStatus, SynthesisStatus};

pub const PROTOCOL_VERSION: u32 = 1;

/// Server to client. `seq` increases by one for every message broadcast to
/// all clients; replies to a single client (snapshot on connect, ack, error)
/// repeat the latest broadcast number instead of taking a new one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u32,
    pub seq: u64,
    /// Next receding-horizon step to run (`1..=N+1`, `N+2` once done).
    pub step: usize,
    #[serde(flatten)]
    pub body: ServerBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ServerBody {
    Snapshot(Snapshot),
    StepEvent(StepPayload),
    PlanUpdate(PlanUpdate),
    Warning(Warning),
    Done(DonePayload),
    Ack(Ack),
    Error(ErrorReply),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Only occurs positively (e.g. a goal): drawn shrunk.
    Safe,
    /// Occurs negated: drawn bloated.
    Unsafe,
    /// Runtime obstacle slot.
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateView {
    pub name: String,
    pub role: Role,
    /// False for a placeholder that has no geometry yet.
    pub in_use: bool,
    pub vertices: Vec<[f64; 2]>,
    /// Outline after resizing by the desired robustness.
    pub resized: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub scenario: String,
    pub formula: String,
    pub dt: f64,
    pub horizon: usize,
    pub robustness_target: f64,
    pub workspace: [[f64; 2]; 2],
    pub predicates: Vec<PredicateView>,
    /// Executed output positions `x_0 ..`.
    pub executed: Vec<[f64; 2]>,
    /// Full combined plan (executed prefix included).
    pub plan: Vec<[f64; 2]>,
    pub robustness: Option<f64>,
    pub paused: bool,
    pub speed: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critical {
    pub predicate: String,
    pub occurrence: usize,
    pub index: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub predicate: String,
    pub occurrence: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPayload {
    /// The step that just ran.
    pub ran: usize,
    pub t: f64,
    pub status: StepStatus,
    /// Number of leading `plan` entries already executed.
    pub executed: usize,
    pub plan: Vec<[f64; 2]>,
    pub robustness: Option<f64>,
    pub critical: Option<Critical>,
    pub activations: Vec<Activation>,
    pub iterations: usize,
    pub pivots: u64,
    pub solve_ms: f64,
    /// Predicates whose geometry changed at the start of this step.
    pub updates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanUpdate {
    pub reason: String,
    pub predicates: Vec<PredicateView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonePayload {
    pub status: SynthesisStatus,
    pub robustness_resized: f64,
    pub robustness_original: f64,
    pub objective: f64,
    /// Full executed states.
    pub trajectory: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Geometry changes of this session in the scripted-event format.
    pub events: EventFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    /// Echo of the client's `id`, if any.
    pub id: Option<String>,
    pub command: String,
    /// Predicate the command was bound to (e.g. the placeholder assigned to
    /// a new obstacle).
    pub predicate: Option<String>,
    /// Step at whose start the command takes effect.
    pub effective_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub id: Option<String>,
    pub message: String,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientCommand {
    pub v: u32,
    /// Optional client correlation id, echoed in the reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(flatten)]
    pub body: CommandBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommandBody {
    AddObstacle {
        vertices: Vec<[f64; 2]>,
    },
    UpdateObstacle {
        name: String,
        vertices: Vec<[f64; 2]>,
    },
    RemoveObstacle {
        name: String,
    },
    MoveGoal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        vertices: Vec<[f64; 2]>,
    },
    Pause,
    Resume,
    SetSpeed {
        speed: f64,
    },
    /// Restarts the run, optionally with a new scenario (TOML text).
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario: Option<String>,
    },
}

impl CommandBody {
    pub fn name(&self) -> &'static str {
        match self {
            CommandBody::AddObstacle { .. } => "add_obstacle",
            CommandBody::UpdateObstacle { .. } => "update_obstacle",
            CommandBody::RemoveObstacle { .. } => "remove_obstacle",
            CommandBody::MoveGoal { .. } => "move_goal",
            CommandBody::Pause => "pause",
            CommandBody::Resume => "resume",
            CommandBody::SetSpeed { .. } => "set_speed",
            CommandBody::Reset { .. } => "reset",
        }
    }
}
