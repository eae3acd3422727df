//! Lazy MILP synthesis of minimum-effort trajectories for discrete-time
//! linear systems under Metric Temporal Logic specifications.
//!
//! The planner solves a mixed-integer program that initially contains only
//! the dynamics and the effort objective. After each solve the trajectory is
//! monitored; the predicate occurrence and time index that realize the
//! (negative) robustness are switched on in the model, and the program is
//! re-solved. A receding-horizon driver reuses the same loop with a per-step
//! budget so predicate geometry can change mid-execution.
//!
//! All numerical modules are generic over [`Scalar`]; the aliases at the
//! crate root fix the common `f64` instantiation.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub mod dynamics;
pub mod encoding;
pub mod milp;
pub mod mtl;
pub mod predicate;
pub mod robustness;
pub mod scenario;
pub mod synthesis;

/// Floating-point type the numerical core is written against.
///
/// Blanket-implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant, panicking only for types that cannot
    /// represent finite doubles at all.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("scalar type cannot represent f64 literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

pub use mtl::{Formula, Interval, NnfFormula, OccId, Polarity, PredicateOccurrence};
pub use robustness::Witness;

pub type Predicate = predicate::Predicate<f64>;
pub type Trajectory = robustness::Trajectory<f64>;
pub type Trajectory32 = robustness::Trajectory<f32>;
pub type MilpModel = milp::Model<f64>;
pub type MilpSolution = milp::Solution<f64>;
pub type LinearSystem = dynamics::LinearSystem<f64>;
pub type UnicycleState = dynamics::UnicycleState<f64>;
pub type PlanningProblem = encoding::PlanningProblem<f64>;
pub type EncodedScenario = encoding::EncodedScenario<f64>;
pub type SynthesisResult = synthesis::SynthesisResult<f64>;
pub type RhcRunner = synthesis::RhcRunner<f64>;
