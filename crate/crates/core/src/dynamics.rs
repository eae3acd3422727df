//! Discrete-time linear models and the unicycle tracking layer.

use serde::Serialize;
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("sample time must be positive, got {0}")]
    SampleTime(f64),
    #[error(
        "feedback linearization singular at t = {t:.3} s (speed {speed:.2e} below {v_min:.1e})"
    )]
    Singular { t: f64, speed: f64, v_min: f64 },
    #[error("need at least {MIN_SUBSTEPS} integration substeps, got {0}")]
    Substeps(usize),
}

/// `x_{k+1} = A x_k + B u_k`. The first `outputs` state components are the
/// coordinates predicates are evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearSystem<S> {
    pub a: Vec<Vec<S>>,
    pub b: Vec<Vec<S>>,
    pub dt: f64,
    pub outputs: usize,
}

impl<S: Scalar> LinearSystem<S> {
    pub fn new(
        a: Vec<Vec<S>>,
        b: Vec<Vec<S>>,
        dt: f64,
        outputs: usize,
    ) -> Result<Self, DynamicsError> {
        if !(dt > 0.0) {
            return Err(DynamicsError::SampleTime(dt));
        }
        let nx = a.len();
        if a.iter().any(|r| r.len() != nx) {
            return Err(DynamicsError::Dimension("A must be square".into()));
        }
        if b.len() != nx {
            return Err(DynamicsError::Dimension(format!(
                "B has {} rows, A has {nx}",
                b.len()
            )));
        }
        let nu = b.first().map_or(0, Vec::len);
        if b.iter().any(|r| r.len() != nu) {
            return Err(DynamicsError::Dimension("B rows differ in length".into()));
        }
        if outputs > nx {
            return Err(DynamicsError::Dimension(format!(
                "{outputs} outputs exceed {nx} states"
            )));
        }
        Ok(LinearSystem { a, b, dt, outputs })
    }

    pub fn state_dim(&self) -> usize {
        self.a.len()
    }

    pub fn input_dim(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    pub fn step(&self, x: &[S], u: &[S]) -> Vec<S> {
        (0..self.state_dim())
            .map(|i| {
                let ax = self.a[i]
                    .iter()
                    .zip(x)
                    .fold(S::zero(), |s, (&a, &v)| s + a * v);
                self.b[i].iter().zip(u).fold(ax, |s, (&b, &v)| s + b * v)
            })
            .collect()
    }

    /// States `x_0 .. x_N` for inputs `u_0 .. u_{N-1}`.
    pub fn simulate(&self, x0: &[S], inputs: &[Vec<S>]) -> Vec<Vec<S>> {
        let mut out = Vec::with_capacity(inputs.len() + 1);
        out.push(x0.to_vec());
        for u in inputs {
            let next = self.step(out.last().expect("non-empty"), u);
            out.push(next);
        }
        out
    }
}

/// Planar double integrator, state `(x, y, vx, vy)`, input acceleration
/// `(ux, uy)`, discretized exactly under zero-order hold.
pub fn double_integrator_2d<S: Scalar>(dt: f64) -> Result<LinearSystem<S>, DynamicsError> {
    let z = S::zero();
    let o = S::one();
    let h = S::lit(dt);
    let h2 = S::lit(dt * dt / 2.0);
    LinearSystem::new(
        vec![
            vec![o, z, h, z],
            vec![z, o, z, h],
            vec![z, z, o, z],
            vec![z, z, z, o],
        ],
        vec![vec![h2, z], vec![z, h2], vec![h, z], vec![z, h]],
        dt,
        2,
    )
}

/// Unicycle with speed state: `x' = v cos(theta)`, `y' = v sin(theta)`,
/// `theta' = omega`, `v' = a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnicycleState<S> {
    pub x: S,
    pub y: S,
    pub theta: S,
    pub v: S,
}

impl<S: Scalar> UnicycleState<S> {
    /// Unicycle matching a double-integrator state `(x, y, vx, vy)`.
    pub fn from_double_integrator(s: &[S]) -> Self {
        UnicycleState {
            x: s[0],
            y: s[1],
            theta: s[3].atan2(s[2]),
            v: s[2].hypot(s[3]),
        }
    }

    fn deriv(&self, accel: S, omega: S) -> Self {
        UnicycleState {
            x: self.v * self.theta.cos(),
            y: self.v * self.theta.sin(),
            theta: omega,
            v: accel,
        }
    }

    fn axpy(&self, h: S, d: &Self) -> Self {
        UnicycleState {
            x: self.x + h * d.x,
            y: self.y + h * d.y,
            theta: self.theta + h * d.theta,
            v: self.v + h * d.v,
        }
    }
}

/// Controls `(v', omega)` that make the unicycle position follow the planar
/// acceleration `u`: `(v', v omega) = R(-theta) u`.
pub fn feedback_linearize<S: Scalar>(
    state: &UnicycleState<S>,
    u: [S; 2],
    v_min: S,
) -> Option<(S, S)> {
    if state.v.abs() < v_min {
        return None;
    }
    let (s, c) = state.theta.sin_cos();
    let accel = c * u[0] + s * u[1];
    let omega = (-s * u[0] + c * u[1]) / state.v;
    Some((accel, omega))
}

/// Differential-drive wheel speeds `(right, left)` for half axle length `d`.
pub fn wheel_speeds<S: Scalar>(v: S, omega: S, half_axle: S) -> (S, S) {
    (v + half_axle * omega, v - half_axle * omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingSample<S> {
    pub t: f64,
    pub state: UnicycleState<S>,
    pub omega: S,
    pub wheel_right: S,
    pub wheel_left: S,
}

#[derive(Debug, Clone, Copy)]
pub struct TrackingOptions<S> {
    /// RK4 substeps per planner interval, at least [`MIN_SUBSTEPS`].
    pub substeps: usize,
    pub v_min: S,
    pub half_axle: S,
}

pub const MIN_SUBSTEPS: usize = 10;

impl<S: Scalar> Default for TrackingOptions<S> {
    fn default() -> Self {
        TrackingOptions {
            substeps: 20,
            v_min: S::lit(1e-3),
            half_axle: S::lit(0.1),
        }
    }
}

/// Unicycle run: one sample per planner index (`N + 1`) and the substep trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tracking<S> {
    pub samples: Vec<TrackingSample<S>>,
    pub trace: Vec<TrackingSample<S>>,
}

fn rk4<S: Scalar, E>(
    s: &UnicycleState<S>,
    h: S,
    f: impl Fn(&UnicycleState<S>) -> Result<UnicycleState<S>, E>,
) -> Result<UnicycleState<S>, E> {
    let half = S::lit(0.5);
    let two = S::lit(2.0);
    let k1 = f(s)?;
    let k2 = f(&s.axpy(h * half, &k1))?;
    let k3 = f(&s.axpy(h * half, &k2))?;
    let k4 = f(&s.axpy(h, &k3))?;
    let sum = UnicycleState {
        x: k1.x + two * k2.x + two * k3.x + k4.x,
        y: k1.y + two * k2.y + two * k3.y + k4.y,
        theta: k1.theta + two * k2.theta + two * k3.theta + k4.theta,
        v: k1.v + two * k2.v + two * k3.v + k4.v,
    };
    Ok(s.axpy(h * S::lit(1.0 / 6.0), &sum))
}

/// Integrates the unicycle under constant `(v', omega)` for `duration`.
pub fn integrate_unicycle<S: Scalar>(
    initial: UnicycleState<S>,
    accel: S,
    omega: S,
    duration: f64,
    substeps: usize,
) -> UnicycleState<S> {
    let h = S::lit(duration / substeps.max(1) as f64);
    let mut s = initial;
    for _ in 0..substeps.max(1) {
        s = rk4(&s, h, |st| Ok::<_, ()>(st.deriv(accel, omega))).unwrap_or(s);
    }
    s
}

/// Drives a unicycle with the feedback-linearized version of a
/// double-integrator input sequence (held constant over each sample) and
/// integrates with RK4.
pub fn track<S: Scalar>(
    x0: &[S],
    inputs: &[Vec<S>],
    dt: f64,
    opts: &TrackingOptions<S>,
) -> Result<Tracking<S>, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::SampleTime(dt));
    }
    if opts.substeps < MIN_SUBSTEPS {
        return Err(DynamicsError::Substeps(opts.substeps));
    }
    if x0.len() < 4 || inputs.iter().any(|u| u.len() < 2) {
        return Err(DynamicsError::Dimension(
            "tracking needs (x, y, vx, vy) states and 2-D inputs".into(),
        ));
    }
    let h = dt / opts.substeps as f64;
    let mut s = UnicycleState::from_double_integrator(x0);
    let singular = |t: f64, st: &UnicycleState<S>| DynamicsError::Singular {
        t,
        speed: st.v.as_f64(),
        v_min: opts.v_min.as_f64(),
    };
    let sample = |t: f64, st: UnicycleState<S>, u: Option<&Vec<S>>| {
        let omega = match u {
            Some(u) => {
                feedback_linearize(&st, [u[0], u[1]], opts.v_min)
                    .ok_or_else(|| singular(t, &st))?
                    .1
            }
            None => S::zero(),
        };
        let (wheel_right, wheel_left) = wheel_speeds(st.v, omega, opts.half_axle);
        Ok::<_, DynamicsError>(TrackingSample {
            t,
            state: st,
            omega,
            wheel_right,
            wheel_left,
        })
    };
    let mut samples = Vec::with_capacity(inputs.len() + 1);
    let mut trace = Vec::with_capacity(inputs.len() * opts.substeps + 1);
    for (k, u) in inputs.iter().enumerate() {
        let uu = [u[0], u[1]];
        for j in 0..opts.substeps {
            let t = k as f64 * dt + j as f64 * h;
            let here = sample(t, s, Some(u))?;
            if j == 0 {
                samples.push(here);
            }
            trace.push(here);
            s = rk4(&s, S::lit(h), |st| {
                let (a, w) =
                    feedback_linearize(st, uu, opts.v_min).ok_or_else(|| singular(t, st))?;
                Ok(st.deriv(a, w))
            })?;
        }
    }
    let last = sample(inputs.len() as f64 * dt, s, inputs.last())?;
    samples.push(last);
    trace.push(last);
    Ok(Tracking { samples, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn double_integrator_matrices() {
        let sys = double_integrator_2d::<f64>(0.5).unwrap();
        assert_eq!(sys.a[0], vec![1.0, 0.0, 0.5, 0.0]);
        assert_eq!(sys.a[1], vec![0.0, 1.0, 0.0, 0.5]);
        assert_eq!(sys.b[0], vec![0.125, 0.0]);
        assert_eq!(sys.b[3], vec![0.0, 0.5]);
        assert_eq!((sys.state_dim(), sys.input_dim(), sys.outputs), (4, 2, 2));
        assert!(double_integrator_2d::<f64>(0.0).is_err());
    }

    #[test]
    fn constant_acceleration_is_exact() {
        let sys = double_integrator_2d::<f64>(0.5).unwrap();
        let xs = sys.simulate(&[0.0, 0.0, 1.0, 0.0], &vec![vec![2.0, -1.0]; 4]);
        let t = 2.0;
        assert_abs_diff_eq!(xs[4][0], t + t * t, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[4][1], -0.5 * t * t, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[4][2], 1.0 + 2.0 * t, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(LinearSystem::<f64>::new(vec![vec![1.0, 0.0]], vec![vec![1.0]], 1.0, 1).is_err());
        assert!(
            LinearSystem::<f64>::new(vec![vec![1.0]], vec![vec![1.0], vec![1.0]], 1.0, 1).is_err()
        );
        assert!(LinearSystem::<f64>::new(vec![vec![1.0]], vec![vec![1.0]], 1.0, 2).is_err());
    }

    #[test]
    fn feedback_linearization_singularity() {
        let s = UnicycleState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            v: 0.0,
        };
        assert!(feedback_linearize(&s, [1.0, 0.0], 1e-3).is_none());
        let err = track(
            &[0.0, 0.0, 0.0, 0.0],
            &[vec![1.0, 0.0]],
            0.5,
            &TrackingOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::Singular { .. }));
    }

    #[test]
    fn wheel_speed_mapping() {
        assert_eq!(wheel_speeds(1.0, 2.0, 0.25), (1.5, 0.5));
    }

    #[test]
    fn straight_line_tracking() {
        let samples = track(
            &[0.0, 0.0, 1.0, 0.0],
            &vec![vec![0.5, 0.0]; 4],
            0.5,
            &TrackingOptions::default(),
        )
        .unwrap()
        .samples;
        assert_eq!(samples.len(), 5);
        let last = samples[4].state;
        assert_abs_diff_eq!(last.x, 2.0 + 0.25 * 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(last.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(last.v, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn one_step_from_rest() {
        let sys = double_integrator_2d::<f64>(0.5).unwrap();
        assert_eq!(sys.step(&[0.0; 4], &[1.0, 0.0]), vec![0.125, 0.0, 0.5, 0.0]);
        assert_eq!(
            sys.step(&[1.0, 2.0, 0.5, -1.0], &[0.0, 0.0]),
            vec![1.25, 1.5, 0.5, -1.0]
        );
        let xs = sys.simulate(&[0.0, 0.0, 0.3, 0.1], &[vec![1.0, -2.0], vec![-1.0, 2.0]]);
        assert_abs_diff_eq!(xs[2][2], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(xs[2][3], 0.1, epsilon = 1e-15);
    }

    /// `exp([[A, B], [0, 0]] dt)` by a long Taylor series.
    fn augmented_exp(a: &[Vec<f64>], b: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
        let (n, m) = (a.len(), b[0].len());
        let w = n + m;
        let mut g = vec![vec![0.0; w]; w];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = a[i][j] * dt;
            }
            for j in 0..m {
                g[i][n + j] = b[i][j] * dt;
            }
        }
        let mut out: Vec<Vec<f64>> = (0..w)
            .map(|i| (0..w).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut term = out.clone();
        for k in 1..30 {
            term = (0..w)
                .map(|i| {
                    (0..w)
                        .map(|j| (0..w).map(|l| term[i][l] * g[l][j]).sum::<f64>() / k as f64)
                        .collect()
                })
                .collect();
            for i in 0..w {
                for j in 0..w {
                    out[i][j] += term[i][j];
                }
            }
        }
        out
    }

    #[test]
    fn zoh_matches_matrix_exponential() {
        let mut ac = vec![vec![0.0; 4]; 4];
        ac[0][2] = 1.0;
        ac[1][3] = 1.0;
        let mut bc = vec![vec![0.0; 2]; 4];
        bc[2][0] = 1.0;
        bc[3][1] = 1.0;
        for dt in [0.1, 0.5, 1.3] {
            let sys = double_integrator_2d::<f64>(dt).unwrap();
            let e = augmented_exp(&ac, &bc, dt);
            for i in 0..4 {
                for j in 0..4 {
                    assert_abs_diff_eq!(sys.a[i][j], e[i][j], epsilon = 1e-12);
                }
                for j in 0..2 {
                    assert_abs_diff_eq!(sys.b[i][j], e[i][4 + j], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn linearizing_control_examples() {
        let at = |theta: f64, v: f64| UnicycleState {
            x: 0.0,
            y: 0.0,
            theta,
            v,
        };
        assert_eq!(
            feedback_linearize(&at(0.0, 1.0), [1.0, 0.0], 1e-3),
            Some((1.0, 0.0))
        );
        assert_eq!(
            feedback_linearize(&at(0.0, 1.0), [0.0, 1.0], 1e-3),
            Some((0.0, 1.0))
        );
        let (acc, w) =
            feedback_linearize(&at(std::f64::consts::FRAC_PI_2, 2.0), [0.0, 1.0], 1e-3).unwrap();
        assert_abs_diff_eq!(acc, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn wheel_speed_examples() {
        assert_eq!(wheel_speeds(1.0, 0.0, 0.1), (1.0, 1.0));
        assert_eq!(wheel_speeds(0.0, 1.0, 0.05), (0.05, -0.05));
    }

    #[test]
    fn coasting_is_a_straight_line() {
        let run = track(
            &[0.0, 0.0, 1.0, 0.0],
            &vec![vec![0.0, 0.0]; 6],
            0.5,
            &TrackingOptions::default(),
        )
        .unwrap();
        for s in &run.trace {
            assert_abs_diff_eq!(s.state.x, s.t, epsilon = 1e-12);
            assert_abs_diff_eq!(s.state.y, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_turn_is_a_circle() {
        let (v, w) = (1.5f64, 0.75);
        let r = v / w;
        let start = UnicycleState {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            v,
        };
        for t in [0.5, 2.0, 6.0] {
            let s = integrate_unicycle(start, 0.0, w, t, 200);
            // centre at (0, r)
            assert_abs_diff_eq!(s.x.hypot(s.y - r), r, epsilon = 1e-9);
            assert_abs_diff_eq!(s.x, r * (w * t).sin(), epsilon = 1e-9);
            assert_abs_diff_eq!(s.theta, w * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn too_few_substeps() {
        let opts = TrackingOptions {
            substeps: 5,
            ..TrackingOptions::default()
        };
        let err = track(&[0.0, 0.0, 1.0, 0.0], &[vec![0.0, 0.0]], 0.5, &opts).unwrap_err();
        assert!(matches!(err, DynamicsError::Substeps(5)));
    }

    proptest! {
        #[test]
        fn wheel_speeds_invert(v in -3.0f64..3.0, w in -5.0f64..5.0, d in 0.01f64..0.5) {
            let (r, l) = wheel_speeds(v, w, d);
            prop_assert!(((r + l) / 2.0 - v).abs() < 1e-12);
            prop_assert!(((r - l) / (2.0 * d) - w).abs() < 1e-9);
        }

        #[test]
        fn tracks_double_integrator(
            heading in -3.0f64..3.0,
            speed in 0.5f64..2.0,
            us in proptest::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 1..10),
        ) {
            let dt = 0.5;
            let x0 = [0.0, 0.0, speed * heading.cos(), speed * heading.sin()];
            let inputs: Vec<Vec<f64>> = us.iter().map(|&(a, b)| vec![a, b]).collect();
            let sys = double_integrator_2d::<f64>(dt).unwrap();
            let plan = sys.simulate(&x0, &inputs);
            // velocity is linear within a step, so check the closest approach
            // to zero along each segment
            let slow = plan.windows(2).any(|w| {
                let (p, q) = ([w[0][2], w[0][3]], [w[1][2] - w[0][2], w[1][3] - w[0][3]]);
                let len2 = q[0] * q[0] + q[1] * q[1];
                let s = if len2 > 0.0 { (-(p[0] * q[0] + p[1] * q[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
                (p[0] + s * q[0]).hypot(p[1] + s * q[1]) <= 0.05
            });
            prop_assume!(!slow);
            let run = track(&x0, &inputs, dt, &TrackingOptions::default()).unwrap();
            prop_assert_eq!(run.trace.len(), inputs.len() * 20 + 1);
            for (p, s) in plan.iter().zip(&run.samples) {
                prop_assert!((p[0] - s.state.x).abs() < 1e-3 && (p[1] - s.state.y).abs() < 1e-3);
            }
        }
    }
}
