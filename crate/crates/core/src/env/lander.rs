//! Point-mass lander with the gravity / wind / turbulence parameter roles
//! of the lunar lander task.
//!
//! Each tick applies a constant acceleration `a = thrust + wind + gravity`
//! over `DT`: `v' = v + a*DT`, `x' = x + (v + v')/2 * DT`. With this update
//! the kinetic-energy change equals `a . dx` exactly.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{Action, Dim, ParamSpace, ParamVector, StepResult};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

pub const DT: f64 = 0.05;
pub const THRUST: f64 = 15.0;
pub const HORIZON: usize = 200;
pub const OBS_DIM: usize = 4;
pub const PAD_HALF_WIDTH: f64 = 2.0;
pub const SAFE_SPEED: f64 = 2.0;
pub const LAND_BONUS: f64 = 100.0;
pub const CRASH_PENALTY: f64 = -100.0;
const START_HEIGHT: f64 = 10.0;
const X_LIMIT: f64 = 15.0;
const Y_LIMIT: f64 = 20.0;
const WIND_FREQ: f64 = 0.1;

pub fn param_space() -> ParamSpace {
    ParamSpace::new(vec![
        Dim::continuous("gravity", -12.0, -2.0),
        Dim::continuous("wind_power", 0.0, 6.0),
        Dim::continuous("turbulence", 0.0, 2.0),
    ])
    .expect("static lander space")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanderParams {
    pub gravity: f64,
    pub wind_power: f64,
    pub turbulence: f64,
}

impl LanderParams {
    pub fn from_vector(p: &ParamVector) -> Result<Self> {
        let v = p.values();
        if v.len() != 3 {
            return Err(Error::Shape {
                expected: 3,
                got: v.len(),
            });
        }
        let lp = Self {
            gravity: v[0],
            wind_power: v[1],
            turbulence: v[2],
        };
        lp.check()?;
        Ok(lp)
    }

    fn check(&self) -> Result<()> {
        let bad = |dim: usize, name: &str, reason: &str| Error::InvalidParameter {
            dim,
            name: name.into(),
            reason: reason.into(),
        };
        if !(self.gravity < 0.0) {
            return Err(bad(0, "gravity", "gravity must be negative"));
        }
        if !(self.wind_power >= 0.0) {
            return Err(bad(1, "wind_power", "wind power must be non-negative"));
        }
        if !(self.turbulence >= 0.0) {
            return Err(bad(2, "turbulence", "turbulence must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LanderEnv {
    params: LanderParams,
    pos: [f64; 2],
    vel: [f64; 2],
    phase: f64,
    steps: usize,
    done: bool,
    rng: Rng,
}

impl LanderEnv {
    pub fn new(params: LanderParams, seed: u64) -> Self {
        let mut env = Self {
            params,
            pos: [0.0, START_HEIGHT],
            vel: [0.0; 2],
            phase: 0.0,
            steps: 0,
            done: false,
            rng: seeded(seed),
        };
        env.reset(seed);
        env
    }

    pub fn params(&self) -> LanderParams {
        self.params
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    pub fn wind_phase(&self) -> f64 {
        self.phase
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> usize {
        HORIZON
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Mechanical energy per unit mass (gravity points along -y).
    pub fn energy(&self) -> f64 {
        0.5 * (self.vel[0].powi(2) + self.vel[1].powi(2)) - self.params.gravity * self.pos[1]
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = seeded(seed);
        self.pos = [self.rng.random_range(-4.0..4.0), START_HEIGHT];
        self.vel = [0.0, 0.0];
        self.phase = self.rng.random_range(0.0..std::f64::consts::TAU);
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![
            self.pos[0] / 10.0,
            self.pos[1] / 10.0,
            self.vel[0] / 5.0,
            self.vel[1] / 5.0,
        ]
    }

    fn wind(&mut self) -> f64 {
        let gust = self.params.wind_power * (self.phase + WIND_FREQ * self.steps as f64).sin();
        // the draw is skipped entirely when turbulence is zero
        let noise = if self.params.turbulence > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.params.turbulence * z
        } else {
            0.0
        };
        gust + noise
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::IllegalTransition(
                "step on a finished lander episode; reset first".into(),
            ));
        }
        let thrust = match action {
            Action::Continuous(a) if a.len() == 2 => [a[0], a[1]],
            other => return Err(Error::InvalidAction(format!("lander expects 2 thrust values, got {other:?}"))),
        };
        if thrust.iter().any(|t| !(-1.0..=1.0).contains(t)) {
            return Err(Error::InvalidAction(format!("thrust {thrust:?} outside [-1, 1]")));
        }
        let wind = self.wind();
        let acc = [THRUST * thrust[0] + wind, THRUST * thrust[1] + self.params.gravity];
        let new_vel = [self.vel[0] + acc[0] * DT, self.vel[1] + acc[1] * DT];
        self.pos = [
            self.pos[0] + 0.5 * (self.vel[0] + new_vel[0]) * DT,
            self.pos[1] + 0.5 * (self.vel[1] + new_vel[1]) * DT,
        ];
        self.vel = new_vel;
        self.steps += 1;

        let dist = self.pos[0].hypot(self.pos[1].max(0.0));
        let mut reward = -dist * DT;
        let mut terminal = false;
        if self.pos[1] <= 0.0 {
            terminal = true;
            let soft = self.vel[0].abs() <= SAFE_SPEED && self.vel[1].abs() <= SAFE_SPEED;
            reward += if soft && self.pos[0].abs() <= PAD_HALF_WIDTH {
                LAND_BONUS
            } else {
                CRASH_PENALTY
            };
        } else if self.pos[0].abs() > X_LIMIT || self.pos[1] > Y_LIMIT {
            terminal = true;
            reward += CRASH_PENALTY;
        }
        let truncated = !terminal && self.steps >= HORIZON;
        self.done = terminal || truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminal,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_env, EnvInstance, Family};

    fn lander(g: f64, w: f64, t: f64, seed: u64) -> LanderEnv {
        LanderEnv::new(
            LanderParams {
                gravity: g,
                wind_power: w,
                turbulence: t,
            },
            seed,
        )
    }

    #[test]
    fn free_fall_velocity_changes_by_gravity_dt() {
        let mut env = lander(-10.0, 0.0, 0.0, 3);
        let zero = Action::Continuous(vec![0.0, 0.0]);
        for _ in 0..10 {
            let vy = env.velocity()[1];
            env.step(&zero).unwrap();
            assert!((env.velocity()[1] - (vy - 10.0 * DT)).abs() < 1e-12);
            assert_eq!(env.velocity()[0], 0.0);
        }
    }

    #[test]
    fn calm_dynamics_do_not_depend_on_seed_beyond_start() {
        let mut a = lander(-10.0, 0.0, 0.0, 1);
        let mut b = lander(-10.0, 0.0, 0.0, 1);
        let act = Action::Continuous(vec![0.3, 0.5]);
        for _ in 0..50 {
            if a.is_done() {
                break;
            }
            assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
        }
    }

    #[test]
    fn energy_change_equals_work_by_thrust_and_gravity() {
        let mut env = lander(-7.5, 0.0, 0.0, 9);
        let actions = [[0.2, 0.9], [-0.5, 0.1], [1.0, -1.0], [0.0, 0.66]];
        for k in 0..40 {
            if env.is_done() {
                break;
            }
            let a = actions[k % actions.len()];
            let (p0, v0) = (env.position(), env.velocity());
            let ke0 = 0.5 * (v0[0].powi(2) + v0[1].powi(2));
            env.step(&Action::Continuous(a.to_vec())).unwrap();
            let (p1, v1) = (env.position(), env.velocity());
            let ke1 = 0.5 * (v1[0].powi(2) + v1[1].powi(2));
            let work = THRUST * a[0] * (p1[0] - p0[0]) + (THRUST * a[1] - 7.5) * (p1[1] - p0[1]);
            assert!((ke1 - ke0 - work).abs() < 1e-12, "step {k}: {} vs {work}", ke1 - ke0);
        }
    }

    #[test]
    fn turbulent_resets_differ_by_seed() {
        let mut env = lander(-10.0, 2.0, 1.0, 0);
        env.reset(1);
        let p1 = env.wind_phase();
        env.reset(2);
        assert_ne!(p1, env.wind_phase());
        let o1 = env.reset(5);
        let o2 = env.reset(5);
        assert_eq!(o1, o2);
    }

    #[test]
    fn terminal_rejects_steps_until_reset() {
        let mut env = lander(-12.0, 0.0, 0.0, 4);
        let act = Action::Continuous(vec![0.0, -1.0]);
        while !env.is_done() {
            env.step(&act).unwrap();
        }
        assert!(matches!(env.step(&act), Err(Error::IllegalTransition(_))));
        env.reset(4);
        assert!(!env.is_done());
        assert_eq!(env.steps(), 0);
        assert!(env.step(&act).is_ok());
    }

    #[test]
    fn hovering_truncates_at_horizon() {
        let mut env = lander(-3.0, 0.0, 0.0, 4);
        let hover = Action::Continuous(vec![0.0, 0.2]);
        let mut last = None;
        while !env.is_done() {
            last = Some(env.step(&hover).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminal);
        assert_eq!(env.steps(), HORIZON);
    }

    #[test]
    fn positive_gravity_is_rejected() {
        let err = make_env(Family::Lander, &ParamVector::new(vec![5.0, 0.0, 0.0]), 0);
        assert!(matches!(err, Err(Error::InvalidParameter { dim: 0, .. })));
        let ok = make_env(Family::Lander, &ParamVector::new(vec![-10.0, 0.0, 0.0]), 0).unwrap();
        assert!(matches!(ok, EnvInstance::Lander(_)));
    }
}
