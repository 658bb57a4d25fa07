//! Dual-channel PID controller: independent PID terms on the pole-angle and
//! cart-position errors, mixed by two balancing gains.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::policies::{clamp_action, Controller};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidChannel {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Integral window length in control steps.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidPolicy {
    pub theta: PidChannel,
    pub rho: PidChannel,
    /// Channel mixing gains.
    pub mix_theta: f64,
    pub mix_rho: f64,
    pub dt: f64,
}

impl PidPolicy {
    pub fn describe(&self) -> String {
        format!(
            "a = {}*(P+I+D)[theta: kP={}, kI={}, kD={}, window={}] + {}*(P+I+D)[rho: kP={}, kI={}, kD={}, window={}]",
            self.mix_theta,
            self.theta.kp,
            self.theta.ki,
            self.theta.kd,
            self.theta.window,
            self.mix_rho,
            self.rho.kp,
            self.rho.ki,
            self.rho.kd,
            self.rho.window
        )
    }
}

#[derive(Debug, Clone)]
struct ChannelState {
    cfg: PidChannel,
    history: VecDeque<f64>,
    prev_error: Option<f64>,
}

impl ChannelState {
    fn new(cfg: PidChannel) -> Self {
        let window = cfg.window.max(1);
        Self {
            cfg: PidChannel { window, ..cfg },
            history: VecDeque::with_capacity(window),
            prev_error: None,
        }
    }

    /// P + I + D for the current error. Rectangular integration over the
    /// window, backward-difference derivative, zero I and D contributions on
    /// the first call.
    fn update(&mut self, e: f64, dt: f64) -> f64 {
        if self.history.len() == self.cfg.window {
            self.history.pop_front();
        }
        self.history.push_back(e);
        let p = self.cfg.kp * e;
        let integral: f64 = self.history.iter().sum::<f64>() * dt;
        let i = self.cfg.ki * integral;
        let d = match self.prev_error {
            Some(prev) => self.cfg.kd * (e - prev) / dt,
            None => 0.0,
        };
        self.prev_error = Some(e);
        p + i + d
    }
}

/// Stateful PID instance; one per rollout, never shared.
pub struct PidController {
    policy: PidPolicy,
    theta: ChannelState,
    rho: ChannelState,
}

impl PidController {
    pub fn new(policy: PidPolicy) -> Self {
        let theta = ChannelState::new(policy.theta.clone());
        let rho = ChannelState::new(policy.rho.clone());
        Self { policy, theta, rho }
    }

    /// Combined output for explicit channel errors.
    pub fn eval_errors(&mut self, e_theta: f64, e_rho: f64) -> f64 {
        let dt = self.policy.dt;
        let out = self.policy.mix_theta * self.theta.update(e_theta, dt)
            + self.policy.mix_rho * self.rho.update(e_rho, dt);
        clamp_action(out)
    }
}

impl Controller for PidController {
    fn act(&mut self, s: &State) -> f64 {
        // Setpoints are zero; error = setpoint - process variable.
        self.eval_errors(-s.theta, -s.rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn channel(kp: f64, ki: f64, kd: f64, window: usize) -> PidChannel {
        PidChannel { kp, ki, kd, window }
    }

    fn policy(theta: PidChannel, rho: PidChannel, mt: f64, mr: f64) -> PidPolicy {
        PidPolicy {
            theta,
            rho,
            mix_theta: mt,
            mix_rho: mr,
            dt: 0.025,
        }
    }

    #[test]
    fn zero_errors_give_zero_action() {
        let p = policy(channel(1.0, 1.0, 1.0, 5), channel(1.0, 1.0, 1.0, 5), 1.0, 1.0);
        let mut c = PidController::new(p);
        for _ in 0..10 {
            assert_eq!(c.eval_errors(0.0, 0.0), 0.0);
        }
    }

    #[test]
    fn pure_proportional() {
        let p = policy(channel(1.0, 0.0, 0.0, 1), channel(0.0, 0.0, 0.0, 1), 1.0, 0.0);
        let mut c = PidController::new(p);
        assert_abs_diff_eq!(c.eval_errors(0.2, 0.0), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn hand_stepped_three_step_trace_with_paper_tuning() {
        // Ziegler-Nichols gains from the critical values k_C1=-14.3,
        // p_C1=113, k_C2=-42.7, p_C2=331; windows 40 and 28 steps; mixing
        // 0.95/0.05.
        let (kc1, pc1) = (-14.3_f64, 113.0_f64);
        let (kc2, pc2) = (-42.7_f64, 331.0_f64);
        let th = channel(0.6 * kc1, 1.2 * kc1 / pc1, 0.6 * kc1 * pc1 / 8.0, 40);
        let rh = channel(0.6 * kc2, 1.2 * kc2 / pc2, 0.6 * kc2 * pc2 / 8.0, 28);
        let dt = 0.025;
        let mut c = PidController::new(policy(th.clone(), rh.clone(), 0.95, 0.05));

        // Manual discrete trace, written out independently.
        let e_th = [0.01, 0.012, 0.008];
        let e_rh = [-0.1, -0.05, 0.0];
        let mut sum_th = 0.0;
        let mut sum_rh = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..3 {
            sum_th += e_th[k];
            sum_rh += e_rh[k];
            let d_th = prev.map_or(0.0, |(pt, _)| th.kd * (e_th[k] - pt) / dt);
            let d_rh = prev.map_or(0.0, |(_, pr)| rh.kd * (e_rh[k] - pr) / dt);
            let expected = (0.95
                * (th.kp * e_th[k] + th.ki * sum_th * dt + d_th)
                + 0.05 * (rh.kp * e_rh[k] + rh.ki * sum_rh * dt + d_rh))
                .clamp(-10.0, 10.0);
            let got = c.eval_errors(e_th[k], e_rh[k]);
            assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
            prev = Some((e_th[k], e_rh[k]));
        }
    }

    #[test]
    fn integral_window_truncates() {
        let p = policy(channel(0.0, 1.0, 0.0, 3), channel(0.0, 0.0, 0.0, 1), 1.0, 0.0);
        let mut c = PidController::new(p);
        for _ in 0..10 {
            c.eval_errors(1.0, 0.0);
        }
        // window of 3 samples, each contributing e*dt = 0.025
        assert_abs_diff_eq!(c.eval_errors(1.0, 0.0), 3.0 * 0.025, epsilon = 1e-12);
    }

    #[test]
    fn identical_error_streams_give_identical_actions() {
        let p = policy(channel(2.0, 0.5, 0.1, 7), channel(1.0, 0.2, 0.05, 4), 0.9, 0.1);
        let mut a = PidController::new(p.clone());
        let mut b = PidController::new(p);
        for k in 0..50 {
            let e1 = (k as f64 * 0.1).sin() * 0.2;
            let e2 = (k as f64 * 0.07).cos() * 0.3;
            assert_eq!(a.eval_errors(e1, e2), b.eval_errors(e1, e2));
        }
    }
}
