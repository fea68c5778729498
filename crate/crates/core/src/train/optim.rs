//! First-order parameter updates with per-group learning rates.

use super::densify::Origin;
use crate::map::{Gaussian3D, PARAM_COUNT};
use crate::raster::GaussianGrads;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient steps.
    Sgd,
    /// Adaptive moments (beta1 0.9, beta2 0.999).
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(format!("unknown optimizer '{s}' (expected sgd or adam)")),
        }
    }
}

/// Learning rate per parameter group. `mu` is already scaled to the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub mu: f64,
    pub log_scale: f64,
    pub rot: f64,
    pub color: f64,
    pub opacity: f64,
}

impl GroupRates {
    fn per_param(&self) -> [f64; PARAM_COUNT] {
        let mut r = [0.0; PARAM_COUNT];
        r[0..3].fill(self.mu);
        r[3..6].fill(self.log_scale);
        r[6..10].fill(self.rot);
        r[10..13].fill(self.color);
        r[13] = self.opacity;
        r
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    rates: [f64; PARAM_COUNT],
    m: Vec<[f64; PARAM_COUNT]>,
    v: Vec<[f64; PARAM_COUNT]>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, rates: GroupRates, n: usize) -> Self {
        Optimizer {
            kind,
            rates: rates.per_param(),
            m: vec![[0.0; PARAM_COUNT]; n],
            v: vec![[0.0; PARAM_COUNT]; n],
            t: 0,
        }
    }

    pub fn set_mu_rate(&mut self, rate: f64) {
        self.rates[0..3].fill(rate);
    }

    /// Applies one update, then clamps colors to `[0, 1]` and renormalizes
    /// rotations.
    pub fn step(&mut self, gaussians: &mut [Gaussian3D], grads: &GaussianGrads) {
        assert_eq!(gaussians.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - BETA2.powi(self.t.min(i32::MAX as u64) as i32);
        for (i, g) in gaussians.iter_mut().enumerate() {
            let grad = &grads.params[i];
            let mut p = g.to_params();
            match self.kind {
                OptimizerKind::Sgd => {
                    for j in 0..PARAM_COUNT {
                        p[j] -= self.rates[j] * grad[j];
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..PARAM_COUNT {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * grad[j];
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * grad[j] * grad[j];
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        p[j] -= self.rates[j] * mh / (vh.sqrt() + EPS);
                    }
                }
            }
            let mut next = Gaussian3D::from_params(&p);
            for c in &mut next.color {
                *c = c.clamp(0.0, 1.0);
            }
            let n = next.quat().norm();
            if n > 0.0 && n.is_finite() {
                next.rot = next.rot.map(|v| v / n);
            } else {
                next.rot = g.rot;
            }
            *g = next;
        }
    }

    /// Carries moment state through a densification step; new children start
    /// from zero.
    pub fn remap(&mut self, origins: &[Origin]) {
        let pick = |src: &Vec<[f64; PARAM_COUNT]>| -> Vec<[f64; PARAM_COUNT]> {
            origins
                .iter()
                .map(|o| match o {
                    Origin::Kept(i) => src[*i],
                    Origin::Child(_) => [0.0; PARAM_COUNT],
                })
                .collect()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates() -> GroupRates {
        GroupRates {
            mu: 0.1,
            log_scale: 0.1,
            rot: 0.1,
            color: 0.1,
            opacity: 0.1,
        }
    }

    #[test]
    fn sgd_step_is_rate_times_gradient() {
        let mut gs = vec![Gaussian3D::isotropic([0.0; 3], 1.0, [0.5; 3], 0.5).unwrap()];
        let mut grads = GaussianGrads::zeros(1);
        grads.params[0][0] = 2.0;
        grads.params[0][10] = -1.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, rates(), 1);
        opt.step(&mut gs, &grads);
        assert!((gs[0].mu[0] + 0.2).abs() < 1e-15);
        assert!((gs[0].color[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_has_rate_magnitude() {
        let mut gs = vec![Gaussian3D::isotropic([0.0; 3], 1.0, [0.5; 3], 0.5).unwrap()];
        let mut grads = GaussianGrads::zeros(1);
        grads.params[0][1] = 1e-6;
        let mut opt = Optimizer::new(OptimizerKind::Adam, rates(), 1);
        opt.step(&mut gs, &grads);
        assert!((gs[0].mu[1] + 0.1).abs() < 1e-6);
        assert_eq!(gs[0].mu[0], 0.0);
    }

    #[test]
    fn colors_are_clamped() {
        let mut gs = vec![Gaussian3D::isotropic([0.0; 3], 1.0, [0.95; 3], 0.5).unwrap()];
        let mut grads = GaussianGrads::zeros(1);
        grads.params[0][10] = -10.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, rates(), 1);
        opt.step(&mut gs, &grads);
        assert_eq!(gs[0].color[0], 1.0);
    }

    #[test]
    fn remap_keeps_parent_state() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, rates(), 2);
        opt.m[1][0] = 3.0;
        opt.remap(&[Origin::Kept(1), Origin::Child(1)]);
        assert_eq!(opt.m[0][0], 3.0);
        assert_eq!(opt.m[1][0], 0.0);
    }
}
