use super::params::ParamSet;
use crate::error::{ensure, Result};

/// Classical (heavy-ball) momentum SGD:
/// `v ← momentum·v − lr·g`, `p ← p + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new<P: ParamSet + ?Sized>(params: &P, learning_rate: f64, momentum: f64) -> Result<Self> {
        ensure!(
            learning_rate >= 0.0 && learning_rate.is_finite(),
            Config,
            "learning_rate must be a nonnegative finite number, got {learning_rate}"
        );
        ensure!(
            (0.0..1.0).contains(&momentum),
            Config,
            "momentum must lie in [0, 1), got {momentum}"
        );
        let velocity = params.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Ok(Self {
            learning_rate,
            momentum,
            velocity,
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.velocity
    }

    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: ParamSet + ?Sized,
        G: ParamSet + ?Sized,
    {
        let gs = grads.params();
        let ps = params.params_mut();
        ensure!(
            ps.len() == gs.len() && ps.len() == self.velocity.len(),
            Dimension,
            "optimizer tracks {} buffers, params have {}, grads have {}",
            self.velocity.len(),
            ps.len(),
            gs.len()
        );
        for ((p, g), v) in ps.into_iter().zip(&gs).zip(&mut self.velocity) {
            ensure!(
                p.len() == g.data.len() && p.len() == v.len(),
                Dimension,
                "buffer {} has {} params, {} grads, {} velocities",
                g.name,
                p.len(),
                g.data.len(),
                v.len()
            );
            for ((pi, gi), vi) in p.iter_mut().zip(g.data).zip(v.iter_mut()) {
                *vi = self.momentum * *vi - self.learning_rate * gi;
                *pi += *vi;
            }
        }
        Ok(())
    }
}
