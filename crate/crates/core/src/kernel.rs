//! Linear-kernel view of a finite CMDP: `P_h(x'|x,a) = <psi(x,a,x'), theta_h>`,
//! `r_h(x,a) = <phi(x,a), theta_{r,h}>`, `g_h(x,a) = <phi(x,a), theta_{g,h}>`.
//!
//! Only finite state spaces are supported, so integrals against `psi` are sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EpisodeModel, Shape};

/// Feature maps `psi: S x A x S -> R^{d1}` and `phi: S x A -> R^{d2}`, stored densely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFeatures {
    shape: Shape,
    d1: usize,
    d2: usize,
    /// Row `(x * A + a) * S + x'` holds `psi(x, a, x')`.
    psi: Vec<f64>,
    /// Row `x * A + a` holds `phi(x, a)`.
    phi: Vec<f64>,
}

impl KernelFeatures {
    pub fn new(shape: Shape, d1: usize, d2: usize, psi: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let (s, a) = (shape.num_states, shape.num_actions);
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidInput("feature dimensions must be positive".into()));
        }
        if psi.len() != s * a * s * d1 {
            return Err(Error::Shape(format!("psi: expected {} entries, got {}", s * a * s * d1, psi.len())));
        }
        if phi.len() != s * a * d2 {
            return Err(Error::Shape(format!("phi: expected {} entries, got {}", s * a * d2, phi.len())));
        }
        if psi.iter().chain(&phi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("features must be finite".into()));
        }
        Ok(Self {
            shape,
            d1,
            d2,
            psi,
            phi,
        })
    }

    /// Canonical tabular embedding: `psi(x,a,x') = e_{(x,a,x')}`, `phi(x,a) = e_{(x,a)}`.
    pub fn canonical(shape: Shape) -> Self {
        let (s, a) = (shape.num_states, shape.num_actions);
        let d1 = s * a * s;
        let d2 = s * a;
        let mut psi = vec![0.0; d1 * d1];
        for i in 0..d1 {
            psi[i * d1 + i] = 1.0;
        }
        let mut phi = vec![0.0; d2 * d2];
        for i in 0..d2 {
            phi[i * d2 + i] = 1.0;
        }
        Self {
            shape,
            d1,
            d2,
            psi,
            phi,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn d1(&self) -> usize {
        self.d1
    }
    pub fn d2(&self) -> usize {
        self.d2
    }
    /// `d = max(d1, d2)`.
    pub fn d(&self) -> usize {
        self.d1.max(self.d2)
    }

    #[inline]
    pub fn psi(&self, x: usize, a: usize, y: usize) -> &[f64] {
        let row = (x * self.shape.num_actions + a) * self.shape.num_states + y;
        &self.psi[row * self.d1..(row + 1) * self.d1]
    }

    #[inline]
    pub fn phi(&self, x: usize, a: usize) -> &[f64] {
        let row = x * self.shape.num_actions + a;
        &self.phi[row * self.d2..(row + 1) * self.d2]
    }

    /// `sum_{x'} psi(x, a, x') v(x')`.
    pub fn integrate(&self, x: usize, a: usize, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d1];
        for (y, &vy) in v.iter().enumerate() {
            if vy == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.psi(x, a, y)) {
                *o += p * vy;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Features plus per-step parameters; reconstructs a full [`EpisodeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearKernelModel {
    pub features: KernelFeatures,
    pub theta_p: Vec<Vec<f64>>,
    pub theta_r: Vec<Vec<f64>>,
    pub theta_g: Vec<Vec<f64>>,
    pub constraint_offset: f64,
    pub initial_state: usize,
}

impl LinearKernelModel {
    /// Canonical embedding of a tabular model (`theta_h` = flattened `P_h`, etc).
    pub fn from_episode_model(model: &EpisodeModel) -> Self {
        let shape = model.shape();
        let per_step_sas = shape.num_states * shape.num_actions * shape.num_states;
        let per_step_sa = shape.num_states * shape.num_actions;
        let split = |table: &[f64], n: usize| table.chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Self {
            features: KernelFeatures::canonical(shape),
            theta_p: split(model.transition(), per_step_sas),
            theta_r: split(model.reward(), per_step_sa),
            theta_g: split(model.utility(), per_step_sa),
            constraint_offset: model.constraint_offset(),
            initial_state: model.initial_state(),
        }
    }

    /// Rebuild the tables and check the norm bounds `||theta_h|| <= sqrt(d1)`,
    /// `||theta_{r,h}||, ||theta_{g,h}|| <= sqrt(d2)`.
    pub fn to_episode_model(&self) -> Result<EpisodeModel> {
        let f = &self.features;
        let shape = f.shape();
        let h_len = shape.horizon;
        for (name, thetas, dim) in [
            ("theta_p", &self.theta_p, f.d1()),
            ("theta_r", &self.theta_r, f.d2()),
            ("theta_g", &self.theta_g, f.d2()),
        ] {
            if thetas.len() != h_len || thetas.iter().any(|t| t.len() != dim) {
                return Err(Error::Shape(format!("{name}: expected {h_len} vectors of length {dim}")));
            }
            let bound = (dim as f64).sqrt() + 1e-9;
            if let Some((h, t)) = thetas.iter().enumerate().find(|(_, t)| norm2(t) > bound) {
                return Err(Error::InvalidInput(format!(
                    "{name}[{h}] has norm {} > sqrt({dim})",
                    norm2(t)
                )));
            }
        }
        let mut transition = Vec::with_capacity(shape.sas_cells());
        let mut reward = Vec::with_capacity(shape.sa_cells());
        let mut utility = Vec::with_capacity(shape.sa_cells());
        for h in 0..h_len {
            for x in 0..shape.num_states {
                for a in 0..shape.num_actions {
                    for y in 0..shape.num_states {
                        transition.push(dot(f.psi(x, a, y), &self.theta_p[h]));
                    }
                    reward.push(dot(f.phi(x, a), &self.theta_r[h]));
                    utility.push(dot(f.phi(x, a), &self.theta_g[h]));
                }
            }
        }
        EpisodeModel::new(shape, transition, reward, utility, self.constraint_offset, self.initial_state)
    }
}
