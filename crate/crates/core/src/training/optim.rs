use serde::{Deserialize, Serialize};

use crate::model::{Gradients, Matrix, ModelParams, ParamId};

/// Clamps every gradient entry into `[lo, hi]`.
pub fn clip_gradients(grads: &mut Gradients, lo: f64, hi: f64) {
    for id in ParamId::ALL {
        grads.get_mut(id).mapv_inplace(|g| g.clamp(lo, hi));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || {
            ParamId::ALL
                .iter()
                .map(|&id| Matrix::zeros(params.get(id).raw_dim()))
                .collect::<Vec<_>>()
        };
        AdamState {
            hyper: AdamHyper::default(),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self, id: ParamId) -> &Matrix {
        &self.m[id as usize]
    }

    pub fn second_moment(&self, id: ParamId) -> &Matrix {
        &self.v[id as usize]
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for id in ParamId::ALL {
        let g = grads.get(id);
        let m = &mut state.m[id as usize];
        let v = &mut state.v[id as usize];
        let p = params.get_mut(id);
        ndarray::Zip::from(p)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
    }
}
