//! LAMB optimizer: Adam moments with a per-tensor trust ratio.

use ndarray::{NdFloat, Zip};
use serde::{Deserialize, Serialize};

use super::layers::cast;
use super::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for LambConfig {
    fn default() -> Self {
        LambConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-6, weight_decay: 0.0 }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct LambState<F> {
    pub step: u64,
    pub m: Params<F>,
    pub v: Params<F>,
}

impl<F: NdFloat> LambState<F> {
    pub fn new(p: &Params<F>) -> Self {
        LambState { step: 0, m: Params::zeros(&p.cfg), v: Params::zeros(&p.cfg) }
    }
}

/// How the trust ratio is chosen per tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustMode {
    /// `||w|| / ||r||` for weight matrices and the latent array; 1 for
    /// vectors (biases and norm parameters). 1 if either norm is zero.
    Layerwise,
    /// Always 1: plain bias-corrected Adam direction.
    Unit,
}

/// One LAMB update in place.
pub fn lamb_step<F: NdFloat>(
    params: &mut Params<F>,
    grads: &Params<F>,
    state: &mut LambState<F>,
    cfg: &LambConfig,
    mode: TrustMode,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2): (F, F) = (cast(cfg.beta1), cast(cfg.beta2));
    let bc1 = F::one() - b1.powi(t);
    let bc2 = F::one() - b2.powi(t);
    let (eps, wd, lr): (F, F, F) = (cast(cfg.eps), cast(cfg.weight_decay), cast(cfg.lr));
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((mut w, (_, g)), mut m), mut v) in params.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        Zip::from(&mut m).and(&mut v).and(&g).for_each(|m, v, &g| {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
        });
        let mut r = m.mapv(|x| x / bc1);
        Zip::from(&mut r).and(&v).and(&w).for_each(|r, &v, &w| {
            *r = *r / ((v / bc2).sqrt() + eps) + wd * w;
        });
        let ratio = match mode {
            TrustMode::Layerwise if w.ndim() >= 2 => {
                let wn = w.iter().fold(F::zero(), |a, &x| a + x * x).sqrt();
                let rn = r.iter().fold(F::zero(), |a, &x| a + x * x).sqrt();
                if wn > F::zero() && rn > F::zero() {
                    wn / rn
                } else {
                    F::one()
                }
            }
            _ => F::one(),
        };
        let k = lr * ratio;
        Zip::from(&mut w).and(&r).for_each(|w, &r| *w -= k * r);
    }
}
