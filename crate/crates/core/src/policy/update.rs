use serde::{Deserialize, Serialize};

use super::network::{Activations, PolicyParams};
use crate::geom::Vector2;
use crate::scalar::Scalar;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

/// One on-policy sample. `action` is the raw Gaussian draw, before any
/// norm clamping applied for stepping.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub obs: Vec<T>,
    pub action: [T; 2],
    pub advantage: T,
    pub ret: T,
    /// Behaviour log-probability; read by the clipped objective only.
    pub old_log_prob: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Plain advantage-weighted log-likelihood.
    PolicyGradient,
    /// Clipped probability-ratio surrogate with the given clip range.
    Clipped { clip: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub objective: Objective,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// Fraction of samples whose ratio left the clip range.
    pub clip_fraction: f64,
}

/// Diagonal Gaussian log-density of `a` under `(mean, log_std)`.
pub fn log_prob<T: Scalar>(a: [T; 2], mean: Vector2<T>, log_std: [T; 2]) -> T {
    let m = [mean.x, mean.y];
    (0..2)
        .map(|k| {
            let u = (a[k] - m[k]) / log_std[k].exp();
            T::lit(-0.5) * u * u - log_std[k] - T::lit(HALF_LN_TAU)
        })
        .fold(T::zero(), |s, x| s + x)
}

pub fn entropy<T: Scalar>(log_std: [T; 2]) -> T {
    log_std[0] + log_std[1] + T::lit(2.0 * (0.5 + HALF_LN_TAU))
}

/// Batch loss only, used as the finite-difference reference.
pub fn batch_loss<T: Scalar>(params: &PolicyParams<T>, batch: &[Transition<T>], w: &LossWeights) -> T {
    compute(params, batch, w, None).total_t
}

/// Exact gradient of the batch-mean loss
/// `-policy_objective + value_coef (V - ret)^2 - entropy_coef H`.
pub fn compute_update<T: Scalar>(params: &PolicyParams<T>, batch: &[Transition<T>], w: &LossWeights) -> (Vec<T>, LossStats) {
    if let Objective::Clipped { .. } = w.objective {
        assert!(batch.len() >= 2, "clipped objective needs at least two transitions");
    }
    assert!(!batch.is_empty(), "empty batch");
    let mut grad = vec![T::zero(); params.len()];
    let acc = compute(params, batch, w, Some(&mut grad));
    (grad, acc.stats)
}

struct Acc<T> {
    total_t: T,
    stats: LossStats,
}

fn compute<T: Scalar>(params: &PolicyParams<T>, batch: &[Transition<T>], w: &LossWeights, mut grad: Option<&mut Vec<T>>) -> Acc<T> {
    let n = T::from_usize_lossy(batch.len());
    let vc = T::lit(w.value_coef);
    let ec = T::lit(w.entropy_coef);
    let mut act = Activations::default();
    let (mut pl, mut vl, mut ent) = (T::zero(), T::zero(), T::zero());
    let mut clipped = 0usize;

    for tr in batch {
        let out = params.forward_cached(&tr.obs, &mut act);
        let lp = log_prob(tr.action, out.mean, out.log_std);
        let h = entropy(out.log_std);
        let adv = tr.advantage;

        // d(policy loss)/d(log_prob) for this sample, before the 1/n factor.
        let (p_loss, d_lp) = match w.objective {
            Objective::PolicyGradient => (-lp * adv, -adv),
            Objective::Clipped { clip } => {
                let ratio = (lp - tr.old_log_prob).exp();
                let lo = T::one() - T::lit(clip);
                let hi = T::one() + T::lit(clip);
                let rc = ratio.max(lo).min(hi);
                if ratio < lo || ratio > hi {
                    clipped += 1;
                }
                let un = ratio * adv;
                let cl = rc * adv;
                if un <= cl { (-un, -un) } else { (-cl, T::zero()) }
            }
        };
        let v_err = out.value - tr.ret;
        pl = pl + p_loss;
        vl = vl + v_err * v_err;
        ent = ent + h;

        if let Some(g) = grad.as_deref_mut() {
            let s = [out.log_std[0].exp(), out.log_std[1].exp()];
            let m = [out.mean.x, out.mean.y];
            let u = [(tr.action[0] - m[0]) / s[0], (tr.action[1] - m[1]) / s[1]];
            let d_mean = Vector2::new(d_lp * u[0] / s[0] / n, d_lp * u[1] / s[1] / n);
            let d_ls = [(d_lp * (u[0] * u[0] - T::one()) - ec) / n, (d_lp * (u[1] * u[1] - T::one()) - ec) / n];
            let d_v = T::lit(2.0) * vc * v_err / n;
            params.backward(&tr.obs, &act, d_mean, d_ls, d_v, g);
        }
    }

    let (pl, vl, ent) = (pl / n, vl / n, ent / n);
    let total_t = pl + vc * vl - ec * ent;
    let stats = LossStats {
        policy_loss: pl.as_f64(),
        value_loss: vl.as_f64(),
        entropy: ent.as_f64(),
        total: total_t.as_f64(),
        clip_fraction: clipped as f64 / batch.len() as f64,
    };
    Acc { total_t, stats }
}

/// First-order adaptive-moment optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, lr: T) -> Self {
        Self { lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t as i32);
        let c2 = T::one() - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] = params[i] - self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its Euclidean norm is at most `max`; returns
/// the norm before scaling.
pub fn clip_grad_norm<T: Scalar>(grad: &mut [T], max: T) -> T {
    let norm = grad.iter().fold(T::zero(), |s, &g| s + g * g).sqrt();
    if norm > max && norm > T::zero() {
        let k = max / norm;
        grad.iter_mut().for_each(|g| *g = *g * k);
    }
    norm
}
