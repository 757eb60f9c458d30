//! Feedforward Gaussian policy with a shared tanh trunk and a value head.

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geom::Vector2;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Parameter tensors in storage order, as (name, rows, cols). Weight
/// matrices are stored input-major: entry `(i, o)` sits at `i * cols + o`.
pub fn tensor_shapes(input: usize, hidden: usize) -> [(&'static str, usize, usize); 9] {
    [
        ("w1", input, hidden),
        ("b1", 1, hidden),
        ("w2", hidden, hidden),
        ("b2", 1, hidden),
        ("w_mean", hidden, 2),
        ("b_mean", 1, 2),
        ("log_std", 1, 2),
        ("w_value", hidden, 1),
        ("b_value", 1, 1),
    ]
}

#[derive(Clone, Debug)]
struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    wm: Range<usize>,
    bm: Range<usize>,
    log_std: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
}

impl Layout {
    fn new(input: usize, hidden: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Self {
            w1: take(input * hidden),
            b1: take(hidden),
            w2: take(hidden * hidden),
            b2: take(hidden),
            wm: take(hidden * 2),
            bm: take(2),
            log_std: take(2),
            wv: take(hidden),
            bv: take(1),
        }
    }

    fn len(&self) -> usize {
        self.bv.end
    }
}

pub fn param_count(input: usize, hidden: usize) -> usize {
    Layout::new(input, hidden).len()
}

/// Flat parameter vector plus the shape needed to interpret it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams<T> {
    pub input: usize,
    pub hidden: usize,
    pub v_max: T,
    pub data: Vec<T>,
}

/// Outputs of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyOutput<T> {
    pub mean: Vector2<T>,
    /// Clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: [T; 2],
    pub value: T,
}

/// Intermediate activations kept for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct Activations<T> {
    h1: Vec<T>,
    h2: Vec<T>,
    z: [T; 2],
}

fn affine<T: Scalar>(x: &[T], w: &[T], b: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend_from_slice(b);
    let cols = b.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wio) in out.iter_mut().zip(row) {
            *o = *o + xi * wio;
        }
    }
}

/// `tanh(r) / r` and `g'(r) / r` for the radial squash `m = v_max g(|z|) z`.
fn squash_terms<T: Scalar>(r: T) -> (T, T) {
    if r < T::lit(1e-3) {
        let r2 = r * r;
        (T::one() - r2 / T::lit(3.0) + T::lit(2.0 / 15.0) * r2 * r2, T::lit(-2.0 / 3.0) + T::lit(8.0 / 15.0) * r2)
    } else {
        let t = r.tanh();
        let sech2 = T::one() - t * t;
        (t / r, (r * sech2 - t) / (r * r * r))
    }
}

impl<T: Scalar> PolicyParams<T> {
    pub fn zeros(input: usize, hidden: usize, v_max: T) -> Self {
        Self { input, hidden, v_max, data: vec![T::zero(); param_count(input, hidden)] }
    }

    /// Orthogonal initialization: gain √2 on the trunk, 0.01 on the mean
    /// head, 1 on the value head. Biases and log-std start at zero.
    pub fn init(input: usize, hidden: usize, v_max: T, rng: &mut StreamRng) -> Self {
        let mut p = Self::zeros(input, hidden, v_max);
        let l = p.layout();
        orthogonal(&mut p.data[l.w1], input, hidden, T::lit(std::f64::consts::SQRT_2), rng);
        orthogonal(&mut p.data[l.w2], hidden, hidden, T::lit(std::f64::consts::SQRT_2), rng);
        orthogonal(&mut p.data[l.wm], hidden, 2, T::lit(0.01), rng);
        orthogonal(&mut p.data[l.wv], hidden, 1, T::one(), rng);
        p
    }

    fn layout(&self) -> Layout {
        Layout::new(self.input, self.hidden)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite()) && self.v_max.is_finite()
    }

    /// Named view of one tensor, for inspection and tests.
    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        let r = self.range(name)?;
        Some(&self.data[r])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.range(name)?;
        Some(&mut self.data[r])
    }

    /// Index of a tensor's first entry in `data`.
    pub fn offset(&self, name: &str) -> Option<usize> {
        self.range(name).map(|r| r.start)
    }

    fn range(&self, name: &str) -> Option<Range<usize>> {
        let l = self.layout();
        Some(match name {
            "w1" => l.w1,
            "b1" => l.b1,
            "w2" => l.w2,
            "b2" => l.b2,
            "w_mean" => l.wm,
            "b_mean" => l.bm,
            "log_std" => l.log_std,
            "w_value" => l.wv,
            "b_value" => l.bv,
            _ => return None,
        })
    }

    /// Clamps log-std into its admissible range.
    pub fn clamp_log_std(&mut self) {
        let r = self.layout().log_std;
        for s in &mut self.data[r] {
            *s = s.max(T::lit(LOG_STD_MIN)).min(T::lit(LOG_STD_MAX));
        }
    }

    pub fn forward(&self, x: &[T]) -> PolicyOutput<T> {
        self.forward_cached(x, &mut Activations::default())
    }

    pub fn forward_cached(&self, x: &[T], act: &mut Activations<T>) -> PolicyOutput<T> {
        assert_eq!(x.len(), self.input, "feature dimension does not match the network");
        let d = &self.data;
        let l = self.layout();
        affine(x, &d[l.w1], &d[l.b1], &mut act.h1);
        act.h1.iter_mut().for_each(|v| *v = v.tanh());
        affine(&act.h1, &d[l.w2], &d[l.b2], &mut act.h2);
        act.h2.iter_mut().for_each(|v| *v = v.tanh());

        let mut z = [d[l.bm.start], d[l.bm.start + 1]];
        let mut value = d[l.bv.start];
        let wm = &d[l.wm];
        let wv = &d[l.wv];
        for (i, &h) in act.h2.iter().enumerate() {
            z[0] = z[0] + h * wm[2 * i];
            z[1] = z[1] + h * wm[2 * i + 1];
            value = value + h * wv[i];
        }
        act.z = z;
        let r = z[0].hypot(z[1]);
        let (g, _) = squash_terms(r);
        let mean = Vector2::new(z[0], z[1]) * (self.v_max * g);
        let ls = &d[l.log_std];
        let clamp = |s: T| s.max(T::lit(LOG_STD_MIN)).min(T::lit(LOG_STD_MAX));
        PolicyOutput { mean, log_std: [clamp(ls[0]), clamp(ls[1])], value }
    }

    /// Accumulates into `grad` the gradient of a scalar loss, given its
    /// partials with respect to the mean, the clamped log-std and the value
    /// at input `x` with cached activations `act`.
    pub fn backward(
        &self,
        x: &[T],
        act: &Activations<T>,
        d_mean: Vector2<T>,
        d_log_std: [T; 2],
        d_value: T,
        grad: &mut [T],
    ) {
        let d = &self.data;
        let l = self.layout();
        let h = self.hidden;

        let z = act.z;
        let r = z[0].hypot(z[1]);
        let (g, gr) = squash_terms(r);
        let zdm = z[0] * d_mean.x + z[1] * d_mean.y;
        let dz = [self.v_max * (g * d_mean.x + gr * zdm * z[0]), self.v_max * (g * d_mean.y + gr * zdm * z[1])];

        let raw = &d[l.log_std.clone()];
        for k in 0..2 {
            if raw[k] >= T::lit(LOG_STD_MIN) && raw[k] <= T::lit(LOG_STD_MAX) {
                grad[l.log_std.start + k] = grad[l.log_std.start + k] + d_log_std[k];
            }
        }

        grad[l.bm.start] = grad[l.bm.start] + dz[0];
        grad[l.bm.start + 1] = grad[l.bm.start + 1] + dz[1];
        grad[l.bv.start] = grad[l.bv.start] + d_value;
        let wm = &d[l.wm.clone()];
        let wv = &d[l.wv.clone()];
        let mut dh2 = vec![T::zero(); h];
        for i in 0..h {
            let hi = act.h2[i];
            grad[l.wm.start + 2 * i] = grad[l.wm.start + 2 * i] + hi * dz[0];
            grad[l.wm.start + 2 * i + 1] = grad[l.wm.start + 2 * i + 1] + hi * dz[1];
            grad[l.wv.start + i] = grad[l.wv.start + i] + hi * d_value;
            let back = wm[2 * i] * dz[0] + wm[2 * i + 1] * dz[1] + wv[i] * d_value;
            dh2[i] = back * (T::one() - hi * hi);
        }

        let mut dh1 = vec![T::zero(); h];
        {
            let w2 = &d[l.w2.clone()];
            let (gw2, rest) = grad[l.w2.start..].split_at_mut(h * h);
            let gb2 = &mut rest[..h];
            for (o, &v) in dh2.iter().enumerate() {
                gb2[o] = gb2[o] + v;
            }
            for i in 0..h {
                let hi = act.h1[i];
                let row = &mut gw2[i * h..(i + 1) * h];
                let wrow = &w2[i * h..(i + 1) * h];
                let mut acc = T::zero();
                for o in 0..h {
                    row[o] = row[o] + hi * dh2[o];
                    acc = acc + wrow[o] * dh2[o];
                }
                dh1[i] = acc * (T::one() - hi * hi);
            }
        }

        let (gw1, rest) = grad[l.w1.start..].split_at_mut(self.input * h);
        let gb1 = &mut rest[..h];
        for (o, &v) in dh1.iter().enumerate() {
            gb1[o] = gb1[o] + v;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &mut gw1[i * h..(i + 1) * h];
            for (g, &v) in row.iter_mut().zip(&dh1) {
                *g = *g + xi * v;
            }
        }
    }

    /// Hex SHA-256 over the shape and the little-endian f64 image of every entry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.input as u64).to_le_bytes());
        h.update((self.hidden as u64).to_le_bytes());
        h.update(self.v_max.as_f64().to_le_bytes());
        for x in &self.data {
            h.update(x.as_f64().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> PolicyParams<U> {
        PolicyParams {
            input: self.input,
            hidden: self.hidden,
            v_max: U::lit(self.v_max.as_f64()),
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// Fills a `rows x cols` input-major block with a scaled matrix whose
/// shorter side is orthonormal (Gram-Schmidt on Gaussian draws).
fn orthogonal<T: Scalar>(w: &mut [T], rows: usize, cols: usize, gain: T, rng: &mut StreamRng) {
    let (n, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= p * c);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    for i in 0..rows {
        for o in 0..cols {
            let x = if rows >= cols { basis[o][i] } else { basis[i][o] };
            w[i * cols + o] = gain * T::lit(x);
        }
    }
}
