//! Gated recurrent network over the time axis of a window.
//!
//! Gate order and equations follow the common `r, z, n` convention:
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use super::{build_layout, nll, nll_grad, Init, Real, TensorInfo};
use crate::kinlab::NUM_CLASSES;

pub(crate) const HIDDEN: usize = 64;

pub(crate) fn layout(c: usize) -> Vec<TensorInfo> {
    let h = HIDDEN;
    let u = Init::Uniform(1.0 / (h as f64).sqrt());
    build_layout(vec![
        ("gru.w_ih", "gru", vec![3 * h, c], u),
        ("gru.w_hh", "gru", vec![3 * h, h], u),
        ("gru.b_ih", "gru", vec![3 * h], u),
        ("gru.b_hh", "gru", vec![3 * h], u),
        ("dense.weight", "dense", vec![NUM_CLASSES, h], Init::Glorot { fan_in: h, fan_out: NUM_CLASSES }),
        ("dense.bias", "dense", vec![NUM_CLASSES], u),
    ])
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) struct Net<'a, T: Real> {
    params: &'a [T],
    c: usize,
    w: usize,
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
    wd: usize,
    bd: usize,
}

struct Step<T> {
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    /// `W_hn h + b_hn`
    hn: Vec<T>,
}

/// `out = W v + b` for a row-major `rows x v.len()` block of `W`.
fn affine<T: Real>(w: &[T], b: &[T], v: &[T], out: &mut [T]) {
    let cols = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = b[i] + w[i * cols..(i + 1) * cols].iter().zip(v).map(|(&a, &x)| a * x).sum::<T>();
    }
}

impl<'a, T: Real> Net<'a, T> {
    pub fn new(params: &'a [T], c: usize, w: usize) -> Self {
        let lay = layout(c);
        Net {
            params,
            c,
            w,
            w_ih: lay[0].offset,
            w_hh: lay[1].offset,
            b_ih: lay[2].offset,
            b_hh: lay[3].offset,
            wd: lay[4].offset,
            bd: lay[5].offset,
        }
    }

    fn slice(&self, off: usize, len: usize) -> &[T] {
        &self.params[off..off + len]
    }

    /// Window columns as per-step input vectors.
    fn columns(&self, x: &[T]) -> Vec<Vec<T>> {
        (0..self.w)
            .map(|t| (0..self.c).map(|ch| x[ch * self.w + t]).collect())
            .collect()
    }

    fn run(&self, x: &[T], mut steps: Option<&mut Vec<Step<T>>>) -> Vec<T> {
        let h3 = 3 * HIDDEN;
        let w_ih = self.slice(self.w_ih, h3 * self.c);
        let w_hh = self.slice(self.w_hh, h3 * HIDDEN);
        let b_ih = self.slice(self.b_ih, h3);
        let b_hh = self.slice(self.b_hh, h3);
        let mut h = vec![T::zero(); HIDDEN];
        let mut gi = vec![T::zero(); h3];
        let mut gh = vec![T::zero(); h3];
        for xt in self.columns(x) {
            affine(w_ih, b_ih, &xt, &mut gi);
            affine(w_hh, b_hh, &h, &mut gh);
            let mut step = Step {
                h_prev: h.clone(),
                r: vec![T::zero(); HIDDEN],
                z: vec![T::zero(); HIDDEN],
                n: vec![T::zero(); HIDDEN],
                hn: gh[2 * HIDDEN..].to_vec(),
            };
            for j in 0..HIDDEN {
                let r = sigmoid(gi[j] + gh[j]);
                let z = sigmoid(gi[HIDDEN + j] + gh[HIDDEN + j]);
                let n = (gi[2 * HIDDEN + j] + r * gh[2 * HIDDEN + j]).tanh();
                h[j] = (T::one() - z) * n + z * h[j];
                step.r[j] = r;
                step.z[j] = z;
                step.n[j] = n;
            }
            if let Some(s) = steps.as_deref_mut() {
                s.push(step);
            }
        }
        h
    }

    fn head(&self, h: &[T]) -> [T; NUM_CLASSES] {
        let mut out = [T::zero(); NUM_CLASSES];
        affine(
            self.slice(self.wd, NUM_CLASSES * HIDDEN),
            self.slice(self.bd, NUM_CLASSES),
            h,
            &mut out,
        );
        out
    }

    pub fn logits(&self, x: &[T]) -> [T; NUM_CLASSES] {
        self.head(&self.run(x, None))
    }

    /// Adds the gradient of `sum_i w[y_i] * nll_i` to `grad`; returns that sum.
    pub fn accumulate(&self, batch: &[&[T]], labels: &[usize], weights: &[T; NUM_CLASSES], grad: &mut [T]) -> T {
        let hd = HIDDEN;
        let c = self.c;
        let w_hh = self.slice(self.w_hh, 3 * hd * hd);
        let wd = self.slice(self.wd, NUM_CLASSES * hd);
        let mut loss = T::zero();
        let mut steps = Vec::with_capacity(self.w);
        let mut dpre_i = vec![T::zero(); 3 * hd];
        let mut dpre_h = vec![T::zero(); 3 * hd];
        for (x, &y) in batch.iter().zip(labels) {
            steps.clear();
            let h = self.run(x, Some(&mut steps));
            let logits = self.head(&h);
            loss = loss + weights[y] * nll(&logits, y);
            let dlog = nll_grad(&logits, y, weights[y]);
            let mut dh = vec![T::zero(); hd];
            for (o, &dl) in dlog.iter().enumerate() {
                for j in 0..hd {
                    grad[self.wd + o * hd + j] = grad[self.wd + o * hd + j] + dl * h[j];
                    dh[j] = dh[j] + dl * wd[o * hd + j];
                }
                grad[self.bd + o] = grad[self.bd + o] + dl;
            }
            let cols = self.columns(x);
            for (t, s) in steps.iter().enumerate().rev() {
                let mut dh_prev = vec![T::zero(); hd];
                for j in 0..hd {
                    let (r, z, n) = (s.r[j], s.z[j], s.n[j]);
                    let dn = dh[j] * (T::one() - z);
                    let dz = dh[j] * (s.h_prev[j] - n);
                    dh_prev[j] = dh[j] * z;
                    let dn_pre = dn * (T::one() - n * n);
                    let dr_pre = dn_pre * s.hn[j] * r * (T::one() - r);
                    let dz_pre = dz * z * (T::one() - z);
                    dpre_i[j] = dr_pre;
                    dpre_i[hd + j] = dz_pre;
                    dpre_i[2 * hd + j] = dn_pre;
                    dpre_h[j] = dr_pre;
                    dpre_h[hd + j] = dz_pre;
                    dpre_h[2 * hd + j] = dn_pre * r;
                }
                let xt = &cols[t];
                for i in 0..3 * hd {
                    let gi = dpre_i[i];
                    let row = &mut grad[self.w_ih + i * c..self.w_ih + (i + 1) * c];
                    for (g, &xv) in row.iter_mut().zip(xt) {
                        *g = *g + gi * xv;
                    }
                    grad[self.b_ih + i] = grad[self.b_ih + i] + gi;
                    let gh = dpre_h[i];
                    let row = &mut grad[self.w_hh + i * hd..self.w_hh + (i + 1) * hd];
                    for (g, &hv) in row.iter_mut().zip(&s.h_prev) {
                        *g = *g + gh * hv;
                    }
                    grad[self.b_hh + i] = grad[self.b_hh + i] + gh;
                    let wrow = &w_hh[i * hd..(i + 1) * hd];
                    for (d, &wv) in dh_prev.iter_mut().zip(wrow) {
                        *d = *d + gh * wv;
                    }
                }
                dh = dh_prev;
            }
        }
        loss
    }
}
