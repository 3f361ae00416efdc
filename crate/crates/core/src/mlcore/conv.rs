//! Compact convolutional network.
//!
//! The temporal and spatial convolutions are both linear, so they are fused
//! into one effective kernel per spatial filter:
//! `Weff[g][c][k] = sum_f ws[g][f][c] * wt[f][k]` and
//! `beff[g] = bs[g] + sum_f bt[f] * sum_c ws[g][f][c]`.
//! Gradients are accumulated on the fused kernel and mapped back once per
//! batch.

use super::{build_layout, lit, nll, nll_grad, Init, Real, TensorInfo};
use crate::error::{Error, Result};
use crate::kinlab::NUM_CLASSES;

pub(crate) const TEMPORAL_FILTERS: usize = 8;
pub(crate) const KERNEL_LEN: usize = 13;
pub(crate) const SPATIAL_FILTERS: usize = 8;
pub(crate) const POOL_LEN: usize = 25;
pub(crate) const POOL_STRIDE: usize = 12;
const LOG_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c: usize,
    pub w: usize,
    /// Valid convolution length.
    pub l: usize,
    /// Pooled length.
    pub p: usize,
}

impl Dims {
    pub fn new(c: usize, w: usize) -> Result<Self> {
        let min = KERNEL_LEN + POOL_LEN - 1;
        if w < min {
            return Err(Error::Config(format!(
                "compact_conv needs windows of at least {min} samples, got {w}"
            )));
        }
        let l = w - KERNEL_LEN + 1;
        Ok(Dims {
            c,
            w,
            l,
            p: (l - POOL_LEN) / POOL_STRIDE + 1,
        })
    }

    fn features(&self) -> usize {
        SPATIAL_FILTERS * self.p
    }
}

pub(crate) fn layout(d: &Dims) -> Vec<TensorInfo> {
    let (f1, f2, k) = (TEMPORAL_FILTERS, SPATIAL_FILTERS, KERNEL_LEN);
    let feat = d.features();
    let fan = |n: usize| Init::Uniform(1.0 / (n as f64).sqrt());
    build_layout(vec![
        ("temporal.weight", "temporal", vec![f1, k], Init::Glorot { fan_in: k, fan_out: f1 * k }),
        ("temporal.bias", "temporal", vec![f1], fan(k)),
        ("spatial.weight", "spatial", vec![f2, f1, d.c], Init::Glorot { fan_in: f1 * d.c, fan_out: f2 }),
        ("spatial.bias", "spatial", vec![f2], fan(f1 * d.c)),
        ("dense.weight", "dense", vec![NUM_CLASSES, feat], Init::Glorot { fan_in: feat, fan_out: NUM_CLASSES }),
        ("dense.bias", "dense", vec![NUM_CLASSES], fan(feat)),
    ])
}

struct Offsets {
    wt: usize,
    bt: usize,
    ws: usize,
    bs: usize,
    wd: usize,
    bd: usize,
}

pub(crate) struct Net<'a, T: Real> {
    params: &'a [T],
    d: Dims,
    o: Offsets,
    weff: Vec<T>,
    beff: Vec<T>,
}

/// Forward intermediates of one example.
struct Trace<T> {
    z: Vec<T>,
    pooled: Vec<T>,
    q: Vec<T>,
}

impl<'a, T: Real> Net<'a, T> {
    pub fn new(params: &'a [T], c: usize, w: usize) -> Self {
        let d = Dims::new(c, w).expect("validated spec");
        let lay = layout(&d);
        let o = Offsets {
            wt: lay[0].offset,
            bt: lay[1].offset,
            ws: lay[2].offset,
            bs: lay[3].offset,
            wd: lay[4].offset,
            bd: lay[5].offset,
        };
        let (f1, f2, k) = (TEMPORAL_FILTERS, SPATIAL_FILTERS, KERNEL_LEN);
        let mut weff = vec![T::zero(); f2 * c * k];
        let mut beff = vec![T::zero(); f2];
        for g in 0..f2 {
            let mut b = params[o.bs + g];
            for f in 0..f1 {
                let wt = &params[o.wt + f * k..o.wt + (f + 1) * k];
                let bt = params[o.bt + f];
                for ch in 0..c {
                    let ws = params[o.ws + (g * f1 + f) * c + ch];
                    b = b + ws * bt;
                    let dst = &mut weff[(g * c + ch) * k..(g * c + ch + 1) * k];
                    for (e, &t) in dst.iter_mut().zip(wt) {
                        *e = *e + ws * t;
                    }
                }
            }
            beff[g] = b;
        }
        Net { params, d, o, weff, beff }
    }

    fn trace(&self, x: &[T]) -> ([T; NUM_CLASSES], Trace<T>) {
        let Dims { c, w, l, p } = self.d;
        let k = KERNEL_LEN;
        let mut z = vec![T::zero(); SPATIAL_FILTERS * l];
        for g in 0..SPATIAL_FILTERS {
            let zg = &mut z[g * l..(g + 1) * l];
            zg.iter_mut().for_each(|v| *v = self.beff[g]);
            for ch in 0..c {
                let row = &x[ch * w..(ch + 1) * w];
                let kern = &self.weff[(g * c + ch) * k..(g * c + ch + 1) * k];
                for (kk, &wk) in kern.iter().enumerate() {
                    for (zt, &xv) in zg.iter_mut().zip(&row[kk..kk + l]) {
                        *zt = *zt + wk * xv;
                    }
                }
            }
        }
        let inv_pool = lit::<T>(1.0 / POOL_LEN as f64);
        let eps = lit::<T>(LOG_EPS);
        let mut pooled = vec![T::zero(); SPATIAL_FILTERS * p];
        for g in 0..SPATIAL_FILTERS {
            for j in 0..p {
                let start = g * l + j * POOL_STRIDE;
                let s: T = z[start..start + POOL_LEN].iter().map(|&v| v * v).sum();
                pooled[g * p + j] = s * inv_pool;
            }
        }
        let q: Vec<T> = pooled.iter().map(|&v| (v + eps).ln()).collect();
        let feat = q.len();
        let mut logits = [T::zero(); NUM_CLASSES];
        for (o, out) in logits.iter_mut().enumerate() {
            let wrow = &self.params[self.o.wd + o * feat..self.o.wd + (o + 1) * feat];
            *out = self.params[self.o.bd + o] + wrow.iter().zip(&q).map(|(&a, &b)| a * b).sum::<T>();
        }
        (logits, Trace { z, pooled, q })
    }

    pub fn logits(&self, x: &[T]) -> [T; NUM_CLASSES] {
        self.trace(x).0
    }

    /// Adds the gradient of `sum_i w[y_i] * nll_i` to `grad`; returns that sum.
    pub fn accumulate(&self, batch: &[&[T]], labels: &[usize], weights: &[T; NUM_CLASSES], grad: &mut [T]) -> T {
        let Dims { c, w, l, p } = self.d;
        let (f1, f2, k) = (TEMPORAL_FILTERS, SPATIAL_FILTERS, KERNEL_LEN);
        let feat = f2 * p;
        let o = &self.o;
        let mut dweff = vec![T::zero(); f2 * c * k];
        let mut dbeff = vec![T::zero(); f2];
        let mut loss = T::zero();
        let inv_pool = lit::<T>(1.0 / POOL_LEN as f64);
        let eps = lit::<T>(LOG_EPS);
        let two = lit::<T>(2.0);
        let mut dz = vec![T::zero(); f2 * l];
        for (x, &y) in batch.iter().zip(labels) {
            let (logits, tr) = self.trace(x);
            loss = loss + weights[y] * nll(&logits, y);
            let dlog = nll_grad(&logits, y, weights[y]);
            for (oi, &dl) in dlog.iter().enumerate() {
                let gw = &mut grad[o.wd + oi * feat..o.wd + (oi + 1) * feat];
                for (gv, &qv) in gw.iter_mut().zip(&tr.q) {
                    *gv = *gv + dl * qv;
                }
                grad[o.bd + oi] = grad[o.bd + oi] + dl;
            }
            dz.iter_mut().for_each(|v| *v = T::zero());
            for g in 0..f2 {
                for j in 0..p {
                    let i = g * p + j;
                    let dq: T = (0..NUM_CLASSES)
                        .map(|oi| self.params[o.wd + oi * feat + i] * dlog[oi])
                        .sum();
                    let ds = dq / (tr.pooled[i] + eps) * inv_pool;
                    let start = g * l + j * POOL_STRIDE;
                    for v in &mut dz[start..start + POOL_LEN] {
                        *v = *v + ds;
                    }
                }
            }
            for (d, &zv) in dz.iter_mut().zip(&tr.z) {
                *d = *d * two * zv;
            }
            for g in 0..f2 {
                let dzg = &dz[g * l..(g + 1) * l];
                dbeff[g] = dbeff[g] + dzg.iter().copied().sum::<T>();
                for ch in 0..c {
                    let row = &x[ch * w..(ch + 1) * w];
                    for kk in 0..k {
                        let s: T = dzg.iter().zip(&row[kk..kk + l]).map(|(&a, &b)| a * b).sum();
                        let idx = (g * c + ch) * k + kk;
                        dweff[idx] = dweff[idx] + s;
                    }
                }
            }
        }
        // map the fused-kernel gradient back onto the two convolutions
        for g in 0..f2 {
            grad[o.bs + g] = grad[o.bs + g] + dbeff[g];
            for f in 0..f1 {
                let wt = &self.params[o.wt + f * k..o.wt + (f + 1) * k];
                let bt = self.params[o.bt + f];
                let mut dbt = T::zero();
                for ch in 0..c {
                    let de = &dweff[(g * c + ch) * k..(g * c + ch + 1) * k];
                    let ws_idx = o.ws + (g * f1 + f) * c + ch;
                    let ws = self.params[ws_idx];
                    let dws: T = de.iter().zip(wt).map(|(&a, &b)| a * b).sum::<T>() + dbeff[g] * bt;
                    grad[ws_idx] = grad[ws_idx] + dws;
                    for kk in 0..k {
                        grad[o.wt + f * k + kk] = grad[o.wt + f * k + kk] + de[kk] * ws;
                    }
                    dbt = dbt + ws;
                }
                grad[o.bt + f] = grad[o.bt + f] + dbeff[g] * dbt;
            }
        }
        loss
    }
}
