//! Central finite-difference gradient checks.

use rand::seq::index::sample;

use super::{Model, ModelSpec};
use crate::error::Result;
use crate::kinlab::NUM_CLASSES;
use crate::synthgen::stream_rng;

/// Outcome for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub checked: usize,
    pub failures: usize,
    /// Largest `|g_analytic - g_fd| / max(1, |g_fd|)`.
    pub max_rel_error: f64,
}

/// Parameter indices to probe per layer: every parameter of a layer with at
/// most `per_layer`, otherwise `per_layer` sampled without replacement.
pub fn sample_indices(spec: &ModelSpec, per_layer: usize, seed: u64) -> Vec<(&'static str, Vec<usize>)> {
    let layout = spec.layout();
    let mut rng = stream_rng(seed, 5);
    spec.layers()
        .into_iter()
        .map(|layer| {
            let all: Vec<usize> = layout
                .iter()
                .filter(|t| t.layer == layer)
                .flat_map(|t| t.range())
                .collect();
            let picked = if all.len() <= per_layer {
                all
            } else {
                let mut idx: Vec<usize> = sample(&mut rng, all.len(), per_layer).into_iter().map(|i| all[i]).collect();
                idx.sort_unstable();
                idx
            };
            (layer, picked)
        })
        .collect()
}

/// Compares analytic gradients of the mean weighted loss with central
/// differences of step `h`.
pub fn check_gradients(
    model: &Model<f64>,
    batch: &[&[f64]],
    labels: &[usize],
    weights: &[f64; NUM_CLASSES],
    per_layer: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<Vec<LayerCheck>> {
    let (_, grad) = model.loss_and_grad(batch, labels, weights)?;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (layer, idx) in sample_indices(&model.spec, per_layer, seed) {
        let mut check = LayerCheck {
            layer,
            checked: idx.len(),
            failures: 0,
            max_rel_error: 0.0,
        };
        for i in idx {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = probe.loss(batch, labels, weights)?;
            probe.params[i] = orig - h;
            let down = probe.loss(batch, labels, weights)?;
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1.0);
            check.max_rel_error = check.max_rel_error.max(rel);
            if !(rel <= tol) {
                check.failures += 1;
            }
        }
        out.push(check);
    }
    Ok(out)
}
