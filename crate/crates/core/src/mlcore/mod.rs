//! Compact EEG classifiers with analytic gradients.
//!
//! Two architectures share one flat parameter buffer layout:
//!
//! * `CompactConv`: temporal convolution (8 kernels of 13 taps), spatial
//!   convolution over all temporal maps and channels (8 filters), square,
//!   mean pooling (25 / stride 12), `ln(x + 1e-6)`, dense to 3 classes.
//! * `RecurrentNet`: a gated recurrent unit (hidden 64) over time, its final
//!   hidden state feeding a dense layer.
//!
//! Models are generic over the float type so gradients can be checked in
//! 64-bit arithmetic while training runs in 32-bit.

mod adam;
mod checkpoint;
mod conv;
pub mod gradcheck;
mod gru;
mod train;

use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinlab::NUM_CLASSES;
use crate::synthgen::stream_rng;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use train::{
    class_weights, predict, predict_dataset, train, ClassWeighting, EpochLog, TrainConfig, TrainOutcome,
};

const STREAM_INIT: u64 = 3;

/// Floating-point element type of a model.
pub trait Real: Float + FromPrimitive + Sum + Send + Sync + fmt::Debug + Default + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + Sum + Send + Sync + fmt::Debug + Default + 'static {}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    CompactConv,
    RecurrentNet,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::CompactConv => "compact_conv",
            Arch::RecurrentNet => "recurrent",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Arch::CompactConv => 1,
            Arch::RecurrentNet => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Arch> {
        match tag {
            1 => Some(Arch::CompactConv),
            2 => Some(Arch::RecurrentNet),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compact_conv" => Ok(Arch::CompactConv),
            "recurrent" => Ok(Arch::RecurrentNet),
            _ => Err(Error::Config(format!(
                "unknown architecture `{s}` (expected compact_conv or recurrent)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub channels: usize,
    pub window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Uniform(f64),
}

/// One named tensor in the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: &'static str,
    pub layer: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub(crate) init: Init,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub(crate) fn build_layout(tensors: Vec<(&'static str, &'static str, Vec<usize>, Init)>) -> Vec<TensorInfo> {
    let mut offset = 0;
    tensors
        .into_iter()
        .map(|(name, layer, shape, init)| {
            let t = TensorInfo {
                name,
                layer,
                shape,
                offset,
                init,
            };
            offset += t.len();
            t
        })
        .collect()
}

impl ModelSpec {
    pub fn new(arch: Arch, channels: usize, window: usize) -> Result<Self> {
        let spec = ModelSpec { arch, channels, window };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("model needs at least one channel".into()));
        }
        match self.arch {
            Arch::CompactConv => conv::Dims::new(self.channels, self.window).map(|_| ()),
            Arch::RecurrentNet if self.window == 0 => Err(Error::Config("window must be non-empty".into())),
            Arch::RecurrentNet => Ok(()),
        }
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.window
    }

    pub fn layout(&self) -> Vec<TensorInfo> {
        match self.arch {
            Arch::CompactConv => conv::layout(&conv::Dims::new(self.channels, self.window).expect("validated spec")),
            Arch::RecurrentNet => gru::layout(self.channels),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(TensorInfo::len).sum()
    }

    /// Layer names in parameter order.
    pub fn layers(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for t in self.layout() {
            if out.last() != Some(&t.layer) {
                out.push(t.layer);
            }
        }
        out
    }
}

/// A classifier: spec plus flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    pub spec: ModelSpec,
    pub params: Vec<T>,
}

impl<T: Real> Model<T> {
    /// Seeded initialisation.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, STREAM_INIT);
        let mut params = Vec::with_capacity(spec.param_count());
        for t in spec.layout() {
            let bound = match t.init {
                Init::Glorot { fan_in, fan_out } => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                Init::Uniform(b) => b,
            };
            params.extend((0..t.len()).map(|_| lit::<T>(rng.random_range(-bound..bound))));
        }
        Ok(Model { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape {
                expected: format!("{} parameters", spec.param_count()),
                actual: params.len().to_string(),
            });
        }
        Ok(Model { spec, params })
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.spec
            .layout()
            .into_iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.range()])
    }

    /// Zeroes the output layer, making every prediction uniform.
    pub fn zero_output_layer(&mut self) {
        for t in self.spec.layout().iter().filter(|t| t.layer == "dense") {
            self.params[t.range()].iter_mut().for_each(|p| *p = T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec,
            params: self
                .params
                .iter()
                .map(|p| U::from_f64(p.to_f64().expect("finite")).expect("representable"))
                .collect(),
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.spec.input_len() {
            return Err(Error::Shape {
                expected: format!("{} x {}", self.spec.channels, self.spec.window),
                actual: format!("{} values", x.len()),
            });
        }
        Ok(())
    }

    /// Logits for each example (row-major `C x W` windows).
    pub fn forward(&self, batch: &[&[T]]) -> Result<Vec<[T; NUM_CLASSES]>> {
        for x in batch {
            self.check_input(x)?;
        }
        Ok(match self.spec.arch {
            Arch::CompactConv => {
                let net = conv::Net::new(&self.params, self.spec.channels, self.spec.window);
                batch.iter().map(|x| net.logits(x)).collect()
            }
            Arch::RecurrentNet => {
                let net = gru::Net::new(&self.params, self.spec.channels, self.spec.window);
                batch.iter().map(|x| net.logits(x)).collect()
            }
        })
    }

    /// Row-wise softmax of [`Model::forward`].
    pub fn probabilities(&self, batch: &[&[T]]) -> Result<Vec<[T; NUM_CLASSES]>> {
        Ok(self.forward(batch)?.iter().map(softmax).collect())
    }

    /// Mean weighted cross-entropy over the batch.
    pub fn loss(&self, batch: &[&[T]], labels: &[usize], weights: &[T; NUM_CLASSES]) -> Result<T> {
        let logits = self.forward(batch)?;
        cross_entropy(&logits, labels, weights)
    }

    /// Sum of weighted per-example losses and the gradient of that sum.
    pub fn loss_sum_and_grad(
        &self,
        batch: &[&[T]],
        labels: &[usize],
        weights: &[T; NUM_CLASSES],
    ) -> Result<(T, Vec<T>)> {
        if batch.len() != labels.len() {
            return Err(Error::Shape {
                expected: format!("{} labels", batch.len()),
                actual: labels.len().to_string(),
            });
        }
        for (x, &y) in batch.iter().zip(labels) {
            self.check_input(x)?;
            if y >= NUM_CLASSES {
                return Err(Error::InvalidLabel(y));
            }
        }
        let mut grad = vec![T::zero(); self.params.len()];
        let loss = match self.spec.arch {
            Arch::CompactConv => {
                conv::Net::new(&self.params, self.spec.channels, self.spec.window)
                    .accumulate(batch, labels, weights, &mut grad)
            }
            Arch::RecurrentNet => {
                gru::Net::new(&self.params, self.spec.channels, self.spec.window)
                    .accumulate(batch, labels, weights, &mut grad)
            }
        };
        if let Some(t) = self
            .spec
            .layout()
            .iter()
            .find(|t| grad[t.range()].iter().any(|g| !g.is_finite()))
        {
            return Err(Error::Numerical(t.layer.to_string()));
        }
        Ok((loss, grad))
    }

    /// Mean weighted cross-entropy and its gradient.
    pub fn loss_and_grad(&self, batch: &[&[T]], labels: &[usize], weights: &[T; NUM_CLASSES]) -> Result<(T, Vec<T>)> {
        let (sum, mut grad) = self.loss_sum_and_grad(batch, labels, weights)?;
        let n = lit::<T>(batch.len().max(1) as f64);
        grad.iter_mut().for_each(|g| *g = *g / n);
        Ok((sum / n, grad))
    }
}

pub fn softmax<T: Real>(logits: &[T; NUM_CLASSES]) -> [T; NUM_CLASSES] {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e = logits.map(|z| (z - max).exp());
    let s = e.iter().copied().sum::<T>();
    e.map(|v| v / s)
}

/// `ln(sum(exp(z))) - z[y]`, computed stably.
pub(crate) fn nll<T: Real>(logits: &[T; NUM_CLASSES], y: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    lse - logits[y]
}

/// Mean over the batch of `w[y] * -ln p[y]`.
pub fn cross_entropy<T: Real>(logits: &[[T; NUM_CLASSES]], labels: &[usize], weights: &[T; NUM_CLASSES]) -> Result<T> {
    if logits.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", logits.len()),
            actual: labels.len().to_string(),
        });
    }
    if logits.is_empty() {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for (z, &y) in logits.iter().zip(labels) {
        if y >= NUM_CLASSES {
            return Err(Error::InvalidLabel(y));
        }
        total = total + weights[y] * nll(z, y);
    }
    Ok(total / lit(logits.len() as f64))
}

/// Gradient of `w * nll` with respect to the logits: `w * (softmax - onehot)`.
pub(crate) fn nll_grad<T: Real>(logits: &[T; NUM_CLASSES], y: usize, w: T) -> [T; NUM_CLASSES] {
    let mut p = softmax(logits);
    p[y] = p[y] - T::one();
    p.map(|v| v * w)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(spec: &ModelSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, 77);
        (0..n)
            .map(|_| (0..spec.input_len()).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    fn specs() -> [ModelSpec; 2] {
        [
            ModelSpec::new(Arch::CompactConv, 16, 125).unwrap(),
            ModelSpec::new(Arch::RecurrentNet, 16, 125).unwrap(),
        ]
    }

    #[test]
    fn layouts() {
        let [conv, gru] = specs();
        assert_eq!(conv.layers(), vec!["temporal", "spatial", "dense"]);
        assert_eq!(conv.param_count(), 8 * 13 + 8 + 8 * 8 * 16 + 8 + 3 * 8 * 8 + 3);
        assert_eq!(gru.layers(), vec!["gru", "dense"]);
        assert_eq!(gru.param_count(), 192 * 16 + 192 * 64 + 192 * 2 + 3 * 64 + 3);
        assert!(ModelSpec::new(Arch::CompactConv, 16, 20).is_err());
    }

    #[test]
    fn zero_output_gives_uniform() {
        for spec in specs() {
            let mut m = Model::<f64>::new(spec, 1).unwrap();
            m.zero_output_layer();
            let xs = probe(&spec, 3, 2);
            let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
            for p in m.probabilities(&refs).unwrap() {
                for v in p {
                    assert!((v - 1.0 / 3.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_independence_and_determinism() {
        for spec in specs() {
            let m = Model::<f32>::new(spec, 5).unwrap();
            assert_eq!(m, Model::<f32>::new(spec, 5).unwrap());
            let xs: Vec<Vec<f32>> = probe(&spec, 128, 3)
                .into_iter()
                .map(|x| x.into_iter().map(|v| v as f32).collect())
                .collect();
            let refs: Vec<&[f32]> = xs.iter().map(|x| x.as_slice()).collect();
            let all = m.forward(&refs).unwrap();
            let one = m.forward(&refs[17..18]).unwrap();
            for k in 0..3 {
                assert!((all[17][k] - one[0][k]).abs() <= 1e-6);
            }
            assert_eq!(all, m.forward(&refs).unwrap());
            for p in m.probabilities(&refs).unwrap() {
                assert!((p.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let m = Model::<f64>::new(specs()[0], 1).unwrap();
        let x = vec![0.0; 10];
        match m.forward(&[&x]) {
            Err(Error::Shape { expected, actual }) => {
                assert!(expected.contains("16 x 125"));
                assert!(actual.contains("10"));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn loss_examples() {
        let uniform = [1.0; 3];
        let z = [[0.0, 0.0, 0.0]];
        assert!((cross_entropy(&z, &[1], &uniform).unwrap() - 3f64.ln()).abs() < 1e-12);
        let confident = [[0.0, 800.0, 0.0]];
        assert!(cross_entropy(&confident, &[1], &uniform).unwrap().abs() < 1e-12);
        assert!(matches!(cross_entropy(&z, &[3], &uniform), Err(Error::InvalidLabel(3))));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4]), 1);
    }

    #[test]
    fn zero_input_gradients() {
        let spec = specs()[0];
        let m = Model::<f64>::new(spec, 3).unwrap();
        let x = vec![0.0; spec.input_len()];
        let (_, g) = m.loss_and_grad(&[&x, &x], &[0, 2], &[1.0; 3]).unwrap();
        let layout = spec.layout();
        let find = |n: &str| layout.iter().find(|t| t.name == n).unwrap().range();
        assert!(g[find("temporal.weight")].iter().all(|&v| v == 0.0));
        assert!(g[find("temporal.bias")].iter().all(|&v| v != 0.0));
        assert!(g[find("spatial.bias")].iter().all(|&v| v != 0.0));
    }

    #[test]
    fn perfect_prediction_output_gradient_is_small() {
        let spec = specs()[0];
        let mut m = Model::<f64>::new(spec, 3).unwrap();
        m.zero_output_layer();
        let layout = spec.layout();
        let bias = layout.iter().find(|t| t.name == "dense.bias").unwrap().range();
        m.params[bias.start] = 40.0;
        let x = probe(&spec, 1, 1).remove(0);
        let (loss, g) = m.loss_and_grad(&[&x], &[0], &[1.0; 3]).unwrap();
        assert!(loss < 1e-12);
        assert!(g[bias].iter().all(|v| v.is_finite() && v.abs() < 1e-12));
    }
}
