//! Attention-based chroma predictors.
//!
//! All three variants share the same four stages: a boundary branch of two
//! 1-D convolutions, a luma branch of two 3×3 convolutions, attention from
//! every luma position over the boundary positions, and a 1×1 prediction
//! head producing Cb and Cr. Scheme A puts a learned stride-2 3×3
//! convolution in front of the luma branch so it consumes the full `2N×2N`
//! luma block. Scheme B feeds abscissa/ordinate location channels into both
//! branches.

mod checkpoint;
mod gradcheck;
mod model;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_model_gradients, smooth_instance, GradInstance, ModelGradCheck, MODEL_FD_STEP, RELU_MARGIN};
pub use model::{ChromaNet, Mode, ModelInput, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    SchemeA,
    SchemeB,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::SchemeA, Variant::SchemeB];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SchemeA => "scheme_a",
            Variant::SchemeB => "scheme_b",
        }
    }

    /// Channels of the boundary sequence.
    pub fn boundary_channels(self) -> usize {
        match self {
            Variant::SchemeB => 5,
            _ => 3,
        }
    }

    /// Channels of the luma block as fed to the network.
    pub fn luma_channels(self) -> usize {
        match self {
            Variant::SchemeB => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "scheme_a" => Ok(Variant::SchemeA),
            "scheme_b" => Ok(Variant::SchemeB),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?} (expected baseline, scheme_a or scheme_b)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Output channels of the learned down-sampling layer (scheme A).
    pub d1: usize,
    pub c_branch: usize,
    pub d_attn: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            d1: 32,
            c_branch: 32,
            d_attn: 16,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.c_branch == 0 || self.d_attn == 0 {
            return Err(Error::InvalidArgument(format!(
                "model widths must be >= 1, got d1={} c_branch={} d_attn={}",
                self.d1, self.c_branch, self.d_attn
            )));
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.c_branch;
        let d = self.d_attn;
        let v = self.variant;
        let mut layers: Vec<(&str, Vec<usize>)> = vec![
            ("boundary.conv1", vec![3, v.boundary_channels(), c]),
            ("boundary.conv2", vec![3, c, c]),
        ];
        let luma_in = if v == Variant::SchemeA {
            layers.push(("luma.down", vec![3, 3, 1, self.d1]));
            self.d1
        } else {
            v.luma_channels()
        };
        layers.extend([
            ("luma.conv1", vec![3, 3, luma_in, c]),
            ("luma.conv2", vec![3, 3, c, c]),
            ("attn.query", vec![c, d]),
            ("attn.key", vec![c, d]),
            ("attn.value", vec![c, c]),
            ("head.conv1", vec![1, 1, 2 * c, c]),
            ("head.conv2", vec![1, 1, c, 2]),
        ]);
        let mut out = Vec::with_capacity(2 * layers.len());
        for (name, shape) in layers {
            let width = *shape.last().unwrap();
            out.push((format!("{name}.weight"), shape));
            // A key bias shifts every logit of a softmax row equally, so it
            // never affects the output.
            if name != "attn.key" {
                out.push((format!("{name}.bias"), vec![width]));
            }
        }
        out
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "{} names for {} tensors",
                names.len(),
                tensors.len()
            )));
        }
        Ok(Self { names, tensors })
    }

    /// Zero tensors laid out for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (names, tensors) = config.layout().into_iter().map(|(n, s)| (n, Tensor::zeros(s))).unzip();
        Self { names, tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    fn index(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    /// Panics if `name` is not part of the layout.
    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.tensors[self.index(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = self.index(name);
        &mut self.tensors[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelParams<T>) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    /// All values concatenated in storage order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_values()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Checks that names and shapes match the layout of `config`.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let layout = config.layout();
        let ok = layout.len() == self.names.len()
            && layout
                .iter()
                .zip(self.iter())
                .all(|((n, s), (name, t))| n == name && s.as_slice() == t.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameters do not match the {} layout",
                config.variant
            )))
        }
    }
}

/// He-uniform fan-in initialization with zero biases.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::zeros(config);
    for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
        if name.ends_with(".bias") {
            continue;
        }
        let shape = t.shape();
        let fan_in: usize = shape[..shape.len() - 1].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in t.data_mut() {
            *v = rng.gen_range(-bound..bound) as f32;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::new(Variant::SchemeB).with_seed(11);
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
        let other = init_params(&cfg.with_seed(12)).unwrap();
        assert_ne!(init_params(&cfg).unwrap(), other);
    }

    #[test]
    fn scheme_a_first_layer_shape() {
        let p = init_params(&ModelConfig::new(Variant::SchemeA)).unwrap();
        assert_eq!(p.get("luma.down.weight").shape(), &[3, 3, 1, 32]);
        assert_eq!(p.get("luma.conv1.weight").shape(), &[3, 3, 32, 32]);
        let b = init_params(&ModelConfig::new(Variant::Baseline)).unwrap();
        assert!(!b.contains("luma.down.weight"));
    }

    #[test]
    fn biases_start_at_zero() {
        for v in Variant::ALL {
            let p = init_params(&ModelConfig::new(v)).unwrap();
            for (name, t) in p.iter() {
                if name.ends_with(".bias") {
                    assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
                } else {
                    let bound = (6.0 / (t.len() / t.shape().last().unwrap()) as f32).sqrt();
                    assert!(t.data().iter().all(|&x| x.abs() <= bound), "{name}");
                }
            }
            assert!(p.all_finite());
        }
    }

    #[test]
    fn invalid_widths() {
        let mut cfg = ModelConfig::new(Variant::Baseline);
        cfg.d_attn = 0;
        assert!(init_params(&cfg).is_err());
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }
}
