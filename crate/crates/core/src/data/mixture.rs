//! Per-class diagonal Gaussians reshaped into image tensors.

use crate::encoder::InputShape;
use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngState, Tensor};

use super::LabeledDataset;

/// Class `c` draws from `N(means[c], diag(vars[c]))`, reshaped to `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
    pub shape: InputShape,
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>, shape: InputShape) -> Result<Self> {
        let spec = MixtureSpec { means, vars, shape };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.means.len() != self.vars.len() {
            return Err(Error::invalid("mixture needs one mean and one variance vector per class"));
        }
        let dim = self.shape.len();
        for (c, (m, v)) in self.means.iter().zip(&self.vars).enumerate() {
            if m.len() != dim || v.len() != dim {
                return Err(Error::shape(format!("class {c}: vectors must have {dim} entries")));
            }
            if m.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::invalid(format!("class {c}: means must be finite and variances >= 0")));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    /// Three classes on 1×8×8 images. Class `c` has mean 0.6 on pixels with
    /// index `≡ c (mod 3)` and 0 elsewhere; the class variances are 1.0, 0.6
    /// and 1.4, so classes differ in both first and second moments.
    pub fn toy() -> Self {
        let shape = InputShape::new(1, 8, 8);
        let dim = shape.len();
        let means = (0..3)
            .map(|c| (0..dim).map(|j| if j % 3 == c { 0.6 } else { 0.0 }).collect())
            .collect();
        let vars = [1.0, 0.6, 1.4].iter().map(|&v| vec![v; dim]).collect();
        MixtureSpec { means, vars, shape }
    }
}

/// `n_per_class` samples of every class, class-major. Class `c` uses the
/// stream `rng.split(Mixture, [c])`.
pub fn gen_mixture(spec: &MixtureSpec, n_per_class: usize, rng: &RngState) -> Result<LabeledDataset> {
    spec.validate()?;
    let dim = spec.shape.len();
    let classes = spec.num_classes();
    let mut data = Vec::with_capacity(classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for c in 0..classes {
        let mut stream = rng.split(Purpose::Mixture, &[c as u64]);
        let z = stream.gaussian([n_per_class, dim], 0.0, 1.0)?;
        for row in z.data().chunks_exact(dim.max(1)) {
            data.extend(row.iter().zip(&spec.means[c]).zip(&spec.vars[c]).map(|((z, m), v)| m + v.sqrt() * z));
        }
        labels.extend(std::iter::repeat_n(c, n_per_class));
    }
    let s = spec.shape;
    let images = Tensor::new(vec![classes * n_per_class, s.channels, s.height, s.width], data)?;
    LabeledDataset::new(images, labels, classes)
}
