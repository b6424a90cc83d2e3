//! Examples, datasets, seed/stream splitting and the synthetic stream generator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One instance: dense real features and a binary label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Example {
    pub fn new(features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidExample(format!(
                "label value {bad} is not 0/1"
            )));
        }
        Ok(Self { features, labels })
    }

    /// Labels as reals, for label-space arithmetic.
    pub fn label_vector(&self) -> Vec<f64> {
        labels_to_f64(&self.labels)
    }
}

pub fn labels_to_f64(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| f64::from(l)).collect()
}

/// An ordered, dimension-consistent list of examples.
///
/// `q >= 1` is enforced here; the learner additionally needs `q >= 2` so that
/// an embedding with `d < q` exists, which is checked when a run starts.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamDataset {
    name: String,
    p: usize,
    q: usize,
    examples: Vec<Example>,
}

impl StreamDataset {
    pub fn new(
        name: impl Into<String>,
        p: usize,
        q: usize,
        examples: Vec<Example>,
    ) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::Config(format!(
                "dataset dims must be positive (p={p}, q={q})"
            )));
        }
        if examples.is_empty() {
            return Err(Error::Config("dataset has no examples".into()));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != p {
                return Err(Error::InvalidExample(format!(
                    "example {i}: {} features, dataset has p={p}",
                    ex.features.len()
                )));
            }
            if ex.labels.len() != q {
                return Err(Error::InvalidExample(format!(
                    "example {i}: {} labels, dataset has q={q}",
                    ex.labels.len()
                )));
            }
            if ex.labels.iter().any(|&l| l > 1) {
                return Err(Error::InvalidExample(format!(
                    "example {i}: non-binary label"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            p,
            q,
            examples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    /// Mean number of positive labels per example.
    pub fn label_cardinality(&self) -> f64 {
        let total: usize = self
            .examples
            .iter()
            .map(|e| e.labels.iter().filter(|&&l| l == 1).count())
            .sum();
        total as f64 / self.examples.len() as f64
    }
}

/// Result of splitting a dataset into the initial memory and the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSplit {
    pub seed: Vec<Example>,
    pub stream: Vec<Example>,
}

fn seed_len(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "seed fraction {fraction} not in (0,1)"
        )));
    }
    let k = libm::round(fraction * n as f64) as usize;
    if k == 0 {
        return Err(Error::Config(format!(
            "seed fraction {fraction} of {n} examples leaves an empty seed set"
        )));
    }
    if k >= n {
        return Err(Error::Config(format!(
            "seed fraction {fraction} of {n} examples leaves an empty stream"
        )));
    }
    Ok(k)
}

/// Shuffles (driven by `rng_seed`) and splits off `round(fraction·n)` seed examples.
pub fn split_seed(ds: &StreamDataset, fraction: f64, rng_seed: u64) -> Result<SeedSplit> {
    let k = seed_len(ds.len(), fraction)?;
    let mut all = ds.examples.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    all.shuffle(&mut rng);
    let stream = all.split_off(k);
    Ok(SeedSplit { seed: all, stream })
}

/// Same as [`split_seed`] but keeps file order: the first `round(fraction·n)`
/// examples become the seed set.
pub fn split_seed_ordered(ds: &StreamDataset, fraction: f64) -> Result<SeedSplit> {
    let k = seed_len(ds.len(), fraction)?;
    let mut all = ds.examples.clone();
    let stream = all.split_off(k);
    Ok(SeedSplit { seed: all, stream })
}

/// Parameters of the latent-factor synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub latent_dim: usize,
    pub noise_std: f64,
    pub label_threshold: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            p: 20,
            q: 8,
            latent_dim: 4,
            noise_std: 0.1,
            label_threshold: 0.5,
            rng_seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!(
                "synthetic n must be >= 10, got {}",
                self.n
            )));
        }
        if self.p == 0 || self.q == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "synthetic p, q and latent_dim must be positive".into(),
            ));
        }
        if self.latent_dim > self.p.min(self.q) {
            return Err(Error::Config(format!(
                "latent_dim {} exceeds min(p, q) = {}",
                self.latent_dim,
                self.p.min(self.q)
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std {} must be >= 0",
                self.noise_std
            )));
        }
        if !self.label_threshold.is_finite() {
            return Err(Error::Config("label_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// The hidden generative parameters of a synthetic stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    /// p × latent loading matrix `B`.
    pub loadings: Matrix,
    /// q × latent label directions, one `w_j` per row.
    pub label_dirs: Matrix,
    pub threshold: f64,
}

impl LatentModel {
    fn labels_of_latent(&self, z: &[f64]) -> Vec<u8> {
        (0..self.label_dirs.rows())
            .map(|j| u8::from(crate::linalg::dot(self.label_dirs.row(j), z) > self.threshold))
            .collect()
    }

    /// Labels implied by noise-free features: recovers `z = B⁺x` by least squares.
    pub fn labels_from_features(&self, x: &[f64]) -> Result<Vec<u8>> {
        let gram = self.loadings.gram();
        let rhs = Matrix::from_vec(self.loadings.cols(), 1, self.loadings.tr_mul_vec(x)?)?;
        let l = crate::linalg::cholesky(&gram)
            .ok_or_else(|| Error::Config("loading matrix is rank deficient".into()))?;
        let z = crate::linalg::cholesky_solve(&l, &rhs);
        Ok(self.labels_of_latent(z.as_slice()))
    }
}

/// Draws a label-correlated stream from a shared latent factor.
///
/// A loading matrix `B` (p × latent) and label directions `w_j` (latent) are
/// drawn once. Each example draws `z ~ N(0, I)`, sets `x = B z + noise` and
/// `y_j = [w_j · z > threshold]`, so every label depends on the same few
/// latent coordinates.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<StreamDataset> {
    generate_synthetic_with_model(cfg).map(|(ds, _)| ds)
}

/// [`generate_synthetic`], also returning the drawn generative parameters.
pub fn generate_synthetic_with_model(cfg: &SynthConfig) -> Result<(StreamDataset, LatentModel)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let l = cfg.latent_dim;
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let loadings = Matrix::from_vec(cfg.p, l, (0..cfg.p * l).map(|_| normal()).collect())?;
    let inv_sqrt_l = 1.0 / libm::sqrt(l as f64);
    // w_j scaled so that w_j · z has roughly unit variance
    let label_dirs = Matrix::from_vec(
        cfg.q,
        l,
        (0..cfg.q * l).map(|_| normal() * inv_sqrt_l).collect(),
    )?;
    let model = LatentModel {
        loadings,
        label_dirs,
        threshold: cfg.label_threshold,
    };

    let mut examples = Vec::with_capacity(cfg.n);
    let mut z = alloc::vec![0.0; l];
    for _ in 0..cfg.n {
        z.iter_mut().for_each(|zi| *zi = normal());
        let features = (0..cfg.p)
            .map(|i| {
                let clean = crate::linalg::dot(model.loadings.row(i), &z);
                if cfg.noise_std > 0.0 {
                    clean + cfg.noise_std * normal()
                } else {
                    clean
                }
            })
            .collect();
        examples.push(Example {
            features,
            labels: model.labels_of_latent(&z),
        });
    }
    let ds = StreamDataset::new(
        format!("synth-n{}-p{}-q{}-l{}", cfg.n, cfg.p, cfg.q, l),
        cfg.p,
        cfg.q,
        examples,
    )?;
    Ok((ds, model))
}
