//! Versioned JSON model snapshots.

use anyhow::{bail, Context, Result};
use oml_core::{
    Hyperparams, Matrix, MetricV, ModelState, NeighborStore, Projection, RunModel, RunOutput,
};
use serde::{Deserialize, Serialize};

use crate::config;

pub const FORMAT: &str = "oml-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl MatrixRecord {
    fn of(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        Ok(Matrix::from_vec(self.rows, self.cols, self.data.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamsRecord {
    pub d: Option<usize>,
    pub k: usize,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub seed_fraction: f64,
    pub ridge: String,
    pub update_rule: String,
    pub train_nn: String,
    pub threshold: f64,
    pub rng_seed: u64,
    pub shuffle: bool,
    pub max_store: Option<usize>,
}

impl HyperparamsRecord {
    pub fn of(hp: &Hyperparams) -> Self {
        Self {
            d: hp.d,
            k: hp.k,
            m: hp.lambda_min,
            big_m: hp.lambda_max,
            seed_fraction: hp.seed_fraction,
            ridge: config::ridge_name(hp.ridge),
            update_rule: config::update_rule_name(hp.update_rule).into(),
            train_nn: config::train_nn_name(hp.train_nn).into(),
            threshold: hp.threshold,
            rng_seed: hp.rng_seed,
            shuffle: hp.shuffle,
            max_store: hp.max_store,
        }
    }

    pub fn to_hyperparams(&self) -> Result<Hyperparams> {
        Ok(Hyperparams {
            d: self.d,
            k: self.k,
            lambda_min: self.m,
            lambda_max: self.big_m,
            seed_fraction: self.seed_fraction,
            ridge: config::parse_ridge(&self.ridge)?,
            update_rule: config::parse_update_rule(&self.update_rule)?,
            train_nn: config::parse_train_nn(&self.train_nn)?,
            threshold: self.threshold,
            rng_seed: self.rng_seed,
            shuffle: self.shuffle,
            max_store: self.max_store,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub p: usize,
    pub q: usize,
    /// Embedding dimension; absent for the Euclidean baseline.
    pub d: Option<usize>,
    pub hyperparams: HyperparamsRecord,
    pub round: u64,
    pub cumulative_loss: f64,
    pub projection: Option<MatrixRecord>,
    pub projection_ridge: Option<f64>,
    pub metric: Option<MatrixRecord>,
    pub store: StoreRecord,
}

/// A snapshot turned back into a usable model.
#[derive(Debug, Clone)]
pub enum RestoredModel {
    Oml(ModelState),
    Knn(NeighborStore),
}

fn store_record(store: &NeighborStore) -> StoreRecord {
    StoreRecord {
        features: (0..store.len())
            .map(|i| store.features(i).to_vec())
            .collect(),
        labels: (0..store.len()).map(|i| store.labels(i).to_vec()).collect(),
    }
}

impl ModelSnapshot {
    pub fn from_run(run: &RunOutput, hp: &Hyperparams) -> Self {
        let hyperparams = HyperparamsRecord::of(hp);
        match &run.model {
            RunModel::Oml(state) => ModelSnapshot {
                format: FORMAT.into(),
                version: VERSION,
                method: run.method.name().into(),
                p: state.projection().p(),
                q: state.projection().q(),
                d: Some(state.metric().d()),
                hyperparams,
                round: state.round(),
                cumulative_loss: state.cumulative_loss(),
                projection: Some(MatrixRecord::of(state.projection().matrix())),
                projection_ridge: Some(state.projection().ridge()),
                metric: Some(MatrixRecord::of(state.metric().matrix())),
                store: store_record(state.store()),
            },
            RunModel::KnnEuclidean(store) => ModelSnapshot {
                format: FORMAT.into(),
                version: VERSION,
                method: run.method.name().into(),
                p: store.p(),
                q: store.q(),
                d: None,
                hyperparams,
                round: run.stream_size as u64,
                cumulative_loss: 0.0,
                projection: None,
                projection_ridge: None,
                metric: None,
                store: store_record(store),
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("snapshot serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: ModelSnapshot = serde_json::from_str(text).context("malformed model snapshot")?;
        if snap.format != FORMAT {
            bail!("not a model snapshot (format {:?})", snap.format);
        }
        if snap.version != VERSION {
            bail!(
                "unsupported snapshot version {} (expected {VERSION})",
                snap.version
            );
        }
        Ok(snap)
    }

    pub fn restore(&self) -> Result<RestoredModel> {
        let hp = self.hyperparams.to_hyperparams()?;
        if self.store.features.len() != self.store.labels.len() {
            bail!(
                "store has {} feature rows but {} label rows",
                self.store.features.len(),
                self.store.labels.len()
            );
        }
        match self.method.as_str() {
            "oml" => {
                let (Some(pm), Some(vm)) = (&self.projection, &self.metric) else {
                    bail!("oml snapshot lacks projection or metric");
                };
                let proj =
                    Projection::from_matrix(pm.to_matrix()?, self.projection_ridge.unwrap_or(0.0))?;
                let metric = MetricV::from_matrix(vm.to_matrix()?)?;
                let mut store =
                    NeighborStore::new(self.p, self.q).with_capacity_limit(hp.max_store);
                for (x, y) in self.store.features.iter().zip(&self.store.labels) {
                    store.push(x, y, &proj.project(x)?)?;
                }
                Ok(RestoredModel::Oml(ModelState::from_parts(
                    proj,
                    metric,
                    store,
                    self.round,
                    self.cumulative_loss,
                )?))
            }
            "knn" => {
                let mut store =
                    NeighborStore::new_raw(self.p, self.q).with_capacity_limit(hp.max_store);
                for (x, y) in self.store.features.iter().zip(&self.store.labels) {
                    store.push(x, y, &[])?;
                }
                Ok(RestoredModel::Knn(store))
            }
            other => bail!("unknown method {other:?} in snapshot"),
        }
    }
}
