//! Run configuration: defaults, an optional `key=value` file, then flag overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use oml_core::{Hyperparams, Method, Ridge, SynthConfig, TrainNnMetric, UpdateRule};

pub fn parse_ridge(s: &str) -> Result<Ridge> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Ridge::Auto);
    }
    let r: f64 = s
        .parse()
        .with_context(|| format!("ridge must be \"auto\" or a number, got {s:?}"))?;
    if !(r >= 0.0 && r.is_finite()) {
        bail!("ridge must be >= 0, got {r}");
    }
    Ok(Ridge::Fixed(r))
}

pub fn ridge_name(r: Ridge) -> String {
    match r {
        Ridge::Auto => "auto".into(),
        Ridge::Fixed(x) => x.to_string(),
    }
}

pub fn parse_update_rule(s: &str) -> Result<UpdateRule> {
    match s {
        "exact" => Ok(UpdateRule::Exact),
        "first-order" | "first_order" => Ok(UpdateRule::FirstOrder),
        _ => bail!("update rule must be exact or first-order, got {s:?}"),
    }
}

pub fn update_rule_name(r: UpdateRule) -> &'static str {
    match r {
        UpdateRule::Exact => "exact",
        UpdateRule::FirstOrder => "first-order",
    }
}

pub fn parse_train_nn(s: &str) -> Result<TrainNnMetric> {
    match s {
        "raw" => Ok(TrainNnMetric::EuclideanRaw),
        "learned" => Ok(TrainNnMetric::Learned),
        _ => bail!("train-nn must be raw or learned, got {s:?}"),
    }
}

pub fn train_nn_name(m: TrainNnMetric) -> &'static str {
    match m {
        TrainNnMetric::EuclideanRaw => "raw",
        TrainNnMetric::Learned => "learned",
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "oml" => Ok(Method::Oml),
        "knn" => Ok(Method::KnnEuclidean),
        _ => bail!("method must be oml or knn, got {s:?}"),
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("expected a boolean, got {s:?}"),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| anyhow!("{key}: {e} ({s:?})"))
}

/// `n=2000,p=20,q=8,latent_dim=4,noise_std=0.1,label_threshold=0.5,seed=1`;
/// omitted keys keep the generator defaults.
pub fn parse_synth_spec(spec: &str) -> Result<SynthConfig> {
    let mut cfg = SynthConfig::default();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("synth spec entry {part:?} is not key=value"))?;
        match k.trim() {
            "n" => cfg.n = parse_num(k, v)?,
            "p" => cfg.p = parse_num(k, v)?,
            "q" => cfg.q = parse_num(k, v)?,
            "latent_dim" | "latent" => cfg.latent_dim = parse_num(k, v)?,
            "noise_std" | "noise" => cfg.noise_std = parse_num(k, v)?,
            "label_threshold" | "threshold" => cfg.label_threshold = parse_num(k, v)?,
            "seed" | "rng_seed" => cfg.rng_seed = parse_num(k, v)?,
            other => bail!("unknown synth key {other:?}"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `key=value` lines; `#` starts a comment. Dashes in keys become underscores.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value", i + 1))?;
        let key = k.trim().replace('-', "_");
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!("config line {}: duplicate key {key:?}", i + 1);
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    /// Label column count for dense CSV input; inferred from the header when absent.
    pub csv_labels: Option<usize>,
    pub methods: Vec<Method>,
    /// `hp.rng_seed` is overwritten per entry of `seeds`.
    pub hp: Hyperparams,
    pub seeds: Vec<u64>,
    pub checkpoint_every: u64,
    pub out: PathBuf,
}

/// Every run setting as an optional override; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub data: Option<PathBuf>,
    pub synth: Option<String>,
    pub csv_labels: Option<usize>,
    pub methods: Vec<String>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub seed_fraction: Option<f64>,
    pub ridge: Option<String>,
    pub update_rule: Option<String>,
    pub train_nn: Option<String>,
    pub threshold: Option<f64>,
    pub checkpoint_every: Option<u64>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub no_shuffle: bool,
    pub max_store: Option<usize>,
}

impl RunOverrides {
    /// Converts config-file entries into overrides.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut o = RunOverrides::default();
        for (k, v) in map {
            let list = || v.split(',').map(str::trim).filter(|s| !s.is_empty());
            match k.as_str() {
                "data" => o.data = Some(PathBuf::from(v)),
                "synth" => o.synth = Some(v.clone()),
                "csv_labels" => o.csv_labels = Some(parse_num(k, v)?),
                "method" | "methods" => o.methods = list().map(String::from).collect(),
                "d" => o.d = Some(parse_num(k, v)?),
                "k" => o.k = Some(parse_num(k, v)?),
                "m" | "lambda_min" => o.lambda_min = Some(parse_num(k, v)?),
                "M" | "lambda_max" => o.lambda_max = Some(parse_num(k, v)?),
                "seed_fraction" => o.seed_fraction = Some(parse_num(k, v)?),
                "ridge" => o.ridge = Some(v.clone()),
                "update_rule" => o.update_rule = Some(v.clone()),
                "train_nn" => o.train_nn = Some(v.clone()),
                "threshold" => o.threshold = Some(parse_num(k, v)?),
                "checkpoint_every" => o.checkpoint_every = Some(parse_num(k, v)?),
                "seed" | "seeds" => {
                    o.seeds = list().map(|s| parse_num(k, s)).collect::<Result<_>>()?;
                }
                "out" => o.out = Some(PathBuf::from(v)),
                "shuffle" => o.no_shuffle = !parse_bool(v)?,
                "no_shuffle" => o.no_shuffle = parse_bool(v)?,
                "max_store" => o.max_store = Some(parse_num(k, v)?),
                other => bail!("unknown config key {other:?}"),
            }
        }
        Ok(o)
    }

    /// `self` wins wherever it sets a value.
    pub fn over(self, base: RunOverrides) -> RunOverrides {
        // a data path and a synth spec are one setting
        let (data, synth) = if self.data.is_some() || self.synth.is_some() {
            (self.data, self.synth)
        } else {
            (base.data, base.synth)
        };
        RunOverrides {
            data,
            synth,
            csv_labels: self.csv_labels.or(base.csv_labels),
            methods: if self.methods.is_empty() {
                base.methods
            } else {
                self.methods
            },
            d: self.d.or(base.d),
            k: self.k.or(base.k),
            lambda_min: self.lambda_min.or(base.lambda_min),
            lambda_max: self.lambda_max.or(base.lambda_max),
            seed_fraction: self.seed_fraction.or(base.seed_fraction),
            ridge: self.ridge.or(base.ridge),
            update_rule: self.update_rule.or(base.update_rule),
            train_nn: self.train_nn.or(base.train_nn),
            threshold: self.threshold.or(base.threshold),
            checkpoint_every: self.checkpoint_every.or(base.checkpoint_every),
            seeds: if self.seeds.is_empty() {
                base.seeds
            } else {
                self.seeds
            },
            out: self.out.or(base.out),
            no_shuffle: self.no_shuffle || base.no_shuffle,
            max_store: self.max_store.or(base.max_store),
        }
    }

    /// Fills defaults and validates everything that does not need the data.
    pub fn resolve(self) -> Result<RunConfig> {
        let source = match (self.data, self.synth) {
            (Some(_), Some(_)) => bail!("give either --data or --synth, not both"),
            (Some(path), None) => DataSource::File(path),
            (None, Some(spec)) => DataSource::Synth(parse_synth_spec(&spec)?),
            (None, None) => bail!("no dataset: pass --data <file> or --synth <spec>"),
        };
        let methods = if self.methods.is_empty() {
            vec![Method::Oml]
        } else {
            let mut ms = Vec::new();
            for m in &self.methods {
                let m = parse_method(m)?;
                if !ms.contains(&m) {
                    ms.push(m);
                }
            }
            ms
        };
        let defaults = Hyperparams::default();
        let hp = Hyperparams {
            d: self.d.or(defaults.d),
            k: self.k.unwrap_or(defaults.k),
            lambda_min: self.lambda_min.unwrap_or(defaults.lambda_min),
            lambda_max: self.lambda_max.unwrap_or(defaults.lambda_max),
            seed_fraction: self.seed_fraction.unwrap_or(defaults.seed_fraction),
            ridge: self
                .ridge
                .as_deref()
                .map(parse_ridge)
                .transpose()?
                .unwrap_or(defaults.ridge),
            update_rule: self
                .update_rule
                .as_deref()
                .map(parse_update_rule)
                .transpose()?
                .unwrap_or(defaults.update_rule),
            train_nn: self
                .train_nn
                .as_deref()
                .map(parse_train_nn)
                .transpose()?
                .unwrap_or(defaults.train_nn),
            threshold: self.threshold.unwrap_or(defaults.threshold),
            rng_seed: defaults.rng_seed,
            shuffle: !self.no_shuffle,
            max_store: self.max_store,
        };
        let seeds = if self.seeds.is_empty() {
            vec![defaults.rng_seed]
        } else {
            self.seeds
        };
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != seeds.len() {
            bail!("duplicate --seed values");
        }
        let checkpoint_every = self.checkpoint_every.unwrap_or(10);
        if checkpoint_every == 0 {
            bail!("checkpoint-every must be >= 1");
        }
        if self.csv_labels == Some(0) {
            bail!("csv-labels must be >= 1");
        }
        Ok(RunConfig {
            source,
            csv_labels: self.csv_labels,
            methods,
            hp,
            seeds,
            checkpoint_every,
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}
