//! Prequential (test-then-train) evaluation and the multi-label metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{self, StreamDataset};
use crate::error::{Error, Result};
use crate::knn::{self, NeighborStore};
use crate::linalg::{self, Matrix};
use crate::metric_learner::{Hyperparams, ModelState};

/// One row of the per-round learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub round: u64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub example_f1: f64,
    pub hamming_loss: f64,
    pub cumulative_loss: f64,
}

/// Running confusion counts and the curve recorded so far.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    q: usize,
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    tn: Vec<u64>,
    example_f1_sum: f64,
    examples: u64,
    hamming_errors: u64,
    cells: u64,
    curve: Vec<CurveRow>,
    r_hat: f64,
}

impl MetricsReport {
    pub fn new(q: usize) -> Self {
        Self {
            q,
            tp: vec![0; q],
            fp: vec![0; q],
            fn_: vec![0; q],
            tn: vec![0; q],
            example_f1_sum: 0.0,
            examples: 0,
            hamming_errors: 0,
            cells: 0,
            curve: Vec::new(),
            r_hat: 0.0,
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn examples(&self) -> u64 {
        self.examples
    }

    /// Per-label `(TP, FP, FN, TN)`.
    pub fn label_counts(&self, j: usize) -> (u64, u64, u64, u64) {
        (self.tp[j], self.fp[j], self.fn_[j], self.tn[j])
    }

    pub fn hamming_errors(&self) -> u64 {
        self.hamming_errors
    }

    pub fn cells(&self) -> u64 {
        self.cells
    }

    pub fn curve(&self) -> &[CurveRow] {
        &self.curve
    }

    /// Running max of `‖x_t‖²` over the instances seen.
    pub fn r_hat(&self) -> f64 {
        self.r_hat
    }

    pub fn observe_instance(&mut self, x: &[f64]) {
        self.r_hat = f64::max(self.r_hat, linalg::norm_sq(x));
    }

    /// Adds one (prediction, truth) pair.
    pub fn update_confusion(&mut self, predicted: &[u8], truth: &[u8]) -> Result<()> {
        for (what, len) in [
            ("predicted labels", predicted.len()),
            ("true labels", truth.len()),
        ] {
            if len != self.q {
                return Err(Error::Shape {
                    what,
                    expected: self.q,
                    found: len,
                });
            }
        }
        let (mut tp, mut npred, mut ntrue) = (0u64, 0u64, 0u64);
        for (j, (&p, &t)) in predicted.iter().zip(truth).enumerate() {
            match (p != 0, t != 0) {
                (true, true) => self.tp[j] += 1,
                (true, false) => self.fp[j] += 1,
                (false, true) => self.fn_[j] += 1,
                (false, false) => self.tn[j] += 1,
            }
            tp += u64::from(p != 0 && t != 0);
            npred += u64::from(p != 0);
            ntrue += u64::from(t != 0);
            self.hamming_errors += u64::from((p != 0) != (t != 0));
        }
        // empty prediction against empty truth counts as a perfect example
        self.example_f1_sum += if npred + ntrue == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (npred + ntrue) as f64
        };
        self.examples += 1;
        self.cells += self.q as u64;
        Ok(())
    }

    /// `2ΣTP / (2ΣTP + ΣFP + ΣFN)`, 0 when nothing is positive.
    pub fn micro_f1(&self) -> f64 {
        let tp: u64 = self.tp.iter().sum();
        let fp: u64 = self.fp.iter().sum();
        let fn_: u64 = self.fn_.iter().sum();
        f1(tp, fp, fn_)
    }

    /// Mean of per-label F1; a label never predicted nor present scores 0.
    pub fn macro_f1(&self) -> f64 {
        if self.q == 0 {
            return 0.0;
        }
        let total: f64 = (0..self.q)
            .map(|j| f1(self.tp[j], self.fp[j], self.fn_[j]))
            .sum();
        total / self.q as f64
    }

    pub fn example_f1(&self) -> f64 {
        if self.examples == 0 {
            return 0.0;
        }
        self.example_f1_sum / self.examples as f64
    }

    pub fn hamming_loss(&self) -> f64 {
        if self.cells == 0 {
            return 0.0;
        }
        self.hamming_errors as f64 / self.cells as f64
    }

    /// Appends a curve row for `round` with the current metric values.
    pub fn record_checkpoint(&mut self, round: u64, cumulative_loss: f64) -> Result<()> {
        if let Some(last) = self.curve.last() {
            if round <= last.round {
                return Err(Error::Config(format!(
                    "curve rounds must increase (last {}, got {round})",
                    last.round
                )));
            }
        }
        self.curve.push(CurveRow {
            round,
            macro_f1: self.macro_f1(),
            micro_f1: self.micro_f1(),
            example_f1: self.example_f1(),
            hamming_loss: self.hamming_loss(),
            cumulative_loss,
        });
        Ok(())
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Metric snapshots for checking the telescoping identity of the loss analysis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundDiagnostics {
    /// `(round, V)` at each checkpoint; round 0 is the initial metric.
    pub snapshots: Vec<(u64, Matrix)>,
    /// `(round, Σ l_t)` at each checkpoint.
    pub cumulative_loss: Vec<(u64, f64)>,
    pub r_hat: f64,
}

impl BoundDiagnostics {
    fn push_snapshot(&mut self, round: u64, v: &Matrix) -> Result<()> {
        if let Some((last, _)) = self.snapshots.last() {
            if round <= *last {
                return Err(Error::Config(format!(
                    "snapshot rounds must increase (last {last}, got {round})"
                )));
            }
        }
        self.snapshots.push((round, v.clone()));
        Ok(())
    }
}

/// `|Σ_t (‖V_t − U‖² − ‖V_{t+1} − U‖²) − (‖V_1 − U‖² − ‖V_{T+1} − U‖²)|`
/// over consecutive snapshots.
pub fn telescoping_check(diag: &BoundDiagnostics, u: &Matrix) -> Result<f64> {
    if diag.snapshots.len() < 2 {
        return Err(Error::Config(
            "telescoping check needs at least two snapshots".into(),
        ));
    }
    let dists = diag
        .snapshots
        .iter()
        .map(|(_, v)| v.sub(u).map(|m| m.frobenius_sq()))
        .collect::<Result<Vec<_>>>()?;
    let stepwise: f64 = dists.windows(2).map(|w| w[0] - w[1]).sum();
    let first = dists[0];
    let last = dists[dists.len() - 1];
    let overall = first - last;
    debug_assert!(overall <= first);
    Ok((stepwise - overall).abs())
}

/// Which predictor a prequential run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Online metric learning with learned-metric kNN prediction.
    Oml,
    /// kNN with Euclidean distance on raw features; never learns a metric.
    KnnEuclidean,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Oml => "oml",
            Method::KnnEuclidean => "knn",
        }
    }
}

/// Final model of a run.
#[derive(Debug, Clone)]
pub enum RunModel {
    Oml(ModelState),
    KnnEuclidean(NeighborStore),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method: Method,
    pub report: MetricsReport,
    pub diagnostics: BoundDiagnostics,
    pub model: RunModel,
    pub seed_size: usize,
    pub stream_size: usize,
    pub positive_loss_rounds: u64,
    pub singular_fallbacks: u64,
}

impl RunOutput {
    pub fn cumulative_loss(&self) -> f64 {
        match &self.model {
            RunModel::Oml(s) => s.cumulative_loss(),
            RunModel::KnnEuclidean(_) => 0.0,
        }
    }
}

fn metric_rng_seed(rng_seed: u64) -> u64 {
    rng_seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Test-then-train over the stream part of `ds`.
///
/// Each stream example is first predicted (kNN vote over the store), scored,
/// and only then revealed to the learner (OML) and appended to the store.
/// A curve row and a metric snapshot are taken every `checkpoint_every`
/// rounds and after the final round.
pub fn prequential_run(
    ds: &StreamDataset,
    hp: &Hyperparams,
    method: Method,
    checkpoint_every: u64,
) -> Result<RunOutput> {
    if checkpoint_every == 0 {
        return Err(Error::Config("checkpoint_every must be >= 1".into()));
    }
    match method {
        Method::Oml => hp.validate(ds.q())?,
        Method::KnnEuclidean => {
            // the baseline has no embedding, so d is irrelevant
            let probe = Hyperparams {
                d: Some(1),
                ..hp.clone()
            };
            probe.validate(ds.q().max(2))?;
        }
    }
    let split = if hp.shuffle {
        dataset::split_seed(ds, hp.seed_fraction, hp.rng_seed)?
    } else {
        dataset::split_seed_ordered(ds, hp.seed_fraction)?
    };

    let mut report = MetricsReport::new(ds.q());
    let mut diag = BoundDiagnostics::default();
    let total = split.stream.len() as u64;

    let model = match method {
        Method::Oml => {
            let mut rng = ChaCha8Rng::seed_from_u64(metric_rng_seed(hp.rng_seed));
            let mut state = ModelState::initialize(&split.seed, hp, &mut rng)?;
            diag.push_snapshot(0, state.metric().matrix())?;
            for (t, ex) in split.stream.iter().enumerate() {
                let round = t as u64 + 1;
                report.observe_instance(&ex.features);
                let predicted = state.predict(&ex.features, hp.k, hp.threshold)?;
                report.update_confusion(&predicted, &ex.labels)?;
                state.online_round(&ex.features, &ex.labels, hp)?;
                if round.is_multiple_of(checkpoint_every) || round == total {
                    report.record_checkpoint(round, state.cumulative_loss())?;
                    diag.push_snapshot(round, state.metric().matrix())?;
                    diag.cumulative_loss.push((round, state.cumulative_loss()));
                }
            }
            RunModel::Oml(state)
        }
        Method::KnnEuclidean => {
            let mut store =
                NeighborStore::new_raw(ds.p(), ds.q()).with_capacity_limit(hp.max_store);
            for e in &split.seed {
                store.push(&e.features, &e.labels, &[])?;
            }
            for (t, ex) in split.stream.iter().enumerate() {
                let round = t as u64 + 1;
                report.observe_instance(&ex.features);
                let hits = store.knn_query_raw(&ex.features, hp.k.min(store.len()))?;
                let labels: Vec<&[u8]> = hits.iter().map(|h| store.labels(h.index)).collect();
                let predicted = knn::aggregate_labels(&labels, hp.threshold)?;
                report.update_confusion(&predicted, &ex.labels)?;
                store.push(&ex.features, &ex.labels, &[])?;
                if round.is_multiple_of(checkpoint_every) || round == total {
                    report.record_checkpoint(round, 0.0)?;
                    diag.cumulative_loss.push((round, 0.0));
                }
            }
            RunModel::KnnEuclidean(store)
        }
    };
    diag.r_hat = report.r_hat();

    let (positive_loss_rounds, singular_fallbacks) = match &model {
        RunModel::Oml(s) => (s.positive_rounds(), s.singular_fallbacks()),
        RunModel::KnnEuclidean(_) => (0, 0),
    };
    Ok(RunOutput {
        method,
        report,
        diagnostics: diag,
        model,
        seed_size: split.seed.len(),
        stream_size: split.stream.len(),
        positive_loss_rounds,
        singular_fallbacks,
    })
}
