//! Online large-margin learning of the label-embedding metric `Q = V Vᵀ`.
//!
//! Each round finds the nearest stored neighbor `(x, y)` of the incoming
//! `(x_t, y_t)` and asks that, in the embedding `Vᵀ`, the projected instance
//! `w_t = Pᵀx_t` sits closer to its own label vector than to the neighbor's
//! by at least `‖y_t − y‖₁`. When the hinge loss is positive the metric takes
//! a passive-aggressive step of size `λ_t`, chosen by maximizing a cubic
//! surrogate of the dual and clamped to `[m, M]`.

use alloc::format;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::knn::{Neighbor, NeighborStore, TrainNnMetric};
use crate::linalg::{self, Matrix};
use crate::projection::{self, Projection, Ridge};

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// The q × d matrix `V`; the learned metric is `Q = V Vᵀ`.
#[derive(Debug, Clone)]
pub struct MetricV {
    matrix: Matrix,
    // identifies this exact matrix value for embedding caches
    stamp: u64,
}

impl PartialEq for MetricV {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl MetricV {
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite("metric matrix"));
        }
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::Config("metric matrix must be non-empty".into()));
        }
        Ok(Self {
            matrix,
            stamp: fresh_stamp(),
        })
    }

    /// I.i.d. `N(0, 1/q)` entries.
    pub fn random<R: Rng + ?Sized>(q: usize, d: usize, rng: &mut R) -> Result<Self> {
        let scale = 1.0 / libm::sqrt(q as f64);
        let data = (0..q * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect();
        Self::from_matrix(Matrix::from_vec(q, d, data)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn q(&self) -> usize {
        self.matrix.rows()
    }

    pub fn d(&self) -> usize {
        self.matrix.cols()
    }

    /// Changes whenever the matrix changes; clones share it.
    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    /// `Vᵀw`.
    pub fn embed(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.matrix.tr_mul_vec(w)
    }
}

/// `‖y_t − y‖₁` for binary label vectors, i.e. the Hamming count.
pub fn margin(y_t: &[u8], y: &[u8]) -> Result<f64> {
    if y_t.len() != y.len() {
        return Err(Error::Shape {
            what: "margin label vectors",
            expected: y_t.len(),
            found: y.len(),
        });
    }
    Ok(y_t.iter().zip(y).filter(|(a, b)| a != b).count() as f64)
}

/// The two residuals defining `A = u uᵀ − v vᵀ`.
///
/// `u = Pᵀx_t − y` (towards the neighbor's labels), `v = Pᵀx_t − y_t`
/// (towards the true labels). `A` itself is never formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank2Update {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Rank2Update {
    /// Builds the update from an already projected instance `w_t = Pᵀx_t`.
    pub fn from_projected(w_t: &[f64], y_t: &[u8], y: &[u8]) -> Result<Self> {
        let q = w_t.len();
        for (what, len) in [("true labels", y_t.len()), ("neighbor labels", y.len())] {
            if len != q {
                return Err(Error::Shape {
                    what,
                    expected: q,
                    found: len,
                });
            }
        }
        let u = w_t.iter().zip(y).map(|(w, &l)| w - f64::from(l)).collect();
        let v = w_t
            .iter()
            .zip(y_t)
            .map(|(w, &l)| w - f64::from(l))
            .collect();
        Ok(Self { u, v })
    }

    pub fn new(p: &Projection, x_t: &[f64], y_t: &[u8], y: &[u8]) -> Result<Self> {
        Self::from_projected(&p.project(x_t)?, y_t, y)
    }

    pub fn q(&self) -> usize {
        self.u.len()
    }

    /// `A = 0` exactly.
    pub fn is_zero(&self) -> bool {
        self.u == self.v
    }

    /// Dense `A`, for diagnostics and tests.
    pub fn dense(&self) -> Matrix {
        let q = self.q();
        let mut a = Matrix::zeros(q, q);
        for i in 0..q {
            for j in 0..q {
                a[(i, j)] = self.u[i] * self.u[j] - self.v[i] * self.v[j];
            }
        }
        a
    }
}

/// Hinge loss on an already projected instance.
pub fn hinge_loss_projected(v: &MetricV, w_t: &[f64], y_t: &[u8], y: &[u8]) -> Result<f64> {
    let delta = margin(y_t, y)?;
    let upd = Rank2Update::from_projected(w_t, y_t, y)?;
    if v.q() != upd.q() {
        return Err(Error::Shape {
            what: "metric rows",
            expected: upd.q(),
            found: v.q(),
        });
    }
    let to_neighbor = linalg::norm_sq(&v.embed(&upd.u)?);
    let to_truth = linalg::norm_sq(&v.embed(&upd.v)?);
    let loss = f64::max(0.0, delta - (to_neighbor - to_truth));
    if !loss.is_finite() {
        return Err(Error::NonFinite("hinge loss"));
    }
    Ok(loss)
}

/// `max{0, Δ(y_t, y) − (‖Vᵀ(Pᵀx_t − y)‖² − ‖Vᵀ(Pᵀx_t − y_t)‖²)}`.
pub fn hinge_loss(v: &MetricV, p: &Projection, x_t: &[f64], y_t: &[u8], y: &[u8]) -> Result<f64> {
    hinge_loss_projected(v, &p.project(x_t)?, y_t, y)
}

/// `f(λ) = aλ³ + bλ² + cλ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CubicCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CubicCoeffs {
    pub fn eval(&self, lambda: f64) -> f64 {
        ((self.a * lambda + self.b) * lambda + self.c) * lambda
    }

    pub fn derivative(&self, lambda: f64) -> f64 {
        (3.0 * self.a * lambda + 2.0 * self.b) * lambda + self.c
    }

    pub fn is_zero(&self) -> bool {
        self.a == 0.0 && self.b == 0.0 && self.c == 0.0
    }
}

/// Coefficients of the Lagrangian evaluated along `V̄ᵀ(λ) = V_tᵀ(I + 2λA)`.
///
/// With `Q = V_t V_tᵀ`, expanding
/// `½‖V̄ᵀ − V_tᵀ‖² + λ(Δ − ‖V̄ᵀu‖² + ‖V̄ᵀv‖²)` in powers of `λ` gives
///
/// ```text
/// a = 4 (vᵀAQAv − uᵀAQAu)
/// b = 2 ‖V_tᵀA‖²_F − 4 (uᵀQAu − vᵀQAv)
/// c = Δ − (uᵀQu − vᵀQv)
/// ```
///
/// Every term is computed through `V_tᵀu`, `V_tᵀv` and the scalars `uᵀu`,
/// `uᵀv`, `vᵀv`, so the cost is `O(q·d)`.
pub fn cubic_coefficients(v_t: &MetricV, upd: &Rank2Update, delta: f64) -> Result<CubicCoeffs> {
    if v_t.q() != upd.q() || upd.v.len() != upd.q() {
        return Err(Error::Shape {
            what: "cubic coefficient operands",
            expected: v_t.q(),
            found: upd.q(),
        });
    }
    if upd.is_zero() {
        return Ok(CubicCoeffs::default());
    }
    let (u, v) = (&upd.u, &upd.v);
    let wu = v_t.embed(u)?;
    let wv = v_t.embed(v)?;
    let uu = linalg::dot(u, u);
    let uv = linalg::dot(u, v);
    let vv = linalg::dot(v, v);
    let wuwu = linalg::dot(&wu, &wu);
    let wuwv = linalg::dot(&wu, &wv);
    let wvwv = linalg::dot(&wv, &wv);

    // Vᵀ A u = Vᵀu (uᵀu) − Vᵀv (vᵀu),  Vᵀ A v = Vᵀu (uᵀv) − Vᵀv (vᵀv)
    let vau: Vec<f64> = wu.iter().zip(&wv).map(|(a, b)| a * uu - b * uv).collect();
    let vav: Vec<f64> = wu.iter().zip(&wv).map(|(a, b)| a * uv - b * vv).collect();
    let vau_sq = linalg::norm_sq(&vau);
    let vav_sq = linalg::norm_sq(&vav);
    let u_qa_u = linalg::dot(&wu, &vau);
    let v_qa_v = linalg::dot(&wv, &vav);
    let va_fro = wuwu * uu + wvwv * vv - 2.0 * wuwv * uv;

    let coeffs = CubicCoeffs {
        a: 4.0 * (vav_sq - vau_sq),
        b: 2.0 * va_fro - 4.0 * (u_qa_u - v_qa_v),
        c: delta - (wuwu - wvwv),
    };
    if !(coeffs.a.is_finite() && coeffs.b.is_finite() && coeffs.c.is_finite()) {
        return Err(Error::NonFinite("cubic coefficients"));
    }
    Ok(coeffs)
}

/// Real roots of `αλ² + βλ + γ = 0` (α may be zero).
fn quadratic_roots(alpha: f64, beta: f64, gamma: f64) -> [Option<f64>; 2] {
    if alpha == 0.0 {
        if beta == 0.0 {
            return [None, None];
        }
        return [Some(-gamma / beta), None];
    }
    let disc = beta * beta - 4.0 * alpha * gamma;
    if disc < 0.0 {
        return [None, None];
    }
    let sq = libm::sqrt(disc);
    let h = -0.5 * (beta + if beta >= 0.0 { sq } else { -sq });
    let r1 = if h != 0.0 { Some(gamma / h) } else { Some(0.0) };
    [Some(h / alpha), r1]
}

/// Step size: the maximizer of `f` over `[m, M]`.
///
/// Candidates are the two endpoints and the stationary points of `f`
/// strictly inside the interval; the one with the largest `f` wins (the
/// smallest λ on exact ties). Interior maxima, "always decreasing" (→ m) and
/// "still increasing at M" (→ M) all fall out of the comparison, as do the
/// degenerate quadratic and linear cases. All-zero coefficients give `m`.
pub fn select_lambda(coef: &CubicCoeffs, m: f64, big_m: f64) -> Result<f64> {
    if !(m > 0.0 && big_m > m && big_m.is_finite()) {
        return Err(Error::Config(format!(
            "lambda bounds must satisfy 0 < m < M, got m={m}, M={big_m}"
        )));
    }
    if coef.is_zero() {
        return Ok(m);
    }
    let mut best = (m, coef.eval(m));
    let roots = quadratic_roots(3.0 * coef.a, 2.0 * coef.b, coef.c);
    let mut interior: Vec<f64> = roots
        .into_iter()
        .flatten()
        .filter(|r| r.is_finite() && *r > m && *r < big_m)
        .map(|r| polish_root(coef, r, m, big_m))
        .collect();
    interior.sort_by(f64::total_cmp);
    for lambda in interior.into_iter().chain(core::iter::once(big_m)) {
        let f = coef.eval(lambda);
        if f > best.1 {
            best = (lambda, f);
        }
    }
    Ok(best.0)
}

/// One Newton step on `f'` to tighten a stationary point, kept only if it helps.
fn polish_root(coef: &CubicCoeffs, r: f64, m: f64, big_m: f64) -> f64 {
    let curv = 6.0 * coef.a * r + 2.0 * coef.b;
    if curv == 0.0 {
        return r;
    }
    let next = r - coef.derivative(r) / curv;
    if next > m && next < big_m && coef.derivative(next).abs() < coef.derivative(r).abs() {
        next
    } else {
        r
    }
}

/// Which form of the metric update to apply on a positive-loss round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// `V₊ᵀ = V_tᵀ(I − 2λA)⁻¹`.
    #[default]
    Exact,
    /// `V₊ᵀ = V_tᵀ(I + 2λA)`.
    FirstOrder,
}

/// Applies one metric update.
///
/// The exact rule uses Woodbury on `A = U C Uᵀ`, `U = [u v]`,
/// `C = diag(1, −1)`: with `K = −2λC`,
/// `(I + U K Uᵀ)⁻¹ = I − U K (I₂ + UᵀU K)⁻¹ Uᵀ`, so only a 2 × 2 system is
/// inverted and the cost is `O(q·d)`.
pub fn update_v(
    v_t: &MetricV,
    lambda: f64,
    upd: &Rank2Update,
    rule: UpdateRule,
) -> Result<MetricV> {
    let q = v_t.q();
    if upd.q() != q || upd.v.len() != q {
        return Err(Error::Shape {
            what: "metric update",
            expected: q,
            found: upd.q(),
        });
    }
    if !lambda.is_finite() {
        return Err(Error::NonFinite("step size"));
    }
    if upd.is_zero() {
        return Ok(v_t.clone());
    }
    let d = v_t.d();
    let (u, v) = (&upd.u, &upd.v);
    let wu = v_t.embed(u)?;
    let wv = v_t.embed(v)?;
    let mut out = v_t.matrix.clone();

    match rule {
        UpdateRule::FirstOrder => {
            // (I + 2λA) V = V + 2λ (u (Vᵀu)ᵀ − v (Vᵀv)ᵀ)
            for i in 0..q {
                let row = out.row_mut(i);
                linalg::axpy(2.0 * lambda * u[i], &wu, row);
                linalg::axpy(-2.0 * lambda * v[i], &wv, row);
            }
        }
        UpdateRule::Exact => {
            let uu = linalg::dot(u, u);
            let uv = linalg::dot(u, v);
            let vv = linalg::dot(v, v);
            let (k1, k2) = (-2.0 * lambda, 2.0 * lambda);
            // core = I₂ + UᵀU K
            let c11 = 1.0 + uu * k1;
            let c12 = uv * k2;
            let c21 = uv * k1;
            let c22 = 1.0 + vv * k2;
            let det = c11 * c22 - c12 * c21;
            let scale = f64::max(1.0, c11.abs().max(c12.abs()).max(c21.abs()).max(c22.abs()));
            if !det.is_finite() || det.abs() <= 1e-12 * scale * scale {
                return Err(Error::SingularUpdate { det });
            }
            // R = K core⁻¹
            let inv = [[c22 / det, -c12 / det], [-c21 / det, c11 / det]];
            let r = [
                [k1 * inv[0][0], k1 * inv[0][1]],
                [k2 * inv[1][0], k2 * inv[1][1]],
            ];
            // V₊ = V − U Rᵀ (UᵀV); row i of U Rᵀ is [u_i, v_i] Rᵀ
            for i in 0..q {
                let alpha = u[i] * r[0][0] + v[i] * r[0][1];
                let beta = u[i] * r[1][0] + v[i] * r[1][1];
                let row = out.row_mut(i);
                linalg::axpy(-alpha, &wu, row);
                linalg::axpy(-beta, &wv, row);
            }
        }
    }
    debug_assert_eq!(out.cols(), d);
    if !out.is_finite() {
        return Err(Error::NonFinite("updated metric"));
    }
    Ok(MetricV {
        matrix: out,
        stamp: fresh_stamp(),
    })
}

/// Learner and predictor settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Embedding dimension; `None` means `max(1, floor(0.8·q))`.
    pub d: Option<usize>,
    pub k: usize,
    /// Lower step clamp `m`.
    pub lambda_min: f64,
    /// Upper step clamp `M`.
    pub lambda_max: f64,
    pub seed_fraction: f64,
    pub ridge: Ridge,
    pub update_rule: UpdateRule,
    pub train_nn: TrainNnMetric,
    /// Vote threshold for label aggregation.
    pub threshold: f64,
    pub rng_seed: u64,
    /// Shuffle before the seed split.
    pub shuffle: bool,
    /// FIFO bound on the neighbor store.
    pub max_store: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            d: None,
            k: 10,
            lambda_min: 1e-5,
            lambda_max: 1e5,
            seed_fraction: 0.2,
            ridge: Ridge::Auto,
            update_rule: UpdateRule::Exact,
            train_nn: TrainNnMetric::EuclideanRaw,
            threshold: 0.5,
            rng_seed: 1,
            shuffle: true,
            max_store: None,
        }
    }
}

impl Hyperparams {
    pub fn embedding_dim(&self, q: usize) -> usize {
        self.d.unwrap_or_else(|| ((q as f64 * 0.8) as usize).max(1))
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if q < 2 {
            return Err(Error::Config(format!(
                "need at least 2 labels, dataset has {q}"
            )));
        }
        let d = self.embedding_dim(q);
        if d == 0 || d >= q {
            return Err(Error::Config(format!(
                "embedding dim d={d} must satisfy 1 <= d < q={q}"
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.lambda_min > 0.0
            && self.lambda_max > self.lambda_min
            && self.lambda_max.is_finite())
        {
            return Err(Error::Config(format!(
                "step clamps must satisfy 0 < m < M, got m={}, M={}",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction < 1.0) {
            return Err(Error::Config(format!(
                "seed fraction {} not in (0,1)",
                self.seed_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} not in [0,1]",
                self.threshold
            )));
        }
        if let Ridge::Fixed(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("ridge {r} must be finite and >= 0")));
            }
        }
        if self.max_store == Some(0) {
            return Err(Error::Config("max store size must be positive".into()));
        }
        Ok(())
    }
}

/// What happened in one online round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOutcome {
    pub loss: f64,
    pub neighbor: Neighbor,
    /// Step size, on positive-loss rounds.
    pub lambda: Option<f64>,
    /// Hinge loss on the same triple under the updated metric.
    pub post_loss: Option<f64>,
    /// The exact update was singular and the first-order form was used.
    pub fell_back: bool,
}

/// Full learner state: frozen `P`, current `V`, memory `D` and counters.
#[derive(Debug, Clone)]
pub struct ModelState {
    projection: Projection,
    metric: MetricV,
    store: NeighborStore,
    round: u64,
    cumulative_loss: f64,
    positive_rounds: u64,
    singular_fallbacks: u64,
}

impl ModelState {
    /// Fits `P` on the seed examples, draws `V₁` from `rng` and seeds `D`.
    pub fn initialize<R: Rng + ?Sized>(
        seed: &[Example],
        hp: &Hyperparams,
        rng: &mut R,
    ) -> Result<Self> {
        let first = seed.first().ok_or(Error::EmptyStore)?;
        let (p, q) = (first.features.len(), first.labels.len());
        hp.validate(q)?;
        let (x, y) = projection::design_matrices(seed)?;
        let proj = projection::fit_projection(&x, &y, hp.ridge)?;
        let metric = MetricV::random(q, hp.embedding_dim(q), rng)?;
        let mut store = NeighborStore::new(p, q).with_capacity_limit(hp.max_store);
        for e in seed {
            store.push(&e.features, &e.labels, &proj.project(&e.features)?)?;
        }
        Ok(Self {
            projection: proj,
            metric,
            store,
            round: 0,
            cumulative_loss: 0.0,
            positive_rounds: 0,
            singular_fallbacks: 0,
        })
    }

    /// Reassembles a state, e.g. from a snapshot.
    pub fn from_parts(
        projection: Projection,
        metric: MetricV,
        store: NeighborStore,
        round: u64,
        cumulative_loss: f64,
    ) -> Result<Self> {
        if metric.q() != projection.q()
            || store.q() != projection.q()
            || store.p() != projection.p()
        {
            return Err(Error::Shape {
                what: "model state label dimension",
                expected: projection.q(),
                found: metric.q(),
            });
        }
        if !(cumulative_loss >= 0.0 && cumulative_loss.is_finite()) {
            return Err(Error::NonFinite("cumulative loss"));
        }
        Ok(Self {
            projection,
            metric,
            store,
            round,
            cumulative_loss,
            positive_rounds: 0,
            singular_fallbacks: 0,
        })
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn metric(&self) -> &MetricV {
        &self.metric
    }

    pub fn store(&self) -> &NeighborStore {
        &self.store
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn cumulative_loss(&self) -> f64 {
        self.cumulative_loss
    }

    pub fn positive_rounds(&self) -> u64 {
        self.positive_rounds
    }

    pub fn singular_fallbacks(&self) -> u64 {
        self.singular_fallbacks
    }

    /// One pass of the online loop for `(x_t, y_t)`.
    pub fn online_round(
        &mut self,
        x_t: &[f64],
        y_t: &[u8],
        hp: &Hyperparams,
    ) -> Result<RoundOutcome> {
        if self.store.is_empty() {
            return Err(Error::EmptyStore);
        }
        let w_t = self.projection.project(x_t)?;
        let neighbor = self
            .store
            .nearest_neighbor_train(x_t, &w_t, hp.train_nn, &self.metric)?;
        let y = self.store.labels(neighbor.index).to_vec();
        let loss = hinge_loss_projected(&self.metric, &w_t, y_t, &y)?;

        let mut outcome = RoundOutcome {
            loss,
            neighbor,
            lambda: None,
            post_loss: None,
            fell_back: false,
        };
        if loss > 0.0 {
            let upd = Rank2Update::from_projected(&w_t, y_t, &y)?;
            let coef = cubic_coefficients(&self.metric, &upd, margin(y_t, &y)?)?;
            let lambda = select_lambda(&coef, hp.lambda_min, hp.lambda_max)?;
            let next = match update_v(&self.metric, lambda, &upd, hp.update_rule) {
                Err(Error::SingularUpdate { .. }) => {
                    outcome.fell_back = true;
                    self.singular_fallbacks += 1;
                    update_v(&self.metric, lambda, &upd, UpdateRule::FirstOrder)?
                }
                other => other?,
            };
            outcome.post_loss = Some(hinge_loss_projected(&next, &w_t, y_t, &y)?);
            outcome.lambda = Some(lambda);
            self.metric = next;
            self.positive_rounds += 1;
        }

        self.store.push(x_t, y_t, &w_t)?;
        self.round += 1;
        self.cumulative_loss += loss;
        Ok(outcome)
    }

    /// Predicts labels for `x` by a `k`-NN vote under the learned metric.
    ///
    /// `k` is capped at the store size.
    pub fn predict(&mut self, x: &[f64], k: usize, threshold: f64) -> Result<Vec<u8>> {
        let w = self.projection.project(x)?;
        let k = k.min(self.store.len());
        let hits = self.store.knn_query(&self.metric, &w, k)?;
        let labels: Vec<&[u8]> = hits.iter().map(|h| self.store.labels(h.index)).collect();
        crate::knn::aggregate_labels(&labels, threshold)
    }
}
