//! Brute-force reference computations, written against plain nested `Vec`s
//! so they share no code with the library's linear algebra.

#![allow(dead_code)]

pub type Dense = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn eye(n: usize) -> Dense {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            out[i][j] = (0..k).map(|t| a[i][t] * b[t][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    let mut t = zeros(a[0].len(), a.len());
    for (i, row) in a.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            t[j][i] = x;
        }
    }
    t
}

pub fn mat_vec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

pub fn fro_sq(a: &Dense) -> f64 {
    a.iter().flatten().map(|x| x * x).sum()
}

pub fn rank2(u: &[f64], v: &[f64]) -> Dense {
    let q = u.len();
    let mut a = zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            a[i][j] = u[i] * u[j] - v[i] * v[j];
        }
    }
    a
}

/// Gauss-Jordan inverse with partial pivoting; `None` if a pivot vanishes.
pub fn inverse(a: &Dense) -> Option<Dense> {
    let n = a.len();
    let mut m: Dense = a.clone();
    let mut inv = eye(n);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        inv.swap(col, piv);
        let p = m[col][col];
        for j in 0..n {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[i][j] -= f * m[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// The Lagrangian `½‖V̄ᵀ − V_tᵀ‖² + λ(Δ − ‖V̄ᵀu‖² + ‖V̄ᵀv‖²)` with
/// `V̄ᵀ = V_tᵀ(I + 2λA)` formed densely. `v_t` is q × d.
pub fn lagrangian_first_order(v_t: &Dense, u: &[f64], v: &[f64], delta: f64, lambda: f64) -> f64 {
    let q = u.len();
    let a = rank2(u, v);
    let mut step = eye(q);
    for i in 0..q {
        for j in 0..q {
            step[i][j] += 2.0 * lambda * a[i][j];
        }
    }
    let vt_t = transpose(v_t);
    let vbar_t = mul(&vt_t, &step);
    let mut diff = vbar_t.clone();
    for (dr, vr) in diff.iter_mut().zip(&vt_t) {
        for (d, x) in dr.iter_mut().zip(vr) {
            *d -= x;
        }
    }
    let nu: f64 = mat_vec(&vbar_t, u).iter().map(|x| x * x).sum();
    let nv: f64 = mat_vec(&vbar_t, v).iter().map(|x| x * x).sum();
    0.5 * fro_sq(&diff) + lambda * (delta - nu + nv)
}

/// `V₊ = (I − 2λA)⁻¹ V_t` (A symmetric), i.e. `V₊ᵀ = V_tᵀ(I − 2λA)⁻¹`.
pub fn exact_update_dense(v_t: &Dense, u: &[f64], v: &[f64], lambda: f64) -> Option<Dense> {
    let q = u.len();
    let a = rank2(u, v);
    let mut m = eye(q);
    for i in 0..q {
        for j in 0..q {
            m[i][j] -= 2.0 * lambda * a[i][j];
        }
    }
    Some(mul(&inverse(&m)?, v_t))
}

/// Largest cubic value on a `points`-point log-spaced grid over `[lo, hi]`.
pub fn cubic_grid_max(a: f64, b: f64, c: f64, lo: f64, hi: f64, points: usize) -> f64 {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| {
            let t = llo + (lhi - llo) * i as f64 / (points - 1) as f64;
            let x = if i == 0 {
                lo
            } else if i == points - 1 {
                hi
            } else {
                t.exp()
            };
            ((a * x + b) * x + c) * x
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
