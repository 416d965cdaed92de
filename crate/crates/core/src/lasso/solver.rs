//! IRLS outer loop with cyclic coordinate descent on the penalized
//! weighted least-squares subproblem, plus a proximal-gradient fallback.
//!
//! Regressors are centered and scaled by their survey-weighted mean and
//! standard deviation. The penalty is carried over exactly (`λ ω_j / s_j` on
//! the standardized coefficient), so the solution is the minimizer of the
//! original-scale objective `-L_n(θ) + λ Σ ω_j |β_j|`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::glm::{log1p_exp, logistic, Dataset, Theta};

/// Lower bound on `Λ(1-Λ)` in the IRLS working weights.
const IRLS_VAR_FLOOR: f64 = 1e-5;
const ZERO_VARIANCE: f64 = 1e-10;
const SEPARATION_NORM: f64 = 1e3;
const MAX_OUTER: usize = 500;
const FITTED_EXTREME: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Relative change in the penalized objective between IRLS steps.
    pub tol: f64,
    /// Cap on coordinate sweeps (or proximal-gradient steps).
    pub max_iter: usize,
    /// Bound on the subgradient-stationarity residual required to declare
    /// convergence.
    pub kkt_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            kkt_tol: 1e-9,
        }
    }
}

impl FitOptions {
    /// Looser settings used inside cross-validation folds.
    pub fn cross_validation() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100_000,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct State {
    pub a: f64,
    pub b: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveInfo {
    pub sweeps: usize,
    pub objective: f64,
    pub kkt: f64,
    pub converged: bool,
    pub separation: bool,
    pub fallback: bool,
}

pub(crate) struct Problem<'a> {
    data: &'a Dataset,
    xs: DMatrix<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
    /// Coefficients held at zero: zero-variance columns and infinite weights.
    frozen: Vec<bool>,
    omega: Vec<f64>,
    wn: Vec<f64>,
}

fn soft_threshold(u: f64, k: f64) -> f64 {
    if u > k {
        u - k
    } else if u < -k {
        u + k
    } else {
        0.0
    }
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a Dataset, omega: &[f64]) -> Self {
        let n = data.n();
        let p = data.p();
        let x = data.x();
        let w = data.w();
        let wsum = data.weight_sum();
        let mut xs = DMatrix::zeros(n, p);
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let mut frozen = vec![false; p];
        for j in 0..p {
            let col = x.column(j + 1);
            let m = col.dot(w) / wsum;
            let var = col
                .iter()
                .zip(w.iter())
                .map(|(&v, &wi)| wi * (v - m) * (v - m))
                .sum::<f64>()
                / wsum;
            let s = var.sqrt();
            center[j] = m;
            if !(s > ZERO_VARIANCE * (1.0 + m.abs())) || !omega[j].is_finite() {
                frozen[j] = true;
                continue;
            }
            scale[j] = s;
            let mut dst = xs.column_mut(j);
            for i in 0..n {
                dst[i] = (col[i] - m) / s;
            }
        }
        let nf = n as f64;
        Self {
            data,
            xs,
            center,
            scale,
            frozen,
            omega: omega.to_vec(),
            wn: w.iter().map(|wi| wi / nf).collect(),
        }
    }

    pub fn zero_variance_columns(&self) -> Vec<usize> {
        (0..self.data.p())
            .filter(|&j| self.frozen[j] && self.omega[j].is_finite())
            .map(|j| j + 1)
            .collect()
    }

    fn is_frozen(&self, j: usize, extra: Option<&[bool]>) -> bool {
        self.frozen[j] || extra.is_some_and(|e| e[j])
    }

    pub fn null_state(&self) -> State {
        let ybar = self.data.y().dot(self.data.w()) / self.data.weight_sum();
        let ybar = ybar.clamp(1e-10, 1.0 - 1e-10);
        let a = (ybar / (1.0 - ybar)).ln();
        State {
            a,
            b: vec![0.0; self.data.p()],
            eta: vec![a; self.data.n()],
        }
    }

    pub fn state_from_theta(&self, theta: &Theta) -> State {
        let p = self.data.p();
        let mut b = vec![0.0; p];
        let mut a = theta.alpha();
        for j in 0..p {
            if self.frozen[j] {
                continue;
            }
            b[j] = theta[j + 1] * self.scale[j];
            a += theta[j + 1] * self.center[j];
        }
        let mut st = State {
            a,
            b,
            eta: vec![0.0; self.data.n()],
        };
        self.refresh_eta(&mut st);
        st
    }

    fn refresh_eta(&self, st: &mut State) {
        let bv = DVector::from_column_slice(&st.b);
        let eta = &self.xs * bv;
        for (e, v) in st.eta.iter_mut().zip(eta.iter()) {
            *e = st.a + v;
        }
    }

    pub fn theta(&self, st: &State) -> Theta {
        let p = self.data.p();
        let mut v = DVector::zeros(p + 1);
        let mut alpha = st.a;
        for j in 0..p {
            if self.frozen[j] || st.b[j] == 0.0 {
                continue;
            }
            let beta = st.b[j] / self.scale[j];
            v[j + 1] = beta;
            alpha -= beta * self.center[j];
        }
        v[0] = alpha;
        Theta::from_vector(v).expect("finite coefficients")
    }

    fn penalties(&self, lambda: f64, extra: Option<&[bool]>) -> Vec<f64> {
        (0..self.data.p())
            .map(|j| {
                if self.is_frozen(j, extra) || self.omega[j] == 0.0 {
                    0.0
                } else {
                    lambda * self.omega[j] / self.scale[j]
                }
            })
            .collect()
    }

    fn smooth_loss(&self, eta: &[f64]) -> f64 {
        let y = self.data.y();
        eta.iter()
            .enumerate()
            .map(|(i, &t)| self.wn[i] * (log1p_exp(t) - y[i] * t))
            .sum()
    }

    fn objective_with(&self, st: &State, pen: &[f64]) -> f64 {
        self.smooth_loss(&st.eta)
            + st.b.iter().zip(pen).map(|(b, k)| k * b.abs()).sum::<f64>()
    }

    /// Stationarity residual on the original scale.
    pub fn kkt_residual(&self, st: &State, lambda: f64, extra: Option<&[bool]>) -> f64 {
        let theta = self.theta(st);
        let y = self.data.y();
        let r = DVector::from_iterator(
            self.data.n(),
            st.eta.iter().enumerate().map(|(i, &t)| self.wn[i] * (y[i] - logistic(t))),
        );
        let s = self.data.x().tr_mul(&r);
        let mut worst = s[0].abs();
        for j in 0..self.data.p() {
            if self.is_frozen(j, extra) {
                continue;
            }
            let k = lambda * self.omega[j];
            let sj = s[j + 1];
            let bj = theta[j + 1];
            let viol = if bj != 0.0 {
                (sj - k * bj.signum()).abs() / lambda.max(1.0)
            } else {
                (sj.abs() - k).max(0.0)
            };
            worst = worst.max(viol);
        }
        worst
    }

    fn theta_norm(&self, st: &State) -> f64 {
        self.theta(st).as_vector().norm()
    }

    /// Coordinate descent on `½ Σ v_i (res_i - Δη_i)² + Σ pen_j |b_j|`.
    /// Returns the number of sweeps used.
    #[allow(clippy::too_many_arguments)]
    fn inner_cd(
        &self,
        st: &mut State,
        v: &[f64],
        res: &mut [f64],
        pen: &[f64],
        extra: Option<&[bool]>,
        thr: f64,
        budget: usize,
    ) -> usize {
        let p = self.data.p();
        let sv: f64 = v.iter().sum();
        let xv: Vec<f64> = (0..p)
            .map(|j| {
                if self.is_frozen(j, extra) {
                    0.0
                } else {
                    let c = self.xs.column(j);
                    c.iter().zip(v).map(|(x, vi)| vi * x * x).sum()
                }
            })
            .collect();

        let sweep = |st: &mut State, res: &mut [f64], only_active: bool| -> f64 {
            let mut maxd = 0.0f64;
            for j in 0..p {
                if xv[j] <= 0.0 || (only_active && st.b[j] == 0.0) {
                    continue;
                }
                let col = self.xs.column(j);
                let col = col.as_slice();
                let mut g = 0.0;
                for i in 0..col.len() {
                    g += v[i] * col[i] * res[i];
                }
                let u = g + xv[j] * st.b[j];
                let bn = soft_threshold(u, pen[j]) / xv[j];
                let d = bn - st.b[j];
                if d != 0.0 {
                    for i in 0..col.len() {
                        res[i] -= d * col[i];
                    }
                    st.b[j] = bn;
                    maxd = maxd.max(xv[j] * d.abs());
                }
            }
            if sv > 0.0 {
                let da = res.iter().zip(v).map(|(r, vi)| r * vi).sum::<f64>() / sv;
                if da != 0.0 {
                    for r in res.iter_mut() {
                        *r -= da;
                    }
                    st.a += da;
                    maxd = maxd.max(sv * da.abs());
                }
            }
            maxd
        };

        let mut sweeps = 0;
        loop {
            let m = sweep(st, res, false);
            sweeps += 1;
            if m < thr || sweeps >= budget {
                break;
            }
            if self.active_newton(st, v, res, pen, extra) {
                sweeps += 1;
                continue;
            }
            loop {
                let m = sweep(st, res, true);
                sweeps += 1;
                if m < thr || sweeps >= budget {
                    break;
                }
            }
            if sweeps >= budget {
                break;
            }
        }
        sweeps
    }

    /// Solves the weighted least-squares subproblem exactly on the current
    /// active set with the signs held fixed. Coordinate descent crawls when
    /// the working weights are tiny and the columns correlated; this jumps
    /// straight to the block minimizer. Returns false when the block is
    /// singular.
    fn active_newton(&self, st: &mut State, v: &[f64], res: &mut [f64], pen: &[f64], extra: Option<&[bool]>) -> bool {
        let active: Vec<usize> = (0..self.data.p())
            .filter(|&j| st.b[j] != 0.0 && !self.is_frozen(j, extra))
            .collect();
        let m = active.len() + 1;
        let n = res.len();
        if active.is_empty() || m > n {
            return false;
        }
        let mut g = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        let cols: Vec<&[f64]> = active
            .iter()
            .map(|&j| {
                let start = j * n;
                &self.xs.as_slice()[start..start + n]
            })
            .collect();
        g[(0, 0)] = v.iter().sum::<f64>();
        rhs[0] = res.iter().zip(v).map(|(r, vi)| r * vi).sum::<f64>();
        for (a, ca) in cols.iter().enumerate() {
            let mut s0 = 0.0;
            let mut r = 0.0;
            for i in 0..n {
                let t = v[i] * ca[i];
                s0 += t;
                r += t * res[i];
            }
            g[(0, a + 1)] = s0;
            g[(a + 1, 0)] = s0;
            let j = active[a];
            rhs[a + 1] = r - pen[j] * st.b[j].signum();
            for (b, cb) in cols.iter().enumerate().take(a + 1) {
                let mut s = 0.0;
                for i in 0..n {
                    s += v[i] * ca[i] * cb[i];
                }
                g[(a + 1, b + 1)] = s;
                g[(b + 1, a + 1)] = s;
            }
        }
        // G δ = X'V res - pen·s
        let Some(chol) = g.cholesky() else {
            return false;
        };
        let delta = chol.solve(&rhs);
        if !delta.iter().all(|d| d.is_finite()) {
            return false;
        }
        // stop at the first sign change; the objective is convex along the
        // segment, so the partial step still descends
        let mut t = 1.0;
        let mut hit = None;
        for (a, &j) in active.iter().enumerate() {
            let nb = st.b[j] + delta[a + 1];
            if pen[j] > 0.0 && nb.signum() != st.b[j].signum() {
                let tj = -st.b[j] / delta[a + 1];
                if tj < t {
                    t = tj;
                    hit = Some(a);
                }
            }
        }
        st.a += t * delta[0];
        for r in res.iter_mut() {
            *r -= t * delta[0];
        }
        for (a, &j) in active.iter().enumerate() {
            let d = if hit == Some(a) { -st.b[j] } else { t * delta[a + 1] };
            st.b[j] += d;
            if hit == Some(a) {
                st.b[j] = 0.0;
            }
            for (r, x) in res.iter_mut().zip(cols[a]) {
                *r -= d * x;
            }
        }
        true
    }

    /// Minimizes the penalized objective at `lambda`, starting from `st`.
    pub fn solve(
        &self,
        lambda: f64,
        st: &mut State,
        opts: &FitOptions,
        extra: Option<&[bool]>,
    ) -> Result<SolveInfo> {
        let n = self.data.n();
        let y = self.data.y();
        let pen = self.penalties(lambda, extra);
        for j in 0..self.data.p() {
            if self.is_frozen(j, extra) && st.b[j] != 0.0 {
                st.b[j] = 0.0;
            }
        }
        self.refresh_eta(st);

        let mut obj = self.objective_with(st, &pen);
        let mut kkt = self.kkt_residual(st, lambda, extra);
        let mut sweeps = 0;
        let mut v = vec![0.0; n];
        let mut res = vec![0.0; n];
        let mut converged = false;
        let mut separation = false;
        let mut fallback = false;
        let mut rel_change = f64::INFINITY;

        for _ in 0..MAX_OUTER {
            if kkt <= opts.kkt_tol && rel_change < opts.tol {
                converged = true;
                break;
            }
            if sweeps >= opts.max_iter {
                break;
            }
            for i in 0..n {
                let pr = logistic(st.eta[i]);
                let var = (pr * (1.0 - pr)).max(IRLS_VAR_FLOOR);
                v[i] = self.wn[i] * var;
                res[i] = (y[i] - pr) / var;
            }
            let old = st.clone();
            let thr = (0.01 * kkt).clamp(0.1 * opts.kkt_tol, 1e-3);
            sweeps += self.inner_cd(st, &v, &mut res, &pen, extra, thr, opts.max_iter - sweeps);
            self.refresh_eta(st);
            let mut new_obj = self.objective_with(st, &pen);
            let slack = 1e-13 * obj.abs().max(1e-300);
            if !(new_obj <= obj + slack) {
                let full = st.clone();
                let mut t = 0.5;
                loop {
                    interpolate(&old, &full, t, st);
                    new_obj = self.objective_with(st, &pen);
                    if new_obj <= obj + slack || t < 1e-8 {
                        break;
                    }
                    t *= 0.5;
                }
                if !(new_obj <= obj + slack) {
                    *st = old;
                    fallback = true;
                    break;
                }
            }
            rel_change = (obj - new_obj).abs() / new_obj.abs().max(1e-300);
            obj = new_obj;
            kkt = self.kkt_residual(st, lambda, extra);
            if self.theta_norm(st) > SEPARATION_NORM {
                separation = true;
                break;
            }
        }
        if !converged && kkt <= opts.kkt_tol && rel_change < opts.tol {
            converged = true;
        }
        // slow divergence along a separating direction never reaches the norm
        // cap before the sweep budget runs out
        if !converged && self.fitted_extreme(st) {
            separation = true;
        }

        if fallback {
            let info = self.proximal_gradient(lambda, st, opts, extra, &pen, opts.max_iter.saturating_sub(sweeps));
            sweeps += info.sweeps;
            obj = info.objective;
            kkt = info.kkt;
            converged = info.converged;
            separation |= info.separation;
        }

        Ok(SolveInfo {
            sweeps,
            objective: obj,
            kkt,
            converged,
            separation,
            fallback,
        })
    }

    fn fitted_extreme(&self, st: &State) -> bool {
        st.eta.iter().any(|&t| {
            let pr = logistic(t);
            !(FITTED_EXTREME..=1.0 - FITTED_EXTREME).contains(&pr)
        })
    }

    /// Accelerated proximal gradient with backtracking on the standardized
    /// coordinates.
    fn proximal_gradient(
        &self,
        lambda: f64,
        st: &mut State,
        opts: &FitOptions,
        extra: Option<&[bool]>,
        pen: &[f64],
        budget: usize,
    ) -> SolveInfo {
        let p = self.data.p();
        let y = self.data.y();
        let gradient = |s: &State| -> (f64, Vec<f64>) {
            let r: Vec<f64> = s
                .eta
                .iter()
                .enumerate()
                .map(|(i, &t)| self.wn[i] * (logistic(t) - y[i]))
                .collect();
            let ga = r.iter().sum();
            let gb = (0..p)
                .map(|j| {
                    if self.is_frozen(j, extra) {
                        0.0
                    } else {
                        self.xs.column(j).iter().zip(&r).map(|(x, ri)| x * ri).sum()
                    }
                })
                .collect();
            (ga, gb)
        };
        let mut step = 1.0;
        let mut momentum = st.clone();
        let mut prev = st.clone();
        let mut tk = 1.0f64;
        let mut obj = self.objective_with(st, pen);
        let mut kkt = self.kkt_residual(st, lambda, extra);
        let mut iters = 0;
        let mut converged = false;
        let mut separation = false;
        while iters < budget {
            iters += 1;
            let f0 = self.smooth_loss(&momentum.eta);
            let (ga, gb) = gradient(&momentum);
            let mut cand;
            loop {
                cand = State {
                    a: momentum.a - step * ga,
                    b: (0..p)
                        .map(|j| {
                            if self.is_frozen(j, extra) {
                                0.0
                            } else {
                                soft_threshold(momentum.b[j] - step * gb[j], step * pen[j])
                            }
                        })
                        .collect(),
                    eta: vec![0.0; self.data.n()],
                };
                self.refresh_eta(&mut cand);
                let da = cand.a - momentum.a;
                let mut lin = ga * da;
                let mut sq = da * da;
                for j in 0..p {
                    let d = cand.b[j] - momentum.b[j];
                    lin += gb[j] * d;
                    sq += d * d;
                }
                if self.smooth_loss(&cand.eta) <= f0 + lin + sq / (2.0 * step) + 1e-15 || step < 1e-12 {
                    break;
                }
                step *= 0.5;
            }
            let new_obj = self.objective_with(&cand, pen);
            let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            let beta = (tk - 1.0) / tn;
            // restart momentum when the objective goes up
            if new_obj > obj {
                momentum = prev.clone();
                tk = 1.0;
                continue;
            }
            momentum = State {
                a: cand.a + beta * (cand.a - prev.a),
                b: (0..p).map(|j| cand.b[j] + beta * (cand.b[j] - prev.b[j])).collect(),
                eta: vec![0.0; self.data.n()],
            };
            self.refresh_eta(&mut momentum);
            tk = tn;
            let rel = (obj - new_obj).abs() / new_obj.abs().max(1e-300);
            obj = new_obj;
            prev = cand;
            kkt = self.kkt_residual(&prev, lambda, extra);
            if kkt <= opts.kkt_tol && rel < opts.tol {
                converged = true;
                break;
            }
            if self.theta_norm(&prev) > SEPARATION_NORM {
                separation = true;
                break;
            }
        }
        *st = prev;
        SolveInfo {
            sweeps: iters,
            objective: obj,
            kkt,
            converged,
            separation,
            fallback: true,
        }
    }
}

fn interpolate(old: &State, new: &State, t: f64, out: &mut State) {
    out.a = old.a + t * (new.a - old.a);
    for j in 0..out.b.len() {
        out.b[j] = old.b[j] + t * (new.b[j] - old.b[j]);
    }
    for i in 0..out.eta.len() {
        out.eta[i] = old.eta[i] + t * (new.eta[i] - old.eta[i]);
    }
}
