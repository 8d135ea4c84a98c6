//! Primal-dual interior-point method for small dense convex programs with a
//! quadratic objective and linear or convex quadratic inequality constraints.

use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky_solve, lu_solve, Matrix};
use crate::scalar::Real;

/// One inequality `f(x) ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint<T> {
    /// `x[var] ≤ bound`
    Upper { var: usize, bound: T },
    /// `x[var] ≥ bound`
    Lower { var: usize, bound: T },
    /// `(p0 − x[p])² + x[q]² ≤ radius²`; `p = None` treats the first term as
    /// the constant `p0²`.
    Disk {
        p: Option<usize>,
        q: usize,
        p0: T,
        radius: T,
    },
    /// `aᵀx + b ≤ 0`
    Affine { a: Vec<T>, b: T },
    /// `Σ_r (a_rᵀx + c_r)² ≤ bound`
    SumSquares { rows: Vec<(Vec<T>, T)>, bound: T },
}

fn dot<T: Real>(a: &[T], x: &[T]) -> T {
    a.iter().zip(x).map(|(&u, &v)| u * v).sum()
}

impl<T: Real> Constraint<T> {
    pub fn value(&self, x: &[T]) -> T {
        match self {
            Constraint::Upper { var, bound } => x[*var] - *bound,
            Constraint::Lower { var, bound } => *bound - x[*var],
            Constraint::Disk { p, q, p0, radius } => {
                let dp = match p {
                    Some(i) => *p0 - x[*i],
                    None => *p0,
                };
                dp * dp + x[*q] * x[*q] - *radius * *radius
            }
            Constraint::Affine { a, b } => dot(a, x) + *b,
            Constraint::SumSquares { rows, bound } => {
                rows.iter()
                    .map(|(a, c)| {
                        let r = dot(a, x) + *c;
                        r * r
                    })
                    .sum::<T>()
                    - *bound
            }
        }
    }

    /// Sparse gradient as `(index, value)` pairs.
    pub fn gradient(&self, x: &[T]) -> Vec<(usize, T)> {
        let two = T::lit(2.0);
        match self {
            Constraint::Upper { var, .. } => vec![(*var, T::one())],
            Constraint::Lower { var, .. } => vec![(*var, -T::one())],
            Constraint::Disk { p, q, p0, .. } => {
                let mut g = vec![(*q, two * x[*q])];
                if let Some(i) = p {
                    g.push((*i, -two * (*p0 - x[*i])));
                }
                g
            }
            Constraint::Affine { a, .. } => a.iter().copied().enumerate().collect(),
            Constraint::SumSquares { rows, .. } => {
                let n = x.len();
                let mut g = vec![T::zero(); n];
                for (a, c) in rows {
                    let r = two * (dot(a, x) + *c);
                    for (gi, &ai) in g.iter_mut().zip(a) {
                        *gi += r * ai;
                    }
                }
                g.into_iter().enumerate().collect()
            }
        }
    }

    /// Adds `w·∇²f` to `h`.
    pub fn add_hessian(&self, w: T, h: &mut Matrix<T>) {
        let two = T::lit(2.0);
        match self {
            Constraint::Disk { p, q, .. } => {
                h[(*q, *q)] += two * w;
                if let Some(i) = p {
                    h[(*i, *i)] += two * w;
                }
            }
            Constraint::SumSquares { rows, .. } => {
                for (a, _) in rows {
                    for (i, &ai) in a.iter().enumerate() {
                        if ai == T::zero() {
                            continue;
                        }
                        let row = h.row_mut(i);
                        for (j, &aj) in a.iter().enumerate() {
                            row[j] += two * w * ai * aj;
                        }
                    }
                }
            }
            _ => {}
        }
    }
}

/// `minimize ½xᵀHx + gᵀx + c` subject to the constraints.
#[derive(Debug, Clone)]
pub struct ConvexProgram<T> {
    pub h: Matrix<T>,
    pub g: Vec<T>,
    pub c: T,
    pub constraints: Vec<Constraint<T>>,
}

impl<T: Real> ConvexProgram<T> {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &[T]) -> T {
        let hx = self.h.mul_vec(x);
        T::lit(0.5) * dot(x, &hx) + dot(&self.g, x) + self.c
    }

    pub fn objective_gradient(&self, x: &[T]) -> Vec<T> {
        let mut hx = self.h.mul_vec(x);
        for (v, &gi) in hx.iter_mut().zip(&self.g) {
            *v += gi;
        }
        hx
    }

    pub fn max_violation(&self, x: &[T]) -> T {
        self.constraints
            .iter()
            .map(|c| c.value(x))
            .fold(T::neg_infinity(), T::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpmSettings {
    /// Stopping tolerance on the dual residual and surrogate gap.
    pub tol: f64,
    /// Bound on every KKT residual component for an `Optimal` status.
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Barrier parameter growth factor.
    pub mu: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            kkt_tol: 1e-6,
            max_iter: 200,
            mu: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Infinity-norm KKT residuals at a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktCertificate {
    pub stationarity: f64,
    pub complementarity: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
}

impl KktCertificate {
    pub fn residual(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.primal_infeasibility)
            .max(self.dual_infeasibility)
    }
}

pub fn kkt_certificate<T: Real>(p: &ConvexProgram<T>, x: &[T], lambda: &[T]) -> KktCertificate {
    let mut r = p.objective_gradient(x);
    let mut cert = KktCertificate::default();
    for (c, &l) in p.constraints.iter().zip(lambda) {
        for (i, gi) in c.gradient(x) {
            r[i] += l * gi;
        }
        let f = c.value(x).as_f64();
        let l = l.as_f64();
        cert.complementarity = cert.complementarity.max((l * f).abs());
        cert.primal_infeasibility = cert.primal_infeasibility.max(f);
        cert.dual_infeasibility = cert.dual_infeasibility.max(-l);
    }
    cert.stationarity = r.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
    cert
}

#[derive(Debug, Clone)]
pub struct IpmResult<T> {
    pub x: Vec<T>,
    pub lambda: Vec<T>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub certificate: KktCertificate,
    /// Constraints that remain violated when the program is infeasible.
    pub violated: Vec<usize>,
}

/// Wraps a program for phase I: variable `s` appended, every constraint
/// shifted to `f(x) − s ≤ 0`, plus `s ≥ −1`.
struct View<'a, T> {
    p: &'a ConvexProgram<T>,
    phase_one: bool,
}

impl<T: Real> View<'_, T> {
    fn n(&self) -> usize {
        self.p.dim() + usize::from(self.phase_one)
    }

    fn m(&self) -> usize {
        self.p.constraints.len() + usize::from(self.phase_one)
    }

    fn value(&self, i: usize, x: &[T]) -> T {
        if !self.phase_one {
            return self.p.constraints[i].value(x);
        }
        let n = self.p.dim();
        match self.p.constraints.get(i) {
            Some(c) => c.value(&x[..n]) - x[n],
            None => -T::one() - x[n],
        }
    }

    fn gradient(&self, i: usize, x: &[T]) -> Vec<(usize, T)> {
        if !self.phase_one {
            return self.p.constraints[i].gradient(x);
        }
        let n = self.p.dim();
        match self.p.constraints.get(i) {
            Some(c) => {
                let mut g = c.gradient(&x[..n]);
                g.push((n, -T::one()));
                g
            }
            None => vec![(n, -T::one())],
        }
    }

    fn add_hessian(&self, i: usize, w: T, h: &mut Matrix<T>) {
        if let Some(c) = self.p.constraints.get(i) {
            c.add_hessian(w, h);
        }
    }

    fn objective_gradient(&self, x: &[T]) -> Vec<T> {
        if self.phase_one {
            let mut g = vec![T::zero(); self.n()];
            g[self.p.dim()] = T::one();
            g
        } else {
            self.p.objective_gradient(x)
        }
    }

    fn objective_hessian(&self) -> Matrix<T> {
        if self.phase_one {
            Matrix::zeros(self.n(), self.n())
        } else {
            self.p.h.clone()
        }
    }
}

struct Outcome<T> {
    x: Vec<T>,
    lambda: Vec<T>,
    iterations: usize,
}

fn residual_norm<T: Real>(v: &View<T>, x: &[T], lambda: &[T], t: T) -> Option<T> {
    let mut r = v.objective_gradient(x);
    let mut cent = T::zero();
    for (i, &l) in lambda.iter().enumerate() {
        let f = v.value(i, x);
        if f >= T::zero() {
            return None;
        }
        for (j, gj) in v.gradient(i, x) {
            r[j] += l * gj;
        }
        let rc = -l * f - T::one() / t;
        cent += rc * rc;
    }
    Some((r.iter().map(|&a| a * a).sum::<T>() + cent).sqrt())
}

/// Runs the barrier iterations from a strictly feasible `x`. With
/// `stop_below`, returns as soon as the phase I slack drops under it.
fn run<T: Real>(v: &View<T>, mut x: Vec<T>, s: &IpmSettings, stop_below: Option<T>) -> Outcome<T> {
    let n = v.n();
    let m = v.m();
    let tol = T::lit(s.tol);
    let mu = T::lit(s.mu);
    let mut lambda: Vec<T> = (0..m)
        .map(|i| (-T::one() / v.value(i, &x)).min(T::lit(1e6)))
        .collect();
    let h0 = v.objective_hessian();

    for iter in 0..s.max_iter {
        if let Some(limit) = stop_below {
            if x[n - 1] < limit {
                return Outcome {
                    x,
                    lambda,
                    iterations: iter,
                };
            }
        }
        let f: Vec<T> = (0..m).map(|i| v.value(i, &x)).collect();
        let grads: Vec<Vec<(usize, T)>> = (0..m).map(|i| v.gradient(i, &x)).collect();
        let gap = -f.iter().zip(&lambda).map(|(&a, &b)| a * b).sum::<T>();
        let mut r_dual = v.objective_gradient(&x);
        for (g, &l) in grads.iter().zip(&lambda) {
            for &(j, gj) in g {
                r_dual[j] += l * gj;
            }
        }
        let dual_norm = r_dual.iter().map(|a| a.abs()).fold(T::zero(), T::max);
        if dual_norm <= tol && gap <= tol {
            return Outcome {
                x,
                lambda,
                iterations: iter,
            };
        }
        let t = if m == 0 {
            T::one()
        } else {
            mu * T::from_usize_lossy(m) / gap.max(T::min_positive_value())
        };

        let mut hpd = h0.clone();
        let mut rhs: Vec<T> = v.objective_gradient(&x).iter().map(|&a| -a).collect();
        for i in 0..m {
            v.add_hessian(i, lambda[i], &mut hpd);
            let w = lambda[i] / -f[i];
            for &(a, ga) in &grads[i] {
                for &(b, gb) in &grads[i] {
                    hpd[(a, b)] += w * ga * gb;
                }
                rhs[a] += ga / (t * f[i]);
            }
        }
        let dx = match solve_newton(&hpd, &rhs) {
            Some(d) => d,
            None => break,
        };
        let dlambda: Vec<T> = (0..m)
            .map(|i| {
                let gdx: T = grads[i].iter().map(|&(j, g)| g * dx[j]).sum();
                let rc = -lambda[i] * f[i] - T::one() / t;
                (rc - lambda[i] * gdx) / f[i]
            })
            .collect();

        let mut step = T::one();
        for (l, dl) in lambda.iter().zip(&dlambda) {
            if *dl < T::zero() {
                step = step.min(-*l / *dl);
            }
        }
        step *= T::lit(0.99);
        let r0 = match residual_norm(v, &x, &lambda, t) {
            Some(r) => r,
            None => break,
        };
        let mut accepted = false;
        for _ in 0..80 {
            let xn: Vec<T> = x.iter().zip(&dx).map(|(&a, &d)| a + step * d).collect();
            let ln: Vec<T> = lambda
                .iter()
                .zip(&dlambda)
                .map(|(&a, &d)| a + step * d)
                .collect();
            if let Some(r1) = residual_norm(v, &xn, &ln, t) {
                if r1 <= (T::one() - T::lit(0.01) * step) * r0 {
                    x = xn;
                    lambda = ln;
                    accepted = true;
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        if !accepted {
            return Outcome {
                x,
                lambda,
                iterations: iter + 1,
            };
        }
    }
    Outcome {
        x,
        lambda,
        iterations: s.max_iter,
    }
}

fn solve_newton<T: Real>(h: &Matrix<T>, rhs: &[T]) -> Option<Vec<T>> {
    if let Some(x) = cholesky_solve(h, rhs) {
        return Some(x);
    }
    let scale = (0..h.rows())
        .map(|i| h[(i, i)].abs())
        .fold(T::one(), T::max);
    let mut reg = h.clone();
    for i in 0..h.rows() {
        reg[(i, i)] += scale * T::lit(1e-12);
    }
    cholesky_solve(&reg, rhs).or_else(|| lu_solve(h, rhs))
}

/// Solves the program starting from `x0`. Runs phase I first when `x0` is
/// not strictly feasible.
pub fn solve<T: Real>(p: &ConvexProgram<T>, x0: &[T], s: &IpmSettings) -> IpmResult<T> {
    let n = p.dim();
    assert_eq!(x0.len(), n, "start point dimension");
    let mut x = x0.to_vec();
    let mut iterations = 0;

    let worst = p.max_violation(&x);
    if !p.constraints.is_empty() && worst >= T::zero() {
        let view = View { p, phase_one: true };
        let mut z = x.clone();
        z.push(worst + T::one());
        let stop = -T::lit(1e-6).max(T::lit(1e-3) * worst.abs().min(T::one()));
        let out = run(&view, z, s, Some(stop));
        iterations += out.iterations;
        let slack = out.x[n];
        if !(slack < T::zero()) {
            let xs = out.x[..n].to_vec();
            let violated = p
                .constraints
                .iter()
                .enumerate()
                .filter(|(_, c)| c.value(&xs) >= T::zero())
                .map(|(i, _)| i)
                .collect();
            let lambda = vec![T::zero(); p.constraints.len()];
            let certificate = kkt_certificate(p, &xs, &lambda);
            return IpmResult {
                x: xs,
                lambda,
                status: SolveStatus::Infeasible,
                iterations,
                certificate,
                violated,
            };
        }
        x = out.x[..n].to_vec();
    }

    let view = View {
        p,
        phase_one: false,
    };
    let out = run(&view, x, s, None);
    iterations += out.iterations;
    let certificate = kkt_certificate(p, &out.x, &out.lambda);
    let status = if certificate.residual() <= s.kkt_tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIter
    };
    IpmResult {
        x: out.x,
        lambda: out.lambda,
        status,
        iterations,
        certificate,
        violated: Vec::new(),
    }
}
