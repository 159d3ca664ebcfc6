//! Weighted least-squares fit of a [`TheoryModel`] to a measured curve.
//!
//! The fitted function is `A f(tau; theta) + B` with an amplitude `A` and
//! offset `B` as nuisance parameters. Minimization is damped Gauss-Newton
//! (Levenberg-Marquardt with Marquardt diagonal scaling and multiplicative
//! damping updates); parameters are projected back onto their bounds after
//! every step.

#![allow(clippy::needless_range_loop)]

use std::fmt::Write as _;

use crate::analytic::TheoryModel;
use crate::correlator::G2Curve;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nuisance<T> {
    Free(T),
    Fixed(T),
}

impl<T: Real> Nuisance<T> {
    fn value(self) -> T {
        match self {
            Nuisance::Free(v) | Nuisance::Fixed(v) => v,
        }
    }

    fn is_free(self) -> bool {
        matches!(self, Nuisance::Free(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec<T> {
    /// Variant to fit, carrying the initial guess.
    pub model: TheoryModel<T>,
    /// Which model parameters vary, in [`TheoryModel::param_names`] order.
    pub free: Vec<bool>,
    pub amplitude: Nuisance<T>,
    pub offset: Nuisance<T>,
    pub max_iterations: usize,
    /// Converged once every free parameter moves by less than this, relatively.
    pub tolerance: T,
}

impl<T: Real> FitSpec<T> {
    pub fn new(model: TheoryModel<T>) -> Self {
        Self {
            free: vec![true; model.params().len()],
            model,
            amplitude: Nuisance::Free(T::one()),
            offset: Nuisance::Free(T::zero()),
            max_iterations: 200,
            tolerance: T::lit(1e-6),
        }
    }

    pub fn fix(mut self, name: &str) -> Self {
        if let Some(i) = self.model.param_names().iter().position(|n| *n == name) {
            self.free[i] = false;
        }
        self
    }

    pub fn without_nuisance(mut self) -> Self {
        self.amplitude = Nuisance::Fixed(T::one());
        self.offset = Nuisance::Fixed(T::zero());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitParam<T> {
    pub name: &'static str,
    pub value: T,
    /// One-sigma uncertainty; NaN when the normal equations are singular.
    pub sigma: T,
    pub free: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub model: TheoryModel<T>,
    pub amplitude: T,
    pub offset: T,
    /// Model parameters followed by `amplitude` and `offset`.
    pub params: Vec<FitParam<T>>,
    /// Weighted residual sum of squares.
    pub chi2: T,
    pub reduced_chi2: T,
    pub converged: bool,
    pub iterations: usize,
    pub points: usize,
    pub g2_zero: T,
    pub g2_zero_sigma: T,
}

impl<T: Real> FitResult<T> {
    pub fn eval(&self, tau: T) -> T {
        self.amplitude * self.model.eval(tau) + self.offset
    }

    pub fn param(&self, name: &str) -> Option<&FitParam<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Parameters are only meaningful when the fit converged.
    pub fn reliable(&self) -> bool {
        self.converged
    }

    /// Plain-text report: a `key = value` header and a `parameter,value,sigma` table.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model = {}", self.model.name());
        let _ = writeln!(s, "converged = {}", self.converged);
        if !self.converged {
            let _ = writeln!(s, "# parameters unreliable: fit did not converge");
        }
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "points = {}", self.points);
        let _ = writeln!(s, "chi2 = {}", self.chi2);
        let _ = writeln!(s, "reduced_chi2 = {}", self.reduced_chi2);
        let _ = writeln!(s, "g2_zero = {}", self.g2_zero);
        let _ = writeln!(s, "g2_zero_sigma = {}", self.g2_zero_sigma);
        let _ = writeln!(s, "parameter,value,sigma");
        for p in &self.params {
            let _ = writeln!(s, "{},{},{}", p.name, p.value, if p.free { p.sigma } else { T::zero() });
        }
        s
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// `None` when a pivot falls below `1e-12` of the largest diagonal entry.
fn solve<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(T::zero(), T::max);
    if !(scale > T::zero()) {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if !(a[piv][col].abs() > T::lit(1e-12) * scale) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] = a[row][k] - f * v;
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc = acc - a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

struct Problem<'a, T> {
    spec: &'a FitSpec<T>,
    tau: Vec<T>,
    y: Vec<T>,
    inv_sigma: Vec<T>,
    /// Indices into the full parameter vector that vary.
    free: Vec<usize>,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> Problem<'_, T> {
    fn split(&self, full: &[T]) -> (TheoryModel<T>, T, T) {
        let k = full.len() - 2;
        (self.spec.model.with_params(&full[..k]), full[k], full[k + 1])
    }

    fn residuals(&self, full: &[T]) -> Vec<T> {
        let (m, a, b) = self.split(full);
        (0..self.tau.len())
            .map(|i| (a * m.eval(self.tau[i]) + b - self.y[i]) * self.inv_sigma[i])
            .collect()
    }

    fn cost(&self, full: &[T]) -> T {
        self.residuals(full).iter().map(|r| *r * *r).sum()
    }

    /// Rows of `d r_i / d p_j` over the free parameters.
    fn jacobian(&self, full: &[T]) -> Vec<Vec<T>> {
        let (m, a, _) = self.split(full);
        let k = full.len() - 2;
        (0..self.tau.len())
            .map(|i| {
                let t = self.tau[i];
                let grad = m.gradient(t);
                let f = m.eval(t);
                self.free
                    .iter()
                    .map(|&j| {
                        let d = if j < k {
                            a * grad[j]
                        } else if j == k {
                            f
                        } else {
                            T::one()
                        };
                        d * self.inv_sigma[i]
                    })
                    .collect()
            })
            .collect()
    }

    fn project(&self, full: &mut [T]) {
        for j in 0..full.len() {
            full[j] = full[j].max(self.lower[j]).min(self.upper[j]);
        }
    }
}

fn normal_equations<T: Real>(jac: &[Vec<T>], r: &[T]) -> (Vec<Vec<T>>, Vec<T>) {
    let k = jac.first().map_or(0, |row| row.len());
    let mut a = vec![vec![T::zero(); k]; k];
    let mut g = vec![T::zero(); k];
    for (row, &ri) in jac.iter().zip(r) {
        for p in 0..k {
            g[p] = g[p] + row[p] * ri;
            for q in p..k {
                a[p][q] = a[p][q] + row[p] * row[q];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            a[p][q] = a[q][p];
        }
    }
    (a, g)
}

/// Inverse of `a` via scaling to unit diagonal; `None` if singular.
fn covariance<T: Real>(a: &[Vec<T>]) -> Option<Vec<Vec<T>>> {
    let k = a.len();
    let d: Vec<T> = (0..k).map(|i| a[i][i].sqrt()).collect();
    if d.iter().any(|x| !(*x > T::zero())) {
        return None;
    }
    let scaled: Vec<Vec<T>> = (0..k)
        .map(|i| (0..k).map(|j| a[i][j] / (d[i] * d[j])).collect())
        .collect();
    let mut inv = vec![vec![T::zero(); k]; k];
    for col in 0..k {
        let mut e = vec![T::zero(); k];
        e[col] = T::one();
        let x = solve(scaled.clone(), e)?;
        for row in 0..k {
            inv[row][col] = x[row] / (d[row] * d[col]);
        }
    }
    Some(inv)
}

/// Fits `spec.model` to `curve`, weighting each point by `1 / stderr^2`.
///
/// Points with a nonpositive error are skipped unless every error is zero,
/// in which case the fit is unweighted.
pub fn fit_g2<T: Real>(curve: &G2Curve<T>, spec: &FitSpec<T>) -> Result<FitResult<T>> {
    spec.model.validate()?;
    if spec.free.len() != spec.model.params().len() {
        return Err(Error::config(
            "analysis",
            "free-parameter mask does not match the model",
        ));
    }
    let all_zero = curve.stderr.iter().all(|s| *s == T::zero());
    let mut tau = Vec::new();
    let mut y = Vec::new();
    let mut inv_sigma = Vec::new();
    for i in 0..curve.len() {
        let s = curve.stderr[i];
        if all_zero {
            tau.push(curve.tau[i]);
            y.push(curve.g2[i]);
            inv_sigma.push(T::one());
        } else if s > T::zero() && s.is_finite() && curve.g2[i].is_finite() {
            tau.push(curve.tau[i]);
            y.push(curve.g2[i]);
            inv_sigma.push(T::one() / s);
        }
    }

    let k = spec.free.len();
    let mut free: Vec<usize> = (0..k).filter(|&j| spec.free[j]).collect();
    if spec.amplitude.is_free() {
        free.push(k);
    }
    if spec.offset.is_free() {
        free.push(k + 1);
    }
    let nfree = free.len();
    if nfree == 0 {
        return Err(Error::config("analysis", "no free parameters to fit"));
    }
    if tau.len() < nfree || tau.len() < 5 * nfree {
        return Err(Error::domain(format!(
            "curve has {} usable points; fitting {nfree} parameters needs at least {}",
            tau.len(),
            5 * nfree
        )));
    }

    let (mut lower, mut upper): (Vec<T>, Vec<T>) = spec.model.bounds().into_iter().unzip();
    lower.extend([T::zero(), T::neg_infinity()]);
    upper.extend([T::infinity(), T::infinity()]);
    let mut full = spec.model.params();
    full.extend([spec.amplitude.value(), spec.offset.value()]);
    let floors: Vec<T> = full
        .iter()
        .enumerate()
        .map(|(j, v)| {
            if j < k {
                (v.abs() * T::lit(1e-3)).max(T::lit(1e-3))
            } else {
                T::lit(1e-3)
            }
        })
        .collect();

    let problem = Problem {
        spec,
        tau,
        y,
        inv_sigma,
        free,
        lower,
        upper,
    };
    if full
        .iter()
        .zip(&problem.lower)
        .zip(&problem.upper)
        .any(|((v, lo), hi)| *v < *lo || *v > *hi)
    {
        return Err(Error::config(
            "analysis",
            "initial guess lies outside the parameter bounds",
        ));
    }

    let mut cost = problem.cost(&full);
    let mut lambda = T::lit(1e-3);
    let mut converged = false;
    let mut singular = false;
    let mut iterations = 0;

    'outer: while iterations < spec.max_iterations {
        iterations += 1;
        let jac = problem.jacobian(&full);
        let r = problem.residuals(&full);
        let (a, g) = normal_equations(&jac, &r);
        if (0..nfree).any(|i| !(a[i][i] > T::zero())) {
            singular = true;
            break;
        }
        loop {
            let mut damped = a.clone();
            for i in 0..nfree {
                damped[i][i] = a[i][i] * (T::one() + lambda);
            }
            let step = solve(damped, g.iter().map(|v| -*v).collect());
            if let Some(step) = step {
                let mut trial = full.clone();
                for (s, &j) in step.iter().zip(&problem.free) {
                    trial[j] = trial[j] + *s;
                }
                problem.project(&mut trial);
                let trial_cost = problem.cost(&trial);
                if trial_cost.is_finite() && trial_cost <= cost {
                    let small = problem
                        .free
                        .iter()
                        .all(|&j| (trial[j] - full[j]).abs() <= spec.tolerance * full[j].abs().max(floors[j]));
                    full = trial;
                    cost = trial_cost;
                    lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
                    if small {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
            }
            lambda = lambda * T::lit(10.0);
            if lambda > T::lit(1e12) {
                // no descent direction left at working precision
                converged = true;
                break 'outer;
            }
        }
    }

    let jac = problem.jacobian(&full);
    let (a, _) = normal_equations(&jac, &problem.residuals(&full));
    let cov = if singular { None } else { covariance(&a) };
    let dof = problem.tau.len().saturating_sub(nfree).max(1);
    let reduced = cost / T::from_usize_lossy(dof);
    let inflate = reduced.max(T::one());

    let mut sigma = vec![T::nan(); full.len()];
    let mut g2_zero_sigma = T::nan();
    let (model, amplitude, offset) = problem.split(&full);
    if let Some(cov) = &cov {
        for (p, &j) in problem.free.iter().enumerate() {
            sigma[j] = (cov[p][p] * inflate).max(T::zero()).sqrt();
        }
        let grad = model.gradient(T::zero());
        let d: Vec<T> = problem
            .free
            .iter()
            .map(|&j| {
                if j < k {
                    amplitude * grad[j]
                } else if j == k {
                    model.eval(T::zero())
                } else {
                    T::one()
                }
            })
            .collect();
        let mut var = T::zero();
        for p in 0..nfree {
            for q in 0..nfree {
                var = var + d[p] * cov[p][q] * d[q];
            }
        }
        g2_zero_sigma = (var * inflate).max(T::zero()).sqrt();
    }

    let names = model.param_names().iter().copied().chain(["amplitude", "offset"]);
    let free_mask: Vec<bool> = (0..full.len()).map(|j| problem.free.contains(&j)).collect();
    let params = names
        .zip(&full)
        .enumerate()
        .map(|(j, (name, &value))| FitParam {
            name,
            value,
            sigma: sigma[j],
            free: free_mask[j],
        })
        .collect();

    Ok(FitResult {
        model,
        amplitude,
        offset,
        params,
        chi2: cost,
        reduced_chi2: reduced,
        converged: converged && cov.is_some(),
        iterations,
        points: problem.tau.len(),
        g2_zero: amplitude * model.eval(T::zero()) + offset,
        g2_zero_sigma,
    })
}
