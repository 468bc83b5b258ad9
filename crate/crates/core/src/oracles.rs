//! Independent references: direct linear solves, finite differences and a
//! scalar replay of the PMTL loop. These favour transparency over speed and
//! share no arithmetic with the solvers beyond the task sampler.

use crate::config::FederationConfig;
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::solvers::sample_tasks;
use crate::vector::ParamVector;

/// Mean-regularized mean estimation: task `k` owns points `x_{k,i}` in `R^d`
/// and the loss `sum_i ||x_{k,i} - w_k||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticInstance {
    pub tasks: Vec<Vec<Vec<f64>>>,
    pub lambda: f64,
}

impl QuadraticInstance {
    pub fn new(tasks: Vec<Vec<Vec<f64>>>, lambda: f64) -> Result<Self> {
        let d = tasks
            .first()
            .and_then(|t| t.first())
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidData("instance needs at least one task with one point".into()))?;
        if tasks.iter().any(|t| t.is_empty() || t.iter().any(|p| p.len() != d)) {
            return Err(Error::InvalidData("every task needs points of one common width".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda {lambda} must be >= 0")));
        }
        Ok(Self { tasks, lambda })
    }

    pub fn m(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.tasks[0][0].len()
    }

    /// `(1/m) sum_k [ lambda/2 ||w_k - w_bar||^2 + sum_i ||x_{k,i} - w_k||^2 ]` with `w_bar = mean(W)`.
    pub fn objective(&self, models: &[Vec<f64>]) -> f64 {
        let (m, d) = (self.m(), self.dim());
        let mut w_bar = vec![0.0; d];
        for w in models {
            for j in 0..d {
                w_bar[j] += w[j] / m as f64;
            }
        }
        let mut total = 0.0;
        for (points, w) in self.tasks.iter().zip(models) {
            let reg: f64 = (0..d).map(|j| (w[j] - w_bar[j]).powi(2)).sum();
            let fit: f64 = points
                .iter()
                .map(|x| (0..d).map(|j| (x[j] - w[j]).powi(2)).sum::<f64>())
                .sum();
            total += 0.5 * self.lambda * reg + fit;
        }
        total / m as f64
    }

    /// Exact minimizer `(W*, w_bar*)` from the stationarity system
    /// `sum_i 2 (w_k - x_{k,i}) + lambda (w_k - mean(W)) = 0` for every task.
    pub fn fixed_point(&self) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let (m, d) = (self.m(), self.dim());
        let size = m * d;
        let lam = self.lambda;
        let mut a = vec![vec![0.0; size]; size];
        let mut b = vec![0.0; size];
        for (k, points) in self.tasks.iter().enumerate() {
            let n = points.len() as f64;
            for j in 0..d {
                let row = k * d + j;
                for l in 0..m {
                    a[row][l * d + j] -= lam / m as f64;
                }
                a[row][row] += 2.0 * n + lam;
                b[row] = points.iter().map(|x| 2.0 * x[j]).sum();
            }
        }
        let solution = solve_linear(a, b)?;
        let models: Vec<Vec<f64>> = solution.chunks(d).map(<[f64]>::to_vec).collect();
        let mut w_bar = vec![0.0; d];
        for w in &models {
            for j in 0..d {
                w_bar[j] += w[j] / m as f64;
            }
        }
        Ok((models, w_bar))
    }
}

/// Free function form of [`QuadraticInstance::fixed_point`].
pub fn mean_reg_fixed_point(instance: &QuadraticInstance) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    instance.fixed_point()
}

/// Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidData("linear system must be square".into()));
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty range");
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::SingularSystem);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                let (upper, lower) = a.split_at_mut(row);
                for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *dst -= factor * src;
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Central differences `(f(w + h e_i) - f(w - h e_i)) / 2h`.
pub fn finite_diff_grad(mut f: impl FnMut(&ParamVector) -> f64, w: &ParamVector, step: f64) -> ParamVector {
    let base = w.as_slice().to_vec();
    let grad = (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            let fp = f(&ParamVector::new(plus).expect("finite probe"));
            let fm = f(&ParamVector::new(minus).expect("finite probe"));
            (fp - fm) / (2.0 * step)
        })
        .collect();
    ParamVector::new(grad).expect("finite differences of a finite function")
}

/// Both sides of the mean-estimation lower bound:
/// `(1/m) sum (x_i - w_i)^2 + (1/m) sum (w_i - w_bar)^2` and `(1/2m) sum (x_i - w_bar)^2`.
pub fn mean_estimation_bound(x: &[f64], w: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let w_bar = w.iter().sum::<f64>() / m;
    let objective = x.iter().zip(w).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m
        + w.iter().map(|b| (b - w_bar).powi(2)).sum::<f64>() / m;
    let bound = x.iter().map(|a| (a - w_bar).powi(2)).sum::<f64>() / (2.0 * m);
    (objective, bound)
}

/// Scalar trajectory produced by [`exhaustive_small_pmtl`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmallTrajectory {
    /// One line per arithmetic step.
    pub log: Vec<String>,
    /// Per-task models after each round.
    pub models: Vec<Vec<f64>>,
    /// `w_tilde` after each round.
    pub w_tilde: Vec<f64>,
    pub selected: Vec<Vec<usize>>,
}

/// Replays PMTL on scalar mean estimation (`d = 1`, full batch, no noise)
/// with every operation spelled out. Limited to `m <= 3`, `T <= 3`, `E <= 2`.
pub fn exhaustive_small_pmtl(
    config: &FederationConfig,
    points: &[Vec<f64>],
    init: &[f64],
) -> Result<SmallTrajectory> {
    let m = config.tasks;
    if m > 3 || config.rounds > 3 || config.local_steps > 2 || config.sigma != 0.0 {
        return Err(Error::InvalidConfig(
            "replay needs m <= 3, T <= 3, E <= 2 and sigma = 0".into(),
        ));
    }
    if points.len() != m || init.len() != m {
        return Err(Error::InvalidConfig("one point list and one start per task".into()));
    }
    let (eta, lambda, gamma) = (config.eta, config.lambda, config.gamma);
    let mut log = Vec::new();
    let mut w = init.to_vec();
    let mut wt = 0.0;
    for &v in &w {
        wt += v;
    }
    wt *= 1.0 / m as f64;
    log.push(format!("init w = {w:?}, w_tilde = {wt}"));
    let streams = Streams::new(config.seed);
    let (mut models, mut tildes, mut selected_all) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..config.rounds {
        let selected = sample_tasks(&streams, t, m, config.sampled);
        log.push(format!("round {t}: S = {selected:?}, broadcast w_tilde = {wt}"));
        let mut sum = 0.0;
        let mut new_w = w.clone();
        for &k in &selected {
            let mut v = w[k];
            for e in 0..config.local_steps {
                let mut grad = 0.0;
                for x in &points[k] {
                    grad += 2.0 * (v - x);
                }
                let g = grad + lambda * (v - wt);
                let next = v + (-eta) * g;
                log.push(format!("  task {k} step {e}: w = {v}, grad = {grad}, reg = {}, w' = {next}", lambda * (v - wt)));
                v = next;
            }
            let update = v - w[k];
            let norm = (update * update).sqrt();
            let clipped = if norm == 0.0 { 0.0 } else { update * f64::min(1.0, gamma / norm) };
            log.push(format!("  task {k}: g = {update}, clipped = {clipped}"));
            sum += clipped;
            new_w[k] = v;
        }
        let mean = sum * (1.0 / selected.len() as f64);
        wt += mean;
        log.push(format!("  mean update = {mean}, w_tilde = {wt}"));
        w = new_w;
        models.push(w.clone());
        tildes.push(wt);
        selected_all.push(selected);
    }
    Ok(SmallTrajectory {
        log,
        models,
        w_tilde: tildes,
        selected: selected_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_of_half_norm() {
        let w = ParamVector::new(vec![0.3, -1.2, 2.0]).unwrap();
        let g = finite_diff_grad(|v| 0.5 * v.l2_norm().powi(2), &w, 1e-6);
        assert!(g.sub(&w).unwrap().as_slice().iter().all(|e| e.abs() <= 1e-7));
        let c = finite_diff_grad(|_| 4.2, &w, 1e-6);
        assert_eq!(c, ParamVector::zeros(3));
    }

    #[test]
    fn linear_solver_handles_pivoting() {
        let x = solve_linear(vec![vec![0.0, 1.0], vec![2.0, 1.0]], vec![3.0, 5.0]).unwrap();
        assert_eq!(x, vec![1.0, 3.0]);
        assert_eq!(
            solve_linear(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]),
            Err(Error::SingularSystem)
        );
    }

    #[test]
    fn identical_tasks_share_the_fixed_point() {
        let inst = QuadraticInstance::new(vec![vec![vec![1.5]]; 3], 4.0).unwrap();
        let (w, w_bar) = inst.fixed_point().unwrap();
        for wk in &w {
            assert!((wk[0] - 1.5).abs() < 1e-12);
        }
        assert!((w_bar[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn no_regularization_gives_sample_means() {
        let inst = QuadraticInstance::new(
            vec![vec![vec![1.0, 0.0], vec![3.0, 2.0]], vec![vec![-1.0, 5.0]]],
            0.0,
        )
        .unwrap();
        let (w, _) = inst.fixed_point().unwrap();
        assert!((w[0][0] - 2.0).abs() < 1e-12 && (w[0][1] - 1.0).abs() < 1e-12);
        assert!((w[1][0] + 1.0).abs() < 1e-12 && (w[1][1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn two_task_system_by_elimination() {
        // 2(w1 - 0) + 2(w1 - w_bar) = 0, 2(w2 - 2) + 2(w2 - w_bar) = 0, w_bar = (w1 + w2)/2
        //   => 3 w1 - w2 = 0 and 3 w2 - w1 = 4  =>  w1 = 1/2, w2 = 3/2.
        let inst = QuadraticInstance::new(vec![vec![vec![0.0]], vec![vec![2.0]]], 2.0).unwrap();
        let (w, w_bar) = inst.fixed_point().unwrap();
        assert!((w[0][0] - 0.5).abs() < 1e-12);
        assert!((w[1][0] - 1.5).abs() < 1e-12);
        assert!((w_bar[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_minimizes_objective() {
        let inst = QuadraticInstance::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![2.0, -1.0], vec![1.0, 1.0]], vec![vec![5.0, 0.5]]],
            3.0,
        )
        .unwrap();
        let (w, _) = inst.fixed_point().unwrap();
        let best = inst.objective(&w);
        for (k, j, h) in [(0, 0, 1e-3), (1, 1, -1e-3), (2, 0, 2e-3)] {
            let mut p = w.clone();
            p[k][j] += h;
            assert!(inst.objective(&p) > best);
        }
    }

    #[test]
    fn replay_rejects_large_configs() {
        let mut c = FederationConfig::new(4);
        c.rounds = 1;
        c.local_steps = 1;
        assert!(exhaustive_small_pmtl(&c, &vec![vec![0.0]; 4], &[0.0; 4]).is_err());
    }
}
