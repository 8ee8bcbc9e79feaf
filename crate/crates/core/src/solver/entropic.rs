//! Multi-marginal entropic regularization with cyclic log-domain scaling.
//!
//! The coupling has the Gibbs form
//! `pi[a] = exp((sum_i phi_i(a_i) - C[a]) / epsilon)`; each sweep resets
//! `phi_i` so that axis `i` matches its marginal exactly, for `i = 0..m`.
//! Convergence is measured as the largest total-variation error over all
//! axes.

use crate::{Error, Result};

use super::{Coupling, Instance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropicOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Target total-variation error on every marginal.
    pub tol: f64,
}

impl EntropicOptions {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, max_iters: 20_000, tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct EntropicSolution {
    pub coupling: Coupling,
    /// Log-domain scalings `phi_i`; `-inf` on zero-weight atoms.
    pub potentials: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Max over axes of `0.5 * sum_a |pi_i(a) - w_i(a)|`.
    pub marginal_error: f64,
}

impl EntropicSolution {
    pub fn objective(&self) -> f64 {
        self.coupling.objective()
    }
}

pub fn solve_entropic(inst: &Instance, opts: &EntropicOptions) -> Result<EntropicSolution> {
    if !(opts.epsilon > 0.0) || !opts.epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    let m = inst.marginal_count();
    let shape = inst.shape().to_vec();
    let costs = inst.cost_tensor();
    let eps = opts.epsilon;
    let log_w: Vec<Vec<f64>> = (0..m).map(|i| inst.weights(i).iter().map(|w| w.ln()).collect()).collect();
    let mut phi: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n]).collect();

    let mut best: Option<(f64, Vec<Vec<f64>>, usize)> = None;
    let mut iterations = 0;
    let mut error = f64::INFINITY;
    while iterations < opts.max_iters {
        for i in 0..m {
            let lse = axis_logsumexp(&shape, costs, &phi, i, eps);
            for a in 0..shape[i] {
                phi[i][a] = if log_w[i][a] == f64::NEG_INFINITY || lse[a] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    eps * (log_w[i][a] - lse[a])
                };
            }
        }
        iterations += 1;
        error = marginal_tv(inst, &phi, eps);
        if best.as_ref().is_none_or(|(e, _, _)| error < *e) {
            best = Some((error, phi.clone(), iterations));
        }
        if error <= opts.tol {
            break;
        }
    }
    let converged = error <= opts.tol;
    let (error, phi, _) = best.expect("at least one sweep");
    let coupling = Coupling::new(
        inst,
        (0..inst.len()).filter_map(|flat| {
            let w = gibbs(inst, &phi, eps, flat);
            (w > 0.0).then(|| (inst.unravel(flat), w))
        }),
    )?;
    Ok(EntropicSolution { coupling, potentials: phi, iterations, converged, marginal_error: error })
}

fn exponent(shape_idx: &[usize], costs: &[f64], phi: &[Vec<f64>], flat: usize, skip: Option<usize>, eps: f64) -> f64 {
    let mut s = -costs[flat];
    for (i, &a) in shape_idx.iter().enumerate() {
        if Some(i) != skip {
            s += phi[i][a];
        }
    }
    s / eps
}

fn gibbs(inst: &Instance, phi: &[Vec<f64>], eps: f64, flat: usize) -> f64 {
    exponent(&inst.unravel(flat), inst.cost_tensor(), phi, flat, None, eps).exp()
}

/// For each atom `a` of axis `i`: `log sum_{t: t_i = a} exp((sum_{j != i} phi_j - C) / eps)`.
fn axis_logsumexp(shape: &[usize], costs: &[f64], phi: &[Vec<f64>], axis: usize, eps: f64) -> Vec<f64> {
    let n = shape[axis];
    let mut max = vec![f64::NEG_INFINITY; n];
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..costs.len() {
        let e = exponent(&idx, costs, phi, flat, Some(axis), eps);
        let a = idx[axis];
        if e > max[a] {
            max[a] = e;
        }
        advance(&mut idx, shape);
    }
    let mut sum = vec![0.0; n];
    idx.iter_mut().for_each(|k| *k = 0);
    for flat in 0..costs.len() {
        let a = idx[axis];
        if max[a] > f64::NEG_INFINITY {
            sum[a] += (exponent(&idx, costs, phi, flat, Some(axis), eps) - max[a]).exp();
        }
        advance(&mut idx, shape);
    }
    (0..n).map(|a| if max[a] == f64::NEG_INFINITY { max[a] } else { max[a] + sum[a].ln() }).collect()
}

fn advance(idx: &mut [usize], shape: &[usize]) {
    let mut k = shape.len();
    while k > 0 {
        k -= 1;
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

fn marginal_tv(inst: &Instance, phi: &[Vec<f64>], eps: f64) -> f64 {
    let shape = inst.shape();
    let mut marg: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n]).collect();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..inst.len() {
        let w = exponent(&idx, inst.cost_tensor(), phi, flat, None, eps).exp();
        for (i, &a) in idx.iter().enumerate() {
            marg[i][a] += w;
        }
        advance(&mut idx, shape);
    }
    (0..shape.len())
        .map(|i| 0.5 * marg[i].iter().zip(inst.weights(i)).map(|(p, w)| (p - w).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DiscreteMarginal, DomainBox};

    #[test]
    fn rejects_nonpositive_epsilon() {
        let d = DomainBox::unit(1).unwrap();
        let one = DiscreteMarginal::new(d, vec![vec![0.5]], vec![1.0]).unwrap();
        let inst = Instance::from_tensor(vec![one.clone(), one], vec![1.0]).unwrap();
        assert!(solve_entropic(&inst, &EntropicOptions::new(0.0)).is_err());
        assert!(solve_entropic(&inst, &EntropicOptions::new(-1.0)).is_err());
    }

    #[test]
    fn single_atoms_are_exact_for_any_epsilon() {
        let d = DomainBox::unit(1).unwrap();
        let one = DiscreteMarginal::new(d, vec![vec![0.5]], vec![1.0]).unwrap();
        let inst = Instance::from_tensor(vec![one.clone(), one.clone(), one], vec![3.5]).unwrap();
        for eps in [1e-3, 1.0, 100.0] {
            let sol = solve_entropic(&inst, &EntropicOptions::new(eps)).unwrap();
            assert!(sol.converged);
            assert!((sol.coupling.entries()[&vec![0, 0, 0]] - 1.0).abs() < 1e-12);
            assert!((sol.objective() - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_atoms_get_no_mass() {
        let d = DomainBox::unit(1).unwrap();
        let a = DiscreteMarginal::new(d.clone(), vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).unwrap();
        let b = DiscreteMarginal::new(d, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let inst = Instance::from_tensor(vec![a, b], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let sol = solve_entropic(&inst, &EntropicOptions::new(0.1)).unwrap();
        assert!(sol.converged);
        assert!(sol.coupling.entries().keys().all(|k| k[0] == 0));
    }
}
