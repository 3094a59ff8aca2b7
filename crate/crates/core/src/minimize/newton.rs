//! Damped Newton descent on the interior nodes of a path.
//!
//! The discrete action couples each node only to its neighbours, so the
//! Hessian is block tridiagonal with `N·dim` square blocks and a Newton step
//! costs one block Cholesky sweep. Indefinite Hessians are handled by adding a
//! mass-weighted multiple of the identity until the factorization succeeds.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::action::DiscretePath;
use crate::system::{
    add_potential_gradient, add_potential_hessian, min_pair_distance, potential_unchecked,
    MassSystem,
};

pub(crate) struct NewtonOutcome {
    pub path: DiscretePath,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct Problem<'a> {
    pub sys: &'a MassSystem,
    pub h: f64,
    pub dts: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(sys: &'a MassSystem, h: f64, times: &[f64]) -> Self {
        Self {
            sys,
            h,
            dts: times.windows(2).map(|w| w[1] - w[0]).collect(),
        }
    }

    fn block(&self) -> usize {
        self.sys.len()
    }

    /// Action of the node list (endpoints included).
    pub fn value(&self, nodes: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        let mut mid = vec![0.0; self.block()];
        for (k, dt) in self.dts.iter().enumerate() {
            let (a, b) = (&nodes[k], &nodes[k + 1]);
            let mut kin = 0.0;
            for (i, m) in self.sys.masses().iter().enumerate() {
                let d = self.sys.dim();
                for c in i * d..(i + 1) * d {
                    let dx = b[c] - a[c];
                    kin += m * dx * dx;
                    mid[c] = 0.5 * (a[c] + b[c]);
                }
            }
            let ua = potential_unchecked(self.sys, a);
            let um = potential_unchecked(self.sys, &mid);
            let ub = potential_unchecked(self.sys, b);
            total += 0.5 * kin / dt + dt / 6.0 * (ua + 4.0 * um + ub) + self.h * dt;
        }
        total
    }

    /// Smallest mutual distance over nodes and segment midpoints, endpoints excluded.
    pub fn interior_min_distance(&self, nodes: &[Vec<f64>]) -> f64 {
        let (n, d) = (self.sys.n_bodies(), self.sys.dim());
        let mut r = f64::INFINITY;
        let mut mid = vec![0.0; self.block()];
        for k in 0..self.dts.len() {
            if k > 0 {
                r = r.min(min_pair_distance(n, d, &nodes[k]));
            }
            for (c, m) in mid.iter_mut().enumerate() {
                *m = 0.5 * (nodes[k][c] + nodes[k + 1][c]);
            }
            r = r.min(min_pair_distance(n, d, &mid));
        }
        r
    }

    /// Gradient with respect to the interior nodes, flattened node by node.
    pub fn gradient(&self, nodes: &[Vec<f64>]) -> Vec<f64> {
        let b = self.block();
        let d = self.sys.dim();
        let interior = self.dts.len() - 1;
        let mut g = vec![0.0; interior * b];
        let mut mid = vec![0.0; b];
        for k in 0..self.dts.len() {
            let dt = self.dts[k];
            let (xa, xb) = (&nodes[k], &nodes[k + 1]);
            for c in 0..b {
                mid[c] = 0.5 * (xa[c] + xb[c]);
            }
            // segment k touches interior slots k-1 (node k) and k (node k+1)
            if k >= 1 {
                let slot = &mut g[(k - 1) * b..k * b];
                for i in 0..self.sys.n_bodies() {
                    let m = self.sys.mass(i);
                    for c in i * d..(i + 1) * d {
                        slot[c] -= m * (xb[c] - xa[c]) / dt;
                    }
                }
                add_potential_gradient(self.sys, xa, dt / 6.0, slot);
                add_potential_gradient(self.sys, &mid, dt / 3.0, slot);
            }
            if k + 1 <= interior {
                let slot = &mut g[k * b..(k + 1) * b];
                for i in 0..self.sys.n_bodies() {
                    let m = self.sys.mass(i);
                    for c in i * d..(i + 1) * d {
                        slot[c] += m * (xb[c] - xa[c]) / dt;
                    }
                }
                add_potential_gradient(self.sys, xb, dt / 6.0, slot);
                add_potential_gradient(self.sys, &mid, dt / 3.0, slot);
            }
        }
        g
    }

    /// Dual mass norm `√(Σ |g_i|² / m_i)` of a gradient.
    pub fn grad_norm(&self, g: &[f64]) -> f64 {
        let b = self.block();
        let d = self.sys.dim();
        let mut s = 0.0;
        for slot in g.chunks(b) {
            for (i, m) in self.sys.masses().iter().enumerate() {
                s += slot[i * d..(i + 1) * d].iter().map(|c| c * c).sum::<f64>() / m;
            }
        }
        s.sqrt()
    }

    /// Diagonal and super-diagonal Hessian blocks.
    fn hessian(&self, nodes: &[Vec<f64>]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let b = self.block();
        let d = self.sys.dim();
        let interior = self.dts.len() - 1;
        let mut diag = vec![DMatrix::zeros(b, b); interior];
        let mut off = vec![DMatrix::zeros(b, b); interior.saturating_sub(1)];
        let mut mid = vec![0.0; b];
        for k in 0..self.dts.len() {
            let dt = self.dts[k];
            let (xa, xb) = (&nodes[k], &nodes[k + 1]);
            for c in 0..b {
                mid[c] = 0.5 * (xa[c] + xb[c]);
            }
            let mut mid_h = DMatrix::zeros(b, b);
            add_potential_hessian(self.sys, &mid, dt / 6.0, &mut mid_h);
            let mut kin = DMatrix::zeros(b, b);
            for i in 0..self.sys.n_bodies() {
                for c in i * d..(i + 1) * d {
                    kin[(c, c)] = self.sys.mass(i) / dt;
                }
            }
            if k >= 1 {
                let blk = &mut diag[k - 1];
                *blk += &kin + &mid_h;
                add_potential_hessian(self.sys, xa, dt / 6.0, blk);
            }
            if k + 1 <= interior {
                let blk = &mut diag[k];
                *blk += &kin + &mid_h;
                add_potential_hessian(self.sys, xb, dt / 6.0, blk);
            }
            if k >= 1 && k + 1 <= interior {
                off[k - 1] = &mid_h - &kin;
            }
        }
        (diag, off)
    }
}

/// Solves `(A + mu·M) p = rhs` for a symmetric block tridiagonal `A`.
/// Returns `None` when the shifted matrix is not positive definite.
fn block_tridiagonal_solve(
    diag: &[DMatrix<f64>],
    off: &[DMatrix<f64>],
    shift: &DVector<f64>,
    rhs: &[f64],
) -> Option<Vec<f64>> {
    let n = diag.len();
    let b = shift.len();
    let mut chols: Vec<Cholesky<f64, Dyn>> = Vec::with_capacity(n);
    // S_k^{-1} C_k, reused in the back substitution
    let mut coupling: Vec<DMatrix<f64>> = Vec::with_capacity(n.saturating_sub(1));
    let mut w: Vec<DVector<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut s = diag[k].clone();
        for c in 0..b {
            s[(c, c)] += shift[c];
        }
        let mut wk = DVector::from_column_slice(&rhs[k * b..(k + 1) * b]);
        if k > 0 {
            let c_prev = &off[k - 1];
            let sc = &coupling[k - 1];
            s -= c_prev.transpose() * sc;
            wk -= c_prev.transpose() * chols[k - 1].solve(&w[k - 1]);
        }
        let chol = Cholesky::new(s)?;
        if k + 1 < n {
            coupling.push(chol.solve(&off[k]));
        }
        chols.push(chol);
        w.push(wk);
    }
    let mut p = vec![DVector::zeros(b); n];
    for k in (0..n).rev() {
        let mut r = w[k].clone();
        if k + 1 < n {
            r -= &off[k] * &p[k + 1];
        }
        p[k] = chols[k].solve(&r);
    }
    Some(
        p.into_iter()
            .flat_map(|v| v.data.as_vec().clone())
            .collect(),
    )
}

pub(crate) struct NewtonSettings {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub collision_floor: f64,
}

/// Descends from `start`, keeping its endpoints fixed.
pub(crate) fn descend(
    sys: &MassSystem,
    h: f64,
    start: &DiscretePath,
    cfg: &NewtonSettings,
) -> NewtonOutcome {
    let problem = Problem::new(sys, h, start.times());
    let b = sys.len();
    let d = sys.dim();
    let mut nodes: Vec<Vec<f64>> = start
        .nodes()
        .iter()
        .map(|x| x.as_slice().to_vec())
        .collect();
    let interior = problem.dts.len() - 1;
    let mut floor = cfg.collision_floor;
    let mut value = problem.value(&nodes);
    let mut g = problem.gradient(&nodes);
    let mut gn = problem.grad_norm(&g);

    let mass_diag: Vec<f64> = (0..b).map(|c| sys.mass(c / d)).collect();
    let dt_min = problem.dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let mu_base = 1e-10 * sys.masses().iter().cloned().fold(0.0, f64::max) / dt_min;
    let mut mu = 0.0_f64;

    let mut iterations = 0;
    let mut converged = gn <= cfg.grad_tol && value.is_finite();
    let mut floor_halvings = 0;
    while !converged && iterations < cfg.max_iters && value.is_finite() {
        iterations += 1;
        let (diag, off) = if interior > 0 {
            problem.hessian(&nodes)
        } else {
            (Vec::new(), Vec::new())
        };
        let mut stepped = false;
        let mut mu_tries = 0;
        while !stepped && mu_tries < 40 {
            mu_tries += 1;
            let shift = DVector::from_iterator(b, mass_diag.iter().map(|m| mu * m));
            let neg_g: Vec<f64> = g.iter().map(|c| -c).collect();
            let p = match block_tridiagonal_solve(&diag, &off, &shift, &neg_g) {
                Some(p) => p,
                None => {
                    mu = (mu * 10.0).max(mu_base);
                    continue;
                }
            };
            let slope: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                mu = (mu * 10.0).max(mu_base);
                continue;
            }
            let mut alpha = 1.0;
            let mut barrier_hit = false;
            while alpha > 1e-14 {
                let trial: Vec<Vec<f64>> = nodes
                    .iter()
                    .enumerate()
                    .map(|(k, x)| {
                        if k == 0 || k == interior + 1 {
                            x.clone()
                        } else {
                            let s = &p[(k - 1) * b..k * b];
                            x.iter().zip(s).map(|(a, s)| a + alpha * s).collect()
                        }
                    })
                    .collect();
                if problem.interior_min_distance(&trial) <= floor {
                    barrier_hit = true;
                    alpha *= 0.5;
                    continue;
                }
                let ft = problem.value(&trial);
                let armijo = ft <= value + 1e-4 * alpha * slope;
                let mut accept = ft.is_finite() && armijo;
                let mut gt = None;
                if !accept
                    && alpha == 1.0
                    && ft.is_finite()
                    && ft - value <= 8.0 * f64::EPSILON * value.abs()
                {
                    // round-off regime: accept a full step that shrinks the gradient
                    let gtrial = problem.gradient(&trial);
                    if problem.grad_norm(&gtrial) < gn {
                        accept = true;
                        gt = Some(gtrial);
                    }
                }
                if accept {
                    nodes = trial;
                    value = ft;
                    g = gt.unwrap_or_else(|| problem.gradient(&nodes));
                    gn = problem.grad_norm(&g);
                    stepped = true;
                    break;
                }
                alpha *= 0.5;
            }
            if stepped {
                if alpha == 1.0 {
                    mu = if mu > mu_base { mu / 10.0 } else { 0.0 };
                }
            } else if barrier_hit && floor_halvings < 40 {
                floor *= 0.5;
                floor_halvings += 1;
            } else {
                mu = (mu * 10.0).max(mu_base);
            }
        }
        if !stepped {
            break;
        }
        converged = gn <= cfg.grad_tol;
    }

    let path_nodes = nodes
        .into_iter()
        .map(|v| crate::system::Configuration::new(d, v).expect("shape preserved"))
        .collect();
    let path = DiscretePath::new(start.times().to_vec(), path_nodes).expect("grid preserved");
    NewtonOutcome {
        path,
        grad_norm: gn,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_solver_matches_dense() {
        // random SPD block tridiagonal system, blocks of size 3
        let b = 3;
        let n = 5;
        let mut diag = Vec::new();
        let mut off = Vec::new();
        let mut seed = 1u64;
        let mut rnd = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for _ in 0..n {
            let a = DMatrix::from_fn(b, b, |_, _| rnd());
            diag.push(&a * a.transpose() + DMatrix::identity(b, b) * 4.0);
        }
        for _ in 0..n - 1 {
            off.push(DMatrix::from_fn(b, b, |_, _| rnd()));
        }
        let mut dense = DMatrix::zeros(n * b, n * b);
        for k in 0..n {
            dense.view_mut((k * b, k * b), (b, b)).copy_from(&diag[k]);
            if k + 1 < n {
                dense
                    .view_mut((k * b, (k + 1) * b), (b, b))
                    .copy_from(&off[k]);
                dense
                    .view_mut(((k + 1) * b, k * b), (b, b))
                    .copy_from(&off[k].transpose());
            }
        }
        let rhs: Vec<f64> = (0..n * b).map(|_| rnd()).collect();
        let shift = DVector::from_element(b, 0.5);
        let x = block_tridiagonal_solve(&diag, &off, &shift, &rhs).unwrap();
        for k in 0..n {
            for c in 0..b {
                dense[(k * b + c, k * b + c)] += 0.5;
            }
        }
        let r = dense * DVector::from_vec(x) - DVector::from_vec(rhs);
        assert!(r.norm() < 1e-12);
    }
}
