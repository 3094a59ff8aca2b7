//! Mass systems, configurations, the force function and cluster decompositions.
//!
//! Configurations are points of `E^N` with `E = R^dim`. Norms on configuration
//! space are mass weighted, `‖v‖² = Σ m_i |v_i|²`, so that the kinetic energy of
//! a velocity `v` is exactly `½‖v‖²`. When the norm is applied to a tuple of
//! cluster centers the weights are the cluster total masses.
//!
//! The force function is the positive Newtonian potential
//! `U(x) = Σ_{i<j} G m_i m_j / r_ij`; the Lagrangian is `T + U` and the energy
//! `T − U`. A collision is not an error: [`potential`] returns `f64::INFINITY`.

use nalgebra::DMatrix;

use crate::error::{usage, Error, Result};

/// Masses, gravitational constant and ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MassSystem {
    masses: Vec<f64>,
    grav_const: f64,
    dim: usize,
}

impl MassSystem {
    pub fn new(masses: Vec<f64>, grav_const: f64, dim: usize) -> Result<Self> {
        if masses.is_empty() {
            return usage("a mass system needs at least one body");
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return usage(format!("masses must be positive and finite, got {m}"));
        }
        if !(grav_const.is_finite() && grav_const > 0.0) {
            return usage(format!("G must be positive, got {grav_const}"));
        }
        if dim < 2 {
            return usage("the ambient dimension must be at least 2");
        }
        Ok(Self {
            masses,
            grav_const,
            dim,
        })
    }

    /// `n` unit masses with `G = 1`.
    pub fn unit(n: usize, dim: usize) -> Result<Self> {
        Self::new(vec![1.0; n], 1.0, dim)
    }

    pub fn n_bodies(&self) -> usize {
        self.masses.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn grav_const(&self) -> f64 {
        self.grav_const
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Number of scalar coordinates, `N · dim`.
    pub fn len(&self) -> usize {
        self.masses.len() * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// The system made of the listed bodies, in the listed order.
    pub fn subsystem(&self, bodies: &[usize]) -> Result<Self> {
        if let Some(&b) = bodies.iter().find(|&&b| b >= self.n_bodies()) {
            return usage(format!("body index {b} out of range"));
        }
        Self::new(
            bodies.iter().map(|&b| self.masses[b]).collect(),
            self.grav_const,
            self.dim,
        )
    }

    pub(crate) fn check(&self, x: &Configuration) -> Result<()> {
        if x.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.dim,
            });
        }
        if x.n_bodies() != self.n_bodies() {
            return Err(Error::DimensionMismatch {
                expected: self.n_bodies(),
                got: x.n_bodies(),
            });
        }
        Ok(())
    }
}

/// A point of configuration space (also used for velocities and displacements).
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    coords: Vec<f64>,
    dim: usize,
}

impl Configuration {
    /// Builds a configuration from flat coordinates `[x_0, y_0, x_1, y_1, …]`.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return usage(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            ));
        }
        Ok(Self { coords, dim })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let dim = match points.first() {
            Some(p) => p.as_ref().len(),
            None => return usage("a configuration needs at least one body"),
        };
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.as_ref().len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.as_ref().len(),
                });
            }
            coords.extend_from_slice(p.as_ref());
        }
        Self::new(dim, coords)
    }

    pub fn zeros(n_bodies: usize, dim: usize) -> Self {
        Self {
            coords: vec![0.0; n_bodies * dim],
            dim,
        }
    }

    pub fn n_bodies(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.point(i), self.point(j))
    }

    /// `(1 − s)·a + s·b`.
    pub fn lerp(a: &Self, b: &Self, s: f64) -> Self {
        debug_assert_eq!(a.coords.len(), b.coords.len());
        Self {
            coords: a
                .coords
                .iter()
                .zip(&b.coords)
                .map(|(p, q)| p + s * (q - p))
                .collect(),
            dim: a.dim,
        }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            coords: self.coords.iter().map(|c| lambda * c).collect(),
            dim: self.dim,
        }
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..out.n_bodies() {
            for (c, s) in out.point_mut(i).iter_mut().zip(shift) {
                *c += s;
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a - b)
                .collect(),
            dim: self.dim,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// `U(x) = Σ_{i<j} G m_i m_j / r_ij`, or `f64::INFINITY` at a collision.
pub fn potential(sys: &MassSystem, x: &Configuration) -> Result<f64> {
    sys.check(x)?;
    Ok(potential_unchecked(sys, x.as_slice()))
}

pub(crate) fn potential_unchecked(sys: &MassSystem, x: &[f64]) -> f64 {
    let d = sys.dim();
    let n = sys.n_bodies();
    let g = sys.grav_const();
    let m = sys.masses();
    let mut u = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = dist(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            if r == 0.0 {
                return f64::INFINITY;
            }
            u += g * m[i] * m[j] / r;
        }
    }
    u
}

/// Potential restricted to pairs `(i, j)` for which `keep(i, j)` holds.
pub(crate) fn potential_filtered(
    sys: &MassSystem,
    x: &[f64],
    keep: impl Fn(usize, usize) -> bool,
) -> f64 {
    let d = sys.dim();
    let n = sys.n_bodies();
    let g = sys.grav_const();
    let m = sys.masses();
    let mut u = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if !keep(i, j) {
                continue;
            }
            let r = dist(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            if r == 0.0 {
                return f64::INFINITY;
            }
            u += g * m[i] * m[j] / r;
        }
    }
    u
}

/// Adds `scale · ∇U(x)` to `out`.
pub(crate) fn add_potential_gradient(sys: &MassSystem, x: &[f64], scale: f64, out: &mut [f64]) {
    let d = sys.dim();
    let n = sys.n_bodies();
    let g = sys.grav_const();
    let m = sys.masses();
    let mut diff = vec![0.0; d];
    for i in 0..n {
        for j in i + 1..n {
            let mut r2 = 0.0;
            for k in 0..d {
                diff[k] = x[i * d + k] - x[j * d + k];
                r2 += diff[k] * diff[k];
            }
            let r = r2.sqrt();
            let c = scale * g * m[i] * m[j] / (r2 * r);
            for k in 0..d {
                out[i * d + k] -= c * diff[k];
                out[j * d + k] += c * diff[k];
            }
        }
    }
}

/// Adds `scale · ∇²U(x)` to the square matrix `out` (size `N·dim`).
pub(crate) fn add_potential_hessian(
    sys: &MassSystem,
    x: &[f64],
    scale: f64,
    out: &mut DMatrix<f64>,
) {
    let d = sys.dim();
    let n = sys.n_bodies();
    let g = sys.grav_const();
    let m = sys.masses();
    let mut diff = vec![0.0; d];
    for i in 0..n {
        for j in i + 1..n {
            let mut r2 = 0.0;
            for k in 0..d {
                diff[k] = x[i * d + k] - x[j * d + k];
                r2 += diff[k] * diff[k];
            }
            let r = r2.sqrt();
            let c = scale * g * m[i] * m[j];
            let r3 = r2 * r;
            let r5 = r3 * r2;
            for a in 0..d {
                for b in 0..d {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    let k = c * (3.0 * diff[a] * diff[b] / r5 - delta / r3);
                    out[(i * d + a, i * d + b)] += k;
                    out[(j * d + a, j * d + b)] += k;
                    out[(i * d + a, j * d + b)] -= k;
                    out[(j * d + a, i * d + b)] -= k;
                }
            }
        }
    }
}

/// Minimum mutual distance over all pairs (`INFINITY` for a single body).
pub(crate) fn min_pair_distance(n: usize, d: usize, x: &[f64]) -> f64 {
    let mut r = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            r = r.min(dist(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]));
        }
    }
    r
}

/// `(R, r)`: the largest and smallest mutual distances.
pub fn pairwise_extremes(x: &Configuration) -> Result<(f64, f64)> {
    let n = x.n_bodies();
    if n < 2 {
        return usage("pairwise extremes need at least two bodies");
    }
    let mut big: f64 = 0.0;
    let mut small = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let r = x.distance(i, j);
            big = big.max(r);
            small = small.min(r);
        }
    }
    Ok((big, small))
}

/// `true` when no two bodies coincide, i.e. `x ∈ Ω`.
pub fn in_omega(x: &Configuration) -> bool {
    x.n_bodies() < 2 || pairwise_extremes(x).map(|(_, r)| r > 0.0).unwrap_or(false)
}

/// Mass-weighted norm `√(Σ m_i |v_i|²)`.
pub fn mass_norm(sys: &MassSystem, v: &Configuration) -> Result<f64> {
    sys.check(v)?;
    Ok(mass_norm_unchecked(sys, v.as_slice()))
}

pub(crate) fn mass_norm_unchecked(sys: &MassSystem, v: &[f64]) -> f64 {
    mass_norm_sq(sys, v).sqrt()
}

pub(crate) fn mass_norm_sq(sys: &MassSystem, v: &[f64]) -> f64 {
    let d = sys.dim();
    sys.masses()
        .iter()
        .enumerate()
        .map(|(i, m)| m * v[i * d..(i + 1) * d].iter().map(|c| c * c).sum::<f64>())
        .sum()
}

/// A partition of the body indices `0..n` into nonempty disjoint blocks.
///
/// Blocks are kept in canonical order: each block sorted, blocks sorted by
/// their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterPartition {
    classes: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl ClusterPartition {
    pub fn new(n_bodies: usize, classes: Vec<Vec<usize>>) -> Result<Self> {
        let mut block_of = vec![usize::MAX; n_bodies];
        let mut classes: Vec<Vec<usize>> = classes
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c
            })
            .collect();
        if classes.iter().any(|c| c.is_empty()) {
            return Err(Error::InvalidPartition("empty block".into()));
        }
        classes.sort_by_key(|c| c[0]);
        for (k, c) in classes.iter().enumerate() {
            for &i in c {
                if i >= n_bodies {
                    return Err(Error::InvalidPartition(format!(
                        "body {i} out of range for {n_bodies} bodies"
                    )));
                }
                if block_of[i] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("body {i} appears twice")));
                }
                block_of[i] = k;
            }
        }
        if let Some(i) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::InvalidPartition(format!("body {i} is not covered")));
        }
        Ok(Self { classes, block_of })
    }

    pub fn singletons(n_bodies: usize) -> Self {
        Self::new(n_bodies, (0..n_bodies).map(|i| vec![i]).collect()).expect("valid")
    }

    pub fn single_block(n_bodies: usize) -> Self {
        Self::new(n_bodies, vec![(0..n_bodies).collect()]).expect("valid")
    }

    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn n_blocks(&self) -> usize {
        self.classes.len()
    }

    pub fn n_bodies(&self) -> usize {
        self.block_of.len()
    }

    pub fn block_of(&self, body: usize) -> usize {
        self.block_of[body]
    }

    pub fn same_block(&self, i: usize, j: usize) -> bool {
        self.block_of[i] == self.block_of[j]
    }

    /// Per-block total masses `M_A`.
    pub fn block_masses(&self, sys: &MassSystem) -> Vec<f64> {
        self.classes
            .iter()
            .map(|c| c.iter().map(|&i| sys.mass(i)).sum())
            .collect()
    }

    /// The mass system of the block centers (block-total masses).
    pub fn center_system(&self, sys: &MassSystem) -> MassSystem {
        MassSystem::new(self.block_masses(sys), sys.grav_const(), sys.dim())
            .expect("block masses are positive")
    }

    pub(crate) fn check(&self, sys: &MassSystem) -> Result<()> {
        if self.n_bodies() != sys.n_bodies() {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} bodies, system has {}",
                self.n_bodies(),
                sys.n_bodies()
            )));
        }
        Ok(())
    }
}

/// A configuration decomposed as cluster centers `y_A` plus relative
/// configurations `z_A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSplit {
    /// One center of mass per block; as a configuration it is the tuple `y`.
    pub centers: Configuration,
    /// Per block, the member coordinates minus the block center, in block order.
    pub relatives: Vec<Configuration>,
}

impl ClusterSplit {
    /// Reassembles the full configuration.
    pub fn reconstruct(&self, partition: &ClusterPartition) -> Configuration {
        let d = self.centers.dim();
        let mut x = Configuration::zeros(partition.n_bodies(), d);
        for (k, class) in partition.classes().iter().enumerate() {
            let y = self.centers.point(k);
            for (slot, &i) in class.iter().enumerate() {
                let z = self.relatives[k].point(slot);
                for (c, (a, b)) in x.point_mut(i).iter_mut().zip(y.iter().zip(z)) {
                    *c = a + b;
                }
            }
        }
        x
    }
}

/// Splits `x` into block centers of mass and block-relative configurations.
pub fn cluster_split(
    sys: &MassSystem,
    x: &Configuration,
    partition: &ClusterPartition,
) -> Result<ClusterSplit> {
    sys.check(x)?;
    partition.check(sys)?;
    Ok(split_unchecked(sys, x.as_slice(), partition))
}

pub(crate) fn split_unchecked(
    sys: &MassSystem,
    x: &[f64],
    partition: &ClusterPartition,
) -> ClusterSplit {
    let d = sys.dim();
    let mut centers = Vec::with_capacity(partition.n_blocks() * d);
    let mut relatives = Vec::with_capacity(partition.n_blocks());
    for class in partition.classes() {
        let total: f64 = class.iter().map(|&i| sys.mass(i)).sum();
        let mut y = vec![0.0; d];
        for &i in class {
            for k in 0..d {
                y[k] += sys.mass(i) * x[i * d + k];
            }
        }
        for c in &mut y {
            *c /= total;
        }
        let mut z = Vec::with_capacity(class.len() * d);
        for &i in class {
            for k in 0..d {
                z.push(x[i * d + k] - y[k]);
            }
        }
        centers.extend_from_slice(&y);
        relatives.push(Configuration { coords: z, dim: d });
    }
    ClusterSplit {
        centers: Configuration {
            coords: centers,
            dim: d,
        },
        relatives,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn potential_examples() {
        let sys = MassSystem::unit(2, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(potential(&sys, &x).unwrap(), 0.5);

        let sys3 = MassSystem::unit(3, 2).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let tri = Configuration::from_points(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap();
        assert!(close(potential(&sys3, &tri).unwrap(), 3.0, 1e-14));

        let coll = Configuration::from_points(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(potential(&sys, &coll).unwrap(), f64::INFINITY);
        assert!(!in_omega(&coll));
    }

    #[test]
    fn potential_rejects_shape_mismatch() {
        let sys = MassSystem::unit(3, 2).unwrap();
        let x = Configuration::from_points(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert!(matches!(
            potential(&sys, &x),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mass_system_validation() {
        assert!(MassSystem::new(vec![1.0], 1.0, 1).is_err());
        assert!(MassSystem::new(vec![1.0, -1.0], 1.0, 2).is_err());
        assert!(MassSystem::new(vec![1.0], 0.0, 2).is_err());
        assert!(MassSystem::new(vec![], 1.0, 2).is_err());
    }

    #[test]
    fn extremes_examples() {
        let x = Configuration::from_points(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(pairwise_extremes(&x).unwrap(), (3.0, 1.0));
        let two = Configuration::from_points(&[[0.0, 0.0], [0.0, 2.5]]).unwrap();
        assert_eq!(pairwise_extremes(&two).unwrap(), (2.5, 2.5));
        let sq =
            Configuration::from_points(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let (big, small) = pairwise_extremes(&sq).unwrap();
        assert!(close(big, 2f64.sqrt(), 1e-15));
        assert_eq!(small, 1.0);
        let one = Configuration::from_points(&[[0.0, 0.0]]).unwrap();
        assert!(pairwise_extremes(&one).is_err());
    }

    #[test]
    fn mass_norm_examples() {
        let sys = MassSystem::new(vec![2.0], 1.0, 2).unwrap();
        let v = Configuration::from_points(&[[3.0, 4.0]]).unwrap();
        assert!(close(mass_norm(&sys, &v).unwrap(), 50f64.sqrt(), 1e-15));
        assert_eq!(mass_norm(&sys, &Configuration::zeros(1, 2)).unwrap(), 0.0);

        // block centers with unit totals displaced by unit vectors
        let sys2 = MassSystem::new(vec![0.5, 0.5, 0.25, 0.75], 1.0, 2).unwrap();
        let p = ClusterPartition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let centers = p.center_system(&sys2);
        let dy = Configuration::from_points(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(close(mass_norm(&centers, &dy).unwrap(), 2f64.sqrt(), 1e-15));
    }

    #[test]
    fn split_examples() {
        let sys = MassSystem::unit(2, 2).unwrap();
        let x = Configuration::from_points(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let singles = ClusterPartition::singletons(2);
        let s = cluster_split(&sys, &x, &singles).unwrap();
        assert_eq!(s.centers.point(0), &[1.0, 0.0]);
        assert_eq!(s.centers.point(1), &[-1.0, 0.0]);
        assert!(s
            .relatives
            .iter()
            .all(|z| z.as_slice().iter().all(|c| *c == 0.0)));

        let whole = ClusterPartition::single_block(2);
        let s = cluster_split(&sys, &x, &whole).unwrap();
        assert_eq!(s.centers.point(0), &[0.0, 0.0]);
        assert_eq!(s.relatives[0], x);
        assert_eq!(s.reconstruct(&whole), x);
    }

    #[test]
    fn partition_validation() {
        assert!(ClusterPartition::new(3, vec![vec![0, 1]]).is_err());
        assert!(ClusterPartition::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(ClusterPartition::new(3, vec![vec![0, 1, 2], vec![]]).is_err());
        assert!(ClusterPartition::new(2, vec![vec![0, 1, 2]]).is_err());
        let p = ClusterPartition::new(4, vec![vec![3, 2], vec![1, 0]]).unwrap();
        assert_eq!(p.classes(), &[vec![0, 1], vec![2, 3]]);
        assert_eq!(p.block_of(3), 1);
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let sys = MassSystem::new(vec![1.0, 2.0, 0.5], 1.3, 2).unwrap();
        let x = vec![0.1, 0.2, 1.3, -0.4, -0.7, 0.9];
        let mut hess = DMatrix::zeros(6, 6);
        add_potential_hessian(&sys, &x, 1.0, &mut hess);
        let eps = 1e-6;
        for c in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += eps;
            xm[c] -= eps;
            let mut gp = vec![0.0; 6];
            let mut gm = vec![0.0; 6];
            add_potential_gradient(&sys, &xp, 1.0, &mut gp);
            add_potential_gradient(&sys, &xm, 1.0, &mut gm);
            for r in 0..6 {
                let fd = (gp[r] - gm[r]) / (2.0 * eps);
                assert!((fd - hess[(r, c)]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
        // gradient against potential differences
        let mut g = vec![0.0; 6];
        add_potential_gradient(&sys, &x, 1.0, &mut g);
        for c in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += eps;
            xm[c] -= eps;
            let fd =
                (potential_unchecked(&sys, &xp) - potential_unchecked(&sys, &xm)) / (2.0 * eps);
            assert!((fd - g[c]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }
}
