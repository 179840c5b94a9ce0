//! Quadrature grids on the unit sphere and axis-aligned spherical caps.

use std::f64::consts::PI;

use crate::{Error, Result};

/// Gauss-Legendre nodes and weights on `[a, b]`, nodes ascending.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let xm = 0.5 * (b + a);
    let xl = 0.5 * (b - a);
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp;
        let mut iter = 0;
        loop {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            iter += 1;
            if (z - z1).abs() <= 1e-15 || iter > 100 {
                break;
            }
        }
        x[i] = xm - xl * z;
        x[n - 1 - i] = xm + xl * z;
        w[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        // the middle node of an odd rule sits exactly at the midpoint
        x[n / 2] = xm;
    }
    (x, w)
}

/// One quadrature node; angles in radians, weight in steradians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    pub theta: f64,
    pub phi: f64,
    pub weight: f64,
}

impl GridNode {
    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

/// Product grid: Gauss-Legendre in `cos(theta)` times uniform `phi`.
///
/// Nodes are stored theta-major with theta ascending, then phi ascending.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    n_theta: usize,
    n_phi: usize,
    thetas: Vec<f64>,
    theta_weights: Vec<f64>,
    nodes: Vec<GridNode>,
}

impl SphereGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid sizes must be positive, got n_theta={n_theta}, n_phi={n_phi}"
            )));
        }
        let (x, w) = gauss_legendre(n_theta, -1.0, 1.0);
        // descending cos(theta) = ascending theta
        let thetas: Vec<f64> = x.iter().rev().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
        let theta_weights: Vec<f64> = w.iter().rev().copied().collect();
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        for (t, wt) in thetas.iter().zip(&theta_weights) {
            for j in 0..n_phi {
                nodes.push(GridNode {
                    theta: *t,
                    phi: j as f64 * dphi,
                    weight: wt * dphi,
                });
            }
        }
        Ok(Self {
            n_theta,
            n_phi,
            thetas,
            theta_weights,
            nodes,
        })
    }

    /// Default grid for scalar work up to degree `nmax`: `(nmax+2, 2 nmax+2)`.
    pub fn for_degree(nmax: usize) -> Self {
        Self::new(nmax + 2, 2 * nmax + 2).expect("positive sizes")
    }

    /// Grid that integrates products of degree-`nmax` vector fields exactly.
    ///
    /// Cartesian components of tangent basis fields of degree `n` are
    /// polynomials of degree `n + 1`, so inner products need exactness `2 nmax + 2`.
    pub fn for_vector_degree(nmax: usize) -> Self {
        Self::new(nmax + 2, 2 * nmax + 4).expect("positive sizes")
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GridNode] {
        &self.nodes
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Gauss-Legendre weights attached to each theta ring (in `cos theta`).
    pub fn theta_weights(&self) -> &[f64] {
        &self.theta_weights
    }

    pub fn phis(&self) -> impl Iterator<Item = f64> + '_ {
        let dphi = 2.0 * PI / self.n_phi as f64;
        (0..self.n_phi).map(move |j| j as f64 * dphi)
    }

    /// Highest polynomial degree (in Cartesian coordinates) integrated exactly.
    pub fn exactness_degree(&self) -> usize {
        (2 * self.n_theta - 1).min(self.n_phi - 1)
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.nodes.len(), "sample count mismatch");
        self.nodes.iter().zip(values).map(|(n, v)| n.weight * v).sum()
    }

    /// Quadrature inner product of two sampled vector fields.
    pub fn inner_vector(&self, a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        assert_eq!(a.len(), self.nodes.len());
        assert_eq!(b.len(), self.nodes.len());
        self.nodes
            .iter()
            .zip(a.iter().zip(b))
            .map(|(n, (u, v))| n.weight * (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]))
            .sum()
    }

    /// Rebuild the grid that produced the given `(theta, phi)` sample
    /// locations, verifying the layout matches to `1e-12`.
    pub fn from_sample_angles(angles: &[(f64, f64)]) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        let first_theta = angles[0].0;
        let n_phi = angles
            .iter()
            .take_while(|(t, _)| (t - first_theta).abs() < 1e-12)
            .count();
        if angles.len() % n_phi != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} samples are not a multiple of {n_phi} longitudes",
                angles.len()
            )));
        }
        let grid = Self::new(angles.len() / n_phi, n_phi)?;
        for (node, (t, p)) in grid.nodes.iter().zip(angles) {
            if (node.theta - t).abs() > 1e-12 || (node.phi - p).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "sample at ({t}, {p}) does not match the product grid node ({}, {})",
                    node.theta, node.phi
                )));
            }
        }
        Ok(grid)
    }
}

/// Spherical cap `{theta < theta_c}` around the north pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cap {
    theta_c: f64,
}

impl Cap {
    pub fn new(theta_c: f64) -> Result<Self> {
        if !(theta_c > 0.0 && theta_c < PI) {
            return Err(Error::InvalidArgument(format!(
                "cap radius must lie in (0, pi), got {theta_c}"
            )));
        }
        Ok(Self { theta_c })
    }

    pub fn theta_c(&self) -> f64 {
        self.theta_c
    }

    /// Surface area `2 pi (1 - cos theta_c)`.
    pub fn area(&self) -> f64 {
        2.0 * PI * (1.0 - self.theta_c.cos())
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta < self.theta_c
    }
}

/// Per-node indicator of the cap: 1 inside, 0 outside.
pub fn cap_mask(grid: &SphereGrid, cap: &Cap) -> Vec<u8> {
    grid.nodes()
        .iter()
        .map(|n| u8::from(cap.contains(n.theta)))
        .collect()
}
