//! Real orthonormal spherical harmonics.
//!
//! Convention: for degree `n` and order `-n <= m <= n`
//!
//! ```text
//! Y(n, 0)  = p(n, 0)(cos t)
//! Y(n, m)  = sqrt(2) p(n, m)(cos t) cos(m f)     m > 0
//! Y(n, -m) = sqrt(2) p(n, m)(cos t) sin(m f)     m > 0
//! p(n, m)  = sqrt((2n+1)/(4 pi) (n-m)!/(n+m)!) P(n, m)
//! ```
//!
//! where `P(n, m)` is the associated Legendre function *without* the
//! Condon-Shortley phase, so every `Y(n, m)` is orthonormal in `L2(S)` and
//! `Y(0, 0) = 1 / sqrt(4 pi)`. Coefficients are stored n-major with `m`
//! running from `-n` to `n`: index `n^2 + n + m`.
//!
//! Tangent fields use the normalized bases `grad_S Y / sqrt(n(n+1))` and
//! `(x cross grad_S) Y / sqrt(n(n+1))` for `n >= 1`.

use std::ops::{Add, Mul, Neg, Sub};

use crate::grid::SphereGrid;
use crate::{Error, Result};

/// Position of `(n, m)` in the n-major coefficient layout.
#[inline]
pub fn coeff_index(n: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= n);
    ((n * n + n) as i64 + m) as usize
}

/// Number of coefficients up to degree `nmax`.
#[inline]
pub fn coeff_len(nmax: usize) -> usize {
    (nmax + 1) * (nmax + 1)
}

/// Inverse of [`coeff_index`].
pub fn degree_order(index: usize) -> (usize, i64) {
    let n = (index as f64).sqrt() as usize;
    let n = if (n + 1) * (n + 1) <= index { n + 1 } else { n };
    (n, index as i64 - (n * n + n) as i64)
}

/// Scalar field on the sphere as real orthonormal harmonic coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCoeffs {
    nmax: usize,
    values: Vec<f64>,
}

impl ScalarCoeffs {
    pub fn zeros(nmax: usize) -> Self {
        Self {
            nmax,
            values: vec![0.0; coeff_len(nmax)],
        }
    }

    pub fn from_values(nmax: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != coeff_len(nmax) {
            return Err(Error::InvalidArgument(format!(
                "degree {nmax} needs {} coefficients, got {}",
                coeff_len(nmax),
                values.len()
            )));
        }
        Ok(Self { nmax, values })
    }

    /// Single harmonic `Y(n, m)` with unit coefficient.
    pub fn unit(nmax: usize, n: usize, m: i64) -> Self {
        let mut c = Self::zeros(nmax);
        c.set(n, m, 1.0);
        c
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, n: usize, m: i64) -> f64 {
        self.values[coeff_index(n, m)]
    }

    pub fn set(&mut self, n: usize, m: i64, v: f64) {
        self.values[coeff_index(n, m)] = v;
    }

    /// Coefficient of `Y(0, 0)`; the mean value is this times `1/sqrt(4 pi)`.
    pub fn mean_coefficient(&self) -> f64 {
        self.values[0]
    }

    pub fn is_zero_mean(&self) -> bool {
        self.values[0].abs() <= 1e-14
    }

    /// Copy with the constant channel removed.
    pub fn without_mean(&self) -> Self {
        let mut c = self.clone();
        c.values[0] = 0.0;
        c
    }

    /// `L2(S)` norm (Parseval).
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `L2(S)` inner product; degrees must match.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.nmax, other.nmax, "degree mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// Truncate or zero-pad to a new degree.
    pub fn resized(&self, nmax: usize) -> Self {
        let mut values = vec![0.0; coeff_len(nmax)];
        let keep = values.len().min(self.values.len());
        values[..keep].copy_from_slice(&self.values[..keep]);
        Self { nmax, values }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.nmax, other.nmax, "degree mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Add for &ScalarCoeffs {
    type Output = ScalarCoeffs;
    fn add(self, rhs: Self) -> ScalarCoeffs {
        assert_eq!(self.nmax, rhs.nmax, "degree mismatch");
        ScalarCoeffs {
            nmax: self.nmax,
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ScalarCoeffs {
    type Output = ScalarCoeffs;
    fn sub(self, rhs: Self) -> ScalarCoeffs {
        assert_eq!(self.nmax, rhs.nmax, "degree mismatch");
        ScalarCoeffs {
            nmax: self.nmax,
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &ScalarCoeffs {
    type Output = ScalarCoeffs;
    fn neg(self) -> ScalarCoeffs {
        ScalarCoeffs {
            nmax: self.nmax,
            values: self.values.iter().map(|a| -a).collect(),
        }
    }
}

impl Mul<f64> for &ScalarCoeffs {
    type Output = ScalarCoeffs;
    fn mul(self, s: f64) -> ScalarCoeffs {
        ScalarCoeffs {
            nmax: self.nmax,
            values: self.values.iter().map(|a| a * s).collect(),
        }
    }
}

/// Tangent field coefficients against the normalized gradient and curl bases.
///
/// Entries exist for `n >= 1` only; storage reuses the n-major layout shifted
/// by one (index `n^2 + n + m - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasisCoeffs {
    nmax: usize,
    grad: Vec<f64>,
    curl: Vec<f64>,
}

impl TangentBasisCoeffs {
    pub fn zeros(nmax: usize) -> Self {
        let len = coeff_len(nmax) - 1;
        Self {
            nmax,
            grad: vec![0.0; len],
            curl: vec![0.0; len],
        }
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn grad(&self, n: usize, m: i64) -> f64 {
        assert!(n >= 1, "tangent bases start at degree 1");
        self.grad[coeff_index(n, m) - 1]
    }

    pub fn curl(&self, n: usize, m: i64) -> f64 {
        assert!(n >= 1, "tangent bases start at degree 1");
        self.curl[coeff_index(n, m) - 1]
    }

    pub fn set_grad(&mut self, n: usize, m: i64, v: f64) {
        assert!(n >= 1, "tangent bases start at degree 1");
        self.grad[coeff_index(n, m) - 1] = v;
    }

    pub fn set_curl(&mut self, n: usize, m: i64, v: f64) {
        assert!(n >= 1, "tangent bases start at degree 1");
        self.curl[coeff_index(n, m) - 1] = v;
    }

    pub fn grad_values(&self) -> &[f64] {
        &self.grad
    }

    pub fn curl_values(&self) -> &[f64] {
        &self.curl
    }

    /// Squared `L2(S, R^3)` norm; the two bases are jointly orthonormal.
    pub fn norm_squared(&self) -> f64 {
        self.grad.iter().chain(&self.curl).map(|v| v * v).sum()
    }
}

/// `grad_S f` in the normalized basis: `grad(n, m) = sqrt(n(n+1)) f(n, m)`.
pub fn surface_gradient_coeffs(f: &ScalarCoeffs) -> TangentBasisCoeffs {
    let mut out = TangentBasisCoeffs::zeros(f.nmax());
    for n in 1..=f.nmax() {
        let s = ((n * (n + 1)) as f64).sqrt();
        for m in -(n as i64)..=n as i64 {
            out.set_grad(n, m, s * f.get(n, m));
        }
    }
    out
}

#[inline]
fn tri(n: usize, m: usize) -> usize {
    n * (n + 1) / 2 + m
}

/// Normalized associated Legendre values at one colatitude, with the
/// colatitude derivative and `m p(n, m) / sin(theta)`, all pole-safe.
#[derive(Debug, Clone)]
pub struct LegendreTable {
    nmax: usize,
    p: Vec<f64>,
    dp: Vec<f64>,
    msin: Vec<f64>,
}

impl LegendreTable {
    pub fn new(nmax: usize, theta: f64) -> Self {
        let (s, x) = theta.sin_cos();
        let s = s.abs();
        // one extra degree feeds the m/sin(theta) identity
        let top = nmax + 1;
        let mut p = vec![0.0; tri(top, top) + 1];
        p[0] = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
        for m in 0..=top {
            if m > 0 {
                let mf = m as f64;
                p[tri(m, m)] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[tri(m - 1, m - 1)];
            }
            if m < top {
                p[tri(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[tri(m, m)];
            }
            for n in m + 2..=top {
                let (nf, mf) = (n as f64, m as f64);
                let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
                let b = (((nf - 1.0) * (nf - 1.0) - mf * mf) / (4.0 * (nf - 1.0) * (nf - 1.0) - 1.0))
                    .sqrt();
                p[tri(n, m)] = a * (x * p[tri(n - 1, m)] - b * p[tri(n - 2, m)]);
            }
        }
        let mut dp = vec![0.0; tri(nmax, nmax) + 1];
        let mut msin = vec![0.0; tri(nmax, nmax) + 1];
        for n in 0..=nmax {
            let nf = n as f64;
            for m in 0..=n {
                let mf = m as f64;
                let up = if m < n { p[tri(n, m + 1)] } else { 0.0 };
                dp[tri(n, m)] = if m == 0 {
                    -(nf * (nf + 1.0)).sqrt() * up
                } else {
                    0.5 * (((nf + mf) * (nf - mf + 1.0)).sqrt() * p[tri(n, m - 1)]
                        - ((nf - mf) * (nf + mf + 1.0)).sqrt() * up)
                };
                if m > 0 {
                    let scale = 0.5 * ((2.0 * nf + 1.0) / (2.0 * nf + 3.0)).sqrt();
                    msin[tri(n, m)] = scale
                        * (((nf + mf + 1.0) * (nf + mf + 2.0)).sqrt() * p[tri(n + 1, m + 1)]
                            + ((nf - mf + 1.0) * (nf - mf + 2.0)).sqrt() * p[tri(n + 1, m - 1)]);
                }
            }
        }
        p.truncate(tri(nmax, nmax) + 1);
        Self { nmax, p, dp, msin }
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    /// `p(n, m)` for `0 <= m <= n`.
    pub fn value(&self, n: usize, m: usize) -> f64 {
        self.p[tri(n, m)]
    }

    /// `d p(n, m) / d theta`.
    pub fn dtheta(&self, n: usize, m: usize) -> f64 {
        self.dp[tri(n, m)]
    }

    /// `m p(n, m) / sin(theta)`, finite at the poles.
    pub fn m_over_sin(&self, n: usize, m: usize) -> f64 {
        self.msin[tri(n, m)]
    }
}

/// Azimuthal factor of `Y(n, m)` and its `phi` derivative divided by `m`.
#[inline]
fn azimuthal(m: i64, phi: f64) -> (f64, f64) {
    const SQRT2: f64 = std::f64::consts::SQRT_2;
    match m {
        0 => (1.0, 0.0),
        m if m > 0 => {
            let (s, c) = (m as f64 * phi).sin_cos();
            (SQRT2 * c, -SQRT2 * s)
        }
        m => {
            let (s, c) = (-m as f64 * phi).sin_cos();
            (SQRT2 * s, SQRT2 * c)
        }
    }
}

/// Values of every `Y(n, m)` up to `nmax` at one point, n-major.
pub fn evaluate_all(nmax: usize, theta: f64, phi: f64) -> Vec<f64> {
    let table = LegendreTable::new(nmax, theta);
    let mut out = vec![0.0; coeff_len(nmax)];
    for n in 0..=nmax {
        for m in -(n as i64)..=n as i64 {
            out[coeff_index(n, m)] = table.value(n, m.unsigned_abs() as usize) * azimuthal(m, phi).0;
        }
    }
    out
}

pub fn evaluate(coeffs: &ScalarCoeffs, theta: f64, phi: f64) -> f64 {
    evaluate_all(coeffs.nmax(), theta, phi)
        .iter()
        .zip(coeffs.values())
        .map(|(y, c)| y * c)
        .sum()
}

/// Components `(theta-hat, phi-hat)` of `grad_S Y(n, m)` (unnormalized)
/// for every `(n, m)` up to `nmax`, n-major. Entry `(0, 0)` is zero.
pub fn surface_gradients_all(nmax: usize, theta: f64, phi: f64) -> Vec<(f64, f64)> {
    let table = LegendreTable::new(nmax, theta);
    let mut out = vec![(0.0, 0.0); coeff_len(nmax)];
    for n in 1..=nmax {
        for m in -(n as i64)..=n as i64 {
            let am = m.unsigned_abs() as usize;
            let (a, da) = azimuthal(m, phi);
            out[coeff_index(n, m)] = (table.dtheta(n, am) * a, table.m_over_sin(n, am) * da);
        }
    }
    out
}

/// Local orthonormal frame `(r-hat, theta-hat, phi-hat)` in Cartesian form.
pub fn local_frame(theta: f64, phi: f64) -> [[f64; 3]; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [
        [st * cp, st * sp, ct],
        [ct * cp, ct * sp, -st],
        [-sp, cp, 0.0],
    ]
}

/// Cached basis values on a grid: one Legendre table per ring and the
/// azimuthal factors per longitude.
struct GridBasis {
    tables: Vec<LegendreTable>,
    azim: Vec<Vec<(f64, f64)>>,
}

impl GridBasis {
    fn new(grid: &SphereGrid, nmax: usize) -> Self {
        let tables = grid.thetas().iter().map(|t| LegendreTable::new(nmax, *t)).collect();
        let azim = grid
            .phis()
            .map(|phi| {
                (-(nmax as i64)..=nmax as i64)
                    .map(|m| azimuthal(m, phi))
                    .collect()
            })
            .collect();
        Self { tables, azim }
    }

    #[inline]
    fn az(&self, j: usize, nmax: usize, m: i64) -> (f64, f64) {
        self.azim[j][(m + nmax as i64) as usize]
    }
}

fn check_exactness(grid: &SphereGrid, needed: usize, what: &str) -> Result<()> {
    if grid.exactness_degree() < needed {
        return Err(Error::PreconditionViolation(format!(
            "{what} needs quadrature exact to degree {needed}, grid ({}, {}) reaches {}",
            grid.n_theta(),
            grid.n_phi(),
            grid.exactness_degree()
        )));
    }
    Ok(())
}

/// Quadrature projection `<f, Y(n, m)>` for all `n <= nmax`.
pub fn sh_analyze(samples: &[f64], grid: &SphereGrid, nmax: usize) -> Result<ScalarCoeffs> {
    check_exactness(grid, 2 * nmax, "scalar analysis")?;
    sh_project(samples, grid, nmax)
}

/// Quadrature projection without the exactness check; used for fields that
/// are not bandlimited, where the caller accepts aliasing.
pub fn sh_project(samples: &[f64], grid: &SphereGrid, nmax: usize) -> Result<ScalarCoeffs> {
    if samples.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples for a grid of {} nodes",
            samples.len(),
            grid.len()
        )));
    }
    let basis = GridBasis::new(grid, nmax);
    let n_phi = grid.n_phi();
    let mut out = ScalarCoeffs::zeros(nmax);
    for (i, table) in basis.tables.iter().enumerate() {
        let w_ring = grid.nodes()[i * n_phi].weight;
        // Fourier sums along the ring
        let mut fourier = vec![0.0; 2 * nmax + 1];
        for (j, f) in samples[i * n_phi..(i + 1) * n_phi].iter().enumerate() {
            for m in -(nmax as i64)..=nmax as i64 {
                fourier[(m + nmax as i64) as usize] += f * basis.az(j, nmax, m).0;
            }
        }
        for n in 0..=nmax {
            for m in -(n as i64)..=n as i64 {
                out.values[coeff_index(n, m)] += w_ring
                    * table.value(n, m.unsigned_abs() as usize)
                    * fourier[(m + nmax as i64) as usize];
            }
        }
    }
    Ok(out)
}

/// Pointwise sum `sum c(n, m) Y(n, m)` at every grid node.
pub fn sh_synthesize(coeffs: &ScalarCoeffs, grid: &SphereGrid) -> Vec<f64> {
    let nmax = coeffs.nmax();
    let basis = GridBasis::new(grid, nmax);
    let n_phi = grid.n_phi();
    let mut out = vec![0.0; grid.len()];
    for (i, table) in basis.tables.iter().enumerate() {
        let mut ring = vec![0.0; 2 * nmax + 1];
        for n in 0..=nmax {
            for m in -(n as i64)..=n as i64 {
                ring[(m + nmax as i64) as usize] +=
                    coeffs.get(n, m) * table.value(n, m.unsigned_abs() as usize);
            }
        }
        for j in 0..n_phi {
            out[i * n_phi + j] = (-(nmax as i64)..=nmax as i64)
                .map(|m| ring[(m + nmax as i64) as usize] * basis.az(j, nmax, m).0)
                .sum();
        }
    }
    out
}

/// Cartesian samples of the tangent field described by `t`.
pub fn tangent_synthesize(t: &TangentBasisCoeffs, grid: &SphereGrid) -> Vec<[f64; 3]> {
    let nmax = t.nmax();
    let basis = GridBasis::new(grid, nmax);
    let n_phi = grid.n_phi();
    let mut out = vec![[0.0; 3]; grid.len()];
    for (i, table) in basis.tables.iter().enumerate() {
        for j in 0..n_phi {
            let node = &grid.nodes()[i * n_phi + j];
            let (mut vt, mut vp) = (0.0, 0.0);
            for n in 1..=nmax {
                let norm = 1.0 / ((n * (n + 1)) as f64).sqrt();
                for m in -(n as i64)..=n as i64 {
                    let am = m.unsigned_abs() as usize;
                    let (a, da) = basis.az(j, nmax, m);
                    let gt = table.dtheta(n, am) * a * norm;
                    let gp = table.m_over_sin(n, am) * da * norm;
                    let (g, c) = (t.grad(n, m), t.curl(n, m));
                    // curl basis = (-g_phi, g_theta)
                    vt += g * gt - c * gp;
                    vp += g * gp + c * gt;
                }
            }
            let f = local_frame(node.theta, node.phi);
            out[i * n_phi + j] = [
                vt * f[1][0] + vp * f[2][0],
                vt * f[1][1] + vp * f[2][1],
                vt * f[1][2] + vp * f[2][2],
            ];
        }
    }
    out
}

/// Quadrature projection of Cartesian samples onto the tangent bases.
pub fn tangent_analyze(
    samples: &[[f64; 3]],
    grid: &SphereGrid,
    nmax: usize,
) -> Result<TangentBasisCoeffs> {
    check_exactness(grid, 2 * nmax + 2, "tangent analysis")?;
    if samples.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples for a grid of {} nodes",
            samples.len(),
            grid.len()
        )));
    }
    let basis = GridBasis::new(grid, nmax);
    let n_phi = grid.n_phi();
    let mut out = TangentBasisCoeffs::zeros(nmax);
    for (i, table) in basis.tables.iter().enumerate() {
        for j in 0..n_phi {
            let node = &grid.nodes()[i * n_phi + j];
            let f = local_frame(node.theta, node.phi);
            let v = samples[i * n_phi + j];
            let vt = v[0] * f[1][0] + v[1] * f[1][1] + v[2] * f[1][2];
            let vp = v[0] * f[2][0] + v[1] * f[2][1] + v[2] * f[2][2];
            for n in 1..=nmax {
                let norm = node.weight / ((n * (n + 1)) as f64).sqrt();
                for m in -(n as i64)..=n as i64 {
                    let am = m.unsigned_abs() as usize;
                    let (a, da) = basis.az(j, nmax, m);
                    let gt = table.dtheta(n, am) * a;
                    let gp = table.m_over_sin(n, am) * da;
                    let k = coeff_index(n, m) - 1;
                    out.grad[k] += norm * (vt * gt + vp * gp);
                    out.curl[k] += norm * (vp * gt - vt * gp);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_coeffs(nmax: usize, seed: u64) -> ScalarCoeffs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarCoeffs::from_values(nmax, (0..coeff_len(nmax)).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn index_layout_roundtrips() {
        for idx in 0..coeff_len(12) {
            let (n, m) = degree_order(idx);
            assert_eq!(coeff_index(n, m), idx);
        }
        assert_eq!(coeff_index(3, -3), 9);
        assert_eq!(coeff_index(3, 3), 15);
    }

    #[test]
    fn low_degree_closed_forms() {
        // independent closed forms of the first few harmonics
        let (t, f) = (0.7, 1.9);
        let y = evaluate_all(2, t, f);
        let c0 = 1.0 / (4.0 * PI).sqrt();
        assert_relative_eq!(y[0], c0, max_relative = 1e-15);
        assert_relative_eq!(y[coeff_index(1, 0)], (3.0 / (4.0 * PI)).sqrt() * t.cos(), max_relative = 1e-14);
        assert_relative_eq!(
            y[coeff_index(1, 1)],
            (3.0 / (4.0 * PI)).sqrt() * t.sin() * f.cos(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            y[coeff_index(2, -2)],
            0.25 * (15.0 / PI).sqrt() * t.sin().powi(2) * (2.0 * f).sin(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn derivative_and_sine_ratio_match_direct_forms() {
        let theta = 1.234;
        let h = 1e-6;
        let t = LegendreTable::new(10, theta);
        let tp = LegendreTable::new(10, theta + h);
        let tm = LegendreTable::new(10, theta - h);
        for n in 0..=10 {
            for m in 0..=n {
                let fd = (tp.value(n, m) - tm.value(n, m)) / (2.0 * h);
                assert!((t.dtheta(n, m) - fd).abs() < 1e-7, "d/dtheta ({n},{m})");
                let direct = m as f64 * t.value(n, m) / theta.sin();
                assert!((t.m_over_sin(n, m) - direct).abs() < 1e-12, "m/sin ({n},{m})");
            }
        }
    }

    #[test]
    fn pole_values_are_finite() {
        let t = LegendreTable::new(6, 0.0);
        // m/sin limit of Y(1, 1): sqrt(3/(8 pi)) * sqrt(2) * 1
        assert_relative_eq!(t.m_over_sin(1, 1), (3.0 / (8.0 * PI)).sqrt(), max_relative = 1e-14);
        assert_eq!(t.value(3, 2), 0.0);
        assert!(t.dtheta(4, 1).is_finite());
    }

    #[test]
    fn gram_matrix_is_identity_under_exact_quadrature() {
        let nmax = 8;
        let grid = SphereGrid::for_degree(nmax);
        let ys: Vec<Vec<f64>> = (0..coeff_len(nmax))
            .map(|k| {
                let (n, m) = degree_order(k);
                sh_synthesize(&ScalarCoeffs::unit(nmax, n, m), &grid)
            })
            .collect();
        for i in 0..ys.len() {
            for j in 0..=i {
                let prod: Vec<f64> = ys[i].iter().zip(&ys[j]).map(|(a, b)| a * b).collect();
                let g = grid.integrate(&prod);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-12, "gram ({i},{j}) = {g}");
            }
        }
    }

    #[test]
    fn y32_squared_integrates_to_one() {
        let grid = SphereGrid::new(17, 33).unwrap();
        let y = sh_synthesize(&ScalarCoeffs::unit(3, 3, 2), &grid);
        let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
        assert_relative_eq!(grid.integrate(&sq), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn constant_field_analysis() {
        let grid = SphereGrid::for_degree(6);
        let c = sh_analyze(&vec![1.0; grid.len()], &grid, 6).unwrap();
        assert_relative_eq!(c.get(0, 0), (4.0 * PI).sqrt(), max_relative = 1e-13);
        assert!(c.values()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_harmonic_analysis() {
        let grid = SphereGrid::for_degree(5);
        let samples: Vec<f64> = grid.nodes().iter().map(|n| evaluate(&ScalarCoeffs::unit(3, 3, 2), n.theta, n.phi)).collect();
        let c = sh_analyze(&samples, &grid, 5).unwrap();
        for (k, v) in c.values().iter().enumerate() {
            let expect = if k == coeff_index(3, 2) { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesis_analysis_roundtrip_at_degree_16() {
        let c = random_coeffs(16, 3);
        let grid = SphereGrid::for_degree(16);
        let back = sh_analyze(&sh_synthesize(&c, &grid), &grid, 16).unwrap();
        assert!(back.max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn synthesis_of_zero_and_constant() {
        let grid = SphereGrid::for_degree(4);
        assert!(sh_synthesize(&ScalarCoeffs::zeros(4), &grid).iter().all(|v| *v == 0.0));
        let mut c = ScalarCoeffs::zeros(4);
        c.set(0, 0, (4.0 * PI).sqrt());
        assert!(sh_synthesize(&c, &grid).iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let grid = SphereGrid::new(4, 8).unwrap();
        let err = sh_analyze(&vec![0.0; grid.len()], &grid, 6).unwrap_err();
        assert!(matches!(err, Error::PreconditionViolation(_)));
    }

    #[test]
    fn parseval_by_quadrature() {
        let c = random_coeffs(10, 11);
        let grid = SphereGrid::for_degree(10);
        let sq: Vec<f64> = sh_synthesize(&c, &grid).iter().map(|v| v * v).collect();
        assert_relative_eq!(grid.integrate(&sq), c.norm().powi(2), max_relative = 1e-12);
    }

    #[test]
    fn gradient_of_y10() {
        let g = surface_gradient_coeffs(&ScalarCoeffs::unit(3, 1, 0));
        assert_relative_eq!(g.grad(1, 0), 2f64.sqrt(), max_relative = 1e-15);
        assert_eq!(g.curl_values().iter().filter(|v| **v != 0.0).count(), 0);
        let mut k = ScalarCoeffs::zeros(3);
        k.set(0, 0, 2.0);
        assert_eq!(surface_gradient_coeffs(&k).norm_squared(), 0.0);
    }

    #[test]
    fn gradient_norm_matches_quadrature() {
        // ||grad_S f||^2 = sum n(n+1) f^2, checked by sampling the field
        let f = random_coeffs(8, 5);
        let grid = SphereGrid::for_vector_degree(8);
        let v = tangent_synthesize(&surface_gradient_coeffs(&f), &grid);
        let quad = grid.inner_vector(&v, &v);
        let spectral: f64 = (0..coeff_len(8))
            .map(|k| {
                let (n, _) = degree_order(k);
                (n * (n + 1)) as f64 * f.values()[k].powi(2)
            })
            .sum();
        assert_relative_eq!(quad, spectral, max_relative = 1e-12);
    }

    #[test]
    fn gradient_samples_match_finite_differences() {
        // independent check of the tangent basis geometry
        let f = random_coeffs(5, 8);
        let grid = SphereGrid::for_vector_degree(5);
        let v = tangent_synthesize(&surface_gradient_coeffs(&f), &grid);
        let h = 1e-6;
        for (node, vec) in grid.nodes().iter().zip(&v).step_by(7) {
            let fr = local_frame(node.theta, node.phi);
            let dth = (evaluate(&f, node.theta + h, node.phi) - evaluate(&f, node.theta - h, node.phi)) / (2.0 * h);
            let dph = (evaluate(&f, node.theta, node.phi + h) - evaluate(&f, node.theta, node.phi - h)) / (2.0 * h)
                / node.theta.sin();
            for k in 0..3 {
                let expect = dth * fr[1][k] + dph * fr[2][k];
                assert!((vec[k] - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn tangent_bases_are_orthonormal() {
        let nmax = 6;
        let grid = SphereGrid::for_vector_degree(nmax);
        let mut fields = Vec::new();
        for k in 1..coeff_len(nmax) {
            let (n, m) = degree_order(k);
            let mut g = TangentBasisCoeffs::zeros(nmax);
            g.set_grad(n, m, 1.0);
            fields.push(tangent_synthesize(&g, &grid));
            let mut c = TangentBasisCoeffs::zeros(nmax);
            c.set_curl(n, m, 1.0);
            fields.push(tangent_synthesize(&c, &grid));
        }
        for i in 0..fields.len() {
            for j in 0..=i {
                let ip = grid.inner_vector(&fields[i], &fields[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-12, "({i},{j}) {ip}");
            }
        }
    }

    #[test]
    fn tangent_roundtrip() {
        let nmax = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = TangentBasisCoeffs::zeros(nmax);
        for k in 1..coeff_len(nmax) {
            let (n, m) = degree_order(k);
            t.set_grad(n, m, rng.random_range(-1.0..1.0));
            t.set_curl(n, m, rng.random_range(-1.0..1.0));
        }
        let grid = SphereGrid::for_vector_degree(nmax);
        let back = tangent_analyze(&tangent_synthesize(&t, &grid), &grid, nmax).unwrap();
        for (a, b) in back.grad_values().iter().zip(t.grad_values()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in back.curl_values().iter().zip(t.curl_values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
