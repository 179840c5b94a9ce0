//! Layer potentials on the unit sphere.
//!
//! The single layer potential
//!
//! ```text
//! S f(x) = -1/(4 pi) * integral f(y) / |x - y| dw(y)
//! ```
//!
//! and the double layer `K` are diagonal in spherical harmonics. The
//! per-degree multipliers are produced by [`derive_multipliers`], which
//! evaluates the kernel integral of `Y(n, 0)` off the sphere, fits the radial
//! power law on each side and reads off the value and the normal derivatives
//! on the sphere. The fitted numbers are compared with the rational
//! expressions kept in [`LayerMultipliers::closed_form`]; any disagreement
//! beyond `1e-6` relative is an error.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::grid::SphereGrid;
use crate::harmonics::{evaluate_all, sh_synthesize, ScalarCoeffs};
use crate::linalg::DenseOperator;
use crate::{Error, Result};

/// Relative tolerance between the kernel oracle and the stored multipliers.
pub const ORACLE_TOLERANCE: f64 = 1e-6;

/// A diagonal operator given by one real value per degree.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMultiplier {
    pub name: String,
    pub lambda: Vec<f64>,
}

impl SpectralMultiplier {
    pub fn new(name: impl Into<String>, lambda: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            lambda,
        }
    }

    pub fn nmax(&self) -> usize {
        self.lambda.len() - 1
    }

    pub fn at(&self, n: usize) -> f64 {
        self.lambda[n]
    }

    /// Dense diagonal matrix on coefficients up to degree `nmax`.
    pub fn dense(&self, nmax: usize) -> DenseOperator {
        let mut d = Vec::with_capacity((nmax + 1) * (nmax + 1));
        for n in 0..=nmax {
            d.extend(std::iter::repeat_n(self.lambda[n], 2 * n + 1));
        }
        DenseOperator::new(
            format!("coeffs(N={nmax})"),
            format!("coeffs(N={nmax})"),
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)),
        )
    }

    /// Per-coefficient values, n-major.
    pub fn expanded(&self, nmax: usize) -> Vec<f64> {
        (0..=nmax)
            .flat_map(|n| std::iter::repeat_n(self.lambda[n], 2 * n + 1))
            .collect()
    }
}

/// `output(n, m) = lambda(n) f(n, m)`.
pub fn apply_multiplier(op: &SpectralMultiplier, f: &ScalarCoeffs) -> Result<ScalarCoeffs> {
    if op.nmax() < f.nmax() {
        return Err(Error::InvalidArgument(format!(
            "multiplier {} covers degree {}, field has degree {}",
            op.name,
            op.nmax(),
            f.nmax()
        )));
    }
    let mut out = f.clone();
    let mut k = 0;
    for n in 0..=f.nmax() {
        for _ in 0..2 * n + 1 {
            out.values_mut()[k] *= op.lambda[n];
            k += 1;
        }
    }
    Ok(out)
}

/// The multipliers of `S`, `K`, `K + 1/2`, `K - 1/2` and `Lap_S S`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMultipliers {
    pub single_layer: SpectralMultiplier,
    pub double_layer: SpectralMultiplier,
    pub k_plus: SpectralMultiplier,
    pub k_minus: SpectralMultiplier,
    pub laplace_single: SpectralMultiplier,
}

impl LayerMultipliers {
    /// Rational per-degree values:
    /// `S: -1/(2n+1)`, `K-1/2: -n/(2n+1)`, `K+1/2: (n+1)/(2n+1)`,
    /// `K: 1/(2(2n+1))`, `Lap_S S: n(n+1)/(2n+1)`.
    pub fn closed_form(nmax: usize) -> Self {
        let per = |f: fn(f64) -> f64| (0..=nmax).map(|n| f(n as f64)).collect::<Vec<_>>();
        Self {
            single_layer: SpectralMultiplier::new("S", per(|n| -1.0 / (2.0 * n + 1.0))),
            double_layer: SpectralMultiplier::new("K", per(|n| 0.5 / (2.0 * n + 1.0))),
            k_plus: SpectralMultiplier::new("K+1/2", per(|n| (n + 1.0) / (2.0 * n + 1.0))),
            k_minus: SpectralMultiplier::new("K-1/2", per(|n| -n / (2.0 * n + 1.0))),
            laplace_single: SpectralMultiplier::new(
                "LapS S",
                per(|n| n * (n + 1.0) / (2.0 * n + 1.0)),
            ),
        }
    }

    pub fn nmax(&self) -> usize {
        self.single_layer.nmax()
    }

    pub fn all(&self) -> [&SpectralMultiplier; 5] {
        [
            &self.single_layer,
            &self.double_layer,
            &self.k_plus,
            &self.k_minus,
            &self.laplace_single,
        ]
    }

    /// `|lambda_S^2 n(n+1) + lambda_{K+1/2} lambda_{K-1/2}|` per degree.
    pub fn identity_residuals(&self) -> Vec<f64> {
        (0..=self.nmax())
            .map(|n| {
                let s = self.single_layer.at(n);
                let nn = (n * (n + 1)) as f64;
                (s * s * nn + self.k_plus.at(n) * self.k_minus.at(n)).abs()
            })
            .collect()
    }
}

/// Oracle measurements for one degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRow {
    pub n: usize,
    pub single_layer: f64,
    pub k_minus: f64,
    pub k_plus: f64,
    /// Fitted radial exponents inside and outside.
    pub power_inner: f64,
    pub power_outer: f64,
    /// Worst relative misfit of the proportionality regression.
    pub fit_residual: f64,
}

const INNER_RADII: [f64; 2] = [0.75, 0.85];
const OUTER_RADII: [f64; 2] = [1.0 / 0.75, 1.0 / 0.85];
const ORACLE_COLATITUDES: [f64; 4] = [0.31, 0.83, 1.37, 2.29];

fn oracle_grid(nmax: usize) -> SphereGrid {
    // the kernel at radius r decays like r^l in degree l; 0.85^190 ~ 4e-14
    let n_theta = (nmax + 96).max(97);
    SphereGrid::new(n_theta, 2 * n_theta).expect("positive sizes")
}

/// Plain product quadrature of `-1/(4 pi) * sum w f(y) / |x - y|`, valid for
/// targets off the sphere.
pub fn single_layer_off_surface(grid: &SphereGrid, samples: &[f64], x: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for (node, f) in grid.nodes().iter().zip(samples) {
        let y = node.unit_vector();
        let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
        acc += node.weight * f / d;
    }
    -acc / (4.0 * PI)
}

/// Kernel-quadrature measurements of the multipliers for degrees `0..=nmax`.
pub fn multiplier_oracle(nmax: usize) -> Vec<OracleRow> {
    let grid = oracle_grid(nmax);
    let targets: Vec<(f64, Vec<f64>)> = ORACLE_COLATITUDES
        .iter()
        .map(|&t| (t, evaluate_all(nmax, t, 0.0)))
        .collect();
    (0..=nmax)
        .map(|n| {
            let idx = n * n + n;
            let samples = sh_synthesize(&ScalarCoeffs::unit(nmax, n, 0), &grid);
            let mut misfit: f64 = 0.0;
            let mut fit = |r: f64| {
                let (mut num, mut den) = (0.0, 0.0);
                let mut vals = Vec::new();
                for (t, y) in &targets {
                    let x = [r * t.sin(), 0.0, r * t.cos()];
                    let v = single_layer_off_surface(&grid, &samples, x);
                    num += v * y[idx];
                    den += y[idx] * y[idx];
                    vals.push((v, y[idx]));
                }
                let alpha = num / den;
                let scale = vals.iter().map(|(v, _)| v.abs()).fold(0.0, f64::max);
                for (v, y) in vals {
                    misfit = misfit.max((v - alpha * y).abs() / scale);
                }
                alpha
            };
            let (a1, a2) = (fit(INNER_RADII[0]), fit(INNER_RADII[1]));
            let p_in = (a2 / a1).ln() / (INNER_RADII[1] / INNER_RADII[0]).ln();
            let s_in = a1 * INNER_RADII[0].powf(-p_in);
            let (b1, b2) = (fit(OUTER_RADII[0]), fit(OUTER_RADII[1]));
            let p_out = (b2 / b1).ln() / (OUTER_RADII[1] / OUTER_RADII[0]).ln();
            let s_out = b1 * OUTER_RADII[0].powf(-p_out);
            OracleRow {
                n,
                single_layer: 0.5 * (s_in + s_out),
                // normal derivatives of the extension at r = 1
                k_minus: p_in * s_in,
                k_plus: p_out * s_out,
                power_inner: p_in,
                power_outer: p_out,
                fit_residual: misfit,
            }
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

/// Largest relative deviation of `table` from the oracle rows.
pub fn oracle_deviation(table: &LayerMultipliers, rows: &[OracleRow]) -> f64 {
    rows.iter()
        .map(|r| {
            rel_err(r.single_layer, table.single_layer.at(r.n))
                .max(rel_err(r.k_minus, table.k_minus.at(r.n)))
                .max(rel_err(r.k_plus, table.k_plus.at(r.n)))
                .max(rel_err(0.5 * (r.k_minus + r.k_plus), table.double_layer.at(r.n)))
                .max(rel_err(
                    -((r.n * (r.n + 1)) as f64) * r.single_layer,
                    table.laplace_single.at(r.n),
                ))
        })
        .fold(0.0, f64::max)
}

/// Multipliers up to `nmax`, checked against the kernel oracle.
pub fn derive_multipliers(nmax: usize) -> Result<LayerMultipliers> {
    let table = LayerMultipliers::closed_form(nmax);
    let rows = multiplier_oracle(nmax);
    if let Some(r) = rows.iter().find(|r| r.fit_residual > ORACLE_TOLERANCE) {
        return Err(Error::InternalConsistency(format!(
            "oracle regression residual {:.3e} at degree {}",
            r.fit_residual, r.n
        )));
    }
    let dev = oracle_deviation(&table, &rows);
    if dev > ORACLE_TOLERANCE {
        return Err(Error::InternalConsistency(format!(
            "multiplier table deviates from the kernel oracle by {dev:.3e}"
        )));
    }
    Ok(table)
}

/// `S^{-1} f`; every `lambda_S(n)` is nonzero.
pub fn apply_inverse_single_layer(f: &ScalarCoeffs) -> ScalarCoeffs {
    let mut out = f.clone();
    let mut k = 0;
    for n in 0..=f.nmax() {
        for _ in 0..2 * n + 1 {
            out.values_mut()[k] *= -(2.0 * n as f64 + 1.0);
            k += 1;
        }
    }
    out
}

/// Integral of `1/|x - y|` over the sphere for `x` on the sphere, obtained
/// from the constant input evaluated just inside.
fn kernel_mass() -> f64 {
    static MASS: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
    *MASS.get_or_init(|| {
        let grid = SphereGrid::new(40, 80).expect("positive sizes");
        let ones = vec![1.0; grid.len()];
        -4.0 * PI * single_layer_off_surface(&grid, &ones, [0.0, 0.0, 0.5])
    })
}

/// On-surface single layer by singularity subtraction:
///
/// ```text
/// S f(x) ~ -1/(4 pi) [ sum_y w (f(y) - f(x)) / |x - y| + f(x) * M ]
/// ```
///
/// where `M` is the kernel mass and nodes coinciding with `x` are skipped.
/// `f_target` is the value of `f` at `x`.
pub fn kernel_quadrature_single_layer(
    grid: &SphereGrid,
    samples: &[f64],
    target: [f64; 3],
    f_target: f64,
) -> Result<f64> {
    if samples.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples for a grid of {} nodes",
            samples.len(),
            grid.len()
        )));
    }
    let mut acc = 0.0;
    for (node, f) in grid.nodes().iter().zip(samples) {
        let y = node.unit_vector();
        let d = ((target[0] - y[0]).powi(2) + (target[1] - y[1]).powi(2) + (target[2] - y[2]).powi(2))
            .sqrt();
        if d > 1e-12 {
            acc += node.weight * (f - f_target) / d;
        }
    }
    Ok(-(acc + f_target * kernel_mass()) / (4.0 * PI))
}
