//! The operators `B+`, `B-` and the Hardy-Hodge decomposition.
//!
//! ```text
//! B+ f = nu (K - 1/2) f + grad_S S f      on L2(S) / <1>
//! B- f = nu (K + 1/2) f + grad_S S f
//! ```
//!
//! A vector field is carried in Hardy-Hodge coordinates `(phi, psi, chi)`:
//! `f = B+ phi + B- psi + (x cross grad_S) chi`. The Cartesian form only
//! appears when sampling on a grid.

use crate::grid::SphereGrid;
use crate::harmonics::{
    coeff_index, evaluate_all, local_frame, sh_analyze, sh_synthesize, surface_gradients_all,
    tangent_analyze, tangent_synthesize, ScalarCoeffs, TangentBasisCoeffs,
};
use crate::potentials::LayerMultipliers;
use crate::{Error, Result};

/// A vector field in Hardy-Hodge coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldCoeffs {
    pub phi: ScalarCoeffs,
    pub psi: ScalarCoeffs,
    pub chi: ScalarCoeffs,
}

impl VectorFieldCoeffs {
    pub fn new(phi: ScalarCoeffs, psi: ScalarCoeffs, chi: ScalarCoeffs) -> Result<Self> {
        let n = phi.nmax();
        if psi.nmax() != n || chi.nmax() != n {
            return Err(Error::InvalidArgument("potentials must share one degree".into()));
        }
        if !phi.is_zero_mean() || !chi.is_zero_mean() {
            return Err(Error::InvalidArgument(
                "phi and chi carry no constant channel".into(),
            ));
        }
        Ok(Self { phi, psi, chi })
    }

    pub fn zeros(nmax: usize) -> Self {
        Self {
            phi: ScalarCoeffs::zeros(nmax),
            psi: ScalarCoeffs::zeros(nmax),
            chi: ScalarCoeffs::zeros(nmax),
        }
    }

    pub fn nmax(&self) -> usize {
        self.phi.nmax()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.phi
            .max_abs_diff(&other.phi)
            .max(self.psi.max_abs_diff(&other.psi))
            .max(self.chi.max_abs_diff(&other.chi))
    }
}

/// A vector field as a normal component plus tangent basis coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCoeffs {
    pub normal: ScalarCoeffs,
    pub tangent: TangentBasisCoeffs,
}

impl FieldCoeffs {
    pub fn zeros(nmax: usize) -> Self {
        Self {
            normal: ScalarCoeffs::zeros(nmax),
            tangent: TangentBasisCoeffs::zeros(nmax),
        }
    }

    pub fn nmax(&self) -> usize {
        self.normal.nmax()
    }

    pub fn norm_squared(&self) -> f64 {
        self.normal.norm().powi(2) + self.tangent.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// `L2(S, R^3)` inner product computed spectrally.
    pub fn dot(&self, other: &Self) -> f64 {
        let t = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        self.normal.dot(&other.normal)
            + t(self.tangent.grad_values(), other.tangent.grad_values())
            + t(self.tangent.curl_values(), other.tangent.curl_values())
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut tangent = self.tangent.clone();
        for n in 1..=self.nmax() {
            for m in -(n as i64)..=n as i64 {
                tangent.set_grad(n, m, tangent.grad(n, m) + other.tangent.grad(n, m));
                tangent.set_curl(n, m, tangent.curl(n, m) + other.tangent.curl(n, m));
            }
        }
        Self {
            normal: &self.normal + &other.normal,
            tangent,
        }
    }

    /// Cartesian samples on a grid.
    pub fn sample(&self, grid: &SphereGrid) -> Vec<[f64; 3]> {
        let normal = sh_synthesize(&self.normal, grid);
        let mut out = tangent_synthesize(&self.tangent, grid);
        for ((v, a), node) in out.iter_mut().zip(normal).zip(grid.nodes()) {
            let r = node.unit_vector();
            for k in 0..3 {
                v[k] += a * r[k];
            }
        }
        out
    }

    /// Quadrature projection of Cartesian samples.
    pub fn analyze(samples: &[[f64; 3]], grid: &SphereGrid, nmax: usize) -> Result<Self> {
        let normal: Vec<f64> = samples
            .iter()
            .zip(grid.nodes())
            .map(|(v, node)| {
                let r = node.unit_vector();
                v[0] * r[0] + v[1] * r[1] + v[2] * r[2]
            })
            .collect();
        Ok(Self {
            normal: sh_analyze(&normal, grid, nmax)?,
            tangent: tangent_analyze(samples, grid, nmax)?,
        })
    }
}

fn check_degree(m: &LayerMultipliers, nmax: usize) -> Result<()> {
    if m.nmax() < nmax {
        return Err(Error::InvalidArgument(format!(
            "multipliers cover degree {}, field has degree {nmax}",
            m.nmax()
        )));
    }
    Ok(())
}

fn apply_b(m: &LayerMultipliers, f: &ScalarCoeffs, normal: &[f64]) -> FieldCoeffs {
    let nmax = f.nmax();
    let mut out = FieldCoeffs::zeros(nmax);
    for n in 0..=nmax {
        let s = m.single_layer.at(n) * ((n * (n + 1)) as f64).sqrt();
        for mm in -(n as i64)..=n as i64 {
            let v = f.get(n, mm);
            out.normal.set(n, mm, normal[n] * v);
            if n > 0 {
                out.tangent.set_grad(n, mm, s * v);
            }
        }
    }
    out
}

/// `B+ phi`; `phi` must have zero mean.
pub fn apply_bplus(m: &LayerMultipliers, phi: &ScalarCoeffs) -> Result<FieldCoeffs> {
    check_degree(m, phi.nmax())?;
    if !phi.is_zero_mean() {
        return Err(Error::InvalidArgument(format!(
            "B+ acts on zero-mean potentials; mean coefficient is {:.3e}",
            phi.mean_coefficient()
        )));
    }
    Ok(apply_b(m, phi, &m.k_minus.lambda))
}

/// `B- psi`.
pub fn apply_bminus(m: &LayerMultipliers, psi: &ScalarCoeffs) -> Result<FieldCoeffs> {
    check_degree(m, psi.nmax())?;
    Ok(apply_b(m, psi, &m.k_plus.lambda))
}

/// `(x cross grad_S) chi`.
pub fn apply_curl(chi: &ScalarCoeffs) -> FieldCoeffs {
    let mut out = FieldCoeffs::zeros(chi.nmax());
    for n in 1..=chi.nmax() {
        let s = ((n * (n + 1)) as f64).sqrt();
        for mm in -(n as i64)..=n as i64 {
            out.tangent.set_curl(n, mm, s * chi.get(n, mm));
        }
    }
    out
}

/// `B+ phi + B- psi + (x cross grad_S) chi`.
pub fn synthesize(m: &LayerMultipliers, v: &VectorFieldCoeffs) -> Result<FieldCoeffs> {
    Ok(apply_bplus(m, &v.phi)?
        .add(&apply_bminus(m, &v.psi)?)
        .add(&apply_curl(&v.chi)))
}

/// Hardy-Hodge coordinates of a field given in normal/tangent form.
///
/// For `n >= 1` each `(n, m)` solves
///
/// ```text
/// [ l-(n)       l+(n)      ] [phi]   [normal]
/// [ s(n)        s(n)       ] [psi] = [grad  ]     s(n) = l_S(n) sqrt(n(n+1))
/// ```
///
/// whose determinant is `-s(n)`.
pub fn decompose_coeffs(m: &LayerMultipliers, field: &FieldCoeffs) -> Result<VectorFieldCoeffs> {
    let nmax = field.nmax();
    check_degree(m, nmax)?;
    let mut out = VectorFieldCoeffs::zeros(nmax);
    let k0 = m.k_plus.at(0);
    if k0 == 0.0 {
        return Err(Error::InternalConsistency("K+1/2 annihilates constants".into()));
    }
    out.psi.set(0, 0, field.normal.get(0, 0) / k0);
    for n in 1..=nmax {
        let nn = ((n * (n + 1)) as f64).sqrt();
        let (lm, lp) = (m.k_minus.at(n), m.k_plus.at(n));
        let s = m.single_layer.at(n) * nn;
        let det = lm * s - lp * s;
        if det.abs() < 1e-300 || !det.is_finite() {
            return Err(Error::InternalConsistency(format!("singular 2x2 block at degree {n}")));
        }
        for mm in -(n as i64)..=n as i64 {
            let (a, b) = (field.normal.get(n, mm), field.tangent.grad(n, mm));
            out.phi.set(n, mm, (a * s - lp * b) / det);
            out.psi.set(n, mm, (lm * b - s * a) / det);
            out.chi.set(n, mm, field.tangent.curl(n, mm) / nn);
        }
    }
    Ok(out)
}

/// Decompose a sampled field; the grid must resolve degree `2 nmax + 2`.
pub fn decompose(
    m: &LayerMultipliers,
    samples: &[[f64; 3]],
    grid: &SphereGrid,
    nmax: usize,
) -> Result<VectorFieldCoeffs> {
    decompose_coeffs(m, &FieldCoeffs::analyze(samples, grid, nmax)?)
}

/// Smallest `||B+ Y(n)||` over `1 <= n <= nmax` and `||B- Y(n)||` over
/// `0 <= n <= nmax`.
pub fn lower_bounds(m: &LayerMultipliers, nmax: usize) -> (f64, f64) {
    let norm = |n: usize, normal: f64| {
        let s = m.single_layer.at(n);
        (normal * normal + s * s * (n * (n + 1)) as f64).sqrt()
    };
    let plus = (1..=nmax).map(|n| norm(n, m.k_minus.at(n))).fold(f64::INFINITY, f64::min);
    let minus = (0..=nmax).map(|n| norm(n, m.k_plus.at(n))).fold(f64::INFINITY, f64::min);
    (plus, minus)
}

/// Which harmonic extension to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Inner,
    Outer,
}

/// `grad (S f)` of the harmonic extension of `S f` into the ball (`Inner`)
/// or its exterior (`Outer`), at a Cartesian point.
///
/// Per degree the extension scales like `r^p` with `p = l_{K-1/2}/l_S = n`
/// inside and `p = l_{K+1/2}/l_S = -(n+1)` outside, so on the sphere the
/// gradient reduces to `B+ f` and `B- f` respectively.
pub fn harmonic_extension_eval(
    m: &LayerMultipliers,
    f: &ScalarCoeffs,
    point: [f64; 3],
    side: Side,
) -> Result<[f64; 3]> {
    check_degree(m, f.nmax())?;
    let r = (point[0].powi(2) + point[1].powi(2) + point[2].powi(2)).sqrt();
    match side {
        Side::Inner if r >= 1.0 => {
            return Err(Error::InvalidArgument(format!("inner point has radius {r}")))
        }
        Side::Outer if r <= 1.0 => {
            return Err(Error::InvalidArgument(format!("outer point has radius {r}")))
        }
        _ => {}
    }
    let theta = if r > 0.0 { (point[2] / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
    let phi = point[1].atan2(point[0]);
    let nmax = f.nmax();
    let y = evaluate_all(nmax, theta, phi);
    let g = surface_gradients_all(nmax, theta, phi);
    let (mut vr, mut vt, mut vp) = (0.0, 0.0, 0.0);
    for n in 0..=nmax {
        let s = m.single_layer.at(n);
        let normal = match side {
            Side::Inner => m.k_minus.at(n),
            Side::Outer => m.k_plus.at(n),
        };
        let p = normal / s;
        // d/dr of r^p is p r^(p-1); the tangential part carries 1/r
        let radial = if n == 0 && side == Side::Inner { 0.0 } else { r.powf(p - 1.0) };
        for mm in -(n as i64)..=n as i64 {
            let k = coeff_index(n, mm);
            let c = f.values()[k];
            if c == 0.0 {
                continue;
            }
            vr += c * normal * radial * y[k];
            vt += c * s * radial * g[k].0;
            vp += c * s * radial * g[k].1;
        }
    }
    let fr = local_frame(theta, phi);
    Ok([0, 1, 2].map(|k| vr * fr[0][k] + vt * fr[1][k] + vp * fr[2][k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::coeff_len;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mults(n: usize) -> LayerMultipliers {
        LayerMultipliers::closed_form(n)
    }

    fn random(nmax: usize, rng: &mut ChaCha8Rng, zero_mean: bool) -> ScalarCoeffs {
        let mut c = ScalarCoeffs::from_values(
            nmax,
            (0..coeff_len(nmax)).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        if zero_mean {
            c.set(0, 0, 0.0);
        }
        c
    }

    #[test]
    fn bplus_norm_of_y10_by_quadrature() {
        let m = mults(4);
        let f = apply_bplus(&m, &ScalarCoeffs::unit(4, 1, 0)).unwrap();
        assert_relative_eq!(f.norm_squared(), 1.0 / 3.0, max_relative = 1e-14);
        let grid = SphereGrid::for_vector_degree(4);
        let s = f.sample(&grid);
        assert_relative_eq!(grid.inner_vector(&s, &s), 1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn bminus_norm_of_y10_and_constants() {
        let m = mults(4);
        let f = apply_bminus(&m, &ScalarCoeffs::unit(4, 1, 0)).unwrap();
        assert_relative_eq!(f.norm_squared(), 2.0 / 3.0, max_relative = 1e-14);
        let mut one = ScalarCoeffs::zeros(4);
        one.set(0, 0, (4.0 * std::f64::consts::PI).sqrt());
        let c = apply_bminus(&m, &one).unwrap();
        let grid = SphereGrid::for_vector_degree(4);
        for (v, node) in c.sample(&grid).iter().zip(grid.nodes()) {
            let r = node.unit_vector();
            for k in 0..3 {
                assert!((v[k] - r[k]).abs() < 1e-13);
            }
        }
        assert_eq!(apply_bminus(&m, &ScalarCoeffs::zeros(4)).unwrap(), FieldCoeffs::zeros(4));
        assert_eq!(apply_bplus(&m, &ScalarCoeffs::zeros(4)).unwrap(), FieldCoeffs::zeros(4));
    }

    #[test]
    fn bplus_rejects_mean() {
        let m = mults(2);
        assert!(matches!(
            apply_bplus(&m, &ScalarCoeffs::unit(2, 0, 0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn hardy_components_are_orthogonal() {
        let m = mults(4);
        let grid = SphereGrid::for_vector_degree(4);
        let a = apply_bplus(&m, &ScalarCoeffs::unit(4, 2, 1)).unwrap().sample(&grid);
        let b = apply_bminus(&m, &ScalarCoeffs::unit(4, 2, 1)).unwrap().sample(&grid);
        assert!(grid.inner_vector(&a, &b).abs() < 1e-12);
    }

    #[test]
    fn decompose_single_bplus_mode() {
        let m = mults(5);
        let grid = SphereGrid::for_vector_degree(5);
        let samples = apply_bplus(&m, &ScalarCoeffs::unit(5, 3, 1)).unwrap().sample(&grid);
        let v = decompose(&m, &samples, &grid, 5).unwrap();
        let expect = VectorFieldCoeffs::new(
            ScalarCoeffs::unit(5, 3, 1),
            ScalarCoeffs::zeros(5),
            ScalarCoeffs::zeros(5),
        )
        .unwrap();
        assert!(v.max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn decompose_curl_field() {
        let m = mults(4);
        let grid = SphereGrid::for_vector_degree(4);
        let samples = apply_curl(&ScalarCoeffs::unit(4, 2, 0)).sample(&grid);
        let v = decompose(&m, &samples, &grid, 4).unwrap();
        assert!(v.phi.norm() < 1e-12 && v.psi.norm() < 1e-12);
        assert_relative_eq!(v.chi.get(2, 0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn random_fields_split_orthogonally() {
        let m = mults(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = SphereGrid::for_vector_degree(8);
        for _ in 0..5 {
            let v = VectorFieldCoeffs::new(
                random(8, &mut rng, true),
                random(8, &mut rng, false),
                random(8, &mut rng, true),
            )
            .unwrap();
            let samples = synthesize(&m, &v).unwrap().sample(&grid);
            let back = decompose(&m, &samples, &grid, 8).unwrap();
            assert!(back.max_abs_diff(&v) < 1e-10);
            let total = grid.inner_vector(&samples, &samples);
            let parts = apply_bplus(&m, &v.phi).unwrap().norm_squared()
                + apply_bminus(&m, &v.psi).unwrap().norm_squared()
                + apply_curl(&v.chi).norm_squared();
            assert_relative_eq!(total, parts, max_relative = 1e-10);
        }
    }

    #[test]
    fn lower_bounds_are_degree_independent() {
        let (p, q) = lower_bounds(&mults(40), 40);
        assert_relative_eq!(p, (1.0f64 / 3.0).sqrt(), max_relative = 1e-12);
        assert!(q > 0.7);
    }

    #[test]
    fn extension_converges_to_bplus() {
        let m = mults(4);
        let phi = ScalarCoeffs::unit(4, 2, 0);
        let grid = SphereGrid::for_vector_degree(4);
        let trace = apply_bplus(&m, &phi).unwrap().sample(&grid);
        let node = grid.nodes()[grid.len() / 3 + 2];
        let u = node.unit_vector();
        let target = trace[grid.len() / 3 + 2];
        let err = |r: f64| {
            let v = harmonic_extension_eval(&m, &phi, u.map(|c| c * r), Side::Inner).unwrap();
            (0..3).map(|k| (v[k] - target[k]).powi(2)).sum::<f64>().sqrt()
        };
        assert!(err(0.999) < 1e-2);
        assert!(err(0.9999) < err(0.999));
    }

    #[test]
    fn outer_extension_decays() {
        let m = mults(2);
        let one = ScalarCoeffs::unit(2, 0, 0);
        let norm = |r: f64| {
            let v = harmonic_extension_eval(&m, &one, [0.0, 0.0, r], Side::Outer).unwrap();
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        };
        assert_relative_eq!(norm(2.0) / norm(4.0), 4.0, max_relative = 1e-12);
        assert!(norm(1e6) < 1e-11);
        assert!(harmonic_extension_eval(&m, &one, [1.0, 0.0, 0.0], Side::Outer).is_err());
        let zero = harmonic_extension_eval(&m, &ScalarCoeffs::zeros(2), [0.1, 0.2, 0.3], Side::Inner)
            .unwrap();
        assert_eq!(zero, [0.0; 3]);
    }
}
