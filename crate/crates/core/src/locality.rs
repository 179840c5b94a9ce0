//! Locality on a polar cap `Sigma`.
//!
//! Trial functions are harmonics up to degree `N_t`, test functions up to
//! `N_s <= N_t`. A trial coefficient vector `w` "vanishes weakly on Sigma" when
//! `G_st w = 0`, with `G_st[j, i] = <Y_j, Y_i>_{L2(Sigma)}`; its weak
//! `L2(Sigma)` norm is `|G_st w|`, the supremum of `<w, h>_Sigma` over unit
//! test functions `h`.
//!
//! The cap is symmetric about the pole, so every Gram matrix is block
//! diagonal in the order `m`. All subspaces are built per block and
//! assembled on demand.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::continuation::{GraphSpace, WitnessSpace};
use crate::grid::{gauss_legendre, Cap, SphereGrid};
use crate::harmonics::{coeff_index, coeff_len, sh_project, LegendreTable, ScalarCoeffs};
use crate::linalg::{null_space, orthonormality_error, svd, svd_full_right, Svd};
use crate::potentials::{derive_multipliers, LayerMultipliers};
use crate::{Error, Result};

/// Orthonormal coefficient columns spanning a subspace.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub label: String,
    pub columns: DMatrix<f64>,
    /// Largest violation of the defining constraint over the columns.
    pub residual: f64,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.columns)
    }

    /// Orthogonal projection of `v` onto the span.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.columns * (self.columns.transpose() * v)
    }
}

/// Everything the cap contributes to one azimuthal order.
#[derive(Debug, Clone)]
pub struct OrderBlock {
    pub m: i64,
    /// Degrees `|m|..=N_t`.
    pub trial_degrees: Vec<usize>,
    /// Positions in the trial coefficient layout.
    pub trial_index: Vec<usize>,
    /// Positions in the test coefficient layout (empty when `|m| > N_s`).
    pub test_index: Vec<usize>,
    pub gram_tt: DMatrix<f64>,
    /// Test x trial.
    pub gram_st: DMatrix<f64>,
    pub gram_ss: DMatrix<f64>,
    /// Block of `A = G_st Lambda` with `Lambda` the `Lap_S S` multiplier.
    pub laplace_weak: DMatrix<f64>,
    /// Local columns of `D_eps` (in the `m = 0` block the constant comes first).
    pub d_eps: DMatrix<f64>,
    /// Whether column 0 of `d_eps` is the constant.
    pub has_constant: bool,
    /// Local columns of the null space of `gram_st`.
    pub t_off: DMatrix<f64>,
    /// Singular values of `laplace_weak` (zero-mean part in the `m = 0` block).
    pub laplace_sigma: Vec<f64>,
}

impl OrderBlock {
    pub fn trial_len(&self) -> usize {
        self.trial_index.len()
    }

    /// `D_eps` columns without the constant.
    pub fn d_eps_zero_mean(&self) -> DMatrix<f64> {
        let skip = self.has_constant as usize;
        self.d_eps.columns(skip, self.d_eps.ncols() - skip).into_owned()
    }

    pub fn gather_trial(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.trial_len(), self.trial_index.iter().map(|&i| v[i]))
    }

    pub fn gather_test(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.test_index.len(), self.test_index.iter().map(|&i| v[i]))
    }
}

/// Discretized locality data for one cap and one pair of degrees.
#[derive(Debug)]
pub struct LocalityContext {
    cap: Cap,
    n_trial: usize,
    n_test: usize,
    eps: f64,
    membership_tolerance: f64,
    multipliers: LayerMultipliers,
    blocks: Vec<OrderBlock>,
    laplace_sigma_max: f64,
    pub(crate) witness: OnceLock<WitnessSpace>,
    pub(crate) graph: OnceLock<GraphSpace>,
    pub(crate) modes: OnceLock<crate::bep::ModeOperator>,
    pub(crate) adjoint: OnceLock<crate::linalg::Svd>,
}

/// Default membership tolerance relative to the input norm.
pub const DEFAULT_MEMBERSHIP_TOLERANCE: f64 = 1e-6;

/// Exact cap Gram matrix for one order between degree lists, using
/// Gauss-Legendre nodes in `cos(theta)` on `[cos theta_c, 1]`.
fn cap_gram(tables: &[(f64, LegendreTable)], m: usize, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        2.0 * PI
            * tables
                .iter()
                .map(|(w, t)| w * t.value(rows[i], m) * t.value(cols[j], m))
                .sum::<f64>()
    })
}

/// Build the context for `cap`, trial degree `n_trial`, test degree
/// `n_test <= n_trial` and singular-value threshold `eps` in `(0, 1)`.
pub fn build_context(cap: Cap, n_trial: usize, n_test: usize, eps: f64) -> Result<LocalityContext> {
    if n_test > n_trial {
        return Err(Error::InvalidArgument(format!(
            "test degree {n_test} exceeds trial degree {n_trial}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {eps}")));
    }
    let theta_c = cap.theta_c();
    if !(theta_c > 0.0 && theta_c < PI) {
        return Err(Error::InvalidArgument(format!("cap radius {theta_c} outside (0, pi)")));
    }
    let multipliers = derive_multipliers(n_trial)?;
    let lap = &multipliers.laplace_single;

    let (xs, ws) = gauss_legendre(n_trial + 1, theta_c.cos(), 1.0);
    let tables: Vec<(f64, LegendreTable)> = xs
        .iter()
        .zip(&ws)
        .map(|(x, w)| (*w, LegendreTable::new(n_trial, x.clamp(-1.0, 1.0).acos())))
        .collect();

    let mut blocks = Vec::with_capacity(2 * n_trial + 1);
    let mut raw_svds: Vec<Svd> = Vec::new();
    for m in -(n_trial as i64)..=n_trial as i64 {
        let am = m.unsigned_abs() as usize;
        let trial_degrees: Vec<usize> = (am..=n_trial).collect();
        let test_degrees: Vec<usize> = if am <= n_test { (am..=n_test).collect() } else { vec![] };
        let gram_tt = cap_gram(&tables, am, &trial_degrees, &trial_degrees);
        let gram_st = cap_gram(&tables, am, &test_degrees, &trial_degrees);
        let gram_ss = cap_gram(&tables, am, &test_degrees, &test_degrees);
        let lam = DMatrix::from_diagonal(&DVector::from_iterator(
            trial_degrees.len(),
            trial_degrees.iter().map(|&n| lap.at(n)),
        ));
        let laplace_weak = &gram_st * lam;
        // the constant is annihilated exactly; handle it outside the SVD
        let has_constant = m == 0;
        let reduced = if has_constant {
            laplace_weak.columns(1, laplace_weak.ncols() - 1).into_owned()
        } else {
            laplace_weak.clone()
        };
        raw_svds.push(svd_full_right(&reduced)?);
        blocks.push(OrderBlock {
            m,
            trial_index: trial_degrees.iter().map(|&n| coeff_index(n, m)).collect(),
            test_index: test_degrees.iter().map(|&n| coeff_index(n, m)).collect(),
            trial_degrees,
            gram_tt,
            t_off: null_space(&gram_st),
            gram_st,
            gram_ss,
            laplace_weak,
            d_eps: DMatrix::zeros(0, 0),
            has_constant,
            laplace_sigma: vec![],
        });
    }

    let sigma_max = raw_svds.iter().map(|s| s.sigma_max()).fold(0.0, f64::max);
    let threshold = eps * sigma_max;
    for (block, s) in blocks.iter_mut().zip(raw_svds) {
        let rows_used = block.test_index.len().min(s.sigma.len());
        block.laplace_sigma = s.sigma.iter().take(rows_used).copied().collect();
        let keep: Vec<usize> = (0..s.sigma.len()).filter(|&k| s.sigma[k] <= threshold).collect();
        let len = block.trial_len();
        let offset = block.has_constant as usize;
        let mut d = DMatrix::zeros(len, keep.len() + offset);
        if block.has_constant {
            d[(0, 0)] = 1.0;
        }
        for (c, &k) in keep.iter().enumerate() {
            for i in 0..s.v.nrows() {
                d[(i + offset, c + offset)] = s.v[(i, k)];
            }
        }
        block.d_eps = d;
    }

    Ok(LocalityContext {
        cap,
        n_trial,
        n_test,
        eps,
        membership_tolerance: DEFAULT_MEMBERSHIP_TOLERANCE,
        multipliers,
        blocks,
        laplace_sigma_max: sigma_max,
        witness: OnceLock::new(),
        graph: OnceLock::new(),
        modes: OnceLock::new(),
        adjoint: OnceLock::new(),
    })
}

impl LocalityContext {
    pub fn cap(&self) -> Cap {
        self.cap
    }

    pub fn n_trial(&self) -> usize {
        self.n_trial
    }

    pub fn n_test(&self) -> usize {
        self.n_test
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn trial_len(&self) -> usize {
        coeff_len(self.n_trial)
    }

    pub fn test_len(&self) -> usize {
        coeff_len(self.n_test)
    }

    pub fn multipliers(&self) -> &LayerMultipliers {
        &self.multipliers
    }

    pub fn blocks(&self) -> &[OrderBlock] {
        &self.blocks
    }

    /// Largest singular value of `A = G_st Lambda`.
    pub fn laplace_sigma_max(&self) -> f64 {
        self.laplace_sigma_max
    }

    pub fn membership_tolerance(&self) -> f64 {
        self.membership_tolerance
    }

    pub fn set_membership_tolerance(&mut self, tol: f64) {
        self.membership_tolerance = tol;
    }

    fn assemble(&self, rows: usize, cols: usize, pick: impl Fn(&OrderBlock) -> (&[usize], &[usize], DMatrix<f64>)) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, cols);
        for b in &self.blocks {
            let (r, c, mat) = pick(b);
            crate::linalg::scatter(&mut out, r, c, &mat);
        }
        out
    }

    /// Trial x trial Gram on `Sigma`.
    pub fn gram_tt(&self) -> DMatrix<f64> {
        let n = self.trial_len();
        self.assemble(n, n, |b| (&b.trial_index, &b.trial_index, b.gram_tt.clone()))
    }

    /// Test x trial Gram on `Sigma`.
    pub fn gram_st(&self) -> DMatrix<f64> {
        self.assemble(self.test_len(), self.trial_len(), |b| {
            (&b.test_index, &b.trial_index, b.gram_st.clone())
        })
    }

    /// Test x test Gram on `Sigma`.
    pub fn gram_ss(&self) -> DMatrix<f64> {
        let n = self.test_len();
        self.assemble(n, n, |b| (&b.test_index, &b.test_index, b.gram_ss.clone()))
    }

    /// Columns of a block-local matrix placed in the trial layout.
    pub(crate) fn embed_columns(&self, parts: &[DMatrix<f64>]) -> DMatrix<f64> {
        let total: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut out = DMatrix::zeros(self.trial_len(), total);
        let mut col = 0;
        for (b, p) in self.blocks.iter().zip(parts) {
            for j in 0..p.ncols() {
                for (i, &gi) in b.trial_index.iter().enumerate() {
                    out[(gi, col)] = p[(i, j)];
                }
                col += 1;
            }
        }
        out
    }

    /// `G_st w` for a trial coefficient vector.
    pub fn weak_restriction(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.test_len());
        for b in &self.blocks {
            if b.test_index.is_empty() {
                continue;
            }
            let r = &b.gram_st * b.gather_trial(w);
            for (k, &i) in b.test_index.iter().enumerate() {
                out[i] = r[k];
            }
        }
        out
    }

    /// Weak `L2(Sigma)` norm `|G_st w|`.
    pub fn weak_norm(&self, w: &DVector<f64>) -> f64 {
        self.weak_restriction(w).norm()
    }

    /// `|G_st Lambda v|`, the weak norm of `Lap_S S v` on `Sigma`.
    pub fn weak_divergence(&self, v: &DVector<f64>) -> f64 {
        let lam = self.multipliers.laplace_single.expanded(self.n_trial);
        let lv = DVector::from_iterator(v.len(), v.iter().zip(&lam).map(|(a, b)| a * b));
        self.weak_norm(&lv)
    }

    /// True when `D_eps` holds nothing but constants.
    pub fn constants_only(&self) -> bool {
        self.blocks.iter().map(|b| b.d_eps.ncols()).sum::<usize>() <= 1
    }
}

/// Orthonormal basis of `D_eps(Sigma)`.
pub fn sharmonic_subspace(ctx: &LocalityContext) -> SubspaceBasis {
    let parts: Vec<DMatrix<f64>> = ctx.blocks.iter().map(|b| b.d_eps.clone()).collect();
    let columns = ctx.embed_columns(&parts);
    let residual = ctx
        .blocks
        .iter()
        .flat_map(|b| {
            let a = &b.laplace_weak * &b.d_eps;
            (0..a.ncols()).map(move |j| a.column(j).norm()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    SubspaceBasis {
        label: "D_eps".into(),
        columns,
        residual,
    }
}

/// Zero-mean part of `D_eps(Sigma)`.
pub fn sharmonic_subspace_zero_mean(ctx: &LocalityContext) -> SubspaceBasis {
    let parts: Vec<DMatrix<f64>> = ctx.blocks.iter().map(|b| b.d_eps_zero_mean()).collect();
    SubspaceBasis {
        label: "D_eps^0".into(),
        columns: ctx.embed_columns(&parts),
        residual: sharmonic_subspace(ctx).residual,
    }
}

/// Orthonormal basis of the trial functions vanishing weakly on `Sigma`.
pub fn off_sigma_subspace(ctx: &LocalityContext) -> Result<SubspaceBasis> {
    if ctx.n_test == ctx.n_trial {
        return Err(Error::InvalidArgument(
            "no discrete freedom off Sigma: test degree equals trial degree".into(),
        ));
    }
    let parts: Vec<DMatrix<f64>> = ctx.blocks.iter().map(|b| b.t_off.clone()).collect();
    let columns = ctx.embed_columns(&parts);
    let residual = ctx
        .blocks
        .iter()
        .filter(|b| !b.test_index.is_empty())
        .map(|b| (&b.gram_st * &b.t_off).abs().max())
        .fold(0.0, f64::max);
    Ok(SubspaceBasis {
        label: "T_off".into(),
        columns,
        residual,
    })
}

/// Which trace operator to restrict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trace {
    /// `P (K + 1/2)` on `D_eps`.
    Plus,
    /// `P (K - 1/2)` on the zero-mean part of `D_eps`.
    Minus,
}

/// Singular values of a weakly restricted trace operator on `D_eps`.
#[derive(Debug, Clone)]
pub struct TraceSpectrum {
    /// All singular values, descending, padded with zeros to the domain dimension.
    pub sigma: Vec<f64>,
    /// `max(rows, cols) * eps_machine * sigma_max`.
    pub floor: f64,
    /// Smallest singular value above `floor`.
    pub sigma_min: f64,
    /// Number of singular values at or below `floor`.
    pub kernel_dim: usize,
}

pub fn trace_spectrum(ctx: &LocalityContext, trace: Trace) -> Result<TraceSpectrum> {
    let mult = match trace {
        Trace::Plus => &ctx.multipliers.k_plus,
        Trace::Minus => &ctx.multipliers.k_minus,
    };
    let mut sigma = Vec::new();
    let mut cols = 0;
    for b in &ctx.blocks {
        let d = match trace {
            Trace::Plus => b.d_eps.clone(),
            Trace::Minus => b.d_eps_zero_mean(),
        };
        cols += d.ncols();
        let lam = DMatrix::from_diagonal(&DVector::from_iterator(
            b.trial_len(),
            b.trial_degrees.iter().map(|&n| mult.at(n)),
        ));
        let s = svd(&(&b.gram_st * lam * &d))?;
        sigma.extend(s.sigma.iter().copied());
        sigma.extend(std::iter::repeat_n(0.0, d.ncols().saturating_sub(s.sigma.len())));
    }
    sigma.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let floor = ctx.test_len().max(cols) as f64 * f64::EPSILON * sigma_max;
    let sigma_min = sigma.iter().copied().filter(|s| *s > floor).fold(f64::INFINITY, f64::min);
    let kernel_dim = sigma.iter().filter(|s| **s <= floor).count();
    Ok(TraceSpectrum {
        sigma,
        floor,
        sigma_min,
        kernel_dim,
    })
}

/// All singular values of `A = G_st Lambda`, descending.
pub fn laplace_spectrum(ctx: &LocalityContext) -> Vec<f64> {
    let mut s: Vec<f64> = ctx.blocks.iter().flat_map(|b| b.laplace_sigma.iter().copied()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// A smooth function compactly supported inside the cap, projected onto the
/// test degree.
#[derive(Debug, Clone)]
pub struct CapBump {
    /// Test-degree coefficients.
    pub coeffs: ScalarCoeffs,
    /// `L2(S)` norm of the unprojected bump.
    pub norm: f64,
    /// Relative `L2` error of the projection.
    pub spillover: f64,
}

impl CapBump {
    /// `exp(1 - 1/(1 - (theta/theta_b)^2)) (1 + sin(theta) cos(phi) / 2)` for
    /// `theta < theta_b = 0.8 theta_c`.
    pub fn new(ctx: &LocalityContext) -> Result<Self> {
        let tb = 0.8 * ctx.cap.theta_c();
        let n = 4 * ctx.n_trial.max(8);
        let grid = SphereGrid::new(n, 2 * n)?;
        let samples: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|node| {
                let q = node.theta / tb;
                if q >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - q * q)).exp() * (1.0 + 0.5 * node.theta.sin() * node.phi.cos())
                }
            })
            .collect();
        let sq: Vec<f64> = samples.iter().map(|v| v * v).collect();
        let norm = grid.integrate(&sq).sqrt();
        let coeffs = sh_project(&samples, &grid, ctx.n_test)?;
        let spillover = (norm * norm - coeffs.norm().powi(2)).max(0.0).sqrt() / norm;
        Ok(Self {
            coeffs,
            norm,
            spillover,
        })
    }
}

/// `|<f, (K+1/2)(K-1/2) S^{-1} bump>|` with the pairing taken on `Sigma`,
/// where the bump lives. Since `(K+1/2)(K-1/2) S^{-1} = Lap_S S`, this is
/// `|b^T G_st Lambda f|` for the test coefficients `b` of the bump.
pub fn orthocomplement_check(ctx: &LocalityContext, f: &ScalarCoeffs, bump: &CapBump) -> Result<f64> {
    if f.nmax() != ctx.n_trial || bump.coeffs.nmax() != ctx.n_test {
        return Err(Error::InvalidArgument("degree mismatch with the context".into()));
    }
    let m = &ctx.multipliers;
    // compose the three operators explicitly rather than using the identity
    let mut composite = f.clone();
    for mult in [&m.k_plus, &m.k_minus] {
        composite = crate::potentials::apply_multiplier(mult, &composite)?;
    }
    let composite = crate::potentials::apply_inverse_single_layer(&composite);
    let w = ctx.weak_restriction(&DVector::from_column_slice(composite.values()));
    Ok(w.dot(&DVector::from_column_slice(bump.coeffs.values())).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ctx(nt: usize, ns: usize, tc: f64) -> LocalityContext {
        build_context(Cap::new(tc).unwrap(), nt, ns, 1e-6).unwrap()
    }

    #[test]
    fn half_sphere_entries() {
        let c = ctx(4, 2, PI / 2.0);
        let g = c.gram_tt();
        assert_relative_eq!(g[(0, 0)], 0.5, max_relative = 1e-14);
        // <Y00, Y10> on the upper hemisphere: 2 pi sqrt(3)/(4 pi) * 1/2
        let closed = 3f64.sqrt() / 4.0;
        assert!((g[(0, coeff_index(1, 0))] - closed).abs() < 1e-14);
    }

    #[test]
    fn gram_agrees_with_grid_quadrature() {
        let c = ctx(6, 3, 1.1);
        let g = c.gram_tt();
        // independent integrator: fine product grid with a sharp mask
        let grid = SphereGrid::new(400, 16).unwrap();
        let cap = c.cap();
        let ys: Vec<Vec<f64>> = [(0usize, 0i64), (2, 1), (5, 1)]
            .iter()
            .map(|&(n, m)| crate::harmonics::sh_synthesize(&ScalarCoeffs::unit(6, n, m), &grid))
            .collect();
        let mask = crate::grid::cap_mask(&grid, &cap);
        let ip = |a: &[f64], b: &[f64]| {
            let v: Vec<f64> = a.iter().zip(b).zip(&mask).map(|((x, y), k)| x * y * *k as f64).collect();
            grid.integrate(&v)
        };
        assert!((ip(&ys[1], &ys[2]) - g[(coeff_index(2, 1), coeff_index(5, 1))]).abs() < 5e-3);
        assert!((ip(&ys[0], &ys[0]) - g[(0, 0)]).abs() < 5e-3);
    }

    #[test]
    fn near_full_sphere_is_identity() {
        let c = ctx(5, 3, PI - 1e-9);
        let g = c.gram_tt();
        assert!((g - DMatrix::identity(36, 36)).abs().max() < 1e-6);
    }

    #[test]
    fn orders_do_not_mix() {
        let c = ctx(5, 3, 0.9);
        let g = c.gram_tt();
        for i in 0..36 {
            for j in 0..36 {
                let (mi, mj) = (crate::harmonics::degree_order(i).1, crate::harmonics::degree_order(j).1);
                if mi != mj {
                    assert_eq!(g[(i, j)], 0.0);
                }
            }
        }
        assert!(g.clone().cholesky().is_some());
    }

    #[test]
    fn argument_checks() {
        let cap = Cap::new(1.0).unwrap();
        assert!(build_context(cap, 4, 5, 1e-6).is_err());
        assert!(build_context(cap, 4, 2, 0.0).is_err());
        assert!(build_context(cap, 4, 2, 1.0).is_err());
        assert!(off_sigma_subspace(&ctx(4, 4, 1.0)).is_err());
    }

    #[test]
    fn d_eps_contains_constant_and_respects_threshold() {
        let c = ctx(12, 8, PI / 3.0);
        let d = sharmonic_subspace(&c);
        assert!(d.orthonormality_error() < 1e-12);
        let one = DVector::from_fn(c.trial_len(), |i, _| (i == 0) as u8 as f64);
        assert!((d.project(&one) - &one).norm() < 1e-14);
        let bound = c.eps() * c.laplace_sigma_max();
        for j in 0..d.dim() {
            assert!(c.weak_divergence(&d.columns.column(j).into_owned()) <= bound * (1.0 + 1e-9));
        }
        assert!(d.residual <= bound * (1.0 + 1e-9));
    }

    #[test]
    fn d_eps_grows_with_trial_degree() {
        let dims: Vec<usize> = [8, 12, 16]
            .iter()
            .map(|&nt| sharmonic_subspace(&ctx(nt, 6, PI / 3.0)).dim())
            .collect();
        assert!(dims.windows(2).all(|w| w[0] < w[1]), "{dims:?}");
    }

    #[test]
    fn off_sigma_dimension_and_constraint() {
        let c = ctx(16, 10, PI / 3.0);
        let t = off_sigma_subspace(&c).unwrap();
        assert_eq!(t.dim(), 168);
        assert!(t.orthonormality_error() < 1e-12);
        assert!(c.gram_st().transpose().iter().count() > 0);
        assert!((c.gram_st() * &t.columns).abs().max() < 1e-12);
    }

    #[test]
    fn off_sigma_vectors_live_off_the_cap() {
        let c = ctx(16, 10, PI / 3.0);
        let t = off_sigma_subspace(&c).unwrap();
        let grid = SphereGrid::for_degree(16);
        let mask = crate::grid::cap_mask(&grid, &c.cap());
        let mut best: f64 = 0.0;
        let mut mean = 0.0;
        for j in 0..t.dim() {
            let f = ScalarCoeffs::from_values(16, t.columns.column(j).iter().copied().collect()).unwrap();
            let s = crate::harmonics::sh_synthesize(&f, &grid);
            let total: f64 = grid.integrate(&s.iter().map(|v| v * v).collect::<Vec<_>>());
            let outside: f64 = grid.integrate(
                &s.iter().zip(&mask).map(|(v, k)| v * v * (1 - *k) as f64).collect::<Vec<_>>(),
            );
            best = best.max(outside / total);
            mean += outside / total / t.dim() as f64;
        }
        // the cap holds a quarter of the sphere's area
        assert!(best >= 0.99, "{best}");
        assert!(mean > 0.8, "{mean}");
    }

    #[test]
    fn constant_is_orthogonal_to_bump_images() {
        let c = ctx(24, 16, PI / 3.0);
        let bump = CapBump::new(&c).unwrap();
        let one = ScalarCoeffs::unit(24, 0, 0);
        assert!(orthocomplement_check(&c, &one, &bump).unwrap() <= 1e-12);
    }

    #[test]
    fn d_eps_members_pass_the_orthocomplement_check() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let c = ctx(24, 16, PI / 3.0);
        let bump = CapBump::new(&c).unwrap();
        let d = sharmonic_subspace(&c);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let y = DVector::from_fn(d.dim(), |_, _| StandardNormal.sample(&mut rng));
        let v = &d.columns * y;
        let f = ScalarCoeffs::from_values(24, v.iter().copied().collect()).unwrap();
        let r_in = orthocomplement_check(&c, &f, &bump).unwrap();
        assert!(r_in <= 1e-4 * f.norm() * bump.norm, "{r_in}");
        // contrast: the most strongly constrained zero-mean direction of order 0
        let b0 = c.blocks().iter().find(|b| b.m == 0).unwrap();
        let s = svd_full_right(&b0.laplace_weak.columns(1, b0.trial_len() - 1).into_owned()).unwrap();
        let mut g = ScalarCoeffs::zeros(24);
        for (k, &n) in b0.trial_degrees.iter().skip(1).enumerate() {
            g.set(n, 0, s.v[(k, 0)]);
        }
        let r_out = orthocomplement_check(&c, &g, &bump).unwrap();
        assert!(r_out >= 10.0 * r_in / f.norm(), "{r_out} vs {r_in}");
        assert!(bump.spillover < 0.2);
    }

    #[test]
    fn trace_spectra_have_floor_and_kernel() {
        let c = ctx(8, 5, PI / 3.0);
        let s = trace_spectrum(&c, Trace::Plus).unwrap();
        assert!(s.sigma_min > s.floor);
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        let m = trace_spectrum(&c, Trace::Minus).unwrap();
        assert_eq!(m.sigma.len() + 1, s.sigma.len());
    }
}
