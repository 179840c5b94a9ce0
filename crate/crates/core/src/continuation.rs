//! Continuation between the two Hardy potentials of a field that is locally
//! divergence-free on the cap.
//!
//! A zero-mean `phi` lies in the discrete `D+` when `P phi = P (K+1/2) g` for
//! a witness `g` in `D_eps`; then `T(+->-) phi = g - phi`. Symmetrically
//! `T(-->+) psi = g' - psi + <psi, 1>` with `P (K-1/2) g' = -P psi` and `g'`
//! of zero mean. Here `P` is the weak restriction `G_st`.
//!
//! `P (K +- 1/2)` restricted to `D_eps` is injective in theory but its
//! smallest singular values decay without bound. Witnesses are therefore
//! drawn from `W`: the constant plus the right singular directions of
//! `P (K+1/2)` on the zero-mean part of `D_eps` whose singular values are at
//! least `eps` times the largest one.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::harmonics::ScalarCoeffs;
use crate::linalg::{null_space, orthonormalize, svd, sym_eigen, DenseOperator, Svd};
use crate::locality::{LocalityContext, OrderBlock, SubspaceBasis};
use crate::{Error, Result};

/// Witness columns and least-squares factors for one order.
#[derive(Debug, Clone)]
pub struct WitnessBlock {
    /// Local witness columns; in the `m = 0` block column 0 is the constant.
    pub w: DMatrix<f64>,
    pub has_constant: bool,
    /// SVD of `G_st (K+1/2) w`.
    plus: Svd,
    /// SVD of `G_st (K-1/2) w0`, with `w0` the zero-mean columns.
    minus: Svd,
}

impl WitnessBlock {
    pub fn zero_mean(&self) -> DMatrix<f64> {
        let skip = self.has_constant as usize;
        self.w.columns(skip, self.w.ncols() - skip).into_owned()
    }
}

/// The witness space `W` and the mean-carrying tail direction.
#[derive(Debug, Clone)]
pub struct WitnessSpace {
    pub blocks: Vec<WitnessBlock>,
    /// Unit element of `T_off` with the largest mean, if any.
    pub mean_tail: Option<DVector<f64>>,
    /// Condition numbers of the two least-squares systems.
    pub plus_condition: f64,
    pub minus_condition: f64,
}

fn diag(b: &OrderBlock, f: impl Fn(usize) -> f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        b.trial_len(),
        b.trial_degrees.iter().map(|&n| f(n)),
    ))
}

fn condition(svds: impl Iterator<Item = Svd>) -> f64 {
    let (mut hi, mut lo) = (0.0f64, f64::INFINITY);
    for s in svds {
        for &v in s.sigma.iter() {
            hi = hi.max(v);
            lo = lo.min(v);
        }
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn build_witness(ctx: &LocalityContext) -> Result<WitnessSpace> {
    let m = ctx.multipliers();
    let mut raw = Vec::new();
    for b in ctx.blocks() {
        let d0 = b.d_eps_zero_mean();
        let kp = diag(b, |n| m.k_plus.at(n));
        raw.push((d0.clone(), svd(&(&b.gram_st * kp * d0))?));
    }
    let sigma_max = raw.iter().map(|(_, s)| s.sigma_max()).fold(0.0, f64::max);
    let threshold = ctx.eps() * sigma_max;
    let mut blocks = Vec::new();
    for (b, (d0, s)) in ctx.blocks().iter().zip(raw) {
        let keep: Vec<usize> = (0..s.sigma.len()).filter(|&k| s.sigma[k] >= threshold && s.sigma[k] > 0.0).collect();
        let w0 = d0 * s.v.select_columns(&keep);
        let w = if b.has_constant {
            let mut w = DMatrix::zeros(b.trial_len(), w0.ncols() + 1);
            w[(0, 0)] = 1.0;
            w.columns_mut(1, w0.ncols()).copy_from(&w0);
            w
        } else {
            w0.clone()
        };
        let kp = diag(b, |n| m.k_plus.at(n));
        let km = diag(b, |n| m.k_minus.at(n));
        let plus = svd(&(&b.gram_st * kp * &w))?;
        let minus = svd(&(&b.gram_st * km * &w0))?;
        blocks.push(WitnessBlock {
            w,
            has_constant: b.has_constant,
            plus,
            minus,
        });
    }
    let mean_tail = ctx.blocks().iter().find(|b| b.has_constant).and_then(|b| {
        let t = &b.t_off;
        if t.ncols() == 0 {
            return None;
        }
        let local = t * t.row(0).transpose();
        let norm = local.norm();
        if norm <= 1e-10 {
            return None;
        }
        let mut v = DVector::zeros(ctx.trial_len());
        for (i, &gi) in b.trial_index.iter().enumerate() {
            v[gi] = local[i] / norm;
        }
        Some(v)
    });
    Ok(WitnessSpace {
        plus_condition: condition(blocks.iter().map(|b| b.plus.clone())),
        minus_condition: condition(blocks.iter().map(|b| b.minus.clone())),
        blocks,
        mean_tail,
    })
}

/// The cached witness space of a context.
pub fn witness_space(ctx: &LocalityContext) -> Result<&WitnessSpace> {
    if let Some(w) = ctx.witness.get() {
        return Ok(w);
    }
    let w = build_witness(ctx)?;
    Ok(ctx.witness.get_or_init(|| w))
}

/// `W` as global trial-layout columns.
pub fn witness_basis(ctx: &LocalityContext) -> Result<SubspaceBasis> {
    let ws = witness_space(ctx)?;
    let parts: Vec<DMatrix<f64>> = ws.blocks.iter().map(|b| b.w.clone()).collect();
    let columns = ctx.embed_columns(&parts);
    let residual = (0..columns.ncols())
        .map(|j| ctx.weak_divergence(&columns.column(j).into_owned()))
        .fold(0.0, f64::max);
    Ok(SubspaceBasis {
        label: "W".into(),
        columns,
        residual,
    })
}

fn to_vec(f: &ScalarCoeffs) -> DVector<f64> {
    DVector::from_column_slice(f.values())
}

fn to_coeffs(ctx: &LocalityContext, v: &DVector<f64>) -> ScalarCoeffs {
    ScalarCoeffs::from_values(ctx.n_trial(), v.iter().copied().collect()).expect("trial length")
}

fn scale_by(ctx: &LocalityContext, v: &DVector<f64>, f: impl Fn(usize) -> f64) -> DVector<f64> {
    let lam: Vec<f64> = (0..=ctx.n_trial())
        .flat_map(|n| std::iter::repeat_n(f(n), 2 * n + 1))
        .collect();
    DVector::from_iterator(v.len(), v.iter().zip(&lam).map(|(a, b)| a * b))
}

/// A pair of potentials whose field `B+ phi + B- psi` is locally
/// divergence-free on the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPair {
    pub phi: ScalarCoeffs,
    pub psi: ScalarCoeffs,
    pub g: ScalarCoeffs,
    /// `|G_st (normal component)| / |field|`.
    pub locality_residual: f64,
    /// `|G_st Lambda g|`, the weak surface divergence on the cap.
    pub divfree_residual: f64,
}

/// Weak normal residual of `B+ phi + B- psi` relative to the field norm.
pub fn locality_residual(ctx: &LocalityContext, phi: &ScalarCoeffs, psi: &ScalarCoeffs) -> f64 {
    let m = ctx.multipliers();
    let normal = scale_by(ctx, &to_vec(phi), |n| m.k_minus.at(n))
        + scale_by(ctx, &to_vec(psi), |n| m.k_plus.at(n));
    let field_sq: f64 = (0..=ctx.n_trial())
        .flat_map(|n| {
            let (a, b) = (n as f64 / (2 * n + 1) as f64, (n + 1) as f64 / (2 * n + 1) as f64);
            let lo = n * n;
            (lo..lo + 2 * n + 1).map(move |k| (k, a, b))
        })
        .map(|(k, a, b)| a * phi.values()[k].powi(2) + b * psi.values()[k].powi(2))
        .sum();
    if field_sq == 0.0 {
        return 0.0;
    }
    ctx.weak_norm(&normal) / field_sq.sqrt()
}

/// Draw a witness from `W` and a tail from `T_off`, and build
/// `phi = (K+1/2) g + t` (mean restored), `psi = g - phi`, scaled so that
/// `|phi| = 1`. `tail_amplitude` sets `|t|` relative to `|(K+1/2) g|`.
pub fn generate_pair(ctx: &LocalityContext, seed: u64, tail_amplitude: f64) -> Result<GraphPair> {
    if tail_amplitude < 0.0 || !tail_amplitude.is_finite() {
        return Err(Error::InvalidArgument(format!("tail amplitude {tail_amplitude}")));
    }
    let w = witness_basis(ctx)?;
    if w.dim() <= 1 {
        return Err(Error::Infeasible(
            "witness space holds only constants; raise eps or the trial degree".into(),
        ));
    }
    let t_off = crate::locality::off_sigma_subspace(ctx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = DVector::from_fn(w.dim(), |_, _| StandardNormal.sample(&mut rng));
    let tau = DVector::from_fn(t_off.dim(), |_, _| StandardNormal.sample(&mut rng));
    generate_pair_from(ctx, &(&w.columns * y), &(&t_off.columns * tau), tail_amplitude)
}

/// Deterministic core of [`generate_pair`] for a given witness and tail
/// direction.
pub fn generate_pair_from(
    ctx: &LocalityContext,
    g: &DVector<f64>,
    tail: &DVector<f64>,
    tail_amplitude: f64,
) -> Result<GraphPair> {
    let m = ctx.multipliers();
    let ws = witness_space(ctx)?;
    let kg = scale_by(ctx, g, |n| m.k_plus.at(n));
    let mut phi = kg.clone();
    if tail_amplitude > 0.0 && tail.norm() > 0.0 {
        phi += tail * (tail_amplitude * kg.norm() / tail.norm());
    }
    match &ws.mean_tail {
        Some(t1) => {
            let alpha = -phi[0] / t1[0];
            phi += t1 * alpha;
        }
        None => phi[0] = 0.0,
    }
    phi[0] = 0.0;
    let psi = g - &phi;
    let scale = 1.0 / phi.norm();
    if !scale.is_finite() {
        return Err(Error::NumericalFailure("generated phi vanishes".into()));
    }
    let (phi, psi, g) = (phi * scale, psi * scale, g * scale);
    let (phi, psi, g) = (to_coeffs(ctx, &phi), to_coeffs(ctx, &psi), to_coeffs(ctx, &g));
    Ok(GraphPair {
        locality_residual: locality_residual(ctx, &phi, &psi),
        divfree_residual: ctx.weak_divergence(&to_vec(&g)),
        phi,
        psi,
        g,
    })
}

/// Output of a continuation map.
#[derive(Debug, Clone)]
pub struct Continued {
    pub output: ScalarCoeffs,
    pub witness: ScalarCoeffs,
    pub fit_residual: f64,
    pub condition: f64,
}

fn solve_ls(s: &Svd, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
    if s.sigma.is_empty() {
        return (DVector::zeros(s.v.nrows()), rhs.norm_squared());
    }
    let c = s.u.transpose() * rhs;
    let y = &s.v * DVector::from_fn(c.len(), |k, _| if s.sigma[k] > 0.0 { c[k] / s.sigma[k] } else { 0.0 });
    let r = rhs - &s.u * &c;
    (y, r.norm_squared())
}

fn check_input(ctx: &LocalityContext, f: &ScalarCoeffs) -> Result<()> {
    if f.nmax() != ctx.n_trial() {
        return Err(Error::InvalidArgument(format!(
            "input degree {} differs from trial degree {}",
            f.nmax(),
            ctx.n_trial()
        )));
    }
    Ok(())
}

/// `T(+->-)`: least-squares witness over `W`, then `psi = g - phi`.
pub fn apply_t_plus_to_minus(ctx: &LocalityContext, phi: &ScalarCoeffs) -> Result<Continued> {
    check_input(ctx, phi)?;
    if !phi.is_zero_mean() {
        return Err(Error::InvalidArgument("T(+->-) acts on zero-mean potentials".into()));
    }
    let ws = witness_space(ctx)?;
    let rhs = ctx.weak_restriction(&to_vec(phi));
    let mut g = DVector::zeros(ctx.trial_len());
    let mut res_sq = 0.0;
    for (b, wb) in ctx.blocks().iter().zip(&ws.blocks) {
        let r = b.gather_test(&rhs);
        if r.is_empty() {
            continue;
        }
        let (y, rs) = solve_ls(&wb.plus, &r);
        res_sq += rs;
        let local = &wb.w * y;
        for (i, &gi) in b.trial_index.iter().enumerate() {
            g[gi] = local[i];
        }
    }
    finish(ctx, phi, g, res_sq.sqrt(), ws.plus_condition, |g, f| g - f)
}

/// `T(-->+)`: zero-mean witness `g'` with `P (K-1/2) g' = -P psi`, then
/// `phi = g' - psi` with its mean removed.
pub fn apply_t_minus_to_plus(ctx: &LocalityContext, psi: &ScalarCoeffs) -> Result<Continued> {
    check_input(ctx, psi)?;
    let ws = witness_space(ctx)?;
    let rhs = -ctx.weak_restriction(&to_vec(psi));
    let mut g = DVector::zeros(ctx.trial_len());
    let mut res_sq = 0.0;
    for (b, wb) in ctx.blocks().iter().zip(&ws.blocks) {
        let r = b.gather_test(&rhs);
        if r.is_empty() {
            continue;
        }
        let (y, rs) = solve_ls(&wb.minus, &r);
        res_sq += rs;
        let local = wb.zero_mean() * y;
        for (i, &gi) in b.trial_index.iter().enumerate() {
            g[gi] = local[i];
        }
    }
    finish(ctx, psi, g, res_sq.sqrt(), ws.minus_condition, |g, f| {
        let mut out = g - f;
        out[0] = 0.0;
        out
    })
}

fn finish(
    ctx: &LocalityContext,
    input: &ScalarCoeffs,
    g: DVector<f64>,
    fit: f64,
    condition: f64,
    combine: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
) -> Result<Continued> {
    let tolerance = ctx.membership_tolerance() * input.norm();
    if fit > tolerance {
        return Err(Error::NotInDomain {
            residual: fit,
            tolerance,
        });
    }
    let out = combine(&g, &to_vec(input));
    Ok(Continued {
        output: to_coeffs(ctx, &out),
        witness: to_coeffs(ctx, &g),
        fit_residual: fit,
        condition,
    })
}

/// Orthonormal basis of the discrete graph `{(phi, T phi)}` with derived
/// factorizations used by the extremal problems.
#[derive(Debug, Clone)]
pub struct GraphSpace {
    /// `phi` rows of the orthonormal graph basis (`n x k`).
    pub q1: DMatrix<f64>,
    /// `psi` rows (`n x k`).
    pub q2: DMatrix<f64>,
    /// Eigenpairs of `Q1^T Q1`, ascending.
    pub h_values: DVector<f64>,
    pub h_vectors: DMatrix<f64>,
    pub q1_svd: Svd,
    pub q2_svd: Svd,
    /// Largest locality residual over the basis pairs.
    pub residual: f64,
}

impl GraphSpace {
    pub fn dim(&self) -> usize {
        self.q1.ncols()
    }
}

fn build_graph(ctx: &LocalityContext) -> Result<GraphSpace> {
    let m = ctx.multipliers();
    let w = witness_basis(ctx)?.columns;
    let t = match crate::locality::off_sigma_subspace(ctx) {
        Ok(t) => t.columns,
        Err(_) => DMatrix::zeros(ctx.trial_len(), 0),
    };
    let n = ctx.trial_len();
    let (kw, kt) = (w.ncols(), t.ncols());
    let mut l = DMatrix::zeros(2 * n, kw + kt);
    for j in 0..kw {
        let col = w.column(j).into_owned();
        let p = scale_by(ctx, &col, |d| m.k_plus.at(d));
        let q = -scale_by(ctx, &col, |d| m.k_minus.at(d));
        l.view_mut((0, j), (n, 1)).copy_from(&p);
        l.view_mut((n, j), (n, 1)).copy_from(&q);
    }
    for j in 0..kt {
        l.view_mut((0, kw + j), (n, 1)).copy_from(&t.column(j));
        l.view_mut((n, kw + j), (n, 1)).copy_from(&(-t.column(j)));
    }
    // phi must have zero mean
    let row = l.rows(0, 1).into_owned();
    let z = if row.norm() > 0.0 { null_space(&row) } else { DMatrix::identity(kw + kt, kw + kt) };
    let lz = &l * z;
    let r = lz.clone().qr().r();
    let rmax = r.diagonal().abs().max();
    let rank_ok = r.diagonal().iter().all(|d| d.abs() > 1e-13 * rmax);
    if !rank_ok {
        return Err(Error::NumericalFailure("graph parametrization lost rank".into()));
    }
    let q = orthonormalize(&lz);
    let q1 = q.rows(0, n).into_owned();
    let q2 = q.rows(n, n).into_owned();
    let (h_values, h_vectors) = sym_eigen(&(q1.transpose() * &q1));
    let q1_svd = svd(&q1)?;
    let q2_svd = svd(&q2)?;
    let mut residual: f64 = 0.0;
    for j in 0..q.ncols() {
        let phi = to_coeffs(ctx, &q1.column(j).into_owned());
        let psi = to_coeffs(ctx, &q2.column(j).into_owned());
        residual = residual.max(locality_residual(ctx, &phi, &psi));
    }
    Ok(GraphSpace {
        q1,
        q2,
        h_values,
        h_vectors,
        q1_svd,
        q2_svd,
        residual,
    })
}

/// The cached graph space of a context.
pub fn graph_space(ctx: &LocalityContext) -> Result<&GraphSpace> {
    if let Some(g) = ctx.graph.get() {
        return Ok(g);
    }
    let g = build_graph(ctx)?;
    Ok(ctx.graph.get_or_init(|| g))
}

/// The graph as a subspace basis over stacked `(phi, psi)` coefficients.
pub fn graph_basis(ctx: &LocalityContext) -> Result<SubspaceBasis> {
    let g = graph_space(ctx)?;
    let n = ctx.trial_len();
    let mut columns = DMatrix::zeros(2 * n, g.dim());
    columns.rows_mut(0, n).copy_from(&g.q1);
    columns.rows_mut(n, n).copy_from(&g.q2);
    Ok(SubspaceBasis {
        label: "graph".into(),
        columns,
        residual: g.residual,
    })
}

fn inverse_sigma(s: &Svd) -> DMatrix<f64> {
    DMatrix::from_diagonal(&s.sigma.map(|v| 1.0 / v))
}

/// `T*`: with `Q1 = U1 S1 V1^T`, `T = Q2 V1 S1^{-1}` on the `U1` coordinates
/// of `D+`, so `T* = U1 S1^{-1} V1^T Q2^T`.
pub fn adjoint_t(ctx: &LocalityContext) -> Result<DenseOperator> {
    let g = graph_space(ctx)?;
    let s = &g.q1_svd;
    let m = &s.u * inverse_sigma(s) * s.v.transpose() * g.q2.transpose();
    Ok(DenseOperator::new("L2 (psi side)", "D+ (phi side)", m))
}

/// `(T^{-1})* = U2 S2^{-1} V2^T Q1^T`, the adjoint of `T(-->+)` on the graph.
pub fn adjoint_t_inverse(ctx: &LocalityContext) -> Result<DenseOperator> {
    let g = graph_space(ctx)?;
    let s = &g.q2_svd;
    let m = &s.u * inverse_sigma(s) * s.v.transpose() * g.q1.transpose();
    Ok(DenseOperator::new("L2 (phi side)", "D- (psi side)", m))
}

/// `T` on the graph: `Q2 Q1^+`.
pub fn graph_t(ctx: &LocalityContext) -> Result<DenseOperator> {
    let g = graph_space(ctx)?;
    let s = &g.q1_svd;
    let m = &g.q2 * &s.v * inverse_sigma(s) * s.u.transpose();
    Ok(DenseOperator::new("D+ (phi side)", "L2 (psi side)", m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cap;
    use crate::locality::build_context;
    use std::f64::consts::PI;

    fn ctx() -> LocalityContext {
        build_context(Cap::new(PI / 3.0).unwrap(), 10, 6, 1e-6).unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        let c = ctx();
        let z = ScalarCoeffs::zeros(10);
        let r = apply_t_plus_to_minus(&c, &z).unwrap();
        assert_eq!(r.output, z);
        assert_eq!(r.witness, z);
        let r = apply_t_minus_to_plus(&c, &z).unwrap();
        assert_eq!(r.output, z);
    }

    #[test]
    fn generated_pair_roundtrips() {
        let c = ctx();
        let p = generate_pair(&c, 1, 0.5).unwrap();
        assert!(p.phi.is_zero_mean());
        assert!(p.locality_residual < 1e-8);
        let back = apply_t_plus_to_minus(&c, &p.phi).unwrap();
        assert!(back.output.max_abs_diff(&p.psi) < 1e-8 * p.psi.norm());
        let fwd = apply_t_minus_to_plus(&c, &p.psi).unwrap();
        assert!(fwd.output.max_abs_diff(&p.phi) < 1e-8);
    }

    #[test]
    fn random_potential_is_rejected() {
        let c = ctx();
        let v: Vec<f64> = (0..121).map(|k| if k == 0 { 0.0 } else { (k as f64 * 1.3).sin() }).collect();
        let f = ScalarCoeffs::from_values(10, v).unwrap();
        match apply_t_plus_to_minus(&c, &f) {
            Err(Error::NotInDomain { residual, tolerance }) => assert!(residual > 100.0 * tolerance),
            other => panic!("expected NotInDomain, got {other:?}"),
        }
    }

    #[test]
    fn mean_is_rejected() {
        let c = ctx();
        assert!(apply_t_plus_to_minus(&c, &ScalarCoeffs::unit(10, 0, 0)).is_err());
    }

    #[test]
    fn graph_contains_generated_pairs() {
        let c = ctx();
        let b = graph_basis(&c).unwrap();
        assert!(b.orthonormality_error() < 1e-10);
        let p = generate_pair(&c, 3, 0.3).unwrap();
        let v = DVector::from_iterator(242, p.phi.values().iter().chain(p.psi.values()).copied());
        assert!((b.project(&v) - &v).norm() < 1e-10 * v.norm());
    }
}
