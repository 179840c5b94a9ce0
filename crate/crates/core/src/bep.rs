//! Bounded extremal problems on the cap.
//!
//! `BEP1` approximates data `f` by a zero-mean `phi` in the discrete `D+`
//! whose continuation `psi = T phi` has norm at most `c`. It is solved on the
//! orthonormal graph basis `(Q1, Q2)`, where the Lagrangian system becomes
//! diagonal in the right singular vectors of `Q1`.
//!
//! `BEP2` finds `h` on the cap with `|h| <= c` minimizing
//! `|E e - E (K+1/2) P h|`, with `E` the orthogonal projector onto the
//! witness space and `P` the extension by zero. Its solution gives the mode
//! estimate `<P phi_eps, h> - <phi_eps, e>` of `<T phi, e>`.
//!
//! `BEP3` is the adjoint problem: minimize `|psi - e|` subject to
//! `|T* psi| <= c`.

use nalgebra::{DMatrix, DVector};

use crate::continuation::{graph_space, witness_basis, GraphPair};
use crate::harmonics::ScalarCoeffs;
use crate::linalg::{svd, sym_eigen, Svd};
use crate::locality::LocalityContext;
use crate::{Error, Result};

/// Relative width at which bracketing stops.
const BRACKET_TOLERANCE: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 200;
/// Relative eigenvalue floor of the cap Gram used to build the `h` basis.
const GRAM_FLOOR: f64 = 1e-10;
/// `E e` counts as lying in the range of `M` below this relative residual.
const RANGE_TOLERANCE: f64 = 1e-10;

/// `q(p) = sum num_i / (a_i + p b_i)^2`, strictly decreasing for `p >= 0`.
struct Secular {
    num: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Secular {
    fn value(&self, p: f64) -> f64 {
        self.num
            .iter()
            .zip(&self.a)
            .zip(&self.b)
            .filter(|((n, _), _)| **n != 0.0)
            .map(|((n, a), b)| n / (a + p * b).powi(2))
            .sum()
    }

    fn derivative(&self, p: f64) -> f64 {
        self.num
            .iter()
            .zip(&self.a)
            .zip(&self.b)
            .filter(|((n, _), _)| **n != 0.0)
            .map(|((n, a), b)| -2.0 * n * b / (a + p * b).powi(3))
            .sum()
    }

    /// Root of `sqrt(q(p)) = c` for `p > 0`, given `q(0) > c^2`. Returns the
    /// root and the bisection trace of `(p, sqrt(q(p)))`.
    fn solve(&self, c: f64) -> Result<(f64, Vec<(f64, f64)>)> {
        let target = c * c;
        let mut trace = Vec::new();
        let probe = |p: f64, trace: &mut Vec<(f64, f64)>| {
            let q = self.value(p);
            trace.push((p, q.sqrt()));
            q
        };
        let (mut lo, mut hi) = (1.0, 1.0);
        if probe(1.0, &mut trace) > target {
            let mut k = 0;
            while probe(hi, &mut trace) > target {
                lo = hi;
                hi *= 2.0;
                k += 1;
                if k > MAX_DOUBLINGS {
                    return Err(Error::NumericalFailure(format!(
                        "multiplier not bracketed after {MAX_DOUBLINGS} doublings"
                    )));
                }
            }
        } else {
            let mut k = 0;
            while probe(lo, &mut trace) <= target {
                hi = lo;
                lo *= 0.5;
                k += 1;
                if k > MAX_DOUBLINGS {
                    return Err(Error::NumericalFailure(format!(
                        "multiplier not bracketed after {MAX_DOUBLINGS} halvings"
                    )));
                }
            }
        }
        while hi / lo - 1.0 > BRACKET_TOLERANCE {
            let mid = (lo * hi).sqrt();
            if probe(mid, &mut trace) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Newton on sqrt(q) - c, kept inside the bracket
        let mut p = 0.5 * (lo + hi);
        for _ in 0..2 {
            let q = self.value(p);
            let slope = self.derivative(p) / (2.0 * q.sqrt());
            if slope == 0.0 || !slope.is_finite() {
                break;
            }
            let next = p - (q.sqrt() - c) / slope;
            if next.is_finite() && next >= lo && next <= hi {
                p = next;
            }
        }
        Ok((p, trace))
    }
}

fn check_bound(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("bound c must be positive, got {c}")));
    }
    Ok(())
}

fn trial_vector(ctx: &LocalityContext, f: &ScalarCoeffs, what: &str) -> Result<DVector<f64>> {
    if f.nmax() > ctx.n_trial() {
        return Err(Error::InvalidArgument(format!(
            "{what} has degree {} above the trial degree {}",
            f.nmax(),
            ctx.n_trial()
        )));
    }
    Ok(DVector::from_column_slice(f.resized(ctx.n_trial()).values()))
}

fn to_coeffs(nmax: usize, v: &DVector<f64>) -> ScalarCoeffs {
    ScalarCoeffs::from_values(nmax, v.iter().copied().collect()).expect("coefficient length")
}

/// Solution of `BEP1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bep1Solution {
    pub phi_c: ScalarCoeffs,
    pub psi_c: ScalarCoeffs,
    /// Lagrange multiplier, zero when the bound is inactive.
    pub multiplier: f64,
    pub constraint_active: bool,
    /// `|phi_c - f|`.
    pub objective: f64,
}

/// Minimize `|phi - f|` over the discrete `D+` subject to `|T phi| <= c`.
pub fn solve_bep1(ctx: &LocalityContext, f: &ScalarCoeffs, c: f64) -> Result<Bep1Solution> {
    check_bound(c)?;
    let fv = trial_vector(ctx, f, "data")?;
    let g = graph_space(ctx)?;
    let s = &g.q1_svd;
    let coef = s.u.transpose() * &fv;
    let q2v = &g.q2 * &s.v;
    let d: Vec<f64> = (0..s.sigma.len()).map(|i| q2v.column(i).norm_squared()).collect();
    let sec = Secular {
        num: (0..d.len()).map(|i| d[i] * (s.sigma[i] * coef[i]).powi(2)).collect(),
        a: s.sigma.iter().map(|v| v * v).collect(),
        b: d.clone(),
    };
    let free = sec.value(0.0);
    let (lambda, active) = if free.is_finite() && free <= c * c {
        (0.0, false)
    } else {
        (sec.solve(c)?.0, true)
    };
    let y = DVector::from_fn(d.len(), |i, _| {
        s.sigma[i] * coef[i] / (s.sigma[i] * s.sigma[i] + lambda * d[i])
    });
    let phi = &g.q1 * (&s.v * &y);
    let psi = &q2v * &y;
    Ok(Bep1Solution {
        objective: (&phi - &fv).norm(),
        phi_c: to_coeffs(ctx.n_trial(), &phi),
        psi_c: to_coeffs(ctx.n_trial(), &psi),
        multiplier: lambda,
        constraint_active: active,
    })
}

/// `M = E (K+1/2) P` in orthonormal coordinates: witness coordinates on the
/// left, an `L2(Sigma)`-orthonormal basis of the test space on the right.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    /// Orthonormal witness basis in trial coefficients.
    pub witness: DMatrix<f64>,
    /// Test coefficients of the orthonormal `h` basis on the cap.
    pub h_basis: DMatrix<f64>,
    pub matrix: DMatrix<f64>,
    pub svd: Svd,
}

fn build_mode_operator(ctx: &LocalityContext) -> Result<ModeOperator> {
    let witness = witness_basis(ctx)?.columns;
    let lam = ctx.multipliers().k_plus.expanded(ctx.n_trial());
    let mut kw = witness.clone();
    for (i, l) in lam.iter().enumerate() {
        kw.row_mut(i).scale_mut(*l);
    }
    let (mu, q) = sym_eigen(&ctx.gram_ss());
    let mu_max = mu.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..mu.len()).filter(|&k| mu[k] > GRAM_FLOOR * mu_max).collect();
    let mut h_basis = q.select_columns(&keep);
    for (j, &k) in keep.iter().enumerate() {
        h_basis.column_mut(j).scale_mut(1.0 / mu[k].sqrt());
    }
    let matrix = (ctx.gram_st() * kw).transpose() * &h_basis;
    let svd = svd(&matrix)?;
    Ok(ModeOperator {
        witness,
        h_basis,
        matrix,
        svd,
    })
}

/// The cached `BEP2` operator of a context.
pub fn mode_operator(ctx: &LocalityContext) -> Result<&ModeOperator> {
    if let Some(m) = ctx.modes.get() {
        return Ok(m);
    }
    let m = build_mode_operator(ctx)?;
    Ok(ctx.modes.get_or_init(|| m))
}

/// Solution of `BEP2`.
#[derive(Debug, Clone)]
pub struct Bep2Solution {
    /// Test-degree coefficients of `h_c`; only its values on the cap matter.
    pub h_c: ScalarCoeffs,
    /// `|h_c|` in `L2(Sigma)`.
    pub h_norm: f64,
    /// Negative when saturated, zero otherwise.
    pub gamma: f64,
    /// `L_e(c) = |E e - M h_c|`.
    pub residual: f64,
    pub saturated: bool,
    /// `|(M*M - gamma) h - M* E e| / |M* E e|`.
    pub normal_residual: f64,
    /// `(gamma, |h(gamma)|)` pairs visited while bracketing.
    pub trace: Vec<(f64, f64)>,
}

/// Minimize `|E e - E (K+1/2) P h|` over `|h|_{L2(Sigma)} <= c`.
pub fn solve_bep2(ctx: &LocalityContext, e: &ScalarCoeffs, c: f64) -> Result<Bep2Solution> {
    check_bound(c)?;
    let ev = trial_vector(ctx, e, "mode")?;
    let op = mode_operator(ctx)?;
    let ee = op.witness.transpose() * &ev;
    let k = op.svd.sigma.len();
    let zero = || Bep2Solution {
        h_c: ScalarCoeffs::zeros(ctx.n_test()),
        h_norm: 0.0,
        gamma: 0.0,
        residual: 0.0,
        saturated: false,
        normal_residual: 0.0,
        trace: Vec::new(),
    };
    if ee.norm() == 0.0 {
        return Ok(zero());
    }
    let (sigma, u, v) = (&op.svd.sigma, &op.svd.u, &op.svd.v);
    let beta = u.transpose() * &ee;
    let cutoff = 1e-14 * op.svd.sigma_max();
    let pinv_sq: f64 = (0..k).filter(|&i| sigma[i] > cutoff).map(|i| (beta[i] / sigma[i]).powi(2)).sum();
    let (t, saturated, trace) = if pinv_sq.sqrt() <= c {
        (0.0, false, Vec::new())
    } else {
        let sec = Secular {
            num: (0..k).map(|i| (sigma[i] * beta[i]).powi(2)).collect(),
            a: sigma.iter().map(|s| s * s).collect(),
            b: vec![1.0; k],
        };
        let (t, trace) = sec.solve(c)?;
        (t, true, trace.into_iter().map(|(p, n)| (-p, n)).collect())
    };
    let y = DVector::from_fn(k, |i, _| {
        if t == 0.0 {
            if sigma[i] > cutoff {
                beta[i] / sigma[i]
            } else {
                0.0
            }
        } else {
            sigma[i] * beta[i] / (sigma[i] * sigma[i] + t)
        }
    });
    let a = v * y;
    let m = &op.matrix;
    let rhs = m.transpose() * &ee;
    let normal = m.transpose() * (m * &a) + &a * t - &rhs;
    let mut out = zero();
    out.h_c = to_coeffs(ctx.n_test(), &(&op.h_basis * &a));
    out.h_norm = a.norm();
    out.gamma = -t;
    out.residual = (&ee - m * &a).norm();
    out.saturated = saturated;
    out.normal_residual = if rhs.norm() > 0.0 { normal.norm() / rhs.norm() } else { normal.norm() };
    out.trace = trace;
    Ok(out)
}

/// Whether `E e` lies in the range of `M`, by pseudo-inverse residual.
pub fn mode_in_range(ctx: &LocalityContext, e: &ScalarCoeffs) -> Result<bool> {
    let ev = trial_vector(ctx, e, "mode")?;
    let op = mode_operator(ctx)?;
    let ee = op.witness.transpose() * &ev;
    let cutoff = 1e-14 * op.svd.sigma_max();
    let keep: Vec<usize> = (0..op.svd.sigma.len()).filter(|&i| op.svd.sigma[i] > cutoff).collect();
    let u = op.svd.u.select_columns(&keep);
    let r = &ee - &u * (u.transpose() * &ee);
    Ok(r.norm() <= RANGE_TOLERANCE * ee.norm())
}

/// Prior information for the mode estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePriors {
    /// Bound on the data noise norm.
    pub eps_noise: f64,
    /// Bound on `|phi|`.
    pub norm_phi: f64,
    /// Bound on `|T phi|`.
    pub norm_tphi: f64,
}

#[derive(Debug, Clone)]
pub struct ModeEstimate {
    pub estimate: f64,
    pub bound: f64,
    pub solution: Bep2Solution,
}

/// Estimate `<T phi, e>` from noisy data `phi_noisy` with a guaranteed error
/// bound `(|phi| + |T phi|) L_e(c) + eps (c + |e|)`, plus the rounding error
/// of the two inner products (the coefficients of `h` grow like `c`).
pub fn estimate_mode(
    ctx: &LocalityContext,
    phi_noisy: &ScalarCoeffs,
    e: &ScalarCoeffs,
    c: f64,
    priors: ModePriors,
) -> Result<ModeEstimate> {
    let ModePriors {
        eps_noise,
        norm_phi,
        norm_tphi,
    } = priors;
    if [eps_noise, norm_phi, norm_tphi].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("priors must be finite and nonnegative".into()));
    }
    let solution = solve_bep2(ctx, e, c)?;
    let phi = trial_vector(ctx, phi_noisy, "data")?;
    let ev = trial_vector(ctx, e, "mode")?;
    let h = DVector::from_column_slice(solution.h_c.values());
    let estimate = ctx.weak_restriction(&phi).dot(&h) - phi.dot(&ev);
    let n = (ctx.trial_len() + ctx.test_len()) as f64;
    let gamma_n = n * f64::EPSILON / (1.0 - n * f64::EPSILON);
    let rounding = 2.0 * gamma_n * phi.norm() * (h.norm() + ev.norm());
    let bound = (norm_phi + norm_tphi) * solution.residual + eps_noise * (c + ev.norm()) + rounding;
    Ok(ModeEstimate {
        estimate,
        bound,
        solution,
    })
}

/// Solution of the adjoint problem `BEP3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bep3Solution {
    pub psi_c: ScalarCoeffs,
    pub multiplier: f64,
    pub constraint_active: bool,
    /// `J_e(c) = |psi_c - e|`.
    pub objective: f64,
    /// `|T* psi_c|`.
    pub adjoint_norm: f64,
}

/// SVD of `C = S1^{-1} V1^T Q2^T`, for which `|T* psi| = |C psi|`.
fn adjoint_factor(ctx: &LocalityContext) -> Result<&Svd> {
    if let Some(s) = ctx.adjoint.get() {
        return Ok(s);
    }
    let g = graph_space(ctx)?;
    let s = &g.q1_svd;
    let inv = DMatrix::from_diagonal(&s.sigma.map(|v| 1.0 / v));
    let c = inv * s.v.transpose() * g.q2.transpose();
    let f = svd(&c)?;
    Ok(ctx.adjoint.get_or_init(|| f))
}

/// Minimize `|psi - e|` subject to `|T* psi| <= c`.
pub fn solve_bep3_adjoint(ctx: &LocalityContext, e: &ScalarCoeffs, c: f64) -> Result<Bep3Solution> {
    check_bound(c)?;
    let ev = trial_vector(ctx, e, "mode")?;
    let f = adjoint_factor(ctx)?;
    let beta = f.v.transpose() * &ev;
    let k = f.sigma.len();
    let sec = Secular {
        num: (0..k).map(|i| (f.sigma[i] * beta[i]).powi(2)).collect(),
        a: vec![1.0; k],
        b: f.sigma.iter().map(|s| s * s).collect(),
    };
    let (lambda, active) = if sec.value(0.0) <= c * c {
        (0.0, false)
    } else {
        (sec.solve(c)?.0, true)
    };
    let shrink = DVector::from_fn(k, |i, _| {
        let s2 = f.sigma[i] * f.sigma[i];
        lambda * s2 / (1.0 + lambda * s2) * beta[i]
    });
    let delta = &f.v * shrink;
    let psi = &ev - &delta;
    Ok(Bep3Solution {
        adjoint_norm: sec.value(lambda).sqrt(),
        objective: delta.norm(),
        psi_c: to_coeffs(ctx.n_trial(), &psi),
        multiplier: lambda,
        constraint_active: active,
    })
}

/// The bound `2 min_{c~} (c J_e(c~) + c~ |f_n - phi_true|)` together with
/// the minimizing `c~`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakBound {
    pub bound: f64,
    pub c_tilde: f64,
    /// `J_e` at each grid point.
    pub j_values: Vec<f64>,
}

pub fn weak_convergence_bound(
    ctx: &LocalityContext,
    f_n: &ScalarCoeffs,
    phi_true: &ScalarCoeffs,
    e: &ScalarCoeffs,
    c: f64,
    c_grid: &[f64],
) -> Result<WeakBound> {
    check_bound(c)?;
    if c_grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid of adjoint bounds".into()));
    }
    let mismatch = (trial_vector(ctx, f_n, "data")? - trial_vector(ctx, phi_true, "truth")?).norm();
    let mut j_values = Vec::with_capacity(c_grid.len());
    let mut best = (f64::INFINITY, c_grid[0]);
    for &ct in c_grid {
        let j = solve_bep3_adjoint(ctx, e, ct)?.objective;
        j_values.push(j);
        let value = 2.0 * (c * j + ct * mismatch);
        if value < best.0 {
            best = (value, ct);
        }
    }
    Ok(WeakBound {
        bound: best.0,
        c_tilde: best.1,
        j_values,
    })
}

/// Bound and empirical error `|<psi_c - psi, e>|` of the `BEP1`
/// reconstruction from `f_n` for a known pair.
pub fn weak_convergence_check(
    ctx: &LocalityContext,
    pair: &GraphPair,
    f_n: &ScalarCoeffs,
    e: &ScalarCoeffs,
    c: f64,
    c_grid: &[f64],
) -> Result<(WeakBound, f64)> {
    let wb = weak_convergence_bound(ctx, f_n, &pair.phi, e, c, c_grid)?;
    let sol = solve_bep1(ctx, f_n, c)?;
    let ev = e.resized(ctx.n_trial());
    let empirical = (sol.psi_c.dot(&ev) - pair.psi.dot(&ev)).abs();
    Ok((wb, empirical))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::generate_pair;
    use crate::grid::Cap;
    use crate::locality::build_context;
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    fn ctx() -> &'static LocalityContext {
        static CTX: OnceLock<LocalityContext> = OnceLock::new();
        CTX.get_or_init(|| build_context(Cap::new(PI / 3.0).unwrap(), 12, 8, 1e-6).unwrap())
    }

    #[test]
    fn secular_root_hits_target() {
        let s = Secular {
            num: vec![4.0, 1.0],
            a: vec![1.0, 0.5],
            b: vec![1.0, 2.0],
        };
        let (p, trace) = s.solve(1.0).unwrap();
        assert!((s.value(p).sqrt() - 1.0).abs() < 1e-12);
        assert!(!trace.is_empty());
    }

    #[test]
    fn bep1_rejects_bad_bound() {
        let f = ScalarCoeffs::zeros(12);
        assert!(matches!(solve_bep1(ctx(), &f, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(solve_bep1(ctx(), &f, f64::NAN), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bep1_recovers_feasible_truth() {
        let pair = generate_pair(ctx(), 3, 0.5).unwrap();
        let c = 1.05 * pair.psi.norm();
        let sol = solve_bep1(ctx(), &pair.phi, c).unwrap();
        assert!(!sol.constraint_active);
        assert!(sol.objective < 1e-9, "{}", sol.objective);
        assert!(sol.psi_c.max_abs_diff(&pair.psi) < 1e-7 * pair.psi.norm());
    }

    #[test]
    fn bep1_saturates_when_bound_is_tight() {
        let pair = generate_pair(ctx(), 4, 0.5).unwrap();
        let c = 0.3 * pair.psi.norm();
        let sol = solve_bep1(ctx(), &pair.phi, c).unwrap();
        assert!(sol.constraint_active && sol.multiplier > 0.0);
        assert!((sol.psi_c.norm() / c - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bep2_zero_mode() {
        let e = ScalarCoeffs::zeros(12);
        let s = solve_bep2(ctx(), &e, 1.0).unwrap();
        assert_eq!(s.h_norm, 0.0);
        assert_eq!(s.residual, 0.0);
        let est = estimate_mode(
            ctx(),
            &ScalarCoeffs::unit(12, 2, 1),
            &e,
            2.0,
            ModePriors {
                eps_noise: 0.1,
                norm_phi: 1.0,
                norm_tphi: 1.0,
            },
        )
        .unwrap();
        assert_eq!(est.estimate, 0.0);
        assert!((est.bound - 0.2).abs() < 1e-15);
    }

    #[test]
    fn bep2_saturated_normal_equation() {
        let e = ScalarCoeffs::unit(12, 1, 0);
        let s = solve_bep2(ctx(), &e, 1.0).unwrap();
        assert!(s.saturated && s.gamma < 0.0);
        assert!((s.h_norm - 1.0).abs() < 1e-8);
        assert!(s.normal_residual < 1e-10, "{}", s.normal_residual);
        let mut tr = s.trace.clone();
        tr.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(tr.windows(2).all(|w| w[0].0 == w[1].0 || w[0].1 < w[1].1));
    }

    #[test]
    fn bep3_trivial_and_monotone() {
        let zero = solve_bep3_adjoint(ctx(), &ScalarCoeffs::zeros(12), 1.0).unwrap();
        assert_eq!(zero.objective, 0.0);
        let e = ScalarCoeffs::unit(12, 2, 0);
        let js: Vec<f64> = [0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&c| solve_bep3_adjoint(ctx(), &e, c).unwrap().objective)
            .collect();
        assert!(js.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{js:?}");
    }

    #[test]
    fn weak_bound_needs_grid() {
        let f = ScalarCoeffs::zeros(12);
        assert!(weak_convergence_bound(ctx(), &f, &f, &f, 1.0, &[]).is_err());
    }
}
