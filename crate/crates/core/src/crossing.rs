//! Crossing detection along a band-1 trajectory and the transfer operator
//!
//! ```text
//! T_{mu,alpha,beta} phi(y) = int exp(i (mu - alpha.beta/2) s^2) exp(i s beta.y) phi(y - s alpha) ds
//!                          = sqrt(pi / (-i mu)) exp(-i (beta.y - alpha.D)^2 / (4 mu)) phi
//! ```
//!
//! The unitary factor is the metaplectic operator of the linear flow of
//! `K = (beta.y - alpha.eta)^2` at time `1/(4 mu)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_signed, OdeControls, Trace, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::gaussian::{metaplectic_apply_with_root, PolyGaussian, SiegelMatrix, SymplecticBlocks};
use crate::grid::GridSpec;
use crate::linalg::{c64, CMat, RMat, I};
use crate::models::ModelSpec;

/// Relative floor on `|mu|` against the characteristic rate of `f` along the flow.
pub const MU_MIN_REL: f64 = 1e-8;
/// Couplings below this spawn no transition.
pub const GAMMA_MIN: f64 = 1e-12;

/// Parameters `(mu, alpha, beta)` of one transfer operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferParams {
    pub mu: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl TransferParams {
    pub fn new(mu: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::Dimension("alpha and beta lengths differ".into()));
        }
        if mu == 0.0 || !mu.is_finite() {
            return Err(Error::ZeroMu);
        }
        Ok(TransferParams { mu, alpha, beta })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha_dot_beta(&self) -> f64 {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    /// `sqrt(pi / (-i mu))`, the modulus-carrying scalar of the operator.
    pub fn prefactor(&self) -> Complex64 {
        (c64(PI, 0.0) / (-I * self.mu)).sqrt()
    }

    /// `T_{lambda^2 mu, lambda alpha, lambda beta} = |lambda|^{-1} T_{mu, alpha, beta}`.
    pub fn rescaled(&self, lambda: f64) -> TransferParams {
        TransferParams {
            mu: lambda * lambda * self.mu,
            alpha: self.alpha.iter().map(|a| lambda * a).collect(),
            beta: self.beta.iter().map(|b| lambda * b).collect(),
        }
    }

    /// Linear flow of `K = (beta.y - alpha.eta)^2` at time `t`.
    pub fn phi(&self, t: f64) -> SymplecticBlocks {
        let d = self.dim();
        let (al, be) = (&self.alpha, &self.beta);
        let mut m = RMat::identity(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] -= 2.0 * t * al[i] * be[j];
                m[(i, d + j)] += 2.0 * t * al[i] * al[j];
                m[(d + i, j)] -= 2.0 * t * be[i] * be[j];
                m[(d + i, d + j)] += 2.0 * t * be[i] * al[j];
            }
        }
        SymplecticBlocks::from_matrix(&m)
    }

    /// Quadratic coefficient `mu - alpha.beta/2 + alpha.Gamma alpha/2` of the s-integral.
    pub fn quadratic_coefficient(&self, gamma: &CMat) -> Complex64 {
        let d = self.dim();
        let mut aga = c64(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                aga += gamma[(i, j)] * self.alpha[i] * self.alpha[j];
            }
        }
        c64(self.mu - 0.5 * self.alpha_dot_beta(), 0.0) + aga * 0.5
    }

    /// Closed-form image width `Gamma - (beta - Gamma alpha)(beta - Gamma alpha)^T / (2 a)`.
    pub fn image_width(&self, gamma: &SiegelMatrix) -> Result<SiegelMatrix> {
        let d = self.dim();
        let g = gamma.matrix();
        let den = self.quadratic_coefficient(g) * 2.0;
        if den.norm() == 0.0 {
            return Err(Error::Invariant("vanishing transfer denominator".into()));
        }
        let w: Vec<Complex64> = (0..d)
            .map(|i| c64(self.beta[i], 0.0) - (0..d).map(|j| g[(i, j)] * self.alpha[j]).sum::<Complex64>())
            .collect();
        let mut out = g.clone();
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] -= w[i] * w[j] / den;
            }
        }
        SiegelMatrix::from_computed(out)
            .map_err(|e| Error::NotSiegel(format!("transferred width left the Siegel half-space: {e}")))
    }
}

/// Which parameter set feeds the transfer operator.
///
/// `Theorem` uses `mu = (dt f + {v,f})/2`, `(alpha, beta) = J d_z f`.
/// `Derived` uses the second-order expansion of the composed flows at the
/// crossing: `mu = -(dt f + {v,f})`, `(alpha, beta) = 2 J d_z f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferConvention {
    Theorem,
    #[default]
    Derived,
}

/// Everything known about the first crossing of a band-1 trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub t_flat: f64,
    pub z_flat: Vec<f64>,
    pub s_flat: f64,
    pub mu_flat: f64,
    pub alpha_flat: Vec<f64>,
    pub beta_flat: Vec<f64>,
    pub gamma_flat: f64,
    pub v1_flat: Vec<Complex64>,
    pub v2_flat: Vec<Complex64>,
    pub zero_transfer: bool,
    /// Approximate times of later sign changes of `f` on the same trace.
    pub extra_crossings: Vec<f64>,
    pub f_residual: f64,
    /// Band-1 bundle re-integrated to `t_flat`.
    #[serde(skip)]
    pub bundle: Option<TrajectoryBundle>,
}

impl CrossingEvent {
    pub fn transfer_params(&self, convention: TransferConvention) -> Result<TransferParams> {
        let p = TransferParams::new(self.mu_flat, self.alpha_flat.clone(), self.beta_flat.clone())?;
        Ok(match convention {
            TransferConvention::Theorem => p,
            TransferConvention::Derived => TransferParams {
                mu: -2.0 * p.mu,
                alpha: p.alpha.iter().map(|a| 2.0 * a).collect(),
                beta: p.beta.iter().map(|b| 2.0 * b).collect(),
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `|| (dt Pi_band + {v, Pi_band}) v1 ||` and the vector itself.
pub fn coupling(model: &ModelSpec, band: usize, t: f64, z: &[f64], v1: &[Complex64]) -> Result<(f64, Vec<Complex64>)> {
    let pd = model.projector_derivs(band, t, z)?;
    let v = model.v_jet(t, z, 1)?;
    let m = &pd.dt + model.poisson_scalar_matrix(&v, &pd);
    let n = v1.len();
    let w: Vec<Complex64> = (0..n).map(|i| (0..n).map(|j| m[(i, j)] * v1[j]).sum()).collect();
    let g = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    Ok((g, w))
}

fn f_along(model: &ModelSpec, b: &TrajectoryBundle) -> f64 {
    model.f(b.t, &b.z)
}

/// Locates the first sign change of `f(t, z_1(t))` on `trace` and fills the crossing data.
pub fn detect_crossing(model: &ModelSpec, trace: &Trace, ctl: &OdeControls) -> Result<Option<CrossingEvent>> {
    if model.is_scalar() || trace.samples.len() < 2 {
        return Ok(None);
    }
    let fs: Vec<f64> = trace.samples.iter().map(|b| f_along(model, b)).collect();
    let scale = fs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut brackets = Vec::new();
    for k in 0..fs.len() - 1 {
        if fs[k] == 0.0 && k > 0 {
            continue;
        }
        if fs[k] * fs[k + 1] < 0.0 || fs[k + 1] == 0.0 {
            brackets.push(k);
        }
    }
    if fs[0] == 0.0 {
        return Err(Error::NearCrossing { gap: 0.0, floor: 0.0 });
    }
    let Some(&k0) = brackets.first() else {
        return Ok(None);
    };
    let extra: Vec<f64> = brackets[1..]
        .iter()
        .map(|&k| {
            let (a, b) = (&trace.samples[k], &trace.samples[k + 1]);
            a.t + (b.t - a.t) * fs[k] / (fs[k] - fs[k + 1])
        })
        .collect();

    let left = &trace.samples[k0];
    let (mut lo, mut hi) = (left.t, trace.samples[k0 + 1].t);
    let f_lo = fs[k0];
    let tol = 1e-12 * scale;
    let mut tau = lo + (hi - lo) * f_lo / (f_lo - fs[k0 + 1]);
    let mut b = integrate_signed(model, 1, left, tau, ctl)?;
    for _ in 0..100 {
        let g = f_along(model, &b);
        if g.abs() < tol {
            break;
        }
        if g * f_lo > 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        let rate = model.transversality(b.t, &b.z)?;
        let newton = tau - g / rate;
        tau = if rate != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        b = integrate_signed(model, 1, left, tau, ctl)?;
    }
    let (t, z) = (b.t, b.z.clone());
    let f_residual = f_along(model, &b).abs();

    let rate = model.transversality(t, &z)?;
    let mu = 0.5 * rate;
    let vj = model.v_jet(t, &z, 1)?;
    let fj = model.f_jet(t, &z, 1)?;
    let d = model.d;
    let grad_norm = |j: &crate::jet::Jet| (1..=2 * d).map(|i| j.grad[i] * j.grad[i]).sum::<f64>().sqrt();
    let characteristic = fj.grad[0].abs() + grad_norm(&fj) * grad_norm(&vj);
    if mu.abs() <= MU_MIN_REL * characteristic || mu == 0.0 {
        return Err(Error::NonTransversal { mu, floor: MU_MIN_REL * characteristic });
    }
    let alpha: Vec<f64> = (0..d).map(|i| fj.grad[1 + d + i]).collect();
    let beta: Vec<f64> = (0..d).map(|i| -fj.grad[1 + i]).collect();

    let v1 = b.y_vec.clone();
    let (gamma, w) = coupling(model, 2, t, &z, &v1)?;
    let zero_transfer = gamma < GAMMA_MIN;
    let v2 = if zero_transfer {
        model.eigvec(2, t, &z, None)?
    } else {
        let p2 = model.projector(2, t, &z)?;
        let n = v1.len();
        (0..n).map(|i| -(0..n).map(|j| p2[(i, j)] * w[j]).sum::<Complex64>() / gamma).collect()
    };
    Ok(Some(CrossingEvent {
        t_flat: t,
        z_flat: z,
        s_flat: b.s_action,
        mu_flat: mu,
        alpha_flat: alpha,
        beta_flat: beta,
        gamma_flat: gamma,
        v1_flat: v1,
        v2_flat: v2,
        zero_transfer,
        extra_crossings: extra,
        f_residual,
        bundle: Some(b),
    }))
}

/// `T g = prefactor * g_out` for a Gaussian without polynomial factor; the
/// width of `g_out` is computed from the closed form.
pub fn transfer_gaussian(params: &TransferParams, g: &PolyGaussian) -> Result<(Complex64, PolyGaussian)> {
    if !g.has_trivial_poly() || !g.is_centered() {
        return Err(Error::Unsupported("transfer_gaussian takes a centered Gaussian; use transfer_polygaussian".into()));
    }
    check_dims(params, g)?;
    let gamma = params.image_width(&g.width)?;
    let a = params.quadratic_coefficient(g.width.matrix());
    let nf = g.norm_factor * (-I * params.mu).sqrt() / (-I * a).sqrt();
    let mut out = g.clone();
    out.width = gamma;
    out.norm_factor = nf;
    Ok((params.prefactor(), out))
}

/// `T (op(A) g) = prefactor * op(A o Phi(-1/(4 mu))) g_out`, with `g_out`
/// the unitary part applied as a metaplectic map.
pub fn transfer_polygaussian(params: &TransferParams, g: &PolyGaussian) -> Result<(Complex64, PolyGaussian)> {
    check_dims(params, g)?;
    let blocks = params.phi(1.0 / (4.0 * params.mu));
    let a = params.quadratic_coefficient(g.width.matrix());
    let root = (-I * a).sqrt() / (-I * params.mu).sqrt();
    let out = metaplectic_apply_with_root(&blocks, g, root)?;
    if out.poly.degree() != g.poly.degree() {
        return Err(Error::Invariant("transfer changed the polynomial degree".into()));
    }
    Ok((params.prefactor(), out))
}

fn check_dims(params: &TransferParams, g: &PolyGaussian) -> Result<()> {
    if params.dim() != g.dim() {
        return Err(Error::Dimension("transfer parameters and profile dimensions differ".into()));
    }
    if params.mu == 0.0 {
        return Err(Error::ZeroMu);
    }
    Ok(())
}

/// Direct evaluation of the s-integral on `grid`.
///
/// The integrand is entire in `s`, so the real line is moved to the line
/// through the complex saddle along which the quadratic part decays fastest;
/// the trapezoid rule is then spectrally accurate and free of cancellation.
pub fn transfer_quadrature(params: &TransferParams, g: &PolyGaussian, grid: &GridSpec) -> Result<Vec<Complex64>> {
    check_dims(params, g)?;
    if grid.dim() != g.dim() {
        return Err(Error::Dimension("grid and profile dimensions differ".into()));
    }
    let d = g.dim();
    let e = g.expanded();
    let a = params.quadratic_coefficient(g.width.matrix());
    let theta = 0.5 * (0.5 * PI - a.arg());
    let dir = Complex64::from_polar(1.0, theta);
    let c = params.mu - 0.5 * params.alpha_dot_beta();
    let abs_a = a.norm();
    let mut out = Vec::with_capacity(grid.len());
    for y in grid.points() {
        // linear coefficient of s in the exponent bounds the Gaussian's drift
        let mut lin = c64(params.beta.iter().zip(&y).map(|(b, x)| b * x).sum(), 0.0);
        for i in 0..d {
            for j in 0..d {
                lin -= e.gamma[(i, j)] * params.alpha[i] * y[j];
            }
            lin -= e.linear[i] * params.alpha[i];
        }
        // contour through the complex saddle of the quadratic exponent
        let saddle = -lin / (2.0 * a);
        let half = (50.0 / abs_a).sqrt() + 2.0 * (g.poly.degree() as f64 + 1.0) / abs_a.sqrt();
        let n = ((2.0 * half * abs_a.sqrt() / 0.2).ceil() as usize).max(128);
        let h = 2.0 * half / n as f64;
        let by: f64 = params.beta.iter().zip(&y).map(|(b, x)| b * x).sum();
        let mut acc = c64(0.0, 0.0);
        let mut arg = vec![c64(0.0, 0.0); d];
        for k in 0..=n {
            let r = -half + k as f64 * h;
            let s = saddle + dir * r;
            for i in 0..d {
                arg[i] = c64(y[i], 0.0) - s * params.alpha[i];
            }
            let mut expo = s * s * c + s * by;
            for i in 0..d {
                expo += e.linear[i] * arg[i];
                for j in 0..d {
                    expo += 0.5 * e.gamma[(i, j)] * arg[i] * arg[j];
                }
            }
            let val = e.constant * e.poly.eval(&arg) * (I * expo).exp();
            let wgt = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += val * wgt;
        }
        out.push(acc * h * dir);
    }
    Ok(out)
}

/// Finite-difference expansion of the composed flows at the crossing.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseExpansion {
    pub lambda_0: f64,
    pub lambda_dot: f64,
    pub lambda_ddot: f64,
    pub zeta_dot: Vec<f64>,
    /// `J d_z (h_1 - h_2)` at the crossing.
    pub zeta_dot_expected: Vec<f64>,
    /// Second derivative predicted from the model's derivatives.
    pub lambda_ddot_expected: f64,
}

/// Evaluates `zeta(sigma)` and `Lambda(sigma)` from numerically composed
/// band-1 (forward) and band-2 (backward) flows and differentiates at 0.
pub fn phase_expansion(model: &ModelSpec, t_flat: f64, z_flat: &[f64], sigma: f64, ctl: &OdeControls) -> Result<PhaseExpansion> {
    let d = model.d;
    let scalar1 = model.band_scalar(1)?;
    let scalar2 = model.band_scalar(2)?;
    let eval = |s: f64| -> Result<(f64, Vec<f64>)> {
        let b0 = TrajectoryBundle::new(t_flat, z_flat.to_vec(), vec![c64(1.0, 0.0)]);
        let b1 = integrate_signed(&scalar1, 1, &b0, t_flat + s, ctl)?;
        let mut start2 = b1.clone();
        start2.s_action = 0.0;
        let b2 = integrate_signed(&scalar2, 1, &start2, t_flat, ctl)?;
        let q_shift: f64 = (0..d).map(|i| (b2.z[i] - z_flat[i]) * z_flat[d + i]).sum();
        Ok((b1.s_action + b2.s_action - q_shift, b2.z))
    };
    let lam = eval;
    let (l0, _) = lam(0.0)?;
    let (lp1, zp1) = lam(sigma)?;
    let (lm1, zm1) = lam(-sigma)?;
    let (lp2, zp2) = lam(2.0 * sigma)?;
    let (lm2, zm2) = lam(-2.0 * sigma)?;
    let d1 = (lp1 - lm1) / (2.0 * sigma);
    let d2 = (lp2 - lm2) / (4.0 * sigma);
    let s1 = (lp1 - 2.0 * l0 + lm1) / (sigma * sigma);
    let s2 = (lp2 - 2.0 * l0 + lm2) / (4.0 * sigma * sigma);
    let zeta_dot = (0..2 * d)
        .map(|i| {
            let a = (zp1[i] - zm1[i]) / (2.0 * sigma);
            let b = (zp2[i] - zm2[i]) / (4.0 * sigma);
            (4.0 * a - b) / 3.0
        })
        .collect();

    let h1 = model.h_jet(1, t_flat, z_flat, 1)?;
    let h2 = model.h_jet(2, t_flat, z_flat, 1)?;
    let zeta_dot_expected = (0..2 * d)
        .map(|i| if i < d { h1.grad[1 + d + i] - h2.grad[1 + d + i] } else { -(h1.grad[1 + i - d] - h2.grad[1 + i - d]) })
        .collect();
    let mut expected = h2.grad[0] - h1.grad[0];
    for i in 0..d {
        let dq = |j: &crate::jet::Jet| j.grad[1 + i];
        let dp = |j: &crate::jet::Jet| j.grad[1 + d + i];
        expected += -dq(&h2) * (dp(&h2) - dp(&h1)) + dp(&h1) * (dq(&h2) - dq(&h1));
    }
    Ok(PhaseExpansion {
        lambda_0: l0,
        lambda_dot: (4.0 * d1 - d2) / 3.0,
        lambda_ddot: (4.0 * s1 - s2) / 3.0,
        zeta_dot,
        zeta_dot_expected,
        lambda_ddot_expected: expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_to, uniform_times};
    use crate::gaussian::fourier;
    use crate::models::{make_schrodinger, make_two_level, ScalarField};
    use crate::poly::Poly;

    fn e(s: &str) -> ScalarField {
        ScalarField::parse(s).unwrap()
    }

    fn rel_l2(grid: &GridSpec, a: &[Complex64], b: &[Complex64]) -> f64 {
        let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        grid.norm(&diff) / grid.norm(b)
    }

    fn sample(g: &PolyGaussian, s: Complex64, grid: &GridSpec) -> Vec<Complex64> {
        grid.points().map(|y| s * g.value(&y)).collect()
    }

    #[test]
    fn fresnel_integral_constant() {
        // int exp(i s^2) ds = sqrt(pi) e^{i pi/4}
        let p = TransferParams::new(1.0, vec![0.0], vec![0.0]).unwrap();
        let expected = Complex64::from_polar(PI.sqrt(), PI / 4.0);
        assert!((p.prefactor() - expected).norm() < 1e-14);
        let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 1.0)).unwrap());
        let grid = GridSpec::uniform_1d(0.0, 1.0, 1);
        let q = transfer_quadrature(&p, &g, &grid).unwrap();
        assert!((q[0] / g.value(&[0.0]) - expected).norm() < 1e-10);
    }

    #[test]
    fn worked_width() {
        let p = TransferParams::new(1.0, vec![1.0], vec![1.0]).unwrap();
        let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 2.0)).unwrap());
        let (pre, out) = transfer_gaussian(&p, &g).unwrap();
        assert!((out.width.matrix()[(0, 0)] - c64(2.2, 1.6)).norm() < 1e-14);
        let grid = GridSpec::uniform_1d(-8.0, 8.0, 256);
        let q = transfer_quadrature(&p, &g, &grid).unwrap();
        assert!(rel_l2(&grid, &sample(&out, pre, &grid), &q) < 1e-6);
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn width_examples() {
        let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 1.0)).unwrap());
        let p0 = TransferParams::new(0.7, vec![0.0], vec![0.0]).unwrap();
        let (_, out) = transfer_gaussian(&p0, &g).unwrap();
        assert_eq!(out.width, g.width);
        let p = TransferParams::new(0.7, vec![0.0], vec![1.3]).unwrap();
        let (_, out) = transfer_gaussian(&p, &g).unwrap();
        assert!((out.width.matrix()[(0, 0)] - c64(-1.3 * 1.3 / 1.4, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn polynomial_symbol_composition() {
        // alpha = 1, beta = 0, mu = 1: the symbol y maps to y - eta/2
        let p = TransferParams::new(1.0, vec![1.0], vec![0.0]).unwrap();
        let phi = p.phi(-0.25).to_matrix();
        assert_eq!(phi.as_slice(), RMat::from_row_slice(2, 2, &[1.0, -0.5, 0.0, 1.0]).as_slice());
        let g = PolyGaussian::new(SiegelMatrix::scalar(c64(0.0, 1.0)).unwrap(), c64(PI.powf(-0.25), 0.0), Poly::var(1, 0))
            .unwrap();
        let (pre, out) = transfer_polygaussian(&p, &g).unwrap();
        let grid = GridSpec::uniform_1d(-10.0, 10.0, 256);
        let q = transfer_quadrature(&p, &g, &grid).unwrap();
        assert!(rel_l2(&grid, &sample(&out, pre, &grid), &q) < 1e-5);
        assert!(p.phi(0.0).residual() == 0.0);
    }

    #[test]
    fn fourier_intertwining() {
        let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.4, 1.3)).unwrap());
        let p = TransferParams::new(0.8, vec![0.6], vec![-0.9]).unwrap();
        let swapped = TransferParams::new(0.8, vec![-0.9], vec![-0.6]).unwrap();
        let (pre, tg) = transfer_gaussian(&p, &g).unwrap();
        let lhs = fourier(&tg).unwrap().scaled(pre);
        let fg = fourier(&g).unwrap();
        let (pre2, rhs) = transfer_gaussian(&swapped, &fg).unwrap();
        let grid = GridSpec::uniform_1d(-10.0, 10.0, 256);
        assert!(rel_l2(&grid, &sample(&lhs, c64(1.0, 0.0), &grid), &sample(&rhs, pre2, &grid)) < 1e-10);
    }

    #[test]
    fn time_only_crossing() {
        // f = t - 1, v = 0: crossing at t = 1 with mu = 1/2 and no phase-space tilt
        let m = make_two_level(1, e("0"), e("t - 1"), [e("cos(t)"), e("sin(t)"), e("0")]).unwrap();
        let b0 = TrajectoryBundle::on_band(&m, 1, 0.0, &[0.0, 0.0], None).unwrap();
        let ctl = OdeControls::default();
        let tr = integrate_to(&m, 1, &b0, 2.0, &uniform_times(0.0, 2.0, 0.1), &ctl).unwrap();
        let ev = detect_crossing(&m, &tr, &ctl).unwrap().unwrap();
        assert!((ev.t_flat - 1.0).abs() < 1e-12);
        assert!((ev.mu_flat - 0.5).abs() < 1e-12);
        assert!(ev.alpha_flat[0] == 0.0 && ev.beta_flat[0] == 0.0);
        // rotating frame: dt Pi has norm |du/dt|/2 = 1/2 on the eigenvector
        assert!((ev.gamma_flat - 0.5).abs() < 1e-10);
        let p1 = m.projector(1, ev.t_flat, &ev.z_flat).unwrap();
        let leak: f64 = (0..2).map(|i| (0..2).map(|j| p1[(i, j)] * ev.v2_flat[j]).sum::<Complex64>().norm_sqr()).sum();
        assert!(leak.sqrt() < 1e-8);
        let (g1, _) = coupling(&m, 1, ev.t_flat, &ev.z_flat, &ev.v1_flat).unwrap();
        assert!((g1 - ev.gamma_flat).abs() < 1e-8);
        let json = ev.to_json().unwrap();
        let back: CrossingEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back.t_flat, ev.t_flat);
    }

    #[test]
    fn schrodinger_crossing_parameters() {
        // g = x/2, so E_A - E_B = x
        let m = make_schrodinger(1, e("0.5*p^2"), e("0"), e("0.5*x"), [e("cos(atan(x))"), e("sin(atan(x))"), e("0")]).unwrap();
        let b0 = TrajectoryBundle::on_band(&m, 1, 0.0, &[-1.0, 1.5], None).unwrap();
        let ctl = OdeControls::default();
        let tr = integrate_to(&m, 1, &b0, 2.0, &uniform_times(0.0, 2.0, 0.05), &ctl).unwrap();
        let ev = detect_crossing(&m, &tr, &ctl).unwrap().unwrap();
        assert!(ev.z_flat[0].abs() < 1e-12);
        assert_eq!(ev.alpha_flat[0], 0.0);
        assert!((ev.beta_flat[0] + 0.5).abs() < 1e-12);
        assert!((ev.mu_flat - 0.25 * ev.z_flat[1]).abs() < 1e-10);
        // the Hagedorn parametrization is the lambda = -2 rescaling
        let hag = ev.transfer_params(TransferConvention::Theorem).unwrap().rescaled(-2.0);
        assert!((hag.beta[0] - 1.0).abs() < 1e-12 && (hag.mu - ev.z_flat[1]).abs() < 1e-10);
        assert!(ev.extra_crossings.is_empty());
        assert!(!ev.zero_transfer);
    }

    #[test]
    fn composed_flow_phase_expansion() {
        let m = make_two_level(1, e("0.5*p^2 + 0.1*q"), e("0.5*q + 0.2*p + 0.3*t"), [e("1"), e("0"), e("0")]).unwrap();
        let pe = phase_expansion(&m, 0.2, &[-0.4, 0.7], 1e-2, &OdeControls::default()).unwrap();
        for i in 0..2 {
            assert!((pe.zeta_dot[i] - pe.zeta_dot_expected[i]).abs() < 1e-8);
        }
        assert!((pe.lambda_ddot - pe.lambda_ddot_expected).abs() < 1e-7 * pe.lambda_ddot_expected.abs().max(1.0));
        assert!(pe.lambda_dot.abs() < 1e-9 && pe.lambda_0.abs() < 1e-14, "{pe:?}");
        // the expansion matches 2 mu + alpha.beta for the derived parameters
        let fj = m.f_jet(0.2, &[-0.4, 0.7], 1).unwrap();
        let rate = m.transversality(0.2, &[-0.4, 0.7]).unwrap();
        let (al, be) = (2.0 * fj.grad[2], -2.0 * fj.grad[1]);
        assert!((pe.lambda_ddot - (-2.0 * rate + al * be)).abs() < 1e-7);
    }

    #[test]
    fn gapped_model_has_no_crossing() {
        let m = make_two_level(1, e("0.5*p^2"), e("1 + q^2"), [e("cos(q)"), e("sin(q)"), e("0")]).unwrap();
        let b0 = TrajectoryBundle::on_band(&m, 1, 0.0, &[0.0, 1.0], None).unwrap();
        let ctl = OdeControls::default();
        let tr = integrate_to(&m, 1, &b0, 2.0, &uniform_times(0.0, 2.0, 0.1), &ctl).unwrap();
        assert!(detect_crossing(&m, &tr, &ctl).unwrap().is_none());
    }

    #[test]
    fn rescaling_law() {
        let p = TransferParams::new(0.9, vec![0.4], vec![0.7]).unwrap();
        let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.2, 1.1)).unwrap());
        let grid = GridSpec::uniform_1d(-8.0, 8.0, 128);
        let a = transfer_quadrature(&p, &g, &grid).unwrap();
        let b = transfer_quadrature(&p.rescaled(-2.0), &g, &grid).unwrap();
        let b2: Vec<Complex64> = b.iter().map(|x| x * 2.0).collect();
        assert!(rel_l2(&grid, &b2, &a) < 1e-9);
    }
}
