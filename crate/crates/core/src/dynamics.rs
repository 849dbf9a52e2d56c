//! Classical transport along one eigenvalue surface.
//!
//! The bundle ODE integrated jointly is
//!
//! ```text
//! z' = J dh,   S' = p.q' - h,   F' = J Hess(h) F,   Y' = (Omega + K) Y
//! ```
//!
//! optionally augmented with the running integral of the cubic Taylor symbol
//! `(1/6) d^3 h [F w, F w, F w]` used by the first-order profile correction.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gaussian::SymplecticBlocks;
use crate::linalg::{c64, CMat, RMat, I};
use crate::models::{Band, ModelSpec};
use crate::poly::Poly;

/// State of one trajectory and its transported data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle {
    pub t: f64,
    pub z: Vec<f64>,
    pub s_action: f64,
    pub f_blocks: SymplecticBlocks,
    pub y_vec: Vec<Complex64>,
    /// Integrated cubic-symbol coefficients, indexed by sorted triples.
    pub cubic: Option<Vec<f64>>,
}

impl TrajectoryBundle {
    pub fn new(t: f64, z: Vec<f64>, y_vec: Vec<Complex64>) -> Self {
        let d = z.len() / 2;
        TrajectoryBundle { t, z, s_action: 0.0, f_blocks: SymplecticBlocks::identity(d), y_vec, cubic: None }
    }

    /// Starts on `band` with the model's eigenvector, optionally aligned to `reference`.
    pub fn on_band(model: &ModelSpec, band: Band, t: f64, z: &[f64], reference: Option<&[Complex64]>) -> Result<Self> {
        let y = model.eigvec(band, t, z, reference)?;
        Ok(TrajectoryBundle::new(t, z.to_vec(), y))
    }

    pub fn with_cubic(mut self, d: usize) -> Self {
        self.cubic = Some(vec![0.0; cubic_count(2 * d)]);
        self
    }

    pub fn d(&self) -> usize {
        self.z.len() / 2
    }

    pub fn q(&self) -> &[f64] {
        &self.z[..self.d()]
    }

    pub fn p(&self) -> &[f64] {
        &self.z[self.d()..]
    }

    pub fn y_norm(&self) -> f64 {
        self.y_vec.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    /// The integrated cubic symbol as a polynomial in `w = (y, eta)`.
    pub fn cubic_symbol(&self) -> Option<Poly> {
        let c = self.cubic.as_ref()?;
        let n = 2 * self.d();
        let mut p = Poly::zero(n);
        for (k, (a, b, cc)) in sorted_triples(n).into_iter().enumerate() {
            let mut e = vec![0u32; n];
            e[a] += 1;
            e[b] += 1;
            e[cc] += 1;
            p.add_term(e, c64(c[k], 0.0));
        }
        Some(p)
    }

    fn pack(&self) -> Vec<f64> {
        let mut v = self.z.clone();
        v.push(self.s_action);
        let f = self.f_blocks.to_matrix();
        let n = f.nrows();
        for i in 0..n {
            for j in 0..n {
                v.push(f[(i, j)]);
            }
        }
        for y in &self.y_vec {
            v.push(y.re);
            v.push(y.im);
        }
        if let Some(c) = &self.cubic {
            v.extend_from_slice(c);
        }
        v
    }

    fn unpack(&self, t: f64, v: &[f64]) -> TrajectoryBundle {
        let n = self.z.len();
        let mut k = 0;
        let z = v[k..k + n].to_vec();
        k += n;
        let s = v[k];
        k += 1;
        let f = RMat::from_row_slice(n, n, &v[k..k + n * n]);
        k += n * n;
        let y = (0..self.y_vec.len()).map(|i| c64(v[k + 2 * i], v[k + 2 * i + 1])).collect();
        k += 2 * self.y_vec.len();
        let cubic = self.cubic.as_ref().map(|c| v[k..k + c.len()].to_vec());
        TrajectoryBundle { t, z, s_action: s, f_blocks: SymplecticBlocks::from_matrix(&f), y_vec: y, cubic }
    }
}

fn cubic_count(n: usize) -> usize {
    n * (n + 1) * (n + 2) / 6
}

fn sorted_triples(n: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a..n {
            for c in b..n {
                out.push((a, b, c));
            }
        }
    }
    out
}

/// Omega, K and Theta for `band` at `(t, z)`.
#[derive(Clone, Debug)]
pub struct ThetaMatrices {
    pub omega: CMat,
    pub k: CMat,
    pub theta: CMat,
}

pub fn theta_matrices(model: &ModelSpec, band: Band, t: f64, z: &[f64]) -> Result<ThetaMatrices> {
    let n = model.n;
    if model.is_scalar() {
        let zero = CMat::zeros(n, n);
        return Ok(ThetaMatrices { omega: zero.clone(), k: zero.clone(), theta: zero });
    }
    let pd = model.projector_derivs(band, t, z)?;
    let h = model.h_jet(band, t, z, 1)?;
    let other = if band == 1 { 2 } else { 1 };
    let h_perp = model.h(other, t, z)?;
    let pi = &pd.value;
    let perp = CMat::identity(n, n) - pi;
    let omega = pi * model.poisson_matrix_matrix(&pd) * pi * c64(-0.5 * (h.value - h_perp), 0.0);
    let k = &perp * (&pd.dt + model.poisson_scalar_matrix(&h, &pd)) * pi;
    let theta = &omega * I + (&k - k.adjoint()) * I;
    Ok(ThetaMatrices { omega, k, theta })
}

fn rhs(model: &ModelSpec, band: Band, proto: &TrajectoryBundle, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    let b = proto.unpack(t, v);
    let d = b.d();
    let n = 2 * d;
    let order = if b.cubic.is_some() { 3 } else { 2 };
    let h = model.h_jet(band, t, &b.z, order)?;
    let mut out = Vec::with_capacity(v.len());
    // z' = J dh
    for i in 0..d {
        out.push(h.grad[1 + d + i]);
    }
    for i in 0..d {
        out.push(-h.grad[1 + i]);
    }
    let pdot: f64 = (0..d).map(|i| b.z[d + i] * h.grad[1 + d + i]).sum();
    out.push(pdot - h.value);
    // F' = J Hess F
    let mut jh = RMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let row = if i < d { d + i } else { i - d };
            let sign = if i < d { 1.0 } else { -1.0 };
            jh[(i, j)] = sign * h.h(1 + row, 1 + j);
        }
    }
    let f = b.f_blocks.to_matrix();
    let fd = &jh * &f;
    for i in 0..n {
        for j in 0..n {
            out.push(fd[(i, j)]);
        }
    }
    if model.n > 1 {
        let th = theta_matrices(model, band, t, &b.z)?;
        let gen = &th.omega + &th.k;
        for i in 0..model.n {
            let s: Complex64 = (0..model.n).map(|j| gen[(i, j)] * b.y_vec[j]).sum();
            out.push(s.re);
            out.push(s.im);
        }
    } else {
        out.push(0.0);
        out.push(0.0);
    }
    if b.cubic.is_some() {
        // C_abc = sum T_ijk F_ia F_jb F_kc, contracted one index at a time
        let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let mut t1 = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for c in 0..n {
                    t1[idx(i, j, c)] = (0..n).map(|k| h.d3(1 + i, 1 + j, 1 + k) * f[(k, c)]).sum();
                }
            }
        }
        let mut t2 = vec![0.0; n * n * n];
        for i in 0..n {
            for bb in 0..n {
                for c in 0..n {
                    t2[idx(i, bb, c)] = (0..n).map(|j| t1[idx(i, j, c)] * f[(j, bb)]).sum();
                }
            }
        }
        for (a, bb, c) in sorted_triples(n) {
            let val: f64 = (0..n).map(|i| t2[idx(i, bb, c)] * f[(i, a)]).sum();
            let perms = if a == bb && bb == c {
                1.0
            } else if a == bb || bb == c {
                3.0
            } else {
                6.0
            };
            out.push(val * perms / 6.0);
        }
    }
    Ok(out)
}

/// Step-size and tolerance controls for the bundle integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeControls {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: f64,
    pub max_steps: usize,
}

impl Default for OdeControls {
    fn default() -> Self {
        OdeControls { rtol: 1e-11, atol: 1e-12, max_step: 0.05, initial_step: 1e-3, max_steps: 2_000_000 }
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step: new state and scaled error norm.
fn dp_step(
    model: &ModelSpec,
    band: Band,
    proto: &TrajectoryBundle,
    t: f64,
    y: &[f64],
    h: f64,
    ctl: &OdeControls,
) -> Result<(Vec<f64>, f64)> {
    let m = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let mut ys = y.to_vec();
        for (j, kj) in k.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..m {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k.push(rhs(model, band, proto, t + C[s] * h, &ys)?);
    }
    let mut y5 = y.to_vec();
    let mut err = 0.0f64;
    for i in 0..m {
        let mut d5 = 0.0;
        let mut d4 = 0.0;
        for s in 0..7 {
            d5 += B5[s] * k[s][i];
            d4 += B4[s] * k[s][i];
        }
        y5[i] += h * d5;
        let sc = ctl.atol + ctl.rtol * y[i].abs().max(y5[i].abs());
        err = err.max((h * (d5 - d4)).abs() / sc);
    }
    Ok((y5, err))
}

/// Advances the bundle by exactly `dt` with one step; rejects if the local
/// error estimate exceeds the tolerance.
pub fn flow_step(model: &ModelSpec, band: Band, bundle: &TrajectoryBundle, dt: f64, ctl: &OdeControls) -> Result<TrajectoryBundle> {
    let y = bundle.pack();
    let (y1, err) = dp_step(model, band, bundle, bundle.t, &y, dt, ctl)?;
    if err > 1.0 {
        return Err(Error::StepRejected(format!("local error {err:.3e} (scaled) at t = {}", bundle.t)));
    }
    Ok(bundle.unpack(bundle.t + dt, &y1))
}

/// Integration output: bundles at the requested times plus invariant defects.
#[derive(Clone, Debug)]
pub struct Trace {
    pub band: Band,
    pub samples: Vec<TrajectoryBundle>,
    pub symplectic_defect: f64,
    pub norm_defect: f64,
    pub eigenspace_defect: f64,
    pub steps: usize,
}

impl Trace {
    pub fn last(&self) -> &TrajectoryBundle {
        self.samples.last().expect("trace has at least the initial sample")
    }

    pub fn at(&self, t: f64) -> Option<&TrajectoryBundle> {
        self.samples.iter().find(|b| (b.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// CSV: `t, q..., p..., S, F (row-major), Re/Im Y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let first = &self.samples[0];
        let d = first.d();
        let mut head = vec!["t".to_string()];
        head.extend((1..=d).map(|i| format!("q{i}")));
        head.extend((1..=d).map(|i| format!("p{i}")));
        head.push("S".into());
        for i in 0..2 * d {
            for j in 0..2 * d {
                head.push(format!("F{}{}", i + 1, j + 1));
            }
        }
        for i in 0..first.y_vec.len() {
            head.push(format!("reY{}", i + 1));
            head.push(format!("imY{}", i + 1));
        }
        writeln!(w, "{}", head.join(","))?;
        for b in &self.samples {
            let mut row = vec![format!("{:.15e}", b.t)];
            row.extend(b.z.iter().map(|x| format!("{x:.15e}")));
            row.push(format!("{:.15e}", b.s_action));
            let f = b.f_blocks.to_matrix();
            for i in 0..2 * d {
                for j in 0..2 * d {
                    row.push(format!("{:.15e}", f[(i, j)]));
                }
            }
            for y in &b.y_vec {
                row.push(format!("{:.15e}", y.re));
                row.push(format!("{:.15e}", y.im));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub const SYMPLECTIC_TOL: f64 = 1e-8;
pub const NORM_TOL: f64 = 1e-10;
pub const EIGENSPACE_TOL: f64 = 1e-8;

fn eigenspace_defect(model: &ModelSpec, band: Band, b: &TrajectoryBundle) -> Result<f64> {
    if model.is_scalar() {
        return Ok(0.0);
    }
    let p = model.projector(band, b.t, &b.z)?;
    let n = model.n;
    let mut s = 0.0;
    for i in 0..n {
        let mut acc = b.y_vec[i];
        for j in 0..n {
            acc -= p[(i, j)] * b.y_vec[j];
        }
        s += acc.norm_sqr();
    }
    Ok(s.sqrt())
}

/// Adaptive stepping from `t` to `target` in either direction; `h` carries the
/// step-size proposal (unsigned) between calls.
#[allow(clippy::too_many_arguments)]
fn advance(
    model: &ModelSpec,
    band: Band,
    proto: &TrajectoryBundle,
    mut t: f64,
    mut y: Vec<f64>,
    target: f64,
    h: &mut f64,
    steps: &mut usize,
    ctl: &OdeControls,
) -> Result<Vec<f64>> {
    let dir = if target >= t { 1.0 } else { -1.0 };
    while (target - t) * dir > 0.0 {
        let remaining = (target - t).abs();
        let last = *h >= remaining;
        let step = if last { remaining } else { *h };
        let (y1, err) = dp_step(model, band, proto, t, &y, dir * step, ctl)?;
        *steps += 1;
        if *steps > ctl.max_steps {
            return Err(Error::StepRejected("maximum number of steps exceeded".into()));
        }
        if !err.is_finite() {
            return Err(Error::StepRejected(format!("non-finite error estimate at t = {t}")));
        }
        if err <= 1.0 {
            t = if last { target } else { t + dir * step };
            y = y1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 && last {
            // keep the proposal from the unclipped step size
            *h = h.max(step * factor).min(ctl.max_step);
        } else {
            *h = (step * factor).min(ctl.max_step);
        }
        if *h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepRejected(format!("step size underflow at t = {t}")));
        }
    }
    Ok(y)
}

/// Integrates to `t_end` in either time direction and returns only the end state.
pub fn integrate_signed(
    model: &ModelSpec,
    band: Band,
    initial: &TrajectoryBundle,
    t_end: f64,
    ctl: &OdeControls,
) -> Result<TrajectoryBundle> {
    let mut h = ctl.initial_step.min(ctl.max_step);
    let mut steps = 0;
    let y = advance(model, band, initial, initial.t, initial.pack(), t_end, &mut h, &mut steps, ctl)?;
    Ok(initial.unpack(t_end, &y))
}

/// Integrates from `initial.t` to `t_end`, recording bundles at every time in
/// `sample_times` (clipped to the interval) and at `t_end`.
pub fn integrate_to(
    model: &ModelSpec,
    band: Band,
    initial: &TrajectoryBundle,
    t_end: f64,
    sample_times: &[f64],
    ctl: &OdeControls,
) -> Result<Trace> {
    let t0 = initial.t;
    if t_end < t0 {
        return Err(Error::Invariant(format!("t_end {t_end} precedes t_start {t0}")));
    }
    let mut targets: Vec<f64> = sample_times.iter().copied().filter(|&s| s > t0 && s < t_end).collect();
    targets.push(t_end);
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    targets.dedup();
    let mut samples = vec![initial.clone()];
    let mut y = initial.pack();
    let mut t = t0;
    let mut h = ctl.initial_step.min(ctl.max_step);
    let mut steps = 0usize;
    let mut sym = initial.f_blocks.residual();
    let mut nd = (initial.y_norm() - 1.0).abs();
    let mut ed = eigenspace_defect(model, band, initial)?;
    for &target in &targets {
        if target <= t0 {
            continue;
        }
        y = advance(model, band, initial, t, y, target, &mut h, &mut steps, ctl)?;
        t = target;
        let b = initial.unpack(target, &y);
        sym = sym.max(b.f_blocks.residual());
        nd = nd.max((b.y_norm() - 1.0).abs());
        ed = ed.max(eigenspace_defect(model, band, &b)?);
        samples.push(b);
    }
    if sym > 10.0 * SYMPLECTIC_TOL || nd > 10.0 * NORM_TOL || ed > 10.0 * EIGENSPACE_TOL {
        return Err(Error::Invariant(format!(
            "bundle invariants breached: symplectic {sym:.2e}, |Y|-1 {nd:.2e}, Pi_perp Y {ed:.2e}"
        )));
    }
    Ok(Trace { band, samples, symplectic_defect: sym, norm_defect: nd, eigenspace_defect: ed, steps })
}

/// Evenly spaced times `t0 + k dt` strictly inside `(t0, t1)`.
pub fn uniform_times(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt).ceil() as usize;
    (1..n).map(|k| t0 + k as f64 * (t1 - t0) / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_scalar, make_schrodinger, make_two_level, ScalarField};

    fn e(s: &str) -> ScalarField {
        ScalarField::parse(s).unwrap()
    }

    #[test]
    fn harmonic_flow_is_rotation() {
        let m = make_scalar(1, e("0.5*(q^2 + p^2)")).unwrap();
        let b0 = TrajectoryBundle::new(0.0, vec![1.0, 0.0], vec![c64(1.0, 0.0)]);
        let tr = integrate_to(&m, 1, &b0, 2.0, &[], &OdeControls::default()).unwrap();
        let b = tr.last();
        let (s, c) = 2f64.sin_cos();
        assert!((b.z[0] - c).abs() < 1e-10 && (b.z[1] + s).abs() < 1e-10);
        let f = b.f_blocks.to_matrix();
        assert!((f[(0, 0)] - c).abs() < 1e-10 && (f[(0, 1)] - s).abs() < 1e-10);
        assert!((f[(1, 0)] + s).abs() < 1e-10 && (f[(1, 1)] - c).abs() < 1e-10);
        // S(t) = int p^2/2 - q^2/2 = -sin(2t)/4 for z0 = (1, 0)
        assert!((b.s_action + (4.0f64).sin() / 4.0).abs() < 1e-10);
    }

    #[test]
    fn free_motion_closed_form() {
        let m = make_scalar(1, e("0.5*p^2")).unwrap();
        let b0 = TrajectoryBundle::new(0.0, vec![0.3, 1.5], vec![c64(1.0, 0.0)]);
        let tr = integrate_to(&m, 1, &b0, 3.0, &[1.0, 2.0], &OdeControls::default()).unwrap();
        assert_eq!(tr.samples.len(), 4);
        for b in &tr.samples {
            let t = b.t;
            assert!((b.z[0] - (0.3 + 1.5 * t)).abs() < 1e-11);
            assert!((b.s_action - t * 1.5 * 1.5 / 2.0).abs() < 1e-11);
            assert!((b.f_blocks.b[(0, 0)] - t).abs() < 1e-11);
            assert!(b.f_blocks.c[(0, 0)].abs() < 1e-14);
        }
        let zero = integrate_to(&m, 1, &b0, 0.0, &[], &OdeControls::default()).unwrap();
        assert_eq!(zero.last(), &b0);
    }

    #[test]
    fn decoupled_model_keeps_eigenvector() {
        let m = make_two_level(1, e("0.5*p^2"), e("1 + 0.1*q^2"), [e("1"), e("0"), e("0")]).unwrap();
        let b0 = TrajectoryBundle::on_band(&m, 1, 0.0, &[0.5, 0.5], None).unwrap();
        let th = theta_matrices(&m, 1, 0.3, &[0.1, 0.2]).unwrap();
        assert!(th.theta.iter().all(|x| x.norm() == 0.0));
        let tr = integrate_to(&m, 1, &b0, 2.0, &[], &OdeControls::default()).unwrap();
        assert_eq!(tr.last().y_vec, b0.y_vec);
    }

    #[test]
    fn transport_stays_in_band() {
        let m = make_schrodinger(1, e("0.5*p^2"), e("0"), e("1 + 0.2*x^2"), [e("cos(x)"), e("sin(x)"), e("0")]).unwrap();
        let b0 = TrajectoryBundle::on_band(&m, 1, 0.0, &[-1.0, 1.0], None).unwrap();
        let tr = integrate_to(&m, 1, &b0, 5.0, &uniform_times(0.0, 5.0, 0.1), &OdeControls::default()).unwrap();
        assert!(tr.norm_defect < 1e-10);
        assert!(tr.eigenspace_defect < 1e-8);
        assert!(tr.symplectic_defect < 1e-8);
        let th = theta_matrices(&m, 1, 0.0, &[0.3, 0.4]).unwrap();
        assert!(th.omega.iter().all(|x| x.norm() < 1e-15));
    }

    #[test]
    fn flow_step_rejects_oversized_step() {
        let m = make_scalar(1, e("0.5*p^2 + cos(q)")).unwrap();
        let b0 = TrajectoryBundle::new(0.0, vec![0.1, 1.0], vec![c64(1.0, 0.0)]);
        assert!(flow_step(&m, 1, &b0, 1e-3, &OdeControls::default()).is_ok());
        assert!(matches!(flow_step(&m, 1, &b0, 2.0, &OdeControls::default()), Err(Error::StepRejected(_))));
    }

    #[test]
    fn cubic_symbol_of_cubic_potential() {
        // h = p^2/2 + q^3/6 over a short time with F close to identity
        let m = make_scalar(1, e("0.5*p^2 + q^3/6")).unwrap();
        let b0 = TrajectoryBundle::new(0.0, vec![0.0, 0.0], vec![c64(1.0, 0.0)]).with_cubic(1);
        let tr = integrate_to(&m, 1, &b0, 1e-3, &[], &OdeControls::default()).unwrap();
        let p = tr.last().cubic_symbol().unwrap();
        // d^3 h / 6 * y^3 integrated over 1e-3
        assert!((p.coeff(&[3, 0]).re - 1e-3 / 6.0).abs() < 1e-9, "{p:?}");
    }
}
