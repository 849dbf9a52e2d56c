//! Split-step spectral solver for `i eps dt psi = (K(-i eps grad) + V(t, x)) psi`
//! on a periodic box, used as the reference against which the semiclassical
//! constructions are measured.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg::{c64, CMat, I};
use crate::models::{u_matrix, Band, MatrixForm, ModelSpec, ProjectorDependence};

/// Tail mass (fraction) in the outer eighth of the spectrum that triggers an aliasing error.
pub const ALIASING_TOL: f64 = 1e-8;

/// Samples of a `C^N`-valued wave function, component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub eps: f64,
    pub grid: GridSpec,
    pub psi: Vec<Vec<Complex64>>,
    pub t: f64,
}

impl GridState {
    pub fn new(eps: f64, grid: GridSpec, psi: Vec<Vec<Complex64>>, t: f64) -> Result<Self> {
        if grid.n.iter().any(|&n| !n.is_power_of_two()) {
            return Err(Error::Grid(format!("grid sizes {:?} must be powers of two", grid.n)));
        }
        if psi.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::Grid("component length differs from grid size".into()));
        }
        Ok(GridState { eps, grid, psi, t })
    }

    pub fn norm(&self) -> f64 {
        self.grid.norm_vec(&self.psi)
    }

    pub fn n_components(&self) -> usize {
        self.psi.len()
    }
}

/// Multi-dimensional FFT over a tensor grid with the last axis contiguous.
#[derive(Clone)]
pub struct Spectral {
    n: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl Spectral {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let forward = grid.n.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = grid.n.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Spectral { n: grid.n.clone(), forward, inverse }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let d = self.n.len();
        let total: usize = self.n.iter().product();
        for axis in 0..d {
            let n = self.n[axis];
            let stride: usize = self.n[axis + 1..].iter().product();
            let plan = if inverse { &self.inverse[axis] } else { &self.forward[axis] };
            if stride == 1 {
                for chunk in data.chunks_mut(n) {
                    plan.process(chunk);
                }
                continue;
            }
            let mut line = vec![c64(0.0, 0.0); n];
            let block = n * stride;
            for start in (0..total).step_by(block) {
                for off in 0..stride {
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[start + off + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[start + off + k * stride] = *v;
                    }
                }
            }
        }
        if inverse {
            let s = 1.0 / total as f64;
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }
}

/// Angular wave numbers of the FFT ordering along each axis.
pub fn wave_numbers(grid: &GridSpec, axis: usize) -> Vec<f64> {
    let n = grid.n[axis];
    let l = grid.upper[axis] - grid.lower[axis];
    (0..n)
        .map(|j| {
            let k = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
            2.0 * std::f64::consts::PI * k / l
        })
        .collect()
}

fn frequency_point(grid: &GridSpec, flat: usize, eps: f64, ks: &[Vec<f64>]) -> Vec<f64> {
    let d = grid.dim();
    let mut xi = vec![0.0; d];
    let mut rem = flat;
    for k in (0..d).rev() {
        let i = rem % grid.n[k];
        rem /= grid.n[k];
        xi[k] = eps * ks[k][i];
    }
    xi
}

/// `exp(-i tau (s I + w . sigma))` for the `N x N` form; `N = 1` ignores `w`.
fn exp_form(n: usize, tau: f64, s: f64, w: [f64; 3]) -> CMat {
    let phase = Complex64::from_polar(1.0, -tau * s);
    if n == 1 {
        return CMat::from_element(1, 1, phase);
    }
    let g = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let mut m = CMat::identity(2, 2) * c64((tau * g).cos(), 0.0);
    if g > 0.0 {
        let u = u_matrix([w[0] / g, w[1] / g, w[2] / g]);
        m -= u * (I * (tau * g).sin());
    }
    m * phase
}

fn apply_pointwise(psi: &mut [Vec<Complex64>], mats: &[CMat]) {
    let n = psi.len();
    for (idx, m) in mats.iter().enumerate() {
        if n == 1 {
            psi[0][idx] *= m[(0, 0)];
        } else {
            let a = psi[0][idx];
            let b = psi[1][idx];
            psi[0][idx] = m[(0, 0)] * a + m[(0, 1)] * b;
            psi[1][idx] = m[(1, 0)] * a + m[(1, 1)] * b;
        }
    }
}

/// Strang-splitting propagator for a separable model on a fixed grid.
pub struct Oracle {
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub eps: f64,
    spectral: Spectral,
    ks: Vec<Vec<f64>>,
    kinetic_cache: Option<(f64, Vec<CMat>)>,
    time_dependent: bool,
}

impl Oracle {
    pub fn new(model: &ModelSpec, grid: &GridSpec, eps: f64) -> Result<Self> {
        let sep = model.separable.as_ref().ok_or_else(|| {
            Error::Unsupported(format!("model '{}' has no separable form for the grid oracle", model.name))
        })?;
        if grid.dim() != model.d || model.d > 2 {
            return Err(Error::Grid(format!("oracle supports d in {{1, 2}} matching the model, got grid d = {}", grid.dim())));
        }
        if grid.n.iter().any(|&n| !n.is_power_of_two()) {
            return Err(Error::Grid(format!("grid sizes {:?} must be powers of two", grid.n)));
        }
        let time_dependent = depends_on_t(&sep.potential);
        let ks = (0..grid.dim()).map(|k| wave_numbers(grid, k)).collect();
        Ok(Oracle {
            model: model.clone(),
            grid: grid.clone(),
            eps,
            spectral: Spectral::new(grid),
            ks,
            kinetic_cache: None,
            time_dependent,
        })
    }

    fn sep(&self) -> &MatrixForm {
        &self.model.separable.as_ref().expect("checked in new").potential
    }

    fn potential_factors(&self, t: f64, tau: f64) -> Vec<CMat> {
        let d = self.grid.dim();
        let form = self.sep();
        self.grid
            .points()
            .map(|x| {
                let mut z = x.clone();
                z.extend(std::iter::repeat_n(0.0, d));
                let (s, w) = form.eval(t, &z);
                exp_form(self.model.n, tau / self.eps, s, w)
            })
            .collect()
    }

    fn kinetic_factors(&mut self, dt: f64) -> &[CMat] {
        let stale = !matches!(&self.kinetic_cache, Some((h, _)) if *h == dt);
        if stale {
            let d = self.grid.dim();
            let form = &self.model.separable.as_ref().expect("checked in new").kinetic;
            let mats = (0..self.grid.len())
                .map(|i| {
                    let xi = frequency_point(&self.grid, i, self.eps, &self.ks);
                    let mut z = vec![0.0; d];
                    z.extend(xi);
                    let (s, w) = form.eval(0.0, &z);
                    exp_form(self.model.n, dt / self.eps, s, w)
                })
                .collect();
            self.kinetic_cache = Some((dt, mats));
        }
        &self.kinetic_cache.as_ref().expect("filled above").1
    }

    /// One Strang step `V/2, K, V/2` with the potential sampled at the step midpoint.
    pub fn step(&mut self, state: &mut GridState, dt: f64) -> Result<()> {
        if state.grid != self.grid || state.psi.len() != self.model.n {
            return Err(Error::Grid("state does not match the oracle grid or component count".into()));
        }
        let vhalf = self.potential_factors(state.t + 0.5 * dt, 0.5 * dt);
        apply_pointwise(&mut state.psi, &vhalf);
        for c in state.psi.iter_mut() {
            self.spectral.forward(c);
        }
        let kin = self.kinetic_factors(dt).to_vec();
        apply_pointwise(&mut state.psi, &kin);
        for c in state.psi.iter_mut() {
            self.spectral.inverse(c);
        }
        apply_pointwise(&mut state.psi, &vhalf);
        state.t += dt;
        Ok(())
    }

    /// Advances to `t_end` with steps no longer than `dt`, landing exactly on `t_end`.
    pub fn evolve(&mut self, state: &mut GridState, t_end: f64, dt: f64) -> Result<()> {
        let span = t_end - state.t;
        if span < 0.0 {
            return Err(Error::Grid("oracle cannot integrate backwards".into()));
        }
        if span == 0.0 {
            return Ok(());
        }
        let n = (span / dt).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let check_every = 200;
        if !self.time_dependent {
            // constant potential factors reused across steps
            let vhalf = self.potential_factors(state.t, 0.5 * h);
            for k in 0..n {
                apply_pointwise(&mut state.psi, &vhalf);
                for c in state.psi.iter_mut() {
                    self.spectral.forward(c);
                }
                let kin = self.kinetic_factors(h).to_vec();
                apply_pointwise(&mut state.psi, &kin);
                for c in state.psi.iter_mut() {
                    self.spectral.inverse(c);
                }
                apply_pointwise(&mut state.psi, &vhalf);
                if k % check_every == check_every - 1 {
                    self.check_resolution(state)?;
                }
            }
            state.t = t_end;
        } else {
            for k in 0..n {
                self.step(state, h)?;
                if k % check_every == check_every - 1 {
                    self.check_resolution(state)?;
                }
            }
            state.t = t_end;
        }
        self.check_resolution(state)
    }

    /// Fraction of spectral mass in the outer eighth of the frequency box.
    pub fn spectral_tail(&self, state: &GridState) -> f64 {
        let mut total = 0.0;
        let mut tail = 0.0;
        let d = self.grid.dim();
        for c in &state.psi {
            let mut f = c.clone();
            self.spectral.forward(&mut f);
            for (i, v) in f.iter().enumerate() {
                let m = v.norm_sqr();
                total += m;
                let mut rem = i;
                let mut outer = false;
                for k in (0..d).rev() {
                    let n = self.grid.n[k];
                    let j = rem % n;
                    rem /= n;
                    let centered = if j < n / 2 { j } else { n - j };
                    if centered * 8 >= n * 3 {
                        outer = true;
                    }
                }
                if outer {
                    tail += m;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    pub fn check_resolution(&self, state: &GridState) -> Result<()> {
        let tail = self.spectral_tail(state);
        if tail > ALIASING_TOL {
            return Err(Error::Aliasing(tail));
        }
        Ok(())
    }

    /// Band component: pointwise `Pi_band(x)` or transform-side `Pi_band(xi)`.
    pub fn project_band(&self, state: &GridState, band: Band) -> Result<GridState> {
        project_band(&self.model, state, band)
    }
}

fn depends_on_t(form: &MatrixForm) -> bool {
    use crate::models::ScalarField;
    let dep = |s: &ScalarField| match s {
        ScalarField::Expr(e) => e.depends_on_t(),
        ScalarField::Func(_) => true,
    };
    dep(&form.scalar) || dep(&form.gap) || form.u.iter().any(dep)
}

/// `V_band scalar` on the grid, with `V` taken at `(x, p0)` or `(q0, xi)` and its
/// phase aligned to `reference`.
pub fn band_state(
    model: &ModelSpec,
    band: Band,
    t: f64,
    scalar: &[Complex64],
    grid: &GridSpec,
    eps: f64,
    anchor: &[f64],
    reference: &[Complex64],
) -> Result<GridState> {
    let d = grid.dim();
    if model.is_scalar() {
        return GridState::new(eps, grid.clone(), vec![scalar.to_vec()], t);
    }
    let mut psi = vec![scalar.to_vec(), vec![c64(0.0, 0.0); scalar.len()]];
    let lift = |psi: &mut Vec<Vec<Complex64>>, points: &mut dyn Iterator<Item = Vec<f64>>| -> Result<()> {
        for (i, z) in points.enumerate() {
            let v = model.eigvec(band, t, &z, Some(reference))?;
            let a = psi[0][i];
            psi[0][i] = a * v[0];
            psi[1][i] = a * v[1];
        }
        Ok(())
    };
    match model.projector_dependence() {
        ProjectorDependence::Constant | ProjectorDependence::Position => {
            let mut pts = grid.points().map(|mut x| {
                x.extend_from_slice(&anchor[d..]);
                x
            });
            lift(&mut psi, &mut pts)?;
        }
        ProjectorDependence::Momentum => {
            let sp = Spectral::new(grid);
            let ks: Vec<Vec<f64>> = (0..d).map(|k| wave_numbers(grid, k)).collect();
            sp.forward(&mut psi[0]);
            let mut pts = (0..grid.len()).map(|i| {
                let mut z = anchor[..d].to_vec();
                z.extend(frequency_point(grid, i, eps, &ks));
                z
            });
            lift(&mut psi, &mut pts)?;
            for c in psi.iter_mut() {
                sp.inverse(c);
            }
        }
        ProjectorDependence::Mixed => {
            return Err(Error::Unsupported("grid eigenvectors need projectors depending on x only or xi only".into()))
        }
    }
    GridState::new(eps, grid.clone(), psi, t)
}

/// Band component of `state` for models whose projectors depend on `x` only or `xi` only.
pub fn project_band(model: &ModelSpec, state: &GridState, band: Band) -> Result<GridState> {
    if model.is_scalar() {
        if band == 1 {
            return Ok(state.clone());
        }
        return Err(Error::Dimension("scalar models have one band".into()));
    }
    let d = state.grid.dim();
    let mut out = state.clone();
    match model.projector_dependence() {
        ProjectorDependence::Constant | ProjectorDependence::Position => {
            let mats: Result<Vec<CMat>> = state
                .grid
                .points()
                .map(|x| {
                    let mut z = x;
                    z.extend(std::iter::repeat_n(0.0, d));
                    model.projector(band, state.t, &z)
                })
                .collect();
            apply_pointwise(&mut out.psi, &mats?);
        }
        ProjectorDependence::Momentum => {
            let sp = Spectral::new(&state.grid);
            let ks: Vec<Vec<f64>> = (0..d).map(|k| wave_numbers(&state.grid, k)).collect();
            for c in out.psi.iter_mut() {
                sp.forward(c);
            }
            let mats: Result<Vec<CMat>> = (0..state.grid.len())
                .map(|i| {
                    let mut z = vec![0.0; d];
                    z.extend(frequency_point(&state.grid, i, state.eps, &ks));
                    model.projector(band, state.t, &z)
                })
                .collect();
            apply_pointwise(&mut out.psi, &mats?);
            for c in out.psi.iter_mut() {
                sp.inverse(c);
            }
        }
        ProjectorDependence::Mixed => {
            return Err(Error::Unsupported("grid projection needs projectors depending on x only or xi only".into()))
        }
    }
    Ok(out)
}

/// Total, per-band and band-2 overlap comparison of two states.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ErrorReport {
    pub total: f64,
    pub band1: f64,
    pub band2: f64,
    /// `|<a_2, b_2>| / (|a_2| |b_2|)` of the band-2 components.
    pub overlap_band2: f64,
    pub norm_reference_band2: f64,
    pub norm_candidate_band2: f64,
}

fn diff_norm(grid: &GridSpec, a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
    let d: Vec<Vec<Complex64>> = a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect()).collect();
    grid.norm_vec(&d)
}

/// Discrete L² comparison of `state` with a reconstructed array on the same grid.
pub fn l2_error(model: &ModelSpec, state: &GridState, candidate: &[Vec<Complex64>]) -> Result<ErrorReport> {
    if candidate.len() != state.psi.len() || candidate.iter().any(|c| c.len() != state.grid.len()) {
        return Err(Error::Grid("candidate array does not match the state grid".into()));
    }
    let total = diff_norm(&state.grid, &state.psi, candidate);
    if model.is_scalar() {
        return Ok(ErrorReport {
            total,
            band1: total,
            band2: 0.0,
            overlap_band2: 0.0,
            norm_reference_band2: 0.0,
            norm_candidate_band2: 0.0,
        });
    }
    let cand = GridState { psi: candidate.to_vec(), ..state.clone() };
    let (a1, a2) = (project_band(model, state, 1)?, project_band(model, state, 2)?);
    let (b1, b2) = (project_band(model, &cand, 1)?, project_band(model, &cand, 2)?);
    let g = &state.grid;
    let na = g.norm_vec(&a2.psi);
    let nb = g.norm_vec(&b2.psi);
    let overlap = if na > 0.0 && nb > 0.0 { g.inner_vec(&a2.psi, &b2.psi).norm() / (na * nb) } else { 0.0 };
    Ok(ErrorReport {
        total,
        band1: diff_norm(g, &a1.psi, &b1.psi),
        band2: diff_norm(g, &a2.psi, &b2.psi),
        overlap_band2: overlap,
        norm_reference_band2: na,
        norm_candidate_band2: nb,
    })
}

/// Periodic box containing `centers` (positions) with `margin` on each side and
/// a resolution fine enough for momenta up to `p_max`, rounded up to powers of two.
pub fn auto_grid(eps: f64, centers: &[Vec<f64>], p_max: f64, margin: f64) -> Result<GridSpec> {
    let d = centers.first().map(|c| c.len()).ok_or_else(|| Error::Grid("no centers".into()))?;
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for c in centers {
        for k in 0..d {
            lower[k] = lower[k].min(c[k] - margin);
            upper[k] = upper[k].max(c[k] + margin);
        }
    }
    // frequencies reach eps * pi / dx; keep p_max inside the inner five eighths
    let dx_max = std::f64::consts::PI * eps * 0.625 / p_max.max(eps);
    let n = (0..d)
        .map(|k| (((upper[k] - lower[k]) / dx_max).ceil() as usize).next_power_of_two().max(16))
        .collect();
    GridSpec::new(lower, upper, n)
}
