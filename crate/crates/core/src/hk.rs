//! Herman–Kluk propagation with frozen unit-width Gaussians.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{integrate_to, uniform_times, OdeControls, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::gaussian::{inner_product, translate, PolyGaussian, SiegelMatrix};
use crate::grid::GridSpec;
use crate::linalg::{c64, cdet, BranchTracker, CMat};
use crate::models::{Band, ModelSpec};

/// Relative coefficient size tolerated on the boundary of the phase-space box.
pub const COVERAGE_TOL: f64 = 1e-8;

/// Tensor trapezoid rule on a box in phase space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseSpaceQuadrature {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl PhaseSpaceQuadrature {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != nodes.len() || lower.len() % 2 != 0 {
            return Err(Error::Dimension("phase-space box needs 2d bounds and node counts".into()));
        }
        if nodes.iter().any(|&n| n < 2) || lower.iter().zip(&upper).any(|(a, b)| !(b > a)) {
            return Err(Error::Grid("degenerate phase-space box".into()));
        }
        Ok(PhaseSpaceQuadrature { lower, upper, nodes })
    }

    /// Cube of half-width `radius * sqrt(eps)` around `center` with node spacing `spacing * sqrt(eps)`.
    pub fn around(center: &[f64], eps: f64, radius: f64, spacing: f64) -> Result<Self> {
        let r = radius * eps.sqrt();
        let n = (2.0 * radius / spacing).ceil() as usize + 1;
        Self::new(
            center.iter().map(|c| c - r).collect(),
            center.iter().map(|c| c + r).collect(),
            vec![n; center.len()],
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len() / 2
    }

    fn step(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / (self.nodes[k] - 1) as f64
    }

    /// Nodes with trapezoid weights and a boundary flag, in row-major order.
    pub fn points(&self) -> Vec<(Vec<f64>, f64, bool)> {
        let total: usize = self.nodes.iter().product();
        (0..total)
            .map(|mut flat| {
                let mut z = vec![0.0; self.lower.len()];
                let mut w = 1.0;
                let mut edge = false;
                for k in (0..self.lower.len()).rev() {
                    let i = flat % self.nodes[k];
                    flat /= self.nodes[k];
                    z[k] = self.lower[k] + i as f64 * self.step(k);
                    let end = i == 0 || i + 1 == self.nodes[k];
                    w *= self.step(k) * if end { 0.5 } else { 1.0 };
                    edge |= end;
                }
                (z, w, edge)
            })
            .collect()
    }
}

/// One phase-space node of the decomposition, before or after propagation.
#[derive(Clone, Debug)]
pub struct HKSample {
    pub z0: Vec<f64>,
    pub weight: f64,
    pub coeff: Complex64,
    pub bundle: TrajectoryBundle,
    pub prefactor: Complex64,
    pub eigvec: Vec<Complex64>,
}

/// The unit coherent state `g_z` in unit-scale coordinates, up to the phase `e^{-i p.q/(2 eps)}`.
fn coherent(d: usize, z: &[f64], eps: f64) -> Result<PolyGaussian> {
    let g = PolyGaussian::unit(SiegelMatrix::identity(d));
    let s: Vec<f64> = z.iter().map(|x| x / eps.sqrt()).collect();
    Ok(translate(&g, &s))
}

fn pq(z: &[f64]) -> f64 {
    let d = z.len() / 2;
    (0..d).map(|i| z[i] * z[d + i]).sum()
}

/// `<g_z, WP_{center} profile>` in closed form.
pub fn coherent_overlap(z: &[f64], center: &[f64], profile: &PolyGaussian, eps: f64) -> Result<Complex64> {
    let d = profile.dim();
    let a = coherent(d, z, eps)?;
    let s: Vec<f64> = center.iter().map(|x| x / eps.sqrt()).collect();
    let b = translate(profile, &s);
    let phase = (pq(z) - pq(center)) / (2.0 * eps);
    Ok(Complex64::from_polar(1.0, phase) * inner_product(&a, &b))
}

/// Samples of `g_z` on a grid.
pub fn coherent_on_grid(z: &[f64], eps: f64, grid: &GridSpec) -> Vec<Complex64> {
    let d = z.len() / 2;
    let (q, p) = z.split_at(d);
    let amp = (PI * eps).powf(-(d as f64) / 4.0);
    grid.points()
        .map(|x| {
            let r2: f64 = (0..d).map(|i| (x[i] - q[i]).powi(2)).sum();
            let ph: f64 = (0..d).map(|i| p[i] * (x[i] - q[i])).sum();
            Complex64::from_polar(amp * (-r2 / (2.0 * eps)).exp(), ph / eps)
        })
        .collect()
}

fn seeds_from(
    model: &ModelSpec,
    band: Band,
    t0: f64,
    quad: &PhaseSpaceQuadrature,
    coeff: impl Fn(&[f64]) -> Result<Complex64> + Sync,
) -> Result<Vec<HKSample>> {
    let pts = quad.points();
    let coeffs: Vec<Complex64> = pts.par_iter().map(|(z, _, _)| coeff(z)).collect::<Result<_>>()?;
    let max = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let edge = pts.iter().zip(&coeffs).filter(|((_, _, e), _)| *e).map(|(_, c)| c.norm()).fold(0.0, f64::max);
    if max == 0.0 || edge > COVERAGE_TOL * max {
        return Err(Error::Grid(format!(
            "phase-space box does not cover the data: boundary coefficient {edge:.2e} vs peak {max:.2e}"
        )));
    }
    let mut prev: Option<Vec<Complex64>> = None;
    let mut out = Vec::with_capacity(pts.len());
    for ((z, w, _), c) in pts.into_iter().zip(coeffs) {
        let y = model.eigvec(band, t0, &z, prev.as_deref())?;
        prev = Some(y.clone());
        out.push(HKSample {
            bundle: TrajectoryBundle::new(t0, z.clone(), y.clone()),
            z0: z,
            weight: w,
            coeff: c,
            prefactor: c64(1.0, 0.0),
            eigvec: y,
        });
    }
    Ok(out)
}

/// Seeds for `WP_{center} profile` (scalar amplitude of the band).
pub fn hk_decompose(
    model: &ModelSpec,
    band: Band,
    t0: f64,
    center: &[f64],
    profile: &PolyGaussian,
    eps: f64,
    quad: &PhaseSpaceQuadrature,
) -> Result<Vec<HKSample>> {
    if quad.dim() != profile.dim() || center.len() != 2 * profile.dim() {
        return Err(Error::Dimension("quadrature, center and profile dimensions differ".into()));
    }
    seeds_from(model, band, t0, quad, |z| coherent_overlap(z, center, profile, eps))
}

/// Seeds for a scalar amplitude sampled on a grid.
pub fn hk_decompose_grid(
    model: &ModelSpec,
    band: Band,
    t0: f64,
    values: &[Complex64],
    grid: &GridSpec,
    eps: f64,
    quad: &PhaseSpaceQuadrature,
) -> Result<Vec<HKSample>> {
    if quad.dim() != grid.dim() || values.len() != grid.len() {
        return Err(Error::Dimension("quadrature and grid dimensions differ".into()));
    }
    seeds_from(model, band, t0, quad, |z| Ok(grid.inner(&coherent_on_grid(z, eps, grid), values)))
}

/// `2^{-d/2} det^{1/2}(A + D + i(C - B))` before the square root.
pub fn hk_det(b: &TrajectoryBundle) -> Complex64 {
    let f = &b.f_blocks;
    let m: CMat = (&f.a + &f.d).map(|x| c64(x, 0.0)) + (&f.c - &f.b).map(|x| c64(0.0, x));
    cdet(&m)
}

#[derive(Clone, Debug)]
pub struct HKOptions {
    pub ode: OdeControls,
    /// Spacing of the samples on which the prefactor branch is tracked.
    pub track_dt: f64,
}

impl Default for HKOptions {
    fn default() -> Self {
        HKOptions { ode: OdeControls::default(), track_dt: 0.01 }
    }
}

/// Propagated seeds, ready to evaluate on grids.
#[derive(Clone, Debug)]
pub struct HKEvaluator {
    pub eps: f64,
    pub t: f64,
    pub band: Band,
    pub samples: Vec<HKSample>,
}

/// Carries every seed to `t_end` along `band`, tracking the prefactor branch.
pub fn hk_propagate(
    model: &ModelSpec,
    band: Band,
    seeds: &[HKSample],
    eps: f64,
    t_end: f64,
    opts: &HKOptions,
) -> Result<HKEvaluator> {
    let d = model.d;
    let samples = seeds
        .par_iter()
        .map(|s| {
            let times = uniform_times(s.bundle.t, t_end, opts.track_dt);
            let tr = integrate_to(model, band, &s.bundle, t_end, &times, &opts.ode)?;
            let mut tracker = BranchTracker::new(hk_det(&tr.samples[0]));
            for b in &tr.samples[1..] {
                tracker.update(hk_det(b))?;
            }
            let last = tr.last().clone();
            Ok(HKSample {
                prefactor: tracker.sqrt() * 2f64.powf(-(d as f64) / 2.0),
                eigvec: last.y_vec.clone(),
                bundle: last,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HKEvaluator { eps, t: t_end, band, samples })
}

impl HKEvaluator {
    /// `(2 pi eps)^{-d} sum w c a_h e^{iS/eps} V g_{Phi(z)}`, one array per component.
    pub fn evaluate(&self, grid: &GridSpec) -> Vec<Vec<Complex64>> {
        let eps = self.eps;
        let d = grid.dim();
        let n = self.samples.first().map(|s| s.eigvec.len()).unwrap_or(1);
        let norm = (2.0 * PI * eps).powi(-(d as i32));
        let amp = (PI * eps).powf(-(d as f64) / 4.0);
        let xs: Vec<Vec<f64>> = grid.points().collect();
        // e^{-r^2/(2 eps)} < 1e-17 beyond this radius
        let cut = 80.0 * eps;
        let coeffs: Vec<Complex64> = self
            .samples
            .iter()
            .map(|s| norm * s.weight * s.coeff * s.prefactor * Complex64::from_polar(1.0, s.bundle.s_action / eps))
            .collect();
        let mut out = vec![vec![c64(0.0, 0.0); xs.len()]; n];
        let cols: Vec<Vec<Complex64>> = xs
            .par_iter()
            .map(|x| {
                let mut acc = vec![c64(0.0, 0.0); n];
                for (s, c) in self.samples.iter().zip(&coeffs) {
                    let (q, p) = s.bundle.z.split_at(d);
                    let r2: f64 = (0..d).map(|i| (x[i] - q[i]).powi(2)).sum();
                    if r2 > cut {
                        continue;
                    }
                    let ph: f64 = (0..d).map(|i| p[i] * (x[i] - q[i])).sum();
                    let g = c * Complex64::from_polar(amp * (-r2 / (2.0 * eps)).exp(), ph / eps);
                    for k in 0..n {
                        acc[k] += g * s.eigvec[k];
                    }
                }
                acc
            })
            .collect();
        for (j, col) in cols.into_iter().enumerate() {
            for k in 0..n {
                out[k][j] = col[k];
            }
        }
        out
    }

    /// Seed table with columns `z0..., coeff, z..., S, a_h, Y...` (complex values as re/im pairs).
    pub fn write_seed_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.samples.first().map(|s| s.bundle.d()).unwrap_or(1);
        let n = self.samples.first().map(|s| s.eigvec.len()).unwrap_or(1);
        let mut head: Vec<String> = (0..2 * d).map(|k| format!("z0_{k}")).collect();
        head.extend(["coeff_re".into(), "coeff_im".into()]);
        head.extend((0..2 * d).map(|k| format!("z_{k}")));
        head.extend(["S".into(), "a_re".into(), "a_im".into()]);
        for k in 0..n {
            head.extend([format!("y{k}_re"), format!("y{k}_im")]);
        }
        writeln!(w, "{}", head.join(","))?;
        for s in &self.samples {
            let mut row: Vec<String> = s.z0.iter().map(|x| format!("{x:.17e}")).collect();
            row.extend([format!("{:.17e}", s.coeff.re), format!("{:.17e}", s.coeff.im)]);
            row.extend(s.bundle.z.iter().map(|x| format!("{x:.17e}")));
            row.push(format!("{:.17e}", s.bundle.s_action));
            row.extend([format!("{:.17e}", s.prefactor.re), format!("{:.17e}", s.prefactor.im)]);
            for y in &s.eigvec {
                row.extend([format!("{:.17e}", y.re), format!("{:.17e}", y.im)]);
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{evaluate_on_grid, metaplectic_apply, SymplecticBlocks};
    use crate::linalg::I;
    use crate::models::{make_scalar, ScalarField};
    use nalgebra::DMatrix;

    fn unit1() -> PolyGaussian {
        PolyGaussian::unit(SiegelMatrix::scalar(I).unwrap())
    }

    #[test]
    fn free_motion_prefactor() {
        let m = make_scalar(1, ScalarField::parse("0.5*p^2").unwrap()).unwrap();
        let seed = HKSample {
            z0: vec![0.0, 1.0],
            weight: 1.0,
            coeff: c64(1.0, 0.0),
            bundle: TrajectoryBundle::new(0.0, vec![0.0, 1.0], vec![c64(1.0, 0.0)]),
            prefactor: c64(1.0, 0.0),
            eigvec: vec![c64(1.0, 0.0)],
        };
        for t in [0.5, 2.0, 7.0] {
            let ev = hk_propagate(&m, 1, std::slice::from_ref(&seed), 0.1, t, &HKOptions::default()).unwrap();
            let expect = (c64(2.0, -t)).sqrt() / 2f64.sqrt();
            assert!((ev.samples[0].prefactor - expect).norm() < 1e-10, "{t}");
            let direct = hk_det(&ev.samples[0].bundle).norm() / 2.0;
            assert!((ev.samples[0].prefactor.norm_sqr() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn coherent_overlap_matches_grid() {
        let eps = 0.02;
        let grid = GridSpec::uniform_1d(-3.0, 3.0, 1024);
        let profile = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.3, 0.7)).unwrap());
        let center = [0.2, -0.4];
        let psi = evaluate_on_grid(&profile, &center, eps, &grid).unwrap().values;
        for z in [[0.25, -0.35], [0.0, 0.0], [0.4, -0.6]] {
            let a = coherent_overlap(&z, &center, &profile, eps).unwrap();
            let b = grid.inner(&coherent_on_grid(&z, eps, &grid), &psi);
            assert!((a - b).norm() < 1e-10, "{a} {b}");
        }
        // the coefficient of a coherent state peaks at its own center
        let g = unit1();
        let peak = coherent_overlap(&center, &center, &g, eps).unwrap();
        assert!((peak - 1.0).norm() < 1e-12);
        let far = coherent_overlap(&[center[0] + 8.0 * (2.0 * eps).sqrt() * 1.5, center[1]], &center, &g, eps).unwrap();
        assert!(far.norm() < 1e-10);
    }

    #[test]
    fn reassembly_reproduces_input() {
        let eps = 0.02;
        let m = make_scalar(1, ScalarField::parse("0.5*p^2").unwrap()).unwrap();
        let grid = GridSpec::uniform_1d(-2.0, 2.0, 512);
        let profile = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.2, 1.5)).unwrap());
        let center = [0.1, 0.5];
        let quad = PhaseSpaceQuadrature::around(&center, eps, 11.0, 0.5).unwrap();
        let seeds = hk_decompose(&m, 1, 0.0, &center, &profile, eps, &quad).unwrap();
        let ev = HKEvaluator { eps, t: 0.0, band: 1, samples: seeds };
        let v = &ev.evaluate(&grid)[0];
        let psi = evaluate_on_grid(&profile, &center, eps, &grid).unwrap().values;
        let diff: Vec<Complex64> = v.iter().zip(&psi).map(|(a, b)| a - b).collect();
        assert!(grid.norm(&diff) < 1e-6, "{}", grid.norm(&diff));
    }

    #[test]
    fn narrow_box_fails_coverage() {
        let m = make_scalar(1, ScalarField::parse("0.5*p^2").unwrap()).unwrap();
        let quad = PhaseSpaceQuadrature::around(&[0.0, 0.0], 0.01, 2.0, 0.5).unwrap();
        assert!(hk_decompose(&m, 1, 0.0, &[0.0, 0.0], &unit1(), 0.01, &quad).is_err());
    }

    #[test]
    fn harmonic_is_exact() {
        let eps = 0.02;
        let m = make_scalar(1, ScalarField::parse("0.5*(p^2 + 4*q^2)").unwrap()).unwrap();
        let grid = GridSpec::uniform_1d(-2.5, 2.5, 512);
        let profile = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 1.0)).unwrap());
        let center = [0.5, 0.3];
        let quad = PhaseSpaceQuadrature::around(&center, eps, 11.0, 0.5).unwrap();
        let seeds = hk_decompose(&m, 1, 0.0, &center, &profile, eps, &quad).unwrap();
        let t = 1.3;
        let ev = hk_propagate(&m, 1, &seeds, eps, t, &HKOptions::default()).unwrap();
        let v = &ev.evaluate(&grid)[0];
        // exact: linear flow with omega = 2
        let (c, s) = ((2.0 * t).cos(), (2.0 * t).sin());
        let blocks = SymplecticBlocks {
            a: DMatrix::from_element(1, 1, c),
            b: DMatrix::from_element(1, 1, s / 2.0),
            c: DMatrix::from_element(1, 1, -2.0 * s),
            d: DMatrix::from_element(1, 1, c),
        };
        let zt = [c * center[0] + s / 2.0 * center[1], -2.0 * s * center[0] + c * center[1]];
        let action = 0.5 * (zt[0] * zt[1] - center[0] * center[1]);
        let g = metaplectic_apply(&blocks, &profile).unwrap();
        let exact = evaluate_on_grid(&g, &zt, eps, &grid).unwrap().values;
        let ph = Complex64::from_polar(1.0, action / eps);
        let diff: Vec<Complex64> = v.iter().zip(&exact).map(|(a, b)| a - b * ph).collect();
        assert!(grid.norm(&diff) < 1e-6, "{}", grid.norm(&diff));
    }
}
