//! Two-branch semiclassical solution: adiabatic transport on band 1, transfer at
//! the first crossing, transport of the spawned packet on band 2.

use num_complex::Complex64;
use serde::Serialize;

use crate::crossing::{detect_crossing, transfer_polygaussian, CrossingEvent, TransferConvention};
use crate::dynamics::{integrate_to, uniform_times, OdeControls, Trace, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::gaussian::{
    evaluate_on_grid, inner_product, metaplectic_apply_with_root, weyl_apply, PolyGaussian, WeylPolyOp,
};
use crate::grid::GridSpec;
use crate::linalg::{c64, cdet, BranchTracker, I};
use crate::models::{Band, ModelSpec};

/// One wave packet `weight * e^{iS/eps} V WP_z profile` at a fixed time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WavePacketBranch {
    pub band: Band,
    pub t: f64,
    pub center: Vec<f64>,
    pub action: f64,
    pub profile: PolyGaussian,
    pub eigvec: Vec<Complex64>,
    pub weight: Complex64,
    pub born_at: f64,
    /// `d_{z_k} V(t, z)` at the center, when the first-order eigenvector symbol is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigvec_grad: Option<Vec<Vec<Complex64>>>,
}

impl WavePacketBranch {
    /// Initial band-1 packet with the model's eigenvector at `(t0, z0)`.
    pub fn initial(model: &ModelSpec, t0: f64, z0: &[f64], profile: PolyGaussian) -> Result<Self> {
        let eigvec = model.eigvec(1, t0, z0, None)?;
        Ok(WavePacketBranch {
            band: 1,
            t: t0,
            center: z0.to_vec(),
            action: 0.0,
            profile,
            eigvec,
            weight: c64(1.0, 0.0),
            born_at: t0,
            eigvec_grad: None,
        })
    }

    pub fn d(&self) -> usize {
        self.center.len() / 2
    }

    /// Per-component unit-scale profiles `V_n phi + sqrt(eps) sum_k d_k V_n op(w_k) phi`.
    pub fn component_profiles(&self, eps: f64) -> Result<Vec<PolyGaussian>> {
        let d = self.d();
        let mut corr = Vec::new();
        if let Some(grad) = &self.eigvec_grad {
            for k in 0..2 * d {
                let op = if k < d { WeylPolyOp::position(d, k) } else { WeylPolyOp::momentum(d, k - d) };
                corr.push((k, weyl_apply(&op, &self.profile)?.poly, grad));
            }
        }
        Ok((0..self.eigvec.len())
            .map(|n| {
                let mut g = self.profile.clone();
                let mut poly = self.profile.poly.scale(self.eigvec[n]);
                for (k, q, grad) in &corr {
                    poly = poly.add(&q.scale(grad[*k][n] * eps.sqrt()));
                }
                g.poly = poly;
                g
            })
            .collect())
    }

    /// L² norm of the branch, `|weight|` times the vector profile norm.
    pub fn norm(&self, eps: f64) -> Result<f64> {
        let s: f64 = self.component_profiles(eps)?.iter().map(|g| inner_product(g, g).re).sum();
        Ok(self.weight.norm() * s.max(0.0).sqrt())
    }

    /// Grid samples of the branch, one array per component.
    pub fn sample(&self, eps: f64, grid: &GridSpec) -> Result<(Vec<Vec<Complex64>>, bool)> {
        let phase = self.weight * Complex64::from_polar(1.0, self.action / eps);
        let mut under = false;
        let mut out = Vec::new();
        for g in self.component_profiles(eps)? {
            let s = evaluate_on_grid(&g, &self.center, eps, grid)?;
            under |= s.under_resolved;
            out.push(s.values.into_iter().map(|v| v * phase).collect());
        }
        Ok((out, under))
    }
}

/// Knobs of [`propagate`].
#[derive(Clone, Debug)]
pub struct PropagateOptions {
    pub with_b1: bool,
    pub convention: TransferConvention,
    pub ode: OdeControls,
    /// Spacing of the internal samples used for crossing search and branch tracking.
    pub sample_dt: f64,
    /// Times at which snapshots are kept; `t_end` is always kept.
    pub sample_times: Vec<f64>,
    /// Adds the first-order term of the eigenvector symbol on the main branch.
    pub first_order_eigvec: bool,
    pub eigvec_fd_step: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions {
            with_b1: false,
            convention: TransferConvention::default(),
            ode: OdeControls::default(),
            sample_dt: 0.01,
            sample_times: Vec::new(),
            first_order_eigvec: true,
            eigvec_fd_step: 1e-4,
        }
    }
}

impl TransferConvention {
    /// Sign in front of the spawned branch given the orientation of `V_2`.
    pub fn spawn_sign(self) -> f64 {
        match self {
            TransferConvention::Theorem => 1.0,
            TransferConvention::Derived => -1.0,
        }
    }
}

/// All branches at one kept time.
#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub branches: Vec<WavePacketBranch>,
    /// `|t - t_flat| < eps^{2/9}`: no accuracy claim.
    pub boundary_layer: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Diagnostics {
    pub symplectic_defect: f64,
    pub eigvec_norm_defect: f64,
    pub eigenspace_defect: f64,
    pub min_siegel_eig: f64,
    /// `max | |M[F] phi_0| - |phi_0| |` over the kept times.
    pub main_profile_norm_drift: f64,
    /// Later crossings of the band-1 trajectory (not propagated).
    pub main_extra_crossings: Vec<f64>,
    /// Crossings of the spawned band-2 trajectory (not propagated).
    pub spawned_crossings: Vec<f64>,
    pub transfer_prefactor: Option<Complex64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SemiclassicalSolution {
    pub eps: f64,
    pub t0: f64,
    pub t_end: f64,
    pub convention: TransferConvention,
    pub snapshots: Vec<Snapshot>,
    pub crossing: Option<CrossingEvent>,
    pub diagnostics: Diagnostics,
}

impl SemiclassicalSolution {
    pub fn snapshot(&self, t: f64) -> Result<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| Error::Invariant(format!("no snapshot kept at t = {t}")))
    }

    pub fn final_branches(&self) -> &[WavePacketBranch] {
        &self.snapshots.last().expect("at least one snapshot").branches
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Grid samples of a snapshot with per-branch norms.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub psi: Vec<Vec<Complex64>>,
    pub branch_norms: Vec<f64>,
    pub branch_bands: Vec<Band>,
    pub under_resolved: bool,
}

/// `sum_branches weight e^{iS/eps} V WP_z profile` on `grid` at a kept time.
pub fn reconstruct(solution: &SemiclassicalSolution, t: f64, grid: &GridSpec) -> Result<Reconstruction> {
    let snap = solution.snapshot(t)?;
    let eps = solution.eps;
    let mut order: Vec<&WavePacketBranch> = snap.branches.iter().collect();
    order.sort_by(|a, b| (a.band, a.born_at).partial_cmp(&(b.band, b.born_at)).expect("finite times"));
    let n = order.first().map(|b| b.eigvec.len()).unwrap_or(1);
    let mut psi = vec![vec![c64(0.0, 0.0); grid.len()]; n];
    let mut under = false;
    let mut norms = Vec::new();
    let mut bands = Vec::new();
    for b in order {
        let (vals, u) = b.sample(eps, grid)?;
        under |= u;
        for (acc, v) in psi.iter_mut().zip(vals) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        norms.push(b.norm(eps)?);
        bands.push(b.band);
    }
    Ok(Reconstruction { psi, branch_norms: norms, branch_bands: bands, under_resolved: under })
}

/// Profiles `M[F(t)] phi` along a trace with `det^{1/2}(A + B Gamma)` tracked sample by sample.
struct ProfileTracker {
    tracker: BranchTracker,
    gamma0: crate::linalg::CMat,
}

impl ProfileTracker {
    fn new(phi: &PolyGaussian) -> Self {
        ProfileTracker { tracker: BranchTracker::new(c64(1.0, 0.0)), gamma0: phi.width.matrix().clone() }
    }

    fn update(&mut self, b: &TrajectoryBundle) -> Result<()> {
        self.tracker.update(cdet(&b.f_blocks.a_plus_b_gamma(&self.gamma0)))
    }

    fn apply(&self, b: &TrajectoryBundle, phi: &PolyGaussian) -> Result<PolyGaussian> {
        metaplectic_apply_with_root(&b.f_blocks, phi, self.tracker.sqrt())
    }
}

fn b1_corrected(phi0: &PolyGaussian, b: &TrajectoryBundle, eps: f64) -> Result<PolyGaussian> {
    let Some(cubic) = b.cubic_symbol() else {
        return Ok(phi0.clone());
    };
    if cubic.is_zero() {
        return Ok(phi0.clone());
    }
    let op = WeylPolyOp::new(phi0.dim(), cubic.scale(-I))?;
    let q = weyl_apply(&op, phi0)?;
    let mut out = phi0.clone();
    out.poly = phi0.poly.add(&q.poly.scale(c64(eps.sqrt(), 0.0)));
    out.poly.check_cap(phi0.degree_cap)?;
    Ok(out)
}

fn kept_times(t0: f64, t_end: f64, opts: &PropagateOptions) -> Vec<f64> {
    let mut v: Vec<f64> = opts.sample_times.iter().copied().filter(|&t| t >= t0 && t <= t_end).collect();
    v.push(t_end);
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    v
}

fn is_kept(kept: &[f64], t: f64) -> bool {
    kept.iter().any(|k| (k - t).abs() <= 1e-12 * t.abs().max(1.0))
}

fn merged_times(t0: f64, t_end: f64, opts: &PropagateOptions, extra: &[f64]) -> Vec<f64> {
    let mut v = uniform_times(t0, t_end, opts.sample_dt);
    v.extend(opts.sample_times.iter().copied());
    v.extend_from_slice(extra);
    v.retain(|&t| t > t0 && t < t_end);
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    v
}

/// Eigenvector gradients at each sample of the main trace from neighbouring trajectories.
fn eigvec_gradients(
    model: &ModelSpec,
    band: Band,
    start: &TrajectoryBundle,
    t_end: f64,
    times: &[f64],
    opts: &PropagateOptions,
    main: &Trace,
) -> Result<Vec<Vec<Vec<Complex64>>>> {
    let d = start.d();
    let h = opts.eigvec_fd_step;
    let mut plus_minus = Vec::with_capacity(4 * d);
    for k in 0..2 * d {
        for s in [1.0, -1.0] {
            let mut z = start.z.clone();
            z[k] += s * h;
            let y = model.eigvec(band, start.t, &z, Some(&start.y_vec))?;
            let b0 = TrajectoryBundle::new(start.t, z, y);
            plus_minus.push(integrate_to(model, band, &b0, t_end, times, &opts.ode)?);
        }
    }
    let n = start.y_vec.len();
    Ok((0..main.samples.len())
        .map(|i| {
            let finv = main.samples[i].f_blocks.inverse().to_matrix();
            let dy: Vec<Vec<Complex64>> = (0..2 * d)
                .map(|k| {
                    let (p, m) = (&plus_minus[2 * k].samples[i], &plus_minus[2 * k + 1].samples[i]);
                    (0..n).map(|c| (p.y_vec[c] - m.y_vec[c]) / (2.0 * h)).collect()
                })
                .collect();
            (0..2 * d)
                .map(|j| (0..n).map(|c| (0..2 * d).map(|k| dy[k][c] * finv[(k, j)]).sum()).collect())
                .collect()
        })
        .collect())
}

fn run(
    model: &ModelSpec,
    eps: f64,
    initial: &WavePacketBranch,
    t_end: f64,
    opts: &PropagateOptions,
    allow_crossing: bool,
) -> Result<SemiclassicalSolution> {
    if initial.band != 1 {
        return Err(Error::Unsupported("initial packet must sit on band 1; swap the model for band 2".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config { key: "eps".into(), message: "must be positive".into() });
    }
    let t0 = initial.t;
    if !model.is_scalar() && model.f(t0, &initial.center) == 0.0 {
        return Err(Error::NearCrossing { gap: 0.0, floor: 0.0 });
    }
    let kept = kept_times(t0, t_end, opts);
    let times = merged_times(t0, t_end, opts, &[]);
    let mut b0 = TrajectoryBundle::new(t0, initial.center.clone(), initial.eigvec.clone());
    b0.s_action = initial.action;
    if opts.with_b1 {
        b0 = b0.with_cubic(initial.d());
    }
    let main = integrate_to(model, 1, &b0, t_end, &times, &opts.ode)?;

    let mut diag = Diagnostics {
        symplectic_defect: main.symplectic_defect,
        eigvec_norm_defect: main.norm_defect,
        eigenspace_defect: main.eigenspace_defect,
        min_siegel_eig: f64::INFINITY,
        ..Default::default()
    };

    let event = if model.is_scalar() { None } else { detect_crossing(model, &main, &opts.ode)? };
    if let Some(ev) = &event {
        if !allow_crossing {
            return Err(Error::GapViolation { t: ev.t_flat, gap: 0.0 });
        }
        diag.main_extra_crossings = ev.extra_crossings.clone();
    }
    let spawn = event.as_ref().filter(|ev| !ev.zero_transfer && ev.t_flat < t_end);

    let grads = if opts.first_order_eigvec && model.n > 1 {
        Some(eigvec_gradients(model, 1, &b0, t_end, &times, opts, &main)?)
    } else {
        None
    };

    let phi0 = &initial.profile;
    let norm0 = phi0.norm();
    let mut main_branches: Vec<(f64, WavePacketBranch)> = Vec::new();
    let mut tracker = ProfileTracker::new(phi0);
    let mut phi_flat = None;
    for (i, b) in main.samples.iter().enumerate() {
        if i > 0 {
            tracker.update(b)?;
        }
        if let Some(ev) = spawn {
            let next_t = main.samples.get(i + 1).map(|n| n.t).unwrap_or(f64::INFINITY);
            if phi_flat.is_none() && b.t <= ev.t_flat && ev.t_flat < next_t {
                let bf = ev.bundle.as_ref().expect("detected events carry the bundle");
                let mut tf = tracker.clone_state();
                tf.update(bf)?;
                phi_flat = Some(tf.apply(bf, phi0)?);
            }
        }
        if !is_kept(&kept, b.t) {
            continue;
        }
        let leading = tracker.apply(b, phi0)?;
        diag.main_profile_norm_drift = diag.main_profile_norm_drift.max((leading.norm() - norm0).abs());
        let profile = if opts.with_b1 { tracker.apply(b, &b1_corrected(phi0, b, eps)?)? } else { leading };
        diag.min_siegel_eig = diag.min_siegel_eig.min(profile.width.min_imag_eig());
        main_branches.push((
            b.t,
            WavePacketBranch {
                band: 1,
                t: b.t,
                center: b.z.clone(),
                action: b.s_action,
                profile,
                eigvec: b.y_vec.clone(),
                weight: initial.weight,
                born_at: initial.born_at,
                eigvec_grad: grads.as_ref().map(|g| g[i].clone()),
            },
        ));
    }

    let mut spawned: Vec<(f64, WavePacketBranch)> = Vec::new();
    if let Some(ev) = spawn {
        let phi1 = phi_flat.ok_or_else(|| Error::Invariant("crossing time outside the sampled trace".into()))?;
        let params = ev.transfer_params(opts.convention)?;
        let (pre, g2) = transfer_polygaussian(&params, &phi1)?;
        diag.transfer_prefactor = Some(pre);
        let weight = initial.weight * eps.sqrt() * ev.gamma_flat * pre * opts.convention.spawn_sign();
        let mut b2 = TrajectoryBundle::new(ev.t_flat, ev.z_flat.clone(), ev.v2_flat.clone());
        b2.s_action = ev.s_flat;
        let times2 = merged_times(ev.t_flat, t_end, opts, &[]);
        let tr2 = integrate_to(model, 2, &b2, t_end, &times2, &opts.ode)?;
        diag.symplectic_defect = diag.symplectic_defect.max(tr2.symplectic_defect);
        diag.eigvec_norm_defect = diag.eigvec_norm_defect.max(tr2.norm_defect);
        diag.eigenspace_defect = diag.eigenspace_defect.max(tr2.eigenspace_defect);
        let fs: Vec<f64> = tr2.samples.iter().map(|b| model.f(b.t, &b.z)).collect();
        for k in 1..fs.len().saturating_sub(1) {
            if fs[k] * fs[k + 1] < 0.0 {
                diag.spawned_crossings.push(tr2.samples[k].t);
            }
        }
        let grads2 = if opts.first_order_eigvec {
            Some(eigvec_gradients(model, 2, &b2, t_end, &times2, opts, &tr2)?)
        } else {
            None
        };
        let mut tr = ProfileTracker::new(&g2);
        for (i, b) in tr2.samples.iter().enumerate() {
            if i > 0 {
                tr.update(b)?;
            }
            if !is_kept(&kept, b.t) || b.t <= ev.t_flat {
                continue;
            }
            let profile = tr.apply(b, &g2)?;
            diag.min_siegel_eig = diag.min_siegel_eig.min(profile.width.min_imag_eig());
            spawned.push((
                b.t,
                WavePacketBranch {
                    band: 2,
                    t: b.t,
                    center: b.z.clone(),
                    action: b.s_action,
                    profile,
                    eigvec: b.y_vec.clone(),
                    weight,
                    born_at: ev.t_flat,
                    eigvec_grad: grads2.as_ref().map(|g| g[i].clone()),
                },
            ));
        }
    }

    let layer = eps.powf(2.0 / 9.0);
    let snapshots = main_branches
        .into_iter()
        .map(|(t, b)| {
            let mut branches = vec![b];
            if let Some((_, s)) = spawned.iter().find(|(ts, _)| (ts - t).abs() <= 1e-12 * t.abs().max(1.0)) {
                branches.push(s.clone());
            }
            let boundary_layer = event.as_ref().is_some_and(|ev| (t - ev.t_flat).abs() < layer);
            Snapshot { t, branches, boundary_layer }
        })
        .collect();
    Ok(SemiclassicalSolution {
        eps,
        t0,
        t_end,
        convention: opts.convention,
        snapshots,
        crossing: event,
        diagnostics: diag,
    })
}

impl ProfileTracker {
    fn clone_state(&self) -> ProfileTracker {
        ProfileTracker { tracker: self.tracker, gamma0: self.gamma0.clone() }
    }
}

/// Band-1 propagation with transfer at the first crossing.
pub fn propagate(
    model: &ModelSpec,
    eps: f64,
    initial: &WavePacketBranch,
    t_end: f64,
    opts: &PropagateOptions,
) -> Result<SemiclassicalSolution> {
    run(model, eps, initial, t_end, opts, true)
}

/// Single-branch propagation for gapped models, always with the `b_1` correction.
pub fn adiabatic_propagate(
    model: &ModelSpec,
    eps: f64,
    initial: &WavePacketBranch,
    t_end: f64,
    opts: &PropagateOptions,
) -> Result<SemiclassicalSolution> {
    let opts = PropagateOptions { with_b1: true, ..opts.clone() };
    run(model, eps, initial, t_end, &opts, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::SiegelMatrix;
    use crate::models::{make_scalar, make_two_level, ScalarField};

    fn e(s: &str) -> ScalarField {
        ScalarField::parse(s).unwrap()
    }

    fn unit() -> PolyGaussian {
        PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 1.0)).unwrap())
    }

    #[test]
    fn harmonic_has_no_b1() {
        let m = make_scalar(1, e("0.5*(q^2 + p^2)")).unwrap();
        let init = WavePacketBranch::initial(&m, 0.0, &[1.0, 0.0], unit()).unwrap();
        let opts = PropagateOptions { with_b1: true, ..Default::default() };
        let sol = propagate(&m, 0.01, &init, 1.0, &opts).unwrap();
        let b = &sol.final_branches()[0];
        assert!(b.profile.poly.is_constant_one() || b.profile.poly.degree() == 0);
        assert!((b.profile.norm() - 1.0).abs() < 1e-10);
        // the harmonic oscillator maps i to i
        assert!((b.profile.width.matrix()[(0, 0)] - c64(0.0, 1.0)).norm() < 1e-9);
    }

    #[test]
    fn gapped_two_level_single_branch() {
        let m = make_two_level(1, e("0.5*p^2"), e("1 + 0.1*q^2"), [e("cos(0.3*q)"), e("sin(0.3*q)"), e("0")]).unwrap();
        let init = WavePacketBranch::initial(&m, 0.0, &[-1.0, 1.0], unit()).unwrap();
        let opts = PropagateOptions { sample_times: vec![0.5], ..Default::default() };
        let sol = adiabatic_propagate(&m, 0.01, &init, 1.0, &opts).unwrap();
        assert!(sol.crossing.is_none());
        assert_eq!(sol.snapshots.len(), 2);
        assert!(sol.final_branches().len() == 1);
        let with = propagate(&m, 0.01, &init, 1.0, &PropagateOptions { with_b1: true, ..opts.clone() }).unwrap();
        assert_eq!(with.final_branches(), sol.final_branches());
        assert!(sol.diagnostics.main_profile_norm_drift < 1e-8);
    }

    #[test]
    fn crossing_spawns_branch() {
        let m = make_two_level(1, e("0.5*p^2"), e("0.5*q"), [e("cos(atan(q))"), e("sin(atan(q))"), e("0")]).unwrap();
        let init = WavePacketBranch::initial(&m, 0.0, &[-1.0, 1.5], unit()).unwrap();
        let opts = PropagateOptions { sample_times: vec![0.2], ..Default::default() };
        let sol = propagate(&m, 0.01, &init, 1.5, &opts).unwrap();
        let ev = sol.crossing.as_ref().unwrap();
        assert!(ev.t_flat > 0.5 && ev.t_flat < 1.0);
        assert_eq!(sol.snapshot(0.2).unwrap().branches.len(), 1);
        let fin = sol.final_branches();
        assert_eq!(fin.len(), 2);
        assert_eq!(fin[1].band, 2);
        assert!((fin[1].weight.norm() - 0.1 * ev.gamma_flat * sol.diagnostics.transfer_prefactor.unwrap().norm()).abs() < 1e-12);
        assert!(sol.to_json().unwrap().contains("\"t_flat\""));
    }

    #[test]
    fn reconstruct_initial_is_packet_times_eigvec() {
        let m = make_two_level(1, e("0.5*p^2"), e("1"), [e("0.6"), e("0.8"), e("0")]).unwrap();
        let init = WavePacketBranch::initial(&m, 0.0, &[0.0, 1.0], unit()).unwrap();
        let opts = PropagateOptions { sample_times: vec![0.0], ..Default::default() };
        let sol = propagate(&m, 0.01, &init, 0.5, &opts).unwrap();
        let grid = GridSpec::uniform_1d(-2.0, 2.0, 512);
        let r = reconstruct(&sol, 0.0, &grid).unwrap();
        let base = evaluate_on_grid(&init.profile, &[0.0, 1.0], 0.01, &grid).unwrap().values;
        for c in 0..2 {
            for i in 0..grid.len() {
                assert!((r.psi[c][i] - base[i] * init.eigvec[c]).norm() < 1e-12);
            }
        }
        assert!((r.branch_norms[0] - 1.0).abs() < 1e-10);
    }
}
