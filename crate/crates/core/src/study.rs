//! Study execution for the command line: per-eps runs, convergence tables,
//! summaries with pass/fail checks, and the consolidated report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, HkReference, ModelConfig, StudyKind, SCHEMA_VERSION};
use crate::crossing::{
    detect_crossing, phase_expansion, transfer_gaussian, transfer_polygaussian, transfer_quadrature, CrossingEvent,
    TransferConvention, TransferParams,
};
use crate::dynamics::{integrate_to, theta_matrices, uniform_times, OdeControls, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::gaussian::{evaluate_on_grid, fourier, PolyGaussian, SiegelMatrix};
use crate::grid::GridSpec;
use crate::hk::{hk_decompose, hk_propagate, HKOptions, PhaseSpaceQuadrature};
use crate::linalg::{c64, imag_part, min_sym_eig, CMat};
use crate::models::ModelSpec;
use crate::propagator::{adiabatic_propagate, propagate, reconstruct, PropagateOptions, WavePacketBranch};
use crate::reference::{auto_grid, band_state, l2_error, GridState, Oracle};

/// One line of the convergence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub t: f64,
    pub err_total: f64,
    pub err_band1: f64,
    pub err_band2: f64,
    pub overlap_band2: f64,
    pub order_est: Option<f64>,
}

pub const CSV_HEADER: &str = "eps,t,err_total,err_band1,err_band2,overlap_band2,order_est";

impl ConvergenceRow {
    pub fn csv_line(&self) -> String {
        let o = self.order_est.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{:e},{:.6},{:.6e},{:.6e},{:.6e},{:.6},{}",
            self.eps, self.t, self.err_total, self.err_band1, self.err_band2, self.overlap_band2, o
        )
    }
}

/// A pass/fail line of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: Option<u32>,
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

impl Check {
    fn below(criterion: Option<u32>, name: &str, value: f64, limit: f64) -> Check {
        Check { criterion, name: name.into(), value, threshold: format!("< {limit:e}"), pass: value < limit }
    }

    fn above(criterion: Option<u32>, name: &str, value: f64, limit: f64) -> Check {
        Check { criterion, name: name.into(), value, threshold: format!("> {limit}"), pass: value > limit }
    }

    fn at_least(criterion: Option<u32>, name: &str, value: f64, limit: f64) -> Check {
        Check { criterion, name: name.into(), value, threshold: format!(">= {limit}"), pass: value >= limit }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub schema_version: u32,
    pub study: String,
    pub kind: StudyKind,
    pub seed: u64,
    pub rows: Vec<ConvergenceRow>,
    pub checks: Vec<Check>,
    pub details: Value,
    pub pass: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub verbose: bool,
}

fn crit(cfg: &ExperimentConfig, n: usize) -> Option<u32> {
    cfg.criteria.get(n).or(cfg.criteria.first()).copied()
}

fn log(opts: &RunOptions, msg: impl AsRef<str>) {
    if opts.verbose {
        eprintln!("{}", msg.as_ref());
    }
}

/// Observed orders `log(e_{k-1}/e_k) / log(eps_{k-1}/eps_k)` filled into the rows.
pub fn fill_orders(rows: &mut [ConvergenceRow]) {
    for k in 1..rows.len() {
        let (a, b) = (&rows[k - 1], &rows[k]);
        rows[k].order_est = Some((a.err_total / b.err_total).ln() / (a.eps / b.eps).ln());
    }
}

fn min_order(rows: &[ConvergenceRow]) -> f64 {
    rows.iter().filter_map(|r| r.order_est).fold(f64::INFINITY, f64::min)
}

fn rel_l2(grid: &GridSpec, a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    grid.norm(&diff) / grid.norm(b)
}

/// One-dimensional grid resolving a profile down to `1e-12` relative amplitude.
pub fn profile_grid(g: &PolyGaussian) -> Result<GridSpec> {
    if g.dim() != 1 {
        return Err(Error::Unsupported("profile grids are one-dimensional".into()));
    }
    let gm = g.width.matrix()[(0, 0)];
    let deg = g.poly.degree() as f64;
    let half = (2.0 * (28.0 + deg * 4.0) / gm.im).sqrt() + (deg / gm.im).sqrt();
    let kmax = gm.re.abs() * half + 6.0 * gm.norm().sqrt() + deg;
    let dy = (std::f64::consts::PI / (2.0 * kmax)).min(half / 64.0);
    let n = ((2.0 * half / dy).ceil() as usize).next_power_of_two().clamp(128, 1 << 14);
    GridSpec::new(vec![-half], vec![half], vec![n])
}

/// Relative grid-L² distance between the closed-form transfer and direct quadrature.
pub fn transfer_oracle_error(params: &TransferParams, g: &PolyGaussian) -> Result<f64> {
    let (pre, out) = transfer_polygaussian(params, g)?;
    let grid = profile_grid(&out)?;
    let q = transfer_quadrature(params, g, &grid)?;
    let closed: Vec<Complex64> = grid.points().map(|y| pre * out.value(&y)).collect();
    Ok(rel_l2(&grid, &closed, &q))
}

/// `F T_{mu,alpha,beta} g` (closed form) against `T_{mu,beta,-alpha} F g` (quadrature),
/// and the same with `T_{mu + alpha.beta, beta, -alpha}` on the right.
pub fn fourier_residuals(params: &TransferParams, g: &PolyGaussian) -> Result<(f64, f64)> {
    let (pre, tg) = transfer_polygaussian(params, g)?;
    let lhs = fourier(&tg)?.scaled(pre);
    let fg = fourier(g)?;
    let grid = profile_grid(&lhs)?;
    let l: Vec<Complex64> = grid.points().map(|y| lhs.value(&y)).collect();
    let swapped = TransferParams::new(params.mu, params.beta.clone(), params.alpha.iter().map(|a| -a).collect())?;
    let r = transfer_quadrature(&swapped, &fg, &grid)?;
    let shifted = TransferParams { mu: params.mu + params.alpha_dot_beta(), ..swapped };
    let r2 = if shifted.mu.abs() > 1e-3 { rel_l2(&grid, &l, &transfer_quadrature(&shifted, &fg, &grid)?) } else { f64::NAN };
    Ok((rel_l2(&grid, &r, &l), r2))
}

fn random_params(rng: &mut ChaCha8Rng) -> Result<(TransferParams, PolyGaussian)> {
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mu = sign * (rng.random_range(0.05f64.ln()..5f64.ln())).exp();
    let alpha = rng.random_range(-1.5..1.5);
    let beta = rng.random_range(-1.5..1.5);
    let gamma = c64(rng.random_range(-1.0..1.0), rng.random_range(0.3..3.0));
    Ok((TransferParams::new(mu, vec![alpha], vec![beta])?, PolyGaussian::unit(SiegelMatrix::scalar(gamma)?)))
}

struct Setup {
    model: ModelSpec,
    init: WavePacketBranch,
    t0: f64,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let mc = cfg.model.as_ref().expect("validated");
    let ic = cfg.initial.as_ref().expect("validated");
    let mut model = mc.build()?;
    if ic.band == 2 {
        model = model.swapped()?;
    }
    let t0 = cfg.time.as_ref().map(|t| t.t0).unwrap_or(0.0);
    let profile = ic.profile(mc.d())?;
    let init = WavePacketBranch::initial(&model, t0, &ic.z0, profile)?;
    Ok(Setup { model, init, t0 })
}

fn prop_options(cfg: &ExperimentConfig, sample_times: Vec<f64>) -> PropagateOptions {
    PropagateOptions {
        with_b1: cfg.semiclassical.with_b1,
        convention: cfg.semiclassical.convention,
        first_order_eigvec: cfg.semiclassical.first_order_eigvec,
        sample_times,
        ..Default::default()
    }
}

fn oracle_grid(cfg: &ExperimentConfig, eps: f64, centers: &[Vec<f64>]) -> Result<GridSpec> {
    match &cfg.oracle.domain {
        Some(axes) => GridSpec::new(
            axes.iter().map(|a| a.0).collect(),
            axes.iter().map(|a| a.1).collect(),
            axes.iter().map(|a| a.2).collect(),
        ),
        None => auto_grid(eps, centers, cfg.oracle.p_max, cfg.oracle.margin),
    }
}

fn initial_state(s: &Setup, eps: f64, grid: &GridSpec) -> Result<GridState> {
    let scalar = evaluate_on_grid(&s.init.profile, &s.init.center, eps, grid)?.values;
    band_state(&s.model, 1, s.t0, &scalar, grid, eps, &s.init.center, &s.init.eigvec)
}

fn slug(eps: f64) -> String {
    format!("{eps:e}").replace(['.', '-'], "_")
}

fn dump_grid(dir: &Path, name: &str, grid: &GridSpec, psi: &[Vec<Complex64>]) -> Result<()> {
    for (k, c) in psi.iter().enumerate() {
        grid.write_csv(&dir.join(format!("{name}_c{k}.csv")), c)?;
    }
    Ok(())
}

fn locate_crossing(s: &Setup, cfg: &ExperimentConfig, horizon: f64) -> Result<CrossingEvent> {
    let ctl = OdeControls::default();
    let b0 = TrajectoryBundle::new(s.t0, s.init.center.clone(), s.init.eigvec.clone());
    let tr = integrate_to(&s.model, 1, &b0, horizon, &uniform_times(s.t0, horizon, 0.01), &ctl)?;
    detect_crossing(&s.model, &tr, &ctl)?.ok_or_else(|| Error::Config {
        key: "time".into(),
        message: format!("no crossing along the band-1 trajectory before t = {horizon} (study {})", cfg.study),
    })
}

struct EpsRun {
    row: ConvergenceRow,
    extra: Value,
}

fn oracle_compare(
    cfg: &ExperimentConfig,
    s: &Setup,
    eps: f64,
    t_eval: f64,
    opts: &RunOptions,
    crossing: bool,
) -> Result<EpsRun> {
    let popts = prop_options(cfg, vec![s.t0, t_eval]);
    let sol = if crossing {
        propagate(&s.model, eps, &s.init, t_eval, &popts)?
    } else {
        adiabatic_propagate(&s.model, eps, &s.init, t_eval, &popts)?
    };
    let mut centers: Vec<Vec<f64>> = vec![s.init.center[..s.model.d].to_vec()];
    for snap in &sol.snapshots {
        for b in &snap.branches {
            centers.push(b.center[..s.model.d].to_vec());
        }
    }
    let grid = oracle_grid(cfg, eps, &centers)?;
    let mut state = initial_state(s, eps, &grid)?;
    Oracle::new(&s.model, &grid, eps)?.evolve(&mut state, t_eval, cfg.oracle.dt_factor * eps)?;
    let rec = reconstruct(&sol, t_eval, &grid)?;
    let rep = l2_error(&s.model, &state, &rec.psi)?;
    if cfg.outputs.solution_json {
        std::fs::write(opts.out_dir.join(format!("{}_eps{}.solution.json", cfg.study, slug(eps))), sol.to_json()?)?;
    }
    if cfg.outputs.grid_dumps {
        dump_grid(&opts.out_dir, &format!("{}_eps{}_oracle", cfg.study, slug(eps)), &grid, &state.psi)?;
        dump_grid(&opts.out_dir, &format!("{}_eps{}_semiclassical", cfg.study, slug(eps)), &grid, &rec.psi)?;
    }
    let mut extra = json!({
        "eps": eps,
        "grid_points": grid.len(),
        "under_resolved": rec.under_resolved,
        "branch_norms": rec.branch_norms,
        "norm_reference_band2": rep.norm_reference_band2,
        "norm_candidate_band2": rep.norm_candidate_band2,
        "min_siegel_eig": sol.diagnostics.min_siegel_eig,
        "symplectic_defect": sol.diagnostics.symplectic_defect,
    });
    if let (Some(ev), Some(pre)) = (&sol.crossing, sol.diagnostics.transfer_prefactor) {
        let snap = sol.snapshot(t_eval)?;
        let spawned = snap.branches.iter().find(|b| b.band == 2);
        let profile_norm = spawned.map(|b| b.profile.norm()).unwrap_or(0.0);
        let predicted = ev.gamma_flat * pre.norm() * profile_norm;
        extra["mass2_over_sqrt_eps"] = json!(rep.norm_reference_band2 / eps.sqrt());
        extra["predicted_mass2_over_sqrt_eps"] = json!(predicted);
        extra["boundary_layer"] = json!(snap.boundary_layer);
    }
    log(opts, format!("{}: eps {eps:e} err {:.3e}", cfg.study, rep.total));
    Ok(EpsRun {
        row: ConvergenceRow {
            eps,
            t: t_eval,
            err_total: rep.total,
            err_band1: rep.band1,
            err_band2: rep.band2,
            overlap_band2: rep.overlap_band2,
            order_est: None,
        },
        extra,
    })
}

fn run_transfer(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<Check>, Value)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = cfg.tolerances.rel.unwrap_or(1e-6);
    let cases: Vec<(TransferParams, PolyGaussian)> =
        (0..cfg.random.cases).map(|_| random_params(&mut rng)).collect::<Result<_>>()?;
    let errs: Vec<f64> = cases.par_iter().map(|(p, g)| transfer_oracle_error(p, g)).collect::<Result<_>>()?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let p = TransferParams::new(1.0, vec![1.0], vec![1.0])?;
    let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 2.0))?);
    let (_, out) = transfer_gaussian(&p, &g)?;
    let width_err = (out.width.matrix()[(0, 0)] - c64(11.0 / 5.0, 8.0 / 5.0)).norm();
    let worked_err = transfer_oracle_error(&p, &g)?;
    let checks = vec![
        Check::below(crit(cfg, 0), "max relative L2 error, random cases", worst, tol),
        Check::below(crit(cfg, 0), "worked case width error", width_err, 1e-12),
        Check::below(crit(cfg, 0), "worked case relative L2 error", worked_err, tol),
    ];
    let details = json!({
        "cases": cases.iter().zip(&errs).map(|((p, g), e)| json!({
            "mu": p.mu, "alpha": p.alpha[0], "beta": p.beta[0],
            "gamma": [g.width.matrix()[(0, 0)].re, g.width.matrix()[(0, 0)].im], "rel_error": e
        })).collect::<Vec<_>>(),
        "worked_width": [out.width.matrix()[(0, 0)].re, out.width.matrix()[(0, 0)].im],
    });
    Ok((checks, details))
}

fn run_fourier(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<Check>, Value)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = cfg.tolerances.rel.unwrap_or(1e-6);
    let cases: Vec<(TransferParams, PolyGaussian)> =
        (0..cfg.random.cases).map(|_| random_params(&mut rng)).collect::<Result<_>>()?;
    let res: Vec<(f64, f64)> = cases.par_iter().map(|(p, g)| fourier_residuals(p, g)).collect::<Result<_>>()?;
    let worst = res.iter().map(|r| r.0).fold(0.0, f64::max);
    let shifted_best = res.iter().map(|r| r.1).filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    Ok((
        vec![Check::below(crit(cfg, 0), "max residual of F T(mu,a,b) = T(mu,b,-a) F", worst, tol)],
        json!({
            "residuals": res.iter().map(|r| r.0).collect::<Vec<_>>(),
            "shifted_mu_residuals": res.iter().map(|r| if r.1.is_finite() { json!(r.1) } else { Value::Null }).collect::<Vec<_>>(),
            "shifted_mu_min_residual": shifted_best,
        }),
    ))
}

fn run_invariants(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<Check>, Value)> {
    let s = setup(cfg)?;
    let t_end = cfg.time.as_ref().and_then(|t| t.t_end).expect("validated");
    let ctl = OdeControls::default();
    let b0 = TrajectoryBundle::new(s.t0, s.init.center.clone(), s.init.eigvec.clone());
    let tr = integrate_to(&s.model, 1, &b0, t_end, &uniform_times(s.t0, t_end, 0.01), &ctl)?;
    let g0: CMat = s.init.profile.width.matrix().clone();
    let mut min_eig = f64::INFINITY;
    for b in &tr.samples {
        let g = b.f_blocks.act_on_width(&g0)?;
        min_eig = min_eig.min(min_sym_eig(&imag_part(&g)));
    }
    let d = s.model.d;
    let mut lo = vec![f64::INFINITY; 2 * d];
    let mut hi = vec![f64::NEG_INFINITY; 2 * d];
    for b in &tr.samples {
        for k in 0..2 * d {
            lo[k] = lo[k].min(b.z[k] - 1.0);
            hi[k] = hi[k].max(b.z[k] + 1.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut herm = 0.0f64;
    let mut used = 0;
    let mut tries = 0;
    while used < 100 && tries < 10_000 {
        tries += 1;
        let t = rng.random_range(s.t0..=t_end);
        let z: Vec<f64> = (0..2 * d).map(|k| rng.random_range(lo[k]..hi[k])).collect();
        if !s.model.is_scalar() && s.model.f(t, &z).abs() < 1e-2 {
            continue;
        }
        let th = theta_matrices(&s.model, 1, t, &z)?.theta;
        let r = (&th - th.adjoint()).iter().map(|x| x.norm()).fold(0.0, f64::max);
        herm = herm.max(r);
        used += 1;
    }
    let tol = &cfg.tolerances;
    let c3 = crit(cfg, 0);
    let c4 = crit(cfg, 1);
    Ok((
        vec![
            Check::below(c3, "symplectic defect", tr.symplectic_defect, tol.symplectic.unwrap_or(1e-8)),
            Check::above(c3, "min eigenvalue of Im Gamma", min_eig, 0.0),
            Check::below(c4, "eigenvector norm defect", tr.norm_defect, tol.norm.unwrap_or(1e-10)),
            Check::below(c4, "eigenspace defect", tr.eigenspace_defect, tol.eigenspace.unwrap_or(1e-8)),
            Check::below(c4, "Theta Hermiticity residual", herm, tol.hermitian.unwrap_or(1e-9)),
            Check::at_least(c4, "random Theta points", used as f64, 100.0),
        ],
        json!({ "samples": tr.samples.len(), "steps": tr.steps, "theta_points": used }),
    ))
}

fn run_phase(cfg: &ExperimentConfig) -> Result<(Vec<Check>, Value)> {
    let s = setup(cfg)?;
    let horizon = cfg.time.as_ref().and_then(|t| t.t_end).expect("validated");
    let ev = locate_crossing(&s, cfg, horizon)?;
    let pe = phase_expansion(&s.model, ev.t_flat, &ev.z_flat, 1e-2, &OdeControls::default())?;
    let derived = ev.transfer_params(TransferConvention::Derived)?;
    let literal = ev.transfer_params(TransferConvention::Theorem)?;
    let predicted = 2.0 * derived.mu + derived.alpha_dot_beta();
    let literal_value = 2.0 * literal.mu + literal.alpha_dot_beta();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    let zn: f64 = pe.zeta_dot_expected.iter().map(|x| x * x).sum::<f64>().sqrt();
    let zd: f64 = pe.zeta_dot.iter().zip(&pe.zeta_dot_expected).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let tol = cfg.tolerances.rel.unwrap_or(1e-4);
    Ok((
        vec![
            Check::below(crit(cfg, 0), "Lambda'' vs 2 mu + alpha.beta (derived parameters)", rel(pe.lambda_ddot, predicted), tol),
            Check::below(crit(cfg, 0), "zeta' vs J grad(h1 - h2)", zd / zn.max(1e-300), tol),
        ],
        json!({
            "t_flat": ev.t_flat, "z_flat": ev.z_flat, "lambda_ddot": pe.lambda_ddot, "lambda_dot": pe.lambda_dot,
            "predicted_derived": predicted, "predicted_literal": literal_value,
            "literal_rel_error": rel(pe.lambda_ddot, literal_value),
            "zeta_dot": pe.zeta_dot, "zeta_dot_expected": pe.zeta_dot_expected,
        }),
    ))
}

fn run_oracle_checks(cfg: &ExperimentConfig) -> Result<(Vec<Check>, Value)> {
    let s = setup(cfg)?;
    let eps = cfg.eps[0];
    let t_end = cfg.time.as_ref().and_then(|t| t.t_end).expect("validated");
    let sol = propagate(&s.model, eps, &s.init, t_end, &prop_options(cfg, vec![]))?;
    let mut centers = vec![s.init.center[..s.model.d].to_vec()];
    centers.extend(sol.final_branches().iter().map(|b| b.center[..s.model.d].to_vec()));
    let grid = oracle_grid(cfg, eps, &centers)?;
    let start = initial_state(&s, eps, &grid)?;
    let span = t_end - s.t0;
    let mut oracle = Oracle::new(&s.model, &grid, eps)?;
    let run = |dt: f64| -> Result<GridState> {
        let mut st = start.clone();
        Oracle::new(&s.model, &grid, eps)?.evolve(&mut st, t_end, dt)?;
        Ok(st)
    };
    let mut st = start.clone();
    let n0 = st.norm();
    let dt = span / 1000.0;
    for _ in 0..1000 {
        oracle.step(&mut st, dt)?;
    }
    let drift = (st.norm() - n0).abs();
    let dt = cfg.oracle.dt_factor * eps * 8.0;
    let (a, b, r) = (run(dt)?, run(dt / 2.0)?, run(dt / 16.0)?);
    let diff = |x: &GridState| {
        let d: Vec<Vec<Complex64>> =
            x.psi.iter().zip(&r.psi).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p - q).collect()).collect();
        grid.norm_vec(&d)
    };
    let ratio = diff(&a) / diff(&b);
    let [lo, hi] = cfg.tolerances.ratio_range.unwrap_or([3.5, 4.5]);
    Ok((
        vec![
            Check::below(crit(cfg, 0), "norm drift over 1000 steps", drift, cfg.tolerances.drift.unwrap_or(1e-10)),
            Check {
                criterion: crit(cfg, 0),
                name: "dt-halving error ratio".into(),
                value: ratio,
                threshold: format!("in [{lo}, {hi}]"),
                pass: (lo..=hi).contains(&ratio),
            },
        ],
        json!({ "grid_points": grid.len(), "dt": dt, "err_dt": diff(&a), "err_half_dt": diff(&b) }),
    ))
}

fn run_hk(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(Vec<ConvergenceRow>, Value)> {
    let s = setup(cfg)?;
    let t_end = cfg.time.as_ref().and_then(|t| t.t_end).expect("validated");
    let runs: Vec<(ConvergenceRow, Value)> = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let quad = PhaseSpaceQuadrature::around(&s.init.center, eps, cfg.hk.radius, cfg.hk.spacing)?;
            let seeds = hk_decompose(&s.model, 1, s.t0, &s.init.center, &s.init.profile, eps, &quad)?;
            let ev = hk_propagate(&s.model, 1, &seeds, eps, t_end, &HKOptions::default())?;
            let sol = propagate(&s.model, eps, &s.init, t_end, &prop_options(cfg, vec![]))?;
            let mut centers = vec![s.init.center[..s.model.d].to_vec()];
            centers.extend(sol.final_branches().iter().map(|b| b.center[..s.model.d].to_vec()));
            let grid = oracle_grid(cfg, eps, &centers)?;
            let reference = match cfg.hk.reference {
                HkReference::Oracle => {
                    let mut st = initial_state(&s, eps, &grid)?;
                    Oracle::new(&s.model, &grid, eps)?.evolve(&mut st, t_end, cfg.oracle.dt_factor * eps)?;
                    st.psi
                }
                HkReference::Thawed => reconstruct(&sol, t_end, &grid)?.psi,
            };
            let hk = ev.evaluate(&grid);
            if cfg.outputs.seed_csv {
                ev.write_seed_csv(&opts.out_dir.join(format!("{}_eps{}.seeds.csv", cfg.study, slug(eps))))?;
            }
            if cfg.outputs.grid_dumps {
                dump_grid(&opts.out_dir, &format!("{}_eps{}_hk", cfg.study, slug(eps)), &grid, &hk)?;
            }
            let d: Vec<Vec<Complex64>> =
                hk.iter().zip(&reference).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p - q).collect()).collect();
            let err = grid.norm_vec(&d);
            log(opts, format!("{}: eps {eps:e} hk err {err:.3e}", cfg.study));
            Ok((
                ConvergenceRow {
                    eps,
                    t: t_end,
                    err_total: err,
                    err_band1: err,
                    err_band2: 0.0,
                    overlap_band2: 0.0,
                    order_est: None,
                },
                json!({ "eps": eps, "nodes": seeds.len(), "hk_norm": grid.norm_vec(&hk), "grid_points": grid.len() }),
            ))
        })
        .collect::<Result<_>>()?;
    let (rows, extra): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok((rows, json!({ "runs": extra })))
}

/// Runs one study, writes its artifacts into `opts.out_dir` and returns the summary.
pub fn run_study(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<StudySummary> {
    std::fs::create_dir_all(&opts.out_dir)?;
    let seed = opts.seed.unwrap_or(cfg.random.seed);
    let mut rows = Vec::new();
    let (mut checks, details) = match cfg.kind {
        StudyKind::Transfer => run_transfer(cfg, seed)?,
        StudyKind::Fourier => run_fourier(cfg, seed)?,
        StudyKind::Invariants => run_invariants(cfg, seed)?,
        StudyKind::PhaseExpansion => run_phase(cfg)?,
        StudyKind::Oracle => run_oracle_checks(cfg)?,
        StudyKind::HermanKluk => {
            let (r, det) = run_hk(cfg, opts)?;
            rows = r;
            (Vec::new(), det)
        }
        StudyKind::Adiabatic | StudyKind::Crossing => {
            let s = setup(cfg)?;
            let time = cfg.time.as_ref().expect("validated");
            let crossing = cfg.kind == StudyKind::Crossing;
            let (t_eval, event) = if crossing {
                let horizon = time.t_end.unwrap_or(s.t0 + 10.0);
                let ev = locate_crossing(&s, cfg, horizon)?;
                let t = match time.after_crossing {
                    Some(delta) => ev.t_flat + delta,
                    None => horizon,
                };
                (t, Some(ev))
            } else {
                (time.t_end.expect("validated"), None)
            };
            if let Some(ev) = &event {
                std::fs::write(opts.out_dir.join(format!("{}.crossing.json", cfg.study)), ev.to_json()?)?;
            }
            if cfg.outputs.trace_csv {
                let b0 = TrajectoryBundle::new(s.t0, s.init.center.clone(), s.init.eigvec.clone());
                let times = uniform_times(s.t0, t_eval, 0.01);
                integrate_to(&s.model, 1, &b0, t_eval, &times, &OdeControls::default())?
                    .write_csv(&opts.out_dir.join(format!("{}.trace.csv", cfg.study)))?;
            }
            let runs: Vec<EpsRun> = if cfg.oracle.enabled {
                cfg.eps.par_iter().map(|&eps| oracle_compare(cfg, &s, eps, t_eval, opts, crossing)).collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let mut checks = Vec::new();
            if let Some(ev) = &event {
                if matches!(cfg.model, Some(ModelConfig::Schrodinger { .. })) {
                    let a = ev.alpha_flat.iter().map(|x| x.abs()).fold(0.0, f64::max);
                    checks.push(Check::below(None, "alpha at the crossing (Schrodinger-type model)", a, 1e-12));
                }
                let layer = cfg.eps.iter().copied().fold(0.0, f64::max).powf(2.0 / 9.0);
                checks.push(Check::above(None, "evaluation time outside the boundary layer", (t_eval - ev.t_flat) - layer, 0.0));
            }
            if crossing && !runs.is_empty() {
                let check_eps = cfg.tolerances.check_eps.unwrap_or(*cfg.eps.last().expect("validated"));
                let at = runs
                    .iter()
                    .find(|r| (r.row.eps - check_eps).abs() <= 1e-12 * check_eps)
                    .ok_or_else(|| Error::Config { key: "tolerances.check_eps".into(), message: "not in eps".into() })?;
                if let Some(m) = cfg.tolerances.min_overlap {
                    checks.push(Check::above(crit(cfg, 1), "band-2 overlap with the spawned branch", at.row.overlap_band2, m));
                }
                if let Some(m) = cfg.tolerances.mass_rel {
                    let got = at.extra["mass2_over_sqrt_eps"].as_f64().unwrap_or(f64::NAN);
                    let want = at.extra["predicted_mass2_over_sqrt_eps"].as_f64().unwrap_or(f64::NAN);
                    checks.push(Check::below(crit(cfg, 1), "band-2 mass / sqrt(eps) relative to prediction", (got - want).abs() / want, m));
                }
            }
            rows = runs.iter().map(|r| r.row.clone()).collect();
            let mut det = json!({ "t_eval": t_eval, "runs": runs.iter().map(|r| r.extra.clone()).collect::<Vec<_>>() });
            if let Some(ev) = &event {
                det["crossing"] = serde_json::to_value(ev)?;
            }
            (checks, det)
        }
    };
    fill_orders(&mut rows);
    if rows.len() > 1 {
        if let Some(m) = cfg.tolerances.min_order {
            checks.insert(0, Check::at_least(crit(cfg, 0), "observed order (minimum over consecutive eps)", min_order(&rows), m));
        }
    }
    if let Some(m) = cfg.tolerances.max_error {
        let worst = rows.iter().map(|r| r.err_total).fold(0.0, f64::max);
        checks.push(Check::below(crit(cfg, 0), "largest L2 error", worst, m));
    }
    let pass = checks.iter().all(|c| c.pass);
    let summary = StudySummary {
        schema_version: SCHEMA_VERSION,
        study: cfg.study.clone(),
        kind: cfg.kind,
        seed,
        rows,
        checks,
        details,
        pass,
    };
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &summary.rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    std::fs::write(opts.out_dir.join(format!("{}.convergence.csv", cfg.study)), csv)?;
    std::fs::write(opts.out_dir.join(format!("{}.summary.json", cfg.study)), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Text table and CSV merging several summaries, ordered by study id.
pub fn report(summaries: &[StudySummary]) -> Result<(String, String)> {
    let mut by_id: BTreeMap<&str, &StudySummary> = BTreeMap::new();
    for s in summaries {
        if s.schema_version != SCHEMA_VERSION {
            return Err(Error::Config {
                key: "schema_version".into(),
                message: format!("summary {} has version {}, expected {SCHEMA_VERSION}", s.study, s.schema_version),
            });
        }
        if let Some(prev) = by_id.insert(&s.study, s) {
            if prev != s {
                return Err(Error::Config { key: "study".into(), message: format!("conflicting summaries for {}", s.study) });
            }
        }
    }
    let mut text = String::new();
    let mut csv = format!("study,{CSV_HEADER}\n");
    for (id, s) in &by_id {
        let _ = writeln!(text, "== {id} ({:?}) {}", s.kind, if s.pass { "PASS" } else { "FAIL" });
        if !s.rows.is_empty() {
            let _ = writeln!(text, "  {:>10} {:>8} {:>12} {:>12} {:>12} {:>9} {:>7}", "eps", "t", "err_total", "err_band1", "err_band2", "overlap2", "order");
            for r in &s.rows {
                let o = r.order_est.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    text,
                    "  {:>10.3e} {:>8.4} {:>12.4e} {:>12.4e} {:>12.4e} {:>9.5} {:>7}",
                    r.eps, r.t, r.err_total, r.err_band1, r.err_band2, r.overlap_band2, o
                );
                let _ = writeln!(csv, "{id},{}", r.csv_line());
            }
        }
        for c in &s.checks {
            let tag = c.criterion.map(|n| format!("[{n}] ")).unwrap_or_default();
            let _ = writeln!(text, "  {} {tag}{}: {:.4e} ({})", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.threshold);
        }
    }
    Ok((text, csv))
}

pub fn read_summary(path: &Path) -> Result<StudySummary> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config { key: path.display().to_string(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eps: f64, err: f64) -> ConvergenceRow {
        ConvergenceRow { eps, t: 1.0, err_total: err, err_band1: err, err_band2: 0.0, overlap_band2: 0.0, order_est: None }
    }

    #[test]
    fn orders_from_rows() {
        let mut rows = vec![row(0.02, 4e-2), row(0.01, 2e-2), row(0.005, 5e-3)];
        fill_orders(&mut rows);
        assert!(rows[0].order_est.is_none());
        assert!((rows[1].order_est.unwrap() - 1.0).abs() < 1e-12);
        assert!((rows[2].order_est.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(min_order(&rows), rows[1].order_est.unwrap());
    }

    fn summary(id: &str, err: f64) -> StudySummary {
        StudySummary {
            schema_version: SCHEMA_VERSION,
            study: id.into(),
            kind: StudyKind::Adiabatic,
            seed: 0,
            rows: vec![row(0.01, err)],
            checks: vec![],
            details: Value::Null,
            pass: true,
        }
    }

    #[test]
    fn report_sections_and_conflicts() {
        let (t1, c1) = report(&[summary("a", 1e-3)]).unwrap();
        assert_eq!(t1.matches("== ").count(), 1);
        assert_eq!(c1.lines().count(), 2);
        let (t2, _) = report(&[summary("b", 1e-3), summary("a", 2e-3)]).unwrap();
        assert!(t2.find("== a").unwrap() < t2.find("== b").unwrap());
        assert!(report(&[summary("a", 1e-3), summary("a", 2e-3)]).is_err());
        let mut old = summary("c", 1.0);
        old.schema_version = 0;
        assert!(report(&[old]).is_err());
    }

    #[test]
    fn profile_grid_resolves_chirp() {
        let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(3.0, 0.2)).unwrap());
        let grid = profile_grid(&g).unwrap();
        let v: Vec<Complex64> = grid.points().map(|y| g.value(&y)).collect();
        assert!((grid.norm(&v) - 1.0).abs() < 1e-10);
    }
}
