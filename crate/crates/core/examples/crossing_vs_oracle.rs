//! Two-branch semiclassical solution through an avoided-free crossing, compared with the grid oracle.

use crossprop::crossing::TransferConvention;
use crossprop::gaussian::{PolyGaussian, SiegelMatrix};
use crossprop::linalg::c64;
use crossprop::models::{make_schrodinger, ScalarField};
use crossprop::propagator::{propagate, reconstruct, PropagateOptions, WavePacketBranch};
use crossprop::reference::{auto_grid, l2_error, GridState, Oracle};

fn main() -> crossprop::Result<()> {
    let e = |s: &str| ScalarField::parse(s).unwrap();
    let args: Vec<String> = std::env::args().collect();
    let num = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (p0, slope, rate) = (num(2, 1.2), num(3, 0.5), num(4, 2.0));
    let model = make_schrodinger(
        1,
        e("0.5*p^2"),
        e("0"),
        e(&format!("{slope}*q")),
        [e(&format!("cos(0.5*atan({rate}*q))")), e(&format!("sin(0.5*atan({rate}*q))")), e("0")],
    )?;
    let z0 = [-1.0, p0];
    let conv = match args.get(1).map(String::as_str) {
        Some("theorem") => TransferConvention::Theorem,
        _ => TransferConvention::Derived,
    };
    for eps in [2e-2, 1e-2, 5e-3] {
        let phi0 = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 1.0))?);
        let init = WavePacketBranch::initial(&model, 0.0, &z0, phi0)?;
        let probe = propagate(&model, eps, &init, 3.0, &PropagateOptions::default())?;
        let t_flat = probe.crossing.as_ref().expect("crossing").t_flat;
        let t_eval = t_flat + 0.5;
        let opts = PropagateOptions { convention: conv, sample_times: vec![0.0, t_eval], ..Default::default() };
        let sol = propagate(&model, eps, &init, t_eval, &opts)?;
        let centers: Vec<Vec<f64>> = sol.snapshots.iter().flat_map(|s| s.branches.iter().map(|b| vec![b.center[0]])).collect();
        let grid = auto_grid(eps, &centers, 3.0, 3.0)?;
        let mut psi0 = vec![Vec::new(), Vec::new()];
        let base = crossprop::gaussian::evaluate_on_grid(&init.profile, &z0, eps, &grid)?.values;
        let mut prev = init.eigvec.clone();
        for (i, x) in grid.points().enumerate() {
            let v = model.eigvec(1, 0.0, &[x[0], z0[1]], Some(&prev))?;
            psi0[0].push(base[i] * v[0]);
            psi0[1].push(base[i] * v[1]);
            prev = v;
        }
        let mut state = GridState::new(eps, grid.clone(), psi0, 0.0)?;
        let mut oracle = Oracle::new(&model, &grid, eps)?;
        oracle.evolve(&mut state, t_eval, eps * 0.05)?;
        let rec = reconstruct(&sol, t_eval, &grid)?;
        let rep = l2_error(&model, &state, &rec.psi)?;
        let pre = sol.diagnostics.transfer_prefactor.unwrap();
        println!(
            "eps {eps:.4} t_flat {t_flat:.4} n {} err {:.3e} b1 {:.3e} b2 {:.3e} ovl {:.5} mass2/sqrt(eps) ref {:.5} cand {:.5} pre {pre:.4}",
            grid.len(), rep.total, rep.band1, rep.band2, rep.overlap_band2,
            rep.norm_reference_band2 / eps.sqrt(), rep.norm_candidate_band2 / eps.sqrt()
        );
    }
    Ok(())
}
