//! Gapped two-level model: `b_1`-corrected adiabatic wave packet against the grid oracle.

use crossprop::gaussian::{evaluate_on_grid, PolyGaussian, SiegelMatrix};
use crossprop::linalg::c64;
use crossprop::models::{make_schrodinger, ScalarField};
use crossprop::propagator::{adiabatic_propagate, reconstruct, PropagateOptions, WavePacketBranch};
use crossprop::reference::{auto_grid, l2_error, GridState, Oracle};

fn main() -> crossprop::Result<()> {
    let e = |s: &str| ScalarField::parse(s).unwrap();
    let model = make_schrodinger(
        1,
        e("0.5*p^2"),
        e("0.5*q^2"),
        e("0.5*sqrt(1 + q^2)"),
        [e("cos(0.5*atan(q))"), e("sin(0.5*atan(q))"), e("0")],
    )?;
    let z0 = [-1.0, 0.5];
    let no_b1 = std::env::args().any(|a| a == "--no-b1");
    let mut prev_err: Option<(f64, f64)> = None;
    for eps in [2e-2, 1e-2, 5e-3, 2.5e-3] {
        let phi0 = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 1.0))?);
        let init = WavePacketBranch::initial(&model, 0.0, &z0, phi0)?;
        let mut opts = PropagateOptions { sample_times: vec![0.0], ..Default::default() };
        let sol = if no_b1 {
            opts.with_b1 = false;
            crossprop::propagator::propagate(&model, eps, &init, 1.0, &opts)?
        } else {
            adiabatic_propagate(&model, eps, &init, 1.0, &opts)?
        };
        let centers: Vec<Vec<f64>> = sol.snapshots.iter().map(|s| vec![s.branches[0].center[0]]).collect();
        let grid = auto_grid(eps, &centers, 3.0, 3.0)?;
        let base = evaluate_on_grid(&init.profile, &z0, eps, &grid)?.values;
        let mut psi0 = vec![Vec::new(), Vec::new()];
        let mut prev = init.eigvec.clone();
        for (i, x) in grid.points().enumerate() {
            let v = model.eigvec(1, 0.0, &[x[0], z0[1]], Some(&prev))?;
            psi0[0].push(base[i] * v[0]);
            psi0[1].push(base[i] * v[1]);
            prev = v;
        }
        let mut state = GridState::new(eps, grid.clone(), psi0, 0.0)?;
        Oracle::new(&model, &grid, eps)?.evolve(&mut state, 1.0, eps * 0.05)?;
        let rep = l2_error(&model, &state, &reconstruct(&sol, 1.0, &grid)?.psi)?;
        let order = prev_err.map(|(pe, pr)| (pr / rep.total).ln() / (pe / eps).ln());
        println!("eps {eps:.4} err {:.3e} band1 {:.3e} band2 {:.3e} order {order:?}", rep.total, rep.band1, rep.band2);
        prev_err = Some((eps, rep.total));
    }
    Ok(())
}
