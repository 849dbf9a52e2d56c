//! Herman–Kluk propagation for the pendulum against the grid oracle.

use crossprop::gaussian::{evaluate_on_grid, PolyGaussian, SiegelMatrix};
use crossprop::hk::{hk_decompose, hk_propagate, HKOptions, PhaseSpaceQuadrature};
use crossprop::linalg::c64;
use crossprop::models::{make_scalar_separable, ScalarField};
use crossprop::reference::{auto_grid, GridState, Oracle};

fn main() -> crossprop::Result<()> {
    let model = make_scalar_separable(1, ScalarField::parse("0.5*p^2")?, ScalarField::parse("cos(q)")?)?;
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let z0 = [args.first().copied().unwrap_or(0.5), args.get(1).copied().unwrap_or(0.5)];
    let t_end = args.get(2).copied().unwrap_or(2.0);
    let mut prev: Option<(f64, f64)> = None;
    for eps in [4e-2, 2e-2, 1e-2, 5e-3, 2.5e-3] {
        let profile = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 1.0))?);
        let quad = PhaseSpaceQuadrature::around(&z0, eps, 11.0, std::env::var("HK_H").ok().and_then(|s| s.parse().ok()).unwrap_or(0.5))?;
        let seeds = hk_decompose(&model, 1, 0.0, &z0, &profile, eps, &quad)?;
        let ev = hk_propagate(&model, 1, &seeds, eps, t_end, &HKOptions::default())?;
        let centers: Vec<Vec<f64>> = vec![vec![z0[0]], vec![seeds.iter().map(|s| s.bundle.z[0]).sum::<f64>() / seeds.len() as f64]];
        let grid = auto_grid(eps, &centers, 5.0, 3.0)?;
        let hk = ev.evaluate(&grid);
        let mut state = GridState::new(eps, grid.clone(), vec![evaluate_on_grid(&profile, &z0, eps, &grid)?.values], 0.0)?;
        Oracle::new(&model, &grid, eps)?.evolve(&mut state, t_end, eps * 0.05)?;
        let diff: Vec<_> = hk[0].iter().zip(&state.psi[0]).map(|(a, b)| a - b).collect();
        let err = grid.norm(&diff);
        let order = prev.map(|(pe, pr)| (pr / err).ln() / (pe / eps).ln());
        println!("eps {eps} seeds {} err {err:.3e} hk norm {:.6} order {order:?}", ev.samples.len(), grid.norm(&hk[0]));
        prev = Some((eps, err));
    }
    Ok(())
}
