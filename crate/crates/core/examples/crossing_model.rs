//! Spectral data of a two-level model and the crossing found along a band-1 trajectory.

use crossprop::crossing::{detect_crossing, TransferConvention};
use crossprop::dynamics::{integrate_to, uniform_times, OdeControls, TrajectoryBundle};
use crossprop::models::{make_schrodinger, ScalarField};

fn main() -> crossprop::Result<()> {
    let e = |s: &str| ScalarField::parse(s).unwrap();
    let model = make_schrodinger(1, e("0.5*p^2"), e("0"), e("q"), [e("cos(0.5*atan(q))"), e("sin(0.5*atan(q))"), e("0")])?;
    for q in [-1.0, 0.0, 1.0] {
        let z = [q, 2.0];
        println!(
            "q {q:+.1}: h1 {:+.4} h2 {:+.4} spectral residual {:.1e}",
            model.h(1, 0.0, &z)?,
            model.h(2, 0.0, &z)?,
            model.spectral_residual(0.0, &z)?
        );
    }
    let ctl = OdeControls::default();
    let start = TrajectoryBundle::on_band(&model, 1, 0.0, &[-1.0, 2.0], None)?;
    let trace = integrate_to(&model, 1, &start, 1.5, &uniform_times(0.0, 1.5, 0.01), &ctl)?;
    let ev = detect_crossing(&model, &trace, &ctl)?.expect("the trajectory crosses q = 0");
    println!("crossing at t = {:.6}, z = ({:.6}, {:.6}), gamma = {:.6}", ev.t_flat, ev.z_flat[0], ev.z_flat[1], ev.gamma_flat);
    for conv in [TransferConvention::Theorem, TransferConvention::Derived] {
        let p = ev.transfer_params(conv)?;
        println!("{conv:?}: mu {:+.4} alpha {:?} beta {:?} prefactor {:.4}", p.mu, p.alpha, p.beta, p.prefactor());
    }
    Ok(())
}
