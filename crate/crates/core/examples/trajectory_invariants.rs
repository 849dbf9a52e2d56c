//! Band trajectory with linearized flow and transported eigenvector; writes the trace to CSV.

use crossprop::dynamics::{integrate_to, uniform_times, OdeControls, TrajectoryBundle};
use crossprop::linalg::symplectic_residual;
use crossprop::models::{make_two_level, ScalarField};

fn main() -> crossprop::Result<()> {
    let e = |s: &str| ScalarField::parse(s).unwrap();
    let model = make_two_level(
        1,
        e("0.5*p^2 + 0.2*q^2"),
        e("1 + 0.2*q^2"),
        [e("cos(q + 0.4*p)"), e("sin(q + 0.4*p)"), e("0")],
    )?;
    let start = TrajectoryBundle::on_band(&model, 1, 0.0, &[0.3, 0.5], None)?;
    let trace = integrate_to(&model, 1, &start, 5.0, &uniform_times(0.0, 5.0, 0.5), &OdeControls::default())?;
    for b in &trace.samples {
        let proj = model.projector(2, b.t, &b.z)?;
        let leak: f64 = (0..2).map(|i| (0..2).map(|j| proj[(i, j)] * b.y_vec[j]).sum::<num_complex::Complex64>().norm_sqr()).sum::<f64>().sqrt();
        println!(
            "t {:.1} z ({:+.4}, {:+.4}) S {:+.4} symplectic {:.1e} |Y|-1 {:.1e} off-band {:.1e}",
            b.t,
            b.z[0],
            b.z[1],
            b.s_action,
            symplectic_residual(&b.f_blocks.to_matrix()),
            b.y_norm() - 1.0,
            leak
        );
    }
    let path = std::env::temp_dir().join("trajectory_trace.csv");
    trace.write_csv(&path)?;
    println!("trace written to {}", path.display());
    Ok(())
}
