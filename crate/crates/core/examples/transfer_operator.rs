//! Closed-form transfer of a Gaussian against direct quadrature of the s-integral.

use crossprop::crossing::{transfer_polygaussian, TransferParams};
use crossprop::gaussian::{PolyGaussian, SiegelMatrix};
use crossprop::linalg::c64;
use crossprop::study::{profile_grid, transfer_oracle_error};

fn main() -> crossprop::Result<()> {
    let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.0, 2.0))?);
    let p = TransferParams::new(1.0, vec![1.0], vec![1.0])?;
    let (pre, out) = transfer_polygaussian(&p, &g)?;
    println!("image width {:.6} (expected 2.2+1.6i)", out.width.matrix()[(0, 0)]);
    println!("prefactor {pre:.6}, |g_out| = {:.12}", out.norm());
    println!("relative L2 error vs quadrature {:.2e}", transfer_oracle_error(&p, &g)?);

    for (mu, alpha, beta) in [(-0.07, -0.53, -0.85), (0.3, 1.2, -0.4), (-4.0, 0.2, 1.1)] {
        let p = TransferParams::new(mu, vec![alpha], vec![beta])?;
        let (_, out) = transfer_polygaussian(&p, &g)?;
        let grid = profile_grid(&out)?;
        println!(
            "mu {mu:>6} alpha {alpha:>5} beta {beta:>5}: width {:.4}, grid {} points, error {:.2e}",
            out.width.matrix()[(0, 0)],
            grid.len(),
            transfer_oracle_error(&p, &g)?
        );
    }
    Ok(())
}
