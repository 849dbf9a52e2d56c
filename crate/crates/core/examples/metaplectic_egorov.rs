//! Gaussian algebra: metaplectic images, Weyl operators and Egorov's theorem for a quadratic flow.

use crossprop::gaussian::{fourier, inner_product, metaplectic_apply, weyl_apply, PolyGaussian, SiegelMatrix, SymplecticBlocks, WeylPolyOp};
use crossprop::linalg::{c64, RMat};
use crossprop::poly::Poly;

fn main() -> crossprop::Result<()> {
    let g = PolyGaussian::unit(SiegelMatrix::scalar(c64(0.5, 1.0))?);
    // harmonic flow for a quarter period
    let t = std::f64::consts::FRAC_PI_4;
    let f = RMat::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
    let blocks = SymplecticBlocks::from_matrix(&f);
    let mg = metaplectic_apply(&blocks, &g)?;
    println!("width {:.6} -> {:.6}", g.width.matrix()[(0, 0)], mg.width.matrix()[(0, 0)]);

    // A(y, eta) = y^2 + y eta
    let mut sym = Poly::zero(2);
    sym.add_term(vec![2, 0], c64(1.0, 0.0));
    sym.add_term(vec![1, 1], c64(1.0, 0.0));
    let op = WeylPolyOp::new(1, sym)?;
    let lhs = weyl_apply(&op, &mg)?;
    let rhs = metaplectic_apply(&blocks, &weyl_apply(&op.compose_linear(&f), &g)?)?;
    let diff = (0..=40).map(|k| -4.0 + 0.2 * k as f64).map(|y| (lhs.value(&[y]) - rhs.value(&[y])).norm()).fold(0.0, f64::max);
    println!("Egorov defect {diff:.2e}, degree {} -> {}", g.poly.degree(), lhs.poly.degree());

    let fg = fourier(&g)?;
    println!("<g, g> = {:.12}, <Fg, Fg> = {:.12}", inner_product(&g, &g).re, inner_product(&fg, &fg).re);
    Ok(())
}
