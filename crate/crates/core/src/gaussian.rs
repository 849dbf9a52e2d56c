//! Polynomial times complex Gaussian profiles and their exact transformations.
//!
//! A [`PolyGaussian`] represents the unit-scale profile
//!
//! ```text
//! phi = T(z0) [ P(y) * n * exp(i Gamma y.y / 2) ]
//! ```
//!
//! where `T(q, p) psi(y) = exp(-i q.p/2) exp(i p.y) psi(y - q)` is the Weyl
//! translation at unit scale and `Gamma` lies in the Siegel half-space. The
//! class is closed under metaplectic maps, Weyl-quantized polynomial symbols,
//! translations and the Fourier transform, and all of these act exactly.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg::{
    c64, cdet, cinverse, complexify, imag_part, max_sym_eig, min_sym_eig, sqrt_det_continued,
    symplectic_residual, CMat, RMat, I,
};
use crate::poly::{MultiIndex, Poly};

pub const DEFAULT_DEGREE_CAP: usize = 12;
pub const SYMPLECTIC_TOL: f64 = 1e-8;

/// Complex symmetric matrix with positive-definite imaginary part.
#[derive(Clone, Debug, PartialEq)]
pub struct SiegelMatrix {
    gamma: CMat,
}

impl SiegelMatrix {
    pub fn new(gamma: CMat) -> Result<Self> {
        if gamma.nrows() != gamma.ncols() || gamma.nrows() == 0 {
            return Err(Error::NotSiegel("width must be a non-empty square matrix".into()));
        }
        let scale = gamma.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let asym = (&gamma - gamma.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > 1e-12 * scale {
            return Err(Error::NotSiegel(format!("asymmetry {asym:.3e}")));
        }
        let sym = (&gamma + gamma.transpose()) * c64(0.5, 0.0);
        let m = min_sym_eig(&imag_part(&sym));
        if !(m > 0.0) {
            return Err(Error::NotSiegel(format!("min eigenvalue of Im = {m:.3e}")));
        }
        Ok(SiegelMatrix { gamma: sym })
    }

    /// Symmetrizes a numerically computed width before validation.
    pub fn from_computed(gamma: CMat) -> Result<Self> {
        let scale = gamma.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let asym = (&gamma - gamma.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > 1e-7 * scale {
            return Err(Error::NotSiegel(format!("computed width asymmetry {asym:.3e}")));
        }
        SiegelMatrix::new((&gamma + gamma.transpose()) * c64(0.5, 0.0))
    }

    pub fn scalar(z: Complex64) -> Result<Self> {
        SiegelMatrix::new(CMat::from_element(1, 1, z))
    }

    /// `i * Id`, the standard coherent-state width.
    pub fn identity(d: usize) -> Self {
        SiegelMatrix { gamma: CMat::identity(d, d) * I }
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.gamma
    }

    pub fn min_imag_eig(&self) -> f64 {
        min_sym_eig(&imag_part(&self.gamma))
    }

    /// `pi^{-d/4} det^{1/4}(Im Gamma)`, positive.
    pub fn normalization(&self) -> f64 {
        let d = self.dim() as f64;
        PI.powf(-d / 4.0) * imag_part(&self.gamma).determinant().powf(0.25)
    }
}

/// Blocks of a linear symplectic map `F = [[A, B], [C, D]]` on `(q, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticBlocks {
    pub a: RMat,
    pub b: RMat,
    pub c: RMat,
    pub d: RMat,
}

impl SymplecticBlocks {
    pub fn identity(d: usize) -> Self {
        SymplecticBlocks {
            a: RMat::identity(d, d),
            b: RMat::zeros(d, d),
            c: RMat::zeros(d, d),
            d: RMat::identity(d, d),
        }
    }

    pub fn from_matrix(f: &RMat) -> Self {
        let d = f.nrows() / 2;
        SymplecticBlocks {
            a: f.view((0, 0), (d, d)).into_owned(),
            b: f.view((0, d), (d, d)).into_owned(),
            c: f.view((d, 0), (d, d)).into_owned(),
            d: f.view((d, d), (d, d)).into_owned(),
        }
    }

    pub fn to_matrix(&self) -> RMat {
        let d = self.dim();
        let mut f = RMat::zeros(2 * d, 2 * d);
        f.view_mut((0, 0), (d, d)).copy_from(&self.a);
        f.view_mut((0, d), (d, d)).copy_from(&self.b);
        f.view_mut((d, 0), (d, d)).copy_from(&self.c);
        f.view_mut((d, d), (d, d)).copy_from(&self.d);
        f
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn residual(&self) -> f64 {
        symplectic_residual(&self.to_matrix())
    }

    pub fn check(&self, tolerance: f64) -> Result<()> {
        let residual = self.residual();
        if !(residual < tolerance) {
            return Err(Error::NotSymplectic { residual, tolerance });
        }
        Ok(())
    }

    /// `F^{-1} = [[D^T, -B^T], [-C^T, A^T]]`.
    pub fn inverse(&self) -> Self {
        SymplecticBlocks {
            a: self.d.transpose(),
            b: -self.b.transpose(),
            c: -self.c.transpose(),
            d: self.a.transpose(),
        }
    }

    /// `A + B Gamma`.
    pub fn a_plus_b_gamma(&self, gamma: &CMat) -> CMat {
        complexify(&self.a) + complexify(&self.b) * gamma
    }

    /// `(C + D Gamma)(A + B Gamma)^{-1}`.
    pub fn act_on_width(&self, gamma: &CMat) -> Result<CMat> {
        let den = self.a_plus_b_gamma(gamma);
        let num = complexify(&self.c) + complexify(&self.d) * gamma;
        Ok(num * cinverse(&den)?)
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let v = self.to_matrix() * DVector::from_column_slice(z);
        v.iter().copied().collect()
    }
}

/// Weyl quantization (at unit scale) of a polynomial symbol `A(y, eta)`.
///
/// The symbol is a polynomial in `2d` variables ordered `(y_1..y_d, eta_1..eta_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeylPolyOp {
    pub d: usize,
    pub symbol: Poly,
}

impl WeylPolyOp {
    pub fn new(d: usize, symbol: Poly) -> Result<Self> {
        if symbol.nvars != 2 * d {
            return Err(Error::Dimension(format!(
                "symbol has {} variables, expected {}",
                symbol.nvars,
                2 * d
            )));
        }
        Ok(WeylPolyOp { d, symbol })
    }

    /// Multiplication by `P(y)`.
    pub fn multiplication(p: &Poly) -> Self {
        let d = p.nvars;
        let images: Vec<Poly> = (0..d).map(|i| Poly::var(2 * d, i)).collect();
        WeylPolyOp { d, symbol: p.compose(&images) }
    }

    pub fn position(d: usize, i: usize) -> Self {
        WeylPolyOp { d, symbol: Poly::var(2 * d, i) }
    }

    pub fn momentum(d: usize, i: usize) -> Self {
        WeylPolyOp { d, symbol: Poly::var(2 * d, d + i) }
    }

    pub fn degree(&self) -> usize {
        self.symbol.degree()
    }

    /// The symbol `w -> A(L w)` for a real linear map `L` on phase space.
    pub fn compose_linear(&self, l: &RMat) -> Self {
        let n = 2 * self.d;
        let rows: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect();
        WeylPolyOp {
            d: self.d,
            symbol: self.symbol.compose_affine(&rows, &vec![c64(0.0, 0.0); n]),
        }
    }

    /// The symbol `w -> A(w + z0)`.
    pub fn shifted(&self, z0: &[f64]) -> Self {
        let n = 2 * self.d;
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        let off: Vec<Complex64> = z0.iter().map(|&x| c64(x, 0.0)).collect();
        WeylPolyOp { d: self.d, symbol: self.symbol.compose_affine(&id, &off) }
    }

    /// Left (standard) symbol: `exp(-(i/2) sum_j d_{y_j} d_{eta_j}) A`.
    pub fn standard_symbol(&self) -> Poly {
        let d = self.d;
        let mut out = self.symbol.clone();
        let mut term = self.symbol.clone();
        let mut k = 1.0;
        loop {
            let mut next = Poly::zero(2 * d);
            for j in 0..d {
                next = next.add(&term.derivative(j).derivative(d + j));
            }
            if next.is_zero() {
                break;
            }
            term = next.scale(c64(0.0, -0.5) / k);
            out = out.add(&term);
            k += 1.0;
        }
        out
    }
}

/// `P(y) * n * exp(i Gamma y.y/2)` translated by the phase-space point `shift`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyGaussian {
    pub width: SiegelMatrix,
    pub norm_factor: Complex64,
    pub poly: Poly,
    pub shift: Vec<f64>,
    pub degree_cap: usize,
}

/// `Q(y) * c * exp(i y.Gamma y/2 + i b.y)`: the profile with the shift expanded.
#[derive(Clone, Debug)]
pub struct ExpandedGaussian {
    pub poly: Poly,
    pub constant: Complex64,
    pub gamma: CMat,
    pub linear: Vec<Complex64>,
}

impl ExpandedGaussian {
    pub fn value(&self, y: &[f64]) -> Complex64 {
        let yc: Vec<Complex64> = y.iter().map(|&x| c64(x, 0.0)).collect();
        self.value_complex(&yc)
    }

    /// The entire extension of the profile to complex arguments.
    pub fn value_complex(&self, y: &[Complex64]) -> Complex64 {
        let d = y.len();
        let mut quad = c64(0.0, 0.0);
        let mut lin = c64(0.0, 0.0);
        for i in 0..d {
            lin += self.linear[i] * y[i];
            for j in 0..d {
                quad += self.gamma[(i, j)] * y[i] * y[j];
            }
        }
        self.constant * self.poly.eval(y) * (I * (quad * 0.5 + lin)).exp()
    }
}

impl PolyGaussian {
    pub fn new(width: SiegelMatrix, norm_factor: Complex64, poly: Poly) -> Result<Self> {
        let d = width.dim();
        if poly.nvars != d {
            return Err(Error::Dimension(format!("poly in {} variables, width is {d}x{d}", poly.nvars)));
        }
        poly.check_cap(DEFAULT_DEGREE_CAP)?;
        Ok(PolyGaussian {
            width,
            norm_factor,
            poly,
            shift: vec![0.0; 2 * d],
            degree_cap: DEFAULT_DEGREE_CAP,
        })
    }

    /// The L²-normalized Gaussian `c_Gamma exp(i Gamma y.y/2)`.
    pub fn unit(width: SiegelMatrix) -> Self {
        let d = width.dim();
        let nf = c64(width.normalization(), 0.0);
        PolyGaussian { width, norm_factor: nf, poly: Poly::one(d), shift: vec![0.0; 2 * d], degree_cap: DEFAULT_DEGREE_CAP }
    }

    pub fn with_cap(mut self, cap: usize) -> Result<Self> {
        self.poly.check_cap(cap)?;
        self.degree_cap = cap;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.width.dim()
    }

    pub fn is_centered(&self) -> bool {
        self.shift.iter().all(|&x| x == 0.0)
    }

    pub fn has_trivial_poly(&self) -> bool {
        self.poly.degree() == 0
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.norm_factor *= s;
        out
    }

    pub fn expanded(&self) -> ExpandedGaussian {
        let d = self.dim();
        let (q, p) = self.shift.split_at(d);
        let gamma = self.width.matrix().clone();
        let mut id = vec![0.0; d * d];
        for i in 0..d {
            id[i * d + i] = 1.0;
        }
        let off: Vec<Complex64> = q.iter().map(|&x| c64(-x, 0.0)).collect();
        let poly = self.poly.compose_affine(&id, &off);
        let qc = DVector::from_iterator(d, q.iter().map(|&x| c64(x, 0.0)));
        let gq = &gamma * &qc;
        let qgq: Complex64 = qc.iter().zip(gq.iter()).map(|(a, b)| a * b).sum();
        let qp: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
        let constant = self.norm_factor * (I * (qgq * 0.5 - qp * 0.5)).exp();
        let linear = (0..d).map(|i| c64(p[i], 0.0) - gq[i]).collect();
        ExpandedGaussian { poly, constant, gamma, linear }
    }

    pub fn value(&self, y: &[f64]) -> Complex64 {
        self.expanded().value(y)
    }

    pub fn norm(&self) -> f64 {
        inner_product(self, self).re.max(0.0).sqrt()
    }

    /// Centered profile with poly replaced by the image of `op` applied to a
    /// Gaussian of the same width.
    fn apply_centered(&self, op: &WeylPolyOp) -> Result<Poly> {
        let d = self.dim();
        let std = op.standard_symbol();
        let gamma = self.width.matrix();
        let mut out = Poly::zero(d);
        for (e, c) in &std.terms {
            let mut q = self.poly.clone();
            for j in 0..d {
                for _ in 0..e[d + j] {
                    // D_j (Q E) = (-i d_j Q + (Gamma y)_j Q) E
                    let mut next = q.derivative(j).scale(-I);
                    for k in 0..d {
                        next = next.add(&q.mul_var(k).scale(gamma[(j, k)]));
                    }
                    q = next;
                }
            }
            for j in 0..d {
                for _ in 0..e[j] {
                    q = q.mul_var(j);
                }
            }
            out = out.add(&q.scale(*c));
        }
        out.check_cap(self.degree_cap)?;
        Ok(out)
    }
}

/// Metaplectic operator of `blocks` applied to `g`.
///
/// The square root of `det(A + B Gamma)` is continued along the straight
/// matrix path from the identity; use [`metaplectic_apply_with_root`] when the
/// root has been tracked along a time path.
pub fn metaplectic_apply(blocks: &SymplecticBlocks, g: &PolyGaussian) -> Result<PolyGaussian> {
    let m = blocks.a_plus_b_gamma(g.width.matrix());
    let root = sqrt_det_continued(&m).unwrap_or_else(|_| cdet(&m).sqrt());
    metaplectic_apply_with_root(blocks, g, root)
}

/// As [`metaplectic_apply`], with `root = det^{1/2}(A + B Gamma)` supplied.
pub fn metaplectic_apply_with_root(
    blocks: &SymplecticBlocks,
    g: &PolyGaussian,
    root: Complex64,
) -> Result<PolyGaussian> {
    blocks.check(SYMPLECTIC_TOL)?;
    let d = g.dim();
    if blocks.dim() != d {
        return Err(Error::Dimension("blocks and profile dimensions differ".into()));
    }
    let gamma = SiegelMatrix::from_computed(blocks.act_on_width(g.width.matrix())?)?;
    let nf = g.norm_factor / root;
    let mut out = PolyGaussian {
        width: gamma,
        norm_factor: nf,
        poly: Poly::one(d),
        shift: vec![0.0; 2 * d],
        degree_cap: g.degree_cap,
    };
    if !g.has_trivial_poly() {
        // M (P G) = op(P o F^{-1}) M G
        let sym = WeylPolyOp::multiplication(&g.poly).compose_linear(&blocks.inverse().to_matrix());
        out.poly = out.apply_centered(&sym)?;
    } else {
        out.poly = g.poly.clone();
    }
    if !g.is_centered() {
        out.shift = blocks.apply(&g.shift);
    }
    Ok(out)
}

/// `op^w(A) g` at unit scale.
pub fn weyl_apply(op: &WeylPolyOp, g: &PolyGaussian) -> Result<PolyGaussian> {
    if op.d != g.dim() {
        return Err(Error::Dimension("operator and profile dimensions differ".into()));
    }
    if op.degree() > g.degree_cap {
        return Err(Error::DegreeOverflow { degree: op.degree(), cap: g.degree_cap });
    }
    let local = if g.is_centered() { op.clone() } else { op.shifted(&g.shift) };
    let mut out = g.clone();
    out.poly = g.apply_centered(&local)?;
    Ok(out)
}

/// Weyl translation `T(z)` at unit scale.
pub fn translate(g: &PolyGaussian, z: &[f64]) -> PolyGaussian {
    let d = g.dim();
    let (q, p) = z.split_at(d);
    let (q0, p0) = g.shift.split_at(d);
    let phase: f64 = (0..d).map(|i| q0[i] * p[i] - q[i] * p0[i]).sum::<f64>() * 0.5;
    let mut out = g.clone();
    out.norm_factor *= Complex64::from_polar(1.0, phase);
    for i in 0..2 * d {
        out.shift[i] += z[i];
    }
    out
}

/// Unitary Fourier transform `(2 pi)^{-d/2} int exp(-i y.eta) g(y) dy`.
pub fn fourier(g: &PolyGaussian) -> Result<PolyGaussian> {
    let d = g.dim();
    let gamma = g.width.matrix();
    let new_gamma = SiegelMatrix::from_computed(-cinverse(gamma)?)?;
    let root = sqrt_det_continued(&(gamma * (-I)))?;
    let mut out = PolyGaussian {
        width: new_gamma,
        norm_factor: g.norm_factor / root,
        poly: Poly::one(d),
        shift: vec![0.0; 2 * d],
        degree_cap: g.degree_cap,
    };
    if !g.has_trivial_poly() {
        // F P(y) = P(-D) F
        let images: Vec<Poly> = (0..d).map(|i| Poly::var(2 * d, d + i).scale(c64(-1.0, 0.0))).collect();
        let op = WeylPolyOp { d, symbol: g.poly.compose(&images) };
        out.poly = out.apply_centered(&op)?;
    } else {
        out.poly = g.poly.clone();
    }
    if !g.is_centered() {
        let (q, p) = g.shift.split_at(d);
        let mut s: Vec<f64> = p.to_vec();
        s.extend(q.iter().map(|x| -x));
        out.shift = s;
    }
    Ok(out)
}

/// Moments `E[w^alpha]` of a (complex) centered Gaussian with covariance `sigma`.
struct Moments<'a> {
    sigma: &'a CMat,
    memo: HashMap<MultiIndex, Complex64>,
}

impl<'a> Moments<'a> {
    fn new(sigma: &'a CMat) -> Self {
        Moments { sigma, memo: HashMap::new() }
    }

    fn get(&mut self, alpha: &[u32]) -> Complex64 {
        let total: u32 = alpha.iter().sum();
        if total == 0 {
            return c64(1.0, 0.0);
        }
        if total % 2 == 1 {
            return c64(0.0, 0.0);
        }
        if let Some(v) = self.memo.get(alpha) {
            return *v;
        }
        let i = alpha.iter().position(|&a| a > 0).unwrap();
        let mut beta = alpha.to_vec();
        beta[i] -= 1;
        let mut acc = c64(0.0, 0.0);
        for j in 0..alpha.len() {
            if beta[j] > 0 {
                let mut gam = beta.clone();
                gam[j] -= 1;
                acc += self.sigma[(i, j)] * beta[j] as f64 * self.get(&gam);
            }
        }
        self.memo.insert(alpha.to_vec(), acc);
        acc
    }
}

/// `<f, g> = int conj(f) g dy`, in closed form.
pub fn inner_product(f: &PolyGaussian, g: &PolyGaussian) -> Complex64 {
    let d = f.dim();
    let ef = f.expanded();
    let eg = g.expanded();
    let m = (&eg.gamma - ef.gamma.map(|z| z.conj())) * (-I);
    let cvec = DVector::from_iterator(d, (0..d).map(|i| I * (eg.linear[i] - ef.linear[i].conj())));
    let minv = match cinverse(&m) {
        Ok(x) => x,
        Err(_) => return c64(f64::NAN, f64::NAN),
    };
    let mu = &minv * &cvec;
    let quad: Complex64 = cvec.iter().zip(mu.iter()).map(|(a, b)| a * b).sum();
    let root = sqrt_det_continued(&m).unwrap_or_else(|_| cdet(&m).sqrt());
    let r = ef.poly.conj().mul(&eg.poly);
    let mut id = vec![0.0; d * d];
    for i in 0..d {
        id[i * d + i] = 1.0;
    }
    let shifted = r.compose_affine(&id, mu.as_slice());
    let mut moments = Moments::new(&minv);
    let expectation: Complex64 = shifted.terms.iter().map(|(e, c)| c * moments.get(e)).sum();
    ef.constant.conj() * eg.constant * (2.0 * PI).powf(d as f64 / 2.0) / root * (quad * 0.5).exp() * expectation
}

/// Gauss–Hermite nodes and weights for `int exp(-x^2) h(x) dx` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = RMat::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// `<f, g>` by tensor Gauss–Hermite quadrature adapted to the product's
/// envelope; the order grows with the oscillation of the integrand.
pub fn inner_product_quadrature(f: &PolyGaussian, g: &PolyGaussian) -> Complex64 {
    let d = f.dim();
    let ef = f.expanded();
    let eg = g.expanded();
    let m = (&eg.gamma - ef.gamma.map(|z| z.conj())) * (-I);
    let re = m.map(|z| z.re);
    let re = (&re + re.transpose()) * 0.5;
    let cvec = DVector::from_iterator(d, (0..d).map(|i| I * (eg.linear[i] - ef.linear[i].conj())));
    let re_c = cvec.map(|z| z.re);
    let centre = re.clone().try_inverse().map(|r| r * re_c).unwrap_or_else(|| DVector::zeros(d));
    let eig = re.symmetric_eigen();
    let scales: Vec<f64> = eig.eigenvalues.iter().map(|&l| (2.0 / l).sqrt()).collect();
    let osc = imag_part(&m).amax() / eig.eigenvalues.min() + cvec.map(|z| z.im).amax() * scales.iter().cloned().fold(0.0, f64::max);
    let deg = ef.poly.degree() + eg.poly.degree();
    let n = ((24.0 + 6.0 * osc + deg as f64) as usize).min(160);
    let (x, w) = gauss_hermite(n);
    let mut acc = c64(0.0, 0.0);
    let mut idx = vec![0usize; d];
    loop {
        let mut y = centre.clone();
        let mut weight = 1.0;
        let mut r2 = 0.0;
        for k in 0..d {
            let xk = x[idx[k]];
            weight *= w[idx[k]];
            r2 += xk * xk;
            for i in 0..d {
                y[i] += eig.eigenvectors[(i, k)] * scales[k] * xk;
            }
        }
        let ys: Vec<f64> = y.iter().copied().collect();
        acc += ef.value(&ys).conj() * eg.value(&ys) * weight * r2.exp();
        let mut k = 0;
        loop {
            if k == d {
                let jac: f64 = scales.iter().product();
                return acc * jac;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Samples of a wave packet on a grid.
#[derive(Clone, Debug)]
pub struct GridSample {
    pub values: Vec<Complex64>,
    pub under_resolved: bool,
}

/// `WP^eps_z phi (x) = eps^{-d/4} exp(i p.(x-q)/eps) phi((x-q)/sqrt(eps))` on `grid`.
pub fn evaluate_on_grid(g: &PolyGaussian, center: &[f64], eps: f64, grid: &GridSpec) -> Result<GridSample> {
    let d = g.dim();
    if grid.dim() != d || center.len() != 2 * d {
        return Err(Error::Dimension("grid or center dimension mismatch".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Grid("eps must be positive".into()));
    }
    let (q, p) = center.split_at(d);
    let e = g.expanded();
    let se = eps.sqrt();
    let amp = eps.powf(-(d as f64) / 4.0);
    let values = grid
        .points()
        .map(|x| {
            let y: Vec<f64> = (0..d).map(|i| (x[i] - q[i]) / se).collect();
            let phase: f64 = (0..d).map(|i| p[i] * (x[i] - q[i])).sum::<f64>() / eps;
            e.value(&y) * Complex64::from_polar(amp, phase)
        })
        .collect();
    let width = se / max_sym_eig(&imag_part(g.width.matrix())).sqrt();
    let gmax = g.width.matrix().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let pmax = p.iter().map(|x| x.abs()).fold(0.0, f64::max) + gmax * se * 6.0 + g.shift[d..].iter().map(|x| x.abs()).fold(0.0, f64::max) * se;
    let under_resolved = (0..d).any(|k| {
        let h = grid.dx(k);
        8.0 * h > width || h * pmax > PI * eps
    });
    Ok(GridSample { values, under_resolved })
}

#[derive(Serialize, Deserialize)]
struct PolyGaussianJson {
    d: usize,
    gamma: Vec<[f64; 2]>,
    norm_factor: [f64; 2],
    poly: Vec<(Vec<u32>, f64, f64)>,
    #[serde(default)]
    shift: Option<Vec<f64>>,
    #[serde(default)]
    degree_cap: Option<usize>,
}

impl Serialize for PolyGaussian {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let m = self.width.matrix();
        let gamma = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| [m[(i, j)].re, m[(i, j)].im]).collect();
        PolyGaussianJson {
            d,
            gamma,
            norm_factor: [self.norm_factor.re, self.norm_factor.im],
            poly: self.poly.terms.iter().map(|(e, c)| (e.clone(), c.re, c.im)).collect(),
            shift: if self.is_centered() { None } else { Some(self.shift.clone()) },
            degree_cap: Some(self.degree_cap),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolyGaussian {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = PolyGaussianJson::deserialize(de)?;
        if j.gamma.len() != j.d * j.d {
            return Err(D::Error::custom("gamma must have d*d entries"));
        }
        let gamma = CMat::from_row_iterator(j.d, j.d, j.gamma.iter().map(|v| c64(v[0], v[1])));
        let width = SiegelMatrix::new(gamma).map_err(D::Error::custom)?;
        let mut poly = Poly::zero(j.d);
        for (e, re, im) in j.poly {
            if e.len() != j.d {
                return Err(D::Error::custom("exponent length must equal d"));
            }
            poly.add_term(e, c64(re, im));
        }
        let cap = j.degree_cap.unwrap_or(DEFAULT_DEGREE_CAP);
        poly.check_cap(cap).map_err(D::Error::custom)?;
        let shift = j.shift.unwrap_or_else(|| vec![0.0; 2 * j.d]);
        if shift.len() != 2 * j.d {
            return Err(D::Error::custom("shift must have 2d entries"));
        }
        Ok(PolyGaussian { width, norm_factor: c64(j.norm_factor[0], j.norm_factor[1]), poly, shift, degree_cap: cap })
    }
}
