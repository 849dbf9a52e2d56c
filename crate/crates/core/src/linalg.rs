//! Small dense linear-algebra helpers shared by the Gaussian and dynamics code.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn complexify(m: &RMat) -> CMat {
    m.map(|x| c64(x, 0.0))
}

pub fn real_part(m: &CMat) -> RMat {
    m.map(|z| z.re)
}

pub fn imag_part(m: &CMat) -> RMat {
    m.map(|z| z.im)
}

/// The standard symplectic form `[[0, I], [-I, 0]]` on `R^{2d}`.
pub fn j_matrix(d: usize) -> RMat {
    let mut j = RMat::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}

/// `max |F^T J F - J|`.
pub fn symplectic_residual(f: &RMat) -> f64 {
    let d = f.nrows() / 2;
    let j = j_matrix(d);
    let r = f.transpose() * &j * f - j;
    r.amax()
}

pub fn min_sym_eig(m: &RMat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

pub fn max_sym_eig(m: &RMat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.max()
}

pub fn cinverse(m: &CMat) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Invariant("singular complex matrix".into()))
}

pub fn cdet(m: &CMat) -> Complex64 {
    m.clone().determinant()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Continuous argument of a complex quantity sampled along a path.
///
/// Each update may change the argument by less than `pi/2`; larger jumps
/// mean the path was sampled too coarsely and are rejected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchTracker {
    pub value: Complex64,
    pub arg: f64,
}

impl BranchTracker {
    /// Starts on the principal branch.
    pub fn new(value: Complex64) -> Self {
        BranchTracker { value, arg: value.arg() }
    }

    pub fn update(&mut self, value: Complex64) -> Result<()> {
        let jump = wrap_angle(value.arg() - self.value.arg());
        if jump.abs() >= FRAC_PI_2 {
            return Err(Error::BranchJump { jump: jump.abs() });
        }
        self.arg += jump;
        self.value = value;
        Ok(())
    }

    /// `value^power` on the tracked branch.
    pub fn pow(&self, power: f64) -> Complex64 {
        Complex64::from_polar(self.value.norm().powf(power), self.arg * power)
    }

    pub fn sqrt(&self) -> Complex64 {
        self.pow(0.5)
    }
}

/// `det(M)^{1/2}` continued from `1` along the segment `(1-s) I + s M`.
///
/// Well defined whenever the segment avoids singular matrices, which holds
/// for every `M` with positive-definite Hermitian part.
pub fn sqrt_det_continued(m: &CMat) -> Result<Complex64> {
    let n = m.nrows();
    let id = CMat::identity(n, n);
    let path = |s: f64| cdet(&(&id * c64(1.0 - s, 0.0) + m * c64(s, 0.0)));
    let mut tracker = BranchTracker::new(c64(1.0, 0.0));
    let mut s: f64 = 0.0;
    let mut h: f64 = 1.0 / 16.0;
    while s < 1.0 {
        let next = (s + h).min(1.0);
        let v = path(next);
        if v.norm() == 0.0 {
            return Err(Error::Invariant("determinant path crosses zero".into()));
        }
        let jump = wrap_angle(v.arg() - tracker.value.arg()).abs();
        if jump > 0.5 && h > 1e-9 {
            h *= 0.5;
            continue;
        }
        tracker.update(v)?;
        s = next;
        if jump < 0.1 {
            h *= 2.0;
        }
    }
    Ok(tracker.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_follows_rotation_past_pi() {
        let mut tr = BranchTracker::new(c64(1.0, 0.0));
        for k in 1..=40 {
            let th = k as f64 * 0.1;
            tr.update(Complex64::from_polar(1.0, th)).unwrap();
        }
        assert!((tr.arg - 4.0).abs() < 1e-12);
        let s = tr.sqrt();
        assert!((s - Complex64::from_polar(1.0, 2.0)).norm() < 1e-12);
        assert!(tr.update(c64(-1.0, 0.1)).is_ok());
        let mut tr2 = BranchTracker::new(c64(1.0, 0.0));
        assert!(matches!(tr2.update(c64(-1.0, 0.0)), Err(Error::BranchJump { .. })));
    }

    #[test]
    fn continued_sqrt_det_matches_principal_for_scalars() {
        let m = CMat::from_element(1, 1, c64(0.3, -2.0));
        let s = sqrt_det_continued(&m).unwrap();
        assert!((s - c64(0.3, -2.0).sqrt()).norm() < 1e-12);
    }

    #[test]
    fn continued_sqrt_det_is_product_for_diagonal() {
        // principal sqrt of the full determinant would pick the wrong sign here
        let z = c64(0.1, 1.0);
        let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![z, z, z]));
        let s = sqrt_det_continued(&m).unwrap();
        let expected = z.sqrt().powi(3);
        assert!((s - expected).norm() < 1e-12, "{s} vs {expected}");
    }

    #[test]
    fn symplectic_residual_of_rotation_vanishes() {
        let (s, c) = 0.7f64.sin_cos();
        let f = RMat::from_row_slice(2, 2, &[c, s, -s, c]);
        assert!(symplectic_residual(&f) < 1e-15);
        let g = RMat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(symplectic_residual(&g) > 0.5);
    }
}
