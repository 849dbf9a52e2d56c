//! Sparse multivariate polynomials with complex coefficients.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::c64;

pub type MultiIndex = Vec<u32>;

/// `sum_a c_a x^a` over `nvars` variables, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub nvars: usize,
    pub terms: BTreeMap<MultiIndex, Complex64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: Complex64) -> Self {
        let mut p = Poly::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn one(nvars: usize) -> Self {
        Poly::constant(nvars, c64(1.0, 0.0))
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Poly::zero(nvars);
        p.add_term(e, c64(1.0, 0.0));
        p
    }

    pub fn monomial(exps: MultiIndex, c: Complex64) -> Self {
        let mut p = Poly::zero(exps.len());
        p.add_term(exps, c);
        p
    }

    /// `sum_i coeffs[i] x_i + c0`.
    pub fn linear(coeffs: &[Complex64], c0: Complex64) -> Self {
        let n = coeffs.len();
        let mut p = Poly::constant(n, c0);
        for (i, &c) in coeffs.iter().enumerate() {
            let mut e = vec![0; n];
            e[i] = 1;
            p.add_term(e, c);
        }
        p
    }

    pub fn add_term(&mut self, exps: MultiIndex, c: Complex64) {
        debug_assert_eq!(exps.len(), self.nvars);
        if c == c64(0.0, 0.0) {
            return;
        }
        let slot = self.terms.entry(exps).or_insert(c64(0.0, 0.0));
        *slot += c;
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|c| *c == c64(0.0, 0.0))
    }

    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .filter(|(_, c)| **c != c64(0.0, 0.0))
            .map(|(e, _)| e.iter().sum::<u32>() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn coeff(&self, exps: &[u32]) -> Complex64 {
        self.terms.get(exps).copied().unwrap_or(c64(0.0, 0.0))
    }

    pub fn is_constant_one(&self) -> bool {
        let one = vec![0; self.nvars];
        self.terms.iter().all(|(e, c)| {
            if *e == one {
                *c == c64(1.0, 0.0)
            } else {
                *c == c64(0.0, 0.0)
            }
        }) && self.coeff(&one) == c64(1.0, 0.0)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(c64(-1.0, 0.0)))
    }

    pub fn scale(&self, s: Complex64) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c * s);
        }
        out
    }

    pub fn conj(&self) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c.conj())).collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: MultiIndex = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    pub fn mul_var(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            let mut e = e.clone();
            e[i] += 1;
            out.add_term(e, *c);
        }
        out
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut out = Poly::one(self.nvars);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    pub fn derivative(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                out.add_term(e2, c * e[i] as f64);
            }
        }
        out
    }

    pub fn eval(&self, x: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut m = *c;
                for (xi, &k) in x.iter().zip(e) {
                    if k > 0 {
                        m *= xi.powu(k);
                    }
                }
                m
            })
            .sum()
    }

    pub fn eval_real(&self, x: &[f64]) -> Complex64 {
        let xc: Vec<Complex64> = x.iter().map(|&v| c64(v, 0.0)).collect();
        self.eval(&xc)
    }

    /// Substitutes `x_i -> images[i]`, where each image is a polynomial in
    /// `images[i].nvars` variables.
    pub fn compose(&self, images: &[Poly]) -> Poly {
        assert_eq!(images.len(), self.nvars);
        let m = images.first().map(|p| p.nvars).unwrap_or(0);
        let mut cache: Vec<Vec<Poly>> = images.iter().map(|p| vec![Poly::one(p.nvars), p.clone()]).collect();
        let mut out = Poly::zero(m);
        for (e, c) in &self.terms {
            let mut term = Poly::constant(m, *c);
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                while cache[i].len() <= k as usize {
                    let next = cache[i].last().unwrap().mul(&images[i]);
                    cache[i].push(next);
                }
                term = term.mul(&cache[i][k as usize]);
            }
            out = out.add(&term);
        }
        out
    }

    /// Substitutes the affine map `x -> L x + c` with real `L` (row-major,
    /// `nvars x nvars`) and complex offset.
    pub fn compose_affine(&self, l: &[f64], offset: &[Complex64]) -> Poly {
        let n = self.nvars;
        let images: Vec<Poly> = (0..n)
            .map(|i| {
                let coeffs: Vec<Complex64> = (0..n).map(|j| c64(l[i * n + j], 0.0)).collect();
                Poly::linear(&coeffs, offset[i])
            })
            .collect();
        self.compose(&images)
    }

    /// Drops coefficients whose magnitude is below `tol` times the largest.
    pub fn prune(&self, tol: f64) -> Poly {
        let max = self.terms.values().map(|c| c.norm()).fold(0.0, f64::max);
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if c.norm() > tol * max {
                out.add_term(e.clone(), *c);
            }
        }
        out
    }

    pub fn check_cap(&self, cap: usize) -> Result<()> {
        let degree = self.degree();
        if degree > cap {
            return Err(Error::DegreeOverflow { degree, cap });
        }
        Ok(())
    }
}
