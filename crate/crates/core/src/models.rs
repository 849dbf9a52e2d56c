//! Matrix-valued Hamiltonians `H(t, z) = v I + f U(u)` with smooth spectral data.
//!
//! Two-level models are parameterized by a trace part `v`, a gap function `f`
//! and a unit vector field `u`, with
//!
//! ```text
//! U(u) = [[u1, u2 + i u3], [u2 - i u3, -u1]],   Pi_1 = (I + U)/2,   h_1 = v + f.
//! ```
//!
//! Band 1 is always the eigenvalue `v + f`; relabel with [`ModelSpec::swapped`].
//! Scalar models (`N = 1`) carry a single symbol `h`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::Jet;
use crate::linalg::{c64, CMat, I};

/// A real scalar function of `(t, q, p)`, either closed-form or opaque.
#[derive(Clone)]
pub enum ScalarField {
    Expr(Expr),
    Func(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Expr(e) => write!(f, "Expr({e})"),
            ScalarField::Func(_) => write!(f, "Func(..)"),
        }
    }
}

impl From<Expr> for ScalarField {
    fn from(e: Expr) -> Self {
        ScalarField::Expr(e)
    }
}

impl ScalarField {
    pub fn constant(c: f64) -> Self {
        ScalarField::Expr(Expr::Const(c))
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(ScalarField::Expr(Expr::parse(s)?))
    }

    pub fn func(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField::Func(Arc::new(f))
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, ScalarField::Expr(_))
    }

    pub fn eval(&self, t: f64, z: &[f64]) -> f64 {
        match self {
            ScalarField::Expr(e) => e.eval(t, z),
            ScalarField::Func(f) => f(t, z),
        }
    }

    pub fn jet(&self, t: f64, z: &[f64], order: usize, fd: &FdControls) -> Jet {
        match self {
            ScalarField::Expr(e) => e.jet(t, z, order),
            ScalarField::Func(f) => fd_jet(&|x: &[f64]| f(x[0], &x[1..]), t, z, order, fd),
        }
    }

    fn depends(&self, which: char) -> bool {
        match self {
            ScalarField::Expr(e) => match which {
                't' => e.depends_on_t(),
                'q' => e.depends_on_q(),
                _ => e.depends_on_p(),
            },
            ScalarField::Func(_) => true,
        }
    }
}

/// Finite-difference steps used when a field has no closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdControls {
    /// `h = step * max(1, |x|)` for first derivatives.
    pub step: f64,
    /// Apply one Richardson extrapolation to first and second derivatives.
    pub richardson: bool,
    /// Projector differences are refused when `|f| < near_crossing * h`.
    pub near_crossing: f64,
}

impl Default for FdControls {
    fn default() -> Self {
        FdControls { step: 1e-5, richardson: true, near_crossing: 10.0 }
    }
}

fn fd_jet(f: &dyn Fn(&[f64]) -> f64, t: f64, z: &[f64], order: usize, fd: &FdControls) -> Jet {
    let mut x = vec![t];
    x.extend_from_slice(z);
    let n = x.len();
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut jet = Jet::constant(n, order, f(&x));
    let shifted = |pairs: &[(usize, f64)]| {
        let mut y = x.clone();
        for &(i, h) in pairs {
            y[i] += h;
        }
        f(&y)
    };
    if order >= 1 {
        let h = fd.step * scale;
        for i in 0..n {
            let d = |h: f64| (shifted(&[(i, h)]) - shifted(&[(i, -h)])) / (2.0 * h);
            jet.grad[i] = if fd.richardson { (4.0 * d(h / 2.0) - d(h)) / 3.0 } else { d(h) };
        }
    }
    let hess_at = |pairs: &[(usize, f64)], h: f64| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut base: Vec<(usize, f64)> = pairs.to_vec();
                let v = if i == j {
                    base.push((i, h));
                    let up = shifted(&base);
                    base.pop();
                    base.push((i, -h));
                    let dn = shifted(&base);
                    base.pop();
                    (up - 2.0 * shifted(&base) + dn) / (h * h)
                } else {
                    let mut s = 0.0;
                    for (si, sj, sign) in [(h, h, 1.0), (h, -h, -1.0), (-h, h, -1.0), (-h, -h, 1.0)] {
                        base.push((i, si));
                        base.push((j, sj));
                        s += sign * shifted(&base);
                        base.pop();
                        base.pop();
                    }
                    s / (4.0 * h * h)
                };
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    };
    if order >= 2 {
        let h = 1e-4 * scale;
        let a = hess_at(&[], h);
        jet.hess = if fd.richardson {
            let b = hess_at(&[], h / 2.0);
            a.iter().zip(&b).map(|(a, b)| (4.0 * b - a) / 3.0).collect()
        } else {
            a
        };
    }
    if order >= 3 {
        let h2 = 1e-3 * scale;
        let h3 = 1e-3 * scale;
        for k in 0..n {
            let up = hess_at(&[(k, h3)], h2);
            let dn = hess_at(&[(k, -h3)], h2);
            for ij in 0..n * n {
                jet.third[ij * n + k] = (up[ij] - dn[ij]) / (2.0 * h3);
            }
        }
        // symmetrize over all index orders
        let raw = jet.third.clone();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let perms = [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)];
                    let s: f64 = perms.iter().map(|&(a, b, c)| raw[(a * n + b) * n + c]).sum();
                    jet.third[(i * n + j) * n + k] = s / 6.0;
                }
            }
        }
    }
    jet
}

/// `s I + g U(u)`: a Hermitian 2x2 matrix field in the `(v, f, u)` form.
#[derive(Clone, Debug)]
pub struct MatrixForm {
    pub scalar: ScalarField,
    pub gap: ScalarField,
    pub u: [ScalarField; 3],
}

impl MatrixForm {
    pub fn scalar_only(s: ScalarField) -> Self {
        MatrixForm {
            scalar: s,
            gap: ScalarField::constant(0.0),
            u: [ScalarField::constant(1.0), ScalarField::constant(0.0), ScalarField::constant(0.0)],
        }
    }

    /// `(s, g, g u)` at a point.
    pub fn eval(&self, t: f64, z: &[f64]) -> (f64, [f64; 3]) {
        let g = self.gap.eval(t, z);
        let u = [self.u[0].eval(t, z), self.u[1].eval(t, z), self.u[2].eval(t, z)];
        (self.scalar.eval(t, z), [g * u[0], g * u[1], g * u[2]])
    }
}

/// Which variable family the eigenprojectors depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectorDependence {
    Constant,
    Position,
    Momentum,
    Mixed,
}

/// `H = K(p) + V(t, q)`, the form the grid oracle integrates.
#[derive(Clone, Debug)]
pub struct Separable {
    pub kinetic: MatrixForm,
    pub potential: MatrixForm,
}

#[derive(Clone, Debug)]
pub enum Structure {
    TwoLevel { v: ScalarField, f: ScalarField, u: [ScalarField; 3] },
    Scalar { h: ScalarField },
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub d: usize,
    pub n: usize,
    pub structure: Structure,
    pub separable: Option<Separable>,
    pub fd: FdControls,
}

/// A band index, `1` or `2`.
pub type Band = usize;

/// First derivatives of a projector along `(t, z)`.
#[derive(Clone, Debug)]
pub struct ProjectorDerivs {
    pub value: CMat,
    pub dt: CMat,
    pub dz: Vec<CMat>,
}

/// Symbols whose derivatives can be requested through [`ModelSpec::derivatives`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symbol {
    V,
    F,
    H(Band),
}

/// Advisory checks of the crossing assumptions at one point.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CrossingAssumptionsReport {
    pub t: f64,
    pub z: Vec<f64>,
    pub gap: f64,
    pub transversality: f64,
    pub smooth_spectral_data: bool,
    pub transversal: bool,
    pub gap_at_infinity: bool,
    pub gap_at_infinity_min: f64,
}

fn unit_u(u: &[ScalarField; 3]) -> [ScalarField; 3] {
    u.clone()
}

fn neg(s: &ScalarField) -> ScalarField {
    match s {
        ScalarField::Expr(e) => ScalarField::Expr(-e.clone()),
        ScalarField::Func(f) => {
            let f = f.clone();
            ScalarField::func(move |t, z| -f(t, z))
        }
    }
}

fn sum(a: &ScalarField, b: &ScalarField) -> ScalarField {
    match (a, b) {
        (ScalarField::Expr(x), ScalarField::Expr(y)) => ScalarField::Expr(x.clone() + y.clone()),
        _ => {
            let (a, b) = (a.clone(), b.clone());
            ScalarField::func(move |t, z| a.eval(t, z) + b.eval(t, z))
        }
    }
}

fn max_dim(fields: &[&ScalarField]) -> usize {
    fields
        .iter()
        .map(|f| match f {
            ScalarField::Expr(e) => e.max_dim(),
            ScalarField::Func(_) => 0,
        })
        .max()
        .unwrap_or(0)
        .max(1)
}

/// A general two-level model `v I + f U(u)` in dimension `d`.
pub fn make_two_level(d: usize, v: ScalarField, f: ScalarField, u: [ScalarField; 3]) -> Result<ModelSpec> {
    let needed = max_dim(&[&v, &f, &u[0], &u[1], &u[2]]);
    if needed > d {
        return Err(Error::Dimension(format!("fields reference dimension {needed} > d = {d}")));
    }
    Ok(ModelSpec {
        name: "two_level".into(),
        d,
        n: 2,
        structure: Structure::TwoLevel { v, f, u: unit_u(&u) },
        separable: None,
        fd: FdControls::default(),
    })
}

/// `H = kinetic(p) I + w(t,x) I + g(t,x) U(u(t,x))`.
///
/// `E_A - E_B = 2 g` are the eigenvalue differences of the potential matrix.
pub fn make_schrodinger(
    d: usize,
    kinetic: ScalarField,
    w: ScalarField,
    g: ScalarField,
    u: [ScalarField; 3],
) -> Result<ModelSpec> {
    if kinetic.is_analytic() && (kinetic.depends('q') || kinetic.depends('t')) {
        return Err(Error::Unsupported("kinetic energy must depend on p only".into()));
    }
    for s in [&w, &g, &u[0], &u[1], &u[2]] {
        if s.is_analytic() && s.depends('p') {
            return Err(Error::Unsupported("potential fields must not depend on p".into()));
        }
    }
    let mut m = make_two_level(d, sum(&kinetic, &w), g.clone(), u.clone())?;
    m.name = "schrodinger".into();
    m.separable = Some(Separable {
        kinetic: MatrixForm::scalar_only(kinetic),
        potential: MatrixForm { scalar: w, gap: g, u },
    });
    Ok(m)
}

/// `H = a0(p) I + g(p) U(u(p)) + W(x) I`.
pub fn make_bloch(d: usize, a0: ScalarField, g: ScalarField, u: [ScalarField; 3], w: ScalarField) -> Result<ModelSpec> {
    for s in [&a0, &g, &u[0], &u[1], &u[2]] {
        if s.is_analytic() && (s.depends('q') || s.depends('t')) {
            return Err(Error::Unsupported("band matrix must depend on p only".into()));
        }
    }
    if w.is_analytic() && w.depends('p') {
        return Err(Error::Unsupported("W must not depend on p".into()));
    }
    let mut m = make_two_level(d, sum(&a0, &w), g.clone(), u.clone())?;
    m.name = "bloch".into();
    m.separable = Some(Separable {
        kinetic: MatrixForm { scalar: a0, gap: g, u },
        potential: MatrixForm::scalar_only(w),
    });
    Ok(m)
}

/// A scalar (`N = 1`) Hamiltonian.
pub fn make_scalar(d: usize, h: ScalarField) -> Result<ModelSpec> {
    let needed = max_dim(&[&h]);
    if needed > d {
        return Err(Error::Dimension(format!("h references dimension {needed} > d = {d}")));
    }
    Ok(ModelSpec {
        name: "scalar".into(),
        d,
        n: 1,
        structure: Structure::Scalar { h },
        separable: None,
        fd: FdControls::default(),
    })
}

/// `h = kinetic(p) + potential(t, x)`, usable by the grid oracle.
pub fn make_scalar_separable(d: usize, kinetic: ScalarField, potential: ScalarField) -> Result<ModelSpec> {
    let mut m = make_scalar(d, sum(&kinetic, &potential))?;
    m.separable = Some(Separable {
        kinetic: MatrixForm::scalar_only(kinetic),
        potential: MatrixForm::scalar_only(potential),
    });
    Ok(m)
}

impl ModelSpec {
    pub fn with_fd(mut self, fd: FdControls) -> Self {
        self.fd = fd;
        self
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    /// The same Hamiltonian with bands 1 and 2 exchanged.
    pub fn swapped(&self) -> Result<ModelSpec> {
        let mut m = self.clone();
        match &self.structure {
            Structure::TwoLevel { v, f, u } => {
                m.structure = Structure::TwoLevel {
                    v: v.clone(),
                    f: neg(f),
                    u: [neg(&u[0]), neg(&u[1]), neg(&u[2])],
                };
                if let Some(sep) = &mut m.separable {
                    for form in [&mut sep.kinetic, &mut sep.potential] {
                        form.gap = neg(&form.gap);
                        form.u = [neg(&form.u[0]), neg(&form.u[1]), neg(&form.u[2])];
                    }
                }
                Ok(m)
            }
            Structure::Scalar { .. } => Err(Error::Unsupported("scalar models have one band".into())),
        }
    }

    /// The eigenvalue `h_band` as a scalar model.
    pub fn band_scalar(&self, band: Band) -> Result<ModelSpec> {
        self.check_band(band)?;
        match &self.structure {
            Structure::Scalar { .. } => Ok(self.clone()),
            Structure::TwoLevel { v, f, .. } => {
                let h = if band == 1 { sum(v, f) } else { sum(v, &neg(f)) };
                let mut m = make_scalar(self.d, h)?;
                m.fd = self.fd;
                m.name = format!("{}:h{band}", self.name);
                Ok(m)
            }
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self.structure, Structure::Scalar { .. })
    }

    fn check_band(&self, band: Band) -> Result<()> {
        if band == 1 || (band == 2 && !self.is_scalar()) {
            Ok(())
        } else {
            Err(Error::Dimension(format!("band {band} does not exist for this model")))
        }
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != 2 * self.d {
            return Err(Error::Dimension(format!("phase point has {} entries, expected {}", z.len(), 2 * self.d)));
        }
        Ok(())
    }

    /// Jet count `n = 2d + 1` with index 0 for time.
    pub fn jet_vars(&self) -> usize {
        2 * self.d + 1
    }

    pub fn v_jet(&self, t: f64, z: &[f64], order: usize) -> Result<Jet> {
        self.check_point(z)?;
        Ok(match &self.structure {
            Structure::TwoLevel { v, .. } => v.jet(t, z, order, &self.fd),
            Structure::Scalar { h } => h.jet(t, z, order, &self.fd),
        })
    }

    pub fn f_jet(&self, t: f64, z: &[f64], order: usize) -> Result<Jet> {
        self.check_point(z)?;
        Ok(match &self.structure {
            Structure::TwoLevel { f, .. } => f.jet(t, z, order, &self.fd),
            Structure::Scalar { .. } => Jet::constant(self.jet_vars(), order, 0.0),
        })
    }

    pub fn f(&self, t: f64, z: &[f64]) -> f64 {
        match &self.structure {
            Structure::TwoLevel { f, .. } => f.eval(t, z),
            Structure::Scalar { .. } => 0.0,
        }
    }

    /// `h_band = v - (-1)^band f`.
    pub fn h_jet(&self, band: Band, t: f64, z: &[f64], order: usize) -> Result<Jet> {
        self.check_band(band)?;
        let v = self.v_jet(t, z, order)?;
        if self.is_scalar() {
            return Ok(v);
        }
        let f = self.f_jet(t, z, order)?;
        Ok(if band == 1 { v.add(&f) } else { v.sub(&f) })
    }

    pub fn h(&self, band: Band, t: f64, z: &[f64]) -> Result<f64> {
        Ok(self.h_jet(band, t, z, 0)?.value)
    }

    fn u_jets(&self, t: f64, z: &[f64], order: usize) -> Result<Option<[Jet; 3]>> {
        self.check_point(z)?;
        match &self.structure {
            Structure::TwoLevel { u, .. } => {
                let j = [u[0].jet(t, z, order, &self.fd), u[1].jet(t, z, order, &self.fd), u[2].jet(t, z, order, &self.fd)];
                let norm = (j[0].value.powi(2) + j[1].value.powi(2) + j[2].value.powi(2)).sqrt();
                if (norm - 1.0).abs() > 1e-8 {
                    return Err(Error::NotUnit { norm, t });
                }
                Ok(Some(j))
            }
            Structure::Scalar { .. } => Ok(None),
        }
    }

    fn u_analytic(&self) -> bool {
        match &self.structure {
            Structure::TwoLevel { u, .. } => u.iter().all(|s| s.is_analytic()),
            Structure::Scalar { .. } => true,
        }
    }

    pub fn hamiltonian(&self, t: f64, z: &[f64]) -> Result<CMat> {
        let v = self.v_jet(t, z, 0)?.value;
        match self.u_jets(t, z, 0)? {
            None => Ok(CMat::from_element(1, 1, c64(v, 0.0))),
            Some(u) => {
                let f = self.f(t, z);
                let um = u_matrix([u[0].value, u[1].value, u[2].value]);
                Ok(CMat::identity(2, 2) * c64(v, 0.0) + um * c64(f, 0.0))
            }
        }
    }

    pub fn projector(&self, band: Band, t: f64, z: &[f64]) -> Result<CMat> {
        self.check_band(band)?;
        match self.u_jets(t, z, 0)? {
            None => Ok(CMat::identity(1, 1)),
            Some(u) => Ok(projector_from_u(band, [u[0].value, u[1].value, u[2].value])),
        }
    }

    pub fn projector_derivs(&self, band: Band, t: f64, z: &[f64]) -> Result<ProjectorDerivs> {
        self.check_band(band)?;
        let nz = 2 * self.d;
        if !self.u_analytic() {
            let gap = self.f(t, z).abs();
            let scale = z.iter().fold(1.0f64, |m, v| m.max(v.abs())).max(t.abs());
            let floor = self.fd.near_crossing * self.fd.step * scale;
            if gap < floor {
                return Err(Error::NearCrossing { gap, floor });
            }
        }
        match self.u_jets(t, z, 1)? {
            None => Ok(ProjectorDerivs {
                value: CMat::identity(1, 1),
                dt: CMat::zeros(1, 1),
                dz: vec![CMat::zeros(1, 1); nz],
            }),
            Some(u) => {
                let s = if band == 1 { 0.5 } else { -0.5 };
                let d_at = |k: usize| u_matrix([u[0].grad[k], u[1].grad[k], u[2].grad[k]]) * c64(s, 0.0);
                Ok(ProjectorDerivs {
                    value: projector_from_u(band, [u[0].value, u[1].value, u[2].value]),
                    dt: d_at(0),
                    dz: (0..nz).map(|k| d_at(k + 1)).collect(),
                })
            }
        }
    }

    /// `{a, b} = d_p a . d_q b - d_q a . d_p b` for jets in `(t, q, p)`.
    pub fn poisson(&self, a: &Jet, b: &Jet) -> f64 {
        let d = self.d;
        (0..d).map(|i| a.grad[1 + d + i] * b.grad[1 + i] - a.grad[1 + i] * b.grad[1 + d + i]).sum()
    }

    /// `{a, Pi}` for a scalar jet and matrix-valued derivatives.
    pub fn poisson_scalar_matrix(&self, a: &Jet, p: &ProjectorDerivs) -> CMat {
        let d = self.d;
        let mut out = CMat::zeros(p.value.nrows(), p.value.ncols());
        for i in 0..d {
            out += &p.dz[i] * c64(a.grad[1 + d + i], 0.0) - &p.dz[d + i] * c64(a.grad[1 + i], 0.0);
        }
        out
    }

    /// `{P, P} = sum_i d_{p_i} P d_{q_i} P - d_{q_i} P d_{p_i} P`.
    pub fn poisson_matrix_matrix(&self, p: &ProjectorDerivs) -> CMat {
        let d = self.d;
        let mut out = CMat::zeros(p.value.nrows(), p.value.ncols());
        for i in 0..d {
            out += &p.dz[d + i] * &p.dz[i] - &p.dz[i] * &p.dz[d + i];
        }
        out
    }

    /// Normalized eigenvector `Pi_band v_ref / |Pi_band v_ref|`; picks a
    /// reference column when none is given.
    pub fn eigvec(&self, band: Band, t: f64, z: &[f64], reference: Option<&[Complex64]>) -> Result<Vec<Complex64>> {
        let p = self.projector(band, t, z)?;
        let n = p.nrows();
        let v: Vec<Complex64> = match reference {
            Some(r) => (0..n).map(|i| (0..n).map(|j| p[(i, j)] * r[j]).sum()).collect(),
            None => {
                let col = (0..n)
                    .max_by(|&a, &b| p[(a, a)].re.partial_cmp(&p[(b, b)].re).unwrap())
                    .unwrap();
                (0..n).map(|i| p[(i, col)]).collect()
            }
        };
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return Err(Error::Invariant("reference vector orthogonal to the band".into()));
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }

    /// Value, time derivative, gradient and Hessian in `z` of a scalar symbol.
    pub fn derivatives(&self, which: Symbol, t: f64, z: &[f64]) -> Result<ScalarDerivs> {
        let jet = match which {
            Symbol::V => self.v_jet(t, z, 2)?,
            Symbol::F => self.f_jet(t, z, 2)?,
            Symbol::H(b) => self.h_jet(b, t, z, 2)?,
        };
        let nz = 2 * self.d;
        Ok(ScalarDerivs {
            value: jet.value,
            dt: jet.grad[0],
            grad: jet.grad[1..].to_vec(),
            hess: (0..nz).flat_map(|i| (0..nz).map(move |j| (i, j))).map(|(i, j)| jet.h(i + 1, j + 1)).collect(),
        })
    }

    /// `dt f + {v, f}`, twice the crossing rate.
    pub fn transversality(&self, t: f64, z: &[f64]) -> Result<f64> {
        let v = self.v_jet(t, z, 1)?;
        let f = self.f_jet(t, z, 1)?;
        Ok(f.grad[0] + self.poisson(&v, &f))
    }

    /// Which variables the projectors depend on, judged from the expressions.
    pub fn projector_dependence(&self) -> ProjectorDependence {
        match &self.structure {
            Structure::Scalar { .. } => ProjectorDependence::Constant,
            Structure::TwoLevel { u, .. } => {
                let q = u.iter().any(|s| s.depends('q'));
                let p = u.iter().any(|s| s.depends('p'));
                match (q, p) {
                    (false, false) => ProjectorDependence::Constant,
                    (true, false) => ProjectorDependence::Position,
                    (false, true) => ProjectorDependence::Momentum,
                    (true, true) => ProjectorDependence::Mixed,
                }
            }
        }
    }

    pub fn assumptions_report(&self, t: f64, z: &[f64], far_radius: f64) -> Result<CrossingAssumptionsReport> {
        let gap = self.f(t, z);
        let transversality = self.transversality(t, z)?;
        let d = self.d;
        let mut far_min = f64::INFINITY;
        for k in 0..2 * d {
            for s in [-1.0, 1.0] {
                let mut w = vec![0.0; 2 * d];
                w[k] = s * far_radius;
                far_min = far_min.min(self.f(t, &w).abs());
            }
        }
        Ok(CrossingAssumptionsReport {
            t,
            z: z.to_vec(),
            gap,
            transversality,
            smooth_spectral_data: true,
            transversal: transversality.abs() > 1e-8,
            gap_at_infinity: far_min > 0.0,
            gap_at_infinity_min: far_min,
        })
    }

    /// `max |H - h1 Pi1 - h2 Pi2|` at a point.
    pub fn spectral_residual(&self, t: f64, z: &[f64]) -> Result<f64> {
        let h = self.hamiltonian(t, z)?;
        if self.is_scalar() {
            return Ok(0.0);
        }
        let r = &h - self.projector(1, t, z)? * c64(self.h(1, t, z)?, 0.0) - self.projector(2, t, z)? * c64(self.h(2, t, z)?, 0.0);
        Ok(r.iter().map(|x| x.norm()).fold(0.0, f64::max))
    }
}

/// Value, `dt`, gradient and Hessian (row-major `2d x 2d`) in `z`.
#[derive(Clone, Debug)]
pub struct ScalarDerivs {
    pub value: f64,
    pub dt: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

pub fn u_matrix(u: [f64; 3]) -> CMat {
    CMat::from_row_slice(2, 2, &[c64(u[0], 0.0), c64(u[1], 0.0) + I * u[2], c64(u[1], 0.0) - I * u[2], c64(-u[0], 0.0)])
}

fn projector_from_u(band: Band, u: [f64; 3]) -> CMat {
    let s = if band == 1 { 0.5 } else { -0.5 };
    CMat::identity(2, 2) * c64(0.5, 0.0) + u_matrix(u) * c64(s, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(s: &str) -> ScalarField {
        ScalarField::parse(s).unwrap()
    }

    fn rotating() -> ModelSpec {
        make_schrodinger(1, e("0.5*p^2"), e("0.1*x^2"), e("x"), [e("cos(0.5*x)"), e("sin(0.5*x)"), e("0")]).unwrap()
    }

    fn norm(m: &CMat) -> f64 {
        m.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn two_level_spectral_identities() {
        let m = make_two_level(1, e("q*p + t"), e("1 + q^2"), [e("cos(q)*cos(p)"), e("sin(q)*cos(p)"), e("sin(p)")]).unwrap();
        let mut seed = 1u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..100 {
            let (t, z) = (rnd(), [rnd(), rnd()]);
            let p1 = m.projector(1, t, &z).unwrap();
            let p2 = m.projector(2, t, &z).unwrap();
            assert!(norm(&(&p1 + &p2 - CMat::identity(2, 2))) < 1e-12);
            assert!(norm(&(&p1 * &p1 - &p1)) < 1e-12);
            assert!(norm(&(&p1 * &p2)) < 1e-12);
            assert!(m.spectral_residual(t, &z).unwrap() < 1e-10);
            let diff = m.h(1, t, &z).unwrap() - m.h(2, t, &z).unwrap();
            assert!((diff - 2.0 * m.f(t, &z)).abs() < 1e-12);
            let h = m.hamiltonian(t, &z).unwrap();
            let ev = h.map(|x| x).symmetric_eigenvalues();
            let mut ev: Vec<f64> = ev.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (v, f) = (m.v_jet(t, &z, 0).unwrap().value, m.f(t, &z));
            assert!((ev[0] - (v - f.abs())).abs() < 1e-10 && (ev[1] - (v + f.abs())).abs() < 1e-10);
        }
    }

    #[test]
    fn non_unit_u_rejected() {
        let m = make_two_level(1, e("0"), e("q"), [e("1.1"), e("0"), e("0")]).unwrap();
        assert!(matches!(m.projector(1, 0.0, &[0.0, 0.0]), Err(Error::NotUnit { .. })));
    }

    #[test]
    fn schrodinger_derivatives() {
        let m = rotating();
        let d = m.derivatives(Symbol::H(1), 0.0, &[0.3, 1.7]).unwrap();
        assert!((d.grad[1] - 1.7).abs() < 1e-15);
        let pb = m.transversality(0.0, &[0.3, 1.7]).unwrap();
        assert!((pb - 1.7).abs() < 1e-14);
        assert_eq!(m.projector_dependence(), ProjectorDependence::Position);
        let fd = make_schrodinger(
            1,
            ScalarField::func(|_, z| 0.5 * z[1] * z[1]),
            ScalarField::func(|_, z| 0.1 * z[0] * z[0]),
            ScalarField::func(|_, z| z[0]),
            [ScalarField::func(|_, z| (0.5 * z[0]).cos()), ScalarField::func(|_, z| (0.5 * z[0]).sin()), ScalarField::constant(0.0)],
        )
        .unwrap();
        let a = m.derivatives(Symbol::H(1), 0.0, &[0.3, 1.7]).unwrap();
        let b = fd.derivatives(Symbol::H(1), 0.0, &[0.3, 1.7]).unwrap();
        for k in 0..2 {
            assert!((a.grad[k] - b.grad[k]).abs() < 1e-9);
        }
        for k in 0..4 {
            assert!((a.hess[k] - b.hess[k]).abs() < 1e-6);
        }
        assert!((fd.transversality(0.0, &[0.3, 1.7]).unwrap() - 1.7).abs() < 1e-8);
        assert!(matches!(fd.projector_derivs(1, 0.0, &[1e-7, 1.0]), Err(Error::NearCrossing { .. })));
        let pa = m.projector_derivs(1, 0.0, &[0.3, 1.7]).unwrap();
        let pb = fd.projector_derivs(1, 0.0, &[0.3, 1.7]).unwrap();
        assert!(norm(&(&pa.dz[0] - &pb.dz[0])) < 1e-8);
        let ja = m.h_jet(1, 0.0, &[0.3, 1.7], 3).unwrap();
        let jb = fd.h_jet(1, 0.0, &[0.3, 1.7], 3).unwrap();
        assert!((ja.d3(1, 1, 1) - jb.d3(1, 1, 1)).abs() < 1e-4);
    }

    #[test]
    fn projector_poisson_identity() {
        // Pi_perp {Pi, Pi} Pi = 0
        let m = make_two_level(1, e("0"), e("q"), [e("cos(q*p)"), e("sin(q*p)*cos(p)"), e("sin(q*p)*sin(p)")]).unwrap();
        for z in [[0.3, 0.5], [-1.0, 2.0], [0.7, -0.4]] {
            let p = m.projector_derivs(1, 0.0, &z).unwrap();
            let perp = CMat::identity(2, 2) - &p.value;
            let r = &perp * m.poisson_matrix_matrix(&p) * &p.value;
            assert!(norm(&r) < 1e-7);
        }
    }

    #[test]
    fn bloch_model() {
        // H_A = [[0, p1 + i p2], [p1 - i p2, 0]] + W: u = (0, p1, p2)/|p|, f = |p|
        let m = make_bloch(
            2,
            e("0"),
            e("sqrt(p1^2 + p2^2)"),
            [e("0"), e("p1/sqrt(p1^2 + p2^2)"), e("p2/sqrt(p1^2 + p2^2)")],
            e("0.3*x1"),
        )
        .unwrap();
        let z = [0.5, 0.1, 0.6, -0.8];
        let h = m.hamiltonian(0.0, &z).unwrap();
        assert!((h[(0, 1)] - c64(0.6, -0.8)).norm() < 1e-14);
        assert!((m.h(1, 0.0, &z).unwrap() - (0.15 + 1.0)).abs() < 1e-14);
        assert_eq!(m.projector_dependence(), ProjectorDependence::Momentum);
    }

    #[test]
    fn swapped_exchanges_bands() {
        let m = rotating();
        let s = m.swapped().unwrap();
        let z = [0.4, 0.2];
        assert!((m.h(1, 0.0, &z).unwrap() - s.h(2, 0.0, &z).unwrap()).abs() < 1e-15);
        assert!(norm(&(m.projector(1, 0.0, &z).unwrap() - s.projector(2, 0.0, &z).unwrap())) < 1e-15);
    }

    #[test]
    fn diagonal_model_is_decoupled() {
        let m = make_two_level(1, e("p^2/2"), e("q"), [e("1"), e("0"), e("0")]).unwrap();
        let p = m.projector_derivs(1, 0.3, &[0.2, 0.1]).unwrap();
        assert!(norm(&p.dt) == 0.0 && p.dz.iter().all(|d| norm(d) == 0.0));
    }
}
