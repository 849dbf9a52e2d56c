//! Truncated Taylor jets (value, gradient, Hessian, third derivatives) in a
//! handful of variables, used to differentiate closed-form model fields
//! exactly.
//!
//! Variable 0 is time; variables `1..=2d` are the phase-space coordinates
//! `(q_1..q_d, p_1..p_d)`.

/// Derivatives of a scalar function up to `order` (at most 3) at one point.
///
/// Higher-order arrays are stored densely and fully symmetrized so that
/// `hess[i * n + j] == hess[j * n + i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub n: usize,
    pub order: usize,
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub third: Vec<f64>,
}

impl Jet {
    pub fn constant(n: usize, order: usize, value: f64) -> Self {
        assert!(order <= 3, "jets are truncated at third order");
        Jet {
            n,
            order,
            value,
            grad: if order >= 1 { vec![0.0; n] } else { Vec::new() },
            hess: if order >= 2 { vec![0.0; n * n] } else { Vec::new() },
            third: if order >= 3 { vec![0.0; n * n * n] } else { Vec::new() },
        }
    }

    pub fn variable(n: usize, order: usize, index: usize, value: f64) -> Self {
        let mut j = Jet::constant(n, order, value);
        if order >= 1 {
            j.grad[index] = 1.0;
        }
        j
    }

    #[inline]
    pub fn h(&self, i: usize, j: usize) -> f64 {
        self.hess[i * self.n + j]
    }

    #[inline]
    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.third[(i * self.n + j) * self.n + k]
    }

    pub fn add(&self, other: &Jet) -> Jet {
        let mut out = self.clone();
        out.value += other.value;
        zip_add(&mut out.grad, &other.grad, 1.0);
        zip_add(&mut out.hess, &other.hess, 1.0);
        zip_add(&mut out.third, &other.third, 1.0);
        out
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        let mut out = self.clone();
        out.value -= other.value;
        zip_add(&mut out.grad, &other.grad, -1.0);
        zip_add(&mut out.hess, &other.hess, -1.0);
        zip_add(&mut out.third, &other.third, -1.0);
        out
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.value *= s;
        out.grad.iter_mut().for_each(|x| *x *= s);
        out.hess.iter_mut().for_each(|x| *x *= s);
        out.third.iter_mut().for_each(|x| *x *= s);
        out
    }

    pub fn add_const(&self, c: f64) -> Jet {
        let mut out = self.clone();
        out.value += c;
        out
    }

    pub fn mul(&self, g: &Jet) -> Jet {
        let f = self;
        let n = f.n;
        let order = f.order.min(g.order);
        let mut out = Jet::constant(n, order, f.value * g.value);
        if order >= 1 {
            for i in 0..n {
                out.grad[i] = f.grad[i] * g.value + f.value * g.grad[i];
            }
        }
        if order >= 2 {
            for i in 0..n {
                for j in 0..n {
                    out.hess[i * n + j] = f.h(i, j) * g.value
                        + f.grad[i] * g.grad[j]
                        + f.grad[j] * g.grad[i]
                        + f.value * g.h(i, j);
                }
            }
        }
        if order >= 3 {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        out.third[(i * n + j) * n + k] = f.d3(i, j, k) * g.value
                            + f.h(i, j) * g.grad[k]
                            + f.h(i, k) * g.grad[j]
                            + f.h(j, k) * g.grad[i]
                            + f.grad[i] * g.h(j, k)
                            + f.grad[j] * g.h(i, k)
                            + f.grad[k] * g.h(i, j)
                            + f.value * g.d3(i, j, k);
                    }
                }
            }
        }
        out
    }

    /// Composition `phi(self)` given `[phi, phi', phi'', phi''']` at `self.value`.
    pub fn compose(&self, d: [f64; 4]) -> Jet {
        let f = self;
        let n = f.n;
        let mut out = Jet::constant(n, f.order, d[0]);
        if f.order >= 1 {
            for i in 0..n {
                out.grad[i] = d[1] * f.grad[i];
            }
        }
        if f.order >= 2 {
            for i in 0..n {
                for j in 0..n {
                    out.hess[i * n + j] = d[2] * f.grad[i] * f.grad[j] + d[1] * f.h(i, j);
                }
            }
        }
        if f.order >= 3 {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        out.third[(i * n + j) * n + k] = d[3] * f.grad[i] * f.grad[j] * f.grad[k]
                            + d[2]
                                * (f.h(i, j) * f.grad[k]
                                    + f.h(i, k) * f.grad[j]
                                    + f.h(j, k) * f.grad[i])
                            + d[1] * f.d3(i, j, k);
                    }
                }
            }
        }
        out
    }

    pub fn powi(&self, k: i32) -> Jet {
        let x = self.value;
        let kf = k as f64;
        // zero falling-factorial coefficients must not meet 0^negative
        let term = |c: f64, e: i32| {
            if c == 0.0 {
                0.0
            } else if e < 0 && x == 0.0 {
                f64::INFINITY
            } else {
                c * x.powi(e)
            }
        };
        self.compose([
            term(1.0, k),
            term(kf, k - 1),
            term(kf * (kf - 1.0), k - 2),
            term(kf * (kf - 1.0) * (kf - 2.0), k - 3),
        ])
    }

    pub fn recip(&self) -> Jet {
        self.powi(-1)
    }

    pub fn div(&self, g: &Jet) -> Jet {
        self.mul(&g.recip())
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.compose([c, -s, -c, s])
    }

    pub fn exp(&self) -> Jet {
        let e = self.value.exp();
        self.compose([e, e, e, e])
    }

    pub fn ln(&self) -> Jet {
        let x = self.value;
        self.compose([x.ln(), 1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x)])
    }

    pub fn tanh(&self) -> Jet {
        let t = self.value.tanh();
        let s = 1.0 - t * t;
        self.compose([t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)])
    }

    pub fn sqrt(&self) -> Jet {
        let r = self.value.sqrt();
        let x = self.value;
        self.compose([
            r,
            0.5 / r,
            -0.25 / (x * r),
            0.375 / (x * x * r),
        ])
    }

    pub fn atan(&self) -> Jet {
        let x = self.value;
        let u = 1.0 + x * x;
        self.compose([
            x.atan(),
            1.0 / u,
            -2.0 * x / (u * u),
            (6.0 * x * x - 2.0) / (u * u * u),
        ])
    }
}

fn zip_add(a: &mut [f64], b: &[f64], s: f64) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl Fn(&Jet, &Jet) -> Jet, x: f64, y: f64) -> Jet {
        let a = Jet::variable(2, 3, 0, x);
        let b = Jet::variable(2, 3, 1, y);
        f(&a, &b)
    }

    #[test]
    fn product_rule_matches_finite_differences() {
        let f = |a: &Jet, b: &Jet| a.sin().mul(&b.exp()).mul(a).add(&b.powi(3));
        let scalar = |x: f64, y: f64| x.sin() * y.exp() * x + y.powi(3);
        let (x, y) = (0.3, -0.7);
        let j = eval(f, x, y);
        let h = 1e-4;
        let fx = (scalar(x + h, y) - scalar(x - h, y)) / (2.0 * h);
        let fxy = (scalar(x + h, y + h) - scalar(x + h, y - h) - scalar(x - h, y + h)
            + scalar(x - h, y - h))
            / (4.0 * h * h);
        assert!((j.value - scalar(x, y)).abs() < 1e-14);
        assert!((j.grad[0] - fx).abs() < 1e-7);
        assert!((j.h(0, 1) - fxy).abs() < 1e-6);
        let h3 = 1e-3;
        let fxxy = (fxy_at(&scalar, x + h3, y) - fxy_at(&scalar, x - h3, y)) / (2.0 * h3);
        assert!((j.d3(0, 0, 1) - fxxy).abs() < 1e-4, "{} vs {}", j.d3(0, 0, 1), fxxy);
        assert!((j.d3(0, 1, 0) - j.d3(1, 0, 0)).abs() < 1e-12);
    }

    fn fxy_at(s: &impl Fn(f64, f64) -> f64, x: f64, y: f64) -> f64 {
        let h = 1e-4;
        (s(x + h, y + h) - s(x + h, y - h) - s(x - h, y + h) + s(x - h, y - h)) / (4.0 * h * h)
    }

    #[test]
    fn elementary_functions_third_derivatives() {
        for (jet, exact) in [
            (Jet::variable(1, 3, 0, 0.4).tanh(), {
                let t = 0.4f64.tanh();
                let s = 1.0 - t * t;
                s * (6.0 * t * t - 2.0)
            }),
            (Jet::variable(1, 3, 0, 2.0).sqrt(), 0.375 * 2.0f64.powf(-2.5)),
            (Jet::variable(1, 3, 0, 0.5).atan(), {
                let u: f64 = 1.25;
                (6.0 * 0.25 - 2.0) / u.powi(3)
            }),
        ] {
            assert!((jet.third[0] - exact).abs() < 1e-12);
        }
    }
}
