//! Independent reference values shared by the integration and acceptance tests.
#![allow(dead_code)]

/// Exact enumeration over the four (y, θ) pairs of the binary channel.
pub mod channel {
    pub const VALUES: [f64; 2] = [-1.0, 1.0];

    #[derive(Clone, Copy, Debug)]
    pub enum Kind {
        Joint,
        Conditional,
    }

    #[derive(Clone, Copy, Debug)]
    pub struct Channel {
        pub eps: f64,
    }

    impl Channel {
        pub fn lik(&self, y: f64, theta: f64) -> f64 {
            if !VALUES.contains(&theta) {
                0.0
            } else if y == theta {
                1.0 - self.eps
            } else {
                self.eps
            }
        }

        pub fn prior(&self, theta: f64) -> f64 {
            if VALUES.contains(&theta) {
                0.5
            } else {
                0.0
            }
        }

        pub fn joint(&self, y: f64, theta: f64) -> f64 {
            self.prior(theta) * self.lik(y, theta)
        }

        pub fn marginal(&self, y: f64) -> f64 {
            VALUES.iter().map(|&t| self.joint(y, t)).sum()
        }

        pub fn post_mean(&self, y: f64) -> f64 {
            VALUES.iter().map(|&t| t * self.joint(y, t)).sum::<f64>() / self.marginal(y)
        }

        pub fn post_var(&self, y: f64) -> f64 {
            let m = self.post_mean(y);
            VALUES.iter().map(|&t| (t - m).powi(2) * self.joint(y, t)).sum::<f64>() / self.marginal(y)
        }

        fn dens(&self, kind: Kind, y: f64, theta: f64) -> f64 {
            match kind {
                Kind::Joint => self.joint(y, theta),
                Kind::Conditional => self.lik(y, theta),
            }
        }

        /// Density-ratio test function with 0^e = 0 for e > 0 and x^0 = 1.
        pub fn psi(&self, kind: Kind, h: f64, s: f64, y: f64, theta: f64) -> f64 {
            let base = self.dens(kind, y, theta);
            if base == 0.0 {
                return 0.0;
            }
            let pow = |x: f64, e: f64| if e == 0.0 { 1.0 } else { x.powf(e) };
            pow(self.dens(kind, y, theta + h) / base, s) - pow(self.dens(kind, y, theta - h) / base, 1.0 - s)
        }

        pub fn risk(&self) -> f64 {
            let mut r = 0.0;
            for y in VALUES {
                for t in VALUES {
                    r += self.joint(y, t) * (t - self.post_mean(y)).powi(2);
                }
            }
            r
        }

        fn degenerate(den: f64, second: f64) -> bool {
            !(den >= 1e-14 * second.max(1.0))
        }

        /// `(E ψ, E ψ², E (θ - m(y)) ψ, E θψ)` over the joint.
        fn joint_moments(&self, f: &dyn Fn(f64, f64) -> f64) -> [f64; 4] {
            let mut m = [0.0; 4];
            for y in VALUES {
                for t in VALUES {
                    let p = self.joint(y, t);
                    let v = f(y, t);
                    m[0] += p * v;
                    m[1] += p * v * v;
                    m[2] += p * (t - self.post_mean(y)) * v;
                    m[3] += p * t * v;
                }
            }
            m
        }

        pub fn global(&self, f: &dyn Fn(f64, f64) -> f64) -> Option<f64> {
            let [m1, m2, c, _] = self.joint_moments(f);
            let var = m2 - m1 * m1;
            (!Self::degenerate(var, m2)).then(|| c * c / var)
        }

        pub fn ww(&self, f: &dyn Fn(f64, f64) -> f64) -> Option<f64> {
            let [_, m2, _, tp] = self.joint_moments(f);
            (!Self::degenerate(m2, m2)).then(|| tp * tp / m2)
        }

        fn cond_moments(&self, f: &dyn Fn(f64, f64) -> f64, y: f64) -> [f64; 4] {
            let py = self.marginal(y);
            let m = self.post_mean(y);
            let mut out = [0.0; 4];
            for t in VALUES {
                let w = self.joint(y, t) / py;
                let v = f(y, t);
                out[0] += w * v;
                out[1] += w * v * v;
                out[2] += w * (t - m) * v;
                out[3] += w * t * v;
            }
            out
        }

        pub fn conditional(&self, f: &dyn Fn(f64, f64) -> f64, y: f64) -> Option<f64> {
            let [m1, m2, c, _] = self.cond_moments(f, y);
            let var = m2 - m1 * m1;
            (!Self::degenerate(var, m2)).then(|| c * c / var)
        }

        pub fn ww_conditional(&self, f: &dyn Fn(f64, f64) -> f64, y: f64) -> Option<f64> {
            let [_, m2, _, tp] = self.cond_moments(f, y);
            (!Self::degenerate(m2, m2)).then(|| tp * tp / m2)
        }

        pub fn zero_condition(&self, f: &dyn Fn(f64, f64) -> f64) -> f64 {
            VALUES
                .iter()
                .map(|&y| self.cond_moments(f, y)[0].abs())
                .fold(0.0, f64::max)
        }

        pub fn avg_conditional(&self, f: &dyn Fn(f64, f64) -> f64) -> Option<f64> {
            let mut acc = 0.0;
            for y in VALUES {
                acc += self.marginal(y) * self.conditional(f, y)?;
            }
            Some(acc)
        }

        pub fn avg_theta(&self, f: &dyn Fn(f64, f64) -> f64) -> Option<f64> {
            let mut acc = 0.0;
            for t in VALUES {
                let (mut c, mut m2) = (0.0, 0.0);
                for y in VALUES {
                    let w = self.lik(y, t);
                    let v = f(y, t);
                    c += w * (t - self.post_mean(y)) * v;
                    m2 += w * v * v;
                }
                if Self::degenerate(m2, m2) {
                    return None;
                }
                acc += self.prior(t) * c * c / m2;
            }
            Some(acc)
        }
    }
}

/// Closed forms for θ ~ N(0, vp), t | θ ~ N(θ, σ²) with the density-ratio
/// test functions, from Gaussian moment generating functions.
pub mod gauss {
    #[derive(Clone, Copy, Debug)]
    pub struct Gauss {
        pub vp: f64,
        /// Variance of the sufficient statistic.
        pub sv: f64,
    }

    /// `exp(u·(θ, t) + c)`
    #[derive(Clone, Copy, Debug)]
    struct Term {
        u: [f64; 2],
        c: f64,
    }

    impl Gauss {
        pub fn new(vp: f64, vn: f64, n: usize) -> Self {
            Gauss { vp, sv: vn / n as f64 }
        }

        pub fn gain(&self) -> f64 {
            self.vp / (self.vp + self.sv)
        }

        pub fn risk(&self) -> f64 {
            self.vp * self.sv / (self.vp + self.sv)
        }

        fn cov(&self, u: [f64; 2]) -> [f64; 2] {
            // Cov(θ, t) = [[vp, vp], [vp, vp + sv]]
            [self.vp * (u[0] + u[1]), self.vp * u[0] + (self.vp + self.sv) * u[1]]
        }

        fn mgf(&self, t: Term) -> f64 {
            let su = self.cov(t.u);
            (t.c + 0.5 * (t.u[0] * su[0] + t.u[1] * su[1])).exp()
        }

        fn sum(a: Term, b: Term) -> Term {
            Term {
                u: [a.u[0] + b.u[0], a.u[1] + b.u[1]],
                c: a.c + b.c,
            }
        }

        /// Log density ratio at shift h as a linear form in (θ, t).
        fn log_ratio(&self, joint: bool, h: f64) -> Term {
            let (a_prior, c_prior) = if joint {
                (-h / self.vp, -h * h / (2.0 * self.vp))
            } else {
                (0.0, 0.0)
            };
            Term {
                u: [a_prior - h / self.sv, h / self.sv],
                c: c_prior - h * h / (2.0 * self.sv),
            }
        }

        fn scaled(t: Term, e: f64) -> Term {
            Term {
                u: [t.u[0] * e, t.u[1] * e],
                c: t.c * e,
            }
        }

        fn terms(&self, joint: bool, h: f64, s: f64) -> (Term, Term) {
            (
                Self::scaled(self.log_ratio(joint, h), s),
                Self::scaled(self.log_ratio(joint, -h), 1.0 - s),
            )
        }

        /// `(E ψ, E ψ², E (θ - g t) ψ, E θψ)`.
        fn moments(&self, joint: bool, h: f64, s: f64) -> [f64; 4] {
            let (a, b) = self.terms(joint, h, s);
            let (ma, mb) = (self.mgf(a), self.mgf(b));
            let m2 = self.mgf(Self::scaled(a, 2.0)) - 2.0 * self.mgf(Self::sum(a, b)) + self.mgf(Self::scaled(b, 2.0));
            let (sa, sb) = (self.cov(a.u), self.cov(b.u));
            let g = self.gain();
            let cross = (sa[0] - g * sa[1]) * ma - (sb[0] - g * sb[1]) * mb;
            let theta = sa[0] * ma - sb[0] * mb;
            [ma - mb, m2, cross, theta]
        }

        pub fn global(&self, joint: bool, h: f64, s: f64) -> f64 {
            let [m1, m2, c, _] = self.moments(joint, h, s);
            c * c / (m2 - m1 * m1)
        }

        pub fn ww(&self, h: f64, s: f64) -> f64 {
            let [_, m2, _, t] = self.moments(true, h, s);
            t * t / m2
        }

        /// Parameter-averaged bound: closed form given θ, then a trapezoid
        /// rule over the prior on ±12 standard deviations.
        pub fn avg_theta(&self, joint: bool, h: f64, s: f64) -> f64 {
            let (a, b) = self.terms(joint, h, s);
            let sv = self.sv;
            let g = self.gain();
            // given θ, a term is exp(α + β n) with n = t - θ
            let per_theta = |theta: f64| {
                let m = |t: Term, k: f64| {
                    let (alpha, beta) = (k * ((t.u[0] + t.u[1]) * theta + t.c), k * t.u[1]);
                    ((alpha + 0.5 * beta * beta * sv).exp(), beta * sv)
                };
                let (ma, da) = m(a, 1.0);
                let (mb, db) = m(b, 1.0);
                let mean = ma - mb;
                let noise = da * ma - db * mb;
                let cross = m(Self::sum(a, b), 1.0).0;
                let second = m(a, 2.0).0 - 2.0 * cross + m(b, 2.0).0;
                let num = (1.0 - g) * theta * mean - g * noise;
                num * num / second
            };
            let sd = self.vp.sqrt();
            let n = 24_000;
            let step = 24.0 * sd / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let theta = -12.0 * sd + i as f64 * step;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let dens = (-0.5 * theta * theta / self.vp).exp() / (2.0 * std::f64::consts::PI * self.vp).sqrt();
                acc += w * dens * per_theta(theta);
            }
            acc * step
        }

        /// Observation-averaged conditional bound: closed form given t, then
        /// a trapezoid rule over the marginal of t.
        pub fn avg_conditional(&self, joint: bool, h: f64, s: f64) -> f64 {
            let (a, b) = self.terms(joint, h, s);
            let g = self.gain();
            let pv = self.risk();
            let per_t = |t: f64| {
                let mu = g * t;
                // given t, a term is exp(α + β θ) with θ ~ N(mu, pv)
                let m = |term: Term, k: f64| {
                    let (alpha, beta) = (k * (term.u[1] * t + term.c), k * term.u[0]);
                    ((alpha + beta * mu + 0.5 * beta * beta * pv).exp(), beta * pv)
                };
                let (ma, da) = m(a, 1.0);
                let (mb, db) = m(b, 1.0);
                let mean = ma - mb;
                let cross = da * ma - db * mb;
                let second = m(a, 2.0).0 - 2.0 * m(Self::sum(a, b), 1.0).0 + m(b, 2.0).0;
                cross * cross / (second - mean * mean)
            };
            let var = self.vp + self.sv;
            let sd = var.sqrt();
            let n = 24_000;
            let step = 24.0 * sd / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let t = -12.0 * sd + i as f64 * step;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let dens = (-0.5 * t * t / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                acc += w * dens * per_t(t);
            }
            acc * step
        }

        /// Parameter-averaged bound for the conditional-ratio test function.
        /// Given θ, psi depends only on the noise n = t - θ.
        pub fn avg_theta_cond(&self, h: f64, s: f64) -> f64 {
            let sv = self.sv;
            let m = |beta: f64, alpha: f64| (alpha + 0.5 * beta * beta * sv).exp();
            let (b1, a1) = (s * h / sv, -s * h * h / (2.0 * sv));
            let (b2, a2) = (-(1.0 - s) * h / sv, -(1.0 - s) * h * h / (2.0 * sv));
            let mean = m(b1, a1) - m(b2, a2);
            let noise = b1 * sv * m(b1, a1) - b2 * sv * m(b2, a2);
            let second = m(2.0 * b1, 2.0 * a1) - 2.0 * m(b1 + b2, a1 + a2) + m(2.0 * b2, 2.0 * a2);
            let g = self.gain();
            // E_θ[((1 - g) θ mean - g noise)²] / second
            ((1.0 - g).powi(2) * self.vp * mean * mean + g * g * noise * noise) / second
        }
    }
}
