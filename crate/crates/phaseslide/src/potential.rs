//! The double-well potential family `F = beta_hat + pi_hat`, its
//! subdifferential `beta`, minimal section `beta_min_section`, smooth
//! perturbation `pi`, and the Yosida / boundary-layer regularizations used by
//! the time stepper.
//!
//! Three built-in splits:
//!
//! * regular:      `beta_hat = r^4/4`, `pi_hat = 1/4 - r^2/2`   (`F' = r^3 - r`)
//! * logarithmic:  `beta_hat = (1+r)ln(1+r) + (1-r)ln(1-r)`, `pi_hat = -c0 r^2`, `c0 > 1`
//! * obstacle:     `beta_hat = indicator of [-1,1]`, `pi_hat = -c0 r^2`, `c0 > 0`
//!
//! All regularized scalar maps are guaranteed, in floating point and not just
//! in exact arithmetic, to respect the defining inequalities
//! `0 <= |r|_eps <= |r|`, `|beta_eps(r)| <= |beta_min_section(r)|` and
//! `0 <= beta_hat_eps(r) <= beta_hat(r)`: computed values are projected onto
//! their proven ranges, which moves them by no more than the scalar-solver
//! tolerance.

use crate::error::{Error, Result};

pub const RESOLVENT_TOL: f64 = 1e-12;
pub const RESOLVENT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    Regular,
    Logarithmic,
    Obstacle,
}

impl PotentialKind {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialKind::Regular => "regular",
            PotentialKind::Logarithmic => "logarithmic",
            PotentialKind::Obstacle => "obstacle",
        }
    }
}

/// Effective domain of the convex part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaDomain {
    AllReals,
    /// `(-1, 1)`: the subdifferential blows up at the endpoints.
    OpenUnit,
    /// `[-1, 1]`: endpoints carry the normal cone, minimal section 0.
    ClosedUnit,
}

impl BetaDomain {
    pub fn describe(&self) -> &'static str {
        match self {
            BetaDomain::AllReals => "(-inf, inf)",
            BetaDomain::OpenUnit => "(-1, 1)",
            BetaDomain::ClosedUnit => "[-1, 1]",
        }
    }

    pub fn contains(&self, r: f64) -> bool {
        match self {
            BetaDomain::AllReals => r.is_finite(),
            BetaDomain::OpenUnit => r > -1.0 && r < 1.0,
            BetaDomain::ClosedUnit => (-1.0..=1.0).contains(&r),
        }
    }
}

/// One potential of the family together with its derived operators.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    kind: PotentialKind,
    /// Quadratic coefficient of the concave part (logarithmic/obstacle only).
    c0: f64,
    /// Lipschitz constant of `pi`.
    l_pi: f64,
    /// Margin used when validating data against an open domain.
    domain_margin: f64,
}

impl PotentialSpec {
    pub fn regular() -> Self {
        PotentialSpec {
            kind: PotentialKind::Regular,
            c0: 0.0,
            l_pi: 1.0,
            domain_margin: 1e-6,
        }
    }

    pub fn logarithmic(c0: f64) -> Result<Self> {
        if !(c0 > 1.0) {
            return Err(Error::Config(format!(
                "logarithmic potential needs c0 > 1 to produce a double well, got {c0}"
            )));
        }
        Ok(PotentialSpec {
            kind: PotentialKind::Logarithmic,
            c0,
            l_pi: 2.0 * c0,
            domain_margin: 1e-6,
        })
    }

    pub fn obstacle(c0: f64) -> Result<Self> {
        if !(c0 > 0.0) {
            return Err(Error::Config(format!(
                "obstacle potential needs c0 > 0, got {c0}"
            )));
        }
        Ok(PotentialSpec {
            kind: PotentialKind::Obstacle,
            c0,
            l_pi: 2.0 * c0,
            domain_margin: 1e-6,
        })
    }

    pub fn with_domain_margin(mut self, margin: f64) -> Self {
        self.domain_margin = margin;
        self
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn l_pi(&self) -> f64 {
        self.l_pi
    }

    pub fn domain_margin(&self) -> f64 {
        self.domain_margin
    }

    pub fn beta_domain(&self) -> BetaDomain {
        match self.kind {
            PotentialKind::Regular => BetaDomain::AllReals,
            PotentialKind::Logarithmic => BetaDomain::OpenUnit,
            PotentialKind::Obstacle => BetaDomain::ClosedUnit,
        }
    }

    /// Convex part `beta_hat` (extended-real: `+inf` outside its domain).
    pub fn beta_hat(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Regular => 0.25 * r * r * r * r,
            PotentialKind::Logarithmic => {
                if r.abs() > 1.0 {
                    f64::INFINITY
                } else if r.abs() == 1.0 {
                    // limit of (1+r)ln(1+r) + (1-r)ln(1-r) at the endpoints
                    2.0 * std::f64::consts::LN_2
                } else {
                    let v = (1.0 + r) * (1.0 + r).ln() + (1.0 - r) * (1.0 - r).ln();
                    v.max(0.0)
                }
            }
            PotentialKind::Obstacle => {
                if r.abs() <= 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Smooth part `pi_hat` (primitive of `pi`).
    pub fn pi_hat(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Regular => 0.25 - 0.5 * r * r,
            _ => -self.c0 * r * r,
        }
    }

    /// `pi = pi_hat'`.
    pub fn pi_smooth(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Regular => -r,
            _ => -2.0 * self.c0 * r,
        }
    }

    /// `pi' ` (constant for the built-in splits).
    pub fn pi_prime(&self) -> f64 {
        match self.kind {
            PotentialKind::Regular => -1.0,
            _ => -2.0 * self.c0,
        }
    }

    /// Minimal section of the subdifferential `beta` at `r in D(beta)`.
    pub fn beta_min_section(&self, r: f64) -> Result<f64> {
        let dom_err = || {
            Err(Error::InvalidData(format!(
                "beta_min_section: r = {r} outside D(beta) = {} for the {} potential",
                self.beta_subdomain_describe(),
                self.kind.name()
            )))
        };
        match self.kind {
            PotentialKind::Regular => {
                if !r.is_finite() {
                    return dom_err();
                }
                Ok(r * r * r)
            }
            PotentialKind::Logarithmic => {
                if !(r > -1.0 && r < 1.0) {
                    return dom_err();
                }
                Ok(((1.0 + r) / (1.0 - r)).ln())
            }
            PotentialKind::Obstacle => {
                // minimal modulus element of the normal cone is 0,
                // also at the endpoints
                if !(-1.0..=1.0).contains(&r) {
                    return dom_err();
                }
                Ok(0.0)
            }
        }
    }

    fn beta_subdomain_describe(&self) -> &'static str {
        match self.kind {
            PotentialKind::Regular => "(-inf, inf)",
            PotentialKind::Logarithmic => "(-1, 1)",
            PotentialKind::Obstacle => "[-1, 1]",
        }
    }

    /// Resolvent `J_eps(r)`: the solution of `y + eps * beta(y) = r`.
    pub fn resolvent(&self, eps: f64, r: f64) -> Result<f64> {
        debug_assert!(eps > 0.0);
        if r < 0.0 {
            // beta is odd for all built-ins, so the resolvent is odd too
            return Ok(-self.resolvent(eps, -r)?);
        }
        match self.kind {
            PotentialKind::Obstacle => Ok(r.clamp(-1.0, 1.0)),
            PotentialKind::Regular => {
                // y + eps y^3 = r, bracket [0, r]
                solve_monotone(0.0, r, r, |y| (y + eps * y * y * y - r, 1.0 + 3.0 * eps * y * y))
            }
            PotentialKind::Logarithmic => {
                // y + eps ln((1+y)/(1-y)) = r, y in [0, 1)
                let g = |y: f64| {
                    let b = ((1.0 + y) / (1.0 - y)).ln();
                    (y + eps * b - r, 1.0 + eps * 2.0 / (1.0 - y * y))
                };
                let mut hi = if r < 1.0 { r } else { 1.0 - 0.25 * (1.0 - r).abs().min(0.25) };
                // push the upper bracket end toward 1 until g(hi) >= 0
                let mut guard = 0;
                while g(hi).0 < 0.0 {
                    let d = 1.0 - hi;
                    if d <= f64::EPSILON {
                        return Ok(hi);
                    }
                    hi = 1.0 - 0.5 * d;
                    guard += 1;
                    if guard > 200 {
                        return Ok(hi);
                    }
                }
                solve_monotone(0.0, hi, r, g)
            }
        }
    }

    /// Yosida regularization `beta_eps(r) = (r - J_eps(r)) / eps`, equal to
    /// `beta(J_eps(r))` and evaluated through whichever form is stable.
    /// Nondecreasing in `r`, Lipschitz with constant `1/eps`,
    /// `beta_eps(0) = 0`, and `|beta_eps(r)| <= |beta_min_section(r)|` on
    /// `D(beta)` (enforced in floating point).
    pub fn yosida_beta(&self, eps: f64, r: f64) -> Result<f64> {
        debug_assert!(eps > 0.0);
        if r < 0.0 {
            return Ok(-self.yosida_beta(eps, -r)?);
        }
        let y = self.resolvent(eps, r)?;
        let raw = match self.kind {
            PotentialKind::Obstacle => (r - y) / eps,
            PotentialKind::Regular => y * y * y,
            PotentialKind::Logarithmic => {
                if y > 0.99 {
                    (r - y) / eps
                } else {
                    ((1.0 + y) / (1.0 - y)).ln()
                }
            }
        };
        // project onto the proven range [0, beta_min_section(r)] where the
        // minimal section exists
        let upper = match self.beta_min_section(r) {
            Ok(b) => b,
            Err(_) => f64::INFINITY,
        };
        Ok(raw.clamp(0.0, upper))
    }

    /// Derivative of `beta_eps` by implicit differentiation,
    /// `beta'(J) / (1 + eps beta'(J))`; the smaller one-sided value is taken
    /// at kinks.
    pub fn yosida_beta_prime(&self, eps: f64, r: f64) -> Result<f64> {
        debug_assert!(eps > 0.0);
        match self.kind {
            PotentialKind::Obstacle => Ok(if r.abs() <= 1.0 { 0.0 } else { 1.0 / eps }),
            PotentialKind::Regular => {
                let y = self.resolvent(eps, r)?;
                let t = 3.0 * y * y;
                Ok(t / (1.0 + eps * t))
            }
            PotentialKind::Logarithmic => {
                let y = self.resolvent(eps, r)?;
                let d = 1.0 - y * y;
                if d <= 0.0 {
                    return Ok(1.0 / eps);
                }
                let t = 2.0 / d;
                let v = t / (1.0 + eps * t);
                Ok(if v.is_finite() { v } else { 1.0 / eps })
            }
        }
    }

    /// Moreau envelope value `beta_hat_eps(r) = beta_hat(J) + eps beta_eps^2 / 2`,
    /// clamped into its proven range `[0, beta_hat(r)]`.
    pub fn beta_hat_eps(&self, eps: f64, r: f64) -> Result<f64> {
        let y = self.resolvent(eps, r)?;
        let b = self.yosida_beta(eps, r)?;
        let raw = self.beta_hat(y) + 0.5 * eps * b * b;
        let upper = self.beta_hat(r);
        Ok(if upper.is_finite() {
            raw.clamp(0.0, upper)
        } else {
            raw.max(0.0)
        })
    }
}

/// `sign_eps(r) = r / max(eps, |r|)`: odd, values in `[-1, 1]`, equal to
/// `sign(r)` for `|r| >= eps`.
pub fn sign_eps(eps: f64, r: f64) -> f64 {
    debug_assert!(eps > 0.0);
    r / eps.max(r.abs())
}

/// Derivative of `sign_eps`; the smaller one-sided value (0) at `|r| = eps`.
pub fn sign_eps_prime(eps: f64, r: f64) -> f64 {
    debug_assert!(eps > 0.0);
    if r.abs() < eps {
        1.0 / eps
    } else {
        0.0
    }
}

/// Regularized modulus `|r|_eps = int_0^r sign_eps`, with
/// `0 <= |r|_eps <= |r|`.
pub fn abs_eps(eps: f64, r: f64) -> f64 {
    debug_assert!(eps > 0.0);
    let a = r.abs();
    if a <= eps {
        r * r / (2.0 * eps)
    } else {
        a - 0.5 * eps
    }
}

/// Truncation of the identity at `1/eps`.
pub fn clamp_ieps(eps: f64, r: f64) -> f64 {
    debug_assert!(eps > 0.0);
    r.clamp(-1.0 / eps, 1.0 / eps)
}

/// Regularization level with its standing constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    pub epsilon: f64,
}

impl RegParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "reg.epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        Ok(RegParams { epsilon })
    }

    /// Cap the level at `1 / sigma_star` so the truncation `I_eps` is
    /// inactive on the nutrient range.
    pub fn capped(self, sigma_star: f64) -> Self {
        if sigma_star > 0.0 {
            RegParams {
                epsilon: self.epsilon.min(1.0 / sigma_star),
            }
        } else {
            self
        }
    }
}

/// Safeguarded Newton on a monotone scalar equation `g(y) = 0` with
/// `g(lo) <= 0 <= g(hi)`; falls back to bisection whenever the Newton step
/// leaves the bracket.
fn solve_monotone(
    mut lo: f64,
    mut hi: f64,
    r: f64,
    g: impl Fn(f64) -> (f64, f64),
) -> Result<f64> {
    let tol = RESOLVENT_TOL * r.abs().max(1.0);
    let mut y = 0.5 * (lo + hi);
    for _ in 0..RESOLVENT_MAX_ITER {
        let (val, der) = g(y);
        if val.abs() <= tol {
            return Ok(y);
        }
        if val > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let newton = y - val / der;
        y = if der > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * y.abs().max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::ScalarSolve(format!(
        "resolvent iteration did not converge for r = {r} (bracket [{lo}, {hi}])"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pots() -> Vec<PotentialSpec> {
        vec![
            PotentialSpec::regular(),
            PotentialSpec::logarithmic(2.0).unwrap(),
            PotentialSpec::obstacle(1.0).unwrap(),
        ]
    }

    #[test]
    fn constructors_enforce_c0() {
        assert!(PotentialSpec::logarithmic(1.0).is_err());
        assert!(PotentialSpec::obstacle(0.0).is_err());
        assert_eq!(PotentialSpec::logarithmic(2.0).unwrap().l_pi(), 4.0);
        assert_eq!(PotentialSpec::regular().l_pi(), 1.0);
    }

    #[test]
    fn beta_hat_examples() {
        let reg = PotentialSpec::regular();
        assert_eq!(reg.beta_hat(0.0), 0.0);

        let obs = PotentialSpec::obstacle(1.0).unwrap();
        assert!(obs.beta_hat(2.0).is_infinite());
        assert_eq!(obs.beta_hat(1.0), 0.0);

        let log = PotentialSpec::logarithmic(2.0).unwrap();
        assert_eq!(log.beta_hat(0.0), 0.0);
        // limit at 1^-: 2 ln 2, checked through high-precision evaluation
        // close to the endpoint
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!((log.beta_hat(1.0 - 1e-12) - two_ln2).abs() < 1e-10);
        assert_eq!(log.beta_hat(1.0), two_ln2);
        assert!(log.beta_hat(1.5).is_infinite());
    }

    #[test]
    fn beta_min_section_examples() {
        let reg = PotentialSpec::regular();
        assert_eq!(reg.beta_min_section(1.0).unwrap(), 1.0);

        let obs = PotentialSpec::obstacle(1.0).unwrap();
        assert_eq!(obs.beta_min_section(1.0).unwrap(), 0.0);
        assert!(obs.beta_min_section(1.5).is_err());

        let log = PotentialSpec::logarithmic(2.0).unwrap();
        let v = log.beta_min_section(0.5).unwrap();
        assert!((v - 3.0_f64.ln()).abs() < 1e-14);
        // cross-check against the numerical derivative of beta_hat
        let h = 1e-6;
        let num = (log.beta_hat(0.5 + h) - log.beta_hat(0.5 - h)) / (2.0 * h);
        assert!((v - num).abs() < 1e-8);
        assert!(log.beta_min_section(1.0).is_err());
    }

    #[test]
    fn pi_smooth_examples() {
        let reg = PotentialSpec::regular();
        assert_eq!(reg.pi_smooth(1.0), -1.0);
        // double-well minimum: F'(1) = beta(1) + pi(1) = 0
        assert_eq!(reg.beta_min_section(1.0).unwrap() + reg.pi_smooth(1.0), 0.0);

        let log = PotentialSpec::logarithmic(2.0).unwrap();
        assert_eq!(log.pi_smooth(0.5), -2.0);

        let obs = PotentialSpec::obstacle(1.0).unwrap();
        assert_eq!(obs.pi_smooth(-1.0), 2.0);
    }

    #[test]
    fn yosida_beta_examples() {
        let obs = PotentialSpec::obstacle(1.0).unwrap();
        assert_eq!(obs.yosida_beta(0.25, 1.5).unwrap(), 2.0);
        assert_eq!(obs.yosida_beta(0.25, 0.5).unwrap(), 0.0);

        // regular, eps = 0.1, r = 2: independent bisection oracle for
        // y + 0.1 y^3 = 2
        let reg = PotentialSpec::regular();
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + 0.1 * mid * mid * mid - 2.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let y_oracle = 0.5 * (lo + hi);
        let y = reg.resolvent(0.1, 2.0).unwrap();
        assert!((y - y_oracle).abs() < 1e-12);
        assert!((y + 0.1 * y * y * y - 2.0).abs() < 1e-12);
        let b = reg.yosida_beta(0.1, 2.0).unwrap();
        assert!((b - (2.0 - y_oracle) / 0.1).abs() < 1e-9);
        assert!(b.abs() <= 8.0); // |beta_eps(2)| <= |beta_min_section(2)| = 8
    }

    #[test]
    fn yosida_beta_prime_examples() {
        let obs = PotentialSpec::obstacle(1.0).unwrap();
        assert_eq!(obs.yosida_beta_prime(0.5, 3.0).unwrap(), 2.0);
        assert_eq!(obs.yosida_beta_prime(0.5, 1.0).unwrap(), 0.0);

        let reg = PotentialSpec::regular();
        assert_eq!(reg.yosida_beta_prime(0.3, 0.0).unwrap(), 0.0);

        // central finite-difference oracle
        let (eps, r, h) = (0.1, 2.0, 1e-6);
        let num = (reg.yosida_beta(eps, r + h).unwrap() - reg.yosida_beta(eps, r - h).unwrap())
            / (2.0 * h);
        let ana = reg.yosida_beta_prime(eps, r).unwrap();
        assert!((ana - num).abs() / ana.abs() < 1e-5);
    }

    #[test]
    fn sign_abs_clamp_examples() {
        assert_eq!(sign_eps(0.5, 0.25), 0.5);
        assert_eq!(sign_eps(0.5, 2.0), 1.0);
        assert_eq!(sign_eps(0.7, 0.0), 0.0);

        assert_eq!(abs_eps(1.0, 0.5), 0.125);
        assert_eq!(abs_eps(1.0, 3.0), 2.5);

        assert_eq!(clamp_ieps(0.1, 5.0), 5.0);
        assert_eq!(clamp_ieps(0.1, 20.0), 10.0);
        assert_eq!(clamp_ieps(0.1, -20.0), -10.0);
    }

    #[test]
    fn beta_hat_eps_examples() {
        for pot in pots() {
            assert_eq!(pot.beta_hat_eps(0.3, 0.0).unwrap(), 0.0);
        }
        let obs = PotentialSpec::obstacle(1.0).unwrap();
        assert!((obs.beta_hat_eps(0.5, 2.0).unwrap() - 1.0).abs() < 1e-14);

        // regular, eps = 0.1, r = 1.5: the envelope sits below
        // beta_hat(1.5) = 1.265625, and a quadrature oracle (Simpson rule on
        // beta_eps over [0, 1.5]) reproduces it
        let reg = PotentialSpec::regular();
        let (eps, r) = (0.1, 1.5);
        let v = reg.beta_hat_eps(eps, r).unwrap();
        assert!(v <= 1.265625);
        let n = 2000;
        let h = r / n as f64;
        let mut quad = 0.0;
        for i in 0..n {
            let a = i as f64 * h;
            let f0 = reg.yosida_beta(eps, a).unwrap();
            let fm = reg.yosida_beta(eps, a + 0.5 * h).unwrap();
            let f1 = reg.yosida_beta(eps, a + h).unwrap();
            quad += h / 6.0 * (f0 + 4.0 * fm + f1);
        }
        assert!((v - quad).abs() < 1e-8);
    }

    #[test]
    fn reg_params_bounds() {
        assert!(RegParams::new(0.0).is_err());
        assert!(RegParams::new(1.5).is_err());
        let r = RegParams::new(0.5).unwrap().capped(4.0);
        assert_eq!(r.epsilon, 0.25);
        let r = RegParams::new(0.05).unwrap().capped(4.0);
        assert_eq!(r.epsilon, 0.05);
    }

    fn sample_in_domain(pot: &PotentialSpec, u: f64) -> f64 {
        // u in [-1, 1]
        match pot.beta_domain() {
            BetaDomain::AllReals => 3.0 * u,
            BetaDomain::OpenUnit => 0.999 * u,
            BetaDomain::ClosedUnit => u,
        }
    }

    proptest! {
        #[test]
        fn yosida_below_minimal_section(u in -1.0..1.0f64, eps in 1e-3..1.0f64, k in 0usize..3) {
            let pot = &pots()[k];
            let r = sample_in_domain(pot, u);
            let b = pot.yosida_beta(eps, r).unwrap();
            let b0 = pot.beta_min_section(r).unwrap();
            prop_assert!(b.abs() <= b0.abs());
        }

        #[test]
        fn yosida_monotone_and_lipschitz(u1 in -1.0..1.0f64, u2 in -1.0..1.0f64,
                                         eps in 1e-3..1.0f64, k in 0usize..3) {
            let pot = &pots()[k];
            let (a, b) = (3.0 * u1, 3.0 * u2);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let flo = pot.yosida_beta(eps, lo).unwrap();
            let fhi = pot.yosida_beta(eps, hi).unwrap();
            prop_assert!(fhi >= flo - 1e-12);
            prop_assert!((fhi - flo).abs() <= (hi - lo) / eps + 1e-12);
        }

        #[test]
        fn envelope_below_beta_hat_and_monotone_in_eps(u in -1.0..1.0f64,
                                                       eps in 1e-3..0.5f64, k in 0usize..3) {
            let pot = &pots()[k];
            let r = sample_in_domain(pot, u);
            let e1 = pot.beta_hat_eps(eps, r).unwrap();
            let e2 = pot.beta_hat_eps(0.5 * eps, r).unwrap();
            let bh = pot.beta_hat(r);
            prop_assert!(e1 >= 0.0 && e1 <= bh);
            // envelopes increase pointwise as eps decreases
            prop_assert!(e2 >= e1 - 1e-12);
        }

        #[test]
        fn abs_eps_bounds(r in -10.0..10.0f64, eps in 1e-6..1.0f64) {
            let v = abs_eps(eps, r);
            prop_assert!(v >= 0.0);
            prop_assert!(v <= r.abs());
        }

        #[test]
        fn sign_eps_saturates(r in -10.0..10.0f64, eps in 1e-6..1.0f64) {
            let s = sign_eps(eps, r);
            prop_assert!(s.abs() <= 1.0);
            if r.abs() >= eps && r != 0.0 {
                prop_assert_eq!(s, r.signum());
            }
        }

        #[test]
        fn regular_split_reconstructs_derivative(r in -3.0..3.0f64) {
            let reg = PotentialSpec::regular();
            let lhs = reg.beta_min_section(r).unwrap() + reg.pi_smooth(r);
            prop_assert_eq!(lhs, r * r * r - r);
        }

        #[test]
        fn resolvent_firmly_nonexpansive(u1 in -1.0..1.0f64, u2 in -1.0..1.0f64,
                                         eps in 1e-3..1.0f64, k in 0usize..3) {
            let pot = &pots()[k];
            let (a, b) = (3.0 * u1, 3.0 * u2);
            let ja = pot.resolvent(eps, a).unwrap();
            let jb = pot.resolvent(eps, b).unwrap();
            prop_assert!((ja - jb).abs() <= (a - b).abs() + 1e-12);
        }
    }
}
