//! Certificate machinery for the finite-time reaching result: the constants
//! `M`, `M0`, `M_pi*`, `C_sys`, `A(rho)`, `rho*`, `T*`, the closed-form
//! comparison envelope `w(t)`, reaching-time detection on a recorded series,
//! and envelope verification.

use crate::elliptic::{BoundaryKind, LaplacianOperator};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::potential::PotentialSpec;
use crate::timeseries::TimeSeries;

/// Where a certificate constant came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Estimated,
    UserSupplied,
    EmpiricalFromPilot { rho_pilot: f64 },
}

impl Provenance {
    pub fn describe(&self) -> String {
        match self {
            Provenance::Estimated => "estimated".into(),
            Provenance::UserSupplied => "user-supplied".into(),
            Provenance::EmpiricalFromPilot { rho_pilot } => {
                format!("empirical-from-pilot(rho_pilot={rho_pilot})")
            }
        }
    }
}

/// The data-dependent constants entering the certificate.
#[derive(Debug, Clone)]
pub struct SlidingConstants {
    /// `|mu_Gamma|_inf + |Delta phi_star|_inf + |xi_star|_inf`.
    pub m: f64,
    /// `|phi0 - phi_star|_inf`.
    pub m0: f64,
    /// `sup { |pi(phi_star(x) + r)| : x, |r| <= m0 }`.
    pub m_pi_star: f64,
    /// Minimal section of the subdifferential at the target, nodewise.
    pub xi_star: ScalarField,
}

/// Compute `M`, `M0`, `M_pi*` and `xi_star` from the data.
///
/// `delta_phi_star_sup`, when given, replaces the discrete Laplacian bound
/// `|Delta_h phi_star|_inf` by an analytically known value.
pub fn compute_constants(
    phi0: &ScalarField,
    phi_star: &ScalarField,
    mu_gamma_sup: f64,
    pot: &PotentialSpec,
    delta_phi_star_sup: Option<f64>,
) -> Result<SlidingConstants> {
    let grid = phi_star.grid();

    // xi_star = beta_min_section(phi_star); the domain error of the minimal
    // section rejects targets outside the interior of D(beta)
    let mut xi_star = ScalarField::zeros(grid);
    for i in 0..grid.node_count() {
        xi_star.values_mut()[i] = pot.beta_min_section(phi_star.values()[i])?;
    }

    let lap_sup = match delta_phi_star_sup {
        Some(v) => {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "phistar.laplacian_sup must be a finite nonnegative value, got {v}"
                )));
            }
            v
        }
        None => LaplacianOperator::new(grid, BoundaryKind::NeumannHomogeneous)
            .apply(phi_star)?
            .sup_norm(),
    };

    let m = mu_gamma_sup + lap_sup + xi_star.sup_norm();
    let m0 = phi0.sub(phi_star).sup_norm();

    // pi is affine for every built-in split, so the sup over |r| <= m0 is
    // attained at an endpoint and is evaluated exactly
    let mut m_pi_star: f64 = 0.0;
    for &v in phi_star.values() {
        let a = pot.pi_smooth(v + m0).abs();
        let b = pot.pi_smooth(v - m0).abs();
        m_pi_star = m_pi_star.max(a.max(b));
    }

    Ok(SlidingConstants {
        m,
        m0,
        m_pi_star,
        xi_star,
    })
}

/// The complete certificate ledger for one run.
#[derive(Debug, Clone)]
pub struct SlidingCertificate {
    pub c_sh: f64,
    pub c_sh_source: Provenance,
    /// `C_sys = C_sh * 2 |O|^{2/3} / tau`.
    pub c_sys: f64,
    pub c_hat: f64,
    pub c_hat_source: Provenance,
    pub m: f64,
    pub m0: f64,
    pub m_pi_star: f64,
    pub rho: f64,
    /// `A(rho) = C_sys rho + C_hat + M + M_pi*`.
    pub a_rho: f64,
    /// Present exactly when the smallness condition `C_sys < 1` holds.
    pub rho_star: Option<f64>,
    /// Present exactly when `C_sys < 1` and `rho > rho_star`.
    pub t_star: Option<f64>,
    pub tau: f64,
    pub horizon: f64,
    pub measure: f64,
    /// The smallness condition `C_sys < 1`.
    pub smallness_ok: bool,
}

/// Assemble a certificate. A violated smallness condition does not error;
/// it yields a certificate flagged accordingly, with `rho_star` and `t_star`
/// absent.
#[allow(clippy::too_many_arguments)]
pub fn certificate(
    constants: &SlidingConstants,
    c_sh: f64,
    c_sh_source: Provenance,
    c_hat: f64,
    c_hat_source: Provenance,
    tau: f64,
    horizon: f64,
    measure: f64,
    rho: f64,
) -> Result<SlidingCertificate> {
    if !(tau > 0.0 && horizon > 0.0 && measure > 0.0) {
        return Err(Error::Config(
            "certificate needs tau, horizon and measure positive".into(),
        ));
    }
    if !(c_sh >= 0.0 && c_hat >= 0.0) {
        return Err(Error::Config(
            "certificate needs nonnegative c_sh and c_hat".into(),
        ));
    }
    let c_sys = c_sh * 2.0 * measure.powf(2.0 / 3.0) / tau;
    let a_rho = c_sys * rho + c_hat + constants.m + constants.m_pi_star;
    let smallness_ok = c_sys < 1.0;
    let rho_star = smallness_ok.then(|| {
        (c_hat + constants.m + constants.m_pi_star + tau / horizon * constants.m0) / (1.0 - c_sys)
    });
    let t_star = match rho_star {
        Some(rs) if rho > rs => Some(tau * constants.m0 / (rho - a_rho)),
        _ => None,
    };
    Ok(SlidingCertificate {
        c_sh,
        c_sh_source,
        c_sys,
        c_hat,
        c_hat_source,
        m: constants.m,
        m0: constants.m0,
        m_pi_star: constants.m_pi_star,
        rho,
        a_rho,
        rho_star,
        t_star,
        tau,
        horizon,
        measure,
        smallness_ok,
    })
}

impl SlidingCertificate {
    /// Closed-form comparison envelope
    /// `w(t) = max(0, M0 - ((rho - A_rho)/tau) t)`: `w(0) = M0` and
    /// `w = 0` identically from `T*` on.
    pub fn comparison_w(&self, t: f64) -> Result<f64> {
        let t_star = self.t_star.ok_or_else(|| {
            Error::Certificate(
                "comparison envelope undefined: certificate has no reaching time (need C_sys < 1 and rho > rho_star)"
                    .into(),
            )
        })?;
        if t >= t_star {
            return Ok(0.0);
        }
        Ok((self.m0 - (self.rho - self.a_rho) / self.tau * t).max(0.0))
    }

    /// Flat key/value text block (the on-disk certificate format).
    pub fn to_key_value_block(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("c_sh", format!("{:.17e}", self.c_sh));
        kv("c_sh_source", self.c_sh_source.describe());
        kv("c_sys", format!("{:.17e}", self.c_sys));
        kv("c_hat", format!("{:.17e}", self.c_hat));
        kv("c_hat_source", self.c_hat_source.describe());
        kv("m", format!("{:.17e}", self.m));
        kv("m0", format!("{:.17e}", self.m0));
        kv("m_pi_star", format!("{:.17e}", self.m_pi_star));
        kv("rho", format!("{:.17e}", self.rho));
        kv("a_rho", format!("{:.17e}", self.a_rho));
        kv(
            "rho_star",
            self.rho_star
                .map_or("absent".into(), |v| format!("{v:.17e}")),
        );
        kv(
            "t_star",
            self.t_star.map_or("absent".into(), |v| format!("{v:.17e}")),
        );
        kv("tau", format!("{:.17e}", self.tau));
        kv("horizon", format!("{:.17e}", self.horizon));
        kv("measure", format!("{:.17e}", self.measure));
        kv("smallness_ok", format!("{}", self.smallness_ok));
        s
    }
}

/// First recorded time from which the sup-deviation stays at or below
/// `delta_slide` for the rest of the series; `None` if that never happens.
pub fn detect_reaching(series: &TimeSeries, delta_slide: f64) -> Option<f64> {
    debug_assert!(delta_slide > 0.0);
    let rows = series.rows();
    let mut first: Option<f64> = None;
    for row in rows.iter().rev() {
        if row.sup_dev <= delta_slide {
            first = Some(row.t);
        } else {
            break;
        }
    }
    first
}

#[derive(Debug, Clone)]
pub struct EnvelopeViolation {
    pub step: usize,
    pub t: f64,
    pub sup_dev: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EnvelopeReport {
    pub violations: Vec<EnvelopeViolation>,
    pub checked_rows: usize,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check `sup_dev(t) <= w(t) + tol` at every recorded step.
pub fn verify_envelope(
    series: &TimeSeries,
    cert: &SlidingCertificate,
    tol: f64,
) -> Result<EnvelopeReport> {
    let mut report = EnvelopeReport::default();
    for row in series.rows() {
        let w = cert.comparison_w(row.t)?;
        report.checked_rows += 1;
        if row.sup_dev > w + tol {
            report.violations.push(EnvelopeViolation {
                step: row.step,
                t: row.t,
                sup_dev: row.sup_dev,
                bound: w + tol,
            });
        }
    }
    Ok(report)
}

/// Empirical constant from a pilot run:
/// `C_hat_emp = max(0, max_t ( |mu(t)|_inf - C_sys * rho_pilot ))`.
pub fn estimate_chat(pilot: &TimeSeries, c_sys: f64, rho_pilot: f64) -> f64 {
    pilot
        .rows()
        .iter()
        .map(|r| r.mu_inf - c_sys * rho_pilot)
        .fold(0.0_f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::timeseries::Row;
    use proptest::prelude::*;

    fn series_from_dev(devs: &[f64]) -> TimeSeries {
        let mut s = TimeSeries::new(false);
        for (i, &d) in devs.iter().enumerate() {
            s.push(Row {
                step: i,
                t: i as f64 * 0.1,
                sup_dev: d,
                l2_dev: d,
                mu_inf: 0.0,
                sigma_min: 0.0,
                sigma_max: 0.0,
                energy: 0.0,
                newton_iters: 0,
                w_bound: None,
                max_principle_margin: 1.0,
            });
        }
        s
    }

    #[allow(clippy::too_many_arguments)]
    fn cert_with(
        c_sys_target: f64,
        c_hat: f64,
        m: f64,
        m_pi: f64,
        tau: f64,
        horizon: f64,
        m0: f64,
        rho: f64,
    ) -> SlidingCertificate {
        // measure 1 so c_sh = c_sys * tau / 2
        let consts = SlidingConstants {
            m,
            m0,
            m_pi_star: m_pi,
            xi_star: ScalarField::zeros(&build_grid(1, &[4], &[1.0]).unwrap()),
        };
        certificate(
            &consts,
            c_sys_target * tau / 2.0,
            Provenance::UserSupplied,
            c_hat,
            Provenance::UserSupplied,
            tau,
            horizon,
            1.0,
            rho,
        )
        .unwrap()
    }

    #[test]
    fn compute_constants_vanishing_case() {
        // constant target at -0.9 under the obstacle potential with zero
        // boundary data: all three terms of M vanish
        let g = build_grid(1, &[16], &[1.0]).unwrap();
        let obs = PotentialSpec::obstacle(1.0).unwrap();
        let phi0 = ScalarField::constant(&g, 0.5);
        let phi_star = ScalarField::constant(&g, -0.9);
        let c = compute_constants(&phi0, &phi_star, 0.0, &obs, None).unwrap();
        assert_eq!(c.m, 0.0);
        assert_eq!(c.xi_star.sup_norm(), 0.0);
        assert!((c.m0 - 1.4).abs() < 1e-15);
    }

    #[test]
    fn compute_constants_rejects_boundary_target() {
        let g = build_grid(1, &[16], &[1.0]).unwrap();
        let obs = PotentialSpec::obstacle(1.0).unwrap();
        let phi0 = ScalarField::constant(&g, 0.0);
        let phi_star = ScalarField::constant(&g, -1.5);
        assert!(compute_constants(&phi0, &phi_star, 0.0, &obs, None).is_err());
    }

    #[test]
    fn m_pi_star_attained_at_endpoint() {
        // phi_star = -0.5, m0 = 0.5, pi(r) = -r: sup is 1.0
        let g = build_grid(1, &[16], &[1.0]).unwrap();
        let reg = PotentialSpec::regular();
        let phi0 = ScalarField::constant(&g, 0.0);
        let phi_star = ScalarField::constant(&g, -0.5);
        let c = compute_constants(&phi0, &phi_star, 0.0, &reg, None).unwrap();
        assert!((c.m0 - 0.5).abs() < 1e-15);
        assert!((c.m_pi_star - 1.0).abs() < 1e-15);
    }

    #[test]
    fn certificate_arithmetic_examples() {
        // C_sh = 1, measure 1, tau 4 -> C_sys = 0.5
        let g = build_grid(1, &[4], &[1.0]).unwrap();
        let consts = SlidingConstants {
            m: 0.0,
            m0: 1.0,
            m_pi_star: 0.0,
            xi_star: ScalarField::zeros(&g),
        };
        let c = certificate(
            &consts,
            1.0,
            Provenance::Estimated,
            0.0,
            Provenance::UserSupplied,
            4.0,
            1.0,
            1.0,
            1.0,
        )
        .unwrap();
        assert!((c.c_sys - 0.5).abs() < 1e-15);

        // rho_star = (0 + 1 + 1.5 + 0.5) / 0.5 = 6 and, at rho = 10,
        // A = 6.5 and T* = 1/7
        let c = cert_with(0.5, 0.0, 1.0, 1.5, 1.0, 1.0, 0.5, 10.0);
        assert!((c.rho_star.unwrap() - 6.0).abs() < 1e-12);
        assert!((c.a_rho - 6.5).abs() < 1e-12);
        assert!((c.t_star.unwrap() - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn smallness_violation_is_flagged_not_fatal() {
        let c = cert_with(1.2, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0);
        assert!(!c.smallness_ok);
        assert!(c.rho_star.is_none());
        assert!(c.t_star.is_none());
        assert!(c.comparison_w(0.0).is_err());
    }

    #[test]
    fn comparison_w_closed_form() {
        // M0 = 1, tau = 1, rho = 2, A = 1 -> w(t) = (1 - t)^+, T* = 1
        let c = cert_with(0.25, 0.0, 0.25, 0.25, 1.0, 10.0, 1.0, 2.0);
        assert!((c.a_rho - 1.0).abs() < 1e-15);
        assert!((c.t_star.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c.comparison_w(0.0).unwrap(), 1.0);
        assert!((c.comparison_w(0.25).unwrap() - 0.75).abs() < 1e-15);
        // exactly zero at and beyond the reaching time
        assert_eq!(c.comparison_w(c.t_star.unwrap()).unwrap(), 0.0);
        assert_eq!(c.comparison_w(5.0).unwrap(), 0.0);
    }

    #[test]
    fn w_solves_the_differential_inclusion() {
        let c = cert_with(0.5, 0.3, 1.0, 1.5, 2.0, 4.0, 1.2, 9.0);
        let t_star = c.t_star.unwrap();
        // before T*: tau w' + rho * 1 = A(rho); eta = 1 in sign(w > 0)
        let h = 1e-7;
        for &t in &[0.1 * t_star, 0.5 * t_star, 0.9 * t_star] {
            let wp = (c.comparison_w(t + h).unwrap() - c.comparison_w(t - h).unwrap()) / (2.0 * h);
            let residual = c.tau * wp + c.rho * 1.0 - c.a_rho;
            assert!(residual.abs() < 1e-6, "residual {residual} at t = {t}");
        }
        // after T*: w = 0 and eta = A/rho lies in [0, 1) subset sign(0)
        let eta = c.a_rho / c.rho;
        assert!((0.0..1.0).contains(&eta));
        assert_eq!(c.comparison_w(1.5 * t_star).unwrap(), 0.0);
    }

    #[test]
    fn w_nonincreasing_and_lipschitz() {
        let c = cert_with(0.5, 0.3, 1.0, 1.5, 2.0, 4.0, 1.2, 9.0);
        let lip = (c.rho - c.a_rho) / c.tau;
        let mut prev = c.comparison_w(0.0).unwrap();
        let mut t_prev = 0.0;
        for k in 1..=100 {
            let t = k as f64 * 0.04;
            let w = c.comparison_w(t).unwrap();
            assert!(w <= prev + 1e-15);
            assert!((w - prev).abs() <= lip * (t - t_prev) + 1e-12);
            prev = w;
            t_prev = t;
        }
    }

    #[test]
    fn detect_reaching_cases() {
        // constantly on target
        assert_eq!(
            detect_reaching(&series_from_dev(&[0.0, 0.0, 0.0]), 1e-3),
            Some(0.0)
        );
        // dips below then rises: persistence required
        assert_eq!(
            detect_reaching(&series_from_dev(&[1.0, 1e-4, 1.0, 1.0]), 1e-3),
            None
        );
        // settles from step 2 on
        let t = detect_reaching(&series_from_dev(&[1.0, 0.5, 1e-4, 1e-5]), 1e-3);
        assert!((t.unwrap() - 0.2).abs() < 1e-15);
        // never reaches
        assert_eq!(detect_reaching(&series_from_dev(&[1.0, 0.9]), 1e-3), None);
    }

    #[test]
    fn verify_envelope_cases() {
        let c = cert_with(0.25, 0.0, 0.25, 0.25, 1.0, 10.0, 1.0, 2.0);
        // identically on target passes (0 <= w + tol)
        let ok = verify_envelope(&series_from_dev(&[0.0, 0.0, 0.0]), &c, 0.01).unwrap();
        assert!(ok.passed());
        // deviation above M0 at t = 0 fails (w(0) = M0 = 1)
        let bad = verify_envelope(&series_from_dev(&[1.5, 0.0]), &c, 0.01).unwrap();
        assert!(!bad.passed());
        assert_eq!(bad.violations[0].step, 0);
    }

    #[test]
    fn estimate_chat_floor() {
        let s = series_from_dev(&[0.0, 0.0]);
        assert_eq!(estimate_chat(&s, 0.5, 1.0), 0.0);
        let mut s = series_from_dev(&[0.0, 0.0]);
        s.rows_mut()[1].mu_inf = 2.0;
        assert!((estimate_chat(&s, 0.5, 1.0) - 1.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn above_rho_star_the_gap_inequality_holds(
            c_sys in 0.05..0.95f64,
            c_hat in 0.0..5.0f64,
            m in 0.0..5.0f64,
            m_pi in 0.0..5.0f64,
            tau in 0.1..5.0f64,
            horizon in 0.2..3.0f64,
            m0 in 0.0..2.0f64,
            excess in 1e-6..4.0f64,
        ) {
            let probe = cert_with(c_sys, c_hat, m, m_pi, tau, horizon, m0, 1.0);
            let rho = probe.rho_star.unwrap() * (1.0 + excess) + 1e-9;
            let cert = cert_with(c_sys, c_hat, m, m_pi, tau, horizon, m0, rho);
            // A(rho) + (tau/T) M0 < rho for every rho > rho_star
            prop_assert!(cert.a_rho + tau / horizon * m0 < rho + 1e-12 * rho.abs());
            if m0 > 0.0 {
                let t_star = cert.t_star.unwrap();
                prop_assert!(t_star >= 0.0 && t_star < horizon + 1e-12);
            }
        }

        #[test]
        fn t_star_strictly_decreasing_in_rho(
            c_sys in 0.05..0.95f64,
            extra1 in 0.1..2.0f64,
            extra2 in 0.1..2.0f64,
        ) {
            let probe = cert_with(c_sys, 0.5, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0);
            let rs = probe.rho_star.unwrap();
            let (lo, hi) = (rs * (1.0 + extra1.min(extra2)), rs * (1.0 + extra1.max(extra2)));
            prop_assume!(hi > lo * (1.0 + 1e-9));
            let c_lo = cert_with(c_sys, 0.5, 1.0, 1.0, 2.0, 1.0, 1.0, lo);
            let c_hi = cert_with(c_sys, 0.5, 1.0, 1.0, 2.0, 1.0, 1.0, hi);
            prop_assert!(c_hi.t_star.unwrap() < c_lo.t_star.unwrap());
        }
    }
}
