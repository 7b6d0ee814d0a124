//! Validation of initial data and target against the potential domain.
//!
//! The simulation refuses to start unless `beta_min_section(phi0)` is finite
//! at every node, the target sits strictly inside the domain of the convex
//! part with positive margin, and the initial nutrient is finite.

use crate::grid::ScalarField;
use crate::potential::{BetaDomain, PotentialSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub node: usize,
    pub value: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.is_valid() {
            return "valid".into();
        }
        let mut s = format!("{} violation(s):", self.violations.len());
        for v in self.violations.iter().take(8) {
            s.push_str(&format!(
                "\n  {} node {} value {}: {}",
                v.field, v.node, v.value, v.reason
            ));
        }
        if self.violations.len() > 8 {
            s.push_str(&format!("\n  ... {} more", self.violations.len() - 8));
        }
            s
    }
}

/// Check `phi0`, `sigma0` and the target `phi_star` against the potential.
///
/// * obstacle: `phi0` in `[-1, 1]`;
/// * logarithmic: `phi0` in `(-1, 1)` with margin at least
///   `pot.domain_margin()` so the minimal section stays evaluable in double
///   precision;
/// * the target must sit strictly inside the domain with positive margin;
/// * `sigma0` must be finite everywhere.
pub fn validate_initial_data(
    phi0: &ScalarField,
    sigma0: &ScalarField,
    phi_star: &ScalarField,
    pot: &PotentialSpec,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let margin = pot.domain_margin();
    let dom = pot.beta_domain();

    for (node, &v) in phi0.values().iter().enumerate() {
        if !v.is_finite() {
            report.violations.push(Violation {
                field: "phi0",
                node,
                value: v,
                reason: "non-finite value".into(),
            });
            continue;
        }
        let ok = match dom {
            BetaDomain::AllReals => true,
            BetaDomain::ClosedUnit => v.abs() <= 1.0,
            BetaDomain::OpenUnit => v.abs() <= 1.0 - margin,
        };
        if !ok {
            report.violations.push(Violation {
                field: "phi0",
                node,
                value: v,
                reason: format!(
                    "beta_min_section undefined: value outside {} (margin {margin:e})",
                    dom.describe()
                ),
            });
        }
    }

    for (node, &v) in phi_star.values().iter().enumerate() {
        if !v.is_finite() {
            report.violations.push(Violation {
                field: "phi_star",
                node,
                value: v,
                reason: "non-finite value".into(),
            });
            continue;
        }
        let ok = match dom {
            BetaDomain::AllReals => true,
            // strict interior with positive margin
            BetaDomain::ClosedUnit | BetaDomain::OpenUnit => v.abs() <= 1.0 - margin,
        };
        if !ok {
            report.violations.push(Violation {
                field: "phi_star",
                node,
                value: v,
                reason: format!(
                    "target must lie strictly inside {} with margin {margin:e}",
                    dom.describe()
                ),
            });
        }
    }

    for (node, &v) in sigma0.values().iter().enumerate() {
        if !v.is_finite() {
            report.violations.push(Violation {
                field: "sigma0",
                node,
                value: v,
                reason: "non-finite value".into(),
            });
        }
    }

    report
}
