//! Implicit time integration of the regularized state system.
//!
//! One step advances `(phi, sigma, mu)` by sequential splitting:
//!
//! 1. refresh the harmonic extension of the boundary data at the new time,
//! 2. implicit Euler for the nutrient with the proliferation factor lagged
//!    (`step_sigma`), an M-matrix solve that inherits the discrete maximum
//!    principle,
//! 3. semismooth Newton for the phase through the reduced equation in which
//!    the chemical potential has been eliminated (`step_phi`),
//! 4. recovery of the chemical potential from the mass balance
//!    (`recover_mu`); reading it off the gradient relation instead must agree
//!    to solver tolerance (`mu_gradient_route`), which is checked by tests.
//!
//! Everything is deterministic: identical inputs give bit-identical series.

use std::sync::Arc;

use crate::elliptic::{
    harmonic_extension, solve_dirichlet, staggered_gradient_energy, BoundaryData, BoundaryKind,
    LaplacianOperator, LINEAR_TOL,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, TimeConfig};
use crate::potential::{abs_eps, sign_eps, sign_eps_prime, PotentialSpec, RegParams};
use crate::sliding::SlidingCertificate;
use crate::timeseries::{Row, TimeSeries};
use crate::validate::validate_initial_data;

pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOL_FACTOR: f64 = 1e-10;
const LINE_SEARCH_MAX_HALVINGS: usize = 30;

/// Nutrient source term `g`: a constant or a tabulated nodal field, fixed in
/// time.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceTerm {
    Constant(f64),
    Field(Vec<f64>),
}

impl SourceTerm {
    pub fn value_at(&self, node: usize) -> f64 {
        match self {
            SourceTerm::Constant(c) => *c,
            SourceTerm::Field(v) => v[node],
        }
    }

    pub fn sup_shifted(&self, sigma_s: f64, inv_gamma4: f64) -> f64 {
        match self {
            SourceTerm::Constant(c) => (sigma_s + inv_gamma4 * c).abs(),
            SourceTerm::Field(v) => v
                .iter()
                .fold(0.0_f64, |m, &g| m.max((sigma_s + inv_gamma4 * g).abs())),
        }
    }
}

/// Rate constants and the proliferation function of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Proliferation rate (>= 0).
    pub gamma1: f64,
    /// Apoptosis rate (>= 0).
    pub gamma2: f64,
    /// Nutrient consumption rate (>= 0).
    pub gamma3: f64,
    /// Nutrient supply rate (> 0).
    pub gamma4: f64,
    /// Viscosity coefficient (> 0).
    pub tau: f64,
    /// Nutrient level of the pre-existing vasculature.
    pub sigma_s: f64,
    /// Cap of the proliferation function (> 0).
    pub p_max: f64,
    /// Source term in the nutrient equation.
    pub source: SourceTerm,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("model.gamma1", self.gamma1),
            ("model.gamma2", self.gamma2),
            ("model.gamma3", self.gamma3),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.gamma4 > 0.0) || !self.gamma4.is_finite() {
            return Err(Error::Config(format!(
                "model.gamma4 (supply rate) must be > 0, got {}",
                self.gamma4
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "model.tau (viscosity) must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.p_max > 0.0) || !self.p_max.is_finite() {
            return Err(Error::Config(format!(
                "model.p_max must be > 0, got {}",
                self.p_max
            )));
        }
        if !self.sigma_s.is_finite() {
            return Err(Error::Config("model.sigma_s must be finite".into()));
        }
        Ok(())
    }

    /// Built-in proliferation function: `p_max * clamp((1+r)/2, 0, 1)`.
    /// Bounded by `p_max`, nonnegative, Lipschitz with constant `p_max / 2`.
    pub fn proliferation(&self, r: f64) -> f64 {
        self.p_max * (0.5 * (1.0 + r)).clamp(0.0, 1.0)
    }
}

/// `sigma_star`: the maximum-principle bound
/// `max( sup |sigma_s + g / gamma4|, sup |sigma0| )`.
pub fn sigma_star(params: &ModelParams, sigma0: &ScalarField) -> f64 {
    let supply = params.source.sup_shifted(params.sigma_s, 1.0 / params.gamma4);
    supply.max(sigma0.sup_norm())
}

/// Fields carried between steps plus the per-step recomputed selections.
#[derive(Debug, Clone)]
pub struct SimulationState {
    pub t: f64,
    pub phi: ScalarField,
    pub phi_prev: ScalarField,
    pub sigma: ScalarField,
    pub mu: ScalarField,
    pub mu_h: ScalarField,
    /// `beta_eps(phi)`, recomputed nodewise each step.
    pub xi: ScalarField,
    /// `sign_eps(phi - phi_star)`, recomputed nodewise each step.
    pub zeta: ScalarField,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub phi: ScalarField,
    pub sigma: ScalarField,
    pub mu: ScalarField,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Retain the phi values of every step (used by refinement studies).
    pub record_phi: bool,
    /// Certificate supplying the comparison envelope column.
    pub certificate: Option<SlidingCertificate>,
    /// Emit snapshots every `stride` steps (and at the final step).
    pub snapshot_stride: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: TimeSeries,
    pub final_state: SimulationState,
    pub phi_history: Option<Vec<Vec<f64>>>,
    pub snapshots: Vec<Snapshot>,
    pub max_newton_iters: usize,
}

/// A run that aborted mid-way; the partial series is preserved so the
/// harness can flush it to disk.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: TimeSeries,
}

/// Immutable problem data for one simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    grid: Arc<Grid>,
    pot: PotentialSpec,
    params: ModelParams,
    /// Regularization level after the `1/sigma_star` cap.
    eps: f64,
    rho: f64,
    phi_star: ScalarField,
    phi0: ScalarField,
    sigma0: ScalarField,
    mu_gamma: BoundaryData,
    sigma_star: f64,
    neumann: LaplacianOperator,
}

impl Simulation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &Arc<Grid>,
        pot: PotentialSpec,
        params: ModelParams,
        reg: RegParams,
        rho: f64,
        phi0: ScalarField,
        phi_star: ScalarField,
        sigma0: ScalarField,
        mu_gamma: BoundaryData,
    ) -> Result<Self> {
        params.validate()?;
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::Config(format!(
                "control.rho must be >= 0, got {rho}"
            )));
        }
        for (name, f) in [("phi0", &phi0), ("phi_star", &phi_star), ("sigma0", &sigma0)] {
            if !grid.same_mesh(f.grid()) {
                return Err(Error::GridMismatch(format!(
                    "{name} lives on a different grid"
                )));
            }
        }
        if let SourceTerm::Field(v) = &params.source {
            if v.len() != grid.node_count() {
                return Err(Error::Config(format!(
                    "model.g field has {} values, grid has {} nodes",
                    v.len(),
                    grid.node_count()
                )));
            }
        }
        mu_gamma.validate(grid)?;
        let report = validate_initial_data(&phi0, &sigma0, &phi_star, &pot);
        if !report.is_valid() {
            return Err(Error::InvalidData(report.summary()));
        }
        let s_star = sigma_star(&params, &sigma0);
        let reg = reg.capped(s_star);
        Ok(Simulation {
            neumann: LaplacianOperator::new(grid, BoundaryKind::NeumannHomogeneous),
            grid: Arc::clone(grid),
            pot,
            params,
            eps: reg.epsilon,
            rho,
            phi_star,
            phi0,
            sigma0,
            mu_gamma,
            sigma_star: s_star,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.pot
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn phi_star(&self) -> &ScalarField {
        &self.phi_star
    }

    pub fn phi0(&self) -> &ScalarField {
        &self.phi0
    }

    pub fn sigma0(&self) -> &ScalarField {
        &self.sigma0
    }

    pub fn mu_gamma(&self) -> &BoundaryData {
        &self.mu_gamma
    }

    pub fn sigma_star_bound(&self) -> f64 {
        self.sigma_star
    }

    /// Replace the control gain (used by sweeps and pilot runs).
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::Config(format!(
                "control.rho must be >= 0, got {rho}"
            )));
        }
        let mut s = self.clone();
        s.rho = rho;
        Ok(s)
    }

    /// Replace the regularization level (used by refinement studies).
    pub fn with_epsilon(&self, eps: f64) -> Result<Self> {
        let mut s = self.clone();
        s.eps = RegParams::new(eps)?.capped(s.sigma_star).epsilon;
        Ok(s)
    }

    pub fn harmonic_extension_at(&self, t: f64) -> Result<ScalarField> {
        let bv = self.mu_gamma.values_at(t, &self.grid);
        harmonic_extension(&self.grid, &bv)
    }

    fn proliferation_field(&self, phi: &ScalarField) -> Vec<f64> {
        phi.values()
            .iter()
            .map(|&r| self.params.proliferation(r))
            .collect()
    }

    /// Implicit Euler step of the nutrient equation with the phase lagged:
    /// `(1/dt + gamma4 + gamma3 p(phi_n)) sigma - Delta sigma
    ///  = sigma_n/dt + gamma4 sigma_s + g`, homogeneous Neumann boundary.
    /// The system matrix is an M-matrix, so the discrete maximum principle
    /// `|sigma| <= sigma_star` is inherited exactly.
    pub fn step_sigma(
        &self,
        sigma_n: &ScalarField,
        phi_n: &ScalarField,
        dt: f64,
    ) -> Result<ScalarField> {
        debug_assert!(dt > 0.0);
        let n = self.grid.node_count();
        let p = self.proliferation_field(phi_n);
        let coef: Vec<f64> = (0..n)
            .map(|i| 1.0 / dt + self.params.gamma4 + self.params.gamma3 * p[i])
            .collect();
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                sigma_n.values()[i] / dt
                    + self.params.gamma4 * self.params.sigma_s
                    + self.params.source.value_at(i)
            })
            .collect();

        if self.grid.dim() == 1 {
            let h2 = self.grid.spacing()[0] * self.grid.spacing()[0];
            let nx = self.grid.nodes_along(0);
            let mut lower = vec![-1.0 / h2; nx];
            let mut upper = vec![-1.0 / h2; nx];
            let diag: Vec<f64> = (0..nx).map(|i| coef[i] + 2.0 / h2).collect();
            upper[0] = -2.0 / h2;
            lower[nx - 1] = -2.0 / h2;
            let sol = crate::solver::solve_tridiagonal(&lower, &diag, &upper, &rhs);
            return ScalarField::from_values(&self.grid, sol);
        }

        let stencil_diag = 2.0 / (self.grid.spacing()[0] * self.grid.spacing()[0])
            + 2.0 / (self.grid.spacing()[1] * self.grid.spacing()[1]);
        let mut lap = vec![0.0; n];
        let neumann = &self.neumann;
        let mut apply = |v: &[f64], out: &mut [f64]| {
            neumann.apply_into(v, &mut lap);
            for i in 0..n {
                out[i] = coef[i] * v[i] + lap[i];
            }
        };
        let inv_diag: Vec<f64> = coef.iter().map(|c| 1.0 / (c + stencil_diag)).collect();
        let precond = |r: &[f64], z: &mut [f64]| {
            for i in 0..r.len() {
                z[i] = inv_diag[i] * r[i];
            }
        };
        let grid = Arc::clone(&self.grid);
        let dot = move |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for i in 0..a.len() {
                s += grid.quad_weight(i) * a[i] * b[i];
            }
            s
        };
        let sol = crate::solver::pcg(&mut apply, &precond, &dot, &rhs, LINEAR_TOL, 10 * n)?;
        ScalarField::from_values(&self.grid, sol.x)
    }

    /// Residual of the reduced phase equation at a candidate field, with the
    /// nutrient already advanced and the proliferation factor lagged:
    ///
    /// `D(dphi) + tau dphi - Delta phi_c + beta_eps(phi_c) + pi(phi_c)
    ///  + rho sign_eps(phi_c - phi_star) - mu_H - source_d`
    ///
    /// where `dphi = (phi_c - phi_n)/dt`, `D` is the Dirichlet solver and
    /// `source_d` is the precomputed `D((gamma1 sigma_next - gamma2) p(phi_n))`.
    pub fn residual_phi(
        &self,
        phi_c: &ScalarField,
        phi_n: &ScalarField,
        source_d: &ScalarField,
        mu_h: &ScalarField,
        dt: f64,
    ) -> Result<ScalarField> {
        let n = self.grid.node_count();
        let mut dphi = phi_c.clone();
        dphi.axpy(-1.0, phi_n);
        dphi.scale(1.0 / dt);
        let d_dphi = solve_dirichlet(&self.grid, &dphi)?;
        let lap = self.neumann.apply(phi_c)?;
        let mut out = ScalarField::zeros(&self.grid);
        let tau = self.params.tau;
        for i in 0..n {
            let pc = phi_c.values()[i];
            let xi = self.pot.yosida_beta(self.eps, pc)?;
            let zeta = sign_eps(self.eps, pc - self.phi_star.values()[i]);
            out.values_mut()[i] = d_dphi.values()[i]
                + tau * dphi.values()[i]
                + lap.values()[i]
                + xi
                + self.pot.pi_smooth(pc)
                + self.rho * zeta
                - mu_h.values()[i]
                - source_d.values()[i];
        }
        Ok(out)
    }

    /// Precompute `D((gamma1 sigma_next - gamma2) p(phi_n))`.
    pub fn dirichlet_source(
        &self,
        sigma_next: &ScalarField,
        phi_n: &ScalarField,
    ) -> Result<ScalarField> {
        let p = self.proliferation_field(phi_n);
        let mut rhs = ScalarField::zeros(&self.grid);
        for i in 0..self.grid.node_count() {
            rhs.values_mut()[i] =
                (self.params.gamma1 * sigma_next.values()[i] - self.params.gamma2) * p[i];
        }
        solve_dirichlet(&self.grid, &rhs)
    }

    /// Semismooth Newton solve of `residual_phi = 0`. The Jacobian
    /// `(1/dt) D + (tau/dt) I - Delta + diag(beta_eps' + pi' + rho sign_eps')`
    /// is self-adjoint positive definite in the quadrature inner product and
    /// is applied matrix-free (one Dirichlet solve per application) inside
    /// preconditioned conjugate gradients; steps are damped by a half-step
    /// line search on the residual norm.
    ///
    /// Returns the new phase field and the Newton iteration count.
    pub fn step_phi(
        &self,
        phi_n: &ScalarField,
        source_d: &ScalarField,
        mu_h: &ScalarField,
        dt: f64,
        step_index: usize,
    ) -> Result<(ScalarField, usize)> {
        let n = self.grid.node_count();
        let tol = NEWTON_TOL_FACTOR * (1.0 + phi_n.sup_norm());
        let tau = self.params.tau;
        let stencil_diag: f64 = (0..self.grid.dim())
            .map(|a| 2.0 / (self.grid.spacing()[a] * self.grid.spacing()[a]))
            .sum();

        let mut phi = phi_n.clone();
        let mut residual = self.residual_phi(&phi, phi_n, source_d, mu_h, dt)?;
        let mut res_l2 = residual.l2_norm();

        for iter in 0..NEWTON_MAX_ITER {
            if residual.sup_norm() <= tol {
                return Ok((phi, iter));
            }

            // diagonal part of the Jacobian at the current iterate
            let mut diag = vec![0.0; n];
            for i in 0..n {
                let pc = phi.values()[i];
                diag[i] = tau / dt
                    + self.pot.yosida_beta_prime(self.eps, pc)?
                    + self.pot.pi_prime()
                    + self.rho * sign_eps_prime(self.eps, pc - self.phi_star.values()[i]);
            }

            let grid = Arc::clone(&self.grid);
            let neumann = &self.neumann;
            let mut scratch = vec![0.0; n];
            let mut lap = vec![0.0; n];
            let diag_ref = &diag;
            let mut apply = move |v: &[f64], out: &mut [f64]| {
                crate::elliptic::solve_dirichlet_into(&grid, v, &mut scratch)
                    .expect("dirichlet apply inside Newton");
                neumann.apply_into(v, &mut lap);
                for i in 0..n {
                    out[i] = scratch[i] / dt + lap[i] + diag_ref[i] * v[i];
                }
            };
            let inv_diag: Vec<f64> = diag
                .iter()
                .map(|d| {
                    let v = d + stencil_diag;
                    if v > 0.0 {
                        1.0 / v
                    } else {
                        dt / tau
                    }
                })
                .collect();
            let precond = |r: &[f64], z: &mut [f64]| {
                for i in 0..r.len() {
                    z[i] = inv_diag[i] * r[i];
                }
            };
            let gridw = Arc::clone(&self.grid);
            let dot = move |a: &[f64], b: &[f64]| {
                let mut s = 0.0;
                for i in 0..a.len() {
                    s += gridw.quad_weight(i) * a[i] * b[i];
                }
                s
            };
            let neg_res: Vec<f64> = residual.values().iter().map(|r| -r).collect();
            let delta =
                crate::solver::pcg(&mut apply, &precond, &dot, &neg_res, LINEAR_TOL, 10 * n)?;

            // half-step line search on the residual norm
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=LINE_SEARCH_MAX_HALVINGS {
                let mut trial = phi.clone();
                for i in 0..n {
                    trial.values_mut()[i] += alpha * delta.x[i];
                }
                let trial_res = self.residual_phi(&trial, phi_n, source_d, mu_h, dt)?;
                let trial_l2 = trial_res.l2_norm();
                if trial_l2 < res_l2 || trial_res.sup_norm() <= tol {
                    phi = trial;
                    residual = trial_res;
                    res_l2 = trial_l2;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // take the smallest damped step and let the cap decide
                for i in 0..n {
                    phi.values_mut()[i] += alpha * delta.x[i];
                }
                residual = self.residual_phi(&phi, phi_n, source_d, mu_h, dt)?;
                res_l2 = residual.l2_norm();
            }
        }
        if residual.sup_norm() <= tol {
            return Ok((phi, NEWTON_MAX_ITER));
        }
        Err(Error::Newton {
            step: step_index,
            iterations: NEWTON_MAX_ITER,
            residual: residual.sup_norm(),
        })
    }

    /// Chemical potential from the mass balance:
    /// `mu = D( (gamma1 sigma_next - gamma2) p(phi_n) - (phi_next - phi_n)/dt )`.
    /// Vanishes on the boundary by construction.
    pub fn recover_mu(
        &self,
        phi_next: &ScalarField,
        phi_n: &ScalarField,
        sigma_next: &ScalarField,
        dt: f64,
    ) -> Result<ScalarField> {
        let p = self.proliferation_field(phi_n);
        let mut rhs = ScalarField::zeros(&self.grid);
        for i in 0..self.grid.node_count() {
            rhs.values_mut()[i] = (self.params.gamma1 * sigma_next.values()[i]
                - self.params.gamma2)
                * p[i]
                - (phi_next.values()[i] - phi_n.values()[i]) / dt;
        }
        solve_dirichlet(&self.grid, &rhs)
    }

    /// The second route to the chemical potential, read off the gradient
    /// relation: `tau dphi - Delta phi + xi + pi(phi) + rho zeta - mu_H`.
    /// Agrees with [`Self::recover_mu`] up to the Newton tolerance.
    pub fn mu_gradient_route(
        &self,
        phi_next: &ScalarField,
        phi_n: &ScalarField,
        mu_h: &ScalarField,
        dt: f64,
    ) -> Result<ScalarField> {
        let lap = self.neumann.apply(phi_next)?;
        let mut out = ScalarField::zeros(&self.grid);
        for i in 0..self.grid.node_count() {
            let pc = phi_next.values()[i];
            out.values_mut()[i] = self.params.tau * (pc - phi_n.values()[i]) / dt
                + lap.values()[i]
                + self.pot.yosida_beta(self.eps, pc)?
                + self.pot.pi_smooth(pc)
                + self.rho * sign_eps(self.eps, pc - self.phi_star.values()[i])
                - mu_h.values()[i];
        }
        Ok(out)
    }

    /// Time derivative of the phase at `t = 0` through the equation itself
    /// (one extra solve), used for the first diagnostics row:
    /// `(D + tau I) y = D((g1 sigma0 - g2) p(phi0)) + Delta phi0 - beta_eps(phi0)
    ///  - pi(phi0) - rho sign_eps(phi0 - phi_star) + mu_H(0)`.
    pub fn initial_phase_rate(&self, mu_h0: &ScalarField) -> Result<ScalarField> {
        let n = self.grid.node_count();
        let p = self.proliferation_field(&self.phi0);
        let mut rhs = ScalarField::zeros(&self.grid);
        for i in 0..n {
            rhs.values_mut()[i] =
                (self.params.gamma1 * self.sigma0.values()[i] - self.params.gamma2) * p[i];
        }
        let d_rhs = solve_dirichlet(&self.grid, &rhs)?;
        let lap = self.neumann.apply(&self.phi0)?;
        let mut f = ScalarField::zeros(&self.grid);
        for i in 0..n {
            let p0 = self.phi0.values()[i];
            f.values_mut()[i] = d_rhs.values()[i] - lap.values()[i]
                - self.pot.yosida_beta(self.eps, p0)?
                - self.pot.pi_smooth(p0)
                - self.rho * sign_eps(self.eps, p0 - self.phi_star.values()[i])
                + mu_h0.values()[i];
        }
        // solve (D + tau I) y = f by conjugate gradients, matrix-free
        let grid = Arc::clone(&self.grid);
        let tau = self.params.tau;
        let mut scratch = vec![0.0; n];
        let mut apply = move |v: &[f64], out: &mut [f64]| {
            crate::elliptic::solve_dirichlet_into(&grid, v, &mut scratch)
                .expect("dirichlet apply inside initial rate");
            for i in 0..n {
                out[i] = scratch[i] + tau * v[i];
            }
        };
        let precond = |r: &[f64], z: &mut [f64]| {
            for i in 0..r.len() {
                z[i] = r[i] / tau;
            }
        };
        let gridw = Arc::clone(&self.grid);
        let dot = move |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for i in 0..a.len() {
                s += gridw.quad_weight(i) * a[i] * b[i];
            }
            s
        };
        let sol = crate::solver::pcg(&mut apply, &precond, &dot, f.values(), LINEAR_TOL, 10 * n)?;
        ScalarField::from_values(&self.grid, sol.x)
    }

    /// Discrete energy
    /// `int ( |grad phi|^2 / 2 + beta_hat_eps(phi) + pi_hat(phi)
    ///        + rho |phi - phi_star|_eps )`.
    /// Non-increasing along decoupled steps (gamma1 = gamma2 = 0, mu_Gamma = 0).
    pub fn energy(&self, phi: &ScalarField) -> Result<f64> {
        let mut e = 0.5 * staggered_gradient_energy(phi);
        for i in 0..self.grid.node_count() {
            let v = phi.values()[i];
            e += self.grid.quad_weight(i)
                * (self.pot.beta_hat_eps(self.eps, v)?
                    + self.pot.pi_hat(v)
                    + self.rho * abs_eps(self.eps, v - self.phi_star.values()[i]));
        }
        Ok(e)
    }

    fn diagnostics_row(
        &self,
        step: usize,
        t: f64,
        phi: &ScalarField,
        sigma: &ScalarField,
        mu: &ScalarField,
        newton_iters: usize,
        cert: Option<&SlidingCertificate>,
    ) -> Result<Row> {
        let dev = phi.sub(&self.phi_star);
        Ok(Row {
            step,
            t,
            sup_dev: dev.sup_norm(),
            l2_dev: dev.l2_norm(),
            mu_inf: mu.sup_norm(),
            sigma_min: sigma.min_value(),
            sigma_max: sigma.max_value(),
            energy: self.energy(phi)?,
            newton_iters,
            w_bound: cert.and_then(|c| c.comparison_w(t).ok()),
            max_principle_margin: self.sigma_star - sigma.sup_norm(),
        })
    }

    /// Integrate over `time.steps` steps. Aborting mid-run returns the
    /// partial series alongside the error.
    pub fn run(
        &self,
        time: &TimeConfig,
        opts: &RunOptions,
    ) -> std::result::Result<RunOutput, Box<RunFailure>> {
        self.run_impl(time, opts)
            .map_err(|(error, partial)| Box::new(RunFailure { error, partial }))
    }

    fn run_impl(
        &self,
        time: &TimeConfig,
        opts: &RunOptions,
    ) -> std::result::Result<RunOutput, (Error, TimeSeries)> {
        let dt = time.dt;
        if self.params.tau / dt + self.pot.pi_prime() <= 0.0 {
            return Err((
                Error::Config(format!(
                    "time.dt = {dt} too large: need tau/dt > |pi'| = {} for a positive definite phase step",
                    -self.pot.pi_prime()
                )),
                TimeSeries::new(true),
            ));
        }
        let cert = opts.certificate.as_ref();
        let mut series = TimeSeries::new(cert.map_or(false, |c| c.t_star.is_some()));

        macro_rules! try_run {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(e) => return Err((e, series)),
                }
            };
        }

        // row 0 via the time-zero identity
        let mu_h0 = try_run!(self.harmonic_extension_at(0.0));
        let rate0 = try_run!(self.initial_phase_rate(&mu_h0));
        let p0 = self.proliferation_field(&self.phi0);
        let mut rhs0 = ScalarField::zeros(&self.grid);
        for i in 0..self.grid.node_count() {
            rhs0.values_mut()[i] = (self.params.gamma1 * self.sigma0.values()[i]
                - self.params.gamma2)
                * p0[i]
                - rate0.values()[i];
        }
        let mu0 = try_run!(solve_dirichlet(&self.grid, &rhs0));

        let mut state = SimulationState {
            t: 0.0,
            phi: self.phi0.clone(),
            phi_prev: self.phi0.clone(),
            sigma: self.sigma0.clone(),
            mu: mu0,
            mu_h: mu_h0,
            xi: try_run!(self.xi_of(&self.phi0)),
            zeta: self.zeta_of(&self.phi0),
        };
        let row0 =
            try_run!(self.diagnostics_row(0, 0.0, &state.phi, &state.sigma, &state.mu, 0, cert));
        series.push(row0);

        let mut phi_history = if opts.record_phi {
            Some(vec![state.phi.values().to_vec()])
        } else {
            None
        };
        let mut snapshots = Vec::new();
        let snap = |snaps: &mut Vec<Snapshot>, step: usize, st: &SimulationState| {
            snaps.push(Snapshot {
                step,
                t: st.t,
                phi: st.phi.clone(),
                sigma: st.sigma.clone(),
                mu: st.mu.clone(),
            });
        };
        if opts.snapshot_stride.is_some() {
            snap(&mut snapshots, 0, &state);
        }

        let mu_h_constant = self.mu_gamma.is_time_constant();
        let mut max_newton = 0usize;

        for step in 1..=time.steps {
            let t_next = step as f64 * dt;
            if !mu_h_constant {
                state.mu_h = try_run!(self.harmonic_extension_at(t_next));
            }
            let sigma_next = try_run!(self.step_sigma(&state.sigma, &state.phi, dt));
            let source_d = try_run!(self.dirichlet_source(&sigma_next, &state.phi));
            let (phi_next, iters) =
                try_run!(self.step_phi(&state.phi, &source_d, &state.mu_h, dt, step));
            let mu_next = try_run!(self.recover_mu(&phi_next, &state.phi, &sigma_next, dt));

            state.phi_prev = std::mem::replace(&mut state.phi, phi_next);
            state.sigma = sigma_next;
            state.mu = mu_next;
            state.t = t_next;
            state.xi = try_run!(self.xi_of(&state.phi));
            state.zeta = self.zeta_of(&state.phi);
            max_newton = max_newton.max(iters);

            let row = try_run!(self.diagnostics_row(
                step,
                t_next,
                &state.phi,
                &state.sigma,
                &state.mu,
                iters,
                cert
            ));
            series.push(row);
            if let Some(h) = phi_history.as_mut() {
                h.push(state.phi.values().to_vec());
            }
            if let Some(stride) = opts.snapshot_stride {
                if stride > 0 && (step % stride == 0 || step == time.steps) {
                    snap(&mut snapshots, step, &state);
                }
            }
        }

        Ok(RunOutput {
            series,
            final_state: state,
            phi_history,
            snapshots,
            max_newton_iters: max_newton,
        })
    }

    fn xi_of(&self, phi: &ScalarField) -> Result<ScalarField> {
        let mut xi = ScalarField::zeros(&self.grid);
        for i in 0..self.grid.node_count() {
            xi.values_mut()[i] = self.pot.yosida_beta(self.eps, phi.values()[i])?;
        }
        Ok(xi)
    }

    fn zeta_of(&self, phi: &ScalarField) -> ScalarField {
        let mut z = ScalarField::zeros(&self.grid);
        for i in 0..self.grid.node_count() {
            z.values_mut()[i] = sign_eps(self.eps, phi.values()[i] - self.phi_star.values()[i]);
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn quiet_params() -> ModelParams {
        ModelParams {
            gamma1: 0.0,
            gamma2: 0.0,
            gamma3: 0.0,
            gamma4: 1.0,
            tau: 4.0,
            sigma_s: 0.0,
            p_max: 1.0,
            source: SourceTerm::Constant(0.0),
        }
    }

    fn sim_1d(params: ModelParams, rho: f64, phi0: f64, phi_star: f64, sigma0: f64) -> Simulation {
        let g = build_grid(1, &[32], &[1.0]).unwrap();
        Simulation::new(
            &g,
            PotentialSpec::obstacle(1.0).unwrap(),
            params,
            RegParams::new(0.05).unwrap(),
            rho,
            ScalarField::constant(&g, phi0),
            ScalarField::constant(&g, phi_star),
            ScalarField::constant(&g, sigma0),
            BoundaryData::Constant(0.0),
        )
        .unwrap()
    }

    #[test]
    fn params_validation() {
        let mut p = quiet_params();
        p.gamma4 = 0.0;
        assert!(p.validate().is_err());
        let mut p = quiet_params();
        p.gamma1 = -1.0;
        assert!(p.validate().is_err());
        let mut p = quiet_params();
        p.tau = 0.0;
        assert!(p.validate().is_err());
        assert!(quiet_params().validate().is_ok());
    }

    #[test]
    fn proliferation_is_capped_and_lipschitz() {
        let p = ModelParams {
            p_max: 2.0,
            ..quiet_params()
        };
        assert_eq!(p.proliferation(-2.0), 0.0);
        assert_eq!(p.proliferation(3.0), 2.0);
        assert_eq!(p.proliferation(0.0), 1.0);
        for (a, b) in [(-0.5, 0.7), (-3.0, 3.0), (0.9, 1.1)] {
            assert!((p.proliferation(a) - p.proliferation(b)).abs() <= 1.0 * (a - b).abs() + 1e-15);
        }
    }

    #[test]
    fn sigma_star_formula() {
        let g = build_grid(1, &[8], &[1.0]).unwrap();
        let mk = |sigma_s: f64, gamma4: f64, gsrc: f64| ModelParams {
            sigma_s,
            gamma4,
            source: SourceTerm::Constant(gsrc),
            ..quiet_params()
        };
        assert_eq!(
            sigma_star(&mk(1.0, 1.0, 0.0), &ScalarField::constant(&g, 0.5)),
            1.0
        );
        assert_eq!(
            sigma_star(&mk(0.0, 1.0, 0.0), &ScalarField::constant(&g, 2.0)),
            2.0
        );
        assert_eq!(
            sigma_star(&mk(1.0, 2.0, 4.0), &ScalarField::constant(&g, 0.0)),
            3.0
        );
    }

    #[test]
    fn sigma_fixed_point_at_supply_level() {
        // sigma == sigma_s, g = 0, gamma3 = 0: equilibrium of the supply term
        let params = ModelParams {
            sigma_s: 0.7,
            ..quiet_params()
        };
        let sim = sim_1d(params, 0.0, 0.0, 0.0, 0.7);
        let s1 = sim
            .step_sigma(
                &ScalarField::constant(sim.grid(), 0.7),
                &ScalarField::constant(sim.grid(), 0.0),
                1e-2,
            )
            .unwrap();
        assert!(s1.values().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn sigma_pure_heat_preserves_mean() {
        let params = ModelParams {
            gamma4: 1e-300, // supply switched off below solver tolerance
            ..quiet_params()
        };
        let g = build_grid(1, &[32], &[1.0]).unwrap();
        let sim = Simulation::new(
            &g,
            PotentialSpec::obstacle(1.0).unwrap(),
            params,
            RegParams::new(0.05).unwrap(),
            0.0,
            ScalarField::constant(&g, 0.0),
            ScalarField::constant(&g, 0.0),
            ScalarField::from_fn(&g, |p| (7.0 * p[0]).sin() + 0.3),
            BoundaryData::Constant(0.0),
        )
        .unwrap();
        let s0 = sim.sigma0().clone();
        let s1 = sim
            .step_sigma(&s0, &ScalarField::constant(&g, 0.0), 1e-2)
            .unwrap();
        assert!((s1.integral() - s0.integral()).abs() < 1e-10);
    }

    #[test]
    fn sigma_matches_scalar_implicit_euler_and_ode() {
        // spatially constant: sigma' = gamma4 (sigma_s - sigma),
        // sigma(0) = 0, sigma_s = 1 -> sigma(t) = 1 - exp(-t)
        let params = ModelParams {
            sigma_s: 1.0,
            ..quiet_params()
        };
        let sim = sim_1d(params, 0.0, 0.0, 0.0, 0.0);
        let dt = 0.01;
        let mut sigma = ScalarField::constant(sim.grid(), 0.0);
        let phi = ScalarField::constant(sim.grid(), 0.0);
        let mut scalar = 0.0;
        for _ in 0..100 {
            sigma = sim.step_sigma(&sigma, &phi, dt).unwrap();
            scalar = (scalar + dt) / (1.0 + dt);
        }
        // the field stays spatially constant, equal to the scalar recursion
        for &v in sigma.values() {
            assert!((v - scalar).abs() < 1e-11);
        }
        // implicit Euler has O(dt) global error against the exact flow
        let exact = 1.0 - (-1.0_f64).exp();
        assert!((scalar - exact).abs() < dt);
    }

    #[test]
    fn residual_constant_state_reduces_to_pi() {
        let sim = sim_1d(quiet_params(), 0.0, 0.4, 0.0, 0.0);
        let g = sim.grid().clone();
        let phi = ScalarField::constant(&g, 0.4);
        let zero = ScalarField::zeros(&g);
        let r = sim.residual_phi(&phi, &phi, &zero, &zero, 1e-3).unwrap();
        // all spatial and time terms vanish; beta_eps(0.4) = 0 for the obstacle
        for &v in r.values() {
            assert_eq!(v, sim.potential().pi_smooth(0.4));
        }
    }

    #[test]
    fn residual_directional_derivative_matches_jacobian() {
        let g = build_grid(1, &[24], &[1.0]).unwrap();
        let sim = Simulation::new(
            &g,
            PotentialSpec::obstacle(1.0).unwrap(),
            ModelParams {
                gamma1: 1.0,
                gamma2: 0.5,
                gamma3: 1.0,
                gamma4: 1.0,
                tau: 4.0,
                sigma_s: 1.0,
                p_max: 1.0,
                source: SourceTerm::Constant(0.0),
            },
            RegParams::new(0.05).unwrap(),
            7.0,
            ScalarField::from_fn(&g, |p| 0.5 * (3.0 * p[0]).sin()),
            ScalarField::constant(&g, -0.9),
            ScalarField::constant(&g, 0.5),
            BoundaryData::Constant(0.0),
        )
        .unwrap();
        let dt = 0.1;
        let phi_n = sim.phi0().clone();
        let sigma1 = sim.step_sigma(sim.sigma0(), &phi_n, dt).unwrap();
        let source_d = sim.dirichlet_source(&sigma1, &phi_n).unwrap();
        let mu_h = ScalarField::zeros(&g);

        // state away from the kinks of sign_eps' and beta_eps'
        let phi_c = ScalarField::from_fn(&g, |p| 0.3 * (2.0 * p[0]).cos());
        let dir = ScalarField::from_fn(&g, |p| (5.0 * p[0]).sin() + 0.2);
        let h = 1e-5;

        let mut plus = phi_c.clone();
        plus.axpy(h, &dir);
        let mut minus = phi_c.clone();
        minus.axpy(-h, &dir);
        let rp = sim
            .residual_phi(&plus, &phi_n, &source_d, &mu_h, dt)
            .unwrap();
        let rm = sim
            .residual_phi(&minus, &phi_n, &source_d, &mu_h, dt)
            .unwrap();
        let mut fd = rp.sub(&rm);
        fd.scale(1.0 / (2.0 * h));

        // analytic J v
        let n = g.node_count();
        let mut jv = ScalarField::zeros(&g);
        let d_dir = solve_dirichlet(&g, &dir).unwrap();
        let lap_dir = LaplacianOperator::new(&g, BoundaryKind::NeumannHomogeneous)
            .apply(&dir)
            .unwrap();
        for i in 0..n {
            let pc = phi_c.values()[i];
            let dvi = sim.potential().yosida_beta_prime(0.05, pc).unwrap()
                + sim.potential().pi_prime()
                + 7.0 * sign_eps_prime(0.05, pc - (-0.9));
            jv.values_mut()[i] = d_dir.values()[i] / dt
                + 4.0 / dt * dir.values()[i]
                + lap_dir.values()[i]
                + dvi * dir.values()[i];
        }
        let rel = fd.sub(&jv).l2_norm() / jv.l2_norm();
        assert!(rel < 1e-5, "relative FD mismatch {rel}");
    }

    #[test]
    fn step_phi_fixed_point_at_equilibrium() {
        // constant phi = 0 with all couplings off is stationary for every
        // built-in potential
        let sim = sim_1d(quiet_params(), 0.0, 0.0, 0.0, 0.0);
        let g = sim.grid().clone();
        let zero = ScalarField::zeros(&g);
        let (phi1, iters) = sim.step_phi(&zero, &zero, &zero, 1e-3, 1).unwrap();
        assert_eq!(iters, 0);
        assert_eq!(phi1.sub(&zero).sup_norm(), 0.0);
    }

    #[test]
    fn step_phi_large_rho_contracts_toward_target() {
        let params = quiet_params();
        let g = build_grid(1, &[64], &[1.0]).unwrap();
        let sim = Simulation::new(
            &g,
            PotentialSpec::obstacle(1.0).unwrap(),
            params,
            RegParams::new(0.05).unwrap(),
            1e4,
            ScalarField::from_fn(&g, |p| 0.9 * (2.0 * std::f64::consts::PI * p[0]).sin()),
            ScalarField::constant(&g, -0.2),
            ScalarField::constant(&g, 0.0),
            BoundaryData::Constant(0.0),
        )
        .unwrap();
        let dt = 1e-3;
        let phi_n = sim.phi0().clone();
        let zero = ScalarField::zeros(&g);
        let (phi1, _) = sim.step_phi(&phi_n, &zero, &zero, dt, 1).unwrap();
        for i in 0..g.node_count() {
            let before = phi_n.values()[i] - (-0.2);
            let after = phi1.values()[i] - (-0.2);
            if before.abs() > 0.05 {
                assert!(after.abs() < before.abs(), "node {i}: {before} -> {after}");
                assert!(after * before >= 0.0, "sign flip at node {i}");
            }
        }
    }

    #[test]
    fn recover_mu_zero_at_stationary_state_and_boundary() {
        let sim = sim_1d(quiet_params(), 0.0, 0.0, 0.0, 0.0);
        let g = sim.grid().clone();
        let zero = ScalarField::zeros(&g);
        let mu = sim.recover_mu(&zero, &zero, &zero, 1e-3).unwrap();
        assert_eq!(mu.sup_norm(), 0.0);

        // boundary nodes of mu are exactly zero even for nontrivial data
        let phi_n = ScalarField::from_fn(&g, |p| 0.5 * (3.0 * p[0]).sin());
        let phi_next = ScalarField::from_fn(&g, |p| 0.4 * (3.0 * p[0]).sin());
        let sigma = ScalarField::constant(&g, 0.5);
        let mu = sim.recover_mu(&phi_next, &phi_n, &sigma, 1e-3).unwrap();
        for &b in &g.boundary_nodes() {
            assert_eq!(mu.values()[b], 0.0);
        }
    }

    #[test]
    fn zero_step_run_has_single_row() {
        let sim = sim_1d(quiet_params(), 0.0, 0.3, -0.2, 0.0);
        let time = TimeConfig {
            horizon: 1.0,
            dt: 1e-3,
            steps: 0,
        };
        let out = sim.run(&time, &RunOptions::default()).unwrap();
        assert_eq!(out.series.rows().len(), 1);
        assert_eq!(out.series.rows()[0].step, 0);
    }

    #[test]
    fn short_run_two_route_mu_agreement_and_determinism() {
        let g = build_grid(1, &[48], &[1.0]).unwrap();
        let mk = || {
            Simulation::new(
                &g,
                PotentialSpec::obstacle(1.0).unwrap(),
                ModelParams {
                    gamma1: 1.0,
                    gamma2: 0.5,
                    gamma3: 1.0,
                    gamma4: 1.0,
                    tau: 4.0,
                    sigma_s: 1.0,
                    p_max: 1.0,
                    source: SourceTerm::Constant(0.0),
                },
                RegParams::new(0.05).unwrap(),
                10.0,
                ScalarField::from_fn(&g, |p| 0.9 * (-((p[0] - 0.3) / 0.08)).tanh()),
                ScalarField::constant(&g, -0.9),
                ScalarField::constant(&g, 0.5),
                BoundaryData::Constant(0.0),
            )
            .unwrap()
        };
        let sim = mk();
        let time = TimeConfig::new(0.05, 1e-3).unwrap();

        // drive one step by hand and compare the two mu routes
        let dt = time.dt;
        let mu_h = sim.harmonic_extension_at(dt).unwrap();
        let sigma1 = sim.step_sigma(sim.sigma0(), sim.phi0(), dt).unwrap();
        let source_d = sim.dirichlet_source(&sigma1, sim.phi0()).unwrap();
        let (phi1, _) = sim.step_phi(sim.phi0(), &source_d, &mu_h, dt, 1).unwrap();
        let mu_a = sim.recover_mu(&phi1, sim.phi0(), &sigma1, dt).unwrap();
        let mu_b = sim.mu_gradient_route(&phi1, sim.phi0(), &mu_h, dt).unwrap();
        assert!(mu_a.sub(&mu_b).sup_norm() <= 1e-8);

        // determinism: identical runs produce bit-identical series
        let out1 = mk().run(&time, &RunOptions::default()).unwrap();
        let out2 = mk().run(&time, &RunOptions::default()).unwrap();
        assert_eq!(out1.series.to_csv(), out2.series.to_csv());
        assert!(out1.max_newton_iters <= NEWTON_MAX_ITER);
    }

    #[test]
    fn decoupled_energy_is_nonincreasing() {
        let g = build_grid(1, &[48], &[1.0]).unwrap();
        let sim = Simulation::new(
            &g,
            PotentialSpec::obstacle(1.0).unwrap(),
            ModelParams {
                gamma1: 0.0,
                gamma2: 0.0,
                gamma3: 1.0,
                gamma4: 1.0,
                tau: 4.0,
                sigma_s: 1.0,
                p_max: 1.0,
                source: SourceTerm::Constant(0.3),
            },
            RegParams::new(0.05).unwrap(),
            8.0,
            ScalarField::from_fn(&g, |p| 0.9 * (-(p[0] - 0.4) / 0.1).tanh()),
            ScalarField::constant(&g, -0.9),
            ScalarField::constant(&g, 0.5),
            BoundaryData::Constant(0.0),
        )
        .unwrap();
        let time = TimeConfig::new(0.2, 1e-3).unwrap();
        let out = sim.run(&time, &RunOptions::default()).unwrap();
        let rows = out.series.rows();
        for w in rows.windows(2) {
            assert!(
                w[1].energy <= w[0].energy + 1e-8 * (1.0 + w[0].energy.abs()),
                "energy rose at step {}",
                w[1].step
            );
        }
    }

    #[test]
    fn two_dimensional_smoke_run() {
        let g = build_grid(2, &[12, 12], &[1.0, 1.0]).unwrap();
        let sim = Simulation::new(
            &g,
            PotentialSpec::obstacle(1.0).unwrap(),
            ModelParams {
                gamma1: 1.0,
                gamma2: 0.5,
                gamma3: 1.0,
                gamma4: 1.0,
                tau: 4.0,
                sigma_s: 1.0,
                p_max: 1.0,
                source: SourceTerm::Constant(0.0),
            },
            RegParams::new(0.05).unwrap(),
            10.0,
            ScalarField::from_fn(&g, |p| {
                let r = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
                0.9 * ((0.25 - r) / 0.1).tanh()
            }),
            ScalarField::constant(&g, -0.9),
            ScalarField::constant(&g, 0.5),
            BoundaryData::Constant(0.0),
        )
        .unwrap();
        let time = TimeConfig::new(0.01, 1e-3).unwrap();
        let out = sim.run(&time, &RunOptions::default()).unwrap();
        let rows = out.series.rows();
        assert_eq!(rows.len(), 11);
        // maximum principle margin never negative beyond tolerance
        for r in rows {
            assert!(r.max_principle_margin >= -1e-8);
        }
        // two-route consistency at the final step
        let dt = time.dt;
        let mu_b = sim
            .mu_gradient_route(
                &out.final_state.phi,
                &out.final_state.phi_prev,
                &out.final_state.mu_h,
                dt,
            )
            .unwrap();
        assert!(out.final_state.mu.sub(&mu_b).sup_norm() <= 1e-8);
    }
}
