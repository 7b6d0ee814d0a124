//! Built-in invariant suite behind the `verify` subcommand: a fast pass over
//! the regularization inequalities, the elliptic oracles, and a short run of
//! the reference scenario checking the maximum principle, the two-route
//! chemical potential and determinism.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ChatMode, GridSpec, RunConfig};
use crate::dynamics::RunOptions;
use crate::elliptic::{harmonic_extension, hminus1_norm, solve_dirichlet};
use crate::grid::{build_grid, ScalarField};
use crate::potential::{abs_eps, PotentialSpec};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

pub fn run_builtin_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(regularization_inequalities());
    out.push(elliptic_convergence());
    out.push(hminus1_identity());
    out.push(harmonic_max_principle());
    out.extend(short_reference_run());
    out
}

fn regularization_inequalities() -> CheckResult {
    let pots = [
        PotentialSpec::regular(),
        PotentialSpec::logarithmic(2.0).unwrap(),
        PotentialSpec::obstacle(1.0).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = String::new();
    let mut ok = true;
    for _ in 0..10_000 {
        let pot = &pots[rng.random_range(0..3)];
        let eps = 10f64.powf(rng.random_range(-3.0..0.0));
        let u: f64 = rng.random_range(-1.0..1.0);
        let r = match pot.beta_domain() {
            crate::potential::BetaDomain::AllReals => 3.0 * u,
            crate::potential::BetaDomain::OpenUnit => 0.999 * u,
            crate::potential::BetaDomain::ClosedUnit => u,
        };
        let a = abs_eps(eps, r);
        let b = pot.yosida_beta(eps, r).unwrap();
        let b0 = pot.beta_min_section(r).unwrap();
        let env = pot.beta_hat_eps(eps, r).unwrap();
        let bh = pot.beta_hat(r);
        if !(a >= 0.0 && a <= r.abs() && b.abs() <= b0.abs() && env >= 0.0 && env <= bh) {
            ok = false;
            worst = format!("violation at kind={} eps={eps} r={r}", pot.kind().name());
            break;
        }
    }
    check(
        "regularization inequalities (10^4 samples, exact)",
        ok,
        if ok { "all samples satisfied".into() } else { worst },
    )
}

fn elliptic_convergence() -> CheckResult {
    use std::f64::consts::PI;
    let mut errs = Vec::new();
    for n in [8, 16, 32] {
        let g = build_grid(2, &[n, n], &[1.0, 1.0]).unwrap();
        let f = ScalarField::from_fn(&g, |p| 2.0 * PI * PI * (PI * p[0]).sin() * (PI * p[1]).sin());
        let u = solve_dirichlet(&g, &f).unwrap();
        let exact = ScalarField::from_fn(&g, |p| (PI * p[0]).sin() * (PI * p[1]).sin());
        errs.push(u.sub(&exact).sup_norm());
    }
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    check(
        "manufactured Dirichlet solution converges at order >= 1.9",
        o1 > 1.9 && o2 > 1.9,
        format!("orders {o1:.3}, {o2:.3}"),
    )
}

fn hminus1_identity() -> CheckResult {
    let g = build_grid(2, &[12, 10], &[1.0, 1.3]).unwrap();
    let f = ScalarField::from_fn(&g, |p| (9.0 * p[0]).sin() * (4.0 * p[1]).cos() + 0.2);
    let df = solve_dirichlet(&g, &f).unwrap();
    let inner = f.l2_inner(&df);
    let star2 = hminus1_norm(&g, &f).unwrap().powi(2);
    let rel = (inner - star2).abs() / star2;
    check(
        "H^{-1} identity (f, Df) = |f|_*^2 to relative 1e-8",
        rel <= 1e-8,
        format!("relative defect {rel:.3e}"),
    )
}

fn harmonic_max_principle() -> CheckResult {
    let g = build_grid(2, &[14, 14], &[1.0, 1.0]).unwrap();
    let trace: Vec<f64> = g
        .boundary_nodes()
        .iter()
        .map(|&i| {
            let p = g.node_position(i);
            (11.0 * p[0] - 3.0 * p[1]).sin()
        })
        .collect();
    let lo = trace.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let u = harmonic_extension(&g, &trace).unwrap();
    let margin = (u.min_value() - lo).min(hi - u.max_value());
    check(
        "harmonic extension obeys the discrete maximum principle",
        margin >= -1e-10,
        format!("worst margin {margin:.3e}"),
    )
}

fn short_reference_run() -> Vec<CheckResult> {
    let cfg = RunConfig {
        grid: GridSpec {
            dim: 1,
            cells: vec![64],
            extent: vec![1.0],
        },
        horizon: 0.05,
        dt: 1e-3,
        chat: ChatMode::Value(1.0),
        ..RunConfig::default()
    };
    let mut out = Vec::new();
    let prep = match crate::harness::prepare(&cfg) {
        Ok(p) => p,
        Err(e) => {
            out.push(check(
                "reference scenario builds",
                false,
                format!("{e}"),
            ));
            return out;
        }
    };
    out.push(check("reference scenario builds", true, String::new()));

    let run1 = prep.sim.run(&prep.time, &RunOptions::default());
    let run2 = prep.sim.run(&prep.time, &RunOptions::default());
    match (run1, run2) {
        (Ok(a), Ok(b)) => {
            let margin = a
                .series
                .rows()
                .iter()
                .map(|r| r.max_principle_margin)
                .fold(f64::INFINITY, f64::min);
            out.push(check(
                "nutrient maximum principle on a short reference run",
                margin >= -1e-8,
                format!("worst margin {margin:.3e}"),
            ));
            out.push(check(
                "Newton stays within its iteration cap",
                a.max_newton_iters <= crate::dynamics::NEWTON_MAX_ITER,
                format!("max iterations {}", a.max_newton_iters),
            ));
            let dt = prep.time.dt;
            let mu_b = prep
                .sim
                .mu_gradient_route(
                    &a.final_state.phi,
                    &a.final_state.phi_prev,
                    &a.final_state.mu_h,
                    dt,
                )
                .map(|m| a.final_state.mu.sub(&m).sup_norm());
            match mu_b {
                Ok(d) => out.push(check(
                    "two-route chemical potential agreement <= 1e-8",
                    d <= 1e-8,
                    format!("sup discrepancy {d:.3e}"),
                )),
                Err(e) => out.push(check(
                    "two-route chemical potential agreement <= 1e-8",
                    false,
                    format!("{e}"),
                )),
            }
            out.push(check(
                "reruns are bit-identical",
                a.series.to_csv() == b.series.to_csv(),
                String::new(),
            ));
        }
        (Err(e), _) | (_, Err(e)) => out.push(check(
            "short reference run completes",
            false,
            format!("{}", e.error),
        )),
    }
    out
}
