//! Run orchestration: certificate resolution (including pilot runs for the
//! empirical constant), the simulate/sweep entry points used by the CLI and
//! the C API, and their on-disk emissions.

use std::path::Path;
use std::sync::Mutex;

use crate::config::{ChatMode, CshMode, RunConfig};
use crate::dynamics::{RunOptions, RunOutput, Simulation};
pub use crate::dynamics::sigma_star;
use crate::elliptic::estimate_embedding_constant;
use crate::error::{Error, Result};
use crate::grid::{Grid, TimeConfig};
use crate::output::{emit_pgm, emit_snapshot, emit_timeseries};
use crate::sliding::{
    certificate, compute_constants, detect_reaching, estimate_chat, verify_envelope, Provenance,
    SlidingCertificate, SlidingConstants,
};

/// Envelope verification tolerance, as a fraction of `M0`.
pub const ENVELOPE_TOL_FACTOR: f64 = 1e-2;
/// Default sliding-detection tolerance, as a fraction of `M0`.
pub const DELTA_SLIDE_FACTOR: f64 = 1e-3;

pub struct Prepared {
    pub grid: std::sync::Arc<Grid>,
    pub sim: Simulation,
    pub time: TimeConfig,
    pub config: RunConfig,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let (grid, sim, time) = config.build()?;
    Ok(Prepared {
        grid,
        sim,
        time,
        config: config.clone(),
    })
}

pub struct CertificateResolution {
    pub cert: SlidingCertificate,
    pub constants: SlidingConstants,
    /// The pilot run output when the empirical mode was in force.
    pub pilot: Option<RunOutput>,
}

/// Assemble the certificate for the configured `rho`: the embedding constant
/// comes from the estimator or the config, the data constants from the
/// fields, and the offset constant either from the config or empirically
/// from a pilot run at `rho_pilot`.
pub fn resolve_certificate(prep: &Prepared) -> Result<CertificateResolution> {
    let constants = compute_constants(
        prep.sim.phi0(),
        prep.sim.phi_star(),
        prep.sim.mu_gamma().sup_norm(),
        prep.sim.potential(),
        prep.config.phistar_laplacian_sup,
    )?;
    let (c_sh, c_sh_source) = match prep.config.csh {
        CshMode::Estimate => (estimate_embedding_constant(&prep.grid), Provenance::Estimated),
        CshMode::Value(v) => (v, Provenance::UserSupplied),
    };
    let c_sys = c_sh * 2.0 * prep.grid.measure().powf(2.0 / 3.0) / prep.config.tau;
    let (c_hat, c_hat_source, pilot) = match prep.config.chat {
        ChatMode::Value(v) => (v, Provenance::UserSupplied, None),
        ChatMode::Pilot { rho_pilot } => {
            let pilot_sim = prep.sim.with_rho(rho_pilot)?;
            let out = pilot_sim
                .run(&prep.time, &RunOptions::default())
                .map_err(|f| f.error)?;
            let c_hat = estimate_chat(&out.series, c_sys, rho_pilot);
            (
                c_hat,
                Provenance::EmpiricalFromPilot { rho_pilot },
                Some(out),
            )
        }
    };
    let cert = certificate(
        &constants,
        c_sh,
        c_sh_source,
        c_hat,
        c_hat_source,
        prep.config.tau,
        prep.config.horizon,
        prep.grid.measure(),
        prep.config.rho,
    )?;
    Ok(CertificateResolution {
        cert,
        constants,
        pilot,
    })
}

pub fn delta_slide_of(config: &RunConfig, constants: &SlidingConstants) -> f64 {
    config
        .delta_slide
        .unwrap_or(DELTA_SLIDE_FACTOR * constants.m0)
}

pub struct SimulateSummary {
    pub output: RunOutput,
    pub cert: SlidingCertificate,
    pub t_num: Option<f64>,
    pub envelope_passed: Option<bool>,
    pub delta_slide: f64,
}

/// Full `simulate` entry point: resolve the certificate (running the pilot
/// if the config demands it), integrate, and emit the time series, the
/// snapshots, the certificate and the config echo into `outdir`. A run that
/// aborts still flushes its partial series.
pub fn simulate_to_dir(config: &RunConfig, outdir: &Path) -> Result<SimulateSummary> {
    let prep = prepare(config)?;
    let resolution = resolve_certificate(&prep)?;
    std::fs::create_dir_all(outdir)?;
    std::fs::write(outdir.join("config-echo.txt"), config.to_config_string())?;
    std::fs::write(
        outdir.join("certificate.txt"),
        resolution.cert.to_key_value_block(),
    )?;

    let opts = RunOptions {
        record_phi: false,
        certificate: Some(resolution.cert.clone()),
        snapshot_stride: if config.snapshot_stride > 0 {
            Some(config.snapshot_stride)
        } else {
            None
        },
    };
    let out = match prep.sim.run(&prep.time, &opts) {
        Ok(out) => out,
        Err(failure) => {
            emit_timeseries(&failure.partial, &outdir.join("timeseries.csv"))?;
            return Err(failure.error);
        }
    };
    emit_timeseries(&out.series, &outdir.join("timeseries.csv"))?;

    let snapdir = outdir.join("snapshots");
    if !out.snapshots.is_empty() {
        std::fs::create_dir_all(&snapdir)?;
    }
    for snap in &out.snapshots {
        emit_snapshot(&snap.phi, &snapdir.join(format!("phi_{:06}.csv", snap.step)))?;
        emit_snapshot(&snap.sigma, &snapdir.join(format!("sigma_{:06}.csv", snap.step)))?;
        emit_snapshot(&snap.mu, &snapdir.join(format!("mu_{:06}.csv", snap.step)))?;
        emit_pgm(&snap.phi, &snapdir.join(format!("phi_{:06}.pgm", snap.step)))?;
    }

    let delta = delta_slide_of(config, &resolution.constants);
    let t_num = detect_reaching(&out.series, delta);
    let envelope_passed = if resolution.cert.t_star.is_some() {
        Some(
            verify_envelope(
                &out.series,
                &resolution.cert,
                ENVELOPE_TOL_FACTOR * resolution.cert.m0,
            )?
            .passed(),
        )
    } else {
        None
    };
    Ok(SimulateSummary {
        output: out,
        cert: resolution.cert,
        t_num,
        envelope_passed,
        delta_slide: delta,
    })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub rho: f64,
    pub t_num: Option<f64>,
    pub t_star: Option<f64>,
    pub passed_envelope: Option<bool>,
    pub mu_inf_max: f64,
}

/// Independent runs, one per control gain. The certificate constants and the
/// pilot are resolved once; each gain gets its own certificate. Runs execute
/// concurrently (capped by the `PHASESLIDE_THREADS` environment variable)
/// and the row order is the input order regardless of scheduling.
pub fn sweep(config: &RunConfig, rhos: &[f64]) -> Result<Vec<SweepRow>> {
    let prep = prepare(config)?;
    let resolution = resolve_certificate(&prep)?;
    let delta = delta_slide_of(config, &resolution.constants);

    let threads = std::env::var("PHASESLIDE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .min(rhos.len().max(1));

    let results: Mutex<Vec<Option<Result<SweepRow>>>> =
        Mutex::new((0..rhos.len()).map(|_| None).collect());
    let next = std::sync::atomic::AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if k >= rhos.len() {
                    break;
                }
                let row = sweep_one(&prep, &resolution, rhos[k], delta);
                results.lock().unwrap()[k] = Some(row);
            });
        }
    });

    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("sweep slot filled"))
        .collect()
}

fn sweep_one(
    prep: &Prepared,
    resolution: &CertificateResolution,
    rho: f64,
    delta: f64,
) -> Result<SweepRow> {
    let cert = certificate(
        &resolution.constants,
        resolution.cert.c_sh,
        resolution.cert.c_sh_source.clone(),
        resolution.cert.c_hat,
        resolution.cert.c_hat_source.clone(),
        prep.config.tau,
        prep.config.horizon,
        prep.grid.measure(),
        rho,
    )?;
    let sim = prep.sim.with_rho(rho)?;
    let opts = RunOptions {
        certificate: Some(cert.clone()),
        ..RunOptions::default()
    };
    let out = sim.run(&prep.time, &opts).map_err(|f| f.error)?;
    let t_num = detect_reaching(&out.series, delta);
    let passed_envelope = if cert.t_star.is_some() {
        Some(verify_envelope(&out.series, &cert, ENVELOPE_TOL_FACTOR * cert.m0)?.passed())
    } else {
        None
    };
    let mu_inf_max = out
        .series
        .rows()
        .iter()
        .fold(0.0_f64, |m, r| m.max(r.mu_inf));
    Ok(SweepRow {
        rho,
        t_num,
        t_star: cert.t_star,
        passed_envelope,
        mu_inf_max,
    })
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("rho,t_num,t_star,passed_envelope\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.rho,
            r.t_num.map_or(String::new(), |v| format!("{v:.16e}")),
            r.t_star.map_or(String::new(), |v| format!("{v:.16e}")),
            r.passed_envelope.map_or(String::new(), |b| b.to_string()),
        ));
    }
    s
}

/// Exit-code mapping shared by the CLI and the C API.
pub fn error_category(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidData(_) | Error::GridMismatch(_) | Error::Io(_) => 1,
        Error::LinearSolve { .. } | Error::Newton { .. } | Error::ScalarSolve(_) => 2,
        Error::Certificate(_) => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn quick_config() -> RunConfig {
        RunConfig {
            grid: crate::config::GridSpec {
                dim: 1,
                cells: vec![32],
                extent: vec![1.0],
            },
            horizon: 0.02,
            dt: 1e-3,
            chat: ChatMode::Value(1.0),
            snapshot_stride: 10,
            ..RunConfig::default()
        }
    }

    #[test]
    fn certificate_resolution_with_user_chat() {
        let prep = prepare(&quick_config()).unwrap();
        let res = resolve_certificate(&prep).unwrap();
        assert!(res.pilot.is_none());
        assert_eq!(res.cert.c_hat, 1.0);
        assert!(res.cert.smallness_ok);
        assert!(res.cert.c_sh >= 1.0);
    }

    #[test]
    fn certificate_resolution_with_pilot() {
        let cfg = RunConfig {
            chat: ChatMode::Pilot { rho_pilot: 0.5 },
            ..quick_config()
        };
        let prep = prepare(&cfg).unwrap();
        let res = resolve_certificate(&prep).unwrap();
        assert!(res.pilot.is_some());
        assert!(res.cert.c_hat >= 0.0);
        assert!(matches!(
            res.cert.c_hat_source,
            Provenance::EmpiricalFromPilot { .. }
        ));
    }

    #[test]
    fn simulate_emits_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let summary = simulate_to_dir(&quick_config(), dir.path()).unwrap();
        assert!(dir.path().join("timeseries.csv").exists());
        assert!(dir.path().join("certificate.txt").exists());
        assert!(dir.path().join("config-echo.txt").exists());
        assert!(dir.path().join("snapshots/phi_000000.csv").exists());
        assert!(dir.path().join("snapshots/phi_000020.pgm").exists());
        assert_eq!(summary.output.series.rows().len(), 21);
        // echo re-parses to the same config
        let echo = crate::config::parse_config(&dir.path().join("config-echo.txt")).unwrap();
        assert_eq!(echo, quick_config());
    }

    #[test]
    fn sweep_rows_follow_input_order_and_are_deterministic() {
        let cfg = quick_config();
        let rhos = [30.0, 10.0, 50.0];
        let rows1 = sweep(&cfg, &rhos).unwrap();
        std::env::set_var("PHASESLIDE_THREADS", "1");
        let rows2 = sweep(&cfg, &rhos).unwrap();
        std::env::remove_var("PHASESLIDE_THREADS");
        assert_eq!(rows1.len(), 3);
        for (a, b) in rows1.iter().zip(&rows2) {
            assert_eq!(a.rho, b.rho);
            assert_eq!(a.t_num, b.t_num);
            assert_eq!(a.t_star, b.t_star);
            assert_eq!(a.mu_inf_max, b.mu_inf_max);
        }
    }
}
