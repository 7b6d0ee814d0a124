//! Run configuration: a flat `key = value` text format with dotted sections,
//! a strict parser (unknown keys are errors), the canonical serializer, and
//! the translation into a ready [`Simulation`].
//!
//! Every key has a default taken from the reference scenario
//! `scenario-1d-eradication`, so the empty file is a valid configuration.
//! Keys that select files (`phi0.kind = "file"` and friends) make their
//! `*.file` companion mandatory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::dynamics::{ModelParams, Simulation, SourceTerm};
use crate::elliptic::BoundaryData;
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, ScalarField, TimeConfig};
use crate::output::read_snapshot;
use crate::potential::{PotentialKind, PotentialSpec, RegParams};

pub const DEFAULT_SCENARIO_NAME: &str = "scenario-1d-eradication";

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub extent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Constant(f64),
    /// Interface profile: `outer + (inner - outer) (1 + tanh((center - s)/width)) / 2`
    /// where `s` is the coordinate in 1d and the distance from the domain
    /// center in 2d (so `center` is the core radius there).
    Tanh {
        center: f64,
        width: f64,
        level_inner: f64,
        level_outer: f64,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MuGammaSpec {
    Constant(f64),
    /// Separable product `a(t) b(node)`; `time_file` holds `t,a` CSV rows,
    /// `profile_file` one value per boundary node (row-major boundary
    /// order).
    Separable {
        time_file: PathBuf,
        profile_file: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GSpec {
    Constant(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CshMode {
    Estimate,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChatMode {
    Pilot { rho_pilot: f64 },
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub horizon: f64,
    pub dt: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub tau: f64,
    pub sigma_s: f64,
    pub p_max: f64,
    pub g: GSpec,
    pub potential_kind: PotentialKind,
    pub c0: f64,
    pub delta_dom: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub phi0: FieldSpec,
    pub phi_star: FieldSpec,
    pub sigma0: FieldSpec,
    pub mu_gamma: MuGammaSpec,
    /// Absolute sliding-detection tolerance; `None` means `1e-3 * M0`.
    pub delta_slide: Option<f64>,
    /// Analytic override for `|Delta phi_star|_inf`.
    pub phistar_laplacian_sup: Option<f64>,
    pub csh: CshMode,
    pub chat: ChatMode,
    pub output_dir: PathBuf,
    pub snapshot_stride: usize,
}

impl Default for RunConfig {
    /// The reference scenario `scenario-1d-eradication`.
    fn default() -> Self {
        RunConfig {
            grid: GridSpec {
                dim: 1,
                cells: vec![256],
                extent: vec![1.0],
            },
            horizon: 1.0,
            dt: 1e-3,
            gamma1: 1.0,
            gamma2: 0.5,
            gamma3: 1.0,
            gamma4: 1.0,
            tau: 4.0,
            sigma_s: 1.0,
            p_max: 1.0,
            g: GSpec::Constant(0.0),
            potential_kind: PotentialKind::Obstacle,
            c0: 1.0,
            delta_dom: 1e-6,
            epsilon: 0.01,
            rho: 35.0,
            phi0: FieldSpec::Tanh {
                center: 0.3,
                width: 0.05,
                level_inner: 0.9,
                level_outer: -0.9,
            },
            phi_star: FieldSpec::Constant(-0.9),
            sigma0: FieldSpec::Constant(0.5),
            mu_gamma: MuGammaSpec::Constant(0.0),
            delta_slide: None,
            phistar_laplacian_sup: None,
            csh: CshMode::Estimate,
            chat: ChatMode::Pilot { rho_pilot: 1.0 },
            output_dir: PathBuf::from("out"),
            snapshot_stride: 100,
        }
    }
}

// ---------------------------------------------------------------------------
// raw key/value layer

#[derive(Debug, Clone)]
enum RawValue {
    Token(String),
    Str(String),
    Bool(bool),
    Array(Vec<String>),
}

struct RawConfig {
    entries: BTreeMap<String, RawValue>,
    consumed: BTreeSet<String>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                // '#' inside quotes is not supported by the flat format
                Some(p) if !raw_line[..p].contains('"') => &raw_line[..p],
                _ => raw_line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            let value = value.trim();
            let raw = if let Some(stripped) = value.strip_prefix('"') {
                let inner = stripped.strip_suffix('"').ok_or_else(|| {
                    Error::Config(format!("{key}: unterminated string literal"))
                })?;
                RawValue::Str(inner.to_string())
            } else if value == "true" || value == "false" {
                RawValue::Bool(value == "true")
            } else if let Some(stripped) = value.strip_prefix('[') {
                let inner = stripped
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("{key}: unterminated array")))?;
                let items: Vec<String> = inner
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                RawValue::Array(items)
            } else {
                RawValue::Token(value.to_string())
            };
            if entries.insert(key.clone(), raw).is_some() {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
        }
        Ok(RawConfig {
            entries,
            consumed: BTreeSet::new(),
        })
    }

    fn take(&mut self, key: &str) -> Option<RawValue> {
        self.consumed.insert(key.to_string());
        self.entries.get(key).cloned()
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(RawValue::Token(t)) => t.parse::<f64>().map(Some).map_err(|_| {
                Error::Config(format!("{key}: expected a number, got {t:?}"))
            }),
            Some(_) => Err(Error::Config(format!("{key}: expected a number"))),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some(RawValue::Token(t)) => t.parse::<usize>().map(Some).map_err(|_| {
                Error::Config(format!("{key}: expected a nonnegative integer, got {t:?}"))
            }),
            Some(_) => Err(Error::Config(format!(
                "{key}: expected a nonnegative integer"
            ))),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(RawValue::Str(s)) => Ok(Some(s)),
            Some(_) => Err(Error::Config(format!("{key}: expected a quoted string"))),
        }
    }

    fn f64_array(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(RawValue::Array(items)) => items
                .iter()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::Config(format!("{key}: expected numbers, got {t:?}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
            Some(RawValue::Token(t)) => t
                .parse::<f64>()
                .map(|v| Some(vec![v]))
                .map_err(|_| Error::Config(format!("{key}: expected a number array"))),
            Some(_) => Err(Error::Config(format!("{key}: expected a number array"))),
        }
    }

    fn usize_array(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.take(key) {
            None => Ok(None),
            Some(RawValue::Array(items)) => items
                .iter()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| {
                        Error::Config(format!("{key}: expected integers, got {t:?}"))
                    })
                })
                .collect::<Result<Vec<usize>>>()
                .map(Some),
            Some(RawValue::Token(t)) => t
                .parse::<usize>()
                .map(|v| Some(vec![v]))
                .map_err(|_| Error::Config(format!("{key}: expected an integer array"))),
            Some(_) => Err(Error::Config(format!("{key}: expected an integer array"))),
        }
    }

    fn finish(self) -> Result<()> {
        for key in self.entries.keys() {
            if !self.consumed.contains(key) {
                return Err(Error::Config(format!("unknown key {key}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// typed layer

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let base = path.parent().map(Path::to_path_buf);
    parse_config_str_with_base(&text, base.as_deref())
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    parse_config_str_with_base(text, None)
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let pb = PathBuf::from(p);
    match base {
        Some(b) if pb.is_relative() => b.join(pb),
        _ => pb,
    }
}

fn parse_config_str_with_base(text: &str, base: Option<&Path>) -> Result<RunConfig> {
    let mut raw = RawConfig::parse(text)?;
    let d = RunConfig::default();

    let dim = raw.usize("grid.dim")?.unwrap_or(d.grid.dim);
    let cells = raw.usize_array("grid.cells")?.unwrap_or(d.grid.cells);
    let extent = raw.f64_array("grid.extent")?.unwrap_or(d.grid.extent);
    let horizon = raw.f64("time.horizon")?.unwrap_or(d.horizon);
    let dt = raw.f64("time.dt")?.unwrap_or(d.dt);

    let gamma1 = raw.f64("model.gamma1")?.unwrap_or(d.gamma1);
    let gamma2 = raw.f64("model.gamma2")?.unwrap_or(d.gamma2);
    let gamma3 = raw.f64("model.gamma3")?.unwrap_or(d.gamma3);
    let gamma4 = raw.f64("model.gamma4")?.unwrap_or(d.gamma4);
    let tau = raw.f64("model.tau")?.unwrap_or(d.tau);
    let sigma_s = raw.f64("model.sigma_s")?.unwrap_or(d.sigma_s);
    let p_max = raw.f64("model.p_max")?.unwrap_or(d.p_max);
    let g = match raw.string("model.g_file")? {
        Some(p) => GSpec::File(resolve(base, &p)),
        None => GSpec::Constant(raw.f64("model.g")?.unwrap_or(0.0)),
    };

    let potential_kind = match raw
        .string("potential.kind")?
        .unwrap_or_else(|| "obstacle".into())
        .as_str()
    {
        "regular" => PotentialKind::Regular,
        "logarithmic" => PotentialKind::Logarithmic,
        "obstacle" => PotentialKind::Obstacle,
        other => {
            return Err(Error::Config(format!(
                "potential.kind: expected \"regular\", \"logarithmic\" or \"obstacle\", got {other:?}"
            )))
        }
    };
    let c0 = raw.f64("potential.c0")?.unwrap_or(d.c0);
    let delta_dom = raw.f64("potential.delta_dom")?.unwrap_or(d.delta_dom);

    let epsilon = raw.f64("reg.epsilon")?.unwrap_or(d.epsilon);
    let rho = raw.f64("control.rho")?.unwrap_or(d.rho);

    let field_spec = |raw: &mut RawConfig, section: &str, default: &FieldSpec| -> Result<FieldSpec> {
        let kind = raw.string(&format!("{section}.kind"))?;
        let value = raw.f64(&format!("{section}.value"))?;
        let file = raw.string(&format!("{section}.file"))?;
        let center = raw.f64(&format!("{section}.center"))?;
        let width = raw.f64(&format!("{section}.width"))?;
        let inner = raw.f64(&format!("{section}.level_inner"))?;
        let outer = raw.f64(&format!("{section}.level_outer"))?;
        let kind = match kind {
            Some(k) => k,
            None => {
                // infer from whichever companion key is present
                if value.is_some() {
                    "constant".into()
                } else if file.is_some() {
                    "file".into()
                } else if center.is_some() || width.is_some() || inner.is_some() || outer.is_some()
                {
                    "tanh".into()
                } else {
                    return Ok(default.clone());
                }
            }
        };
        match kind.as_str() {
            "constant" => Ok(FieldSpec::Constant(value.ok_or_else(|| {
                Error::Config(format!(
                    "{section}.value: missing (required when {section}.kind = \"constant\")"
                ))
            })?)),
            "file" => Ok(FieldSpec::File(resolve(
                base,
                &file.ok_or_else(|| {
                    Error::Config(format!(
                        "{section}.file: missing (required when {section}.kind = \"file\")"
                    ))
                })?,
            ))),
            "tanh" => {
                let df = match default {
                    FieldSpec::Tanh {
                        center,
                        width,
                        level_inner,
                        level_outer,
                    } => (*center, *width, *level_inner, *level_outer),
                    _ => (0.3, 0.05, 0.9, -0.9),
                };
                Ok(FieldSpec::Tanh {
                    center: center.unwrap_or(df.0),
                    width: width.unwrap_or(df.1),
                    level_inner: inner.unwrap_or(df.2),
                    level_outer: outer.unwrap_or(df.3),
                })
            }
            other => Err(Error::Config(format!(
                "{section}.kind: expected \"constant\", \"tanh\" or \"file\", got {other:?}"
            ))),
        }
    };

    let phi0 = field_spec(&mut raw, "phi0", &d.phi0)?;
    let phi_star = field_spec(&mut raw, "phistar", &d.phi_star)?;
    if matches!(phi_star, FieldSpec::Tanh { .. }) {
        return Err(Error::Config(
            "phistar.kind: the target accepts \"constant\" or \"file\" only".into(),
        ));
    }
    let sigma0 = field_spec(&mut raw, "sigma0", &d.sigma0)?;
    if matches!(sigma0, FieldSpec::Tanh { .. }) {
        return Err(Error::Config(
            "sigma0.kind: the initial nutrient accepts \"constant\" or \"file\" only".into(),
        ));
    }

    let mu_gamma = match raw
        .string("mu_gamma.kind")?
        .unwrap_or_else(|| "constant".into())
        .as_str()
    {
        "constant" => MuGammaSpec::Constant(raw.f64("mu_gamma.value")?.unwrap_or(0.0)),
        "separable" => {
            let tf = raw.string("mu_gamma.time_file")?.ok_or_else(|| {
                Error::Config(
                    "mu_gamma.time_file: missing (required when mu_gamma.kind = \"separable\")"
                        .into(),
                )
            })?;
            let pf = raw.string("mu_gamma.profile_file")?.ok_or_else(|| {
                Error::Config(
                    "mu_gamma.profile_file: missing (required when mu_gamma.kind = \"separable\")"
                        .into(),
                )
            })?;
            MuGammaSpec::Separable {
                time_file: resolve(base, &tf),
                profile_file: resolve(base, &pf),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "mu_gamma.kind: expected \"constant\" or \"separable\", got {other:?}"
            )))
        }
    };

    let delta_slide = raw.f64("sliding.delta_slide")?;
    let phistar_laplacian_sup = raw.f64("phistar.laplacian_sup")?;

    let csh = match raw
        .string("csh.mode")?
        .unwrap_or_else(|| "estimate".into())
        .as_str()
    {
        "estimate" => CshMode::Estimate,
        "value" => CshMode::Value(raw.f64("csh.value")?.ok_or_else(|| {
            Error::Config("csh.value: missing (required when csh.mode = \"value\")".into())
        })?),
        other => {
            return Err(Error::Config(format!(
                "csh.mode: expected \"estimate\" or \"value\", got {other:?}"
            )))
        }
    };
    let chat = match raw
        .string("chat.mode")?
        .unwrap_or_else(|| "pilot".into())
        .as_str()
    {
        "pilot" => ChatMode::Pilot {
            rho_pilot: raw.f64("chat.rho_pilot")?.unwrap_or(1.0),
        },
        "value" => ChatMode::Value(raw.f64("chat.value")?.ok_or_else(|| {
            Error::Config("chat.value: missing (required when chat.mode = \"value\")".into())
        })?),
        other => {
            return Err(Error::Config(format!(
                "chat.mode: expected \"pilot\" or \"value\", got {other:?}"
            )))
        }
    };

    let output_dir = raw
        .string("output.dir")?
        .map(PathBuf::from)
        .unwrap_or(d.output_dir);
    let snapshot_stride = raw.usize("output.snapshot_stride")?.unwrap_or(d.snapshot_stride);

    raw.finish()?;

    let cfg = RunConfig {
        grid: GridSpec { dim, cells, extent },
        horizon,
        dt,
        gamma1,
        gamma2,
        gamma3,
        gamma4,
        tau,
        sigma_s,
        p_max,
        g,
        potential_kind,
        c0,
        delta_dom,
        epsilon,
        rho,
        phi0,
        phi_star,
        sigma0,
        mu_gamma,
        delta_slide,
        phistar_laplacian_sup,
        csh,
        chat,
        output_dir,
        snapshot_stride,
    };
    cfg.validate_cheap()?;
    Ok(cfg)
}

impl RunConfig {
    /// Structural validation that needs no file access: grid and time
    /// consistency, rate-constant signs, potential and regularization
    /// constraints, and existence of every referenced file.
    pub fn validate_cheap(&self) -> Result<()> {
        build_grid(self.grid.dim, &self.grid.cells, &self.grid.extent)?;
        TimeConfig::new(self.horizon, self.dt)?;
        self.model_params_unchecked().validate()?;
        self.potential_spec()?;
        RegParams::new(self.epsilon)?;
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!(
                "control.rho must be >= 0, got {}",
                self.rho
            )));
        }
        if let Some(ds) = self.delta_slide {
            if !(ds > 0.0) {
                return Err(Error::Config(format!(
                    "sliding.delta_slide must be > 0, got {ds}"
                )));
            }
        }
        if let ChatMode::Pilot { rho_pilot } = self.chat {
            if !(rho_pilot >= 0.0) || !rho_pilot.is_finite() {
                return Err(Error::Config(format!(
                    "chat.rho_pilot must be >= 0, got {rho_pilot}"
                )));
            }
        }
        for (key, p) in self.referenced_files() {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{key}: referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<(&'static str, &PathBuf)> {
        let mut v = Vec::new();
        if let GSpec::File(p) = &self.g {
            v.push(("model.g_file", p));
        }
        if let FieldSpec::File(p) = &self.phi0 {
            v.push(("phi0.file", p));
        }
        if let FieldSpec::File(p) = &self.phi_star {
            v.push(("phistar.file", p));
        }
        if let FieldSpec::File(p) = &self.sigma0 {
            v.push(("sigma0.file", p));
        }
        if let MuGammaSpec::Separable {
            time_file,
            profile_file,
        } = &self.mu_gamma
        {
            v.push(("mu_gamma.time_file", time_file));
            v.push(("mu_gamma.profile_file", profile_file));
        }
        v
    }

    fn model_params_unchecked(&self) -> ModelParams {
        ModelParams {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            gamma4: self.gamma4,
            tau: self.tau,
            sigma_s: self.sigma_s,
            p_max: self.p_max,
            source: SourceTerm::Constant(0.0), // placeholder until materialized
        }
    }

    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        let spec = match self.potential_kind {
            PotentialKind::Regular => PotentialSpec::regular(),
            PotentialKind::Logarithmic => PotentialSpec::logarithmic(self.c0)?,
            PotentialKind::Obstacle => PotentialSpec::obstacle(self.c0)?,
        };
        if !(self.delta_dom > 0.0 && self.delta_dom < 0.5) {
            return Err(Error::Config(format!(
                "potential.delta_dom must lie in (0, 0.5), got {}",
                self.delta_dom
            )));
        }
        Ok(spec.with_domain_margin(self.delta_dom))
    }

    fn materialize_field(&self, grid: &Arc<Grid>, spec: &FieldSpec) -> Result<ScalarField> {
        match spec {
            FieldSpec::Constant(c) => Ok(ScalarField::constant(grid, *c)),
            FieldSpec::File(path) => read_snapshot(grid, path),
            FieldSpec::Tanh {
                center,
                width,
                level_inner,
                level_outer,
            } => {
                let mid: Vec<f64> = grid.extent().iter().map(|e| 0.5 * e).collect();
                let dim = grid.dim();
                let (c, w, li, lo) = (*center, *width, *level_inner, *level_outer);
                Ok(ScalarField::from_fn(grid, move |p| {
                    let s = if dim == 1 {
                        p[0]
                    } else {
                        ((p[0] - mid[0]).powi(2) + (p[1] - mid[1]).powi(2)).sqrt()
                    };
                    lo + (li - lo) * 0.5 * (1.0 + ((c - s) / w).tanh())
                }))
            }
        }
    }

    fn materialize_mu_gamma(&self, grid: &Arc<Grid>) -> Result<BoundaryData> {
        match &self.mu_gamma {
            MuGammaSpec::Constant(c) => Ok(BoundaryData::Constant(*c)),
            MuGammaSpec::Separable {
                time_file,
                profile_file,
            } => {
                let ttext = std::fs::read_to_string(time_file)?;
                let mut times = Vec::new();
                let mut factors = Vec::new();
                for line in ttext.lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') || line.starts_with('t') {
                        continue;
                    }
                    let (a, b) = line.split_once(',').ok_or_else(|| {
                        Error::Config("mu_gamma.time_file: expected `t,a` rows".into())
                    })?;
                    times.push(a.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("mu_gamma.time_file: bad time {a:?}"))
                    })?);
                    factors.push(b.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("mu_gamma.time_file: bad factor {b:?}"))
                    })?);
                }
                let ptext = std::fs::read_to_string(profile_file)?;
                let mut profile = Vec::new();
                for line in ptext.lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    profile.push(line.parse::<f64>().map_err(|_| {
                        Error::Config(format!("mu_gamma.profile_file: bad value {line:?}"))
                    })?);
                }
                let bd = BoundaryData::Separable {
                    times,
                    factors,
                    profile,
                };
                bd.validate(grid)?;
                Ok(bd)
            }
        }
    }

    fn materialize_source(&self, grid: &Arc<Grid>) -> Result<SourceTerm> {
        match &self.g {
            GSpec::Constant(c) => Ok(SourceTerm::Constant(*c)),
            GSpec::File(p) => Ok(SourceTerm::Field(
                read_snapshot(grid, p)?.values().to_vec(),
            )),
        }
    }

    /// Materialize the grid, fields and simulation.
    pub fn build(&self) -> Result<(Arc<Grid>, Simulation, TimeConfig)> {
        self.validate_cheap()?;
        let grid = build_grid(self.grid.dim, &self.grid.cells, &self.grid.extent)?;
        let time = TimeConfig::new(self.horizon, self.dt)?;
        let pot = self.potential_spec()?;
        let params = ModelParams {
            source: self.materialize_source(&grid)?,
            ..self.model_params_unchecked()
        };
        let phi0 = self.materialize_field(&grid, &self.phi0)?;
        let phi_star = self.materialize_field(&grid, &self.phi_star)?;
        let sigma0 = self.materialize_field(&grid, &self.sigma0)?;
        let mu_gamma = self.materialize_mu_gamma(&grid)?;
        let sim = Simulation::new(
            &grid,
            pot,
            params,
            RegParams::new(self.epsilon)?,
            self.rho,
            phi0,
            phi_star,
            sigma0,
            mu_gamma,
        )?;
        Ok((grid, sim, time))
    }

    /// Canonical flat text form; `parse -> serialize -> parse` is a fixed
    /// point.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        let arr_u = |v: &[usize]| {
            format!(
                "[{}]",
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
            )
        };
        let arr_f = |v: &[f64]| {
            format!(
                "[{}]",
                v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
            )
        };
        kv(&mut s, "grid.dim", self.grid.dim.to_string());
        kv(&mut s, "grid.cells", arr_u(&self.grid.cells));
        kv(&mut s, "grid.extent", arr_f(&self.grid.extent));
        kv(&mut s, "time.horizon", format!("{}", self.horizon));
        kv(&mut s, "time.dt", format!("{}", self.dt));
        kv(&mut s, "model.gamma1", format!("{}", self.gamma1));
        kv(&mut s, "model.gamma2", format!("{}", self.gamma2));
        kv(&mut s, "model.gamma3", format!("{}", self.gamma3));
        kv(&mut s, "model.gamma4", format!("{}", self.gamma4));
        kv(&mut s, "model.tau", format!("{}", self.tau));
        kv(&mut s, "model.sigma_s", format!("{}", self.sigma_s));
        kv(&mut s, "model.p_max", format!("{}", self.p_max));
        match &self.g {
            GSpec::Constant(c) => kv(&mut s, "model.g", format!("{c}")),
            GSpec::File(p) => kv(&mut s, "model.g_file", format!("{:?}", p.display().to_string())),
        }
        kv(
            &mut s,
            "potential.kind",
            format!("\"{}\"", self.potential_kind.name()),
        );
        kv(&mut s, "potential.c0", format!("{}", self.c0));
        kv(&mut s, "potential.delta_dom", format!("{}", self.delta_dom));
        kv(&mut s, "reg.epsilon", format!("{}", self.epsilon));
        kv(&mut s, "control.rho", format!("{}", self.rho));
        let field = |s: &mut String, section: &str, f: &FieldSpec| match f {
            FieldSpec::Constant(c) => {
                kv(s, &format!("{section}.kind"), "\"constant\"".into());
                kv(s, &format!("{section}.value"), format!("{c}"));
            }
            FieldSpec::File(p) => {
                kv(s, &format!("{section}.kind"), "\"file\"".into());
                kv(
                    s,
                    &format!("{section}.file"),
                    format!("{:?}", p.display().to_string()),
                );
            }
            FieldSpec::Tanh {
                center,
                width,
                level_inner,
                level_outer,
            } => {
                kv(s, &format!("{section}.kind"), "\"tanh\"".into());
                kv(s, &format!("{section}.center"), format!("{center}"));
                kv(s, &format!("{section}.width"), format!("{width}"));
                kv(s, &format!("{section}.level_inner"), format!("{level_inner}"));
                kv(s, &format!("{section}.level_outer"), format!("{level_outer}"));
            }
        };
        field(&mut s, "phi0", &self.phi0);
        field(&mut s, "phistar", &self.phi_star);
        if let Some(v) = self.phistar_laplacian_sup {
            kv(&mut s, "phistar.laplacian_sup", format!("{v}"));
        }
        field(&mut s, "sigma0", &self.sigma0);
        match &self.mu_gamma {
            MuGammaSpec::Constant(c) => {
                kv(&mut s, "mu_gamma.kind", "\"constant\"".into());
                kv(&mut s, "mu_gamma.value", format!("{c}"));
            }
            MuGammaSpec::Separable {
                time_file,
                profile_file,
            } => {
                kv(&mut s, "mu_gamma.kind", "\"separable\"".into());
                kv(
                    &mut s,
                    "mu_gamma.time_file",
                    format!("{:?}", time_file.display().to_string()),
                );
                kv(
                    &mut s,
                    "mu_gamma.profile_file",
                    format!("{:?}", profile_file.display().to_string()),
                );
            }
        }
        if let Some(ds) = self.delta_slide {
            kv(&mut s, "sliding.delta_slide", format!("{ds}"));
        }
        match &self.csh {
            CshMode::Estimate => kv(&mut s, "csh.mode", "\"estimate\"".into()),
            CshMode::Value(v) => {
                kv(&mut s, "csh.mode", "\"value\"".into());
                kv(&mut s, "csh.value", format!("{v}"));
            }
        }
        match &self.chat {
            ChatMode::Pilot { rho_pilot } => {
                kv(&mut s, "chat.mode", "\"pilot\"".into());
                kv(&mut s, "chat.rho_pilot", format!("{rho_pilot}"));
            }
            ChatMode::Value(v) => {
                kv(&mut s, "chat.mode", "\"value\"".into());
                kv(&mut s, "chat.value", format!("{v}"));
            }
        }
        kv(
            &mut s,
            "output.dir",
            format!("{:?}", self.output_dir.display().to_string()),
        );
        kv(
            &mut s,
            "output.snapshot_stride",
            self.snapshot_stride.to_string(),
        );
        s
    }
}
