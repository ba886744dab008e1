//! Experiment configuration, mode dispatch and artifact writing for the
//! `monoglue` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algebra::Su2;
use crate::analysis::{self, AnalysisError, Region, SweepConfig, WeightSite, WeightSpec};
use crate::deformation::{self, DeformConfig, DeformationError, GluedProblem};
use crate::dirac_global::{self, ChargeConfig, ChargeSite, DiracError};
use crate::geometry::forms::FormField;
use crate::geometry::grid::{norm, Grid, GridDomain, Point};
use crate::geometry::metric::MetricField;
use crate::gluing::{SampledPair, TwoDipoleConfig};
use crate::linear_system::{self, CgConfig, LinearError, LinearizedOperator};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_GATE: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration invalid: {0}")]
    Validation(String),
    #[error("solver gate failed: {0}")]
    Gate(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Gate(_) => EXIT_GATE,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DiracError> for CliError {
    fn from(e: DiracError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<LinearError> for CliError {
    fn from(e: LinearError) -> Self {
        match e {
            LinearError::GateFailed { .. } | LinearError::MassTooSmall { .. } | LinearError::ExcludedWeight { .. } => {
                CliError::Gate(e.to_string())
            }
            LinearError::NoConvergence { .. } | LinearError::ContractionFailed { .. } => CliError::Divergence(e.to_string()),
            LinearError::InvalidInput(_) | LinearError::Geometry(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<DeformationError> for CliError {
    fn from(e: DeformationError) -> Self {
        match e {
            DeformationError::GateFailed { .. } => CliError::Gate(e.to_string()),
            DeformationError::Diverged { .. } | DeformationError::NoConvergence { .. } => CliError::Divergence(e.to_string()),
            DeformationError::InvalidInput(_) | DeformationError::Analysis(_) => CliError::Validation(e.to_string()),
            DeformationError::Linear(l) => l.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    BpsResidual,
    DiracSolve,
    Glue,
    ErrorReport,
    Hardy,
    Weitzenbock,
    LinearSolve,
    Deform,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::BpsResidual => "bps-residual",
            Mode::DiracSolve => "dirac-solve",
            Mode::Glue => "glue",
            Mode::ErrorReport => "error-report",
            Mode::Hardy => "hardy",
            Mode::Weitzenbock => "weitzenbock",
            Mode::LinearSolve => "linear-solve",
            Mode::Deform => "deform",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpsSection {
    pub lambda: f64,
    pub radius: f64,
    pub spacings: Vec<f64>,
}

impl Default for BpsSection {
    fn default() -> Self {
        BpsSection { lambda: 1.0, radius: 3.0, spacings: vec![0.1, 0.05, 0.025] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiracSection {
    pub period: f64,
    pub points_per_axis: usize,
    pub mean_mass: f64,
    pub charges: Vec<ChargeSite>,
    /// Radius of the flux spheres, in units of the period.
    pub flux_radius: f64,
}

impl Default for DiracSection {
    fn default() -> Self {
        DiracSection {
            period: 8.0,
            points_per_axis: 64,
            mean_mass: 0.0,
            charges: vec![
                ChargeSite { position: [2.0, 4.0, 4.0], charge: 1 },
                ChargeSite { position: [6.0, 4.0, 4.0], charge: -1 },
            ],
            flux_radius: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlueSection {
    pub lambda: f64,
    pub points_per_axis: usize,
    pub framings: [f64; 2],
}

impl Default for GlueSection {
    fn default() -> Self {
        GlueSection { lambda: 16.0, points_per_axis: 64, framings: [0.0, 0.0] }
    }
}

impl GlueSection {
    pub fn dipole_config(&self, lambda: f64) -> TwoDipoleConfig {
        let mut c = TwoDipoleConfig::standard(lambda, self.points_per_axis);
        c.framings = self.framings;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSection {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Radius beyond which the weight is 1.
    pub unit: f64,
}

impl Default for WeightSection {
    fn default() -> Self {
        WeightSection { alpha1: -0.25, alpha2: -0.5, unit: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardySection {
    pub samples: usize,
    pub alpha: f64,
    pub radius: f64,
    pub spacing: f64,
}

impl Default for HardySection {
    fn default() -> Self {
        HardySection { samples: 100, alpha: -0.5, radius: 1.0, spacing: 0.08 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeitzenbockSection {
    pub period: f64,
    pub resolutions: Vec<usize>,
}

impl Default for WeitzenbockSection {
    fn default() -> Self {
        WeitzenbockSection { period: 4.0, resolutions: vec![16, 32] }
    }
}

/// Top-level experiment configuration. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub bps: BpsSection,
    pub dirac: DiracSection,
    pub glue: GlueSection,
    pub weights: WeightSection,
    pub solver: CgConfig,
    pub deform: DeformConfig,
    pub sweep: SweepConfig,
    /// λ values for the deformation sweep; empty means only `glue.lambda`.
    pub deform_lambdas: Vec<f64>,
    pub hardy: HardySection,
    pub weitzenbock: WeitzenbockSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            bps: BpsSection::default(),
            dirac: DiracSection::default(),
            glue: GlueSection::default(),
            weights: WeightSection::default(),
            solver: CgConfig::default(),
            deform: DeformConfig::default(),
            sweep: SweepConfig::default(),
            deform_lambdas: Vec::new(),
            hardy: HardySection::default(),
            weitzenbock: WeitzenbockSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks the preconditions of the selected mode before any compute.
    pub fn validate(&self, mode: Mode) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        match mode {
            Mode::BpsResidual => {
                if self.bps.spacings.len() < 2 {
                    return bad("bps.spacings needs at least two spacings for an order estimate".into());
                }
            }
            Mode::DiracSolve => {
                let total: i64 = self.dirac.charges.iter().map(|c| c.charge as i64).sum();
                if total != 0 {
                    return bad(format!(
                        "charges sum to {total}; the Higgs equation on a closed manifold is solvable only when Σk_i = 0"
                    ));
                }
            }
            Mode::Glue | Mode::ErrorReport | Mode::LinearSolve | Mode::Deform => {
                let eps = self.glue.lambda.powf(-0.5);
                let h = 3.2 / self.glue.points_per_axis as f64;
                if !(self.glue.lambda > 0.0) || eps <= 4.0 * h {
                    return bad(format!("ε = λ^(-1/2) = {eps:.4} must exceed 4h = {:.4}", 4.0 * h));
                }
                if mode != Mode::Glue && !(-0.5..0.0).contains(&self.weights.alpha1) {
                    return bad(format!("α₁ = {} must lie in [−½, 0)", self.weights.alpha1));
                }
            }
            Mode::Hardy => {
                if (self.hardy.alpha + 1.0).abs() < 1e-12 {
                    return bad("the Hardy inequality excludes α = −1".into());
                }
            }
            Mode::Weitzenbock => {
                if self.weitzenbock.resolutions.len() < 2 {
                    return bad("weitzenbock.resolutions needs at least two grids".into());
                }
            }
            Mode::Sweep => {
                if self.sweep.lambdas.len() < 2 {
                    return bad("sweep.lambdas needs at least two values".into());
                }
            }
        }
        Ok(())
    }
}

/// Flags from the command line.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: Mode,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
    pub export_vtk: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub mode: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub conventions: Conventions,
    pub config: ExperimentConfig,
    pub artifacts: Vec<String>,
    pub summary: serde_json::Value,
}

/// Convention flags recorded with every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Conventions {
    pub charge_normalization: &'static str,
    pub bps_sign: &'static str,
    pub metric_expansion: &'static str,
    pub ramps: &'static str,
    pub weight: &'static str,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            charge_normalization: "phi = m - c/r with c = k/2; flux 2*pi*k",
            bps_sign: "*F = +d_A Phi",
            metric_expansion: "g = delta - (1/3) R_kmln x_m x_n",
            ramps: "quintic smoothstep; septic for the framing angle",
            weight: "sqrt(lambda^-2 + r^2) near glue sites, r near anti sites, 1 beyond unit",
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
    hash: String,
}

impl Artifacts {
    fn csv<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let sidecar = serde_json::json!({ "config_hash": self.hash, "rows": rows.len(), "table": name });
        fs::write(self.dir.join(format!("{name}.json")), serde_json::to_string_pretty(&sidecar)?)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn vtk(&mut self, name: &str, grid: &Grid, scalars: &[(&str, Vec<f64>)]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        writeln!(f, "# vtk DataFile Version 3.0")?;
        writeln!(f, "monoglue {}", self.hash)?;
        writeln!(f, "ASCII\nDATASET STRUCTURED_POINTS")?;
        writeln!(f, "DIMENSIONS {} {} {}", grid.n[0], grid.n[1], grid.n[2])?;
        writeln!(f, "ORIGIN {} {} {}", grid.origin[0], grid.origin[1], grid.origin[2])?;
        writeln!(f, "SPACING {} {} {}", grid.h, grid.h, grid.h)?;
        writeln!(f, "POINT_DATA {}", grid.len())?;
        for (label, values) in scalars {
            writeln!(f, "SCALARS {label} double 1\nLOOKUP_TABLE default")?;
            for v in values {
                writeln!(f, "{v:e}")?;
            }
        }
        f.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// Runs one mode and writes its artifacts plus `manifest.json` into `opts.out`.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest, CliError> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    config.validate(opts.mode)?;
    fs::create_dir_all(&opts.out)?;
    let hash = config.hash();
    let mut art = Artifacts { dir: opts.out.clone(), written: Vec::new(), hash: hash.clone() };
    let summary = match opts.mode {
        Mode::BpsResidual => bps_residual(&config, &mut art)?,
        Mode::DiracSolve => dirac_solve(&config, &mut art)?,
        Mode::Glue => glue(&config, &mut art, opts.export_vtk, false)?,
        Mode::ErrorReport => glue(&config, &mut art, opts.export_vtk, true)?,
        Mode::Hardy => hardy(&config, &mut art)?,
        Mode::Weitzenbock => weitzenbock(&config, &mut art)?,
        Mode::LinearSolve => linear_solve(&config, &mut art)?,
        Mode::Deform => deform(&config, &mut art, opts.export_vtk)?,
        Mode::Sweep => sweep(&config, &mut art)?,
    };
    let manifest = Manifest {
        tool: "monoglue",
        version: env!("CARGO_PKG_VERSION"),
        mode: opts.mode.name(),
        config_hash: hash,
        seed: config.seed,
        threads: opts.threads,
        conventions: Conventions::default(),
        config,
        artifacts: art.written.clone(),
        summary,
    };
    fs::write(opts.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[derive(Serialize)]
struct BpsRow {
    h: f64,
    sup_residual: f64,
    sup_higgs: f64,
    higgs_at_origin: f64,
    nodes: usize,
    order: Option<f64>,
}

fn bps_residual(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let b = &cfg.bps;
    let reps = b
        .spacings
        .iter()
        .map(|&h| analysis::bps_residual_ball(b.lambda, b.radius, h))
        .collect::<Result<Vec<_>, _>>()?;
    let errs: Vec<f64> = reps.iter().map(|r| r.sup_residual).collect();
    let orders = analysis::observed_orders(&b.spacings, &errs);
    let rows: Vec<BpsRow> = reps
        .iter()
        .enumerate()
        .map(|(i, r)| BpsRow {
            h: r.h,
            sup_residual: r.sup_residual,
            sup_higgs: r.sup_higgs,
            higgs_at_origin: r.higgs_at_origin,
            nodes: r.nodes,
            order: i.checked_sub(1).map(|j| orders[j]),
        })
        .collect();
    art.csv("bps_residual.csv", &rows)?;
    Ok(serde_json::json!({ "orders": orders }))
}

fn dirac_solve(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let d = &cfg.dirac;
    let grid = GridDomain::torus(d.period, d.points_per_axis).build().map_err(|e| CliError::Validation(e.to_string()))?;
    let charges = ChargeConfig { sites: d.charges.clone() };
    let sol = dirac_global::solve_dirac_higgs(&grid, &charges, d.mean_mass)?;
    let field = dirac_global::field_strength(&grid, &sol.phi, &MetricField::flat());
    let radius = d.flux_radius * d.period;
    let rows: Vec<_> = (0..sol.sites.len()).map(|i| dirac_global::site_flux(&grid, &sol, &field, i, radius)).collect();
    art.csv("dirac_flux.csv", &rows)?;
    let flux = dirac_global::plaquette_fluxes(&grid, &sol.phi);
    let links = dirac_global::u1_links_from_flux(&flux, 1e-9)?;
    let mismatch = links.plaquette_mismatch(&flux);
    Ok(serde_json::json!({ "sites": rows.len(), "plaquette_mismatch": mismatch }))
}

#[derive(Serialize)]
struct RegionRow {
    region: Region,
    sup: f64,
    weighted_l3: f64,
    points: usize,
}

fn region_rows(problem: &GluedProblem, e0: &FormField) -> Vec<RegionRow> {
    let grid = &problem.grid;
    let nearest = |x: Point| {
        problem
            .sites
            .iter()
            .map(|s| (grid.distance(x, s.position), s))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("two sites")
    };
    analysis::region_report(
        grid,
        e0,
        &problem.mask,
        |x| {
            let (r, s) = nearest(x);
            Region::classify(r / s.epsilon())
        },
        |x| {
            let (r, s) = nearest(x);
            (s.lambda.powi(-2) + r * r).sqrt()
        },
        &problem.metric,
    )
    .into_iter()
    .map(|r| RegionRow { region: r.region, sup: r.sup, weighted_l3: r.weighted_l3, points: r.points })
    .collect()
}

fn build_problem(cfg: &ExperimentConfig, lambda: f64) -> Result<GluedProblem, CliError> {
    let w = &cfg.weights;
    Ok(GluedProblem::build(&cfg.glue.dipole_config(lambda), w.alpha1, w.alpha2, w.unit)?)
}

fn magnitudes(grid: &Grid, f: &FormField) -> Vec<f64> {
    (0..grid.len()).map(|i| f.magnitude_at(i)).collect()
}

fn glue(cfg: &ExperimentConfig, art: &mut Artifacts, vtk: bool, regions: bool) -> Result<serde_json::Value, CliError> {
    let problem = build_problem(cfg, cfg.glue.lambda)?;
    let grid = &problem.grid;
    let e0 = analysis::bogomolny_error(grid, &problem.pair, &problem.metric);
    #[derive(Serialize)]
    struct SiteRow {
        x: f64,
        y: f64,
        z: f64,
        lambda: f64,
        eps: f64,
        higgs_at_site: f64,
    }
    let sites: Vec<SiteRow> = problem
        .sites
        .iter()
        .map(|s| SiteRow {
            x: s.position[0],
            y: s.position[1],
            z: s.position[2],
            lambda: s.lambda,
            eps: s.epsilon(),
            higgs_at_site: problem.pair.phi.values[grid.nearest_index(s.position)].norm(),
        })
        .collect();
    art.csv("glue_sites.csv", &sites)?;
    let rows = region_rows(&problem, &e0);
    if regions {
        art.csv("error_regions.csv", &rows)?;
    }
    if vtk {
        let phi: Vec<f64> = problem.pair.phi.values.iter().map(|v| v.norm()).collect();
        art.vtk("glued.vtk", grid, &[("higgs_norm", phi), ("bogomolny_error", magnitudes(grid, &e0))])?;
    }
    let sup = |r: Region| rows.iter().find(|x| x.region == r).map(|x| x.sup).unwrap_or(0.0);
    Ok(serde_json::json!({
        "points": grid.len(),
        "core_sup": sup(Region::Core),
        "neck_sup": sup(Region::Neck),
        "exterior_sup": sup(Region::Exterior),
    }))
}

#[derive(Serialize)]
struct HardyRow {
    trial: usize,
    lhs: f64,
    gradient: f64,
    ratio: f64,
    constant: f64,
    holds: bool,
}

/// Random compactly supported bumps inside a ball of radius `radius`.
pub fn hardy_trials(section: &HardySection, seed: u64) -> Result<Vec<analysis::HardyReport>, AnalysisError> {
    let grid = GridDomain::ball(section.radius, section.spacing).build()?;
    let metric = MetricField::flat();
    let spec = WeightSpec::new(vec![WeightSite { position: [0.0; 3], lambda: 16.0 }], vec![], section.alpha, section.alpha, section.radius)?;
    let bps = crate::exact_fields::BpsSpec::new([0.0; 3], 4.0);
    let conn = SampledPair::from_fn(&grid, |i| crate::exact_fields::eval_bps(&bps, grid.point(i)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reach = 0.9 * section.radius;
    (0..section.samples)
        .map(|trial| {
            let rho = rng.gen_range(0.2..0.6) * reach;
            let off = (reach - rho) / 3f64.sqrt();
            let c: Point = [0, 1, 2].map(|_| rng.gen_range(-off..=off));
            let mut su2 = || Su2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let coef = [su2(), su2(), su2()];
            let power = 2 + trial % 3;
            let u = FormField::from_fn(&grid, 1, |i| {
                let x = grid.point(i);
                let s = norm([x[0] - c[0], x[1] - c[1], x[2] - c[2]]) / rho;
                let b = if s < 1.0 { (1.0 - s * s).powi(power as i32) } else { 0.0 };
                coef.map(|v| v * b)
            });
            let a = (trial % 2 == 0).then_some(&conn.a);
            analysis::hardy_check(&grid, &metric, &u, section.alpha, a, &spec)
        })
        .collect()
}

fn hardy(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let reps = hardy_trials(&cfg.hardy, cfg.seed)?;
    let rows: Vec<HardyRow> = reps
        .iter()
        .enumerate()
        .map(|(trial, r)| HardyRow { trial, lhs: r.lhs, gradient: r.gradient, ratio: r.ratio, constant: r.constant, holds: r.holds(0.05) })
        .collect();
    art.csv("hardy.csv", &rows)?;
    let worst = reps.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let b_min = (0..10_000).map(|i| analysis::b_alpha(-0.5 + 0.5 * i as f64 / 10_000.0)).collect::<Result<Vec<_>, _>>()?;
    Ok(serde_json::json!({
        "worst_ratio": worst,
        "all_hold": rows.iter().all(|r| r.holds),
        "b_alpha_min": b_min.iter().copied().fold(f64::INFINITY, f64::min),
    }))
}

/// Smooth non-BPS background and test 1-form on a flat torus.
pub fn weitzenbock_fields(grid: &Grid, period: f64) -> (SampledPair, FormField) {
    let k = std::f64::consts::TAU / period;
    let pair = SampledPair::from_fn(grid, |i| {
        let [x, y, z] = grid.point(i);
        crate::exact_fields::Su2Pair {
            a: [
                Su2::new(0.3 * (k * y).sin(), 0.1, 0.2 * (k * z).cos()),
                Su2::new(0.1 * (k * z).cos(), 0.2 * (k * x).sin(), 0.0),
                Su2::new(0.0, 0.1 * (k * x).cos(), 0.3 * (k * y).sin()),
            ],
            phi: Su2::new(1.0 + 0.2 * (k * x).cos(), 0.3 * (k * y).sin(), 0.2 * (k * z).sin()),
        }
    });
    let u = FormField::from_fn(grid, 1, |i| {
        let [x, y, z] = grid.point(i);
        [
            Su2::new((k * z).sin(), 0.5 * (k * y).cos(), 0.0),
            Su2::new(0.0, (k * x).cos(), 0.3 * (k * z).sin()),
            Su2::new(0.2 * (k * y).sin(), 0.0, (k * x).sin()),
        ]
    });
    (pair, u)
}

#[derive(Serialize)]
struct WeitzRow {
    points_per_axis: usize,
    h: f64,
    residual: f64,
    order: Option<f64>,
}

fn weitzenbock(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let w = &cfg.weitzenbock;
    let mut hs = Vec::new();
    let mut res = Vec::new();
    for &n in &w.resolutions {
        let grid = GridDomain::torus(w.period, n).build().map_err(|e| CliError::Validation(e.to_string()))?;
        let (pair, u) = weitzenbock_fields(&grid, w.period);
        res.push(analysis::weitzenbock_residual(&grid, &pair, &u)?);
        hs.push(grid.h);
    }
    let orders = analysis::observed_orders(&hs, &res);
    let rows: Vec<WeitzRow> = w
        .resolutions
        .iter()
        .enumerate()
        .map(|(i, &n)| WeitzRow { points_per_axis: n, h: hs[i], residual: res[i], order: i.checked_sub(1).map(|j| orders[j]) })
        .collect();
    art.csv("weitzenbock.csv", &rows)?;
    Ok(serde_json::json!({ "orders": orders }))
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    energy: f64,
    gradient: f64,
}

fn linear_solve(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let problem = build_problem(cfg, cfg.glue.lambda)?;
    let op = LinearizedOperator::new(&problem.grid, &problem.metric, &problem.pair)?;
    let mut e0 = analysis::bogomolny_error(&problem.grid, &problem.pair, &problem.metric);
    e0.restrict(&problem.mask);
    let sol = linear_system::conjugate_gradient(&op, &e0, Some(&problem.mask), &cfg.solver, None)?;
    let rows: Vec<TraceRow> = sol
        .report
        .energy_trace
        .iter()
        .zip(&sol.report.gradient_trace)
        .enumerate()
        .map(|(iteration, (&energy, &gradient))| TraceRow { iteration, energy, gradient })
        .collect();
    art.csv("cg_trace.csv", &rows)?;
    let w22 = linear_system::sobolev_22(&op, &sol.u);
    let f_norm = analysis::weighted_norm(&problem.grid, &problem.metric, &e0, 2.0, &problem.spec.shifted(-2.0), 0, Some(&problem.pair))?;
    Ok(serde_json::json!({
        "iterations": sol.report.iterations,
        "relative_gradient": sol.report.relative_gradient,
        "solution_w22": w22,
        "rhs_weighted_l2": f_norm,
    }))
}

#[derive(Serialize)]
struct PicardRow {
    lambda: f64,
    n: usize,
    f_norm: f64,
    update: f64,
}

#[derive(Serialize)]
struct DeformRow {
    lambda: f64,
    k: f64,
    e_norm: f64,
    gate_bound: f64,
    gate_passed: bool,
    f_norm: f64,
    f_bound_holds: bool,
    residual_before: f64,
    residual_after: f64,
    residual_improved: bool,
    contraction: f64,
    deformation_norm: f64,
    slice_defect: f64,
}

fn deform(cfg: &ExperimentConfig, art: &mut Artifacts, vtk: bool) -> Result<serde_json::Value, CliError> {
    let lambdas = if cfg.deform_lambdas.is_empty() { vec![cfg.glue.lambda] } else { cfg.deform_lambdas.clone() };
    let mut trace = Vec::new();
    let mut rows = Vec::new();
    let mut first_error = None;
    for (i, &lambda) in lambdas.iter().enumerate() {
        let problem = build_problem(cfg, lambda)?;
        let mut dc = cfg.deform.clone();
        dc.seed = cfg.seed.wrapping_add(i as u64);
        let (k, res) = match deformation::deform(&problem, &dc) {
            Ok(v) => v,
            Err(e) => {
                log::error!("λ = {lambda}: {e}");
                first_error.get_or_insert(e);
                continue;
            }
        };
        let r = &res.report;
        trace.extend(r.history.iter().map(|s| PicardRow { lambda, n: s.n, f_norm: s.f_norm, update: s.update }));
        rows.push(DeformRow {
            lambda,
            k: k.k,
            e_norm: r.e_norm,
            gate_bound: r.gate_bound,
            gate_passed: r.gate_passed,
            f_norm: r.f_norm,
            f_bound_holds: r.f_bound_holds,
            residual_before: r.residual_before,
            residual_after: r.residual_after,
            residual_improved: r.residual_improved,
            contraction: r.contraction,
            deformation_norm: r.deformation_norm,
            slice_defect: r.slice_defect,
        });
        if vtk && i == 0 {
            let grid = &problem.grid;
            let after = analysis::bogomolny_error(grid, &res.pair, &problem.metric);
            let before = analysis::bogomolny_error(grid, &problem.pair, &problem.metric);
            art.vtk(
                "deformed.vtk",
                grid,
                &[
                    ("higgs_norm", res.pair.phi.values.iter().map(|v| v.norm()).collect()),
                    ("error_before", magnitudes(grid, &before)),
                    ("error_after", magnitudes(grid, &after)),
                ],
            )?;
        }
    }
    art.csv("picard_trace.csv", &trace)?;
    art.csv("deform.csv", &rows)?;
    if let Some(e) = first_error {
        return Err(e.into());
    }
    let norms: Vec<f64> = rows.iter().map(|r| r.deformation_norm).collect();
    Ok(serde_json::json!({
        "residual_improvement": rows.iter().map(|r| r.residual_before / r.residual_after).collect::<Vec<_>>(),
        "deformation_norms": norms,
        "monotone": norms.windows(2).all(|w| w[1] < w[0]),
    }))
}

fn sweep(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value, CliError> {
    let curved = analysis::error_smallness_sweep(&cfg.sweep)?;
    let flat = analysis::error_smallness_sweep(&SweepConfig { curvature: 0.0, ..cfg.sweep.clone() })?;
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        eps: f64,
        weighted_l3: f64,
        flat_weighted_l3: f64,
        core_sup: f64,
        neck_sup: f64,
        outer_sup: f64,
    }
    let rows: Vec<Row> = curved
        .rows
        .iter()
        .zip(&flat.rows)
        .map(|(c, f)| Row {
            lambda: c.lambda,
            eps: c.eps,
            weighted_l3: c.weighted_l3,
            flat_weighted_l3: f.weighted_l3,
            core_sup: c.core_sup,
            neck_sup: c.neck_sup,
            outer_sup: c.outer_sup,
        })
        .collect();
    art.csv("sweep.csv", &rows)?;
    Ok(serde_json::json!({
        "exponent": curved.exponent,
        "strictly_decreasing": curved.strictly_decreasing,
        "flat_exponent": flat.exponent,
    }))
}
