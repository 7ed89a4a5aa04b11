//! Phantom setup and the experiment pipelines.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ProjectionKind, SignalSource};
use crate::error::{Error, Result};
use crate::forward::{
    assemble, make_patterns, read_measurements_csv, simulate, write_measurements_csv, ConductivityField, ContactState,
    CurrentPatternSet, ForwardSolution, ForwardSystem,
};
use crate::mesh::{generate_cylinder_tank, load_mesh, ElectrodeLayout, Mesh, MoveDirection};
use crate::projection::{
    build_projection, frobenius_discrepancy, principal_angles, signal_bundle, ProjectionOperator, SignalBundle,
    SignalNorms,
};
use crate::reconstruct::{build_problem, ReconstructionResult, Reconstructor};
use crate::regularization::Regularizer;
use crate::sampling::{draw_contacts, draw_rng, make_noise, region_nodes, LognormalSampler, NoiseModel, RNG_ALGORITHM};
use crate::sensitivity::{JacobianBlock, Sensitivity};

/// Mesh and electrodes of one discretization of the phantom.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub mesh: Mesh,
    pub layout: ElectrodeLayout,
}

impl Phantom {
    /// Nodes of the random-field region (label 1).
    pub fn region(&self) -> Vec<usize> {
        region_nodes(&self.mesh, 1)
    }
}

/// Inversion and study mesh. Generated tanks label the random-field
/// sub-cylinder as region 1.
pub fn inversion_phantom(cfg: &ExperimentConfig) -> Result<Phantom> {
    let (mesh, layout) = match &cfg.mesh_file {
        Some(path) => load_mesh(path)?,
        None => {
            let mut spec = cfg.tank.clone();
            spec.inner_region_radius = Some(cfg.random.region_radius);
            generate_cylinder_tank(&spec)?
        }
    };
    Ok(Phantom { mesh, layout })
}

/// Mesh the synthetic measurements are simulated on.
pub fn data_phantom(cfg: &ExperimentConfig) -> Result<Phantom> {
    let (mesh, layout) = match (&cfg.data_mesh_file, &cfg.mesh_file) {
        (Some(path), _) => load_mesh(path)?,
        (None, Some(path)) => load_mesh(path)?,
        (None, None) => {
            let mut spec = cfg.tank.clone();
            spec.refinement_level = cfg.data_level();
            spec.inner_region_radius = Some(cfg.random.region_radius);
            generate_cylinder_tank(&spec)?
        }
    };
    Ok(Phantom { mesh, layout })
}

fn layout_radius(layout: &ElectrodeLayout) -> Result<f64> {
    let r = layout.electrode(0).radius;
    if layout.electrodes().iter().any(|e| (e.radius - r).abs() > 1e-12 * r) {
        return Err(Error::Config("electrodes of different radii are not supported".into()));
    }
    Ok(r)
}

/// Reference contact state `ζ₀`.
pub fn reference_contact(cfg: &ExperimentConfig, layout: &ElectrodeLayout) -> Result<ContactState> {
    let m = layout.len();
    let peaks = match &cfg.background.contact_peaks {
        Some(p) if p.len() != m => {
            return Err(Error::Config(format!("{} contact peaks given for {m} electrodes", p.len())));
        }
        Some(p) => p.clone(),
        None => vec![cfg.background.contact_peak; m],
    };
    ContactState::new(peaks, layout_radius(layout)?, cfg.background.tau)
}

/// `ζ` after the configured worsening; `ζ₀` if there is none.
pub fn perturbed_contact(cfg: &ExperimentConfig, reference: &ContactState) -> Result<ContactState> {
    let Some(cp) = &cfg.contact_perturbation else {
        return Ok(reference.clone());
    };
    let mut peaks = reference.peaks().to_vec();
    for &m in &cp.electrodes {
        let p = peaks
            .get_mut(m)
            .ok_or_else(|| Error::Config(format!("perturbed electrode {m} does not exist")))?;
        *p *= cp.multiplier;
    }
    reference.with_peaks(peaks)
}

pub fn reference_sigma(cfg: &ExperimentConfig, mesh: &Mesh) -> Result<ConductivityField> {
    ConductivityField::constant(mesh.n_nodes(), cfg.background.sigma)
}

/// `σ₀` with the inclusion conductivity on the nodes inside the inclusion.
pub fn phantom_sigma(cfg: &ExperimentConfig, mesh: &Mesh) -> Result<ConductivityField> {
    let Some(inc) = &cfg.inclusion else {
        return reference_sigma(cfg, mesh);
    };
    let values = mesh
        .nodes()
        .iter()
        .map(|x| if inc.contains(x) { inc.conductivity } else { cfg.background.sigma })
        .collect();
    ConductivityField::new(values)
}

pub fn patterns(cfg: &ExperimentConfig, layout: &ElectrodeLayout) -> Result<CurrentPatternSet> {
    make_patterns(cfg.patterns, layout.len())
}

/// Report header shared by every pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub rng: String,
    pub version: String,
    pub mesh_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_mesh_hash: Option<String>,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig, mesh: &Mesh, data_mesh: Option<&Mesh>) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            rng: RNG_ALGORITHM.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            mesh_hash: mesh.content_hash(),
            data_mesh_hash: data_mesh.map(|m| m.content_hash()),
        }
    }
}

/// Stream indices of the measurement noise, kept clear of the draw indices.
const NOISE_STREAM: u64 = 1 << 63;

/// The four measurement vectors of a difference experiment.
#[derive(Debug, Clone)]
pub struct Measurements {
    /// `𝒰(σ₀, ζ₀)`.
    pub background: DVector<f64>,
    /// `𝒰(σ, ζ₀)`.
    pub sigma_only: DVector<f64>,
    /// `𝒰(σ₀, ζ)`.
    pub zeta_only: DVector<f64>,
    /// `𝒰(σ, ζ)`.
    pub both: DVector<f64>,
    pub electrodes: usize,
    /// Scaled from the range of the background measurement.
    pub noise: NoiseModel,
}

pub const NOISE_FILE: &str = "noise.json";

pub const MEASUREMENT_FILES: [&str; 4] = ["u_background.csv", "u_sigma.csv", "u_zeta.csv", "u_both.csv"];

impl Measurements {
    fn vectors(&self) -> [&DVector<f64>; 4] {
        [&self.background, &self.sigma_only, &self.zeta_only, &self.both]
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, v) in MEASUREMENT_FILES.iter().zip(self.vectors()) {
            let f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            write_measurements_csv(f, v, self.electrodes)?;
        }
        std::fs::write(dir.join(NOISE_FILE), serde_json::to_string_pretty(&self.noise).expect("noise serializes"))?;
        Ok(())
    }

    /// Reads the files written by [`Self::write_dir`]. Without a noise file
    /// the noise model is rebuilt from the background measurement.
    pub fn read_dir(dir: &Path, noise_fraction: f64) -> Result<Self> {
        let mut vs: Vec<DVector<f64>> = Vec::new();
        let mut m = 0;
        for name in MEASUREMENT_FILES {
            let path = dir.join(name);
            let f = std::fs::File::open(&path)
                .map_err(|e| Error::Config(format!("missing measurement file {}: {e}", path.display())))?;
            let (v, mm) = read_measurements_csv(std::io::BufReader::new(f))?;
            if !vs.is_empty() && (mm != m || v.len() != vs[0].len()) {
                return Err(Error::Validation(format!("{} does not match the other measurement files", path.display())));
            }
            m = mm;
            vs.push(v);
        }
        let noise_path = dir.join(NOISE_FILE);
        let noise = if noise_path.exists() {
            serde_json::from_str(&std::fs::read_to_string(&noise_path)?).map_err(|e| Error::Parse(e.to_string()))?
        } else {
            make_noise(&vs[0], noise_fraction)?
        };
        let [background, sigma_only, zeta_only, both]: [DVector<f64>; 4] = vs.try_into().expect("four files");
        Ok(Self { background, sigma_only, zeta_only, both, electrodes: m, noise })
    }
}

/// Simulates the four measurements on `phantom` and optionally adds noise.
pub fn simulate_measurements(cfg: &ExperimentConfig, phantom: &Phantom) -> Result<Measurements> {
    let (mesh, layout) = (&phantom.mesh, &phantom.layout);
    let pats = patterns(cfg, layout)?;
    let s0 = reference_sigma(cfg, mesh)?;
    let s1 = phantom_sigma(cfg, mesh)?;
    let c0 = reference_contact(cfg, layout)?;
    let c1 = perturbed_contact(cfg, &c0)?;
    let cases = [(&s0, &c0), (&s1, &c0), (&s0, &c1), (&s1, &c1)];
    let mut out: Vec<DVector<f64>> =
        cases.par_iter().map(|(s, c)| simulate(mesh, layout, s, c, &pats)).collect::<Result<_>>()?;
    let noise = make_noise(&out[0], cfg.noise.fraction)?;
    if cfg.noise.add {
        for (k, v) in out.iter_mut().enumerate() {
            let e = noise.sample(v.len(), &mut draw_rng(cfg.seed, NOISE_STREAM + k as u64));
            *v += e;
        }
    }
    let [background, sigma_only, zeta_only, both]: [DVector<f64>; 4] = out.try_into().expect("four cases");
    Ok(Measurements { background, sigma_only, zeta_only, both, electrodes: layout.len(), noise })
}

/// Nuisance Jacobian blocks spanned out by a projection kind.
pub fn nuisance_blocks(sens: &Sensitivity<'_, '_>, kind: ProjectionKind) -> Result<Vec<JacobianBlock>> {
    Ok(match kind {
        ProjectionKind::None => Vec::new(),
        ProjectionKind::Zeta => vec![sens.zeta()],
        ProjectionKind::ZetaPhi => vec![sens.zeta(), sens.position(MoveDirection::Azimuth)?],
        ProjectionKind::ZetaThetaPhi => {
            vec![sens.zeta(), sens.position(MoveDirection::Polar)?, sens.position(MoveDirection::Azimuth)?]
        }
    })
}

/// `P` for a projection kind; `None` for [`ProjectionKind::None`].
pub fn nuisance_projection(sens: &Sensitivity<'_, '_>, kind: ProjectionKind) -> Result<Option<ProjectionOperator>> {
    let blocks = nuisance_blocks(sens, kind)?;
    if blocks.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&JacobianBlock> = blocks.iter().collect();
    build_projection(&refs).map(Some)
}

/// Forward system and solution at `(σ₀, ζ₀)` on a phantom.
pub fn linearize<'a>(
    cfg: &ExperimentConfig,
    phantom: &'a Phantom,
) -> Result<(ForwardSystem<'a>, ForwardSolution)> {
    let sigma = reference_sigma(cfg, &phantom.mesh)?;
    let contact = reference_contact(cfg, &phantom.layout)?;
    let system = assemble(&phantom.mesh, &phantom.layout, &sigma, &contact)?;
    let solution = system.solve(&patterns(cfg, &phantom.layout)?)?;
    Ok((system, solution))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleDraw {
    pub draw: usize,
    pub theta_max_deg: f64,
    pub err_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max), mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnglesReport {
    pub provenance: Provenance,
    pub projection: ProjectionKind,
    pub requested_draws: usize,
    pub draws: Vec<AngleDraw>,
    pub theta_max_deg: Option<Summary>,
    pub err_f: Option<Summary>,
    /// First draw failure; `draws` holds the draws before it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnglesReport {
    /// `draw,theta_max_deg,err_F` rows followed by `max`, `mean` and `std`.
    pub fn write_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        writeln!(out, "draw,theta_max_deg,err_F")?;
        for d in &self.draws {
            writeln!(out, "{},{:e},{:e}", d.draw, d.theta_max_deg, d.err_f)?;
        }
        if let (Some(t), Some(e)) = (self.theta_max_deg, self.err_f) {
            writeln!(out, "max,{:e},{:e}", t.max, e.max)?;
            writeln!(out, "mean,{:e},{:e}", t.mean, e.mean)?;
            writeln!(out, "std,{:e},{:e}", t.std, e.std)?;
        }
        Ok(())
    }
}

fn stacked(blocks: &[JacobianBlock]) -> Result<DMatrix<f64>> {
    let refs: Vec<&JacobianBlock> = blocks.iter().collect();
    Ok(JacobianBlock::hstack(&refs)?.matrix)
}

/// Principal-angle study: for random `(σ, ζ)` draws, the largest angle
/// between the ranges of `P(σ₀,ζ₀)` and `P(σ,ζ)` and the relative change of
/// the nuisance Jacobian.
pub fn angles_study(cfg: &ExperimentConfig, phantom: &Phantom) -> Result<AnglesReport> {
    let kind = cfg.random.angle_projection;
    let (system, solution) = linearize(cfg, phantom)?;
    let sens0 = Sensitivity::new(&system, &solution)?;
    let blocks0 = nuisance_blocks(&sens0, kind)?;
    let j0 = stacked(&blocks0)?;
    let p0 = build_projection(&blocks0.iter().collect::<Vec<_>>())?;
    let region = phantom.region();
    let sampler = LognormalSampler::new(&cfg.random.draws, &phantom.mesh, &region)?;
    let pats = &solution.patterns;
    let s0 = system.sigma().clone();
    let c0 = system.contact().clone();

    let results: Vec<Result<AngleDraw>> = (0..cfg.random.n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = draw_rng(cfg.seed, d as u64);
            let peaks = draw_contacts(&cfg.random.draws, phantom.layout.len(), &mut rng);
            let sigma = sampler.draw(&s0, &mut rng)?;
            let contact = c0.with_peaks(peaks)?;
            let sys = assemble(&phantom.mesh, &phantom.layout, &sigma, &contact)?;
            let sol = sys.solve(pats)?;
            let blocks = nuisance_blocks(&Sensitivity::new(&sys, &sol)?, kind)?;
            let p = build_projection(&blocks.iter().collect::<Vec<_>>())?;
            Ok(AngleDraw {
                draw: d,
                theta_max_deg: principal_angles(&p0, &p)?.max(),
                err_f: frobenius_discrepancy(&stacked(&blocks)?, &j0)?,
            })
        })
        .collect();
    let mut draws = Vec::new();
    let mut error = None;
    for (d, r) in results.into_iter().enumerate() {
        match r {
            Ok(a) => draws.push(a),
            Err(e) => {
                error = Some(format!("draw {d}: {e}"));
                break;
            }
        }
    }
    let summarize = |f: fn(&AngleDraw) -> f64| {
        (!draws.is_empty()).then(|| Summary::of(&draws.iter().map(f).collect::<Vec<_>>()))
    };
    Ok(AnglesReport {
        provenance: Provenance::new(cfg, &phantom.mesh, None),
        projection: kind,
        requested_draws: cfg.random.n_draws,
        theta_max_deg: summarize(|a| a.theta_max_deg),
        err_f: summarize(|a| a.err_f),
        draws,
        error,
    })
}

/// Ratios checked by the signal study for one projection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalRatios {
    pub projection: String,
    /// `‖P s(ζ)‖/‖s(ζ)‖`.
    pub zeta_residual: f64,
    /// `‖P s(σ)‖/‖s(σ)‖`.
    pub sigma_retention: f64,
    /// `|‖P s(σ,ζ)‖ − ‖P s(σ)‖| / ‖P s(σ)‖`.
    pub combined_gap: f64,
}

impl SignalRatios {
    fn from_norms(raw: &SignalNorms, projected: &SignalNorms) -> Self {
        Self {
            projection: projected.label.clone(),
            zeta_residual: projected.zeta / raw.zeta,
            sigma_retention: projected.sigma / raw.sigma,
            combined_gap: (projected.combined - projected.sigma).abs() / projected.sigma,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SignalReport {
    pub provenance: Provenance,
    pub source: SignalSource,
    /// Norm table averaged over the draws (a single row set for a phantom).
    pub norms: Vec<SignalNorms>,
    /// Ratios of the averaged norms.
    pub ratios: Vec<SignalRatios>,
    /// Ratios of every draw.
    pub draw_ratios: Vec<Vec<SignalRatios>>,
    /// Signals of the first draw for plotting.
    #[serde(skip)]
    pub dump: Option<SignalBundle>,
    #[serde(skip)]
    pub electrodes: usize,
}

impl SignalReport {
    /// Norm table with one row per projection.
    pub fn write_norms_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        writeln!(out, "projection,s_sigma,s_zeta,s_combined")?;
        for r in &self.norms {
            writeln!(out, "{},{:e},{:e},{:e}", r.label, r.sigma, r.zeta, r.combined)?;
        }
        Ok(())
    }

    /// Every component of the raw and projected signals of the first draw.
    pub fn write_dump_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        let Some(b) = &self.dump else { return Ok(()) };
        let mut header = vec!["pattern".to_string(), "electrode".into(), "s_sigma".into(), "s_zeta".into(), "s_combined".into()];
        for (label, _) in &b.projected {
            for s in ["sigma", "zeta", "combined"] {
                header.push(format!("{label}_s_{s}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        let m = self.electrodes;
        for i in 0..b.s_sigma.len() {
            let mut row = vec![(i / m).to_string(), (i % m).to_string()];
            for v in [&b.s_sigma, &b.s_zeta, &b.s_combined] {
                row.push(format!("{:e}", v[i]));
            }
            for (_, vs) in &b.projected {
                for v in vs {
                    row.push(format!("{:e}", v[i]));
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn mean_norms(tables: &[Vec<SignalNorms>]) -> Vec<SignalNorms> {
    let n = tables.len() as f64;
    tables[0]
        .iter()
        .enumerate()
        .map(|(i, r)| SignalNorms {
            label: r.label.clone(),
            sigma: tables.iter().map(|t| t[i].sigma).sum::<f64>() / n,
            zeta: tables.iter().map(|t| t[i].zeta).sum::<f64>() / n,
            combined: tables.iter().map(|t| t[i].combined).sum::<f64>() / n,
        })
        .collect()
}

fn ratios(table: &[SignalNorms]) -> Vec<SignalRatios> {
    table[1..].iter().map(|r| SignalRatios::from_norms(&table[0], r)).collect()
}

/// Signal-suppression study with `P_ζ` and `P_{ζ,φ}` evaluated at
/// `(σ₀, ζ₀)` on `phantom`. `measurements` are used for the phantom
/// source and simulated on `phantom` when absent.
pub fn signal_study(
    cfg: &ExperimentConfig,
    phantom: &Phantom,
    measurements: Option<&Measurements>,
) -> Result<SignalReport> {
    let (system, solution) = linearize(cfg, phantom)?;
    let sens = Sensitivity::new(&system, &solution)?;
    let kinds = [ProjectionKind::Zeta, ProjectionKind::ZetaPhi];
    let projections: Vec<(&str, ProjectionOperator)> = kinds
        .iter()
        .map(|&k| Ok((k.label(), nuisance_projection(&sens, k)?.expect("nontrivial projection"))))
        .collect::<Result<_>>()?;
    let proj_refs: Vec<(&str, &ProjectionOperator)> = projections.iter().map(|(l, p)| (*l, p)).collect();

    let bundles: Vec<SignalBundle> = match cfg.random.signal_source {
        SignalSource::Phantom => {
            let owned;
            let meas = match measurements {
                Some(m) => m,
                None => {
                    owned = simulate_measurements(cfg, phantom)?;
                    &owned
                }
            };
            vec![signal_bundle(&meas.background, &meas.sigma_only, &meas.zeta_only, &meas.both, &proj_refs)?]
        }
        SignalSource::Random => {
            if cfg.random.signal_draws == 0 {
                return Err(Error::Config("signal study needs at least one draw".into()));
            }
            let region = phantom.region();
            let sampler = LognormalSampler::new(&cfg.random.draws, &phantom.mesh, &region)?;
            let u0 = solution.measurements();
            let (s0, c0) = (system.sigma(), system.contact());
            let pats = &solution.patterns;
            (0..cfg.random.signal_draws)
                .into_par_iter()
                .map(|d| {
                    let mut rng = draw_rng(cfg.seed, d as u64);
                    let peaks = draw_contacts(&cfg.random.draws, phantom.layout.len(), &mut rng);
                    let sigma = sampler.draw(s0, &mut rng)?;
                    let contact = c0.with_peaks(peaks)?;
                    let (mesh, layout) = (&phantom.mesh, &phantom.layout);
                    let us = simulate(mesh, layout, &sigma, c0, pats)?;
                    let uz = simulate(mesh, layout, s0, &contact, pats)?;
                    let ub = simulate(mesh, layout, &sigma, &contact, pats)?;
                    signal_bundle(&u0, &us, &uz, &ub, &proj_refs)
                })
                .collect::<Result<_>>()?
        }
    };
    let tables: Vec<Vec<SignalNorms>> = bundles.iter().map(|b| b.norms()).collect();
    if tables.iter().any(|t| t[0].sigma == 0.0 || t[0].zeta == 0.0) {
        return Err(Error::Domain("a σ- or ζ-signal is zero; the phantom needs both perturbations".into()));
    }
    let norms = mean_norms(&tables);
    Ok(SignalReport {
        provenance: Provenance::new(cfg, &phantom.mesh, None),
        source: cfg.random.signal_source,
        ratios: ratios(&norms),
        draw_ratios: tables.iter().map(|t| ratios(t)).collect(),
        norms,
        dump: bundles.into_iter().next(),
        electrodes: phantom.layout.len(),
    })
}

/// Localization and artifact measures against the known inclusion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhantomMetrics {
    /// `|w|`-weighted center of mass of the top nodes.
    pub center_of_mass: [f64; 3],
    /// Horizontal distance of the center of mass from the inclusion axis.
    pub localization_error: f64,
    pub localized: bool,
    /// `Σ w²` over nodes far from the inclusion.
    pub artifact_energy: f64,
}

pub fn phantom_metrics(cfg: &ExperimentConfig, mesh: &Mesh, w: &[f64]) -> Option<PhantomMetrics> {
    let inc = cfg.inclusion.as_ref()?;
    let th = &cfg.thresholds;
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    let k = ((w.len() as f64 * th.localization_fraction).ceil() as usize).clamp(1, w.len());
    let mut com = nalgebra::Vector3::zeros();
    let mut total = 0.0;
    for &i in &idx[..k] {
        com += mesh.nodes()[i] * w[i].abs();
        total += w[i].abs();
    }
    if total > 0.0 {
        com /= total;
    }
    let localization_error = inc.axis_distance(&com);
    let artifact_energy = mesh
        .nodes()
        .iter()
        .zip(w)
        .filter(|(x, _)| inc.axis_distance(x) > th.artifact_radii * inc.radius)
        .map(|(_, v)| v * v)
        .sum();
    Some(PhantomMetrics {
        center_of_mass: [com.x, com.y, com.z],
        localization_error,
        localized: total > 0.0 && localization_error <= th.localization_radii * inc.radius,
        artifact_energy,
    })
}

#[derive(Debug, Clone)]
pub struct ReconstructionRun {
    pub projection: ProjectionKind,
    pub result: ReconstructionResult,
    pub metrics: Option<PhantomMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub projection: ProjectionKind,
    pub final_objective: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PhantomMetrics>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub provenance: Provenance,
    pub runs: Vec<ReconstructionRun>,
}

impl ReconstructionReport {
    pub fn summary(&self) -> serde_json::Value {
        let runs: Vec<RunSummary> = self
            .runs
            .iter()
            .map(|r| RunSummary {
                projection: r.projection,
                final_objective: *r.result.objective.last().unwrap_or(&f64::NAN),
                iterations: r.result.history.len() - 1,
                error: r.result.meta.error.clone(),
                metrics: r.metrics.clone(),
            })
            .collect();
        serde_json::json!({ "provenance": self.provenance, "runs": runs })
    }

    pub fn run(&self, kind: ProjectionKind) -> Option<&ReconstructionRun> {
        self.runs.iter().find(|r| r.projection == kind)
    }
}

/// Reconstructs `w` from `y = 𝒰_measured − 𝒰(σ₀,ζ₀)`, the reference
/// simulated on the inversion phantom, once per configured projection.
pub fn reconstruct(cfg: &ExperimentConfig, inversion: &Phantom, measured: &Measurements) -> Result<ReconstructionReport> {
    let (system, solution) = linearize(cfg, inversion)?;
    let u0 = solution.measurements();
    if measured.both.len() != u0.len() || measured.electrodes != inversion.layout.len() {
        return Err(Error::Validation(format!(
            "measurements have {} values on {} electrodes, the model {} on {}",
            measured.both.len(),
            measured.electrodes,
            u0.len(),
            inversion.layout.len()
        )));
    }
    let y = &measured.both - &u0;
    let sens = Sensitivity::new(&system, &solution)?;
    let j_sigma = sens.sigma();
    let rc = &cfg.reconstruction;
    let prior = Regularizer::new(&inversion.mesh, rc.smoothing, rc.epsilon)?;
    let mut runs = Vec::new();
    for &kind in &rc.projections {
        let p = nuisance_projection(&sens, kind)?;
        let problem = build_problem(&j_sigma, &y, &measured.noise, p.as_ref())?;
        let solver = Reconstructor::new(&problem, &prior, rc.gamma())?;
        let mut result = match rc.algorithm {
            super::config::Algorithm::OneStep => solver.one_step()?,
            super::config::Algorithm::LaggedDiffusivity => solver.lagged_diffusivity(rc.n_iter)?,
        };
        result.meta.seed = Some(cfg.seed);
        result.meta.projection = kind.label().into();
        let metrics = phantom_metrics(cfg, &inversion.mesh, &result.w);
        runs.push(ReconstructionRun { projection: kind, result, metrics });
    }
    Ok(ReconstructionReport { provenance: Provenance::new(cfg, &inversion.mesh, None), runs })
}

/// Samples of a nodal field on the plane `z = height`: the crossing points of
/// mesh edges with the plane and nodes lying on it, as `[x, y, value]`.
pub fn slice(mesh: &Mesh, field: &[f64], height: f64) -> Result<Vec<[f64; 3]>> {
    if field.len() != mesh.n_nodes() {
        return Err(Error::Contract(format!("field has {} values for {} nodes", field.len(), mesh.n_nodes())));
    }
    let (lo, hi) = mesh.bounding_box();
    if !(height >= lo.z && height <= hi.z) {
        return Err(Error::Domain(format!("slice height {height} outside the mesh [{}, {}]", lo.z, hi.z)));
    }
    let x = mesh.nodes();
    let mut edges = std::collections::BTreeSet::new();
    let mut on_plane = std::collections::BTreeSet::new();
    for tet in mesh.tets() {
        for a in 0..4 {
            if x[tet[a]].z == height {
                on_plane.insert(tet[a]);
            }
            for b in a + 1..4 {
                let (i, j) = (tet[a].min(tet[b]), tet[a].max(tet[b]));
                if (x[i].z - height) * (x[j].z - height) < 0.0 {
                    edges.insert((i, j));
                }
            }
        }
    }
    let mut out: Vec<[f64; 3]> = on_plane.into_iter().map(|i| [x[i].x, x[i].y, field[i]]).collect();
    for (i, j) in edges {
        let t = (height - x[i].z) / (x[j].z - x[i].z);
        let p = x[i] + (x[j] - x[i]) * t;
        out.push([p.x, p.y, field[i] + t * (field[j] - field[i])]);
    }
    Ok(out)
}

pub fn write_slice_csv(mut out: impl std::io::Write, samples: &[[f64; 3]]) -> Result<()> {
    writeln!(out, "x,y,value")?;
    for s in samples {
        writeln!(out, "{:e},{:e},{:e}", s[0], s[1], s[2])?;
    }
    Ok(())
}

/// Reads a `node,value` reconstruction file.
pub fn read_nodal_csv(input: impl std::io::BufRead) -> Result<Vec<f64>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "node,value" {
        return Err(Error::Parse(format!("expected header `node,value`, found `{header}`")));
    }
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (node, value) = line.split_once(',').ok_or_else(|| Error::Parse(format!("line {}: `{line}`", k + 2)))?;
        let node: usize = node.trim().parse().map_err(|_| Error::Parse(format!("line {}: bad node `{node}`", k + 2)))?;
        if node != values.len() {
            return Err(Error::Parse(format!("line {}: node {node} out of order", k + 2)));
        }
        values.push(value.trim().parse().map_err(|_| Error::Parse(format!("line {}: bad value `{value}`", k + 2)))?);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box_mesh;

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 6.0]);
        assert_eq!(s.max, 6.0);
        assert_eq!(s.mean, 3.0);
        assert!((s.std - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[2.5]).std, 0.0);
    }

    #[test]
    fn slice_of_linear_field_is_exact() {
        let mesh = generate_box_mesh([1.0, 1.0, 1.0], [3, 3, 3]).unwrap();
        let f: Vec<f64> = mesh.nodes().iter().map(|x| 2.0 * x.x - x.y + 3.0 * x.z).collect();
        let s = slice(&mesh, &f, 0.5).unwrap();
        assert!(!s.is_empty());
        for p in &s {
            assert!((p[2] - (2.0 * p[0] - p[1] + 1.5)).abs() < 1e-12);
        }
        assert!(matches!(slice(&mesh, &f, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn nodal_csv_round_trip() {
        let text = "node,value\n0,1.5e0\n1,-2e-3\n";
        assert_eq!(read_nodal_csv(text.as_bytes()).unwrap(), vec![1.5, -2e-3]);
        assert!(matches!(read_nodal_csv("node,value\n1,2\n".as_bytes()), Err(Error::Parse(_))));
    }
}
