use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eitproj_core::harness::{self, ExperimentConfig, Measurements, ProjectionKind};
use eitproj_core::mesh::{load_mesh, save_mesh};
use eitproj_core::sensitivity::{JacobianKind, Sensitivity};
use eitproj_core::{Error, Result};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "eitproj", version, about = "Contact-robust EIT experiments on synthetic tank phantoms")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the phantom mesh and write it as JSON.
    MeshGen {
        /// Write the finer data mesh instead of the inversion mesh.
        #[arg(long)]
        data: bool,
    },
    /// Simulate the background, σ-only, ζ-only and combined measurements.
    Simulate,
    /// Export a Jacobian at the reference parameters.
    Jacobian {
        #[arg(long, value_enum)]
        kind: JacobianArg,
    },
    /// Export a nuisance projector at the reference parameters.
    Project {
        #[arg(long, value_enum)]
        kind: ProjectionArg,
    },
    /// Principal angles between projector ranges over random draws.
    AnglesStudy {
        /// Overrides the number of draws of the configuration.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Norms of raw and projected σ-, ζ- and combined signals.
    SignalStudy {
        /// Read measurements written by `simulate` instead of simulating.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Linearized reconstruction for every configured projection.
    Reconstruct {
        /// Read measurements written by `simulate` instead of simulating.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Sample a nodal field on a horizontal plane.
    Slice {
        /// Mesh JSON the field lives on.
        #[arg(long)]
        mesh: PathBuf,
        /// `node,value` CSV.
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        height: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum JacobianArg {
    Sigma,
    Zeta,
    Theta,
    Phi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProjectionArg {
    Zeta,
    ZetaPhi,
    ZetaThetaPhi,
}

impl From<ProjectionArg> for ProjectionKind {
    fn from(p: ProjectionArg) -> Self {
        match p {
            ProjectionArg::Zeta => ProjectionKind::Zeta,
            ProjectionArg::ZetaPhi => ProjectionKind::ZetaPhi,
            ProjectionArg::ZetaThetaPhi => ProjectionKind::ZetaThetaPhi,
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut f = create(dir, name)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(f)?;
    Ok(())
}

fn measurements(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Measurements> {
    match data_dir {
        Some(dir) => Measurements::read_dir(dir, cfg.noise.fraction),
        None => harness::simulate_measurements(cfg, &harness::data_phantom(cfg)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out_dir.as_path();
    std::fs::create_dir_all(out)?;

    match cli.command {
        Command::MeshGen { data } => {
            let phantom = if data { harness::data_phantom(&cfg)? } else { harness::inversion_phantom(&cfg)? };
            let name = if data { "data_mesh.json" } else { "mesh.json" };
            save_mesh(out.join(name), &phantom.mesh, &phantom.layout)?;
            log::info!("{} nodes, {} tetrahedra", phantom.mesh.n_nodes(), phantom.mesh.n_tets());
        }
        Command::Simulate => {
            let phantom = harness::data_phantom(&cfg)?;
            let meas = harness::simulate_measurements(&cfg, &phantom)?;
            meas.write_dir(out)?;
            let report = serde_json::json!({
                "provenance": harness::Provenance::new(&cfg, &phantom.mesh, None),
                "noise": meas.noise,
                "noise_added": cfg.noise.add,
                "files": harness::MEASUREMENT_FILES,
            });
            write_json(out, "simulate_report.json", &report)?;
        }
        Command::Jacobian { kind } => {
            let phantom = harness::inversion_phantom(&cfg)?;
            let (system, solution) = harness::linearize(&cfg, &phantom)?;
            let sens = Sensitivity::new(&system, &solution)?;
            let block = match kind {
                JacobianArg::Sigma => sens.sigma(),
                JacobianArg::Zeta => sens.zeta(),
                JacobianArg::Theta => sens.position(eitproj_core::mesh::MoveDirection::Polar)?,
                JacobianArg::Phi => sens.position(eitproj_core::mesh::MoveDirection::Azimuth)?,
            };
            let stem = match block.kind {
                JacobianKind::Sigma => "sigma",
                JacobianKind::Zeta => "zeta",
                JacobianKind::Theta => "theta",
                JacobianKind::Phi => "phi",
                JacobianKind::Combined => "combined",
            };
            block.write_csv(create(out, &format!("jacobian_{stem}.csv"))?)?;
            write_json(out, &format!("jacobian_{stem}.json"), &block.descriptor())?;
        }
        Command::Project { kind } => {
            let kind = ProjectionKind::from(kind);
            let phantom = harness::inversion_phantom(&cfg)?;
            let (system, solution) = harness::linearize(&cfg, &phantom)?;
            let sens = Sensitivity::new(&system, &solution)?;
            let p = harness::nuisance_projection(&sens, kind)?.expect("projection kinds here are nontrivial");
            let mut f = create(out, &format!("projection_{}.csv", kind.label()))?;
            for row in p.matrix().row_iter() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(f, "{}", cells.join(","))?;
            }
            let meta = serde_json::json!({
                "projection": kind,
                "dim": p.dim(),
                "rank": p.rank(),
                "removed": p.deficiency(),
                "condition": p.condition(),
                "linearization": p.linearization(),
                "provenance": harness::Provenance::new(&cfg, &phantom.mesh, None),
            });
            write_json(out, &format!("projection_{}.json", kind.label()), &meta)?;
        }
        Command::AnglesStudy { draws } => {
            if let Some(n) = draws {
                cfg.random.n_draws = n;
            }
            let phantom = harness::inversion_phantom(&cfg)?;
            let report = harness::angles_study(&cfg, &phantom)?;
            report.write_csv(create(out, "angles.csv")?)?;
            write_json(out, "angles_report.json", &report)?;
            if let Some(e) = &report.error {
                return Err(Error::Numeric(format!("angle study stopped early: {e}")));
            }
        }
        Command::SignalStudy { data_dir } => {
            let phantom = harness::inversion_phantom(&cfg)?;
            let meas = match (cfg.random.signal_source, data_dir) {
                (harness::SignalSource::Phantom, dir) => Some(measurements(&cfg, dir.as_deref())?),
                (harness::SignalSource::Random, _) => None,
            };
            let report = harness::signal_study(&cfg, &phantom, meas.as_ref())?;
            report.write_norms_csv(create(out, "signal_norms.csv")?)?;
            report.write_dump_csv(create(out, "signal_dump.csv")?)?;
            write_json(out, "signal_report.json", &report)?;
        }
        Command::Reconstruct { data_dir } => {
            let phantom = harness::inversion_phantom(&cfg)?;
            let meas = measurements(&cfg, data_dir.as_deref())?;
            let report = harness::reconstruct(&cfg, &phantom, &meas)?;
            for run in &report.runs {
                let label = run.projection.label();
                run.result.write_csv(create(out, &format!("reconstruction_{label}.csv"))?)?;
                let mut meta = run.result.metadata_json();
                meta["metrics"] = serde_json::json!(run.metrics);
                write_json(out, &format!("reconstruction_{label}.json"), &meta)?;
                for &z in &cfg.reconstruction.slice_heights {
                    let samples = harness::slice(&phantom.mesh, &run.result.w, z)?;
                    let name = format!("slice_{label}_z{:.1}mm.csv", z * 1e3);
                    harness::write_slice_csv(create(out, &name)?, &samples)?;
                }
            }
            write_json(out, "reconstruct_report.json", &report.summary())?;
        }
        Command::Slice { mesh, field, height } => {
            let (mesh, _) = load_mesh(mesh)?;
            let w = harness::read_nodal_csv(BufReader::new(File::open(&field)?))?;
            let samples = harness::slice(&mesh, &w, height)?;
            harness::write_slice_csv(create(out, &format!("slice_z{:.1}mm.csv", height * 1e3))?, &samples)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
