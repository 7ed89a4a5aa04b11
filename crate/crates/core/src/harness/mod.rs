//! Reproducible experiment pipelines on synthetic tank phantoms: data
//! simulation, the principal-angle and signal-suppression studies and
//! projected reconstructions.

mod config;
mod study;

pub use config::{
    Algorithm, Background, ContactPerturbation, ExperimentConfig, Inclusion, NoiseConfig, ProjectionKind,
    RandomStudyConfig, ReconstructionConfig, SignalSource, Thresholds,
};
pub use study::{
    angles_study, data_phantom, inversion_phantom, linearize, nuisance_blocks, nuisance_projection, patterns,
    perturbed_contact, phantom_metrics, phantom_sigma, read_nodal_csv, reconstruct, reference_contact,
    reference_sigma, signal_study, simulate_measurements, slice, write_slice_csv, AngleDraw, AnglesReport,
    Measurements, Phantom, PhantomMetrics, Provenance, ReconstructionReport, ReconstructionRun, RunSummary,
    SignalRatios, SignalReport, Summary, MEASUREMENT_FILES, NOISE_FILE,
};
