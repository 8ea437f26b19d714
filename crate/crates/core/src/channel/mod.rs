//! Diffusive channel between the two nodes: closed-form physics, a particle
//! engine, its calibration into histograms and the fast statistical channel.

pub mod calibrate;
pub mod particle;
pub mod physics;
pub mod reliability;
pub mod statistical;
pub mod stats;

pub use calibrate::{calibrate, calibrate_capture, calibrate_document, CalibrationSetup, CaptureFit, RX_BODY, TX_BODY};
pub use particle::{
    AbsorptionEvent, Body, Census, ParticleCloud, ParticleEngine, ParticleState, ParticleStatus, Scene, StepScheme,
};
pub use physics::{
    assimilation_count, concentration, diffusion_coefficient, flux, gamma, p_assim, GammaFit, MediumParams,
    NodeGeometry, Species, SpeciesSpec,
};
pub use reliability::{p_correct_symbol, RangingModel, WindowMassTable};
pub use statistical::StatisticalChannel;
pub use stats::{window_mass, ChannelStats, StatsDocument, STATS_SCHEMA_VERSION};
