//! Blind STFT-domain identification of convolutive transfer functions from
//! multichannel recordings, and sparse inverse filtering for speech
//! dereverberation.
//!
//! The usual flow is [`stft::stft`] per channel, [`identify::identify_all_bands`]
//! for critically sampled first-channel-normalized filters, then
//! [`inverse::dereverberate`]. [`pipeline`] wires these together for
//! synthetic scenes and sweeps.

pub mod ctf;
pub mod error;
pub mod identify;
pub mod inverse;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod solver;
pub mod stft;
pub mod synth;

pub use ctf::{CtfSet, Normalization, Sampling};
pub use error::{Error, Result};
pub use identify::{IdentificationReport, IdentifiedFilters};
pub use inverse::{DereverbReport, InverseOptions, NoiseProfile, NoiseSource, TolerancePolicy};
pub use io::{Audio, WavEncoding};
pub use metrics::EvalReport;
pub use pipeline::{PipelineReport, RunConfig, SweepGrid};
pub use solver::{SolverParams, SolverResult, SolverStatus};
pub use stft::{Spectrogram, StftConfig, WindowKind};
