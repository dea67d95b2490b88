//! Attribute-conditioned apparent and real age regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, a reverse-mode tape, Adam and the PTNS file format.
//! * [`dataset`]: annotation CSVs, one-hot attribute encoding, age
//!   normalisation, the synthetic biased-perception generator and PGM/PPM I/O.
//! * [`architecture`]: declarative network graphs for every case-study
//!   variant at full VGG16 scale and at desk scale, forward evaluation,
//!   parameter counting and checkpoints.
//! * [`training`]: the two-stage schedule with early stopping.
//! * [`evaluation`]: MAE, attribute-stratified tables, age-window curves,
//!   histograms, observer-gender evaluation and report emission.
//! * [`cli`]: the `percept-age` command-line front end.

pub mod architecture;
pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod tensor;
pub mod training;
