//! Specialty-aware ensembling of frozen pretrained models.
//!
//! A pool of frozen models is represented purely by cached per-sample
//! outputs (logits in each model's own pretraining label space, plus a
//! query embedding per sample). A shared linear adapter per pretraining
//! group maps cached logits into the task label space, and a small
//! dispatch network scores every model against the query embedding and
//! mixes the adapted outputs with per-sample weights. Training fits the
//! adapters and the dispatcher jointly on source domains; evaluation
//! holds one domain out.
//!
//! Modules are layered bottom-up: [`tensor`] and [`pool`] define the
//! on-disk cache, [`nn`] the shared math and optimizer, [`adapter`] and
//! [`ensemble`] the model, [`train`] and [`eval`] the fitting protocol,
//! [`specialty`] the analysis tools, and [`synth`] a generator with
//! planted specialties used as the test bench.

pub mod adapter;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod nn;
pub mod params;
pub mod pool;
pub mod rng;
pub mod specialty;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Result, SedgeError};
