//! Fan-beam CT simulation and a sinogram-to-image network whose fully
//! connected layer can be compared, map by map, with the analytic
//! back-projection operator.
//!
//! The crate is organised bottom-up:
//!
//! + [`geometry`] and [`index`] fix the acquisition geometry and the reshape
//!   algebra between sinograms, images and FC weight coordinates.
//! + [`phantom`] and [`projector`] generate labelled training data.
//! + [`nn`] and [`optim`] hold the network, its gradients and the Adam
//!   training loop, [`checkpoint`] persists them.
//! + [`weight_lab`] extracts and compares weight maps and renders montages.
//! + [`cli`] wires everything into the `fcbp` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod index;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod projector;
pub mod weight_lab;

pub use error::{Error, Result};
pub use geometry::FanBeamGeometry;
pub use linalg::Real;
