//! Simulation and diagnostics for linear latent structure (LLS) mixtures of
//! independent categorical measures.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`model`] | basis profiles, the map g ↦ β(g), membership in Q |
//! | [`measure`] | P_g, mixtures P_μ, cylinders, seeded sampling |
//! | [`hellinger`] | affinities, Hellinger products and H⁺ sums, orthogonality verdicts |
//! | [`identify`] | covariance of the mixing measure and its rank |
//! | [`posterior`] | posterior means eₙ(a) and the pushforward estimator μ̂ₙ |
//! | [`converge`] | W₁ / energy distances and convergence curves |
//! | [`scenarios`] | built-in worked examples and random families |
//! | [`io`] | CSV formats |

pub mod converge;
pub mod error;
pub mod hellinger;
pub mod identify;
pub mod io;
pub mod measure;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod scenarios;

pub use error::{LlsError, Result};
pub use measure::{MixingMeasure, OutcomeSequence};
pub use model::{LatentPoint, ModelSpec};
