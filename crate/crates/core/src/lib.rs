//! Simulation, reward language, screening and policy training for
//! progressive-fidelity reward search in crowd navigation.
//!
//! Numeric kernels are generic over [`Scalar`]; the environment, language and
//! orchestration layers use the `f64` aliases below.

pub mod dataset;
pub mod geom;
pub mod lang;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod screen;
pub mod sim;
pub mod stats;

pub use geom::Vector2;
pub use scalar::Scalar;

pub type Vec2 = Vector2<f64>;
pub type Vec2f = Vector2<f32>;
pub use sim::Agent;
