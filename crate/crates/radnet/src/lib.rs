//! Modeling and optimization of a distributed radar network whose sensors
//! forward quantized observations to a central unit over capacity-limited
//! fronthaul links.
//!
//! The library builds complex measurement models for a grid scene
//! ([`scene`]), models quantization through rate-distortion bounds
//! ([`ratemodel`]), evaluates exact and surrogate weighted Cramer-Rao bounds
//! ([`estimation`]), solves the convex inner allocation problem with a
//! log-barrier interior-point method ([`solver`]), and alternates the
//! closed-form auxiliary update with that inner solve until convergence
//! ([`aco`]). Independent verification tools (closed forms, brute-force
//! search, Monte-Carlo estimators, finite differences) live in [`oracle`].

pub mod aco;
pub mod error;
pub mod estimation;
pub mod oracle;
pub mod ratemodel;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};

/// Quantization strategy of each radar node.
///
/// `Afvq` quantizes every antenna/frequency sample independently (diagonal
/// distortion covariance); `Rvq` jointly quantizes all samples of one radar
/// (full Hermitian distortion covariance).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    Afvq,
    Rvq,
}

/// Fronthaul resource model: a dedicated link per radar, or a single link
/// time-shared among radars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FronthaulMode {
    Dedicated,
    Shared,
}

impl std::fmt::Display for QuantMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuantMode::Afvq => write!(f, "afvq"),
            QuantMode::Rvq => write!(f, "rvq"),
        }
    }
}

impl std::fmt::Display for FronthaulMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FronthaulMode::Dedicated => write!(f, "dedicated"),
            FronthaulMode::Shared => write!(f, "shared"),
        }
    }
}
