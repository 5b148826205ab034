//! Stepwise candidate-selection paradigms for the center agent.
//!
//! Max-Likelihood follows the highest-score candidate at every virtual step
//! and tends to collapse multimodal diversity; Mode-Consistent pins the seed
//! grid index, which drifts physically as the lattice re-anchors on the
//! moving state; Trajectory-Aligned re-selects the candidate closest (by
//! temporally aligned ADE) to the fixed seed reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{CandidateSet, Trajectory};

pub type GridIndex = (usize, usize);

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("empty alignment overlap: virtual step {step} >= reference length {len}")]
    EmptyOverlap { step: usize, len: usize },
    #[error("paradigm mismatch: expected {0}")]
    ParadigmMismatch(&'static str),
}

/// Center-agent paradigm tag, as selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenterParadigm {
    MaxLikelihood,
    ModeConsistent,
    TrajectoryAligned,
}

impl CenterParadigm {
    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "max-likelihood" => Some(CenterParadigm::MaxLikelihood),
            "mode-consistent" => Some(CenterParadigm::ModeConsistent),
            "trajectory-aligned" => Some(CenterParadigm::TrajectoryAligned),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            CenterParadigm::MaxLikelihood => "max-likelihood",
            CenterParadigm::ModeConsistent => "mode-consistent",
            CenterParadigm::TrajectoryAligned => "trajectory-aligned",
        }
    }
}

/// A paradigm instantiated for one rollout branch.
#[derive(Debug, Clone)]
pub enum SelectionParadigm {
    MaxLikelihood,
    ModeConsistent {
        seed: GridIndex,
    },
    TrajectoryAligned {
        seed: GridIndex,
        /// The seed candidate generated at the real state; fixed for the
        /// whole branch.
        reference: Trajectory,
    },
}

/// Argmax over confidence scores; ties break to the lowest flat index.
pub fn select_max_likelihood(cands: &CandidateSet) -> GridIndex {
    let mut best = 0;
    for flat in 1..cands.len() {
        if cands.scores()[flat] > cands.scores()[best] {
            best = flat;
        }
    }
    cands.grid_index(best)
}

/// The fixed seed index, regardless of the current candidates.
pub fn select_mode_consistent(par: &SelectionParadigm) -> Result<GridIndex, SelectionError> {
    match par {
        SelectionParadigm::ModeConsistent { seed } => Ok(*seed),
        _ => Err(SelectionError::ParadigmMismatch("ModeConsistent")),
    }
}

/// Average displacement error after temporal alignment: candidate point `k`
/// is compared against reference point `virtual_step + k` over the shrinking
/// overlap window. Positions only; the reference is truncated, never
/// extrapolated.
pub fn ade_aligned(
    candidate: &Trajectory,
    reference: &Trajectory,
    virtual_step: usize,
) -> Result<f64, SelectionError> {
    let len = reference.len();
    if virtual_step >= len {
        return Err(SelectionError::EmptyOverlap {
            step: virtual_step,
            len,
        });
    }
    let window = (len - virtual_step).min(candidate.len());
    debug_assert!(window >= 1);
    let mut sum = 0.0;
    for k in 0..window {
        sum += candidate.points[k]
            .position()
            .dist(reference.points[virtual_step + k].position());
    }
    Ok(sum / window as f64)
}

/// Argmin over aligned ADE against the branch reference; ties break to the
/// lowest flat index. At virtual step 1 the seed index is used directly.
pub fn select_trajectory_aligned(
    cands: &CandidateSet,
    par: &SelectionParadigm,
    virtual_step: usize,
) -> Result<GridIndex, SelectionError> {
    let (seed, reference) = match par {
        SelectionParadigm::TrajectoryAligned { seed, reference } => (*seed, reference),
        _ => return Err(SelectionError::ParadigmMismatch("TrajectoryAligned")),
    };
    if virtual_step <= 1 {
        return Ok(seed);
    }
    let mut best_flat = 0;
    let mut best_ade = f64::INFINITY;
    for flat in 0..cands.len() {
        let ade = ade_aligned(cands.trajectory_flat(flat), reference, virtual_step)?;
        if ade < best_ade {
            best_ade = ade;
            best_flat = flat;
        }
    }
    Ok(cands.grid_index(best_flat))
}
