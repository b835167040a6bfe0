//! Equal-probability search for opposite labels.
//!
//! Semantic deduction (SD) draws uniformly from `[c] \ colony_of(y)`; the
//! random-opposite baseline (RT) draws uniformly from `[c] \ {y}`. A draw
//! depends only on the true label and the prior, never on the features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::taxonomy::{ClassId, SemanticPrior};

/// Learning scenario: plain cross-entropy (OT), random opposite (RT) or semantic deduction (SD).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scenario {
    Ot,
    Rt,
    Sd,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Ot, Scenario::Rt, Scenario::Sd];

    /// The sampling mode the scenario uses, `None` for OT.
    pub fn opposite_mode(self) -> Option<OppositeMode> {
        match self {
            Scenario::Ot => None,
            Scenario::Rt => Some(OppositeMode::Rt),
            Scenario::Sd => Some(OppositeMode::Sd),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Ot => "OT",
            Scenario::Rt => "RT",
            Scenario::Sd => "SD",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "OT" => Ok(Scenario::Ot),
            "RT" => Ok(Scenario::Rt),
            "SD" => Ok(Scenario::Sd),
            _ => Err(format!("unknown scenario \"{s}\" (expected OT, RT or SD)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OppositeMode {
    Sd,
    Rt,
}

/// A sampled opposite label together with the rule it was drawn under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OppositeLabel {
    pub value: ClassId,
    pub mode: OppositeMode,
}

/// Uniform draw from the opposite pool of `y`. Consumes one bounded-uniform draw.
pub fn sample_opposite_sd(prior: &SemanticPrior, y: ClassId, rng: &mut SeededRng) -> OppositeLabel {
    let pool = prior.opposite_pool(y);
    let value = pool[rng.below_usize(pool.len())];
    assert!(!prior.same_colony(value, y), "SD draw {value} shares a colony with {y}");
    OppositeLabel {
        value,
        mode: OppositeMode::Sd,
    }
}

/// Uniform draw from `[c] \ {y}`. Consumes one bounded-uniform draw.
///
/// Panics if `class_count < 2` or `y` is out of range.
pub fn sample_opposite_rt(class_count: usize, y: ClassId, rng: &mut SeededRng) -> OppositeLabel {
    assert!(class_count >= 2, "RT sampling needs at least two classes");
    assert!(y.0 < class_count, "class {y} outside [0, {class_count})");
    let k = rng.below_usize(class_count - 1);
    let value = ClassId(if k >= y.0 { k + 1 } else { k });
    assert_ne!(value, y);
    OppositeLabel {
        value,
        mode: OppositeMode::Rt,
    }
}

/// One fresh opposite label per batch element, consuming `rng` in batch order.
pub fn resample_per_iteration(
    batch: &[ClassId],
    prior: &SemanticPrior,
    rng: &mut SeededRng,
    mode: OppositeMode,
) -> Vec<OppositeLabel> {
    batch
        .iter()
        .map(|&y| match mode {
            OppositeMode::Sd => sample_opposite_sd(prior, y, rng),
            OppositeMode::Rt => sample_opposite_rt(prior.class_count(), y, rng),
        })
        .collect()
}

/// Stateful sampler that counts its draws and, optionally, a histogram of
/// `(true, opposite)` pairs for auditing.
#[derive(Debug, Clone)]
pub struct OppositeSampler<'a> {
    prior: &'a SemanticPrior,
    mode: OppositeMode,
    draws: u64,
    pair_counts: Option<Vec<u64>>,
}

impl<'a> OppositeSampler<'a> {
    pub fn new(prior: &'a SemanticPrior, mode: OppositeMode) -> Self {
        OppositeSampler {
            prior,
            mode,
            draws: 0,
            pair_counts: None,
        }
    }

    /// Record every `(y, ȳ)` pair in a `c × c` count table.
    pub fn with_pair_log(mut self) -> Self {
        let c = self.prior.class_count();
        self.pair_counts = Some(vec![0; c * c]);
        self
    }

    pub fn mode(&self) -> OppositeMode {
        self.mode
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Row-major `c × c` counts of sampled `(true, opposite)` pairs, if logging is on.
    pub fn pair_counts(&self) -> Option<&[u64]> {
        self.pair_counts.as_deref()
    }

    pub fn sample(&mut self, y: ClassId, rng: &mut SeededRng) -> OppositeLabel {
        let label = match self.mode {
            OppositeMode::Sd => sample_opposite_sd(self.prior, y, rng),
            OppositeMode::Rt => sample_opposite_rt(self.prior.class_count(), y, rng),
        };
        self.draws += 1;
        if let Some(counts) = self.pair_counts.as_mut() {
            counts[y.0 * self.prior.class_count() + label.value.0] += 1;
        }
        label
    }

    pub fn resample(&mut self, batch: &[ClassId], rng: &mut SeededRng) -> Vec<OppositeLabel> {
        batch.iter().map(|&y| self.sample(y, rng)).collect()
    }
}
