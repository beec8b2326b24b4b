//! Reference-distribution schedule used during training.

use serde::{Deserialize, Serialize};

/// Sampling ranges for one stage of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumPhase {
    /// 1-based phase index, for logging.
    pub index: u8,
    pub tension_lo: f64,
    pub tension_hi: f64,
    pub velocity_lo: f64,
    pub velocity_hi: f64,
    /// Probability that an episode contains one reference step.
    pub step_change_prob: f64,
}

impl CurriculumPhase {
    pub const FOUNDATION: Self = Self {
        index: 1,
        tension_lo: 27.0,
        tension_hi: 33.0,
        velocity_lo: 0.0095,
        velocity_hi: 0.0105,
        step_change_prob: 0.1,
    };
    pub const EXPANSION: Self = Self {
        index: 2,
        tension_lo: 25.0,
        tension_hi: 35.0,
        velocity_lo: 0.009,
        velocity_hi: 0.011,
        step_change_prob: 0.2,
    };
    pub const MASTERY: Self = Self {
        index: 3,
        tension_lo: 20.0,
        tension_hi: 40.0,
        velocity_lo: 0.008,
        velocity_hi: 0.012,
        step_change_prob: 0.3,
    };

    pub fn is_valid(&self) -> bool {
        self.tension_lo < self.tension_hi
            && self.velocity_lo < self.velocity_hi
            && (0.0..=1.0).contains(&self.step_change_prob)
    }
}

/// Training strategy compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Foundation -> expansion -> mastery at 40% / 80% of training.
    #[default]
    Curriculum,
    /// Full envelope from the first step.
    DomainRandomization,
    /// Narrow nominal distribution throughout.
    Vanilla,
}

impl TrainingMode {
    pub const ALL: [TrainingMode; 3] = [
        TrainingMode::Curriculum,
        TrainingMode::DomainRandomization,
        TrainingMode::Vanilla,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrainingMode::Curriculum => "curriculum",
            TrainingMode::DomainRandomization => "domain_randomization",
            TrainingMode::Vanilla => "vanilla",
        }
    }
}

/// Phase boundaries as fractions of total training steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub expansion_start: f64,
    pub mastery_start: f64,
    pub mode: TrainingMode,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            expansion_start: 0.4,
            mastery_start: 0.8,
            mode: TrainingMode::Curriculum,
        }
    }
}

/// Phase in force at training progress `progress` (fraction of total steps).
pub fn select_phase(progress: f64, schedule: &Schedule) -> CurriculumPhase {
    match schedule.mode {
        TrainingMode::DomainRandomization => CurriculumPhase::MASTERY,
        TrainingMode::Vanilla => CurriculumPhase::FOUNDATION,
        TrainingMode::Curriculum => {
            if progress < schedule.expansion_start {
                CurriculumPhase::FOUNDATION
            } else if progress < schedule.mastery_start {
                CurriculumPhase::EXPANSION
            } else {
                CurriculumPhase::MASTERY
            }
        }
    }
}
