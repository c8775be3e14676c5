//! Progressive phase sequence.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseKind {
    /// New blocks blend in while alpha ramps to 1.
    Fade,
    Stabilize,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::Fade => "fade",
            PhaseKind::Stabilize => "stabilize",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Phase {
    pub stage: usize,
    pub kind: PhaseKind,
    pub epochs: usize,
}

impl Phase {
    /// Blend weight used during `epoch` (0-based). Fades reach 1 on their last epoch.
    pub fn fade_alpha(&self, epoch: usize) -> f64 {
        match self.kind {
            PhaseKind::Fade if self.epochs > 0 => {
                ((epoch + 1) as f64 / self.epochs as f64).min(1.0)
            }
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSchedule {
    phases: Vec<Phase>,
    base_len: usize,
}

impl StageSchedule {
    pub fn new(
        last_stage: usize,
        epochs_per_stage: usize,
        fade_epochs: usize,
        base_len: usize,
    ) -> Self {
        let mut phases = vec![Phase {
            stage: 0,
            kind: PhaseKind::Stabilize,
            epochs: epochs_per_stage,
        }];
        for stage in 1..=last_stage {
            phases.push(Phase {
                stage,
                kind: PhaseKind::Fade,
                epochs: fade_epochs,
            });
            phases.push(Phase {
                stage,
                kind: PhaseKind::Stabilize,
                epochs: epochs_per_stage,
            });
        }
        StageSchedule { phases, base_len }
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn stage_len(&self, stage: usize) -> usize {
        self.base_len << stage
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }
}

/// Signals shown to the critic over `epochs` passes of a dataset.
pub fn signal_showings(n_signals: usize, epochs: usize) -> usize {
    n_signals * epochs
}
