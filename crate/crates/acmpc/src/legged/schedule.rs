//! Contact schedules: which feet may exert ground reaction forces at each
//! absolute timestep.

/// Per-leg contact phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactPhase {
    Stance,
    Swing,
}

/// A time-indexed stance/swing pattern for `n` legs. Lookups past the end
/// clamp to the final entry (standing tail).
#[derive(Debug, Clone)]
pub struct ContactSchedule {
    phases: Vec<[ContactPhase; 4]>,
}

impl ContactSchedule {
    pub fn new(phases: Vec<[ContactPhase; 4]>) -> Self {
        assert!(!phases.is_empty());
        ContactSchedule { phases }
    }

    /// All-stance schedule of the given length.
    pub fn standing(len: usize) -> Self {
        ContactSchedule {
            phases: vec![[ContactPhase::Stance; 4]; len.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn at(&self, t: usize) -> &[ContactPhase; 4] {
        &self.phases[t.min(self.phases.len() - 1)]
    }

    pub fn is_stance(&self, t: usize, leg: usize) -> bool {
        self.at(t)[leg] == ContactPhase::Stance
    }

    /// Bitmask of stance legs at `t` (bit `l` set when leg `l` is in stance).
    pub fn stance_mask(&self, t: usize) -> usize {
        let p = self.at(t);
        (0..4).fold(0, |m, l| {
            m | ((p[l] == ContactPhase::Stance) as usize) << l
        })
    }

    pub fn swing_legs(&self, t: usize) -> Vec<usize> {
        (0..4).filter(|&l| !self.is_stance(t, l)).collect()
    }

    /// Timesteps at which leg `leg` touches down (swing -> stance edges).
    pub fn touchdowns(&self, leg: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for t in 1..self.phases.len() {
            if self.phases[t][leg] == ContactPhase::Stance
                && self.phases[t - 1][leg] == ContactPhase::Swing
            {
                out.push(t);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_clamps_past_end() {
        let s = ContactSchedule::standing(5);
        assert!(s.is_stance(100, 2));
        assert_eq!(s.stance_mask(100), 0b1111);
    }

    #[test]
    fn touchdown_edges_are_found() {
        use ContactPhase::{Stance as St, Swing as Sw};
        let s = ContactSchedule::new(vec![
            [St, St, St, St],
            [Sw, St, St, St],
            [Sw, St, St, St],
            [St, St, St, St],
        ]);
        assert_eq!(s.touchdowns(0), vec![3]);
        assert!(s.touchdowns(1).is_empty());
        assert_eq!(s.swing_legs(1), vec![0]);
    }
}
