use crate::error::{Error, Result};

/// Step decay: the initial rate halves at every milestone reached.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub initial: f64,
    pub milestones: Vec<usize>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            initial: 2e-4,
            milestones: vec![250, 400, 425, 450, 475],
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || self.milestones.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "learning rate must be positive and milestones strictly increasing: {} {:?}",
                self.initial, self.milestones
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        let halvings = self.milestones.iter().filter(|&&m| m <= iteration).count();
        self.initial * 0.5f64.powi(halvings as i32)
    }
}
