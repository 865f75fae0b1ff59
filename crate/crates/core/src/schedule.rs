//! Step-size schedule shared by the descent loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplicative step control with a relative-decrease stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSchedule {
    /// Initial step.
    pub t0: f64,
    /// Factor applied after an accepted step.
    pub growth: f64,
    /// Factor applied after a rejected step.
    pub shrink: f64,
    pub min_step: f64,
    /// Trial budget (accepted and rejected).
    pub max_iters: usize,
    /// Relative objective decrease regarded as negligible.
    pub tol: f64,
    /// Consecutive negligible decreases that end the loop.
    pub patience: usize,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            t0: 1.0,
            growth: 1.2,
            shrink: 0.5,
            min_step: 1e-8,
            max_iters: 500,
            tol: 1e-6,
            patience: 10,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidOptions(m.to_string()));
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad("initial step must be positive");
        }
        if !(self.growth > 1.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("need growth > 1 > shrink > 0");
        }
        if !(self.min_step > 0.0) {
            return bad("min_step must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Continue,
    Converged,
    Stalled,
    Exhausted,
}

#[derive(Debug, Clone)]
pub(crate) struct Descent {
    s: StepSchedule,
    pub t: f64,
    pub iters: usize,
    quiet: usize,
}

impl Descent {
    pub fn new(s: StepSchedule) -> Self {
        Self {
            s,
            t: s.t0,
            iters: 0,
            quiet: 0,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.iters >= self.s.max_iters
    }

    pub fn accept(&mut self, before: f64, after: f64) -> Outcome {
        self.iters += 1;
        self.t *= self.s.growth;
        if after <= 0.0 {
            return Outcome::Converged;
        }
        if (before - after) < self.s.tol * before.abs() {
            self.quiet += 1;
        } else {
            self.quiet = 0;
        }
        if self.quiet >= self.s.patience {
            Outcome::Converged
        } else if self.exhausted() {
            Outcome::Exhausted
        } else {
            Outcome::Continue
        }
    }

    pub fn reject(&mut self) -> Outcome {
        self.iters += 1;
        self.t *= self.s.shrink;
        if self.t < self.s.min_step {
            Outcome::Stalled
        } else if self.exhausted() {
            Outcome::Exhausted
        } else {
            Outcome::Continue
        }
    }
}
