//! Time-varying power injections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sets one bus to `value` from time `t` on. `None` restores the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub t: f64,
    pub bus: usize,
    pub value: Option<f64>,
}

/// Multiplies the selected buses by `1 + amplitude * sin(2πt / period)` on `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidWindow {
    pub buses: Vec<usize>,
    pub amplitude: f64,
    pub period: f64,
    pub start: f64,
    pub end: f64,
}

impl SinusoidWindow {
    pub fn factor(&self, t: f64) -> f64 {
        if t >= self.start && t < self.end {
            1.0 + self.amplitude * (2.0 * std::f64::consts::PI * t / self.period).sin()
        } else {
            1.0
        }
    }
}

/// Base injection vector plus timed modifiers. Evaluation is a pure function of `t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InjectionProfile {
    base: Vec<f64>,
    steps: Vec<StepEvent>,
    sinusoids: Vec<SinusoidWindow>,
}

/// Piecewise-constant profile. Events must be sorted by time.
pub fn step_change_profile(base: Vec<f64>, events: Vec<StepEvent>) -> Result<InjectionProfile> {
    InjectionProfile::constant(base).with_steps(events)
}

/// Profile with one sinusoidal window over `base`.
pub fn sinusoidal_profile(base: Vec<f64>, window: SinusoidWindow) -> Result<InjectionProfile> {
    InjectionProfile::constant(base).with_sinusoid(window)
}

impl InjectionProfile {
    pub fn constant(base: Vec<f64>) -> Self {
        InjectionProfile {
            base,
            steps: Vec::new(),
            sinusoids: Vec::new(),
        }
    }

    pub fn with_steps(mut self, events: Vec<StepEvent>) -> Result<Self> {
        if events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::UnsortedEvents);
        }
        for e in &events {
            self.check_bus(e.bus)?;
        }
        if let (Some(last), Some(first)) = (self.steps.last(), events.first()) {
            if first.t < last.t {
                return Err(Error::UnsortedEvents);
            }
        }
        self.steps.extend(events);
        Ok(self)
    }

    pub fn with_sinusoid(mut self, window: SinusoidWindow) -> Result<Self> {
        if window.buses.is_empty() {
            return Err(Error::EmptyBusSet);
        }
        if !(window.period > 0.0) || !(window.end >= window.start) {
            return Err(Error::Validation(
                "sinusoid needs a positive period and start <= end".into(),
            ));
        }
        for &b in &window.buses {
            self.check_bus(b)?;
        }
        self.sinusoids.push(window);
        Ok(self)
    }

    fn check_bus(&self, bus: usize) -> Result<()> {
        if bus < self.base.len() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "injection modifier targets bus {} outside 1..={}",
                bus + 1,
                self.base.len()
            )))
        }
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.steps.is_empty() && self.sinusoids.is_empty()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = self.base.clone();
        self.eval_into(t, &mut out);
        out
    }

    /// Writes the injection at time `t` into `out`, which must have the base length.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.base);
        for e in self.steps.iter().take_while(|e| e.t <= t) {
            out[e.bus] = e.value.unwrap_or(self.base[e.bus]);
        }
        for w in &self.sinusoids {
            let f = w.factor(t);
            for &b in &w.buses {
                out[b] *= f;
            }
        }
    }
}
