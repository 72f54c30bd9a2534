use serde::{Deserialize, Serialize};

/// One sinusoid `amplitude * sin(frequency * t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Scalar excitation signal: a constant plus a finite sum of sinusoids.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InputSignal {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<SineTerm>,
}

impl InputSignal {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn sine(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self { constant: 0.0, terms: vec![SineTerm { amplitude, frequency, phase }] }
    }

    pub fn with_term(mut self, amplitude: f64, frequency: f64, phase: f64) -> Self {
        self.terms.push(SineTerm { amplitude, frequency, phase });
        self
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.constant + self.terms.iter().map(|s| s.amplitude * (s.frequency * t + s.phase).sin()).sum::<f64>()
    }
}
