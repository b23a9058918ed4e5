//! Self-exciting (Hawkes) process simulation.
//!
//! Used as a reference process for validating the point-process machinery:
//! its intensity, compensator, and simulator are all closed-form, so a
//! simulated stream can be checked end-to-end with the time-rescaling
//! property (compensator increments between events are iid Exp(1)).

use rand::Rng;

use crate::error::{Error, Result};

/// lambda(t) = base + excite * sum_i exp(decay * (t - t_i)) over past events,
/// with decay < 0.
#[derive(Clone, Copy, Debug)]
pub struct Hawkes {
    pub base: f64,
    pub excite: f64,
    pub decay: f64,
}

impl Hawkes {
    pub fn new(base: f64, excite: f64, decay: f64) -> Result<Self> {
        if !(base > 0.0) {
            return Err(Error::Contract(format!("hawkes base must be > 0, got {base}")));
        }
        if !(excite >= 0.0) {
            return Err(Error::Contract(format!(
                "hawkes excitation must be >= 0, got {excite}"
            )));
        }
        if !(decay < 0.0) {
            return Err(Error::Contract(format!(
                "hawkes decay must be < 0, got {decay}"
            )));
        }
        Ok(Hawkes { base, excite, decay })
    }

    /// Ratio of offspring to parents; < 1 means the process is stationary.
    pub fn branching_ratio(&self) -> f64 {
        self.excite / -self.decay
    }

    /// Event times in (0, horizon], generated by thinning. Immediately after
    /// an event the intensity only decays until the next event, so the
    /// current intensity is a valid dominating rate for the next gap.
    pub fn simulate<R: Rng>(&self, horizon: f64, rng: &mut R) -> Vec<f64> {
        let mut events = Vec::new();
        let mut t = 0.0;
        // Sum of exp(decay * (t - t_i)) over accepted events, kept current.
        let mut state = 0.0;
        loop {
            let bound = self.base + self.excite * state;
            // 1 - gen() lies in (0, 1]; ln of it is finite.
            let gap = -(1.0 - rng.gen::<f64>()).ln() / bound;
            let candidate = t + gap;
            if candidate > horizon {
                return events;
            }
            let decayed = state * (self.decay * gap).exp();
            let lambda = self.base + self.excite * decayed;
            if rng.gen::<f64>() * bound <= lambda {
                events.push(candidate);
                state = decayed + 1.0;
            } else {
                state = decayed;
            }
            t = candidate;
        }
    }

    /// Compensator increments Lambda(t_k) - Lambda(t_{k-1}) for an event
    /// sequence starting from an empty history at time 0. Under the model
    /// these are iid Exp(1).
    pub fn compensator_residuals(&self, times: &[f64]) -> Result<Vec<f64>> {
        let mut residuals = Vec::with_capacity(times.len());
        let mut prev = 0.0;
        // Sum of exp(decay * (t_{k-1} - t_i)) over events i <= k-1, i.e. the
        // kernel state immediately after the previous event.
        let mut state = 0.0;
        for &t in times {
            if !(t > prev) {
                return Err(Error::Contract(format!(
                    "event times must be strictly increasing, got {t} after {prev}"
                )));
            }
            let tau = t - prev;
            let shrink = (self.decay * tau).exp();
            let integral = self.base * tau
                + (self.excite / -self.decay) * state * (1.0 - shrink);
            residuals.push(integral);
            state = state * shrink + 1.0;
            prev = t;
        }
        Ok(residuals)
    }

    /// Intensity at time `t` given the full history, by direct summation.
    /// O(n) per call; used by tests as an oracle against the recursive state.
    pub fn intensity_at(&self, times: &[f64], t: f64) -> f64 {
        let sum: f64 = times
            .iter()
            .take_while(|&&ti| ti < t)
            .map(|&ti| (self.decay * (t - ti)).exp())
            .sum();
        self.base + self.excite * sum
    }
}

/// Kolmogorov-Smirnov statistic of a sample against the Exp(1) CDF.
pub fn ks_statistic_exp1(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    d
}
