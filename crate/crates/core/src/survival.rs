//! Kaplan-Meier curves, restricted mean survival time, jackknife
//! pseudovalues and the external prognostic nomogram.
//!
//! At a shared timestamp events are processed before censorings, so a subject
//! censored at `t` is still at risk for deaths at `t`.

use serde::{Deserialize, Serialize};

use crate::error::{RasperError, Result};

/// Default truncation horizon, in months.
pub const DEFAULT_TAU: f64 = 36.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSample {
    pub times: Vec<f64>,
    /// True when the event was observed, false when censored.
    pub events: Vec<bool>,
    pub tau: f64,
}

impl SurvivalSample {
    pub fn new(times: Vec<f64>, events: Vec<bool>, tau: f64) -> Result<Self> {
        if times.len() != events.len() {
            return Err(RasperError::DimensionMismatch(format!(
                "{} times, {} event flags",
                times.len(),
                events.len()
            )));
        }
        if times.is_empty() {
            return Err(RasperError::EmptyData(0));
        }
        if let Some(i) = times.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(RasperError::InvalidArgument(format!(
                "follow-up time at row {i} must be positive, got {}",
                times[i]
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(RasperError::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { times, events, tau })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    /// Indices ordered by time, events first within a tie.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.sort_by(|&a, &b| {
            self.times[a]
                .partial_cmp(&self.times[b])
                .expect("finite times")
                .then(self.events[b].cmp(&self.events[a]))
        });
        idx
    }
}

/// Right-continuous product-limit step function. `survival[k]` holds on
/// `[times[k], times[k + 1])`; before the first jump the curve is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
}

impl KmCurve {
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// `int_0^tau S(t) dt`, as a sum of rectangles.
    pub fn restricted_mean(&self, tau: f64) -> f64 {
        let mut area = 0.0;
        let mut prev = 0.0;
        let mut s = 1.0;
        for (&t, &next) in self.times.iter().zip(&self.survival) {
            if t >= tau {
                break;
            }
            area += s * (t - prev);
            prev = t;
            s = next;
        }
        area + s * (tau - prev)
    }
}

fn km_from_order(sample: &SurvivalSample, order: &[usize], skip: Option<usize>) -> KmCurve {
    let mut at_risk = order.len() - usize::from(skip.is_some());
    let mut s = 1.0;
    let mut times = Vec::new();
    let mut survival = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let t = sample.times[order[k]];
        let mut deaths = 0;
        let mut leaving = 0;
        while k < order.len() && sample.times[order[k]] == t {
            let i = order[k];
            k += 1;
            if Some(i) == skip {
                continue;
            }
            leaving += 1;
            if sample.events[i] {
                deaths += 1;
            }
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            times.push(t);
            survival.push(s);
        }
        at_risk -= leaving;
    }
    KmCurve { times, survival }
}

pub fn km_curve(sample: &SurvivalSample) -> KmCurve {
    km_from_order(sample, &sample.order(), None)
}

/// Estimated `E min(T, tau)`.
pub fn rmst(sample: &SurvivalSample) -> f64 {
    km_curve(sample).restricted_mean(sample.tau)
}

/// `V_i = n mu - (n - 1) mu^(-i)`.
pub fn pseudovalues(sample: &SurvivalSample) -> Result<Vec<f64>> {
    let n = sample.n();
    if n < 2 {
        return Err(RasperError::EmptyData(n));
    }
    let order = sample.order();
    let full = km_from_order(sample, &order, None).restricted_mean(sample.tau);
    let nf = n as f64;
    Ok((0..n)
        .map(|i| {
            let loo = km_from_order(sample, &order, Some(i)).restricted_mean(sample.tau);
            nf * full - (nf - 1.0) * loo
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NomogramInput {
    /// PSA, ng/ml.
    pub psa: f64,
    pub visceral_mets: bool,
    pub ecog_ge2: bool,
    /// Days from prior chemotherapy to progression.
    pub days_to_progression: f64,
}

/// Log-hazard-scale prognostic score; larger means worse survival.
pub fn nomogram_score(input: &NomogramInput) -> Result<f64> {
    if !(input.psa >= 0.0 && input.days_to_progression >= 0.0) {
        return Err(RasperError::InvalidArgument(format!(
            "psa and days must be nonnegative, got {} and {}",
            input.psa, input.days_to_progression
        )));
    }
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(0.74 * ind(input.psa > 30.0)
        + 0.49 * ind(input.visceral_mets)
        + 0.65 * ind(input.ecog_ge2)
        + 0.45 * (2.0 - (input.days_to_progression / 180.0).min(2.0)))
}
