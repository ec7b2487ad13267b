//! Normalization bounds for the figure of merit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::{analyze_mode, Metric};
use super::rational::{self, Rational};
use crate::families;
use crate::phase::decouple_modes;

const SHIPPED: &str = include_str!("../../data/bounds.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub ssl_max: f64,
    pub fsl_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub n_cap_max: f64,
    /// Keyed by ratio text such as `"1/2"` or `"1"`.
    pub vcr: BTreeMap<String, Bound>,
}

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("bounds file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bounds key `{0}` is not a ratio")]
    BadKey(String),
    #[error("bound for `{0}` must be positive and finite")]
    BadValue(String),
}

impl NormalizationBounds {
    pub fn from_json(text: &str) -> Result<Self, BoundsError> {
        let raw: NormalizationBounds = serde_json::from_str(text)?;
        if !(raw.n_cap_max > 0.0 && raw.n_cap_max.is_finite()) {
            return Err(BoundsError::BadValue("n_cap_max".into()));
        }
        let mut vcr = BTreeMap::new();
        for (k, b) in raw.vcr {
            let q = rational::parse(&k).ok_or_else(|| BoundsError::BadKey(k.clone()))?;
            let ok = |x: f64| x > 0.0 && x.is_finite();
            if !ok(b.ssl_max) || !ok(b.fsl_max) {
                return Err(BoundsError::BadValue(k));
            }
            vcr.insert(rational::format(&q), b);
        }
        Ok(Self { n_cap_max: raw.n_cap_max, vcr })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bounds serialize") + "\n"
    }

    pub fn get(&self, ratio: &Rational) -> Option<Bound> {
        self.vcr.get(&rational::format(ratio)).copied()
    }

    /// The bundled table.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("bundled bounds parse")
    }

    /// Best metrics of the series-parallel families (ratios `1/(j+1)` and
    /// `j/(j+1)`, `j <= 5`) and the unity converters. Metrics that are
    /// unbounded for every member leave a bound of 1.
    pub fn derive() -> Self {
        let mut members = Vec::new();
        for j in 1..=5 {
            members.push(families::series_parallel_down(j));
            members.push(families::series_parallel_up(j));
        }
        members.push(families::direct_path());
        members.push(families::charge_dump());

        let mut best: BTreeMap<String, (Option<f64>, Option<f64>)> = BTreeMap::new();
        for c in &members {
            let a = analyze_mode(c, &decouple_modes(c)[0]);
            let d = a.data().expect("family members are posed");
            let entry = best.entry(rational::format(&d.m)).or_default();
            let bump = |slot: &mut Option<f64>, m: &Metric| {
                if let Metric::Finite(q) = m {
                    let x = rational::to_f64(q);
                    if slot.is_none_or(|y| x > y) {
                        *slot = Some(x);
                    }
                }
            };
            bump(&mut entry.0, &d.m_ssl);
            bump(&mut entry.1, &d.m_fsl);
        }
        let vcr = best
            .into_iter()
            .map(|(k, (s, f))| (k, Bound { ssl_max: s.unwrap_or(1.0), fsl_max: f.unwrap_or(1.0) }))
            .collect();
        Self { n_cap_max: 24.0, vcr }
    }
}
