//! Hyperparameter vectors, their admissible box, and observation series.

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Ordered, labelled hyperparameter vector. Serializes as a JSON object whose
/// key order follows the entry order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct HyperParams {
    entries: Vec<(String, f64)>,
}

impl HyperParams {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let mut out = HyperParams::default();
        for (label, value) in entries {
            out.push(label, value)?;
        }
        Ok(out)
    }

    pub fn scalar(label: &str, value: f64) -> Self {
        HyperParams {
            entries: vec![(label.to_string(), value)],
        }
    }

    fn push(&mut self, label: impl Into<String>, value: f64) -> Result<()> {
        let label = label.into();
        if self.entries.iter().any(|(l, _)| *l == label) {
            return Err(Error::InvalidConfig(format!(
                "duplicate hyperparameter label `{label}`"
            )));
        }
        self.entries.push((label, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, v)| v)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|&(_, v)| v).collect()
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    /// Same labels, new values (in label order).
    pub fn with_values(&self, values: &[f64]) -> HyperParams {
        assert_eq!(values.len(), self.entries.len(), "hyperparameter arity");
        HyperParams {
            entries: self
                .entries
                .iter()
                .zip(values)
                .map(|((l, _), &v)| (l.clone(), v))
                .collect(),
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> HyperParams {
        HyperParams {
            entries: self.entries.iter().map(|(l, v)| (l.clone(), f(*v))).collect(),
        }
    }

    pub fn same_labels(&self, other: &HyperParams) -> bool {
        self.len() == other.len() && self.labels().zip(other.labels()).all(|(a, b)| a == b)
    }
}

impl Serialize for HyperParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (label, value) in &self.entries {
            map.serialize_entry(label, value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for HyperParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = HyperParams;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping hyperparameter labels to numbers")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<HyperParams, A::Error> {
                let mut out = HyperParams::default();
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    out.push(k, v).map_err(serde::de::Error::custom)?;
                }
                Ok(out)
            }
        }
        deserializer.deserialize_map(V)
    }
}

/// Closed interval per hyperparameter label.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperBox {
    bounds: Vec<(String, f64, f64)>,
}

impl HyperBox {
    pub fn new<S: Into<String>>(bounds: impl IntoIterator<Item = (S, f64, f64)>) -> Result<Self> {
        let mut out = Vec::<(String, f64, f64)>::new();
        for (label, lo, hi) in bounds {
            let label = label.into();
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "box for `{label}` needs lower < upper, got [{lo}, {hi}]"
                )));
            }
            if out.iter().any(|(l, _, _)| *l == label) {
                return Err(Error::InvalidConfig(format!("duplicate box label `{label}`")));
            }
            out.push((label, lo, hi));
        }
        Ok(HyperBox { bounds: out })
    }

    pub fn scalar(label: &str, lo: f64, hi: f64) -> Result<Self> {
        HyperBox::new([(label, lo, hi)])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.bounds.iter().map(|(l, _, _)| l.as_str())
    }

    pub fn lower(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| b.1).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| b.2).collect()
    }

    pub fn interval(&self, label: &str) -> Option<(f64, f64)> {
        self.bounds
            .iter()
            .find(|(l, _, _)| l == label)
            .map(|&(_, lo, hi)| (lo, hi))
    }

    pub fn lower_corner(&self) -> HyperParams {
        HyperParams {
            entries: self.bounds.iter().map(|(l, lo, _)| (l.clone(), *lo)).collect(),
        }
    }

    pub fn contains(&self, h: &HyperParams) -> bool {
        h.len() == self.dim()
            && self
                .bounds
                .iter()
                .zip(h.entries())
                .all(|((bl, lo, hi), (hl, v))| bl == hl && *v >= *lo && *v <= *hi)
    }

    /// Clamps values (given in label order) into the box.
    pub fn clip(&self, values: &mut [f64]) {
        for (v, (_, lo, hi)) in values.iter_mut().zip(&self.bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Checks that `h` carries exactly the box labels, in order, inside the bounds.
    pub fn check(&self, h: &HyperParams) -> Result<()> {
        if h.len() != self.dim() || !h.labels().zip(self.labels()).all(|(a, b)| a == b) {
            return Err(Error::Shape(format!(
                "hyperparameter labels {:?} do not match box labels {:?}",
                h.labels().collect::<Vec<_>>(),
                self.labels().collect::<Vec<_>>()
            )));
        }
        if !self.contains(h) {
            return Err(Error::Domain(format!("{h:?} lies outside the hyperparameter box")));
        }
        Ok(())
    }
}

impl Serialize for HyperBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.bounds.len()))?;
        for (label, lo, hi) in &self.bounds {
            map.serialize_entry(label, &[*lo, *hi])?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for HyperBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = HyperBox;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping labels to [lower, upper]")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<HyperBox, A::Error> {
                let mut raw = Vec::new();
                while let Some((k, [lo, hi])) = map.next_entry::<String, [f64; 2]>()? {
                    raw.push((k, lo, hi));
                }
                HyperBox::new(raw).map_err(serde::de::Error::custom)
            }
        }
        deserializer.deserialize_map(V)
    }
}

/// Time-indexed observation vectors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ObservationSeries {
    times: Vec<u64>,
    values: Vec<Vec<f64>>,
}

impl ObservationSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(times: Vec<u64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} times but {} observation vectors",
                times.len(),
                values.len()
            )));
        }
        let mut out = Self::new();
        for (t, v) in times.into_iter().zip(values) {
            out.push(t, v)?;
        }
        Ok(out)
    }

    /// Scalar series observed at steps 1, 2, ...
    pub fn from_scalars(values: &[f64]) -> Self {
        ObservationSeries {
            times: (1..=values.len() as u64).collect(),
            values: values.iter().map(|&v| vec![v]).collect(),
        }
    }

    pub fn push(&mut self, t: u64, value: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::Shape(format!(
                    "observation times must increase strictly ({t} after {last})"
                )));
            }
        }
        self.times.push(t);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[u64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.times.iter().copied().zip(self.values.iter().map(Vec::as_slice))
    }

    /// First coordinate of every observation.
    pub fn scalars(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[0]).collect()
    }

    /// Drops the first `k` observations.
    pub fn skip(&self, k: usize) -> ObservationSeries {
        ObservationSeries {
            times: self.times[k.min(self.len())..].to_vec(),
            values: self.values[k.min(self.len())..].to_vec(),
        }
    }

    /// Errors unless both series share times and per-step dimensions.
    pub fn check_aligned(&self, other: &ObservationSeries) -> Result<()> {
        if self.times != other.times {
            return Err(Error::Shape("observation series have different times".into()));
        }
        for (t, (a, b)) in self.times.iter().zip(self.values.iter().zip(&other.values)) {
            if a.len() != b.len() {
                return Err(Error::Shape(format!(
                    "dimension {} vs {} at t = {t}",
                    a.len(),
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperparams_json_keeps_order() {
        let h = HyperParams::new([("zeta", 1.0), ("alpha", 2.0)]).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"zeta":1.0,"alpha":2.0}"#);
        let back: HyperParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn duplicate_labels_rejected() {
        assert!(HyperParams::new([("a", 1.0), ("a", 2.0)]).is_err());
        assert!(serde_json::from_str::<HyperParams>(r#"{"a":1,"a":2}"#).is_err());
    }

    #[test]
    fn box_requires_lower_below_upper() {
        assert!(HyperBox::scalar("h", 1.0, 1.0).is_err());
        assert!(serde_json::from_str::<HyperBox>(r#"{"h":[2,1]}"#).is_err());
        let b: HyperBox = serde_json::from_str(r#"{"h":[0.5,2]}"#).unwrap();
        assert!(b.contains(&HyperParams::scalar("h", 1.0)));
        assert!(!b.contains(&HyperParams::scalar("h", 3.0)));
        assert!(!b.contains(&HyperParams::scalar("g", 1.0)));
    }

    #[test]
    fn series_times_strictly_increase() {
        let mut s = ObservationSeries::new();
        s.push(1, vec![0.1]).unwrap();
        assert!(s.push(1, vec![0.2]).is_err());
        s.push(3, vec![0.2]).unwrap();
        assert_eq!(s.len(), 2);
    }
}
