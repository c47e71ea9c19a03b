//! Fairness indices and per-application utility summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no values")]
    Empty,
    #[error("value {value} outside [{low}, {high}]")]
    OutOfRange { value: f64, low: f64, high: f64 },
    #[error("negative value {0}")]
    Negative(f64),
    #[error("all values are zero")]
    AllZero,
    #[error("percentile {0} outside [0, 100]")]
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Allocated,
    Simulated,
}

/// One utility observation for one application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySample {
    pub app_id: String,
    pub app_type: String,
    /// Utility on the [1, 5] scale; NaN marks a failed measurement and is
    /// written as null.
    #[serde(with = "nan_as_null")]
    pub value: f64,
    pub source: SampleSource,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// `1 - 2 sigma / (high - low)`, clamped to [0, 1].
pub fn f_index(values: &[f64], low: f64, high: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&value) = values.iter().find(|v| !(low..=high).contains(*v)) {
        return Err(MetricsError::OutOfRange { value, low, high });
    }
    Ok((1.0 - 2.0 * std_dev(values) / (high - low)).clamp(0.0, 1.0))
}

/// `(sum x)^2 / (n sum x^2)`.
pub fn jain_index(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&v) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(MetricsError::Negative(v));
    }
    let s: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(MetricsError::AllZero);
    }
    Ok(s * s / (values.len() as f64 * sq))
}

/// Linear interpolation between closest ranks at rank `p/100 * (n-1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, MetricsError> {
    if !(0.0..=100.0).contains(&p) {
        return Err(MetricsError::Percentile(p));
    }
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSummary {
    pub app_id: String,
    pub app_type: String,
    pub samples: usize,
    pub percentile: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    pub app_type: String,
    pub apps: usize,
    /// Mean over the type's applications of their per-app percentile.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub p: f64,
    pub per_app: Vec<AppSummary>,
    pub per_type: Vec<TypeSummary>,
    /// Mean over all applications of their per-app percentile.
    pub overall: Option<f64>,
    pub notices: Vec<String>,
}

/// Groups samples by application, takes the `p`-th percentile per app and
/// averages those per type. Non-finite samples are dropped; an application
/// left with none is omitted and noted.
pub fn percentile_summary(samples: &[UtilitySample], p: f64) -> Result<Summary, MetricsError> {
    if !(0.0..=100.0).contains(&p) {
        return Err(MetricsError::Percentile(p));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for s in samples {
        let g = groups.entry((&s.app_id, &s.app_type)).or_default();
        if s.value.is_finite() {
            g.push(s.value);
        }
    }
    let mut notices = Vec::new();
    let mut per_app = Vec::new();
    for ((id, ty), values) in groups {
        if values.is_empty() {
            notices.push(format!("application {id} ({ty}) has no valid samples"));
            continue;
        }
        per_app.push(AppSummary {
            app_id: id.to_string(),
            app_type: ty.to_string(),
            samples: values.len(),
            percentile: percentile(&values, p)?,
            mean: mean(&values),
            std: std_dev(&values),
        });
    }
    let mut by_type: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for a in &per_app {
        by_type.entry(&a.app_type).or_default().push(a.percentile);
    }
    let per_type = by_type
        .into_iter()
        .map(|(ty, v)| TypeSummary {
            app_type: ty.to_string(),
            apps: v.len(),
            value: mean(&v),
        })
        .collect();
    let all: Vec<f64> = per_app.iter().map(|a| a.percentile).collect();
    Ok(Summary {
        p,
        overall: (!all.is_empty()).then(|| mean(&all)),
        per_app,
        per_type,
        notices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: &str, ty: &str, value: f64) -> UtilitySample {
        UtilitySample {
            app_id: id.into(),
            app_type: ty.into(),
            value,
            source: SampleSource::Simulated,
        }
    }

    #[test]
    fn f_index_examples() {
        assert_eq!(f_index(&[3.2; 7], 1.0, 5.0).unwrap(), 1.0);
        assert_eq!(f_index(&[1.0, 5.0, 1.0, 5.0], 1.0, 5.0).unwrap(), 0.0);
        let f = f_index(&[3.0, 3.0, 3.0, 4.0], 1.0, 5.0).unwrap();
        assert!((f - (1.0 - 2.0 * 0.1875f64.sqrt() / 4.0)).abs() < 1e-12);
        assert!((f - 0.7835).abs() < 1e-4);
        assert_eq!(f_index(&[], 1.0, 5.0), Err(MetricsError::Empty));
        assert!(matches!(
            f_index(&[0.5], 1.0, 5.0),
            Err(MetricsError::OutOfRange { .. })
        ));
    }

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[2.0; 5]).unwrap(), 1.0);
        assert!((jain_index(&[0.0, 0.0, 7.0, 0.0]).unwrap() - 0.25).abs() < 1e-12);
        assert!((jain_index(&[1.0, 5.0]).unwrap() - 36.0 / 52.0).abs() < 1e-12);
        assert_eq!(jain_index(&[0.0, 0.0]), Err(MetricsError::AllZero));
        assert!(jain_index(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert!((percentile(&v, 10.0).unwrap() - 1.9).abs() < 1e-12);
        assert_eq!(percentile(&v, 50.0).unwrap(), 5.5);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 10.0);
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn summary_groups_by_app_and_type() {
        let mut s = Vec::new();
        for i in 1..=10 {
            s.push(sample("a", "web", 1.0 + (i - 1) as f64 * 4.0 / 9.0));
            s.push(sample("b", "web", 3.0));
            s.push(sample("c", "dl", 4.0));
        }
        s.push(sample("d", "dl", f64::NAN));
        let sum = percentile_summary(&s, 10.0).unwrap();
        let a = &sum.per_app[0];
        // independent: rank 0.9 between the two lowest samples
        let expect = 1.0 + 0.9 * 4.0 / 9.0;
        assert!((a.percentile - expect).abs() < 1e-12);
        assert_eq!(sum.per_type[1].app_type, "web");
        assert!((sum.per_type[1].value - (expect + 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(sum.per_type[0].value, 4.0);
        assert_eq!(sum.per_app[1].std, 0.0);
        assert_eq!(sum.notices.len(), 1);
        assert!(sum.notices[0].contains('d'));
    }

    #[test]
    fn summary_of_constant_apps() {
        let s: Vec<_> = (0..5).map(|i| sample(&format!("x{i}"), "ssh", 4.25)).collect();
        let sum = percentile_summary(&s, 10.0).unwrap();
        assert_eq!(sum.overall, Some(4.25));
        assert_eq!(sum.per_type[0].value, 4.25);
    }

    proptest! {
        #[test]
        fn f_index_is_affine_invariant(v in prop::collection::vec(1.0f64..5.0, 1..30), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let f = f_index(&v, 1.0, 5.0).unwrap();
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let g = f_index(&w, a + b, 5.0 * a + b).unwrap();
            prop_assert!((f - g).abs() < 1e-9);
        }

        #[test]
        fn f_index_is_one_iff_equal(v in prop::collection::vec(1.0f64..5.0, 1..30)) {
            let f = f_index(&v, 1.0, 5.0).unwrap();
            let equal = v.iter().all(|x| *x == v[0]);
            prop_assert_eq!(f == 1.0, equal);
        }

        #[test]
        fn jain_is_scale_invariant(v in prop::collection::vec(0.0f64..100.0, 1..30), a in 0.01f64..100.0) {
            prop_assume!(v.iter().any(|x| *x > 0.0));
            let w: Vec<f64> = v.iter().map(|x| a * x).collect();
            prop_assert!((jain_index(&v).unwrap() - jain_index(&w).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn extreme_percentiles_are_min_and_max(v in prop::collection::vec(1.0f64..5.0, 1..30)) {
            let s: Vec<_> = v.iter().map(|&x| sample("a", "t", x)).collect();
            let lo = percentile_summary(&s, 0.0).unwrap();
            let hi = percentile_summary(&s, 100.0).unwrap();
            prop_assert_eq!(lo.per_app[0].percentile, v.iter().copied().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(hi.per_app[0].percentile, v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }
}
