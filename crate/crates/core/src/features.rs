//! Patient-level feature matrix assembly and univariate ANOVA selection.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dwi::TimePoint;
use crate::error::{Error, Result};
use crate::radiomics::FeatureVector;

/// Rows are patients, columns stably named features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub values: Array2<f64>,
    pub labels: Option<Vec<bool>>,
}

impl FeatureMatrix {
    pub fn new(
        columns: Vec<String>,
        ids: Vec<String>,
        values: Array2<f64>,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        if values.nrows() != ids.len() || values.ncols() != columns.len() {
            return Err(Error::InvalidArgument(format!(
                "matrix {:?} does not match {} ids x {} columns",
                values.shape(),
                ids.len(),
                columns.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != ids.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {} rows",
                    l.len(),
                    ids.len()
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate column {c}")));
            }
        }
        if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {v} at row {} column {}",
                ids[r], columns[c]
            )));
        }
        Ok(FeatureMatrix {
            columns,
            ids,
            values: values.as_standard_layout().into_owned(),
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> Result<&[bool]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("feature matrix has no labels".into()))
    }

    pub fn rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            columns: self.columns.clone(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            values: self.values.select(Axis(0), idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Project onto `names`, in that order. Missing names are an error.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix> {
        let index: BTreeMap<&str, usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let missing: Vec<String> = names
            .iter()
            .filter(|n| !index.contains_key(n.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::SchemaMismatch { missing });
        }
        let idx: Vec<usize> = names.iter().map(|n| index[n.as_str()]).collect();
        Ok(FeatureMatrix {
            columns: names.to_vec(),
            ids: self.ids.clone(),
            values: self.values.select(Axis(1), &idx).as_standard_layout().into_owned(),
            labels: self.labels.clone(),
        })
    }

    pub fn apply_selection(&self, report: &SelectionReport) -> Result<FeatureMatrix> {
        self.select_columns(&report.chosen)
    }
}

/// Everything extracted for one patient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatientFeatures {
    pub patient_id: String,
    pub label: Option<bool>,
    pub imaging: BTreeMap<(TimePoint, String), FeatureVector>,
    pub clinical: FeatureVector,
}

/// Column name for an imaging feature already carrying its class prefix.
pub fn imaging_column(tp: TimePoint, map: &str, feature: &str) -> String {
    format!("{tp}_{map}_{feature}")
}

/// Build the matrix for one map subset and set of time points. Columns are
/// ordered by time point, then map name, then feature order, then the
/// clinical block.
pub fn assemble(
    patients: &[PatientFeatures],
    maps: &[String],
    timepoints: &[TimePoint],
) -> Result<FeatureMatrix> {
    if patients.is_empty() {
        return Err(Error::InvalidArgument("no patients to assemble".into()));
    }
    let maps: BTreeSet<&str> = maps.iter().map(String::as_str).collect();
    let tps: BTreeSet<TimePoint> = timepoints.iter().copied().collect();
    if maps.is_empty() || tps.is_empty() {
        return Err(Error::Config("map subset and time points must be non-empty".into()));
    }

    let cell = |p: &PatientFeatures, tp: TimePoint, m: &str| -> Result<FeatureVector> {
        p.imaging
            .get(&(tp, m.to_string()))
            .cloned()
            .ok_or_else(|| Error::MissingCell {
                patient: p.patient_id.clone(),
                timepoint: tp.to_string(),
                map: m.to_string(),
            })
    };

    let first = &patients[0];
    let mut columns = Vec::new();
    let mut schema: Vec<Vec<String>> = Vec::new();
    for &tp in &tps {
        for &m in &maps {
            let fv = cell(first, tp, m)?;
            let names: Vec<String> = fv.names().map(String::from).collect();
            columns.extend(names.iter().map(|n| imaging_column(tp, m, n)));
            schema.push(names);
        }
    }
    let clinical_names: Vec<String> = first.clinical.names().map(String::from).collect();
    columns.extend(clinical_names.iter().map(|n| format!("clinical_{n}")));

    let mut values = Array2::zeros((patients.len(), columns.len()));
    for (r, p) in patients.iter().enumerate() {
        let mut row = Vec::with_capacity(columns.len());
        let mut block = 0;
        for &tp in &tps {
            for &m in &maps {
                let fv = cell(p, tp, m)?;
                if !fv.names().eq(schema[block].iter().map(String::as_str)) {
                    return Err(Error::InvalidArgument(format!(
                        "patient {} has a different feature set for {tp} {m}",
                        p.patient_id
                    )));
                }
                row.extend(fv.values());
                block += 1;
            }
        }
        if !p.clinical.names().eq(clinical_names.iter().map(String::as_str)) {
            return Err(Error::InvalidArgument(format!(
                "patient {} has a different clinical feature set",
                p.patient_id
            )));
        }
        row.extend(p.clinical.values());
        for (c, v) in row.into_iter().enumerate() {
            values[[r, c]] = v;
        }
    }

    let labels = if patients.iter().all(|p| p.label.is_some()) {
        Some(patients.iter().map(|p| p.label.unwrap()).collect())
    } else {
        None
    };
    FeatureMatrix::new(
        columns,
        patients.iter().map(|p| p.patient_id.clone()).collect(),
        values,
        labels,
    )
}

pub(crate) fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (labels.len() - pos, pos)
}

/// One-way two-group ANOVA F statistic per column. A column that separates
/// the classes with zero within-class variance scores `+inf`.
pub fn anova_f_scores(x: &FeatureMatrix) -> Result<Vec<f64>> {
    let labels = x.labels()?;
    let (neg, pos) = class_counts(labels);
    if neg < 2 || pos < 2 {
        return Err(Error::SingleClass {
            negatives: neg,
            positives: pos,
        });
    }
    let n = labels.len() as f64;
    let (n0, n1) = (neg as f64, pos as f64);
    let scores = x
        .values
        .axis_iter(Axis(1))
        .map(|col| {
            let (mut s0, mut s1) = (0.0, 0.0);
            for (&v, &l) in col.iter().zip(labels) {
                if l {
                    s1 += v
                } else {
                    s0 += v
                }
            }
            let (m0, m1) = (s0 / n0, s1 / n1);
            let ss_between = n0 * n1 / n * (m0 - m1).powi(2);
            let ss_within: f64 = col
                .iter()
                .zip(labels)
                .map(|(&v, &l)| (v - if l { m1 } else { m0 }).powi(2))
                .sum();
            if ss_between == 0.0 {
                0.0
            } else if ss_within == 0.0 {
                f64::INFINITY
            } else {
                ss_between / (ss_within / (n - 2.0))
            }
        })
        .collect();
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub name: String,
    #[serde(with = "crate::serde_float")]
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub scores: Vec<ColumnScore>,
    /// Selected columns, best first.
    pub chosen: Vec<String>,
}

/// Keep the `k` best columns; ties go to the lexicographically smaller name.
pub fn select_top_k(names: &[String], scores: &[f64], k: usize) -> Result<SelectionReport> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if names.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} names for {} scores",
            names.len(),
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| names[a].cmp(&names[b]))
    });
    order.truncate(k);
    Ok(SelectionReport {
        scores: names
            .iter()
            .zip(scores)
            .map(|(n, &s)| ColumnScore {
                name: n.clone(),
                score: s,
            })
            .collect(),
        chosen: order.into_iter().map(|i| names[i].clone()).collect(),
    })
}

/// Score and select on the given (training) matrix.
pub fn fit_selection(x: &FeatureMatrix, k: usize) -> Result<SelectionReport> {
    let scores = anova_f_scores(x)?;
    select_top_k(&x.columns, &scores, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn matrix(cols: &[&str], values: Array2<f64>, labels: &[bool]) -> FeatureMatrix {
        FeatureMatrix::new(
            cols.iter().map(|s| s.to_string()).collect(),
            (0..values.nrows()).map(|i| format!("P{i}")).collect(),
            values,
            Some(labels.to_vec()),
        )
        .unwrap()
    }

    #[test]
    fn anova_examples() {
        let x = matrix(
            &["same", "sep", "hand"],
            array![[1.0, 0.0, 1.0], [3.0, 0.0, 2.0], [3.0, 1.0, 3.0], [1.0, 1.0, 4.0]],
            &[false, false, true, true],
        );
        let f = anova_f_scores(&x).unwrap();
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], f64::INFINITY);
        assert!((f[2] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn anova_needs_two_per_class() {
        let x = matrix(&["a"], array![[1.0], [2.0], [3.0]], &[false, false, false]);
        assert!(matches!(anova_f_scores(&x), Err(Error::SingleClass { .. })));
    }

    #[test]
    fn top_k_examples() {
        let names = vec!["a".to_string(), "b".to_string()];
        let r = select_top_k(&names, &[0.0, 5.0], 1).unwrap();
        assert_eq!(r.chosen, vec!["b"]);
        let r = select_top_k(&names, &[0.0, 5.0], 2).unwrap();
        assert_eq!(r.chosen.len(), 2);
        let r = select_top_k(&names, &[0.0, 5.0], 10).unwrap();
        assert_eq!(r.chosen.len(), 2);
        let tied = vec!["z".to_string(), "m".to_string(), "a".to_string()];
        let r = select_top_k(&tied, &[1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(r.chosen, vec!["a", "m"]);
        let r = select_top_k(&tied, &[f64::INFINITY, 3.0, f64::INFINITY], 2).unwrap();
        assert_eq!(r.chosen, vec!["a", "z"]);
        assert!(select_top_k(&tied, &[1.0, 1.0, 1.0], 0).is_err());
    }

    #[test]
    fn selection_report_json_keeps_infinity() {
        let names = vec!["a".to_string(), "b".to_string()];
        let r = select_top_k(&names, &[f64::INFINITY, 2.5], 1).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"inf\""));
        let back: SelectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn selection_ignores_test_labels() {
        let x = matrix(
            &["a", "b", "c"],
            array![[0.0, 1.0, 5.0], [0.1, 2.0, 1.0], [1.0, 1.5, 2.0], [1.2, 2.5, 3.0], [0.5, 0.0, 0.0]],
            &[false, false, true, true, false],
        );
        let train = x.rows(&[0, 1, 2, 3]);
        let report = fit_selection(&train, 2).unwrap();
        let mut test = x.rows(&[4]);
        let before = test.apply_selection(&report).unwrap();
        test.labels = Some(vec![true]);
        let after = test.apply_selection(&report).unwrap();
        assert_eq!(before.columns, after.columns);
        assert_eq!(before.values, after.values);
    }

    #[test]
    fn matrix_invariants() {
        let cols = vec!["a".to_string(), "a".to_string()];
        assert!(FeatureMatrix::new(cols, vec!["p".into()], array![[1.0, 2.0]], None).is_err());
        let cols = vec!["a".to_string()];
        assert!(FeatureMatrix::new(cols, vec!["p".into()], array![[f64::NAN]], None).is_err());
    }

    fn patient(id: &str, maps: &[&str], tps: &[TimePoint]) -> PatientFeatures {
        let mut p = PatientFeatures {
            patient_id: id.into(),
            label: Some(false),
            ..Default::default()
        };
        for &tp in tps {
            for &m in maps {
                let mut fv = FeatureVector::default();
                fv.push("firstorder_Mean", 1.0);
                fv.push("firstorder_Median", 2.0);
                p.imaging.insert((tp, m.to_string()), fv);
            }
        }
        p.clinical.push("age", 50.0);
        p
    }

    #[test]
    fn assemble_orders_and_counts() {
        let maps = ["F", "ADC_0_100"];
        let ps = vec![
            patient("P1", &maps, &TimePoint::ALL),
            patient("P2", &maps, &TimePoint::ALL),
        ];
        let maps: Vec<String> = maps.iter().map(|s| s.to_string()).collect();
        let x = assemble(&ps, &maps, &[TimePoint::T2, TimePoint::T0, TimePoint::T1]).unwrap();
        assert_eq!(x.n_cols(), 2 * 3 * 2 + 1);
        assert_eq!(x.columns[0], "T0_ADC_0_100_firstorder_Mean");
        assert_eq!(x.columns[2], "T0_F_firstorder_Mean");
        assert_eq!(x.columns.last().unwrap(), "clinical_age");
    }

    #[test]
    fn assemble_names_the_gap() {
        let ps = vec![
            patient("P1", &["F"], &TimePoint::ALL),
            patient("P2", &["F"], &[TimePoint::T0, TimePoint::T1]),
        ];
        match assemble(&ps, &["F".to_string()], &TimePoint::ALL) {
            Err(Error::MissingCell { patient, timepoint, map }) => {
                assert_eq!((patient.as_str(), timepoint.as_str(), map.as_str()), ("P2", "T2", "F"));
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn anova_invariances(
            data in proptest::collection::vec(-10.0f64..10.0, 8),
            shift in -100.0f64..100.0,
            scale in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            rot in 0usize..8,
        ) {
            let labels = [false, true, false, true, true, false, false, true];
            let base = matrix(&["c"], Array2::from_shape_vec((8, 1), data.clone()).unwrap(), &labels);
            let f = anova_f_scores(&base).unwrap()[0];
            prop_assume!(f.is_finite() && f > 1e-6);

            let shifted = matrix(&["c"], Array2::from_shape_vec((8, 1), data.iter().map(|v| v + shift).collect()).unwrap(), &labels);
            let scaled = matrix(&["c"], Array2::from_shape_vec((8, 1), data.iter().map(|v| v * scale).collect()).unwrap(), &labels);
            let mut idx: Vec<usize> = (0..8).collect();
            idx.rotate_left(rot);
            let permuted = base.rows(&idx);
            for other in [shifted, scaled, permuted] {
                let g = anova_f_scores(&other).unwrap()[0];
                prop_assert!((f - g).abs() <= 1e-6 * f.max(1.0), "{} vs {}", f, g);
            }
        }

        #[test]
        fn selection_is_column_order_invariant(
            scores in proptest::collection::vec(0u8..4, 1..12),
            k in 1usize..12,
            rot in 0usize..12,
        ) {
            let names: Vec<String> = (0..scores.len()).map(|i| format!("c{i:02}")).collect();
            let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
            let a = select_top_k(&names, &s, k).unwrap();
            let r = rot % names.len();
            let mut n2 = names.clone();
            let mut s2 = s.clone();
            n2.rotate_left(r);
            s2.rotate_left(r);
            let b = select_top_k(&n2, &s2, k).unwrap();
            prop_assert_eq!(a.chosen, b.chosen);
        }
    }
}
