//! Principal component analysis of representation tables, with per-component
//! statistics that show which directions carry subject identity versus state.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as rank loss.
const RANK_EPS: f64 = 1e-12;
/// Effect size threshold for calling a component discriminative.
const EFFECT_THRESHOLD: f64 = 0.8;

/// Statistics for one principal component.
#[derive(Debug, Clone, Serialize)]
pub struct PcaComponent {
    /// 1-based component number, in descending eigenvalue order.
    pub component: usize,
    /// Eigenvalue over total variance.
    pub explained_var_ratio: f64,
    /// One-way ANOVA F statistic of the scores grouped by subject.
    pub subject_f: f64,
    /// Cohen's d between static classes 1 and 0, when both are present.
    pub d_static: Option<f64>,
    /// Cohen's d between state classes 1 and 0, when both are present.
    pub d_state: Option<f64>,
    /// Whether the static effect size clears the threshold.
    pub static_flag: bool,
    /// Whether the state effect size clears the threshold.
    pub state_flag: bool,
}

/// Full analysis output: component stats plus the projected scores, kept so
/// callers can draw score densities per label group.
#[derive(Debug, Clone)]
pub struct PcaReport {
    pub components: Vec<PcaComponent>,
    /// Projection of each input row onto the retained components.
    pub scores: Vec<Vec<f64>>,
    pub subjects: Vec<String>,
    pub static_labels: Vec<Option<f64>>,
    pub state_labels: Vec<Option<f64>>,
}

/// Cohen's d between rows labeled 1.0 and rows labeled 0.0.
///
/// Positive d means class 1 sits higher on this axis. Rows with other or
/// missing labels are ignored. Returns None unless both groups are present.
/// A zero pooled deviation with distinct means degenerates to +-infinity.
pub fn cohens_d(scores: &[f64], labels: &[Option<f64>]) -> Option<f64> {
    let mut g0 = Vec::new();
    let mut g1 = Vec::new();
    for (v, l) in scores.iter().zip(labels) {
        match l {
            Some(x) if *x == 0.0 => g0.push(*v),
            Some(x) if *x == 1.0 => g1.push(*v),
            _ => {}
        }
    }
    if g0.is_empty() || g1.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let (m0, m1) = (mean(&g0), mean(&g1));
    let dof = g0.len() + g1.len() - 2;
    let pooled = if dof > 0 {
        ((ss(&g0, m0) + ss(&g1, m1)) / dof as f64).sqrt()
    } else {
        0.0
    };
    let diff = m1 - m0;
    if pooled > 0.0 {
        Some(diff / pooled)
    } else if diff == 0.0 {
        Some(0.0)
    } else {
        Some(diff.signum() * f64::INFINITY)
    }
}

/// One-way ANOVA F statistic of scores grouped by subject.
///
/// Zero within-group variance with real between-group spread yields infinity;
/// fewer than two groups yields 0 because there is nothing to separate.
pub fn anova_f(scores: &[f64], subjects: &[String]) -> f64 {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (v, s) in scores.iter().zip(subjects) {
        groups.entry(s.as_str()).or_default().push(*v);
    }
    let k = groups.len();
    let n = scores.len();
    if k < 2 || n <= k {
        return 0.0;
    }
    let grand = scores.iter().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for vals in groups.values() {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        ss_between += vals.len() as f64 * (m - grand) * (m - grand);
        ss_within += vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let ms_between = ss_between / (k - 1) as f64;
    let ms_within = ss_within / (n - k) as f64;
    if ms_within > 0.0 {
        ms_between / ms_within
    } else if ms_between > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Runs PCA on the feature rows and scores each retained component.
///
/// Features are centered but not rescaled, so components reflect the raw
/// geometry of the representation space. At most `max_components` components
/// are kept, fewer when the data has lower rank.
pub fn analyze(
    features: &[Vec<f64>],
    subjects: &[String],
    static_labels: &[Option<f64>],
    state_labels: &[Option<f64>],
    max_components: usize,
) -> Result<PcaReport> {
    let n = features.len();
    if n < 2 {
        return Err(Error::data(format!(
            "principal component analysis needs at least 2 rows, found {n}"
        )));
    }
    if subjects.len() != n || static_labels.len() != n || state_labels.len() != n {
        return Err(Error::data("analysis inputs disagree on row count"));
    }
    if max_components == 0 {
        return Err(Error::data("max_components must be positive"));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|r| r.len() != dim) {
        return Err(Error::data("features must be non-empty and rectangular"));
    }

    let mut mean = vec![0.0; dim];
    for row in features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = features
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for row in &centered {
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += row[i] * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let total_var: f64 = (0..dim).map(|i| cov[(i, i)]).sum();

    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let lam_max = eigen.eigenvalues[order[0]].max(0.0);
    let mut kept: Vec<(f64, Vec<f64>)> = Vec::new();
    for &idx in &order {
        let lam = eigen.eigenvalues[idx];
        if lam <= 0.0 || lam <= RANK_EPS * lam_max {
            break;
        }
        if kept.len() == max_components {
            break;
        }
        let mut v: Vec<f64> = (0..dim).map(|r| eigen.eigenvectors[(r, idx)]).collect();
        // Fix the sign so the largest-magnitude loading is positive, which
        // makes scores reproducible across eigensolver quirks. Magnitude
        // ties go to the lower index.
        let mut lead = 0;
        for i in 1..dim {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        kept.push((lam, v));
    }
    if kept.is_empty() {
        return Err(Error::data(
            "representation has no variance, nothing to analyze",
        ));
    }

    let scores: Vec<Vec<f64>> = centered
        .iter()
        .map(|row| {
            kept.iter()
                .map(|(_, v)| row.iter().zip(v).map(|(x, w)| x * w).sum())
                .collect()
        })
        .collect();

    let mut components = Vec::with_capacity(kept.len());
    for (c, (lam, _)) in kept.iter().enumerate() {
        let axis: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let d_static = cohens_d(&axis, static_labels);
        let d_state = cohens_d(&axis, state_labels);
        components.push(PcaComponent {
            component: c + 1,
            explained_var_ratio: if total_var > 0.0 { lam / total_var } else { 0.0 },
            subject_f: anova_f(&axis, subjects),
            d_static,
            d_state,
            static_flag: d_static.map(|d| d.abs() > EFFECT_THRESHOLD).unwrap_or(false),
            state_flag: d_state.map(|d| d.abs() > EFFECT_THRESHOLD).unwrap_or(false),
        });
    }

    Ok(PcaReport {
        components,
        scores,
        subjects: subjects.to_vec(),
        static_labels: static_labels.to_vec(),
        state_labels: state_labels.to_vec(),
    })
}

/// Writes the per-component statistics as CSV.
pub fn write_report_csv(path: &Path, report: &PcaReport) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "component,explained_var_ratio,subject_f,d_static,d_state,static_flag,state_flag"
    )
    .map_err(|e| Error::io(path, e))?;
    for c in &report.components {
        let opt = |d: Option<f64>| d.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            c.component,
            c.explained_var_ratio,
            c.subject_f,
            opt(c.d_static),
            opt(c.d_state),
            c.static_flag,
            c.state_flag
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
