//! Datasets, standardization, CSV ingestion and feature groups.
//!
//! Rows are stored labeled-first: rows `0..n` carry an outcome, rows
//! `n..n+m` are unlabeled.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("row {row} has {got} fields, expected {expected}")]
    RaggedRows { row: usize, got: usize, expected: usize },
    #[error("group labels must cover 1..G without gaps (missing {0})")]
    NonContiguousLabels(usize),
    #[error("{got} group labels for {expected} features")]
    GroupLengthMismatch { got: usize, expected: usize },
    #[error("no labeled rows")]
    MissingLabels,
    #[error("feature {0} is constant on the labeled rows")]
    ConstantColumn(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    #[default]
    Linear,
    Binomial,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Continuous(DVector<f64>),
    /// Success counts and trial counts for the labeled rows.
    Binomial { y: DVector<f64>, trials: DVector<f64> },
}

impl Outcome {
    pub fn len(&self) -> usize {
        match self {
            Outcome::Continuous(y) => y.len(),
            Outcome::Binomial { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> OutcomeKind {
        match self {
            Outcome::Continuous(_) => OutcomeKind::Linear,
            Outcome::Binomial { .. } => OutcomeKind::Binomial,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        match self {
            Outcome::Continuous(y) => y,
            Outcome::Binomial { y, .. } => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Features, (n + m) × p, labeled rows first.
    pub x: DMatrix<f64>,
    pub outcome: Outcome,
    /// Group label in 1..=G for every feature.
    pub groups: Vec<usize>,
    pub feature_names: Vec<String>,
    pub standardized: bool,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, outcome: Outcome, groups: Option<Vec<usize>>) -> Result<Self, DataError> {
        let p = x.ncols();
        let groups = groups.unwrap_or_else(|| vec![1; p]);
        if groups.len() != p {
            return Err(DataError::GroupLengthMismatch {
                got: groups.len(),
                expected: p,
            });
        }
        split_groups(&groups)?;
        let n = outcome.len();
        if n == 0 {
            return Err(DataError::MissingLabels);
        }
        if n > x.nrows() {
            return Err(DataError::Invalid(format!(
                "{n} outcomes for {} rows",
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || outcome.values().iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite value".into()));
        }
        if let Outcome::Binomial { y, trials } = &outcome {
            if trials.len() != y.len() {
                return Err(DataError::Invalid("trials length differs from outcome length".into()));
            }
            for (a, t) in y.iter().zip(trials.iter()) {
                if *t < 1.0 || t.fract() != 0.0 || *a < 0.0 || a > t || a.fract() != 0.0 {
                    return Err(DataError::Invalid(format!("invalid binomial count {a}/{t}")));
                }
            }
        }
        let feature_names = (1..=p).map(|j| format!("x{j}")).collect();
        Ok(Self {
            x,
            outcome,
            groups,
            feature_names,
            standardized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn m(&self) -> usize {
        self.x.nrows() - self.n()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_total(&self) -> usize {
        self.x.nrows()
    }

    pub fn labeled_x(&self) -> DMatrix<f64> {
        self.x.rows(0, self.n()).into_owned()
    }

    pub fn unlabeled_x(&self) -> DMatrix<f64> {
        self.x.rows(self.n(), self.m()).into_owned()
    }

    pub fn y(&self) -> &DVector<f64> {
        self.outcome.values()
    }

    /// Number of distinct groups.
    pub fn n_groups(&self) -> usize {
        self.groups.iter().copied().max().unwrap_or(0)
    }

    /// Labeled rows joined with the outcome as last column (n × (p+1)).
    pub fn joint_labeled(&self) -> DMatrix<f64> {
        let n = self.n();
        let p = self.p();
        let mut out = DMatrix::zeros(n, p + 1);
        out.view_mut((0, 0), (n, p)).copy_from(&self.x.rows(0, n));
        out.column_mut(p).copy_from(self.y());
        out
    }

    /// Keep the labeled rows and the first `m` unlabeled rows.
    pub fn with_unlabeled(&self, m: usize) -> Dataset {
        let m = m.min(self.m());
        let mut d = self.clone();
        d.x = self.x.rows(0, self.n() + m).into_owned();
        d
    }

    /// Standardize features (and a continuous outcome) using labeled-row moments.
    pub fn standardize(&self) -> Result<(Dataset, Standardizer), DataError> {
        let std_y = match &self.outcome {
            Outcome::Continuous(y) => Some(y),
            Outcome::Binomial { .. } => None,
        };
        let t = Standardizer::fit(&self.x, self.n(), std_y)?;
        let mut d = self.clone();
        d.x = t.apply(&self.x);
        if let Outcome::Continuous(y) = &self.outcome {
            d.outcome = Outcome::Continuous(t.apply_y(y));
        }
        d.standardized = true;
        Ok((d, t))
    }
}

/// Affine transform fitted on labeled rows: x' = (x - mean) / scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn moments(col: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = col.clone().sum::<f64>() / n as f64;
    let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl Standardizer {
    /// Moments from the first `n_rows` rows of `x` (and from `y` if given).
    pub fn fit(x: &DMatrix<f64>, n_rows: usize, y: Option<&DVector<f64>>) -> Result<Self, DataError> {
        if n_rows < 2 {
            return Err(DataError::Invalid("standardization needs at least two rows".into()));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let (m, s) = moments(col.iter().take(n_rows).copied(), n_rows);
            if !(s > 0.0) {
                return Err(DataError::ConstantColumn(j));
            }
            means.push(m);
            scales.push(s);
        }
        let (y_mean, y_scale) = match y {
            Some(y) => {
                let (m, s) = moments(y.iter().copied(), y.len());
                if !(s > 0.0) {
                    return Err(DataError::Invalid("outcome is constant".into()));
                }
                (m, s)
            }
            None => (0.0, 1.0),
        };
        Ok(Self {
            means,
            scales,
            y_mean,
            y_scale,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            means: vec![0.0; p],
            scales: vec![1.0; p],
            y_mean: 0.0,
            y_scale: 1.0,
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 0..x.ncols() {
            let (m, s) = (self.means[j], self.scales[j]);
            for v in out.column_mut(j).iter_mut() {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn apply_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.y_mean) / self.y_scale)
    }

    pub fn invert_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v * self.y_scale + self.y_mean)
    }
}

#[derive(Debug, Clone)]
pub struct Standardized {
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub transform: Standardizer,
}

/// Standardize columns of `x` (and `y`). When `y` is given, only its first
/// `y.len()` rows of `x` define the moments; otherwise all rows do.
pub fn standardize(x: &DMatrix<f64>, y: Option<&DVector<f64>>) -> Result<Standardized, DataError> {
    let n_rows = y.map_or(x.nrows(), |v| v.len());
    let transform = Standardizer::fit(x, n_rows, y)?;
    Ok(Standardized {
        x: transform.apply(x),
        y: y.map(|v| transform.apply_y(v)),
        transform,
    })
}

/// Feature indices (0-based) of every group, ordered by label.
pub fn split_groups(labels: &[usize]) -> Result<Vec<Vec<usize>>, DataError> {
    let g = labels.iter().copied().max().unwrap_or(0);
    if labels.contains(&0) {
        return Err(DataError::NonContiguousLabels(0));
    }
    let mut out = vec![Vec::new(); g];
    for (j, &l) in labels.iter().enumerate() {
        out[l - 1].push(j);
    }
    if let Some(k) = out.iter().position(|v| v.is_empty()) {
        return Err(DataError::NonContiguousLabels(k + 1));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub outcome: OutcomeKind,
    pub label_column: String,
    pub trials_column: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            outcome: OutcomeKind::Linear,
            label_column: "y".into(),
            trials_column: "trials".into(),
        }
    }
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(e, 1))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(e, 1))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(e, i + 2))?;
        if rec.len() != header.len() {
            return Err(DataError::RaggedRows {
                row: i + 2,
                got: rec.len(),
                expected: header.len(),
            });
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, rows })
}

fn csv_err(e: csv::Error, line: usize) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        other => DataError::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn parse_num(s: &str, line: usize) -> Result<f64, DataError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::Parse {
            line,
            msg: format!("not a finite number: {s:?}"),
        })
}

/// Read a sidecar file with one integer group label per line.
pub fn load_groups(path: &Path) -> Result<Vec<usize>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse::<usize>().map_err(|_| DataError::Parse {
            line: i + 1,
            msg: format!("bad group label {t:?}"),
        })?);
    }
    Ok(out)
}

/// Load a training CSV: header row, optional outcome column (empty cell =
/// unlabeled), remaining columns are features.
pub fn load_csv(path: &Path, groups: Option<&Path>, opts: &IngestOptions) -> Result<Dataset, DataError> {
    let t = read_table(path)?;
    let y_col = t.header.iter().position(|h| *h == opts.label_column);
    let n_col = match opts.outcome {
        OutcomeKind::Binomial => t.header.iter().position(|h| *h == opts.trials_column),
        OutcomeKind::Linear => None,
    };
    let y_col = y_col.ok_or(DataError::MissingLabels)?;
    let feat: Vec<usize> = (0..t.header.len()).filter(|&c| c != y_col && Some(c) != n_col).collect();

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (i, row) in t.rows.iter().enumerate() {
        let line = i + 2;
        let xs = feat
            .iter()
            .map(|&c| parse_num(&row[c], line))
            .collect::<Result<Vec<_>, _>>()?;
        let yv = row[y_col].as_str();
        if yv.is_empty() || yv.eq_ignore_ascii_case("na") {
            unlabeled.push(xs);
        } else {
            let trials = match n_col {
                Some(c) => parse_num(&row[c], line)?,
                None => 1.0,
            };
            labeled.push((xs, parse_num(yv, line)?, trials));
        }
    }
    if labeled.is_empty() {
        return Err(DataError::MissingLabels);
    }
    let p = feat.len();
    let n_tot = labeled.len() + unlabeled.len();
    let mut x = DMatrix::zeros(n_tot, p);
    for (i, (xs, _, _)) in labeled.iter().enumerate() {
        for j in 0..p {
            x[(i, j)] = xs[j];
        }
    }
    for (k, xs) in unlabeled.iter().enumerate() {
        for j in 0..p {
            x[(labeled.len() + k, j)] = xs[j];
        }
    }
    let y = DVector::from_iterator(labeled.len(), labeled.iter().map(|r| r.1));
    let outcome = match opts.outcome {
        OutcomeKind::Linear => Outcome::Continuous(y),
        OutcomeKind::Binomial => Outcome::Binomial {
            y,
            trials: DVector::from_iterator(labeled.len(), labeled.iter().map(|r| r.2)),
        },
    };
    let groups = match groups {
        Some(g) => Some(load_groups(g)?),
        None => None,
    };
    let mut ds = Dataset::new(x, outcome, groups)?;
    ds.feature_names = feat.iter().map(|&c| t.header[c].clone()).collect();
    Ok(ds)
}

/// Load only the feature columns of a CSV (outcome and trials columns are
/// skipped), keeping file row order.
pub fn load_features_csv(path: &Path, opts: &IngestOptions) -> Result<(Vec<String>, DMatrix<f64>), DataError> {
    let t = read_table(path)?;
    let feat: Vec<usize> = (0..t.header.len())
        .filter(|&c| t.header[c] != opts.label_column && t.header[c] != opts.trials_column)
        .collect();
    let mut x = DMatrix::zeros(t.rows.len(), feat.len());
    for (i, row) in t.rows.iter().enumerate() {
        for (k, &c) in feat.iter().enumerate() {
            x[(i, k)] = parse_num(&row[c], i + 2)?;
        }
    }
    Ok((feat.iter().map(|&c| t.header[c].clone()).collect(), x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    #[test]
    fn standardize_small_column() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let s = standardize(&x, None).unwrap();
        let e = 1.5f64.sqrt();
        assert!((s.x[(0, 0)] + e).abs() < 1e-12);
        assert!(s.x[(1, 0)].abs() < 1e-12);
        assert!((s.x[(2, 0)] - e).abs() < 1e-12);
        assert!((s.transform.scales[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn labeled_rows_define_moments() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 2.0, 100.0, -50.0]);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        let s = standardize(&x, Some(&y)).unwrap();
        assert_eq!(s.transform.means[0], 1.0);
        assert_eq!(s.transform.scales[0], 1.0);
        assert_eq!(s.x[(2, 0)], 99.0);
        assert_eq!(s.y.unwrap(), DVector::from_vec(vec![-1.0, 1.0]));
    }

    #[test]
    fn split_groups_rejects_gaps() {
        assert!(matches!(split_groups(&[1, 3]), Err(DataError::NonContiguousLabels(2))));
        assert!(matches!(split_groups(&[0, 1]), Err(DataError::NonContiguousLabels(0))));
        let g = split_groups(&[2, 1, 2]).unwrap();
        assert_eq!(g, vec![vec![1], vec![0, 2]]);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let mut f = tempfile_path("ragged.csv");
        writeln!(f.1, "x1,x2,y\n1,2,3\n4,5").unwrap();
        drop(f.1);
        let e = load_csv(&f.0, None, &IngestOptions::default()).unwrap_err();
        assert!(matches!(e, DataError::RaggedRows { row: 3, .. }), "{e:?}");
        let _ = std::fs::remove_file(&f.0);
    }

    #[test]
    fn csv_without_labels_is_rejected() {
        let mut f = tempfile_path("nolabel.csv");
        writeln!(f.1, "x1,x2\n1,2\n4,5").unwrap();
        drop(f.1);
        let e = load_csv(&f.0, None, &IngestOptions::default()).unwrap_err();
        assert!(matches!(e, DataError::MissingLabels));
        let _ = std::fs::remove_file(&f.0);
    }

    #[test]
    fn csv_orders_labeled_rows_first() {
        let mut f = tempfile_path("order.csv");
        writeln!(f.1, "a,y,b\n1,,2\n3,10,4\n5,,6\n7,20,8").unwrap();
        drop(f.1);
        let d = load_csv(&f.0, None, &IngestOptions::default()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.m(), 2);
        assert_eq!(d.x.row(0).iter().copied().collect::<Vec<_>>(), vec![3.0, 4.0]);
        assert_eq!(d.x.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0]);
        assert_eq!(d.feature_names, vec!["a", "b"]);
        let _ = std::fs::remove_file(&f.0);
    }

    fn tempfile_path(name: &str) -> (std::path::PathBuf, std::fs::File) {
        let dir = std::env::temp_dir().join(format!("bayfactor-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join(name);
        let f = std::fs::File::create(&p).unwrap();
        (p, f)
    }

    proptest! {
        #[test]
        fn standardize_is_idempotent(vals in proptest::collection::vec(-100.0f64..100.0, 12)) {
            let x = DMatrix::from_column_slice(6, 2, &vals);
            prop_assume!(Standardizer::fit(&x, 6, None).is_ok());
            let s1 = standardize(&x, None).unwrap();
            let s2 = standardize(&s1.x, None).unwrap();
            prop_assert!((&s1.x - &s2.x).amax() < 1e-12);
            for j in 0..2 {
                let c = s1.x.column(j);
                prop_assert!(c.sum().abs() < 1e-10);
                prop_assert!((c.norm_squared() - 6.0).abs() < 1e-10);
            }
        }

        #[test]
        fn stored_transform_reproduces_training_rows(vals in proptest::collection::vec(-10.0f64..10.0, 15)) {
            let x = DMatrix::from_column_slice(5, 3, &vals);
            prop_assume!(Standardizer::fit(&x, 5, None).is_ok());
            let s = standardize(&x, None).unwrap();
            prop_assert_eq!(s.transform.apply(&x), s.x);
        }

        #[test]
        fn groups_partition_features(labels in proptest::collection::vec(1usize..4, 1..20)) {
            if let Ok(g) = split_groups(&labels) {
                let mut all: Vec<usize> = g.iter().flatten().copied().collect();
                all.sort();
                prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            }
        }
    }
}
