//! Site-level data and the identifiers used to address sites and subsets.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::numlin::Matrix;

/// Upper bound on the number of sites; subsets are enumerated as bitmasks.
pub const MAX_SITES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("outcome has {y} rows but covariates have {x}")]
    LengthMismatch { y: usize, x: usize },
    #[error("missing or non-finite value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },
    #[error("site dataset is empty")]
    Empty,
}

/// Zero-based site index. Displayed one-based (`site 1` is index 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub usize);

impl SiteId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn label(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// A nonempty-or-empty set of sites, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SiteSet(u32);

impl SiteSet {
    pub fn empty() -> Self {
        SiteSet(0)
    }

    pub fn all(k: usize) -> Self {
        SiteSet(((1u64 << k) - 1) as u32)
    }

    pub fn from_mask(mask: u32) -> Self {
        SiteSet(mask)
    }

    pub fn singleton(site: SiteId) -> Self {
        SiteSet(1 << site.0)
    }

    pub fn from_sites<I: IntoIterator<Item = usize>>(sites: I) -> Self {
        SiteSet(sites.into_iter().fold(0, |m, s| m | (1 << s)))
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn contains(self, site: SiteId) -> bool {
        site.0 < 32 && self.0 & (1 << site.0) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Member sites in ascending order.
    pub fn iter(self) -> impl Iterator<Item = SiteId> {
        (0..32).filter(move |i| self.0 & (1 << i) != 0).map(SiteId)
    }

    /// Position of `site` among the members, ascending.
    pub fn position(self, site: SiteId) -> Option<usize> {
        self.contains(site).then(|| (self.0 & ((1u32 << site.0) - 1)).count_ones() as usize)
    }

    /// Highest member index + 1, or 0 for the empty set.
    pub fn span(self) -> usize {
        32 - self.0.leading_zeros() as usize
    }

    /// All nonempty subsets of `{0..k}` in increasing mask order.
    pub fn nonempty_subsets(k: usize) -> impl Iterator<Item = SiteSet> {
        (1u32..(1u32 << k)).map(SiteSet)
    }
}

impl fmt::Display for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.iter().map(|s| s.label().to_string()).collect();
        write!(f, "{{{}}}", labels.join(","))
    }
}

impl Serialize for SiteSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter().map(|x| x.0))
    }
}

impl<'de> Deserialize<'de> for SiteSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let sites = Vec::<usize>::deserialize(d)?;
        if let Some(bad) = sites.iter().find(|&&s| s >= MAX_SITES) {
            return Err(serde::de::Error::custom(format!("site index {bad} out of range")));
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(serde::de::Error::custom("subset members must be strictly ascending"));
        }
        Ok(SiteSet::from_sites(sites))
    }
}

/// One site's individual-level rows. Never leaves the site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteDataset {
    y: Vec<f64>,
    x: Matrix,
}

impl SiteDataset {
    pub fn new(y: Vec<f64>, x: Matrix) -> Result<Self, DataError> {
        if y.len() != x.rows() {
            return Err(DataError::LengthMismatch { y: y.len(), x: x.rows() });
        }
        if y.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(DataError::MissingValue { row, column: "y".into() });
        }
        Ok(SiteDataset { y, x })
    }

    /// Builds a dataset from `(y, covariates)` rows.
    pub fn from_rows(rows: &[(f64, Vec<f64>)]) -> Result<Self, DataError> {
        let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let xs: Vec<&[f64]> = rows.iter().map(|r| r.1.as_slice()).collect();
        let x = Matrix::from_rows(&xs).map_err(|e| match e {
            crate::numlin::NumError::NonFinite { row, col } => {
                DataError::MissingValue { row, column: format!("x{}", col + 1) }
            }
            _ => DataError::LengthMismatch { y: rows.len(), x: 0 },
        })?;
        SiteDataset::new(y, x)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn covariate_count(&self) -> usize {
        self.x.cols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    /// Local sample mean of the selected covariate columns, summed in row
    /// order. Deviations from the first row are averaged, so a constant column
    /// returns its value exactly.
    pub fn covariate_means(&self, columns: &[usize]) -> Vec<f64> {
        let n = self.n() as f64;
        columns
            .iter()
            .map(|&c| {
                let shift = self.x.get(0, c);
                shift + crate::numlin::sum((0..self.n()).map(|r| self.x.get(r, c) - shift)) / n
            })
            .collect()
    }

    /// Rows sorted lexicographically by `(y, x_1, …, x_p)` bit patterns.
    ///
    /// Every site-side computation runs on the canonical order, which makes
    /// transmitted aggregates bit-identical under any reordering of subjects.
    pub fn canonical(&self) -> SiteDataset {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| {
            self.y[a].total_cmp(&self.y[b]).then_with(|| {
                self.x
                    .row(a)
                    .iter()
                    .zip(self.x.row(b))
                    .map(|(u, v)| u.total_cmp(v))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        SiteDataset { y: order.iter().map(|&i| self.y[i]).collect(), x: self.x.select_rows(&order) }
    }

    pub fn select_rows(&self, rows: &[usize]) -> SiteDataset {
        SiteDataset { y: rows.iter().map(|&i| self.y[i]).collect(), x: self.x.select_rows(rows) }
    }
}
