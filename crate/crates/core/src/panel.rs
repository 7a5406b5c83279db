//! Week-indexed rectangular panels.

use nalgebra::{DMatrix, DVector};

use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};

/// A week × series matrix. Rows follow `index`, which is strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct WeeklyPanel {
    index: Vec<EpiWeek>,
    columns: Vec<String>,
    values: DMatrix<f64>,
}

impl WeeklyPanel {
    pub fn new(index: Vec<EpiWeek>, columns: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != index.len() {
            return Err(Error::DimensionMismatch {
                expected: index.len(),
                got: values.nrows(),
            });
        }
        if values.ncols() != columns.len() {
            return Err(Error::DimensionMismatch {
                expected: columns.len(),
                got: values.ncols(),
            });
        }
        if let Some(w) = index.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Misaligned(format!(
                "index not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("panel", "non-finite entry"));
        }
        Ok(WeeklyPanel {
            index,
            columns,
            values,
        })
    }

    pub fn index(&self) -> &[EpiWeek] {
        &self.index
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_weeks(&self) -> usize {
        self.index.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty() || self.columns.is_empty()
    }

    pub fn position(&self, week: EpiWeek) -> Option<usize> {
        self.index.binary_search(&week).ok()
    }

    pub fn column_position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<DVector<f64>> {
        self.column_position(name)
            .map(|j| self.values.column(j).into_owned())
    }

    pub fn get(&self, week: EpiWeek, name: &str) -> Option<f64> {
        Some(self.values[(self.position(week)?, self.column_position(name)?)])
    }

    /// True when every row is the successor week of the previous row.
    pub fn is_consecutive(&self) -> bool {
        self.index.windows(2).all(|w| w[0].succ() == w[1])
    }

    /// Rows strictly before `week`.
    pub fn before(&self, week: EpiWeek) -> WeeklyPanel {
        let n = self.index.partition_point(|w| *w < week);
        WeeklyPanel {
            index: self.index[..n].to_vec(),
            columns: self.columns.clone(),
            values: self.values.rows(0, n).into_owned(),
        }
    }

    /// Re-express this panel on `index`; weeks not present here become 0.
    pub fn reindex_zero_fill(&self, index: &[EpiWeek]) -> Result<WeeklyPanel> {
        let mut values = DMatrix::zeros(index.len(), self.n_cols());
        for (i, w) in index.iter().enumerate() {
            if let Some(src) = self.position(*w) {
                values.row_mut(i).copy_from(&self.values.row(src));
            }
        }
        WeeklyPanel::new(index.to_vec(), self.columns.clone(), values)
    }

    /// Panel with the same index and the given columns; missing columns are zero.
    pub fn select_columns_zero_fill(&self, columns: &[String]) -> Result<WeeklyPanel> {
        let mut values = DMatrix::zeros(self.n_weeks(), columns.len());
        for (j, c) in columns.iter().enumerate() {
            if let Some(src) = self.column_position(c) {
                values.column_mut(j).copy_from(&self.values.column(src));
            }
        }
        WeeklyPanel::new(self.index.clone(), columns.to_vec(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<WeeklyPanel> {
        WeeklyPanel::new(self.index.clone(), self.columns.clone(), self.values.map(f))
    }

    /// Replace one column's values.
    pub fn set_column(&mut self, name: &str, values: &DVector<f64>) -> Result<()> {
        let j = self
            .column_position(name)
            .ok_or_else(|| Error::MissingData(format!("column {name}")))?;
        if values.len() != self.n_weeks() {
            return Err(Error::DimensionMismatch {
                expected: self.n_weeks(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("panel", "non-finite entry"));
        }
        self.values.column_mut(j).copy_from(values);
        Ok(())
    }
}

/// Real-valued features, e.g. log-transformed search volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePanel(WeeklyPanel);

impl FeaturePanel {
    pub fn new(panel: WeeklyPanel) -> Self {
        FeaturePanel(panel)
    }

    pub fn panel(&self) -> &WeeklyPanel {
        &self.0
    }

    pub fn into_panel(self) -> WeeklyPanel {
        self.0
    }
}

impl std::ops::Deref for FeaturePanel {
    type Target = WeeklyPanel;

    fn deref(&self) -> &WeeklyPanel {
        &self.0
    }
}
