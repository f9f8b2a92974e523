use serde::{Deserialize, Serialize};

use super::Label;
use crate::features::{quantile_sorted, PairTable, DESCRIPTIVE_NAMES};

/// Votes of every labeling function (columns) on every pair (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub rows: usize,
    /// Pair-table column each labeling function reads.
    pub columns: Vec<usize>,
    /// `(Q1, Q3)` per labeling function.
    pub thresholds: Vec<(f64, f64)>,
    /// Row-major `rows x columns.len()`.
    pub votes: Vec<Label>,
    /// Labeling functions that abstain everywhere (constant columns).
    pub silent: Vec<usize>,
}

impl LabelMatrix {
    pub fn n_functions(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, r: usize) -> &[Label] {
        let k = self.n_functions();
        &self.votes[r * k..(r + 1) * k]
    }

    /// Build directly from votes (rows of equal length).
    pub fn from_votes(rows: Vec<Vec<Label>>) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == k), "ragged vote rows");
        LabelMatrix {
            rows: rows.len(),
            columns: (0..k).collect(),
            thresholds: vec![(f64::NAN, f64::NAN); k],
            votes: rows.into_iter().flatten().collect(),
            silent: Vec::new(),
        }
    }

    /// Reorder labeling functions.
    pub fn permute_functions(&self, order: &[usize]) -> Self {
        let k = self.n_functions();
        let votes = (0..self.rows)
            .flat_map(|r| order.iter().map(move |&j| self.votes[r * k + j]))
            .collect();
        LabelMatrix {
            rows: self.rows,
            columns: order.iter().map(|&j| self.columns[j]).collect(),
            thresholds: order.iter().map(|&j| self.thresholds[j]).collect(),
            votes,
            silent: self.silent.clone(),
        }
    }
}

/// Vote T below the first quartile, S above the third, abstain otherwise.
pub fn label_value(v: f64, (q1, q3): (f64, f64)) -> Label {
    if v < q1 {
        Label::T
    } else if v > q3 {
        Label::S
    } else {
        Label::U
    }
}

/// One quartile labeling function per retained column of the normalized table.
pub fn apply_labeling_functions(table: &PairTable) -> LabelMatrix {
    let columns = table.retained_columns();
    let mut thresholds = Vec::with_capacity(columns.len());
    let mut silent = Vec::new();
    for &c in &columns {
        let mut col = table.column(c);
        col.sort_by(f64::total_cmp);
        let q = (quantile_sorted(&col, 0.25), quantile_sorted(&col, 0.75));
        if col.first() == col.last() {
            log::warn!("{} is constant; its labeling function always abstains", DESCRIPTIVE_NAMES[c]);
            silent.push(c);
        }
        thresholds.push(q);
    }
    let votes = table
        .normalized
        .iter()
        .flat_map(|row| columns.iter().zip(&thresholds).map(|(&c, &q)| label_value(row[c], q)))
        .collect();
    LabelMatrix {
        rows: table.len(),
        columns,
        thresholds,
        votes,
        silent,
    }
}
