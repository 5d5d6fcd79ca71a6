use taborder_tensor::Scalar;

use super::task::Standardization;
use crate::error::{invalid, Result};
use crate::model::{infer_scores, predict, MaskSpec, ModelInput, ModelParams, OrderScores, PredictionOutput};
use crate::table::Table;

/// Per-cell predictive mean and variance in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPredictions {
    pub n: usize,
    pub d: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub scores: OrderScores,
}

impl CellPredictions {
    /// `table` with every missing cell replaced by its predicted mean.
    pub fn fill(&self, table: &Table) -> Result<Table> {
        let mut out = table.clone();
        for r in 0..table.n() {
            for c in 0..table.d() {
                if table.is_missing(r, c) {
                    out.set(r, c, self.mean[r * self.d + c])?;
                }
            }
        }
        Ok(out)
    }
}

fn to_original(std: &Standardization, out: &PredictionOutput, rows: std::ops::Range<usize>) -> (Vec<f64>, Vec<f64>) {
    let d = out.d;
    let mut mean = Vec::with_capacity(rows.len() * d);
    let mut var = Vec::with_capacity(rows.len() * d);
    for r in rows {
        for c in 0..d {
            mean.push(std.to_original(c, out.mu[r * d + c]));
            var.push(std.variance_to_original(c, out.sigma2_point[r * d + c]));
        }
    }
    (mean, var)
}

/// Predicts every cell of `table` from the table itself, standardized by its
/// observed cells.
pub fn predict_table<T: Scalar>(params: &ModelParams<T>, table: &Table, mask: &MaskSpec) -> Result<CellPredictions> {
    let std = Standardization::fit(table);
    let input = ModelInput::from_table(&std.apply(table)?)?;
    let out = predict(params, &input, mask)?;
    let (mean, variance) = to_original(&std, &out, 0..table.n());
    Ok(CellPredictions {
        n: table.n(),
        d: table.d(),
        mean,
        variance,
        scores: out.scores,
    })
}

/// Predicts the cells of `query` in chunks of `chunk` rows, each chunk
/// stacked under the `context` rows. Standardization is fitted on the
/// context. Scores are those of the first chunk.
pub fn predict_with_context<T: Scalar>(
    params: &ModelParams<T>,
    context: &Table,
    query: &Table,
    mask: &MaskSpec,
    chunk: usize,
) -> Result<CellPredictions> {
    if chunk == 0 {
        return Err(invalid("chunk must be at least 1"));
    }
    if context.d() != query.d() {
        return Err(invalid("context and query column counts differ"));
    }
    let std = Standardization::fit(context);
    let zc = std.apply(context)?;
    let zq = std.apply(query)?;
    let nc = context.n();
    let (mut mean, mut variance) = (Vec::new(), Vec::new());
    let mut scores = None;
    let mut start = 0;
    while start < query.n() {
        let end = (start + chunk).min(query.n());
        let rows: Vec<usize> = (start..end).collect();
        let stacked = zc.vstack(&zq.select_rows(&rows)?)?;
        let out = predict(params, &ModelInput::from_table(&stacked)?, mask)?;
        let (m, v) = to_original(&std, &out, nc..nc + rows.len());
        mean.extend(m);
        variance.extend(v);
        scores.get_or_insert(out.scores);
        start = end;
    }
    Ok(CellPredictions {
        n: query.n(),
        d: query.d(),
        mean,
        variance,
        scores: scores.ok_or_else(|| invalid("empty query table"))?,
    })
}

/// Order scores for `table` after standardizing its observed cells.
pub fn infer_order<T: Scalar>(params: &ModelParams<T>, table: &Table) -> Result<OrderScores> {
    let z = Standardization::fit(table).apply(table)?;
    infer_scores(params, &ModelInput::from_table(&z)?)
}
