use crate::data::{Dataset, Episode};
use crate::error::{Error, Result};
use crate::model::SourceModel;
use crate::numerics::Matrix;

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::dim(
            "accuracy",
            format!("{} rows vs {} labels", logits.rows(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Query accuracy of an adapted model. The only reader of query labels.
pub fn evaluate(model: &SourceModel, episode: &Episode) -> Result<f64> {
    let logits = model.forward_logits(episode.query_x())?;
    accuracy(&logits, episode.query_labels())
}

/// `−‖x_r − c_k‖²` for every row and centroid.
pub fn nearest_centroid_logits(x: &Matrix, centroids: &Matrix) -> Result<Matrix> {
    if x.cols() != centroids.cols() {
        return Err(Error::dim(
            "nearest_centroid",
            format!("{} vs {} columns", x.cols(), centroids.cols()),
        ));
    }
    let mut out = Matrix::zeros(x.rows(), centroids.rows());
    for r in 0..x.rows() {
        for k in 0..centroids.rows() {
            out[(r, k)] = -x
                .row(r)
                .iter()
                .zip(centroids.row(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    Ok(out)
}

/// Query accuracy of nearest-centroid classification with the true class
/// means of the target domain. `pool` must be the dataset the episode was
/// drawn from and `means` its rows of shifted class means.
pub fn oracle_accuracy(episode: &Episode, pool: &Dataset, means: &Matrix) -> Result<f64> {
    let mut centroids = Matrix::zeros(episode.way(), means.cols());
    for (&row, &label) in episode.support_ids().iter().zip(episode.support_y()) {
        let class = *pool
            .y
            .get(row)
            .ok_or_else(|| Error::InvalidArgument(format!("episode row {row} not in pool")))?;
        centroids.row_mut(label).copy_from_slice(means.row(class));
    }
    let logits = nearest_centroid_logits(episode.query_x(), &centroids)?;
    accuracy(&logits, episode.query_labels())
}
