//! N-way K-shot episodes.

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::rng;

/// A few-shot task: labeled support rows and query rows whose labels are
/// held out.
///
/// Query labels are private. Adaptation receives a [`TargetTask`], which has
/// no way to reach them; only evaluation inside this crate reads them.
///
/// ```compile_fail
/// # fn peek(ep: &imdcl::data::Episode) {
/// let _labels = &ep.query_y;
/// # }
/// ```
///
/// ```compile_fail
/// # fn peek(task: imdcl::data::TargetTask<'_>) {
/// let _labels = task.query_y;
/// # }
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    support_x: Matrix,
    support_y: Vec<usize>,
    query_x: Matrix,
    query_y: Vec<usize>,
    way: usize,
    shot: usize,
    queries: usize,
    support_ids: Vec<usize>,
    query_ids: Vec<usize>,
}

/// The part of an [`Episode`] adaptation may see.
#[derive(Clone, Copy, Debug)]
pub struct TargetTask<'a> {
    pub support_x: &'a Matrix,
    pub support_y: &'a [usize],
    pub query_x: &'a Matrix,
    pub way: usize,
}

impl TargetTask<'_> {
    pub fn support_len(&self) -> usize {
        self.support_y.len()
    }

    pub fn total_len(&self) -> usize {
        self.support_y.len() + self.query_x.rows()
    }

    /// Support rows followed by query rows.
    pub fn all_inputs(&self) -> Result<Matrix> {
        Matrix::concat_rows(&[self.support_x, self.query_x])
    }
}

impl Episode {
    /// Builds an episode from explicit parts. Labels must lie in `0..way`.
    pub fn new(
        support_x: Matrix,
        support_y: Vec<usize>,
        query_x: Matrix,
        query_y: Vec<usize>,
        way: usize,
    ) -> Result<Self> {
        if support_x.rows() != support_y.len() || query_x.rows() != query_y.len() {
            return Err(Error::dim(
                "episode",
                format!(
                    "{} support rows / {} labels, {} query rows / {} labels",
                    support_x.rows(),
                    support_y.len(),
                    query_x.rows(),
                    query_y.len()
                ),
            ));
        }
        if support_x.cols() != query_x.cols() {
            return Err(Error::dim(
                "episode",
                format!("support width {} vs query width {}", support_x.cols(), query_x.cols()),
            ));
        }
        if let Some(&bad) = support_y.iter().chain(&query_y).find(|&&y| y >= way) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: way,
            });
        }
        let shot = support_y.len().checked_div(way).unwrap_or(0);
        let queries = query_y.len().checked_div(way).unwrap_or(0);
        let support_ids = (0..support_y.len()).collect();
        let query_ids = (support_y.len()..support_y.len() + query_y.len()).collect();
        Ok(Self {
            support_x,
            support_y,
            query_x,
            query_y,
            way,
            shot,
            queries,
            support_ids,
            query_ids,
        })
    }

    pub fn task(&self) -> TargetTask<'_> {
        TargetTask {
            support_x: &self.support_x,
            support_y: &self.support_y,
            query_x: &self.query_x,
            way: self.way,
        }
    }

    pub fn support_x(&self) -> &Matrix {
        &self.support_x
    }

    pub fn support_y(&self) -> &[usize] {
        &self.support_y
    }

    pub fn query_x(&self) -> &Matrix {
        &self.query_x
    }

    pub(crate) fn query_labels(&self) -> &[usize] {
        &self.query_y
    }

    pub fn way(&self) -> usize {
        self.way
    }

    pub fn shot(&self) -> usize {
        self.shot
    }

    pub fn queries_per_class(&self) -> usize {
        self.queries
    }

    /// Pool row ids of the support rows.
    pub fn support_ids(&self) -> &[usize] {
        &self.support_ids
    }

    /// Pool row ids of the query rows.
    pub fn query_ids(&self) -> &[usize] {
        &self.query_ids
    }

    /// A clone whose query labels are replaced by `f(old) mod way`.
    pub fn with_relabeled_queries(&self, f: impl Fn(usize) -> usize) -> Self {
        let mut ep = self.clone();
        ep.query_y = self.query_y.iter().map(|&y| f(y) % self.way).collect();
        ep
    }
}

/// Draws `way` classes without replacement, then `shot` support and
/// `queries` query rows per class, all disjoint. Rows are shuffled and
/// labels re-indexed to `0..way` in sampled-class order.
pub fn sample_episode(
    pool: &Dataset,
    way: usize,
    shot: usize,
    queries: usize,
    seed: u64,
) -> Result<Episode> {
    if way < 2 || shot == 0 {
        return Err(Error::InvalidArgument(format!(
            "need way >= 2 and shot >= 1, got {way}-way {shot}-shot"
        )));
    }
    if pool.num_classes() < way {
        return Err(Error::InsufficientData(format!(
            "{way}-way episode from {} classes",
            pool.num_classes()
        )));
    }
    let by_class = pool.rows_by_class();
    let mut r = rng(seed);
    let mut classes: Vec<usize> = (0..pool.num_classes()).collect();
    classes.shuffle(&mut r);
    classes.truncate(way);

    let mut support = Vec::with_capacity(way * shot);
    let mut query = Vec::with_capacity(way * queries);
    for (label, &c) in classes.iter().enumerate() {
        let mut rows = by_class[c].clone();
        if rows.len() < shot + queries {
            return Err(Error::InsufficientData(format!(
                "class {} has {} rows, need {}",
                pool.class_ids[c],
                rows.len(),
                shot + queries
            )));
        }
        rows.shuffle(&mut r);
        support.extend(rows[..shot].iter().map(|&i| (i, label)));
        query.extend(rows[shot..shot + queries].iter().map(|&i| (i, label)));
    }
    support.shuffle(&mut r);
    query.shuffle(&mut r);

    let support_ids: Vec<usize> = support.iter().map(|p| p.0).collect();
    let query_ids: Vec<usize> = query.iter().map(|p| p.0).collect();
    Ok(Episode {
        support_x: pool.x.gather_rows(&support_ids)?,
        support_y: support.iter().map(|p| p.1).collect(),
        query_x: pool.x.gather_rows(&query_ids)?,
        query_y: query.iter().map(|p| p.1).collect(),
        way,
        shot,
        queries,
        support_ids,
        query_ids,
    })
}
