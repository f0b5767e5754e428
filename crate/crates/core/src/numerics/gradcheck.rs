//! Central finite-difference gradient checker.

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Relative error with the `max(|a|, |n|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences `(f(x+eps) − f(x−eps)) / 2eps`, elementwise over all `params`.
///
/// `f` builds its graph from the parameter handles it is given; it is called
/// once for the analytic pass and twice per parameter entry.
pub fn grad_check<F>(f: F, params: &[Matrix], eps: f64, tol: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps:e} outside [1e-7, 1e-4]"
        )));
    }

    let mut graph = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| graph.param(p.clone())).collect();
    let root = f(&mut graph, &vars)?;
    graph.backward(root)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            graph
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))
        })
        .collect();

    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = values.iter().map(|p| g.constant(p.clone())).collect();
        let root = f(&mut g, &vs)?;
        g.value(root).item()
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        tol,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.len() {
            let orig = p.as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + eps;
            let plus = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig - eps;
            let minus = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].as_slice()[k];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
