//! Regression-based Type III sums of squares for unbalanced or filtered
//! grids.
//!
//! Factors are encoded with sum-to-zero contrasts (unweighted), interaction
//! blocks as products of the constituent contrast columns. A term's sum of
//! squares is the rise in residual sum of squares when its block is dropped
//! from the full model:
//!
//! ```text
//! SS(term) = RSS(model without term) - RSS(full model)
//! ```
//!
//! On a balanced design this reproduces the classical partition; on an
//! unbalanced one the term sums plus residual need not add to the total
//! corrected sum of squares, which the result flags with a note.

use nalgebra::{DMatrix, DVector};

use crate::error::AnalysisError;
use crate::grid::GridTable;
use crate::model::{DecompositionMethod, VarianceDecomposition, VarianceTerm};

/// One model term: a main effect (one factor) or an interaction (several).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelTerm {
    pub factors: Vec<String>,
}

impl ModelTerm {
    pub fn main(factor: &str) -> Self {
        ModelTerm {
            factors: vec![factor.to_string()],
        }
    }

    pub fn interaction(a: &str, b: &str) -> Self {
        ModelTerm {
            factors: vec![a.to_string(), b.to_string()],
        }
    }

    /// Parses `"lambda"` or `"lambda*eta"`.
    pub fn parse(text: &str) -> Result<Self, AnalysisError> {
        let factors: Vec<String> = text.split('*').map(|s| s.trim().to_string()).collect();
        if factors.iter().any(|f| f.is_empty()) {
            return Err(AnalysisError::Other(format!("bad term {text:?}")));
        }
        Ok(ModelTerm { factors })
    }

    pub fn name(&self) -> String {
        self.factors.join("*")
    }
}

/// Sum-to-zero contrast row for level `l` of a factor with `n_levels`
/// levels: identity rows for the first `n_levels - 1` levels, all `-1` for
/// the last.
fn contrast_row(level: usize, n_levels: usize) -> Vec<f64> {
    let mut row = vec![0.0; n_levels - 1];
    if level == n_levels - 1 {
        row.iter_mut().for_each(|v| *v = -1.0);
    } else {
        row[level] = 1.0;
    }
    row
}

/// Columns a term contributes for one observation: the outer product of the
/// constituent factors' contrast rows.
fn term_columns(term_axes: &[(usize, usize)], idx: &[usize]) -> Vec<f64> {
    let mut cols = vec![1.0];
    for &(axis, n_levels) in term_axes {
        let row = contrast_row(idx[axis], n_levels);
        let mut next = Vec::with_capacity(cols.len() * row.len());
        for &c in &cols {
            for &r in &row {
                next.push(c * r);
            }
        }
        cols = next;
    }
    cols
}

struct Design {
    /// Column blocks per term, aligned with the input term list.
    blocks: Vec<Vec<Vec<f64>>>,
    y: DVector<f64>,
}

fn build_design(grid: &GridTable, terms: &[ModelTerm]) -> Result<Design, AnalysisError> {
    let mut resolved: Vec<Vec<(usize, usize)>> = Vec::with_capacity(terms.len());
    for term in terms {
        let mut axes = Vec::with_capacity(term.factors.len());
        for f in &term.factors {
            let axis = grid.factor_index(f)?;
            let n_levels = grid.factors()[axis].levels.len();
            axes.push((axis, n_levels));
        }
        resolved.push(axes);
    }

    // Any model factor must keep at least two levels with data.
    let mut level_seen: Vec<Vec<bool>> = grid
        .factors()
        .iter()
        .map(|f| vec![false; f.levels.len()])
        .collect();
    for (idx, _) in grid.cells() {
        for (a, &i) in idx.iter().enumerate() {
            level_seen[a][i] = true;
        }
    }
    for axes in &resolved {
        for &(axis, n_levels) in axes {
            let with_data = level_seen[axis].iter().filter(|s| **s).count();
            if with_data < 2 {
                return Err(AnalysisError::CollapsedFactor {
                    name: grid.factors()[axis].name.clone(),
                });
            }
            if with_data < n_levels {
                let missing = level_seen[axis].iter().position(|s| !s).unwrap();
                return Err(AnalysisError::Other(format!(
                    "factor {:?} level {:?} has no data after filtering",
                    grid.factors()[axis].name,
                    grid.factors()[axis].levels[missing]
                )));
            }
        }
    }

    let n = grid.n_cells();
    let mut blocks: Vec<Vec<Vec<f64>>> = vec![Vec::new(); terms.len()];
    let mut y = Vec::with_capacity(n);
    for (idx, value) in grid.cells() {
        y.push(value);
        for (t, axes) in resolved.iter().enumerate() {
            blocks[t].push(term_columns(axes, idx));
        }
    }
    Ok(Design {
        blocks,
        y: DVector::from_vec(y),
    })
}

fn assemble(design: &Design, skip: Option<usize>) -> DMatrix<f64> {
    let n = design.y.len();
    let mut cols: Vec<f64> = Vec::new();
    let mut width = 1usize;
    for (t, block) in design.blocks.iter().enumerate() {
        if Some(t) != skip {
            width += block[0].len();
        }
    }
    cols.reserve(n * width);
    // column-major assembly: intercept first, then term blocks in order
    cols.extend(std::iter::repeat_n(1.0, n));
    for (t, block) in design.blocks.iter().enumerate() {
        if Some(t) == skip {
            continue;
        }
        let b_width = block[0].len();
        for c in 0..b_width {
            for row in block {
                cols.push(row[c]);
            }
        }
    }
    DMatrix::from_vec(n, width, cols)
}

const RANK_EPS: f64 = 1e-9;

fn rss(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let svd = x.clone().svd(true, true);
    let mut beta = svd.solve(y, RANK_EPS).expect("svd solve");
    // One step of iterative refinement: the term sums are differences of
    // residual norms, so the solve has to be accurate well past what a
    // single pass gives on near-orthogonal blocks.
    for _ in 0..2 {
        let resid = y - x * &beta;
        if let Ok(delta) = svd.solve(&resid, RANK_EPS) {
            beta += delta;
        }
    }
    (y - x * beta).norm_squared()
}

fn rank(x: &DMatrix<f64>) -> usize {
    let svd = x.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = RANK_EPS * max_sv.max(1.0) * x.nrows().max(x.ncols()) as f64;
    svd.singular_values.iter().filter(|s| **s > tol).count()
}

/// Type III decomposition of `grid` under the given model terms.
///
/// Errors on rank-deficient designs (listing the aliased terms) and on
/// factors collapsed to a single populated level. `ss_total` of the result
/// is the sum of the reported term SS plus the residual; when that differs
/// from the total corrected sum of squares (expected on unbalanced
/// designs), `note` records the discrepancy.
pub fn anova_type3(
    grid: &GridTable,
    terms: &[ModelTerm],
) -> Result<VarianceDecomposition, AnalysisError> {
    if terms.is_empty() {
        return Err(AnalysisError::Other("no model terms given".into()));
    }
    if grid.n_cells() < 2 {
        return Err(AnalysisError::TooFewCells);
    }
    let design = build_design(grid, terms)?;

    let full = assemble(&design, None);
    let full_rank = rank(&full);
    let mut note = None;
    if full_rank < full.ncols() {
        // Walk the blocks in order; a block that adds no rank at all is
        // fully aliased with what came before and the model is rejected. A
        // block that adds some but not all of its columns is partially
        // aliased, which happens on staircase grids; the fit proceeds on
        // the identifiable subspace (minimum-norm least squares) and the
        // result says so.
        let mut fully_aliased = Vec::new();
        let mut partially_aliased = Vec::new();
        let n = design.y.len();
        let mut acc = DMatrix::from_element(n, 1, 1.0);
        for (t, block) in design.blocks.iter().enumerate() {
            let b_width = block[0].len();
            let mut cols: Vec<f64> = acc.as_slice().to_vec();
            for c in 0..b_width {
                for row in block {
                    cols.push(row[c]);
                }
            }
            let widened = DMatrix::from_vec(n, acc.ncols() + b_width, cols);
            let gained = rank(&widened) - rank(&acc);
            if gained == 0 {
                fully_aliased.push(terms[t].name());
            } else if gained < b_width {
                partially_aliased.push(terms[t].name());
            }
            acc = widened;
        }
        if !fully_aliased.is_empty() {
            return Err(AnalysisError::RankDeficient {
                terms: fully_aliased,
            });
        }
        note = Some(format!(
            "partially aliased terms on this non-rectangular grid: {}; their type-3 sums depend \
             on the aliasing pattern",
            partially_aliased.join(", ")
        ));
    }

    let rss_full = rss(&full, &design.y);
    let mut term_ss = Vec::with_capacity(terms.len());
    for t in 0..terms.len() {
        let reduced = assemble(&design, Some(t));
        let ss = (rss(&reduced, &design.y) - rss_full).max(0.0);
        term_ss.push(ss);
    }

    let grand = design.y.mean();
    let corrected_total: f64 = design.y.iter().map(|v| (v - grand).powi(2)).sum();
    let sum_sq: f64 = design.y.iter().map(|v| v * v).sum();
    let residual = rss_full;
    let ss_total: f64 = term_ss.iter().sum::<f64>() + residual;

    if (ss_total - corrected_total).abs() > 1e-9 * corrected_total.max(1.0) {
        let ortho = format!(
            "non-orthogonal design: type-3 term sums plus residual ({ss_total}) differ from the \
             total corrected sum of squares ({corrected_total})"
        );
        note = Some(match note {
            Some(prev) => format!("{prev}; {ortho}"),
            None => ortho,
        });
    }

    let degenerate = super::is_degenerate(corrected_total, sum_sq);
    let mut out_terms: Vec<VarianceTerm> = terms
        .iter()
        .zip(&term_ss)
        .map(|(term, &ss)| VarianceTerm {
            name: term.name(),
            sum_of_squares: ss,
            fraction: 0.0,
        })
        .collect();
    out_terms.push(VarianceTerm {
        name: "residual".to_string(),
        sum_of_squares: residual,
        fraction: 0.0,
    });
    if !degenerate {
        for t in &mut out_terms {
            t.fraction = t.sum_of_squares / ss_total;
        }
    }

    Ok(VarianceDecomposition {
        terms: out_terms,
        ss_total,
        method: DecompositionMethod::Type3Regression,
        n_cells: grid.n_cells(),
        degenerate,
        note,
    })
}
