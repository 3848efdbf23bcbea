//! Anderson mixing for fixed-point iterations `x <- G(x)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// Type-II Anderson mixing with a sliding window. Depth 0 returns `G(x)`
/// unchanged, i.e. plain iteration.
#[derive(Clone, Debug)]
pub struct Anderson {
    depth: usize,
    last: Option<(DVector<f64>, DVector<f64>)>,
    dg: VecDeque<DVector<f64>>,
    df: VecDeque<DVector<f64>>,
}

impl Anderson {
    pub fn new(depth: usize) -> Self {
        Anderson { depth, last: None, dg: VecDeque::new(), df: VecDeque::new() }
    }

    /// Forget the history; the next step is a plain one.
    pub fn reset(&mut self) {
        self.last = None;
        self.dg.clear();
        self.df.clear();
    }

    /// Next input given the current input `x` and its image `gx`.
    pub fn step(&mut self, x: &[f64], gx: &[f64]) -> Vec<f64> {
        if self.depth == 0 {
            return gx.to_vec();
        }
        let g = DVector::from_column_slice(gx);
        let f = &g - DVector::from_column_slice(x);
        if let Some((g0, f0)) = self.last.take() {
            self.dg.push_back(&g - g0);
            self.df.push_back(&f - f0);
            if self.df.len() > self.depth {
                self.dg.pop_front();
                self.df.pop_front();
            }
        }
        self.last = Some((g.clone(), f.clone()));
        if self.df.is_empty() {
            return gx.to_vec();
        }
        let df = DMatrix::from_columns(&self.df.iter().cloned().collect::<Vec<_>>());
        let svd = df.svd(true, true);
        let eps = 1e-12 * svd.singular_values.max();
        let Ok(gamma) = svd.solve(&f, eps) else {
            self.reset();
            return gx.to_vec();
        };
        let mut next = g;
        for (col, c) in self.dg.iter().zip(gamma.iter()) {
            next.axpy(-c, col, 1.0);
        }
        next.iter().copied().collect()
    }
}
