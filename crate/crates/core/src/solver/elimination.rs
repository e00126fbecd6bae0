//! Row-oriented skyline LU of `I - B̃` without pivoting.
//!
//! `I - B̃` is a non-singular M-matrix, so elimination in natural order is
//! stable and every multiplier and off-diagonal factor entry is non-positive.
//! All factors are therefore stored as magnitudes, and each pivot is formed
//! from the row's exit mass (`p̃ + q̃`) plus the magnitudes of its remaining
//! upper entries rather than by subtraction from the diagonal. Forward and
//! backward substitution of a non-negative right-hand side then only ever
//! add non-negative terms.
//!
//! Fill-in stays inside the row envelope: the elimination of row `i` only
//! visits columns between its leftmost entry and `i`.

use super::TruncatedSystem;
use crate::error::{Error, Result};

/// Compressed rows of non-negative magnitudes.
#[derive(Debug, Default)]
struct Csr {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Csr {
    fn with_rows(n: usize) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        Csr {
            offsets,
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    fn push(&mut self, col: usize, val: f64) {
        self.cols.push(col as u32);
        self.vals.push(val);
    }

    fn finish_row(&mut self) {
        self.offsets.push(self.cols.len());
    }

    #[inline]
    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[s..e]
            .iter()
            .zip(&self.vals[s..e])
            .map(|(&c, &v)| (c as usize, v))
    }

    fn nnz(&self) -> usize {
        self.cols.len()
    }
}

/// Dense scratch row with a record of the touched span.
struct Workspace {
    w: Vec<f64>,
    row: Vec<(usize, f64)>,
}

pub(crate) struct SkylineLu {
    n: usize,
    diag: Vec<f64>,
    upper: Csr,
    lower: Option<Csr>,
    /// Row sums of `U`, i.e. `L^{-1}(p̃ + q̃)`.
    exit: Vec<f64>,
}

impl SkylineLu {
    /// Factors the system. `L` is kept when the total number of stored
    /// factor entries stays within `budget`; otherwise its rows are
    /// regenerated on demand. Returns `None` when `U` alone exceeds the
    /// budget.
    pub(crate) fn factor(system: &TruncatedSystem, budget: usize) -> Result<Option<Self>> {
        let n = system.dim();
        let mut lu = SkylineLu {
            n,
            diag: vec![0.0; n],
            upper: Csr::with_rows(n),
            lower: Some(Csr::with_rows(n)),
            exit: vec![0.0; n],
        };
        let mut ws = Workspace {
            w: vec![0.0; n],
            row: Vec::new(),
        };
        for i in 0..n {
            let mut l_entries: Vec<(usize, f64)> = Vec::new();
            let keep_l = lu.lower.is_some();
            let mut s = system.p[i] + system.q[i];
            let hi = lu.eliminate(system, i, &mut ws, |k, l, s_k| {
                s += l * s_k;
                if keep_l {
                    l_entries.push((k, l));
                }
            });
            let mut pivot = s;
            for j in i + 1..=hi {
                let v = ws.w[j];
                if v != 0.0 {
                    lu.upper.push(j, v);
                    pivot += v;
                    ws.w[j] = 0.0;
                }
            }
            lu.upper.finish_row();
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "I - B is singular: state {} cannot leave A' ∪ {{z}}",
                    system.state(i)
                )));
            }
            lu.diag[i] = pivot;
            lu.exit[i] = s;
            if let Some(lower) = lu.lower.as_mut() {
                for (k, l) in l_entries {
                    lower.push(k, l);
                }
                lower.finish_row();
                if lower.nnz() + lu.upper.nnz() > budget {
                    lu.lower = None;
                }
            }
            if lu.upper.nnz() > budget {
                return Ok(None);
            }
        }
        Ok(Some(lu))
    }

    /// Runs the elimination of row `i` against the rows of `U` computed so
    /// far. `visit(k, |l_ik|, exit_k)` is called for every non-zero
    /// multiplier in increasing `k`. Leaves the upper part of the row in
    /// `ws.w` (columns `> i`) and returns the last touched column.
    fn eliminate(
        &self,
        system: &TruncatedSystem,
        i: usize,
        ws: &mut Workspace,
        mut visit: impl FnMut(usize, f64, f64),
    ) -> usize {
        system.row_into(i, &mut ws.row);
        let mut lo = i;
        let mut hi = i;
        for &(j, b) in &ws.row {
            if j != i {
                ws.w[j] += b;
                lo = lo.min(j);
                hi = hi.max(j);
            }
        }
        for k in lo..i {
            let a = ws.w[k];
            if a == 0.0 {
                continue;
            }
            ws.w[k] = 0.0;
            let l = a / self.diag[k];
            visit(k, l, self.exit[k]);
            for (j, u) in self.upper.row(k) {
                if j != i {
                    ws.w[j] += l * u;
                    hi = hi.max(j);
                }
            }
        }
        ws.w[i] = 0.0;
        hi
    }

    pub(crate) fn stores_lower(&self) -> bool {
        self.lower.is_some()
    }

    pub(crate) fn stored_entries(&self) -> usize {
        self.upper.nnz() + self.lower.as_ref().map_or(0, Csr::nnz)
    }

    /// Visits the rows of `L` (as `(k, |l_ik|)` lists) in increasing or
    /// decreasing row order.
    fn for_each_lower_row(
        &self,
        system: &TruncatedSystem,
        reverse: bool,
        mut f: impl FnMut(usize, &[(usize, f64)]),
    ) {
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..self.n).rev())
        } else {
            Box::new(0..self.n)
        };
        let mut buf: Vec<(usize, f64)> = Vec::new();
        match &self.lower {
            Some(lower) => {
                for i in order {
                    buf.clear();
                    buf.extend(lower.row(i));
                    f(i, &buf);
                }
            }
            None => {
                let mut ws = Workspace {
                    w: vec![0.0; self.n],
                    row: Vec::new(),
                };
                for i in order {
                    buf.clear();
                    let hi = self.eliminate(system, i, &mut ws, |k, l, _| buf.push((k, l)));
                    for j in i + 1..=hi {
                        ws.w[j] = 0.0;
                    }
                    f(i, &buf);
                }
            }
        }
    }

    /// Solves `(I - B̃) x_c = b_c` for each column in place.
    pub(crate) fn solve_in_place(&self, system: &TruncatedSystem, cols: &mut [Vec<f64>]) {
        // L c = b
        self.for_each_lower_row(system, false, |i, lrow| {
            for col in cols.iter_mut() {
                let mut acc = col[i];
                for &(k, l) in lrow {
                    acc += l * col[k];
                }
                col[i] = acc;
            }
        });
        // U x = c
        for i in (0..self.n).rev() {
            for col in cols.iter_mut() {
                let mut acc = col[i];
                for (j, u) in self.upper.row(i) {
                    acc += u * col[j];
                }
                col[i] = acc / self.diag[i];
            }
        }
    }

    /// Solves `yᵀ (I - B̃) = cᵀ` in place.
    pub(crate) fn solve_transpose_in_place(&self, system: &TruncatedSystem, y: &mut [f64]) {
        // Uᵀ t = c
        for i in 0..self.n {
            let t = y[i] / self.diag[i];
            y[i] = t;
            if t != 0.0 {
                for (j, u) in self.upper.row(i) {
                    y[j] += u * t;
                }
            }
        }
        // Lᵀ y = t
        self.for_each_lower_row(system, true, |i, lrow| {
            let yi = y[i];
            if yi != 0.0 {
                for &(k, l) in lrow {
                    y[k] += l * yi;
                }
            }
        });
    }
}
