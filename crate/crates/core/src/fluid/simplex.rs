//! Dense two-phase simplex over exact rationals with Bland's anti-cycling rule.
//!
//! Sized for the desk-scale programs this crate solves (tens of variables);
//! no attempt is made at sparse or revised-simplex efficiency.

use num_traits::{One, Signed, Zero};

use crate::num::Q;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<Q>, value: Q },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    cells: Vec<Vec<Q>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> &Q {
        &self.cells[r][self.width]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.cells[row][col].clone();
        for v in self.cells[row].iter_mut() {
            *v = &*v / &p;
        }
        let pivot_row = self.cells[row].clone();
        for (r, cells) in self.cells.iter_mut().enumerate() {
            if r == row || cells[col].is_zero() {
                continue;
            }
            let f = cells[col].clone();
            for (v, pv) in cells.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *v = &*v - &(&f * pv);
                }
            }
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations on the objective row (reduced costs stored as
    /// `c_j - z_j`; entering columns have negative reduced cost) restricted to
    /// columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let m = self.basis.len();
        loop {
            let obj = &self.cells[m];
            let Some(enter) = (0..allowed).find(|&j| obj[j].is_negative()) else {
                return true;
            };
            let mut leave: Option<(usize, Q)> = None;
            for r in 0..m {
                let a = &self.cells[r][enter];
                if a.is_positive() {
                    let ratio = self.rhs(r) / a;
                    let better = match &leave {
                        None => true,
                        Some((lr, best)) => {
                            ratio < *best || (ratio == *best && self.basis[r] < self.basis[*lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return false,
            }
        }
    }
}

/// Minimizes `c·x` subject to `A x = b`, `x >= 0`.
pub fn minimize(a: &[Vec<Q>], b: &[Q], c: &[Q]) -> LpOutcome {
    let m = a.len();
    let n = c.len();
    assert_eq!(b.len(), m);
    assert!(a.iter().all(|row| row.len() == n));

    // Columns: n originals, m artificials, rhs.
    let width = n + m;
    let mut cells = Vec::with_capacity(m + 1);
    for (r, (row, rhs)) in a.iter().zip(b).enumerate() {
        let flip = rhs.is_negative();
        let mut line: Vec<Q> = row.iter().map(|v| if flip { -v } else { v.clone() }).collect();
        line.extend((0..m).map(|k| if k == r { Q::one() } else { Q::zero() }));
        line.push(if flip { -rhs } else { rhs.clone() });
        cells.push(line);
    }
    // Phase-one objective: minimize the sum of artificials, expressed in
    // reduced-cost form relative to the all-artificial basis.
    let mut obj = vec![Q::zero(); width + 1];
    for line in &cells {
        for (o, v) in obj.iter_mut().zip(line.iter()).take(n) {
            *o = &*o - v;
        }
        obj[width] = &obj[width] - &line[width];
    }
    cells.push(obj);
    let mut tab = Tableau { cells, basis: (n..n + m).collect(), width };

    tab.optimize(width);
    if !tab.rhs(m).is_zero() {
        return LpOutcome::Infeasible;
    }

    // Drive remaining artificials out of the basis; rows where that is
    // impossible are redundant and get dropped.
    let mut r = 0;
    while r < tab.basis.len() {
        if tab.basis[r] >= n {
            if let Some(col) = (0..n).find(|&j| !tab.cells[r][j].is_zero()) {
                tab.pivot(r, col);
                r += 1;
            } else {
                tab.cells.remove(r);
                tab.basis.remove(r);
            }
        } else {
            r += 1;
        }
    }
    let m = tab.basis.len();

    // Phase two objective row.
    let mut obj = vec![Q::zero(); width + 1];
    obj[..n].clone_from_slice(c);
    for (row, &bcol) in tab.basis.iter().enumerate() {
        let cb = &c[bcol];
        if cb.is_zero() {
            continue;
        }
        for j in 0..=width {
            let v = &tab.cells[row][j];
            if !v.is_zero() {
                obj[j] = &obj[j] - &(cb * v);
            }
        }
    }
    tab.cells[m] = obj;
    // Artificial columns are barred from re-entering.
    if !tab.optimize(n) {
        return LpOutcome::Unbounded;
    }

    let mut x = vec![Q::zero(); n];
    for (row, &bcol) in tab.basis.iter().enumerate() {
        x[bcol] = tab.rhs(row).clone();
    }
    let value = x.iter().zip(c).map(|(xi, ci)| xi * ci).fold(Q::zero(), |acc, v| acc + v);
    LpOutcome::Optimal { x, value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{q, q_ratio};

    fn rows(r: &[&[i64]]) -> Vec<Vec<Q>> {
        r.iter().map(|row| row.iter().map(|&v| q(v)).collect()).collect()
    }

    #[test]
    fn small_textbook_program() {
        // min -x - y s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
        let a = rows(&[&[1, 2, 1, 0], &[3, 1, 0, 1]]);
        let b = vec![q(4), q(6)];
        let c = vec![q(-1), q(-1), q(0), q(0)];
        match minimize(&a, &b, &c) {
            LpOutcome::Optimal { x, value } => {
                assert_eq!(x[0], q_ratio(8, 5));
                assert_eq!(x[1], q_ratio(6, 5));
                assert_eq!(value, q_ratio(-14, 5));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasibility() {
        // x + y = 1, x + y = 2
        let a = rows(&[&[1, 1], &[1, 1]]);
        assert_eq!(minimize(&a, &[q(1), q(2)], &[q(0), q(0)]), LpOutcome::Infeasible);
    }

    #[test]
    fn detects_unboundedness() {
        // min -x s.t. x - y = 1
        let a = rows(&[&[1, -1]]);
        assert_eq!(minimize(&a, &[q(1)], &[q(-1), q(0)]), LpOutcome::Unbounded);
    }

    #[test]
    fn handles_redundant_rows_and_negative_rhs() {
        let a = rows(&[&[1, 1], &[2, 2], &[-1, 0]]);
        let b = vec![q(2), q(4), q(-1)];
        match minimize(&a, &b, &[q(0), q(1)]) {
            LpOutcome::Optimal { x, value } => {
                assert_eq!(x, vec![q(1), q(1)]);
                assert_eq!(value, q(1));
            }
            other => panic!("{other:?}"),
        }
    }
}
