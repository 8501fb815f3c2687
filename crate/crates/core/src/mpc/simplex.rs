//! Dense bounded-variable primal simplex for `min cᵀx` subject to `Ax = b`,
//! `l ≤ x ≤ u`. Two phases with one artificial per row. Dantzig pricing,
//! switching to Bland's rule after a run of degenerate pivots.

use thiserror::Error;

const PRICE_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const FEASIBILITY_TOL: f64 = 1e-7;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("column {0} has no finite bound")]
    FreeColumn(usize),
    #[error("infeasible: residual {residual:e} after phase one")]
    Infeasible { residual: f64 },
    #[error("unbounded along column {column}")]
    Unbounded { column: usize },
    #[error("no convergence after {iterations} iterations")]
    IterationLimit { iterations: usize },
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    m: usize,
    width: usize,
    cells: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    x: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    iterations: usize,
    limit: usize,
    bland: bool,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.width + j]
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.cells[i * self.width..(i + 1) * self.width];
                for (dj, a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    fn entering(&self, d: &[f64], columns: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..columns {
            if self.lower[j] >= self.upper[j] {
                continue;
            }
            let gain = match self.status[j] {
                Status::Basic => continue,
                Status::AtLower if d[j] < -PRICE_TOL => -d[j],
                Status::AtUpper if d[j] > PRICE_TOL => d[j],
                _ => continue,
            };
            if self.bland {
                return Some(j);
            }
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((j, gain));
            }
        }
        best.map(|(j, _)| j)
    }

    fn pivot(&mut self, r: usize, q: usize, d: &mut [f64]) {
        let w = self.width;
        let inv = 1.0 / self.at(r, q);
        for v in &mut self.cells[r * w..(r + 1) * w] {
            *v *= inv;
        }
        let pivot_row: Vec<f64> = self.cells[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.cells[i * w + q];
            if f != 0.0 {
                for (v, p) in self.cells[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                self.cells[i * w + q] = 0.0;
            }
        }
        let dq = d[q];
        if dq != 0.0 {
            for (dj, p) in d.iter_mut().zip(&pivot_row) {
                *dj -= dq * p;
            }
        }
        d[q] = 0.0;
    }

    /// Runs to optimality for `cost`, pricing only the first `columns`
    /// columns.
    fn optimize(&mut self, cost: &[f64], columns: usize) -> Result<(), LpError> {
        let mut d = self.reduced_costs(cost);
        let mut degenerate = 0;
        loop {
            let Some(q) = self.entering(&d, columns) else {
                return Ok(());
            };
            self.iterations += 1;
            if self.iterations > self.limit {
                return Err(LpError::IterationLimit {
                    iterations: self.iterations - 1,
                });
            }
            let dir = if self.status[q] == Status::AtLower { 1.0 } else { -1.0 };

            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let rate = -dir * a;
                let limit = if rate < 0.0 {
                    (self.x[b] - self.lower[b]) / -rate
                } else if self.upper[b].is_finite() {
                    (self.upper[b] - self.x[b]) / rate
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = match leave {
                    _ if limit < step - 1e-12 => true,
                    Some((r, _)) if limit <= step + 1e-12 => {
                        if self.bland {
                            b < self.basis[r]
                        } else {
                            a.abs() > self.at(r, q).abs()
                        }
                    }
                    _ => false,
                };
                if better {
                    step = limit;
                    leave = Some((i, rate));
                }
            }
            if !step.is_finite() {
                return Err(LpError::Unbounded { column: q });
            }

            self.x[q] += dir * step;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a != 0.0 {
                    self.x[self.basis[i]] -= dir * a * step;
                }
            }
            match leave {
                None => {
                    self.status[q] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                }
                Some((r, rate)) => {
                    let b = self.basis[r];
                    if rate < 0.0 {
                        self.x[b] = self.lower[b];
                        self.status[b] = Status::AtLower;
                    } else {
                        self.x[b] = self.upper[b];
                        self.status[b] = Status::AtUpper;
                    }
                    self.pivot(r, q, &mut d);
                    self.basis[r] = q;
                    self.status[q] = Status::Basic;
                }
            }
            if step <= 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_RUN {
                    self.bland = true;
                }
            } else {
                degenerate = 0;
            }
        }
    }
}

impl LinearProgram {
    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let n = self.cost.len();
        let m = self.rows.len();
        if self.rhs.len() != m || self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension(format!(
                "{n} columns, {m} rows, {} rhs, {} lower, {} upper",
                self.rhs.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        if let Some(i) = self.rows.iter().position(|r| r.len() != n) {
            return Err(LpError::Dimension(format!(
                "row {i} has {} entries",
                self.rows[i].len()
            )));
        }

        let width = n + m;
        let mut x = vec![0.0; width];
        let mut status = vec![Status::Basic; width];
        for j in 0..n {
            if self.lower[j].is_finite() {
                x[j] = self.lower[j];
                status[j] = Status::AtLower;
            } else if self.upper[j].is_finite() {
                x[j] = self.upper[j];
                status[j] = Status::AtUpper;
            } else {
                return Err(LpError::FreeColumn(j));
            }
        }

        let mut cells = vec![0.0; m * width];
        let mut basis = Vec::with_capacity(m);
        for (i, row) in self.rows.iter().enumerate() {
            let residual = self.rhs[i] - row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>();
            let sign = if residual >= 0.0 { 1.0 } else { -1.0 };
            for j in 0..n {
                cells[i * width + j] = sign * row[j];
            }
            cells[i * width + n + i] = 1.0;
            x[n + i] = residual.abs();
            basis.push(n + i);
        }

        let mut lower = self.lower.clone();
        lower.resize(width, 0.0);
        let mut upper = self.upper.clone();
        upper.resize(width, f64::INFINITY);

        let mut tab = Tableau {
            m,
            width,
            cells,
            basis,
            status,
            x,
            lower,
            upper,
            iterations: 0,
            limit: 50 * width + 1000,
            bland: false,
        };

        let mut phase_one = vec![0.0; width];
        for c in &mut phase_one[n..] {
            *c = 1.0;
        }
        tab.optimize(&phase_one, width)?;
        let scale = self.rhs.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
        let residual: f64 = tab.x[n..].iter().sum();
        if residual > FEASIBILITY_TOL * scale {
            return Err(LpError::Infeasible { residual });
        }
        for j in n..width {
            tab.upper[j] = 0.0;
            if tab.status[j] != Status::Basic {
                tab.x[j] = 0.0;
                tab.status[j] = Status::AtLower;
            }
        }

        let mut cost = self.cost.clone();
        cost.resize(width, 0.0);
        tab.bland = false;
        tab.optimize(&cost, n)?;

        let x: Vec<f64> = (0..n).map(|j| tab.x[j].clamp(self.lower[j], self.upper[j])).collect();
        let objective = x.iter().zip(&self.cost).map(|(v, c)| v * c).sum();
        Ok(LpSolution {
            x,
            objective,
            iterations: tab.iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_textbook_problem() {
        // max 3a + 5b, a ≤ 4, 2b ≤ 12, 3a + 2b ≤ 18, with slacks
        let lp = LinearProgram {
            cost: vec![-3.0, -5.0, 0.0, 0.0, 0.0],
            rows: vec![
                vec![1.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 2.0, 0.0, 1.0, 0.0],
                vec![3.0, 2.0, 0.0, 0.0, 1.0],
            ],
            rhs: vec![4.0, 12.0, 18.0],
            lower: vec![0.0; 5],
            upper: vec![f64::INFINITY; 5],
        };
        let sol = lp.solve().unwrap();
        assert!((sol.objective + 36.0).abs() < 1e-9);
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        assert!((sol.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn upper_bounds_are_respected() {
        let lp = LinearProgram {
            cost: vec![-1.0, -1.0],
            rows: vec![vec![1.0, 1.0]],
            rhs: vec![1.5],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        let sol = lp.solve().unwrap();
        assert!((sol.objective + 1.5).abs() < 1e-12);
        assert!(sol.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn negative_rhs_and_upper_start() {
        let lp = LinearProgram {
            cost: vec![1.0, 2.0],
            rows: vec![vec![1.0, -1.0]],
            rhs: vec![-2.0],
            lower: vec![f64::NEG_INFINITY, 0.0],
            upper: vec![3.0, 5.0],
        };
        let sol = lp.solve().unwrap();
        // x0 = x1 - 2, cost x1 - 2 + 2 x1 minimised at x1 = 0
        assert!((sol.x[0] + 2.0).abs() < 1e-12);
        assert!((sol.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let infeasible = LinearProgram {
            cost: vec![0.0],
            rows: vec![vec![1.0]],
            rhs: vec![5.0],
            lower: vec![0.0],
            upper: vec![1.0],
        };
        assert!(matches!(infeasible.solve(), Err(LpError::Infeasible { .. })));
        let unbounded = LinearProgram {
            cost: vec![-1.0, 0.0],
            rows: vec![vec![1.0, -1.0]],
            rhs: vec![0.0],
            lower: vec![0.0, 0.0],
            upper: vec![f64::INFINITY, f64::INFINITY],
        };
        assert!(matches!(unbounded.solve(), Err(LpError::Unbounded { .. })));
    }

    #[test]
    fn rejects_free_columns_and_bad_shapes() {
        let free = LinearProgram {
            cost: vec![0.0],
            rows: vec![vec![1.0]],
            rhs: vec![0.0],
            lower: vec![f64::NEG_INFINITY],
            upper: vec![f64::INFINITY],
        };
        assert_eq!(free.solve().unwrap_err(), LpError::FreeColumn(0));
        let shape = LinearProgram {
            cost: vec![0.0, 1.0],
            rows: vec![vec![1.0]],
            rhs: vec![0.0],
            lower: vec![0.0; 2],
            upper: vec![1.0; 2],
        };
        assert!(matches!(shape.solve(), Err(LpError::Dimension(_))));
    }
}
