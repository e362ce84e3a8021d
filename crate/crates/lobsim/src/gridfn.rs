//! Piecewise-constant functions on a uniform tick grid.
//!
//! Cell `j` covers `[j*spacing, (j+1)*spacing)`. Values are densities per
//! price unit; the function is zero outside the stored window. The stored
//! window may grow lazily, but never beyond the configured domain
//! `[dom_lo, dom_hi)` (in cell indices).

use crate::error::{LobError, Result};
use serde::{Deserialize, Serialize};

const REL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    spacing: f64,
    /// Index of the leftmost stored cell.
    lo: i64,
    values: Vec<f64>,
    /// Hard cell-index bounds; mass may never leave `[dom_lo, dom_hi)`.
    dom_lo: i64,
    dom_hi: i64,
}

impl GridFunction {
    /// Zero function on the domain `[x_lo, x_hi)` (price units).
    pub fn zero(spacing: f64, x_lo: f64, x_hi: f64) -> Self {
        assert!(spacing > 0.0 && x_lo < x_hi);
        let dom_lo = (x_lo / spacing).round() as i64;
        let dom_hi = (x_hi / spacing).round() as i64;
        GridFunction {
            spacing,
            lo: 0,
            values: Vec::new(),
            dom_lo,
            dom_hi,
        }
    }

    pub fn from_values(spacing: f64, lo: i64, values: Vec<f64>, x_lo: f64, x_hi: f64) -> Self {
        let mut f = Self::zero(spacing, x_lo, x_hi);
        f.lo = lo;
        f.values = values;
        debug_assert!(f.lo >= f.dom_lo && f.lo + f.values.len() as i64 <= f.dom_hi);
        f
    }

    /// Step approximation of a density by midpoint sampling on every domain cell.
    pub fn from_density(spacing: f64, x_lo: f64, x_hi: f64, density: impl Fn(f64) -> f64) -> Self {
        let mut f = Self::zero(spacing, x_lo, x_hi);
        let n = (f.dom_hi - f.dom_lo) as usize;
        f.lo = f.dom_lo;
        f.values = (0..n)
            .map(|i| density((f.dom_lo + i as i64) as f64 * spacing + 0.5 * spacing))
            .collect();
        f.trim();
        f
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn domain(&self) -> (f64, f64) {
        (
            self.dom_lo as f64 * self.spacing,
            self.dom_hi as f64 * self.spacing,
        )
    }

    pub fn domain_cells(&self) -> (i64, i64) {
        (self.dom_lo, self.dom_hi)
    }

    /// Cell index containing `x`.
    pub fn cell_index(&self, x: f64) -> i64 {
        (x / self.spacing).floor() as i64
    }

    pub fn window(&self) -> (i64, i64) {
        (self.lo, self.lo + self.values.len() as i64)
    }

    pub fn value_at_cell(&self, j: i64) -> f64 {
        let i = j - self.lo;
        if i >= 0 && (i as usize) < self.values.len() {
            self.values[i as usize]
        } else {
            0.0
        }
    }

    /// Left-closed right-open cell lookup; zero outside the window.
    pub fn eval(&self, x: f64) -> f64 {
        self.value_at_cell(self.cell_index(x))
    }

    /// Grow the stored window so that cell `j` is addressable.
    fn ensure_cell(&mut self, j: i64) -> Result<()> {
        if j < self.dom_lo || j >= self.dom_hi {
            return Err(LobError::DomainOverflow { cell: j });
        }
        if self.values.is_empty() {
            self.lo = j;
            self.values.push(0.0);
            return Ok(());
        }
        if j < self.lo {
            let extra = (self.lo - j) as usize;
            let mut v = vec![0.0; extra];
            v.extend_from_slice(&self.values);
            self.values = v;
            self.lo = j;
        } else if j >= self.lo + self.values.len() as i64 {
            self.values.resize((j - self.lo + 1) as usize, 0.0);
        }
        Ok(())
    }

    pub fn add_to_cell(&mut self, j: i64, delta: f64) -> Result<()> {
        if delta == 0.0 {
            return Ok(());
        }
        self.ensure_cell(j)?;
        self.values[(j - self.lo) as usize] += delta;
        Ok(())
    }

    pub fn set_cell(&mut self, j: i64, value: f64) -> Result<()> {
        self.ensure_cell(j)?;
        self.values[(j - self.lo) as usize] = value;
        Ok(())
    }

    /// Translate by `m` ticks: `result(x) = self(x - m*spacing)`.
    ///
    /// Pure index offset; no values are touched, so this is an exact L2 isometry.
    pub fn shift_ticks(&self, m: i64) -> GridFunction {
        let mut out = self.clone();
        out.shift_ticks_mut(m);
        out
    }

    pub fn shift_ticks_mut(&mut self, m: i64) {
        if !self.values.is_empty() {
            self.lo += m;
        }
    }

    /// `result(x) = self(x - dx) + c * g(x - dx)`.
    ///
    /// When `dx` is a tick multiple the shift is an exact index offset;
    /// otherwise shifted cell values are linearly interpolated (first-order
    /// accurate in L2, mass conservative).
    pub fn axpy_shifted(&self, g: &GridFunction, c: f64, dx: f64) -> Result<GridFunction> {
        if (g.spacing - self.spacing).abs() > REL_EPS * self.spacing {
            return Err(LobError::GridMismatch(format!(
                "spacings differ: {} vs {}",
                self.spacing, g.spacing
            )));
        }
        let sp = self.spacing;
        let ratio = dx / sp;
        let nearest = ratio.round();
        let out = if (ratio - nearest).abs() <= REL_EPS.max(REL_EPS * ratio.abs()) {
            let m = nearest as i64;
            let mut out = self.shift_ticks(m);
            let (g_lo, g_hi) = g.window();
            for j in g_lo..g_hi {
                let v = c * g.value_at_cell(j);
                if v != 0.0 {
                    out.add_to_cell(j + m, v)?;
                }
            }
            out
        } else {
            let m = ratio.floor() as i64;
            let frac = ratio - ratio.floor();
            let mut out = GridFunction::zero(sp, self.domain().0, self.domain().1);
            let (f_lo, f_hi) = self.window();
            let (g_lo, g_hi) = g.window();
            let lo = f_lo.min(g_lo);
            let hi = f_hi.max(g_hi);
            // result cell j sees sources j-m (weight 1-frac) and j-m-1 (weight frac)
            for j in (lo + m)..(hi + m + 2) {
                let u0 = self.value_at_cell(j - m) + c * g.value_at_cell(j - m);
                let u1 = self.value_at_cell(j - m - 1) + c * g.value_at_cell(j - m - 1);
                let v = (1.0 - frac) * u0 + frac * u1;
                if v != 0.0 {
                    out.add_to_cell(j, v)?;
                }
            }
            out
        };
        out.check_in_domain()?;
        Ok(out)
    }

    fn check_in_domain(&self) -> Result<()> {
        let (lo, hi) = self.window();
        if self.values.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        for j in lo..hi {
            if self.value_at_cell(j) != 0.0 && (j < self.dom_lo || j >= self.dom_hi) {
                return Err(LobError::DomainOverflow { cell: j });
            }
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        (self.spacing * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.spacing * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// Exact integral of the step function over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        assert!(a <= b, "integrate requires a <= b");
        let sp = self.spacing;
        let ja = self.cell_index(a);
        let jb = self.cell_index(b);
        if ja == jb {
            return self.value_at_cell(ja) * (b - a);
        }
        let mut total = self.value_at_cell(ja) * ((ja + 1) as f64 * sp - a);
        for j in (ja + 1)..jb {
            total += self.value_at_cell(j) * sp;
        }
        total += self.value_at_cell(jb) * (b - jb as f64 * sp);
        total
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::min)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Drop zero padding at both ends of the stored window.
    pub fn trim(&mut self) {
        let first = self.values.iter().position(|v| *v != 0.0);
        match first {
            None => {
                self.values.clear();
                self.lo = 0;
            }
            Some(i) => {
                let last = self.values.iter().rposition(|v| *v != 0.0).unwrap();
                self.values.drain(last + 1..);
                self.values.drain(..i);
                self.lo += i as i64;
            }
        }
    }

    /// Rows `(cell_left_edge, value)` over the stored window.
    pub fn csv_rows(&self) -> Vec<(f64, f64)> {
        let (lo, hi) = self.window();
        (lo..hi)
            .map(|j| (j as f64 * self.spacing, self.value_at_cell(j)))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
