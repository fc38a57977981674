use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::RegimeSpace;

const MAGIC: &[u8; 4] = b"PSIG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Reduced,
    General,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced" => Ok(Mode::Reduced),
            "general" => Ok(Mode::General),
            other => Err(crate::error::invalid("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Values `ψ^m(x, y)` with `m` counting steps to go: `ψ^m ≈ ψ(T - mΔt)`.
/// Ages share one increasing node vector across components and are
/// interpolated multilinearly, clamped at the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiGrid {
    pub mode: Mode,
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    pub regimes: RegimeSpace,
    pub ages: Vec<f64>,
    /// Row-major `[m][x][age index per component]`.
    pub values: Vec<f64>,
}

impl PsiGrid {
    pub(crate) fn age_points(&self) -> usize {
        self.ages.len().pow(self.regimes.components() as u32)
    }

    pub fn index(&self, m: usize, x: usize, ages: &[usize]) -> usize {
        let na = self.ages.len();
        let flat = ages.iter().fold(0, |acc, a| acc * na + a);
        (m * self.regimes.len() + x) * self.age_points() + flat
    }

    pub fn value(&self, m: usize, x: usize, ages: &[usize]) -> f64 {
        self.values[self.index(m, x, ages)]
    }

    /// Forward time of step `m`.
    pub fn time(&self, m: usize) -> f64 {
        if m == self.steps {
            0.0
        } else {
            self.horizon - m as f64 * self.dt
        }
    }

    fn bracket(&self, y: f64) -> (usize, f64) {
        let a = &self.ages;
        if a.len() == 1 || y <= a[0] {
            return (0, 0.0);
        }
        if y >= a[a.len() - 1] {
            return (a.len() - 2, 1.0);
        }
        let i = a.partition_point(|v| *v <= y) - 1;
        (i, (y - a[i]) / (a[i + 1] - a[i]))
    }

    /// Multilinear interpolation in the ages at step `m`.
    pub fn interpolate(&self, m: usize, x: usize, y: &[f64]) -> f64 {
        let c = self.regimes.components();
        let brackets: Vec<(usize, f64)> = y.iter().map(|v| self.bracket(*v)).collect();
        let base = (m * self.regimes.len() + x) * self.age_points();
        let na = self.ages.len();
        let mut acc = 0.0;
        for corner in 0..(1usize << c) {
            let mut w = 1.0;
            let mut flat = 0;
            for (k, (i, f)) in brackets.iter().enumerate() {
                let up = (corner >> (c - 1 - k)) & 1 == 1;
                let idx = if na == 1 { 0 } else { i + up as usize };
                w *= if up { *f } else { 1.0 - f };
                flat = flat * na + idx;
            }
            if w != 0.0 {
                acc += w * self.values[base + flat];
            }
        }
        acc
    }

    /// `ψ(t, x, y)`: linear in time between steps, multilinear in ages.
    pub fn psi_at(&self, t: f64, x: usize, y: &[f64]) -> f64 {
        if self.steps == 0 {
            return self.interpolate(0, x, y);
        }
        let pos = ((self.horizon - t) / self.dt).clamp(0.0, self.steps as f64);
        let lo = (pos.floor() as usize).min(self.steps);
        let f = pos - lo as f64;
        if f < 1e-9 || lo == self.steps {
            return self.interpolate(lo, x, y);
        }
        if f > 1.0 - 1e-9 {
            return self.interpolate(lo + 1, x, y);
        }
        (1.0 - f) * self.interpolate(lo, x, y) + f * self.interpolate(lo + 1, x, y)
    }

    /// CSV with header `m,t,state,y,psi`; multi-component states and ages are
    /// joined by `;`. `comments` go first as `# ` lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "m,t,state,y,psi")?;
        let na = self.ages.len();
        let comps = self.regimes.components();
        for m in 0..=self.steps {
            let t = self.time(m);
            for x in 0..self.regimes.len() {
                let state: Vec<String> = self.regimes.unflatten(x).iter().map(|s| s.to_string()).collect();
                let state = state.join(";");
                for flat in 0..self.age_points() {
                    let mut ages = vec![0; comps];
                    let mut rest = flat;
                    for k in (0..comps).rev() {
                        ages[k] = rest % na;
                        rest /= na;
                    }
                    let y: Vec<String> = ages.iter().map(|a| self.ages[*a].to_string()).collect();
                    let v = self.values[(m * self.regimes.len() + x) * self.age_points() + flat];
                    writeln!(w, "{m},{t},{state},{},{v:.17e}", y.join(";"))?;
                }
            }
        }
        Ok(())
    }

    /// Binary checkpoint, all little-endian: magic `PSIG`, version `u32`,
    /// mode `u32` (0 reduced, 1 general), component count `u32`, one `u32`
    /// state count per component, steps `u32`, age count `u32`, `dt` and
    /// horizon as `f64`, the ages, then the values row-major as in
    /// [`PsiGrid::values`].
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        let mut u32s = vec![
            VERSION,
            matches!(self.mode, Mode::General) as u32,
            self.regimes.components() as u32,
        ];
        u32s.extend(self.regimes.dims.iter().map(|d| *d as u32));
        u32s.push(self.steps as u32);
        u32s.push(self.ages.len() as u32);
        for v in u32s {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.dt, self.horizon].iter().chain(&self.ages).chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("missing PSIG header".into()));
        }
        let mut u32_at = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u32_at()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mode = match u32_at()? {
            0 => Mode::Reduced,
            1 => Mode::General,
            m => return Err(Error::Checkpoint(format!("unknown mode tag {m}"))),
        };
        let comps = u32_at()? as usize;
        let dims = (0..comps).map(|_| u32_at().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let steps = u32_at()? as usize;
        let n_ages = u32_at()? as usize;
        let mut f64_at = || -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let dt = f64_at()?;
        let horizon = f64_at()?;
        let ages = (0..n_ages).map(|_| f64_at()).collect::<Result<Vec<_>>>()?;
        let regimes = RegimeSpace::new(dims);
        let count = (steps + 1) * regimes.len() * n_ages.pow(comps as u32);
        let values = (0..count).map(|_| f64_at()).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mode,
            dt,
            horizon,
            steps,
            regimes,
            ages,
            values,
        })
    }
}
