//! CSV exports: observables, particle snapshots and density grids.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use appd_core::particle::{GaussianParticle, StateVector};
use nalgebra::{Matrix2, Vector2};

use crate::error::{EngineError, Result};

/// One row of `observables.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableFrame {
    pub time: f64,
    pub total_weight: f64,
    /// Particle count (APPD) or ensemble size (Monte Carlo).
    pub n_particles: usize,
    pub mean: Vec<f64>,
    /// `100·mean_0` for neuron models, NaN otherwise.
    pub mean_v_mv: f64,
    pub q: f64,
    pub coupling_value: f64,
}

/// Shortest exact-enough decimal form: 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn observables_header(d: usize) -> String {
    let mut h = String::from("time,total_weight,n_particles");
    for i in 0..d {
        let _ = write!(h, ",mean_{i}");
    }
    h.push_str(",mean_V_mV,Q,coupling_value");
    h
}

pub fn observables_row(f: &ObservableFrame) -> String {
    let mut row = format!("{},{},{}", fmt_real(f.time), fmt_real(f.total_weight), f.n_particles);
    for m in &f.mean {
        row.push(',');
        row.push_str(&fmt_real(*m));
    }
    let _ = write!(
        row,
        ",{},{},{}",
        fmt_real(f.mean_v_mv),
        fmt_real(f.q),
        fmt_real(f.coupling_value)
    );
    row
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| EngineError::io(path, e))
}

fn write_all(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| EngineError::io(path, e))
}

/// Append-only observable log, flushed after every row so an aborted run
/// leaves a readable prefix.
pub struct FrameSink {
    path: PathBuf,
    writer: BufWriter<File>,
    rows: usize,
}

impl FrameSink {
    pub fn create(dir: &Path, d: usize) -> Result<Self> {
        let path = dir.join("observables.csv");
        let mut writer = create(&path)?;
        writeln!(writer, "{}", observables_header(d)).map_err(|e| EngineError::io(&path, e))?;
        Ok(Self { path, writer, rows: 0 })
    }

    /// Append a row and return its frame index.
    pub fn push(&mut self, frame: &ObservableFrame) -> Result<usize> {
        writeln!(self.writer, "{}", observables_row(frame))
            .and_then(|_| self.writer.flush())
            .map_err(|e| EngineError::io(&self.path, e))?;
        self.rows += 1;
        Ok(self.rows - 1)
    }
}

pub fn particles_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("particles_{frame:06}.csv"))
}

pub fn grid_path(dir: &Path, frame: usize, dims: [usize; 2]) -> PathBuf {
    dir.join(format!("grid_{frame:06}_{}_{}.csv", dims[0], dims[1]))
}

pub fn particles_csv<const D: usize>(particles: &[GaussianParticle<D>]) -> String {
    let mut s = String::from("weight");
    for i in 0..D {
        let _ = write!(s, ",center_{i}");
    }
    for r in 0..D {
        for c in 0..D {
            let _ = write!(s, ",M_{r}{c}");
        }
    }
    s.push('\n');
    for p in particles {
        s.push_str(&fmt_real(p.weight));
        for i in 0..D {
            s.push(',');
            s.push_str(&fmt_real(p.center[i]));
        }
        for r in 0..D {
            for c in 0..D {
                s.push(',');
                s.push_str(&fmt_real(p.sqrt_factor[(r, c)]));
            }
        }
        s.push('\n');
    }
    s
}

pub fn write_particles<const D: usize>(path: &Path, particles: &[GaussianParticle<D>]) -> Result<()> {
    write_all(path, &particles_csv(particles))
}

/// Parse a particle snapshot written by [`write_particles`].
pub fn read_particles<const D: usize>(path: &Path) -> Result<Vec<GaussianParticle<D>>> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
    let bad = |line: usize, what: &str| {
        EngineError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {line}: {what}")),
        )
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(n + 1, "not a number"))?;
        if vals.len() != 1 + D + D * D {
            return Err(bad(n + 1, "wrong column count"));
        }
        let center = StateVector::<D>::from_fn(|i, _| vals[1 + i]);
        let m = nalgebra::SMatrix::<f64, D, D>::from_fn(|r, c| vals[1 + D + r * D + c]);
        out.push(GaussianParticle::new(vals[0], center, m));
    }
    Ok(out)
}

/// Two-dimensional marginal of the mixture on dims `(i, j)`, sampled at cell
/// centres. Row `r` runs along dim `i`, column `c` along dim `j`.
pub fn density_grid<const D: usize>(
    particles: &[GaussianParticle<D>],
    dims: [usize; 2],
    ranges: [[f64; 2]; 2],
    resolution: [usize; 2],
) -> Vec<Vec<f64>> {
    let [ni, nj] = resolution;
    let hi = (ranges[0][1] - ranges[0][0]) / ni as f64;
    let hj = (ranges[1][1] - ranges[1][0]) / nj as f64;
    let mut grid = vec![vec![0.0; nj]; ni];
    let two_pi = 2.0 * std::f64::consts::PI;

    for p in particles {
        let cov = p.covariance();
        let s = Matrix2::new(
            cov[(dims[0], dims[0])],
            cov[(dims[0], dims[1])],
            cov[(dims[1], dims[0])],
            cov[(dims[1], dims[1])],
        );
        let mu = Vector2::new(p.center[dims[0]], p.center[dims[1]]);
        let det = s.determinant();
        let scale = s.trace().max(f64::MIN_POSITIVE);
        match s.try_inverse().filter(|_| det > 1e-20 * scale * scale) {
            Some(inv) => {
                let norm = p.weight / (two_pi * det.sqrt());
                // Beyond 8 standard deviations the contribution is below 1e-14 of the peak.
                let reach_i = 8.0 * s[(0, 0)].sqrt();
                let reach_j = 8.0 * s[(1, 1)].sqrt();
                let (r0, r1) = index_window(mu[0] - reach_i, mu[0] + reach_i, ranges[0][0], hi, ni);
                let (c0, c1) = index_window(mu[1] - reach_j, mu[1] + reach_j, ranges[1][0], hj, nj);
                for (r, row) in grid.iter_mut().enumerate().take(r1).skip(r0) {
                    let x = ranges[0][0] + (r as f64 + 0.5) * hi - mu[0];
                    for (c, cell) in row.iter_mut().enumerate().take(c1).skip(c0) {
                        let y = ranges[1][0] + (c as f64 + 0.5) * hj - mu[1];
                        let q = inv[(0, 0)] * x * x + 2.0 * inv[(0, 1)] * x * y + inv[(1, 1)] * y * y;
                        *cell += norm * (-0.5 * q).exp();
                    }
                }
            }
            None => {
                // A collapsed marginal puts all its mass in the cell holding its center.
                let r = ((mu[0] - ranges[0][0]) / hi).floor();
                let c = ((mu[1] - ranges[1][0]) / hj).floor();
                if r >= 0.0 && c >= 0.0 && (r as usize) < ni && (c as usize) < nj {
                    grid[r as usize][c as usize] += p.weight / (hi * hj);
                }
            }
        }
    }
    grid
}

fn index_window(lo: f64, hi: f64, origin: f64, h: f64, n: usize) -> (usize, usize) {
    let a = ((lo - origin) / h).floor().max(0.0);
    let b = ((hi - origin) / h).ceil().max(0.0);
    ((a as usize).min(n), (b as usize).min(n))
}

pub fn grid_csv(grid: &[Vec<f64>]) -> String {
    let nj = grid.first().map_or(0, Vec::len);
    let mut s = format!("{},{}\n", grid.len(), nj);
    for row in grid {
        let line: Vec<String> = row.iter().map(|&x| fmt_real(x)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn write_grid(path: &Path, grid: &[Vec<f64>]) -> Result<()> {
    write_all(path, &grid_csv(grid))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_all(path, text)
}

pub fn write_spikes(path: &Path, spikes: &[f64]) -> Result<()> {
    let mut s = String::from("spike_time\n");
    for t in spikes {
        s.push_str(&fmt_real(*t));
        s.push('\n');
    }
    write_all(path, &s)
}

/// Times at which `series` crosses `level` upward, linearly interpolated
/// between samples.
pub fn upward_crossings(times: &[f64], series: &[f64], level: f64) -> Vec<f64> {
    times
        .windows(2)
        .zip(series.windows(2))
        .filter(|(_, s)| s[0] < level && s[1] >= level)
        .map(|(t, s)| t[0] + (t[1] - t[0]) * (level - s[0]) / (s[1] - s[0]))
        .collect()
}
