use std::io::{self, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::graph::Vec2;

/// Square cell grid over `[0, side)²`; cell `(ix, iy)` has its center at
/// `((ix + 0.5)·res, (iy + 0.5)·res)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeom {
    pub cells: usize,
    pub resolution: f64,
}

impl GridGeom {
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.resolution
    }

    /// Cell containing `p`; may lie outside the grid.
    pub fn cell_of(&self, p: Vec2) -> (i64, i64) {
        (
            (p.x / self.resolution).floor() as i64,
            (p.y / self.resolution).floor() as i64,
        )
    }

    pub fn full(&self) -> CellRect {
        CellRect {
            x0: 0,
            y0: 0,
            x1: self.cells,
            y1: self.cells,
        }
    }

    /// `[cx - half, cx + half) x [cy - half, cy + half)` clipped to the grid.
    pub fn window(&self, center: (i64, i64), half: usize) -> CellRect {
        let clip = |v: i64| v.clamp(0, self.cells as i64) as usize;
        let h = half as i64;
        CellRect {
            x0: clip(center.0 - h),
            y0: clip(center.1 - h),
            x1: clip(center.0 + h),
            y1: clip(center.1 + h),
        }
    }
}

/// Half-open rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.x0 && ix < self.x1 && iy >= self.y0 && iy < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPeak {
    pub center: Vec2,
    pub sigma: f64,
    pub amplitude: f64,
}

/// Parameters of the synthetic density generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdfSpec {
    pub side: f64,
    pub resolution: f64,
    pub num_peaks: usize,
    /// Multiplies the `(0, 1]` amplitude draw of every peak.
    pub peak_scale: f64,
}

impl Default for IdfSpec {
    fn default() -> Self {
        Self {
            side: 1024.0,
            resolution: 1.0,
            num_peaks: 16,
            peak_scale: 1.0,
        }
    }
}

pub const IDF_MAGIC: [u8; 4] = *b"IDF1";

/// Importance density over the square environment.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    side: f64,
    geom: GridGeom,
    idf: Vec<f64>,
}

impl World {
    pub fn new(side: f64, resolution: f64, idf: Vec<f64>) -> Result<Self, EnvError> {
        let geom = Self::geometry(side, resolution)?;
        if idf.len() != geom.cells * geom.cells {
            return Err(EnvError::GridSize {
                expected: geom.cells * geom.cells,
                actual: idf.len(),
            });
        }
        if let Some(bad) = idf.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(EnvError::InvalidDensity(bad));
        }
        Ok(Self { side, geom, idf })
    }

    fn geometry(side: f64, resolution: f64) -> Result<GridGeom, EnvError> {
        if !(side > 0.0 && resolution > 0.0 && side.is_finite() && resolution.is_finite()) {
            return Err(EnvError::Geometry { side, resolution });
        }
        let cells = (side / resolution).round();
        if (cells * resolution - side).abs() > 1e-9 * side || cells < 1.0 {
            return Err(EnvError::Geometry { side, resolution });
        }
        Ok(GridGeom {
            cells: cells as usize,
            resolution,
        })
    }

    pub fn uniform(side: f64, resolution: f64, value: f64) -> Result<Self, EnvError> {
        let geom = Self::geometry(side, resolution)?;
        Self::new(side, resolution, vec![value; geom.cells * geom.cells])
    }

    /// Sum of Gaussian bumps sampled at cell centers.
    pub fn from_peaks(side: f64, resolution: f64, peaks: &[GaussianPeak]) -> Result<Self, EnvError> {
        let geom = Self::geometry(side, resolution)?;
        let n = geom.cells;
        let mut idf = vec![0.0; n * n];
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        for peak in peaks {
            let inv = 1.0 / (2.0 * peak.sigma * peak.sigma);
            for i in 0..n {
                let c = geom.center(i);
                gx[i] = (-(c - peak.center.x).powi(2) * inv).exp();
                gy[i] = peak.amplitude * (-(c - peak.center.y).powi(2) * inv).exp();
            }
            for (iy, row) in idf.chunks_exact_mut(n).enumerate() {
                let fy = gy[iy];
                if fy < 1e-300 {
                    continue;
                }
                for (v, fx) in row.iter_mut().zip(&gx) {
                    *v += fy * fx;
                }
            }
        }
        Self::new(side, resolution, idf)
    }

    pub fn random_peaks<R: Rng + ?Sized>(spec: &IdfSpec, rng: &mut R) -> Vec<GaussianPeak> {
        (0..spec.num_peaks)
            .map(|_| {
                let center = Vec2::new(rng.random_range(0.0..spec.side), rng.random_range(0.0..spec.side));
                let sigma = rng.random_range(32.0..=128.0);
                // (0, 1]
                let amplitude = 1.0 - rng.random::<f64>();
                GaussianPeak {
                    center,
                    sigma,
                    amplitude: amplitude * spec.peak_scale,
                }
            })
            .collect()
    }

    /// Seeded Gaussian-mixture density.
    pub fn generate(seed: u64, spec: &IdfSpec) -> Result<Self, EnvError> {
        if spec.num_peaks == 0 {
            return Err(EnvError::NoPeaks);
        }
        let mut rng = crate::rng::stream(seed, crate::rng::Stream::World);
        let peaks = Self::random_peaks(spec, &mut rng);
        Self::from_peaks(spec.side, spec.resolution, &peaks)
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn resolution(&self) -> f64 {
        self.geom.resolution
    }

    pub fn cells(&self) -> usize {
        self.geom.cells
    }

    pub fn geom(&self) -> GridGeom {
        self.geom
    }

    pub fn cell_area(&self) -> f64 {
        self.geom.resolution * self.geom.resolution
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    #[inline]
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.idf[iy * self.geom.cells + ix]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(self.geom.center(ix), self.geom.center(iy))
    }

    pub fn total_mass(&self) -> f64 {
        self.idf.iter().sum::<f64>() * self.cell_area()
    }

    /// Flat binary grid: magic, side in meters, resolution in millimeters,
    /// then row-major f32 values.
    pub fn write_idf<W: Write>(&self, mut w: W) -> Result<(), EnvError> {
        let side = self.side.round();
        let res_mm = (self.geom.resolution * 1000.0).round();
        if (side - self.side).abs() > 1e-9 || (res_mm - self.geom.resolution * 1000.0).abs() > 1e-6 {
            return Err(EnvError::Geometry {
                side: self.side,
                resolution: self.geom.resolution,
            });
        }
        w.write_all(&IDF_MAGIC)?;
        w.write_all(&(side as u32).to_le_bytes())?;
        w.write_all(&(res_mm as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * self.idf.len());
        for &v in &self.idf {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_idf<R: Read>(mut r: R) -> Result<Self, EnvError> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => EnvError::Truncated,
            _ => EnvError::Io(e),
        })?;
        if head[..4] != IDF_MAGIC {
            return Err(EnvError::BadMagic);
        }
        let side = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as f64;
        let res = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as f64 / 1000.0;
        let geom = Self::geometry(side, res)?;
        let count = geom.cells * geom.cells;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 4 * count {
            return Err(if body.len() < 4 * count {
                EnvError::Truncated
            } else {
                EnvError::GridSize {
                    expected: count,
                    actual: body.len() / 4,
                }
            });
        }
        let idf = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Self::new(side, res, idf)
    }
}
