//! Coverage rasters.
//!
//! Binary output is a flat array of little-endian `f64`, row-major, with row
//! 0 at the northern edge (GeoTIFF order). The sidecar `.hdr` file holds
//! `key = value` lines describing the grid.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::model::{ModelState, Parallelism};

pub const NODATA: f64 = -9999.0;

/// Rectangular grid of cell centers at height `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// South-west corner.
    pub min_x: f64,
    pub min_y: f64,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub z: f64,
}

impl GridSpec {
    /// Smallest grid of `cell_size` cells covering the extent.
    pub fn from_extent(min_x: f64, min_y: f64, max_x: f64, max_y: f64, cell_size: f64, z: f64) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
        }
        if !(max_x > min_x && max_y > min_y) || ![min_x, min_y, max_x, max_y, z].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("extent must have positive width and height"));
        }
        let cells = |span: f64| ((span / cell_size) - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            min_x,
            min_y,
            cell_size,
            width: cells(max_x - min_x),
            height: cells(max_y - min_y),
            z,
        })
    }

    /// Center of the cell in column `col`, `row` counted from the north.
    pub fn cell_center(&self, col: usize, row: usize) -> Point3 {
        Point3::new(
            self.min_x + (col as f64 + 0.5) * self.cell_size,
            self.min_y + ((self.height - 1 - row) as f64 + 0.5) * self.cell_size,
            self.z,
        )
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterField {
    /// Full model output at each cell.
    Prediction,
    /// `ΔPL` with its spatial mean removed.
    OffsetOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRaster {
    pub grid: GridSpec,
    pub tx: Point3,
    pub frequency_hz: f64,
    pub field: RasterField,
    /// Spatial mean subtracted from an offset-only field.
    pub removed_mean_db: f64,
    /// Row-major, north row first.
    pub values: Vec<f64>,
}

impl CoverageRaster {
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.grid.width + col]
    }
}

/// Evaluates `model` from `tx` to every cell center. The cell containing the
/// transmitter is handled by the minimum-distance clamp.
pub fn coverage_grid(
    model: &ModelState,
    tx: Point3,
    grid: GridSpec,
    field: RasterField,
    mode: Parallelism,
) -> Result<CoverageRaster> {
    tx.ensure_finite("tx")?;
    if grid.is_empty() || grid.cell_size.is_nan() || grid.cell_size <= 0.0 {
        return Err(Error::invalid("raster must have at least one cell of positive size"));
    }
    let prepared = model.prepare();
    let row = |r: usize| -> Vec<f64> {
        (0..grid.width)
            .map(|c| {
                let rx = grid.cell_center(c, r);
                match field {
                    RasterField::Prediction => prepared.output(tx, rx),
                    RasterField::OffsetOnly => prepared.delta_path_loss(tx, rx),
                }
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = match mode {
        Parallelism::Sequential => (0..grid.height).map(row).collect(),
        Parallelism::Parallel => (0..grid.height).into_par_iter().map(row).collect(),
    };
    let mut values: Vec<f64> = rows.into_iter().flatten().collect();
    let mut removed_mean_db = 0.0;
    if field == RasterField::OffsetOnly {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if !finite.is_empty() {
            removed_mean_db = finite.iter().sum::<f64>() / finite.len() as f64;
            for v in values.iter_mut().filter(|v| v.is_finite()) {
                *v -= removed_mean_db;
            }
        }
    }
    Ok(CoverageRaster {
        grid,
        tx,
        frequency_hz: model.frequency_hz,
        field,
        removed_mean_db,
        values,
    })
}

fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// Writes `path` (binary) and `path.hdr` (text header).
pub fn write_raster_binary(raster: &CoverageRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(raster.values.len() * 8);
    for v in &raster.values {
        let v = if v.is_finite() { *v } else { NODATA };
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let g = &raster.grid;
    let header = format!(
        "format = f64le\n\
         layout = row_major_north_up\n\
         width = {}\nheight = {}\n\
         west = {}\nnorth = {}\n\
         cell_size = {}\nz = {}\n\
         nodata = {}\n\
         field = {}\nremoved_mean_db = {}\n\
         tx = {} {} {}\nfrequency_hz = {}\n",
        g.width,
        g.height,
        g.min_x,
        g.min_y + g.height as f64 * g.cell_size,
        g.cell_size,
        g.z,
        NODATA,
        match raster.field {
            RasterField::Prediction => "prediction",
            RasterField::OffsetOnly => "offset_only",
        },
        raster.removed_mean_db,
        raster.tx.x,
        raster.tx.y,
        raster.tx.z,
        raster.frequency_hz,
    );
    let hdr = header_path(path);
    fs::write(&hdr, header).map_err(|e| Error::io(&hdr, e))
}

/// Reads back the values and grid written by [`write_raster_binary`].
pub fn read_raster_binary(path: impl AsRef<Path>) -> Result<(GridSpec, Vec<f64>)> {
    let path = path.as_ref();
    let hdr = header_path(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let get = |key: &str| -> Result<f64> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .and_then(|(_, v)| v.trim().parse().ok())
            .ok_or_else(|| Error::invalid(format!("{}: missing or bad `{key}`", hdr.display())))
    };
    let (width, height, cell) = (get("width")? as usize, get("height")? as usize, get("cell_size")?);
    let grid = GridSpec {
        min_x: get("west")?,
        min_y: get("north")? - height as f64 * cell,
        cell_size: cell,
        width,
        height,
        z: get("z")?,
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != grid.len() * 8 {
        return Err(Error::DimensionMismatch {
            expected: grid.len() * 8,
            actual: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((grid, values))
}

/// `x,y,value_db` per cell center.
pub fn write_raster_csv(raster: &CoverageRaster, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "x,y,value_db")?;
    for row in 0..raster.grid.height {
        for col in 0..raster.grid.width {
            let c = raster.grid.cell_center(col, row);
            writeln!(out, "{},{},{}", c.x, c.y, raster.get(col, row))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{LogScale3, UnitQuaternion};
    use crate::model::{GaussianPrimitive, LinkQuery};

    fn model() -> ModelState {
        ModelState::new(1.8e9, 2.2).unwrap()
    }

    #[test]
    fn extent_rounds_up() {
        let g = GridSpec::from_extent(0.0, 0.0, 10.0, 4.5, 1.0, 1.5).unwrap();
        assert_eq!((g.width, g.height), (10, 5));
        assert_eq!(g.cell_center(0, 4), Point3::new(0.5, 0.5, 1.5));
        assert_eq!(g.cell_center(9, 0), Point3::new(9.5, 4.5, 1.5));
        assert!(GridSpec::from_extent(0.0, 0.0, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn single_cell_equals_predict() {
        let m = model();
        let g = GridSpec::from_extent(100.0, 100.0, 110.0, 110.0, 10.0, 1.5).unwrap();
        let tx = Point3::new(0.0, 0.0, 17.0);
        let r = coverage_grid(&m, tx, g, RasterField::Prediction, Parallelism::Sequential).unwrap();
        let p = crate::model::predict(&m, &LinkQuery::new(tx, Point3::new(105.0, 105.0, 1.5), 1.8e9).unwrap()).unwrap();
        assert_eq!(r.values, vec![p]);
    }

    #[test]
    fn zero_offset_raster_is_radially_symmetric() {
        let g = GridSpec::from_extent(-50.0, -50.0, 50.0, 50.0, 2.0, 1.5).unwrap();
        let tx = Point3::new(0.0, 0.0, 1.5);
        let r = coverage_grid(&model(), tx, g, RasterField::Prediction, Parallelism::Parallel).unwrap();
        assert!(r.values.iter().all(|v| v.is_finite()));
        // Mirror cells are equidistant from the Tx at the grid center.
        for row in 0..g.height {
            for col in 0..g.width {
                let a = r.get(col, row);
                assert!((a - r.get(g.width - 1 - col, row)).abs() < 1e-9);
                assert!((a - r.get(col, g.height - 1 - row)).abs() < 1e-9);
                assert!((a - r.get(row, col)).abs() < 1e-9);
            }
        }
        // Monotone along a ray away from the Tx.
        let mid = g.height / 2;
        for col in g.width / 2..g.width - 1 {
            assert!(r.get(col + 1, mid) > r.get(col, mid));
        }
    }

    #[test]
    fn offset_only_has_zero_mean() {
        let m = model().with_gaussians(vec![GaussianPrimitive {
            mu: Point3::new(30.0, 10.0, 1.0),
            log_scale: LogScale3::from_scales([20.0, 5.0, 5.0]).unwrap(),
            rotation: UnitQuaternion::IDENTITY,
            offset_db: 12.0,
        }]);
        let g = GridSpec::from_extent(0.0, -40.0, 80.0, 40.0, 1.0, 1.5).unwrap();
        let r = coverage_grid(&m, Point3::new(0.0, 0.0, 5.0), g, RasterField::OffsetOnly, Parallelism::Parallel).unwrap();
        let mean = r.values.iter().sum::<f64>() / r.values.len() as f64;
        assert!(mean.abs() < 1e-9, "{mean}");
        assert!(r.removed_mean_db > 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let g = GridSpec::from_extent(0.0, 0.0, 30.0, 20.0, 5.0, 1.0).unwrap();
        let r = coverage_grid(&model(), Point3::new(3.0, 3.0, 1.0), g, RasterField::Prediction, Parallelism::Sequential).unwrap();
        let dir = std::env::temp_dir().join(format!("pspl-raster-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cov.bin");
        write_raster_binary(&r, &path).unwrap();
        let (g2, v) = read_raster_binary(&path).unwrap();
        assert_eq!(g2, g);
        assert_eq!(v, r.values);
        let mut csv = Vec::new();
        write_raster_csv(&r, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + g.len());
        fs::remove_dir_all(&dir).ok();
    }
}
