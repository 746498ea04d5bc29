//! Float-grid container for density and feature maps.
//!
//! A file is one ASCII header line followed by row-major little-endian
//! `f32` values:
//!
//! - density: `n_range n_azimuth r_max az_min_deg az_max_deg`
//! - feature map: `channels C H W`
//!
//! [`write_pgm`] writes an 8-bit preview of a single raster.

use std::io::{BufRead, Write};

use ndarray::{Array2, Array3};

use crate::radar_density::{GridSpec, RAGrid};
use crate::{Error, Result};

fn write_values<'a>(w: &mut impl Write, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_values(r: &mut impl BufRead, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 4 * n];
    r.read_exact(&mut buf)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Parse(format!("{} trailing bytes after grid data", rest.len())));
    }
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

fn header(r: &mut impl BufRead) -> Result<Vec<String>> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(Error::Parse("missing grid header".into()));
    }
    Ok(line.split_whitespace().map(str::to_owned).collect())
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad header field {s:?}")))
}

pub fn write_density_grid(w: &mut impl Write, grid: &RAGrid) -> Result<()> {
    let s = &grid.spec;
    writeln!(
        w,
        "{} {} {} {} {}",
        s.n_range,
        s.n_azimuth,
        s.r_max,
        s.az_min.to_degrees(),
        s.az_max.to_degrees()
    )?;
    write_values(w, grid.values.iter())
}

pub fn read_density_grid(r: &mut impl BufRead) -> Result<RAGrid> {
    let h = header(r)?;
    if h.len() != 5 {
        return Err(Error::Parse(format!("density header needs 5 fields, got {}", h.len())));
    }
    let spec = GridSpec {
        n_range: num(&h[0])?,
        n_azimuth: num(&h[1])?,
        r_max: num(&h[2])?,
        az_min: num::<f64>(&h[3])?.to_radians(),
        az_max: num::<f64>(&h[4])?.to_radians(),
    };
    spec.validate()?;
    let values = read_values(r, spec.n_range * spec.n_azimuth)?;
    let values = Array2::from_shape_vec(spec.shape(), values).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(RAGrid { spec, values })
}

/// `(channel, row, column)` layout.
pub fn write_feature_map(w: &mut impl Write, map: &Array3<f64>) -> Result<()> {
    let (c, h, wd) = map.dim();
    writeln!(w, "channels {c} {h} {wd}")?;
    write_values(w, map.iter())
}

pub fn read_feature_map(r: &mut impl BufRead) -> Result<Array3<f64>> {
    let h = header(r)?;
    if h.len() != 4 || h[0] != "channels" {
        return Err(Error::Parse("feature-map header must be `channels C H W`".into()));
    }
    let dims: (usize, usize, usize) = (num(&h[1])?, num(&h[2])?, num(&h[3])?);
    let values = read_values(r, dims.0 * dims.1 * dims.2)?;
    Array3::from_shape_vec(dims, values).map_err(|e| Error::Parse(e.to_string()))
}

/// Binary PGM, linearly mapped from `[min, max]` to `[0, 255]`.
pub fn write_pgm(w: &mut impl Write, raster: &Array2<f64>) -> Result<()> {
    let (h, wd) = raster.dim();
    let lo = raster.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raster.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    write!(w, "P5\n{wd} {h}\n255\n")?;
    let bytes: Vec<u8> = raster.iter().map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_roundtrip() {
        let spec = GridSpec { n_range: 4, n_azimuth: 3, r_max: 50.0, az_min: -0.5, az_max: 0.5 };
        let mut g = RAGrid::zeros(spec);
        g.values[(1, 2)] = 0.25;
        g.values[(3, 0)] = 1.0;
        let mut buf = Vec::new();
        write_density_grid(&mut buf, &g).unwrap();
        let back = read_density_grid(&mut buf.as_slice()).unwrap();
        assert_eq!(back.values, g.values);
        assert_eq!((back.spec.n_range, back.spec.n_azimuth, back.spec.r_max), (4, 3, 50.0));
        assert!((back.spec.az_min - spec.az_min).abs() < 1e-15);
    }

    #[test]
    fn feature_roundtrip_and_truncation() {
        let m = Array3::from_shape_fn((2, 3, 4), |(c, y, x)| (c * 100 + y * 10 + x) as f64);
        let mut buf = Vec::new();
        write_feature_map(&mut buf, &m).unwrap();
        assert!(buf.starts_with(b"channels 2 3 4\n"));
        assert_eq!(read_feature_map(&mut buf.as_slice()).unwrap(), m);
        buf.pop();
        assert!(read_feature_map(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn pgm_scaling() {
        let r = Array2::from_shape_vec((1, 3), vec![-1.0, 0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, &r).unwrap();
        assert_eq!(&buf[buf.len() - 3..], &[0, 128, 255]);
    }
}
