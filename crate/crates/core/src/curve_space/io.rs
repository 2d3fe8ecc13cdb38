use std::io::{Read, Write};
use std::sync::Arc;

use super::{ForwardCurve, Grid};
use crate::error::{Error, Result};

/// Reads `x,rate` rows and resamples them onto `grid`.
pub fn read_curve_csv<R: Read>(reader: R, grid: Arc<Grid>) -> Result<ForwardCurve> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "x" || &headers[1] != "rate" {
        return Err(Error::InvalidCurve(format!(
            "expected header \"x,rate\", found \"{}\"",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::InvalidCurve("short row".into()))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidCurve(format!("bad number: {e}")))
        };
        points.push((parse(0)?, parse(1)?));
    }
    resample_points(&points, grid)
}

/// Linear interpolation of `(x, rate)` samples onto the grid, flat outside
/// the sampled range.
pub fn resample_points(points: &[(f64, f64)], grid: Arc<Grid>) -> Result<ForwardCurve> {
    if points.is_empty() {
        return Err(Error::InvalidCurve("curve has no points".into()));
    }
    if points.iter().any(|(x, r)| !x.is_finite() || !r.is_finite() || *x < 0.0) {
        return Err(Error::InvalidCurve("points must be finite with x ≥ 0".into()));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidCurve("x values must be strictly increasing".into()));
    }
    let eval = |x: f64| -> f64 {
        let first = points[0];
        let last = points[points.len() - 1];
        if x <= first.0 {
            return first.1;
        }
        if x >= last.0 {
            return last.1;
        }
        let i = points.partition_point(|p| p.0 <= x);
        let (x0, r0) = points[i - 1];
        let (x1, r1) = points[i];
        r0 + (r1 - r0) * (x - x0) / (x1 - x0)
    };
    ForwardCurve::from_fn(grid, eval)
}

pub fn write_curve_csv<W: Write>(curve: &ForwardCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "rate"])?;
    for (x, r) in curve.grid().nodes().iter().zip(curve.values()) {
        w.write_record([format!("{x}"), format!("{r}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_on_grid() {
        let grid = Arc::new(Grid::new(4.0, 11.0, 64));
        let h = ForwardCurve::from_fn(grid.clone(), |x| 0.02 + 0.01 * (-x).exp()).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&h, &mut buf).unwrap();
        let back = read_curve_csv(buf.as_slice(), grid).unwrap();
        assert!(back.sub(&h).sup_abs() < 1e-15);
    }

    #[test]
    fn bad_header_is_rejected() {
        let grid = Arc::new(Grid::new(4.0, 11.0, 64));
        let r = read_curve_csv("t,r\n0,0.1\n".as_bytes(), grid);
        assert!(matches!(r, Err(Error::InvalidCurve(_))));
    }

    #[test]
    fn sparse_points_are_interpolated_and_extended() {
        let grid = Arc::new(Grid::new(4.0, 11.0, 111));
        let h = resample_points(&[(1.0, 0.01), (3.0, 0.03)], grid).unwrap();
        assert_eq!(h.at(0.0), 0.01);
        assert!((h.at(2.0) - 0.02).abs() < 1e-12);
        assert_eq!(h.at(10.0), 0.03);
    }
}
