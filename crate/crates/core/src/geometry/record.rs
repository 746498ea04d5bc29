//! Text records for transforms.
//!
//! Matrix form: four lines of four space-separated decimals (row-major
//! homogeneous matrix). Quaternion form: one line `qw qx qy qz tx ty tz`.
//! Values are written with the shortest representation that round-trips.

use super::{se3_from_quat_trans, ExtrinsicTransform, Mat4, UnitQuaternion, Vec3};
use crate::{Error, Result};

pub fn transform_to_matrix_record(t: &ExtrinsicTransform) -> String {
    let m = t.to_homogeneous();
    let mut out = String::new();
    for i in 0..4 {
        let row: Vec<String> = (0..4).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn transform_to_quat_record(t: &ExtrinsicTransform) -> String {
    let q = t.to_quaternion();
    let tr = t.translation();
    format!("{} {} {} {} {} {} {}\n", q.w, q.x, q.y, q.z, tr.x, tr.y, tr.z)
}

/// Parses either record form, chosen by the number of values (16 or 7).
pub fn parse_transform_record(text: &str) -> Result<ExtrinsicTransform> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
        .collect::<Result<_>>()?;
    match vals.len() {
        16 => ExtrinsicTransform::from_homogeneous(&Mat4::from_row_slice(&vals)),
        7 => se3_from_quat_trans(
            &UnitQuaternion::new(vals[0], vals[1], vals[2], vals[3]),
            &Vec3::new(vals[4], vals[5], vals[6]),
        ),
        n => Err(Error::Parse(format!("expected 16 or 7 values in transform record, got {n}"))),
    }
}
