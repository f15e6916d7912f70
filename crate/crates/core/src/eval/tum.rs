//! TUM trajectory text format: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RigidPose;

pub fn format_tum(traj: &[(f64, RigidPose)]) -> String {
    let mut out = String::new();
    for (t, pose) in traj {
        let _ = write!(out, "{t:?}");
        for v in pose.to_array7() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_tum(text: &str, path: &Path) -> Result<Vec<(f64, RigidPose)>> {
    let mut traj = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| Error::parse(path, line_no, format!("bad number '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 8 {
            return Err(Error::parse(path, line_no, format!("expected 8 fields, found {}", values.len())));
        }
        let pose = RigidPose::from_array7(&[values[1], values[2], values[3], values[4], values[5], values[6], values[7]])
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        traj.push((values[0], pose));
    }
    Ok(traj)
}

pub fn write_tum(path: impl AsRef<Path>, traj: &[(f64, RigidPose)]) -> Result<()> {
    fs::write(path, format_tum(traj))?;
    Ok(())
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Vec<(f64, RigidPose)>> {
    let path = path.as_ref();
    parse_tum(&fs::read_to_string(path)?, path)
}
