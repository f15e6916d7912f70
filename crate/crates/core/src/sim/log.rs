//! On-disk sensor log: one CSV per stream, PNG images, PFM pseudo-depth, a
//! TOML manifest and the ground truth as a TUM trajectory.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rosette::RosetteSpec;
use super::scene::SceneSpec;
use super::sensors::{NoiseSpec, SensorLog, SensorRates};
use crate::error::{Error, Result};
use crate::eval::tum;
use crate::geometry::{PinholeCamera, RigidPose};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub camera: PinholeCamera,
    pub rates: SensorRates,
    pub noise: NoiseSpec,
    pub scene: SceneSpec,
    pub rosette: RosetteSpec,
    /// `tx ty tz qx qy qz qw` of the landmark in the world frame.
    pub landmark: [f64; 7],
    pub frames: usize,
}

fn write_vectors(path: &Path, header: [&str; 4], rows: &[(f64, Vector3<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (t, v) in rows {
        w.write_record([t.to_string(), v.x.to_string(), v.y.to_string(), v.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // Header is line 1.
        let line = i + 2;
        if record.len() != width {
            return Err(Error::parse(path, line, format!("expected {width} columns, found {}", record.len())));
        }
        let row = record
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::parse(path, line, format!("bad number '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(prev) = rows.last().map(|r: &Vec<f64>| r[0]) {
            if !(row[0] > prev) {
                return Err(Error::parse(path, line, "timestamps must be strictly increasing"));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_vectors(path: &Path) -> Result<Vec<(f64, Vector3<f64>)>> {
    Ok(read_rows(path, 4)?.into_iter().map(|r| (r[0], Vector3::new(r[1], r[2], r[3]))).collect())
}

fn frame_name(i: usize) -> String {
    format!("{i:06}")
}

pub fn write_log(dir: impl AsRef<Path>, log: &SensorLog, manifest: &Manifest) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("depth"))?;
    fs::write(dir.join("manifest.toml"), toml::to_string(manifest).map_err(|e| Error::Config(e.to_string()))?)?;
    write_vectors(&dir.join("gyro.csv"), ["timestamp", "wx", "wy", "wz"], &log.gyro)?;
    write_vectors(&dir.join("accel.csv"), ["timestamp", "ax", "ay", "az"], &log.accel)?;
    write_vectors(&dir.join("dvl.csv"), ["timestamp", "vx", "vy", "vz"], &log.dvl)?;

    let mut w = csv::Writer::from_path(dir.join("pressure.csv"))?;
    w.write_record(["timestamp", "depth"])?;
    for (t, d) in &log.pressure_depth {
        w.write_record([t.to_string(), d.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("landmark.csv"))?;
    w.write_record(["timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"])?;
    for (t, z) in &log.landmark_obs {
        let mut rec = vec![t.to_string()];
        rec.extend(z.to_array7().iter().map(|v| v.to_string()));
        w.write_record(rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("images.csv"))?;
    w.write_record(["timestamp", "image", "depth"])?;
    for (i, (t, img)) in log.images.iter().enumerate() {
        let name = frame_name(i);
        img.save_png(dir.join("images").join(format!("{name}.png")))?;
        let depth = format!("depth/{name}.pfm");
        if let Some(d) = log.depth_maps.get(i) {
            d.save_pfm(dir.join(&depth))?;
        }
        w.write_record([t.to_string(), format!("images/{name}.png"), depth])?;
    }
    w.flush()?;

    tum::write_tum(dir.join("groundtruth.tum"), &log.ground_truth)?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let text = fs::read_to_string(dir.as_ref().join("manifest.toml"))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))
}

pub fn read_log(dir: impl AsRef<Path>) -> Result<(SensorLog, Manifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let landmark = RigidPose::from_array7(&manifest.landmark)?;
    let mut log = SensorLog {
        camera: manifest.camera,
        landmark,
        gyro: read_vectors(&dir.join("gyro.csv"))?,
        accel: read_vectors(&dir.join("accel.csv"))?,
        dvl: read_vectors(&dir.join("dvl.csv"))?,
        ..SensorLog::default()
    };
    log.pressure_depth = read_rows(&dir.join("pressure.csv"), 2)?.into_iter().map(|r| (r[0], r[1])).collect();
    for r in read_rows(&dir.join("landmark.csv"), 8)? {
        let pose = RigidPose::from_array7(&[r[1], r[2], r[3], r[4], r[5], r[6], r[7]])?;
        log.landmark_obs.push((r[0], pose));
    }

    let index = dir.join("images.csv");
    let mut reader = csv::Reader::from_path(&index)?;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != 3 {
            return Err(Error::parse(&index, line, "expected timestamp,image,depth"));
        }
        let t: f64 = record[0].parse().map_err(|_| Error::parse(&index, line, "bad timestamp"))?;
        let img = Image::load_png(dir.join(&record[1]))?;
        if img.width != manifest.camera.width || img.height != manifest.camera.height {
            return Err(Error::ShapeMismatch(format!("{} does not match the camera", &record[1])));
        }
        log.images.push((t, img));
        let depth_path = dir.join(&record[2]);
        if depth_path.exists() {
            log.depth_maps.push(Image::load_pfm(depth_path)?);
        }
    }
    let gt = dir.join("groundtruth.tum");
    if gt.exists() {
        log.ground_truth = tum::read_tum(gt)?;
    }
    Ok((log, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{Gaussian3D, SplatMap};
    use crate::sim::rosette::Rosette;
    use crate::sim::sensors::synthesize_sensors;

    #[test]
    fn log_round_trip() {
        let scene = SplatMap::from_gaussians(vec![Gaussian3D::new(Vector3::new(0.0, 0.0, -10.0), 1.5, 0.9, Vector3::new(0.5, 0.4, 0.3))]);
        let rosette = RosetteSpec { speed: 4.0, petal_count: 2, ..RosetteSpec::default() };
        let cam = PinholeCamera::new(8.0, 8.0, 4.0, 3.0, 8, 6).unwrap();
        let noise = NoiseSpec { rng_seed: 2, ..NoiseSpec::default() };
        let landmark = RigidPose::from_translation(Vector3::new(0.0, 0.0, -10.0));
        let log = synthesize_sensors(&Rosette::new(rosette).unwrap(), &scene, &cam, &landmark, &noise, &SensorRates::default()).unwrap();
        let manifest = Manifest {
            camera: cam,
            rates: SensorRates::default(),
            noise,
            scene: SceneSpec::default(),
            rosette,
            landmark: landmark.to_array7(),
            frames: log.images.len(),
        };
        let dir = tempfile::tempdir().unwrap();
        write_log(dir.path(), &log, &manifest).unwrap();
        let (back, m) = read_log(dir.path()).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back.gyro, log.gyro);
        assert_eq!(back.dvl, log.dvl);
        assert_eq!(back.pressure_depth, log.pressure_depth);
        assert_eq!(back.images.len(), log.images.len());
        assert_eq!(back.landmark_obs.len(), log.landmark_obs.len());
        for ((_, a), (_, b)) in back.landmark_obs.iter().zip(&log.landmark_obs) {
            let (angle, dist) = a.distance_to(b);
            assert!(angle < 1e-12 && dist < 1e-12);
        }
        for (a, b) in back.depth_maps.iter().zip(&log.depth_maps) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-6 * y.abs());
            }
        }
    }

    #[test]
    fn non_increasing_timestamps_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gyro.csv");
        fs::write(&path, "timestamp,wx,wy,wz\n0,0,0,0\n0.01,0,0,0\n0.01,0,0,0\n").unwrap();
        match read_vectors(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
