use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use super::IoError;
use crate::geometry::{Intrinsics, Pose};
use crate::pipeline::BatchConfig;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryFormat {
    /// Twelve numbers per line: the row-major 3×4 matrix `[R | t]`.
    Kitti,
    /// `timestamp tx ty tz qx qy qz qw`.
    Tum,
}

impl FromStr for TrajectoryFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "kitti" => Ok(Self::Kitti),
            "tum" => Ok(Self::Tum),
            other => Err(format!("unknown trajectory format '{other}' (kitti or tum)")),
        }
    }
}

/// Numbers are printed in shortest round-trip form. KITTI files carry no
/// frame index; TUM timestamps are the frame indices.
pub fn format_trajectory(traj: &Trajectory, format: TrajectoryFormat) -> String {
    let mut out = String::new();
    for (frame, pose) in traj.entries() {
        let (r, t) = (&pose.rotation, &pose.translation);
        match format {
            TrajectoryFormat::Kitti => {
                let v = [
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    t.x,
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    t.y,
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                    t.z,
                ];
                let line: Vec<String> = v.iter().map(|x| format!("{}", x + 0.0)).collect();
                out.push_str(&line.join(" "));
            }
            TrajectoryFormat::Tum => {
                let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(r));
                let _ = write!(out, "{frame} {} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, format: TrajectoryFormat) -> Result<(), IoError> {
    fs::write(path, format_trajectory(traj, format))?;
    Ok(())
}

fn numbers(line: &str, lineno: usize) -> Result<Vec<f64>, IoError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| IoError::Parse {
                line: lineno,
                message: format!("not a number: '{tok}'"),
            })
        })
        .collect()
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_trajectory(text: &str, format: TrajectoryFormat) -> Result<Trajectory, IoError> {
    let mut entries = Vec::new();
    for (order, (lineno, line)) in data_lines(text).enumerate() {
        let v = numbers(line, lineno)?;
        let bad = |m: &str| IoError::Parse {
            line: lineno,
            message: m.to_string(),
        };
        let (frame, pose) = match format {
            TrajectoryFormat::Kitti => {
                if v.len() != 12 {
                    return Err(bad("expected 12 numbers"));
                }
                let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
                (order, Pose::new(r, Vector3::new(v[3], v[7], v[11])))
            }
            TrajectoryFormat::Tum => {
                if v.len() != 8 {
                    return Err(bad("expected 8 numbers"));
                }
                let q = Quaternion::new(v[7], v[4], v[5], v[6]);
                if !(q.norm() > 0.0) {
                    return Err(bad("zero quaternion"));
                }
                let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
                // Integral timestamps are frame indices; others keep file order.
                let ts = v[0];
                let frame = if ts >= 0.0 && ts.fract() == 0.0 { ts as usize } else { order };
                (frame, Pose::new(r, Vector3::new(v[1], v[2], v[3])))
            }
        };
        if !pose.is_finite() {
            return Err(bad("non-finite pose"));
        }
        entries.push((frame, pose));
    }
    Trajectory::new(entries).map_err(|e| IoError::Parse {
        line: 0,
        message: e.to_string(),
    })
}

pub fn read_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory, IoError> {
    parse_trajectory(&fs::read_to_string(path)?, format)
}

/// `(flow magnitude, end-point error)` pairs, one per line.
pub fn read_residual_samples(path: &Path) -> Result<Vec<(f64, f64)>, IoError> {
    let text = fs::read_to_string(path)?;
    data_lines(&text)
        .map(|(lineno, line)| {
            let v = numbers(line, lineno)?;
            match v.as_slice() {
                [m, e] if m.is_finite() && e.is_finite() && *m >= 0.0 && *e >= 0.0 => Ok((*m, *e)),
                _ => Err(IoError::Parse {
                    line: lineno,
                    message: "expected two non-negative numbers".into(),
                }),
            }
        })
        .collect()
}

pub fn write_residual_samples(path: &Path, samples: &[(f64, f64)]) -> Result<(), IoError> {
    let mut out = String::with_capacity(samples.len() * 24);
    for (m, e) in samples {
        let _ = writeln!(out, "{m} {e}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Intrinsics from a KITTI `calib.txt` (the `P0:` projection matrix, or the
/// first `P<n>:` line) or from a bare line `fx fy cx cy`.
pub fn parse_calibration(text: &str) -> Result<Intrinsics, IoError> {
    let lines: Vec<(usize, &str)> = data_lines(text).collect();
    let projection = lines
        .iter()
        .find(|(_, l)| l.starts_with("P0:"))
        .or_else(|| lines.iter().find(|(_, l)| l.starts_with('P') && l.contains(':')));
    let k = match projection {
        Some((lineno, line)) => {
            let rest = line.split_once(':').map(|(_, r)| r).unwrap_or("");
            let v = numbers(rest, *lineno)?;
            if v.len() != 12 {
                return Err(IoError::Parse {
                    line: *lineno,
                    message: "projection matrix needs 12 numbers".into(),
                });
            }
            Intrinsics::new(v[0], v[5], v[2], v[6])
        }
        None => {
            let (lineno, line) = lines.first().ok_or(IoError::Parse {
                line: 1,
                message: "empty calibration".into(),
            })?;
            let v = numbers(line, *lineno)?;
            if v.len() != 4 {
                return Err(IoError::Parse {
                    line: *lineno,
                    message: "expected fx fy cx cy".into(),
                });
            }
            Intrinsics::new(v[0], v[1], v[2], v[3])
        }
    };
    k.map_err(|e| IoError::Format(e.to_string()))
}

pub fn read_calibration(path: &Path) -> Result<Intrinsics, IoError> {
    parse_calibration(&fs::read_to_string(path)?)
}

/// TOML configuration; missing keys keep their defaults.
pub fn read_config(path: &Path) -> Result<BatchConfig, IoError> {
    let text = fs::read_to_string(path)?;
    let config: BatchConfig = toml::from_str(&text).map_err(|e| IoError::Format(e.to_string()))?;
    config.validate().map_err(|e| IoError::Format(e.to_string()))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Twist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_trajectory(n: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses = (0..n)
            .map(|_| {
                let rho = Vector3::from_fn(|_, _| rng.random_range(-50.0..50.0));
                let phi = Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5));
                Twist::new(rho, phi).exp()
            })
            .collect();
        Trajectory::from_poses(poses)
    }

    #[test]
    fn identity_kitti_line() {
        let t = Trajectory::from_poses(vec![Pose::identity()]);
        assert_eq!(format_trajectory(&t, TrajectoryFormat::Kitti), "1 0 0 0 0 1 0 0 0 0 1 0\n");
    }

    #[test]
    fn round_trip_both_formats() {
        let traj = random_trajectory(100, 4);
        for format in [TrajectoryFormat::Kitti, TrajectoryFormat::Tum] {
            let back = parse_trajectory(&format_trajectory(&traj, format), format).unwrap();
            assert_eq!(back.len(), 100);
            for ((fa, a), (fb, b)) in traj.entries().iter().zip(back.entries()) {
                assert_eq!(fa, fb);
                let (dr, dt) = a.distance(b);
                assert!(dr < 1e-6 && dt < 1e-6, "{format:?}: {dr} {dt}");
            }
        }
    }

    #[test]
    fn tum_quaternions_are_unit() {
        let text = format_trajectory(&random_trajectory(20, 5), TrajectoryFormat::Tum);
        for line in text.lines() {
            let v: Vec<f64> = line.split(' ').map(|t| t.parse().unwrap()).collect();
            let n = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_lines_report_position() {
        let r = parse_trajectory("1 0 0 0 0 1 0 0 0 0 1 0\n1 2 3\n", TrajectoryFormat::Kitti);
        assert!(matches!(r, Err(IoError::Parse { line: 2, .. })), "{r:?}");
        let r = parse_trajectory("0 0 0 0 0 0 0 x\n", TrajectoryFormat::Tum);
        assert!(matches!(r, Err(IoError::Parse { line: 1, .. })));
    }

    #[test]
    fn calibration_formats() {
        let kitti = "P0: 718.856 0 607.1928 0 0 718.856 185.2157 0 0 0 1 0\nP1: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let k = parse_calibration(kitti).unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (718.856, 718.856, 607.1928, 185.2157));
        let k = parse_calibration("# camera\n200 210 128 96\n").unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (200.0, 210.0, 128.0, 96.0));
        assert!(parse_calibration("1 2\n").is_err());
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "gamma = 0.8\n[residual]\nlambda = 0.2\n[pose.kernel]\nrotation = [0.01, 0.01, 0.01]\n").unwrap();
        let c = read_config(&path).unwrap();
        assert_eq!(c.gamma, 0.8);
        assert_eq!(c.residual.lambda, 0.2);
        assert_eq!(c.residual.a1, 0.01);
        assert_eq!(c.pose.kernel.rotation, [0.01; 3]);
        assert_eq!(c.pose.kernel.translation, [0.1; 3]);
        assert_eq!(c.window_size, 6);
        fs::write(&path, "gamma = 2.0\n").unwrap();
        assert!(read_config(&path).is_err());
    }

    #[test]
    fn residual_samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let s = vec![(1.5, 0.25), (30.0, 1e-3)];
        write_residual_samples(&path, &s).unwrap();
        assert_eq!(read_residual_samples(&path).unwrap(), s);
    }
}
