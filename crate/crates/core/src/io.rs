//! Output files: trajectory CSVs and JSON documents.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim::TrajectoryPoint;

/// Header of every trajectory CSV.
pub const TRAJECTORY_HEADER: &str = "t,grad_norm_sq,loss,stepsize,clip_active";

/// 17 significant digits, enough to round-trip any `f64`; non-finite values
/// print as `inf`, `-inf` and `nan`.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Parses values written by [`fmt_float`].
pub fn parse_float(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        other => other.parse().ok(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryPoint]) -> Result<()> {
    let mut out = create(path)?;
    let io_err = |e| Error::io(path, e);
    writeln!(out, "{TRAJECTORY_HEADER}").map_err(io_err)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.t,
            fmt_float(r.grad_norm_sq),
            fmt_float(r.loss),
            fmt_float(r.stepsize),
            u8::from(r.clip_active)
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_HEADER) {
        return Err(Error::invalid(format!("{}: unexpected trajectory header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("{}: malformed row {}", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(TrajectoryPoint {
                t: f[0].parse().map_err(|_| bad())?,
                grad_norm_sq: parse_float(f[1]).ok_or_else(bad)?,
                loss: parse_float(f[2]).ok_or_else(bad)?,
                stepsize: parse_float(f[3]).ok_or_else(bad)?,
                clip_active: match f[4] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                },
            })
        })
        .collect()
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1.0, -2.5, 1e-300, 123456.789, std::f64::consts::PI, f64::MAX] {
            assert_eq!(parse_float(&fmt_float(x)), Some(x));
        }
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert!(parse_float("nan").unwrap().is_nan());
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/traj.csv");
        let rows = vec![
            TrajectoryPoint { t: 1, grad_norm_sq: 0.1, loss: 2.0, stepsize: 0.01, clip_active: true },
            TrajectoryPoint { t: 2, grad_norm_sq: f64::INFINITY, loss: f64::INFINITY, stepsize: 0.01, clip_active: false },
        ];
        write_trajectory_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,grad_norm_sq,loss,stepsize,clip_active\n"));
        assert_eq!(read_trajectory_csv(&path).unwrap(), rows);
    }
}

/// Serde adapter writing non-finite floats as the strings `"inf"`, `"-inf"`
/// and `"nan"` so they survive a JSON round trip.
pub mod ext_float {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&super::fmt_float(*x))
        }
    }

    struct ExtVisitor;

    impl Visitor<'_> for ExtVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "-inf" | "nan" => Ok(super::parse_float(v).unwrap()),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(ExtVisitor)
    }

    /// Same encoding for `Vec<f64>`.
    pub mod vec {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Ext(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(xs.iter().map(|x| Ext(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Ext>::deserialize(d)?.into_iter().map(|e| e.0).collect())
        }
    }
}

#[cfg(test)]
mod ext_float_tests {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Serialize, Deserialize)]
    struct Probe {
        #[serde(with = "super::ext_float")]
        x: f64,
        #[serde(with = "super::ext_float::vec")]
        xs: Vec<f64>,
    }

    #[test]
    fn non_finite_round_trip() {
        let p = Probe { x: f64::INFINITY, xs: vec![1.5, f64::NEG_INFINITY, 2.0] };
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"x":"inf","xs":[1.5,"-inf",2.0]}"#);
        let back: Probe = serde_json::from_str(&text).unwrap();
        assert_eq!(back.x, f64::INFINITY);
        assert_eq!(back.xs[1], f64::NEG_INFINITY);
        assert!(serde_json::from_str::<Probe>(r#"{"x":"big","xs":[]}"#).is_err());
    }
}
