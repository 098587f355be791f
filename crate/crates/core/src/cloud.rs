//! Point cloud container and text I/O.
//!
//! File format: one point per line, `x y z [f1 f2 ...]`, whitespace
//! separated. `#` starts a comment, blank lines are skipped, and all data
//! lines must carry the same number of fields.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::Counter;
use std::path::Path;

/// N points with 3D coordinates and optional extra per-point channels.
#[derive(Debug, Clone)]
pub struct PointCloud {
    coords: Mat,
    raw_features: Option<Mat>,
}

impl PointCloud {
    pub fn new(coords: Mat, raw_features: Option<Mat>) -> Result<Self> {
        if coords.rows() == 0 {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if coords.cols() != 3 {
            return Err(Error::invalid("coords must be N x 3"));
        }
        if !coords.is_finite() {
            return Err(Error::invalid("coordinates must be finite"));
        }
        if let Some(f) = &raw_features {
            if f.rows() != coords.rows() {
                return Err(Error::invalid(format!(
                    "raw feature rows {} != point count {}",
                    f.rows(),
                    coords.rows()
                )));
            }
        }
        Ok(PointCloud { coords, raw_features })
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    pub fn coords(&self) -> &Mat {
        &self.coords
    }

    pub fn raw_features(&self) -> Option<&Mat> {
        self.raw_features.as_ref()
    }

    /// Width of the model input feature: xyz plus any extra channels.
    pub fn input_channels(&self) -> usize {
        3 + self.raw_features.as_ref().map_or(0, |f| f.cols())
    }

    /// Model input rows: coordinates concatenated with raw features.
    pub fn input_features(&self) -> Mat {
        let n = self.len();
        let c = self.input_channels();
        let mut out = Mat::zeros(n, c);
        for i in 0..n {
            let row = out.row_mut(i);
            row[..3].copy_from_slice(self.coords.row(i));
            if let Some(f) = &self.raw_features {
                row[3..].copy_from_slice(f.row(i));
            }
        }
        out
    }

    /// Reorders points so that new row r is old row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        assert_eq!(perm.len(), self.len());
        let mut coords = Mat::zeros(self.len(), 3);
        for (r, &p) in perm.iter().enumerate() {
            coords.row_mut(r).copy_from_slice(self.coords.row(p));
        }
        let raw = self.raw_features.as_ref().map(|f| {
            let mut m = Mat::zeros(f.rows(), f.cols());
            for (r, &p) in perm.iter().enumerate() {
                m.row_mut(r).copy_from_slice(f.row(p));
            }
            m
        });
        PointCloud { coords, raw_features: raw }
    }
}

/// A cloud file on disk together with its parsed contents.
#[derive(Debug)]
pub struct CloudFile {
    pub path: std::path::PathBuf,
    pub cloud: PointCloud,
}

impl CloudFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let cloud = read_cloud(&path)?;
        Ok(CloudFile { path, cloud })
    }
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    parse_cloud(&text)
}

pub fn parse_cloud(text: &str) -> Result<PointCloud> {
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::CloudParse {
                line: lineno,
                msg: format!("expected >=3 fields, got {}", fields.len()),
            });
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::CloudParse {
                    line: lineno,
                    msg: format!("expected {} fields, got {}", w, fields.len()),
                });
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(fields.len());
        for (col, tok) in fields.iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::CloudParse {
                line: lineno,
                msg: format!("column {}: invalid number '{}'", col + 1, tok),
            })?;
            if !v.is_finite() {
                return Err(Error::CloudParse {
                    line: lineno,
                    msg: format!("column {}: non-finite value '{}'", col + 1, tok),
                });
            }
            values.push(v);
        }
        coords.push(values[..3].to_vec());
        if values.len() > 3 {
            features.push(values[3..].to_vec());
        }
    }
    if coords.is_empty() {
        return Err(Error::CloudParse {
            line: 0,
            msg: "no points in file".into(),
        });
    }
    let raw = if features.is_empty() {
        None
    } else {
        Some(Mat::from_rows(&features))
    };
    PointCloud::new(Mat::from_rows(&coords), raw)
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    for i in 0..cloud.len() {
        let c = cloud.coords().row(i);
        out.push_str(&format!("{} {} {}", c[0], c[1], c[2]));
        if let Some(f) = cloud.raw_features() {
            for v in f.row(i) {
                out.push_str(&format!(" {}", v));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Uniform random cloud in `[0, side)^3`, optionally with extra feature
/// channels in [0, 1). Deterministic in (n, seed).
pub fn synthetic_cloud(n: usize, seed: u64, side: f64, feature_channels: usize) -> PointCloud {
    assert!(n >= 1);
    let mut rng = Counter::new(seed, "synthetic-cloud");
    let mut coords = Mat::zeros(n, 3);
    for i in 0..n {
        for j in 0..3 {
            coords.set(i, j, rng.next_range(0.0, side));
        }
    }
    let raw = if feature_channels > 0 {
        let mut f = Mat::zeros(n, feature_channels);
        for i in 0..n {
            for j in 0..feature_channels {
                f.set(i, j, rng.next_unit());
            }
        }
        Some(f)
    } else {
        None
    };
    PointCloud::new(coords, raw).expect("synthetic cloud is valid")
}

/// Like [`synthetic_cloud`] but with coordinates snapped to a lattice, which
/// produces coincident points with high probability.
pub fn synthetic_cloud_quantized(n: usize, seed: u64, side: f64, step: f64) -> PointCloud {
    let base = synthetic_cloud(n, seed, side, 0);
    let mut coords = Mat::zeros(n, 3);
    for i in 0..n {
        for j in 0..3 {
            coords.set(i, j, (base.coords().get(i, j) / step).round() * step);
        }
    }
    PointCloud::new(coords, None).expect("quantized cloud is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bare_points() {
        let c = parse_cloud("0 0 0\n1 0 0\n").unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.raw_features().is_none());
        assert_eq!(c.input_channels(), 3);
    }

    #[test]
    fn parses_feature_column() {
        let c = parse_cloud("0 0 0 1.5\n1 0 0 2.5\n").unwrap();
        let f = c.raw_features().unwrap();
        assert_eq!(f.cols(), 1);
        assert_eq!(f.get(0, 0), 1.5);
        assert_eq!(f.get(1, 0), 2.5);
    }

    #[test]
    fn short_line_is_an_error() {
        let err = parse_cloud("0 0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains(">=3 fields"), "{msg}");
    }

    #[test]
    fn ragged_lines_are_an_error() {
        let err = parse_cloud("0 0 0 1\n0 0 0\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn bad_token_names_line_and_column() {
        let err = parse_cloud("0 0 zebra\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("column 3"), "{msg}");
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let c = parse_cloud("# header\n\n0 0 0 # trailing\n").unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_cloud(32, 7, 1.0, 2);
        let b = synthetic_cloud(32, 7, 1.0, 2);
        assert_eq!(a.coords().data(), b.coords().data());
        assert_eq!(
            a.raw_features().unwrap().data(),
            b.raw_features().unwrap().data()
        );
    }

    #[test]
    fn quantized_cloud_has_duplicates() {
        let c = synthetic_cloud_quantized(256, 3, 1.0, 0.25);
        let mut keys: Vec<[u64; 3]> = (0..c.len())
            .map(|i| {
                let r = c.coords().row(i);
                [r[0].to_bits(), r[1].to_bits(), r[2].to_bits()]
            })
            .collect();
        keys.sort_unstable();
        keys.dedup();
        assert!(keys.len() < 256);
    }
}
