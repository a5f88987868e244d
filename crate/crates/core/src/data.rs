//! Dataset construction: the 5×5 Gaussian grid and IDX image files.

use std::io::Write;
use std::path::Path;

use crate::dists::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::numcore::rng::fill_standard_normal;
use crate::numcore::{seeded, Tensor2};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Isotropic Gaussian mixture with means on a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub grid_values: Vec<f64>,
    pub sigma: f64,
    pub samples_per_component: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            grid_values: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            sigma: 0.05,
            samples_per_component: 300,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_values.is_empty() {
            return Err(Error::InvalidArgument("grid must be non-empty".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.samples_per_component == 0 {
            return Err(Error::InvalidArgument("samples_per_component must be positive".into()));
        }
        Ok(())
    }

    /// Means on the Cartesian product, first coordinate varying slowest.
    pub fn means(&self) -> Tensor2 {
        let g = &self.grid_values;
        Tensor2::from_fn(g.len() * g.len(), 2, |k, c| {
            if c == 0 {
                g[k / g.len()]
            } else {
                g[k % g.len()]
            }
        })
        .expect("grid values are finite")
    }
}

#[derive(Debug, Clone)]
pub struct GridDataset {
    pub data: EmpiricalMeasure,
    pub means: Tensor2,
    /// Component of every sample.
    pub labels: Vec<usize>,
}

/// Samples are grouped by component, `samples_per_component` each.
pub fn make_grid25(spec: &GridSpec) -> Result<GridDataset> {
    spec.validate()?;
    let means = spec.means();
    let k = means.rows();
    let n = k * spec.samples_per_component;
    let mut rng = seeded(spec.seed);
    let mut pts = vec![0.0; 2 * n];
    fill_standard_normal(&mut rng, &mut pts);
    let mut labels = Vec::with_capacity(n);
    for (s, xy) in pts.chunks_exact_mut(2).enumerate() {
        let c = s / spec.samples_per_component;
        xy[0] = means.get(c, 0) + spec.sigma * xy[0];
        xy[1] = means.get(c, 1) + spec.sigma * xy[1];
        labels.push(c);
    }
    Ok(GridDataset {
        data: EmpiricalMeasure::from_rows(Tensor2::new(n, 2, pts)?)?,
        means,
        labels,
    })
}

/// Unsigned-byte image tensor from an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImageSet {
    pub fn new(count: usize, rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        let want = count
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or_else(|| Error::IdxOverflow(format!("{count}x{rows}x{cols}")))?;
        if pixels.len() != want {
            return Err(Error::shape(format!("{want} pixels"), pixels.len()));
        }
        Ok(Self {
            count,
            rows,
            cols,
            pixels,
        })
    }

    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, k: usize) -> &[u8] {
        let l = self.image_len();
        &self.pixels[k * l..(k + 1) * l]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        for d in [self.count, self.rows, self.cols] {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::IdxTruncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an image file held in memory, keeping at most `max_count` images.
pub fn parse_idx_images(bytes: &[u8], max_count: usize) -> Result<IdxImageSet> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::IdxMagic {
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let total = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| Error::IdxOverflow(format!("{count}x{rows}x{cols}")))?;
    if bytes.len() < total {
        return Err(Error::IdxTruncated {
            expected: total,
            found: bytes.len(),
        });
    }
    let keep = count.min(max_count);
    IdxImageSet::new(keep, rows, cols, bytes[16..16 + keep * rows * cols].to_vec())
}

pub fn read_idx_images(path: impl AsRef<Path>, max_count: usize) -> Result<IdxImageSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, max_count)
}

pub fn write_idx_images(path: impl AsRef<Path>, set: &IdxImageSet) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&set.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Parses a one-dimensional label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8], max_count: usize) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::IdxMagic {
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let total = count
        .checked_add(8)
        .ok_or_else(|| Error::IdxOverflow(format!("{count} labels")))?;
    if bytes.len() < total {
        return Err(Error::IdxTruncated {
            expected: total,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..8 + count.min(max_count)].to_vec())
}

pub fn read_idx_labels(path: impl AsRef<Path>, max_count: usize) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes, max_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinarizeMode {
    /// `1` where `pixel/255 > 0.5`, else `0`.
    Threshold,
    /// `pixel/255`.
    MeanScale,
}

/// One row per image, flattened row-major.
pub fn binarize(images: &IdxImageSet, mode: BinarizeMode) -> Result<EmpiricalMeasure> {
    let data = images
        .pixels
        .iter()
        .map(|&p| {
            let v = p as f64 / 255.0;
            match mode {
                BinarizeMode::Threshold => {
                    if v > 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                }
                BinarizeMode::MeanScale => v,
            }
        })
        .collect();
    EmpiricalMeasure::from_rows(Tensor2::new(images.count, images.image_len(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_7500_points() {
        let g = make_grid25(&GridSpec::default()).unwrap();
        assert_eq!(g.data.len(), 7500);
        assert_eq!(g.means.rows(), 25);
        assert_eq!(g.labels.len(), 7500);
        let mut seen: Vec<(i64, i64)> = g
            .means
            .row_iter()
            .map(|r| (r[0].round() as i64, r[1].round() as i64))
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 25);
    }

    #[test]
    fn tiny_sigma_collapses_to_means() {
        let spec = GridSpec {
            sigma: 1e-12,
            ..GridSpec::default()
        };
        let g = make_grid25(&spec).unwrap();
        for (k, x) in g.data.points().row_iter().enumerate() {
            let m = g.means.row(g.labels[k]);
            assert!((x[0] - m[0]).abs() < 1e-9 && (x[1] - m[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn per_component_std_near_sigma() {
        let g = make_grid25(&GridSpec::with_seed(4)).unwrap();
        for c in 0..25 {
            let mut ss = 0.0;
            let mut n = 0;
            for (k, x) in g.data.points().row_iter().enumerate() {
                if g.labels[k] == c {
                    let m = g.means.row(c);
                    ss += (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                    n += 2;
                }
            }
            let sd = (ss / n as f64).sqrt();
            assert!((sd - 0.05).abs() < 0.005, "component {c}: {sd}");
        }
    }

    #[test]
    fn grid_is_deterministic() {
        let a = make_grid25(&GridSpec::with_seed(9)).unwrap();
        let b = make_grid25(&GridSpec::with_seed(9)).unwrap();
        assert_eq!(a.data.points(), b.data.points());
        let c = make_grid25(&GridSpec::with_seed(10)).unwrap();
        assert_ne!(a.data.points(), c.data.points());
    }

    #[test]
    fn rejects_bad_spec() {
        let s = GridSpec {
            sigma: 0.0,
            ..GridSpec::default()
        };
        assert!(make_grid25(&s).is_err());
        let mut s = GridSpec::default();
        s.grid_values.clear();
        assert!(make_grid25(&s).is_err());
    }

    fn handmade() -> Vec<u8> {
        // two 2x2 images
        vec![
            0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0, 128,
            255, 7, 1, 2, 3, 4,
        ]
    }

    #[test]
    fn parses_handmade_file() {
        let s = parse_idx_images(&handmade(), usize::MAX).unwrap();
        assert_eq!((s.count, s.rows, s.cols), (2, 2, 2));
        assert_eq!(s.pixels, vec![0, 128, 255, 7, 1, 2, 3, 4]);
        assert_eq!(s.image(1), &[1, 2, 3, 4]);
        let one = parse_idx_images(&handmade(), 1).unwrap();
        assert_eq!(one.pixels, vec![0, 128, 255, 7]);
    }

    #[test]
    fn distinct_errors() {
        let mut bad = handmade();
        bad[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&bad, 10),
            Err(Error::IdxMagic { found: 0x801, .. })
        ));
        let short = &handmade()[..20];
        assert!(matches!(parse_idx_images(short, 10), Err(Error::IdxTruncated { .. })));
        assert!(matches!(
            parse_idx_images(&handmade()[..6], 10),
            Err(Error::IdxTruncated { .. })
        ));
        let mut huge = handmade();
        huge[4..16].copy_from_slice(&[0xff; 12]);
        let r = parse_idx_images(&huge, 10);
        if usize::BITS == 64 {
            // 2^32-1 cubed overflows 64 bits
            assert!(matches!(r, Err(Error::IdxOverflow(_))));
        } else {
            assert!(r.is_err());
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = parse_idx_images(&handmade(), usize::MAX).unwrap();
        assert_eq!(s.to_bytes(), handmade());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.idx");
        write_idx_images(&p, &s).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), handmade());
        assert_eq!(read_idx_images(&p, 99).unwrap(), s);
    }

    #[test]
    fn labels_parse() {
        let b = [0, 0, 8, 1, 0, 0, 0, 3, 5, 0, 9];
        assert_eq!(parse_idx_labels(&b, 10).unwrap(), vec![5, 0, 9]);
        assert!(parse_idx_labels(&b[..10], 10).is_err());
    }

    #[test]
    fn binarize_modes() {
        let s = parse_idx_images(&handmade(), usize::MAX).unwrap();
        let t = binarize(&s, BinarizeMode::Threshold).unwrap();
        assert_eq!(t.point(0), &[0.0, 1.0, 1.0, 0.0]);
        let m = binarize(&s, BinarizeMode::MeanScale).unwrap();
        assert!((m.point(0)[1] - 128.0 / 255.0).abs() < 1e-15);
        assert!((m.point(0)[1] - 0.50196).abs() < 1e-5);
        assert_eq!(m.point(0)[2], 1.0);
        let zero = IdxImageSet::new(1, 2, 2, vec![0; 4]).unwrap();
        assert_eq!(binarize(&zero, BinarizeMode::Threshold).unwrap().point(0), &[0.0; 4]);
    }
}
