//! Latent priors and empirical data measures.
//!
//! | Type | Role |
//! |------|------|
//! | [`GaussianPrior`] | diagonal Gaussian `p(z)` |
//! | [`CategoricalPrior`] | `Cat(K; p)` over category indices |
//! | [`AtomPrior`] | categorical prior whose categories carry latent coordinates |
//! | [`EmpiricalMeasure`] | weighted point cloud, usually `(1/m) Σ δ_{x_i}` |
//!
//! Samplers never own randomness: every draw takes a caller-supplied
//! generator.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::rng::{fill_standard_normal, open_unit};
use crate::numcore::Tensor2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != std.len() {
            return Err(Error::shape(
                format!("mean and std of equal non-zero length ({})", mean.len()),
                std.len(),
            ));
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian prior needs finite mean and positive std, got std {std:?}"
            )));
        }
        Ok(Self { mean, std })
    }

    /// `N(0, I_dim)`.
    pub fn standard(dim: usize) -> Self {
        assert!(dim > 0, "latent dimension must be positive");
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor2> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let d = self.dim();
        let mut data = vec![0.0; n * d];
        fill_standard_normal(rng, &mut data);
        for row in data.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = m + s * *v;
            }
        }
        Tensor2::new(n, d, data)
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::shape(format!("latent of dimension {}", self.dim()), z.len()));
        }
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| {
                let t = (z - m) / s;
                -0.5 * t * t - s.ln() - 0.5 * LN_2PI
            })
            .sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPrior {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl CategoricalPrior {
    /// Normalizes `probs`; rejects negative entries or a zero total.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument(
                "categorical prior needs at least one category".into(),
            ));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "category probabilities must be >= 0, got {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("category probabilities sum to zero".into()));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { probs, cdf })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen::<f64>() * self.cdf[self.cdf.len() - 1];
        let k = self.cdf.partition_point(|&c| c <= u);
        // skip zero-probability categories that share a cdf value
        k.min(self.k() - 1)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.sample_index(rng)).collect()
    }

    /// Samples as an `n x 1` tensor of category indices.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor2> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let data = self.sample_indices(n, rng).into_iter().map(|k| k as f64).collect();
        Tensor2::new(n, 1, data)
    }

    pub fn log_prob(&self, k: usize) -> Result<f64> {
        self.probs
            .get(k)
            .map(|p| p.ln())
            .ok_or_else(|| Error::InvalidArgument(format!("category {k} out of range 0..{}", self.k())))
    }
}

/// Either supported prior.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Gaussian(GaussianPrior),
    Categorical(CategoricalPrior),
}

impl Prior {
    /// Dimension of one sample row (1 for categorical indices).
    pub fn dim(&self) -> usize {
        match self {
            Prior::Gaussian(g) => g.dim(),
            Prior::Categorical(_) => 1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor2> {
        match self {
            Prior::Gaussian(g) => g.sample(n, rng),
            Prior::Categorical(c) => c.sample(n, rng),
        }
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        match self {
            Prior::Gaussian(g) => g.log_density(z),
            Prior::Categorical(c) => {
                if z.len() != 1 || z[0] < 0.0 || z[0].fract() != 0.0 {
                    return Err(Error::shape("a single category index", format!("{z:?}")));
                }
                c.log_prob(z[0] as usize)
            }
        }
    }
}

/// Latent codes fed to a decoder, with the base-measure weight of each row.
///
/// Monte Carlo batches carry uniform weights `1/n`; an enumerated discrete
/// prior carries its category probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Tensor2,
    pub weights: Vec<f64>,
    /// Category of each row when the codes come from an [`AtomPrior`].
    pub atom_ids: Option<Vec<usize>>,
}

impl LatentBatch {
    pub fn uniform(z: Tensor2) -> Self {
        let n = z.rows();
        Self {
            z,
            weights: vec![1.0 / n as f64; n],
            atom_ids: None,
        }
    }

    pub fn weighted(z: Tensor2, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != z.rows() {
            return Err(Error::shape(format!("{} latent weights", z.rows()), weights.len()));
        }
        Ok(Self {
            z,
            weights: normalized_weights(&weights)?,
            atom_ids: None,
        })
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }
}

/// Anything that can produce latent codes for a decoder.
pub trait LatentSampler {
    fn latent_dim(&self) -> usize;

    /// `n` i.i.d. codes with uniform weights.
    fn sample_codes(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<LatentBatch>;

    /// The whole support with exact probabilities, for finite priors.
    fn enumerate(&self) -> Option<LatentBatch> {
        None
    }

    /// Mean of the prior in code space.
    fn code_mean(&self) -> Vec<f64>;
}

impl LatentSampler for GaussianPrior {
    fn latent_dim(&self) -> usize {
        self.dim()
    }

    fn sample_codes(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<LatentBatch> {
        Ok(LatentBatch::uniform(self.sample(n, rng)?))
    }

    fn code_mean(&self) -> Vec<f64> {
        self.mean.clone()
    }
}

/// Categorical prior whose category `k` is decoded from the coordinate row
/// `atoms[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomPrior {
    pub prior: CategoricalPrior,
    pub atoms: Tensor2,
}

impl AtomPrior {
    pub fn new(prior: CategoricalPrior, atoms: Tensor2) -> Result<Self> {
        if atoms.rows() != prior.k() {
            return Err(Error::shape(format!("{} atom rows", prior.k()), atoms.rows()));
        }
        Ok(Self { prior, atoms })
    }
}

impl LatentSampler for AtomPrior {
    fn latent_dim(&self) -> usize {
        self.atoms.cols()
    }

    fn sample_codes(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<LatentBatch> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let ids = self.prior.sample_indices(n, rng);
        let mut batch = LatentBatch::uniform(self.atoms.select_rows(&ids));
        batch.atom_ids = Some(ids);
        Ok(batch)
    }

    fn enumerate(&self) -> Option<LatentBatch> {
        Some(LatentBatch {
            z: self.atoms.clone(),
            weights: self.prior.probs().to_vec(),
            atom_ids: Some((0..self.prior.k()).collect()),
        })
    }

    fn code_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.atoms.cols()];
        for (row, p) in self.atoms.row_iter().zip(self.prior.probs()) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += p * v;
            }
        }
        mean
    }
}

fn normalized_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Weighted point cloud `Σ_i w_i δ_{x_i}` with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Tensor2,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Uniform weights `1/m`.
    pub fn from_rows(points: Tensor2) -> Result<Self> {
        let m = points.rows();
        if m == 0 || points.cols() == 0 {
            return Err(Error::InvalidArgument(
                "empirical measure needs at least one point".into(),
            ));
        }
        Ok(Self {
            points,
            weights: vec![1.0 / m as f64; m],
        })
    }

    /// Renormalizes `weights`; negative weights are rejected.
    pub fn with_weights(points: Tensor2, weights: Vec<f64>) -> Result<Self> {
        if points.rows() == 0 || points.cols() == 0 {
            return Err(Error::InvalidArgument(
                "empirical measure needs at least one point".into(),
            ));
        }
        if weights.len() != points.rows() {
            return Err(Error::shape(format!("{} weights", points.rows()), weights.len()));
        }
        Ok(Self {
            points,
            weights: normalized_weights(&weights)?,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor2 {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| *w == w0)
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.is_uniform() {
            return rng.gen_range(0..self.len());
        }
        let u = open_unit(rng);
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.len() - 1
    }

    /// Sub-measure on the given rows, renormalized.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let w: Vec<f64> = idx.iter().map(|&i| self.weights[i]).collect();
        Self::with_weights(self.points.select_rows(idx), w)
    }

    /// Reads one point per row. A header row is optional; when its last
    /// column is named `weight`, that column holds point weights.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut weight_col = false;
        for (lineno, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if lineno == 0 && rec.iter().any(|f| f.parse::<f64>().is_err()) {
                weight_col = rec.iter().next_back() == Some("weight");
                continue;
            }
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        message: format!("bad float {f:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument("CSV holds no data rows".into()));
        }
        if weight_col {
            let weights: Vec<f64> = rows.iter_mut().map(|r| r.pop().unwrap_or(f64::NAN)).collect();
            Self::with_weights(Tensor2::from_rows(&rows)?, weights)
        } else {
            Self::from_rows(Tensor2::from_rows(&rows)?)
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, include_weights: bool) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(file, include_weights)
    }

    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W, include_weights: bool) -> Result<()> {
        write_points_csv(writer, &self.points, include_weights.then_some(&self.weights[..]))
    }
}

/// Writes a header `x0,..,x{d-1}[,weight]` and one row per point.
pub fn write_points_csv<W: std::io::Write>(writer: W, points: &Tensor2, weights: Option<&[f64]>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..points.cols()).map(|j| format!("x{j}")).collect();
    if weights.is_some() {
        header.push("weight".into());
    }
    wtr.write_record(&header)?;
    for (i, row) in points.row_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(w) = weights {
            rec.push(w[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::seeded;

    #[test]
    fn gaussian_sample_mean() {
        let p = GaussianPrior::standard(2);
        let s = p.sample(10_000, &mut seeded(4)).unwrap();
        for j in 0..2 {
            let m: f64 = (0..s.rows()).map(|i| s.get(i, j)).sum::<f64>() / s.rows() as f64;
            assert!(m.abs() < 0.05, "{m}");
        }
    }

    #[test]
    fn categorical_point_mass() {
        let c = CategoricalPrior::new(vec![1.0, 0.0, 0.0]).unwrap();
        let s = c.sample_indices(500, &mut seeded(1));
        assert!(s.iter().all(|&k| k == 0));
        let c = CategoricalPrior::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert!(c.sample_indices(500, &mut seeded(1)).iter().all(|&k| k == 2));
    }

    #[test]
    fn sampling_is_seeded() {
        let p = Prior::Gaussian(GaussianPrior::standard(3));
        assert_eq!(
            p.sample(5, &mut seeded(8)).unwrap(),
            p.sample(5, &mut seeded(8)).unwrap()
        );
        let c = Prior::Categorical(CategoricalPrior::uniform(4).unwrap());
        assert_eq!(
            c.sample(9, &mut seeded(8)).unwrap(),
            c.sample(9, &mut seeded(8)).unwrap()
        );
        assert!(p.sample(0, &mut seeded(0)).is_err());
    }

    #[test]
    fn gaussian_log_density_values() {
        let p1 = GaussianPrior::standard(1);
        assert!((p1.log_density(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let p2 = GaussianPrior::standard(2);
        assert!((p2.log_density(&[0.0, 0.0]).unwrap() + 1.837_877_066_409_345_5).abs() < 1e-12);
        assert!(p2.log_density(&[0.0]).is_err());
    }

    #[test]
    fn categorical_log_prob() {
        let c = Prior::Categorical(CategoricalPrior::new(vec![0.2, 0.3, 0.5]).unwrap());
        assert!((c.log_density(&[1.0]).unwrap() - 0.3f64.ln()).abs() < 1e-15);
        assert!(c.log_density(&[3.0]).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // Monte Carlo over a box wide enough to hold all but ~1e-6 of the mass
        let mut rng = seeded(2);
        for dim in [1usize, 2] {
            let p = GaussianPrior::new(vec![0.3; dim], vec![0.8; dim]).unwrap();
            let (lo, hi) = (-5.0f64, 5.0);
            let vol = (hi - lo).powi(dim as i32);
            let n = 200_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let z: Vec<f64> = (0..dim).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
                acc += p.log_density(&z).unwrap().exp();
            }
            let integral = vol * acc / n as f64;
            assert!((integral - 1.0).abs() < 0.02, "dim {dim}: {integral}");
        }
    }

    #[test]
    fn empirical_weights() {
        let m = EmpiricalMeasure::from_rows(Tensor2::zeros(4, 2)).unwrap();
        assert_eq!(m.weights(), &[0.25; 4]);
        let one = EmpiricalMeasure::from_rows(Tensor2::zeros(1, 3)).unwrap();
        assert_eq!(one.weights(), &[1.0]);
        assert!(EmpiricalMeasure::from_rows(Tensor2::zeros(0, 2)).is_err());
        let w = EmpiricalMeasure::with_weights(Tensor2::zeros(2, 1), vec![1.0, 3.0]).unwrap();
        assert_eq!(w.weights(), &[0.25, 0.75]);
        assert!(EmpiricalMeasure::with_weights(Tensor2::zeros(2, 1), vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn csv_round_trip_with_weights() {
        let pts = Tensor2::from_rows(&[[0.1, -2.5], [1.0 / 3.0, 7.0], [1e-17, 0.0]]).unwrap();
        let m = EmpiricalMeasure::with_weights(pts, vec![0.2, 0.3, 0.5]).unwrap();
        let mut buf = Vec::new();
        m.to_csv_writer(&mut buf, true).unwrap();
        let back = EmpiricalMeasure::from_csv_reader(&buf[..]).unwrap();
        assert_eq!(back, m);
        let mut buf = Vec::new();
        m.to_csv_writer(&mut buf, false).unwrap();
        let back = EmpiricalMeasure::from_csv_reader(&buf[..]).unwrap();
        assert_eq!(back.points(), m.points());
        assert!(back.is_uniform());
    }

    #[test]
    fn headerless_csv() {
        let back = EmpiricalMeasure::from_csv_reader(&b"1,2\n3,4\n"[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.point(1), &[3.0, 4.0]);
    }

    #[test]
    fn atom_prior_enumerates() {
        let atoms = Tensor2::from_rows(&[[0.0, 1.0], [2.0, 3.0]]).unwrap();
        let ap = AtomPrior::new(CategoricalPrior::new(vec![0.25, 0.75]).unwrap(), atoms).unwrap();
        let all = ap.enumerate().unwrap();
        assert_eq!(all.weights, vec![0.25, 0.75]);
        assert_eq!(ap.code_mean(), vec![1.5, 2.5]);
        let s = ap.sample_codes(6, &mut seeded(0)).unwrap();
        for (row, id) in s.z.row_iter().zip(s.atom_ids.as_ref().unwrap()) {
            assert_eq!(row, ap.atoms.row(*id));
        }
    }
}
