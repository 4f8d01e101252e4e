//! Least squares problems `y = X beta* + eta` and their split into equal mini-batches.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{Mat, SymmetricMatrix, Vector};
use crate::rng::{stream_rng, substream_rng, Stream};

/// How the true coefficient vector is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaSpec {
    /// Uniform on the unit sphere in `R^p`.
    UnitSphere,
    /// A fixed vector of length `p`.
    Fixed(Vec<f64>),
    /// I.i.d. standard Gaussian entries.
    Gaussian,
}

/// Data `(X, y, beta*, eta)` together with the population covariance `Sigma`,
/// the noise level and the initialization `beta_0` of the iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    x: Mat,
    y: Vector,
    beta_star: Vector,
    eta: Vector,
    sigma: SymmetricMatrix,
    sigma2: f64,
    beta0: Vector,
    seed: u64,
}

impl RegressionProblem {
    /// Assembles a problem from its parts; `y` is computed as `X beta* + eta` and
    /// `beta_0` starts at zero.
    pub fn from_parts(
        x: Mat,
        beta_star: Vector,
        eta: Vector,
        sigma: SymmetricMatrix,
        sigma2: f64,
        seed: u64,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput("n and p must be positive".into()));
        }
        if beta_star.len() != p || eta.len() != n || sigma.dim() != p {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: X is {n}x{p}, beta* has {}, eta has {}, Sigma is {}",
                beta_star.len(),
                eta.len(),
                sigma.dim()
            )));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidInput(format!("sigma2 must be finite and >= 0, got {sigma2}")));
        }
        if !sigma.is_psd(1e-10) {
            return Err(Error::InvalidInput("Sigma is not positive semidefinite".into()));
        }
        if x.iter().chain(beta_star.iter()).chain(eta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite data".into()));
        }
        let y = &x * &beta_star + &eta;
        Ok(RegressionProblem {
            x,
            y,
            beta_star,
            eta,
            sigma,
            sigma2,
            beta0: Vector::zeros(p),
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn x(&self) -> &Mat {
        &self.x
    }
    pub fn y(&self) -> &Vector {
        &self.y
    }
    pub fn beta_star(&self) -> &Vector {
        &self.beta_star
    }
    pub fn eta(&self) -> &Vector {
        &self.eta
    }
    pub fn sigma(&self) -> &SymmetricMatrix {
        &self.sigma
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn beta0(&self) -> &Vector {
        &self.beta0
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Initial error `beta_0 - beta*`.
    pub fn initial_error(&self) -> Vector {
        &self.beta0 - &self.beta_star
    }

    /// Sample covariance `W = X^T X / n`.
    pub fn sample_covariance(&self) -> SymmetricMatrix {
        SymmetricMatrix::symmetrize(self.x.transpose() * &self.x / self.n() as f64)
    }

    pub fn with_beta0(mut self, beta0: Vector) -> Result<Self> {
        if beta0.len() != self.p() {
            return Err(Error::InvalidInput("beta0 has the wrong length".into()));
        }
        self.beta0 = beta0;
        Ok(self)
    }

    /// Same design and coefficients with a different noise vector (`y` is rebuilt).
    pub fn with_noise(&self, eta: Vector) -> Result<Self> {
        if eta.len() != self.n() {
            return Err(Error::InvalidInput("eta has the wrong length".into()));
        }
        let mut out = self.clone();
        out.y = &out.x * &out.beta_star + &eta;
        out.eta = eta;
        Ok(out)
    }

    /// Fresh noise `eta ~ N(0, sigma2 I)` from the `index`-th noise substream of the
    /// problem's seed; index 0 is the draw made at generation time.
    pub fn with_resampled_noise(&self, index: u64) -> Result<Self> {
        let mut rng = substream_rng(self.seed, Stream::Noise, index);
        let sd = self.sigma2.sqrt();
        let eta = Vector::from_fn(self.n(), |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        self.with_noise(eta)
    }

    /// Same data, different population covariance (used for risk evaluation only).
    pub fn with_sigma(mut self, sigma: SymmetricMatrix) -> Result<Self> {
        if sigma.dim() != self.p() || !sigma.is_psd(1e-10) {
            return Err(Error::InvalidInput("Sigma must be p x p and PSD".into()));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Applies an orthogonal change of basis `Q` to the parameter space: `X -> X Q`,
    /// `Sigma -> Q^T Sigma Q`, `beta* -> Q^T beta*`, `beta_0 -> Q^T beta_0`.
    pub fn rotated(&self, q: &Mat) -> Result<Self> {
        if q.shape() != (self.p(), self.p()) {
            return Err(Error::InvalidInput("rotation must be p x p".into()));
        }
        let qt = q.transpose();
        let mut out = RegressionProblem::from_parts(
            &self.x * q,
            &qt * &self.beta_star,
            self.eta.clone(),
            SymmetricMatrix::symmetrize(&qt * self.sigma.as_mat() * q),
            self.sigma2,
            self.seed,
        )?;
        out.beta0 = &qt * &self.beta0;
        Ok(out)
    }

    /// Serializes into the binary container (little endian):
    /// magic `RRLSPROB`, `u32` version, `u64` n, `u64` p, then `X` row-major, `y`,
    /// `beta*`, `eta`, `Sigma` row-major, `beta_0` (all `f64`), `sigma2: f64`, `seed: u64`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let (n, p) = (self.n(), self.p());
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(p as u64).to_le_bytes())?;
        let mut put = |v: f64| w.write_all(&v.to_le_bytes());
        for i in 0..n {
            for j in 0..p {
                put(self.x[(i, j)])?;
            }
        }
        for v in self.y.iter().chain(self.beta_star.iter()).chain(self.eta.iter()) {
            put(*v)?;
        }
        for i in 0..p {
            for j in 0..p {
                put(self.sigma.as_mat()[(i, j)])?;
            }
        }
        for v in self.beta0.iter() {
            put(*v)?;
        }
        put(self.sigma2)?;
        w.write_all(&self.seed.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidInput("not a problem container (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!("unsupported container version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n = next_u64(&mut r)? as usize;
        let p = next_u64(&mut r)? as usize;
        let read_vec = |r: &mut dyn Read, len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            let mut b = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut b)?;
                out.push(f64::from_le_bytes(b));
            }
            Ok(out)
        };
        let x = Mat::from_row_slice(n, p, &read_vec(&mut r, n * p)?);
        let y = Vector::from_vec(read_vec(&mut r, n)?);
        let beta_star = Vector::from_vec(read_vec(&mut r, p)?);
        let eta = Vector::from_vec(read_vec(&mut r, n)?);
        let sigma = Mat::from_row_slice(p, p, &read_vec(&mut r, p * p)?);
        let beta0 = Vector::from_vec(read_vec(&mut r, p)?);
        let sigma2 = read_vec(&mut r, 1)?[0];
        let seed = next_u64(&mut r)?;
        let problem = RegressionProblem::from_parts(
            x,
            beta_star,
            eta,
            SymmetricMatrix::try_from_matrix(sigma, 0.0)?,
            sigma2,
            seed,
        )?
        .with_beta0(beta0)?;
        if problem.y != y {
            return Err(Error::InvalidInput("stored y differs from X beta* + eta".into()));
        }
        Ok(problem)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

const MAGIC: &[u8; 8] = b"RRLSPROB";
const FORMAT_VERSION: u32 = 1;

/// Draws `n` i.i.d. rows `x_i = Sigma^{1/2} z_i` with standard Gaussian `z_i`, noise
/// `eta_i ~ N(0, sigma2)` and `beta*` per `beta_spec`. `sigma = None` means `I`.
///
/// Features, noise and coefficients come from independent streams of `seed`, so for
/// example changing `sigma2` leaves `X` and `beta*` untouched.
pub fn generate_gaussian(
    n: usize,
    p: usize,
    sigma: Option<&SymmetricMatrix>,
    sigma2: f64,
    beta_spec: &BetaSpec,
    seed: u64,
) -> Result<RegressionProblem> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("n and p must be at least 1".into()));
    }
    let sigma = match sigma {
        Some(s) => {
            if s.dim() != p {
                return Err(Error::InvalidInput("Sigma must be p x p".into()));
            }
            if !s.is_psd(1e-10) {
                return Err(Error::InvalidInput("Sigma is not positive semidefinite".into()));
            }
            s.clone()
        }
        None => SymmetricMatrix::identity(p),
    };

    let mut frng = stream_rng(seed, Stream::Features);
    let mut z = Mat::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = frng.sample(StandardNormal);
        }
    }
    let is_identity = sigma.as_mat() == &Mat::identity(p, p);
    let x = if is_identity { z } else { z * sigma.sqrt_psd() };

    let mut nrng = stream_rng(seed, Stream::Noise);
    let sd = sigma2.sqrt();
    let eta = if sigma2 == 0.0 {
        Vector::zeros(n)
    } else {
        Vector::from_fn(n, |_, _| sd * nrng.sample::<f64, _>(StandardNormal))
    };

    let mut brng = stream_rng(seed, Stream::Coefficients);
    let beta_star = match beta_spec {
        BetaSpec::Fixed(v) => {
            if v.len() != p {
                return Err(Error::InvalidInput("fixed beta* has the wrong length".into()));
            }
            Vector::from_column_slice(v)
        }
        BetaSpec::Gaussian => Vector::from_fn(p, |_, _| brng.sample(StandardNormal)),
        BetaSpec::UnitSphere => {
            let g = Vector::from_fn(p, |_, _| brng.sample::<f64, _>(StandardNormal));
            let norm = g.norm();
            if norm == 0.0 {
                let mut e = Vector::zeros(p);
                e[0] = 1.0;
                e
            } else {
                g / norm
            }
        }
    };

    RegressionProblem::from_parts(x, beta_star, eta, sigma, sigma2, seed)
}

/// One mini-batch: a contiguous block of rows and its covariance `W_b = (B/n) X_b^T X_b`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: Range<usize>,
    pub x: Mat,
    pub y: Vector,
    pub eta: Vector,
    pub w: SymmetricMatrix,
}

/// Ordered split of the rows into `B` contiguous equal blocks.
#[derive(Debug, Clone)]
pub struct BatchPartition {
    n: usize,
    p: usize,
    batches: Vec<Batch>,
}

/// Splits the rows of `problem` into `b_count` contiguous batches of equal size.
pub fn partition(problem: &RegressionProblem, b_count: usize) -> Result<BatchPartition> {
    let (n, p) = (problem.n(), problem.p());
    if b_count == 0 || n % b_count != 0 {
        return Err(Error::InvalidInput(format!(
            "batch count {b_count} must be positive and divide n = {n}"
        )));
    }
    let m = n / b_count;
    let scale = b_count as f64 / n as f64;
    let batches = (0..b_count)
        .map(|b| {
            let rows = b * m..(b + 1) * m;
            let x = problem.x().rows(rows.start, m).into_owned();
            let w = SymmetricMatrix::symmetrize(x.transpose() * &x * scale);
            Batch {
                y: problem.y().rows(rows.start, m).into_owned(),
                eta: problem.eta().rows(rows.start, m).into_owned(),
                rows,
                x,
                w,
            }
        })
        .collect();
    Ok(BatchPartition { n, p, batches })
}

impl BatchPartition {
    pub fn b_count(&self) -> usize {
        self.batches.len()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn batch_size(&self) -> usize {
        self.n / self.b_count()
    }
    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }
    pub fn batch(&self, b: usize) -> &Batch {
        &self.batches[b]
    }

    /// `(1/B) sum_b W_b`, which equals `X^T X / n`.
    pub fn mean_covariance(&self) -> Mat {
        let mut acc = Mat::zeros(self.p, self.p);
        for b in &self.batches {
            acc += b.w.as_mat();
        }
        acc / self.b_count() as f64
    }

    /// Stacks the batches back into `(X, y)`.
    pub fn reassemble(&self) -> (Mat, Vector) {
        let mut x = Mat::zeros(self.n, self.p);
        let mut y = Vector::zeros(self.n);
        for b in &self.batches {
            x.rows_mut(b.rows.start, b.rows.len()).copy_from(&b.x);
            y.rows_mut(b.rows.start, b.rows.len()).copy_from(&b.y);
        }
        (x, y)
    }
}

/// Collection of per-batch covariances that can right-multiply a matrix.
///
/// Partitions implement the product through the batch rows,
/// `A W_j = (B/n) (A X_j^T) X_j`, which is cheaper than a dense `p x p` product
/// whenever the batch size is below `p / 2`.
pub trait Covariances: Sync {
    fn count(&self) -> usize;
    fn dim(&self) -> usize;
    fn covariance(&self, j: usize) -> &Mat;
    fn right_mul(&self, a: &Mat, j: usize) -> Mat {
        a * self.covariance(j)
    }
}

impl Covariances for [Mat] {
    fn count(&self) -> usize {
        self.len()
    }
    fn dim(&self) -> usize {
        self.first().map_or(0, |m| m.nrows())
    }
    fn covariance(&self, j: usize) -> &Mat {
        &self[j]
    }
}

impl Covariances for Vec<Mat> {
    fn count(&self) -> usize {
        self.len()
    }
    fn dim(&self) -> usize {
        self.first().map_or(0, |m| m.nrows())
    }
    fn covariance(&self, j: usize) -> &Mat {
        &self[j]
    }
}

impl Covariances for BatchPartition {
    fn count(&self) -> usize {
        self.b_count()
    }
    fn dim(&self) -> usize {
        self.p
    }
    fn covariance(&self, j: usize) -> &Mat {
        self.batches[j].w.as_mat()
    }
    fn right_mul(&self, a: &Mat, j: usize) -> Mat {
        let m = self.batch_size();
        if 2 * m < self.p {
            let xj = &self.batches[j].x;
            (a * xj.transpose()) * xj * (self.b_count() as f64 / self.n as f64)
        } else {
            a * self.batches[j].w.as_mat()
        }
    }
}

/// Conditional risk `(beta - beta*)^T Sigma (beta - beta*)`.
pub fn generalization_risk(beta: &Vector, problem: &RegressionProblem) -> Result<f64> {
    if beta.len() != problem.p() {
        return Err(Error::InvalidInput("beta has the wrong length".into()));
    }
    let e = beta - problem.beta_star();
    Ok(e.dot(&(problem.sigma().as_mat() * &e)))
}
