//! Distance metrics between units.
//!
//! Every supported metric is a Euclidean distance after a linear map of the
//! covariates: the identity, a whitening transform `L^-1` where `S = L L'`
//! is the Mahalanobis scaling, or a projection onto one column. A
//! [`MetricSpace`] stores the mapped coordinates once so nearest-neighbor
//! search and objective evaluation share bit-identical distances.

use crate::error::{Error, Result};
use crate::sample::Sample;
use crate::scalar::Scalar;

/// Largest dimension for which a kd-tree is used instead of a linear scan.
pub const KD_TREE_MAX_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Metric<T> {
    Euclidean,
    Mahalanobis(Mahalanobis<T>),
    /// `|x_a - x_b|` on a single covariate column, e.g. an estimated propensity score.
    AbsDifference {
        column: usize,
    },
}

/// Mahalanobis scaling matrix together with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Mahalanobis<T> {
    dim: usize,
    scaling: Vec<T>,
    factor: Vec<T>,
}

impl<T: Scalar> Mahalanobis<T> {
    /// `scaling` is a row-major `dim x dim` symmetric positive definite matrix.
    pub fn new(scaling: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 || scaling.len() != dim * dim {
            return Err(Error::InvalidMetric(format!(
                "scaling matrix has {} entries, expected {}",
                scaling.len(),
                dim * dim
            )));
        }
        for i in 0..dim {
            for j in 0..i {
                if scaling[i * dim + j] != scaling[j * dim + i] {
                    return Err(Error::InvalidMetric("scaling matrix is not symmetric".into()));
                }
            }
        }
        let factor = cholesky(&scaling, dim)
            .ok_or_else(|| Error::InvalidMetric("scaling matrix is not positive definite".into()))?;
        Ok(Mahalanobis { dim, scaling, factor })
    }

    /// Scaling estimated as the sample covariance with the unbiased `n - 1` divisor.
    pub fn from_sample(sample: &Sample<T>) -> Result<Self> {
        let n = sample.len();
        if n < 2 {
            return Err(Error::InvalidMetric(
                "covariance estimation needs at least two units".into(),
            ));
        }
        Mahalanobis::new(covariance(sample), sample.dim())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scaling(&self) -> &[T] {
        &self.scaling
    }

    /// Solves `L y = x` in place.
    #[allow(clippy::needless_range_loop)]
    fn whiten(&self, x: &[T], out: &mut [T]) {
        let d = self.dim;
        for i in 0..d {
            let mut acc = x[i];
            for j in 0..i {
                acc = acc - self.factor[i * d + j] * out[j];
            }
            out[i] = acc / self.factor[i * d + i];
        }
    }
}

fn cholesky<T: Scalar>(a: &[T], d: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for p in 0..j {
                sum = sum - l[i * d + p] * l[j * d + p];
            }
            if i == j {
                if sum <= T::zero() || !sum.is_finite() {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Unbiased sample covariance, row-major `d x d`.
pub fn covariance<T: Scalar>(sample: &Sample<T>) -> Vec<T> {
    let (n, d) = (sample.len(), sample.dim());
    let nf = T::from_count(n);
    let mut mean = vec![T::zero(); d];
    for unit in 0..n {
        for (m, &x) in mean.iter_mut().zip(sample.row(unit)) {
            *m = *m + x;
        }
    }
    for m in &mut mean {
        *m = *m / nf;
    }
    let mut cov = vec![T::zero(); d * d];
    for unit in 0..n {
        let row = sample.row(unit);
        for i in 0..d {
            for j in 0..=i {
                cov[i * d + j] = cov[i * d + j] + (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    let denom = T::from_count(n.saturating_sub(1).max(1));
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    cov
}

impl<T: Scalar> Metric<T> {
    pub fn mahalanobis(scaling: Vec<T>, dim: usize) -> Result<Self> {
        Mahalanobis::new(scaling, dim).map(Metric::Mahalanobis)
    }

    pub fn mahalanobis_from_sample(sample: &Sample<T>) -> Result<Self> {
        Mahalanobis::from_sample(sample).map(Metric::Mahalanobis)
    }

    /// Dimension of the mapped space for covariates of dimension `dim`.
    pub fn embedded_dim(&self, dim: usize) -> usize {
        match self {
            Metric::AbsDifference { .. } => 1,
            _ => dim,
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            Metric::Euclidean => Ok(()),
            Metric::Mahalanobis(m) if m.dim == dim => Ok(()),
            Metric::Mahalanobis(m) => Err(Error::InvalidMetric(format!(
                "scaling is {0}x{0} but covariates have dimension {dim}",
                m.dim
            ))),
            Metric::AbsDifference { column } if *column < dim => Ok(()),
            Metric::AbsDifference { column } => Err(Error::InvalidMetric(format!(
                "column {column} out of range for dimension {dim}"
            ))),
        }
    }

    fn embed(&self, x: &[T], out: &mut [T]) {
        match self {
            Metric::Euclidean => out.copy_from_slice(x),
            Metric::Mahalanobis(m) => m.whiten(x, out),
            Metric::AbsDifference { column } => out[0] = x[*column],
        }
    }

    fn supports_tree(&self, dim: usize) -> bool {
        match self {
            Metric::AbsDifference { .. } => true,
            _ => dim <= KD_TREE_MAX_DIM,
        }
    }
}

/// Distance between units `a` and `b` of `sample`.
pub fn distance<T: Scalar>(metric: &Metric<T>, a: usize, b: usize, sample: &Sample<T>) -> Result<T> {
    sample.check_index(a)?;
    sample.check_index(b)?;
    metric.check(sample.dim())?;
    if a == b {
        return Ok(T::zero());
    }
    let d = metric.embedded_dim(sample.dim());
    let mut pa = vec![T::zero(); d];
    let mut pb = vec![T::zero(); d];
    metric.embed(sample.row(a), &mut pa);
    metric.embed(sample.row(b), &mut pb);
    Ok(squared_euclidean(&pa, &pb).sqrt())
}

#[inline]
pub(crate) fn squared_euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let diff = x - y;
        acc = acc + diff * diff;
    }
    acc
}

/// Mapped coordinates of every unit of a sample under a metric.
#[derive(Debug, Clone)]
pub struct MetricSpace<T> {
    coords: Vec<T>,
    dim: usize,
    tree: bool,
}

impl<T: Scalar> MetricSpace<T> {
    pub fn new(metric: &Metric<T>, sample: &Sample<T>) -> Result<Self> {
        metric.check(sample.dim())?;
        let dim = metric.embedded_dim(sample.dim());
        let mut coords = vec![T::zero(); sample.len() * dim];
        for (unit, out) in coords.chunks_mut(dim).enumerate() {
            metric.embed(sample.row(unit), out);
        }
        Ok(MetricSpace {
            coords,
            dim,
            tree: metric.supports_tree(sample.dim()),
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether exact search may use a kd-tree.
    pub fn supports_tree(&self) -> bool {
        self.tree
    }

    #[inline]
    pub fn point(&self, unit: usize) -> &[T] {
        &self.coords[unit * self.dim..(unit + 1) * self.dim]
    }

    /// Squared distance, used for ordering only.
    #[inline]
    pub fn dist_sq(&self, a: usize, b: usize) -> T {
        squared_euclidean(self.point(a), self.point(b))
    }

    #[inline]
    pub fn dist(&self, a: usize, b: usize) -> T {
        if a == b {
            T::zero()
        } else {
            self.dist_sq(a, b).sqrt()
        }
    }
}
