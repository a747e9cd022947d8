//! Dense per-point row matrices: feature fields and probability fields.

use crate::error::{Error, Result};

/// Row-major N×d matrix of per-point feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl FeatureField {
    pub fn zeros(n: usize, d: usize) -> Self {
        FeatureField { n, d, data: vec![0.0; n * d] }
    }

    /// Wraps a flat row-major buffer; errors if the length is not n*d.
    pub fn from_vec(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::ShapeMismatch(format!(
                "feature buffer has {} entries, want {}x{}",
                data.len(),
                n,
                d
            )));
        }
        Ok(FeatureField { n, d, data })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    /// True if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major N×Y matrix whose rows are class distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    pub n: usize,
    pub y: usize,
    pub data: Vec<f64>,
}

impl ProbField {
    /// Wraps a flat buffer after checking every row is a distribution:
    /// entries ≥ 0 and row sum within 1e-6 of 1.
    pub fn from_vec(n: usize, y: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * y {
            return Err(Error::ShapeMismatch(format!(
                "probability buffer has {} entries, want {}x{}",
                data.len(),
                n,
                y
            )));
        }
        let field = ProbField { n, y, data };
        field.validate()?;
        Ok(field)
    }

    /// Checks the distribution invariant on every row.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            let row = self.row(i);
            let mut sum = 0.0;
            for &p in row {
                // Rejects NaN as well as negative mass.
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidDistribution);
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidDistribution);
            }
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.y..(i + 1) * self.y]
    }
}
