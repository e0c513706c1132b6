use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Two-fidelity observations: `(x1, f1)` low fidelity, `(x2, f2)` high.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    pub x1: DMatrix<T>,
    pub f1: DVector<T>,
    pub x2: DMatrix<T>,
    pub f2: DVector<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(x1: DMatrix<T>, f1: DVector<T>, x2: DMatrix<T>, f2: DVector<T>) -> Result<Self> {
        let d = Self { x1, f1, x2, f2 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x1.nrows() != self.f1.len() {
            return Err(Error::invalid(format!(
                "x1 has {} rows but f1 has {} values",
                self.x1.nrows(),
                self.f1.len()
            )));
        }
        if self.x2.nrows() != self.f2.len() {
            return Err(Error::invalid(format!(
                "x2 has {} rows but f2 has {} values",
                self.x2.nrows(),
                self.f2.len()
            )));
        }
        if self.x1.ncols() != self.x2.ncols() {
            return Err(Error::invalid(format!(
                "x1 has {} columns, x2 has {}",
                self.x1.ncols(),
                self.x2.ncols()
            )));
        }
        if self.x1.ncols() == 0 {
            return Err(Error::invalid("inputs have zero columns"));
        }
        if self.n1() + self.n2() == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        let finite = self
            .x1
            .iter()
            .chain(self.f1.iter())
            .chain(self.x2.iter())
            .chain(self.f2.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(())
    }

    pub fn n1(&self) -> usize {
        self.f1.len()
    }

    pub fn n2(&self) -> usize {
        self.f2.len()
    }

    pub fn n(&self) -> usize {
        self.n1() + self.n2()
    }

    pub fn dim(&self) -> usize {
        self.x1.ncols()
    }

    /// Set when the data break the scarce-high-fidelity assumption
    /// (`n2 < n1`). Not an error.
    pub fn fidelity_warning(&self) -> Option<String> {
        (self.n2() >= self.n1()).then(|| {
            format!(
                "expected fewer high-fidelity than low-fidelity points, got n1 = {}, n2 = {}",
                self.n1(),
                self.n2()
            )
        })
    }

    /// `[x1; x2]`
    pub fn stacked_x(&self) -> DMatrix<T> {
        let mut x = DMatrix::zeros(self.n(), self.dim());
        x.rows_mut(0, self.n1()).copy_from(&self.x1);
        x.rows_mut(self.n1(), self.n2()).copy_from(&self.x2);
        x
    }

    /// `[f1; f2]`
    pub fn stacked_f(&self) -> DVector<T> {
        DVector::from_iterator(self.n(), self.f1.iter().chain(self.f2.iter()).copied())
    }

    /// Same inputs with targets mapped through `f`.
    pub fn map_targets(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            x1: self.x1.clone(),
            f1: self.f1.map(&f),
            x2: self.x2.clone(),
            f2: self.f2.map(&f),
        }
    }
}

/// Affine target transform `y ↦ (y - mean) / scale` fitted on both
/// fidelities together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization<T> {
    pub mean: T,
    pub scale: T,
}

impl<T: Real> Standardization<T> {
    pub fn identity() -> Self {
        Self {
            mean: T::zero(),
            scale: T::one(),
        }
    }

    /// Combined sample mean and (population) standard deviation; a constant
    /// target vector gets unit scale.
    pub fn fit(data: &Dataset<T>) -> Self {
        let f = data.stacked_f();
        let n = T::from_usize(f.len()).expect("length representable");
        let mean = f.sum() / n;
        let var = f.iter().map(|v| (*v - mean) * (*v - mean)).fold(T::zero(), |a, b| a + b) / n;
        let sd = var.sqrt();
        let scale = if sd > T::zero() && sd.is_finite() { sd } else { T::one() };
        Self { mean, scale }
    }

    pub fn apply(&self, data: &Dataset<T>) -> Dataset<T> {
        let (m, s) = (self.mean, self.scale);
        data.map_targets(|y| (y - m) / s)
    }
}
