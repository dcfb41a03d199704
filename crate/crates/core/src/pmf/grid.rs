//! Dense row-major planes: [`Field`] holds arbitrary finite reals,
//! [`Grid2D`] adds non-negativity and [`Pmf2D`] adds unit mass.

use std::ops::Deref;

use crate::error::PmfError;

/// Total mass at or below which a grid cannot be normalized.
pub const EPS_MASS: f64 = 1e-12;

/// Allowed deviation of a [`Pmf2D`]'s total mass from one.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A dense 2D plane of finite reals, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "field dimensions must be positive");
        Field {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, PmfError> {
        if rows == 0 || cols == 0 {
            return Err(PmfError::EmptyGrid { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(PmfError::LengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(PmfError::InvalidValue { index, value });
        }
        Ok(Field { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "field dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Field { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Value at a signed coordinate, zero outside the plane.
    #[inline]
    pub fn get_or_zero(&self, r: isize, c: isize) -> f64 {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            0.0
        } else {
            self.data[r as usize * self.cols + c as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Index-reversed copy; for odd dimensions this negates every offset
    /// from the center cell.
    pub fn flipped(&self) -> Field {
        let mut data = self.data.clone();
        data.reverse();
        Field {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Center cell used when this plane acts as a kernel.
    #[inline]
    pub fn center(&self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// Sub-window of size `rows`×`cols` whose center cell sits at
    /// `(center_r, center_c)`; cells outside the plane read as zero.
    pub fn window(&self, center_r: isize, center_c: isize, rows: usize, cols: usize) -> Field {
        let r0 = center_r - (rows / 2) as isize;
        let c0 = center_c - (cols / 2) as isize;
        Field::from_fn(rows, cols, |r, c| {
            self.get_or_zero(r0 + r as isize, c0 + c as isize)
        })
    }
}

/// A [`Field`] whose values are all finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D(Field);

impl Grid2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid2D(Field::zeros(rows, cols))
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value.is_finite() && value >= 0.0);
        Grid2D(Field::filled(rows, cols, value))
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, PmfError> {
        Self::from_field(Field::from_vec(rows, cols, data)?)
    }

    pub fn from_field(field: Field) -> Result<Self, PmfError> {
        if let Some((index, &value)) = field.values().iter().enumerate().find(|(_, v)| **v < 0.0)
        {
            return Err(PmfError::InvalidValue { index, value });
        }
        Ok(Grid2D(field))
    }

    /// Builds a grid from a field, replacing negative values by zero.
    /// Spectral products carry round-off of order 1e-17 below zero.
    pub fn from_field_clamped(mut field: Field) -> Self {
        for v in field.values_mut() {
            if *v < 0.0 || !v.is_finite() {
                *v = 0.0;
            }
        }
        Grid2D(field)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_field_clamped(Field::from_fn(rows, cols, f))
    }

    pub fn delta(rows: usize, cols: usize, r: usize, c: usize) -> Self {
        let mut g = Grid2D::zeros(rows, cols);
        g.0.set(r, c, 1.0);
        g
    }

    pub fn as_field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    /// Sets a value; negative or non-finite inputs are stored as zero.
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let v = if v.is_finite() && v > 0.0 { v } else { 0.0 };
        self.0.set(r, c, v);
    }

    /// Pointwise product of two equal-sized grids.
    pub fn product(&self, other: &Grid2D) -> Result<Grid2D, PmfError> {
        check_dims(self, other)?;
        let data = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Grid2D(Field {
            rows: self.rows(),
            cols: self.cols(),
            data,
        }))
    }

    pub fn scaled(&self, k: f64) -> Grid2D {
        assert!(k.is_finite() && k >= 0.0);
        Grid2D(self.0.map(|v| v * k))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D::from_field_clamped(self.0.map(f))
    }

    pub fn normalize(&self) -> Result<Pmf2D, PmfError> {
        normalize(self)
    }
}

impl Deref for Grid2D {
    type Target = Field;
    fn deref(&self) -> &Field {
        &self.0
    }
}

impl From<Pmf2D> for Grid2D {
    fn from(p: Pmf2D) -> Grid2D {
        p.0
    }
}

/// A [`Grid2D`] with unit total mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf2D(Grid2D);

impl Pmf2D {
    /// Wraps a grid that is already normalized.
    pub fn try_from_grid(grid: Grid2D) -> Result<Self, PmfError> {
        let s = grid.sum();
        if (s - 1.0).abs() > MASS_TOLERANCE {
            return Err(PmfError::NotNormalized(s));
        }
        Ok(Pmf2D(grid))
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        Pmf2D(Grid2D::filled(rows, cols, 1.0 / (rows * cols) as f64))
    }

    pub fn delta(rows: usize, cols: usize, r: usize, c: usize) -> Self {
        Pmf2D(Grid2D::delta(rows, cols, r, c))
    }

    pub fn as_grid(&self) -> &Grid2D {
        &self.0
    }

    pub fn into_grid(self) -> Grid2D {
        self.0
    }
}

impl Deref for Pmf2D {
    type Target = Grid2D;
    fn deref(&self) -> &Grid2D {
        &self.0
    }
}

pub(crate) fn check_dims(a: &Field, b: &Field) -> Result<(), PmfError> {
    if a.dims() != b.dims() {
        return Err(PmfError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// Scales a grid to unit mass.
///
/// Grids already within rounding of unit mass are returned unchanged so that
/// normalizing twice is bit-identical to normalizing once.
pub fn normalize(g: &Grid2D) -> Result<Pmf2D, PmfError> {
    let s = g.sum();
    if !(s > EPS_MASS) || !s.is_finite() {
        return Err(PmfError::ZeroMass(s));
    }
    let rounding = 4.0 * f64::EPSILON * g.len() as f64;
    if (s - 1.0).abs() <= rounding {
        return Ok(Pmf2D(g.clone()));
    }
    let inv = 1.0 / s;
    Ok(Pmf2D(Grid2D(g.0.map(|v| v * inv))))
}

/// Consuming variant of [`normalize`] that reuses the buffer.
pub fn normalize_owned(mut g: Grid2D) -> Result<Pmf2D, PmfError> {
    let s = g.sum();
    if !(s > EPS_MASS) || !s.is_finite() {
        return Err(PmfError::ZeroMass(s));
    }
    let rounding = 4.0 * f64::EPSILON * g.len() as f64;
    if (s - 1.0).abs() > rounding {
        let inv = 1.0 / s;
        for v in g.0.values_mut() {
            *v *= inv;
        }
    }
    Ok(Pmf2D(g))
}
