use crate::error::{Error, Result};

/// Extents of a tensor, rank 1..=4. Image tensors are laid out channels-last:
/// (batch, height, width, channels), matching the row-major data order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::Dimension(format!(
                "rank must be 1..=4, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("zero extent in {dims:?}")));
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Extent of dimension `i`; panics if out of range (internal use only).
    pub fn dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    pub fn last_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

#[macro_export]
macro_rules! shape {
    ($($d:expr),+ $(,)?) => {
        $crate::shape::Shape::new(vec![$($d),+]).unwrap()
    };
}
