use super::NnError;

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NnError::shape(
                "tensor data",
                format!("{expected} elements for shape {shape:?}"),
                format!("{}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_shape(&self, context: &'static str, shape: &[usize]) -> Result<(), NnError> {
        if self.shape != shape {
            return Err(NnError::shape(context, format!("{shape:?}"), format!("{:?}", self.shape)));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, context: &'static str, rank: usize) -> Result<(), NnError> {
        if self.shape.len() != rank {
            return Err(NnError::shape(
                context,
                format!("rank {rank}"),
                format!("shape {:?}", self.shape),
            ));
        }
        Ok(())
    }
}
