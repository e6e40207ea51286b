//! In-memory datasets: a row-per-example input matrix plus labels, which are
//! either real values or class indices.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::Label;

/// Label column of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Real-valued targets (regression, hinge ±1 labels, absolute loss).
    Values(Vec<f64>),
    /// Class indices in `[0, num_classes)`.
    Classes { values: Vec<usize>, num_classes: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Values(v) => v.len(),
            Labels::Classes { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Label {
        match self {
            Labels::Values(v) => Label::Value(v[i]),
            Labels::Classes { values, .. } => Label::Class(values[i]),
        }
    }

    /// Class count for classification labels, `None` for real values.
    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Labels::Values(_) => None,
            Labels::Classes { num_classes, .. } => Some(*num_classes),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Labels::Values(v) => {
                if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("label value {bad}")));
                }
            }
            Labels::Classes { values, num_classes } => {
                if *num_classes == 0 {
                    return Err(Error::Data("num_classes must be at least 1".into()));
                }
                if let Some(bad) = values.iter().find(|c| **c >= *num_classes) {
                    return Err(Error::Data(format!(
                        "class label {bad} out of range for {num_classes} classes"
                    )));
                }
            }
        }
        Ok(())
    }

    fn subset(&self, indices: &[usize]) -> Labels {
        match self {
            Labels::Values(v) => Labels::Values(indices.iter().map(|&i| v[i]).collect()),
            Labels::Classes { values, num_classes } => Labels::Classes {
                values: indices.iter().map(|&i| values[i]).collect(),
                num_classes: *num_classes,
            },
        }
    }
}

/// Inputs (one example per row) paired with labels of matching length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Labels,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Labels) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        labels.validate()?;
        Ok(Self { inputs, labels })
    }

    pub fn from_values(inputs: Matrix, values: Vec<f64>) -> Result<Self> {
        Self::new(inputs, Labels::Values(values))
    }

    pub fn from_classes(inputs: Matrix, values: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::new(inputs, Labels::Classes { values, num_classes })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels.get(i)
    }

    /// All labels as a vector, in example order.
    pub fn label_vec(&self) -> Vec<Label> {
        (0..self.len()).map(|i| self.labels.get(i)).collect()
    }

    /// New dataset holding the given examples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(bad) = indices.iter().find(|i| **i >= self.len()) {
            return Err(Error::Data(format!(
                "subset index {bad} out of range for {} examples",
                self.len()
            )));
        }
        let inputs = Matrix::from_fn(indices.len(), self.input_dim(), |i, j| {
            self.inputs.get(indices[i], j)
        });
        Dataset::new(inputs, self.labels.subset(indices))
    }

    /// Splits into the first `n` examples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::Data(format!(
                "split point {n} beyond {} examples",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }
}

/// One standard normal draw via Box-Muller.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    // 1 - u keeps the argument of ln strictly positive.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Dataset {
        Dataset::from_values(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.5, -0.5, 1.5],
        )
        .unwrap()
    }

    #[test]
    fn accessors() {
        let d = toy();
        assert_eq!(d.len(), 3);
        assert_eq!(d.input_dim(), 2);
        assert_eq!(d.input(1), &[-1.0, 0.0]);
        assert_eq!(d.label(2), Label::Value(1.5));
        assert_eq!(d.labels().num_classes(), None);
    }

    #[test]
    fn class_labels_validated() {
        let m = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(Dataset::from_classes(m.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::from_classes(m.clone(), vec![0], 2).is_err());
        let d = Dataset::from_classes(m, vec![0, 1], 3).unwrap();
        assert_eq!(d.labels().num_classes(), Some(3));
        assert_eq!(d.label(1), Label::Class(1));
    }

    #[test]
    fn rejects_non_finite_values() {
        let m = Matrix::from_rows(&[vec![0.0]]).unwrap();
        assert!(Dataset::from_values(m, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn subset_and_split() {
        let d = toy();
        let s = d.subset(&[2, 0]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.input(0), &[0.0, 1.0]);
        assert_eq!(s.label(1), Label::Value(0.5));
        assert!(d.subset(&[3]).is_err());

        let (a, b) = d.split_at(1).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(b.len(), 2);
        assert_eq!(b.input(0), &[-1.0, 0.0]);
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        assert!(draws.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn standard_normal_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(standard_normal(&mut a), standard_normal(&mut b));
        }
    }
}
