use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Population moments over the samples of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMoment {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub var: Vec<f64>,
    pub n: usize,
}

/// One entry per class; `None` marks classes absent from the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWiseMoments {
    pub classes: Vec<Option<ClassMoment>>,
}

impl ClassWiseMoments {
    pub fn present(&self) -> impl Iterator<Item = (usize, &ClassMoment)> {
        self.classes
            .iter()
            .enumerate()
            .filter_map(|(k, m)| m.as_ref().map(|m| (k, m)))
    }
}

pub fn class_moments(z: &Matrix, labels: &[usize], k: usize) -> Result<ClassWiseMoments> {
    if labels.len() != z.rows() {
        return Err(Error::Dimension {
            context: "class_moments labels".into(),
            expected: z.rows(),
            got: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelRange { label, classes: k });
    }
    let mut rows = vec![Vec::new(); k];
    for (n, &l) in labels.iter().enumerate() {
        rows[l].push(n);
    }
    let classes = rows
        .into_iter()
        .map(|idx| {
            if idx.is_empty() {
                return None;
            }
            let (cov, mean) = z.select_rows(&idx).covariance();
            let var = (0..cov.rows()).map(|i| cov[(i, i)]).collect();
            Some(ClassMoment {
                mean,
                cov,
                var,
                n: idx.len(),
            })
        })
        .collect();
    Ok(ClassWiseMoments { classes })
}
