//! Whole-body state container.

use nalgebra::DVector;

/// Generalized positions and velocities, ordered per [`crate::convention`].
#[derive(Debug, Clone, PartialEq)]
pub struct WholeBodyState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl WholeBodyState {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Self {
        assert_eq!(q.len(), v.len(), "q and v must have matching dimension");
        WholeBodyState { q, v }
    }

    pub fn zeros(dof: usize) -> Self {
        WholeBodyState { q: DVector::zeros(dof), v: DVector::zeros(dof) }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|x| x.is_finite()) && self.v.iter().all(|x| x.is_finite())
    }
}
