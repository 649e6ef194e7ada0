//! Dense vector helpers shared by the solver, the recovery path and the tests.
//!
//! All reductions run in ascending index order so that results are
//! reproducible bit for bit.

/// A dense column vector. Lengths are contextual: `n` for global vectors,
/// the block size for node-local segments.
pub type DenseVector = Vec<f64>;

/// Sequential dot product in ascending index order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Euclidean norm, accumulated in ascending index order.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for i in 0..y.len() {
        y[i] += alpha * x[i];
    }
}

/// Relative l2 deviation `||a - b|| / ||b||`, falling back to the absolute
/// deviation when the reference is the zero vector.
pub fn rel_l2_deviation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rel_l2_deviation: length mismatch");
    let mut diff = 0.0;
    let mut reference = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        diff += d * d;
        reference += b[i] * b[i];
    }
    let diff = diff.sqrt();
    let reference = reference.sqrt();
    if reference == 0.0 {
        diff
    } else {
        diff / reference
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_is_sequential_left_to_right() {
        // Accumulation order matters in floating point; pin the exact result.
        let a = vec![1e16, 1.0, -1e16];
        let b = vec![1.0, 1.0, 1.0];
        let mut expected = 0.0f64;
        expected += 1e16;
        expected += 1.0;
        expected += -1e16;
        assert_eq!(dot(&a, &b).to_bits(), expected.to_bits());
    }

    #[test]
    fn deviation_of_equal_vectors_is_zero() {
        let v = vec![3.0, -4.0, 0.5];
        assert_eq!(rel_l2_deviation(&v, &v), 0.0);
    }

    #[test]
    fn deviation_against_zero_reference_is_absolute() {
        let a = vec![3.0, 4.0];
        let z = vec![0.0, 0.0];
        assert_eq!(rel_l2_deviation(&a, &z), 5.0);
    }
}
