//! Linear pencils for `p(w1, w2) = w1 + w2 - (w1 w2 + w2 w1) / 2` and for the plain
//! sum `w1 + w2`.

use nalgebra::DMatrix;

use crate::kernels::Mat;

/// `L = b0 + b1 ⊗ w1 + b2 ⊗ w2` with `L = [[0, u^T], [v, Q]]` and `b0` constant.
/// The scalar readout is `-u^T Q^-1 v`, the Schur complement of `Q`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub size: usize,
    pub b0: Mat,
    pub b: [Mat; 2],
    /// Low-rank factors with `b[j] = U_j V_j^T`.
    pub factors: [(Mat, Mat); 2],
}

fn symmetric_unit_pair(size: usize, j: usize) -> (Mat, Mat) {
    // e_0 e_j^T + e_j e_0^T = [e_0 e_j] [e_j e_0]^T
    let mut u = Mat::zeros(size, 2);
    let mut v = Mat::zeros(size, 2);
    u[(0, 0)] = 1.0;
    u[(j, 1)] = 1.0;
    v[(j, 0)] = 1.0;
    v[(0, 1)] = 1.0;
    (u, v)
}

impl Linearization {
    /// The 4×4 pencil of the two-batch reshuffling polynomial.
    pub fn two_batch() -> Self {
        #[rustfmt::skip]
        let b0 = DMatrix::from_row_slice(4, 4, &[
            0.0,  1.0,  0.0,  0.0,
            1.0, -1.0, -1.0, -1.0,
            0.0, -1.0, -1.0,  1.0,
            0.0, -1.0,  1.0, -1.0,
        ]);
        let f1 = symmetric_unit_pair(4, 2);
        let f2 = symmetric_unit_pair(4, 3);
        let b1 = &f1.0 * f1.1.transpose();
        let b2 = &f2.0 * f2.1.transpose();
        Linearization {
            size: 4,
            b0,
            b: [b1, b2],
            factors: [f1, f2],
        }
    }

    /// The trivial 1×1 pencil of `w1 + w2`.
    pub fn free_sum() -> Self {
        let one = Mat::from_element(1, 1, 1.0);
        Linearization {
            size: 1,
            b0: Mat::zeros(1, 1),
            b: [one.clone(), one.clone()],
            factors: [(one.clone(), one.clone()), (one.clone(), one)],
        }
    }

    /// `L` with the scalar entries `w1`, `w2`.
    pub fn pencil(&self, w1: f64, w2: f64) -> Mat {
        &self.b0 + &self.b[0] * w1 + &self.b[1] * w2
    }

    pub fn u(&self, w1: f64, w2: f64) -> Mat {
        let l = self.pencil(w1, w2);
        l.view((1, 0), (self.size - 1, 1)).into_owned()
    }

    pub fn v(&self, w1: f64, w2: f64) -> Mat {
        self.u(w1, w2)
    }

    /// The constant lower-right block.
    pub fn q(&self) -> Mat {
        self.b0.view((1, 1), (self.size - 1, self.size - 1)).into_owned()
    }

    /// Substitutes `d × d` matrices and returns `-u^T Q^-1 v` computed on the
    /// `(size·d) × (size·d)` block pencil. For the 1×1 pencil this is `L` itself.
    pub fn evaluate(&self, w1: &Mat, w2: &Mat) -> Mat {
        let d = w1.nrows();
        let s = self.size;
        let id = Mat::identity(d, d);
        let mut big = self.b0.kronecker(&id);
        big += self.b[0].kronecker(w1);
        big += self.b[1].kronecker(w2);
        if s == 1 {
            return big;
        }
        let u = big.view((0, d), (d, (s - 1) * d)).into_owned();
        let v = big.view((d, 0), ((s - 1) * d, d)).into_owned();
        let q = big.view((d, d), ((s - 1) * d, (s - 1) * d)).into_owned();
        let qinv = q.try_inverse().expect("constant block is invertible");
        -(u * qinv * v)
    }

    /// Direct evaluation of the polynomial this pencil represents.
    pub fn polynomial(&self, w1: &Mat, w2: &Mat) -> Mat {
        if self.size == 1 {
            w1 + w2
        } else {
            w1 + w2 - (w1 * w2 + w2 * w1) * 0.5
        }
    }
}

/// The two-batch pencil.
pub fn build_linearization() -> Linearization {
    Linearization::two_batch()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn scalar(lin: &Linearization, a: f64, b: f64) -> f64 {
        lin.evaluate(&Mat::from_element(1, 1, a), &Mat::from_element(1, 1, b))[(0, 0)]
    }

    #[test]
    fn constant_block_and_its_inverse() {
        let q = build_linearization().q();
        #[rustfmt::skip]
        let qinv = Mat::from_row_slice(3, 3, &[
             0.0, -0.5, -0.5,
            -0.5,  0.0,  0.5,
            -0.5,  0.5,  0.0,
        ]);
        assert!((q.clone().try_inverse().unwrap() - qinv).amax() < 1e-15);
        assert_eq!(q, Mat::from_row_slice(3, 3, &[-1.0, -1.0, -1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0]));
    }

    #[test]
    fn scalar_substitutions() {
        let lin = build_linearization();
        assert!((scalar(&lin, 1.0, 1.0) - 1.0).abs() < 1e-14);
        assert!((scalar(&lin, 1.0, 0.0) - 1.0).abs() < 1e-14);
        assert!((scalar(&lin, 0.3, -2.0) - (0.3 - 2.0 + 0.6)).abs() < 1e-14);
        let u = lin.u(0.0, 0.0);
        let v = lin.v(0.0, 0.0);
        let p = -(u.transpose() * lin.q().try_inverse().unwrap() * v)[(0, 0)];
        assert_eq!(p, 0.0);
    }

    #[test]
    fn matrix_substitution_reproduces_polynomial() {
        let lin = build_linearization();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut sym = || {
                let a = Mat::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
                (&a + a.transpose()) * 0.5
            };
            let (w1, w2) = (sym(), sym());
            let diff = lin.evaluate(&w1, &w2) - lin.polynomial(&w1, &w2);
            assert!(diff.amax() < 1e-10);
        }
        let sum = Linearization::free_sum();
        let w = Mat::identity(2, 2);
        assert_eq!(sum.evaluate(&w, &w), &w * 2.0);
    }
}
