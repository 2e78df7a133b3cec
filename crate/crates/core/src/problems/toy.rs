use super::{BilevelProblem, ProblemDims};
use crate::error::{check_len, Error, Result};
use crate::linalg::{norm_sq, sub, Matrix};

/// Quadratic oracle problem with closed-form lower solutions.
///
/// `G_i(x, y) = ‖x − a_i‖² + ‖y − b_i‖²` and `g_i(v, y') = ‖y' − C_i v‖²`.
/// With scalar couplings `C_i = c_i·I` the consensus lower optimum is
/// `z* = mean(c_i)·v`.
#[derive(Debug, Clone)]
pub struct QuadraticToy {
    dims: ProblemDims,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    coupling: Vec<Matrix>,
}

/// Builds the toy with scalar couplings `C_i = c_i·I` (padded when `n != m`).
pub fn make_quadratic_toy(
    n: usize,
    m: usize,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    c: &[f64],
) -> Result<QuadraticToy> {
    let coupling = c.iter().map(|&ci| Matrix::scaled_identity(m, n, ci)).collect();
    QuadraticToy::with_coupling(n, m, a.to_vec(), b.to_vec(), coupling)
}

impl QuadraticToy {
    pub fn with_coupling(
        n: usize,
        m: usize,
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        coupling: Vec<Matrix>,
    ) -> Result<Self> {
        let workers = a.len();
        if b.len() != workers || coupling.len() != workers {
            return Err(Error::Config(format!(
                "toy coefficient lists differ in length: a={}, b={}, c={}",
                a.len(),
                b.len(),
                coupling.len()
            )));
        }
        let dims = ProblemDims::new(workers, n, m)?;
        for i in 0..workers {
            check_len("a_i", a[i].len(), n).map_err(|e| Error::Config(e.to_string()))?;
            check_len("b_i", b[i].len(), m).map_err(|e| Error::Config(e.to_string()))?;
            if coupling[i].rows != m || coupling[i].cols != n {
                return Err(Error::Config(format!("coupling {i} must be {m}x{n}")));
            }
        }
        Ok(Self { dims, a, b, coupling })
    }

    pub fn upper_targets(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.a, &self.b)
    }

    pub fn coupling(&self, i: usize) -> &Matrix {
        &self.coupling[i]
    }

    fn lower_residual(&self, i: usize, v: &[f64], y: &[f64]) -> Vec<f64> {
        sub(y, &self.coupling[i].matvec(v))
    }
}

impl BilevelProblem for QuadraticToy {
    fn dims(&self) -> ProblemDims {
        self.dims
    }

    fn upper_value(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        norm_sq(&sub(x, &self.a[i])) + norm_sq(&sub(y, &self.b[i]))
    }

    fn upper_grad_x(&self, i: usize, x: &[f64], _y: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.a[i]).map(|(x, a)| 2.0 * (x - a)).collect()
    }

    fn upper_grad_y(&self, i: usize, _x: &[f64], y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.b[i]).map(|(y, b)| 2.0 * (y - b)).collect()
    }

    fn lower_value(&self, i: usize, v: &[f64], y: &[f64]) -> f64 {
        norm_sq(&self.lower_residual(i, v, y))
    }

    fn lower_grad_v(&self, i: usize, v: &[f64], y: &[f64]) -> Vec<f64> {
        let r = self.lower_residual(i, v, y);
        self.coupling[i].tmatvec(&r).into_iter().map(|g| -2.0 * g).collect()
    }

    fn lower_grad_y(&self, i: usize, v: &[f64], y: &[f64]) -> Vec<f64> {
        self.lower_residual(i, v, y).into_iter().map(|r| 2.0 * r).collect()
    }

    fn mixed_jvp(&self, i: usize, _v: &[f64], _y: &[f64], dv: &[f64]) -> Vec<f64> {
        self.coupling[i].matvec(dv).into_iter().map(|g| -2.0 * g).collect()
    }

    fn mixed_vjp(&self, i: usize, _v: &[f64], _y: &[f64], r: &[f64]) -> Vec<f64> {
        self.coupling[i].tmatvec(r).into_iter().map(|g| -2.0 * g).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_jvp_hand_value() {
        let p = make_quadratic_toy(1, 1, &[vec![0.0]], &[vec![0.0]], &[1.0]).unwrap();
        assert_eq!(p.mixed_jvp(0, &[0.4], &[1.0], &[3.0]), vec![-6.0]);
    }

    #[test]
    fn consensus_lower_optimum_is_mean_coupling() {
        // Σ_i (z − c_i v)² is minimized at z = mean(c)·v; check by scanning.
        let c = [1.0, 2.0];
        let v = 1.0;
        let f = |z: f64| c.iter().map(|ci| (z - ci * v).powi(2)).sum::<f64>();
        let best = (0..=3000)
            .map(|k| k as f64 * 1e-3)
            .min_by(|p, q| f(*p).partial_cmp(&f(*q)).unwrap())
            .unwrap();
        assert!((best - 1.5).abs() < 1e-9);
        let p = make_quadratic_toy(1, 1, &vec![vec![0.0]; 2], &vec![vec![0.0]; 2], &c).unwrap();
        let grad: f64 = (0..2).map(|i| p.lower_grad_y(i, &[v], &[1.5])[0]).sum();
        assert!(grad.abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_gives_zero_lower_optimum() {
        let p = make_quadratic_toy(1, 1, &vec![vec![0.0]; 2], &vec![vec![0.0]; 2], &[0.0, 0.0]).unwrap();
        for v in [-2.0, 0.5, 9.0] {
            assert_eq!(p.lower_grad_y(0, &[v], &[0.0]), vec![0.0]);
        }
    }

    #[test]
    fn mismatched_coefficients_are_config_errors() {
        let err = make_quadratic_toy(1, 1, &vec![vec![0.0]; 2], &[vec![0.0]], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = make_quadratic_toy(2, 1, &[vec![0.0]], &[vec![0.0]], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
