use crate::error::{Error, Result};
use crate::numerics::{dot, norm_sq, DenseVector};

/// `Γ_i = (‖u*‖² + <g_i, u*>) / (‖g_i‖² + ‖u*‖²)`
///
/// Lies in `[0, 1]` whenever `u*` is the consensus direction of a set that
/// contains `g_i`. Undefined when both vectors are zero.
pub fn geometric_aligned_factor(gradient: &DenseVector, u_star: &DenseVector) -> Result<f64> {
    let cross = dot(gradient, u_star)?;
    let u_sq = norm_sq(u_star);
    let denom = norm_sq(gradient) + u_sq;
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "aligned factor is undefined when both the gradient and the consensus direction are zero".into(),
        ));
    }
    Ok((u_sq + cross) / denom)
}

/// `v_i = Γ_i (g_i + u*)`
pub fn geometric_aligned_direction(
    gradient: &DenseVector,
    u_star: &DenseVector,
) -> Result<DenseVector> {
    let gamma = geometric_aligned_factor(gradient, u_star)?;
    Ok(gradient.add(u_star)?.scaled(gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{solve_consensus_qp, GradientSet};
    use crate::numerics::RngStream;

    fn dv(v: &[f64]) -> DenseVector {
        DenseVector::from(v)
    }

    #[test]
    fn factor_examples() {
        assert_eq!(
            geometric_aligned_factor(&dv(&[1.0, 2.0]), &dv(&[0.0, 0.0])).unwrap(),
            0.0
        );
        assert_eq!(
            geometric_aligned_factor(&dv(&[0.3, -4.0]), &dv(&[0.3, -4.0])).unwrap(),
            1.0
        );
        let gamma = geometric_aligned_factor(&dv(&[1.0, 0.0]), &dv(&[0.5, 0.5])).unwrap();
        assert!((gamma - 2.0 / 3.0).abs() < 1e-15);
        assert!(geometric_aligned_factor(&dv(&[0.0]), &dv(&[0.0])).is_err());
    }

    #[test]
    fn direction_examples() {
        let v = geometric_aligned_direction(&dv(&[1.0, 2.0]), &dv(&[0.0, 0.0])).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0]);
        let v = geometric_aligned_direction(&dv(&[1.0, 0.0]), &dv(&[1.0, 0.0])).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 0.0]);
        let v = geometric_aligned_direction(&dv(&[1.0, 0.0]), &dv(&[0.5, 0.5])).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bounded_and_safe_on_solver_outputs() {
        let mut rng = RngStream::new(31, 0);
        for _ in 0..300 {
            let n = 1 + rng.below(16);
            let d = 1 + rng.below(32);
            let set =
                GradientSet::from_rows((0..n).map(|_| rng.uniform_vec(d, -1.0, 1.0)).collect())
                    .unwrap();
            let o = solve_consensus_qp(&set, 1e-12, 10_000).unwrap();
            for g in set.gradients() {
                let gamma = geometric_aligned_factor(g, &o.u_star).unwrap();
                let scale = norm_sq(g) + norm_sq(&o.u_star);
                assert!(gamma * scale >= -1e-10 && gamma <= 1.0 + 1e-12, "{gamma}");
                let v = geometric_aligned_direction(g, &o.u_star).unwrap();
                assert!(dot(g, &v).unwrap() >= -1e-10);
                assert!(dot(&o.u_star, &v).unwrap() >= -1e-10);
            }
        }
    }
}
