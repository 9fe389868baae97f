//! Set-valued and parameterized maps: evaluation, distance, projection,
//! normal cones of convex polyhedra and the adjoint action of smooth maps.

mod maps;
mod sets;

pub use maps::{
    finite_difference_jacobian, jacobian_of, jacobian_x_of, FnParam, FnSmooth, HalfComplexSquare, ParamFn, ParamMap,
    SetFamily, SetValuedMap, SmoothFn,
};
pub use sets::{normal_cone, ConeSpec, ConvexSet, SetValue, MEMBERSHIP_TOL};

use crate::error::{check_dim, CovaraError, Result};
use crate::linalg::Vector;

/// `dist(y; F(x))`, `+∞` when `F(x)` is empty.
pub fn evaluate_distance(map: &SetValuedMap, x: &Vector, y: &Vector) -> Result<f64> {
    check_dim("distance target", map.output_dim(), y.len())?;
    map.evaluate(x)?.distance(y)
}

/// Nearest point of `F(x)` to `y`.
pub fn project(map: &SetValuedMap, x: &Vector, y: &Vector) -> Result<Vector> {
    check_dim("projection target", map.output_dim(), y.len())?;
    map.evaluate(x)?.project(y)
}

/// `∇h(x)ᵀ y*`, the precoderivative of a smooth single-valued map.
pub fn precoderivative_apply_smooth(map: &SetValuedMap, x: &Vector, ystar: &Vector) -> Result<Vector> {
    check_dim("precoderivative argument", map.input_dim(), x.len())?;
    check_dim("dual vector", map.output_dim(), ystar.len())?;
    let j = map
        .smooth_jacobian(x)
        .ok_or(CovaraError::JacobianUnavailable("map is not single-valued smooth"))?;
    Ok(j.transpose() * ystar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn distance_examples() {
        let id = SetValuedMap::identity(2);
        assert_eq!(evaluate_distance(&id, &v(&[1.0, 2.0]), &v(&[1.0, 3.0])).unwrap(), 1.0);

        let sq = ConvexSet::boxed(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let nc = SetValuedMap::NormalCone(sq);
        assert_eq!(evaluate_distance(&nc, &v(&[0.5, 0.5]), &v(&[0.0, 2.0])).unwrap(), 2.0);

        let half = SetValuedMap::NormalCone(ConvexSet::nonneg_orthant(1));
        assert_eq!(
            evaluate_distance(&half, &v(&[-1.0]), &v(&[5.0])).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn distance_rejects_bad_dimensions() {
        let id = SetValuedMap::identity(2);
        let err = evaluate_distance(&id, &v(&[1.0, 2.0]), &v(&[1.0])).unwrap_err();
        assert!(matches!(err, CovaraError::DimensionMismatch { .. }));
    }

    #[test]
    fn projection_examples() {
        let bx = SetValuedMap::ConstantSet {
            input_dim: 1,
            set: ConvexSet::boxed(vec![0.0], vec![1.0]).unwrap(),
        };
        assert_eq!(project(&bx, &v(&[0.0]), &v(&[2.5])).unwrap(), v(&[1.0]));

        let half = SetValuedMap::NormalCone(ConvexSet::nonneg_orthant(1));
        assert_eq!(project(&half, &v(&[0.0]), &v(&[-3.0])).unwrap(), v(&[-3.0]));
        assert!(matches!(
            project(&half, &v(&[-1.0]), &v(&[0.0])),
            Err(CovaraError::EmptyValue)
        ));

        let a = SetValuedMap::affine(Matrix::from_diagonal(&v(&[2.0, 1.0])), v(&[0.0, 0.0]));
        assert_eq!(project(&a, &v(&[1.0, 1.0]), &v(&[0.0, 0.0])).unwrap(), v(&[2.0, 1.0]));
    }

    #[test]
    fn precoderivative_examples() {
        let id = SetValuedMap::identity(2);
        assert_eq!(
            precoderivative_apply_smooth(&id, &v(&[3.0, 4.0]), &v(&[0.0, 1.0])).unwrap(),
            v(&[0.0, 1.0])
        );
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let am = SetValuedMap::affine(a.clone(), v(&[0.0, 0.0]));
        let ys = v(&[1.0, -1.0]);
        assert_eq!(
            precoderivative_apply_smooth(&am, &v(&[0.0, 0.0, 0.0]), &ys).unwrap(),
            a.transpose() * &ys
        );
        let sq = SetValuedMap::smooth(HalfComplexSquare);
        let out = precoderivative_apply_smooth(&sq, &v(&[0.6, 0.8]), &v(&[1.0, 0.0])).unwrap();
        assert!((out - v(&[0.6, -0.8])).norm() < 1e-15);
        let nc = SetValuedMap::NormalCone(ConvexSet::nonneg_orthant(1));
        assert!(matches!(
            precoderivative_apply_smooth(&nc, &v(&[1.0]), &v(&[1.0])),
            Err(CovaraError::JacobianUnavailable(_))
        ));
    }

    #[test]
    fn analytic_jacobian_of_half_square_matches_finite_differences() {
        // Independent check: the adjoint action at (0.6, 0.8) on y* = (1, 0) is
        // the first row of the finite-difference Jacobian.
        let f = HalfComplexSquare;
        let x = v(&[0.6, 0.8]);
        let fd = finite_difference_jacobian(|z| f.eval(z), &x, 2);
        assert!((fd.row(0).transpose() - v(&[0.6, -0.8])).norm() < 1e-8);
        assert!((f.jacobian(&x).unwrap() - fd).norm() < 1e-8);
    }

    #[test]
    fn half_square_preimages_invert() {
        let f = HalfComplexSquare;
        for y in [v(&[0.02, 0.0]), v(&[-0.3, 0.1]), v(&[0.0, -0.5]), v(&[-1.0, 0.0])] {
            for x in f.preimages(&y).unwrap() {
                assert!((f.eval(&x) - &y).norm() < 1e-14, "{x} -> {y}");
            }
        }
    }

    fn normal_cone_map() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..4).prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0f64..0.0, n),
                prop::collection::vec(0.0f64..2.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_is_a_member((lo, hi, y) in normal_cone_map(), t in 0.0f64..1.0) {
            let set = ConvexSet::boxed(lo.clone(), hi.clone()).unwrap();
            let x = Vector::from_iterator(lo.len(), lo.iter().zip(&hi).enumerate().map(|(i, (l, h))| {
                // put every other coordinate on a face
                if i % 2 == 0 { *l } else { l + t * (h - l) }
            }));
            let y = Vector::from_vec(y);
            for map in [
                SetValuedMap::NormalCone(set.clone()),
                SetValuedMap::IdentityPlusNormalCone(set.clone()),
                SetValuedMap::ConstantSet { input_dim: x.len(), set: set.clone() },
            ] {
                let p = project(&map, &x, &y).unwrap();
                prop_assert!(evaluate_distance(&map, &x, &p).unwrap() <= 1e-10);
                let d = evaluate_distance(&map, &x, &y).unwrap();
                prop_assert!(((p - &y).norm() - d).abs() <= 1e-10);
            }
        }

        #[test]
        fn box_normal_cone_satisfies_variational_inequality(
            (lo, hi, w) in normal_cone_map(), t in 0.0f64..1.0, seed in 0u64..1000)
        {
            let set = ConvexSet::boxed(lo.clone(), hi.clone()).unwrap();
            let z = Vector::from_iterator(lo.len(), lo.iter().zip(&hi).enumerate().map(|(i, (l, h))| {
                match i % 3 { 0 => *l, 1 => *h, _ => l + t * (h - l) }
            }));
            let cone = normal_cone(&set, &z).unwrap();
            let member = cone.project(&Vector::from_vec(w)).unwrap();
            let mut rng = crate::sampling::rng(seed, 0);
            use rand::Rng;
            for _ in 0..1000 {
                let s = Vector::from_iterator(lo.len(), lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..=*h)));
                prop_assert!(member.dot(&(s - &z)) <= 1e-12);
            }
        }

        #[test]
        fn double_negation_is_identity(x in prop::collection::vec(-2.0f64..2.0, 2), y in prop::collection::vec(-2.0f64..2.0, 2)) {
            let base = SetValuedMap::sum(
                SetValuedMap::smooth(HalfComplexSquare),
                SetValuedMap::ConstantSet { input_dim: 2, set: ConvexSet::boxed(vec![-0.5, 0.0], vec![0.5, 1.0]).unwrap() },
            );
            let twice = SetValuedMap::negate(SetValuedMap::negate(base.clone()));
            let (x, y) = (Vector::from_vec(x), Vector::from_vec(y));
            prop_assert_eq!(
                evaluate_distance(&base, &x, &y).unwrap(),
                evaluate_distance(&twice, &x, &y).unwrap()
            );
        }
    }
}
