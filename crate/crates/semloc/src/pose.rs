//! SE(2) pose algebra: composition, inverse composition, point transforms and
//! angle normalization. These are the primitives every other module leans on,
//! so they are total functions over plain value types.

use serde::{Deserialize, Serialize};

/// A 2D point in meters. Frame is whatever the caller says it is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    /// Euclidean distance to another point.
    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An SE(2) pose: translation in meters plus heading in radians, kept in
/// (-π, π] by every constructor and operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn translation(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Group inverse: compose(p, p.inverse()) is the identity.
    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 {
            x: -(c * self.x + s * self.y),
            y: -(-s * self.x + c * self.y),
            theta: wrap_angle(-self.theta),
        }
    }

    /// Translational distance to another pose, ignoring heading.
    pub fn translation_distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Normalize an angle to (-π, π], congruent to the input mod 2π.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    a
}

/// Pose composition a ⊕ b: the pose of frame b expressed relative to a's
/// parent frame. Translation is a.t + R(a.theta)·b.t, heading wraps.
pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    let (s, c) = a.theta.sin_cos();
    Pose2 {
        x: a.x + c * b.x - s * b.y,
        y: a.y + s * b.x + c * b.y,
        theta: wrap_angle(a.theta + b.theta),
    }
}

/// Inverse composition a ⊖ b: the relative pose of a expressed in frame b,
/// the unique d with compose(b, d) == a.
pub fn inverse_compose(a: &Pose2, b: &Pose2) -> Pose2 {
    let (s, c) = b.theta.sin_cos();
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    Pose2 {
        x: c * dx + s * dy,
        y: -s * dx + c * dy,
        theta: wrap_angle(a.theta - b.theta),
    }
}

/// Apply a rigid transform to a point: R(p.theta)·q + p.t.
pub fn transform_point(p: &Pose2, q: &Point2) -> Point2 {
    let (s, c) = p.theta.sin_cos();
    Point2 {
        x: p.x + c * q.x - s * q.y,
        y: p.y + s * q.x + c * q.y,
    }
}

/// Componentwise pose comparison with the angular difference taken through
/// wrap_angle, never raw subtraction.
pub fn pose_approx_eq(a: &Pose2, b: &Pose2, tol: f64) -> bool {
    (a.x - b.x).abs() <= tol
        && (a.y - b.y).abs() <= tol
        && wrap_angle(a.theta - b.theta).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const TOL: f64 = 1e-12;

    #[test]
    fn wrap_angle_identity_and_boundaries() {
        assert_eq!(wrap_angle(0.0), 0.0);
        // 3π is congruent to π and the convention keeps +π.
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-9);
        // -π is the open end of the interval and maps to +π.
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(2.0 * PI)).abs() < 1e-9);
        assert!((wrap_angle(-3.5 * PI) - 0.5 * PI).abs() < 1e-9);
    }

    #[test]
    fn compose_identity_cases() {
        let p = Pose2::new(3.2, -1.5, 0.7);
        assert!(pose_approx_eq(&compose(&Pose2::identity(), &p), &p, TOL));
        assert!(pose_approx_eq(&compose(&p, &Pose2::identity()), &p, TOL));
        assert!(pose_approx_eq(
            &compose(&p, &p.inverse()),
            &Pose2::identity(),
            TOL
        ));
    }

    #[test]
    fn compose_quarter_turn_hand_value() {
        let a = Pose2::new(1.0, 0.0, PI / 2.0);
        let b = Pose2::new(1.0, 0.0, 0.0);
        let got = compose(&a, &b);
        assert!(pose_approx_eq(&got, &Pose2::new(1.0, 1.0, PI / 2.0), 1e-12));
    }

    #[test]
    fn inverse_compose_self_is_identity() {
        let p = Pose2::new(-2.0, 5.5, 2.9);
        assert!(pose_approx_eq(
            &inverse_compose(&p, &p),
            &Pose2::identity(),
            TOL
        ));
    }

    #[test]
    fn inverse_compose_hand_value_satisfies_round_trip() {
        // d = a ⊖ b with a = {2,1,0}, b = {1,1,π/2}:
        // d.t = R(-π/2)·(1,0) = (0,-1), d.θ = -π/2, and compose(b, d) == a.
        let a = Pose2::new(2.0, 1.0, 0.0);
        let b = Pose2::new(1.0, 1.0, PI / 2.0);
        let d = inverse_compose(&a, &b);
        assert!(pose_approx_eq(&d, &Pose2::new(0.0, -1.0, -PI / 2.0), 1e-12));
        assert!(pose_approx_eq(&compose(&b, &d), &a, 1e-12));
    }

    #[test]
    fn transform_point_hand_values() {
        let q = Point2::new(1.0, 2.0);
        let id = transform_point(&Pose2::identity(), &q);
        assert!((id.x - 1.0).abs() < TOL && (id.y - 2.0).abs() < TOL);

        let half_turn = transform_point(&Pose2::new(0.0, 0.0, PI), &Point2::new(1.0, 0.0));
        assert!((half_turn.x + 1.0).abs() < 1e-12 && half_turn.y.abs() < 1e-12);

        let p = transform_point(&Pose2::new(3.0, 4.0, PI / 2.0), &q);
        assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 5.0).abs() < 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = Pose2> {
        (
            -100.0f64..100.0,
            -100.0f64..100.0,
            -std::f64::consts::PI..std::f64::consts::PI,
        )
            .prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            prop_assert!(pose_approx_eq(&left, &right, 1e-12));
        }

        #[test]
        fn round_trip_law(a in arb_pose(), b in arb_pose()) {
            let d = inverse_compose(&a, &b);
            prop_assert!(pose_approx_eq(&compose(&b, &d), &a, 1e-12));
        }

        #[test]
        fn inverse_compose_of_compose_recovers(b in arb_pose(), d in arb_pose()) {
            let a = compose(&b, &d);
            prop_assert!(pose_approx_eq(&inverse_compose(&a, &b), &d, 1e-12));
        }

        #[test]
        fn transform_point_respects_composition(
            a in arb_pose(), b in arb_pose(),
            qx in -50.0f64..50.0, qy in -50.0f64..50.0,
        ) {
            let q = Point2::new(qx, qy);
            let lhs = transform_point(&compose(&a, &b), &q);
            let rhs = transform_point(&a, &transform_point(&b, &q));
            prop_assert!((lhs.x - rhs.x).abs() < 1e-12 && (lhs.y - rhs.y).abs() < 1e-12);
        }

        #[test]
        fn wrap_angle_is_in_range_and_congruent(t in -50.0f64..50.0) {
            let w = wrap_angle(t);
            prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
            // congruence mod 2π
            let k = ((t - w) / (2.0 * std::f64::consts::PI)).round();
            prop_assert!((t - w - k * 2.0 * std::f64::consts::PI).abs() < 1e-9);
        }
    }
}
