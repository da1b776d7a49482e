//! Rotation helpers: the continuous 6D representation and the yaw-only
//! heading frame used to canonicalize commands and observations.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use super::MotionError;

/// First two columns of a rotation matrix, column-major: `(c0, c1)`.
pub type Rot6 = [f64; 6];

pub fn rot_to_6d(rot: &Rotation3<f64>) -> Rot6 {
    let m = rot.matrix();
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

pub fn quat_to_6d(q: &UnitQuaternion<f64>) -> Rot6 {
    rot_to_6d(&q.to_rotation_matrix())
}

/// Gram-Schmidt the column pair and complete the frame with a cross product.
pub fn rot_from_6d(v: &Rot6) -> Result<Rotation3<f64>, MotionError> {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let an = a.norm();
    if !(an > 1e-9) {
        return Err(MotionError::DegenerateRotation);
    }
    let c0 = a / an;
    let b_perp = b - c0 * c0.dot(&b);
    let bn = b_perp.norm();
    // collinear or zero second column
    if !(bn > 1e-9 * b.norm().max(1.0)) {
        return Err(MotionError::DegenerateRotation);
    }
    let c1 = b_perp / bn;
    let c2 = c0.cross(&c1);
    Ok(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[c0, c1, c2])))
}

pub fn quat_from_6d(v: &Rot6) -> Result<UnitQuaternion<f64>, MotionError> {
    Ok(UnitQuaternion::from_rotation_matrix(&rot_from_6d(v)?))
}

/// Euclidean distance squared between two 6D rotations.
pub fn rot6_dist2(a: &Rot6, b: &Rot6) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Yaw of the body x-axis projected on the ground plane, in (-pi, pi].
pub fn heading_of(q: &UnitQuaternion<f64>) -> f64 {
    let fwd = q * Vector3::x();
    if fwd.x.abs() < 1e-12 && fwd.y.abs() < 1e-12 {
        // x-axis vertical, heading is undefined; use the Euler yaw
        return wrap_angle(q.euler_angles().2);
    }
    fwd.y.atan2(fwd.x)
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Geodesic angle between two rotations, in [0, pi].
pub fn geodesic_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}

pub fn yaw_quat(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
}

/// Normalize a raw quaternion, rejecting degenerate inputs.
pub fn checked_unit(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>, MotionError> {
    let n = q.norm();
    if !(n >= 1e-6) || !n.is_finite() {
        return Err(MotionError::InvalidRotation(n));
    }
    Ok(UnitQuaternion::from_quaternion(q))
}

/// Yaw-only frame anchored at the root position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingFrame {
    pub origin: Vector3<f64>,
    pub yaw: f64,
    inv: UnitQuaternion<f64>,
}

impl HeadingFrame {
    pub fn new(origin: Vector3<f64>, yaw: f64) -> Self {
        Self { origin, yaw, inv: yaw_quat(-yaw) }
    }

    pub fn from_root(root_pos: Vector3<f64>, root_rot: Quaternion<f64>) -> Result<Self, MotionError> {
        let q = checked_unit(root_rot)?;
        Ok(Self::new(root_pos, heading_of(&q)))
    }

    pub fn vector_to_local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.inv * v
    }

    pub fn vector_to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.inv.inverse() * v
    }

    pub fn point_to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.inv * (p - self.origin)
    }

    pub fn point_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.inv.inverse() * p + self.origin
    }

    pub fn rot_to_local(&self, q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
        self.inv * q
    }

    pub fn rot_to_world(&self, q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
        self.inv.inverse() * q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_quat(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        UnitQuaternion::from_quaternion(q)
    }

    #[test]
    fn identity_6d() {
        assert_eq!(rot_to_6d(&Rotation3::identity()), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn yaw_90_6d() {
        // columns of [[0,-1,0],[1,0,0],[0,0,1]]
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let v = rot_to_6d(&r);
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn random_round_trip_6d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let r = random_quat(&mut rng).to_rotation_matrix();
            let back = rot_from_6d(&rot_to_6d(&r)).unwrap();
            worst = worst.max((back.matrix() - r.matrix()).abs().max());
        }
        assert!(worst < 1e-12, "worst deviation {worst}");
    }

    #[test]
    fn degenerate_6d() {
        assert!(matches!(rot_from_6d(&[0.0; 6]), Err(MotionError::DegenerateRotation)));
        assert!(rot_from_6d(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(rot_from_6d(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn heading_identity_is_noop() {
        let h = HeadingFrame::from_root(Vector3::zeros(), Quaternion::identity()).unwrap();
        let v = Vector3::new(0.3, -1.2, 2.0);
        assert_eq!(h.vector_to_local(&v), v);
        assert_eq!(h.point_to_local(&v), v);
    }

    #[test]
    fn heading_yaw_90_maps_x_to_minus_y() {
        let q = yaw_quat(FRAC_PI_2);
        let h = HeadingFrame::from_root(Vector3::zeros(), *q.quaternion()).unwrap();
        let local = h.vector_to_local(&Vector3::x());
        assert!((local - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn heading_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let origin = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..1.0));
            let h = HeadingFrame::from_root(origin, *q.quaternion()).unwrap();
            let p = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            worst = worst.max((h.point_to_world(&h.point_to_local(&p)) - p).norm());
            worst = worst.max((h.vector_to_world(&h.vector_to_local(&p)) - p).norm());
            let r = random_quat(&mut rng);
            worst = worst.max(h.rot_to_world(&h.rot_to_local(&r)).angle_to(&r));
        }
        assert!(worst < 1e-9);
    }

    #[test]
    fn degenerate_quaternion_rejected() {
        let err = HeadingFrame::from_root(Vector3::zeros(), Quaternion::new(1e-7, 0.0, 0.0, 0.0));
        assert!(matches!(err, Err(MotionError::InvalidRotation(_))));
    }

    #[test]
    fn wrap_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }
}
