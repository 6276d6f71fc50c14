//! Geometry primitives: vectors, rotations, node poses, and the rigid
//! six-transmitter layout shared by the simulator and the learning stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3-vector in micrometers (positions) or dimensionless (directions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn add(&self, o: &Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(&self, o: &Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(&self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    /// Unit vector with the same direction. Errors on zero or non-finite input.
    pub fn normalized(&self) -> Result<Vec3> {
        if !self.is_finite() {
            return Err(Error::invalid("cannot normalize non-finite vector"));
        }
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::invalid("cannot normalize zero vector"));
        }
        Ok(self.scale(1.0 / n))
    }
}

/// Unit quaternion (w, x, y, z) representing a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes an arbitrary 4-tuple onto the unit sphere.
    /// Near-zero norm falls back to the identity rotation.
    pub fn normalize(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-8 {
            return UnitQuaternion::IDENTITY;
        }
        UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<UnitQuaternion> {
        let u = axis.normalized()?;
        let (s, c) = (angle / 2.0).sin_cos();
        Ok(UnitQuaternion {
            w: c,
            x: u.x * s,
            y: u.y * s,
            z: u.z * s,
        })
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(&self) -> UnitQuaternion {
        UnitQuaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(&self, o: &UnitQuaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotates a vector: q v q*.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // t = 2 (im(q) × v); v' = v + w t + im(q) × t
        let qv = Vec3::new(self.x, self.y, self.z);
        let t = cross(&qv, v).scale(2.0);
        v.add(&t.scale(self.w)).add(&cross(&qv, &t))
    }
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    Vec3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}

/// Node A's pose relative to Node B's body frame (the global frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion,
}

impl Pose {
    /// Applies the rigid transform to a point in the node's local frame.
    pub fn transform(&self, local: &Vec3) -> Vec3 {
        self.orientation.rotate(local).add(&self.position)
    }

    /// Maps a world point back into the node's local frame.
    pub fn inverse_transform(&self, world: &Vec3) -> Vec3 {
        self.orientation
            .conjugate()
            .rotate(&world.sub(&self.position))
    }
}

/// Rigid layout of one node: absorbing sphere radius and the six
/// transmitter tube tips on the local axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLayout {
    pub radius: f64,
    pub tube_offset: f64,
    pub tx_local: [Vec3; 6],
}

impl NodeLayout {
    /// Tube tips at (r + delta) along +x, -x, +y, -y, +z, -z, in that order.
    pub fn new(radius: f64, tube_offset: f64) -> Result<NodeLayout> {
        if !(radius > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
        if !(tube_offset > 0.0) {
            return Err(Error::invalid("tube_offset must be positive"));
        }
        let a = radius + tube_offset;
        Ok(NodeLayout {
            radius,
            tube_offset,
            tx_local: [
                Vec3::new(a, 0.0, 0.0),
                Vec3::new(-a, 0.0, 0.0),
                Vec3::new(0.0, a, 0.0),
                Vec3::new(0.0, -a, 0.0),
                Vec3::new(0.0, 0.0, a),
                Vec3::new(0.0, 0.0, -a),
            ],
        })
    }
}

/// Octant of a point by coordinate signs: (x<0) + 2(y<0) + 4(z<0).
/// Zero coordinates count as non-negative.
pub fn octant_index(p: &Vec3) -> Result<usize> {
    if !p.is_finite() {
        return Err(Error::invalid("octant_index requires finite coordinates"));
    }
    Ok(usize::from(p.x < 0.0) + 2 * usize::from(p.y < 0.0) + 4 * usize::from(p.z < 0.0))
}

/// World positions of the six transmitter tips for a given pose.
pub fn tx_world_positions(pose: &Pose, layout: &NodeLayout) -> [Vec3; 6] {
    let mut out = [Vec3::ZERO; 6];
    for (o, local) in out.iter_mut().zip(layout.tx_local.iter()) {
        *o = pose.transform(local);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn octant_sign_convention() {
        assert_eq!(octant_index(&Vec3::new(1.0, 2.0, 3.0)).unwrap(), 0);
        assert_eq!(octant_index(&Vec3::new(-1.0, 2.0, 3.0)).unwrap(), 1);
        assert_eq!(octant_index(&Vec3::new(0.0, 0.0, 1.0)).unwrap(), 0);
        assert_eq!(octant_index(&Vec3::new(1.0, -2.0, 3.0)).unwrap(), 2);
        assert_eq!(octant_index(&Vec3::new(1.0, 2.0, -3.0)).unwrap(), 4);
        assert_eq!(octant_index(&Vec3::new(-1.0, -2.0, -3.0)).unwrap(), 7);
    }

    #[test]
    fn octant_rejects_non_finite() {
        assert!(octant_index(&Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(octant_index(&Vec3::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn octant_negation_maps_to_complement() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        for _ in 0..200 {
            let v = Vec3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            if v.x == 0.0 || v.y == 0.0 || v.z == 0.0 {
                continue;
            }
            let i = octant_index(&v).unwrap();
            let j = octant_index(&v.scale(-1.0)).unwrap();
            assert_eq!(i + j, 7);
        }
    }

    #[test]
    fn quaternion_rotation_preserves_norm() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        for _ in 0..200 {
            let q = UnitQuaternion::normalize(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            assert_relative_eq!(q.norm(), 1.0, epsilon = 1e-9);
            let v = Vec3::new(
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
            );
            let r = q.rotate(&v);
            assert_relative_eq!(r.norm(), v.norm(), epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn quaternion_normalize_floor_falls_back_to_identity() {
        let q = UnitQuaternion::normalize(1e-12, 0.0, 0.0, 0.0);
        assert_eq!(q, UnitQuaternion::IDENTITY);
    }

    #[test]
    fn axis_rotation_maps_x_tube_to_y() {
        let layout = NodeLayout::new(5.0, 0.5).unwrap();
        let q =
            UnitQuaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2)
                .unwrap();
        let pose = Pose {
            position: Vec3::ZERO,
            orientation: q,
        };
        let tx = tx_world_positions(&pose, &layout);
        assert_relative_eq!(tx[0].x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(tx[0].y, 5.5, epsilon = 1e-9);
        assert_relative_eq!(tx[0].z, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_pose_tx_positions() {
        let layout = NodeLayout::new(5.0, 0.5).unwrap();
        let pose = Pose {
            position: Vec3::new(20.0, 0.0, 0.0),
            orientation: UnitQuaternion::IDENTITY,
        };
        let tx = tx_world_positions(&pose, &layout);
        assert_relative_eq!(tx[0].x, 25.5, epsilon = 1e-12);
        assert_relative_eq!(tx[1].x, 14.5, epsilon = 1e-12);
        for t in &tx {
            assert_relative_eq!(t.sub(&pose.position).norm(), 5.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn tx_world_round_trip_recovers_local() {
        let layout = NodeLayout::new(5.0, 0.5).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for _ in 0..50 {
            let q = UnitQuaternion::normalize(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let pose = Pose {
                position: Vec3::new(
                    30.0 * (rng.random::<f64>() - 0.5),
                    30.0 * (rng.random::<f64>() - 0.5),
                    30.0 * (rng.random::<f64>() - 0.5),
                ),
                orientation: q,
            };
            let tx = tx_world_positions(&pose, &layout);
            for (world, local) in tx.iter().zip(layout.tx_local.iter()) {
                let back = pose.inverse_transform(world);
                assert_relative_eq!(back.x, local.x, epsilon = 1e-9);
                assert_relative_eq!(back.y, local.y, epsilon = 1e-9);
                assert_relative_eq!(back.z, local.z, epsilon = 1e-9);
                assert_relative_eq!(world.sub(&pose.position).norm(), 5.5, epsilon = 1e-9);
            }
        }
    }
}
