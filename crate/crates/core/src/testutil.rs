//! Helpers shared by unit tests across modules.

use rand::Rng;

use crate::geometry::Vec3;

/// Uniform random unit vector via rejection sampling in the cube.
pub(crate) fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v.scaled(1.0 / n);
        }
    }
}
