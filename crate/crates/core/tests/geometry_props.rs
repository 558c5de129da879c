use brickxar_core::geometry::{project, unproject, CameraIntrinsics, Pose6DoF};
use nalgebra::{Point3, Unit, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pose(rng: &mut impl Rng) -> Pose6DoF {
    let axis = Unit::new_normalize(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)));
    let q = UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-3.1..3.1));
    let t = Vector3::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0));
    Pose6DoF::from_quaternion(&q, t)
}

fn rel_close(a: &Point3<f64>, b: &Point3<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol * a.coords.norm().max(b.coords.norm()).max(1.0)
}

#[test]
fn project_unproject_round_trip() {
    let k = CameraIntrinsics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let pose = random_pose(&mut rng);
        let z = rng.gen_range(k.near_mm * 1.0001..1e4);
        let cam = Point3::new(rng.gen_range(-1.0..1.0) * z, rng.gen_range(-1.0..1.0) * z, z);
        let world = pose.inverse().transform_point(&cam);
        let p = project(&world, &pose, &k).expect("in front of the camera");
        let back = unproject(p.u, p.v, p.depth, &pose, &k).unwrap();
        assert!(rel_close(&back, &world, 1e-9), "{back} vs {world}");
    }
}

#[test]
fn composition_is_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        assert!((l.rotation - r.rotation).amax() < 1e-9);
        assert!((l.translation - r.translation).amax() < 1e-9 * (1.0 + l.translation.amax()));
    }
}

proptest! {
    #[test]
    fn rigid_transforms_preserve_distances(
        seed in any::<u64>(),
        p in prop::array::uniform3(-1e3f64..1e3),
        q in prop::array::uniform3(-1e3f64..1e3),
    ) {
        let pose = random_pose(&mut ChaCha8Rng::seed_from_u64(seed));
        let (p, q) = (Point3::from(p), Point3::from(q));
        let d0 = (p - q).norm();
        let d1 = (pose.transform_point(&p) - pose.transform_point(&q)).norm();
        prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
    }

    #[test]
    fn compose_with_inverse_is_identity(seed in any::<u64>()) {
        let pose = random_pose(&mut ChaCha8Rng::seed_from_u64(seed));
        let id = pose.compose(&pose.inverse());
        prop_assert!((id.rotation - nalgebra::Matrix3::identity()).amax() < 1e-9);
        prop_assert!(id.translation.amax() < 1e-9);
    }
}
