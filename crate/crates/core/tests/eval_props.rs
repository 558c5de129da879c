use brickxar_core::eval::{iou, registration_error};
use brickxar_core::geometry::Pose6DoF;
use brickxar_core::image::Mask;
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

fn mask(w: u32, h: u32, bits: &[bool]) -> Mask {
    let mut m = Mask::new(w, h);
    for (i, b) in bits.iter().take((w * h) as usize).enumerate() {
        m.set(i as u32 % w, i as u32 / w, *b);
    }
    m
}

fn pose(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Pose6DoF {
    let a = Vector3::from(axis);
    let a = if a.norm() < 1e-3 { Vector3::z() } else { a };
    Pose6DoF::from_axis_angle(&a, angle, Vector3::from(t))
}

fn arb_pose() -> impl Strategy<Value = Pose6DoF> {
    (prop::array::uniform3(-1.0..1.0f64), -3.0..3.0f64, prop::array::uniform3(-300.0..300.0f64))
        .prop_map(|(a, ang, t)| pose(a, ang, t))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(w in 1u32..20, h in 1u32..20,
                                    a in prop::collection::vec(any::<bool>(), 400),
                                    b in prop::collection::vec(any::<bool>(), 400)) {
        let (ma, mb) = (mask(w, h, &a), mask(w, h, &b));
        let ab = iou(&ma, &mb).unwrap();
        prop_assert_eq!(ab, iou(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab.iou));
        prop_assert_eq!(iou(&ma, &ma).unwrap().iou, 1.0);
    }

    /// Moving the camera rig (both poses) by the same rigid motion leaves
    /// per-point errors unchanged.
    #[test]
    fn registration_error_is_invariant_to_a_shared_camera_motion(
        est in arb_pose(), truth in arb_pose(), rig in arb_pose(), anchor in arb_pose(),
        pts in prop::collection::vec(prop::array::uniform3(-100.0..100.0f64), 1..20),
    ) {
        let pts: Vec<Point3<f64>> = pts.into_iter().map(Point3::from).collect();
        let a = registration_error(&est, &truth, &pts, &anchor);
        let b = registration_error(&rig.compose(&est), &rig.compose(&truth), &pts, &anchor);
        for (x, y) in a.points.iter().zip(&b.points) {
            prop_assert!((x.error_mm - y.error_mm).abs() < 1e-8 * (1.0 + x.error_mm));
        }
        prop_assert_eq!(registration_error(&truth, &truth, &pts, &anchor).max_mm, 0.0);
    }
}
