use brickxar_core::geometry::{CameraIntrinsics, Pose6DoF};
use brickxar_core::model::mesh::box_mesh;
use brickxar_core::model::Mesh;
use brickxar_core::render::{rasterize, GuideStyle, RenderItem};
use brickxar_core::sim::ray_cast_depth;
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

fn small_k(w: u32, h: u32) -> CameraIntrinsics {
    CameraIntrinsics::new(0.9 * w as f64, 0.9 * w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h, 10.0).unwrap()
}

prop_compose! {
    fn arb_box()(x in -60.0..60.0f64, y in -60.0..60.0f64, z in 0.0..60.0f64,
                 sx in 4.0..50.0f64, sy in 4.0..50.0f64, sz in 4.0..50.0f64,
                 angle in -3.0..3.0f64) -> (Mesh, Pose6DoF) {
        let m = box_mesh(Point3::new(-sx / 2.0, -sy / 2.0, 0.0), Point3::new(sx / 2.0, sy / 2.0, sz));
        (m, Pose6DoF::from_axis_angle(&Vector3::z(), angle, Vector3::new(x, y, z)))
    }
}

fn camera(yaw: f64, dist: f64) -> Pose6DoF {
    let eye = Point3::new(dist * yaw.cos(), dist * yaw.sin(), 0.8 * dist);
    Pose6DoF::look_at(&eye, &Point3::new(0.0, 0.0, 20.0), &Vector3::z())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn depth_buffer_matches_ray_casting(
        mut boxes in prop::collection::vec(arb_box(), 0..6),
        (w, h) in (8u32..=64, 8u32..=64),
        yaw in 0.0..std::f64::consts::TAU, dist in 250.0..450.0f64,
    ) {
        // Always something on screen.
        boxes.push((box_mesh(Point3::new(-25.0, -25.0, 0.0), Point3::new(25.0, 25.0, 40.0)), Pose6DoF::identity()));
        let k = small_k(w, h);
        let cam = camera(yaw, dist);
        let items: Vec<RenderItem> = boxes.iter().map(|(m, p)| RenderItem::occluder(m, *p)).collect();
        let raster = rasterize(&items, &cam, &k).depth;
        let refs: Vec<(&Mesh, Pose6DoF)> = boxes.iter().map(|(m, p)| (m, *p)).collect();
        let truth = ray_cast_depth(&refs, &cam, &k);
        prop_assert!(truth.data.iter().any(|d| d.is_finite()));
        for (i, (a, b)) in raster.data.iter().zip(&truth.data).enumerate() {
            prop_assert_eq!(a.is_finite(), b.is_finite(), "coverage differs at pixel {}", i);
            if a.is_finite() {
                prop_assert!(((a - b) / b).abs() < 1e-4, "pixel {}: {} vs {}", i, a, b);
            }
        }
    }

    #[test]
    fn draw_order_does_not_matter(
        boxes in prop::collection::vec(arb_box(), 2..6),
        yaw in 0.0..std::f64::consts::TAU,
        rotate_by in 1usize..5,
        guide_at in 0usize..6,
    ) {
        let k = small_k(48, 40);
        let cam = camera(yaw, 350.0);
        let style = GuideStyle::shaded([200, 60, 30], 0.7).unwrap();
        let items: Vec<RenderItem> = boxes
            .iter()
            .enumerate()
            .map(|(i, (m, p))| if i == guide_at % boxes.len() { RenderItem::guide(m, *p, style) } else { RenderItem::occluder(m, *p) })
            .collect();
        let mut shuffled = items.clone();
        shuffled.rotate_left(rotate_by % items.len());
        shuffled.reverse();
        let (a, b) = (rasterize(&items, &cam, &k), rasterize(&shuffled, &cam, &k));
        prop_assert_eq!(a.depth.data, b.depth.data);
        prop_assert_eq!(a.color.data, b.color.data);
        prop_assert_eq!(a.guide_mask.data, b.guide_mask.data);
    }
}
