use brickxar_core::geometry::Pose6DoF;
use brickxar_core::model::{
    generate_brick_mesh, generate_demo_model, load_model, parse_ldraw, serialize_model, validate_step_order,
    AssemblyModel, DemoLayout, PlacedBrick,
};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// LDraw text for random bricks; rotations are quarter turns about the
/// vertical axis, which LDraw writes exactly.
fn ldraw_text(bricks: &[(u32, u32, u32, i32, i32, i32, u8)]) -> String {
    const TURNS: [&str; 4] = ["1 0 0 0 1 0 0 0 1", "0 0 1 0 1 0 -1 0 0", "-1 0 0 0 1 0 0 0 -1", "0 0 -1 0 1 0 1 0 0"];
    let mut s = String::from("0 Random model\n");
    for (i, &(w, d, h, x, y, z, turn)) in bricks.iter().enumerate() {
        s += &format!("1 {} {x} {y} {z} {} brick_{w}x{d}x{h}\n0 STEP\n", [1, 4, 14, 15][i % 4], TURNS[turn as usize % 4]);
        if i % 3 == 0 {
            s += &format!("0 !BRICKXAR INFO {} Step {} | note {i}\n", i + 1, i + 1);
        }
    }
    s
}

fn brick_strategy() -> impl Strategy<Value = (u32, u32, u32, i32, i32, i32, u8)> {
    (1u32..4, 1u32..4, 1u32..3, -200i32..200, -400i32..0, -200i32..200, 0u8..4)
}

/// Brute-force flag count: step i is flagged when some earlier step sits
/// strictly higher.
fn brute_force_flags(bottoms: &[f64]) -> usize {
    (0..bottoms.len())
        .filter(|&i| (0..i).any(|j| bottoms[j] > bottoms[i] + 1e-6))
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialization_fixpoint(bricks in prop::collection::vec(brick_strategy(), 1..12)) {
        let model = parse_ldraw(&ldraw_text(&bricks)).unwrap();
        let once = serialize_model(&model);
        let reloaded = load_model(&once).unwrap();
        prop_assert_eq!(&reloaded, &model);
        prop_assert_eq!(serialize_model(&reloaded), once);
    }

    #[test]
    fn step_indices_are_a_permutation_of_one_to_n(bricks in prop::collection::vec(brick_strategy(), 1..20)) {
        let model = parse_ldraw(&ldraw_text(&bricks)).unwrap();
        let mut steps: Vec<u32> = model.bricks().iter().map(|b| b.step_index).collect();
        steps.sort_unstable();
        prop_assert_eq!(steps, (1..=model.final_step()).collect::<Vec<_>>());
        prop_assert_eq!(model.final_step() as usize, bricks.len());
    }

    #[test]
    fn generated_meshes_are_watertight(w in 1u32..7, d in 1u32..7, h in 0.5f64..40.0) {
        let part = generate_brick_mesh(w, d, h).unwrap();
        prop_assert!(part.mesh.is_watertight());
        prop_assert!(part.mesh.signed_volume() > 0.0);
        prop_assert!(part.mesh.vertices.iter().all(|v| part.bbox.contains(v, 0.0)));
        prop_assert_eq!(part.mesh.triangles.len() as u32, 12 + 48 * w * d);
    }

    #[test]
    fn order_report_ignores_vertical_rotation(
        bricks in prop::collection::vec(brick_strategy(), 1..15),
        yaw in -3.2f64..3.2,
        dx in -500.0f64..500.0,
        dy in -500.0f64..500.0,
    ) {
        let model = parse_ldraw(&ldraw_text(&bricks)).unwrap();
        let g = Pose6DoF::from_axis_angle(&Vector3::z(), yaw, Vector3::new(dx, dy, 0.0));
        let moved: Vec<PlacedBrick> = model
            .bricks()
            .iter()
            .map(|b| PlacedBrick { placement: g.compose(&b.placement), ..*b })
            .collect();
        let moved = AssemblyModel::new(model.parts().to_vec(), moved, model.metadata().to_vec(), *model.marker_anchor()).unwrap();
        let a: Vec<u32> = validate_step_order(&model).bridge_exceptions.iter().map(|e| e.step_index).collect();
        let b: Vec<u32> = validate_step_order(&moved).bridge_exceptions.iter().map(|e| e.step_index).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn shuffled_tower_flags_match_brute_force() {
    let layout = DemoLayout { cols: 2, rows: 2, ..DemoLayout::default() };
    let tower = generate_demo_model(20, &layout).unwrap();
    for seed in 0..50 {
        let mut order: Vec<usize> = (0..20).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let bricks: Vec<PlacedBrick> = order
            .iter()
            .enumerate()
            .map(|(new, &old)| PlacedBrick { step_index: new as u32 + 1, ..tower.bricks()[old] })
            .collect();
        let bottoms: Vec<f64> = bricks.iter().map(|b| b.placement.translation.z).collect();
        let shuffled = AssemblyModel::new(tower.parts().to_vec(), bricks, vec![], Pose6DoF::identity()).unwrap();
        assert_eq!(validate_step_order(&shuffled).bridge_exceptions.len(), brute_force_flags(&bottoms), "seed {seed}");
    }
}
