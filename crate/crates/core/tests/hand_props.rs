use brickxar_core::hand::{refine_mask, HandGrid};
use proptest::prelude::*;

fn grid_from(cols: u32, rows: u32, bits: &[bool]) -> HandGrid {
    let mut g = HandGrid::new(cols * 10, rows * 10, 10).unwrap();
    g.occupancy.copy_from_slice(&bits[..(cols * rows) as usize]);
    g
}

/// Empty cells connected to the border, by fixpoint relaxation.
fn border_reachable(g: &HandGrid) -> Vec<bool> {
    let (c, r) = (g.cols as i64, g.rows as i64);
    let mut reach: Vec<bool> = (0..c * r)
        .map(|i| {
            let (x, y) = (i % c, i / c);
            !g.occupancy[i as usize] && (x == 0 || y == 0 || x == c - 1 || y == r - 1)
        })
        .collect();
    loop {
        let mut changed = false;
        for i in 0..c * r {
            if reach[i as usize] || g.occupancy[i as usize] {
                continue;
            }
            let (x, y) = (i % c, i / c);
            let near = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                .iter()
                .any(|&(a, b)| a >= 0 && b >= 0 && a < c && b < r && reach[(b * c + a) as usize]);
            if near {
                reach[i as usize] = true;
                changed = true;
            }
        }
        if !changed {
            return reach;
        }
    }
}

/// Component sizes by union-find over 4-neighbours.
fn component_sizes(cols: usize, occ: &[bool]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..occ.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..occ.len() {
        if !occ[i] {
            continue;
        }
        let right = (i % cols + 1 < cols).then_some(i + 1);
        let down = (i + cols < occ.len()).then_some(i + cols);
        for j in [right, down].into_iter().flatten() {
            if occ[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut size = vec![0; occ.len()];
    for (i, _) in occ.iter().enumerate().filter(|(_, o)| **o) {
        let root = find(&mut parent, i);
        size[root] += 1;
    }
    (0..occ.len()).map(|i| if occ[i] { size[find(&mut parent, i)] } else { 0 }).collect()
}

fn arb_grid() -> impl Strategy<Value = (u32, u32, Vec<bool>, u32)> {
    (1u32..20, 1u32..20, 0.2f64..0.8, 0u32..12).prop_flat_map(|(c, r, density, min)| {
        (Just(c), Just(r), prop::collection::vec(prop::bool::weighted(density), (c * r) as usize), Just(min))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn refine_matches_oracle((cols, rows, bits, min) in arb_grid()) {
        let g = grid_from(cols, rows, &bits);
        let out = refine_mask(&g, min);
        let reach = border_reachable(&g);
        let filled: Vec<bool> = reach.iter().map(|r| !r).collect();
        let sizes = component_sizes(cols as usize, &filled);
        let expect: Vec<bool> = filled.iter().zip(&sizes).map(|(&f, &s)| f && s as u32 >= min).collect();
        prop_assert_eq!(&out.occupancy, &expect);

        // Blob-size floor and idempotence.
        let out_sizes = component_sizes(cols as usize, &out.occupancy);
        prop_assert!(out_sizes.iter().zip(&out.occupancy).all(|(&s, &o)| !o || s as u32 >= min));
        prop_assert_eq!(refine_mask(&out, min), out);
    }

    #[test]
    fn hole_fill_is_monotone((cols, rows, bits, _min) in arb_grid(), extra in prop::collection::vec(any::<bool>(), 400)) {
        let a = grid_from(cols, rows, &bits);
        let sup: Vec<bool> = bits.iter().zip(&extra).map(|(&x, &y)| x || y).collect();
        let b = grid_from(cols, rows, &sup);
        let (fa, fb) = (refine_mask(&a, 0), refine_mask(&b, 0));
        // Filling only adds cells, and a superset fills to a superset.
        prop_assert!(a.occupancy.iter().zip(&fa.occupancy).all(|(&x, &y)| !x || y));
        prop_assert!(fa.occupancy.iter().zip(&fb.occupancy).all(|(&x, &y)| !x || y));
    }
}
