use evderain_core::curves::{
    hilbert_decode, hilbert_encode, morton_decode, morton_encode, order_points, GridPoint, ScanMode,
};
use proptest::prelude::*;

#[test]
fn morton_round_trip_on_16_cubed() {
    let mut seen = vec![false; 4096];
    for x in 0..16 {
        for y in 0..16 {
            for z in 0..16 {
                let k = morton_encode(x, y, z, 4).unwrap();
                assert_eq!(morton_decode(k, 4).unwrap(), (x, y, z));
                assert!(!seen[k as usize]);
                seen[k as usize] = true;
            }
        }
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn hilbert_bijective_on_16_cubed() {
    let mut keys = Vec::with_capacity(4096);
    for x in 0..16 {
        for y in 0..16 {
            for z in 0..16 {
                let k = hilbert_encode(x, y, z, 4).unwrap();
                assert_eq!(hilbert_decode(k, 4).unwrap(), (x, y, z));
                keys.push(k);
            }
        }
    }
    keys.sort_unstable();
    assert_eq!(keys, (0..4096).collect::<Vec<u64>>());
}

#[test]
fn hilbert_unit_steps_on_8_cubed() {
    let cells: Vec<(u32, u32, u32)> = (0..512).map(|k| hilbert_decode(k, 3).unwrap()).collect();
    for (k, pair) in cells.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let d = a.0.abs_diff(b.0) + a.1.abs_diff(b.1) + a.2.abs_diff(b.2);
        assert_eq!(d, 1, "keys {k} and {}", k + 1);
    }
}

#[test]
fn hilbert_adjacency_holds_for_other_depths() {
    for bits in [1u32, 2, 4, 5] {
        let n = 1u64 << (3 * bits);
        let mut prev = hilbert_decode(0, bits).unwrap();
        for k in 1..n {
            let c = hilbert_decode(k, bits).unwrap();
            let d = prev.0.abs_diff(c.0) + prev.1.abs_diff(c.1) + prev.2.abs_diff(c.2);
            assert_eq!(d, 1);
            prev = c;
        }
    }
}

proptest! {
    #[test]
    fn serialization_is_a_window_major_permutation(
        pts in prop::collection::vec((0usize..4, 0u32..64, 0u32..64, 0u32..1024), 1..200),
        mode in 0usize..4,
    ) {
        let points: Vec<GridPoint> = pts.iter().map(|&(window, x, y, z)| GridPoint { window, x, y, z }).collect();
        let mode = ScanMode::ALL[mode];
        let order = order_points(&points, mode, 10).unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..points.len()).collect::<Vec<_>>());
        for pair in order.windows(2) {
            let (a, b) = (points[pair[0]], points[pair[1]]);
            prop_assert!(a.window <= b.window);
            if a.window == b.window {
                let ka = mode.key(a.x, a.y, a.z, 10).unwrap();
                let kb = mode.key(b.x, b.y, b.z, 10).unwrap();
                prop_assert!(ka < kb || (ka == kb && pair[0] < pair[1]));
            }
        }
    }

    #[test]
    fn round_trips_at_random_depths(x in 0u32..(1 << 21), y in 0u32..(1 << 21), z in 0u32..(1 << 21), bits in 1u32..=21) {
        let mask = (1u32 << bits) - 1;
        let (x, y, z) = (x & mask, y & mask, z & mask);
        prop_assert_eq!(morton_decode(morton_encode(x, y, z, bits).unwrap(), bits).unwrap(), (x, y, z));
        prop_assert_eq!(hilbert_decode(hilbert_encode(x, y, z, bits).unwrap(), bits).unwrap(), (x, y, z));
    }
}
