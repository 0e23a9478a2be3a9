mod common;

use freespace::contour::{mask_to_contour, DistanceField, Point};
use freespace::tensor::{Grid, Mask};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = Mask> {
    (2usize..14, 2usize..14).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0u8..2, h * w).prop_map(move |data| Grid { height: h, width: w, data })
    })
}

fn crack_count(m: &Mask) -> usize {
    let mut n = 0;
    for y in 0..m.height {
        for x in 0..m.width {
            n += usize::from(y + 1 < m.height && m.get(y, x) != m.get(y + 1, x));
            n += usize::from(x + 1 < m.width && m.get(y, x) != m.get(y, x + 1));
        }
    }
    n
}

proptest! {
    #[test]
    fn contour_length_counts_cracks(m in mask_strategy()) {
        let c = mask_to_contour(&m).unwrap();
        prop_assert_eq!(c.is_empty(), crack_count(&m) == 0);
        prop_assert!((c.length() - crack_count(&m) as f64).abs() < 1e-9);
    }

    #[test]
    fn distance_field_matches_polyline(m in mask_strategy()) {
        let c = mask_to_contour(&m).unwrap();
        prop_assume!(!c.is_empty());
        let f = DistanceField::from_mask(&m).unwrap();
        for y in 0..m.height {
            for x in 0..m.width {
                let d = c.distance_to(Point::new(y as f64 + 0.5, x as f64 + 0.5));
                prop_assert!((f.at_pixel(y, x) - d).abs() < 1e-9, "({y},{x}) field {} polyline {d}", f.at_pixel(y, x));
            }
        }
    }

    #[test]
    fn mirroring_mirrors_distances(m in mask_strategy()) {
        prop_assume!(crack_count(&m) > 0);
        let (a, b) = (DistanceField::from_mask(&m).unwrap(), DistanceField::from_mask(&m.mirrored()).unwrap());
        for y in 0..m.height {
            for x in 0..m.width {
                prop_assert!((a.at_pixel(y, x) - b.at_pixel(y, m.width - 1 - x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complement_has_same_contour_length(m in mask_strategy()) {
        let inv = Grid { height: m.height, width: m.width, data: m.data.iter().map(|v| 1 - v).collect() };
        let (a, b) = (mask_to_contour(&m).unwrap(), mask_to_contour(&inv).unwrap());
        prop_assert!((a.length() - b.length()).abs() < 1e-9);
    }

    #[test]
    fn uniform_samples_lie_on_contour(m in mask_strategy(), seed in any::<u64>()) {
        let c = mask_to_contour(&m).unwrap();
        prop_assume!(!c.is_empty());
        for p in c.sample_uniform(32, seed) {
            prop_assert!(c.distance_to(p) < 1e-9);
        }
    }
}
