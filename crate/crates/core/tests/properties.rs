//! Property-based invariants.

use ndarray::Array2;
use proptest::prelude::*;
use styleaug::augment::{apply_geometric, GeometricTransform};
use styleaug::dataset::{rasterize_polygons, BinaryMask, Image, Polygon, Sample};
use styleaug::evaluate::{binarize, dice, iou};
use styleaug::stylizer::{blend_embeddings, StyleEmbedding};

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(any::<bool>(), h * w),
            proptest::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(a, b)| {
                (
                    BinaryMask::from_fn(h, w, |i, j| a[i * w + j]),
                    BinaryMask::from_fn(h, w, |i, j| b[i * w + j]),
                )
            })
    })
}

fn transform() -> impl Strategy<Value = GeometricTransform> {
    (0u8..4, any::<bool>(), any::<bool>()).prop_map(|(q, h, v)| GeometricTransform::new(q, h, v).unwrap())
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_symmetric((a, b) in mask_pair()) {
        let (i, d) = (iou(&a, &b).unwrap(), dice(&a, &b).unwrap());
        prop_assert!((0.0..=1.0).contains(&i) && (0.0..=1.0).contains(&d));
        prop_assert_eq!(i, iou(&b, &a).unwrap());
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert!(d >= i);
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn binarize_is_monotone_in_threshold(
        probs in proptest::collection::vec(0.0f64..=1.0, 36),
        t1 in 0.01f64..0.99,
        t2 in 0.01f64..0.99,
    ) {
        let p = Array2::from_shape_vec((6, 6), probs).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (a, b) = (binarize(&p, lo).unwrap(), binarize(&p, hi).unwrap());
        for i in 0..6 {
            for j in 0..6 {
                prop_assert!(!b.get(i, j) || a.get(i, j));
                prop_assert_eq!(a.get(i, j), p[[i, j]] >= lo);
            }
        }
    }

    #[test]
    fn transforms_form_a_group(a in transform(), b in transform()) {
        prop_assert_eq!(a.then(&a.inverse()).matrix(), GeometricTransform::IDENTITY.matrix());
        let c = a.then(&b);
        prop_assert!(GeometricTransform::all().any(|t| t.matrix() == c.matrix()));
    }

    #[test]
    fn composed_application_matches_composition(
        bits in proptest::collection::vec(any::<bool>(), 30),
        a in transform(),
        b in transform(),
    ) {
        let mask = BinaryMask::from_fn(5, 6, |i, j| bits[i * 6 + j]);
        let image = Image::from_fn(5, 6, |i, j, c| (i * 18 + j * 3 + c) as f64 / 90.0);
        let s = Sample::new(image, mask, "p").unwrap();
        let twice = apply_geometric(&apply_geometric(&s, a), b);
        let once = apply_geometric(&s, a.then(&b));
        prop_assert_eq!(&twice.mask, &once.mask);
        prop_assert_eq!(&twice.image, &once.image);
        prop_assert_eq!(apply_geometric(&twice, a.then(&b).inverse()).mask, s.mask);
    }

    #[test]
    fn blend_endpoints_are_exact(
        c in proptest::collection::vec(-10.0f64..10.0, 5),
        s in proptest::collection::vec(-10.0f64..10.0, 5),
    ) {
        let (ce, se) = (StyleEmbedding::new(c).unwrap(), StyleEmbedding::new(s).unwrap());
        prop_assert_eq!(blend_embeddings(&ce, &se, 0.0).unwrap(), ce.clone());
        prop_assert_eq!(blend_embeddings(&ce, &se, 1.0).unwrap(), se);
    }

    #[test]
    fn rasterization_commutes_with_integer_translation(
        pts in proptest::collection::vec((2.0f64..14.0, 2.0f64..14.0), 3..8),
        dx in 0usize..8,
        dy in 0usize..8,
    ) {
        let poly = Polygon::new(pts.clone()).unwrap();
        let moved = Polygon::new(pts.iter().map(|&(x, y)| (x + dx as f64, y + dy as f64)).collect()).unwrap();
        let a = rasterize_polygons(&[poly], 24, 24);
        let b = rasterize_polygons(&[moved], 24, 24);
        for i in 0..16 {
            for j in 0..16 {
                prop_assert_eq!(a.get(i, j), b.get(i + dy, j + dx));
            }
        }
        prop_assert_eq!(a.count_ones(), b.count_ones());
    }
}
