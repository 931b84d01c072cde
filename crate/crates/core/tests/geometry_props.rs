use approx::assert_relative_eq;
use proptest::prelude::*;

use yolof_assign::geometry::{
    apply_shift, decode_deltas, generate_anchors, giou, iou, random_shift, AnchorConfig, BoxDelta, BoxXYXY, ImageSize,
    SIZE_DELTA_CLAMP,
};

/// Boxes with integer corners on a small canvas.
fn int_box() -> impl Strategy<Value = BoxXYXY> {
    (0i32..20, 0i32..20, 1i32..12, 1i32..12)
        .prop_map(|(x, y, w, h)| BoxXYXY::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap())
}

fn any_box() -> impl Strategy<Value = BoxXYXY> {
    (-100.0..100.0f64, -100.0..100.0f64, 0.5..80.0f64, 0.5..80.0f64)
        .prop_map(|(x, y, w, h)| BoxXYXY::new(x, y, x + w, y + h).unwrap())
}

fn cells(b: &BoxXYXY) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for y in b.y1 as i32..b.y2 as i32 {
        for x in b.x1 as i32..b.x2 as i32 {
            out.push((x, y));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_matches_rasterized_overlap(a in int_box(), b in int_box()) {
        let ca = cells(&a);
        let cb = cells(&b);
        let inter = ca.iter().filter(|c| cb.contains(c)).count() as f64;
        let union = (ca.len() + cb.len()) as f64 - inter;
        prop_assert_eq!(iou(&a, &b), inter / union);
    }

    #[test]
    fn giou_matches_rasterized_hull(a in int_box(), b in int_box()) {
        let ca = cells(&a);
        let cb = cells(&b);
        let inter = ca.iter().filter(|c| cb.contains(c)).count() as f64;
        let union = (ca.len() + cb.len()) as f64 - inter;
        let hull = BoxXYXY::new(a.x1.min(b.x1), a.y1.min(b.y1), a.x2.max(b.x2), a.y2.max(b.y2)).unwrap();
        let hull_area = cells(&hull).len() as f64;
        let expected = inter / union - (hull_area - union) / hull_area;
        assert_relative_eq!(giou(&a, &b), expected, epsilon = 1e-12);
    }

    #[test]
    fn overlap_bounds_and_symmetry(a in any_box(), b in any_box()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        let g = giou(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&g));
        prop_assert!(g <= v + 1e-12);
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn anchor_count_and_centres(h in 1i64..700, w in 1i64..700, stride in prop::sample::select(vec![8u32, 16, 32, 64])) {
        let cfg = AnchorConfig { stride, ..AnchorConfig::default() };
        let img = ImageSize::new(w, h).unwrap();
        let grid = generate_anchors(&cfg, img).unwrap();
        let rows = (h as u32).div_ceil(stride) as usize;
        let cols = (w as u32).div_ceil(stride) as usize;
        prop_assert_eq!(grid.len(), rows * cols * 5);
        for (i, a) in grid.anchors.iter().enumerate() {
            let (r, c, k) = grid.position_of(i);
            let (cx, cy) = a.center();
            prop_assert_eq!(cx, (c as f64 + 0.5) * stride as f64);
            prop_assert_eq!(cy, (r as f64 + 0.5) * stride as f64);
            prop_assert_eq!(a.width(), cfg.sizes[k]);
        }
    }

    #[test]
    fn anchor_shapes_follow_ratio(ratio in 0.25..4.0f64, size in 8.0..256.0f64) {
        let cfg = AnchorConfig { stride: 16, sizes: vec![size], scale_multipliers: vec![1.0], aspect_ratios: vec![ratio] };
        let grid = generate_anchors(&cfg, ImageSize::new(16, 16).unwrap()).unwrap();
        let a = grid.anchors[0];
        assert_relative_eq!(a.height() / a.width(), ratio, max_relative = 1e-9);
        assert_relative_eq!(a.area(), size * size, max_relative = 1e-9);
    }

    #[test]
    fn shift_keeps_boxes_inside(boxes in prop::collection::vec(any_box(), 0..12), seed: u64, max_shift in 0u32..64) {
        let img = ImageSize::new(160, 120).unwrap();
        let out = random_shift(&boxes, img, max_shift, seed);
        prop_assert_eq!(&out, &random_shift(&boxes, img, max_shift, seed));
        prop_assert!(out.offset.0.unsigned_abs() <= max_shift && out.offset.1.unsigned_abs() <= max_shift);
        prop_assert_eq!(out.boxes.len(), out.kept.len());
        prop_assert!(out.kept.windows(2).all(|w| w[0] < w[1]));
        for b in &out.boxes {
            prop_assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 160.0 && b.y2 <= 120.0);
            prop_assert!(b.area() > 0.0);
        }
    }

    #[test]
    fn zero_shift_is_identity_inside_image(x in 0.0..100.0f64, y in 0.0..60.0f64, w in 1.0..50.0f64, h in 1.0..50.0f64) {
        let img = ImageSize::new(160, 120).unwrap();
        let b = BoxXYXY::new(x, y, x + w, y + h).unwrap();
        let out = apply_shift(&[b], img, 0, 0);
        prop_assert_eq!(out.boxes, vec![b]);
    }

    #[test]
    fn decode_respects_center_clamp(
        a in any_box(),
        dx in -10.0..10.0f64, dy in -10.0..10.0f64, dw in -3.0..10.0f64, dh in -3.0..10.0f64,
        clamp in 1.0..64.0f64,
    ) {
        let out = decode_deltas(&[a], &[BoxDelta::new(dx, dy, dw, dh)], clamp).unwrap()[0];
        let (ax, ay) = a.center();
        let (px, py) = out.center();
        prop_assert!((px - ax).abs() <= clamp + 1e-9);
        prop_assert!((py - ay).abs() <= clamp + 1e-9);
        prop_assert!(out.width() <= a.width() * SIZE_DELTA_CLAMP.exp() * (1.0 + 1e-12));
        let same = decode_deltas(&[a], &[BoxDelta::default()], clamp).unwrap()[0];
        assert_relative_eq!(same.x1, a.x1, epsilon = 1e-9);
        assert_relative_eq!(same.y2, a.y2, epsilon = 1e-9);
    }

    #[test]
    fn box_json_round_trip(b in any_box()) {
        let text = serde_json::to_string(&b).unwrap();
        let back: BoxXYXY = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, b);
    }
}

#[test]
fn translation_example() {
    let img = ImageSize::new(100, 100).unwrap();
    let b = BoxXYXY::new(0., 0., 10., 10.).unwrap();
    assert_eq!(apply_shift(&[b], img, 5, 5).boxes, vec![BoxXYXY::new(5., 5., 15., 15.).unwrap()]);
    assert!(apply_shift(&[b], img, -20, 0).boxes.is_empty());
}
