mod common;

use common::{box_pair_strategy, box_strategy};
use proptest::prelude::*;
use streamsap::geometry::{iou, iou_matrix, Box3D, Dims, IouKind};

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded((a, b) in box_pair_strategy()) {
        for kind in [IouKind::Bev, IouKind::ThreeD] {
            let ab = iou(&a, &b, kind);
            let ba = iou(&b, &a, kind);
            prop_assert!((ab - ba).abs() <= 1e-12, "{kind:?}: {ab} vs {ba}");
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn iou_is_rigid_motion_invariant(
        (a, b) in box_pair_strategy(),
        shift in (-50.0f64..50.0, -2.0f64..2.0, -50.0f64..50.0),
        rot in -3.2f64..3.2,
        pivot in (-20.0f64..20.0, -20.0f64..20.0),
    ) {
        let shift = [shift.0, shift.1, shift.2];
        let pivot = [pivot.0, pivot.1];
        let (ta, tb) = (a.rigid_transform(shift, rot, pivot), b.rigid_transform(shift, rot, pivot));
        for kind in [IouKind::Bev, IouKind::ThreeD] {
            let before = iou(&a, &b, kind);
            let after = iou(&ta, &tb, kind);
            prop_assert!((before - after).abs() <= 1e-9, "{kind:?}: {before} vs {after}");
        }
    }

    #[test]
    fn self_iou_is_one(a in box_strategy()) {
        prop_assert!((iou(&a, &a, IouKind::Bev) - 1.0).abs() <= 1e-12);
        prop_assert!((iou(&a, &a, IouKind::ThreeD) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn contained_box_gives_volume_ratio(outer in box_strategy(), shrink in 0.1f64..0.9, frac in (-1.0f64..1.0, -1.0f64..1.0)) {
        // Same yaw, scaled down, offset so it stays inside.
        let inner_dims = Dims { h: outer.dims.h * shrink, w: outer.dims.w * shrink, l: outer.dims.l * shrink };
        let slack_l = 0.5 * (outer.dims.l - inner_dims.l) * 0.9;
        let slack_w = 0.5 * (outer.dims.w - inner_dims.w) * 0.9;
        let (s, c) = outer.yaw.sin_cos();
        let (dl, dw) = (frac.0 * slack_l, frac.1 * slack_w);
        let center = [
            outer.center[0] + c * dl + s * dw,
            outer.center[1] - 0.5 * (outer.dims.h - inner_dims.h),
            outer.center[2] - s * dl + c * dw,
        ];
        let inner = Box3D::new(center, inner_dims, outer.yaw);
        let area = |b: &Box3D| b.dims.l * b.dims.w;
        let want = area(&inner) / area(&outer);
        prop_assert_eq!(iou(&inner, &outer, IouKind::Bev), want);
        prop_assert_eq!(iou(&inner, &outer, IouKind::ThreeD), inner.volume() / outer.volume());
    }

    #[test]
    fn matrix_matches_pairwise(rows in proptest::collection::vec(box_strategy(), 0..5), cols in proptest::collection::vec(box_strategy(), 0..5)) {
        let m = iou_matrix(&rows, &cols, IouKind::Bev);
        prop_assert_eq!((m.rows, m.cols), (rows.len(), cols.len()));
        for (i, a) in rows.iter().enumerate() {
            for (j, b) in cols.iter().enumerate() {
                prop_assert_eq!(m.get(i, j), iou(a, b, IouKind::Bev));
            }
        }
    }
}
