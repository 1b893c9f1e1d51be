//! Normalized bounding boxes and the anchor-relative box transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[cx, cy, w, h]` in fractions of the image size.
///
/// Centers may leave `[0, 1]` for partially visible objects; width and height
/// are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite())
        {
            return Err(Error::InvalidBox(format!("non-finite field in {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "width and height must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BBox {
            cx: a[0],
            cy: a[1],
            w: a[2],
            h: a[3],
        }
    }
}

/// Offsets `px, py` and log-scale factors `pw, ph` taking an anchor box to a target box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformParams {
    pub px: f64,
    pub py: f64,
    pub pw: f64,
    pub ph: f64,
}

impl TransformParams {
    pub const ZERO: TransformParams = TransformParams {
        px: 0.0,
        py: 0.0,
        pw: 0.0,
        ph: 0.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.px, self.py, self.pw, self.ph]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        TransformParams {
            px: a[0],
            py: a[1],
            pw: a[2],
            ph: a[3],
        }
    }
}

/// Shifts the anchor center additively and scales its size exponentially.
pub fn apply_transform(anchor: &BBox, p: &TransformParams) -> BBox {
    BBox {
        cx: anchor.cx + p.px,
        cy: anchor.cy + p.py,
        w: anchor.w * p.pw.exp(),
        h: anchor.h * p.ph.exp(),
    }
}

/// Exact inverse of [`apply_transform`]; used to build regression targets.
pub fn infer_transform(anchor: &BBox, target: &BBox) -> Result<TransformParams> {
    anchor.validate()?;
    target.validate()?;
    Ok(TransformParams {
        px: target.cx - anchor.cx,
        py: target.cy - anchor.cy,
        pw: (target.w / anchor.w).ln(),
        ph: (target.h / anchor.h).ln(),
    })
}

fn frame_distance(a: &BBox, b: &BBox) -> f64 {
    (a.cx - b.cx).abs() - (a.w + b.w) / 2.0 + (a.cy - b.cy).abs() - (a.h + b.h) / 2.0
}

/// Size-aware proximity of two box trajectories over the same frames.
///
/// Lower means closer; negative values indicate overlap. The minimum over the
/// window is taken, so a single close frame dominates.
///
/// # Panics
/// If the windows differ in length or are empty.
pub fn distance_score(win_i: &[BBox], win_j: &[BBox]) -> f64 {
    assert_eq!(
        win_i.len(),
        win_j.len(),
        "distance_score windows must cover the same frames"
    );
    assert!(!win_i.is_empty(), "distance_score needs at least one frame");
    win_i
        .iter()
        .zip(win_j)
        .map(|(a, b)| frame_distance(a, b))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    fn close(a: &BBox, e: &BBox, tol: f64) -> bool {
        a.to_array()
            .iter()
            .zip(e.to_array())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn apply_transform_examples() {
        let anchor = b(0.5, 0.5, 0.2, 0.1);
        assert_eq!(apply_transform(&anchor, &TransformParams::ZERO), anchor);
        let t = apply_transform(&anchor, &TransformParams::from_array([0.1, -0.2, 0.0, 0.0]));
        assert!(close(&t, &b(0.6, 0.3, 0.2, 0.1), 1e-15));
        let t = apply_transform(&anchor, &TransformParams::from_array([0.0, 0.0, LN_2, LN_2]));
        assert!(close(&t, &b(0.5, 0.5, 0.4, 0.2), 1e-15));
    }

    #[test]
    fn infer_transform_examples() {
        let anchor = b(0.5, 0.5, 0.2, 0.1);
        assert_eq!(
            infer_transform(&anchor, &anchor).unwrap(),
            TransformParams::ZERO
        );
        let p = infer_transform(&anchor, &b(0.6, 0.3, 0.2, 0.1)).unwrap();
        assert!((p.px - 0.1).abs() < 1e-15 && (p.py + 0.2).abs() < 1e-15);
        assert_eq!((p.pw, p.ph), (0.0, 0.0));
        let target = b(0.5, 0.5, 0.1, 0.05);
        let p = infer_transform(&anchor, &target).unwrap();
        assert!((p.pw + LN_2).abs() < 1e-15 && (p.ph + LN_2).abs() < 1e-15);
        assert!(close(&apply_transform(&anchor, &p), &target, 1e-15));
    }

    #[test]
    fn infer_transform_rejects_degenerate_target() {
        let anchor = b(0.5, 0.5, 0.2, 0.1);
        let bad = BBox {
            cx: 0.5,
            cy: 0.5,
            w: 0.0,
            h: 0.1,
        };
        assert!(infer_transform(&anchor, &bad).is_err());
        assert!(BBox::new(0.1, 0.1, 0.1, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.1, 0.1, 0.1).is_err());
    }

    #[test]
    fn distance_score_examples() {
        let s = b(0.5, 0.5, 0.2, 0.2);
        assert!((distance_score(&[s; 3], &[s; 3]) + 0.4).abs() < 1e-15);

        let l = b(0.1, 0.5, 0.1, 0.1);
        let r = b(0.9, 0.5, 0.1, 0.1);
        assert!((distance_score(&[l; 3], &[r; 3]) - 0.6).abs() < 1e-12);

        // only the middle frame is close
        let far = b(0.9, 0.9, 0.1, 0.1);
        let near = b(0.15, 0.5, 0.1, 0.1);
        let wi = [l, l, l];
        let wj = [far, near, far];
        let expected = frame_distance(&l, &near);
        assert_eq!(distance_score(&wi, &wj), expected);
    }

    #[test]
    #[should_panic]
    fn distance_score_length_mismatch_panics() {
        let s = b(0.5, 0.5, 0.2, 0.2);
        distance_score(&[s; 3], &[s; 2]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-0.5..1.5f64, -0.5..1.5f64, 1e-3..1.0f64, 1e-3..1.0f64)
            .prop_map(|(cx, cy, w, h)| BBox { cx, cy, w, h })
    }

    proptest! {
        #[test]
        fn transform_round_trip(anchor in arb_box(), target in arb_box()) {
            let p = infer_transform(&anchor, &target).unwrap();
            let back = apply_transform(&anchor, &p);
            for (x, y) in back.to_array().iter().zip(target.to_array()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn distance_score_symmetric(wi in prop::collection::vec(arb_box(), 3), wj in prop::collection::vec(arb_box(), 3)) {
            prop_assert_eq!(distance_score(&wi, &wj), distance_score(&wj, &wi));
        }
    }
}
