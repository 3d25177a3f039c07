use std::collections::BTreeMap;

use serde::Serialize;

use super::{Canvas, DynamicSceneLayout};

/// A layout problem. Validation reports these; it never rewrites the layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    OutOfBounds { frame: u32, id: u32 },
    Overlap { frame: u32, id_a: u32, id_b: u32, iou: f64 },
    NonConsecutiveFrames,
    DuplicateId { frame: u32, id: u32 },
    InconsistentName { id: u32 },
}

pub fn validate_dsl(dsl: &DynamicSceneLayout, canvas: Canvas) -> Vec<Violation> {
    let mut out = Vec::new();
    if dsl.frames.iter().enumerate().any(|(i, f)| f.index as usize != i + 1) {
        out.push(Violation::NonConsecutiveFrames);
    }

    let (cw, ch) = (i64::from(canvas.width), i64::from(canvas.height));
    let mut names: BTreeMap<u32, &str> = BTreeMap::new();
    let mut inconsistent: Vec<u32> = Vec::new();
    for frame in &dsl.frames {
        for (n, b) in frame.boxes.iter().enumerate() {
            let (x, y, w, h) = (i64::from(b.x), i64::from(b.y), i64::from(b.w), i64::from(b.h));
            if x < 0 || y < 0 || x + w > cw || y + h > ch {
                out.push(Violation::OutOfBounds { frame: frame.index, id: b.id });
            }
            for other in &frame.boxes[..n] {
                if other.id == b.id {
                    out.push(Violation::DuplicateId { frame: frame.index, id: b.id });
                    continue;
                }
                let iou = other.iou(b);
                if iou > 0.0 {
                    out.push(Violation::Overlap { frame: frame.index, id_a: other.id, id_b: b.id, iou });
                }
            }
            match names.get(&b.id) {
                Some(&first) if first != b.name && !inconsistent.contains(&b.id) => {
                    inconsistent.push(b.id);
                    out.push(Violation::InconsistentName { id: b.id });
                }
                Some(_) => {}
                None => {
                    names.insert(b.id, &b.name);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{BoundingBox, Frame};

    fn one_frame(boxes: Vec<BoundingBox>) -> DynamicSceneLayout {
        DynamicSceneLayout {
            frames: vec![Frame { index: 1, boxes }],
            background: String::new(),
            canvas: Canvas::default(),
            fps: 2.0,
        }
    }

    #[test]
    fn flags_box_past_the_edge() {
        let dsl = one_frame(vec![BoundingBox::new(4, "a", 500, 500, 50, 50)]);
        assert_eq!(validate_dsl(&dsl, Canvas::default()), vec![Violation::OutOfBounds { frame: 1, id: 4 }]);
    }

    #[test]
    fn negative_origin_is_out_of_bounds() {
        let dsl = one_frame(vec![BoundingBox::new(0, "a", -1, 0, 50, 50)]);
        assert_eq!(validate_dsl(&dsl, Canvas::default()).len(), 1);
    }

    #[test]
    fn identical_boxes_overlap_fully() {
        let dsl = one_frame(vec![
            BoundingBox::new(0, "a", 10, 10, 50, 50),
            BoundingBox::new(1, "b", 10, 10, 50, 50),
        ]);
        assert_eq!(
            validate_dsl(&dsl, Canvas::default()),
            vec![Violation::Overlap { frame: 1, id_a: 0, id_b: 1, iou: 1.0 }]
        );
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        let dsl = one_frame(vec![
            BoundingBox::new(0, "a", 0, 0, 50, 50),
            BoundingBox::new(1, "b", 50, 0, 50, 50),
        ]);
        assert!(validate_dsl(&dsl, Canvas::default()).is_empty());
    }

    #[test]
    fn structural_problems_are_reported_not_raised() {
        let dsl = DynamicSceneLayout {
            frames: vec![
                Frame { index: 1, boxes: vec![BoundingBox::new(0, "a", 0, 0, 5, 5)] },
                Frame { index: 3, boxes: vec![BoundingBox::new(0, "b", 0, 0, 5, 5)] },
            ],
            background: String::new(),
            canvas: Canvas::default(),
            fps: 2.0,
        };
        let v = validate_dsl(&dsl, Canvas::default());
        assert!(v.contains(&Violation::NonConsecutiveFrames));
        assert!(v.contains(&Violation::InconsistentName { id: 0 }));
    }
}
