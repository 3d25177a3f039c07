use super::{BoundingBox, DslError, DynamicSceneLayout, Frame};

/// Resamples a layout to `target_n` frames.
///
/// Output frame `j` (1-based) sits at source position
/// `u = 1 + (j-1)(N-1)/(target_n-1)`. Boxes present in both bracketing
/// keyframes are linearly interpolated (rounded half-up); a box present in
/// only one of them is kept, unchanged, iff `u` rounds to that keyframe.
/// Positions are computed in exact integer arithmetic.
pub fn interpolate_frames(dsl: &DynamicSceneLayout, target_n: usize) -> Result<DynamicSceneLayout, DslError> {
    let n = dsl.frames.len();
    if n < 2 || target_n < n {
        return Err(DslError::TargetTooSmall { source_frames: n, target: target_n });
    }
    let den = (target_n - 1) as i64;
    let mut frames = Vec::with_capacity(target_n);
    for j in 0..target_n {
        let num = j as i64 * (n as i64 - 1);
        let lo = (num / den) as usize;
        let rem = num % den;
        let hi = if rem == 0 { lo } else { lo + 1 };
        let nearest = if 2 * rem >= den { hi } else { lo };
        let (a, b) = (&dsl.frames[lo], &dsl.frames[hi]);

        let mut boxes = Vec::new();
        for ba in &a.boxes {
            match b.get(ba.id) {
                Some(bb) => boxes.push(lerp_box(ba, bb, rem, den)),
                None if nearest == lo => boxes.push(ba.clone()),
                None => {}
            }
        }
        if nearest == hi && hi != lo {
            boxes.extend(b.boxes.iter().filter(|bb| a.get(bb.id).is_none()).cloned());
        }
        frames.push(Frame { index: j as u32 + 1, boxes });
    }
    let fps = dsl.fps * (target_n - 1) as f64 / (n - 1) as f64;
    Ok(DynamicSceneLayout { frames, background: dsl.background.clone(), canvas: dsl.canvas, fps })
}

fn lerp_box(a: &BoundingBox, b: &BoundingBox, rem: i64, den: i64) -> BoundingBox {
    // a + (b - a) * rem / den, rounded half-up
    let lerp = |p: i32, q: i32| -> i32 {
        let scaled = i64::from(p) * den + (i64::from(q) - i64::from(p)) * rem;
        (2 * scaled + den).div_euclid(2 * den) as i32
    };
    BoundingBox {
        id: a.id,
        name: a.name.clone(),
        x: lerp(a.x, b.x),
        y: lerp(a.y, b.y),
        w: lerp(a.w, b.w),
        h: lerp(a.h, b.h),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moving(xs: &[i32]) -> DynamicSceneLayout {
        let frames = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| Frame { index: i as u32 + 1, boxes: vec![BoundingBox::new(0, "ball", x, 100, 50, 50)] })
            .collect();
        DynamicSceneLayout::new(frames, "garden").unwrap()
    }

    #[test]
    fn same_count_is_identity() {
        let d = moving(&[0, 80, 160, 240, 320, 400]);
        assert_eq!(interpolate_frames(&d, 6).unwrap(), d);
    }

    #[test]
    fn midpoint_sample() {
        let d = moving(&[0, 80, 160, 240, 320, 400]);
        let out = interpolate_frames(&d, 11).unwrap();
        assert_eq!(out.num_frames(), 11);
        assert_eq!(out.frames[1].boxes[0].x, 40);
        assert_eq!(out.frames[10].boxes[0].x, 400);
        assert_eq!(out.fps, 4.0);
    }

    #[test]
    fn too_small_target() {
        let d = moving(&[0, 80, 160]);
        assert!(matches!(interpolate_frames(&d, 2), Err(DslError::TargetTooSmall { .. })));
        let single = moving(&[0]);
        assert!(matches!(interpolate_frames(&single, 4), Err(DslError::TargetTooSmall { .. })));
    }

    #[test]
    fn late_appearance_follows_nearest_keyframe() {
        // object 1 exists only in source frames 4..=6
        let frames = (1..=6)
            .map(|k| {
                let mut boxes = vec![BoundingBox::new(0, "a", 0, 0, 10, 10)];
                if k >= 4 {
                    boxes.push(BoundingBox::new(1, "b", 100, 100, 10, 10));
                }
                Frame { index: k, boxes }
            })
            .collect();
        let d = DynamicSceneLayout::new(frames, "").unwrap();
        let out = interpolate_frames(&d, 16).unwrap();
        for (j, f) in out.frames.iter().enumerate() {
            // u = 1 + j/3 for 0-based j; round half-up
            let u = 1.0 + j as f64 / 3.0;
            let expected = (u + 0.5).floor() >= 4.0;
            assert_eq!(f.get(1).is_some(), expected, "output frame {}", j + 1);
        }
    }
}
