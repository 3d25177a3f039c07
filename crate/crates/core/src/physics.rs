//! Gravity, bounce and perspective predicates over object trajectories.
//!
//! Vertical checks read the top edge of the box (`y` in the layout), so a
//! ground line is where a resting box's top edge would sit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{Canvas, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("{check} needs at least {needed} samples, got {got}")]
    TooFewFrames { check: &'static str, needed: usize, got: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Frame numbers of the samples used.
    pub frames: Vec<u32>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ys: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub dys: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub areas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ground_y: Option<f64>,
    /// First frame after the turn from falling to rising.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bounce_frame: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsVerdict {
    pub property: String,
    pub holds: bool,
    pub evidence: Evidence,
}

fn top_ys(t: &Trajectory) -> Vec<f64> {
    t.samples.iter().map(|s| s.com.y - s.height / 2.0).collect()
}

fn frames(t: &Trajectory) -> Vec<u32> {
    t.samples.iter().map(|s| s.frame).collect()
}

fn diffs(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

fn require(check: &'static str, t: &Trajectory, needed: usize) -> Result<(), PhysicsError> {
    if t.samples.len() < needed {
        return Err(PhysicsError::TooFewFrames { check, needed, got: t.samples.len() });
    }
    Ok(())
}

/// Canvas height minus the height of the object's last box.
pub fn default_ground_y(t: &Trajectory, canvas: Canvas) -> f64 {
    canvas.height as f64 - t.samples.last().map_or(0.0, |s| s.height)
}

/// Falling speeds never drop within a fall. Only samples above the ground
/// line count: the step that lands is cut short by the ground.
pub fn check_gravity(t: &Trajectory, ground_y: f64) -> Result<PhysicsVerdict, PhysicsError> {
    require("gravity", t, 3)?;
    let ys = top_ys(t);
    let end = ys.iter().position(|&y| y >= ground_y).unwrap_or(ys.len());
    let dys = diffs(&ys[..end]);
    let mut holds = true;
    let mut prev_fall: Option<f64> = None;
    for &d in &dys {
        if d > 0.0 {
            if prev_fall.is_some_and(|p| d < p) {
                holds = false;
            }
            prev_fall = Some(d);
        } else {
            prev_fall = None;
        }
    }
    Ok(PhysicsVerdict {
        property: "gravity".into(),
        holds,
        evidence: Evidence { frames: frames(t), ys, dys, ground_y: Some(ground_y), ..Default::default() },
    })
}

/// With `elastic`, the object turns from falling to rising at least once
/// after first coming within one box height of the ground; without it, never.
pub fn check_bounce(t: &Trajectory, ground_y: f64, elastic: bool) -> Result<PhysicsVerdict, PhysicsError> {
    require("bounce", t, 3)?;
    let ys = top_ys(t);
    let dys = diffs(&ys);
    let near = t.samples.iter().zip(&ys).position(|(s, &y)| y >= ground_y - s.height);
    let bounce = near.and_then(|first| (first.max(1)..dys.len()).find(|&k| dys[k - 1] > 0.0 && dys[k] < 0.0));
    let bounce_frame = bounce.map(|k| t.samples[k + 1].frame);
    Ok(PhysicsVerdict {
        property: if elastic { "elastic_bounce" } else { "inelastic" }.into(),
        holds: bounce.is_some() == elastic,
        evidence: Evidence { frames: frames(t), ys, dys, ground_y: Some(ground_y), bounce_frame, ..Default::default() },
    })
}

/// Areas shrink (`receding`) or grow frame over frame. A step counts when it
/// moves the right way by more than `-eps` of the previous area, so `eps = 0`
/// demands strict monotonicity.
pub fn check_perspective(t: &Trajectory, receding: bool, eps: f64) -> Result<PhysicsVerdict, PhysicsError> {
    require("perspective", t, 2)?;
    let areas = t.areas();
    let holds = areas.windows(2).all(|w| {
        let step = if receding { w[0] - w[1] } else { w[1] - w[0] };
        step > -eps * w[0]
    });
    Ok(PhysicsVerdict {
        property: if receding { "receding" } else { "approaching" }.into(),
        holds,
        evidence: Evidence { frames: frames(t), areas, ..Default::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{BoundingBox, DynamicSceneLayout, Frame};

    fn track(ys: &[i32], h: i32) -> Trajectory {
        let frames = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| Frame { index: i as u32 + 1, boxes: vec![BoundingBox::new(0, "ball", 100, y, 50, h)] })
            .collect();
        DynamicSceneLayout::new(frames, "").unwrap().trajectory_of(0).unwrap()
    }

    #[test]
    fn gravity_rules() {
        let ball = track(&[206, 246, 326, 446, 366, 446], 50);
        let v = check_gravity(&ball, 462.0).unwrap();
        assert!(v.holds);
        assert_eq!(v.evidence.dys, vec![40.0, 80.0, 120.0, -80.0, 80.0]);
        assert!(check_gravity(&track(&[100, 100, 100], 50), 462.0).unwrap().holds);
        assert!(!check_gravity(&track(&[100, 140, 160], 50), 462.0).unwrap().holds);
        assert!(matches!(check_gravity(&track(&[1, 2], 50), 462.0), Err(PhysicsError::TooFewFrames { .. })));
    }

    #[test]
    fn gravity_stops_at_ground() {
        // slowing down after touching the ground is not a gravity violation
        assert!(check_gravity(&track(&[300, 400, 462, 470], 50), 462.0).unwrap().holds);
    }

    #[test]
    fn bounce_rules() {
        let ball = track(&[206, 246, 326, 446, 366, 446], 50);
        let v = check_bounce(&ball, 462.0, true).unwrap();
        assert!(v.holds);
        assert_eq!(v.evidence.bounce_frame, Some(5));
        assert!(!check_bounce(&ball, 462.0, false).unwrap().holds);
        let rock = track(&[200, 300, 440, 462, 462], 50);
        assert!(check_bounce(&rock, 462.0, false).unwrap().holds);
        assert!(!check_bounce(&rock, 462.0, true).unwrap().holds);
        // a turn high in the air is a throw, not a bounce
        assert!(!check_bounce(&track(&[100, 120, 80, 60], 50), 462.0, true).unwrap().holds);
    }

    #[test]
    fn perspective_rules() {
        let shrink = |ws: &[i32]| {
            let frames = ws
                .iter()
                .enumerate()
                .map(|(i, &w)| Frame { index: i as u32 + 1, boxes: vec![BoundingBox::new(0, "painting", 100, 100, w, w * 3 / 4)] })
                .collect();
            DynamicSceneLayout::new(frames, "").unwrap().trajectory_of(0).unwrap()
        };
        assert!(check_perspective(&shrink(&[200, 180, 160, 140, 120, 100]), true, 0.0).unwrap().holds);
        assert!(!check_perspective(&shrink(&[100, 100, 100]), true, 0.0).unwrap().holds);
        assert!(check_perspective(&shrink(&[100, 120, 140]), false, 0.0).unwrap().holds);
        assert!(!check_perspective(&shrink(&[200, 180, 181, 140]), true, 0.0).unwrap().holds);
        assert!(check_perspective(&shrink(&[200, 180, 181, 140]), true, 0.05).unwrap().holds);
    }
}
