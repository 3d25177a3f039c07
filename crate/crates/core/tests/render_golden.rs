use std::path::PathBuf;

use lvd_core::dsl::{DynamicSceneLayout, Frame};
use lvd_core::guidance::{self, GuidanceSchedule};
use lvd_core::energy::EnergyConfig;
use lvd_core::prompting::InContextExample;
use lvd_core::render::{render_attention_pgm, render_dsl_svg, SvgOptions};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a pinned file. `LVD_BLESS=1` rewrites it instead.
fn check_golden(name: &str, actual: &[u8]) {
    let path = golden(name);
    if std::env::var_os("LVD_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from its golden file");
}

fn ball() -> DynamicSceneLayout {
    InContextExample::defaults().into_iter().find(|e| e.caption.contains("red ball")).unwrap().layout()
}

#[test]
fn ball_svgs() {
    let r = render_dsl_svg(&ball(), &SvgOptions::default());
    assert_eq!(r.frames.len(), 6);
    for (f, x) in r.frames.iter().zip([0, 80, 160, 240, 320, 400]) {
        assert_eq!(f.matches("<rect ").count(), 2, "background plus one box");
        assert!(f.contains(&format!(r#"<rect x="{x}" "#)));
    }
    assert_eq!(r, render_dsl_svg(&ball(), &SvgOptions::default()));
    check_golden("ball_frame1.svg", r.frames[0].as_bytes());
    check_golden("ball_animated.svg", r.animated.as_bytes());
}

#[test]
fn empty_layout_is_blank() {
    let dsl = DynamicSceneLayout::new(vec![Frame { index: 1, boxes: vec![] }, Frame { index: 2, boxes: vec![] }], "void").unwrap();
    let r = render_dsl_svg(&dsl, &SvgOptions::default());
    assert!(r.frames.iter().all(|f| f.matches("<rect ").count() == 1));
    assert!(!r.animated.contains("<animate"));
}

#[test]
fn guided_attention_pgm() {
    let run = guidance::run_guidance(&ball(), &GuidanceSchedule::default(), &EnergyConfig::default(), 16, 16, 0).unwrap();
    let img = render_attention_pgm(run.state.probabilities(0).view(), 2).unwrap();
    assert!(img.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(img.len(), 13 + 32 * 32);
    check_golden("ball_attention_frame1.pgm", &img);
}
