//! Attention energies for layout grounding.
//!
//! `E_topk = -w_fg * Topk(A on M) + w_bg * Topk(A off M)` where `Topk` is the
//! mean of the `k` largest values in a region and `k` is a fixed fraction of
//! the region size. `E_CoM` matches the center of mass of the attention map
//! to that of the box mask, both in position and in frame-to-frame velocity.
//! Centers of mass are in cell units, cell `(i, j)` sitting at `(j + 0.5, i + 0.5)`.

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{round_half_up, BoundingBox, Canvas, Point};

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("map has zero total mass")]
    ZeroMass,
    #[error("attention map must be at least 2x2 with finite nonnegative entries")]
    InvalidMap,
    #[error("no (object, frame) terms to average")]
    NoTerms,
    #[error("invalid energy config: {0}")]
    InvalidConfig(&'static str),
}

/// A nonnegative `H x W` attention map, `H, W >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap(Array2<f64>);

impl AttentionMap {
    pub fn new(values: Array2<f64>) -> Result<Self, EnergyError> {
        let (h, w) = values.dim();
        if h < 2 || w < 2 || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EnergyError::InvalidMap);
        }
        Ok(Self(values))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Binary box mask at latent resolution, stored as its row and column span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxMask {
    height: usize,
    width: usize,
    rows: Range<usize>,
    cols: Range<usize>,
}

impl BoxMask {
    pub fn new(height: usize, width: usize, rows: Range<usize>, cols: Range<usize>) -> Self {
        let rows = rows.start.min(height)..rows.end.min(height);
        let cols = cols.start.min(width)..cols.end.min(width);
        if rows.is_empty() || cols.is_empty() {
            return Self::empty(height, width);
        }
        Self { height, width, rows, cols }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, rows: 0..0, cols: 0..0 }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, rows: 0..height, cols: 0..width }
    }

    /// Recovers a mask from a 0/1 matrix whose ones form a rectangle.
    pub fn from_array(values: ArrayView2<'_, f64>) -> Option<Self> {
        let (h, w) = values.dim();
        let ones: Vec<(usize, usize)> =
            values.indexed_iter().filter(|(_, v)| **v != 0.0).map(|(ij, _)| ij).collect();
        if values.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return None;
        }
        let Some(&(r0, c0)) = ones.first() else {
            return Some(Self::empty(h, w));
        };
        let r1 = ones.iter().map(|p| p.0).max()? + 1;
        let c1 = ones.iter().map(|p| p.1).max()? + 1;
        let c0 = ones.iter().map(|p| p.1).min().unwrap_or(c0);
        let mask = Self::new(h, w, r0..r1, c0..c1);
        (mask.count() == ones.len()).then_some(mask)
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn cols(&self) -> Range<usize> {
        self.cols.clone()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.rows.contains(&i) && self.cols.contains(&j)
    }

    pub fn count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |(i, j)| f64::from(u8::from(self.contains(i, j))))
    }

    /// Center of the filled rectangle, in cell units.
    pub fn com(&self) -> Result<Point, EnergyError> {
        if self.is_empty() {
            return Err(EnergyError::ZeroMass);
        }
        Ok(Point {
            x: (self.cols.start + self.cols.end) as f64 / 2.0,
            y: (self.rows.start + self.rows.end) as f64 / 2.0,
        })
    }
}

/// Cell `(i, j)` is inside iff its center lies in `[x, x+w) x [y, y+h)` after
/// clipping the box to the canvas.
pub fn rasterize_mask(b: &BoundingBox, canvas: Canvas, height: usize, width: usize) -> BoxMask {
    let (cw, ch) = (f64::from(canvas.width), f64::from(canvas.height));
    let x0 = f64::from(b.x).max(0.0);
    let x1 = (f64::from(b.x) + f64::from(b.w)).min(cw);
    let y0 = f64::from(b.y).max(0.0);
    let y1 = (f64::from(b.y) + f64::from(b.h)).min(ch);
    let span = |lo: f64, hi: f64, n: usize, extent: f64| -> Range<usize> {
        let inside = |k: usize| {
            let c = (k as f64 + 0.5) * extent / n as f64;
            c >= lo && c < hi
        };
        let first = (0..n).find(|&k| inside(k));
        match first {
            Some(s) => s..(s..n).take_while(|&k| inside(k)).last().map_or(s, |e| e + 1),
            None => 0..0,
        }
    };
    BoxMask::new(height, width, span(y0, y1, height, ch), span(x0, x1, width, cw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub w_fg: f64,
    pub w_bg: f64,
    pub topk_fraction: f64,
    pub com_weight: f64,
    pub guidance_scale: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self { w_fg: 1.0, w_bg: 4.0, topk_fraction: 0.75, com_weight: 0.03, guidance_scale: 5.0 }
    }
}

impl EnergyConfig {
    /// Weights must be nonnegative (zero switches a term off) and the top-k
    /// fraction must lie in `(0, 1]`.
    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.topk_fraction > 0.0 && self.topk_fraction <= 1.0) {
            return Err(EnergyError::InvalidConfig("topk_fraction must be in (0, 1]"));
        }
        for (v, what) in [
            (self.w_fg, "w_fg must be >= 0"),
            (self.w_bg, "w_bg must be >= 0"),
            (self.com_weight, "com_weight must be >= 0"),
            (self.guidance_scale, "guidance_scale must be >= 0"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EnergyError::InvalidConfig(what));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_topk: f64,
    pub e_com: f64,
    /// `e_topk + com_weight * e_com`; the guidance scale is applied at the update.
    pub e_total: f64,
}

/// `max(1, round_half_up(fraction * count))`, capped at `count`; zero for an empty region.
pub fn topk_count(fraction: f64, count: usize) -> usize {
    if count == 0 {
        return 0;
    }
    (round_half_up(fraction * count as f64) as usize).clamp(1, count)
}

fn check_shape(a: &ArrayView2<'_, f64>, m: &BoxMask) -> Result<(), EnergyError> {
    if a.dim() != m.dim() {
        return Err(EnergyError::ShapeMismatch { expected: m.dim(), found: a.dim() });
    }
    Ok(())
}

/// Flat row-major indices of the `k` largest values in the region, ties
/// broken by row-major order.
fn select_topk(a: &ArrayView2<'_, f64>, m: &BoxMask, inside: bool, fraction: f64) -> Vec<usize> {
    let w = a.ncols();
    let mut idx: Vec<usize> = (0..a.len()).filter(|&p| m.contains(p / w, p % w) == inside).collect();
    let k = topk_count(fraction, idx.len());
    idx.sort_by(|&p, &q| a[(q / w, q % w)].total_cmp(&a[(p / w, p % w)]));
    idx.truncate(k);
    idx
}

/// Energy and (sub)gradient of the top-k term in one pass.
pub fn e_topk_with_grad(
    a: ArrayView2<'_, f64>,
    m: &BoxMask,
    cfg: &EnergyConfig,
) -> Result<(f64, Array2<f64>), EnergyError> {
    check_shape(&a, m)?;
    let w = a.ncols();
    let mut grad = Array2::zeros(a.dim());
    let mut energy = 0.0;
    for (inside, weight) in [(true, -cfg.w_fg), (false, cfg.w_bg)] {
        let sel = select_topk(&a, m, inside, cfg.topk_fraction);
        if sel.is_empty() {
            continue;
        }
        let k = sel.len() as f64;
        let mean = sel.iter().map(|&p| a[(p / w, p % w)]).sum::<f64>() / k;
        energy += weight * mean;
        for p in sel {
            grad[(p / w, p % w)] += weight / k;
        }
    }
    Ok((energy, grad))
}

pub fn e_topk(a: ArrayView2<'_, f64>, m: &BoxMask, cfg: &EnergyConfig) -> Result<f64, EnergyError> {
    e_topk_with_grad(a, m, cfg).map(|(e, _)| e)
}

pub fn grad_e_topk(a: ArrayView2<'_, f64>, m: &BoxMask, cfg: &EnergyConfig) -> Result<Array2<f64>, EnergyError> {
    e_topk_with_grad(a, m, cfg).map(|(_, g)| g)
}

pub fn com_of_map(a: ArrayView2<'_, f64>) -> Result<Point, EnergyError> {
    let total: f64 = a.sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(EnergyError::ZeroMass);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((i, j), v) in a.indexed_iter() {
        sx += v * (j as f64 + 0.5);
        sy += v * (i as f64 + 0.5);
    }
    Ok(Point { x: sx / total, y: sy / total })
}

/// Adds `dE/dp · dp/dA` to `grad` for the CoM `p` of `a`, given `dE/dp`.
fn backprop_com(a: ArrayView2<'_, f64>, p: Point, d_p: Point, grad: &mut Array2<f64>) {
    let total: f64 = a.sum();
    for ((i, j), g) in grad.indexed_iter_mut() {
        *g += (d_p.x * (j as f64 + 0.5 - p.x) + d_p.y * (i as f64 + 0.5 - p.y)) / total;
    }
}

fn sub(a: Point, b: Point) -> Point {
    Point { x: a.x - b.x, y: a.y - b.y }
}

fn norm2(p: Point) -> f64 {
    p.x * p.x + p.y * p.y
}

/// `|pa_t - pm_t|^2 + |(pa_t1 - pa_t) - (pm_t1 - pm_t)|^2` on precomputed centers.
pub fn com_pair_energy(pa_t: Point, pa_t1: Point, pm_t: Point, pm_t1: Point) -> f64 {
    let velocity = sub(sub(pa_t1, pa_t), sub(pm_t1, pm_t));
    norm2(sub(pa_t, pm_t)) + norm2(velocity)
}

pub fn e_com(
    a_t: ArrayView2<'_, f64>,
    a_t1: ArrayView2<'_, f64>,
    m_t: &BoxMask,
    m_t1: &BoxMask,
) -> Result<f64, EnergyError> {
    check_shape(&a_t, m_t)?;
    check_shape(&a_t1, m_t1)?;
    Ok(com_pair_energy(com_of_map(a_t)?, com_of_map(a_t1)?, m_t.com()?, m_t1.com()?))
}

pub fn grad_e_com(
    a_t: ArrayView2<'_, f64>,
    a_t1: ArrayView2<'_, f64>,
    m_t: &BoxMask,
    m_t1: &BoxMask,
) -> Result<(Array2<f64>, Array2<f64>), EnergyError> {
    check_shape(&a_t, m_t)?;
    check_shape(&a_t1, m_t1)?;
    let (pa_t, pa_t1) = (com_of_map(a_t)?, com_of_map(a_t1)?);
    let (pm_t, pm_t1) = (m_t.com()?, m_t1.com()?);
    let r = sub(pa_t, pm_t);
    let v = sub(sub(pa_t1, pa_t), sub(pm_t1, pm_t));
    let d_t = Point { x: 2.0 * (r.x - v.x), y: 2.0 * (r.y - v.y) };
    let d_t1 = Point { x: 2.0 * v.x, y: 2.0 * v.y };
    let mut g_t = Array2::zeros(a_t.dim());
    let mut g_t1 = Array2::zeros(a_t1.dim());
    backprop_com(a_t, pa_t, d_t, &mut g_t);
    backprop_com(a_t1, pa_t1, d_t1, &mut g_t1);
    Ok((g_t, g_t1))
}

/// One (object, frame) entry for [`total_energy`]. The substrate has a
/// single attention layer, so there is exactly one map per entry.
#[derive(Debug, Clone, Copy)]
pub struct FrameTerm<'a> {
    pub attention: ArrayView2<'a, f64>,
    pub mask: &'a BoxMask,
}

/// Gradients laid out like the input tracks: `[object][frame]`.
pub type TrackGradients = Vec<Vec<Option<Array2<f64>>>>;

/// Energy over `tracks[object][frame]` (absent entries are `None`).
///
/// The top-k term is averaged over all present entries. Each present entry
/// also contributes a CoM position term, plus a velocity term when the same
/// object is present in the next frame; these are averaged over the same
/// entries, so the final frame contributes only its position term.
pub fn total_energy_with_grad(
    tracks: &[Vec<Option<FrameTerm<'_>>>],
    cfg: &EnergyConfig,
) -> Result<(EnergyBreakdown, TrackGradients), EnergyError> {
    let n_terms = tracks.iter().flatten().filter(|t| t.is_some()).count();
    if n_terms == 0 {
        return Err(EnergyError::NoTerms);
    }
    let norm = n_terms as f64;
    let mut grads: TrackGradients = tracks.iter().map(|t| vec![None; t.len()]).collect();
    let (mut e_tk, mut e_cm) = (0.0, 0.0);

    for (track, tgrad) in tracks.iter().zip(grads.iter_mut()) {
        let mut centers: Vec<Option<(Point, Point)>> = Vec::with_capacity(track.len());
        for (term, slot) in track.iter().zip(tgrad.iter_mut()) {
            let Some(term) = term else {
                centers.push(None);
                continue;
            };
            let (e, mut g) = e_topk_with_grad(term.attention, term.mask, cfg)?;
            e_tk += e;
            g.mapv_inplace(|v| v / norm);
            *slot = Some(g);
            centers.push(if cfg.com_weight > 0.0 {
                Some((com_of_map(term.attention)?, term.mask.com()?))
            } else {
                None
            });
        }
        if cfg.com_weight == 0.0 {
            continue;
        }
        // dE/dp for every present frame, then one backprop pass per map.
        let mut d_p: Vec<Point> = vec![Point { x: 0.0, y: 0.0 }; track.len()];
        for t in 0..track.len() {
            let Some((pa, pm)) = centers[t] else { continue };
            let r = sub(pa, pm);
            e_cm += norm2(r);
            d_p[t].x += 2.0 * r.x;
            d_p[t].y += 2.0 * r.y;
            if let Some(Some((pa1, pm1))) = centers.get(t + 1) {
                let v = sub(sub(*pa1, pa), sub(*pm1, pm));
                e_cm += norm2(v);
                d_p[t].x -= 2.0 * v.x;
                d_p[t].y -= 2.0 * v.y;
                d_p[t + 1].x += 2.0 * v.x;
                d_p[t + 1].y += 2.0 * v.y;
            }
        }
        let scale = cfg.com_weight / norm;
        for (t, term) in track.iter().enumerate() {
            let (Some(term), Some((pa, _))) = (term, centers[t]) else { continue };
            let g = tgrad[t].as_mut().expect("set above");
            let d = Point { x: d_p[t].x * scale, y: d_p[t].y * scale };
            backprop_com(term.attention, pa, d, g);
        }
    }

    let e_topk = e_tk / norm;
    let e_com = e_cm / norm;
    Ok((EnergyBreakdown { e_topk, e_com, e_total: e_topk + cfg.com_weight * e_com }, grads))
}

pub fn total_energy(tracks: &[Vec<Option<FrameTerm<'_>>>], cfg: &EnergyConfig) -> Result<EnergyBreakdown, EnergyError> {
    total_energy_with_grad(tracks, cfg).map(|(e, _)| e)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    use super::*;

    fn cfg() -> EnergyConfig {
        EnergyConfig::default()
    }

    #[test]
    fn k_rounding() {
        assert_eq!(topk_count(0.75, 1), 1);
        assert_eq!(topk_count(0.75, 3), 2); // 2.25 -> 2
        assert_eq!(topk_count(0.75, 2), 2); // 1.5 -> 2
        assert_eq!(topk_count(0.75, 0), 0);
        assert_eq!(topk_count(0.01, 10), 1);
        assert_eq!(topk_count(1.0, 10), 10);
    }

    #[test]
    fn rasterize_examples() {
        let c = Canvas::default();
        assert_eq!(rasterize_mask(&BoundingBox::new(0, "a", 0, 0, 512, 512), c, 8, 8), BoxMask::full(8, 8));
        let ball = rasterize_mask(&BoundingBox::new(0, "a", 0, 206, 50, 50), c, 16, 16);
        assert_eq!((ball.rows(), ball.cols()), (6..8, 0..2));
        let off = rasterize_mask(&BoundingBox::new(0, "a", 600, 600, 50, 50), c, 16, 16);
        assert!(off.is_empty());
        let neg = rasterize_mask(&BoundingBox::new(0, "a", -100, -100, 50, 50), c, 16, 16);
        assert!(neg.is_empty());
    }

    #[test]
    fn rasterize_matches_cell_center_enumeration() {
        let c = Canvas::new(512, 384).unwrap();
        let boxes = [(0, 0, 37, 90), (-20, 13, 200, 30), (300, 300, 400, 400), (17, 250, 5, 5), (100, 100, 1, 1)];
        for (x, y, w, h) in boxes {
            let b = BoundingBox::new(0, "a", x, y, w, h);
            let m = rasterize_mask(&b, c, 12, 20);
            for i in 0..12 {
                for j in 0..20 {
                    let cx = (j as f64 + 0.5) * 512.0 / 20.0;
                    let cy = (i as f64 + 0.5) * 384.0 / 12.0;
                    let inside = cx >= f64::from(x.max(0))
                        && cx < f64::from((x + w).min(512))
                        && cy >= f64::from(y.max(0))
                        && cy < f64::from((y + h).min(384));
                    assert_eq!(m.contains(i, j), inside, "{x},{y},{w},{h} @ {i},{j}");
                }
            }
        }
    }

    #[test]
    fn topk_two_by_two() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let m = BoxMask::new(2, 2, 0..1, 0..1);
        let (e, g) = e_topk_with_grad(a.view(), &m, &cfg()).unwrap();
        assert_eq!(e, -1.0);
        // k_bg = round(2.25) = 2, ties broken row-major: (0,1) then (1,0)
        assert_eq!(g, array![[-1.0, 2.0], [2.0, 0.0]]);
    }

    #[test]
    fn topk_constant_map() {
        let a = Array2::from_elem((6, 5), 0.3);
        let m = BoxMask::new(6, 5, 1..3, 2..5);
        assert_abs_diff_eq!(e_topk(a.view(), &m, &cfg()).unwrap(), 3.0 * 0.3, epsilon = 1e-12);
    }

    #[test]
    fn topk_indicator_map() {
        let m = BoxMask::new(8, 8, 2..5, 1..4);
        let a = m.to_array();
        assert_eq!(e_topk(a.view(), &m, &cfg()).unwrap(), -1.0);
    }

    #[test]
    fn topk_degenerate_masks() {
        let a = array![[0.2, 0.4], [0.6, 0.8]];
        let empty = BoxMask::empty(2, 2);
        let g = grad_e_topk(a.view(), &empty, &cfg()).unwrap();
        assert!(g.iter().all(|v| *v >= 0.0));
        let full = BoxMask::full(2, 2);
        let e = e_topk(a.view(), &full, &cfg()).unwrap();
        assert_abs_diff_eq!(e, -(0.8 + 0.6 + 0.4) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = Array2::zeros((3, 3));
        let m = BoxMask::full(4, 4);
        assert!(matches!(e_topk(a.view(), &m, &cfg()), Err(EnergyError::ShapeMismatch { .. })));
    }

    #[test]
    fn com_examples() {
        assert_eq!(com_of_map(Array2::from_elem((2, 2), 1.0).view()).unwrap(), Point { x: 1.0, y: 1.0 });
        let mut delta = Array2::zeros((4, 5));
        delta[(2, 3)] = 1.0;
        assert_eq!(com_of_map(delta.view()).unwrap(), Point { x: 3.5, y: 2.5 });
        assert_eq!(com_of_map(array![[1.0, 3.0]].view()).unwrap().x, 1.25);
        assert_eq!(com_of_map(Array2::zeros((2, 2)).view()), Err(EnergyError::ZeroMass));
    }

    #[test]
    fn com_pair_examples() {
        let p = |x, y| Point { x, y };
        assert_eq!(com_pair_energy(p(30., 231.), p(110., 271.), p(25., 231.), p(105., 271.)), 25.0);
        assert_eq!(com_pair_energy(p(1., 2.), p(3., 4.), p(1., 2.), p(3., 4.)), 0.0);
    }

    #[test]
    fn com_energy_on_matching_maps_is_zero() {
        let m0 = BoxMask::new(8, 8, 1..3, 1..3);
        let m1 = BoxMask::new(8, 8, 2..4, 3..5);
        let (a0, a1) = (m0.to_array(), m1.to_array());
        assert_eq!(e_com(a0.view(), a1.view(), &m0, &m1).unwrap(), 0.0);
        let (g0, g1) = grad_e_com(a0.view(), a1.view(), &m0, &m1).unwrap();
        assert!(g0.iter().chain(g1.iter()).all(|v| *v == 0.0));
        assert_eq!(e_com(a0.view(), a1.view(), &BoxMask::empty(8, 8), &m1), Err(EnergyError::ZeroMass));
    }

    #[test]
    fn mask_from_array() {
        let m = BoxMask::from_array(array![[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]].view()).unwrap();
        assert_eq!((m.rows(), m.cols()), (0..2, 1..3));
        assert!(BoxMask::from_array(array![[1.0, 0.0], [0.0, 1.0]].view()).is_none());
        assert!(BoxMask::from_array(array![[0.0, 0.0], [0.0, 0.0]].view()).unwrap().is_empty());
    }

    #[test]
    fn total_energy_examples() {
        let masks: Vec<BoxMask> = (0..4).map(|t| BoxMask::new(8, 8, 2..4, t..t + 2)).collect();
        let maps: Vec<Array2<f64>> = masks.iter().map(BoxMask::to_array).collect();
        let track: Vec<Option<FrameTerm>> =
            maps.iter().zip(&masks).map(|(a, m)| Some(FrameTerm { attention: a.view(), mask: m })).collect();
        let e = total_energy(std::slice::from_ref(&track), &cfg()).unwrap();
        assert_eq!(e.e_total, -1.0);
        assert_eq!(e.e_com, 0.0);

        // averaging over objects
        let noisy: Vec<Array2<f64>> = maps.iter().map(|a| a.mapv(|v| v + 0.1)).collect();
        let track2: Vec<Option<FrameTerm>> =
            noisy.iter().zip(&masks).map(|(a, m)| Some(FrameTerm { attention: a.view(), mask: m })).collect();
        let e2 = total_energy(std::slice::from_ref(&track2), &cfg()).unwrap();
        let both = total_energy(&[track, track2], &cfg()).unwrap();
        assert_abs_diff_eq!(both.e_total, (e.e_total + e2.e_total) / 2.0, epsilon = 1e-12);

        let no_com = EnergyConfig { com_weight: 0.0, ..cfg() };
        let t3: Vec<Option<FrameTerm>> =
            noisy.iter().zip(&masks).map(|(a, m)| Some(FrameTerm { attention: a.view(), mask: m })).collect();
        let e3 = total_energy(&[t3], &no_com).unwrap();
        assert_eq!(e3.e_total, e3.e_topk);

        assert_eq!(total_energy(&[vec![None, None]], &cfg()), Err(EnergyError::NoTerms));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(EnergyConfig { topk_fraction: 0.0, ..cfg() }.validate().is_err());
        assert!(EnergyConfig { w_bg: -1.0, ..cfg() }.validate().is_err());
    }
}
