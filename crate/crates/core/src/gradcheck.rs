//! Central finite-difference checks for the energy gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{self, topk_count, BoxMask, EnergyConfig};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Entries whose magnitude is below this share of the largest gradient entry
/// are compared against that floor instead of their own size.
const RELATIVE_FLOOR: f64 = 1e-3;

pub fn central_difference<F>(f: F, x: &Array2<f64>, h: f64) -> Array2<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    let mut probe = x.clone();
    Array2::from_shape_fn(x.dim(), |ij| {
        let orig = probe[ij];
        probe[ij] = orig + h;
        let up = f(&probe);
        probe[ij] = orig - h;
        let down = f(&probe);
        probe[ij] = orig;
        (up - down) / (2.0 * h)
    })
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)` with `floor` a small share
/// of the largest entry in either gradient.
pub fn max_relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let scale = analytic.iter().chain(numeric.iter()).fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seeds: Vec<u64>,
    pub instances_per_seed: usize,
    pub size: usize,
    pub step: f64,
    pub tolerance: f64,
    pub topk_max_rel_error: f64,
    pub com_max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.topk_max_rel_error < self.tolerance && self.com_max_rel_error < self.tolerance
    }
}

fn random_mask(rng: &mut ChaCha8Rng, size: usize) -> BoxMask {
    let r0 = rng.random_range(0..size - 1);
    let r1 = rng.random_range(r0 + 1..size);
    let c0 = rng.random_range(0..size - 1);
    let c1 = rng.random_range(c0 + 1..size);
    BoxMask::new(size, size, r0..r1, c0..c1)
}

/// Smallest gap around the top-k cutoff of one region; selection is stable
/// under perturbations smaller than this.
fn cutoff_gap(a: &Array2<f64>, m: &BoxMask, inside: bool, fraction: f64) -> f64 {
    let mut vals: Vec<f64> = a.indexed_iter().filter(|((i, j), _)| m.contains(*i, *j) == inside).map(|(_, v)| *v).collect();
    vals.sort_by(|p, q| q.total_cmp(p));
    let k = topk_count(fraction, vals.len());
    if k == 0 || k == vals.len() {
        return f64::INFINITY;
    }
    vals[k - 1] - vals[k]
}

/// A random map whose top-k selections are unambiguous under a step of `h`,
/// together with a mask that leaves both regions nonempty.
pub fn tie_free_topk_instance(rng: &mut ChaCha8Rng, size: usize, cfg: &EnergyConfig, h: f64) -> (Array2<f64>, BoxMask) {
    loop {
        let mask = random_mask(rng, size);
        if mask.count() == size * size {
            continue;
        }
        let a = Array2::from_shape_fn((size, size), |_| rng.random::<f64>());
        let gap = cutoff_gap(&a, &mask, true, cfg.topk_fraction).min(cutoff_gap(&a, &mask, false, cfg.topk_fraction));
        if gap > 100.0 * h {
            return (a, mask);
        }
    }
}

pub fn run_suite(seeds: &[u64], instances: usize, size: usize, h: f64, tolerance: f64) -> GradCheckReport {
    let cfg = EnergyConfig::default();
    let mut topk_err = 0.0_f64;
    let mut com_err = 0.0_f64;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..instances {
            let (a, m) = tie_free_topk_instance(&mut rng, size, &cfg, h);
            let analytic = energy::grad_e_topk(a.view(), &m, &cfg).expect("shapes agree");
            let numeric = central_difference(|x| energy::e_topk(x.view(), &m, &cfg).expect("shapes agree"), &a, h);
            topk_err = topk_err.max(max_relative_error(&analytic, &numeric));

            let a_t = Array2::from_shape_fn((size, size), |_| rng.random_range(0.1..1.1));
            let a_t1 = Array2::from_shape_fn((size, size), |_| rng.random_range(0.1..1.1));
            let (m_t, m_t1) = (random_mask(&mut rng, size), random_mask(&mut rng, size));
            let (g_t, g_t1) = energy::grad_e_com(a_t.view(), a_t1.view(), &m_t, &m_t1).expect("positive mass");
            let n_t = central_difference(|x| energy::e_com(x.view(), a_t1.view(), &m_t, &m_t1).expect("positive mass"), &a_t, h);
            let n_t1 = central_difference(|x| energy::e_com(a_t.view(), x.view(), &m_t, &m_t1).expect("positive mass"), &a_t1, h);
            com_err = com_err.max(max_relative_error(&g_t, &n_t)).max(max_relative_error(&g_t1, &n_t1));
        }
    }
    GradCheckReport {
        seeds: seeds.to_vec(),
        instances_per_seed: instances,
        size,
        step: h,
        tolerance,
        topk_max_rel_error: topk_err,
        com_max_rel_error: com_err,
    }
}
