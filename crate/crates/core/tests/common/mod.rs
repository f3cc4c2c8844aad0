//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use styleaug::dataset::BinaryMask;

/// Signed crossing count (winding number) of `p` with respect to a closed polyline.
pub fn winding_number(p: (f64, f64), vertices: &[(f64, f64)]) -> i32 {
    let is_left = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1);
    let mut wn = 0;
    for k in 0..vertices.len() {
        let a = vertices[k];
        let b = vertices[(k + 1) % vertices.len()];
        if a.1 <= p.1 {
            if b.1 > p.1 && is_left(a, b) > 0.0 {
                wn += 1;
            }
        } else if b.1 <= p.1 && is_left(a, b) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

pub fn oracle(polygons: &[Vec<(f64, f64)>], width: usize, height: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(width * height);
    for i in 0..height {
        for j in 0..width {
            let c = (j as f64 + 0.5, i as f64 + 0.5);
            out.push(polygons.iter().any(|v| winding_number(c, v) != 0));
        }
    }
    out
}

/// Star-shaped (hence simple) polygon: sorted angles, random radii.
pub fn random_simple_polygon(rng: &mut ChaCha8Rng, size: f64) -> Vec<(f64, f64)> {
    let n = rng.gen_range(3..=12);
    let cx = rng.gen_range(0.2 * size..0.8 * size);
    let cy = rng.gen_range(0.2 * size..0.8 * size);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let clockwise = rng.gen_bool(0.5);
    let mut v: Vec<(f64, f64)> = angles
        .iter()
        .map(|&a| {
            let r = rng.gen_range(2.0..0.45 * size);
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    if clockwise {
        v.reverse();
    }
    v
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    let bits: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(p)).collect();
    BinaryMask::from_fn(h, w, |i, j| bits[i * w + j])
}

/// `(|A ∩ B|, |A ∪ B|, |A|, |B|)` by enumerating pixel coordinates as sets.
pub fn counts(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize, usize) {
    use std::collections::BTreeSet;
    let set = |m: &BinaryMask| -> BTreeSet<(usize, usize)> {
        (0..m.height())
            .flat_map(|i| (0..m.width()).map(move |j| (i, j)))
            .filter(|&(i, j)| m.get(i, j))
            .collect()
    };
    let (sa, sb) = (set(a), set(b));
    (sa.intersection(&sb).count(), sa.union(&sb).count(), sa.len(), sb.len())
}
