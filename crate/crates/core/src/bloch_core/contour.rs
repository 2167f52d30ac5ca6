//! Marching-squares level sets of a band over the frequency square.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::BandSampler;
use crate::exec::{map_range, map_slice, Execution};

/// A polyline in `[0, 1]^2`; `closed` polylines do not repeat the first vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Edge {
    // (i, k) -> (i + 1, k)
    H(usize, usize),
    // (i, k) -> (i, k + 1)
    V(usize, usize),
}

/// Level set `mu_m(j) = omega_sq` on a `grid_n x grid_n` periodic sampling;
/// vertices lie on grid edges and are refined against the sampler.
pub fn isofrequency_contour(
    sampler: &dyn BandSampler,
    m: usize,
    omega_sq: f64,
    grid_n: usize,
    exec: Execution,
) -> Vec<Polyline> {
    let n = grid_n;
    if n == 0 {
        return Vec::new();
    }
    let s: Vec<f64> = map_range(exec, n * n, |idx| {
        let j = [(idx / n) as f64 / n as f64, (idx % n) as f64 / n as f64];
        sampler.mu(j, m) - omega_sq
    });
    let val = |i: usize, k: usize| s[(i % n) * n + (k % n)];
    // Linear guess on the edge, then Illinois steps on the true band.
    let point = |e: Edge| -> [f64; 2] {
        let (a, b, p0, dir) = match e {
            Edge::H(i, k) => (val(i, k), val(i + 1, k), [i as f64, k as f64], [1.0, 0.0]),
            Edge::V(i, k) => (val(i, k), val(i, k + 1), [i as f64, k as f64], [0.0, 1.0]),
        };
        let at = |t: f64| {
            [
                (p0[0] + t * dir[0]) / n as f64,
                (p0[1] + t * dir[1]) / n as f64,
            ]
        };
        if a == b {
            return at(0.5);
        }
        let tol = 1e-10 * omega_sq.abs().max(1.0);
        let (mut t0, mut f0, mut t1, mut f1) = (0.0, a, 1.0, b);
        let mut t = a / (a - b);
        let mut side = 0i8;
        for _ in 0..12 {
            let f = sampler.mu(at(t), m) - omega_sq;
            if !f.is_finite() || f.abs() <= tol {
                break;
            }
            if (f < 0.0) == (f0 < 0.0) {
                t0 = t;
                f0 = f;
                if side == -1 {
                    f1 *= 0.5;
                }
                side = -1;
            } else {
                t1 = t;
                f1 = f;
                if side == 1 {
                    f0 *= 0.5;
                }
                side = 1;
            }
            t = (t0 * f1 - t1 * f0) / (f1 - f0);
        }
        at(t)
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for i in 0..n {
        for k in 0..n {
            let c = [val(i, k), val(i + 1, k), val(i + 1, k + 1), val(i, k + 1)];
            let code = c
                .iter()
                .enumerate()
                .fold(0u8, |acc, (b, &v)| acc | (((v < 0.0) as u8) << b));
            let bottom = Edge::H(i, k);
            let right = Edge::V(i + 1, k);
            let top = Edge::H(i, k + 1);
            let left = Edge::V(i, k);
            let centre_neg = (c.iter().sum::<f64>()) < 0.0;
            match code {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 => {
                    if centre_neg {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                10 => {
                    if centre_neg {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (idx, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(idx);
        by_edge.entry(*b).or_default().push(idx);
    }
    let mut used = vec![false; segments.len()];
    let other = |seg: usize, e: Edge| {
        if segments[seg].0 == e {
            segments[seg].1
        } else {
            segments[seg].0
        }
    };
    let next_seg = |e: Edge, from: usize, used: &Vec<bool>| {
        by_edge[&e].iter().copied().find(|&s| s != from && !used[s])
    };

    let mut chains = Vec::new();
    // open chains first (start at edges touched by one segment), then loops
    let mut starts: Vec<usize> = (0..segments.len())
        .filter(|&s| by_edge[&segments[s].0].len() == 1 || by_edge[&segments[s].1].len() == 1)
        .collect();
    starts.extend(0..segments.len());
    for s0 in starts {
        if used[s0] {
            continue;
        }
        used[s0] = true;
        let (mut a, mut b) = segments[s0];
        if by_edge[&b].len() == 1 && by_edge[&a].len() != 1 {
            std::mem::swap(&mut a, &mut b);
        }
        let first = a;
        let mut edges = vec![a, b];
        let mut cur_seg = s0;
        let mut cur = b;
        let mut closed = false;
        while let Some(ns) = next_seg(cur, cur_seg, &used) {
            used[ns] = true;
            let nx = other(ns, cur);
            cur_seg = ns;
            cur = nx;
            if nx == first {
                closed = true;
                break;
            }
            edges.push(nx);
        }
        chains.push((edges, closed));
    }
    chains
        .into_iter()
        .map(|(edges, closed)| Polyline {
            points: map_slice(exec, &edges, |&e| point(e)),
            closed,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch_core::FieldSampler;
    use crate::cell_model::CoefficientField;
    use std::f64::consts::PI;

    struct FreeBand0;
    impl BandSampler for FreeBand0 {
        fn mu(&self, j: [f64; 2], _m: usize) -> f64 {
            let mut best = f64::INFINITY;
            for k1 in -1..=1 {
                for k2 in -1..=1 {
                    let a = j[0] + k1 as f64;
                    let b = j[1] + k2 as f64;
                    best = best.min(4.0 * PI * PI * (a * a + b * b));
                }
            }
            best
        }
    }

    #[test]
    fn free_circle() {
        let lines = isofrequency_contour(&FreeBand0, 0, PI * PI / 4.0, 512, Execution::default());
        assert!(!lines.is_empty());
        let mut count = 0;
        for l in &lines {
            for p in &l.points {
                let d1 = p[0] - p[0].round();
                let d2 = p[1] - p[1].round();
                let r = (d1 * d1 + d2 * d2).sqrt();
                assert!((r - 0.25).abs() < 1e-3, "radius {r}");
                count += 1;
            }
        }
        assert!(count > 500);
    }

    #[test]
    fn below_band_is_empty() {
        assert!(isofrequency_contour(&FreeBand0, 0, -1.0, 32, Execution::Sequential).is_empty());
        let s = FieldSampler {
            field: CoefficientField::free_space(1.0),
            cutoff: 2,
        };
        assert!(isofrequency_contour(&s, 0, -1.0, 16, Execution::Sequential).is_empty());
    }

    #[test]
    fn interior_circle_is_closed() {
        struct Bowl;
        impl BandSampler for Bowl {
            fn mu(&self, j: [f64; 2], _m: usize) -> f64 {
                (j[0] - 0.5).powi(2) + (j[1] - 0.5).powi(2)
            }
        }
        let lines = isofrequency_contour(&Bowl, 0, 0.04, 64, Execution::Sequential);
        assert_eq!(lines.len(), 1);
        assert!(lines[0].closed);
    }
}
