//! Deterministic probe clouds covering every regime the checks quantify
//! over.
//!
//! The fixed part of the cloud walks each bubble from its concentration
//! scale out past its plateau, rings the dyadic shells from unit scale down
//! well below the deepest center, and covers the matching annulus and the
//! far field. A seeded log-uniform fill tops the cloud up to the requested
//! size. Probes are ordered so that a prefix of the cloud is already a
//! balanced iteration set for the fixed-point sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::params::family::BubbleFamily;
use crate::point::Point;

/// Which regime a probe was planted in; carried into the field dumps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeClass {
    /// The exact center of a bubble.
    Center,
    /// Anchored offsets from a center, from the concentration scale out to
    /// twice the core radius.
    Ball,
    /// Anchored offsets near the core radius, straddling the branch seam.
    Seam,
    /// Dyadic shells |x| = 2^{-t} scaled around the cascade axis.
    Shell,
    /// The matching annulus and unit scale.
    Transition,
    /// The decay window 10 <= |x| <= 100.
    Far,
    /// Seeded log-uniform fill.
    Random,
}

impl ProbeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeClass::Center => "center",
            ProbeClass::Ball => "ball",
            ProbeClass::Seam => "seam",
            ProbeClass::Shell => "shell",
            ProbeClass::Transition => "transition",
            ProbeClass::Far => "far",
            ProbeClass::Random => "random",
        }
    }
}

/// A probe cloud with its class labels.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub points: Vec<Point>,
    pub class: Vec<ProbeClass>,
    /// Probe index of each bubble's exact-center probe, 1-based by bubble.
    pub center_probe: Vec<usize>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of probes in a class.
    pub fn of_class(&self, c: ProbeClass) -> impl Iterator<Item = usize> + '_ {
        self.class
            .iter()
            .enumerate()
            .filter(move |(_, k)| **k == c)
            .map(|(i, _)| i)
    }
}

/// A small deterministic family of unit directions in n dimensions.
pub fn unit_dirs(n: usize, count: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count);
    let axis = |i: usize, s: f64| {
        let mut d = vec![0.0; n];
        d[i % n] = s;
        d
    };
    let diag = |idx: &[usize]| {
        let mut d = vec![0.0; n];
        let s = 1.0 / (idx.len() as f64).sqrt();
        for &i in idx {
            d[i % n] += s;
        }
        d
    };
    let table: Vec<Vec<f64>> = vec![
        axis(0, 1.0),
        axis(1, 1.0),
        axis(0, -1.0),
        axis(2 % n, 1.0),
        diag(&[0, 1]),
        diag(&[1, 2]),
        diag(&[0, 1, 2, 3]),
        axis(1, -1.0),
    ];
    for i in 0..count {
        dirs.push(table[i % table.len()].clone());
    }
    dirs
}

/// Build the probe cloud for a family. `total` is the target size; the
/// fixed skeleton is kept even if it exceeds the target. The random fill is
/// reproducible from `seed` alone.
pub fn build_probes(family: &BubbleFamily, total: usize, seed: u64) -> ProbeSet {
    let n = family.dim.n() as usize;
    let mut points: Vec<Point> = Vec::new();
    let mut class: Vec<ProbeClass> = Vec::new();
    let mut center_probe: Vec<usize> = Vec::new();
    let dirs = unit_dirs(n, 8);

    // Per-bubble skeleton, deepest scales first so a short iteration prefix
    // still sees every bubble.
    for e in &family.entries {
        center_probe.push(points.len());
        points.push(Point::Anchored {
            center: e.index,
            ln_t: f64::NEG_INFINITY,
            dir: dirs[0].clone(),
        });
        class.push(ProbeClass::Center);
        for (ln_f, c) in [
            (-1.0, ProbeClass::Ball),
            (0.0, ProbeClass::Ball),
            (1.0, ProbeClass::Ball),
        ] {
            points.push(Point::Anchored {
                center: e.index,
                ln_t: e.ln_lambda + ln_f,
                dir: dirs[1].clone(),
            });
            class.push(c);
        }
        for (i, f) in [0.25f64, 0.5, 1.0, 1.4].iter().enumerate() {
            for d in 0..2 {
                points.push(Point::Anchored {
                    center: e.index,
                    ln_t: e.ln_rho + f.ln(),
                    dir: dirs[(i + 4 * d) % dirs.len()].clone(),
                });
                class.push(ProbeClass::Ball);
            }
        }
        for f in [1.6f64, 2.0] {
            points.push(Point::Anchored {
                center: e.index,
                ln_t: e.ln_rho + f.ln(),
                dir: dirs[2].clone(),
            });
            class.push(ProbeClass::Ball);
        }
        for f in [0.7f64, 0.9, 1.1] {
            points.push(Point::Anchored {
                center: e.index,
                ln_t: e.ln_rho + f.ln(),
                dir: dirs[3].clone(),
            });
            class.push(ProbeClass::Seam);
        }
    }

    // Dyadic shells from quarter scale down past the deepest center.
    for t in 2..=40u32 {
        let r = 2f64.powi(-(t as i32));
        for d in 0..6usize {
            for f in [1.0f64, 1.2] {
                let x: Vec<f64> = dirs[d].iter().map(|v| v * r * f).collect();
                points.push(Point::Global(x));
                class.push(ProbeClass::Shell);
            }
        }
    }

    // Matching annulus and unit scale.
    for r in [0.02f64, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 1.0, 1.6, 2.7, 5.0] {
        for d in 0..4usize {
            let x: Vec<f64> = dirs[d].iter().map(|v| v * r).collect();
            points.push(Point::Global(x));
            class.push(ProbeClass::Transition);
        }
    }
    // Valleys between adjacent occupied ring slots, at the ring radius.
    let ring_centers: Vec<&crate::params::geometry::CenterData> =
        family.placement.centers.iter().filter(|c| c.ring).collect();
    if ring_centers.len() >= 2 {
        let r = family.geom.delta1;
        for w in 0..ring_centers.len() {
            let a = &ring_centers[w].position;
            let b = &ring_centers[(w + 1) % ring_centers.len()].position;
            let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            let norm: f64 = mid.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                points.push(Point::Global(mid.iter().map(|v| v * r / norm).collect()));
                class.push(ProbeClass::Transition);
            }
        }
    }

    // Decay window.
    for r in [10.0f64, 18.0, 32.0, 56.0, 100.0] {
        for d in 0..4usize {
            let x: Vec<f64> = dirs[d].iter().map(|v| v * r).collect();
            points.push(Point::Global(x));
            class.push(ProbeClass::Far);
        }
    }

    // Seeded log-uniform fill up to the target size.
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(0x70726f62);
    let (ln_lo, ln_hi) = ((-45.0f64) * std::f64::consts::LN_2, 100f64.ln());
    while points.len() < total {
        let ln_r = rng.gen_range(ln_lo..ln_hi);
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-3 {
            continue;
        }
        let r = ln_r.exp();
        for v in &mut x {
            *v *= r / norm;
        }
        points.push(Point::Global(x));
        class.push(ProbeClass::Random);
    }

    ProbeSet { points, class, center_probe }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::flagship;

    #[test]
    fn cloud_is_deterministic_and_labeled() {
        let fx = flagship();
        let a = build_probes(&fx.family, 1200, 7);
        let b = build_probes(&fx.family, 1200, 7);
        assert_eq!(a.points, b.points);
        assert_eq!(a.class, b.class);
        assert!(a.len() >= 1200);
        assert_eq!(a.center_probe.len(), fx.family.entries.len());
        for (j, &pi) in a.center_probe.iter().enumerate() {
            assert_eq!(a.class[pi], ProbeClass::Center);
            match &a.points[pi] {
                Point::Anchored { center, ln_t, .. } => {
                    assert_eq!(*center as usize, j + 1);
                    assert_eq!(*ln_t, f64::NEG_INFINITY);
                }
                p => panic!("center probe must be anchored, got {p:?}"),
            }
        }
        // Every class is populated on the flagship cloud.
        for c in [
            ProbeClass::Center,
            ProbeClass::Ball,
            ProbeClass::Seam,
            ProbeClass::Shell,
            ProbeClass::Transition,
            ProbeClass::Far,
            ProbeClass::Random,
        ] {
            assert!(a.of_class(c).next().is_some(), "class {c:?} is empty");
        }
    }

    #[test]
    fn directions_are_unit_length() {
        for d in unit_dirs(8, 8) {
            let n2: f64 = d.iter().map(|v| v * v).sum();
            assert!((n2 - 1.0).abs() < 1e-15);
        }
    }
}
