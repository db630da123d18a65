use crate::geom::Ray;
use crate::grid::OccupancyQuery;

use super::RaySegment;

/// The per-ray sample lattice `t_k = anchor + (k + offset) step`.
///
/// The lattice is anchored at the ray's entry into the outer box, not at each segment, so
/// splitting a ray into segments never moves a sample: a segment owns exactly the lattice
/// points falling in `[t_enter, t_exit)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub anchor: f64,
    pub step: f64,
    /// In `[0, 1)`; 0.5 places samples at bin midpoints.
    pub offset: f64,
    /// Where the ray leaves the outer box; the last bin is clipped here.
    pub end: f64,
}

impl Lattice {
    /// Midpoint lattice spanning a single interval.
    pub fn midpoint(t_enter: f64, t_exit: f64, step: f64) -> Self {
        Lattice {
            anchor: t_enter,
            step,
            offset: 0.5,
            end: t_exit,
        }
    }

    fn t(&self, k: i64) -> f64 {
        self.anchor + (k as f64 + self.offset) * self.step
    }

    /// Smallest `k` with `t(k) >= t`.
    fn first_at_or_after(&self, t: f64) -> i64 {
        let mut k = ((t - self.anchor) / self.step - self.offset).ceil() as i64;
        while self.t(k) < t {
            k += 1;
        }
        while self.t(k - 1) >= t {
            k -= 1;
        }
        k
    }
}

/// One quadrature point: position, step length and the bin it represents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpan {
    pub t: f64,
    pub delta: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Lattice samples of `segment` that fall inside occupied cells, in increasing `t`.
///
/// Each sample represents its lattice bin `[anchor + k step, anchor + (k + 1) step]`,
/// clipped to the ray's exit from the outer box, so `delta` does not depend on where the
/// segment boundaries fall.
pub fn march_segment(ray: &Ray, segment: &RaySegment, occupancy: &dyn OccupancyQuery, lattice: &Lattice) -> Vec<SampleSpan> {
    let mut out = Vec::new();
    if !(lattice.step > 0.0) || segment.t_exit <= segment.t_enter {
        return out;
    }
    for (a, b) in occupancy.occupied_intervals(ray, segment.t_enter, segment.t_exit) {
        let a = a.max(segment.t_enter);
        let b = b.min(segment.t_exit);
        if b <= a {
            continue;
        }
        let mut k = lattice.first_at_or_after(a);
        loop {
            let t = lattice.t(k);
            if t >= b {
                break;
            }
            let lo = lattice.anchor + k as f64 * lattice.step;
            let hi = (lo + lattice.step).min(lattice.end);
            if hi > lo {
                out.push(SampleSpan {
                    t,
                    delta: hi - lo,
                    lo,
                    hi,
                });
            }
            k += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Aabb, Vec3};
    use crate::grid::AllOccupied;
    use crate::render::segment_ray;

    struct Nothing;
    impl OccupancyQuery for Nothing {
        fn occupied_intervals(&self, _: &Ray, _: f64, _: f64) -> Vec<(f64, f64)> {
            Vec::new()
        }
    }

    struct Fixed(Vec<(f64, f64)>);
    impl OccupancyQuery for Fixed {
        fn occupied_intervals(&self, _: &Ray, t0: f64, t1: f64) -> Vec<(f64, f64)> {
            self.0
                .iter()
                .map(|&(a, b)| (a.max(t0), b.min(t1)))
                .filter(|(a, b)| b > a)
                .collect()
        }
    }

    fn seg(t_enter: f64, t_exit: f64) -> RaySegment {
        RaySegment {
            region: 0,
            t_enter,
            t_exit,
            index: 0,
        }
    }

    fn ray() -> Ray {
        Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0))
    }

    #[test]
    fn fully_occupied_unit_segment() {
        let s = march_segment(&ray(), &seg(0.0, 1.0), &AllOccupied, &Lattice::midpoint(0.0, 1.0, 0.25));
        let ts: Vec<f64> = s.iter().map(|x| x.t).collect();
        assert_eq!(ts, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(s.iter().all(|x| x.delta == 0.25));
    }

    #[test]
    fn empty_occupancy_gives_no_samples() {
        assert!(march_segment(&ray(), &seg(0.0, 1.0), &Nothing, &Lattice::midpoint(0.0, 1.0, 0.25)).is_empty());
    }

    #[test]
    fn samples_stay_inside_occupied_intervals() {
        let occ = Fixed(vec![(0.1, 0.3), (0.55, 0.9)]);
        let s = march_segment(&ray(), &seg(0.0, 1.0), &occ, &Lattice::midpoint(0.0, 1.0, 0.01));
        assert!(!s.is_empty());
        for x in &s {
            assert!((0.1..0.3).contains(&x.t) || (0.55..0.9).contains(&x.t), "{}", x.t);
        }
        assert!(s.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn splitting_a_segment_preserves_the_samples() {
        let lattice = Lattice {
            anchor: 0.2,
            step: 0.013,
            offset: 0.37,
            end: 1.7,
        };
        let whole = march_segment(&ray(), &seg(0.2, 1.7), &AllOccupied, &lattice);
        let mut parts = Vec::new();
        for (a, b) in [(0.2, 0.61), (0.61, 1.3), (1.3, 1.7)] {
            parts.extend(march_segment(&ray(), &seg(a, b), &AllOccupied, &lattice));
        }
        assert_eq!(whole, parts);
    }

    #[test]
    fn segments_of_a_split_box_reproduce_single_box_samples() {
        let left = Aabb::new(Vec3::ZERO, Vec3::new(0.5, 1.0, 1.0));
        let right = Aabb::new(Vec3::new(0.5, 0.0, 0.0), Vec3::splat(1.0));
        let r = Ray::new(Vec3::new(-0.3, 0.2, 0.1), Vec3::new(1.0, 0.3, 0.2).normalized());
        let segs = segment_ray(&r, &[left, right]).unwrap();
        let whole = segment_ray(&r, &[left.union(&right)]).unwrap();
        let lattice = Lattice::midpoint(whole[0].t_enter, whole[0].t_exit, 0.01);
        let a = march_segment(&r, &whole[0], &AllOccupied, &lattice);
        let b: Vec<_> = segs.iter().flat_map(|s| march_segment(&r, s, &AllOccupied, &lattice)).collect();
        assert_eq!(a, b);
    }
}
