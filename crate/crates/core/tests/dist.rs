mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use distgrid::dist::{plan_batch, Frame, Message, Precision, SupervisedRay};
use distgrid::field::MEAN_APPEARANCE;
use distgrid::geom::{Aabb, Ray, Vec3};
use distgrid::partition::split_regions;
use distgrid::render::ray_aabb_intersect;
use distgrid::trainer::Trainer;
use distgrid::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn plan_batch_sends_each_ray_to_exactly_the_regions_it_crosses() {
    let inner = Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.5, 1.0));
    let outer = Aabb::new(Vec3::new(-3.0, -2.0, 0.0), Vec3::new(2.5, 3.0, 1.0));
    let m = split_regions(&inner, &outer, (3, 2), 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rays: Vec<SupervisedRay> = (0..3000)
        .map(|i| {
            let origin = Vec3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(1.2..3.0));
            let target = Vec3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-1.0..0.9));
            SupervisedRay {
                key: i,
                ray: Ray::new(origin, (target - origin).normalized()),
                appearance: 0,
                gt_rgb: [0.0; 3],
                gt_transmittance: 1.0,
            }
        })
        .collect();
    let plan = plan_batch(&rays, &m, Precision::F64).unwrap();

    let mut want: Vec<Vec<u64>> = vec![Vec::new(); m.regions.len()];
    let mut dropped = 0;
    for r in &rays {
        let mut any = false;
        for (k, b) in m.coarse_boxes().iter().enumerate() {
            if let Some((t0, t1)) = ray_aabb_intersect(&r.ray, b) {
                if t1 > t0 {
                    want[k].push(r.key);
                    any = true;
                }
            }
        }
        if !any {
            dropped += 1;
        }
    }
    assert_eq!(plan.dropped, dropped);
    assert!(dropped > 0 && dropped < rays.len());
    let mut crossings: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, batch) in plan.per_worker.iter().enumerate() {
        let mut got: Vec<u64> = batch.iter().map(|d| d.key).collect();
        got.sort_unstable();
        assert_eq!(got, want[k], "region {k}");
        for d in batch {
            *crossings.entry(d.schedule.len()).or_default() += 1;
            assert!(d.schedule.iter().any(|e| e.region as usize == k));
            for w in d.schedule.windows(2) {
                assert_eq!(w[0].t_exit, w[1].t_enter);
            }
        }
    }
    assert!(crossings.keys().any(|&n| n >= 3), "no ray crossed three regions: {crossings:?}");
}

#[test]
fn single_precision_plans_agree_with_rounded_rays() {
    let inner = Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 1.0));
    let m = split_regions(&inner, &inner, (2, 2), 0.0).unwrap();
    let ray = SupervisedRay {
        key: 7,
        ray: Ray::new(Vec3::new(-1.3, -0.9, 0.7), Vec3::new(0.91, 0.33, -0.2).normalized()),
        appearance: 3,
        gt_rgb: [0.1, 0.2, 0.3],
        gt_transmittance: 0.25,
    };
    let plan = plan_batch(&[ray], &m, Precision::F32).unwrap();
    for d in plan.per_worker.iter().flatten() {
        for v in d.origin.iter().chain(&d.dir).chain(&d.gt_rgb) {
            assert_eq!(*v, *v as f32 as f64);
        }
        for e in &d.schedule {
            assert_eq!(e.t_enter, e.t_enter as f32 as f64);
        }
    }
}

#[test]
fn same_seed_gives_identical_training() {
    let ds = common::tiny_dataset("blob4", 16, 64);
    let run = |seed: u64| {
        let mut cfg = common::tiny_config([2, 1]);
        cfg.cluster.seed = seed;
        let mut t = Trainer::new(cfg, &ds, 0.0).unwrap();
        (0..3).map(|_| t.step(&ds).unwrap().loss_rgb).collect::<Vec<_>>()
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a, run(6));
}

#[test]
fn tcp_transport_trains_like_local() {
    let ds = common::tiny_dataset("blob4", 16, 64);
    let run = |tcp: bool| {
        let mut cfg = common::tiny_config([2, 2]);
        if tcp {
            cfg.cluster.transport = distgrid::dist::TransportKind::Tcp;
        }
        let mut t = Trainer::new(cfg, &ds, 0.0).unwrap();
        let losses: Vec<f64> = (0..2).map(|_| t.step(&ds).unwrap().loss_rgb).collect();
        let img = t.cluster.evaluate_image(&ds.poses[0], MEAN_APPEARANCE).unwrap();
        (losses, img.rgb.data)
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn offline_worker_fails_with_timeout_instead_of_hanging() {
    let ds = common::tiny_dataset("blob4", 16, 64);
    let mut cfg = common::tiny_config([2, 1]);
    cfg.cluster.timeout_ms = 300;
    let mut t = Trainer::new(cfg, &ds, 0.0).unwrap();
    t.cluster.offline = vec![1];
    let start = Instant::now();
    let err = t.cluster.evaluate_image(&ds.poses[0], MEAN_APPEARANCE).unwrap_err();
    assert!(matches!(err, Error::Timeout { .. } | Error::Unreachable { .. }), "{err}");
    let err = t.step(&ds).unwrap_err();
    assert!(matches!(err, Error::Timeout { .. } | Error::Unreachable { .. } | Error::Protocol(_)), "{err}");
    assert!(start.elapsed() < Duration::from_secs(20));

    t.cluster.offline = vec![0];
    assert!(matches!(
        t.cluster.evaluate_image(&ds.poses[0], MEAN_APPEARANCE),
        Err(Error::Unreachable { worker: 0, .. })
    ));
}

proptest! {
    #[test]
    fn decoding_garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = Frame::decode(&bytes, 0);
    }

    #[test]
    fn flipped_bits_never_panic(
        values in prop::collection::vec(-1.0..1.0f64, 0..40),
        at in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let frame = Frame::new(3, Precision::F32, Message::PartialScatter(values));
        let mut bytes = frame.encode().unwrap();
        let i = at.index(bytes.len());
        bytes[i] ^= 1 << bit;
        let _ = Frame::decode(&bytes, 0);
    }

    #[test]
    fn partial_scatter_round_trips(values in prop::collection::vec(-10.0..10.0f64, 0..64), batch in any::<u64>()) {
        let frame = Frame::new(batch, Precision::F64, Message::PartialScatter(values));
        let back = Frame::decode(&frame.encode().unwrap(), 0).unwrap();
        prop_assert_eq!(back, frame);
    }
}
