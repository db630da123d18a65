mod common;

use distgrid::data::Split;
use distgrid::dist::MessageKind;
use distgrid::trainer::{LogRecord, Trainer};

#[test]
fn short_run_reduces_the_color_loss() {
    let ds = common::tiny_dataset("blob4", 16, 64);
    let mut cfg = common::tiny_config([2, 1]);
    cfg.steps = 150;
    cfg.cluster.lr.total_steps = 150;
    cfg.log_every = 25;
    let mut t = Trainer::new(cfg, &ds, 0.0).unwrap();
    let mut log = Vec::new();
    t.run(&ds, Some(&mut log), None).unwrap();
    let text = String::from_utf8(log).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(LogRecord::HEADER));
    let rgb: Vec<f64> = lines.map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rgb.len(), 6);
    assert!(rgb[5] < 0.5 * rgb[0], "color loss went from {} to {}", rgb[0], rgb[5]);
    assert_eq!(t.cluster.step, 150);
    let summary = t.evaluate(&ds, Split::Val, 1).unwrap();
    assert!(summary.mean_psnr.is_finite() && summary.mean_psnr > 10.0, "psnr {}", summary.mean_psnr);
}

#[test]
fn single_region_sends_only_control_messages_to_itself() {
    let ds = common::tiny_dataset("blob4", 16, 64);
    let mut t = Trainer::new(common::tiny_config([1, 1]), &ds, 0.0).unwrap();
    t.cluster.reset_counters();
    t.step(&ds).unwrap();
    let c = &t.cluster.byte_counters()[0];
    assert_eq!(c.sent_of(MessageKind::RayDispatch), 0);
    assert_eq!(c.sent_of(MessageKind::PartialScatter), 0);
}

#[test]
fn partial_traffic_scales_with_shared_rays() {
    let ds = common::tiny_dataset("blob4", 16, 64);
    let mut t = Trainer::new(common::tiny_config([2, 2]), &ds, 0.0).unwrap();
    t.cluster.reset_counters();
    let rep = t.step(&ds).unwrap();
    let sent: u64 = t.cluster.byte_counters().iter().map(|c| c.sent_of(MessageKind::PartialScatter)).sum();
    assert!(sent > 0);
    assert_eq!(rep.rays + rep.dropped, 64);
    let lr = t.config.cluster.lr.lr(0);
    assert_eq!(rep.lr, lr);
}
