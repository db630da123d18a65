use serde::{Deserialize, Serialize};

/// Loss weights. `transmittance_weight` and `distortion_weight` are λ1 and λ2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub transmittance_weight: f64,
    pub distortion_weight: f64,
    /// Clamp `ε` keeping the transmittance regularizer finite at `T = 1`.
    pub epsilon: f64,
    /// Apply the transmittance regularizer only to rays whose ground-truth transmittance is
    /// below this value (rays known to hit something).
    pub transmittance_mask: f64,
    /// Exchange per-segment moments so the distortion loss is exact across segments.
    pub exact_distortion: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            transmittance_weight: 1e-3,
            distortion_weight: 1e-3,
            epsilon: 1e-6,
            transmittance_mask: 0.5,
            exact_distortion: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.transmittance_weight < 0.0 || self.distortion_weight < 0.0 || !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(crate::Error::config("loss weights must be >= 0 and epsilon in (0,1)"));
        }
        Ok(())
    }
}

/// Squared color error of one ray and its gradient `2 (C - C_gt)`.
pub fn loss_rgb(c: [f64; 3], gt: [f64; 3]) -> (f64, [f64; 3]) {
    let mut l = 0.0;
    let mut g = [0.0; 3];
    for k in 0..3 {
        let d = c[k] - gt[k];
        l += d * d;
        g[k] = 2.0 * d;
    }
    (l, g)
}

/// `-log(1 - min(T, 1 - ε))` and its derivative (zero where the clamp is active).
pub fn loss_transmittance(t: f64, epsilon: f64) -> (f64, f64) {
    let cap = 1.0 - epsilon;
    if t >= cap {
        (-(epsilon.ln()), 0.0)
    } else {
        (-(1.0 - t).ln(), 1.0 / (1.0 - t))
    }
}

/// Distortion of one sample list: `sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 (hi_i - lo_i)`.
///
/// `s` must be ascending. Returns the loss and `dL/dw`, both in O(n) via prefix sums.
pub fn loss_distortion(w: &[f64], s: &[f64], lo: &[f64], hi: &[f64]) -> (f64, Vec<f64>) {
    let n = w.len();
    debug_assert!(s.len() == n && lo.len() == n && hi.len() == n);
    let total_w: f64 = w.iter().sum();
    let total_ws: f64 = w.iter().zip(s).map(|(a, b)| a * b).sum();
    let mut before_w = 0.0;
    let mut before_ws = 0.0;
    let mut pair = 0.0;
    let mut interval = 0.0;
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let (wk, sk, len) = (w[k], s[k], hi[k] - lo[k]);
        let after_w = total_w - before_w - wk;
        let after_ws = total_ws - before_ws - wk * sk;
        // sum_j w_j |s_k - s_j|
        let spread = sk * before_w - before_ws + after_ws - sk * after_w;
        pair += wk * (sk * before_w - before_ws);
        interval += wk * wk * len;
        grad[k] = 2.0 * spread + 2.0 / 3.0 * wk * len;
        before_w += wk;
        before_ws += wk * sk;
    }
    (2.0 * pair + interval / 3.0, grad)
}

/// Per-segment distortion summary exchanged between workers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentMoments {
    /// Partial transmittance `T_a`; the segment's total local weight is `1 - T_a`.
    pub transmittance: f64,
    /// First moment `sum_k w_k s_k` of the local weights.
    pub moment: f64,
    /// Intra-segment distortion of the local weights.
    pub distortion: f64,
}

/// Gradient of the merged distortion with respect to one segment's summary.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentGrad {
    pub transmittance: f64,
    pub moment: f64,
    pub distortion: f64,
}

/// Distortion of a whole ray from per-segment summaries. With global weights `P_a w_k`
/// (`P_a` the prefix transmittance) and segments ordered along the ray,
///
/// `L = sum_a P_a^2 D_a + 2 sum_{a<b} P_a P_b (W_a M_b - M_a W_b)`, `W_a = 1 - T_a`.
pub fn merge_distortion(segs: &[SegmentMoments]) -> (f64, Vec<MomentGrad>) {
    let k = segs.len();
    let mut p = vec![1.0; k];
    for a in 1..k {
        p[a] = p[a - 1] * segs[a - 1].transmittance;
    }
    let w: Vec<f64> = segs.iter().map(|s| 1.0 - s.transmittance).collect();
    let m: Vec<f64> = segs.iter().map(|s| s.moment).collect();
    let mut loss = 0.0;
    for a in 0..k {
        loss += p[a] * p[a] * segs[a].distortion;
        for b in a + 1..k {
            loss += 2.0 * p[a] * p[b] * (w[a] * m[b] - m[a] * w[b]);
        }
    }
    let mut d_p = vec![0.0; k];
    let mut d_w = vec![0.0; k];
    let mut out = vec![MomentGrad::default(); k];
    for a in 0..k {
        out[a].distortion = p[a] * p[a];
        d_p[a] += 2.0 * p[a] * segs[a].distortion;
        for b in a + 1..k {
            let cross = w[a] * m[b] - m[a] * w[b];
            d_p[a] += 2.0 * p[b] * cross;
            d_p[b] += 2.0 * p[a] * cross;
            let pp = 2.0 * p[a] * p[b];
            d_w[a] += pp * m[b];
            d_w[b] -= pp * m[a];
            out[b].moment += pp * w[a];
            out[a].moment -= pp * w[b];
        }
    }
    for j in 0..k {
        let mut g = -d_w[j];
        for a in j + 1..k {
            // d P_a / d T_j = prod_{i<a, i != j} T_i
            let partial: f64 = (0..a).filter(|&i| i != j).map(|i| segs[i].transmittance).product();
            g += d_p[a] * partial;
        }
        out[j].transmittance = g;
    }
    (loss, out)
}

/// Per-ray loss gradients feeding the merge adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayLoss {
    pub rgb: f64,
    pub transmittance: f64,
    pub d_color: [f64; 3],
    pub d_transmittance: f64,
}

/// `L_rgb + λ1 L_T` for one ray (the distortion term is handled per segment). `gt_trans`
/// gates the transmittance term as configured.
pub fn total_loss(cfg: &LossConfig, c: [f64; 3], t: f64, gt: [f64; 3], gt_trans: f64) -> RayLoss {
    let (rgb, d_color) = loss_rgb(c, gt);
    let (lt, dt) = if gt_trans < cfg.transmittance_mask {
        loss_transmittance(t, cfg.epsilon)
    } else {
        (0.0, 0.0)
    };
    RayLoss {
        rgb,
        transmittance: lt,
        d_color,
        d_transmittance: cfg.transmittance_weight * dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transmittance_examples() {
        assert_eq!(loss_transmittance(0.0, 1e-6).0, 0.0);
        let (l, _) = loss_transmittance(1.0 - (-1.0f64).exp(), 1e-6);
        assert!((l - 1.0).abs() < 1e-15);
        let (l, g) = loss_transmittance(1.0, 1e-6);
        assert!(l.is_finite() && (l - 1e6f64.ln()).abs() < 1e-9);
        assert_eq!(g, 0.0);
        assert!(loss_transmittance(0.3, 1e-6).1 > 0.0);
    }

    #[test]
    fn rgb_examples() {
        assert_eq!(loss_rgb([0.2; 3], [0.2; 3]).0, 0.0);
        assert_eq!(loss_rgb([1.0; 3], [0.0; 3]).0, 3.0);
    }

    #[test]
    fn distortion_examples() {
        assert_eq!(loss_distortion(&[0.0; 3], &[0.1, 0.2, 0.3], &[0.0; 3], &[0.1; 3]).0, 0.0);
        let (l, _) = loss_distortion(&[0.7], &[0.5], &[0.45], &[0.55]);
        assert!((l - 0.49 * 0.1 / 3.0).abs() < 1e-15);
        let w = 0.4;
        let (l, _) = loss_distortion(&[w, w], &[0.25, 0.75], &[0.2, 0.7], &[0.3, 0.8]);
        let want = 2.0 * w * w * 0.5 + (w * w * 0.1 + w * w * 0.1) / 3.0;
        assert!((l - want).abs() < 1e-15);
    }

    // Direct double sum as the oracle.
    #[test]
    fn distortion_matches_double_sum_and_gradient() {
        let w = [0.1, 0.3, 0.05, 0.2];
        let s: [f64; 4] = [0.1, 0.2, 0.5, 0.9];
        let lo = [0.05, 0.15, 0.45, 0.85];
        let hi = [0.15, 0.25, 0.55, 0.95];
        let direct = |w: &[f64]| {
            let mut l = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    l += w[i] * w[j] * (s[i] - s[j]).abs();
                }
                l += w[i] * w[i] * (hi[i] - lo[i]) / 3.0;
            }
            l
        };
        let (l, g) = loss_distortion(&w, &s, &lo, &hi);
        assert!((l - direct(&w)).abs() < 1e-15);
        for k in 0..4 {
            let (mut a, mut b) = (w, w);
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (direct(&a) - direct(&b)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn merged_distortion_equals_global_double_sum() {
        // Two segments of local weights; global weights are P_a w.
        let a_w = [0.2, 0.3];
        let a_s = [0.1, 0.3];
        let b_w = [0.4, 0.1];
        let b_s = [0.6, 0.8];
        let len = [0.1; 2];
        let t_a = 1.0 - a_w.iter().sum::<f64>();
        let seg = |w: &[f64; 2], s: &[f64; 2]| SegmentMoments {
            transmittance: 1.0 - w.iter().sum::<f64>(),
            moment: w[0] * s[0] + w[1] * s[1],
            distortion: loss_distortion(w, s, &[0.0; 2], &len).0,
        };
        let (merged, _) = merge_distortion(&[seg(&a_w, &a_s), seg(&b_w, &b_s)]);
        let gw = [a_w[0], a_w[1], t_a * b_w[0], t_a * b_w[1]];
        let gs = [a_s[0], a_s[1], b_s[0], b_s[1]];
        let (direct, _) = loss_distortion(&gw, &gs, &[0.0; 4], &[0.1; 4]);
        assert!((merged - direct).abs() < 1e-15);
    }

    #[test]
    fn merged_distortion_gradient_matches_differences() {
        let segs = [
            SegmentMoments { transmittance: 0.6, moment: 0.05, distortion: 0.01 },
            SegmentMoments { transmittance: 0.3, moment: 0.3, distortion: 0.02 },
            SegmentMoments { transmittance: 0.8, moment: 0.15, distortion: 0.003 },
        ];
        let (_, g) = merge_distortion(&segs);
        let h = 1e-6;
        for j in 0..3 {
            for field in 0..3 {
                let bump = |d: f64| {
                    let mut s = segs;
                    match field {
                        0 => s[j].transmittance += d,
                        1 => s[j].moment += d,
                        _ => s[j].distortion += d,
                    }
                    merge_distortion(&s).0
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = [g[j].transmittance, g[j].moment, g[j].distortion][field];
                assert!((fd - an).abs() < 1e-8, "seg {j} field {field}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_lambdas_reduce_to_rgb() {
        let cfg = LossConfig {
            transmittance_weight: 0.0,
            distortion_weight: 0.0,
            ..Default::default()
        };
        let r = total_loss(&cfg, [0.1, 0.2, 0.3], 0.4, [0.0; 3], 0.0);
        assert_eq!(r.rgb, loss_rgb([0.1, 0.2, 0.3], [0.0; 3]).0);
        assert_eq!(r.d_transmittance, 0.0);
        let d = LossConfig::default();
        assert_eq!((d.transmittance_weight, d.distortion_weight), (1e-3, 1e-3));
    }
}
