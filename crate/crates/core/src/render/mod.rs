//! Segmented volume rendering.
//!
//! A ray crossing `K` regions is cut at the region faces into segments `[t_i, t_{i+1})`.
//! Each region composites its own segment into a partial color `C_i` and partial
//! transmittance `T_i`; the full ray is recovered by
//!
//! ```text
//! C = sum_i (prod_{j<i} T_j) C_i        T = prod_i T_i
//! ```
//!
//! Both merge directions are implemented by hand, as is the adjoint of the local
//! alpha-compositing recurrence, so a region only ever needs the forward partials of the
//! other regions to back-propagate into its own parameters.

mod march;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Ray};

pub use march::{march_segment, Lattice, SampleSpan};

/// Slab test. Returns the overlap of the per-axis parameter intervals clipped to `t >= 0`.
///
/// A zero direction component keeps the ray iff the origin lies in `[min, max)` on that
/// axis, so a ray running along a face shared by two boxes belongs to exactly one of them.
pub fn ray_aabb_intersect(ray: &Ray, bbox: &Aabb) -> Option<(f64, f64)> {
    let mut t_near = 0.0f64;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.dir[a];
        if d == 0.0 {
            if o < bbox.min[a] || o >= bbox.max[a] {
                return None;
            }
            continue;
        }
        let t1 = (bbox.min[a] - o) / d;
        let t2 = (bbox.max[a] - o) / d;
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        t_near = t_near.max(lo);
        t_far = t_far.min(hi);
    }
    (t_near < t_far).then_some((t_near, t_far))
}

/// A ray restricted to one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaySegment {
    pub region: u16,
    pub t_enter: f64,
    pub t_exit: f64,
    pub index: usize,
}

impl RaySegment {
    pub fn length(&self) -> f64 {
        self.t_exit - self.t_enter
    }
}

/// Cuts a ray into ordered per-region segments. Region ids are positions in `boxes`.
///
/// Boundary parameters are computed once: the exit of segment `i` is the very value used as
/// the entry of segment `i + 1`.
pub fn segment_ray(ray: &Ray, boxes: &[Aabb]) -> Result<Vec<RaySegment>> {
    let mut hits: Vec<(u16, f64, f64)> = boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| ray_aabb_intersect(ray, b).map(|(n, f)| (i as u16, n, f)))
        .collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for w in hits.windows(2) {
        let (ra, _, fa) = w[0];
        let (rb, nb, _) = w[1];
        let tol = 1e-9 * (1.0 + fa.abs());
        if fa > nb + tol {
            return Err(Error::config(format!("regions {ra} and {rb} overlap along the ray")));
        }
        if nb > fa + tol {
            return Err(Error::config(format!("gap between regions {ra} and {rb} along the ray")));
        }
    }
    let k = hits.len();
    let mut segments = Vec::with_capacity(k);
    for i in 0..k {
        let t_enter = if i == 0 { hits[0].1 } else { segments_exit(&segments) };
        let t_exit = if i + 1 < k { hits[i + 1].1 } else { hits[i].2 };
        segments.push(RaySegment {
            region: hits[i].0,
            t_enter,
            t_exit,
            index: 0,
        });
    }
    // Drop zero-length pieces from rays grazing an edge, then number the rest.
    segments.retain(|s| s.t_exit > s.t_enter);
    for (i, s) in segments.iter_mut().enumerate() {
        s.index = i;
    }
    Ok(segments)
}

fn segments_exit(segments: &[RaySegment]) -> f64 {
    segments.last().map(|s| s.t_exit).unwrap_or(0.0)
}

/// Density, step and color of one quadrature sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadedSample<F> {
    pub sigma: F,
    pub delta: F,
    pub color: [F; 3],
    /// Sample position along the ray, used for the depth channel.
    pub t: F,
}

/// Result of compositing one segment, with the per-sample state needed for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRender<F> {
    pub color: [F; 3],
    pub transmittance: F,
    pub depth: F,
    pub alpha: Vec<F>,
    /// Transmittance in front of each sample.
    pub trans_before: Vec<F>,
}

impl<F: Float> LocalRender<F> {
    /// Local compositing weight `tau_k alpha_k` of each sample.
    pub fn weights(&self) -> impl Iterator<Item = F> + '_ {
        self.alpha.iter().zip(&self.trans_before).map(|(&a, &t)| a * t)
    }

    pub fn partial(&self, segment: usize, region: u16) -> PartialRender<F> {
        PartialRender {
            segment,
            region,
            color: self.color,
            transmittance: self.transmittance,
            depth: self.depth,
        }
    }
}

/// Alpha compositing over one segment: `alpha_k = 1 - exp(-sigma_k delta_k)`.
pub fn local_render<F: Float>(samples: &[ShadedSample<F>]) -> LocalRender<F> {
    let mut color = [F::zero(); 3];
    let mut depth = F::zero();
    let mut trans = F::one();
    let mut alpha = Vec::with_capacity(samples.len());
    let mut trans_before = Vec::with_capacity(samples.len());
    for s in samples {
        let a = F::one() - (-(s.sigma * s.delta)).exp();
        let w = trans * a;
        for c in 0..3 {
            color[c] = color[c] + w * s.color[c];
        }
        depth = depth + w * s.t;
        alpha.push(a);
        trans_before.push(trans);
        trans = trans * (F::one() - a);
    }
    LocalRender {
        color,
        transmittance: trans,
        depth,
        alpha,
        trans_before,
    }
}

/// Partial color and transmittance of one (ray, region) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialRender<F> {
    pub segment: usize,
    pub region: u16,
    pub color: [F; 3],
    pub transmittance: F,
    /// Auxiliary expected-termination channel, merged like color.
    pub depth: F,
}

impl<F: Float> PartialRender<F> {
    /// The algebraic identity of the merge: nothing absorbed, nothing emitted.
    pub fn empty(segment: usize, region: u16) -> Self {
        PartialRender {
            segment,
            region,
            color: [F::zero(); 3],
            transmittance: F::one(),
            depth: F::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedRender<F> {
    pub color: [F; 3],
    pub transmittance: F,
    pub depth: F,
    /// `prod_{j<i} T_j` for every segment (1 for the first).
    pub prefix: Vec<F>,
}

fn check_order<F>(partials: &[PartialRender<F>]) -> Result<()> {
    if partials.is_empty() {
        return Err(Error::protocol("merge needs at least one partial"));
    }
    for (i, p) in partials.iter().enumerate() {
        if p.segment != i {
            return Err(Error::protocol(format!(
                "partial at position {i} carries segment index {} (missing or duplicated segment)",
                p.segment
            )));
        }
    }
    Ok(())
}

/// Sorts buffered partials by segment index and checks that `0..K` is complete.
pub fn order_partials<F: Copy>(mut partials: Vec<PartialRender<F>>) -> Result<Vec<PartialRender<F>>> {
    partials.sort_by_key(|p| p.segment);
    check_order(&partials)?;
    Ok(partials)
}

/// Prefix-transmittance merge of ordered partials.
pub fn merge_forward<F: Float>(partials: &[PartialRender<F>]) -> Result<MergedRender<F>> {
    merge_forward_truncated(partials, None)
}

/// [`merge_forward`] that, given a threshold, stops once the prefix transmittance drops
/// below it. Used only for evaluation.
pub fn merge_forward_truncated<F: Float>(partials: &[PartialRender<F>], early_stop: Option<F>) -> Result<MergedRender<F>> {
    check_order(partials)?;
    let mut color = [F::zero(); 3];
    let mut depth = F::zero();
    let mut trans = F::one();
    let mut prefix = Vec::with_capacity(partials.len());
    for p in partials {
        prefix.push(trans);
        if let Some(th) = early_stop {
            if trans < th {
                continue;
            }
        }
        for c in 0..3 {
            color[c] = color[c] + trans * p.color[c];
        }
        depth = depth + trans * p.depth;
        trans = trans * p.transmittance;
    }
    Ok(MergedRender {
        color,
        transmittance: trans,
        depth,
        prefix,
    })
}

/// Loss gradients with respect to a merged ray.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MergeUpstream {
    pub color: [f64; 3],
    pub transmittance: f64,
    pub depth: f64,
}

/// Loss gradients with respect to one partial.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PartialGrad {
    pub color: [f64; 3],
    pub transmittance: f64,
    pub depth: f64,
}

/// Adjoint of [`merge_forward`].
///
/// `dL/dC_i = dL/dC * prod_{j<i} T_j`
/// `dL/dT_i = dL/dT * prod_{j!=i} T_j + dL/dC * sum_{k>i} (prod_{j<k, j!=i} T_j) C_k`
///
/// Products that skip `T_i` are built from prefix and suffix products, never by division.
pub fn merge_backward(upstream: &MergeUpstream, partials: &[PartialRender<f64>]) -> Result<Vec<PartialGrad>> {
    check_order(partials)?;
    let k = partials.len();
    let mut prefix = vec![1.0; k];
    for i in 1..k {
        prefix[i] = prefix[i - 1] * partials[i - 1].transmittance;
    }
    let mut suffix = vec![1.0; k + 1];
    for i in (0..k).rev() {
        suffix[i] = suffix[i + 1] * partials[i].transmittance;
    }
    // tail[i] = sum_{m>i} (prod_{i<j<m} T_j) [C_m, depth_m]
    let mut tail = vec![[0.0f64; 4]; k];
    for i in (0..k.saturating_sub(1)).rev() {
        let next = &partials[i + 1];
        let t_next = next.transmittance;
        for c in 0..3 {
            tail[i][c] = next.color[c] + t_next * tail[i + 1][c];
        }
        tail[i][3] = next.depth + t_next * tail[i + 1][3];
    }
    Ok((0..k)
        .map(|i| {
            let p = prefix[i];
            let mut d_trans = upstream.transmittance * p * suffix[i + 1];
            for c in 0..3 {
                d_trans += upstream.color[c] * p * tail[i][c];
            }
            d_trans += upstream.depth * p * tail[i][3];
            PartialGrad {
                color: upstream.color.map(|g| g * p),
                transmittance: d_trans,
                depth: upstream.depth * p,
            }
        })
        .collect())
}

/// Per-sample gradients of the local render.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleGrad {
    pub sigma: f64,
    pub color: [f64; 3],
}

/// Adjoint of [`local_render`], including the path through the partial transmittance.
///
/// `weight_grads`, when given, adds a direct gradient on each local compositing weight
/// `tau_k alpha_k` (the distortion loss enters this way).
pub fn local_render_backward(
    samples: &[ShadedSample<f64>],
    forward: &LocalRender<f64>,
    upstream: &PartialGrad,
    weight_grads: Option<&[f64]>,
) -> Result<Vec<SampleGrad>> {
    let n = samples.len();
    if forward.alpha.len() != n || forward.trans_before.len() != n {
        return Err(Error::MissingCache("local render forward state"));
    }
    if let Some(w) = weight_grads {
        if w.len() != n {
            return Err(Error::Shape(format!("{} weight gradients for {n} samples", w.len())));
        }
    }
    // Gradient reaching each compositing weight.
    let gw: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut g = upstream.depth * s.t;
            for c in 0..3 {
                g += upstream.color[c] * s.color[c];
            }
            if let Some(w) = weight_grads {
                g += w[k];
            }
            g
        })
        .collect();
    let t_final = forward.transmittance;
    let mut out = vec![SampleGrad::default(); n];
    // later = sum_{m>k} w_m gw_m
    let mut later = 0.0;
    for k in (0..n).rev() {
        let s = &samples[k];
        let tau = forward.trans_before[k];
        let a = forward.alpha[k];
        let w = tau * a;
        let tau_after = tau * (1.0 - a);
        out[k] = SampleGrad {
            sigma: s.delta * (tau_after * gw[k] - later) - s.delta * t_final * upstream.transmittance,
            color: upstream.color.map(|g| g * w),
        };
        later += w * gw[k];
    }
    Ok(out)
}
