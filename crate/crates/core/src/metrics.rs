//! Segmentation overlap and surface-distance metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::deform;
use crate::error::{Error, Result};
use crate::grid::{DenseField, GridSpec, LabelMap};

/// Per-label Dice scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    pub per_label: BTreeMap<u32, f64>,
    /// Requested labels absent from both maps.
    pub skipped: Vec<u32>,
    /// Mean over evaluated labels.
    pub mean: f64,
}

fn check_grids(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "label grids {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Labels other than background (0) present in either map, sorted.
pub fn foreground_labels(a: &LabelMap, b: &LabelMap) -> Vec<u32> {
    let mut l: Vec<u32> = a.labels().into_iter().chain(b.labels()).filter(|&x| x != 0).collect();
    l.sort_unstable();
    l.dedup();
    l
}

/// `2|A ∩ B| / (|A| + |B|)` per label.
pub fn dice(a: &LabelMap, b: &LabelMap, labels: &[u32]) -> Result<DiceScores> {
    check_grids(a.grid(), b.grid())?;
    let mut per_label = BTreeMap::new();
    let mut skipped = Vec::new();
    for &label in labels {
        let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
        for (&x, &y) in a.values().iter().zip(b.values()) {
            let (ia, ib) = (x == label, y == label);
            na += usize::from(ia);
            nb += usize::from(ib);
            both += usize::from(ia && ib);
        }
        if na + nb == 0 {
            skipped.push(label);
        } else {
            per_label.insert(label, 2.0 * both as f64 / (na + nb) as f64);
        }
    }
    if per_label.is_empty() {
        return Err(Error::InvalidParameter(
            "none of the requested labels occur in either map".into(),
        ));
    }
    let mean = per_label.values().sum::<f64>() / per_label.len() as f64;
    Ok(DiceScores {
        per_label,
        skipped,
        mean,
    })
}

/// Nearest-neighbor backward warp of a label map, with border clamping.
pub fn warp_labels(labels: &LabelMap, phi: &DenseField) -> Result<LabelMap> {
    check_grids(labels.grid(), phi.grid())?;
    if phi.channels().iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("displacement"));
    }
    let grid = labels.grid();
    let dims = grid.dims();
    let values = (0..grid.len())
        .map(|f| {
            let idx = grid.unravel(f);
            let src = idx
                .iter()
                .enumerate()
                .fold(0, |acc, (d, &i)| {
                    let p = (i as f64 + phi.channel(d)[f]).clamp(0.0, (dims[d] - 1) as f64);
                    acc * dims[d] + p.round() as usize
                });
            labels.values()[src]
        })
        .collect();
    LabelMap::new(grid.clone(), values)
}

/// Foreground voxels of `label` with at least one face neighbor that is
/// background or outside the grid.
pub fn boundary_voxels(map: &LabelMap, label: u32) -> Vec<usize> {
    let grid = map.grid();
    let dims = grid.dims();
    let strides = grid.strides();
    let v = map.values();
    (0..grid.len())
        .filter(|&f| {
            if v[f] != label {
                return false;
            }
            let idx = grid.unravel(f);
            (0..dims.len()).any(|d| {
                idx[d] == 0
                    || idx[d] + 1 == dims[d]
                    || v[f - strides[d]] != label
                    || v[f + strides[d]] != label
            })
        })
        .collect()
}

const FAR: f64 = 1e30;

/// Exact squared Euclidean distance transform of a 1D sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every voxel to the nearest seed voxel.
pub(crate) fn squared_distance_transform(grid: &GridSpec, seeds: &[usize]) -> Vec<f64> {
    let mut cur = vec![FAR; grid.len()];
    for &s in seeds {
        cur[s] = 0.0;
    }
    let dims = grid.dims();
    let strides = grid.strides();
    let total = grid.len();
    for (axis, &m) in dims.iter().enumerate() {
        let stride = strides[axis];
        let mut v = vec![0usize; m];
        let mut z = vec![0.0; m + 1];
        let mut lane = vec![0.0; m];
        let mut out = vec![0.0; m];
        for outer in (0..total).step_by(stride * m) {
            for inner in 0..stride {
                let base = outer + inner;
                for t in 0..m {
                    lane[t] = cur[base + t * stride];
                }
                edt_1d(&lane, &mut out, &mut v, &mut z);
                for t in 0..m {
                    cur[base + t * stride] = out[t];
                }
            }
        }
    }
    cur
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    let frac = pos - lo as f64;
    s[lo] + frac * (s[hi] - s[lo])
}

/// Directed nearest-boundary distances from `from` voxels to `to` voxels.
fn directed(grid: &GridSpec, from: &[usize], to: &[usize]) -> Vec<f64> {
    let dt = squared_distance_transform(grid, to);
    from.iter().map(|&f| dt[f].sqrt()).collect()
}

/// 95th percentile of the pooled boundary-to-boundary distances in both
/// directions, in voxels.
pub fn hd95(a: &LabelMap, b: &LabelMap, label: u32) -> Result<f64> {
    check_grids(a.grid(), b.grid())?;
    let ba = boundary_voxels(a, label);
    if ba.is_empty() {
        return Err(Error::LabelMissing { label, side: "first" });
    }
    let bb = boundary_voxels(b, label);
    if bb.is_empty() {
        return Err(Error::LabelMissing { label, side: "second" });
    }
    let mut d = directed(a.grid(), &ba, &bb);
    d.extend(directed(a.grid(), &bb, &ba));
    Ok(percentile(&d, 95.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice_per_label: BTreeMap<u32, f64>,
    pub dice_mean: f64,
    pub dice_skipped: Vec<u32>,
    pub hd95_per_label: BTreeMap<u32, f64>,
    pub hd95_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folding_percent: Option<f64>,
}

/// Dice and HD95 for every label (default: all foreground labels), plus the
/// folding percentage of `phi` when given. HD95 is computed for labels
/// present in both maps.
pub fn evaluate(
    a: &LabelMap,
    b: &LabelMap,
    labels: Option<&[u32]>,
    phi: Option<&DenseField>,
) -> Result<MetricReport> {
    let all = foreground_labels(a, b);
    let labels = labels.map_or(all, <[u32]>::to_vec);
    let d = dice(a, b, &labels)?;
    let present_a = a.labels();
    let present_b = b.labels();
    let mut hd = BTreeMap::new();
    for &l in &labels {
        if present_a.binary_search(&l).is_ok() && present_b.binary_search(&l).is_ok() {
            hd.insert(l, hd95(a, b, l)?);
        }
    }
    let hd95_mean = if hd.is_empty() {
        0.0
    } else {
        hd.values().sum::<f64>() / hd.len() as f64
    };
    Ok(MetricReport {
        dice_per_label: d.per_label,
        dice_mean: d.mean,
        dice_skipped: d.skipped,
        hd95_per_label: hd,
        hd95_mean,
        folding_percent: phi.map(|p| deform::jacobian(p).folding_percent),
    })
}
