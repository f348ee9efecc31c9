use serde::{Deserialize, Serialize};

use crate::bench::DoKind;

/// One scored prediction with its intervention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoopRecord {
    pub kind: DoKind,
    pub magnitude: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoopBin {
    pub kind: DoKind,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoopReport {
    pub bins: Vec<DoopBin>,
    /// Mean PSNR of shifts minus mean PSNR of removals, when both occur.
    pub shift_minus_remove: Option<f64>,
}

/// PSNR binned by intervention kind and, for shifts, by magnitude into
/// `n_bins` equal-width bins spanning the observed range. Empty bins are
/// omitted.
pub fn doop_impact(records: &[DoopRecord], n_bins: usize) -> DoopReport {
    let n_bins = n_bins.max(1);
    let mut bins = Vec::new();
    let mut means = Vec::new();
    for kind in [DoKind::Shift, DoKind::Remove] {
        let rs: Vec<&DoopRecord> = records.iter().filter(|r| r.kind == kind).collect();
        if rs.is_empty() {
            means.push(None);
            continue;
        }
        means.push(Some(rs.iter().map(|r| r.psnr).sum::<f64>() / rs.len() as f64));
        let lo = rs.iter().map(|r| r.magnitude).fold(f64::INFINITY, f64::min);
        let hi = rs.iter().map(|r| r.magnitude).fold(f64::NEG_INFINITY, f64::max);
        let nb = if hi > lo { n_bins } else { 1 };
        let width = (hi - lo) / nb as f64;
        let mut acc = vec![(0usize, 0.0f64); nb];
        for r in &rs {
            let i = if width > 0.0 {
                (((r.magnitude - lo) / width) as usize).min(nb - 1)
            } else {
                0
            };
            acc[i].0 += 1;
            acc[i].1 += r.psnr;
        }
        for (i, (count, sum)) in acc.into_iter().enumerate() {
            if count > 0 {
                bins.push(DoopBin {
                    kind,
                    lo: lo + width * i as f64,
                    hi: if i + 1 == nb { hi } else { lo + width * (i + 1) as f64 },
                    count,
                    mean_psnr: sum / count as f64,
                });
            }
        }
    }
    let shift_minus_remove = match (means[0], means[1]) {
        (Some(s), Some(r)) => Some(s - r),
        _ => None,
    };
    DoopReport {
        bins,
        shift_minus_remove,
    }
}

impl DoopReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,lo,hi,count,mean_psnr\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.kind.as_str(),
                b.lo,
                b.hi,
                b.count,
                b.mean_psnr
            ));
        }
        out
    }
}
