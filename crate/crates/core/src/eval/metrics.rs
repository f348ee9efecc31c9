use crate::error::{Error, Result};
use crate::render::{background_mask, Frame};

/// PSNR reported for frames with zero error.
pub const PSNR_CAP: f64 = 99.0;

/// Default MOT match radius in normalized coordinates.
pub const MATCH_RADIUS: f64 = 0.05;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn frame_psnr(pred: &Frame, gt: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(pred.mse(gt)?))
}

/// Time-averaged PSNR with `MAX = 1`.
pub fn psnr(pred: &[Frame], gt: &[Frame]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::Invalid(format!(
            "psnr over {} predicted and {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += frame_psnr(p, g)?;
    }
    Ok(total / gt.len() as f64)
}

/// PSNR restricted to the dilated foreground of each ground-truth frame.
/// Frames without foreground are skipped.
pub fn l_psnr(pred: &[Frame], gt: &[Frame], background: &Frame, thresh: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Invalid("l_psnr sequence lengths differ".into()));
    }
    let (mut total, mut n) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        if !p.same_shape(g) {
            return Err(Error::Invalid("l_psnr frame shapes differ".into()));
        }
        let mask = background_mask(g, background, thresh)?;
        if mask.count() == 0 {
            continue;
        }
        let mut se = 0.0;
        for (i, &on) in mask.data.iter().enumerate() {
            if on {
                se += (0..3).map(|c| (p.data[3 * i + c] - g.data[3 * i + c]).powi(2)).sum::<f64>();
            }
        }
        total += psnr_from_mse(se / (3 * mask.count()) as f64);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Invalid("no foreground in any ground-truth frame".into()));
    }
    Ok(total / n as f64)
}

/// Minimum-cost assignment of rows to columns (Hungarian algorithm with
/// potentials). Every row is assigned when `rows ≤ cols`; otherwise every
/// column is. Returns the column of each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let cols = min_cost_assignment(&t);
        let mut rows = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            if let Some(i) = i {
                rows[i] = Some(j);
            }
        }
        return rows;
    }
    // 1-based arrays; p[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![None; n];
    for j in 1..=m {
        if p[j] > 0 {
            rows[p[j] - 1] = Some(j - 1);
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotResult {
    pub mota: f64,
    /// Mean matched distance; NaN when nothing was matched.
    pub motp: f64,
    pub misses: usize,
    pub false_positives: usize,
    pub switches: usize,
    pub matches: usize,
    pub objects: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// CLEAR-MOT accuracy and precision. Hypothesis and object identities are
/// their slot indices; `None` marks a slot absent in that frame. Per frame,
/// hypotheses are matched to objects by minimum total distance among pairs
/// closer than `radius` (maximizing the number of matches first). A switch
/// is counted when an object is matched to a different hypothesis than at
/// its previous match.
pub fn mot_metrics(
    pred: &[Vec<Option<[f64; 2]>>],
    gt: &[Vec<Option<[f64; 2]>>],
    radius: f64,
) -> Result<MotResult> {
    if pred.len() != gt.len() {
        return Err(Error::Invalid("MOT sequences differ in length".into()));
    }
    let mut r = MotResult {
        mota: 0.0,
        motp: 0.0,
        misses: 0,
        false_positives: 0,
        switches: 0,
        matches: 0,
        objects: 0,
    };
    let mut total_dist = 0.0;
    let mut last: Vec<Option<usize>> = Vec::new();
    for (hyp_slots, obj_slots) in pred.iter().zip(gt) {
        let hyp: Vec<(usize, [f64; 2])> =
            hyp_slots.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p))).collect();
        let obj: Vec<(usize, [f64; 2])> =
            obj_slots.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p))).collect();
        if last.len() < obj_slots.len() {
            last.resize(obj_slots.len(), None);
        }
        // beyond any sum of in-radius distances
        let big = 1e6 * (1.0 + radius) * (obj.len() + hyp.len()) as f64;
        let cost: Vec<Vec<f64>> = obj
            .iter()
            .map(|&(_, o)| {
                hyp.iter()
                    .map(|&(_, h)| {
                        let d = dist(o, h);
                        if d <= radius {
                            d
                        } else {
                            big
                        }
                    })
                    .collect()
            })
            .collect();
        let assign = if hyp.is_empty() {
            vec![None; obj.len()]
        } else {
            min_cost_assignment(&cost)
        };
        let mut matched = 0;
        for (j, a) in assign.iter().enumerate() {
            match a {
                Some(h) if cost[j][*h] <= radius => {
                    matched += 1;
                    total_dist += cost[j][*h];
                    let (slot, id) = (obj[j].0, hyp[*h].0);
                    if last[slot].is_some_and(|prev| prev != id) {
                        r.switches += 1;
                    }
                    last[slot] = Some(id);
                }
                _ => r.misses += 1,
            }
        }
        r.matches += matched;
        r.false_positives += hyp.len() - matched;
        r.objects += obj.len();
    }
    r.mota = if r.objects == 0 {
        1.0
    } else {
        1.0 - (r.misses + r.false_positives + r.switches) as f64 / r.objects as f64
    };
    r.motp = if r.matches == 0 {
        f64::NAN
    } else {
        total_dist / r.matches as f64
    };
    Ok(r)
}

/// Per-coordinate mean squared error over `(t, k)` with `present[k]`.
pub fn position_mse(pred: &[Vec<[f64; 2]>], gt: &[Vec<[f64; 2]>], present: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::Invalid(format!(
            "position mse over {} vs {} frames",
            pred.len(),
            gt.len()
        )));
    }
    let (mut se, mut n) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() || g.len() != present.len() {
            return Err(Error::Invalid("position mse keypoint counts differ".into()));
        }
        for ((a, b), &on) in p.iter().zip(g).zip(present) {
            if on {
                se += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                n += 2;
            }
        }
    }
    if n == 0 {
        return Err(Error::Invalid("no keypoints to score".into()));
    }
    Ok(se / n as f64)
}
