use std::io::BufRead;

use crate::error::{Error, Result};
use crate::render::KeypointState;

/// Keypoint states over time with implicit-Euler derivatives: each row is
/// `[x, y, c1..c_{C+1}, dx, dy, dc1..dc_{C+1}]`, and `ṡ(0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSequence {
    /// Shape coefficients per keypoint (the gate is extra).
    pub c: usize,
    /// `frames[t][k]` is the row of keypoint `k` at frame `t`.
    pub frames: Vec<Vec<Vec<f64>>>,
}

impl StateSequence {
    pub fn from_states(states: &[KeypointState]) -> StateSequence {
        let c = states.first().map_or(0, KeypointState::c);
        let mut frames: Vec<Vec<Vec<f64>>> = Vec::with_capacity(states.len());
        for (t, s) in states.iter().enumerate() {
            let rows = s.to_rows();
            let full = rows
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let mut row = r.clone();
                    match t {
                        0 => row.extend(std::iter::repeat_n(0.0, r.len())),
                        _ => row.extend(r.iter().zip(&frames[t - 1][k]).map(|(a, b)| a - b)),
                    }
                    row
                })
                .collect();
            frames.push(full);
        }
        StateSequence { c, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn k(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Row width `2(C + 3)`.
    pub fn dim(&self) -> usize {
        2 * (self.c + 3)
    }

    pub fn position(&self, t: usize, k: usize) -> [f64; 2] {
        [self.frames[t][k][0], self.frames[t][k][1]]
    }

    /// The static half of each row.
    pub fn state(&self, t: usize) -> KeypointState {
        let half = self.c + 3;
        KeypointState::from_rows(
            &self.frames[t]
                .iter()
                .map(|r| r[..half].to_vec())
                .collect::<Vec<_>>(),
        )
    }

    pub fn header(c: usize) -> String {
        let mut cols = vec!["t".to_string(), "kp".into(), "x".into(), "y".into()];
        cols.extend((1..=c + 1).map(|i| format!("c{i}")));
        cols.extend(["dx".to_string(), "dy".into()]);
        cols.extend((1..=c + 1).map(|i| format!("dc{i}")));
        cols.join(",")
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Self::header(self.c);
        out.push('\n');
        for (t, frame) in self.frames.iter().enumerate() {
            for (k, row) in frame.iter().enumerate() {
                out.push_str(&format!("{t},{k}"));
                for v in row {
                    out.push_str(&format!(",{v:?}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn read_state_csv<R: BufRead>(r: R) -> Result<StateSequence> {
    let bad = |line: usize, why: &str| Error::Invalid(format!("state csv line {line}: {why}"));
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad(1, "empty"))?
        .map_err(|e| bad(1, &e.to_string()))?;
    let n_cols = header.split(',').count();
    if n_cols < 8 || (n_cols - 2) % 2 != 0 {
        return Err(bad(1, "unexpected header"));
    }
    let c = (n_cols - 2) / 2 - 3;
    if header != StateSequence::header(c) {
        return Err(bad(1, "unexpected header"));
    }
    let mut frames: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(i + 2, &e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(bad(i + 2, "wrong field count"));
        }
        let t: usize = fields[0].parse().map_err(|_| bad(i + 2, "bad frame index"))?;
        let k: usize = fields[1].parse().map_err(|_| bad(i + 2, "bad keypoint index"))?;
        let row = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(i + 2, "bad number"))?;
        if t == frames.len() {
            frames.push(Vec::new());
        }
        if t + 1 != frames.len() || k != frames[t].len() {
            return Err(bad(i + 2, "rows out of order"));
        }
        frames[t].push(row);
    }
    Ok(StateSequence { c, frames })
}
