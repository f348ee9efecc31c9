use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Body, SimError, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl BodyState {
    pub(crate) fn capture(bodies: &[Body]) -> Vec<BodyState> {
        bodies
            .iter()
            .map(|b| BodyState {
                position: b.position,
                velocity: b.velocity,
            })
            .collect()
    }
}

/// Uniformly sampled per-body states; frame `i` is at time `i / fps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub fps: f64,
    pub states: Vec<Vec<BodyState>>,
}

impl Trajectory {
    pub fn n_frames(&self) -> usize {
        self.states.len()
    }

    pub fn n_bodies(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn time(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 / self.fps
    }

    pub fn positions(&self, frame: usize) -> impl Iterator<Item = Vec2> + '_ {
        self.states[frame].iter().map(|s| s.position)
    }

    /// Keeps every `fps / target_fps`-th frame starting at t = 0.
    pub fn resample(&self, target_fps: f64) -> Result<Trajectory, SimError> {
        if !(target_fps > 0.0) {
            return Err(SimError::Timing(format!(
                "target fps must be positive, got {target_fps}"
            )));
        }
        let ratio = self.fps / target_fps;
        let stride = ratio.round();
        if stride < 1.0 || (ratio - stride).abs() > 1e-9 {
            return Err(SimError::Timing(format!(
                "{target_fps} fps does not divide {} fps",
                self.fps
            )));
        }
        Ok(Trajectory {
            fps: target_fps,
            states: self
                .states
                .iter()
                .step_by(stride as usize)
                .cloned()
                .collect(),
        })
    }

    /// Writes `t,obj,x,y,vx,vy` rows, one per body per frame. Times use six
    /// decimals; state values use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,obj,x,y,vx,vy")?;
        for (f, frame) in self.states.iter().enumerate() {
            let t = self.time(f);
            for (i, s) in frame.iter().enumerate() {
                writeln!(
                    w,
                    "{t:.6},{i},{},{},{},{}",
                    s.position.x, s.position.y, s.velocity.x, s.velocity.y
                )?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Parses the CSV written by [`Trajectory::write_csv`]. The frame rate is
    /// recovered from the time column; `fps_hint` is required for
    /// single-frame files.
    pub fn read_csv<R: BufRead>(r: R, fps_hint: Option<f64>) -> Result<Trajectory, SimError> {
        let bad = |msg: String| SimError::Malformed(msg);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        if header.trim() != "t,obj,x,y,vx,vy" {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let mut times: Vec<f64> = Vec::new();
        let mut states: Vec<Vec<BodyState>> = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad(format!("line {}: expected 6 fields", ln + 2)));
            }
            let num = |s: &str| -> Result<f64, SimError> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", ln + 2)))
            };
            let t = num(fields[0])?;
            let obj: usize = fields[1]
                .trim()
                .parse()
                .map_err(|e| bad(format!("line {}: {e}", ln + 2)))?;
            let state = BodyState {
                position: Vec2::new(num(fields[2])?, num(fields[3])?),
                velocity: Vec2::new(num(fields[4])?, num(fields[5])?),
            };
            if obj == 0 {
                times.push(t);
                states.push(Vec::new());
            }
            let frame = states
                .last_mut()
                .ok_or_else(|| bad("first row must be object 0".into()))?;
            if frame.len() != obj {
                return Err(bad(format!("line {}: object index out of order", ln + 2)));
            }
            frame.push(state);
        }
        if states.is_empty() {
            return Err(bad("no rows".into()));
        }
        let n = states[0].len();
        if states.iter().any(|s| s.len() != n) {
            return Err(bad("body count varies between frames".into()));
        }
        let fps = match (times.len(), fps_hint) {
            (1, Some(f)) => f,
            (1, None) => return Err(bad("single frame: fps cannot be inferred".into())),
            _ => (1.0 / (times[1] - times[0])).round(),
        };
        Ok(Trajectory { fps, states })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(frames: usize, fps: f64) -> Trajectory {
        Trajectory {
            fps,
            states: (0..frames)
                .map(|f| {
                    vec![BodyState {
                        position: Vec2::new(f as f64 * 0.1, 0.5),
                        velocity: Vec2::new(1.0 / 3.0, 0.0),
                    }]
                })
                .collect(),
        }
    }

    #[test]
    fn resample_decimates() {
        let t = toy(150, 25.0);
        let r = t.resample(5.0).unwrap();
        assert_eq!(r.n_frames(), 30);
        assert_eq!(r.states[1], t.states[5]);
        assert_eq!(t.resample(25.0).unwrap(), t);
        let t50 = toy(10, 50.0);
        let r25 = t50.resample(25.0).unwrap();
        assert_eq!(r25.states, vec![t50.states[0].clone(), t50.states[2].clone(), t50.states[4].clone(), t50.states[6].clone(), t50.states[8].clone()]);
        assert!(t.resample(10.0).is_err());
    }

    #[test]
    fn csv_round_trips_exactly() {
        let t = toy(4, 25.0);
        let text = t.to_csv_string();
        assert!(text.starts_with("t,obj,x,y,vx,vy\n0.000000,0,"));
        assert!(text.contains("\n0.040000,0,"));
        let back = Trajectory::read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(back, t);
    }
}
