//! Versioned plain-text serialization of episode models and sequences.
//!
//! ```text
//! format nscmdp-sequence 1
//! num_states 2
//! num_actions 2
//! horizon 3
//! initial_state 0
//! seed 7
//! drift {"kind":"piecewise_constant","num_switches":1}
//! episodes 4
//! episode 1
//! constraint_offset 1.5
//! transition 0.25 0.75 ...
//! reward ...
//! utility ...
//! episode 2
//! repeat
//! ```
//!
//! Tables are written in their flat storage order, floats with round-trip precision,
//! so `parse(write(x)) == x` bit for bit. `repeat` marks an episode identical to the
//! previous one. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env_gen::{model_budgets, Drift, NonStationaryCmdp};
use crate::error::{Error, Result};
use crate::model::{EpisodeModel, Shape};

pub const SEQUENCE_MAGIC: &str = "format nscmdp-sequence 1";
pub const EPISODE_MAGIC: &str = "format nscmdp-episode 1";

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 8);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").expect("writing to a String");
    }
    s
}

fn write_tables(out: &mut String, model: &EpisodeModel) {
    writeln!(out, "constraint_offset {:?}", model.constraint_offset()).unwrap();
    writeln!(out, "transition {}", join(model.transition())).unwrap();
    writeln!(out, "reward {}", join(model.reward())).unwrap();
    writeln!(out, "utility {}", join(model.utility())).unwrap();
}

fn write_shape(out: &mut String, shape: Shape, x1: usize) {
    writeln!(out, "num_states {}", shape.num_states).unwrap();
    writeln!(out, "num_actions {}", shape.num_actions).unwrap();
    writeln!(out, "horizon {}", shape.horizon).unwrap();
    writeln!(out, "initial_state {x1}").unwrap();
}

pub fn write_episode(model: &EpisodeModel) -> String {
    let mut out = String::new();
    writeln!(out, "{EPISODE_MAGIC}").unwrap();
    write_shape(&mut out, model.shape(), model.initial_state());
    write_tables(&mut out, model);
    out
}

pub fn write_sequence(seq: &NonStationaryCmdp) -> String {
    let mut out = String::new();
    writeln!(out, "{SEQUENCE_MAGIC}").unwrap();
    write_shape(&mut out, seq.shape(), seq.episode(1).initial_state());
    writeln!(out, "seed {}", seq.seed()).unwrap();
    writeln!(out, "drift {}", serde_json::to_string(seq.drift()).expect("drift serializes")).unwrap();
    writeln!(out, "episodes {}", seq.len()).unwrap();
    let shared = seq.shared();
    for (i, model) in shared.iter().enumerate() {
        writeln!(out, "episode {}", i + 1).unwrap();
        if i > 0 && (Arc::ptr_eq(&shared[i - 1], model) || shared[i - 1] == *model) {
            writeln!(out, "repeat").unwrap();
        } else {
            write_tables(&mut out, model);
        }
    }
    out
}

/// Line cursor that skips blanks and comments and remembers line numbers.
struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
            last: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.last,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self) -> Option<&'a str> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            self.last = i + 1;
            return Some(t);
        }
        None
    }

    fn expect_line(&mut self) -> Result<&'a str> {
        self.next_line().ok_or_else(|| Error::Parse {
            line: self.last + 1,
            msg: "unexpected end of input".into(),
        })
    }

    /// `key rest` where `key` must match.
    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.expect_line()?;
        let (k, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        if k != key {
            return Err(self.err(format!("expected `{key}`, found `{k}`")));
        }
        Ok(rest.trim())
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let v = self.keyed(key)?;
        v.parse().map_err(|_| self.err(format!("`{key}` needs a non-negative integer, got `{v}`")))
    }

    fn keyed_floats(&mut self, key: &str, expected: usize) -> Result<Vec<f64>> {
        let rest = self.keyed(key)?;
        let vals = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| self.err(format!("bad number `{t}` in `{key}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != expected {
            return Err(self.err(format!("`{key}` needs {expected} values, got {}", vals.len())));
        }
        Ok(vals)
    }
}

fn read_shape(lines: &mut Lines<'_>) -> Result<(Shape, usize)> {
    let s = lines.keyed_usize("num_states")?;
    let a = lines.keyed_usize("num_actions")?;
    let h = lines.keyed_usize("horizon")?;
    let x1 = lines.keyed_usize("initial_state")?;
    let shape = Shape::new(s, a, h).map_err(|e| lines.err(e.to_string()))?;
    Ok((shape, x1))
}

fn read_tables(lines: &mut Lines<'_>, shape: Shape, x1: usize) -> Result<EpisodeModel> {
    let b_text = lines.keyed("constraint_offset")?;
    let b: f64 = b_text
        .parse()
        .map_err(|_| lines.err(format!("bad constraint offset `{b_text}`")))?;
    let p = lines.keyed_floats("transition", shape.sas_cells())?;
    let r = lines.keyed_floats("reward", shape.sa_cells())?;
    let g = lines.keyed_floats("utility", shape.sa_cells())?;
    EpisodeModel::new(shape, p, r, g, b, x1).map_err(|e| lines.err(e.to_string()))
}

fn expect_magic(lines: &mut Lines<'_>, magic: &str) -> Result<()> {
    let first = lines.expect_line()?;
    if first != magic {
        return Err(lines.err(format!("expected header `{magic}`, found `{first}`")));
    }
    Ok(())
}

fn expect_end(lines: &mut Lines<'_>) -> Result<()> {
    match lines.next_line() {
        None => Ok(()),
        Some(extra) => Err(lines.err(format!("trailing content `{extra}`"))),
    }
}

pub fn parse_episode(text: &str) -> Result<EpisodeModel> {
    let mut lines = Lines::new(text);
    expect_magic(&mut lines, EPISODE_MAGIC)?;
    let (shape, x1) = read_shape(&mut lines)?;
    let model = read_tables(&mut lines, shape, x1)?;
    expect_end(&mut lines)?;
    Ok(model)
}

pub fn parse_sequence(text: &str) -> Result<NonStationaryCmdp> {
    let mut lines = Lines::new(text);
    expect_magic(&mut lines, SEQUENCE_MAGIC)?;
    let (shape, x1) = read_shape(&mut lines)?;
    let seed_text = lines.keyed("seed")?;
    let seed: u64 = seed_text.parse().map_err(|_| lines.err(format!("bad seed `{seed_text}`")))?;
    let drift_text = lines.keyed("drift")?;
    let drift: Drift = serde_json::from_str(drift_text).map_err(|e| lines.err(format!("bad drift: {e}")))?;
    let count = lines.keyed_usize("episodes")?;
    let mut episodes: Vec<Arc<EpisodeModel>> = Vec::with_capacity(count);
    for m in 1..=count {
        let idx = lines.keyed_usize("episode")?;
        if idx != m {
            return Err(lines.err(format!("expected episode {m}, found {idx}")));
        }
        let next = lines.inner.peek().map(|(_, l)| l.trim());
        if next == Some("repeat") {
            lines.expect_line()?;
            let prev = episodes
                .last()
                .cloned()
                .ok_or_else(|| lines.err("`repeat` on the first episode"))?;
            episodes.push(prev);
        } else {
            episodes.push(Arc::new(read_tables(&mut lines, shape, x1)?));
        }
    }
    expect_end(&mut lines)?;
    NonStationaryCmdp::from_shared(episodes, seed, drift)
}

pub fn read_sequence_file(path: &std::path::Path) -> Result<NonStationaryCmdp> {
    parse_sequence(&std::fs::read_to_string(path)?)
}

pub fn write_sequence_file(seq: &NonStationaryCmdp, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, write_sequence(seq))?;
    Ok(())
}

/// JSON sidecar written next to a sequence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetadata {
    pub seed: u64,
    pub drift: Drift,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub b_p: f64,
    pub b_r: f64,
    pub b_g: f64,
    pub b_delta: f64,
}

impl SequenceMetadata {
    pub fn of(seq: &NonStationaryCmdp) -> Self {
        let shape = seq.shape();
        let (b_p, b_r, b_g) = model_budgets(seq);
        Self {
            seed: seq.seed(),
            drift: seq.drift().clone(),
            num_states: shape.num_states,
            num_actions: shape.num_actions,
            horizon: shape.horizon,
            episodes: seq.len(),
            b_p,
            b_r,
            b_g,
            b_delta: b_p + b_r + b_g,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_gen::{make_sequence, ConstraintSchedule, GeneratorConfig, SequenceShape};

    fn seq() -> NonStationaryCmdp {
        let shape = SequenceShape {
            num_states: 3,
            num_actions: 2,
            horizon: 2,
            episodes: 6,
        };
        make_sequence(
            11,
            shape,
            Drift::PiecewiseConstant { num_switches: 1 },
            &ConstraintSchedule::Constant(0.5),
            &GeneratorConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn sequence_round_trip_is_exact() {
        let s = seq();
        let text = write_sequence(&s);
        assert_eq!(text.matches("repeat").count(), 4);
        let back = parse_sequence(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(write_sequence(&back), text);
    }

    #[test]
    fn episode_round_trip_is_exact() {
        let s = seq();
        let text = write_episode(s.episode(1));
        assert_eq!(&parse_episode(&text).unwrap(), s.episode(1));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = write_sequence(&seq());
        let broken = text.replacen("reward ", "reward 0.5 ", 1);
        match parse_sequence(&broken).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 12);
                assert!(msg.contains("reward"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_sequence("format other 2"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_episode("").is_err());
    }
}
