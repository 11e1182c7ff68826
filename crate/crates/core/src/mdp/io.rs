//! JSON-lines trajectory batches.
//!
//! One trajectory per line:
//! `{"v":1,"seed":<int>,"steps":[[s,a,s_next,t,done],...]}` with `done` as 0/1.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Trajectory, Transition};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    v: u32,
    seed: u64,
    steps: Vec<[u64; 5]>,
}

pub fn trajectories_to_jsonl<W: Write>(trajectories: &[Trajectory], mut out: W) -> Result<()> {
    for traj in trajectories {
        let line = Line {
            v: SCHEMA_VERSION,
            seed: traj.seed,
            steps: traj
                .steps
                .iter()
                .map(|t| [t.state as u64, t.action as u64, t.next_state as u64, t.timestep as u64, t.done as u64])
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trajectories_from_jsonl<R: Read>(input: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        if parsed.v != SCHEMA_VERSION {
            return Err(Error::Parse { line: idx + 1, message: format!("unsupported schema version {}", parsed.v) });
        }
        let steps = parsed
            .steps
            .into_iter()
            .map(|[s, a, n, t, d]| {
                if d > 1 {
                    return Err(Error::Parse { line: idx + 1, message: format!("done flag {d} is not 0/1") });
                }
                Ok(Transition {
                    state: s as usize,
                    action: a as usize,
                    next_state: n as usize,
                    timestep: t as usize,
                    done: d == 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Trajectory { seed: parsed.seed, steps });
    }
    Ok(out)
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    trajectories_to_jsonl(trajectories, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    trajectories_from_jsonl(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_format_is_exact() {
        let traj = Trajectory {
            seed: 42,
            steps: vec![Transition { state: 3, action: 1, next_state: 4, timestep: 0, done: true }],
        };
        let mut buf = Vec::new();
        trajectories_to_jsonl(&[traj], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"v\":1,\"seed\":42,\"steps\":[[3,1,4,0,1]]}\n");
    }

    #[test]
    fn bad_version_reports_line() {
        let err = trajectories_from_jsonl("{\"v\":1,\"seed\":1,\"steps\":[]}\n{\"v\":2,\"seed\":1,\"steps\":[]}\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(raw in proptest::collection::vec(
            (any::<u32>(), proptest::collection::vec((0usize..1440, 0usize..8, 0usize..1440, any::<bool>()), 0..20)),
            0..8,
        )) {
            let trajs: Vec<Trajectory> = raw
                .into_iter()
                .map(|(seed, steps)| Trajectory {
                    seed: seed as u64,
                    steps: steps
                        .into_iter()
                        .enumerate()
                        .map(|(t, (s, a, n, d))| Transition { state: s, action: a, next_state: n, timestep: t, done: d })
                        .collect(),
                })
                .collect();
            let mut buf = Vec::new();
            trajectories_to_jsonl(&trajs, &mut buf).unwrap();
            prop_assert_eq!(trajectories_from_jsonl(buf.as_slice()).unwrap(), trajs);
        }
    }
}
