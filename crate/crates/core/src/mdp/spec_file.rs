//! JSON instance files.
//!
//! ```json
//! {
//!   "S": 2, "A": 2, "H": 2,
//!   "transitions": [[[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [1.0, 0.0]]]],
//!   "initial_dist": [1.0, 0.0],
//!   "reward": {"kind": "cumulative", "table": [[[0, 0], [0, 0]], [[1, 0], [0, 1]]]},
//!   "action_counts": [[2, 2], [2, 1]]
//! }
//! ```
//!
//! `transitions` is indexed `[h][s][a][s']` for `h < H-1`, the cumulative
//! reward table `[h][s][a]`. A `tabular-general` reward instead carries
//! `"entries": [{"start_step": 0, "steps": [[0, 1], [1, 0]], "value": 2.5}]`
//! and an optional `"bound"`. `action_counts` is optional, `[h][s]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RewardKind, TabularEpisodicMdp, Trajectory, TrajectoryReward};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpSpec {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub initial_dist: Vec<f64>,
    pub reward: RewardSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_counts: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<RewardEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardEntry {
    pub start_step: usize,
    pub steps: Vec<(usize, usize)>,
    pub value: f64,
}

fn shape_error(what: &str, index: &str, got: usize, expected: usize) -> Error {
    Error::InvalidMdp(format!("{what}{index} has {got} entries, expected {expected}"))
}

impl MdpSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates every invariant and builds the MDP and reward.
    pub fn build(&self) -> Result<(TabularEpisodicMdp, TrajectoryReward)> {
        let (s_len, a_len, h_len) = (self.num_states, self.num_actions, self.horizon);
        if h_len == 0 {
            return Err(Error::InvalidMdp("H must be positive".into()));
        }
        if self.transitions.len() != h_len - 1 {
            return Err(shape_error("transitions", "", self.transitions.len(), h_len - 1));
        }
        let mut flat = Vec::with_capacity((h_len - 1) * s_len * a_len * s_len);
        for (h, step) in self.transitions.iter().enumerate() {
            if step.len() != s_len {
                return Err(shape_error("transitions", &format!("[{h}]"), step.len(), s_len));
            }
            for (s, state) in step.iter().enumerate() {
                if state.len() != a_len {
                    return Err(shape_error("transitions", &format!("[{h}][{s}]"), state.len(), a_len));
                }
                for (a, row) in state.iter().enumerate() {
                    if row.len() != s_len {
                        return Err(shape_error("transitions", &format!("[{h}][{s}][{a}]"), row.len(), s_len));
                    }
                    flat.extend_from_slice(row);
                }
            }
        }
        let mut mdp = TabularEpisodicMdp::new(s_len, a_len, h_len, flat, self.initial_dist.clone())?;
        if let Some(counts) = &self.action_counts {
            if counts.len() != h_len {
                return Err(shape_error("action_counts", "", counts.len(), h_len));
            }
            if let Some((h, row)) = counts.iter().enumerate().find(|(_, r)| r.len() != s_len) {
                return Err(shape_error("action_counts", &format!("[{h}]"), row.len(), s_len));
            }
            mdp = mdp.with_action_counts(counts.concat())?;
        }
        let reward = match self.reward.kind {
            RewardKind::Cumulative => {
                let table = self
                    .reward
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::InvalidMdp("cumulative reward needs a table".into()))?;
                if table.len() != h_len {
                    return Err(shape_error("reward.table", "", table.len(), h_len));
                }
                let mut flat = Vec::with_capacity(h_len * s_len * a_len);
                for (h, step) in table.iter().enumerate() {
                    if step.len() != s_len {
                        return Err(shape_error("reward.table", &format!("[{h}]"), step.len(), s_len));
                    }
                    for (s, row) in step.iter().enumerate() {
                        if row.len() != a_len {
                            return Err(shape_error("reward.table", &format!("[{h}][{s}]"), row.len(), a_len));
                        }
                        flat.extend_from_slice(row);
                    }
                }
                TrajectoryReward::cumulative(h_len, s_len, a_len, flat)?
            }
            RewardKind::TabularGeneral => {
                let entries = self
                    .reward
                    .entries
                    .as_ref()
                    .ok_or_else(|| Error::InvalidMdp("tabular-general reward needs entries".into()))?;
                TrajectoryReward::general(
                    entries
                        .iter()
                        .map(|e| (Trajectory::new(e.start_step, e.steps.clone()), e.value)),
                    self.reward.bound,
                )?
            }
        };
        Ok((mdp, reward))
    }

    /// Spec of an existing cumulative instance.
    pub fn from_cumulative(mdp: &TabularEpisodicMdp, reward: &TrajectoryReward) -> Result<Self> {
        let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        let table = reward
            .step_table()
            .ok_or_else(|| Error::Unsupported("only cumulative rewards serialise as tables".into()))?;
        let transitions = mdp
            .transitions()
            .chunks(s_len * a_len * s_len)
            .map(|step| step.chunks(a_len * s_len).map(|st| st.chunks(s_len).map(<[f64]>::to_vec).collect()).collect())
            .collect();
        let table = table
            .chunks(s_len * a_len)
            .map(|step| step.chunks(a_len).map(<[f64]>::to_vec).collect())
            .collect();
        let full = mdp.action_counts().iter().all(|&c| c == a_len);
        Ok(Self {
            num_states: s_len,
            num_actions: a_len,
            horizon: h_len,
            transitions,
            initial_dist: mdp.initial_dist().to_vec(),
            reward: RewardSpec {
                kind: RewardKind::Cumulative,
                table: Some(table),
                entries: None,
                bound: None,
            },
            action_counts: (!full).then(|| mdp.action_counts().chunks(s_len).map(<[usize]>::to_vec).collect()),
        })
    }

    /// Git-style blob hash of the canonical JSON encoding.
    pub fn content_hash(&self) -> Result<String> {
        Ok(content_hash(serde_json::to_string(self)?.as_bytes()))
    }
}

/// SHA-256 over `"blob <len>\0" + content`, hex encoded.
pub fn content_hash(content: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", content.len()).as_bytes());
    hasher.update(content);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_STEP: &str = r#"{
        "S": 2, "A": 2, "H": 2,
        "transitions": [[[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [1.0, 0.0]]]],
        "initial_dist": [1.0, 0.0],
        "reward": {"kind": "cumulative", "table": [[[0, 0], [0, 0]], [[1, 0], [0, 0.5]]]}
    }"#;

    #[test]
    fn loads_and_round_trips() {
        let spec = MdpSpec::from_json(TWO_STEP).unwrap();
        let (mdp, f) = spec.build().unwrap();
        assert_eq!(mdp.transition_row(0, 1, 0), &[0.5, 0.5]);
        assert_eq!(f.step_reward(1, 1, 1), Some(0.5));
        let again = MdpSpec::from_cumulative(&mdp, &f).unwrap();
        let (mdp2, f2) = again.build().unwrap();
        assert_eq!(mdp, mdp2);
        assert_eq!(f.step_table(), f2.step_table());
        assert_eq!(spec.content_hash().unwrap(), again.content_hash().unwrap());
    }

    #[test]
    fn reports_first_bad_row() {
        let bad = TWO_STEP.replace("[[0.5, 0.5], [1.0, 0.0]]", "[[0.5, 0.5], [0.9, 0.0]]");
        let err = MdpSpec::from_json(&bad).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("step=0, state=1, action=1"), "{err}");
        let short = TWO_STEP.replace("[[1.0, 0.0], [0.0, 1.0]]", "[[1.0, 0.0]]");
        let err = MdpSpec::from_json(&short).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("transitions[0][0]"), "{err}");
    }

    #[test]
    fn empty_blob_hash_matches_git_sha256() {
        // `git hash-object --object-format=sha256` of an empty file
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
