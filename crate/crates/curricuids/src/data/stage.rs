//! Curriculum stage plans: ordered difficulty tiers mapping attack-type
//! label patterns to stages. Stage 1 is always the normal/benign tier.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    EdgeIIoT,
    CicAptIIoT2024,
    CicIoV2024,
    Custom,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edge-iiot" | "edgeiiot" | "edge_iiot" => Ok(DatasetKind::EdgeIIoT),
            "cic-apt-iiot-2024" | "cicaptiiot2024" | "cic-apt" => Ok(DatasetKind::CicAptIIoT2024),
            "cic-iov-2024" | "ciciov2024" | "cic-iov" => Ok(DatasetKind::CicIoV2024),
            "custom" => Ok(DatasetKind::Custom),
            other => Err(Error::UnknownDatasetKind(other.to_string())),
        }
    }
}

/// One curriculum tier. Patterns match case-insensitively as substrings of
/// the attack-type label; the wildcard `"*"` matches every non-normal tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub index: usize,
    pub name: String,
    pub label_patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub dataset_kind: DatasetKind,
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("stage plan has no stages".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.index != i + 1 {
                return Err(Error::InvalidConfig(format!(
                    "stage indices must be contiguous from 1; found {} at position {}",
                    s.index,
                    i + 1
                )));
            }
            if s.label_patterns.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "stage {} has no label patterns",
                    s.index
                )));
            }
        }
        if self.stages[0].label_patterns.iter().any(|p| p == "*") {
            return Err(Error::InvalidConfig(
                "stage 1 must list normal patterns, not the wildcard".into(),
            ));
        }
        Ok(())
    }

    /// Does this tag belong to the normal tier?
    pub fn is_normal(&self, tag: &str) -> bool {
        matches_any(&self.stages[0].label_patterns, tag)
    }

    /// Stage index (1-based) for a tag, or None when no stage matches.
    /// Wildcard stages are consulted only after every literal pattern.
    pub fn match_stage(&self, tag: &str) -> Option<usize> {
        for s in &self.stages {
            if s.label_patterns.iter().any(|p| p != "*") && matches_any(&s.label_patterns, tag) {
                return Some(s.index);
            }
        }
        if self.is_normal(tag) {
            return Some(1);
        }
        self.stages
            .iter()
            .find(|s| s.label_patterns.iter().any(|p| p == "*"))
            .map(|s| s.index)
    }

    /// Tags that no stage claims. These are reported to the caller rather
    /// than silently dropped.
    pub fn unmatched_tags<'a>(&self, tags: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut out: Vec<String> = tags
            .into_iter()
            .filter(|t| self.match_stage(t).is_none())
            .map(|t| t.to_string())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Tags claimed by more than one stage (plan/dataset mismatch check).
    pub fn ambiguous_tags<'a>(&self, tags: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut out = Vec::new();
        for tag in tags {
            let hits = self
                .stages
                .iter()
                .filter(|s| {
                    s.label_patterns
                        .iter()
                        .any(|p| p != "*" && pattern_matches(p, tag))
                })
                .count();
            if hits > 1 {
                out.push(tag.to_string());
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Read a stage-plan override file: a JSON object mapping stage index
    /// to its list of label patterns.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<StagePlan> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::IoFailure(format!("{}: {e}", path.as_ref().display())))?;
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
        let mut stages = Vec::new();
        for (key, patterns) in &map {
            let index: usize = key.parse().map_err(|_| {
                Error::InvalidConfig(format!("stage key {key:?} is not an integer"))
            })?;
            stages.push(Stage {
                index,
                name: format!("stage{index}"),
                label_patterns: patterns.clone(),
            });
        }
        stages.sort_by_key(|s| s.index);
        let plan = StagePlan {
            dataset_kind: DatasetKind::Custom,
            stages,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, Vec<String>> = self
            .stages
            .iter()
            .map(|s| (s.index.to_string(), s.label_patterns.clone()))
            .collect();
        serde_json::to_string_pretty(&map).expect("plan serializes")
    }
}

fn pattern_matches(pattern: &str, tag: &str) -> bool {
    tag.to_ascii_lowercase()
        .contains(&pattern.to_ascii_lowercase())
}

fn matches_any(patterns: &[String], tag: &str) -> bool {
    patterns.iter().any(|p| p != "*" && pattern_matches(p, tag))
}

/// The difficulty staging used in the evaluation datasets.
pub fn build_stage_plan(kind: DatasetKind) -> Result<StagePlan> {
    let stages = |list: &[(&str, &[&str])]| -> Vec<Stage> {
        list.iter()
            .enumerate()
            .map(|(i, (name, patterns))| Stage {
                index: i + 1,
                name: name.to_string(),
                label_patterns: patterns.iter().map(|p| p.to_string()).collect(),
            })
            .collect()
    };
    let plan = match kind {
        DatasetKind::EdgeIIoT => StagePlan {
            dataset_kind: kind,
            stages: stages(&[
                ("normal", &["normal", "benign"]),
                (
                    "simple_recon",
                    &["os fingerprint", "fingerprinting", "port scan", "port_scan", "scanning", "vulnerability scanner", "vulnerability_scanner"],
                ),
                (
                    "medium_injection",
                    &["xss", "sql injection", "sql_injection", "password", "uploading"],
                ),
                (
                    "complex_attacks",
                    &["backdoor", "ddos", "mitm", "ransomware"],
                ),
            ]),
        },
        DatasetKind::CicAptIIoT2024 => StagePlan {
            dataset_kind: kind,
            stages: stages(&[("normal", &["normal", "benign"]), ("attack", &["*"])]),
        },
        DatasetKind::CicIoV2024 => StagePlan {
            dataset_kind: kind,
            stages: stages(&[
                ("normal", &["normal", "benign"]),
                ("spoofing", &["gas", "rpm", "speed", "steering_wheel", "steering wheel"]),
                ("dos", &["dos"]),
            ]),
        },
        DatasetKind::Custom => {
            return Err(Error::InvalidConfig(
                "custom plans come from a JSON override file".into(),
            ))
        }
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_iiot_stage_two_includes_port_scanning() {
        let plan = build_stage_plan(DatasetKind::EdgeIIoT).unwrap();
        assert_eq!(plan.n_stages(), 4);
        assert_eq!(plan.match_stage("Port Scanning"), Some(2));
        assert_eq!(plan.match_stage("OS Fingerprinting"), Some(2));
        assert_eq!(plan.match_stage("Vulnerability Scanner"), Some(2));
        assert_eq!(plan.match_stage("SQL Injection"), Some(3));
        assert_eq!(plan.match_stage("Ransomware"), Some(4));
        assert_eq!(plan.match_stage("Normal"), Some(1));
    }

    #[test]
    fn cic_iov_stage_two_is_the_four_spoofing_targets() {
        let plan = build_stage_plan(DatasetKind::CicIoV2024).unwrap();
        assert_eq!(plan.n_stages(), 3);
        let s2 = &plan.stages[1];
        for target in ["GAS", "RPM", "SPEED", "STEERING_WHEEL"] {
            assert_eq!(plan.match_stage(target), Some(2), "{target}");
            assert!(s2.label_patterns.iter().any(|p| target.to_lowercase().contains(p)));
        }
        assert_eq!(plan.match_stage("DoS"), Some(3));
    }

    #[test]
    fn cic_apt_has_exactly_two_stages() {
        let plan = build_stage_plan(DatasetKind::CicAptIIoT2024).unwrap();
        assert_eq!(plan.n_stages(), 2);
        assert_eq!(plan.match_stage("anything-unusual"), Some(2));
        assert_eq!(plan.match_stage("Benign"), Some(1));
    }

    #[test]
    fn unknown_kind_string_is_rejected() {
        assert!(matches!(
            "not-a-dataset".parse::<DatasetKind>(),
            Err(Error::UnknownDatasetKind(_))
        ));
    }

    #[test]
    fn unmatched_tags_are_reported() {
        let plan = build_stage_plan(DatasetKind::CicIoV2024).unwrap();
        let unmatched = plan.unmatched_tags(["Normal", "GAS", "flood-novel"]);
        assert_eq!(unmatched, vec!["flood-novel".to_string()]);
    }

    #[test]
    fn json_override_round_trip() {
        let plan = build_stage_plan(DatasetKind::EdgeIIoT).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        std::fs::write(&path, plan.to_json()).unwrap();
        let loaded = StagePlan::from_json_file(&path).unwrap();
        assert_eq!(loaded.n_stages(), 4);
        for (a, b) in loaded.stages.iter().zip(&plan.stages) {
            assert_eq!(a.label_patterns, b.label_patterns);
        }
    }

    #[test]
    fn plan_validation_rejects_gaps() {
        let plan = StagePlan {
            dataset_kind: DatasetKind::Custom,
            stages: vec![
                Stage {
                    index: 1,
                    name: "normal".into(),
                    label_patterns: vec!["normal".into()],
                },
                Stage {
                    index: 3,
                    name: "later".into(),
                    label_patterns: vec!["dos".into()],
                },
            ],
        };
        assert!(plan.validate().is_err());
    }
}
