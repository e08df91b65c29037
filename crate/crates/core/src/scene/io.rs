use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{epdms, pdms};
use super::types::{Scene, SubScores};
use crate::error::{Error, Result};
use crate::table::{fmt_f64, Csv};

pub const SCENE_VERSION: &str = "SCN1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    version: String,
    id: String,
    scene: Scene,
}

pub fn scene_to_json(id: &str, scene: &Scene) -> Result<String> {
    let doc = SceneDoc {
        version: SCENE_VERSION.into(),
        id: id.into(),
        scene: scene.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parses and validates a scene document, returning (id, scene).
pub fn scene_from_json(s: &str) -> Result<(String, Scene)> {
    let v: serde_json::Value = serde_json::from_str(s)?;
    let found = v.get("version").and_then(|v| v.as_str()).unwrap_or("").to_string();
    if found != SCENE_VERSION {
        return Err(Error::Version {
            expected: SCENE_VERSION.into(),
            found,
        });
    }
    let doc: SceneDoc = serde_json::from_value(v)?;
    doc.scene.validate()?;
    Ok((doc.id, doc.scene))
}

pub fn load_scene(path: &Path) -> Result<(String, Scene)> {
    scene_from_json(&std::fs::read_to_string(path)?)
}

pub const SCORES_HEADER: [&str; 14] = [
    "scenario_id", "policy", "nc", "dac", "ddc", "tlc", "ep", "ttc", "c", "hc", "lk", "ec", "pdms", "epdms",
];

/// One scored trajectory; `human` is the expert's scores in the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub scenario_id: String,
    pub policy: String,
    pub scores: SubScores,
    pub pdms: f64,
    pub epdms: f64,
}

impl ScoreRow {
    pub fn new(scenario_id: &str, policy: &str, scores: SubScores, human: &SubScores) -> Self {
        ScoreRow {
            scenario_id: scenario_id.into(),
            policy: policy.into(),
            scores,
            pdms: pdms(&scores),
            epdms: epdms(&scores, human),
        }
    }
}

pub fn scores_csv(rows: &[ScoreRow]) -> String {
    let mut csv = Csv::new(&SCORES_HEADER);
    for r in rows {
        let mut f = vec![r.scenario_id.clone(), r.policy.clone()];
        f.extend(r.scores.to_array().iter().map(|v| fmt_f64(*v)));
        f.push(fmt_f64(r.pdms));
        f.push(fmt_f64(r.epdms));
        csv.row(f);
    }
    csv.into_string()
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SCORES_HEADER.join(",") => {}
        _ => {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("expected header {}", SCORES_HEADER.join(",")),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != SCORES_HEADER.len() {
            return Err(Error::MalformedRow {
                line: i + 1,
                reason: format!("expected {} fields, got {}", SCORES_HEADER.len(), f.len()),
            });
        }
        let mut nums = [0.0; 12];
        for (j, v) in f[2..].iter().enumerate() {
            nums[j] = v.trim().parse().map_err(|_| Error::MalformedRow {
                line: i + 1,
                reason: format!("bad number {v:?}"),
            })?;
        }
        let mut sub = [0.0; 10];
        sub.copy_from_slice(&nums[..10]);
        out.push(ScoreRow {
            scenario_id: f[0].into(),
            policy: f[1].into(),
            scores: SubScores::from_array(sub),
            pdms: nums[10],
            epdms: nums[11],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::types::{EgoState, Trajectory};

    fn scene() -> Scene {
        Scene {
            ego_start: EgoState {
                x: 0.0,
                y: 0.0,
                theta: 0.0,
                v: 5.0,
            },
            agents: vec![],
            drivable: vec![[-5.0, -3.0], [50.0, -3.0], [50.0, 3.0], [-5.0, 3.0]],
            centerline: vec![[-5.0, 0.0], [50.0, 0.0]],
            expert: Trajectory::new((1..=4).map(|k| [2.5 * k as f64, 0.0, 0.0]).collect(), 0.5).unwrap(),
            red_light: false,
            red_light_zone: None,
            direction_field: vec![0.0],
        }
    }

    #[test]
    fn scene_round_trip_and_version() {
        let s = scene();
        let text = scene_to_json("a", &s).unwrap();
        assert_eq!(scene_from_json(&text).unwrap(), ("a".to_string(), s));
        let bad = text.replace("SCN1", "SCN0");
        assert!(matches!(scene_from_json(&bad), Err(Error::Version { .. })));
    }

    #[test]
    fn scene_load_rejects_bowtie() {
        let mut s = scene();
        s.drivable = vec![[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]];
        let text = scene_to_json("a", &s).unwrap();
        assert!(matches!(scene_from_json(&text), Err(Error::DegeneratePolygon(_))));
    }

    #[test]
    fn scores_csv_round_trip() {
        let mut sc = SubScores::ones();
        sc.ep = 0.1 + 0.2;
        let rows = vec![ScoreRow::new("s1", "vit", sc, &SubScores::ones())];
        let text = scores_csv(&rows);
        assert!(text.starts_with("scenario_id,policy,nc,dac,ddc,tlc,ep,ttc,c,hc,lk,ec,pdms,epdms\n"));
        assert_eq!(parse_scores_csv(&text).unwrap(), rows);
    }
}
