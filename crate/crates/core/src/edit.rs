//! Instance-level scene edits: remove, translate and insert dynamic objects.
//!
//! Edits are pure: they take a sequence by reference and return a new one.
//! Only dynamic Gaussians are touched. Removals and insertions live in the
//! sequence's [`EditOverlay`](crate::model::EditOverlay), so the predicted
//! frames stay intact; translations move the dynamic Gaussians in place.
//! Edits are purely geometric and do not adjust lighting or fill holes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compose::decompose;
use crate::model::{
    Gaussian, InsertedInstance, InstancePayload, PayloadFrame, PayloadMotion, Removal, SceneSequence,
    BACKGROUND_ID,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Remove {
        instance_id: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time_range: Option<[f64; 2]>,
    },
    Translate {
        instance_id: u32,
        delta: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time_range: Option<[f64; 2]>,
    },
    Insert {
        payload: InstancePayload,
        /// Requested id; a fresh one is assigned when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance_id: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time_range: Option<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EditScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_scene: Option<String>,
    pub ops: Vec<EditOp>,
}

/// What to do when an insert requests an id already in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CollisionPolicy {
    #[default]
    Remap,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum EditNote {
    Inserted { instance_id: u32 },
    Remapped { requested: u32, assigned: u32 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EditError {
    #[error("unknown instance {id}; available: {available:?}")]
    UnknownInstance { id: u32, available: Vec<u32> },
    #[error("instance {0} has no dynamic Gaussians")]
    NotDynamic(u32),
    #[error("instance id {0} already exists")]
    IdCollision(u32),
    #[error("translation delta must be finite")]
    NonFiniteDelta,
    #[error("invalid time range [{0}, {1}]")]
    InvalidTimeRange(f64, f64),
    #[error("invalid insert payload: {0}")]
    InvalidPayload(String),
}

/// Catalog entry for one labeled instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceInfo {
    pub instance_id: u32,
    /// `(timestamp, Gaussian count)` for every frame that contains the instance.
    pub frame_counts: Vec<(f64, usize)>,
    pub bbox_min: [f32; 3],
    pub bbox_max: [f32; 3],
    pub dynamic: bool,
    pub inserted: bool,
}

struct Accum {
    counts: BTreeMap<u64, (f64, usize)>,
    min: [f32; 3],
    max: [f32; 3],
    dynamic: bool,
}

impl Accum {
    fn new() -> Self {
        Self {
            counts: BTreeMap::new(),
            min: [f32::INFINITY; 3],
            max: [f32::NEG_INFINITY; 3],
            dynamic: false,
        }
    }

    fn add(&mut self, t: f64, g: &Gaussian, dynamic: bool) {
        let e = self.counts.entry(t.to_bits()).or_insert((t, 0));
        e.1 += 1;
        for k in 0..3 {
            self.min[k] = self.min[k].min(g.mean[k]);
            self.max[k] = self.max[k].max(g.mean[k]);
        }
        self.dynamic |= dynamic;
    }

    fn finish(self, instance_id: u32, inserted: bool) -> InstanceInfo {
        let mut frame_counts: Vec<(f64, usize)> = self.counts.into_values().collect();
        frame_counts.sort_by(|a, b| a.0.total_cmp(&b.0));
        InstanceInfo {
            instance_id,
            frame_counts,
            bbox_min: self.min,
            bbox_max: self.max,
            dynamic: self.dynamic,
            inserted,
        }
    }
}

/// Every labeled instance of `seq` except fully removed ones, sorted by id.
pub fn list_instances(seq: &SceneSequence) -> Vec<InstanceInfo> {
    let mut acc: BTreeMap<u32, Accum> = BTreeMap::new();
    for f in &seq.frames {
        let Some(ids) = &f.map.instance_ids else { continue };
        let t = f.map.timestamp;
        for (idx, &id) in ids.iter().enumerate() {
            if id == BACKGROUND_ID {
                continue;
            }
            let dynamic = f.mask.values.get(idx).is_some_and(|&v| v >= f.mask.threshold);
            acc.entry(id).or_insert_with(Accum::new).add(t, &f.map.gaussians[idx], dynamic);
        }
    }
    let mut out: Vec<InstanceInfo> = acc
        .into_iter()
        .filter(|(id, _)| !seq.overlay.is_fully_removed(*id))
        .map(|(id, a)| a.finish(id, false))
        .collect();
    for inst in &seq.overlay.inserted {
        let mut a = Accum::new();
        for pf in &inst.payload.frames {
            for g in &pf.gaussians {
                a.add(pf.timestamp, g, true);
            }
        }
        a.dynamic = true;
        out.push(a.finish(inst.instance_id, true));
    }
    out.sort_by_key(|i| i.instance_id);
    out
}

fn all_ids(seq: &SceneSequence) -> Vec<u32> {
    let mut ids: Vec<u32> = seq
        .frames
        .iter()
        .filter_map(|f| f.map.instance_ids.as_ref())
        .flatten()
        .copied()
        .filter(|&id| id != BACKGROUND_ID)
        .chain(seq.overlay.inserted.iter().map(|i| i.instance_id))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn require_dynamic(seq: &SceneSequence, id: u32) -> Result<(), EditError> {
    let catalog = list_instances(seq);
    match catalog.iter().find(|i| i.instance_id == id) {
        Some(info) if info.dynamic => Ok(()),
        Some(_) => Err(EditError::NotDynamic(id)),
        None => Err(EditError::UnknownInstance {
            id,
            available: catalog.iter().filter(|i| i.dynamic).map(|i| i.instance_id).collect(),
        }),
    }
}

fn check_range(r: Option<[f64; 2]>) -> Result<(), EditError> {
    match r {
        Some([a, b]) if !(a <= b) => Err(EditError::InvalidTimeRange(a, b)),
        _ => Ok(()),
    }
}

fn in_range(r: Option<[f64; 2]>, t: f64) -> bool {
    r.is_none_or(|[a, b]| t >= a && t <= b)
}

fn shift(g: &mut Gaussian, delta: &[f64; 3]) {
    for k in 0..3 {
        g.mean[k] = (g.mean[k] as f64 + delta[k]) as f32;
    }
}

fn check_payload(p: &InstancePayload) -> Result<(), EditError> {
    if p.frames.is_empty() {
        return Err(EditError::InvalidPayload("no keyframes".into()));
    }
    for pf in &p.frames {
        for g in &pf.gaussians {
            Gaussian::new(g.color, g.mean, g.rotation, g.scale, g.opacity, g.lifespan, g.birth_time)
                .map_err(|e| EditError::InvalidPayload(e.to_string()))?;
            let bad_color = g.color.iter().any(|c| !(0.0..=1.0).contains(c));
            if bad_color || !g.mean.iter().all(|m| m.is_finite()) || g.birth_time != pf.timestamp {
                return Err(EditError::InvalidPayload(format!(
                    "Gaussian at t={} has invalid color, mean or birth time",
                    pf.timestamp
                )));
            }
        }
    }
    for m in &p.motion {
        let src = p.frames.iter().find(|f| f.timestamp == m.t_a);
        if !(m.t_a < m.t_b) || src.is_none_or(|f| f.gaussians.len() != m.displacements.len()) {
            return Err(EditError::InvalidPayload(format!(
                "motion ({}, {}) does not match a keyframe",
                m.t_a, m.t_b
            )));
        }
    }
    Ok(())
}

/// Applies one edit, returning the edited copy plus a note for inserts.
pub fn apply_edit(
    seq: &SceneSequence,
    op: &EditOp,
    policy: CollisionPolicy,
) -> Result<(SceneSequence, Option<EditNote>), EditError> {
    let mut out = seq.clone();
    match op {
        EditOp::Remove { instance_id, time_range } => {
            check_range(*time_range)?;
            require_dynamic(seq, *instance_id)?;
            let inserted = out.overlay.inserted.iter().position(|i| i.instance_id == *instance_id);
            match (inserted, time_range) {
                (Some(pos), None) => {
                    out.overlay.inserted.remove(pos);
                }
                _ => out.overlay.removed.push(Removal {
                    instance_id: *instance_id,
                    time_range: *time_range,
                }),
            }
            Ok((out, None))
        }
        EditOp::Translate {
            instance_id,
            delta,
            time_range,
        } => {
            if !delta.iter().all(|d| d.is_finite()) {
                return Err(EditError::NonFiniteDelta);
            }
            check_range(*time_range)?;
            require_dynamic(seq, *instance_id)?;
            for f in &mut out.frames {
                if !in_range(*time_range, f.map.timestamp) || f.map.instance_ids.is_none() {
                    continue;
                }
                let parts = decompose(&f.map, &f.mask).map_err(|e| EditError::InvalidPayload(e.to_string()))?;
                let ids = f.map.instance_ids.clone().expect("checked above");
                for idx in parts.dynamic_pixels {
                    if ids[idx] == *instance_id {
                        shift(&mut f.map.gaussians[idx], delta);
                    }
                }
            }
            if let Some(inst) = out.overlay.inserted.iter_mut().find(|i| i.instance_id == *instance_id) {
                for pf in &mut inst.payload.frames {
                    if in_range(*time_range, pf.timestamp) {
                        pf.gaussians.iter_mut().for_each(|g| shift(g, delta));
                    }
                }
            }
            Ok((out, None))
        }
        EditOp::Insert {
            payload,
            instance_id,
            time_range,
        } => {
            check_range(*time_range)?;
            check_payload(payload)?;
            let used = all_ids(seq);
            let fresh = used.last().map_or(1, |m| m + 1);
            let (id, note) = match instance_id {
                Some(req) if *req != BACKGROUND_ID && !used.contains(req) => {
                    (*req, EditNote::Inserted { instance_id: *req })
                }
                Some(req) => match policy {
                    CollisionPolicy::Reject => return Err(EditError::IdCollision(*req)),
                    CollisionPolicy::Remap => (
                        fresh,
                        EditNote::Remapped {
                            requested: *req,
                            assigned: fresh,
                        },
                    ),
                },
                None => (fresh, EditNote::Inserted { instance_id: fresh }),
            };
            out.overlay.inserted.push(InsertedInstance {
                instance_id: id,
                payload: payload.clone(),
                time_range: *time_range,
            });
            Ok((out, Some(note)))
        }
    }
}

/// Applies every op of `script` in order.
pub fn apply_script(
    seq: &SceneSequence,
    script: &EditScript,
    policy: CollisionPolicy,
) -> Result<(SceneSequence, Vec<EditNote>), EditError> {
    let mut cur = seq.clone();
    let mut notes = Vec::new();
    for op in &script.ops {
        let (next, note) = apply_edit(&cur, op, policy)?;
        cur = next;
        notes.extend(note);
    }
    Ok((cur, notes))
}

/// Copies an instance's dynamic Gaussians and motion out of `seq` so it can
/// be inserted elsewhere.
pub fn extract_instance(seq: &SceneSequence, id: u32) -> Result<InstancePayload, EditError> {
    require_dynamic(seq, id)?;
    if let Some(inst) = seq.overlay.inserted.iter().find(|i| i.instance_id == id) {
        return Ok(inst.payload.clone());
    }
    let mut frames = Vec::new();
    let mut motion = Vec::new();
    for f in &seq.frames {
        let Some(ids) = &f.map.instance_ids else { continue };
        let parts = decompose(&f.map, &f.mask).map_err(|e| EditError::InvalidPayload(e.to_string()))?;
        let pixels: Vec<usize> = parts.dynamic_pixels.into_iter().filter(|&i| ids[i] == id).collect();
        if pixels.is_empty() {
            continue;
        }
        let t = f.map.timestamp;
        frames.push(PayloadFrame {
            timestamp: t,
            gaussians: pixels.iter().map(|&i| f.map.gaussians[i]).collect(),
        });
        for field in seq.motion_fields.values().filter(|m| m.t_a == t) {
            let lookup: BTreeMap<usize, [f32; 3]> = field
                .queries
                .iter()
                .zip(&field.displacements)
                .map(|(&[r, c], d)| (f.map.index(r, c), *d))
                .collect();
            let displacements: Option<Vec<[f32; 3]>> = pixels.iter().map(|i| lookup.get(i).copied()).collect();
            if let Some(displacements) = displacements {
                motion.push(PayloadMotion {
                    t_a: field.t_a,
                    t_b: field.t_b,
                    displacements,
                });
            }
        }
    }
    Ok(InstancePayload { frames, motion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::{compose_at, Layer};
    use crate::model::{CameraPose, DynamicMask, Frame, GaussianMap, MotionField};
    use crate::sky::SkyDome;

    fn g(mean: [f32; 3], t: f64) -> Gaussian {
        Gaussian::new([0.4; 3], mean, [1.0, 0.0, 0.0, 0.0], [0.2; 3], 0.9, 2.0, t).unwrap()
    }

    /// 3x1 frames: pixel 0 static background, pixel 1 instance 7 (dynamic), pixel 2 instance 9 (static).
    fn seq() -> SceneSequence {
        let frames = [0.0, 1.0]
            .iter()
            .map(|&t| Frame {
                map: GaussianMap::new(
                    3,
                    1,
                    t,
                    vec![g([0.0, 0.0, 5.0], t), g([t as f32, 0.0, 5.0], t), g([1.0, 1.0, 5.0], t)],
                    Some(vec![0, 7, 9]),
                )
                .unwrap(),
                mask: DynamicMask::new(3, 1, vec![0.0, 1.0, 0.0]).unwrap(),
                pose: CameraPose::identity(10.0, 10.0, 1.5, 0.5, t),
            })
            .collect();
        let field = MotionField {
            t_a: 0.0,
            t_b: 1.0,
            queries: vec![[0, 1]],
            displacements: vec![[1.0, 0.0, 0.0]],
        };
        SceneSequence::new(frames, SkyDome::empty(), vec![field])
    }

    fn statics(s: &SceneSequence) -> Vec<Gaussian> {
        let c = compose_at(s, 0.0).unwrap();
        c.scene
            .gaussians
            .iter()
            .zip(&c.scene.provenance)
            .filter(|(_, p)| p.layer == Layer::Static)
            .map(|(g, _)| *g)
            .collect()
    }

    #[test]
    fn catalog_lists_each_id_once() {
        let cat = list_instances(&seq());
        let ids: Vec<u32> = cat.iter().map(|i| i.instance_id).collect();
        assert_eq!(ids, vec![7, 9]);
        assert!(cat[0].dynamic && !cat[1].dynamic);
        assert_eq!(cat[0].frame_counts, vec![(0.0, 1), (1.0, 1)]);
        assert_eq!(cat[0].bbox_min, [0.0, 0.0, 5.0]);
        assert_eq!(cat[0].bbox_max, [1.0, 0.0, 5.0]);
        assert!(list_instances(&SceneSequence::empty()).is_empty());
    }

    #[test]
    fn remove_excludes_instance_and_keeps_input() {
        let base = seq();
        let (edited, _) = apply_edit(&base, &EditOp::Remove { instance_id: 7, time_range: None }, CollisionPolicy::Remap).unwrap();
        assert_eq!(base, seq());
        for t in [0.0, 0.5, 1.0] {
            assert_eq!(compose_at(&edited, t).unwrap().report.dynamic_count, 0);
            assert_eq!(compose_at(&base, t).unwrap().report.dynamic_count, 1);
        }
        assert_eq!(statics(&edited), statics(&base));
        assert!(list_instances(&edited).iter().all(|i| i.instance_id != 7));
        let again = apply_edit(&edited, &EditOp::Remove { instance_id: 7, time_range: None }, CollisionPolicy::Remap);
        assert!(matches!(again, Err(EditError::UnknownInstance { id: 7, .. })));
    }

    #[test]
    fn remove_with_range_only_hides_inside() {
        let op = EditOp::Remove { instance_id: 7, time_range: Some([0.4, 0.6]) };
        let (edited, _) = apply_edit(&seq(), &op, CollisionPolicy::Remap).unwrap();
        assert_eq!(compose_at(&edited, 0.5).unwrap().report.dynamic_count, 0);
        assert_eq!(compose_at(&edited, 0.0).unwrap().report.dynamic_count, 1);
    }

    #[test]
    fn unknown_and_static_ids_rejected() {
        let err = apply_edit(&seq(), &EditOp::Remove { instance_id: 3, time_range: None }, CollisionPolicy::Remap);
        assert_eq!(err, Err(EditError::UnknownInstance { id: 3, available: vec![7] }));
        let err = apply_edit(&seq(), &EditOp::Translate { instance_id: 9, delta: [1.0; 3], time_range: None }, CollisionPolicy::Remap);
        assert_eq!(err, Err(EditError::NotDynamic(9)));
        let err = apply_edit(&seq(), &EditOp::Translate { instance_id: 7, delta: [f64::NAN, 0.0, 0.0], time_range: None }, CollisionPolicy::Remap);
        assert_eq!(err, Err(EditError::NonFiniteDelta));
    }

    #[test]
    fn translate_moves_only_dynamic_in_range() {
        let op = EditOp::Translate { instance_id: 7, delta: [0.0, 2.0, 0.0], time_range: Some([0.5, 2.0]) };
        let (edited, _) = apply_edit(&seq(), &op, CollisionPolicy::Remap).unwrap();
        assert_eq!(edited.frames[0].map.gaussians[1].mean, [0.0, 0.0, 5.0]);
        assert_eq!(edited.frames[1].map.gaussians[1].mean, [1.0, 2.0, 5.0]);
        assert_eq!(edited.frames[1].map.gaussians[2], seq().frames[1].map.gaussians[2]);
        let zero = EditOp::Translate { instance_id: 7, delta: [0.0; 3], time_range: None };
        assert_eq!(apply_edit(&seq(), &zero, CollisionPolicy::Remap).unwrap().0, seq());
    }

    #[test]
    fn insert_then_remove_round_trips() {
        let base = seq();
        let payload = extract_instance(&base, 7).unwrap();
        assert_eq!(payload.frames.len(), 2);
        assert_eq!(payload.motion.len(), 1);
        let ins = EditOp::Insert { payload, instance_id: None, time_range: None };
        let (with, note) = apply_edit(&base, &ins, CollisionPolicy::Remap).unwrap();
        assert_eq!(note, Some(EditNote::Inserted { instance_id: 10 }));
        let mid = compose_at(&with, 0.5).unwrap();
        assert_eq!(mid.report.dynamic_count, 2);
        assert!(mid.report.uncovered_inserts.is_empty());
        let (back, _) = apply_edit(&with, &EditOp::Remove { instance_id: 10, time_range: None }, CollisionPolicy::Remap).unwrap();
        assert_eq!(back, base);
    }

    #[test]
    fn insert_collision_policy() {
        let payload = extract_instance(&seq(), 7).unwrap();
        let ins = EditOp::Insert { payload, instance_id: Some(7), time_range: None };
        let (_, note) = apply_edit(&seq(), &ins, CollisionPolicy::Remap).unwrap();
        assert_eq!(note, Some(EditNote::Remapped { requested: 7, assigned: 10 }));
        assert_eq!(apply_edit(&seq(), &ins, CollisionPolicy::Reject).map(|_| ()), Err(EditError::IdCollision(7)));
    }

    #[test]
    fn insert_validates_payload() {
        let mut payload = extract_instance(&seq(), 7).unwrap();
        payload.frames[0].gaussians[0].scale = [0.0; 3];
        let ins = EditOp::Insert { payload, instance_id: None, time_range: None };
        assert!(matches!(apply_edit(&seq(), &ins, CollisionPolicy::Remap), Err(EditError::InvalidPayload(_))));
    }

    #[test]
    fn uncovered_insert_is_flagged() {
        let mut payload = extract_instance(&seq(), 7).unwrap();
        for (k, pf) in payload.frames.iter_mut().enumerate() {
            pf.timestamp = 5.0 + k as f64;
            pf.gaussians.iter_mut().for_each(|g| g.birth_time = pf.timestamp);
        }
        payload.motion[0].t_a = 5.0;
        payload.motion[0].t_b = 6.0;
        let ins = EditOp::Insert { payload, instance_id: None, time_range: None };
        let (with, _) = apply_edit(&seq(), &ins, CollisionPolicy::Remap).unwrap();
        let c = compose_at(&with, 0.5).unwrap();
        assert_eq!(c.report.uncovered_inserts, vec![10]);
        assert_eq!(c.report.dynamic_count, 2);
    }

    #[test]
    fn script_serializes_and_replays() {
        let script = EditScript {
            base_scene: Some("demo".into()),
            ops: vec![
                EditOp::Translate { instance_id: 7, delta: [1.0, 0.0, 0.0], time_range: None },
                EditOp::Remove { instance_id: 7, time_range: Some([0.0, 0.25]) },
            ],
        };
        let text = serde_json::to_string(&script).unwrap();
        assert!(text.contains("\"op\":\"translate\""));
        let back: EditScript = serde_json::from_str(&text).unwrap();
        assert_eq!(back, script);
        let a = apply_script(&seq(), &script, CollisionPolicy::Remap).unwrap();
        let b = apply_script(&seq(), &back, CollisionPolicy::Remap).unwrap();
        assert_eq!(a, b);
    }
}
