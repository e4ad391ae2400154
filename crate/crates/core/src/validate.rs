//! Total invariant checker for scene sequences.

use std::fmt;

use crate::model::{CameraPose, Gaussian, SceneSequence, UNIT_NORM_TOLERANCE};

/// Where a violation was found.
#[derive(Debug, Clone, PartialEq)]
pub enum Location {
    Frame(usize),
    Sky,
    Motion { t_a: f64, t_b: f64 },
    Inserted(u32),
    Sequence,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Frame(i) => write!(f, "frame {i}"),
            Location::Sky => write!(f, "sky"),
            Location::Motion { t_a, t_b } => write!(f, "motion ({t_a}, {t_b})"),
            Location::Inserted(id) => write!(f, "inserted instance {id}"),
            Location::Sequence => write!(f, "sequence"),
        }
    }
}

/// One broken rule. Repeated failures of the same rule at the same location
/// are folded into a single record with a count and the first offending index.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub location: Location,
    pub field: &'static str,
    pub rule: &'static str,
    pub count: usize,
    pub first_index: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} violates \"{}\"", self.location, self.field, self.rule)?;
        if let Some(i) = self.first_index {
            write!(f, " (first at element {i}, {} total)", self.count)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Collector {
    out: Vec<Violation>,
}

impl Collector {
    fn push(&mut self, location: &Location, field: &'static str, rule: &'static str, index: Option<usize>) {
        if let Some(v) = self
            .out
            .iter_mut()
            .find(|v| v.location == *location && v.field == field && v.rule == rule)
        {
            v.count += 1;
            return;
        }
        self.out.push(Violation {
            location: location.clone(),
            field,
            rule,
            count: 1,
            first_index: index,
        });
    }

    fn check(&mut self, ok: bool, location: &Location, field: &'static str, rule: &'static str, index: Option<usize>) {
        if !ok {
            self.push(location, field, rule, index);
        }
    }
}

fn unit_norm_ok(q: [f64; 4]) -> bool {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    (n - 1.0).abs() <= UNIT_NORM_TOLERANCE
}

fn all_finite(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().all(f64::is_finite)
}

fn check_gaussian(c: &mut Collector, loc: &Location, idx: usize, g: &Gaussian, birth: Option<f64>) {
    let f = |xs: &[f32]| all_finite(xs.iter().map(|&x| x as f64));
    c.check(
        f(&g.channels()) && g.birth_time.is_finite(),
        loc,
        "gaussian",
        "finite values",
        Some(idx),
    );
    c.check(
        g.color.iter().all(|v| (0.0..=1.0).contains(v)),
        loc,
        "color",
        "color in [0, 1]",
        Some(idx),
    );
    c.check(unit_norm_ok(g.rotation_f64()), loc, "rotation", "|rotation| = 1", Some(idx));
    c.check(g.scale.iter().all(|&s| s > 0.0), loc, "scale", "scale > 0", Some(idx));
    c.check((0.0..=1.0).contains(&g.opacity), loc, "opacity", "opacity in [0, 1]", Some(idx));
    c.check(g.lifespan > 0.0, loc, "lifespan", "lifespan > 0", Some(idx));
    if let Some(t) = birth {
        c.check(g.birth_time == t, loc, "birth_time", "birth_time = frame timestamp", Some(idx));
    }
}

fn check_pose(c: &mut Collector, loc: &Location, pose: &CameraPose, first: bool) {
    c.check(
        all_finite(
            [pose.fx, pose.fy, pose.cx, pose.cy, pose.timestamp]
                .into_iter()
                .chain(pose.rotation)
                .chain(pose.translation),
        ),
        loc,
        "pose",
        "finite values",
        None,
    );
    c.check(unit_norm_ok(pose.rotation), loc, "pose.rotation", "|rotation| = 1", None);
    c.check(pose.fx > 0.0 && pose.fy > 0.0, loc, "pose.intrinsics", "fx, fy > 0", None);
    if first {
        c.check(
            pose.rotation == [1.0, 0.0, 0.0, 0.0] && pose.translation == [0.0; 3],
            loc,
            "pose",
            "first pose is identity",
            None,
        );
    }
}

/// Lists every invariant violation of `seq`. Empty iff the sequence is well formed.
///
/// Never panics on malformed numeric content; NaN and infinities are reported.
pub fn validate_sequence(seq: &SceneSequence) -> Vec<Violation> {
    let mut c = Collector::default();
    let seq_loc = Location::Sequence;

    for (fi, frame) in seq.frames.iter().enumerate() {
        let loc = Location::Frame(fi);
        let map = &frame.map;
        let ts = map.timestamp;
        c.check(ts.is_finite(), &loc, "timestamp", "finite values", None);
        if fi > 0 {
            let prev = seq.frames[fi - 1].map.timestamp;
            c.check(ts > prev, &loc, "timestamp", "strictly increasing", None);
        }
        let n = map.width as usize * map.height as usize;
        c.check(map.gaussians.len() == n, &loc, "gaussians", "length = width * height", None);
        if let Some(ids) = &map.instance_ids {
            c.check(ids.len() == n, &loc, "instance_ids", "length = width * height", None);
        }
        for (gi, g) in map.gaussians.iter().enumerate() {
            check_gaussian(&mut c, &loc, gi, g, Some(ts));
        }

        let mask = &frame.mask;
        c.check(
            mask.width == map.width && mask.height == map.height && mask.values.len() == n,
            &loc,
            "mask",
            "dimensions match map",
            None,
        );
        for (vi, v) in mask.values.iter().enumerate() {
            c.check((0.0..=1.0).contains(v), &loc, "mask", "values in [0, 1]", Some(vi));
        }
        c.check(
            mask.threshold > 0.0 && mask.threshold < 1.0,
            &loc,
            "mask.threshold",
            "threshold in (0, 1)",
            None,
        );

        check_pose(&mut c, &loc, &frame.pose, fi == 0);
        c.check(frame.pose.timestamp == ts, &loc, "pose.timestamp", "pose timestamp = frame timestamp", None);
    }

    let sky_loc = Location::Sky;
    let sky = &seq.sky;
    c.check(sky.radius > 0.0 && sky.radius.is_finite(), &sky_loc, "radius", "radius > 0", None);
    for (i, g) in sky.gaussians.iter().enumerate() {
        check_gaussian(&mut c, &sky_loc, i, g, None);
        let n = g.mean_f64().norm();
        c.check(
            (n - sky.radius).abs() <= 1e-4 * sky.radius && g.mean[2] >= 0.0,
            &sky_loc,
            "mean",
            "on upper hemisphere of radius",
            Some(i),
        );
        c.check(g.opacity == sky.fixed_opacity, &sky_loc, "opacity", "all opacities identical", Some(i));
        if let Some(first) = sky.gaussians.first() {
            c.check(g.rotation == first.rotation, &sky_loc, "rotation", "all rotations identical", Some(i));
        }
    }

    for (key, field) in &seq.motion_fields {
        let loc = Location::Motion {
            t_a: field.t_a,
            t_b: field.t_b,
        };
        c.check(*key == field.key(), &loc, "key", "key matches field times", None);
        c.check(field.t_a < field.t_b, &loc, "t_a", "t_a < t_b", None);
        let fa = seq.frame_at(field.t_a);
        c.check(
            fa.is_some() && seq.frame_at(field.t_b).is_some(),
            &loc,
            "key",
            "refers to existing frames",
            None,
        );
        c.check(
            field.queries.len() == field.displacements.len(),
            &loc,
            "queries",
            "|queries| = |displacements|",
            None,
        );
        for (qi, d) in field.displacements.iter().enumerate() {
            c.check(d.iter().all(|v| v.is_finite()), &loc, "displacements", "finite values", Some(qi));
        }
        if let Some(fa) = fa {
            let frame = &seq.frames[fa];
            for (qi, &[row, col]) in field.queries.iter().enumerate() {
                let inside = row < frame.map.height && col < frame.map.width;
                c.check(inside, &loc, "queries", "query inside map", Some(qi));
                if inside {
                    let idx = frame.map.index(row, col);
                    let dynamic = frame.mask.values.get(idx).is_some_and(|&v| v >= frame.mask.threshold);
                    c.check(dynamic, &loc, "queries", "query pixel is dynamic", Some(qi));
                }
            }
        }
    }

    let mut seen = Vec::new();
    for inst in &seq.overlay.inserted {
        let loc = Location::Inserted(inst.instance_id);
        c.check(!seen.contains(&inst.instance_id), &seq_loc, "inserted", "unique instance ids", None);
        seen.push(inst.instance_id);
        for pf in &inst.payload.frames {
            for (gi, g) in pf.gaussians.iter().enumerate() {
                check_gaussian(&mut c, &loc, gi, g, Some(pf.timestamp));
            }
        }
        for m in &inst.payload.motion {
            let src = inst.payload.frames.iter().find(|f| f.timestamp == m.t_a);
            c.check(
                m.t_a < m.t_b && src.is_some_and(|f| f.gaussians.len() == m.displacements.len()),
                &loc,
                "motion",
                "motion matches payload keyframe",
                None,
            );
        }
    }

    c.out
}
