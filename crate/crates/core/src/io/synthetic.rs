//! Synthetic scene generator driven by a small line-oriented text format.
//!
//! ```text
//! # comments start with '#'
//! image <width> <height>                    default 64 48
//! intrinsics <fx> <fy> <cx> <cy>            default fx = fy = width, principal point at the center
//! frames <count> <dt>                       default 2 frames, 0.5 s apart, first at t = 0
//! camera velocity <vx> <vy> <vz>            world-frame camera velocity in m/s
//! camera yaw_rate <rad_per_s>               rotation about the camera y axis
//! ground <y> <r> <g> <b>                    plane at height y (y points down)
//! box static|dynamic <id> center <x> <y> <z> size <sx> <sy> <sz> color <r> <g> <b> [velocity <vx> <vy> <vz>]
//! lifespan <sigma>                          temporal spread of every Gaussian, s^2
//! opacity <o>                               opacity of every surface Gaussian
//! sky <count> <radius> <seed>               add a sky dome
//! ```
//!
//! Every frame is ray cast through pixel centers. The nearest surface hit
//! becomes that pixel's Gaussian; pixels that hit nothing get a transparent
//! Gaussian far behind the far plane. Dynamic boxes move linearly, are
//! masked as dynamic and labeled with their id, and get exact motion fields
//! between consecutive frames. Static boxes keep their id but are not masked.

use nalgebra::Vector3;

use crate::model::{
    CameraPose, DynamicMask, Frame, Gaussian, GaussianMap, MotionField, SceneSequence, BACKGROUND_ID,
};
use crate::sky::{build_sky, SkyDome};

/// Distance along the ray of the placeholder for pixels that hit nothing.
const MISS_DISTANCE: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct SynthError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
struct SynthBox {
    id: u32,
    dynamic: bool,
    center: [f64; 3],
    half: [f64; 3],
    color: [f32; 3],
    velocity: [f64; 3],
}

impl SynthBox {
    /// Ray parameter of the first hit with the box at time `t`.
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>, t: f64) -> Option<f64> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            let c = self.center[k] + self.velocity[k] * t;
            let (a, b) = (c - self.half[k], c + self.half[k]);
            if d[k] == 0.0 {
                if o[k] < a || o[k] > b {
                    return None;
                }
                continue;
            }
            let (s0, s1) = ((a - o[k]) / d[k], (b - o[k]) / d[k]);
            lo = lo.max(s0.min(s1));
            hi = hi.min(s0.max(s1));
        }
        (lo <= hi && lo > 0.0).then_some(lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SynthSpec {
    width: u32,
    height: u32,
    intrinsics: Option<[f64; 4]>,
    frames: usize,
    dt: f64,
    camera_velocity: [f64; 3],
    yaw_rate: f64,
    ground: Option<(f64, [f32; 3])>,
    boxes: Vec<SynthBox>,
    lifespan: f32,
    opacity: f32,
    sky: Option<(usize, f64, u64)>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 48,
            intrinsics: None,
            frames: 2,
            dt: 0.5,
            camera_velocity: [0.0; 3],
            yaw_rate: 0.0,
            ground: None,
            boxes: Vec::new(),
            lifespan: 1.0,
            opacity: 0.9,
            sky: None,
        }
    }
}

struct Tokens<'a> {
    line: usize,
    items: Vec<(usize, &'a str)>,
    next: usize,
    end_column: usize,
}

impl<'a> Tokens<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    items.push((s, &text[s..i]));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            items.push((s, &text[s..]));
        }
        Self {
            line,
            items,
            next: 0,
            end_column: text.len() + 1,
        }
    }

    fn err_at(&self, column: usize, message: impl Into<String>) -> SynthError {
        SynthError {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn column(&self, idx: usize) -> usize {
        self.items.get(idx).map_or(self.end_column, |(c, _)| c + 1)
    }

    fn word(&mut self, what: &str) -> Result<(usize, &'a str), SynthError> {
        let col = self.column(self.next);
        let tok = self
            .items
            .get(self.next)
            .ok_or_else(|| self.err_at(col, format!("expected {what}")))?;
        self.next += 1;
        Ok((col, tok.1))
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.next).map(|t| t.1)
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, SynthError> {
        let (col, tok) = self.word(what)?;
        tok.parse()
            .map_err(|_| self.err_at(col, format!("expected {what}, found '{tok}'")))
    }

    fn finite(&mut self, what: &str) -> Result<f64, SynthError> {
        let col = self.column(self.next);
        let v: f64 = self.number(what)?;
        if !v.is_finite() {
            return Err(self.err_at(col, format!("{what} must be finite")));
        }
        Ok(v)
    }

    fn positive(&mut self, what: &str) -> Result<f64, SynthError> {
        let col = self.column(self.next);
        let v = self.finite(what)?;
        if v <= 0.0 {
            return Err(self.err_at(col, format!("{what} must be positive")));
        }
        Ok(v)
    }

    fn vec3(&mut self, what: &str) -> Result<[f64; 3], SynthError> {
        Ok([self.finite(what)?, self.finite(what)?, self.finite(what)?])
    }

    fn color(&mut self) -> Result<[f32; 3], SynthError> {
        let mut c = [0.0f32; 3];
        for v in &mut c {
            let col = self.column(self.next);
            let x = self.finite("color component")?;
            if !(0.0..=1.0).contains(&x) {
                return Err(self.err_at(col, "color components must be in [0, 1]"));
            }
            *v = x as f32;
        }
        Ok(c)
    }

    fn done(&self) -> Result<(), SynthError> {
        match self.items.get(self.next) {
            Some((c, tok)) => Err(self.err_at(c + 1, format!("unexpected '{tok}'"))),
            None => Ok(()),
        }
    }
}

fn parse(text: &str) -> Result<SynthSpec, SynthError> {
    let mut spec = SynthSpec::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut t = Tokens::new(n + 1, line);
        let Some(_) = t.peek() else { continue };
        let (col, cmd) = t.word("command")?;
        match cmd {
            "image" => {
                spec.width = t.number("width")?;
                spec.height = t.number("height")?;
                if spec.width == 0 || spec.height == 0 {
                    return Err(t.err_at(col, "image dimensions must be positive"));
                }
            }
            "intrinsics" => {
                let fx = t.positive("fx")?;
                let fy = t.positive("fy")?;
                spec.intrinsics = Some([fx, fy, t.finite("cx")?, t.finite("cy")?]);
            }
            "frames" => {
                let c = t.column(t.next);
                spec.frames = t.number("frame count")?;
                if spec.frames == 0 {
                    return Err(t.err_at(c, "frame count must be positive"));
                }
                spec.dt = t.positive("frame interval")?;
            }
            "camera" => {
                let (c, what) = t.word("'velocity' or 'yaw_rate'")?;
                match what {
                    "velocity" => spec.camera_velocity = t.vec3("camera velocity")?,
                    "yaw_rate" => spec.yaw_rate = t.finite("yaw rate")?,
                    other => return Err(t.err_at(c, format!("unknown camera property '{other}'"))),
                }
            }
            "ground" => {
                let y = t.finite("ground height")?;
                spec.ground = Some((y, t.color()?));
            }
            "box" => spec.boxes.push(parse_box(&mut t, &spec.boxes)?),
            "lifespan" => spec.lifespan = t.positive("lifespan")? as f32,
            "opacity" => {
                let c = t.column(t.next);
                let o = t.finite("opacity")?;
                if !(0.0..=1.0).contains(&o) {
                    return Err(t.err_at(c, "opacity must be in [0, 1]"));
                }
                spec.opacity = o as f32;
            }
            "sky" => {
                let count = t.number("sky count")?;
                let radius = t.positive("sky radius")?;
                spec.sky = Some((count, radius, t.number("sky seed")?));
            }
            other => return Err(t.err_at(col, format!("unknown command '{other}'"))),
        }
        t.done()?;
    }
    Ok(spec)
}

fn parse_box(t: &mut Tokens, existing: &[SynthBox]) -> Result<SynthBox, SynthError> {
    let (kc, kind) = t.word("'static' or 'dynamic'")?;
    let dynamic = match kind {
        "static" => false,
        "dynamic" => true,
        other => return Err(t.err_at(kc, format!("expected 'static' or 'dynamic', found '{other}'"))),
    };
    let ic = t.column(t.next);
    let id: u32 = t.number("instance id")?;
    if id == BACKGROUND_ID {
        return Err(t.err_at(ic, "instance id 0 is reserved for the background"));
    }
    if existing.iter().any(|b| b.id == id) {
        return Err(t.err_at(ic, format!("duplicate instance id {id}")));
    }
    let (mut center, mut size, mut color, mut velocity) = (None, None, None, None);
    while let Some(key) = t.peek() {
        let (c, _) = t.word("property")?;
        match key {
            "center" => center = Some(t.vec3("center")?),
            "size" => {
                let s = [t.positive("size")?, t.positive("size")?, t.positive("size")?];
                size = Some(s);
            }
            "color" => color = Some(t.color()?),
            "velocity" if dynamic => velocity = Some(t.vec3("velocity")?),
            "velocity" => return Err(t.err_at(c, "static boxes cannot have a velocity")),
            other => return Err(t.err_at(c, format!("unknown box property '{other}'"))),
        }
    }
    let end = t.end_column;
    let missing = |what: &str| t.err_at(end, format!("box is missing '{what}'"));
    let size = size.ok_or_else(|| missing("size"))?;
    Ok(SynthBox {
        id,
        dynamic,
        center: center.ok_or_else(|| missing("center"))?,
        half: size.map(|s| s / 2.0),
        color: color.ok_or_else(|| missing("color"))?,
        velocity: velocity.unwrap_or([0.0; 3]),
    })
}

struct Hit {
    distance: f64,
    color: [f32; 3],
    owner: Option<usize>,
}

fn build_frame(spec: &SynthSpec, k: usize) -> (Frame, Vec<Option<usize>>) {
    let t = k as f64 * spec.dt;
    let (w, h) = (spec.width, spec.height);
    let [fx, fy, cx, cy] = spec
        .intrinsics
        .unwrap_or([w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0]);
    let half = spec.yaw_rate * t / 2.0;
    let pose = CameraPose {
        fx,
        fy,
        cx,
        cy,
        rotation: [half.cos(), 0.0, half.sin(), 0.0],
        translation: spec.camera_velocity.map(|v| v * t),
        timestamp: t,
    };
    let r = pose.camera_to_world();
    let origin = Vector3::from(pose.translation);
    let n = w as usize * h as usize;
    let mut gaussians = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut owners = Vec::with_capacity(n);
    for i in 0..h {
        for j in 0..w {
            let dc = Vector3::new((j as f64 + 0.5 - cx) / fx, (i as f64 + 0.5 - cy) / fy, 1.0);
            let d = r * dc;
            let mut best: Option<Hit> = None;
            let mut consider = |hit: Hit| {
                if best.as_ref().is_none_or(|b| hit.distance < b.distance) {
                    best = Some(hit);
                }
            };
            if let Some((gy, color)) = spec.ground {
                if d.y > 0.0 {
                    let s = (gy - origin.y) / d.y;
                    if s > 0.0 {
                        consider(Hit {
                            distance: s,
                            color,
                            owner: None,
                        });
                    }
                }
            }
            for (b_idx, b) in spec.boxes.iter().enumerate() {
                if let Some(s) = b.hit(&origin, &d, t) {
                    consider(Hit {
                        distance: s,
                        color: b.color,
                        owner: Some(b_idx),
                    });
                }
            }
            let (distance, color, opacity, scale, owner) = match best {
                Some(hit) => {
                    // The ray parameter equals the camera-space depth because dc.z = 1.
                    let footprint = hit.distance / fx.min(fy);
                    (hit.distance, hit.color, spec.opacity, footprint as f32, hit.owner)
                }
                None => (MISS_DISTANCE, [0.0; 3], 0.0, 1.0, None),
            };
            let p = origin + d * distance;
            gaussians.push(Gaussian {
                color,
                mean: [p.x as f32, p.y as f32, p.z as f32],
                rotation: [1.0, 0.0, 0.0, 0.0],
                scale: [scale; 3],
                opacity,
                lifespan: spec.lifespan,
                birth_time: t,
            });
            let b = owner.map(|o| &spec.boxes[o]);
            ids.push(b.map_or(BACKGROUND_ID, |b| b.id));
            mask.push(if b.is_some_and(|b| b.dynamic) { 1.0 } else { 0.0 });
            owners.push(owner.filter(|&o| spec.boxes[o].dynamic));
        }
    }
    let frame = Frame {
        map: GaussianMap {
            width: w,
            height: h,
            timestamp: t,
            gaussians,
            instance_ids: Some(ids),
        },
        mask: DynamicMask {
            width: w,
            height: h,
            values: mask,
            threshold: crate::model::DEFAULT_MASK_THRESHOLD,
        },
        pose,
    };
    (frame, owners)
}

/// Builds a deterministic scene from the text description.
pub fn import_synthetic(text: &str) -> Result<SceneSequence, SynthError> {
    let spec = parse(text)?;
    let built: Vec<_> = (0..spec.frames).map(|k| build_frame(&spec, k)).collect();
    let mut motion = Vec::new();
    for pair in built.windows(2) {
        let (fa, owners) = (&pair[0].0, &pair[0].1);
        let fb = &pair[1].0;
        let dt = fb.map.timestamp - fa.map.timestamp;
        let mut queries = Vec::new();
        let mut displacements = Vec::new();
        for (idx, owner) in owners.iter().enumerate() {
            if let Some(o) = owner {
                let (row, col) = fa.map.pixel(idx);
                queries.push([row, col]);
                displacements.push(spec.boxes[*o].velocity.map(|v| (v * dt) as f32));
            }
        }
        motion.push(MotionField {
            t_a: fa.map.timestamp,
            t_b: fb.map.timestamp,
            queries,
            displacements,
        });
    }
    let sky = match spec.sky {
        Some((count, radius, seed)) => build_sky(radius, count, seed).map_err(|e| SynthError {
            line: 0,
            column: 0,
            message: e.to_string(),
        })?,
        None => SkyDome::empty(),
    };
    let frames = built.into_iter().map(|(f, _)| f).collect();
    Ok(SceneSequence::new(frames, sky, motion))
}
