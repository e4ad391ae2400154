//! Lifespan opacity modulation, static/dynamic decomposition and scene aggregation.

use crate::model::{
    binarize_mask, CameraPose, DynamicMask, Gaussian, GaussianMap, InsertedInstance, SceneSequence,
};
use crate::motion::{interpolate_dynamic, interpolate_pose, translate, InterpolationQuery, MotionError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompositionError {
    #[error("lifespan must be positive, got {0}")]
    NonPositiveLifespan(f64),
    #[error("mask is {mask_w}x{mask_h}, map is {map_w}x{map_h}")]
    DimensionMismatch { mask_w: u32, mask_h: u32, map_w: u32, map_h: u32 },
    #[error("dynamic source is for t={dynamic_time} but query time is {query}")]
    QueryTimeMismatch { dynamic_time: f64, query: f64 },
    #[error("time {time} outside scene span [{start}, {end}]")]
    OutOfSpan { time: f64, start: f64, end: f64 },
    #[error("scene has no frames")]
    EmptyScene,
    #[error("no motion field between frames at {t_a} and {t_b}")]
    MissingMotionField { t_a: f64, t_b: f64 },
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Opacity of `g` seen at `query_time`: `o * exp(-(t' - t)^2 / (2 sigma))`.
pub fn modulate_opacity(g: &Gaussian, query_time: f64) -> Result<f64, CompositionError> {
    let sigma = g.lifespan as f64;
    if !(sigma > 0.0) {
        return Err(CompositionError::NonPositiveLifespan(sigma));
    }
    Ok(modulated(g.opacity as f64, sigma, query_time - g.birth_time))
}

#[inline]
pub(crate) fn modulated(opacity: f64, sigma: f64, dt: f64) -> f64 {
    opacity * (-0.5 * dt * dt / sigma).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Static,
    Dynamic,
    Sky,
}

/// Where a composed Gaussian came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Origin {
    /// Pixel `index` of the Gaussian map predicted at `frame_time`.
    Pixel { frame_time: f64, index: u32 },
    /// Element `index` of an inserted instance's keyframe at `frame_time`.
    Inserted { frame_time: f64, index: u32 },
    Sky { index: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub layer: Layer,
    pub origin: Origin,
    pub instance_id: u32,
}

/// Hashable identity of a provenance record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProvenanceKey {
    layer: Layer,
    kind: u8,
    time_bits: u64,
    index: u32,
    instance_id: u32,
}

impl Provenance {
    pub fn key(&self) -> ProvenanceKey {
        let (kind, time_bits, index, instance_id) = match self.origin {
            Origin::Pixel { frame_time, index } => (0, frame_time.to_bits(), index, 0),
            Origin::Inserted { frame_time, index } => (1, frame_time.to_bits(), index, self.instance_id),
            Origin::Sky { index } => (2, 0, index, 0),
        };
        ProvenanceKey {
            layer: self.layer,
            kind,
            time_bits,
            index,
            instance_id,
        }
    }
}

/// Dynamic Gaussians valid at one time, either taken from a keyframe or interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSet {
    pub time: f64,
    pub gaussians: Vec<Gaussian>,
    pub provenance: Vec<Provenance>,
}

impl DynamicSet {
    pub fn empty(time: f64) -> Self {
        Self {
            time,
            gaussians: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn push(&mut self, g: Gaussian, p: Provenance) {
        self.gaussians.push(g);
        self.provenance.push(p);
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Provenance) -> bool) {
        let mut gs = Vec::with_capacity(self.gaussians.len());
        let mut ps = Vec::with_capacity(self.provenance.len());
        for (g, p) in self.gaussians.drain(..).zip(self.provenance.drain(..)) {
            if keep(&p) {
                gs.push(g);
                ps.push(p);
            }
        }
        self.gaussians = gs;
        self.provenance = ps;
    }
}

/// Pixel indices of a frame split by the binarized dynamic mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub static_pixels: Vec<usize>,
    pub dynamic_pixels: Vec<usize>,
}

/// Hard partition of a Gaussian map into static and dynamic pixels.
pub fn decompose(map: &GaussianMap, mask: &DynamicMask) -> Result<Decomposition, CompositionError> {
    if map.width != mask.width || map.height != mask.height || mask.values.len() != map.len() {
        return Err(CompositionError::DimensionMismatch {
            mask_w: mask.width,
            mask_h: mask.height,
            map_w: map.width,
            map_h: map.height,
        });
    }
    let mut out = Decomposition {
        static_pixels: Vec::new(),
        dynamic_pixels: Vec::new(),
    };
    for (idx, dynamic) in binarize_mask(mask).into_iter().enumerate() {
        if dynamic {
            out.dynamic_pixels.push(idx);
        } else {
            out.static_pixels.push(idx);
        }
    }
    Ok(out)
}

/// Dynamic Gaussians of keyframe `frame` exactly as predicted.
pub fn frame_dynamic_set(seq: &SceneSequence, frame: usize) -> Result<DynamicSet, CompositionError> {
    let f = &seq.frames[frame];
    let parts = decompose(&f.map, &f.mask)?;
    let mut out = DynamicSet::empty(f.map.timestamp);
    for idx in parts.dynamic_pixels {
        out.push(
            f.map.gaussians[idx],
            Provenance {
                layer: Layer::Dynamic,
                origin: Origin::Pixel {
                    frame_time: f.map.timestamp,
                    index: idx as u32,
                },
                instance_id: f.map.instance_id(idx),
            },
        );
    }
    Ok(out)
}

/// Renderable union of static, dynamic and sky Gaussians for one query time.
///
/// Opacities are stored unmodulated; the renderer applies the lifespan law
/// at `query_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedScene {
    pub query_time: f64,
    pub gaussians: Vec<Gaussian>,
    pub provenance: Vec<Provenance>,
}

impl ComposedScene {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn count(&self, layer: Layer) -> usize {
        self.provenance.iter().filter(|p| p.layer == layer).count()
    }
}

/// Union of every frame's static Gaussians, `dynamic_source`, and the sky.
pub fn aggregate(
    seq: &SceneSequence,
    query_time: f64,
    dynamic_source: &DynamicSet,
) -> Result<ComposedScene, CompositionError> {
    if dynamic_source.time != query_time {
        return Err(CompositionError::QueryTimeMismatch {
            dynamic_time: dynamic_source.time,
            query: query_time,
        });
    }
    let mut gaussians = Vec::new();
    let mut provenance = Vec::new();
    for f in &seq.frames {
        let parts = decompose(&f.map, &f.mask)?;
        gaussians.reserve(parts.static_pixels.len());
        for idx in parts.static_pixels {
            gaussians.push(f.map.gaussians[idx]);
            provenance.push(Provenance {
                layer: Layer::Static,
                origin: Origin::Pixel {
                    frame_time: f.map.timestamp,
                    index: idx as u32,
                },
                instance_id: f.map.instance_id(idx),
            });
        }
    }
    gaussians.extend_from_slice(&dynamic_source.gaussians);
    provenance.extend_from_slice(&dynamic_source.provenance);
    for (i, g) in seq.sky.gaussians.iter().enumerate() {
        gaussians.push(*g);
        provenance.push(Provenance {
            layer: Layer::Sky,
            origin: Origin::Sky { index: i as u32 },
            instance_id: 0,
        });
    }
    Ok(ComposedScene {
        query_time,
        gaussians,
        provenance,
    })
}

/// What [`compose_at`] did to produce a scene.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComposeReport {
    /// Bracketing keyframe times when the query fell between keyframes.
    pub bracket: Option<(f64, f64)>,
    pub weight: Option<f64>,
    pub pose_linear_fallback: bool,
    /// Inserted instances whose motion did not cover the query time; the
    /// nearest covered keyframe pair was used with a clamped weight.
    pub uncovered_inserts: Vec<u32>,
    pub static_count: usize,
    pub dynamic_count: usize,
    pub sky_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub scene: ComposedScene,
    /// Camera at the query time: a keyframe pose or the interpolated one.
    pub pose: CameraPose,
    pub report: ComposeReport,
}

/// Dynamic Gaussians of an inserted instance at time `t`, plus whether `t`
/// was outside every covered keyframe pair.
pub fn inserted_dynamic_set(inst: &InsertedInstance, t: f64) -> (DynamicSet, bool) {
    let mut out = DynamicSet::empty(t);
    let frames = &inst.payload.frames;
    let push_frame = |out: &mut DynamicSet, frame_time: f64, gs: &mut dyn Iterator<Item = Gaussian>| {
        for (i, mut g) in gs.enumerate() {
            g.birth_time = t;
            out.push(
                g,
                Provenance {
                    layer: Layer::Dynamic,
                    origin: Origin::Inserted {
                        frame_time,
                        index: i as u32,
                    },
                    instance_id: inst.instance_id,
                },
            );
        }
    };
    if let Some(f) = frames.iter().find(|f| f.timestamp == t) {
        push_frame(&mut out, f.timestamp, &mut f.gaussians.iter().copied());
        return (out, false);
    }
    let distance = |m: &crate::model::PayloadMotion| {
        if t < m.t_a {
            m.t_a - t
        } else if t > m.t_b {
            t - m.t_b
        } else {
            0.0
        }
    };
    let best = inst
        .payload
        .motion
        .iter()
        .filter(|m| frames.iter().any(|f| f.timestamp == m.t_a))
        .min_by(|a, b| distance(a).total_cmp(&distance(b)).then(a.t_a.total_cmp(&b.t_a)));
    match best {
        Some(m) => {
            let src = frames.iter().find(|f| f.timestamp == m.t_a).expect("filtered above");
            let weight = ((t - m.t_a) / (m.t_b - m.t_a)).clamp(0.0, 1.0);
            let mut it = src
                .gaussians
                .iter()
                .zip(&m.displacements)
                .map(|(g, d)| Gaussian {
                    mean: translate(g.mean, d, weight),
                    ..*g
                });
            push_frame(&mut out, src.timestamp, &mut it);
            (out, distance(m) > 0.0)
        }
        None => {
            let nearest = frames
                .iter()
                .min_by(|a, b| (a.timestamp - t).abs().total_cmp(&(b.timestamp - t).abs()));
            if let Some(f) = nearest {
                push_frame(&mut out, f.timestamp, &mut f.gaussians.iter().copied());
            }
            (out, true)
        }
    }
}

/// Builds the full scene and camera for query time `t`.
///
/// Keyframe times take the predicted dynamic Gaussians directly; times
/// strictly between keyframes interpolate from the earlier keyframe along
/// the pair's motion field. Edit overlays (removals and inserted instances)
/// are applied to the dynamic layer only.
pub fn compose_at(seq: &SceneSequence, t: f64) -> Result<Composition, CompositionError> {
    let (start, end) = seq.time_span().ok_or(CompositionError::EmptyScene)?;
    if !(t >= start && t <= end) {
        return Err(CompositionError::OutOfSpan { time: t, start, end });
    }
    let mut report = ComposeReport {
        bracket: None,
        weight: None,
        pose_linear_fallback: false,
        uncovered_inserts: Vec::new(),
        static_count: 0,
        dynamic_count: 0,
        sky_count: 0,
    };
    let (mut dynamic, pose) = if let Some(fi) = seq.frame_at(t) {
        (frame_dynamic_set(seq, fi)?, seq.frames[fi].pose)
    } else {
        let b = seq
            .frames
            .iter()
            .position(|f| f.timestamp() > t)
            .expect("t is inside the span and not a keyframe");
        let (fa, fb) = (&seq.frames[b - 1], &seq.frames[b]);
        let q = InterpolationQuery::new(fa.timestamp(), fb.timestamp(), t)?;
        let dynamic = match seq.motion_field(q.t_a, q.t_b) {
            Some(field) => interpolate_dynamic(&fa.map, &fa.mask, field, &q)?,
            None if decompose(&fa.map, &fa.mask)?.dynamic_pixels.is_empty() => DynamicSet::empty(t),
            None => {
                return Err(CompositionError::MissingMotionField {
                    t_a: q.t_a,
                    t_b: q.t_b,
                })
            }
        };
        let interp = interpolate_pose(&fa.pose, &fb.pose, &q);
        report.bracket = Some((q.t_a, q.t_b));
        report.weight = Some(q.weight);
        report.pose_linear_fallback = interp.linear_fallback;
        (dynamic, interp.pose)
    };

    let overlay = &seq.overlay;
    if !overlay.removed.is_empty() {
        dynamic.retain(|p| !overlay.is_removed_at(p.instance_id, t));
    }
    for inst in overlay.inserted.iter().filter(|i| i.visible_at(t)) {
        if overlay.is_removed_at(inst.instance_id, t) {
            continue;
        }
        let (set, uncovered) = inserted_dynamic_set(inst, t);
        if uncovered {
            report.uncovered_inserts.push(inst.instance_id);
        }
        dynamic.gaussians.extend(set.gaussians);
        dynamic.provenance.extend(set.provenance);
    }

    let scene = aggregate(seq, t, &dynamic)?;
    report.static_count = scene.count(Layer::Static);
    report.dynamic_count = scene.count(Layer::Dynamic);
    report.sky_count = scene.count(Layer::Sky);
    Ok(Composition { scene, pose, report })
}
