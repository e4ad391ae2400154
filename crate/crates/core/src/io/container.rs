//! Single-file chunked scene container.
//!
//! Layout, all multi-byte values little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DGGT"
//! 4       2     format version, major << 8 | minor
//! 6       1     up-axis tag (0 = +x, 1 = +y, 2 = +z)
//! 7       1     reserved, zero
//! 8       4     endianness marker 0x01020304
//! 12      4     frame count
//! 16      4     block count
//! 20      8     total file length in bytes
//! 28      4     CRC32 of bytes 0..28 followed by the block table
//! 32      28*n  block table: kind [4], key u32, offset u64, length u64, crc32 u32
//! ...           block payloads, in table order, back to back
//! ```
//!
//! Block kinds:
//! - `FRAM` (key = frame index): timestamp f64, width u32, height u32, mask
//!   threshold f32, has-ids u8, 3 pad bytes, pose as 12 f64 (fx, fy, cx, cy,
//!   quaternion wxyz, translation xyz, timestamp), 15 f32 per pixel, u32 ids
//!   per pixel when present, f32 mask per pixel.
//! - `SKYD`: radius f64, fixed opacity f32, count u32, then per Gaussian 15
//!   f32 and a birth time f64.
//! - `MOTN` (key = index in (t_a, t_b) order): t_a f64, t_b f64, count u32,
//!   per query (row u32, col u32), then per query 3 f32.
//! - `EDIT` (only when edits exist): see [`encode_overlay`].

use std::path::Path;

use crate::model::{
    CameraPose, DynamicMask, EditOverlay, Frame, Gaussian, GaussianMap, InsertedInstance, InstancePayload,
    MotionField, PayloadFrame, PayloadMotion, Removal, SceneSequence, GAUSSIAN_CHANNELS,
};
use crate::sky::SkyDome;
use crate::validate::{validate_sequence, Violation};

pub const MAGIC: [u8; 4] = *b"DGGT";
pub const VERSION_MAJOR: u8 = 1;
pub const VERSION_MINOR: u8 = 0;
pub const ENDIAN_MARKER: u32 = 0x0102_0304;
pub const UP_AXIS_Z: u8 = 2;
pub const HEADER_LEN: usize = 32;
pub const TABLE_ENTRY_LEN: usize = 28;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("not a scene container (bad magic)")]
    BadMagic,
    #[error("unsupported format version {major}.{minor}")]
    VersionMismatch { major: u8, minor: u8 },
    #[error("endianness marker {0:#010x} does not match")]
    BadEndianness(u32),
    #[error("header checksum mismatch")]
    HeaderChecksum,
    #[error("checksum mismatch in block {block}")]
    ChecksumFailure { block: String },
    #[error("file is truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{extra} unexpected bytes after the last block")]
    TrailingData { extra: u64 },
    #[error("block {block} is malformed: {reason}")]
    Malformed { block: String, reason: String },
    #[error("scene fails validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ContainerError {
    /// Stable numeric code, one per failure class.
    pub fn code(&self) -> u32 {
        match self {
            ContainerError::BadMagic => 1,
            ContainerError::VersionMismatch { .. } => 2,
            ContainerError::ChecksumFailure { .. } => 3,
            ContainerError::Truncated { .. } => 4,
            ContainerError::HeaderChecksum => 5,
            ContainerError::BadEndianness(_) => 6,
            ContainerError::TrailingData { .. } => 7,
            ContainerError::Malformed { .. } => 8,
            ContainerError::Invalid(_) => 9,
            ContainerError::Io(_) => 10,
        }
    }
}

type Result<T> = std::result::Result<T, ContainerError>;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn range(&mut self, r: Option<[f64; 2]>) {
        self.u8(r.is_some() as u8);
        let [a, b] = r.unwrap_or([0.0, 0.0]);
        self.f64(a);
        self.f64(b);
    }
    fn gaussian_with_birth(&mut self, g: &Gaussian) {
        g.channels().iter().for_each(|&c| self.f32(c));
        self.f64(g.birth_time);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    block: &'a str,
}

impl<'a> Reader<'a> {
    fn malformed(&self, reason: impl Into<String>) -> ContainerError {
        ContainerError::Malformed {
            block: self.block.to_string(),
            reason: reason.into(),
        }
    }
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| self.malformed("payload ends early"))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length N"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    /// A length prefix, checked against the bytes that remain.
    fn count(&mut self, bytes_each: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        self.check_room(n, bytes_each)?;
        Ok(n)
    }
    fn check_room(&self, n: usize, bytes_each: usize) -> Result<()> {
        if n.saturating_mul(bytes_each) > self.buf.len() - self.pos {
            return Err(self.malformed(format!("declared {n} elements exceed the block")));
        }
        Ok(())
    }
    fn range(&mut self) -> Result<Option<[f64; 2]>> {
        let present = self.u8()?;
        let r = [self.f64()?, self.f64()?];
        match present {
            0 => Ok(None),
            1 => Ok(Some(r)),
            _ => Err(self.malformed("bad range flag")),
        }
    }
    fn channels(&mut self) -> Result<[f32; GAUSSIAN_CHANNELS]> {
        let mut ch = [0.0; GAUSSIAN_CHANNELS];
        for c in &mut ch {
            *c = self.f32()?;
        }
        Ok(ch)
    }
    fn gaussian_with_birth(&mut self) -> Result<Gaussian> {
        let ch = self.channels()?;
        Ok(Gaussian::from_channels(&ch, self.f64()?))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.malformed(format!("{} unread bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

const GAUSSIAN_WITH_BIRTH: usize = GAUSSIAN_CHANNELS * 4 + 8;

fn encode_frame(f: &Frame) -> Vec<u8> {
    let mut w = Writer::default();
    let m = &f.map;
    w.f64(m.timestamp);
    w.u32(m.width);
    w.u32(m.height);
    w.f32(f.mask.threshold);
    w.u8(m.instance_ids.is_some() as u8);
    w.0.extend_from_slice(&[0; 3]);
    let p = &f.pose;
    for v in [p.fx, p.fy, p.cx, p.cy] {
        w.f64(v);
    }
    p.rotation.iter().for_each(|&v| w.f64(v));
    p.translation.iter().for_each(|&v| w.f64(v));
    w.f64(p.timestamp);
    for g in &m.gaussians {
        g.channels().iter().for_each(|&c| w.f32(c));
    }
    if let Some(ids) = &m.instance_ids {
        ids.iter().for_each(|&id| w.u32(id));
    }
    f.mask.values.iter().for_each(|&v| w.f32(v));
    w.0
}

fn decode_frame(r: &mut Reader) -> Result<Frame> {
    let timestamp = r.f64()?;
    let width = r.u32()?;
    let height = r.u32()?;
    let threshold = r.f32()?;
    let has_ids = match r.u8()? {
        0 => false,
        1 => true,
        _ => return Err(r.malformed("bad instance-id flag")),
    };
    r.take::<3>()?;
    let mut pv = [0.0f64; 12];
    for v in &mut pv {
        *v = r.f64()?;
    }
    let pose = CameraPose {
        fx: pv[0],
        fy: pv[1],
        cx: pv[2],
        cy: pv[3],
        rotation: [pv[4], pv[5], pv[6], pv[7]],
        translation: [pv[8], pv[9], pv[10]],
        timestamp: pv[11],
    };
    let n = width as usize * height as usize;
    let per_pixel = GAUSSIAN_CHANNELS * 4 + 4 + if has_ids { 4 } else { 0 };
    r.check_room(n, per_pixel)?;
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        gaussians.push(Gaussian::from_channels(&r.channels()?, timestamp));
    }
    let instance_ids = if has_ids {
        Some((0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let values = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    Ok(Frame {
        map: GaussianMap {
            width,
            height,
            timestamp,
            gaussians,
            instance_ids,
        },
        mask: DynamicMask {
            width,
            height,
            values,
            threshold,
        },
        pose,
    })
}

fn encode_sky(sky: &SkyDome) -> Vec<u8> {
    let mut w = Writer::default();
    w.f64(sky.radius);
    w.f32(sky.fixed_opacity);
    w.u32(sky.gaussians.len() as u32);
    sky.gaussians.iter().for_each(|g| w.gaussian_with_birth(g));
    w.0
}

fn decode_sky(r: &mut Reader) -> Result<SkyDome> {
    let radius = r.f64()?;
    let fixed_opacity = r.f32()?;
    let n = r.count(GAUSSIAN_WITH_BIRTH)?;
    let gaussians = (0..n).map(|_| r.gaussian_with_birth()).collect::<Result<_>>()?;
    Ok(SkyDome {
        radius,
        fixed_opacity,
        gaussians,
    })
}

fn encode_motion(m: &MotionField) -> Vec<u8> {
    let mut w = Writer::default();
    w.f64(m.t_a);
    w.f64(m.t_b);
    w.u32(m.queries.len() as u32);
    for [row, col] in &m.queries {
        w.u32(*row);
        w.u32(*col);
    }
    m.displacements.iter().flatten().for_each(|&d| w.f32(d));
    w.0
}

fn decode_motion(r: &mut Reader) -> Result<MotionField> {
    let t_a = r.f64()?;
    let t_b = r.f64()?;
    let n = r.count(8 + 12)?;
    let queries = (0..n).map(|_| Ok([r.u32()?, r.u32()?])).collect::<Result<_>>()?;
    let displacements = (0..n).map(|_| Ok([r.f32()?, r.f32()?, r.f32()?])).collect::<Result<_>>()?;
    Ok(MotionField {
        t_a,
        t_b,
        queries,
        displacements,
    })
}

/// `EDIT` block: removal count u32, per removal (id u32, range); inserted
/// count u32, per instance (id u32, range, keyframe count u32, per keyframe
/// (timestamp f64, count u32, Gaussians with birth time), motion count u32,
/// per motion (t_a f64, t_b f64, count u32, 3 f32 each)). A range is a
/// presence byte followed by two f64.
fn encode_overlay(o: &EditOverlay) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(o.removed.len() as u32);
    for r in &o.removed {
        w.u32(r.instance_id);
        w.range(r.time_range);
    }
    w.u32(o.inserted.len() as u32);
    for inst in &o.inserted {
        w.u32(inst.instance_id);
        w.range(inst.time_range);
        w.u32(inst.payload.frames.len() as u32);
        for pf in &inst.payload.frames {
            w.f64(pf.timestamp);
            w.u32(pf.gaussians.len() as u32);
            pf.gaussians.iter().for_each(|g| w.gaussian_with_birth(g));
        }
        w.u32(inst.payload.motion.len() as u32);
        for m in &inst.payload.motion {
            w.f64(m.t_a);
            w.f64(m.t_b);
            w.u32(m.displacements.len() as u32);
            m.displacements.iter().flatten().for_each(|&d| w.f32(d));
        }
    }
    w.0
}

fn decode_overlay(r: &mut Reader) -> Result<EditOverlay> {
    let n_removed = r.count(4 + 17)?;
    let removed = (0..n_removed)
        .map(|_| {
            Ok(Removal {
                instance_id: r.u32()?,
                time_range: r.range()?,
            })
        })
        .collect::<Result<_>>()?;
    let n_inserted = r.count(4 + 17 + 8)?;
    let mut inserted = Vec::with_capacity(n_inserted);
    for _ in 0..n_inserted {
        let instance_id = r.u32()?;
        let time_range = r.range()?;
        let n_frames = r.count(12)?;
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let timestamp = r.f64()?;
            let n = r.count(GAUSSIAN_WITH_BIRTH)?;
            let gaussians = (0..n).map(|_| r.gaussian_with_birth()).collect::<Result<_>>()?;
            frames.push(PayloadFrame { timestamp, gaussians });
        }
        let n_motion = r.count(20)?;
        let mut motion = Vec::with_capacity(n_motion);
        for _ in 0..n_motion {
            let t_a = r.f64()?;
            let t_b = r.f64()?;
            let n = r.count(12)?;
            let displacements = (0..n).map(|_| Ok([r.f32()?, r.f32()?, r.f32()?])).collect::<Result<_>>()?;
            motion.push(PayloadMotion { t_a, t_b, displacements });
        }
        inserted.push(InsertedInstance {
            instance_id,
            payload: InstancePayload { frames, motion },
            time_range,
        });
    }
    Ok(EditOverlay { removed, inserted })
}

fn block_name(kind: &[u8; 4], key: u32) -> String {
    let k = String::from_utf8_lossy(kind);
    match kind {
        b"FRAM" | b"MOTN" => format!("{k}[{key}]"),
        _ => k.into_owned(),
    }
}

/// Serializes `seq` without validating it.
pub fn encode_scene(seq: &SceneSequence) -> Vec<u8> {
    let mut blocks: Vec<([u8; 4], u32, Vec<u8>)> = Vec::new();
    for (i, f) in seq.frames.iter().enumerate() {
        blocks.push((*b"FRAM", i as u32, encode_frame(f)));
    }
    blocks.push((*b"SKYD", 0, encode_sky(&seq.sky)));
    for (i, m) in seq.motion_fields.values().enumerate() {
        blocks.push((*b"MOTN", i as u32, encode_motion(m)));
    }
    if !seq.overlay.is_empty() {
        blocks.push((*b"EDIT", 0, encode_overlay(&seq.overlay)));
    }

    let data_start = (HEADER_LEN + TABLE_ENTRY_LEN * blocks.len()) as u64;
    let total = data_start + blocks.iter().map(|b| b.2.len() as u64).sum::<u64>();
    let mut head = Writer::default();
    head.0.extend_from_slice(&MAGIC);
    head.0.extend_from_slice(&((VERSION_MAJOR as u16) << 8 | VERSION_MINOR as u16).to_le_bytes());
    head.u8(UP_AXIS_Z);
    head.u8(0);
    head.u32(ENDIAN_MARKER);
    head.u32(seq.frames.len() as u32);
    head.u32(blocks.len() as u32);
    head.u64(total);
    let mut table = Writer::default();
    let mut offset = data_start;
    for (kind, key, payload) in &blocks {
        table.0.extend_from_slice(kind);
        table.u32(*key);
        table.u64(offset);
        table.u64(payload.len() as u64);
        table.u32(crc32fast::hash(payload));
        offset += payload.len() as u64;
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&head.0);
    hasher.update(&table.0);
    head.u32(hasher.finalize());

    let mut out = head.0;
    out.reserve(total as usize - out.len());
    out.extend_from_slice(&table.0);
    for (_, _, payload) in blocks {
        out.extend_from_slice(&payload);
    }
    out
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Parses a container and checks every checksum, without running validation.
pub fn decode_scene(bytes: &[u8]) -> Result<SceneSequence> {
    let actual = bytes.len() as u64;
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        return Err(ContainerError::Truncated {
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    if bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let (minor, major) = (bytes[4], bytes[5]);
    if major != VERSION_MAJOR || minor > VERSION_MINOR {
        return Err(ContainerError::VersionMismatch { major, minor });
    }
    let marker = le_u32(bytes, 8);
    if marker != ENDIAN_MARKER {
        return Err(ContainerError::BadEndianness(marker));
    }
    let frame_count = le_u32(bytes, 12) as usize;
    let block_count = le_u32(bytes, 16) as usize;
    let table_end = HEADER_LEN as u64 + TABLE_ENTRY_LEN as u64 * block_count as u64;
    if actual < table_end {
        return Err(ContainerError::Truncated {
            expected: table_end,
            actual,
        });
    }
    let table = &bytes[HEADER_LEN..table_end as usize];
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes[..28]);
    hasher.update(table);
    if hasher.finalize() != le_u32(bytes, 28) {
        return Err(ContainerError::HeaderChecksum);
    }
    let total = le_u64(bytes, 20);
    if actual < total {
        return Err(ContainerError::Truncated { expected: total, actual });
    }
    if actual > total {
        return Err(ContainerError::TrailingData { extra: actual - total });
    }
    if bytes[6] != UP_AXIS_Z {
        return Err(ContainerError::Malformed {
            block: "header".into(),
            reason: format!("unsupported up-axis tag {}", bytes[6]),
        });
    }

    let mut frames = Vec::with_capacity(frame_count);
    let mut sky = None;
    let mut motion = Vec::new();
    let mut overlay = EditOverlay::default();
    let mut expected_offset = table_end;
    for e in table.chunks_exact(TABLE_ENTRY_LEN) {
        let kind: [u8; 4] = e[..4].try_into().expect("4 bytes");
        let key = le_u32(e, 4);
        let offset = le_u64(e, 8);
        let length = le_u64(e, 16);
        let name = block_name(&kind, key);
        let end = offset.checked_add(length).filter(|&end| offset == expected_offset && end <= total);
        let Some(end) = end else {
            return Err(ContainerError::Malformed {
                block: name,
                reason: format!("bad extent {offset}+{length}"),
            });
        };
        expected_offset = end;
        let payload = &bytes[offset as usize..end as usize];
        if crc32fast::hash(payload) != le_u32(e, 24) {
            return Err(ContainerError::ChecksumFailure { block: name });
        }
        let mut r = Reader {
            buf: payload,
            pos: 0,
            block: &name,
        };
        match &kind {
            b"FRAM" if key as usize == frames.len() => frames.push(decode_frame(&mut r)?),
            b"SKYD" if sky.is_none() => sky = Some(decode_sky(&mut r)?),
            b"MOTN" if key as usize == motion.len() => motion.push(decode_motion(&mut r)?),
            b"EDIT" if overlay.is_empty() => overlay = decode_overlay(&mut r)?,
            _ => return Err(r.malformed("unexpected block")),
        }
        r.finish()?;
    }
    if expected_offset != total {
        return Err(ContainerError::Malformed {
            block: "header".into(),
            reason: "blocks do not cover the file".into(),
        });
    }
    if frames.len() != frame_count {
        return Err(ContainerError::Malformed {
            block: "header".into(),
            reason: format!("header declares {frame_count} frames, found {}", frames.len()),
        });
    }
    let sky = sky.ok_or_else(|| ContainerError::Malformed {
        block: "SKYD".into(),
        reason: "missing".into(),
    })?;
    let mut seq = SceneSequence::new(frames, sky, motion);
    seq.overlay = overlay;
    Ok(seq)
}

/// Validates `seq` and writes it atomically to `path`.
pub fn save_scene(seq: &SceneSequence, path: impl AsRef<Path>) -> Result<()> {
    let violations = validate_sequence(seq);
    if !violations.is_empty() {
        return Err(ContainerError::Invalid(violations));
    }
    super::write_atomic(path.as_ref(), &encode_scene(seq))?;
    Ok(())
}

/// Reads, checks and validates a container.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneSequence> {
    let bytes = std::fs::read(path)?;
    let seq = decode_scene(&bytes)?;
    let violations = validate_sequence(&seq);
    if !violations.is_empty() {
        return Err(ContainerError::Invalid(violations));
    }
    Ok(seq)
}
