//! Random well-formed scenes shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splat4d::model::{
    normalize_quat, CameraPose, DynamicMask, Frame, Gaussian, GaussianMap, InsertedInstance, InstancePayload,
    MotionField, PayloadFrame, PayloadMotion, Removal, SceneSequence,
};
use splat4d::sky::{build_sky, SkyDome};

pub fn random_gaussian(rng: &mut ChaCha8Rng, t: f64) -> Gaussian {
    let q = normalize_quat([
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(0.1..1.0),
    ])
    .unwrap();
    Gaussian {
        color: [rng.random(), rng.random(), rng.random()],
        mean: [
            rng.random_range(-3.0..3.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(1.0..12.0),
        ],
        rotation: q.map(|c| c as f32),
        scale: [
            rng.random_range(0.02..0.5),
            rng.random_range(0.02..0.5),
            rng.random_range(0.02..0.5),
        ],
        opacity: rng.random_range(0.0..=1.0),
        lifespan: rng.random_range(0.05..4.0),
        birth_time: t,
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng, w: u32, h: u32, t: f64, first: bool) -> CameraPose {
    let f = rng.random_range(0.8..1.5) * w as f64;
    if first {
        return CameraPose::identity(f, f, w as f64 / 2.0, h as f64 / 2.0, t);
    }
    let q = normalize_quat([
        1.0,
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.05..0.05),
    ])
    .unwrap();
    CameraPose {
        fx: f,
        fy: f,
        cx: w as f64 / 2.0,
        cy: h as f64 / 2.0,
        rotation: q,
        translation: [
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.1..0.1),
            rng.random_range(0.0..1.0),
        ],
        timestamp: t,
    }
}

/// A random sequence that passes validation. Instance ids are drawn from 1..=3.
pub fn random_sequence(rng: &mut ChaCha8Rng, max_frames: usize, with_edits: bool) -> SceneSequence {
    random_sequence_sized(rng, max_frames, (6, 5), with_edits)
}

/// Like [`random_sequence`] with maps of at most `max_dims` pixels.
pub fn random_sequence_sized(
    rng: &mut ChaCha8Rng,
    max_frames: usize,
    max_dims: (u32, u32),
    with_edits: bool,
) -> SceneSequence {
    let n_frames = rng.random_range(0..=max_frames);
    let (w, h) = (rng.random_range(1..=max_dims.0), rng.random_range(1..=max_dims.1));
    let mut t = rng.random_range(-1.0..1.0);
    let mut frames = Vec::new();
    for k in 0..n_frames {
        if k > 0 {
            t += rng.random_range(0.1..1.0);
        }
        let n = (w * h) as usize;
        let gaussians = (0..n).map(|_| random_gaussian(rng, t)).collect();
        let ids = rng.random_bool(0.8).then(|| (0..n).map(|_| rng.random_range(0..=3u32)).collect());
        let values = (0..n)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.5,
                1 => 1.0,
                2 => 0.0,
                _ => rng.random(),
            })
            .collect();
        frames.push(Frame {
            map: GaussianMap::new(w, h, t, gaussians, ids).unwrap(),
            mask: DynamicMask::new(w, h, values).unwrap(),
            pose: random_pose(rng, w, h, t, k == 0),
        });
    }
    let mut motion = Vec::new();
    for pair in frames.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let queries: Vec<[u32; 2]> = (0..a.map.len())
            .filter(|&i| a.mask.is_dynamic(i) && rng.random_bool(0.9))
            .map(|i| {
                let (r, c) = a.map.pixel(i);
                [r, c]
            })
            .collect();
        let displacements = queries
            .iter()
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2), rng.random_range(-1.0..1.0)])
            .collect();
        motion.push(MotionField {
            t_a: a.map.timestamp,
            t_b: b.map.timestamp,
            queries,
            displacements,
        });
    }
    let sky = match rng.random_range(0..3) {
        0 => SkyDome::empty(),
        _ => build_sky(rng.random_range(50.0..2000.0), rng.random_range(0..40), rng.random()).unwrap(),
    };
    let mut seq = SceneSequence::new(frames, sky, motion);
    if with_edits && rng.random_bool(0.5) {
        seq.overlay.removed.push(Removal {
            instance_id: rng.random_range(1..=3),
            time_range: rng.random_bool(0.5).then_some([t - 0.5, t]),
        });
        let kt = [t, t + 0.5];
        let count = rng.random_range(0..4);
        let frames: Vec<PayloadFrame> = kt
            .iter()
            .map(|&ts| PayloadFrame {
                timestamp: ts,
                gaussians: (0..count).map(|_| random_gaussian(rng, ts)).collect(),
            })
            .collect();
        seq.overlay.inserted.push(InsertedInstance {
            instance_id: 10,
            payload: InstancePayload {
                frames,
                motion: vec![PayloadMotion {
                    t_a: kt[0],
                    t_b: kt[1],
                    displacements: vec![[0.25, 0.0, 0.0]; count],
                }],
            },
            time_range: None,
        });
    }
    seq
}

/// Fixed scene pinned by the golden file. Changing it requires regenerating the file.
pub fn golden_scene() -> SceneSequence {
    let g = |t: f64, x: f32| Gaussian {
        color: [0.25, 0.5, 0.75],
        mean: [x, -0.5, 4.0],
        rotation: [1.0, 0.0, 0.0, 0.0],
        scale: [0.125, 0.25, 0.5],
        opacity: 0.875,
        lifespan: 2.0,
        birth_time: t,
    };
    let frames = vec![
        Frame {
            map: GaussianMap::new(2, 1, 0.0, vec![g(0.0, 0.0), g(0.0, 1.0)], Some(vec![0, 5])).unwrap(),
            mask: DynamicMask::new(2, 1, vec![0.0, 1.0]).unwrap(),
            pose: CameraPose::identity(2.0, 2.0, 1.0, 0.5, 0.0),
        },
        Frame {
            map: GaussianMap::new(2, 1, 0.5, vec![g(0.5, 0.0), g(0.5, 1.5)], None).unwrap(),
            mask: DynamicMask::new(2, 1, vec![0.25, 0.75]).unwrap(),
            pose: CameraPose {
                fx: 2.0,
                fy: 2.0,
                cx: 1.0,
                cy: 0.5,
                rotation: [1.0, 0.0, 0.0, 0.0],
                translation: [0.0, 0.0, 0.5],
                timestamp: 0.5,
            },
        },
    ];
    let field = MotionField {
        t_a: 0.0,
        t_b: 0.5,
        queries: vec![[0, 1]],
        displacements: vec![[0.5, 0.0, 0.0]],
    };
    let mut seq = SceneSequence::new(frames, build_sky(100.0, 2, 7).unwrap(), vec![field]);
    seq.overlay.removed.push(Removal {
        instance_id: 5,
        time_range: Some([0.25, 0.5]),
    });
    seq.overlay.inserted.push(InsertedInstance {
        instance_id: 6,
        payload: InstancePayload {
            frames: vec![PayloadFrame {
                timestamp: 0.0,
                gaussians: vec![g(0.0, -1.0)],
            }],
            motion: vec![PayloadMotion {
                t_a: 0.0,
                t_b: 0.5,
                displacements: vec![[0.0, 0.0, 1.0]],
            }],
        },
        time_range: None,
    });
    seq
}

pub fn golden_path() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/small_scene.dggt")
}
