//! Sequential multi-room estimation over an ordered frame stream.
//!
//! Frames are subsampled and buffered; every full buffer proposes a new
//! cuboid, which is fitted jointly with the rooms accepted so far through
//! shared tangent coordinates (orientation, floor/ceiling, walls).

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{draw_samples, evaluate, CostConfig, PointSamples};
use crate::error::SceneError;
use crate::geometry::{expand_to_contain, fit_offsets, retract, rotation_to_wxyz, Cuboid, CuboidTangent, Tangent9};
use crate::metrics::iou3d;
use crate::pipeline::{initial_cuboid, PipelineConfig};
use crate::scene::Scene;
use crate::solver::{lm_minimize_problem, Linearization, LmProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingFlags {
    pub orientation: bool,
    pub floor_ceiling: bool,
    pub walls: bool,
}

impl SharingFlags {
    pub const ALL: Self = Self { orientation: true, floor_ceiling: true, walls: true };
    pub const NONE: Self = Self { orientation: false, floor_ceiling: false, walls: false };
}

impl Default for SharingFlags {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRoomConfig {
    pub subsample_factor: usize,
    pub frames_per_room: usize,
    /// A candidate overlapping an accepted room by more than this is rejected.
    pub overlap_iou_max: f64,
    pub shared: SharingFlags,
}

impl Default for MultiRoomConfig {
    fn default() -> Self {
        Self { subsample_factor: 60, frames_per_room: 8, overlap_iou_max: 0.01, shared: SharingFlags::ALL }
    }
}

impl MultiRoomConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.subsample_factor < 1 {
            return Err("subsample factor must be at least 1".into());
        }
        if self.frames_per_room < 2 {
            return Err("frames per room must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.overlap_iou_max) {
            return Err("overlap threshold must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RoomEvent {
    /// Frame skipped because its camera is still inside the last room.
    Skipped { frame: usize },
    Accepted { room: usize, frames: Vec<usize> },
    Rejected { frames: Vec<usize>, max_iou: f64, no_progress: bool },
}

/// Accepted rooms and the trace that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub shared: SharingFlags,
    pub rooms: Vec<Cuboid>,
    /// Stream indices of the frames each room was fitted on.
    pub room_frames: Vec<Vec<usize>>,
    pub events: Vec<RoomEvent>,
}

impl Layout {
    /// Common rotation when orientation is shared and a room exists.
    pub fn rotation(&self) -> Option<&Matrix3<f64>> {
        self.shared.orientation.then(|| self.rooms.first().map(Cuboid::rotation)).flatten()
    }

    pub fn floor_ceiling(&self) -> Option<(f64, f64)> {
        self.shared.floor_ceiling.then(|| self.rooms.first().map(|c| (c.lo(2), c.hi(2)))).flatten()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rotation": self.rotation().map(rotation_to_wxyz),
            "floor_ceiling": self.floor_ceiling().map(|(lo, hi)| [lo, hi]),
            "shared": self.shared,
            "rooms": self.rooms.iter().zip(&self.room_frames).map(|(c, frames)| serde_json::json!({
                "rotation": rotation_to_wxyz(c.rotation()),
                "offsets": c.offsets(),
                "frames": frames,
            })).collect::<Vec<_>>(),
        })
    }

    /// Wireframe of every room: eight vertices and twelve line elements each.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for (r, c) in self.rooms.iter().enumerate() {
            out.push_str(&format!("o room_{r}\n"));
            for p in c.corners() {
                out.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
            }
            let base = 8 * r + 1;
            for i in 0..8 {
                for bit in [1, 2, 4] {
                    if i & bit == 0 {
                        out.push_str(&format!("l {} {}\n", base + i, base + (i | bit)));
                    }
                }
            }
        }
        out
    }
}

struct Room {
    scene: Scene,
    /// Global tangent coordinate of each local `(δω, δd)` entry.
    index: [Option<usize>; 9],
}

struct JointProblem<'a> {
    rooms: &'a [Room],
    samples: &'a [PointSamples],
    level: usize,
    cost: &'a CostConfig,
    margin: f64,
    dim: usize,
    sync_floor_ceiling: bool,
}

impl JointProblem<'_> {
    fn room_cost(&self, r: usize, cub: &Cuboid, with_jacobian: bool) -> crate::costs::Evaluation {
        evaluate(cub, &self.rooms[r].scene, self.level, &self.samples[r], self.cost, with_jacobian)
    }
}

impl LmProblem for JointProblem<'_> {
    type State = Vec<Cuboid>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn damping(&self, base: &[f64; 9]) -> DVector<f64> {
        let mut out = DVector::from_element(self.dim, f64::NAN);
        for room in self.rooms {
            for (k, g) in room.index.iter().enumerate() {
                if let Some(g) = *g {
                    if out[g].is_nan() {
                        out[g] = base[k];
                    }
                }
            }
        }
        out
    }

    fn linearize(&self, state: &Vec<Cuboid>) -> Linearization {
        let mut hessian = DMatrix::zeros(self.dim, self.dim);
        let mut gradient = DVector::zeros(self.dim);
        let mut cost = 0.0;
        let mut rows = 0;
        for (r, cub) in state.iter().enumerate() {
            let eval = self.room_cost(r, cub, true);
            let ne = eval.normal_equations(self.cost.deterministic);
            let index = &self.rooms[r].index;
            for (k1, g1) in index.iter().enumerate() {
                let Some(g1) = *g1 else { continue };
                gradient[g1] += ne.gradient[k1];
                for (k2, g2) in index.iter().enumerate() {
                    if let Some(g2) = *g2 {
                        hessian[(g1, g2)] += ne.hessian[(k1, k2)];
                    }
                }
            }
            cost += eval.cost;
            rows += ne.rows;
        }
        Linearization { cost, hessian, gradient, rows }
    }

    fn cost(&self, state: &Vec<Cuboid>) -> f64 {
        let mut cost = 0.0;
        for (r, cub) in state.iter().enumerate() {
            cost += self.room_cost(r, cub, false).cost;
        }
        cost
    }

    fn retract(&self, state: &Vec<Cuboid>, step: &DVector<f64>) -> Option<Vec<Cuboid>> {
        let mut out = Vec::with_capacity(state.len());
        for (room, cub) in self.rooms.iter().zip(state) {
            let local = Tangent9::from_fn(|k, _| room.index[k].map_or(0.0, |g| step[g]));
            let moved = retract(cub, &CuboidTangent::from_vector(&local)).ok()?;
            out.push(expand_to_contain(&moved, &room.scene.cameras, self.margin));
        }
        if self.sync_floor_ceiling {
            sync_floor_ceiling(&mut out)?;
        }
        Some(out)
    }
}

/// Give every room the lowest floor and highest ceiling among them, which
/// keeps all cameras contained.
fn sync_floor_ceiling(rooms: &mut [Cuboid]) -> Option<()> {
    let lo = rooms.iter().map(|c| c.lo(2)).fold(f64::INFINITY, f64::min);
    let hi = rooms.iter().map(|c| c.hi(2)).fold(f64::NEG_INFINITY, f64::max);
    for c in rooms.iter_mut() {
        let mut o = *c.offsets();
        o[4] = lo;
        o[5] = hi;
        *c = c.with_offsets(o).ok()?;
    }
    Some(())
}

/// Tangent index maps for the accepted rooms followed by the new one.
/// Accepted rooms only expose shared coordinates (and walls when shared).
fn index_maps(n_accepted: usize, shared: SharingFlags) -> (Vec<[Option<usize>; 9]>, usize) {
    let mut next = 0;
    let mut take = |n: usize| {
        let start = next;
        next += n;
        start
    };
    let rot = shared.orientation.then(|| take(3));
    let fc = shared.floor_ceiling.then(|| take(2));
    let mut maps = Vec::with_capacity(n_accepted + 1);
    for r in 0..=n_accepted {
        let is_new = r == n_accepted;
        let mut m = [None; 9];
        let rot_base = rot.or_else(|| is_new.then(|| take(3)));
        if let Some(b) = rot_base {
            for k in 0..3 {
                m[k] = Some(b + k);
            }
        }
        if is_new || shared.walls {
            let b = take(4);
            for k in 0..4 {
                m[3 + k] = Some(b + k);
            }
        }
        let fc_base = fc.or_else(|| is_new.then(|| take(2)));
        if let Some(b) = fc_base {
            m[7] = Some(b);
            m[8] = Some(b + 1);
        }
        maps.push(m);
    }
    (maps, next)
}

struct Accepted {
    frames: Vec<usize>,
    scene: Scene,
    cuboid: Cuboid,
}

struct JointFit {
    cuboids: Vec<Cuboid>,
    no_progress: bool,
    // joint cost trajectory per level
    trajectories: Vec<Vec<f64>>,
}

fn joint_fit<R: Rng + ?Sized>(
    accepted: &[Accepted],
    new_scene: &Scene,
    new_init: Cuboid,
    config: &MultiRoomConfig,
    pipeline: &PipelineConfig,
    rng: &mut R,
) -> Result<JointFit, SceneError> {
    let (maps, dim) = index_maps(accepted.len(), config.shared);
    // rooms without any free coordinate only add a constant
    let mut participants: Vec<usize> = (0..accepted.len()).filter(|&r| maps[r].iter().any(Option::is_some)).collect();
    participants.push(accepted.len());
    let rooms: Vec<Room> = participants
        .iter()
        .map(|&r| Room {
            scene: if r < accepted.len() { accepted[r].scene.clone() } else { new_scene.clone() },
            index: maps[r],
        })
        .collect();
    let mut state: Vec<Cuboid> = participants
        .iter()
        .map(|&r| if r < accepted.len() { accepted[r].cuboid.clone() } else { new_init.clone() })
        .collect();
    let margin = pipeline.lm.containment_margin;
    let sync = config.shared.floor_ceiling && rooms.len() > 1;
    for (room, cub) in rooms.iter().zip(state.iter_mut()) {
        *cub = expand_to_contain(cub, &room.scene.cameras, margin);
    }
    if sync {
        sync_floor_ceiling(&mut state).ok_or(SceneError::Placement("floor/ceiling synchronization failed".into()))?;
    }
    let mut no_progress = true;
    let mut trajectories = Vec::new();
    for level in 0..pipeline.lm.levels {
        let samples = rooms
            .iter()
            .map(|room| draw_samples(&room.scene, level, &pipeline.cost, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let problem = JointProblem {
            rooms: &rooms,
            samples: &samples,
            level,
            cost: &pipeline.cost,
            margin,
            dim,
            sync_floor_ceiling: sync,
        };
        let out = lm_minimize_problem(&problem, state.clone(), &pipeline.lm);
        trajectories.push(out.trajectory);
        if !out.no_progress {
            state = out.state;
            no_progress = false;
        }
    }
    let mut cuboids: Vec<Cuboid> = accepted.iter().map(|a| a.cuboid.clone()).collect();
    cuboids.push(new_init);
    for (&r, cub) in participants.iter().zip(state) {
        cuboids[r] = cub;
    }
    Ok(JointFit { cuboids, no_progress, trajectories })
}

/// Run the sequential pipeline over the frames of `stream` in order.
fn max_pairwise_iou(rooms: &[Cuboid]) -> f64 {
    let mut max = 0.0f64;
    for (i, a) in rooms.iter().enumerate() {
        for b in &rooms[i + 1..] {
            max = max.max(iou3d(a, b));
        }
    }
    max
}

pub fn multiroom_run<R: Rng + ?Sized>(
    stream: &Scene,
    config: &MultiRoomConfig,
    pipeline: &PipelineConfig,
    rng: &mut R,
) -> Result<Layout, SceneError> {
    config.validate().map_err(SceneError::Placement)?;
    let mut accepted: Vec<Accepted> = Vec::new();
    let mut events = Vec::new();
    let mut buffer: Vec<usize> = Vec::new();
    let mut skipping = false;
    for frame in (0..stream.len()).step_by(config.subsample_factor) {
        if skipping {
            let last = &accepted.last().expect("skipping follows an acceptance").cuboid;
            if last.contains(&stream.cameras[frame].center(), 0.0) {
                events.push(RoomEvent::Skipped { frame });
                continue;
            }
            skipping = false;
        }
        buffer.push(frame);
        if buffer.len() < config.frames_per_room {
            continue;
        }
        let frames = std::mem::take(&mut buffer);
        let scene = stream.subset(&frames);
        let mut init = match (config.shared.orientation, accepted.first()) {
            (true, Some(first)) => fit_offsets(first.cuboid.rotation(), &scene.cameras, pipeline.init_margin)?,
            _ => initial_cuboid(&scene, pipeline, rng)?,
        };
        if let (true, Some(first)) = (config.shared.floor_ceiling, accepted.first()) {
            let mut o = *init.offsets();
            o[4] = first.cuboid.lo(2);
            o[5] = first.cuboid.hi(2);
            init = init.with_offsets(o)?;
        }
        let fit = joint_fit(&accepted, &scene, init, config, pipeline, rng)?;
        for (level, t) in fit.trajectories.iter().enumerate() {
            log::debug!("joint level {level}: cost {:.6} -> {:.6}", t[0], t[t.len() - 1]);
        }
        let (candidate, previous) = fit.cuboids.split_last().expect("candidate present");
        // refits move accepted rooms too, so every pair is checked
        let max_iou = max_pairwise_iou(&fit.cuboids);
        if fit.no_progress || max_iou > config.overlap_iou_max {
            log::info!("rejected room from frames {frames:?}: max IoU {max_iou:.4}, no progress {}", fit.no_progress);
            events.push(RoomEvent::Rejected { frames, max_iou, no_progress: fit.no_progress });
            continue;
        }
        for (a, c) in accepted.iter_mut().zip(previous) {
            a.cuboid = c.clone();
        }
        events.push(RoomEvent::Accepted { room: accepted.len(), frames: frames.clone() });
        accepted.push(Accepted { frames, scene, cuboid: candidate.clone() });
        skipping = true;
    }
    Ok(Layout {
        shared: config.shared,
        rooms: accepted.iter().map(|a| a.cuboid.clone()).collect(),
        room_frames: accepted.into_iter().map(|a| a.frames).collect(),
        events,
    })
}
