//! Synthetic road-crossing scenes.
//!
//! A pedestrian walks toward the curb of a horizontal road while vehicles
//! drive left to right with piecewise-constant speeds. The crossing label is
//! decided at the decision frame `t_d` from the relation between pedestrian
//! and vehicles: the pedestrian crosses unless the nearest approaching vehicle
//! within `d_near` is moving at `v_yield` or faster.
//!
//! Positions, speeds and distances in [`ScenarioParams`] are in units of the
//! scene width (speeds per frame); stored boxes are pixels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BBox, PedestrianSequence, Trajectory};
use crate::numeric::{rng, Tensor};

pub const CHANNELS: usize = 3;
pub const CH_PEDESTRIAN: usize = 0;
pub const CH_VEHICLE: usize = 1;
pub const CH_ROAD: usize = 2;

// Scene layout as fractions of the frame height / width.
const ROAD_TOP: f64 = 0.62;
const ROAD_BOTTOM: f64 = 0.92;
const LANES: [f64; 2] = [0.70, 0.84];
const VEHICLE_W: f64 = 0.18;
const VEHICLE_H: f64 = 0.10;
const PED_W: f64 = 0.06;
const PED_H: f64 = 0.14;
const PED_X: (f64, f64) = (0.35, 0.85);
const MARGIN: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn sample(&self, r: &mut impl Rng) -> f64 {
        if self.max > self.min {
            r.gen_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub width: usize,
    pub height: usize,
    /// Frames per sequence.
    pub track_length: usize,
    pub event_frame_min: usize,
    pub event_frame_max: usize,
    pub fps: u32,
    pub num_vehicles_min: usize,
    pub num_vehicles_max: usize,
    /// Speed of a non-yielding vehicle (scene widths per frame).
    pub fast_speed: Range,
    /// Speed of a yielding vehicle after it brakes.
    pub yield_speed: Range,
    /// Vehicles slower than this are yielding.
    pub v_yield: f64,
    /// Interaction distance (scene widths).
    pub d_near: f64,
    pub p_cross: f64,
    /// Fraction of crossing scenes whose nearest vehicle yields (the rest
    /// have no vehicle within `d_near`).
    pub yield_share: f64,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            width: 48,
            height: 48,
            track_length: 90,
            event_frame_min: 78,
            event_frame_max: 88,
            fps: 30,
            num_vehicles_min: 1,
            num_vehicles_max: 3,
            fast_speed: Range { min: 0.005, max: 0.009 },
            yield_speed: Range { min: 0.0, max: 0.0015 },
            v_yield: 0.003,
            d_near: 0.25,
            p_cross: 0.5,
            yield_share: 0.5,
            seed: 0,
        }
    }
}

impl ScenarioParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.width == 0 || self.height == 0 {
            v.push("scenario.width/height: must be ≥ 1".into());
        }
        if self.event_frame_min > self.event_frame_max {
            v.push("scenario.event_frame_min: must not exceed event_frame_max".into());
        }
        if self.event_frame_max >= self.track_length {
            v.push(format!(
                "scenario.event_frame_max: {} must be < track_length {}",
                self.event_frame_max, self.track_length
            ));
        }
        if self.event_frame_min < 2 {
            v.push("scenario.event_frame_min: must be ≥ 2".into());
        }
        if self.num_vehicles_min > self.num_vehicles_max {
            v.push("scenario.num_vehicles_min: must not exceed num_vehicles_max".into());
        }
        if self.num_vehicles_max > 3 {
            v.push("scenario.num_vehicles_max: at most 3 vehicles are supported".into());
        }
        for (name, r) in [("fast_speed", self.fast_speed), ("yield_speed", self.yield_speed)] {
            if !(r.min < r.max) || r.min < 0.0 {
                v.push(format!("scenario.{name}: need 0 ≤ min < max, got [{}, {}]", r.min, r.max));
            }
        }
        if !(self.yield_speed.max < self.v_yield && self.v_yield < self.fast_speed.min) {
            v.push("scenario.v_yield: must lie strictly between yield_speed.max and fast_speed.min".into());
        }
        if !(self.d_near > 2.0 * MARGIN && self.d_near < 1.0) {
            v.push(format!("scenario.d_near: must be in ({}, 1), got {}", 2.0 * MARGIN, self.d_near));
        }
        if !(self.p_cross > 0.0 && self.p_cross < 1.0) {
            v.push(format!("scenario.p_cross: must be in (0, 1), got {}", self.p_cross));
        }
        if !(0.0..=1.0).contains(&self.yield_share) {
            v.push(format!("scenario.yield_share: must be in [0, 1], got {}", self.yield_share));
        }
        v
    }
}

/// Kinematic role assigned to a vehicle when the scene is designed.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Threat,
    Yielder,
    Passed,
    Far,
}

struct VehiclePlan {
    lane: usize,
    /// Center x at the decision frame (scene widths).
    x_decision: f64,
    /// Speed before the speed change.
    speed_before: f64,
    speed_after: f64,
    change_frame: usize,
}

impl VehiclePlan {
    fn x_at(&self, t: usize, t_d: usize) -> f64 {
        let (t, td, tc) = (t as f64, t_d as f64, self.change_frame as f64);
        if t >= tc {
            self.x_decision + self.speed_after * (t - td)
        } else {
            let x_change = self.x_decision + self.speed_after * (tc - td);
            x_change - self.speed_before * (tc - t)
        }
    }
}

fn plan_vehicle(role: Role, p: &ScenarioParams, ped_x: f64, t_d: usize, r: &mut impl Rng) -> VehiclePlan {
    let lane = r.gen_range(0..LANES.len());
    let change_frame = t_d.saturating_sub(r.gen_range(65..=95));
    let near = ped_x - r.gen_range(MARGIN..p.d_near - MARGIN);
    let cruise = p.fast_speed.sample(r);
    let (x_decision, speed_before, speed_after) = match role {
        Role::Threat => {
            let before = if r.gen_bool(0.5) { p.fast_speed.sample(r) } else { cruise };
            (near, before, cruise)
        }
        Role::Yielder => (near, cruise, p.yield_speed.sample(r)),
        Role::Passed => (ped_x + r.gen_range(0.02..0.6), cruise, cruise),
        Role::Far => (ped_x - p.d_near - r.gen_range(0.05..0.5), cruise, cruise),
    };
    VehiclePlan { lane, x_decision, speed_before, speed_after, change_frame }
}

/// The labelling rule, evaluated on stored pixel boxes at `event_frame`.
pub fn crossing_rule(
    pedestrian: &Trajectory,
    vehicles: &[Trajectory],
    event_frame: usize,
    width: usize,
    params: &ScenarioParams,
) -> bool {
    let w = width as f64;
    let ped_x = f64::from(pedestrian.boxes[event_frame].u) / w;
    let nearest = vehicles
        .iter()
        .filter_map(|v| {
            let x = f64::from(v.boxes[event_frame].u) / w;
            let gap = ped_x - x;
            (gap >= 0.0 && gap <= params.d_near).then_some((gap, v))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    match nearest {
        None => true,
        Some((_, v)) => {
            let now = f64::from(v.boxes[event_frame].u) / w;
            let before = f64::from(v.boxes[event_frame - 1].u) / w;
            (now - before).abs() < params.v_yield
        }
    }
}

fn paint(frame: &mut [f32], channel: usize, b: &BBox, width: usize, height: usize) {
    let (x0, x1) = (b.u - b.w / 2.0, b.u + b.w / 2.0);
    let (y0, y1) = (b.v - b.h / 2.0, b.v + b.h / 2.0);
    let plane = width * height;
    let px_lo = x0.floor().max(0.0) as usize;
    let px_hi = (x1.ceil().min(width as f32)).max(0.0) as usize;
    let py_lo = y0.floor().max(0.0) as usize;
    let py_hi = (y1.ceil().min(height as f32)).max(0.0) as usize;
    for py in py_lo..py_hi {
        for px in px_lo..px_hi {
            // any overlap between the pixel square and the box
            if (px as f32) < x1 && (px as f32 + 1.0) > x0 && (py as f32) < y1 && (py as f32 + 1.0) > y0 {
                frame[channel * plane + py * width + px] = 1.0;
            }
        }
    }
}

/// Render `[T, 3, H, W]` masks from boxes.
pub fn render(
    pedestrian: &Trajectory,
    vehicles: &[Trajectory],
    width: usize,
    height: usize,
) -> Tensor<f32> {
    let t_len = pedestrian.boxes.len();
    let frame_len = CHANNELS * width * height;
    let mut data = vec![0.0f32; t_len * frame_len];
    let road_top = (ROAD_TOP * height as f64).round() as usize;
    let road_bottom = ((ROAD_BOTTOM * height as f64).round() as usize).clamp(road_top + 1, height.max(road_top + 1));
    for (t, frame) in data.chunks_exact_mut(frame_len).enumerate() {
        let plane = width * height;
        for y in road_top.min(height)..road_bottom.min(height) {
            frame[CH_ROAD * plane + y * width..CH_ROAD * plane + (y + 1) * width].fill(1.0);
        }
        for v in vehicles {
            paint(frame, CH_VEHICLE, &v.boxes[t], width, height);
        }
        paint(frame, CH_PEDESTRIAN, &pedestrian.boxes[t], width, height);
    }
    Tensor::new(vec![t_len, CHANNELS, height, width], data).expect("render shape")
}

/// Deterministic in `(params.seed, index)`.
pub fn generate_scenario(params: &ScenarioParams, index: u64) -> PedestrianSequence {
    let mut r = rng::stream(params.seed, &format!("scenario.{index}"));
    let (wf, hf) = (params.width as f64, params.height as f64);
    let t_len = params.track_length;
    let t_d = r.gen_range(params.event_frame_min..=params.event_frame_max);

    let n_vehicles = r.gen_range(params.num_vehicles_min..=params.num_vehicles_max);
    let crossing_design = r.gen_bool(params.p_cross);
    let ped_x = r.gen_range(PED_X.0..PED_X.1);

    let lead = match (n_vehicles, crossing_design) {
        (0, _) => None,
        (_, false) => Some(Role::Threat),
        (_, true) => r.gen_bool(params.yield_share).then_some(Role::Yielder),
    };
    let mut plans = Vec::with_capacity(n_vehicles);
    for i in 0..n_vehicles {
        let role = match (i, lead) {
            (0, Some(role)) => role,
            _ => {
                if r.gen_bool(0.5) {
                    Role::Passed
                } else {
                    Role::Far
                }
            }
        };
        plans.push(plan_vehicle(role, params, ped_x, t_d, &mut r));
    }

    // Pedestrian: walk from the top area to the curb, wait, then cross or stay.
    let ped_w = PED_W * wf;
    let ped_h = PED_H * hf;
    let wait_y = ROAD_TOP * hf - ped_h / 2.0;
    let start_y = r.gen_range(0.12..0.30) * hf;
    let arrive = t_d.saturating_sub(r.gen_range(5..=40)).max(1);
    let drift = r.gen_range(-0.0008..0.0008) * wf;
    let cross_speed = 0.01 * hf;
    let mut ped_boxes = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let y = if t < arrive {
            start_y + (wait_y - start_y) * t as f64 / arrive as f64
        } else {
            wait_y
        };
        let y = if t > t_d && crossing_design { wait_y + cross_speed * (t - t_d) as f64 } else { y };
        let x = ped_x * wf + drift * (t as f64 - t_d as f64);
        ped_boxes.push(BBox { u: x as f32, v: y as f32, w: ped_w as f32, h: ped_h as f32 });
    }
    let pedestrian = Trajectory { boxes: ped_boxes };

    let vehicles: Vec<Trajectory> = plans
        .iter()
        .map(|plan| Trajectory {
            boxes: (0..t_len)
                .map(|t| BBox {
                    u: (plan.x_at(t, t_d) * wf) as f32,
                    v: (LANES[plan.lane] * hf) as f32,
                    w: (VEHICLE_W * wf) as f32,
                    h: (VEHICLE_H * hf) as f32,
                })
                .collect(),
        })
        .collect();

    let crossing = crossing_rule(&pedestrian, &vehicles, t_d, params.width, params);
    let frames = render(&pedestrian, &vehicles, params.width, params.height);
    PedestrianSequence {
        id: format!("ped_{:020}_{index:06}", params.seed),
        frames,
        trajectory: pedestrian,
        vehicles,
        crossing,
        event_frame: t_d,
        fps: params.fps,
    }
}

/// `count` sequences with indices `0..count`.
pub fn generate_dataset(params: &ScenarioParams, count: usize) -> Vec<PedestrianSequence> {
    (0..count as u64).map(|i| generate_scenario(params, i)).collect()
}
