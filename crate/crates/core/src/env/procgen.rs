use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::layout::{Door, LayoutConstraints, LayoutSpec, Obstacle};
use super::world::{OccupancyGrid, World};
use crate::geometry::{Pose2D, Rect, Segment, Vec2};
use crate::rng::CounterRng;

/// Cell size of the connectivity flood fill.
pub const FLOOD_FILL_CELL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: PartialOrd + Copy> Range<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub fn is_valid(&self) -> bool {
        self.lo <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartHeading {
    Random,
    FaceGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub room_count_range: Range<u32>,
    /// Side length of each grid room.
    pub room_size_range: Range<f64>,
    pub door_width_range: Range<f64>,
    pub obstacle_count_range: Range<u32>,
    /// Box side length or cylinder diameter.
    pub obstacle_size_range: Range<f64>,
    pub min_start_goal_distance: f64,
    pub clearance: f64,
    /// Disc radius used by the connectivity flood fill.
    pub passage_radius: f64,
    /// Probability that a non-tree pair of adjacent rooms gets an extra door.
    pub extra_door_prob: f64,
    /// Probability of placing one obstacle astride the start-goal segment.
    pub blocking_obstacle_prob: f64,
    pub blocking_size_range: Range<f64>,
    pub start_heading: StartHeading,
    pub max_attempts: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            room_count_range: Range::new(1, 4),
            room_size_range: Range::new(3.0, 5.0),
            door_width_range: Range::new(0.8, 1.2),
            obstacle_count_range: Range::new(0, 5),
            obstacle_size_range: Range::new(0.2, 0.8),
            min_start_goal_distance: 2.0,
            clearance: 0.4,
            passage_radius: 0.15,
            extra_door_prob: 0.3,
            blocking_obstacle_prob: 0.0,
            blocking_size_range: Range::new(0.5, 0.9),
            start_heading: StartHeading::Random,
            max_attempts: 1000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.room_count_range.is_valid()
            && self.room_count_range.lo >= 1
            && self.room_size_range.is_valid()
            && self.room_size_range.lo > 0.0
            && self.door_width_range.is_valid()
            && self.door_width_range.lo > 0.0
            && self.obstacle_count_range.is_valid()
            && self.obstacle_size_range.is_valid()
            && self.obstacle_size_range.lo > 0.0
            && self.blocking_size_range.is_valid()
            && self.blocking_size_range.lo > 0.0
            && self.min_start_goal_distance >= 0.0
            && self.clearance >= 0.0
            && self.passage_radius >= 0.0
            && (0.0..=1.0).contains(&self.extra_door_prob)
            && (0.0..=1.0).contains(&self.blocking_obstacle_prob)
            && self.max_attempts >= 1;
        if ok {
            Ok(())
        } else {
            Err(EnvError::InvalidConfig)
        }
    }

    fn constraints(&self) -> LayoutConstraints {
        LayoutConstraints {
            min_start_goal_distance: self.min_start_goal_distance,
            clearance: self.clearance,
            passage_radius: self.passage_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("generation failed for seed {seed} while placing {stage}")]
    GenerationFailed { seed: u64, stage: &'static str },
    #[error("invalid generator configuration")]
    InvalidConfig,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

const STREAM_ROOMS: u64 = 1;
const STREAM_ENDPOINTS: u64 = 2;
const STREAM_OBSTACLES: u64 = 3;

/// Generates a layout; a pure function of `(config, seed)`.
pub fn generate_layout(config: &GenConfig, seed: u64) -> Result<LayoutSpec, EnvError> {
    config.validate()?;
    let root = CounterRng::new(seed);
    let (rooms, doors) = generate_rooms(config, &mut root.split(STREAM_ROOMS));

    let mut layout = LayoutSpec {
        seed,
        rooms,
        doors,
        obstacles: Vec::new(),
        start_pose: Pose2D::default(),
        goal_position: Vec2::ZERO,
        constraints: config.constraints(),
    };

    let mut rng = root.split(STREAM_ENDPOINTS);
    let mut placed = false;
    for _ in 0..config.max_attempts {
        let s = sample_in_rooms(&layout.rooms, config.clearance, &mut rng);
        let g = sample_in_rooms(&layout.rooms, config.clearance, &mut rng);
        let heading = rng.uniform(-PI, PI);
        let (Some(s), Some(g)) = (s, g) else { continue };
        if s.distance(g) < config.min_start_goal_distance {
            continue;
        }
        let theta = match config.start_heading {
            StartHeading::Random => heading,
            StartHeading::FaceGoal => libm::atan2(g.y - s.y, g.x - s.x),
        };
        layout.start_pose = Pose2D::new(s.x, s.y, theta);
        layout.goal_position = g;
        placed = true;
        break;
    }
    if !placed {
        return Err(EnvError::GenerationFailed { seed, stage: "start/goal" });
    }

    let mut rng = root.split(STREAM_OBSTACLES);
    if rng.bernoulli(config.blocking_obstacle_prob) {
        let s = layout.start_pose.position();
        let g = layout.goal_position;
        let ok = place_obstacle(&mut layout, config, &mut rng, |rng, _rooms| {
            let t = rng.uniform(0.4, 0.6);
            let size = rng.uniform(config.blocking_size_range.lo, config.blocking_size_range.hi);
            let center = s + (g - s) * t;
            Some(if rng.bernoulli(0.5) {
                Obstacle::Cylinder { center, radius: size * 0.5 }
            } else {
                Obstacle::Box { center, half_extents: Vec2::new(size * 0.5, size * 0.5) }
            })
        });
        if !ok {
            return Err(EnvError::GenerationFailed { seed, stage: "blocking obstacle" });
        }
    }
    let count = rng.range_inclusive(config.obstacle_count_range.lo as u64, config.obstacle_count_range.hi as u64);
    for _ in 0..count {
        let ok = place_obstacle(&mut layout, config, &mut rng, |rng, rooms| {
            let room = rooms[rng.below(rooms.len())];
            let size_a = rng.uniform(config.obstacle_size_range.lo, config.obstacle_size_range.hi);
            let size_b = rng.uniform(config.obstacle_size_range.lo, config.obstacle_size_range.hi);
            let cylinder = rng.bernoulli(0.5);
            let half = if cylinder { Vec2::new(size_a * 0.5, size_a * 0.5) } else { Vec2::new(size_a * 0.5, size_b * 0.5) };
            let cx = rng.uniform(room.min.x + half.x, room.max.x - half.x);
            let cy = rng.uniform(room.min.y + half.y, room.max.y - half.y);
            if room.width() < 2.0 * half.x || room.height() < 2.0 * half.y {
                return None;
            }
            let center = Vec2::new(cx, cy);
            Some(if cylinder {
                Obstacle::Cylinder { center, radius: half.x }
            } else {
                Obstacle::Box { center, half_extents: half }
            })
        });
        if !ok {
            return Err(EnvError::GenerationFailed { seed, stage: "obstacle" });
        }
    }
    Ok(layout)
}

/// Rejection-samples one obstacle from `propose`; keeps it only if it stays inside a
/// room, leaves the start and goal discs free, and keeps the goal reachable.
fn place_obstacle(
    layout: &mut LayoutSpec,
    config: &GenConfig,
    rng: &mut CounterRng,
    mut propose: impl FnMut(&mut CounterRng, &[Rect]) -> Option<Obstacle>,
) -> bool {
    let rooms = layout.rooms.clone();
    for _ in 0..config.max_attempts {
        let Some(candidate) = propose(rng, &rooms) else { continue };
        let b = candidate.bounds();
        if !rooms.iter().any(|r| r.contains(b.min) && r.contains(b.max)) {
            continue;
        }
        if candidate.distance(layout.start_pose.position()) < config.clearance
            || candidate.distance(layout.goal_position) < config.clearance
        {
            continue;
        }
        layout.obstacles.push(candidate);
        let world = World::new(layout);
        let grid = OccupancyGrid::build(&world, FLOOD_FILL_CELL, config.passage_radius);
        if grid.connected(layout.start_pose.position(), layout.goal_position) {
            return true;
        }
        layout.obstacles.pop();
    }
    false
}

fn sample_in_rooms(rooms: &[Rect], margin: f64, rng: &mut CounterRng) -> Option<Vec2> {
    let room = rooms[rng.below(rooms.len())];
    let x = rng.uniform(room.min.x + margin, room.max.x - margin);
    let y = rng.uniform(room.min.y + margin, room.max.y - margin);
    if room.width() < 2.0 * margin || room.height() < 2.0 * margin {
        return None;
    }
    Some(Vec2::new(x, y))
}

/// Grows a connected set of grid cells; each growth step adds a door to its parent.
fn generate_rooms(config: &GenConfig, rng: &mut CounterRng) -> (Vec<Rect>, Vec<Door>) {
    const DIRS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    let n = rng.range_inclusive(config.room_count_range.lo as u64, config.room_count_range.hi as u64) as usize;
    let mut cells: Vec<(i32, i32)> = alloc::vec![(0, 0)];
    let mut index: BTreeMap<(i32, i32), usize> = BTreeMap::new();
    index.insert((0, 0), 0);
    let mut connected: BTreeSet<(usize, usize)> = BTreeSet::new();
    while cells.len() < n {
        let mut frontier = Vec::new();
        for (i, &(cx, cy)) in cells.iter().enumerate() {
            for (dx, dy) in DIRS {
                let nb = (cx + dx, cy + dy);
                if !index.contains_key(&nb) {
                    frontier.push((i, nb));
                }
            }
        }
        let (parent, nb) = frontier[rng.below(frontier.len())];
        let id = cells.len();
        cells.push(nb);
        index.insert(nb, id);
        connected.insert((parent.min(id), parent.max(id)));
    }
    // extra doors between adjacent rooms not joined by the growth tree
    for (i, &(cx, cy)) in cells.iter().enumerate() {
        for (dx, dy) in [(1, 0), (0, 1)] {
            if let Some(&j) = index.get(&(cx + dx, cy + dy)) {
                let key = (i.min(j), i.max(j));
                let roll = rng.bernoulli(config.extra_door_prob);
                if !connected.contains(&key) && roll {
                    connected.insert(key);
                }
            }
        }
    }

    let min_x = cells.iter().map(|c| c.0).min().unwrap_or(0);
    let max_x = cells.iter().map(|c| c.0).max().unwrap_or(0);
    let min_y = cells.iter().map(|c| c.1).min().unwrap_or(0);
    let max_y = cells.iter().map(|c| c.1).max().unwrap_or(0);
    let mut xs = alloc::vec![0.0];
    for _ in min_x..=max_x {
        let w = rng.uniform(config.room_size_range.lo, config.room_size_range.hi);
        let last = *xs.last().unwrap_or(&0.0);
        xs.push(last + w);
    }
    let mut ys = alloc::vec![0.0];
    for _ in min_y..=max_y {
        let h = rng.uniform(config.room_size_range.lo, config.room_size_range.hi);
        let last = *ys.last().unwrap_or(&0.0);
        ys.push(last + h);
    }
    let rect_of = |(cx, cy): (i32, i32)| {
        let ix = (cx - min_x) as usize;
        let iy = (cy - min_y) as usize;
        Rect::new(Vec2::new(xs[ix], ys[iy]), Vec2::new(xs[ix + 1], ys[iy + 1]))
    };
    let rooms: Vec<Rect> = cells.iter().map(|&c| rect_of(c)).collect();

    let mut doors = Vec::new();
    for &(a, b) in &connected {
        let (ra, rb) = (rooms[a], rooms[b]);
        let width = rng.uniform(config.door_width_range.lo, config.door_width_range.hi);
        let gap = if (ra.max.x - rb.min.x).abs() < 1e-9 || (rb.max.x - ra.min.x).abs() < 1e-9 {
            let x = if (ra.max.x - rb.min.x).abs() < 1e-9 { ra.max.x } else { ra.min.x };
            let lo = ra.min.y.max(rb.min.y);
            let hi = ra.max.y.min(rb.max.y);
            let w = width.min(hi - lo - 0.2).max(0.0);
            let mid = 0.5 * (lo + hi);
            Segment::new(Vec2::new(x, mid - 0.5 * w), Vec2::new(x, mid + 0.5 * w))
        } else {
            let y = if (ra.max.y - rb.min.y).abs() < 1e-9 { ra.max.y } else { ra.min.y };
            let lo = ra.min.x.max(rb.min.x);
            let hi = ra.max.x.min(rb.max.x);
            let w = width.min(hi - lo - 0.2).max(0.0);
            let mid = 0.5 * (lo + hi);
            Segment::new(Vec2::new(mid - 0.5 * w, y), Vec2::new(mid + 0.5 * w, y))
        };
        doors.push(Door { rooms: [a, b], gap });
    }
    (rooms, doors)
}

/// Layouts for seeds `seed..seed + n`.
pub fn sample_eval_suite(config: &GenConfig, n: usize, seed: u64) -> Result<Vec<LayoutSpec>, EnvError> {
    if n == 0 {
        return Err(EnvError::InvalidArgument("suite size must be at least 1"));
    }
    (0..n as u64).map(|i| generate_layout(config, seed.wrapping_add(i))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoRooms,
    NonFinite,
    DegenerateRoom { room: usize },
    RoomOverlap { a: usize, b: usize },
    InvalidDoor { door: usize },
    RoomsDisconnected,
    DegenerateObstacle { obstacle: usize },
    ObstacleOutsideRooms { obstacle: usize },
    StartOutsideRooms,
    GoalOutsideRooms,
    StartBlocked { obstacle: usize },
    GoalBlocked { obstacle: usize },
    StartGoalTooClose { distance: f64 },
    GoalUnreachable,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }

    pub fn describe(&self) -> String {
        serde_json::to_string(&self.violations).unwrap_or_default()
    }
}

/// Checks every layout invariant and lists each violation found.
pub fn validate_layout(layout: &LayoutSpec) -> ValidationReport {
    let mut v = Vec::new();
    let c = layout.constraints;
    if layout.rooms.is_empty() {
        v.push(Violation::NoRooms);
        return ValidationReport { violations: v };
    }
    let finite = layout.rooms.iter().all(|r| r.min.is_finite() && r.max.is_finite())
        && layout.obstacles.iter().all(Obstacle::is_finite)
        && layout.start_pose.is_finite()
        && layout.goal_position.is_finite();
    if !finite {
        v.push(Violation::NonFinite);
        return ValidationReport { violations: v };
    }
    for (i, r) in layout.rooms.iter().enumerate() {
        if r.width() <= 0.0 || r.height() <= 0.0 {
            v.push(Violation::DegenerateRoom { room: i });
        }
    }
    for i in 0..layout.rooms.len() {
        for j in i + 1..layout.rooms.len() {
            if layout.rooms[i].interiors_overlap(&layout.rooms[j], 1e-9) {
                v.push(Violation::RoomOverlap { a: i, b: j });
            }
        }
    }
    for (k, d) in layout.doors.iter().enumerate() {
        if !door_is_valid(layout, d) {
            v.push(Violation::InvalidDoor { door: k });
        }
    }
    if !rooms_connected(layout) {
        v.push(Violation::RoomsDisconnected);
    }
    for (i, o) in layout.obstacles.iter().enumerate() {
        if !o.has_positive_extent() {
            v.push(Violation::DegenerateObstacle { obstacle: i });
        }
        let b = o.bounds();
        if !layout.rooms.iter().any(|r| r.contains(b.min) && r.contains(b.max)) {
            v.push(Violation::ObstacleOutsideRooms { obstacle: i });
        }
    }
    let start = layout.start_pose.position();
    let goal = layout.goal_position;
    if layout.room_containing(start).is_none() {
        v.push(Violation::StartOutsideRooms);
    }
    if layout.room_containing(goal).is_none() {
        v.push(Violation::GoalOutsideRooms);
    }
    for (i, o) in layout.obstacles.iter().enumerate() {
        if o.distance(start) < c.clearance {
            v.push(Violation::StartBlocked { obstacle: i });
        }
        if o.distance(goal) < c.clearance {
            v.push(Violation::GoalBlocked { obstacle: i });
        }
    }
    let d = start.distance(goal);
    if d < c.min_start_goal_distance {
        v.push(Violation::StartGoalTooClose { distance: d });
    }
    let world = World::new(layout);
    let grid = OccupancyGrid::build(&world, FLOOD_FILL_CELL, c.passage_radius);
    if !grid.connected(start, goal) {
        v.push(Violation::GoalUnreachable);
    }
    ValidationReport { violations: v }
}

fn door_is_valid(layout: &LayoutSpec, d: &Door) -> bool {
    let [a, b] = d.rooms;
    if a >= layout.rooms.len() || b >= layout.rooms.len() || a == b {
        return false;
    }
    let (ra, rb) = (layout.rooms[a], layout.rooms[b]);
    let on_both = |p: Vec2| on_boundary(&ra, p) && on_boundary(&rb, p);
    d.gap.length() > 0.0 && on_both(d.gap.a) && on_both(d.gap.b)
}

fn on_boundary(r: &Rect, p: Vec2) -> bool {
    const EPS: f64 = 1e-9;
    let in_x = p.x >= r.min.x - EPS && p.x <= r.max.x + EPS;
    let in_y = p.y >= r.min.y - EPS && p.y <= r.max.y + EPS;
    ((p.x - r.min.x).abs() < EPS || (p.x - r.max.x).abs() < EPS) && in_y
        || ((p.y - r.min.y).abs() < EPS || (p.y - r.max.y).abs() < EPS) && in_x
}

fn rooms_connected(layout: &LayoutSpec) -> bool {
    let n = layout.rooms.len();
    let mut seen = alloc::vec![false; n];
    let mut stack = alloc::vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for d in &layout.doors {
            let [a, b] = d.rooms;
            if a >= n || b >= n {
                continue;
            }
            let other = if a == i {
                b
            } else if b == i {
                a
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    seen.iter().all(|s| *s)
}
