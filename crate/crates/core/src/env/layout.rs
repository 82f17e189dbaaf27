use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2D, Rect, Segment, Vec2};

/// Obstacle footprint. Obstacles are treated as infinitely tall: they always block rays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    Box { center: Vec2, half_extents: Vec2 },
    Cylinder { center: Vec2, radius: f64 },
}

impl Obstacle {
    pub fn center(&self) -> Vec2 {
        match *self {
            Obstacle::Box { center, .. } | Obstacle::Cylinder { center, .. } => center,
        }
    }

    pub fn bounds(&self) -> Rect {
        match *self {
            Obstacle::Box { center, half_extents } => Rect::new(center - half_extents, center + half_extents),
            Obstacle::Cylinder { center, radius } => {
                let r = Vec2::new(radius, radius);
                Rect::new(center - r, center + r)
            }
        }
    }

    /// Distance from `p` to the obstacle surface; zero when inside.
    pub fn distance(&self, p: Vec2) -> f64 {
        match *self {
            Obstacle::Box { .. } => self.bounds().distance(p),
            Obstacle::Cylinder { center, radius } => (p.distance(center) - radius).max(0.0),
        }
    }

    pub fn has_positive_extent(&self) -> bool {
        match *self {
            Obstacle::Box { half_extents, .. } => half_extents.x > 0.0 && half_extents.y > 0.0,
            Obstacle::Cylinder { radius, .. } => radius > 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        match *self {
            Obstacle::Box { center, half_extents } => center.is_finite() && half_extents.is_finite(),
            Obstacle::Cylinder { center, radius } => center.is_finite() && radius.is_finite(),
        }
    }
}

/// Gap in the wall shared by two rooms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub rooms: [usize; 2],
    pub gap: Segment,
}

/// Constraints a layout was generated against; carried so a layout file is
/// self-validating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutConstraints {
    pub min_start_goal_distance: f64,
    pub clearance: f64,
    pub passage_radius: f64,
}

impl Default for LayoutConstraints {
    fn default() -> Self {
        Self { min_start_goal_distance: 2.0, clearance: 0.4, passage_radius: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub seed: u64,
    pub rooms: Vec<Rect>,
    pub doors: Vec<Door>,
    pub obstacles: Vec<Obstacle>,
    pub start_pose: Pose2D,
    pub goal_position: Vec2,
    #[serde(default)]
    pub constraints: LayoutConstraints,
}

impl LayoutSpec {
    pub fn start_goal_distance(&self) -> f64 {
        self.start_pose.position().distance(self.goal_position)
    }

    pub fn bounds(&self) -> Rect {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for r in &self.rooms {
            min = Vec2::new(min.x.min(r.min.x), min.y.min(r.min.y));
            max = Vec2::new(max.x.max(r.max.x), max.y.max(r.max.y));
        }
        Rect::new(min, max)
    }

    pub fn room_containing(&self, p: Vec2) -> Option<usize> {
        self.rooms.iter().position(|r| r.contains(p))
    }

    /// Wall segments: room edges with shared portions emitted once and door gaps removed.
    pub fn walls(&self) -> Vec<Segment> {
        const EPS: f64 = 1e-9;
        let mut out = Vec::new();
        for (i, room) in self.rooms.iter().enumerate() {
            // (fixed coordinate, vertical?, lo, hi)
            let edges = [
                (room.min.x, true, room.min.y, room.max.y),
                (room.max.x, true, room.min.y, room.max.y),
                (room.min.y, false, room.min.x, room.max.x),
                (room.max.y, false, room.min.x, room.max.x),
            ];
            for (c, vertical, lo, hi) in edges {
                let mut intervals: Vec<(f64, f64)> = alloc::vec![(lo, hi)];
                // portions already emitted by lower-index rooms sharing this line
                for other in &self.rooms[..i] {
                    let (oc_a, oc_b, olo, ohi) = if vertical {
                        (other.min.x, other.max.x, other.min.y, other.max.y)
                    } else {
                        (other.min.y, other.max.y, other.min.x, other.max.x)
                    };
                    if (oc_a - c).abs() < EPS || (oc_b - c).abs() < EPS {
                        subtract(&mut intervals, olo, ohi);
                    }
                }
                for door in &self.doors {
                    let (a, b) = (door.gap.a, door.gap.b);
                    let on_line = if vertical {
                        (a.x - c).abs() < EPS && (b.x - c).abs() < EPS
                    } else {
                        (a.y - c).abs() < EPS && (b.y - c).abs() < EPS
                    };
                    if on_line {
                        let (p, q) = if vertical { (a.y, b.y) } else { (a.x, b.x) };
                        subtract(&mut intervals, p.min(q), p.max(q));
                    }
                }
                for (s, e) in intervals {
                    if e - s > EPS {
                        out.push(if vertical {
                            Segment::new(Vec2::new(c, s), Vec2::new(c, e))
                        } else {
                            Segment::new(Vec2::new(s, c), Vec2::new(e, c))
                        });
                    }
                }
            }
        }
        out
    }
}

fn subtract(intervals: &mut Vec<(f64, f64)>, lo: f64, hi: f64) {
    let mut next = Vec::with_capacity(intervals.len() + 1);
    for &(s, e) in intervals.iter() {
        if hi <= s || lo >= e {
            next.push((s, e));
            continue;
        }
        if lo > s {
            next.push((s, lo));
        }
        if hi < e {
            next.push((hi, e));
        }
    }
    *intervals = next;
}

pub const LAYOUT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayoutFile {
    format_version: u32,
    #[serde(flatten)]
    layout: LayoutSpec,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayoutParseError {
    #[error("malformed layout document at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unsupported layout format_version {0}")]
    UnsupportedVersion(u32),
}

/// Serializes a layout as a versioned JSON document.
pub fn layout_to_json(layout: &LayoutSpec) -> String {
    let file = LayoutFile { format_version: LAYOUT_FORMAT_VERSION, layout: layout.clone() };
    serde_json::to_string_pretty(&file).expect("layout serialization is infallible")
}

pub fn layout_from_json(text: &str) -> Result<LayoutSpec, LayoutParseError> {
    let file: LayoutFile = serde_json::from_str(text)
        .map_err(|e| LayoutParseError::Malformed { offset: byte_offset(text, e.line(), e.column()), message: alloc::format!("{e}") })?;
    if file.format_version != LAYOUT_FORMAT_VERSION {
        return Err(LayoutParseError::UnsupportedVersion(file.format_version));
    }
    Ok(file.layout)
}

/// Converts serde_json's 1-based (line, column) into a byte offset.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

/// Round trip through the on-disk representation.
pub fn layout_roundtrip(layout: &LayoutSpec) -> Result<LayoutSpec, LayoutParseError> {
    layout_from_json(&layout_to_json(layout))
}
