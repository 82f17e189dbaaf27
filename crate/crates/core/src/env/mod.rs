//! Procedural indoor layouts: rooms on a grid joined by doors, box and cylinder
//! obstacles, and a start/goal pair.

mod layout;
mod procgen;
mod world;

pub use layout::{
    byte_offset, layout_from_json, layout_roundtrip, layout_to_json, Door, LayoutConstraints, LayoutParseError,
    LayoutSpec, Obstacle, LAYOUT_FORMAT_VERSION,
};
pub use procgen::{
    generate_layout, sample_eval_suite, validate_layout, EnvError, GenConfig, Range, StartHeading, ValidationReport,
    Violation, FLOOD_FILL_CELL,
};
pub use world::{OccupancyGrid, World};
