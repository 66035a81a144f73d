//! Road networks, synthetic cities and vehicle traces.

mod mapgen;
mod network;
mod trace;
mod traffic;

pub use mapgen::generate_map;
pub use network::{
    MapFile, MapNode, NodeId, RoadNetwork, SegmentNode, MAX_SEGMENT_LENGTH, POSITION_SNAP_TOLERANCE,
};
pub use trace::{load_routes, load_trace, save_routes, save_trace, TRACE_HEADER};
pub use traffic::{
    calibrate_density, generate_traffic, next_two_segment_nodes, simulate_traffic, RouteRecord,
    TraceFrame, Traffic, TrafficParams, VehicleId, VehicleState, SPEED_RANGE,
};
