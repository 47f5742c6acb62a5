//! Fixed-point 2D/3D primitives and the polygon plumbing the pipeline consumes:
//! mesh slicing, polygon offsetting and polyline clipping.

mod clip;
mod mesh;
mod offset;
mod point;
mod polygon;

pub use clip::{clip_polyline_to_area, Polyline};
pub use mesh::{
    load_layer_json, parse_layer_json, slice_mesh, slice_mesh_with_tolerance, LayerPolygonsJson, TriangleMesh,
    DEFAULT_STITCH_TOLERANCE_MM,
};
pub use offset::{difference_polygons, offset_polygons};
pub use point::{
    mm_to_units, point_segment_distance, segment_distance, segments_intersect, units_to_mm, Point2, Point3, Vec2,
    UNITS_PER_MM,
};
pub use polygon::{closed_length_mm, open_length_mm, point_in_polygon, Containment, Polygon, PolygonSet};
