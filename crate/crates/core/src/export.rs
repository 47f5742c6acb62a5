//! G-code, per-layer SVG and run statistics.

use crate::error::{Error, Result};
use crate::geometry::Polyline;
use crate::infill_fit::LayerPlan;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Print settings that reach the output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrintProfile {
    /// Extrusion line width in mm.
    pub line_width: f64,
    pub layer_height: f64,
    /// Print speed in mm/s.
    pub speed: f64,
    pub filament_diameter: f64,
    /// Slice height of the first layer. Layers are sliced through their middle.
    pub first_layer_z: f64,
}

impl Default for PrintProfile {
    fn default() -> Self {
        Self { line_width: 0.38, layer_height: 0.1, speed: 25.0, filament_diameter: 2.85, first_layer_z: 0.05 }
    }
}

impl PrintProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("line_width", self.line_width),
            ("layer_height", self.layer_height),
            ("speed", self.speed),
            ("filament_diameter", self.filament_diameter),
            ("first_layer_z", self.first_layer_z),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Filament length fed per mm of path.
    pub fn filament_per_mm(&self) -> f64 {
        let r = 0.5 * self.filament_diameter;
        self.line_width * self.layer_height / (std::f64::consts::PI * r * r)
    }

    /// Deposited volume per mm of path.
    pub fn volume_per_mm(&self) -> f64 {
        self.line_width * self.layer_height
    }
}

/// Text placed before the first and after the last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcodeTemplates {
    pub header: String,
    pub footer: String,
}

impl Default for GcodeTemplates {
    fn default() -> Self {
        Self {
            header: "; crossfill\nG21 ; mm\nG90 ; absolute positioning\nM82 ; absolute extrusion\nG92 E0\n".into(),
            footer: "M107\nM84 ; motors off\n".into(),
        }
    }
}

/// Marlin-style G-code: a travel to the start of every toolpath, then one `G1` per segment with
/// absolute `E`. Closed toolpaths return to their first point. The nozzle sits at the top of each
/// layer, half a layer above its slice height.
pub fn emit_gcode(plans: &[LayerPlan], profile: &PrintProfile, templates: &GcodeTemplates) -> String {
    let mut out = String::new();
    out.push_str(&templates.header);
    let feed = profile.speed * 60.0;
    let per_mm = profile.filament_per_mm();
    let mut e = 0.0;
    for (i, plan) in plans.iter().enumerate() {
        let _ = writeln!(out, ";LAYER:{i}");
        for path in &plan.toolpaths {
            let pts: Vec<_> = path.points.iter().map(|p| p.to_vec()).collect();
            let Some(&first) = pts.first() else { continue };
            let _ = writeln!(out, "G0 X{:.3} Y{:.3} Z{:.3}", first.x, first.y, plan.z + 0.5 * profile.layer_height);
            let mut prev = first;
            let closing = if path.closed && pts.len() > 2 { Some(first) } else { None };
            for &p in pts.iter().skip(1).chain(closing.iter()) {
                e += prev.dist(p) * per_mm;
                let _ = writeln!(out, "G1 X{:.3} Y{:.3} E{:.5} F{:.0}", p.x, p.y, e, feed);
                prev = p;
            }
        }
    }
    out.push_str(&templates.footer);
    out
}

/// One parsed `G0`/`G1` move with the machine state after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcodeMove {
    pub extrude: bool,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub e: f64,
}

/// Reads back the moves of absolute-coordinate G-code. Unknown lines are skipped.
pub fn parse_moves(text: &str) -> Vec<GcodeMove> {
    let mut state = GcodeMove { extrude: false, x: 0.0, y: 0.0, z: 0.0, e: 0.0 };
    let mut moves = Vec::new();
    for line in text.lines() {
        let code = line.split(';').next().unwrap_or("").trim();
        let mut words = code.split_whitespace();
        let extrude = match words.next() {
            Some("G0") => false,
            Some("G1") => true,
            _ => continue,
        };
        state.extrude = extrude;
        for wd in words {
            let (k, v) = wd.split_at(1);
            let Ok(v) = v.parse::<f64>() else { continue };
            match k {
                "X" => state.x = v,
                "Y" => state.y = v,
                "Z" => state.z = v,
                "E" => state.e = v,
                _ => {}
            }
        }
        moves.push(state);
    }
    moves
}

/// A square of the local-error overlay, value in `[0, 1]` mapped to opacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatTile {
    pub x: f64,
    pub y: f64,
    pub size: f64,
    pub value: f64,
}

const OUTER_WALL: &str = "#d62728";
const INNER_WALL: &str = "#ff7f0e";
const TOOLPATH: &str = "#000000";

fn svg_path(out: &mut String, line: &Polyline, color: &str, stroke: f64) {
    let mut d = String::new();
    for (k, p) in line.points.iter().enumerate() {
        let v = p.to_vec();
        let _ = write!(d, "{}{:.3} {:.3} ", if k == 0 { "M" } else { "L" }, v.x, v.y);
    }
    if line.closed {
        if let Some(p) = line.points.first() {
            let v = p.to_vec();
            let _ = write!(d, "L{:.3} {:.3}", v.x, v.y);
        }
    }
    let _ = writeln!(
        out,
        r#"<path d="{}" fill="none" stroke="{color}" stroke-width="{stroke}" stroke-linecap="round" stroke-linejoin="round"/>"#,
        d.trim_end()
    );
}

/// Layer drawing: walls underneath (outer red, inner orange), toolpaths in black on top, and an
/// optional heat overlay. Drawn in model millimeters with y up.
pub fn emit_svg(plan: &LayerPlan, stroke: f64, heat: Option<&[HeatTile]>) -> String {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let all = plan
        .toolpaths
        .iter()
        .flat_map(|t| t.points.iter())
        .chain(plan.walls.iter().flat_map(|s| s.polygons.iter().flat_map(|p| p.points.iter())));
    for p in all {
        let v = p.to_vec();
        lo = (lo.0.min(v.x), lo.1.min(v.y));
        hi = (hi.0.max(v.x), hi.1.max(v.y));
    }
    if !lo.0.is_finite() {
        lo = (0.0, 0.0);
        hi = (1.0, 1.0);
    }
    let pad = stroke;
    let (x0, y0) = (lo.0 - pad, lo.1 - pad);
    let (wd, ht) = (hi.0 - lo.0 + 2.0 * pad, hi.1 - lo.1 + 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0:.3} {:.3} {wd:.3} {ht:.3}" width="{:.1}mm" height="{:.1}mm">"#,
        -(y0 + ht),
        wd,
        ht
    );
    let _ = writeln!(out, r#"<g transform="scale(1,-1)">"#);
    if let Some(tiles) = heat {
        for t in tiles {
            let _ = writeln!(
                out,
                r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#1f77b4" fill-opacity="{:.3}"/>"##,
                t.x,
                t.y,
                t.size,
                t.size,
                t.value.clamp(0.0, 1.0)
            );
        }
    }
    for (level, set) in plan.walls.iter().enumerate() {
        let color = if level == 0 { OUTER_WALL } else { INNER_WALL };
        for poly in &set.polygons {
            svg_path(&mut out, &Polyline::closed(poly.points.clone()), color, stroke);
        }
    }
    for t in &plan.toolpaths {
        svg_path(&mut out, t, TOOLPATH, stroke);
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Run summary written next to the G-code. Only deterministic quantities, so two identical runs
/// give identical files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub layers: usize,
    pub leaf_count: usize,
    pub max_leaf_depth: u32,
    pub target_mass_mm3: f64,
    pub realized_mass_mm3: f64,
    pub dropped_error_mm3: f64,
    pub path_length_mm: f64,
    pub extruded_volume_mm3: f64,
    pub filament_mm: f64,
    pub bridges: usize,
    pub longest_bridge_mm: f64,
    /// Loops no bridge reached, printed as separate paths.
    pub unbridged_loops: usize,
    /// Layers printed as more than one path per island because of such loops.
    pub split_layers: usize,
    pub surface_adjustments: usize,
    /// Infill loop volume over the volume of the infill areas.
    pub infill_density: f64,
}

impl RunStats {
    /// Fills the path, volume and bridge totals from the layer plans.
    pub fn add_plans(&mut self, plans: &[LayerPlan], profile: &PrintProfile) {
        self.layers += plans.len();
        for plan in plans {
            let len: f64 = plan.toolpaths.iter().map(|t| t.length_mm()).sum();
            self.path_length_mm += len;
            self.bridges += plan.bridges.len();
            self.unbridged_loops += plan.unbridged;
            self.split_layers += usize::from(plan.unbridged > 0);
            for b in &plan.bridges {
                self.longest_bridge_mm = self.longest_bridge_mm.max(b.length());
            }
        }
        self.extruded_volume_mm3 = self.path_length_mm * profile.volume_per_mm();
        self.filament_mm = self.path_length_mm * profile.filament_per_mm();
    }
}

/// File name of layer `i`'s drawing.
pub fn layer_svg_name(i: usize) -> String {
    format!("layer_{i:05}.svg")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `out.gcode`, one SVG per layer and `stats.json` into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, gcode: &str, svgs: &[String], stats: &RunStats) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("out.gcode"), gcode)?;
    for (i, svg) in svgs.iter().enumerate() {
        write_file(&dir.join(layer_svg_name(i)), svg)?;
    }
    let json = serde_json::to_string_pretty(stats)?;
    write_file(&dir.join("stats.json"), &(json + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, Polygon, PolygonSet};

    fn plan(paths: Vec<Polyline>) -> LayerPlan {
        LayerPlan { z: 0.3, walls: Vec::new(), infill: Vec::new(), bridges: Vec::new(), toolpaths: paths, unbridged: 0 }
    }

    fn square() -> Polyline {
        Polyline::closed(Polygon::rect_mm(0.0, 0.0, 10.0, 10.0).points)
    }

    #[test]
    fn paper_profile_defaults() {
        let p = PrintProfile::default();
        assert_eq!((p.line_width, p.layer_height, p.speed), (0.38, 0.1, 25.0));
        p.validate().unwrap();
        assert!(PrintProfile { speed: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn empty_plan_list_is_header_and_footer() {
        let t = GcodeTemplates::default();
        assert_eq!(emit_gcode(&[], &PrintProfile::default(), &t), format!("{}{}", t.header, t.footer));
    }

    #[test]
    fn extrusion_of_a_ten_mm_segment() {
        // independent arithmetic: cross-section over filament area
        let area = std::f64::consts::PI * 1.425 * 1.425;
        let expected = 10.0 * 0.38 * 0.1 / area;
        assert!((expected - 0.05957).abs() < 1e-5);
        let line = Polyline::open(vec![Point2::from_mm(0.0, 0.0), Point2::from_mm(10.0, 0.0)]);
        let g = emit_gcode(&[plan(vec![line])], &PrintProfile::default(), &GcodeTemplates::default());
        let moves = parse_moves(&g);
        let last = moves.last().unwrap();
        assert!(last.extrude);
        assert!((last.e - expected).abs() < 1e-5);
    }

    #[test]
    fn one_move_per_vertex_and_round_trip() {
        let sq = square();
        let g = emit_gcode(&[plan(vec![sq.clone()])], &PrintProfile::default(), &GcodeTemplates::default());
        let moves = parse_moves(&g);
        let g1: Vec<_> = moves.iter().filter(|m| m.extrude).collect();
        assert_eq!(g1.len(), sq.points.len());
        let mut len = 0.0;
        let mut prev: Option<&GcodeMove> = None;
        for m in &moves {
            if let Some(p) = prev {
                if m.extrude {
                    len += (m.x - p.x).hypot(m.y - p.y);
                }
            }
            prev = Some(m);
        }
        assert!((len - sq.length_mm()).abs() < 1e-3);
        assert!(moves.iter().all(|m| (m.z - 0.35).abs() < 1e-9));
    }

    #[test]
    fn square_svg_is_one_path_of_five_points() {
        let svg = emit_svg(&plan(vec![square()]), 0.38, None);
        assert_eq!(svg.matches("<path").count(), 1);
        let d = svg.split("d=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(d.matches(['M', 'L']).count(), 5);
        assert!(svg.contains("stroke-width=\"0.38\""));
    }

    #[test]
    fn walls_and_infill_have_distinct_colors() {
        let mut p = plan(vec![square()]);
        p.walls = vec![
            PolygonSet::new(vec![Polygon::rect_mm(-1.0, -1.0, 11.0, 11.0)]),
            PolygonSet::new(vec![Polygon::rect_mm(-0.6, -0.6, 10.6, 10.6)]),
        ];
        let svg = emit_svg(&p, 0.38, Some(&[HeatTile { x: 0.0, y: 0.0, size: 1.0, value: 0.5 }]));
        assert!(svg.contains(OUTER_WALL) && svg.contains(INNER_WALL) && svg.contains(TOOLPATH));
        assert_eq!(svg.matches("<path").count(), 3);
        assert_eq!(svg.matches("<rect").count(), 1);
    }

    #[test]
    fn stats_totals() {
        let mut s = RunStats::default();
        let profile = PrintProfile::default();
        s.add_plans(&[plan(vec![square()]), plan(vec![square()])], &profile);
        assert_eq!(s.layers, 2);
        assert!((s.path_length_mm - 80.0).abs() < 1e-9);
        assert!((s.extruded_volume_mm3 - 80.0 * 0.038).abs() < 1e-9);
    }

    #[test]
    fn outputs_land_in_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), "G1\n", &["<svg/>".into()], &RunStats::default()).unwrap();
        assert!(dir.path().join("out.gcode").exists());
        assert!(dir.path().join("layer_00000.svg").exists());
        let back: RunStats =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
        assert_eq!(back, RunStats::default());
    }
}
