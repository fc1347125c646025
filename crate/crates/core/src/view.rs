//! Off-screen indicators: wedges for targets outside a viewport and
//! peripheral HUD marks for sensors outside the viewer's field of view.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{Rgb, TempColormap};
use crate::geo::{local_project, GridSpec};
use crate::model::{Record, RecordId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewError {
    #[error("Degenerate: target {distance:.1} units from viewport exceeds {limit:.1}")]
    Degenerate { distance: f64, limit: f64 },
    #[error("MissingValue {field} on {id}")]
    MissingValue { id: RecordId, field: String },
    #[error("invalid viewport {0}x{1}")]
    InvalidViewport(f64, f64),
    #[error("invalid field of view {0}")]
    InvalidFov(f64),
    #[error("invalid value range [{0}, {1}]")]
    InvalidRange(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned screen rectangle `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: f64,
    pub height: f64,
}

impl Viewport {
    pub fn new(width: f64, height: f64) -> Result<Self, ViewError> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(ViewError::InvalidViewport(width, height));
        }
        Ok(Viewport { width, height })
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn strictly_contains(&self, p: Point) -> bool {
        p.x > 0.0 && p.x < self.width && p.y > 0.0 && p.y < self.height
    }

    pub fn center(&self) -> Point {
        Point::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn nearest_boundary_point(&self, p: Point) -> Point {
        Point::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }
}

/// Shape constants for wedges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeParams {
    /// How far the base intrudes past the edge, as a fraction of the smaller viewport side.
    pub intrusion_frac: f64,
    /// Half the base width over the intrusion.
    pub aperture_factor: f64,
    pub rotate_step_deg: f64,
    pub max_rotation_deg: f64,
    /// Targets farther than this multiple of the larger side are degenerate.
    pub max_distance_factor: f64,
}

impl Default for WedgeParams {
    fn default() -> Self {
        WedgeParams {
            intrusion_frac: 0.1,
            aperture_factor: 1.5,
            rotate_step_deg: 1.0,
            max_rotation_deg: 90.0,
            max_distance_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeGeom {
    pub apex: Point,
    pub base_left: Point,
    pub base_right: Point,
    pub leg_length: f64,
    pub half_aperture: f64,
    pub color: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WedgePlacement {
    OnScreen,
    Wedge(WedgeGeom),
}

fn rotate(v: (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (v.0 * c - v.1 * s, v.0 * s + v.1 * c)
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

// base vertices for an axis angle; `left` is counter-clockwise of the axis
fn base_vertices(apex: Point, axis_angle: f64, leg: f64, half: f64) -> (Point, Point) {
    let dir = (axis_angle.cos(), axis_angle.sin());
    let l = rotate(dir, half);
    let r = rotate(dir, -half);
    (
        Point::new(apex.x + leg * l.0, apex.y + leg * l.1),
        Point::new(apex.x + leg * r.0, apex.y + leg * r.1),
    )
}

pub fn wedge(target: Point, viewport: &Viewport, color: Rgb) -> Result<WedgePlacement, ViewError> {
    wedge_with(&WedgeParams::default(), target, viewport, color)
}

/// Isosceles wedge with its apex on `target` and its base inside the viewport.
///
/// The axis starts toward the nearest boundary point and is turned toward
/// the viewport center in fixed steps while a base vertex falls outside.
/// If no turn fits (targets off a corner), the axis points at the center and
/// the legs lengthen until the base is inside.
pub fn wedge_with(
    params: &WedgeParams,
    target: Point,
    viewport: &Viewport,
    color: Rgb,
) -> Result<WedgePlacement, ViewError> {
    if viewport.contains(target) {
        return Ok(WedgePlacement::OnScreen);
    }
    let nearest = viewport.nearest_boundary_point(target);
    let distance = target.distance(nearest);
    let limit = params.max_distance_factor * viewport.width.max(viewport.height);
    if distance > limit {
        return Err(ViewError::Degenerate { distance, limit });
    }

    let intrusion = params.intrusion_frac * viewport.width.min(viewport.height);
    let half_width = params.aperture_factor * intrusion;
    let make = |axis: f64, leg: f64| {
        let half = (half_width / leg).atan();
        let (base_left, base_right) = base_vertices(target, axis, leg, half);
        WedgeGeom {
            apex: target,
            base_left,
            base_right,
            leg_length: leg,
            half_aperture: half,
            color,
        }
    };
    let fits = |g: &WedgeGeom| {
        viewport.strictly_contains(g.base_left) && viewport.strictly_contains(g.base_right)
    };

    let leg = distance + intrusion;
    let axis = (nearest.y - target.y).atan2(nearest.x - target.x);
    let center = viewport.center();
    let toward_center = (center.y - target.y).atan2(center.x - target.x);
    let gap = wrap_angle(toward_center - axis);

    let step = params.rotate_step_deg.to_radians();
    let max_steps = (params.max_rotation_deg / params.rotate_step_deg).round() as u32;
    for k in 0..=max_steps {
        let turn = (k as f64 * step).min(gap.abs());
        let g = make(axis + gap.signum() * turn, leg);
        if fits(&g) {
            return Ok(WedgePlacement::Wedge(g));
        }
        if turn >= gap.abs() {
            break;
        }
    }

    let reach = target.distance(center) + viewport.width.max(viewport.height);
    let grow = intrusion / 10.0;
    let mut leg = leg;
    while leg <= reach {
        let g = make(toward_center, leg);
        if fits(&g) {
            return Ok(WedgePlacement::Wedge(g));
        }
        leg += grow;
    }
    Err(ViewError::Degenerate { distance, limit })
}

/// Viewer position in grid-local meters; heading 0 is north (+y), clockwise positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewerPose {
    pub position: Point,
    pub heading: f64,
    pub fov: f64,
}

impl ViewerPose {
    pub fn new(position: Point, heading: f64, fov: f64) -> Result<Self, ViewError> {
        if !(fov > 0.0 && fov < PI) {
            return Err(ViewError::InvalidFov(fov));
        }
        Ok(ViewerPose {
            position,
            heading: wrap_angle(heading),
            fov,
        })
    }

    /// Signed angle from the heading to `p`, in (-pi, pi]; positive is to the right.
    pub fn bearing_to(&self, p: Point) -> f64 {
        let dx = p.x - self.position.x;
        let dy = p.y - self.position.y;
        wrap_angle(dx.atan2(dy) - self.heading)
    }

    /// `p` in a heading-up frame: (meters to the right, meters ahead).
    pub fn to_local(&self, p: Point) -> Point {
        let dx = p.x - self.position.x;
        let dy = p.y - self.position.y;
        let (s, c) = self.heading.sin_cos();
        Point::new(dx * c - dy * s, dx * s + dy * c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HudMark {
    pub side: Side,
    /// 0 just outside the field of view, 1 directly behind.
    pub vertical_pos: f64,
    pub alpha: f64,
    pub color: Rgb,
    pub source_id: RecordId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HudProjection {
    InView,
    Mark(HudMark),
}

/// Distance at which HUD marks fade to their minimum opacity.
pub const HUD_ALPHA_RANGE_M: f64 = 500.0;
pub const HUD_MIN_ALPHA: f64 = 0.1;

/// Places a side-of-view mark for a sensor the viewer is not facing.
pub fn hud_project(
    sensor: &Record,
    viewer: &ViewerPose,
    grid: &GridSpec,
    field: &str,
    value_range: [f64; 2],
) -> Result<HudProjection, ViewError> {
    if !(value_range[0] < value_range[1]) {
        return Err(ViewError::InvalidRange(value_range[0], value_range[1]));
    }
    let value = sensor
        .value(field)
        .and_then(|v| v.as_number())
        .ok_or_else(|| ViewError::MissingValue {
            id: sensor.id.clone(),
            field: field.to_string(),
        })?;
    let (x, y) = local_project(sensor.lat, sensor.lon, grid);
    let p = Point::new(x, y);
    let beta = viewer.bearing_to(p);
    let half_fov = viewer.fov / 2.0;
    if beta.abs() <= half_fov {
        return Ok(HudProjection::InView);
    }
    let side = if beta < 0.0 { Side::Left } else { Side::Right };
    let vertical_pos = ((beta.abs() - half_fov) / (PI - half_fov)).clamp(0.0, 1.0);
    let dist = viewer.position.distance(p);
    let alpha = (1.0 - dist / HUD_ALPHA_RANGE_M).clamp(HUD_MIN_ALPHA, 1.0);
    Ok(HudProjection::Mark(HudMark {
        side,
        vertical_pos,
        alpha,
        color: TempColormap::default().color(value, value_range),
        source_id: sensor.id.clone(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedWedge {
    pub source_id: RecordId,
    #[serde(flatten)]
    pub geom: WedgeGeom,
}

/// Everything an overlay needs to draw off-screen indicators for one pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderPlan {
    pub viewer: ViewerPose,
    pub viewport: Viewport,
    pub field: String,
    pub value_range: [f64; 2],
    pub wedges: Vec<PlannedWedge>,
    pub hud: Vec<HudMark>,
    /// Imagery too far away for a wedge.
    pub degenerate: Vec<RecordId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub field: String,
    pub value_range: [f64; 2],
    /// Overhead window around the viewer, heading-up, in meters.
    pub viewport: Viewport,
}

/// HUD marks for every sensor outside the field of view, and wedges for
/// imagery that falls outside the overhead window centred on the viewer.
/// Records without a numeric `field` are skipped.
pub fn render_plan<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    viewer: &ViewerPose,
    grid: &GridSpec,
    opts: &RenderOptions,
) -> Result<RenderPlan, ViewError> {
    let mut plan = RenderPlan {
        viewer: *viewer,
        viewport: opts.viewport,
        field: opts.field.clone(),
        value_range: opts.value_range,
        wedges: Vec::new(),
        hud: Vec::new(),
        degenerate: Vec::new(),
    };
    let colormap = TempColormap::default();
    for r in records {
        let Some(value) = r.value(&opts.field).and_then(|v| v.as_number()) else {
            continue;
        };
        if let HudProjection::Mark(m) = hud_project(r, viewer, grid, &opts.field, opts.value_range)? {
            plan.hud.push(m);
        }
        if r.image_refs.is_empty() {
            continue;
        }
        let (x, y) = local_project(r.lat, r.lon, grid);
        let local = viewer.to_local(Point::new(x, y));
        let screen = Point::new(
            opts.viewport.width / 2.0 + local.x,
            opts.viewport.height / 2.0 + local.y,
        );
        match wedge(screen, &opts.viewport, colormap.color(value, opts.value_range)) {
            Ok(WedgePlacement::Wedge(geom)) => plan.wedges.push(PlannedWedge {
                source_id: r.id.clone(),
                geom,
            }),
            Ok(WedgePlacement::OnScreen) => {}
            Err(ViewError::Degenerate { .. }) => plan.degenerate.push(r.id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::record_at;

    const GRAY: Rgb = Rgb::new(0.5, 0.5, 0.5);

    fn vp() -> Viewport {
        Viewport::new(100.0, 100.0).unwrap()
    }

    fn geom(p: WedgePlacement) -> WedgeGeom {
        match p {
            WedgePlacement::Wedge(g) => g,
            WedgePlacement::OnScreen => panic!("expected wedge"),
        }
    }

    #[test]
    fn worked_example() {
        let g = geom(wedge(Point::new(150.0, 50.0), &vp(), GRAY).unwrap());
        assert_eq!(g.apex, Point::new(150.0, 50.0));
        assert!((g.leg_length - 60.0).abs() < 1e-12);
        assert!((g.half_aperture - 0.25f64.atan()).abs() < 1e-12);
        assert!((g.half_aperture - 0.2450).abs() < 1e-4);
        let mut ys = [g.base_left.y, g.base_right.y];
        ys.sort_by(f64::total_cmp);
        assert!((g.base_left.x - 91.79).abs() < 0.01 && (g.base_right.x - 91.79).abs() < 0.01);
        assert!((ys[0] - 35.45).abs() < 0.01 && (ys[1] - 64.55).abs() < 0.01, "{ys:?}");
    }

    #[test]
    fn on_screen_and_degenerate() {
        assert_eq!(wedge(Point::new(50.0, 50.0), &vp(), GRAY).unwrap(), WedgePlacement::OnScreen);
        assert_eq!(wedge(Point::new(100.0, 0.0), &vp(), GRAY).unwrap(), WedgePlacement::OnScreen);
        assert!(matches!(
            wedge(Point::new(1101.0, 50.0), &vp(), GRAY),
            Err(ViewError::Degenerate { .. })
        ));
    }

    #[test]
    fn quarter_turn_symmetry() {
        // Rotating the square viewport by -90 degrees about its centre maps (150,50) to (50,-50).
        let a = geom(wedge(Point::new(150.0, 50.0), &vp(), GRAY).unwrap());
        let b = geom(wedge(Point::new(50.0, -50.0), &vp(), GRAY).unwrap());
        let turn = |p: Point| Point::new(50.0 + (p.y - 50.0), 50.0 - (p.x - 50.0));
        let mut want = [turn(a.base_left), turn(a.base_right)].map(|p| (p.x, p.y));
        let mut got = [b.base_left, b.base_right].map(|p| (p.x, p.y));
        want.sort_by(|p, q| p.partial_cmp(q).unwrap());
        got.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for (w, g) in want.iter().zip(&got) {
            assert!((w.0 - g.0).abs() < 1e-9 && (w.1 - g.1).abs() < 1e-9, "{want:?} {got:?}");
        }
        assert!((a.leg_length - b.leg_length).abs() < 1e-12);
    }

    #[test]
    fn edge_hugging_target_rotates_inward() {
        let g = geom(wedge(Point::new(150.0, 3.0), &vp(), GRAY).unwrap());
        assert!(vp().strictly_contains(g.base_left) && vp().strictly_contains(g.base_right));
        assert!((g.leg_length - 60.0).abs() < 1e-12, "rotation keeps the leg length");
    }

    #[test]
    fn corner_target_fits() {
        let g = geom(wedge(Point::new(400.0, 400.0), &vp(), GRAY).unwrap());
        assert!(vp().strictly_contains(g.base_left) && vp().strictly_contains(g.base_right));
        assert!((g.apex.distance(g.base_left) - g.leg_length).abs() < 1e-9);
    }

    fn viewer() -> ViewerPose {
        ViewerPose::new(Point::new(0.0, 0.0), 0.0, 60f64.to_radians()).unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec {
            origin_lat: 40.0,
            origin_lon: -105.0,
            cell_size_m: 10.0,
            rows: 10,
            cols: 10,
            target_per_cell: 1,
        }
    }

    fn sensor_at(x: f64, y: f64) -> Record {
        let (lat, lon) = grid().unproject(x, y);
        record_at("s", 0, 50.0, lat, lon)
    }

    #[test]
    fn hud_due_east() {
        match hud_project(&sensor_at(100.0, 0.0), &viewer(), &grid(), "scorch", [0.0, 100.0]).unwrap() {
            HudProjection::Mark(m) => {
                assert_eq!(m.side, Side::Right);
                assert!((m.vertical_pos - 0.4).abs() < 1e-9, "{}", m.vertical_pos);
                assert!((m.alpha - 0.8).abs() < 1e-9);
            }
            HudProjection::InView => panic!("east is outside a 60 degree view"),
        }
    }

    #[test]
    fn hud_ahead_behind_and_west() {
        assert_eq!(
            hud_project(&sensor_at(0.0, 100.0), &viewer(), &grid(), "scorch", [0.0, 100.0]).unwrap(),
            HudProjection::InView
        );
        let v = ViewerPose::new(Point::new(0.0, 200.0), 0.0, 60f64.to_radians()).unwrap();
        match hud_project(&sensor_at(0.0, 0.0), &v, &grid(), "scorch", [0.0, 100.0]).unwrap() {
            HudProjection::Mark(m) => assert!((m.vertical_pos - 1.0).abs() < 1e-12),
            HudProjection::InView => panic!(),
        }
        let v = ViewerPose::new(Point::new(90.0, 0.0), 0.0, 60f64.to_radians()).unwrap();
        match hud_project(&sensor_at(0.0, 0.0), &v, &grid(), "scorch", [0.0, 100.0]).unwrap() {
            HudProjection::Mark(m) => assert_eq!(m.side, Side::Left),
            HudProjection::InView => panic!(),
        }
    }

    #[test]
    fn hud_far_sensor_keeps_min_alpha() {
        let v = ViewerPose::new(Point::new(0.0, 0.0), PI, 1.0).unwrap();
        match hud_project(&sensor_at(2000.0, 0.0), &v, &grid(), "scorch", [0.0, 100.0]).unwrap() {
            HudProjection::Mark(m) => assert_eq!(m.alpha, HUD_MIN_ALPHA),
            HudProjection::InView => panic!(),
        }
    }

    #[test]
    fn hud_missing_value() {
        let mut r = sensor_at(100.0, 0.0);
        r.values.clear();
        assert!(matches!(
            hud_project(&r, &viewer(), &grid(), "scorch", [0.0, 100.0]),
            Err(ViewError::MissingValue { .. })
        ));
    }

    #[test]
    fn pose_validation() {
        assert!(ViewerPose::new(Point::new(0.0, 0.0), 0.0, 0.0).is_err());
        assert!(ViewerPose::new(Point::new(0.0, 0.0), 0.0, PI).is_err());
        let p = ViewerPose::new(Point::new(0.0, 0.0), 3.0 * PI, 1.0).unwrap();
        assert!((p.heading - PI).abs() < 1e-12);
    }

    #[test]
    fn plan_collects_marks_and_wedges() {
        let mut east = sensor_at(100.0, 0.0);
        east.image_refs = vec!["0".repeat(64)];
        let ahead = sensor_at(0.0, 20.0);
        let opts = RenderOptions {
            field: "scorch".into(),
            value_range: [0.0, 100.0],
            viewport: Viewport::new(100.0, 100.0).unwrap(),
        };
        let plan = render_plan([&east, &ahead], &viewer(), &grid(), &opts).unwrap();
        assert_eq!(plan.hud.len(), 1);
        assert_eq!(plan.hud[0].side, Side::Right);
        assert_eq!(plan.wedges.len(), 1);
        let apex = plan.wedges[0].geom.apex;
        assert!(apex.distance(Point::new(150.0, 50.0)) < 1e-6, "{apex:?}");
    }
}
