use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::geom::{gauss_legendre16, segments_intersect, wrap_angle, Vec2};
use super::BilliardError;

/// Local model of a flat cusp, `y_± = ±C_± x^β / β` for `0 ≤ x ≤ extent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspSpec {
    pub beta: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub extent: f64,
}

impl CuspSpec {
    pub fn validate(&self) -> Result<(), BilliardError> {
        if !(self.beta >= 2.0) || !self.beta.is_finite() {
            return Err(BilliardError::InvalidTable(format!("cusp exponent beta = {} must be at least 2", self.beta)));
        }
        if !(self.c_plus >= 0.0 && self.c_minus >= 0.0) || !(self.c_plus.is_finite() && self.c_minus.is_finite()) {
            return Err(BilliardError::InvalidTable("cusp coefficients must be finite and non-negative".into()));
        }
        if self.c_plus == 0.0 && self.c_minus == 0.0 {
            return Err(BilliardError::InvalidTable("cusp coefficients c_plus and c_minus are both zero".into()));
        }
        if !(self.extent > 0.0) || !self.extent.is_finite() {
            return Err(BilliardError::InvalidTable(format!("cusp extent {} must be positive", self.extent)));
        }
        Ok(())
    }

    /// `(β - 1) / β`.
    pub fn gamma(&self) -> f64 {
        (self.beta - 1.0) / self.beta
    }

    pub(crate) fn coefficient(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.c_plus,
            Side::Minus => self.c_minus,
        }
    }
}

/// `(y_+, y_-)` at distance `x` from the cusp tip along its axis.
pub fn cusp_profile(cusp: &CuspSpec, x: f64) -> Result<(f64, f64), BilliardError> {
    if !(0.0..=cusp.extent).contains(&x) {
        return Err(BilliardError::OutOfRange(format!("x = {x} outside [0, {}]", cusp.extent)));
    }
    let base = x.powf(cusp.beta) / cusp.beta;
    Ok((cusp.c_plus * base, -cusp.c_minus * base))
}

/// Which cap of a cusp: `Plus` is `y > 0` in the cusp frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub(crate) fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// A cusp placed in the plane: tip position and the direction in which it
/// opens into the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspPlacement {
    pub tip: [f64; 2],
    /// Angle (radians) of the cusp axis, pointing from the tip into the table.
    pub axis: f64,
    pub spec: CuspSpec,
}

/// Circular dispersing arc joining the `-` cap of one cusp to the `+` cap of
/// the next. Without a centre, the centre is placed on the perpendicular
/// bisector of the two cap ends, away from the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSpec {
    pub radius: f64,
    pub center: Option<[f64; 2]>,
    /// Optional declared angular span (radians), checked against the geometry.
    pub span: Option<f64>,
}

/// Table description: cusps in counter-clockwise order, arc `k` joining cusp
/// `k` to cusp `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub cusps: Vec<CuspPlacement>,
    pub arcs: Vec<ArcSpec>,
}

const ENDPOINT_TOL: f64 = 1e-9;

impl TableSpec {
    /// `q` identical cusps with tips on the unit circle, joined by arcs that
    /// meet the caps with matching tangents.
    pub fn symmetric(name: &str, q: usize, cusp: CuspSpec) -> Result<Self, BilliardError> {
        cusp.validate()?;
        if q < 3 {
            return Err(BilliardError::InvalidTable(format!("need at least 3 cusps, got {q}")));
        }
        let step = TAU / q as f64;
        let cusps: Vec<CuspPlacement> = (0..q)
            .map(|k| {
                let phi = PI / 2.0 + k as f64 * step;
                CuspPlacement {
                    tip: [phi.cos(), phi.sin()],
                    axis: phi + PI,
                    spec: cusp,
                }
            })
            .collect();
        let mut arcs = Vec::with_capacity(q);
        for (k, spec) in cusps.iter().enumerate() {
            let frame = CuspFrame::new(spec);
            let e = frame.cap_end(Side::Minus);
            // outward (obstacle-side) normal at the cap end
            let tangent = frame.cap_tangent(Side::Minus, cusp.extent);
            let out = -tangent.rot90();
            let bis = Vec2::polar(PI / 2.0 + (k as f64 + 0.5) * step);
            // e + t out = s bis
            let det = out.cross(bis);
            let t = -e.cross(bis) / det;
            if !(t > 0.0) {
                return Err(BilliardError::InvalidTable("cusp extent too large for a dispersing join".into()));
            }
            let c = e + out * t;
            arcs.push(ArcSpec {
                radius: t,
                center: Some([c.x, c.y]),
                span: None,
            });
        }
        Ok(Self {
            name: name.to_string(),
            cusps,
            arcs,
        })
    }

    /// Three cusps with `β = 3`, `C_± = 1`, extent `0.2`.
    pub fn machta3() -> Self {
        Self::symmetric(
            "machta3",
            3,
            CuspSpec {
                beta: 3.0,
                c_plus: 1.0,
                c_minus: 1.0,
                extent: 0.2,
            },
        )
        .expect("built-in table is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "machta3" => Some(Self::machta3()),
            _ => None,
        }
    }

    /// Parses the line-based table format:
    ///
    /// ```text
    /// # comment
    /// name = my-table
    /// cusp tip=0,1 axis_deg=-90 beta=3 c_plus=1 c_minus=1 extent=0.2
    /// arc radius=1.49 center=1.49,0.86 span_deg=97.1
    /// cusp ...
    /// arc ...
    /// ```
    ///
    /// `arc` lines join the preceding cusp to the next one (cyclically);
    /// `center` and `span_deg` are optional. `axis` may be given in radians
    /// instead of `axis_deg`.
    pub fn parse(text: &str) -> Result<Self, BilliardError> {
        let mut name = String::from("unnamed");
        let mut cusps = Vec::new();
        let mut arcs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| BilliardError::Parse { line: line_no, msg };
            if let Some(rest) = line.strip_prefix("name") {
                let v = rest.trim_start().strip_prefix('=').ok_or_else(|| err("expected `name = ...`".into()))?;
                name = v.trim().to_string();
                continue;
            }
            let mut words = line.split_whitespace();
            let kind = words.next().unwrap_or_default();
            let mut fields = std::collections::BTreeMap::new();
            for w in words {
                let (k, v) = w.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{w}`")))?;
                if fields.insert(k, v).is_some() {
                    return Err(err(format!("duplicate key `{k}`")));
                }
            }
            let num = |k: &str| -> Result<Option<f64>, BilliardError> {
                fields
                    .get(k)
                    .map(|v| v.parse::<f64>().map_err(|_| err(format!("`{k}` is not a number: `{v}`"))))
                    .transpose()
            };
            let pair = |k: &str| -> Result<Option<[f64; 2]>, BilliardError> {
                fields
                    .get(k)
                    .map(|v| {
                        let (a, b) = v.split_once(',').ok_or_else(|| err(format!("`{k}` must be `x,y`")))?;
                        let a = a.parse::<f64>().map_err(|_| err(format!("bad `{k}`")))?;
                        let b = b.parse::<f64>().map_err(|_| err(format!("bad `{k}`")))?;
                        Ok([a, b])
                    })
                    .transpose()
            };
            let need = |v: Option<f64>, k: &str| v.ok_or_else(|| err(format!("missing `{k}`")));
            match kind {
                "cusp" => {
                    for k in fields.keys() {
                        if !["tip", "axis", "axis_deg", "beta", "c_plus", "c_minus", "extent"].contains(k) {
                            return Err(err(format!("unknown cusp key `{k}`")));
                        }
                    }
                    let axis = match (num("axis")?, num("axis_deg")?) {
                        (Some(a), None) => a,
                        (None, Some(d)) => d.to_radians(),
                        _ => return Err(err("give exactly one of `axis`, `axis_deg`".into())),
                    };
                    cusps.push(CuspPlacement {
                        tip: pair("tip")?.ok_or_else(|| err("missing `tip`".into()))?,
                        axis,
                        spec: CuspSpec {
                            beta: need(num("beta")?, "beta")?,
                            c_plus: need(num("c_plus")?, "c_plus")?,
                            c_minus: need(num("c_minus")?, "c_minus")?,
                            extent: need(num("extent")?, "extent")?,
                        },
                    });
                }
                "arc" => {
                    for k in fields.keys() {
                        if !["radius", "center", "span", "span_deg"].contains(k) {
                            return Err(err(format!("unknown arc key `{k}`")));
                        }
                    }
                    if arcs.len() + 1 != cusps.len() {
                        return Err(err("each `arc` must follow exactly one `cusp`".into()));
                    }
                    let span = match (num("span")?, num("span_deg")?) {
                        (Some(s), None) => Some(s),
                        (None, Some(d)) => Some(d.to_radians()),
                        (None, None) => None,
                        _ => return Err(err("give at most one of `span`, `span_deg`".into())),
                    };
                    arcs.push(ArcSpec {
                        radius: need(num("radius")?, "radius")?,
                        center: pair("center")?,
                        span,
                    });
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        Ok(Self { name, cusps, arcs })
    }

    /// Inverse of [`TableSpec::parse`] (full precision).
    pub fn to_text(&self) -> String {
        let mut s = format!("name = {}\n", self.name);
        for (c, a) in self.cusps.iter().zip(&self.arcs) {
            let _ = writeln!(
                s,
                "cusp tip={:?},{:?} axis={:?} beta={:?} c_plus={:?} c_minus={:?} extent={:?}",
                c.tip[0], c.tip[1], c.axis, c.spec.beta, c.spec.c_plus, c.spec.c_minus, c.spec.extent
            );
            let _ = write!(s, "arc radius={:?}", a.radius);
            if let Some(cen) = a.center {
                let _ = write!(s, " center={:?},{:?}", cen[0], cen[1]);
            }
            if let Some(sp) = a.span {
                let _ = write!(s, " span={sp:?}");
            }
            s.push('\n');
        }
        s
    }
}

/// Cusp-local orthonormal frame: origin at the tip, `a` along the axis into
/// the table, `n = a` turned a quarter counter-clockwise.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CuspFrame {
    pub tip: Vec2,
    pub a: Vec2,
    pub n: Vec2,
    pub spec: CuspSpec,
}

impl CuspFrame {
    pub fn new(p: &CuspPlacement) -> Self {
        let a = Vec2::polar(p.axis);
        Self {
            tip: Vec2::new(p.tip[0], p.tip[1]),
            a,
            n: a.rot90(),
            spec: p.spec,
        }
    }

    pub fn to_global(self, local: Vec2) -> Vec2 {
        self.tip + self.a * local.x + self.n * local.y
    }

    pub fn dir_to_global(self, d: Vec2) -> Vec2 {
        self.a * d.x + self.n * d.y
    }

    pub fn to_local(self, p: Vec2) -> Vec2 {
        let q = p - self.tip;
        Vec2::new(q.dot(self.a), q.dot(self.n))
    }

    pub fn dir_to_local(self, d: Vec2) -> Vec2 {
        Vec2::new(d.dot(self.a), d.dot(self.n))
    }

    /// Local point on a cap.
    pub fn cap_point_local(&self, side: Side, x: f64) -> Vec2 {
        let c = self.spec.coefficient(side);
        Vec2::new(x, side.sign() * c * x.powf(self.spec.beta) / self.spec.beta)
    }

    pub fn cap_end(&self, side: Side) -> Vec2 {
        self.to_global(self.cap_point_local(side, self.spec.extent))
    }

    /// Unit tangent in the direction of increasing boundary arclength, local
    /// frame. The `-` cap runs away from the tip, the `+` cap towards it.
    pub fn cap_tangent_local(&self, side: Side, x: f64) -> Vec2 {
        let c = self.spec.coefficient(side);
        let slope = side.sign() * c * x.powf(self.spec.beta - 1.0);
        let t = Vec2::new(1.0, slope).unit();
        match side {
            Side::Minus => t,
            Side::Plus => -t,
        }
    }

    pub fn cap_tangent(&self, side: Side, x: f64) -> Vec2 {
        self.dir_to_global(self.cap_tangent_local(side, x))
    }

    /// Arclength of a cap from the tip to `x`.
    pub fn cap_arclength(&self, side: Side, x: f64) -> f64 {
        let c = self.spec.coefficient(side);
        if c == 0.0 || x <= 0.0 {
            return x.max(0.0);
        }
        let p = self.spec.beta - 1.0;
        gauss_legendre16(|t| (1.0 + (c * t.powf(p)).powi(2)).sqrt(), 0.0, x)
    }

    /// Inverse of [`CuspFrame::cap_arclength`].
    pub fn cap_x_at(&self, side: Side, s: f64) -> f64 {
        let c = self.spec.coefficient(side);
        if c == 0.0 || s <= 0.0 {
            return s.max(0.0);
        }
        let p = self.spec.beta - 1.0;
        let mut x = s;
        for _ in 0..50 {
            let f = self.cap_arclength(side, x) - s;
            let step = f / (1.0 + (c * x.powf(p)).powi(2)).sqrt();
            x -= step;
            if step.abs() <= 1e-16 * s.max(1e-300) {
                break;
            }
        }
        x
    }
}

/// One smooth piece of the boundary.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PieceKind {
    Cap { cusp: usize, side: Side },
    /// `u` is arclength from the start; `clockwise` arcs bound a convex
    /// obstacle (dispersing), counter-clockwise ones bound the table from
    /// outside (focusing; test fixtures only).
    Arc { center: Vec2, radius: f64, start_angle: f64, clockwise: bool },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Piece {
    pub kind: PieceKind,
    /// Boundary coordinate of the start of the piece.
    pub r0: f64,
    pub len: f64,
}

/// Validated billiard table with boundary coordinate `r` running
/// counter-clockwise (table on the left), `r = 0` at the tip of cusp 0.
#[derive(Debug, Clone)]
pub struct BilliardTable {
    name: String,
    pub(crate) cusps: Vec<CuspFrame>,
    pub(crate) pieces: Vec<Piece>,
    total_length: f64,
    gamma_max: f64,
    arcs: usize,
}

impl BilliardTable {
    pub fn build(spec: &TableSpec) -> Result<Self, BilliardError> {
        let q = spec.cusps.len();
        if q < 3 || spec.arcs.len() != q {
            return Err(BilliardError::InvalidTable(format!(
                "need q >= 3 cusps and as many arcs, got {q} cusps and {} arcs",
                spec.arcs.len()
            )));
        }
        for c in &spec.cusps {
            c.spec.validate()?;
        }
        let beta_max = spec.cusps.iter().map(|c| c.spec.beta).fold(f64::MIN, f64::max);
        if !(beta_max > 2.0) {
            return Err(BilliardError::InvalidTable(format!("largest cusp exponent must exceed 2, got {beta_max}")));
        }
        let frames: Vec<CuspFrame> = spec.cusps.iter().map(CuspFrame::new).collect();
        let mut pieces = Vec::with_capacity(3 * q);
        let mut r = 0.0;
        for k in 0..q {
            let next = (k + 1) % q;
            let start = frames[k].cap_end(Side::Minus);
            let end = frames[next].cap_end(Side::Plus);
            let len = frames[k].cap_arclength(Side::Minus, frames[k].spec.extent);
            pieces.push(Piece {
                kind: PieceKind::Cap { cusp: k, side: Side::Minus },
                r0: r,
                len,
            });
            r += len;

            let arc = &spec.arcs[k];
            if !(arc.radius > 0.0) || !arc.radius.is_finite() {
                return Err(BilliardError::InvalidTable(format!("arc {k}: radius must be positive")));
            }
            let center = match arc.center {
                Some(c) => Vec2::new(c[0], c[1]),
                None => {
                    let chord = end - start;
                    let half = chord.norm() / 2.0;
                    if arc.radius < half {
                        return Err(BilliardError::InvalidTable(format!("arc {k}: radius shorter than half the chord")));
                    }
                    let mid = (start + end) * 0.5;
                    // table lies to the left of the chord; the obstacle centre to the right
                    mid - chord.unit().rot90() * (arc.radius * arc.radius - half * half).sqrt()
                }
            };
            let tol = ENDPOINT_TOL * arc.radius.max(1.0);
            for (label, p) in [("start", start), ("end", end)] {
                if ((p - center).norm() - arc.radius).abs() > tol {
                    return Err(BilliardError::InvalidTable(format!(
                        "arc {k}: {label} point is {:e} off the circle",
                        ((p - center).norm() - arc.radius).abs()
                    )));
                }
            }
            let a0 = (start - center).angle();
            let a1 = (end - center).angle();
            let span = wrap_angle(a0 - a1);
            if let Some(declared) = arc.span {
                if (declared - span).abs() > 1e-6 {
                    return Err(BilliardError::InvalidTable(format!(
                        "arc {k}: declared span {declared} differs from geometric span {span}"
                    )));
                }
            }
            pieces.push(Piece {
                kind: PieceKind::Arc {
                    center,
                    radius: arc.radius,
                    start_angle: a0,
                    clockwise: true,
                },
                r0: r,
                len: arc.radius * span,
            });
            r += arc.radius * span;

            let len = frames[next].cap_arclength(Side::Plus, frames[next].spec.extent);
            pieces.push(Piece {
                kind: PieceKind::Cap { cusp: next, side: Side::Plus },
                r0: r,
                len,
            });
            r += len;
        }
        let table = Self {
            name: spec.name.clone(),
            cusps: frames,
            pieces,
            total_length: r,
            gamma_max: (beta_max - 1.0) / beta_max,
            arcs: q,
        };
        table.check_simple()?;
        Ok(table)
    }

    pub fn machta3() -> Self {
        Self::build(&TableSpec::machta3()).expect("built-in table is valid")
    }

    /// Interior of a circle: a focusing, cusp-free fixture for exact
    /// symmetry checks. Not a valid dispersing table.
    pub fn circle_fixture(radius: f64) -> Self {
        Self {
            name: "circle".into(),
            cusps: vec![],
            pieces: vec![Piece {
                kind: PieceKind::Arc {
                    center: Vec2::default(),
                    radius,
                    start_angle: 0.0,
                    clockwise: false,
                },
                r0: 0.0,
                len: TAU * radius,
            }],
            total_length: TAU * radius,
            gamma_max: f64::NAN,
            arcs: 1,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `|∂Q|`.
    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    pub fn beta_max(&self) -> f64 {
        1.0 / (1.0 - self.gamma_max)
    }

    pub fn arc_count(&self) -> usize {
        self.arcs
    }

    pub fn cusp_count(&self) -> usize {
        self.cusps.len()
    }

    pub fn cusp_spec(&self, i: usize) -> Option<CuspSpec> {
        self.cusps.get(i).map(|c| c.spec)
    }

    /// Cusps with the largest exponent.
    pub fn max_cusps(&self) -> Vec<usize> {
        let b = self.cusps.iter().map(|c| c.spec.beta).fold(f64::MIN, f64::max);
        (0..self.cusps.len()).filter(|&i| self.cusps[i].spec.beta == b).collect()
    }

    /// Boundary coordinate of the tip of cusp `i`.
    pub fn cusp_r(&self, i: usize) -> Option<f64> {
        self.pieces.iter().find_map(|p| match p.kind {
            PieceKind::Cap { cusp, side: Side::Minus } if cusp == i => Some(p.r0),
            _ => None,
        })
    }

    pub(crate) fn piece_at(&self, r: f64) -> usize {
        let r = r.rem_euclid(self.total_length);
        let i = self.pieces.partition_point(|p| p.r0 <= r);
        i.saturating_sub(1)
    }

    /// Position and unit tangent at boundary coordinate `r`.
    pub fn point(&self, r: f64) -> (Vec2, Vec2) {
        let idx = self.piece_at(r);
        let u = r.rem_euclid(self.total_length) - self.pieces[idx].r0;
        let (p, t, _) = self.frame_at(idx, self.param_of(idx, u));
        (p, t)
    }

    /// Internal parameter of a piece from arclength `u` along it: `x` on a
    /// cap, arclength on an arc.
    pub(crate) fn param_of(&self, idx: usize, u: f64) -> f64 {
        let piece = &self.pieces[idx];
        match piece.kind {
            PieceKind::Cap { cusp, side } => {
                let f = &self.cusps[cusp];
                match side {
                    Side::Minus => f.cap_x_at(side, u),
                    Side::Plus => f.cap_x_at(side, piece.len - u),
                }
            }
            PieceKind::Arc { .. } => u,
        }
    }

    /// Boundary coordinate of parameter `w` on piece `idx`.
    pub(crate) fn r_of(&self, idx: usize, w: f64) -> f64 {
        let piece = &self.pieces[idx];
        let r = match piece.kind {
            PieceKind::Cap { cusp, side } => {
                let s = self.cusps[cusp].cap_arclength(side, w);
                match side {
                    Side::Minus => piece.r0 + s,
                    Side::Plus => piece.r0 + (piece.len - s),
                }
            }
            PieceKind::Arc { .. } => piece.r0 + w,
        };
        r.rem_euclid(self.total_length)
    }

    /// Position, unit tangent and arc angle (NaN on caps) at parameter `w`.
    pub(crate) fn frame_at(&self, idx: usize, w: f64) -> (Vec2, Vec2, f64) {
        match self.pieces[idx].kind {
            PieceKind::Cap { cusp, side } => {
                let f = &self.cusps[cusp];
                (f.to_global(f.cap_point_local(side, w)), f.cap_tangent(side, w), f64::NAN)
            }
            PieceKind::Arc {
                center,
                radius,
                start_angle,
                clockwise,
            } => {
                if clockwise {
                    let om = start_angle - w / radius;
                    (center + Vec2::polar(om) * radius, Vec2::new(om.sin(), -om.cos()), om)
                } else {
                    let om = start_angle + w / radius;
                    (center + Vec2::polar(om) * radius, Vec2::new(-om.sin(), om.cos()), om)
                }
            }
        }
    }

    /// Dense polyline of the boundary, for plotting and validation.
    pub fn polyline(&self, per_piece: usize) -> Vec<Vec<[f64; 2]>> {
        self.pieces
            .iter()
            .enumerate()
            .map(|(i, p)| {
                (0..=per_piece)
                    .map(|j| {
                        let u = p.len * j as f64 / per_piece as f64;
                        let (q, _, _) = self.frame_at(i, self.param_of(i, u));
                        [q.x, q.y]
                    })
                    .collect()
            })
            .collect()
    }

    /// Rejects self-intersecting or clockwise boundaries.
    fn check_simple(&self) -> Result<(), BilliardError> {
        const N: usize = 200;
        let lines: Vec<Vec<Vec2>> = self
            .polyline(N)
            .into_iter()
            .map(|l| l.into_iter().map(|p| Vec2::new(p[0], p[1])).collect())
            .collect();
        let m = lines.len();
        for i in 0..m {
            for j in i + 1..m {
                let adjacent = j == i + 1 || (i == 0 && j == m - 1);
                for a in lines[i].windows(2) {
                    for b in lines[j].windows(2) {
                        if segments_intersect(a[0], a[1], b[0], b[1]) {
                            return Err(BilliardError::InvalidTable(format!("boundary pieces {i} and {j} intersect")));
                        }
                    }
                }
                if !adjacent {
                    // non-adjacent pieces may not even touch
                    let gap = lines[i]
                        .iter()
                        .flat_map(|p| lines[j].iter().map(move |q| (*p - *q).norm()))
                        .fold(f64::INFINITY, f64::min);
                    if gap < 1e-9 {
                        return Err(BilliardError::InvalidTable(format!("boundary pieces {i} and {j} touch")));
                    }
                }
            }
        }
        let pts: Vec<Vec2> = lines.iter().flat_map(|l| l.iter().copied()).collect();
        let area: f64 = pts.iter().zip(pts.iter().cycle().skip(1)).map(|(p, q)| p.cross(*q)).sum::<f64>() / 2.0;
        if !(area > 0.0) {
            return Err(BilliardError::InvalidTable("boundary is not counter-clockwise".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_values() {
        let c = CuspSpec { beta: 3.0, c_plus: 1.0, c_minus: 0.0, extent: 0.2 };
        assert_eq!(cusp_profile(&c, 0.0).unwrap(), (0.0, 0.0));
        let (p, m) = cusp_profile(&c, 0.1).unwrap();
        assert!((p - 3.333_333_333_333_333e-4).abs() < 1e-18);
        assert_eq!(m, 0.0);
        assert!(cusp_profile(&c, 0.3).is_err());
        assert!(cusp_profile(&c, -1e-9).is_err());
    }

    #[test]
    fn machta3_properties() {
        let t = BilliardTable::machta3();
        assert_eq!(t.gamma_max(), 2.0 / 3.0);
        assert_eq!(t.cusp_count(), 3);
        assert_eq!(t.arc_count(), 3);
        assert_eq!(t.max_cusps(), vec![0, 1, 2]);
        assert_eq!(t.cusp_r(0), Some(0.0));
        // three-fold symmetry of the boundary length
        let r1 = t.cusp_r(1).unwrap();
        assert!((3.0 * r1 - t.total_length()).abs() < 1e-12);
        // boundary is continuous across every junction
        for i in 0..t.pieces.len() {
            let p = t.pieces[i];
            let (a, _, _) = t.frame_at(i, t.param_of(i, p.len));
            let j = (i + 1) % t.pieces.len();
            let (b, _, _) = t.frame_at(j, t.param_of(j, 0.0));
            assert!((a - b).norm() < 1e-12, "gap at junction {i}");
        }
    }

    #[test]
    fn junctions_are_tangent_continuous() {
        let t = BilliardTable::machta3();
        for i in 0..t.pieces.len() {
            let p = t.pieces[i];
            if matches!(p.kind, PieceKind::Cap { side: Side::Plus, .. }) {
                // cusp tip: the tangent reverses
                continue;
            }
            let (_, ta, _) = t.frame_at(i, t.param_of(i, p.len));
            let j = (i + 1) % t.pieces.len();
            let (_, tb, _) = t.frame_at(j, t.param_of(j, 0.0));
            assert!((ta - tb).norm() < 1e-9, "tangent jump at junction {i}: {ta:?} {tb:?}");
        }
    }

    #[test]
    fn gamma_max_from_beta() {
        let spec = TableSpec::symmetric("b4", 3, CuspSpec { beta: 4.0, c_plus: 1.0, c_minus: 1.0, extent: 0.2 }).unwrap();
        assert_eq!(BilliardTable::build(&spec).unwrap().gamma_max(), 0.75);
        let spec = TableSpec::symmetric("b2", 3, CuspSpec { beta: 2.0, c_plus: 1.0, c_minus: 1.0, extent: 0.2 }).unwrap();
        assert!(BilliardTable::build(&spec).is_err());
        let bad = CuspSpec { beta: 1.5, c_plus: 1.0, c_minus: 1.0, extent: 0.2 };
        assert!(TableSpec::symmetric("bad", 3, bad).is_err());
        let flat = CuspSpec { beta: 3.0, c_plus: 0.0, c_minus: 0.0, extent: 0.2 };
        assert!(flat.validate().is_err());
    }

    #[test]
    fn mixed_exponents_take_the_maximum() {
        let mut spec = TableSpec::machta3();
        spec.cusps[1].spec.beta = 2.5;
        // arcs no longer meet the changed caps exactly; let the builder place them
        for a in &mut spec.arcs {
            a.center = None;
            a.radius = 1.5;
        }
        let t = BilliardTable::build(&spec).unwrap();
        assert_eq!(t.gamma_max(), 2.0 / 3.0);
        assert_eq!(t.max_cusps(), vec![0, 2]);
    }

    #[test]
    fn text_round_trip() {
        let spec = TableSpec::machta3();
        let back = TableSpec::parse(&spec.to_text()).unwrap();
        assert_eq!(spec, back);
        let t = BilliardTable::build(&back).unwrap();
        assert_eq!(t.total_length(), BilliardTable::machta3().total_length());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = TableSpec::parse("name = x\ncusp tip=0,1 axis_deg=-90 beta=3 c_plus=1 c_minus=1\n").unwrap_err();
        assert!(matches!(e, BilliardError::Parse { line: 2, .. }), "{e}");
        let e = TableSpec::parse("arc radius=1\n").unwrap_err();
        assert!(matches!(e, BilliardError::Parse { line: 1, .. }));
        let e = TableSpec::parse("wall x=1\n").unwrap_err();
        assert!(matches!(e, BilliardError::Parse { .. }));
    }

    #[test]
    fn arcs_off_their_endpoints_are_rejected() {
        let mut spec = TableSpec::machta3();
        spec.arcs[0].radius *= 1.01;
        assert!(BilliardTable::build(&spec).is_err());
        let mut spec = TableSpec::machta3();
        spec.arcs[2].span = Some(1.0);
        assert!(BilliardTable::build(&spec).is_err());
    }

    #[test]
    fn crossing_boundaries_are_rejected() {
        // a very large radius without a centre bows the arc far into the table
        let mut spec = TableSpec::machta3();
        spec.arcs[0].center = None;
        spec.arcs[0].radius = 0.87;
        assert!(BilliardTable::build(&spec).is_err());
    }

    #[test]
    fn cap_arclength_inverse() {
        let t = BilliardTable::machta3();
        let f = &t.cusps[0];
        for x in [1e-9, 1e-3, 0.05, 0.2] {
            let s = f.cap_arclength(Side::Plus, x);
            assert!(s >= x);
            assert!((f.cap_x_at(Side::Plus, s) - x).abs() < 1e-15);
        }
        // ∫_0^0.2 sqrt(1 + t^4) dt by series: 0.2 + 0.2^5/10 - 0.2^9/72 + ...
        let s = f.cap_arclength(Side::Minus, 0.2);
        let series = 0.2 + 0.2f64.powi(5) / 10.0 - 0.2f64.powi(9) / 72.0 + 0.2f64.powi(13) / 208.0;
        assert!((s - series).abs() < 1e-12);
    }

    #[test]
    fn point_lookup_is_consistent() {
        let t = BilliardTable::machta3();
        for k in 0..200 {
            let r = t.total_length() * k as f64 / 200.0;
            let idx = t.piece_at(r);
            let w = t.param_of(idx, r - t.pieces[idx].r0);
            assert!((t.r_of(idx, w) - r).abs() < 1e-12, "r = {r}");
        }
    }
}
