use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geom::{wrap_angle, Vec2};
use super::table::{BilliardTable, CuspFrame, PieceKind, Side};
use super::BilliardError;
use crate::roots::{newton_bisect, RootOptions};

/// Collisions with `θ` closer than this to `0` or `π` abort the orbit.
pub const GRAZING_TOL: f64 = 1e-6;
/// Cusp collisions closer than this to the tip abort the orbit.
pub const PRECISION_CUTOFF: f64 = 1e-13;
// flights shorter than this to an arc are the junction the ray starts from
const MIN_ARC_FLIGHT: f64 = 1e-12;

/// Point of the collision space: boundary coordinate `r ∈ [0, |∂Q|)` and
/// angle `θ ∈ (0, π)` between the outgoing velocity and the tangent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionState {
    pub r: f64,
    pub theta: f64,
}

/// Reverses the velocity: `θ ↦ π - θ`.
pub fn flip(s: CollisionState) -> CollisionState {
    CollisionState {
        r: s.r,
        theta: PI - s.theta,
    }
}

/// Collision state with the boundary piece and its internal parameter kept
/// exactly, so that deep cusp bounces do not lose precision through `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Site {
    pub piece: usize,
    pub w: f64,
    pub theta: f64,
}

impl BilliardTable {
    pub(crate) fn site(&self, s: &CollisionState) -> Site {
        let idx = self.piece_at(s.r);
        let u = s.r.rem_euclid(self.total_length()) - self.pieces[idx].r0;
        Site {
            piece: idx,
            w: self.param_of(idx, u),
            theta: s.theta,
        }
    }

    pub(crate) fn state(&self, s: &Site) -> CollisionState {
        CollisionState {
            r: self.r_of(s.piece, s.w),
            theta: s.theta,
        }
    }

    pub(crate) fn cusp_of(&self, s: &Site) -> Option<usize> {
        match self.pieces[s.piece].kind {
            PieceKind::Cap { cusp, .. } => Some(cusp),
            PieceKind::Arc { .. } => None,
        }
    }

    /// Index of the cusp neighbourhood containing the state, if any.
    pub fn cusp_at(&self, s: &CollisionState) -> Option<usize> {
        self.cusp_of(&self.site(s))
    }
}

/// Outgoing unit velocity `cos θ T + sin θ N`.
pub fn velocity(table: &BilliardTable, s: &CollisionState) -> Vec2 {
    let site = table.site(s);
    let (_, t, _) = table.frame_at(site.piece, site.w);
    t * s.theta.cos() + t.rot90() * s.theta.sin()
}

fn check_angle(theta: f64) -> Result<(), BilliardError> {
    if theta > GRAZING_TOL && theta < PI - GRAZING_TOL {
        Ok(())
    } else {
        Err(BilliardError::Grazing { theta })
    }
}

/// The billiard collision map: flies along the outgoing ray to the next
/// boundary point and reflects specularly.
pub fn collide(table: &BilliardTable, s: &CollisionState) -> Result<CollisionState, BilliardError> {
    let next = collide_site(table, &table.site(s))?;
    Ok(table.state(&next))
}

struct Hit {
    t: f64,
    piece: usize,
    w: f64,
}

pub(crate) fn collide_site(table: &BilliardTable, s: &Site) -> Result<Site, BilliardError> {
    check_angle(s.theta)?;
    let (p, tan, _) = table.frame_at(s.piece, s.w);
    let (cos, sin) = (s.theta.cos(), s.theta.sin());
    let d = tan * cos + tan.rot90() * sin;
    let start_cusp = table.cusp_of(s);

    // ray in each cusp's local frame; exact for the cusp we start in
    let local: Vec<(Vec2, Vec2)> = table
        .cusps
        .iter()
        .enumerate()
        .map(|(k, f)| match (start_cusp, table.pieces[s.piece].kind) {
            (Some(c), PieceKind::Cap { side, .. }) if c == k => {
                let o = f.cap_point_local(side, s.w);
                let tl = f.cap_tangent_local(side, s.w);
                (o, tl * cos + tl.rot90() * sin)
            }
            _ => (f.to_local(p), f.dir_to_local(d)),
        })
        .collect();

    first_hit(table, p, d, &local, Some(s.piece)).map_err(|e| match e {
        BilliardError::NoIntersection { .. } => BilliardError::NoIntersection {
            r: table.r_of(s.piece, s.w),
        },
        e => e,
    })
}

/// First boundary hit of the ray `p + t d`. `local` holds the ray in each
/// cusp frame; `from` is the piece the ray leaves, if any.
fn first_hit(table: &BilliardTable, p: Vec2, d: Vec2, local: &[(Vec2, Vec2)], from: Option<usize>) -> Result<Site, BilliardError> {
    let mut best: Option<Hit> = None;
    for (i, piece) in table.pieces.iter().enumerate() {
        let hit = match piece.kind {
            PieceKind::Arc {
                center,
                radius,
                start_angle,
                clockwise,
            } => arc_hit(p, d, center, radius, start_angle, clockwise, piece.len, Some(i) == from),
            PieceKind::Cap { cusp, side } => {
                if Some(i) == from {
                    continue;
                }
                let (o, dl) = local[cusp];
                cap_hit(&table.cusps[cusp], side, o, dl)?
            }
        };
        if let Some((t, w)) = hit {
            if best.as_ref().is_none_or(|b| t < b.t) {
                best = Some(Hit { t, piece: i, w });
            }
        }
    }
    let hit = best.ok_or(BilliardError::NoIntersection { r: f64::NAN })?;

    let theta = match table.pieces[hit.piece].kind {
        PieceKind::Cap { cusp, side } => {
            if hit.w < PRECISION_CUTOFF {
                return Err(BilliardError::PrecisionExhausted { cusp, x: hit.w });
            }
            let f = &table.cusps[cusp];
            let dl = local[cusp].1;
            let tl = f.cap_tangent_local(side, hit.w);
            (-dl.dot(tl.rot90())).atan2(dl.dot(tl))
        }
        PieceKind::Arc { .. } => {
            let (_, t, _) = table.frame_at(hit.piece, hit.w);
            (-d.dot(t.rot90())).atan2(d.dot(t))
        }
    };
    check_angle(theta)?;
    Ok(Site {
        piece: hit.piece,
        w: hit.w,
        theta,
    })
}

/// First collision of a flight launched from the interior point `origin`
/// in direction `dir`.
pub fn shoot(table: &BilliardTable, origin: [f64; 2], dir: [f64; 2]) -> Result<CollisionState, BilliardError> {
    let p = Vec2::new(origin[0], origin[1]);
    let d = Vec2::new(dir[0], dir[1]).unit();
    let local: Vec<(Vec2, Vec2)> = table.cusps.iter().map(|f| (f.to_local(p), f.dir_to_local(d))).collect();
    let site = first_hit(table, p, d, &local, None)?;
    Ok(table.state(&site))
}

/// First admissible intersection of the ray with a circular arc, as
/// `(flight length, arclength along the arc)`.
#[allow(clippy::too_many_arguments)]
fn arc_hit(
    p: Vec2,
    d: Vec2,
    center: Vec2,
    radius: f64,
    start_angle: f64,
    clockwise: bool,
    len: f64,
    same_piece: bool,
) -> Option<(f64, f64)> {
    let oc = p - center;
    let b = d.dot(oc);
    let roots: [f64; 2] = if same_piece {
        // the ray starts on the circle; the other root is -2b
        [-2.0 * b, f64::NAN]
    } else {
        let c = oc.dot(oc) - radius * radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // stable pair of roots of t^2 + 2bt + c
        let q = -(b + b.signum() * sq);
        let (t1, t2) = if q != 0.0 { (q, c / q) } else { (0.0, 0.0) };
        [t1.min(t2), t1.max(t2)]
    };
    let full = std::f64::consts::TAU * radius;
    for t in roots {
        if !(t > MIN_ARC_FLIGHT) {
            continue;
        }
        let q = p + d * t - center;
        let om = q.angle();
        let mut u = if clockwise {
            wrap_angle(start_angle - om)
        } else {
            wrap_angle(om - start_angle)
        } * radius;
        if u > len {
            if full - u < 1e-12 * radius.max(1.0) {
                u = 0.0;
            } else if u - len < 1e-12 * radius.max(1.0) {
                u = len;
            } else {
                continue;
            }
        }
        return Some((t, u));
    }
    None
}

/// First crossing of the ray `o + t d` (cusp-local coordinates) through
/// the cap on `side`, as `(flight length, x)`.
///
/// With `g(t) = σ y(t) - C x(t)^β / β`, the table is `g < 0` near the cap,
/// and `g` is concave in `t` wherever `x(t) ≥ 0`, so the first crossing lies
/// on the increasing part before the maximum.
fn cap_hit(f: &CuspFrame, side: Side, o: Vec2, d: Vec2) -> Result<Option<(f64, f64)>, BilliardError> {
    let spec = f.spec;
    let c = spec.coefficient(side);
    let sigma = side.sign();
    let beta = spec.beta;
    let eps = spec.extent;

    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    if d.x == 0.0 {
        if !(0.0..=eps).contains(&o.x) {
            return Ok(None);
        }
    } else {
        let t0 = -o.x / d.x;
        let t1 = (eps - o.x) / d.x;
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    if !(lo < hi) {
        return Ok(None);
    }
    let x_at = |t: f64| (o.x + t * d.x).clamp(0.0, eps);
    let g = |t: f64| sigma * (o.y + t * d.y) - c * x_at(t).powf(beta) / beta;
    let dg = |t: f64| sigma * d.y - c * x_at(t).powf(beta - 1.0) * d.x;

    let t_max = if dg(lo) <= 0.0 {
        lo
    } else if dg(hi) >= 0.0 {
        hi
    } else {
        // g' = 0 at x^{β-1} = σ d_y / (C d_x)
        let xs = (sigma * d.y / (c * d.x)).powf(1.0 / (beta - 1.0));
        ((xs - o.x) / d.x).clamp(lo, hi)
    };
    let g_max = g(t_max);
    if g_max < 0.0 {
        return Ok(None);
    }
    let g_lo = g(lo);
    if g_lo >= 0.0 {
        // already beyond the cap where the ray enters the strip: this only
        // happens at the junction the ray starts from
        return Ok(if lo > 0.0 { Some((lo, x_at(lo))) } else { None });
    }
    let opts = RootOptions {
        abs_tol: 4.0 * f64::EPSILON * t_max.abs().max(f64::MIN_POSITIVE),
        max_iter: 200,
    };
    let t = newton_bisect(|t| (g(t), dg(t)), lo, t_max, opts)?;
    Ok(Some((t, x_at(t))))
}

/// Runs `n` collisions from `start`, feeding each new state to `visit`.
pub fn orbit<F: FnMut(&CollisionState)>(
    table: &BilliardTable,
    start: &CollisionState,
    n: u64,
    mut visit: F,
) -> Result<CollisionState, BilliardError> {
    let mut s = table.site(start);
    for _ in 0..n {
        s = collide_site(table, &s)?;
        visit(&table.state(&s));
    }
    Ok(table.state(&s))
}

/// `θ` with density `sin θ / 2`, `r` uniform: a draw from the invariant measure.
pub fn sinetheta_sample<R: Rng + ?Sized>(table: &BilliardTable, rng: &mut R) -> CollisionState {
    let r = rng.gen::<f64>() * table.total_length();
    let u: f64 = rng.gen();
    CollisionState {
        r,
        theta: (1.0 - 2.0 * u).acos(),
    }
}

/// Whether fewer than `k0` consecutive collisions in one cusp neighbourhood
/// follow `s` before the orbit leaves that cusp.
pub fn in_inducing_set(table: &BilliardTable, s: &CollisionState, k0: u64) -> Result<bool, BilliardError> {
    let mut site = collide_site(table, &table.site(s))?;
    let Some(cusp) = table.cusp_of(&site) else {
        return Ok(true);
    };
    let mut run = 1u64;
    while run < k0 {
        site = collide_site(table, &site)?;
        if table.cusp_of(&site) != Some(cusp) {
            return Ok(true);
        }
        run += 1;
    }
    Ok(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InducedReturn {
    /// First return time to the inducing set.
    pub r: u64,
    pub state: CollisionState,
}

/// Orbit of the induced map, keeping the collisions already computed
/// while deciding membership of the inducing set.
#[derive(Debug, Clone)]
pub struct InducedOrbit<'a> {
    table: &'a BilliardTable,
    k0: u64,
    cap: u64,
    current: Site,
    /// `ahead[j]` is the `(j + 1)`-th collision after `current`.
    ahead: VecDeque<Site>,
}

impl<'a> InducedOrbit<'a> {
    /// Fails with [`BilliardError::NotInInducingSet`] if `start` is not in `M`.
    pub fn new(table: &'a BilliardTable, start: &CollisionState, k0: u64, cap: u64) -> Result<Self, BilliardError> {
        if k0 == 0 {
            return Err(BilliardError::OutOfRange("K0 must be at least 1".into()));
        }
        let mut orbit = Self {
            table,
            k0,
            cap: cap.max(k0 + 2),
            current: table.site(start),
            ahead: VecDeque::new(),
        };
        if orbit.run_after(0, k0)? >= k0 {
            return Err(BilliardError::NotInInducingSet);
        }
        Ok(orbit)
    }

    pub fn state(&self) -> CollisionState {
        self.table.state(&self.current)
    }

    fn fill(&mut self, len: usize) -> Result<(), BilliardError> {
        while self.ahead.len() < len {
            if self.ahead.len() as u64 >= self.cap {
                return Err(BilliardError::ReturnCapExceeded { cap: self.cap });
            }
            let from = *self.ahead.back().unwrap_or(&self.current);
            self.ahead.push_back(collide_site(self.table, &from)?);
        }
        Ok(())
    }

    /// Length of the run of same-cusp collisions starting at `ahead[j]`,
    /// saturating at `limit`.
    fn run_after(&mut self, j: usize, limit: u64) -> Result<u64, BilliardError> {
        self.fill(j + 1)?;
        let Some(cusp) = self.table.cusp_of(&self.ahead[j]) else {
            return Ok(0);
        };
        let mut len = 1usize;
        loop {
            if len as u64 >= limit {
                return Ok(len as u64);
            }
            self.fill(j + len + 1)?;
            if self.table.cusp_of(&self.ahead[j + len]) != Some(cusp) {
                return Ok(len as u64);
            }
            len += 1;
        }
    }

    /// Advances to the next visit of `M`; `visit` sees the states
    /// `s, T s, …, T^{R-1} s` whose observable values make up the induced sum.
    pub fn next_return<F: FnMut(&CollisionState)>(&mut self, mut visit: F) -> Result<InducedReturn, BilliardError> {
        // T s ∈ M unless a run of at least K0 cusp collisions starts at T^2 s
        let run = self.run_after(1, u64::MAX)?;
        let r = if run < self.k0 { 1 } else { run - self.k0 + 2 };
        for _ in 0..r {
            visit(&self.table.state(&self.current));
            self.current = self.ahead.pop_front().expect("filled");
        }
        Ok(InducedReturn { r, state: self.state() })
    }
}

/// One step of the induced map `F = T^R` on `M`.
pub fn induced_step(table: &BilliardTable, s: &CollisionState, k0: u64) -> Result<InducedReturn, BilliardError> {
    InducedOrbit::new(table, s, k0, u64::MAX)?.next_return(|_| {})
}
