//! Polytope of cutting planes approximating the relaxed lower-level
//! constraint `{h ≤ ε}`.
//!
//! Each plane reads `aᵀv + Σ_i b_iᵀy_i + cᵀz + κ ≤ 0`. Planes are generated
//! from the linearization of the convex function `h` at a violating point,
//! so they contain the whole sublevel set and cut the point off.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::dot;

/// Multipliers with `|λ| ≤ DUAL_ZERO_TOL` count as zero for plane removal.
pub const DUAL_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuttingPlane {
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub kappa: f64,
}

/// A point `(v, {y_i}, z)` of the master's variable space.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub v: &'a [f64],
    pub y: &'a [Vec<f64>],
    pub z: &'a [f64],
}

/// Partial derivatives of `h` at a point.
#[derive(Debug, Clone, Copy)]
pub struct HGrad<'a> {
    pub v: &'a [f64],
    pub y: &'a [Vec<f64>],
    pub z: &'a [f64],
}

impl CuttingPlane {
    /// `aᵀv + Σ b_iᵀy_i + cᵀz + κ` without shape checks.
    pub fn slack_unchecked(&self, p: Point<'_>) -> f64 {
        let by: f64 = self.b.iter().zip(p.y).map(|(b, y)| dot(b, y)).sum();
        dot(&self.a, p.v) + by + dot(&self.c, p.z) + self.kappa
    }

    fn check_point(&self, p: Point<'_>) -> Result<()> {
        check_len("plane a vs v", p.v.len(), self.a.len())?;
        check_len("plane b vs y worker count", p.y.len(), self.b.len())?;
        for (b, y) in self.b.iter().zip(p.y) {
            check_len("plane b_i vs y_i", y.len(), b.len())?;
        }
        check_len("plane c vs z", p.z.len(), self.c.len())
    }

    fn is_well_formed(&self) -> bool {
        let coeffs = || self.a.iter().chain(self.b.iter().flatten()).chain(&self.c);
        coeffs().chain(std::iter::once(&self.kappa)).all(|x| x.is_finite()) && coeffs().any(|x| *x != 0.0)
    }
}

/// Plane value at `point`; the point satisfies the plane iff this is ≤ 0.
pub fn plane_slack(plane: &CuttingPlane, point: Point<'_>) -> Result<f64> {
    plane.check_point(point)?;
    Ok(plane.slack_unchecked(point))
}

/// Valid cut at a point with `h(point) = h_val > ε`:
/// `h(p) + ∇h(p)ᵀ(w − p) ≤ ε`, i.e. `a = ∂h/∂v`, `b_i = ∂h/∂y_i`,
/// `c = ∂h/∂z` and `κ = h(p) − ε − ∇h(p)ᵀp`.
pub fn generate_plane(point: Point<'_>, h_val: f64, grad: HGrad<'_>, eps: f64) -> Result<CuttingPlane> {
    if !(h_val > eps) {
        return Err(Error::Logic(format!("cutting plane requested at a feasible point (h = {h_val}, eps = {eps})")));
    }
    check_len("dh/dv", grad.v.len(), point.v.len())?;
    check_len("dh/dy worker count", grad.y.len(), point.y.len())?;
    for (g, y) in grad.y.iter().zip(point.y) {
        check_len("dh/dy_i", g.len(), y.len())?;
    }
    check_len("dh/dz", grad.z.len(), point.z.len())?;
    let plane = CuttingPlane { a: grad.v.to_vec(), b: grad.y.to_vec(), c: grad.z.to_vec(), kappa: 0.0 };
    let linear = plane.slack_unchecked(point);
    let plane = CuttingPlane { kappa: h_val - eps - linear, ..plane };
    if !plane.is_well_formed() {
        return Err(Error::Divergence(format!("degenerate cutting plane (h = {h_val})")));
    }
    Ok(plane)
}

/// Ordered, capped collection of planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    planes: Vec<CuttingPlane>,
    cap: usize,
}

/// What [`add_if_violated`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    /// `h ≤ ε`; nothing to cut.
    Feasible,
    Added,
    /// The polytope was full; the plane at this index (with zero dual) was
    /// evicted to make room.
    Replaced { evicted: usize },
    /// Full and every dual is non-zero; the cut was discarded.
    SkippedAtCap,
}

impl AddOutcome {
    pub fn added(self) -> bool {
        matches!(self, Self::Added | Self::Replaced { .. })
    }
}

impl Polytope {
    pub fn new(cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Config("plane cap M must be >= 1".into()));
        }
        Ok(Self { planes: Vec::new(), cap })
    }

    pub fn planes(&self) -> &[CuttingPlane] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Slack of every plane at `point`.
    pub fn slacks(&self, point: Point<'_>) -> Vec<f64> {
        self.planes.iter().map(|p| p.slack_unchecked(point)).collect()
    }

    /// Appends without any rule; fails when full.
    pub fn push(&mut self, plane: CuttingPlane) -> Result<()> {
        if self.planes.len() >= self.cap {
            return Err(Error::Logic(format!("polytope already holds M = {} planes", self.cap)));
        }
        self.planes.push(plane);
        Ok(())
    }

    /// JSON array of `{a, b, c, kappa}` with every float at 17 significant digits.
    pub fn to_json(&self) -> String {
        fn num(x: f64) -> String {
            if x.is_finite() {
                format!("{x:.16e}")
            } else {
                "null".into()
            }
        }
        fn arr(xs: &[f64]) -> String {
            format!("[{}]", xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(","))
        }
        let items: Vec<String> = self
            .planes
            .iter()
            .map(|p| {
                let b: Vec<String> = p.b.iter().map(|bi| arr(bi)).collect();
                format!(
                    "{{\"a\":{},\"b\":[{}],\"c\":{},\"kappa\":{}}}",
                    arr(&p.a),
                    b.join(","),
                    arr(&p.c),
                    num(p.kappa)
                )
            })
            .collect();
        format!("[{}]", items.join(","))
    }

    /// Reads the array written by [`Polytope::to_json`].
    pub fn from_json(text: &str, cap: usize) -> Result<Self> {
        let planes: Vec<CuttingPlane> = serde_json::from_str(text)?;
        if planes.len() > cap {
            return Err(Error::Config(format!("{} planes exceed cap {cap}", planes.len())));
        }
        Ok(Self { planes, cap })
    }
}

fn is_zero(l: f64) -> bool {
    l.abs() <= DUAL_ZERO_TOL
}

/// Removes every plane whose multiplier is zero at both checkpoints.
/// Returns the surviving entries of `curr`, in order.
pub fn drop_inactive(polytope: &mut Polytope, prev: &[f64], curr: &[f64]) -> Result<Vec<f64>> {
    check_len("previous duals", prev.len(), polytope.len())?;
    check_len("current duals", curr.len(), polytope.len())?;
    let keep: Vec<bool> = prev.iter().zip(curr).map(|(p, c)| !(is_zero(*p) && is_zero(*c))).collect();
    let mut flags = keep.iter();
    polytope.planes.retain(|_| *flags.next().unwrap());
    Ok(curr.iter().zip(&keep).filter(|(_, k)| **k).map(|(c, _)| *c).collect())
}

/// Appends the cut at `point` (with a zero multiplier) when `h_val > ε`.
///
/// At the cap, the oldest plane with a zero multiplier is evicted first; if
/// every multiplier is non-zero the cut is dropped.
pub fn add_if_violated(
    polytope: &mut Polytope,
    duals: &mut Vec<f64>,
    point: Point<'_>,
    h_val: f64,
    grad: HGrad<'_>,
    eps: f64,
) -> Result<AddOutcome> {
    check_len("duals", duals.len(), polytope.len())?;
    if !(h_val > eps) {
        return Ok(AddOutcome::Feasible);
    }
    let plane = generate_plane(point, h_val, grad, eps)?;
    let mut outcome = AddOutcome::Added;
    if polytope.len() >= polytope.cap {
        match duals.iter().position(|l| is_zero(*l)) {
            Some(k) => {
                polytope.planes.remove(k);
                duals.remove(k);
                outcome = AddOutcome::Replaced { evicted: k };
            }
            None => {
                warn!("polytope at cap M = {} with all multipliers active; cut skipped", polytope.cap);
                return Ok(AddOutcome::SkippedAtCap);
            }
        }
    }
    polytope.planes.push(plane);
    duals.push(0.0);
    Ok(outcome)
}
