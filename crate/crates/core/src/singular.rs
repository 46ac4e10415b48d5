//! Neck surgery and the assembly of surgical flow spacetimes.
//!
//! A component flows until its termination; when it stops at a cylindrical
//! neck, the neck interval is excised, both severed ends are capped, and the
//! flow continues on the children. The full history — every component's
//! slices, the surgery events, and the genealogy — is assembled into a
//! [`SingularSpacetime`].
//!
//! Determinism and reflection discipline: the combinatorial record (node
//! indices, component ids, times) is authoritative, and coordinate read-outs
//! (arclength positions) are derived from it per slice. Right-hand children
//! are built by running the left-hand builder on index-reversed data and
//! reversing the result, so a mirrored run produces bitwise-mirrored children
//! and, after the induced relabelling of ids, a bitwise-identical spacetime.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{evolve_with, neck_scan};
use crate::geometry::interp::{CubicSpline, MonotoneCubic};
use crate::geometry::stencil::symmetric_sum;
use crate::{
    FlowParams, FlowTrajectory, IsometryElement, NeckCandidate, ProfileGrid, Real, StopRules,
    Termination, Topology, WarpedMetric,
};

/// Slope bound `|psi_s|` inside the neck window of the cylindricity test.
pub const NECK_SLOPE_TOL: Real = 0.2;

/// After surgery every child must satisfy `max |K| <= FACTOR / rho_surg^2`.
pub const CAP_CURVATURE_FACTOR: Real = 10.0;

/// Hard ceiling on the number of components a single run may create.
pub const MAX_COMPONENTS: usize = 64;

/// Smallest node count of a resampled child grid.
const MIN_CHILD_NODES: usize = 101;

/// A severed side whose trunk would keep fewer interior nodes than this is a
/// cap-scale sliver: it is absorbed into the excision instead of becoming a
/// child.
const MIN_TRUNK_NODES: usize = 2;

/// Radius of the exact circular-arc cap tip, in units of the boundary radius.
///
/// The tip is an analytic round arc `a sin((L - u)/a)`, so the new pole
/// closes with `psi_ss = 0` exactly and the tip curvature is `1/a^2`
/// independent of the grid — a Hermite tip would leave `psi_ss != 0` at the
/// pole and a discrete curvature spike growing like `1/h` under refinement.
/// Keeping the tip lean (radius well under the boundary radius) also keeps
/// the cap volume safely below the excised volume, which the strict
/// volume-decrease audit demands.
const CAP_TIP_RATIO: Real = 0.45;

/// Identifies a component; the root is 0 and children get consecutive ids in
/// creation order (left to right within an event).
pub type ComponentId = usize;

/// Thresholds and shape parameters for neck surgery.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SurgeryParams {
    /// Absolute trigger radius: a cylindrical minimum below it is operated on.
    pub rho_surg: Real,
    /// Half-width of the excised interval in units of the neck radius.
    pub excision_margin: Real,
    /// Cap length in units of the boundary radius at the cut.
    pub cap_blend: Real,
    /// Bound on `|k1| / k2` for a minimum to count as cylindrical.
    pub cylindricity_tol: Real,
}

impl SurgeryParams {
    /// Default parameters for a given initial metric: trigger at 2% of the
    /// initial maximum radius, excision margin 2, cap blend 3.
    pub fn for_initial(metric: &WarpedMetric) -> Self {
        Self::with_trigger(0.02 * metric.max_psi())
    }

    pub fn with_trigger(rho_surg: Real) -> Self {
        Self {
            rho_surg,
            excision_margin: 2.0,
            cap_blend: 3.0,
            cylindricity_tol: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_surg.is_finite() && self.rho_surg > 0.0) {
            return Err(Error::InvalidParameter(
                "surgery trigger radius must be positive".into(),
            ));
        }
        if !(self.excision_margin.is_finite() && self.excision_margin >= 2.0) {
            return Err(Error::InvalidParameter(
                "excision margin must be at least 2 neck radii".into(),
            ));
        }
        if !(self.cap_blend.is_finite() && self.cap_blend >= 1.0) {
            return Err(Error::InvalidParameter(
                "cap blend must be at least 1 boundary radius".into(),
            ));
        }
        if !(self.cylindricity_tol > 0.0 && self.cylindricity_tol < 1.0) {
            return Err(Error::InvalidParameter(
                "cylindricity tolerance must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One registered surgery.
#[derive(Debug, Clone)]
pub struct SurgeryEvent {
    pub time: Real,
    pub parent: ComponentId,
    /// Cut nodes `(left, right)` in the parent's final slice; the excised
    /// interval is everything strictly between them. Authoritative record.
    pub neck_nodes: (usize, usize),
    /// Arclength positions of the cut nodes in the parent's final slice
    /// (derived from `neck_nodes`, for read-outs).
    pub neck_interval: (Real, Real),
    /// Radius at the neck minimum when the trigger fired.
    pub neck_radius: Real,
    /// Children in left-to-right order (1 when a sliver side was absorbed or
    /// the parent was a circle, else 2).
    pub children: Vec<ComponentId>,
}

/// How a component's own flow ended.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentFate {
    /// Shrank below the extinction threshold.
    Extinct,
    /// Stopped at a neck and was operated on.
    Surgered {
        /// Index into the spacetime's event list.
        event: usize,
    },
    /// Reached the run horizon while still alive.
    ReachedHorizon,
    /// Stopped moving (steady state within tolerance).
    Converged,
    /// Numerical breakdown without a recognized neck; siblings continue.
    Unresolved { reason: String },
}

/// A component's full record: where it came from and how it evolved.
#[derive(Debug, Clone)]
pub struct ComponentRecord {
    pub id: ComponentId,
    pub parent: Option<ComponentId>,
    pub birth_time: Real,
    pub trajectory: FlowTrajectory,
    pub fate: ComponentFate,
}

impl ComponentRecord {
    pub fn birth_slice(&self) -> &WarpedMetric {
        &self.trajectory.slices[0]
    }

    pub fn final_slice(&self) -> &WarpedMetric {
        self.trajectory.final_slice()
    }
}

/// A time sample of the whole spacetime: every component with a stored
/// snapshot at exactly this time.
#[derive(Debug, Clone)]
pub struct SpacetimeSlice {
    pub time: Real,
    /// Entries sorted by component id.
    pub entries: Vec<(ComponentId, WarpedMetric)>,
}

/// The assembled record of a flow-with-surgery run: time-ordered slices,
/// surgery events, genealogy, and per-component fates.
#[derive(Debug, Clone)]
pub struct SingularSpacetime {
    pub slices: Vec<SpacetimeSlice>,
    pub events: Vec<SurgeryEvent>,
    /// Parent id to children ids; leaves map to an empty list.
    pub genealogy: BTreeMap<ComponentId, Vec<ComponentId>>,
    /// Indexed by component id.
    pub components: Vec<ComponentRecord>,
    pub params: SurgeryParams,
}

/// Result of checking one isometry against a spacetime.
#[derive(Debug, Clone)]
pub struct IsometryReport {
    pub is_automorphism: bool,
    /// Largest per-slice metric distance between the mapped spacetime and the
    /// original (0 when the pipeline is bitwise equivariant).
    pub max_drift: Real,
    /// Describes the first structural incompatibility, if any.
    pub failure: Option<String>,
}

/// Looks for an operable neck: the smallest interior local minimum below the
/// trigger radius that passes the cylindricity and slope tests over a window
/// of width twice the minimum radius.
pub fn detect_neck(
    metric: &WarpedMetric,
    params: &SurgeryParams,
) -> Result<Option<NeckCandidate>> {
    params.validate()?;
    if !(params.rho_surg > metric.psi_floor()) {
        return Err(Error::InvalidParameter(format!(
            "trigger radius {} is not above the degeneracy floor {}",
            params.rho_surg,
            metric.psi_floor()
        )));
    }
    neck_scan(
        metric,
        params.rho_surg,
        params.cylindricity_tol,
        NECK_SLOPE_TOL,
    )
}

/// Cut nodes `(left, right)` bracketing the excised interval: the walk
/// accumulates arclength outward from the neck minimum until it covers
/// `excision_margin * psi_min` on each side, stopping at the last interior
/// node next to a pole.
///
/// Walking outward (rather than reading a global arclength table) makes the
/// selection bitwise mirror-stable: a mirrored metric accumulates the same
/// spacings in the same order.
fn excision_nodes(
    metric: &WarpedMetric,
    neck: &NeckCandidate,
    params: &SurgeryParams,
) -> Result<(usize, usize)> {
    let n = metric.n();
    let h = metric.arc_spacings();
    let half_width = params.excision_margin * neck.psi_min;
    match metric.topology() {
        Topology::ClosedIntervalWithPoles => {
            if neck.node == 0 || neck.node >= n - 1 {
                return Err(Error::MalformedNeck("neck minimum at a pole".into()));
            }
            let mut lo = neck.node;
            let mut acc = 0.0;
            while lo > 1 && acc < half_width {
                acc += h[lo - 1];
                lo -= 1;
            }
            let mut hi = neck.node;
            acc = 0.0;
            while hi < n - 2 && acc < half_width {
                acc += h[hi];
                hi += 1;
            }
            Ok((lo, hi))
        }
        Topology::Periodic => {
            // At most just under half the circle on each side, so the
            // remaining arc keeps a usable trunk.
            let max_steps = n / 2 - 1;
            let mut lo = neck.node;
            let mut acc = 0.0;
            let mut steps = 0;
            while steps < max_steps && acc < half_width {
                lo = (lo + n - 1) % n;
                acc += h[lo];
                steps += 1;
            }
            if acc < half_width {
                return Err(Error::MalformedNeck(
                    "excision would cover more than half the circle".into(),
                ));
            }
            let mut hi = neck.node;
            acc = 0.0;
            steps = 0;
            while steps < max_steps && acc < half_width {
                acc += h[hi];
                hi = (hi + 1) % n;
                steps += 1;
            }
            if acc < half_width {
                return Err(Error::MalformedNeck(
                    "excision would cover more than half the circle".into(),
                ));
            }
            if lo == hi {
                return Err(Error::MalformedNeck(
                    "excision would cover the whole circle".into(),
                ));
            }
            Ok((lo, hi))
        }
    }
}

/// Cap profile: radius from `psi_b` at the cut down to 0 at the new pole,
/// over total length `blend * psi_b`.
///
/// Two pieces, C^1 at their junction: a monotone entry blend matching the
/// cut slope `d_b` and flattening out, then the exact circular-arc tip (see
/// [`CAP_TIP_RATIO`]). `eval(u)` expects `u` in `[0, blend * psi_b]`.
struct CapProfile {
    entry: MonotoneCubic<Real>,
    /// Junction point between entry and tip.
    u_join: Real,
    /// Tip arc radius.
    tip_radius: Real,
    /// Total cap length.
    len: Real,
}

impl CapProfile {
    fn build(psi_b: Real, cut_slope: Real, blend: Real) -> Result<CapProfile> {
        let len = blend * psi_b;
        let tip_radius = CAP_TIP_RATIO * psi_b;
        let tip_len = std::f64::consts::FRAC_PI_2 * tip_radius;
        let u_join = len - tip_len;
        if !(u_join > 0.0) {
            return Err(Error::MalformedNeck(
                "cap blend too short for the round tip".into(),
            ));
        }
        // Entry knots descend from psi_b to the tip radius along a
        // cosine-squared ramp, which starts and ends flat; the monotone
        // interpolant with pinned end slopes (cut slope, 0) keeps the blend
        // monotone and C^1 at both ends.
        let fractions = [0.0, 0.4, 0.7, 1.0];
        let u: Vec<Real> = fractions.iter().map(|&t| u_join * t).collect();
        let v: Vec<Real> = fractions
            .iter()
            .map(|&t| {
                let ramp = (std::f64::consts::FRAC_PI_2 * t).cos().powi(2);
                tip_radius + (psi_b - tip_radius) * ramp
            })
            .collect();
        // The cap descends; a positive cut slope (pathological shoulder)
        // would break monotonicity, so it is clamped to flat entry.
        let d0 = cut_slope.min(0.0);
        let entry = MonotoneCubic::with_end_slopes(u, v, Some(d0), Some(0.0))?;
        Ok(CapProfile {
            entry,
            u_join,
            tip_radius,
            len,
        })
    }

    fn eval(&self, u: Real) -> Real {
        if u < self.u_join {
            self.entry.eval(u)
        } else {
            let angle = (self.len - u).max(0.0) / self.tip_radius;
            self.tip_radius * angle.sin()
        }
    }
}

/// Builds the child kept on the low-index side of a cut, from oriented data:
/// `h` are the parent's arclength spacings and `psi` its radius profile, both
/// read left-to-right in the chosen orientation; the trunk keeps nodes
/// `0..=i_cut` and the cap is attached beyond the cut. `cut_slope` is the
/// radius slope at the cut in the same orientation.
///
/// The child is parametrized by arclength on a fresh uniform grid (constant
/// lapse equal to its total length), with node count proportional to that
/// length at the parent's node density.
fn build_capped_side(
    h: &[Real],
    psi: &[Real],
    i_cut: usize,
    cut_slope: Real,
    params: &SurgeryParams,
    time: Real,
) -> Result<WarpedMetric> {
    // Reduced in reflection-invariant order so both orientations derive the
    // same node density to the last bit.
    let parent_total: Real = symmetric_sum(h);
    let nodes_per_unit = (h.len() + 1) as Real / parent_total;

    let mut s = Vec::with_capacity(i_cut + 1);
    s.push(0.0);
    for j in 0..i_cut {
        s.push(s[j] + h[j]);
    }
    let s_cut = s[i_cut];
    let psi_b = psi[i_cut];
    let cap = CapProfile::build(psi_b, cut_slope, params.cap_blend)?;
    let total = s_cut + cap.len;
    let trunk = CubicSpline::natural(s, psi[..=i_cut].to_vec())?;

    let mut n_c = ((nodes_per_unit * total).ceil() as usize).max(MIN_CHILD_NODES);
    if n_c % 2 == 0 {
        n_c += 1;
    }
    let grid = Arc::new(ProfileGrid::uniform(n_c, Topology::ClosedIntervalWithPoles)?);
    let mut psi_c = Vec::with_capacity(n_c);
    for i in 0..n_c {
        let u = total * grid.x()[i];
        psi_c.push(if u <= s_cut {
            trunk.eval(u)
        } else {
            cap.eval(u - s_cut)
        });
    }
    psi_c[0] = 0.0;
    psi_c[n_c - 1] = 0.0;
    let phi_c = vec![total; n_c];
    WarpedMetric::from_profiles(grid, phi_c, psi_c, time)
}

/// Builds the single child of a circle parent: the remaining arc from the
/// right cut around to the left cut, capped at both ends. Data are passed
/// already rotated so the arc is contiguous (`psi[0]` at the right cut).
fn build_double_capped(
    h_arc: &[Real],
    psi_arc: &[Real],
    slope_start: Real,
    slope_end: Real,
    nodes_per_unit: Real,
    params: &SurgeryParams,
    time: Real,
) -> Result<WarpedMetric> {
    let mut s = Vec::with_capacity(psi_arc.len());
    s.push(0.0);
    for (j, &dh) in h_arc.iter().enumerate() {
        s.push(s[j] + dh);
    }
    let arc_len = *s.last().unwrap();
    // The start cap descends toward the start cut when traversed from the
    // pole, so it is built as a falling cap on the reversed orientation.
    let cap_start = CapProfile::build(psi_arc[0], -slope_start, params.cap_blend)?;
    let cap_end = CapProfile::build(
        *psi_arc.last().unwrap(),
        slope_end,
        params.cap_blend,
    )?;
    let trunk = CubicSpline::natural(s, psi_arc.to_vec())?;
    let total = cap_start.len + arc_len + cap_end.len;

    let mut n_c = ((nodes_per_unit * total).ceil() as usize).max(MIN_CHILD_NODES);
    if n_c % 2 == 0 {
        n_c += 1;
    }
    let grid = Arc::new(ProfileGrid::uniform(n_c, Topology::ClosedIntervalWithPoles)?);
    let mut psi_c = Vec::with_capacity(n_c);
    for i in 0..n_c {
        let u = total * grid.x()[i];
        psi_c.push(if u < cap_start.len {
            cap_start.eval(cap_start.len - u)
        } else if u <= cap_start.len + arc_len {
            trunk.eval(u - cap_start.len)
        } else {
            cap_end.eval(u - cap_start.len - arc_len)
        });
    }
    psi_c[0] = 0.0;
    psi_c[n_c - 1] = 0.0;
    let phi_c = vec![total; n_c];
    WarpedMetric::from_profiles(grid, phi_c, psi_c, time)
}

/// Excises the neck and caps the severed ends, returning the children in
/// left-to-right order.
///
/// A closed parent yields two children, or one when a severed side next to a
/// pole is a cap-scale sliver (it is absorbed into the excision); a circle
/// parent yields one closed child. Children are valid closed metrics on
/// fresh uniform grids, and their total volume is checked to be strictly
/// below the parent's.
pub fn perform_surgery(
    metric: &WarpedMetric,
    neck: &NeckCandidate,
    params: &SurgeryParams,
) -> Result<Vec<WarpedMetric>> {
    params.validate()?;
    let n = metric.n();
    let time = metric.time();
    let (i_lo, i_hi) = excision_nodes(metric, neck, params)?;
    let h = metric.arc_spacings();
    let psi = metric.psi();
    let (psi_s, _) = metric.derivatives_of(psi)?;

    let children = match metric.topology() {
        Topology::ClosedIntervalWithPoles => {
            let keep_left = i_lo >= MIN_TRUNK_NODES;
            let keep_right = i_hi + MIN_TRUNK_NODES <= n - 1;
            if !keep_left && !keep_right {
                return Err(Error::MalformedNeck(
                    "both severed sides are cap-scale slivers".into(),
                ));
            }
            let mut children = Vec::new();
            if keep_left {
                children.push(build_capped_side(&h, psi, i_lo, psi_s[i_lo], params, time)?);
            }
            if keep_right {
                // Mirror, build as a left child, mirror back: the mirrored
                // arithmetic is bitwise identical to what a mirrored run's
                // left-child builder performs.
                let h_rev: Vec<Real> = h.iter().rev().copied().collect();
                let psi_rev: Vec<Real> = psi.iter().rev().copied().collect();
                let built = build_capped_side(
                    &h_rev,
                    &psi_rev,
                    n - 1 - i_hi,
                    -psi_s[i_hi],
                    params,
                    time,
                )?;
                children.push(built.apply_isometry(IsometryElement::Reflection)?);
            }
            children
        }
        Topology::Periodic => {
            let total: Real = symmetric_sum(&h);
            let nodes_per_unit = n as Real / total;
            let mut arc_nodes = Vec::new();
            let mut j = i_hi;
            loop {
                arc_nodes.push(j);
                if j == i_lo {
                    break;
                }
                j = (j + 1) % n;
            }
            let psi_arc: Vec<Real> = arc_nodes.iter().map(|&k| psi[k]).collect();
            let h_arc: Vec<Real> = arc_nodes[..arc_nodes.len() - 1]
                .iter()
                .map(|&k| h[k])
                .collect();
            vec![build_double_capped(
                &h_arc,
                &psi_arc,
                psi_s[i_hi],
                psi_s[i_lo],
                nodes_per_unit,
                params,
                time,
            )?]
        }
    };

    let parent_volume = metric.volume()?;
    let mut child_volume = 0.0;
    for c in &children {
        child_volume += c.volume()?;
    }
    if !(child_volume < parent_volume) {
        return Err(Error::MalformedNeck(format!(
            "surgery failed to remove volume: {parent_volume} -> {child_volume}"
        )));
    }
    Ok(children)
}

/// Evolves the initial metric through any number of surgeries until every
/// component is extinct (or otherwise finished) or the horizon is reached,
/// and assembles the full record.
///
/// Components are processed in creation order, which makes the run fully
/// deterministic; an unresolved breakdown is recorded on its component
/// without stopping siblings. The assembled spacetime is audited against its
/// structural invariants before being returned.
pub fn run_singular_flow(
    initial: &WarpedMetric,
    fp: &FlowParams,
    sp: &SurgeryParams,
) -> Result<SingularSpacetime> {
    fp.validate()?;
    sp.validate()?;
    if !(sp.rho_surg > initial.psi_floor()) {
        return Err(Error::InvalidParameter(
            "surgery trigger radius is not above the degeneracy floor".into(),
        ));
    }
    let closed = initial.topology() == Topology::ClosedIntervalWithPoles;
    let initial_max = if closed {
        initial.max_interior_psi()
    } else {
        initial.max_psi()
    };
    let extinction_abs = 1e-3 * initial_max;

    let mut components: Vec<ComponentRecord> = Vec::new();
    let mut events: Vec<SurgeryEvent> = Vec::new();
    let mut worklist: VecDeque<(ComponentId, Option<ComponentId>, WarpedMetric)> =
        VecDeque::new();
    worklist.push_back((0, None, initial.clone()));
    let mut next_id: ComponentId = 1;

    while let Some((id, parent, birth)) = worklist.pop_front() {
        debug_assert_eq!(id, components.len());
        let birth_time = birth.time();
        let single_slice = |m: WarpedMetric| FlowTrajectory {
            slices: vec![m],
            termination: Termination::Unresolved {
                reason: "not integrated".into(),
            },
            diagnostics: Vec::new(),
        };
        if id >= MAX_COMPONENTS {
            components.push(ComponentRecord {
                id,
                parent,
                birth_time,
                trajectory: single_slice(birth),
                fate: ComponentFate::Unresolved {
                    reason: format!("component budget of {MAX_COMPONENTS} exhausted"),
                },
            });
            continue;
        }
        let rules = StopRules {
            extinction_threshold: Some(extinction_abs),
            singularity_threshold: Some(sp.rho_surg),
            cylindricity_tol: sp.cylindricity_tol,
            slope_tol: NECK_SLOPE_TOL,
            ..StopRules::default()
        };
        let trajectory = match evolve_with(&birth, fp, &rules) {
            Ok(t) => t,
            Err(e) => {
                components.push(ComponentRecord {
                    id,
                    parent,
                    birth_time,
                    trajectory: single_slice(birth),
                    fate: ComponentFate::Unresolved {
                        reason: format!("integration failed: {e}"),
                    },
                });
                continue;
            }
        };
        let fate = match &trajectory.termination {
            Termination::Extinction => ComponentFate::Extinct,
            Termination::MaxTime => ComponentFate::ReachedHorizon,
            Termination::Converged => ComponentFate::Converged,
            Termination::Unresolved { reason } => ComponentFate::Unresolved {
                reason: reason.clone(),
            },
            Termination::NeckSingularity { node } => {
                let final_m = trajectory.final_slice();
                let operated = neck_scan(
                    final_m,
                    sp.rho_surg,
                    sp.cylindricity_tol,
                    NECK_SLOPE_TOL,
                )
                .ok()
                .flatten()
                .ok_or(())
                .and_then(|neck| {
                    debug_assert_eq!(neck.node, *node);
                    let cut = excision_nodes(final_m, &neck, sp).map_err(|_| ())?;
                    let children = perform_surgery(final_m, &neck, sp).map_err(|_| ())?;
                    Ok((neck, cut, children))
                });
                match operated {
                    Ok((neck, cut, children)) => {
                        let time = final_m.time();
                        let s_tab = final_m.arclength();
                        let ids: Vec<ComponentId> = children
                            .iter()
                            .map(|_| {
                                let c = next_id;
                                next_id += 1;
                                c
                            })
                            .collect();
                        events.push(SurgeryEvent {
                            time,
                            parent: id,
                            neck_nodes: cut,
                            neck_interval: (s_tab[cut.0], s_tab[cut.1]),
                            neck_radius: neck.psi_min,
                            children: ids.clone(),
                        });
                        for (cid, cm) in ids.iter().zip(children) {
                            worklist.push_back((*cid, Some(id), cm));
                        }
                        ComponentFate::Surgered {
                            event: events.len() - 1,
                        }
                    }
                    Err(()) => {
                        // Keep the reason specific: re-run the fallible steps
                        // once more for the message.
                        let reason = match neck_scan(
                            final_m,
                            sp.rho_surg,
                            sp.cylindricity_tol,
                            NECK_SLOPE_TOL,
                        ) {
                            Ok(Some(neck)) => match perform_surgery(final_m, &neck, sp) {
                                Ok(_) => "surgery bookkeeping failed".to_string(),
                                Err(e) => format!("surgery failed: {e}"),
                            },
                            Ok(None) => "neck trigger did not re-derive".to_string(),
                            Err(e) => format!("neck re-derivation failed: {e}"),
                        };
                        ComponentFate::Unresolved { reason }
                    }
                }
            }
        };
        components.push(ComponentRecord {
            id,
            parent,
            birth_time,
            trajectory,
            fate,
        });
    }

    let genealogy = build_genealogy(&components, &events);
    let slices = assemble_slices(&components);
    let st = SingularSpacetime {
        slices,
        events,
        genealogy,
        components,
        params: *sp,
    };
    st.verify()?;
    Ok(st)
}

fn build_genealogy(
    components: &[ComponentRecord],
    events: &[SurgeryEvent],
) -> BTreeMap<ComponentId, Vec<ComponentId>> {
    let mut g: BTreeMap<ComponentId, Vec<ComponentId>> = components
        .iter()
        .map(|r| (r.id, Vec::new()))
        .collect();
    for ev in events {
        g.insert(ev.parent, ev.children.clone());
    }
    g
}

fn assemble_slices(components: &[ComponentRecord]) -> Vec<SpacetimeSlice> {
    let mut tagged: Vec<(Real, ComponentId, &WarpedMetric)> = Vec::new();
    for rec in components {
        for m in &rec.trajectory.slices {
            tagged.push((m.time(), rec.id, m));
        }
    }
    tagged.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("slice times are finite")
            .then(a.1.cmp(&b.1))
    });
    let mut slices: Vec<SpacetimeSlice> = Vec::new();
    for (t, id, m) in tagged {
        match slices.last_mut() {
            Some(s) if s.time == t => s.entries.push((id, m.clone())),
            _ => slices.push(SpacetimeSlice {
                time: t,
                entries: vec![(id, m.clone())],
            }),
        }
    }
    slices
}

impl SingularSpacetime {
    pub fn root_slice(&self) -> &WarpedMetric {
        self.components[0].birth_slice()
    }

    /// Ancestor chain from `id` up to the root (inclusive), or `None` for an
    /// unknown id.
    pub fn trace_to_root(&self, id: ComponentId) -> Option<Vec<ComponentId>> {
        if id >= self.components.len() {
            return None;
        }
        let mut chain = vec![id];
        let mut cur = id;
        while let Some(p) = self.components[cur].parent {
            chain.push(p);
            cur = p;
        }
        (cur == 0).then_some(chain)
    }

    /// Components that were not operated on: the leaves of the genealogy,
    /// with their final slices.
    pub fn final_components(&self) -> Vec<&ComponentRecord> {
        self.components
            .iter()
            .filter(|r| !matches!(r.fate, ComponentFate::Surgered { .. }))
            .collect()
    }

    /// Audits the structural invariants; returns the first violation.
    ///
    /// Checked: ids are indices and parents precede children; slice times
    /// strictly increase with entries sorted by id; every id traces to the
    /// root; children are born exactly at their event's time and appear in
    /// the event-time slice (so the component count changes only at events
    /// and at component ends); each event has 1 or 2 children, its cut nodes
    /// are interior, surgery strictly decreased total volume, and every
    /// child's birth curvature respects the cap bound
    /// [`CAP_CURVATURE_FACTOR`]` / rho_surg^2`.
    pub fn verify(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::SpacetimeInvariant(msg));
        if self.components.is_empty() {
            return fail("no components".into());
        }
        for (i, rec) in self.components.iter().enumerate() {
            if rec.id != i {
                return fail(format!("component {i} holds id {}", rec.id));
            }
            match rec.parent {
                None if i == 0 => {}
                Some(p) if p < i => {}
                _ => return fail(format!("component {i} has an invalid parent")),
            }
            if self.trace_to_root(rec.id).is_none() {
                return fail(format!("component {i} does not trace to the root"));
            }
            if rec.trajectory.slices.is_empty() {
                return fail(format!("component {i} has no slices"));
            }
        }
        for w in self.slices.windows(2) {
            if !(w[1].time > w[0].time) {
                return fail(format!(
                    "slice times not strictly increasing: {} then {}",
                    w[0].time, w[1].time
                ));
            }
        }
        for s in &self.slices {
            if s.entries.is_empty() {
                return fail(format!("empty slice at t = {}", s.time));
            }
            for w in s.entries.windows(2) {
                if w[1].0 <= w[0].0 {
                    return fail(format!("slice entries unsorted at t = {}", s.time));
                }
            }
        }
        let rho2 = self.params.rho_surg * self.params.rho_surg;
        for (k, ev) in self.events.iter().enumerate() {
            if ev.children.is_empty() || ev.children.len() > 2 {
                return fail(format!("event {k} has {} children", ev.children.len()));
            }
            let parent = match self.components.get(ev.parent) {
                Some(r) => r,
                None => return fail(format!("event {k} has unknown parent")),
            };
            if parent.fate != (ComponentFate::Surgered { event: k }) {
                return fail(format!("event {k} disagrees with its parent's fate"));
            }
            let pf = parent.final_slice();
            if pf.time() != ev.time {
                return fail(format!("event {k} time differs from parent final slice"));
            }
            let n = pf.n();
            if !(ev.neck_nodes.0 >= 1
                && ev.neck_nodes.0 < ev.neck_nodes.1
                && ev.neck_nodes.1 <= n - 2)
            {
                // On a circle the nodes wrap, so interiority only applies to
                // closed parents.
                if pf.topology() == Topology::ClosedIntervalWithPoles {
                    return fail(format!("event {k} cut nodes not interior"));
                }
            }
            let mut child_volume = 0.0;
            for &c in &ev.children {
                let child = match self.components.get(c) {
                    Some(r) => r,
                    None => return fail(format!("event {k} has unknown child {c}")),
                };
                if child.parent != Some(ev.parent) {
                    return fail(format!("child {c} does not point back to event {k}"));
                }
                if child.birth_time != ev.time {
                    return fail(format!("child {c} born away from event {k} time"));
                }
                let birth = child.birth_slice();
                child_volume += birth.volume().map_err(|e| {
                    Error::SpacetimeInvariant(format!("child {c} volume: {e}"))
                })?;
                let max_k = birth
                    .curvature()
                    .map_err(|e| {
                        Error::SpacetimeInvariant(format!("child {c} curvature: {e}"))
                    })?
                    .max_abs_sectional();
                if !(max_k <= CAP_CURVATURE_FACTOR / rho2) {
                    return fail(format!(
                        "child {c} birth curvature {max_k} exceeds {} / rho^2 = {}",
                        CAP_CURVATURE_FACTOR,
                        CAP_CURVATURE_FACTOR / rho2
                    ));
                }
                let slice_at = self
                    .slices
                    .iter()
                    .find(|s| s.time == ev.time)
                    .map(|s| s.entries.iter().any(|(eid, _)| *eid == c))
                    .unwrap_or(false);
                if !slice_at {
                    return fail(format!("child {c} missing from the event-time slice"));
                }
            }
            let parent_volume = pf.volume().map_err(|e| {
                Error::SpacetimeInvariant(format!("event {k} parent volume: {e}"))
            })?;
            if !(child_volume < parent_volume) {
                return fail(format!(
                    "event {k} did not decrease volume: {parent_volume} -> {child_volume}"
                ));
            }
        }
        // Births happen only at event times (or at the root): together with
        // the event checks above this pins topology change to events.
        let event_times: Vec<Real> = self.events.iter().map(|e| e.time).collect();
        for rec in &self.components[1..] {
            if !event_times.iter().any(|&t| t == rec.birth_time) {
                return fail(format!(
                    "component {} born at {} away from any event",
                    rec.id, rec.birth_time
                ));
            }
        }
        Ok(())
    }

    /// The spacetime a mirrored run would produce: every slice reflected,
    /// node records index-mapped, coordinate read-outs re-derived, and
    /// component ids relabelled the way a mirrored run would assign them
    /// (children swap left/right within each event, and descendants follow).
    pub fn reflected_image(&self) -> Result<SingularSpacetime> {
        let m = self.components.len();
        let events_by_parent: BTreeMap<ComponentId, usize> = self
            .events
            .iter()
            .enumerate()
            .map(|(k, e)| (e.parent, k))
            .collect();
        // Relabel: walk new ids in processing order; each component's
        // children get the next ids in the mirrored left-to-right order.
        let unset = usize::MAX;
        let mut fwd = vec![unset; m]; // old id -> new id
        let mut inv = vec![unset; m]; // new id -> old id
        fwd[0] = 0;
        inv[0] = 0;
        let mut next = 1;
        for new_id in 0..m {
            let old = inv[new_id];
            if old == unset {
                return Err(Error::SpacetimeInvariant(
                    "genealogy is not rooted".into(),
                ));
            }
            if let Some(&k) = events_by_parent.get(&old) {
                for &c in self.events[k].children.iter().rev() {
                    fwd[c] = next;
                    inv[next] = c;
                    next += 1;
                }
            }
        }

        let mut records: Vec<Option<ComponentRecord>> = vec![None; m];
        for rec in &self.components {
            let trajectory = reflect_trajectory(&rec.trajectory)?;
            records[fwd[rec.id]] = Some(ComponentRecord {
                id: fwd[rec.id],
                parent: rec.parent.map(|p| fwd[p]),
                birth_time: rec.birth_time,
                trajectory,
                fate: rec.fate.clone(), // event index fixed below
            });
        }
        let mut components: Vec<ComponentRecord> =
            records.into_iter().map(|r| r.expect("relabel is a bijection")).collect();

        // Events in the mirrored run's append order: parents are processed
        // in ascending (new) id order.
        let mut order: Vec<usize> = (0..self.events.len()).collect();
        order.sort_by_key(|&k| fwd[self.events[k].parent]);
        let mut event_index = vec![0usize; self.events.len()];
        let mut events = Vec::with_capacity(self.events.len());
        for (new_k, &old_k) in order.iter().enumerate() {
            event_index[old_k] = new_k;
            let old = &self.events[old_k];
            let parent_new = fwd[old.parent];
            let pf = components[parent_new].final_slice();
            let n = pf.n();
            let nodes = (n - 1 - old.neck_nodes.1, n - 1 - old.neck_nodes.0);
            let s_tab = pf.arclength();
            let mut children: Vec<ComponentId> =
                old.children.iter().rev().map(|&c| fwd[c]).collect();
            children.sort_unstable();
            events.push(SurgeryEvent {
                time: old.time,
                parent: parent_new,
                neck_nodes: nodes,
                neck_interval: (s_tab[nodes.0], s_tab[nodes.1]),
                neck_radius: old.neck_radius,
                children,
            });
        }
        for rec in &mut components {
            if let ComponentFate::Surgered { event } = &mut rec.fate {
                *event = event_index[*event];
            }
        }

        let genealogy = build_genealogy(&components, &events);
        let slices = assemble_slices(&components);
        Ok(SingularSpacetime {
            slices,
            events,
            genealogy,
            components,
            params: self.params,
        })
    }

    /// First bitwise difference from `other`, as a description, or `None`
    /// when the two records are identical to the last bit.
    pub fn first_difference(&self, other: &SingularSpacetime) -> Option<String> {
        fn ne(a: Real, b: Real) -> bool {
            a.to_bits() != b.to_bits()
        }
        fn metrics_differ(a: &WarpedMetric, b: &WarpedMetric) -> Option<String> {
            if a.n() != b.n() {
                return Some(format!("node counts {} vs {}", a.n(), b.n()));
            }
            if a.topology() != b.topology() {
                return Some("topologies differ".into());
            }
            if ne(a.time(), b.time()) {
                return Some(format!("times {} vs {}", a.time(), b.time()));
            }
            for i in 0..a.n() {
                if ne(a.grid().x()[i], b.grid().x()[i]) {
                    return Some(format!("grid node {i}"));
                }
                if ne(a.phi()[i], b.phi()[i]) {
                    return Some(format!("phi[{i}]: {} vs {}", a.phi()[i], b.phi()[i]));
                }
                if ne(a.psi()[i], b.psi()[i]) {
                    return Some(format!("psi[{i}]: {} vs {}", a.psi()[i], b.psi()[i]));
                }
            }
            None
        }

        if self.components.len() != other.components.len() {
            return Some(format!(
                "component counts {} vs {}",
                self.components.len(),
                other.components.len()
            ));
        }
        if self.events.len() != other.events.len() {
            return Some(format!(
                "event counts {} vs {}",
                self.events.len(),
                other.events.len()
            ));
        }
        for (a, b) in self.events.iter().zip(&other.events) {
            if ne(a.time, b.time)
                || a.parent != b.parent
                || a.neck_nodes != b.neck_nodes
                || ne(a.neck_interval.0, b.neck_interval.0)
                || ne(a.neck_interval.1, b.neck_interval.1)
                || ne(a.neck_radius, b.neck_radius)
                || a.children != b.children
            {
                return Some(format!("events differ: {a:?} vs {b:?}"));
            }
        }
        if self.genealogy != other.genealogy {
            return Some("genealogies differ".into());
        }
        for (a, b) in self.components.iter().zip(&other.components) {
            if a.parent != b.parent || ne(a.birth_time, b.birth_time) || a.fate != b.fate {
                return Some(format!("component {} header differs", a.id));
            }
            if a.trajectory.termination != b.trajectory.termination {
                return Some(format!(
                    "component {} termination {:?} vs {:?}",
                    a.id, a.trajectory.termination, b.trajectory.termination
                ));
            }
            if a.trajectory.slices.len() != b.trajectory.slices.len() {
                return Some(format!("component {} slice counts differ", a.id));
            }
            for (j, (sa, sb)) in a
                .trajectory
                .slices
                .iter()
                .zip(&b.trajectory.slices)
                .enumerate()
            {
                if let Some(why) = metrics_differ(sa, sb) {
                    return Some(format!("component {} slice {j}: {why}", a.id));
                }
            }
            if a.trajectory.diagnostics.len() != b.trajectory.diagnostics.len() {
                return Some(format!("component {} diagnostics counts differ", a.id));
            }
            for (j, (da, db)) in a
                .trajectory
                .diagnostics
                .iter()
                .zip(&b.trajectory.diagnostics)
                .enumerate()
            {
                if ne(da.t, db.t)
                    || ne(da.dt, db.dt)
                    || ne(da.max_curvature, db.max_curvature)
                    || ne(da.min_psi, db.min_psi)
                    || ne(da.volume, db.volume)
                {
                    return Some(format!("component {} diagnostics row {j} differs", a.id));
                }
            }
        }
        if self.slices.len() != other.slices.len() {
            return Some("assembled slice counts differ".into());
        }
        for (k, (a, b)) in self.slices.iter().zip(&other.slices).enumerate() {
            if ne(a.time, b.time) {
                return Some(format!("slice {k} times differ"));
            }
            if a.entries.len() != b.entries.len() {
                return Some(format!("slice {k} entry counts differ"));
            }
            for ((ia, ma), (ib, mb)) in a.entries.iter().zip(&b.entries) {
                if ia != ib {
                    return Some(format!("slice {k} ids {ia} vs {ib}"));
                }
                if let Some(why) = metrics_differ(ma, mb) {
                    return Some(format!("slice {k} component {ia}: {why}"));
                }
            }
        }
        None
    }
}

fn reflect_trajectory(t: &FlowTrajectory) -> Result<FlowTrajectory> {
    let mut slices = Vec::with_capacity(t.slices.len());
    for m in &t.slices {
        slices.push(m.apply_isometry(IsometryElement::Reflection)?);
    }
    let termination = match &t.termination {
        Termination::NeckSingularity { node } => Termination::NeckSingularity {
            node: t.final_slice().n() - 1 - node,
        },
        other => other.clone(),
    };
    // Diagnostics are reflection-invariant scalars (maxima, minima, and
    // symmetric-order quadrature), so they carry over bitwise.
    Ok(FlowTrajectory {
        slices,
        termination,
        diagnostics: t.diagnostics.clone(),
    })
}

/// Checks whether `a` extends to an automorphism of the spacetime: the
/// mapped spacetime (with the induced component relabelling) must match the
/// original slice for slice and event for event within `tol`.
///
/// The report carries the largest slice drift; structural mismatches (event
/// times, child counts, grids) are reported as failures rather than errors.
pub fn spacetime_isometry_check(
    st: &SingularSpacetime,
    a: IsometryElement,
    tol: Real,
) -> Result<IsometryReport> {
    if st.components.is_empty() {
        return Err(Error::Precondition("empty spacetime".into()));
    }
    let soft = |msg: String| {
        Ok(IsometryReport {
            is_automorphism: false,
            max_drift: Real::INFINITY,
            failure: Some(msg),
        })
    };
    let root = st.root_slice();
    let mapped_root = match root.apply_isometry(a) {
        Ok(m) => m,
        Err(e) => return soft(format!("isometry does not act on the root grid: {e}")),
    };
    let root_drift = crate::geometry::metric_distance(&mapped_root, root)?;
    if !(root_drift <= tol) {
        return soft(format!("root slice moves by {root_drift}"));
    }
    let image = match a {
        IsometryElement::Identity => st.clone(),
        IsometryElement::Reflection => match st.reflected_image() {
            Ok(im) => im,
            Err(e) => return soft(format!("no consistent relabelling: {e}")),
        },
    };

    if image.events.len() != st.events.len() {
        return soft("event counts differ".into());
    }
    for (k, (ea, eb)) in image.events.iter().zip(&st.events).enumerate() {
        if !((ea.time - eb.time).abs() <= tol)
            || ea.parent != eb.parent
            || ea.children != eb.children
            || ea.neck_nodes != eb.neck_nodes
        {
            return soft(format!("event {k} incompatible: {ea:?} vs {eb:?}"));
        }
    }
    if image.slices.len() != st.slices.len() {
        return soft("slice counts differ".into());
    }
    let mut max_drift: Real = 0.0;
    for (k, (sa, sb)) in image.slices.iter().zip(&st.slices).enumerate() {
        if !((sa.time - sb.time).abs() <= tol) {
            return soft(format!("slice {k} times {} vs {}", sa.time, sb.time));
        }
        if sa.entries.len() != sb.entries.len() {
            return soft(format!("slice {k} entry counts differ"));
        }
        for ((ia, ma), (ib, mb)) in sa.entries.iter().zip(&sb.entries) {
            if ia != ib {
                return soft(format!("slice {k} pairs component {ia} with {ib}"));
            }
            if ma.n() != mb.n() {
                return soft(format!("slice {k} component {ia} grids differ"));
            }
            let d = crate::geometry::metric_distance(ma, mb)?;
            max_drift = max_drift.max(d);
        }
    }
    Ok(IsometryReport {
        is_automorphism: max_drift <= tol,
        max_drift,
        failure: None,
    })
}
