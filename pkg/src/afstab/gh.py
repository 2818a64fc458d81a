"""The coordinate map u = (u^1, u^2, u^3): distortion, gradient flows,
and the small-mass stability sweep.

Pointed Gromov-Hausdorff distance itself is never computed (the
correspondence search is infeasible); instead the two quantities that
bound it are measured: the sampled-pair distortion of u on a geodesic
ball, and one-sided coverage of the Euclidean ball by the image of the
three-step gradient-flow construction.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import LeftDomain, NoConvergence
from .geodesy import (DistanceField, distance_batch, local_distance,
                      mean_value_pick, SCORE_FLOOR)
from .geometry import MetricChart
from .harmonic import HarmonicTriple
from .seeding import rng_for


@dataclass
class DistortionReport:
    r: float
    n_pairs: int
    max_defect: float
    defect_p50: float
    defect_p90: float
    defect_p99: float
    ortho_l1: float
    image_hausdorff: float      # filled by the flow stage; nan until then
    n_failed_pairs: int

    def to_json_dict(self):
        return {k: getattr(self, k) for k in
                ("r", "n_pairs", "max_defect", "defect_p50", "defect_p90",
                 "defect_p99", "ortho_l1", "image_hausdorff", "n_failed_pairs")}


def sample_geodesic_ball(chart: MetricChart, triple: HarmonicTriple, r: float,
                         n_points: int, seed: int, label: str = "ball"):
    """Seeded points of the geodesic r-ball around the base point.

    Rejection sampling from the chart-Euclidean r-ball followed by the
    geodesic filter via shooting distances from p; returns (points,
    distances to p).
    """
    p = np.asarray(chart.base_point, float)
    rng = rng_for(seed, label)
    pts = []
    dists = []
    budget = 12
    while len(pts) < n_points and budget > 0:
        need = max(8, int(1.3 * (n_points - len(pts))))
        dirs = rng.normal(size=(need, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = r * rng.uniform(size=need) ** (1.0 / 3.0)
        cands = p + dirs * radii[:, None]
        cands = cands[np.all(np.abs(cands) <= triple.grid.halfwidth - 2 * triple.grid.h,
                             axis=1)]
        if len(cands) == 0:
            budget -= 1
            continue
        d, _, _, conv = distance_batch(chart, np.broadcast_to(p, cands.shape), cands)
        good = conv & (d <= r)
        pts.extend(cands[good])
        dists.extend(d[good])
        budget -= 1
    if len(pts) < n_points:
        raise NoConvergence(f"geodesic-ball sampling stalled at {len(pts)}/{n_points}")
    return np.array(pts[:n_points]), np.array(dists[:n_points])


def gh_distortion(chart: MetricChart, triple: HarmonicTriple, r: float,
                  n_pairs: int, seed: int,
                  dist_field: DistanceField | None = None) -> DistortionReport:
    """Sampled distortion of the map u over pairs in the geodesic r-ball.

    Per-pair defect |d(x, y) - |u(x) - u(y)||; pairs whose two-point solve
    fails are excluded and counted (they must stay under 1% in acceptance
    runs).  ortho_l1 is the cell integral over the ball of
    sum_ij |<grad u^i, grad u^j> - delta^ij|.
    """
    pts, _ = sample_geodesic_ball(chart, triple, r, 2 * n_pairs, seed,
                                  label=f"distort-{r}")
    xs, ys = pts[:n_pairs], pts[n_pairs:]
    d, _, _, conv = distance_batch(chart, xs, ys)
    u_xs = triple.u_map(xs)
    u_ys = triple.u_map(ys)
    defects = np.abs(d - np.linalg.norm(u_xs - u_ys, axis=1))
    defects = defects[conv]
    n_failed = int(np.sum(~conv))
    if len(defects) == 0:
        raise NoConvergence("every distortion pair failed to converge")
    quant = np.percentile(np.sort(defects), [50.0, 90.0, 99.0])

    grid = triple.grid
    nodes = grid.points()
    p = np.asarray(chart.base_point, float)
    if dist_field is not None:
        node_d = dist_field.at(nodes.reshape(-1, 3)).reshape(nodes.shape[:-1])
    else:
        node_d = np.linalg.norm(nodes - p, axis=-1) * chart.conformal_factor(nodes) ** 2
    in_ball = (node_d <= r) & ~triple.excluded
    total = np.zeros(in_ball.shape)
    for i in range(3):
        for j in range(3):
            total += np.abs(triple.gram(i, j) - (1.0 if i == j else 0.0))
    ortho_l1 = float(np.sum(total[in_ball] * triple.volume_weights()[in_ball]))
    return DistortionReport(r=float(r), n_pairs=int(n_pairs),
                            max_defect=float(np.max(defects)),
                            defect_p50=float(quant[0]), defect_p90=float(quant[1]),
                            defect_p99=float(quant[2]), ortho_l1=ortho_l1,
                            image_hausdorff=float("nan"), n_failed_pairs=n_failed)


# ---------------------------------------------------------------------------
# gradient flows


@dataclass
class FlowTrace:
    start: tuple
    times: tuple                 # flow times per axis, in axis order 1, 2, 3
    picked: tuple                # the three mean-value-picked intermediates
    segment_ends: tuple          # endpoints of the three flow legs
    end: tuple
    u_error: float
    u_error_vec: tuple
    displacements: tuple         # geodesic d(picked_j, segment_end_j) per leg

    def to_polyline_dict(self):
        return {"start": list(self.start), "times": list(self.times),
                "picked": [list(p) for p in self.picked],
                "segment_ends": [list(p) for p in self.segment_ends],
                "end": list(self.end), "u_error": self.u_error}


def _flow_rhs(triple: HarmonicTriple, axis: int, sign: float):
    interp = triple.grad_interp(axis)

    def rhs(t, x):
        return sign * interp(x)

    return rhs


def _flow_batch(triple: HarmonicTriple, axis: int, starts, t: float, n_steps: int):
    """Fixed-step RK4 flow of many seeds through the interpolated gradient."""
    interp = triple.grad_interp(axis)
    sign = 1.0 if t >= 0 else -1.0
    dt = abs(t) / n_steps
    x = np.array(starts, float, copy=True)
    samples = [x.copy()]
    lim = triple.grid.halfwidth - 2 * triple.grid.h

    def f(q):
        return sign * interp(np.clip(q, -lim, lim))

    for _ in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        samples.append(x.copy())
    return x, np.stack(samples, axis=1)


def gradient_flow_step(chart: MetricChart, triple: HarmonicTriple, start, axis: int,
                       t: float, rho: float, seed: int, r_limit: float,
                       d_p_start: float = 0.0, n_mv_samples: int = 8):
    """One mean-value-perturbed leg of the gradient flow of u^axis.

    Checks the ball-budget precondition d(p, start) + grad_sup |t| + rho
    < r_limit, picks the start y* in B_rho(start) scoring the
    flow-integrated frame-orthonormality defect, then integrates
    dx/ds = grad u^axis with an adaptive solver.  Returns
    (y*, end, u_error_vec) with u_error_vec = u(end) - u(y*) - t e_axis.
    """
    start = np.asarray(start, float)
    gsup = triple.grad_sup
    if d_p_start + gsup * abs(t) + rho >= r_limit:
        raise ValueError("flow step violates its ball budget: "
                         f"{d_p_start:.3f} + {gsup:.3f}*{abs(t):.3f} + {rho:.3f} "
                         f">= {r_limit:.3f}")
    defect_interp = triple.gram_defect_interp()
    n_score_steps = max(24, int(8 * abs(t) / triple.grid.h))

    if abs(t) < 1e-14:
        y_star = start.copy()
        return y_star, y_star.copy(), triple.u_map(y_star) * 0.0

    def score(cands):
        _, samples = _flow_batch(triple, axis, cands, t, n_score_steps)
        lim = triple.grid.halfwidth - 2 * triple.grid.h
        vals = defect_interp(np.clip(samples.reshape(-1, 3), -lim, lim))
        vals = vals.reshape(samples.shape[:2])
        scores = np.trapezoid(vals, axis=1) * (abs(t) / n_score_steps)
        return np.where(scores < SCORE_FLOOR, 0.0, scores)

    y_star, _ = mean_value_pick(chart, start, rho, score, n_mv_samples, seed,
                                label=f"flow-{axis}")
    sign = 1.0 if t >= 0 else -1.0
    lim = triple.grid.halfwidth - 2 * triple.grid.h

    def exit_event(s, x):
        return lim - np.max(np.abs(x))
    exit_event.terminal = True

    sol = solve_ivp(_flow_rhs(triple, axis, sign), (0.0, abs(t)), y_star,
                    method="RK45", rtol=1e-10, atol=1e-12, events=exit_event)
    if sol.status == 1 or not sol.success:
        raise LeftDomain(f"gradient flow exited the usable grid box (axis {axis})")
    end = sol.y[:, -1]
    e_j = np.zeros(3)
    e_j[axis] = 1.0
    u_err = triple.u_map(end) - triple.u_map(y_star) - t * e_j
    return y_star, end, u_err


def reach_point(chart: MetricChart, triple: HarmonicTriple, target, rho: float,
                seed: int, margin_factor: float = 0.05) -> FlowTrace:
    """Three-leg gradient-flow construction aiming u at a Euclidean target.

    Starting from the base point, flows along grad u^1, u^2, u^3 for times
    equal to the target components (mean-value-perturbing each leg start);
    u_error is |u(end) - target|.  The target ball radius must leave the
    heuristic margin grad_sup * margin_factor * rho.
    """
    target = np.asarray(target, float)
    gsup = triple.grad_sup
    rho_ball = float(np.linalg.norm(target)) + gsup * margin_factor * rho
    r_limit = 3.0 * (gsup + 1.0) * max(rho_ball, rho, 1.0)
    p = np.asarray(chart.base_point, float)
    current = p.copy()
    d_p_current = 0.0
    picked = []
    seg_ends = []
    displacements = []
    for axis in range(3):
        t_axis = float(target[axis])
        y_star, end, _ = gradient_flow_step(chart, triple, current, axis, t_axis,
                                            rho, seed + 7 * axis, r_limit,
                                            d_p_start=d_p_current)
        picked.append(tuple(y_star))
        seg_ends.append(tuple(end))
        if abs(t_axis) < 1e-14:
            displacements.append(0.0)
        else:
            d_leg, _, _, conv = distance_batch(chart, y_star[None], end[None])
            displacements.append(float(d_leg[0]) if conv[0]
                                 else float(local_distance(chart, y_star, end)))
        current = end
        d_pc, _, _, convp = distance_batch(chart, p[None], current[None])
        d_p_current = float(d_pc[0]) if convp[0] else float(local_distance(chart, p, current))
    u_end = triple.u_map(current)
    err_vec = u_end - target
    return FlowTrace(start=tuple(p), times=tuple(float(t) for t in target),
                     picked=tuple(picked), segment_ends=tuple(seg_ends),
                     end=tuple(current), u_error=float(np.linalg.norm(err_vec)),
                     u_error_vec=tuple(err_vec),
                     displacements=tuple(displacements))


def flow_coverage(chart: MetricChart, triple: HarmonicTriple, radius: float,
                  n_targets: int, seed: int, rho: float | None = None):
    """Flow traces toward seeded targets in the Euclidean ball of `radius`.

    Returns (traces, image_hausdorff) where image_hausdorff is the largest
    |u(w) - target| over the batch: the one-sided Hausdorff gap between the
    sampled Euclidean ball and the reached image points.
    """
    rng = rng_for(seed, "flow-targets")
    if rho is None:
        rho = 2.0 * triple.grid.h
    dirs = rng.normal(size=(n_targets, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * rng.uniform(size=n_targets) ** (1.0 / 3.0)
    targets = dirs * radii[:, None]
    traces = []
    for k, tgt in enumerate(targets):
        traces.append(reach_point(chart, triple, tgt, rho, seed + 1000 + k))
    hausdorff = max(tr.u_error for tr in traces)
    return traces, float(hausdorff)


# ---------------------------------------------------------------------------
# the stability sweep


@dataclass
class StabilityReport:
    family: str
    parameter: float
    N: int
    R_out: float
    mass: float = float("nan")
    hessian_l2: float = float("nan")
    grad_sup: float = float("nan")
    ortho_l1: float = float("nan")
    defect_p50: float = float("nan")
    defect_p90: float = float("nan")
    defect_max: float = float("nan")
    image_hausdorff: float = float("nan")
    flow_err_max: float = float("nan")
    pythagorean_median: float = float("nan")
    psi_l1: float = float("nan")
    ricci_kappa: float = float("nan")
    scalar_min: float = float("nan")
    af_ok: bool = False
    slack: float = float("nan")
    rhs_integral: float = float("nan")
    cheng_yau: float = float("nan")
    residual_norms: tuple = ()
    stages: dict = field(default_factory=dict)

    def csv_row(self):
        cols = ("mass", "hessian_l2", "grad_sup", "ortho_l1", "defect_p50",
                "defect_p90", "defect_max", "image_hausdorff", "flow_err_max")
        return ([self.family, repr(float(self.parameter)), self.N,
                 repr(float(self.R_out))]
                + [repr(float(getattr(self, c))) for c in cols])

    def to_json_dict(self):
        d = {k: getattr(self, k) for k in
             ("family", "parameter", "N", "R_out", "mass", "hessian_l2",
              "grad_sup", "ortho_l1", "defect_p50", "defect_p90", "defect_max",
              "image_hausdorff", "flow_err_max", "pythagorean_median", "psi_l1",
              "ricci_kappa", "scalar_min", "af_ok", "slack", "rhs_integral",
              "cheng_yau")}
        d["residual_norms"] = list(self.residual_norms)
        d["stages"] = dict(self.stages)
        return d


MASTER_CSV_HEADER = ["family", "m", "N", "R_out", "mass", "hessian_l2",
                     "grad_sup", "ortho_l1", "defect_p50", "defect_p90",
                     "defect_max", "image_hausdorff", "flow_err_max"]


def write_master_csv(path, reports):
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MASTER_CSV_HEADER)
        for rep in reports:
            writer.writerow(rep.csv_row())


def write_stability_json(path, report: StabilityReport):
    with open(path, "w") as f:
        json.dump(report.to_json_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
