"""Harmonic coordinates on a truncated grid.

Solves div_g grad u = 0 for the three functions asymptotic to the chart
coordinates, with Dirichlet data on the truncation box, then produces the
g-gradient and covariant-Hessian fields the downstream diagnostics need.

The discretization is the conservative second-order scheme for
u -> (1/sqrt(det g)) d_a (sqrt(det g) g^ab d_b u) with coefficients
evaluated at cell-face midpoints.  Every family in the corpus is
conformally flat, so the face tensor sqrt(det g) g^ab reduces to the
diagonal phi^2 delta^ab; the assembled interior system is symmetric
positive definite, which is exactly the symmetry of the operator in the
sqrt(det g)-weighted inner product.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import cg

from .errors import ExcisedPoint, MismatchedChart, SolverDiverged
from .geometry import MetricChart
from .grid import Grid, ScalarGridField, gradient, second_derivatives
from .mass import sphere_rule

try:
    import pyamg
except ImportError:   # pragma: no cover - present in the supported env
    pyamg = None


def _offdiag_magnitude(chart: MetricChart):
    probe = np.array([[1.3, 0.7, -0.4], [3.0, 2.0, 1.0], [-2.0, 0.3, 0.9]])
    g = chart.metric(probe)
    return float(np.max(np.abs(g - np.einsum("...ab,ab->...ab", g, np.eye(3)))))


class LaplaceBeltrami:
    """Assembled divergence-form operator on a grid.

    Face coefficient arrays kx, ky, kz hold sqrt(det g) g^aa at the
    midpoints of the faces normal to each axis; weight holds the nodal
    sqrt(det g).  apply() evaluates the full operator including boundary
    nodes in the stencil; interior_system() returns the SPD matrix and the
    right-hand-side builder for Dirichlet data.
    """

    def __init__(self, chart: MetricChart, grid: Grid):
        if grid.halfwidth > chart.box_halfwidth:
            raise MismatchedChart("grid box exceeds the chart domain")
        if chart.excision_radius > 0.0:
            r = grid.radius()
            if np.any(r <= chart.excision_radius + grid.h):
                raise ExcisedPoint("grid stencils touch the excision region; "
                                   "shrink r_exc or refit the box")
        if _offdiag_magnitude(chart) > 1e-12:
            raise NotImplementedError("assembly supports diagonal (conformally flat) "
                                      "metrics only; every corpus family qualifies")
        self.chart = chart
        self.grid = grid
        N, h = grid.nodes, grid.h
        ax = grid.axis
        mid = 0.5 * (ax[:-1] + ax[1:])

        def face_phi2(a):
            axes = [ax, ax, ax]
            axes[a] = mid
            X, Y, Z = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([X, Y, Z], axis=-1)
            return chart.conformal_factor(pts) ** 2

        self.kx = face_phi2(0)   # (N-1, N, N)
        self.ky = face_phi2(1)
        self.kz = face_phi2(2)
        phi = chart.conformal_factor(grid.points())
        self.singular_node = None
        if chart.singular_at_origin:
            c = N // 2
            if abs(ax[c]) < 1e-12:
                self.singular_node = (c, c, c)
                # impute the puncture node so nodal caches stay finite
                phi[c, c, c] = (phi[c - 1, c, c] + phi[c + 1, c, c]
                                + phi[c, c - 1, c] + phi[c, c + 1, c]
                                + phi[c, c, c - 1] + phi[c, c, c + 1]) / 6.0
        self.weight = phi**6
        self.h = h

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Operator applied to nodal values; zero on the boundary ring."""
        out = np.zeros_like(values)
        h2 = self.h**2
        flux_x = self.kx * (values[1:] - values[:-1])
        flux_y = self.ky * (values[:, 1:] - values[:, :-1])
        flux_z = self.kz * (values[:, :, 1:] - values[:, :, :-1])
        out[1:-1, :, :] += flux_x[1:] - flux_x[:-1]
        out[:, 1:-1, :] += flux_y[:, 1:] - flux_y[:, :-1]
        out[:, :, 1:-1] += flux_z[:, :, 1:] - flux_z[:, :, :-1]
        out /= h2 * self.weight
        out[0] = out[-1] = 0.0
        out[:, 0] = out[:, -1] = 0.0
        out[:, :, 0] = out[:, :, -1] = 0.0
        return out

    def interior_system(self):
        """SPD matrix over interior nodes plus the boundary-coupling triplets.

        Returns (A, couplings) where couplings is a list of
        (interior_flat_index, boundary_multi_index, coefficient) encoded as
        arrays, so rhs = sum coefficient * u_boundary for any Dirichlet data.
        """
        N = self.grid.nodes
        n = N - 2
        idx = -np.ones((N, N, N), dtype=np.int64)
        inner = slice(1, N - 1)
        idx[inner, inner, inner] = np.arange(n**3).reshape(n, n, n)

        rows, cols, vals = [], [], []
        b_rows, b_index, b_vals = [], [], []
        diag = np.zeros(n**3)

        I, J, K = np.meshgrid(np.arange(1, N - 1), np.arange(1, N - 1),
                              np.arange(1, N - 1), indexing="ij")
        me = idx[I, J, K].ravel()

        neighbor_face = (
            ((-1, 0, 0), self.kx[I - 1, J, K]), ((1, 0, 0), self.kx[I, J, K]),
            ((0, -1, 0), self.ky[I, J - 1, K]), ((0, 1, 0), self.ky[I, J, K]),
            ((0, 0, -1), self.kz[I, J, K - 1]), ((0, 0, 1), self.kz[I, J, K]),
        )
        for (di, dj, dk), kf in neighbor_face:
            kf = kf.ravel()
            ni, nj, nk = I + di, J + dj, K + dk
            nb = idx[ni, nj, nk].ravel()
            diag += kf
            interior = nb >= 0
            rows.append(me[interior])
            cols.append(nb[interior])
            vals.append(-kf[interior])
            bd = ~interior
            b_rows.append(me[bd])
            b_index.append(np.stack([ni.ravel()[bd], nj.ravel()[bd], nk.ravel()[bd]], axis=1))
            b_vals.append(kf[bd])

        rows.append(me)
        cols.append(me)
        vals.append(diag)
        A = sps.csr_matrix((np.concatenate(vals),
                            (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n**3, n**3))
        couplings = (np.concatenate(b_rows),
                     np.concatenate(b_index, axis=0),
                     np.concatenate(b_vals))
        return A, couplings


def assemble_laplace_beltrami(chart: MetricChart, grid: Grid) -> LaplaceBeltrami:
    return LaplaceBeltrami(chart, grid)


def fit_monopole(chart: MetricChart, radius: float) -> float:
    """Coefficient a of phi ~ 1 + a/r from the sphere average at `radius`."""
    dirs, w = sphere_rule(16, 32)
    phi = chart.conformal_factor(radius * dirs)
    mean = float(np.sum(w * phi) / (4.0 * np.pi))
    return radius * (mean - 1.0)


def boundary_values(chart: MetricChart, grid: Grid, axis: int, bc: str) -> np.ndarray:
    """Dirichlet data on the whole node array (only the boundary ring is used).

    plain:      u = x^axis
    corrected:  u = x^axis (1 - a/|x|) with a the fitted monopole of phi,
                which matches the next order of the far-field expansion of
                the harmonic coordinate and shrinks the truncation error.
    """
    pts = grid.points()
    lin = pts[..., axis]
    if bc == "plain":
        return lin.copy()
    if bc == "corrected":
        a = fit_monopole(chart, grid.halfwidth)
        r = np.maximum(grid.radius(), 1e-300)
        return lin * (1.0 - a / r)
    raise ValueError(f"unknown boundary policy {bc!r}")


def solve_harmonic_coordinate(chart: MetricChart, grid: Grid, axis: int,
                              bc: str = "corrected", tol: float = 1e-11,
                              max_iter: int = 20000, method: str = "auto",
                              operator: LaplaceBeltrami | None = None) -> ScalarGridField:
    """Solve the Dirichlet problem for one harmonic coordinate.

    Iterates preconditioned conjugate gradients (Jacobi by default, an
    algebraic-multigrid V-cycle preconditioner when pyamg is available and
    method is "auto"/"amg") to relative residual <= tol, starting from the
    boundary profile extended inward, and raises SolverDiverged when the
    budget is exhausted.
    """
    if axis not in (0, 1, 2):
        raise ValueError("axis index must be 0, 1, or 2")
    op = operator if operator is not None else LaplaceBeltrami(chart, grid)
    N = grid.nodes
    n = N - 2
    A, (b_rows, b_index, b_vals) = op.interior_system()
    ub = boundary_values(chart, grid, axis, bc)
    rhs = np.zeros(n**3)
    np.add.at(rhs, b_rows, b_vals * ub[b_index[:, 0], b_index[:, 1], b_index[:, 2]])

    x0 = ub[1:-1, 1:-1, 1:-1].ravel().copy()
    if method == "auto":
        method = "amg" if (pyamg is not None and N >= 49) else "cg"
    if method == "amg" and pyamg is None:
        method = "cg"
    if method == "amg":
        ml = pyamg.smoothed_aggregation_solver(A, max_coarse=200)
        precond = ml.aspreconditioner(cycle="V")
    elif method == "cg":
        inv_diag = 1.0 / A.diagonal()
        precond = sps.linalg.LinearOperator(A.shape, matvec=lambda v: inv_diag * v)
    else:
        raise ValueError(f"unknown solver method {method!r}")

    sol, info = cg(A, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=precond)
    if info != 0:
        raise SolverDiverged(f"conjugate gradients returned info={info} "
                             f"(axis {axis}, N={N}, method={method})")
    values = ub.copy()
    values[1:-1, 1:-1, 1:-1] = sol.reshape(n, n, n)
    return ScalarGridField(grid, values)


# ---------------------------------------------------------------------------
# the solved triple with its derived fields


@dataclass
class HarmonicComponent:
    axis: int
    u: ScalarGridField
    du: np.ndarray        # (N, N, N, 3) coordinate partials
    grad: np.ndarray      # (N, N, N, 3) raised g-gradient components
    hess: np.ndarray      # (N, N, N, 3, 3) covariant Hessian
    residual_norm: float


@dataclass
class HarmonicTriple:
    chart: MetricChart
    grid: Grid
    components: tuple
    bc: str
    normalization: str
    phi: np.ndarray              # nodal conformal factor (puncture imputed)
    dphi: np.ndarray             # nodal conformal gradient
    excluded: np.ndarray         # nodes excluded from integral norms
    grad_sup: float = 0.0
    u_at_p: tuple = (0.0, 0.0, 0.0)
    _interpolators: dict = field(default_factory=dict, repr=False)

    @property
    def residual_norms(self):
        return tuple(c.residual_norm for c in self.components)

    def volume_weights(self) -> np.ndarray:
        """Riemannian cell volumes sqrt(det g) h^3 at nodes."""
        return self.phi**6 * self.grid.h**3

    def grad_norm(self, i: int) -> np.ndarray:
        """|grad u^i|_g field."""
        du = self.components[i].du
        return np.sqrt(np.einsum("...a,...a->...", du, du)) / self.phi**2

    def hess_norm2(self, i: int) -> np.ndarray:
        """|Hess u^i|_g^2 field (both indices raised with g^-1)."""
        H = self.components[i].hess
        return np.einsum("...ab,...ab->...", H, H) / self.phi**8

    def hess_norm_sum(self) -> np.ndarray:
        """sum_j |Hess u^j|_g, the segment-functional integrand."""
        return sum(np.sqrt(self.hess_norm2(j)) for j in range(3))

    def gram(self, i: int, j: int) -> np.ndarray:
        """<grad u^i, grad u^j>_g field."""
        return (np.einsum("...a,...a->...", self.components[i].du,
                          self.components[j].du) / self.phi**4)

    def u_interp(self, i: int):
        key = ("u", i)
        if key not in self._interpolators:
            self._interpolators[key] = self.components[i].u.interpolator()
        return self._interpolators[key]

    def grad_interp(self, i: int):
        from scipy.interpolate import RegularGridInterpolator
        key = ("grad", i)
        if key not in self._interpolators:
            ax = self.grid.axis
            self._interpolators[key] = RegularGridInterpolator(
                (ax, ax, ax), self.components[i].grad, method="linear",
                bounds_error=True)
        return self._interpolators[key]

    def hess_sum_interp(self):
        from scipy.interpolate import RegularGridInterpolator
        if "hess_sum" not in self._interpolators:
            ax = self.grid.axis
            self._interpolators["hess_sum"] = RegularGridInterpolator(
                (ax, ax, ax), self.hess_norm_sum(), method="linear",
                bounds_error=True)
        return self._interpolators["hess_sum"]

    def gram_defect_interp(self):
        """Interpolator for sum_ij |<grad u^i, grad u^j> - delta^ij|."""
        from scipy.interpolate import RegularGridInterpolator
        if "gram_defect" not in self._interpolators:
            ax = self.grid.axis
            total = np.zeros((self.grid.nodes,) * 3)
            for i in range(3):
                for j in range(3):
                    total += np.abs(self.gram(i, j) - (1.0 if i == j else 0.0))
            self._interpolators["gram_defect"] = RegularGridInterpolator(
                (ax, ax, ax), total, method="linear", bounds_error=True)
        return self._interpolators["gram_defect"]

    def u_map(self, pts) -> np.ndarray:
        """The map u = (u^1, u^2, u^3) at arbitrary points."""
        pts = np.asarray(pts, float)
        single = pts.ndim == 1
        out = np.stack([self.u_interp(i)(pts) for i in range(3)], axis=-1)
        return out[0] if single else out


def _finite_impute(arr: np.ndarray, node):
    """Replace the values at one node by the mean of its six neighbors."""
    i, j, k = node
    arr[i, j, k] = (arr[i + 1, j, k] + arr[i - 1, j, k] + arr[i, j + 1, k]
                    + arr[i, j - 1, k] + arr[i, j, k + 1] + arr[i, j, k - 1]) / 6.0


def build_component(chart: MetricChart, grid: Grid, axis: int, bc: str,
                    operator: LaplaceBeltrami, phi: np.ndarray, dphi: np.ndarray,
                    tol: float = 1e-11, method: str = "auto",
                    max_iter: int = 20000) -> HarmonicComponent:
    u = solve_harmonic_coordinate(chart, grid, axis, bc=bc, tol=tol,
                                  max_iter=max_iter, method=method, operator=operator)
    h = grid.h
    du = gradient(u.values, h)
    grad = du / phi[..., None] ** 4
    dd = second_derivatives(u.values, h)
    # covariant Hessian: dd_ab - Gamma^k_ab d_k u with the conformal Christoffels
    w = dphi / phi[..., None]
    duw = np.einsum("...a,...a->...", du, w)
    eye = np.eye(3)
    gamma_term = 2.0 * (du[..., :, None] * w[..., None, :]
                        + w[..., :, None] * du[..., None, :]
                        - eye * duw[..., None, None])
    hess = dd - gamma_term
    resid = operator.apply(u.values)
    inner = ~grid.margin_mask(2)
    if operator.singular_node is not None:
        inner[operator.singular_node] = False
    residual_norm = float(np.max(np.abs(resid[inner])))
    return HarmonicComponent(axis=axis, u=u, du=du, grad=grad, hess=hess,
                             residual_norm=residual_norm)


def _nodal_conformal_cache(chart: MetricChart, grid: Grid, operator: LaplaceBeltrami):
    pts = grid.points()
    phi, dphi, _ = chart.conformal_terms(pts)
    phi = phi.copy()
    dphi = dphi.copy()
    if operator.singular_node is not None:
        _finite_impute(phi, operator.singular_node)
        _finite_impute(dphi, operator.singular_node)
    return phi, dphi


def _assemble_triple(chart, grid, comps, bc, normalization, operator, phi, dphi):
    excluded = grid.margin_mask(2)
    if operator.singular_node is not None:
        excluded[operator.singular_node] = True
    triple = HarmonicTriple(chart=chart, grid=grid, components=tuple(comps), bc=bc,
                            normalization=normalization, phi=phi, dphi=dphi,
                            excluded=excluded)
    if normalization == "point":
        p = np.asarray(chart.base_point, float)
        offsets = [float(triple.u_interp(i)(p)[0]) for i in range(3)]
    elif normalization == "annulus":
        r = grid.radius()
        shell = (r >= 0.5 * grid.halfwidth) & (r <= 0.75 * grid.halfwidth) & ~excluded
        wv = triple.volume_weights()[shell]
        offsets = [float(np.sum(c.u.values[shell] * wv) / np.sum(wv)) for c in comps]
    elif normalization == "none":
        offsets = [0.0, 0.0, 0.0]
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    for c, off in zip(comps, offsets):
        c.u.values -= off
    triple.u_at_p = tuple(offsets)
    triple._interpolators.clear()
    sup = 0.0
    for i in range(3):
        sup = max(sup, float(np.max(triple.grad_norm(i)[~excluded])))
    triple.grad_sup = sup
    return triple


def build_harmonic_triple(chart: MetricChart, grid: Grid, bc: str = "corrected",
                          tol: float = 1e-11, method: str = "auto",
                          max_iter: int = 20000,
                          normalization: str = "point") -> HarmonicTriple:
    """Solve all three axes and attach gradients, Hessians, and normalization.

    normalization "point" subtracts u^i(p) (trilinear at the chart base
    point); "annulus" subtracts the volume-weighted mean over the shell
    halfwidth/2 <= |x| <= 3 halfwidth/4.
    """
    operator = LaplaceBeltrami(chart, grid)
    phi, dphi = _nodal_conformal_cache(chart, grid, operator)
    comps = [build_component(chart, grid, a, bc, operator, phi, dphi,
                             tol=tol, method=method, max_iter=max_iter)
             for a in range(3)]
    return _assemble_triple(chart, grid, comps, bc, normalization, operator,
                            phi, dphi)


def triple_from_solutions(chart: MetricChart, grid: Grid, solutions,
                          bc: str = "corrected",
                          normalization: str = "point") -> HarmonicTriple:
    """Rebuild a triple from already-solved nodal fields (e.g. field dumps).

    Derived fields (gradients, Hessians, residual norms) are recomputed
    from the nodal values; normalization is re-applied, which is a no-op
    on fields that were normalized before serialization.
    """
    operator = LaplaceBeltrami(chart, grid)
    phi, dphi = _nodal_conformal_cache(chart, grid, operator)
    comps = []
    for axis, sol in enumerate(solutions):
        if sol.grid != grid:
            raise MismatchedChart("field dump grid differs from the config grid")
        h = grid.h
        du = gradient(sol.values, h)
        grad = du / phi[..., None] ** 4
        dd = second_derivatives(sol.values, h)
        w = dphi / phi[..., None]
        duw = np.einsum("...a,...a->...", du, w)
        gamma_term = 2.0 * (du[..., :, None] * w[..., None, :]
                            + w[..., :, None] * du[..., None, :]
                            - np.eye(3) * duw[..., None, None])
        resid = operator.apply(sol.values)
        inner = ~grid.margin_mask(2)
        if operator.singular_node is not None:
            inner[operator.singular_node] = False
        comps.append(HarmonicComponent(axis=axis, u=sol, du=du, grad=grad,
                                       hess=dd - gamma_term,
                                       residual_norm=float(np.max(np.abs(resid[inner])))))
    return _assemble_triple(chart, grid, comps, bc, normalization, operator,
                            phi, dphi)


def cheng_yau_ratio(triple: HarmonicTriple, i: int, radius: float,
                    center=None) -> float:
    """Diagnostic sup_{B_r}|grad u| / sup_{B_2r}|u - u(center)|.

    Balls are chart-Euclidean around the base point; the constant is
    reported per run and never asserted against a fixed value.
    """
    c = np.asarray(triple.chart.base_point if center is None else center, float)
    r = np.linalg.norm(triple.grid.points() - c, axis=-1)
    inner = (r <= radius) & ~triple.excluded
    outer = (r <= 2.0 * radius) & ~triple.excluded
    u0 = float(triple.u_interp(i)(c)[0])
    num = float(np.max(triple.grad_norm(i)[inner]))
    den = float(np.max(np.abs(triple.components[i].u.values[outer] - u0)))
    return num / max(den, 1e-300)
