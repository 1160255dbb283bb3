"""Built-in problem registry: moving-domain benchmarks with manufactured or
closed-form solutions.

Each builder returns a fully populated ProblemSpec (level set with analytic
gradient, coefficients, data, exact solution where available, stabilization
parameters).  ``check_registry`` verifies every exact solution against the PDE
with finite-difference derivatives at random interior points.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .fem import ProblemSpec
from .geometry import LevelSet
from .mesh import SpaceTimeBox

TWO_PI = 2.0 * np.pi


def _interval_levelset(a0: float, b0: float, v, v_t) -> LevelSet:
    """phi = (x - a0 - v(t)) (x - b0 - v(t)) for a translating interval."""

    def value(p):
        s = v(p[:, 1])
        return (p[:, 0] - a0 - s) * (p[:, 0] - b0 - s)

    def gradient(p):
        s = v(p[:, 1])
        dx = 2.0 * p[:, 0] - a0 - b0 - 2.0 * s
        return np.stack([dx, -v_t(p[:, 1]) * dx], axis=1)

    return LevelSet(value, gradient)


def _oscillating_exact():
    """u = (sin 2pix sin 2pit + cos 2pix cos 2pit) e^-t and its derivatives."""

    def u(p):
        x, t = p[:, 0], p[:, 1]
        return (np.sin(TWO_PI * x) * np.sin(TWO_PI * t)
                + np.cos(TWO_PI * x) * np.cos(TWO_PI * t)) * np.exp(-t)

    def u_x(p):
        x, t = p[:, 0], p[:, 1]
        return TWO_PI * (np.cos(TWO_PI * x) * np.sin(TWO_PI * t)
                         - np.sin(TWO_PI * x) * np.cos(TWO_PI * t)) * np.exp(-t)

    def u_t(p):
        x, t = p[:, 0], p[:, 1]
        osc = TWO_PI * (np.sin(TWO_PI * x) * np.cos(TWO_PI * t)
                        - np.cos(TWO_PI * x) * np.sin(TWO_PI * t)) * np.exp(-t)
        return osc - u(p)

    return u, u_x, u_t


def _cosine_diffusion():
    """a = 0.5 t cos^2 x + 0.1 with its spatial gradient."""

    def a(p):
        return 0.5 * p[:, 1] * np.cos(p[:, 0]) ** 2 + 0.1

    def a_x(p):
        return np.stack([-0.5 * p[:, 1] * np.sin(2.0 * p[:, 0])], axis=1)

    return a, a_x


def registry_stefan() -> ProblemSpec:
    """Expanding interval (0, s(t)) with s(t) = 2 alpha sqrt(t + t0) and the
    similarity solution 1 - erf(x / 2 sqrt(t + t0)) / erf(alpha)."""
    alpha, t0 = 0.5, 1.2
    box = SpaceTimeBox((0.0,), (1.5,), 1.0)

    def s(t):
        return 2.0 * alpha * np.sqrt(t + t0)

    def value(p):
        return p[:, 0] * (p[:, 0] - s(p[:, 1]))

    def gradient(p):
        x, t = p[:, 0], p[:, 1]
        return np.stack([2.0 * x - s(t), -x * alpha / np.sqrt(t + t0)], axis=1)

    inv_erf_alpha = 1.0 / erf(alpha)

    def u(p):
        x, t = p[:, 0], p[:, 1]
        return 1.0 - inv_erf_alpha * erf(x / (2.0 * np.sqrt(t + t0)))

    def u_x(p):
        x, t = p[:, 0], p[:, 1]
        root = np.sqrt(t + t0)
        g = -inv_erf_alpha * (2.0 / np.sqrt(np.pi)) * np.exp(-(x**2) / (4.0 * (t + t0)))
        return np.stack([g / (2.0 * root)], axis=1)

    one = lambda p: np.ones(len(p))
    return ProblemSpec(
        name="stefan",
        levelset=LevelSet(value, gradient),
        diffusion=one,
        diffusion_spatial_gradient=lambda p: np.zeros((len(p), 1)),
        source=lambda p: np.zeros(len(p)),
        dirichlet=u,
        initial=u,
        box=box,
        gamma=50.0,
        gamma1=0.1,
        delta=0.2,
        exact_solution=u,
        exact_spatial_gradient=u_x,
    )


def registry_oscillating_interval() -> ProblemSpec:
    """Interval of width 0.4 oscillating with velocity pi sin(2 pi t)/20 and a
    time-dependent diffusion coefficient; manufactured trigonometric solution."""
    a0, b0 = 0.3, 0.7
    box = SpaceTimeBox((0.0,), (1.0,), 1.0)
    v = lambda t: np.pi * np.sin(TWO_PI * t) / 20.0
    v_t = lambda t: np.pi * TWO_PI * np.cos(TWO_PI * t) / 20.0
    return _manufactured_interval_problem("oscillating_interval", box, a0, b0, v, v_t,
                                          gamma=100.0, gamma1=0.1, delta=0.1)


def registry_small_cut(l: float = 0.0) -> ProblemSpec:
    """Slowly drifting narrow interval whose initial shift l steers how the
    boundary cuts the background mesh; otherwise the oscillating-interval
    manufactured problem."""
    a0, b0 = np.pi / 24.0, np.pi / 6.0
    box = SpaceTimeBox((0.0,), (1.0,), 1.0)
    v = lambda t: l + t / 7.0
    v_t = lambda t: np.full_like(np.asarray(t, dtype=float), 1.0 / 7.0)
    return _manufactured_interval_problem("small_cut", box, a0, b0, v, v_t,
                                          gamma=50.0, gamma1=0.1, delta=0.2)


def _manufactured_interval_problem(name, box, a0, b0, v, v_t, gamma, gamma1, delta):
    levelset = _interval_levelset(a0, b0, v, v_t)
    u, u_x, u_t = _oscillating_exact()
    a, a_x = _cosine_diffusion()

    def f(p):
        u_xx = -TWO_PI**2 * u(p)
        return u_t(p) - a_x(p)[:, 0] * u_x(p) - a(p) * u_xx

    return ProblemSpec(
        name=name,
        levelset=levelset,
        diffusion=a,
        diffusion_spatial_gradient=a_x,
        source=f,
        dirichlet=u,
        initial=u,
        box=box,
        gamma=gamma,
        gamma1=gamma1,
        delta=delta,
        exact_solution=u,
        exact_spatial_gradient=lambda p: u_x(p)[:, None],
    )


def _planar_exact():
    """u = (sin sin sin + cos cos cos)(2 pi .) e^-t in two space dimensions."""

    def parts(p):
        sx, cx = np.sin(TWO_PI * p[:, 0]), np.cos(TWO_PI * p[:, 0])
        sy, cy = np.sin(TWO_PI * p[:, 1]), np.cos(TWO_PI * p[:, 1])
        st, ct = np.sin(TWO_PI * p[:, 2]), np.cos(TWO_PI * p[:, 2])
        return sx, cx, sy, cy, st, ct, np.exp(-p[:, 2])

    def u(p):
        sx, cx, sy, cy, st, ct, e = parts(p)
        return (sx * sy * st + cx * cy * ct) * e

    def grad(p):
        sx, cx, sy, cy, st, ct, e = parts(p)
        ux = TWO_PI * (cx * sy * st - sx * cy * ct) * e
        uy = TWO_PI * (sx * cy * st - cx * sy * ct) * e
        return np.stack([ux, uy], axis=1)

    def u_t(p):
        sx, cx, sy, cy, st, ct, e = parts(p)
        osc = TWO_PI * (sx * sy * ct - cx * cy * st) * e
        return osc - u(p)

    return u, grad, u_t


def registry_moving_circle() -> ProblemSpec:
    """Disk of radius pi/12 whose center orbits (0.5, 0.5); constant diffusion."""
    box = SpaceTimeBox((0.0, 0.0), (1.0, 1.0), 1.0)
    r0 = np.pi / 12.0

    def center(t):
        return 0.15 * np.cos(TWO_PI * t) + 0.5, 0.15 * np.sin(TWO_PI * t) + 0.5

    def value(p):
        cx, cy = center(p[:, 2])
        return (p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2 - r0**2

    def gradient(p):
        t = p[:, 2]
        cx, cy = center(t)
        dx = p[:, 0] - cx
        dy = p[:, 1] - cy
        cx_t = -0.15 * TWO_PI * np.sin(TWO_PI * t)
        cy_t = 0.15 * TWO_PI * np.cos(TWO_PI * t)
        return np.stack([2 * dx, 2 * dy, -2 * dx * cx_t - 2 * dy * cy_t], axis=1)

    u, grad, u_t = _planar_exact()

    def f(p):
        return u_t(p) + 2.0 * TWO_PI**2 * u(p)  # -laplace u = 8 pi^2 u, a = 1

    one = lambda p: np.ones(len(p))
    return ProblemSpec(
        name="moving_circle",
        levelset=LevelSet(value, gradient),
        diffusion=one,
        diffusion_spatial_gradient=lambda p: np.zeros((len(p), 2)),
        source=f,
        dirichlet=u,
        initial=u,
        box=box,
        gamma=50.0,
        gamma1=0.1,
        delta=0.2,
        exact_solution=u,
        exact_spatial_gradient=grad,
    )


def registry_flower() -> ProblemSpec:
    """Rotating five-petal domain with a shrinking central hole and the
    variable coefficient 0.5 sin^2(xyt) + 0.1."""
    box = SpaceTimeBox((-1.0, -1.0), (1.0, 1.0), 1.0)
    r, r0 = 0.7, 3.5

    def frame(p):
        t = p[:, 2]
        x_off = p[:, 0] - 0.1 * np.cos(np.pi * t)
        y_off = p[:, 1] - 0.1 * np.sin(np.pi * t)
        return x_off, y_off, t

    def hole_radius(t):
        return r - t**2 / 8.0 - np.pi / 10.0

    def value(p):
        x_c, y_c, t = frame(p)
        rho2 = x_c**2 + y_c**2
        theta = np.arctan2(y_c, x_c)
        phi1 = rho2 - r**2 + (r / r0) * np.cos(5 * theta) * np.cos(2 * np.pi * t / 3)
        phi2 = rho2 - hole_radius(t) ** 2
        return phi1 * phi2

    def gradient(p):
        x_c, y_c, t = frame(p)
        rho2 = x_c**2 + y_c**2
        rho2_safe = np.where(rho2 > 0, rho2, 1.0)
        theta = np.arctan2(y_c, x_c)
        x_t = 0.1 * np.pi * np.sin(np.pi * t)
        y_t = -0.1 * np.pi * np.cos(np.pi * t)
        theta_x = -y_c / rho2_safe
        theta_y = x_c / rho2_safe
        theta_t = theta_x * x_t + theta_y * y_t

        cos_m = np.cos(2 * np.pi * t / 3)
        amp = r / r0
        phi1 = rho2 - r**2 + amp * np.cos(5 * theta) * cos_m
        dcos5 = -5.0 * amp * np.sin(5 * theta) * cos_m
        phi1_x = 2 * x_c + dcos5 * theta_x
        phi1_y = 2 * y_c + dcos5 * theta_y
        phi1_t = (2 * x_c * x_t + 2 * y_c * y_t + dcos5 * theta_t
                  - amp * np.cos(5 * theta) * (2 * np.pi / 3) * np.sin(2 * np.pi * t / 3))

        hr = hole_radius(t)
        phi2 = rho2 - hr**2
        phi2_x = 2 * x_c
        phi2_y = 2 * y_c
        phi2_t = 2 * x_c * x_t + 2 * y_c * y_t + hr * t / 2.0

        return np.stack(
            [
                phi1 * phi2_x + phi2 * phi1_x,
                phi1 * phi2_y + phi2 * phi1_y,
                phi1 * phi2_t + phi2 * phi1_t,
            ],
            axis=1,
        )

    u, grad, u_t = _planar_exact()

    def a(p):
        return 0.5 * np.sin(p[:, 0] * p[:, 1] * p[:, 2]) ** 2 + 0.1

    def a_grad(p):
        x, y, t = p[:, 0], p[:, 1], p[:, 2]
        common = 0.5 * np.sin(2.0 * x * y * t)
        return np.stack([common * y * t, common * x * t], axis=1)

    def f(p):
        gu = grad(p)
        lap = -2.0 * TWO_PI**2 * u(p)
        return u_t(p) - np.einsum("qk,qk->q", a_grad(p), gu) - a(p) * lap

    return ProblemSpec(
        name="flower",
        levelset=LevelSet(value, gradient),
        diffusion=a,
        diffusion_spatial_gradient=a_grad,
        source=f,
        dirichlet=u,
        initial=u,
        box=box,
        gamma=100.0,
        gamma1=0.1,
        delta=0.02,
        exact_solution=u,
        exact_spatial_gradient=grad,
    )


def registry_boundary_layer(delta_c: float = 0.3) -> ProblemSpec:
    """Convection-dominated regime: constant diffusion eps = 2e-3, f = 1,
    homogeneous data, on the oscillating-interval geometry.  delta = delta_c/eps."""
    eps = 2.0e-3
    a0, b0 = 0.3, 0.7
    box = SpaceTimeBox((0.0,), (1.0,), 1.0)
    v = lambda t: np.pi * np.sin(TWO_PI * t) / 20.0
    v_t = lambda t: np.pi * TWO_PI * np.cos(TWO_PI * t) / 20.0
    zero = lambda p: np.zeros(len(p))
    return ProblemSpec(
        name="boundary_layer",
        levelset=_interval_levelset(a0, b0, v, v_t),
        diffusion=lambda p: np.full(len(p), eps),
        diffusion_spatial_gradient=lambda p: np.zeros((len(p), 1)),
        source=lambda p: np.ones(len(p)),
        dirichlet=zero,
        initial=zero,
        box=box,
        gamma=20.0,
        gamma1=0.1,
        delta=delta_c / eps,
    )


REGISTRY = {
    "stefan": registry_stefan,
    "oscillating_interval": registry_oscillating_interval,
    "moving_circle": registry_moving_circle,
    "flower": registry_flower,
    "small_cut": registry_small_cut,
    "boundary_layer": registry_boundary_layer,
}


def build(name: str, **kwargs) -> ProblemSpec:
    if name not in REGISTRY:
        raise KeyError(f"unknown problem '{name}'; known: {sorted(REGISTRY)}")
    return REGISTRY[name](**kwargs)


# ---------------------------------------------------------------------------
# registration checks


def _fd4(fn, pts, axis, step):
    """Fourth-order central difference along one coordinate axis."""
    shifted = []
    for k in (-2, -1, 1, 2):
        q = pts.copy()
        q[:, axis] += k * step
        shifted.append(fn(q))
    return (shifted[0] - 8 * shifted[1] + 8 * shifted[2] - shifted[3]) / (12 * step)


def sample_interior_points(problem: ProblemSpec, n: int, seed: int = 1234) -> np.ndarray:
    """Rejection-sample n points of the space-time domain {phi < 0}."""
    rng = np.random.default_rng(seed)
    lo, hi = problem.box.lo, problem.box.hi
    out = []
    need = n
    for _ in range(200):
        cand = lo + (hi - lo) * rng.random((max(4 * need, 64), problem.box.dim))
        inside = problem.levelset(cand) < -1e-6
        got = cand[inside][:need]
        if len(got):
            out.append(got)
            need -= len(got)
        if need == 0:
            return np.concatenate(out)
    raise RuntimeError("could not sample enough interior points")


def pde_residual(problem: ProblemSpec, pts: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """u_t - div(a grad u) - f at the given points, with u_t and the second
    derivatives taken by fourth-order finite differences of the registered
    exact solution and gradient."""
    d = problem.d
    u_t = _fd4(problem.exact_solution, pts, d, step)
    div = np.zeros(len(pts))
    for k in range(d):
        div += _fd4(lambda q, k=k: problem.exact_spatial_gradient(q)[:, k], pts, k, step)
    grad_term = np.einsum(
        "qk,qk->q", problem.diffusion_spatial_gradient(pts), problem.exact_spatial_gradient(pts)
    )
    return u_t - grad_term - problem.diffusion(pts) * div - problem.source(pts)


def check_registry(n_points: int = 100, tol: float = 1e-8) -> dict[str, float]:
    """Verify every registered exact solution against the PDE and its traces.

    Returns the maximum absolute residual per problem; raises AssertionError
    on any violation.
    """
    results = {}
    for name, builder in REGISTRY.items():
        problem = builder()
        if problem.exact_solution is None:
            results[name] = float("nan")
            continue
        pts = sample_interior_points(problem, n_points)
        res = float(np.abs(pde_residual(problem, pts)).max())
        results[name] = res
        if res > tol:
            raise AssertionError(f"{name}: PDE residual {res:.3e} exceeds {tol:.1e}")
        # boundary/initial data must be traces of the exact solution
        p0 = pts.copy()
        p0[:, -1] = 0.0
        if np.abs(problem.initial(p0) - problem.exact_solution(p0)).max() > 1e-12:
            raise AssertionError(f"{name}: initial data is not the exact trace")
        if np.abs(problem.dirichlet(pts) - problem.exact_solution(pts)).max() > 1e-12:
            raise AssertionError(f"{name}: boundary data is not the exact trace")
    return results
