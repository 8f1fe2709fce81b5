"""Cylindrical test functions, measure derivatives, generators, and the weak
identities they are supposed to satisfy along simulated flows.

The single-equation generator acting on a compactly supported C^2 function
phi is

    (A phi)(x) = <b(t,x,mu), grad phi(x)> + (1/2) tr(sigma sigma^T Hess phi(x))
                 + integral over marks of [phi(x + f(t,x,mu,u)) - phi(x)]

and the weak identity states that t -> mu_t(phi) has derivative
mu_t(A phi) along the measure flow.  The lifted operator acts on cylindrical
functions Phi(y, zeta) = phi0(y) g(zeta(phi_1), ..., zeta(phi_n)) of a point
*and* a measure.  Its measure half integrates the derivative-in-measure of
Phi against the base coefficients, with the jump contribution written as an
interpolated line integral in an auxiliary variable eta in [0,1]; its space
half is the hat generator applied in y.  All measure integrals reduce to atom
averages over the empirical clouds, and the eta-integral is Gauss-Legendre
with a configurable node count.

Derivatives in the measure argument are evaluated in closed form.  For the
cylindrical class the derivative at zeta is the field

    z -> phi0(y) sum_i d_i g(...) grad phi_i(z)

and its spatial derivative replaces grad phi_i by Hess phi_i; the derivative
in y is grad phi0(y) g(...).  Test functions are polynomials times a plateau
cutoff built from a quintic smoothstep in the *squared* radius, so values,
gradients and Hessians are exact closed forms, the support is genuinely
compact, and along any jump segment z + eta f the integrand is piecewise
polynomial in eta (the quadrature is exact whenever the segment does not
cross a cutoff boundary).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .measure import EmpiricalMeasure
from .model import Model, ModelPair
from .particle import CoupledFlow, MeasureFlow

DEFAULT_QUAD_ORDER = 8


class GeneratorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# smoothstep cutoff in squared radius


def _smoothstep(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, 1.0)
    return 1.0 - w * w * w * (10.0 - 15.0 * w + 6.0 * w * w)


def _smoothstep_d1(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, 1.0)
    return -30.0 * w * w * (1.0 - w) ** 2


def _smoothstep_d2(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, 1.0)
    return -60.0 * w * (1.0 - w) * (1.0 - 2.0 * w)


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported C^2 function with hand-coded derivatives.

    ``value``/``gradient``/``hessian`` are batched: they map (k, d) arrays to
    (k,), (k, d) and (k, d, d).  The function and both derivatives vanish for
    |x| >= support_radius.  The closed-form derivatives are an invariant, not
    an approximation: tests hold them against central finite differences.
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    label: str

    def value_at(self, x: np.ndarray) -> float:
        return float(self.value(np.asarray(x, dtype=np.float64)[None, :])[0])

    def gradient_at(self, x: np.ndarray) -> np.ndarray:
        return self.gradient(np.asarray(x, dtype=np.float64)[None, :])[0]

    def hessian_at(self, x: np.ndarray) -> np.ndarray:
        return self.hessian(np.asarray(x, dtype=np.float64)[None, :])[0]


def _polynomial_parts(shape: str, axis: int, wave: Optional[np.ndarray]):
    """p(x-c), grad p, Hess p for the supported polynomial factors."""

    if shape == "bump":

        def p(z):
            return np.ones(z.shape[0])

        def dp(z):
            return np.zeros_like(z)

        def d2p(z):
            return np.zeros((z.shape[0], z.shape[1], z.shape[1]))

    elif shape == "coord":

        def p(z):
            return z[:, axis]

        def dp(z):
            out = np.zeros_like(z)
            out[:, axis] = 1.0
            return out

        def d2p(z):
            return np.zeros((z.shape[0], z.shape[1], z.shape[1]))

    elif shape == "coord3":

        def p(z):
            return z[:, axis] ** 3

        def dp(z):
            out = np.zeros_like(z)
            out[:, axis] = 3.0 * z[:, axis] ** 2
            return out

        def d2p(z):
            out = np.zeros((z.shape[0], z.shape[1], z.shape[1]))
            out[:, axis, axis] = 6.0 * z[:, axis]
            return out

    elif shape == "sq":

        def p(z):
            return np.sum(z * z, axis=1)

        def dp(z):
            return 2.0 * z

        def d2p(z):
            return np.broadcast_to(
                2.0 * np.eye(z.shape[1]), (z.shape[0], z.shape[1], z.shape[1])
            ).copy()

    elif shape == "axis_sq":

        def p(z):
            return z[:, axis] ** 2

        def dp(z):
            out = np.zeros_like(z)
            out[:, axis] = 2.0 * z[:, axis]
            return out

        def d2p(z):
            out = np.zeros((z.shape[0], z.shape[1], z.shape[1]))
            out[:, axis, axis] = 2.0
            return out

    elif shape == "cos":
        w = wave

        def p(z):
            return np.cos(z @ w)

        def dp(z):
            return -np.sin(z @ w)[:, None] * w

        def d2p(z):
            return -np.cos(z @ w)[:, None, None] * np.outer(w, w)

    else:
        raise GeneratorError(f"unknown test-function shape {shape!r}")
    return p, dp, d2p


def make_test_function(
    shape: str,
    dim: int,
    *,
    center: Optional[Sequence[float]] = None,
    r_in: float = 5.0,
    r_out: float = 8.0,
    axis: int = 0,
    wave: Optional[Sequence[float]] = None,
    label: Optional[str] = None,
) -> TestFunction:
    """Polynomial-times-cutoff test function.

    The cutoff equals 1 on |x - c| <= r_in, falls to 0 at |x - c| = r_out via
    a quintic smoothstep in |x - c|^2, and vanishes outside.
    """
    if not 0.0 < r_in < r_out:
        raise GeneratorError(f"need 0 < r_in < r_out, got {r_in}, {r_out}")
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=np.float64)
    if c.shape != (dim,):
        raise GeneratorError(f"center shape {c.shape} != ({dim},)")
    w_vec = None
    if shape == "cos":
        w_vec = np.ones(dim) if wave is None else np.asarray(wave, dtype=np.float64)
    p, dp, d2p = _polynomial_parts(shape, axis, w_vec)
    denom = r_out * r_out - r_in * r_in
    rin_sq = r_in * r_in

    def chi_parts(x):
        z = x - c
        q = np.sum(z * z, axis=1)
        w = (q - rin_sq) / denom
        return z, _smoothstep(w), _smoothstep_d1(w), _smoothstep_d2(w)

    def value(x):
        z, s, _, _ = chi_parts(x)
        return p(z) * s

    def gradient(x):
        z, s, s1, _ = chi_parts(x)
        grad_chi = s1[:, None] * (2.0 / denom) * z
        return dp(z) * s[:, None] + p(z)[:, None] * grad_chi

    def hessian(x):
        z, s, s1, s2 = chi_parts(x)
        k, d = z.shape
        grad_chi = s1[:, None] * (2.0 / denom) * z
        hess_chi = (4.0 / denom**2) * s2[:, None, None] * (z[:, :, None] * z[:, None, :])
        hess_chi += (2.0 / denom) * s1[:, None, None] * np.eye(d)
        dpz = dp(z)
        cross = dpz[:, :, None] * grad_chi[:, None, :]
        return (
            d2p(z) * s[:, None, None]
            + cross
            + np.swapaxes(cross, 1, 2)
            + p(z)[:, None, None] * hess_chi
        )

    return TestFunction(
        value=value,
        gradient=gradient,
        hessian=hessian,
        support_radius=float(np.linalg.norm(c) + r_out),
        label=label or f"{shape}(r_in={r_in},r_out={r_out})",
    )


# ---------------------------------------------------------------------------
# outer functions g and cylindrical functions


@dataclass(frozen=True)
class GFunction:
    """C^2 outer function of the inner integrals, with gradient and Hessian."""

    arity: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    label: str


def g_constant(c: float = 1.0) -> GFunction:
    return GFunction(
        arity=0,
        value=lambda v: c,
        grad=lambda v: np.zeros(0),
        hess=lambda v: np.zeros((0, 0)),
        label=f"const({c})",
    )


def g_identity() -> GFunction:
    return GFunction(
        arity=1,
        value=lambda v: float(v[0]),
        grad=lambda v: np.array([1.0]),
        hess=lambda v: np.zeros((1, 1)),
        label="identity",
    )


def g_square() -> GFunction:
    return GFunction(
        arity=1,
        value=lambda v: float(v[0]) ** 2,
        grad=lambda v: np.array([2.0 * v[0]]),
        hess=lambda v: np.array([[2.0]]),
        label="square",
    )


def g_product() -> GFunction:
    return GFunction(
        arity=2,
        value=lambda v: float(v[0] * v[1]),
        grad=lambda v: np.array([v[1], v[0]]),
        hess=lambda v: np.array([[0.0, 1.0], [1.0, 0.0]]),
        label="product",
    )


def g_affine(coeffs: Sequence[float], const: float = 0.0) -> GFunction:
    a = np.asarray(coeffs, dtype=np.float64)
    return GFunction(
        arity=len(a),
        value=lambda v: float(np.dot(a, v) + const),
        grad=lambda v: a.copy(),
        hess=lambda v: np.zeros((len(a), len(a))),
        label=f"affine({a.tolist()})",
    )


@dataclass(frozen=True)
class CylindricalFunction:
    """Phi(y, zeta) = phi0(y) * g(zeta(phi_1), ..., zeta(phi_n)).

    ``phi0=None`` stands for the constant factor 1 (the y-free case used by
    the measure-only identity).  ``inner`` may be empty, in which case Phi
    depends on y alone.
    """

    g: GFunction
    inner: tuple = ()
    phi0: Optional[TestFunction] = None
    label: str = ""

    def __post_init__(self):
        if len(self.inner) != self.g.arity:
            raise GeneratorError(
                f"g has arity {self.g.arity} but {len(self.inner)} inner functions given"
            )
        if not self.label:
            p0 = self.phi0.label if self.phi0 else "1"
            object.__setattr__(
                self, "label", f"{p0}*{self.g.label}[{','.join(f.label for f in self.inner)}]"
            )

    def inner_values(self, zeta: EmpiricalMeasure) -> np.ndarray:
        return np.array([zeta.integrate(f.value) for f in self.inner])

    def value(self, y: np.ndarray, zeta: EmpiricalMeasure) -> float:
        gv = self.g.value(self.inner_values(zeta))
        return (self.phi0.value_at(y) if self.phi0 is not None else 1.0) * gv

    def value_on_cloud(self, ys: np.ndarray, zeta: EmpiricalMeasure) -> np.ndarray:
        gv = self.g.value(self.inner_values(zeta))
        if self.phi0 is None:
            return np.full(ys.shape[0], gv)
        return self.phi0.value(ys) * gv

    def pair_expectation(self, hat_cloud: EmpiricalMeasure, zeta: EmpiricalMeasure) -> float:
        """Integral of Phi against (law of hat cloud) x delta_zeta."""
        gv = self.g.value(self.inner_values(zeta))
        if self.phi0 is None:
            return float(gv)
        return float(np.mean(self.phi0.value(hat_cloud.points))) * gv

    def reduces_to_base(self) -> Optional[TestFunction]:
        """The inner function phi when Phi(y, zeta) == zeta(phi), else None.

        For such Phi the lifted weak identity collapses to the base identity,
        and the residual code evaluates it through the very same arithmetic.
        """
        if self.phi0 is None and self.g.label == "identity" and len(self.inner) == 1:
            return self.inner[0]
        return None


@dataclass(frozen=True)
class LDerivatives:
    """Closed-form derivatives of a cylindrical function at (y, zeta).

    ``d_zeta``/``dz_d_zeta`` are fields over the atom variable (batched like
    test functions); ``d_y``/``d2_y`` are the plain space derivatives.
    ``d2_zeta`` is the second measure derivative (two atom arguments).
    """

    d_zeta: Callable[[np.ndarray], np.ndarray]
    dz_d_zeta: Callable[[np.ndarray], np.ndarray]
    d_y: np.ndarray
    d2_y: np.ndarray
    d2_zeta: Callable[[np.ndarray, np.ndarray], np.ndarray]


def l_derivatives(Phi: CylindricalFunction, y: np.ndarray, zeta: EmpiricalMeasure) -> LDerivatives:
    """Evaluate the cylindrical derivative formulas at (y, zeta)."""
    v = Phi.inner_values(zeta)
    gv = Phi.g.grad(v)
    gh = Phi.g.hess(v)
    phi0v = Phi.phi0.value_at(y) if Phi.phi0 is not None else 1.0
    inner = Phi.inner

    def d_zeta(z):
        out = np.zeros_like(np.asarray(z, dtype=np.float64))
        for gi, f in zip(gv, inner):
            if gi != 0.0:
                out += gi * f.gradient(z)
        return phi0v * out

    def dz_d_zeta(z):
        z = np.asarray(z, dtype=np.float64)
        out = np.zeros((z.shape[0], z.shape[1], z.shape[1]))
        for gi, f in zip(gv, inner):
            if gi != 0.0:
                out += gi * f.hessian(z)
        return phi0v * out

    def d2_zeta(z, zp):
        z = np.asarray(z, dtype=np.float64)
        zp = np.asarray(zp, dtype=np.float64)
        out = np.zeros((z.shape[0], zp.shape[0], z.shape[1], zp.shape[1]))
        for i, fi in enumerate(inner):
            gi = fi.gradient(z)
            for j, fj in enumerate(inner):
                if gh[i, j] != 0.0:
                    out += gh[i, j] * gi[:, None, :, None] * fj.gradient(zp)[None, :, None, :]
        return phi0v * out

    if Phi.phi0 is not None:
        gval = Phi.g.value(v)
        d_y = Phi.phi0.gradient_at(y) * gval
        d2_y = Phi.phi0.hessian_at(y) * gval
    else:
        d = zeta.dim
        d_y = np.zeros(d)
        d2_y = np.zeros((d, d))
    return LDerivatives(d_zeta=d_zeta, dz_d_zeta=dz_d_zeta, d_y=d_y, d2_y=d2_y, d2_zeta=d2_zeta)


def empirical_projection_gradient(F: CylindricalFunction, points: np.ndarray) -> np.ndarray:
    """Gradient of x -> F(empirical measure of the rows) as a (K, d) array.

    The derivative in atom i is 1/K times the measure derivative evaluated at
    that atom.
    """
    mu = EmpiricalMeasure(points)
    ld = l_derivatives(F, np.zeros(mu.dim), mu)
    return ld.d_zeta(mu.points) / mu.n


def empirical_projection_hessian(F: CylindricalFunction, points: np.ndarray) -> np.ndarray:
    """Full (K, d, K, d) Hessian of the empirical projection of F.

    Block (i, j) combines the spatial derivative of the measure derivative on
    the diagonal (weight 1/K) with the second measure derivative (weight
    1/K^2).  Intended for small K; quadratic storage.
    """
    mu = EmpiricalMeasure(points)
    K, d = mu.points.shape
    ld = l_derivatives(F, np.zeros(d), mu)
    out = ld.d2_zeta(mu.points, mu.points).transpose(0, 2, 1, 3) / (K * K)
    diag = ld.dz_d_zeta(mu.points) / K
    for i in range(K):
        out[i, :, i, :] += diag[i]
    return out


def directional_derivative_check(
    Phi: CylindricalFunction,
    y: np.ndarray,
    zeta: EmpiricalMeasure,
    e_field: Callable[[np.ndarray], np.ndarray],
    eps: float = 1e-4,
) -> tuple[float, float]:
    """(closed-form, finite-difference) directional derivative in the measure.

    The direction is a bounded field e; the perturbed measure pushes every
    atom to x + eps * e(x).  The closed form is the atom average of
    <d_zeta(x), e(x)>; the numeric value is a central difference.
    """
    ld = l_derivatives(Phi, y, zeta)
    e = e_field(zeta.points)
    analytic = float(np.mean(np.sum(ld.d_zeta(zeta.points) * e, axis=1)))
    plus = EmpiricalMeasure(zeta.points + eps * e)
    minus = EmpiricalMeasure(zeta.points - eps * e)
    numeric = (Phi.value(y, plus) - Phi.value(y, minus)) / (2.0 * eps)
    return analytic, numeric


# ---------------------------------------------------------------------------
# generators


def _generator_values(
    model: Model, t: float, mu: EmpiricalMeasure, phi: TestFunction, x: np.ndarray
) -> np.ndarray:
    """(A phi)(x_row) for every row of x; the single shared arithmetic path."""
    coeffs = model.coeffs
    b = coeffs.drift_at(t, x, mu)
    grad = phi.gradient(x)
    out = np.einsum("kd,kd->k", b, grad)
    sig = coeffs.diffusion_at(t, x, mu)
    a = np.einsum("kdm,kem->kde", sig, sig)
    out = out + 0.5 * np.einsum("kde,kde->k", a, phi.hessian(x))
    marks, weights = model.jumps.weighted_marks()
    if len(marks):
        base = phi.value(x)
        for u, w in zip(marks, weights):
            shifted = x + coeffs.jump_at(t, x, mu, float(u))
            out = out + w * (phi.value(shifted) - base)
    return out


def apply_generator(
    model: Model, t: float, mu: EmpiricalMeasure, phi: TestFunction, x: np.ndarray
) -> float:
    """Generator of one equation applied to phi at a point."""
    xb = np.asarray(x, dtype=np.float64)
    if xb.ndim == 1:
        xb = xb[None, :]
    return float(_generator_values(model, t, mu, phi, xb)[0])


def _generator_mean(model: Model, t: float, mu: EmpiricalMeasure, phi: TestFunction) -> float:
    """mu(A phi): the base weak-identity integrand."""
    return float(np.mean(_generator_values(model, t, mu, phi, mu.points)))


def _eta_nodes(quad_order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(quad_order)
    return 0.5 * (x + 1.0), 0.5 * w


def _lifted_measure_part(
    base: Model,
    t: float,
    Phi: CylindricalFunction,
    zeta: EmpiricalMeasure,
    quad_order: int,
) -> float:
    """The measure half of the lifted generator, divided by phi0(y).

    Four atom-averaged terms: drift against the measure derivative, the mark
    integral of the jump coefficient against the same field, the diffusion
    against its spatial derivative, and the eta-interpolated jump remainder
    evaluated by Gauss-Legendre quadrature.
    """
    if Phi.g.arity == 0:
        return 0.0
    v = Phi.inner_values(zeta)
    gv = Phi.g.grad(v)
    coeffs = base.coeffs
    z = zeta.points
    marks, weights = base.jumps.weighted_marks()
    etas, eta_w = _eta_nodes(quad_order)

    total = 0.0
    b = coeffs.drift_at(t, z, zeta)
    sig = coeffs.diffusion_at(t, z, zeta)
    a = np.einsum("kdm,kem->kde", sig, sig)
    jumps = [coeffs.jump_at(t, z, zeta, float(u)) for u in marks]
    for gi, f in zip(gv, Phi.inner):
        if gi == 0.0:
            continue
        grad = f.gradient(z)
        term = float(np.mean(np.einsum("kd,kd->k", b, grad)))
        term += 0.5 * float(np.mean(np.einsum("kde,kde->k", a, f.hessian(z))))
        for w, fv in zip(weights, jumps):
            term += w * float(np.mean(np.einsum("kd,kd->k", fv, grad)))
            interp = 0.0
            for eta, ew in zip(etas, eta_w):
                g_shift = f.gradient(z + eta * fv)
                interp += ew * float(np.mean(np.einsum("kd,kd->k", g_shift - grad, fv)))
            term += w * interp
        total += gi * term
    return total


def apply_lifted_generator(
    pair: ModelPair,
    t: float,
    Phi: CylindricalFunction,
    y: np.ndarray,
    zeta: EmpiricalMeasure,
    quad_order: int = DEFAULT_QUAD_ORDER,
) -> float:
    """Lifted space-distribution generator at a single (y, zeta)."""
    phi0v = Phi.phi0.value_at(y) if Phi.phi0 is not None else 1.0
    out = phi0v * _lifted_measure_part(pair.base, t, Phi, zeta, quad_order)
    if Phi.phi0 is not None:
        gval = Phi.g.value(Phi.inner_values(zeta))
        yb = np.asarray(y, dtype=np.float64)[None, :]
        out += gval * float(_generator_values(pair.hat, t, zeta, Phi.phi0, yb)[0])
    return out


def _lifted_generator_mean(
    pair: ModelPair,
    t: float,
    Phi: CylindricalFunction,
    hat_cloud: EmpiricalMeasure,
    zeta: EmpiricalMeasure,
    quad_order: int,
) -> float:
    """Average of the lifted generator over the hat cloud at frozen zeta.

    Cylindrical structure factorizes the average: the measure half scales by
    the mean of phi0 over the hat cloud, the space half by g of the inner
    integrals.
    """
    measure_part = _lifted_measure_part(pair.base, t, Phi, zeta, quad_order)
    if Phi.phi0 is None:
        return measure_part
    phi0_mean = float(np.mean(Phi.phi0.value(hat_cloud.points)))
    out = phi0_mean * measure_part
    gval = Phi.g.value(Phi.inner_values(zeta))
    out += gval * float(
        np.mean(_generator_values(pair.hat, t, zeta, Phi.phi0, hat_cloud.points))
    )
    return out


# ---------------------------------------------------------------------------
# residual tables


@dataclass(frozen=True)
class ResidualEntry:
    function_id: str
    t: float
    residual: float
    tolerance: float
    passed: bool
    degenerate: bool = False


@dataclass
class ResidualTable:
    entries: list
    n: int
    h: float
    tol_constants: tuple
    max_abs_residual: float = field(init=False)
    all_pass: bool = field(init=False)

    def __post_init__(self):
        self.max_abs_residual = max((abs(e.residual) for e in self.entries), default=0.0)
        self.all_pass = all(e.passed for e in self.entries)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("function_id,t,residual,tolerance,pass\n")
            for e in self.entries:
                fh.write(
                    f"{e.function_id},{repr(e.t)},{repr(e.residual)},"
                    f"{repr(e.tolerance)},{int(e.passed)}\n"
                )


def residual_tolerance(n: int, h: float, constants: tuple) -> float:
    """tol = c_mc / sqrt(n) + c_h * h; constants are calibrated and frozen."""
    c_mc, c_h = constants
    return c_mc / math.sqrt(n) + c_h * h


def _report_indices(grid, times) -> list:
    if times is None:
        count = min(10, grid.n_steps)
        return sorted({int(round(k)) for k in np.linspace(1, grid.n_steps, count)})
    return [grid.index_of(t) for t in times]


def _residual_from_series(series: np.ndarray, integrand: np.ndarray, dt: float) -> np.ndarray:
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (integrand[1:] + integrand[:-1]))])
    return series - series[0] - cum


def _base_residual_series(model, flow, phi):
    n_times = flow.grid.n_steps + 1
    series = np.empty(n_times)
    integrand = np.empty(n_times)
    times = flow.grid.times
    for k in range(n_times):
        mu = flow.measure_at(k)
        series[k] = mu.integrate(phi.value)
        integrand[k] = _generator_mean(model, float(times[k]), mu, phi)
    return series, integrand


def fpe_residual(
    model: Model,
    flow: MeasureFlow,
    phis: Sequence[TestFunction],
    times: Optional[Sequence[float]] = None,
    tol_constants: tuple = (0.0, 0.0),
) -> ResidualTable:
    """Weak-identity residuals of a simulated flow over a function battery.

    For each phi and reporting time t the residual is

        R(phi, t) = mu_t(phi) - mu_s(phi) - trapezoid of r -> mu_r(A phi)

    on the flow's own grid.  Exact identities hold only for exact laws; the
    table carries the calibrated statistical tolerance alongside each value.
    A battery function whose support misses every atom at every time tests
    nothing (0 = 0); it is flagged degenerate rather than counted as a pass.
    """
    idx = _report_indices(flow.grid, times)
    entries = []
    tol = residual_tolerance(flow.n, flow.grid.dt, tol_constants)
    for phi in phis:
        series, integrand = _base_residual_series(model, flow, phi)
        resid = _residual_from_series(series, integrand, flow.grid.dt)
        degenerate = bool(np.all(series == 0.0) and np.all(integrand == 0.0))
        for k in idx:
            r = float(resid[k])
            entries.append(
                ResidualEntry(
                    function_id=phi.label,
                    t=float(flow.grid.times[k]),
                    residual=r,
                    tolerance=tol,
                    passed=abs(r) <= tol,
                    degenerate=degenerate,
                )
            )
    return ResidualTable(entries=entries, n=flow.n, h=flow.grid.dt, tol_constants=tol_constants)


def lifted_fpe_residual(
    pair: ModelPair,
    coupled: CoupledFlow,
    Phis: Sequence[CylindricalFunction],
    times: Optional[Sequence[float]] = None,
    tol_constants: tuple = (0.0, 0.0),
    quad_order: int = DEFAULT_QUAD_ORDER,
) -> ResidualTable:
    """Weak-identity residuals for the lifted equation along a coupled run.

    The product law at time t pairs the hat cloud's empirical law with the
    point mass at the base cloud, so the pairing of Phi with it is the hat
    average of phi0 times g of the base inner integrals, and the integrand is
    the hat average of the lifted generator.  A Phi that is linear in the
    measure coordinate and ignores y collapses to the base identity and is
    evaluated through the base arithmetic, so those residual tables agree
    bitwise with :func:`fpe_residual`.
    """
    flow = coupled.base
    hat = coupled.hat
    if hat.grid.n_steps != flow.grid.n_steps or hat.grid.dt != flow.grid.dt:
        raise GeneratorError("lifted residuals need the hat ensemble on the base grid")
    idx = _report_indices(flow.grid, times)
    n_times = flow.grid.n_steps + 1
    grid_times = flow.grid.times
    n_eff = min(flow.n, hat.n)
    tol = residual_tolerance(n_eff, flow.grid.dt, tol_constants)
    entries = []
    for Phi in Phis:
        base_phi = Phi.reduces_to_base()
        if base_phi is not None:
            series, integrand = _base_residual_series(pair.base, flow, base_phi)
        else:
            series = np.empty(n_times)
            integrand = np.empty(n_times)
            for k in range(n_times):
                zeta = flow.measure_at(k)
                hat_cloud = hat.measure_at(k)
                series[k] = Phi.pair_expectation(hat_cloud, zeta)
                integrand[k] = _lifted_generator_mean(
                    pair, float(grid_times[k]), Phi, hat_cloud, zeta, quad_order
                )
        resid = _residual_from_series(series, integrand, flow.grid.dt)
        degenerate = bool(np.all(series == 0.0) and np.all(integrand == 0.0))
        for k in idx:
            r = float(resid[k])
            entries.append(
                ResidualEntry(
                    function_id=Phi.label,
                    t=float(grid_times[k]),
                    residual=r,
                    tolerance=tol,
                    passed=abs(r) <= tol,
                    degenerate=degenerate,
                )
            )
    return ResidualTable(entries=entries, n=n_eff, h=flow.grid.dt, tol_constants=tol_constants)


def measure_ito_check(
    model: Model,
    flow: MeasureFlow,
    Fs: Sequence[CylindricalFunction],
    times: Optional[Sequence[float]] = None,
    tol_constants: tuple = (0.0, 0.0),
    quad_order: int = DEFAULT_QUAD_ORDER,
) -> ResidualTable:
    """Chain-rule identity for functions of the measure alone.

    Named separately because it is a standalone statement about the base flow
    (no hat system involved): t -> F(mu_t) must integrate the measure half of
    the lifted generator.  Functions must be y-free.
    """
    for F in Fs:
        if F.phi0 is not None:
            raise GeneratorError(f"{F.label} depends on y; the measure identity needs y-free F")
    idx = _report_indices(flow.grid, times)
    n_times = flow.grid.n_steps + 1
    grid_times = flow.grid.times
    tol = residual_tolerance(flow.n, flow.grid.dt, tol_constants)
    entries = []
    for F in Fs:
        base_phi = F.reduces_to_base()
        if base_phi is not None:
            series, integrand = _base_residual_series(model, flow, base_phi)
        else:
            series = np.empty(n_times)
            integrand = np.empty(n_times)
            for k in range(n_times):
                zeta = flow.measure_at(k)
                series[k] = F.g.value(F.inner_values(zeta))
                integrand[k] = _lifted_measure_part(model, float(grid_times[k]), F, zeta, quad_order)
        resid = _residual_from_series(series, integrand, flow.grid.dt)
        for k in idx:
            r = float(resid[k])
            entries.append(
                ResidualEntry(
                    function_id=F.label,
                    t=float(grid_times[k]),
                    residual=r,
                    tolerance=tol,
                    passed=abs(r) <= tol,
                )
            )
    return ResidualTable(entries=entries, n=flow.n, h=flow.grid.dt, tol_constants=tol_constants)


# ---------------------------------------------------------------------------
# default batteries


def default_test_battery(dim: int) -> list:
    """Eight bump-type shapes: even, odd, localized, oscillatory."""
    return [
        make_test_function("bump", dim, r_in=3.0, r_out=6.0, label="bump_wide"),
        make_test_function("coord", dim, r_in=5.0, r_out=8.0, label="coord_plateau5"),
        make_test_function("sq", dim, r_in=4.0, r_out=7.0, label="radius_sq"),
        make_test_function("coord", dim, center=[1.0] + [0.0] * (dim - 1), r_in=3.0, r_out=5.0, label="coord_shift1"),
        make_test_function("cos", dim, r_in=4.0, r_out=6.0, label="cos_window"),
        make_test_function("bump", dim, center=[-1.0] + [0.0] * (dim - 1), r_in=2.0, r_out=4.5, label="bump_left"),
        make_test_function("axis_sq", dim, center=[0.5] + [0.0] * (dim - 1), r_in=3.0, r_out=5.5, label="axis_sq_shift"),
        make_test_function("coord3", dim, r_in=4.0, r_out=6.5, label="coord_cubed"),
    ]


def default_cylindrical_battery(dim: int) -> list:
    """Six lifted shapes: y-only, reduction, products, a square, an affine mix."""
    phi0_a = make_test_function("bump", dim, r_in=3.0, r_out=6.0, label="y_bump")
    phi0_b = make_test_function("coord", dim, r_in=5.0, r_out=8.0, label="y_coord")
    f1 = make_test_function("coord", dim, r_in=5.0, r_out=8.0, label="z_coord")
    f2 = make_test_function("sq", dim, r_in=4.0, r_out=7.0, label="z_sq")
    return [
        CylindricalFunction(g=g_constant(1.0), inner=(), phi0=phi0_a, label="y_only"),
        CylindricalFunction(g=g_identity(), inner=(f1,), phi0=None, label="reduction"),
        CylindricalFunction(g=g_identity(), inner=(f1,), phi0=phi0_b, label="product_y_z"),
        CylindricalFunction(g=g_square(), inner=(f1,), phi0=phi0_a, label="y_times_sq"),
        CylindricalFunction(g=g_product(), inner=(f1, f2), phi0=None, label="z_product"),
        CylindricalFunction(g=g_affine([1.0, 2.0]), inner=(f1, f2), phi0=phi0_b, label="y_affine_mix"),
    ]


def default_ito_battery(dim: int) -> list:
    f1 = make_test_function("coord", dim, r_in=5.0, r_out=8.0, label="z_coord")
    f2 = make_test_function("sq", dim, r_in=4.0, r_out=7.0, label="z_sq")
    return [
        CylindricalFunction(g=g_identity(), inner=(f1,), phi0=None, label="F_linear"),
        CylindricalFunction(g=g_square(), inner=(f1,), phi0=None, label="F_square"),
        CylindricalFunction(g=g_product(), inner=(f1, f2), phi0=None, label="F_product"),
    ]
