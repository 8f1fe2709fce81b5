"""Coefficient sets, jump-mark measures, the model zoo, and assumption audits.

A model is a triple of coefficient callables (drift, diffusion, jump) plus a
finite-activity mark measure.  The zoo ships small models whose growth,
one-sided Lipschitz and dissipativity constants are known in closed form, so
that every downstream tolerance can be pinned analytically.  User-supplied
coefficients are black boxes; their declared constants can only be audited by
sampling, which falsifies but never proves.

Coefficient calling convention (vectorized over a particle batch):

    drift(t, x, mu)      x: (k, d)  ->  (k, d)
    diffusion(t, x, mu)  x: (k, d)  ->  (k, d, m) or broadcastable (d, m)
    jump(t, x, mu, u)    x: (k, d), one mark u  ->  (k, d) or broadcastable

``mu`` is always an :class:`~mvjump.measure.EmpiricalMeasure`.  Callables must
be pure functions of their arguments (no shared mutable state): audits and
integrators call them from several workers concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from ._parallel import ordered_map
from .measure import EmpiricalMeasure, w2sq
from .sampler import NoiseStreamKey, StreamRole, key_rng


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# jump-mark measures


@dataclass(frozen=True)
class FiniteMarks:
    """Finite list of (mark, weight) pairs; weights are nu-masses, not probabilities."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if v.shape != w.shape:
            raise ModelError("marks and weights must have equal length")
        if (w < 0).any():
            raise ModelError("mark weights must be nonnegative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class DensityMarks:
    """Marks on an interval [low, high] with a density w.r.t. Lebesgue measure.

    ``density_bound`` must be supplied (a finite sup of the density) before
    fixed-node quadrature over the marks is allowed.
    """

    low: float
    high: float
    density: Callable[[np.ndarray], np.ndarray]
    density_bound: Optional[float] = None


@dataclass(frozen=True)
class JumpMeasure:
    """Mark measure nu on U with nu(U) < infinity.

    Finite activity is structural here: event times can then be simulated
    exactly and jump integrals reduce to finite sums (or fixed quadrature).
    """

    marks: Optional[FiniteMarks | DensityMarks]
    total_mass: float

    def __post_init__(self):
        if not math.isfinite(self.total_mass) or self.total_mass < 0:
            raise ModelError(f"nu(U) must be finite and nonnegative, got {self.total_mass}")
        if isinstance(self.marks, FiniteMarks):
            exact = float(self.marks.weights.sum())
            if exact != self.total_mass:
                raise ModelError(
                    f"total_mass {self.total_mass} != sum of weights {exact} (must be exact)"
                )

    @classmethod
    def finite(cls, values: Sequence[float], weights: Sequence[float]) -> "JumpMeasure":
        marks = FiniteMarks(np.asarray(values), np.asarray(weights))
        return cls(marks=marks, total_mass=float(marks.weights.sum()))

    @classmethod
    def none(cls) -> "JumpMeasure":
        return cls(marks=None, total_mass=0.0)

    def sample_marks(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """i.i.d. marks from nu / nu(U)."""
        if self.total_mass == 0.0 or self.marks is None:
            raise ModelError("cannot sample marks from a zero measure")
        if isinstance(self.marks, FiniteMarks):
            p = self.marks.weights / self.total_mass
            idx = rng.choice(len(p), size=size, p=p)
            return self.marks.values[idx]
        # inverse-CDF on a fixed grid: deterministic given the rng draws
        grid = np.linspace(self.marks.low, self.marks.high, 4097)
        dens = np.clip(self.marks.density(grid), 0.0, None)
        cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * np.diff(grid))])
        cdf /= cdf[-1]
        return np.interp(rng.random(size), cdf, grid)

    def weighted_marks(self, quad_order: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """(marks, weights) for integrals against nu(du).

        Exact for finite mark lists; fixed-node Gauss-Legendre against the
        density otherwise (refused when no density bound is declared).
        """
        if self.total_mass == 0.0 or self.marks is None:
            return np.empty(0), np.empty(0)
        if isinstance(self.marks, FiniteMarks):
            return self.marks.values, self.marks.weights
        if self.marks.density_bound is None or not math.isfinite(self.marks.density_bound):
            raise ModelError("quadrature over marks requires a finite declared density bound")
        x, w = leggauss(quad_order)
        half = 0.5 * (self.marks.high - self.marks.low)
        mid = 0.5 * (self.marks.high + self.marks.low)
        nodes = mid + half * x
        return nodes, w * half * np.clip(self.marks.density(nodes), 0.0, None)


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class CoefficientSet:
    """Drift, diffusion and jump coefficient of one equation.

    ``autonomous`` declares that the callables ignore their time argument;
    the long-run experiments require it and refuse models without it.
    """

    dim_state: int
    dim_noise: int
    drift: Callable
    diffusion: Callable
    jump: Callable
    autonomous: bool = True

    def drift_at(self, t: float, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        out = np.asarray(self.drift(t, x, mu), dtype=np.float64)
        return np.broadcast_to(out, x.shape)

    def diffusion_at(self, t: float, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        out = np.asarray(self.diffusion(t, x, mu), dtype=np.float64)
        return np.broadcast_to(out, (x.shape[0], self.dim_state, self.dim_noise))

    def jump_at(self, t: float, x: np.ndarray, mu: EmpiricalMeasure, u: float) -> np.ndarray:
        out = np.asarray(self.jump(t, x, mu, u), dtype=np.float64)
        return np.broadcast_to(out, x.shape)


@dataclass(frozen=True)
class Model:
    """One equation: coefficients plus its jump-mark measure."""

    coeffs: CoefficientSet
    jumps: JumpMeasure
    label: str = "custom"

    @property
    def dim_state(self) -> int:
        return self.coeffs.dim_state

    @property
    def dim_noise(self) -> int:
        return self.coeffs.dim_noise


# ---------------------------------------------------------------------------
# assumption constants and rates


@dataclass(frozen=True)
class RateReport:
    rate: float
    rate_hat: float
    base_condition_ok: bool
    hat_condition_ok: bool


@dataclass(frozen=True)
class AssumptionConstants:
    """Declared growth / Lipschitz / dissipativity constants of a model pair.

    One jump constant ``c4`` serves both the growth and the Lipschitz bound on
    the jump coefficient (the growth-only constant is subsumed by it).  Rates
    are derived, never stored: ``rate``/``rate_hat`` always equal the output
    of :func:`theoretical_rates` on these fields.
    """

    c1: float = 0.0
    c3: float = 0.0
    c4: float = 0.0
    c3_prime: float = 0.0
    c4_prime: float = 0.0
    c1_hat: float = 0.0
    c3_hat: float = 0.0
    c4_hat: float = 0.0
    c3_prime_hat: float = 0.0
    c4_prime_hat: float = 0.0
    nu1_mass: float = 0.0
    nu2_mass: float = 0.0

    def rates(self) -> RateReport:
        return theoretical_rates(self, self.nu1_mass, self.nu2_mass)

    @property
    def rate(self) -> float:
        return self.rates().rate

    @property
    def rate_hat(self) -> float:
        return self.rates().rate_hat


def theoretical_rates(
    constants: AssumptionConstants, nu1_mass: float, nu2_mass: float
) -> RateReport:
    """Decay rates implied by the declared constants.

    base:  rate     = c4' - c3' - (6 c4 + 1) nu1(U1), valid when rate > 4 c1
    hat:   rate_hat = c4_hat' - (3 c4_hat + 1) nu2(U2), valid when rate_hat > 2 c1_hat

    Pure arithmetic; no sampling, no tolerance.
    """
    rate = constants.c4_prime - constants.c3_prime - (6.0 * constants.c4 + 1.0) * nu1_mass
    rate_hat = constants.c4_prime_hat - (3.0 * constants.c4_hat + 1.0) * nu2_mass
    return RateReport(
        rate=rate,
        rate_hat=rate_hat,
        base_condition_ok=bool(rate > 4.0 * constants.c1),
        hat_condition_ok=bool(rate_hat > 2.0 * constants.c1_hat),
    )


@dataclass(frozen=True)
class ModelPair:
    """Base system feeding its measure flow into the hat system."""

    base: Model
    hat: Model
    constants: AssumptionConstants
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.base.dim_state != self.hat.dim_state:
            raise ModelError("base and hat systems must share the state dimension")


# ---------------------------------------------------------------------------
# model zoo


def _unit_direction(d: int) -> np.ndarray:
    return np.full(d, 1.0 / math.sqrt(d))


def _mvou_coeffs(a: float, beta: float, s0sq: float, gamma: float, d: int) -> CoefficientSet:
    sig_matrix = math.sqrt(s0sq) * np.eye(d)
    e = _unit_direction(d)

    def drift(t, x, mu):
        return -a * x + beta * mu.mean()

    def diffusion(t, x, mu):
        return sig_matrix

    def jump(t, x, mu, u):
        return gamma * u * e

    return CoefficientSet(
        dim_state=d, dim_noise=d, drift=drift, diffusion=diffusion, jump=jump, autonomous=True
    )


def _mvou_slots(a: float, beta: float, s0sq: float, gamma: float) -> dict:
    # |b|^2 <= 2a^2|x|^2 + 2beta^2 ||mu||_2^2, plus the constant diffusion
    c1 = max(s0sq, 2.0 * a * a, 2.0 * beta * beta)
    # 2<dx, db> = -2a|dx|^2 + 2 beta <dx, dm> <= -(2a-beta)|dx|^2 + beta W2^2
    return {
        "c1": c1,
        "c3": beta,
        "c4": gamma * gamma,
        "c3_prime": beta,
        "c4_prime": 2.0 * a - beta,
    }


def _build_mvou(params: dict) -> tuple[Model, dict]:
    p = {"a": 0.1, "beta": 0.01, "s0sq": 0.005, "gamma": 0.01, "rho": 0.01, "dim": 1}
    unknown = set(params) - set(p)
    if unknown:
        raise ModelError(f"unknown mvou-jump parameters: {sorted(unknown)}")
    p.update(params)
    a, beta, s0sq, gamma, rho = (p[k] for k in ("a", "beta", "s0sq", "gamma", "rho"))
    if a <= 0 or s0sq < 0 or rho < 0 or p["dim"] < 1:
        raise ModelError(f"mvou-jump parameters out of range: {p}")
    if 2.0 * a <= beta:
        raise ModelError("mvou-jump needs 2a > beta for a positive dissipativity constant")
    coeffs = _mvou_coeffs(a, beta, s0sq, gamma, p["dim"])
    if rho > 0:
        jumps = JumpMeasure.finite([-1.0, 1.0], [rho / 2.0, rho / 2.0])
    else:
        jumps = JumpMeasure.none()
    return Model(coeffs=coeffs, jumps=jumps, label="mvou-jump"), _mvou_slots(a, beta, s0sq, gamma)


def _build_zero(params: dict) -> tuple[Model, dict]:
    d = int(params.get("dim", 1))
    unknown = set(params) - {"dim"}
    if unknown:
        raise ModelError(f"unknown zero-model parameters: {sorted(unknown)}")

    def drift(t, x, mu):
        return np.zeros_like(x)

    def diffusion(t, x, mu):
        return np.zeros((d, d))

    def jump(t, x, mu, u):
        return np.zeros_like(x)

    coeffs = CoefficientSet(d, d, drift, diffusion, jump, autonomous=True)
    return Model(coeffs=coeffs, jumps=JumpMeasure.none(), label="zero"), {
        "c1": 0.0,
        "c3": 0.0,
        "c4": 0.0,
        "c3_prime": 0.0,
        "c4_prime": 0.0,
    }


def _build_const_drift(params: dict) -> tuple[Model, dict]:
    unknown = set(params) - {"v"}
    if unknown:
        raise ModelError(f"unknown const-drift parameters: {sorted(unknown)}")
    v = np.atleast_1d(np.asarray(params.get("v", [1.0]), dtype=np.float64))
    d = v.shape[0]

    def drift(t, x, mu):
        return np.broadcast_to(v, x.shape)

    def diffusion(t, x, mu):
        return np.zeros((d, d))

    def jump(t, x, mu, u):
        return np.zeros_like(x)

    coeffs = CoefficientSet(d, d, drift, diffusion, jump, autonomous=True)
    vsq = float(np.dot(v, v))
    return Model(coeffs=coeffs, jumps=JumpMeasure.none(), label="const-drift"), {
        "c1": vsq,
        "c3": 0.0,
        "c4": 0.0,
        "c3_prime": 0.0,
        "c4_prime": 0.0,
    }


_ZOO = {
    "mvou-jump": _build_mvou,
    "zero": _build_zero,
    "const-drift": _build_const_drift,
}

CANONICAL_PARAMS = {"a": 0.1, "beta": 0.01, "s0sq": 0.005, "gamma": 0.01, "rho": 0.01}


def build_model(config: dict) -> ModelPair:
    """Assemble a ModelPair from a configuration mapping.

    ``config["model"]`` (required) and ``config["hat_model"]`` (defaults to the
    base section) each name a zoo id with parameters.  Zoo constants are
    analytic; ``config["declared_constants"]`` may override individual slots,
    in which case :func:`audit_assumptions` is the tool for vetting them.
    """
    if "model" not in config:
        raise ModelError("config must contain a 'model' section")

    def build_one(section: dict) -> tuple[Model, dict]:
        model_id = section.get("id")
        if model_id not in _ZOO:
            raise ModelError(f"unknown model id {model_id!r}; known: {sorted(_ZOO)}")
        return _ZOO[model_id](dict(section.get("params", {})))

    base, base_slots = build_one(config["model"])
    hat_section = config.get("hat_model") or config["model"]
    hat, hat_slots = build_one(hat_section)

    slots = dict(base_slots)
    slots.update({f"{k}_hat": v for k, v in hat_slots.items()})
    slots["nu1_mass"] = base.jumps.total_mass
    slots["nu2_mass"] = hat.jumps.total_mass
    constants = AssumptionConstants(**slots)
    for key, value in config.get("declared_constants", {}).items():
        constants = replace(constants, **{key: float(value)})

    resolved = {
        "model": {"id": base.label, "params": dict(config["model"].get("params", {}))},
        "hat_model": {"id": hat.label, "params": dict(hat_section.get("params", {}))},
    }
    return ModelPair(base=base, hat=hat, constants=constants, config=resolved)


def canonical_pair(hat_params: Optional[dict] = None) -> ModelPair:
    """The linear jump-diffusion pair every tolerance in the suite is pinned to."""
    cfg = {"model": {"id": "mvou-jump", "params": dict(CANONICAL_PARAMS)}}
    if hat_params is not None:
        cfg["hat_model"] = {"id": "mvou-jump", "params": dict(hat_params)}
    return build_model(cfg)


def equal_rate_hat_params() -> dict:
    """mvou-jump hat parameters tuned so the hat rate equals the base rate."""
    base = AssumptionConstants(**_mvou_slots(**{k: CANONICAL_PARAMS[k] for k in ("a", "beta", "s0sq", "gamma")}), nu1_mass=CANONICAL_PARAMS["rho"])
    lam = base.rates().rate
    p = dict(CANONICAL_PARAMS)
    gamma, rho, beta = p["gamma"], p["rho"], p["beta"]
    # rate_hat = (2a - beta) - (3 gamma^2 + 1) rho == lam
    p["a"] = 0.5 * (lam + beta + (3.0 * gamma * gamma + 1.0) * rho)
    return p


# ---------------------------------------------------------------------------
# sampling audit of the declared constants


@dataclass(frozen=True)
class ProbePlan:
    """Deterministic stream of probe pairs on a compact range.

    Probe i is a pure function of (seed, i), so extending ``count`` appends
    probes without altering earlier ones; a counterexample found with a small
    plan is found by every larger one.  Every fourth probe pins the measures
    equal, and every fourth the points, to exercise the degenerate slices of
    the inequalities.
    """

    seed: int
    count: int
    x_radius: float = 10.0
    cloud_size: int = 16
    t_max: float = 1.0

    def probe(self, i: int, dim: int) -> dict:
        rng = key_rng(NoiseStreamKey(self.seed, StreamRole.PROBE, particle=0, index=i))
        r = self.x_radius
        t = float(rng.uniform(0.0, self.t_max))
        x1 = rng.uniform(-r, r, size=dim)
        x2 = rng.uniform(-r, r, size=dim)
        cloud1 = rng.uniform(-r, r, size=(self.cloud_size, dim))
        cloud2 = rng.uniform(-r, r, size=(self.cloud_size, dim))
        kind = i % 4
        if kind == 1:
            cloud2 = cloud1.copy()
        elif kind == 2:
            x2 = x1.copy()
        return {
            "index": i,
            "t": t,
            "x1": x1,
            "x2": x2,
            "mu1": EmpiricalMeasure(cloud1),
            "mu2": EmpiricalMeasure(cloud2),
        }


@dataclass
class AuditEntry:
    name: str
    declared: float
    observed: Optional[float]
    passed: bool
    counterexample: Optional[dict] = None


@dataclass
class AuditReport:
    """Outcome of a sampling audit: falsification only, never a proof.

    ``observed`` is the tightest constant the probe set forces; a pass means
    "no counterexample found on this probe set".
    """

    entries: list
    n_probes: int
    all_pass: bool = field(init=False)

    def __post_init__(self):
        self.all_pass = all(e.passed for e in self.entries)

    def entry(self, name: str) -> AuditEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


_AUDIT_SLACK = 1e-9


def _audit_one_system(model: Model, constants: dict, probes: list, prefix: str) -> list:
    """Observed constants for one equation's growth/Lipschitz/dissipativity bounds."""
    coeffs = model.coeffs
    marks, _ = model.jumps.weighted_marks()

    growth_c1 = 0.0
    growth_c1_witness = None
    growth_c4 = 0.0
    growth_c4_witness = None
    lip_c3 = -math.inf
    lip_c3_witness = None
    lip_c4 = 0.0
    lip_c4_witness = None
    diss_implied = math.inf
    diss_witness = None
    diss_violation = None

    for pr in probes:
        t = pr["t"]
        for x, mu in ((pr["x1"], pr["mu1"]), (pr["x2"], pr["mu2"])):
            xb = x[None, :]
            scale = 1.0 + float(np.dot(x, x)) + mu.second_moment()
            b = coeffs.drift_at(t, xb, mu)[0]
            sig = coeffs.diffusion_at(t, xb, mu)[0]
            val = (float(np.dot(b, b)) + float(np.sum(sig * sig))) / scale
            if val > growth_c1:
                growth_c1, growth_c1_witness = val, pr["index"]
            for u in marks:
                fv = coeffs.jump_at(t, xb, mu, float(u))[0]
                val = float(np.dot(fv, fv)) / scale
                if val > growth_c4:
                    growth_c4, growth_c4_witness = val, pr["index"]

        x1, x2, mu1, mu2 = pr["x1"], pr["x2"], pr["mu1"], pr["mu2"]
        dx = x1 - x2
        dxsq = float(np.dot(dx, dx))
        wsq = w2sq(mu1, mu2, method="auto")
        denom = dxsq + wsq
        b1 = coeffs.drift_at(t, x1[None, :], mu1)[0]
        b2 = coeffs.drift_at(t, x2[None, :], mu2)[0]
        s1 = coeffs.diffusion_at(t, x1[None, :], mu1)[0]
        s2 = coeffs.diffusion_at(t, x2[None, :], mu2)[0]
        ds = s1 - s2
        one_sided = 2.0 * float(np.dot(dx, b1 - b2)) + float(np.sum(ds * ds))
        if denom > 0:
            val = one_sided / denom
            if val > lip_c3:
                lip_c3, lip_c3_witness = val, pr["index"]
            for u in marks:
                f1 = coeffs.jump_at(t, x1[None, :], mu1, float(u))[0]
                f2 = coeffs.jump_at(t, x2[None, :], mu2, float(u))[0]
                df = f1 - f2
                val = float(np.dot(df, df)) / denom
                if val > lip_c4:
                    lip_c4, lip_c4_witness = val, pr["index"]
        # dissipativity: one_sided <= c3' W2^2 - c4' |dx|^2
        bound = constants["c3_prime"] * wsq - constants["c4_prime"] * dxsq
        slack = _AUDIT_SLACK * (1.0 + abs(one_sided) + abs(bound))
        if one_sided > bound + slack and diss_violation is None:
            diss_violation = {
                "probe": pr["index"],
                "lhs": one_sided,
                "bound": bound,
                "x1": x1.tolist(),
                "x2": x2.tolist(),
            }
        if dxsq > 0:
            implied = (constants["c3_prime"] * wsq - one_sided) / dxsq
            if implied < diss_implied:
                diss_implied, diss_witness = implied, pr["index"]

    def entry(name, declared, observed, ok, witness):
        ce = None if ok else {"probe": witness}
        return AuditEntry(name=name, declared=declared, observed=observed, passed=ok, counterexample=ce)

    out = [
        entry(
            f"{prefix}growth_c1",
            constants["c1"],
            growth_c1,
            growth_c1 <= constants["c1"] + _AUDIT_SLACK * (1 + constants["c1"]),
            growth_c1_witness,
        ),
        entry(
            f"{prefix}jump_growth_c4",
            constants["c4"],
            growth_c4,
            growth_c4 <= constants["c4"] + _AUDIT_SLACK * (1 + constants["c4"]),
            growth_c4_witness,
        ),
        entry(
            f"{prefix}one_sided_c3",
            constants["c3"],
            lip_c3 if lip_c3 > -math.inf else None,
            lip_c3 <= constants["c3"] + _AUDIT_SLACK * (1 + abs(constants["c3"])),
            lip_c3_witness,
        ),
        entry(
            f"{prefix}jump_lipschitz_c4",
            constants["c4"],
            lip_c4,
            lip_c4 <= constants["c4"] + _AUDIT_SLACK * (1 + constants["c4"]),
            lip_c4_witness,
        ),
    ]
    diss_ok = diss_violation is None
    diss_entry = AuditEntry(
        name=f"{prefix}dissipativity_c4_prime",
        declared=constants["c4_prime"],
        observed=None if diss_implied == math.inf else diss_implied,
        passed=diss_ok,
        counterexample=diss_violation,
    )
    out.append(diss_entry)
    return out


def audit_assumptions(pair: ModelPair, plan: ProbePlan, workers: Optional[int] = None) -> AuditReport:
    """Probe the declared constants of both systems on a finite sample.

    Returns, per inequality, the tightest constant the probes force and a
    pass/fail flag against the declared value.  A violated declaration is
    reported as a counterexample with its witnessing probe index, not raised.
    """
    if plan.count <= 0:
        raise ModelError("probe plan is empty")
    d = pair.base.dim_state
    c = pair.constants
    base_consts = {
        "c1": c.c1,
        "c3": c.c3,
        "c4": c.c4,
        "c3_prime": c.c3_prime,
        "c4_prime": c.c4_prime,
    }
    hat_consts = {
        "c1": c.c1_hat,
        "c3": c.c3_hat,
        "c4": c.c4_hat,
        "c3_prime": c.c3_prime_hat,
        "c4_prime": c.c4_prime_hat,
    }

    chunk = 512
    chunks = [range(lo, min(lo + chunk, plan.count)) for lo in range(0, plan.count, chunk)]

    def run_chunk(idx_range):
        probes = [plan.probe(i, d) for i in idx_range]
        return (
            _audit_one_system(pair.base, base_consts, probes, "base_"),
            _audit_one_system(pair.hat, hat_consts, probes, "hat_"),
        )

    partials = ordered_map(run_chunk, chunks, workers=workers)

    merged: dict[str, AuditEntry] = {}
    for base_entries, hat_entries in partials:
        for e in base_entries + hat_entries:
            cur = merged.get(e.name)
            if cur is None:
                merged[e.name] = e
                continue
            if e.name.endswith("dissipativity_c4_prime"):
                observed = _merge_min(cur.observed, e.observed)
            else:
                observed = _merge_max(cur.observed, e.observed)
            passed = cur.passed and e.passed
            ce = cur.counterexample if cur.counterexample is not None else e.counterexample
            merged[e.name] = AuditEntry(
                name=e.name, declared=e.declared, observed=observed, passed=passed, counterexample=ce
            )
    return AuditReport(entries=list(merged.values()), n_probes=plan.count)


def _merge_max(a, b):
    vals = [v for v in (a, b) if v is not None]
    return max(vals) if vals else None


def _merge_min(a, b):
    vals = [v for v in (a, b) if v is not None]
    return min(vals) if vals else None
