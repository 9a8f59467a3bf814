"""Oscillatory-input realization of bracket dynamics.

A bracket tree of depth 1 is realized by driving its two fields with a
quadrature pair at a common high frequency: the left argument gets
sqrt(2*w)*cos(w*t), the right one sqrt(2*w)*sin(w*t).  Averaging theory
then says the trajectory tracks the bracket flow with an O(1/sqrt(w))
error.  Depth 2 stacks a second, much faster pair on top (two-timescale
separation, ratio rho): the slow carrier of the outer pair rides on the
cos input of the inner pair, so the inner pair's averaged field is
modulated exactly like a plain input would be.  Concurrent pairs at the
same level get distinct integer frequency multiples so their cross terms
average out.

The amplitude constant matters: with sqrt(2*w) on both inputs the
averaged drift equals the bracket itself (measured slope 1.002 on the
canonical pair at w=200), whereas sqrt(w) yields half of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import Divergence, DomainError, ParseError, UnsupportedDepth
from .expr import py_source
from .vfield import (Bracket, BracketTree, Leaf, VectorField, tree_admissible,
                     tree_depth, tree_to_field)

STATE_BOUND = 1e8
MIN_OMEGA = 10.0
MIN_RHO = 10.0
DEFAULT_RHO = 100.0
# 20 steps per fastest period keeps RK4 stable; 80 pushes the integration
# error below the 1e-6 endpoint invariant so sweeps measure averaging
# error, not solver error.
MIN_STEPS_PER_PERIOD = 20
DEFAULT_STEPS_PER_PERIOD = 80


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Carrier:
    """One trigonometric factor amplitude*kind(freq*t) of an input."""

    kind: str  # "cos" or "sin"
    freq: float
    amplitude: float

    def __post_init__(self):
        if self.kind not in ("cos", "sin"):
            raise ValueError(f"carrier kind {self.kind!r}")
        if self.freq <= 0:
            raise ValueError("carrier frequency must be positive")

    def value_at(self, t: float) -> float:
        w = (math.cos if self.kind == "cos" else math.sin)(self.freq * t)
        return self.amplitude * w


def make_carrier(kind: str, freq: float) -> Carrier:
    return Carrier(kind, freq, math.sqrt(2.0 * freq))


@dataclass(frozen=True)
class ScheduleItem:
    """A field together with the product of carriers that modulates it.

    An empty carrier tuple means the field enters unmodulated (input 1),
    which is how bare leaves and drift-like terms ride along.
    """

    field: VectorField
    carriers: tuple[Carrier, ...]

    def input_at(self, t: float) -> float:
        u = 1.0
        for c in self.carriers:
            u *= c.value_at(t)
        return u

    def harmonics(self) -> dict[float, complex]:
        """Exact expansion of the carrier product as sum c_f * e^(i*f*t)."""
        terms: dict[float, complex] = {0.0: 1.0 + 0.0j}
        for c in self.carriers:
            if c.kind == "cos":
                parts = ((c.freq, 0.5 * c.amplitude),
                         (-c.freq, 0.5 * c.amplitude))
            else:
                parts = ((c.freq, -0.5j * c.amplitude),
                         (-c.freq, 0.5j * c.amplitude))
            nxt: dict[float, complex] = {}
            for f0, c0 in terms.items():
                for f1, c1 in parts:
                    f = f0 + f1
                    nxt[f] = nxt.get(f, 0.0) + c0 * c1
            terms = nxt
        return terms

    def dc_component(self) -> float:
        """Infinite-horizon mean of the input, computed analytically."""
        dc = self.harmonics().get(0.0, 0.0)
        return abs(dc)

    def period_integral(self, base_omega: float) -> float:
        """|integral of the input over one base period 2*pi/base_omega|.

        Harmonics whose frequency is an integer multiple of base_omega
        contribute exactly zero and are dropped analytically, so carrier
        products built from integer multiples report 0.0 rather than
        rounding noise.
        """
        period = 2.0 * math.pi / base_omega
        total = 0.0 + 0.0j
        for f, c in self.harmonics().items():
            if f == 0.0:
                total += c * period
                continue
            ratio = f / base_omega
            if abs(ratio - round(ratio)) < 1e-9 and round(ratio) != 0:
                continue
            total += c * (complex(math.cos(f * period),
                                  math.sin(f * period)) - 1.0) / (1j * f)
        return abs(total)


@dataclass(frozen=True)
class OscSchedule:
    """Everything integrate() needs: drift plus modulated fields."""

    dim: int
    omega: float
    rho: float
    drift: VectorField
    items: tuple[ScheduleItem, ...]

    @property
    def max_frequency(self) -> float:
        freqs = [c.freq for it in self.items for c in it.carriers]
        return max(freqs) if freqs else 0.0

    def default_step(self,
                     steps_per_period: int = DEFAULT_STEPS_PER_PERIOD) -> float:
        w = max(self.max_frequency, self.omega)
        return (2.0 * math.pi / w) / steps_per_period

    def max_step(self) -> float:
        """Largest h_int integrate() accepts for this schedule."""
        if self.max_frequency == 0.0:
            return math.inf
        return (2.0 * math.pi / self.max_frequency) / MIN_STEPS_PER_PERIOD


def build_schedule(trees: Sequence[BracketTree], dim: int, omega: float,
                   drift: VectorField | None = None,
                   rho: float = DEFAULT_RHO) -> OscSchedule:
    """Assign carriers to every leaf of every tree.

    Walking a bracket, the left child inherits the carriers accumulated
    so far plus a fresh cos at the pair frequency, while the right child
    starts over with just the fresh sin.  That asymmetry is what makes
    the slow modulation act on the inner pair's averaged field: the
    inherited product multiplies the cos input, and the averaged drift of
    a quadrature pair is linear in the cos amplitude.

    Pair frequencies are k*omega*rho^(level-1) with k counting brackets
    at each nesting level across the whole forest, so concurrent pairs
    never share a frequency.
    """
    if omega < MIN_OMEGA:
        raise ValueError(f"omega must be >= {MIN_OMEGA}, got {omega}")
    if rho < MIN_RHO:
        raise ValueError(f"rho must be >= {MIN_RHO}, got {rho}")
    if drift is not None and drift.dim != dim:
        raise ValueError("drift dimension mismatch")

    multiples: dict[int, int] = {}
    items: list[ScheduleItem] = []

    def assign(node: BracketTree, carriers: tuple[Carrier, ...], level: int):
        if isinstance(node, Leaf):
            items.append(ScheduleItem(node.field.as_field(dim), carriers))
            return
        k = multiples.get(level, 0) + 1
        multiples[level] = k
        freq = k * omega * rho ** (level - 1)
        assign(node.left, carriers + (make_carrier("cos", freq),), level + 1)
        assign(node.right, (make_carrier("sin", freq),), level + 1)

    for t in trees:
        d = tree_depth(t)
        if d > 2:
            raise UnsupportedDepth(
                f"bracket depth {d} exceeds the supported depth 2")
        if not tree_admissible(t):
            raise ValueError("every leaf must be tagged admissible")
        assign(t, (), 1)

    return OscSchedule(dim, float(omega), float(rho),
                       drift if drift is not None else VectorField.zero(dim),
                       tuple(items))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States sampled on a uniform time grid."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=float)
        if t.ndim != 1 or s.ndim != 2 or s.shape[0] != t.shape[0]:
            raise ValueError("times (n,) and states (n, dim) must align")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1].copy()

    def window_mean(self, fraction: float = 0.25) -> np.ndarray:
        """Componentwise mean over the trailing fraction of samples."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        n = self.states.shape[0]
        start = min(n - 1, int(math.floor(n * (1.0 - fraction))))
        return self.states[start:].mean(axis=0)

    def sup_distance(self, other: "Trajectory") -> float:
        """max_t |z(t) - other.z(t)| over the shared grid."""
        if self.states.shape != other.states.shape:
            raise ValueError("trajectories live on different grids")
        if not np.allclose(self.times, other.times, rtol=0, atol=1e-12):
            raise ValueError("trajectories live on different grids")
        return float(np.linalg.norm(self.states - other.states,
                                    axis=1).max())

    def to_csv_text(self) -> str:
        header = "t," + ",".join(f"z{i}" for i in range(1, self.dim + 1))
        lines = [header]
        for t, row in zip(self.times, self.states):
            lines.append(",".join([repr(float(t))]
                                  + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv_text(cls, text: str) -> "Trajectory":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ParseError("empty trajectory csv")
        cols = lines[0].split(",")
        if cols[0] != "t" or len(cols) < 2 or \
                any(c != f"z{i}" for i, c in enumerate(cols[1:], start=1)):
            raise ParseError(f"bad trajectory header {lines[0]!r}")
        times, states = [], []
        for ln in lines[1:]:
            parts = ln.split(",")
            if len(parts) != len(cols):
                raise ParseError(f"row width {len(parts)} != {len(cols)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as err:
                raise ParseError(f"bad number in row {ln!r}") from err
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"non-finite entry in row {ln!r}")
            times.append(vals[0])
            states.append(vals[1:])
        return cls(np.array(times), np.array(states))

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path) as fh:
            return cls.from_csv_text(fh.read())


# ---------------------------------------------------------------------------
# integration

Integrable = Union[VectorField, OscSchedule,
                   Callable[[float, Sequence[float]], Sequence[float]]]


def _compile_field_rhs(field: VectorField) -> Callable:
    comps = dict(field.components)
    body = ", ".join(py_source(comps[i]) if i in comps else "0.0"
                     for i in range(1, field.dim + 1))
    src = f"def _rhs(t, z):\n    return [{body}]\n"
    ns = {"_sin": math.sin, "_cos": math.cos,
          "_exp": math.exp, "_log": math.log}
    exec(src, ns)  # noqa: S102 - source generated from our own AST
    return ns["_rhs"]


def _compile_schedule_rhs(schedule: OscSchedule) -> Callable:
    drift = dict(schedule.drift.components)
    lines = ["def _rhs(t, z):"]
    for i in range(1, schedule.dim + 1):
        rhs = py_source(drift[i]) if i in drift else "0.0"
        lines.append(f"    r{i} = {rhs}")
    for n, item in enumerate(schedule.items):
        amp = 1.0
        factors = []
        for c in item.carriers:
            amp *= c.amplitude
            fn = "_cos" if c.kind == "cos" else "_sin"
            factors.append(f"{fn}({repr(c.freq)}*t)")
        factors.insert(0, repr(amp))
        lines.append(f"    u{n} = " + "*".join(factors))
        for i, e in item.field.components:
            lines.append(f"    r{i} += u{n}*({py_source(e)})")
    lines.append("    return [" +
                 ", ".join(f"r{i}" for i in range(1, schedule.dim + 1)) + "]")
    src = "\n".join(lines) + "\n"
    ns = {"_sin": math.sin, "_cos": math.cos,
          "_exp": math.exp, "_log": math.log}
    exec(src, ns)  # noqa: S102 - source generated from our own AST
    return ns["_rhs"]


def integrate(system: Integrable, z0: Sequence[float], T: float,
              h_int: float) -> Trajectory:
    """Fixed-step classical Runge-Kutta over [0, T].

    The step is shrunk so T is an integer multiple of it.  For an
    OscSchedule, h_int must give at least MIN_STEPS_PER_PERIOD samples of
    the fastest carrier; integrating an oscillation any coarser produces
    numbers that look plausible and mean nothing.
    """
    if T <= 0:
        raise ValueError("horizon T must be positive")
    if h_int <= 0:
        raise ValueError("step h_int must be positive")

    if isinstance(system, OscSchedule):
        if h_int > system.max_step() * (1 + 1e-12):
            raise ValueError(
                f"h_int={h_int:.3g} undersamples the fastest carrier "
                f"({system.max_frequency:.3g} rad/s needs h <= "
                f"{system.max_step():.3g})")
        if len(z0) != system.dim:
            raise ValueError("z0 dimension mismatch")
        rhs = _compile_schedule_rhs(system)
    elif isinstance(system, VectorField):
        if len(z0) != system.dim:
            raise ValueError("z0 dimension mismatch")
        rhs = _compile_field_rhs(system)
    else:
        rhs = system

    n = max(1, int(math.ceil(T / h_int - 1e-12)))
    h = T / n
    m = len(z0)
    z = [float(v) for v in z0]
    states = np.empty((n + 1, m))
    states[0] = z
    half = 0.5 * h
    sixth = h / 6.0
    rng = range(m)
    try:
        for step in range(n):
            t = step * h
            k1 = rhs(t, z)
            y = [z[q] + half * k1[q] for q in rng]
            k2 = rhs(t + half, y)
            y = [z[q] + half * k2[q] for q in rng]
            k3 = rhs(t + half, y)
            y = [z[q] + h * k3[q] for q in rng]
            k4 = rhs(t + h, y)
            z = [z[q] + sixth * (k1[q] + 2.0 * (k2[q] + k3[q]) + k4[q])
                 for q in rng]
            for v in z:
                if not math.isfinite(v) or abs(v) > STATE_BOUND:
                    raise Divergence(
                        f"|z| exceeded {STATE_BOUND:.0e} at t={t + h:.6g}",
                        t=t + h)
            states[step + 1] = z
    except OverflowError as err:
        raise Divergence(f"state overflow at t={t:.6g}: {err}", t=t) from err
    except (ValueError, ZeroDivisionError) as err:
        raise DomainError(f"singular evaluation at t={t:.6g}: {err}") from err
    return Trajectory(np.arange(n + 1) * h, states)


def approximate_bracket_trajectory(tree: BracketTree, z0: Sequence[float],
                                   T: float, omega: float,
                                   h_int: float | None = None,
                                   drift: VectorField | None = None,
                                   rho: float = DEFAULT_RHO) -> Trajectory:
    """Integrate the oscillatory system whose average is the tree's bracket.

    Drift terms pass through unmodulated.  A bare leaf degenerates to
    plain integration of the leaf field.  Depth above 2 raises
    UnsupportedDepth; inadmissible leaves and omega < 10 are rejected.
    """
    schedule = build_schedule([tree], len(z0), omega, drift=drift, rho=rho)
    if h_int is None:
        h_int = schedule.default_step()
    return integrate(schedule, z0, T, h_int)


def convergence_sweep(tree: BracketTree, z0: Sequence[float], T: float,
                      omegas: Sequence[float],
                      drift: VectorField | None = None,
                      rho: float = DEFAULT_RHO,
                      h_int: float | None = None) -> tuple[tuple[float, float], ...]:
    """sup-norm deviation from the bracket flow, one entry per omega.

    For each omega the exact bracket system is re-integrated on the same
    grid as the approximation, so the reported number is a pure
    trajectory distance with no interpolation.  The max runs over the
    whole window, so transient overshoot is included in the figure
    rather than reported separately.
    """
    if any(w < MIN_OMEGA for w in omegas):
        raise ValueError(f"every omega must be >= {MIN_OMEGA}")
    if any(b <= a for a, b in zip(omegas, omegas[1:])):
        raise ValueError("omegas must be strictly increasing")
    dim = len(z0)
    bracket_field = tree_to_field(tree, dim)
    if drift is not None:
        bracket_field = bracket_field.plus(drift)
    out = []
    for w in omegas:
        schedule = build_schedule([tree], dim, w, drift=drift, rho=rho)
        h = h_int if h_int is not None else schedule.default_step()
        approx = integrate(schedule, z0, T, h)
        exact = integrate(bracket_field, z0, T, h)
        out.append((float(w), approx.sup_distance(exact)))
    return tuple(out)


def sweep_to_csv_text(pairs: Sequence[tuple[float, float]]) -> str:
    lines = ["omega,sup_error"]
    for w, e in pairs:
        lines.append(f"{repr(float(w))},{repr(float(e))}")
    return "\n".join(lines) + "\n"


def sweep_from_csv_text(text: str) -> tuple[tuple[float, float], ...]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "omega,sup_error":
        raise ParseError("bad sweep header")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 2:
            raise ParseError(f"bad sweep row {ln!r}")
        try:
            out.append((float(parts[0]), float(parts[1])))
        except ValueError as err:
            raise ParseError(f"bad number in row {ln!r}") from err
    return tuple(out)
