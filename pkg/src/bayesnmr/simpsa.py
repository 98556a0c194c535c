"""Simulated-annealing Nelder-Mead simplex (SIMPSA) for bounded maximization.

The simplex moves are the usual reflect / expand / contract / shrink. At
temperature T every stored vertex value is penalized by T*|log u| and every
trial point is favoured by T*|log u| (u ~ U(0, 1) drawn fresh per
comparison), so at high T the simplex performs a biased random walk that
can climb out of local optima; as T is lowered it turns into a plain
downhill simplex. Internally the problem is minimization of -objective on
the unit box; coordinates leaving the box are reflected back into it.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float
    init: float
    log_scale: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if not self.lower <= self.init <= self.upper:
            raise ValueError(f"{self.name}: init {self.init} outside [{self.lower}, {self.upper}]")
        if self.log_scale and not self.lower > 0:
            raise ValueError(f"{self.name}: log-scaled dimension needs positive bounds")


@dataclass(frozen=True)
class BoundedParamSpace:
    dims: tuple[Dim, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        lo = np.array([d.lower for d in self.dims], float)
        hi = np.array([d.upper for d in self.dims], float)
        lg = np.array([d.log_scale for d in self.dims], bool)
        los = np.where(lg, np.log(np.where(lg, lo, 1.0)), lo)
        his = np.where(lg, np.log(np.where(lg, hi, 1.0)), hi)
        # cached transform constants; the dataclass itself stays immutable
        object.__setattr__(self, "_cache", (lo, hi, lg, los, his - los))

    def __len__(self):
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def lower(self) -> np.ndarray:
        return self._cache[0].copy()

    @property
    def upper(self) -> np.ndarray:
        return self._cache[1].copy()

    @property
    def init(self) -> np.ndarray:
        return np.array([d.init for d in self.dims])

    def to_unit(self, x) -> np.ndarray:
        x = np.array(x, float)
        _, _, lg, los, span = self._cache
        x[lg] = np.log(x[lg])
        return (x - los) / span

    def from_unit(self, u) -> np.ndarray:
        lo, hi, lg, los, span = self._cache
        x = los + np.asarray(u, float) * span
        if lg.any():
            x[lg] = np.exp(x[lg])
        # exp/affine round-off must not leak outside the box
        return np.minimum(np.maximum(x, lo), hi)

    def with_init(self, x) -> "BoundedParamSpace":
        """Same box with the start point moved to ``x`` (clipped into the box)."""
        x = np.clip(np.asarray(x, float), self.lower, self.upper)
        return BoundedParamSpace(tuple(replace(d, init=float(v)) for d, v in zip(self.dims, x)))

    def contains(self, x) -> bool:
        x = np.asarray(x, float)
        return bool(np.all(x >= self._cache[0]) and np.all(x <= self._cache[1]))


@dataclass(frozen=True)
class AnnealSchedule:
    t_initial: float
    cooling_factor: float = 0.9
    steps_per_temp: int = 100
    t_final: float | None = None
    restarts: int = 10
    seed: int = 0
    initial_step: float = 0.25
    polish_iters: int = 2000
    xtol: float = 1e-10
    ftol: float = 1e-12
    reseed: bool = True

    def __post_init__(self):
        if self.t_final is None:
            object.__setattr__(self, "t_final", 1e-3 * self.t_initial)
        if not self.t_initial > 0 or not self.t_final > 0:
            raise ValueError("temperatures must be > 0")
        if not self.t_final < self.t_initial:
            raise ValueError("t_final must be < t_initial")
        if not 0 < self.cooling_factor < 1:
            raise ValueError("cooling_factor must lie in (0, 1)")
        if self.steps_per_temp < 1 or self.restarts < 1:
            raise ValueError("steps_per_temp and restarts must be >= 1")

    @property
    def n_levels(self) -> int:
        return int(math.ceil(math.log(self.t_final / self.t_initial) / math.log(self.cooling_factor)))

    def temperatures(self) -> np.ndarray:
        return self.t_initial * self.cooling_factor ** np.arange(self.n_levels + 1)


@dataclass
class OptimResult:
    best_point: np.ndarray
    best_value: float
    trace: list[tuple[float, float]]
    restart_values: list[float]
    evaluations: int
    restart_points: list[np.ndarray] = field(default_factory=list)
    restart_traces: list[list[tuple[float, int, float]]] = field(default_factory=list)
    best_restart: int = 0
    histories: list[np.ndarray] | None = None


class NoFiniteObjectiveError(RuntimeError):
    pass


def reflect_into_unit(u: np.ndarray) -> np.ndarray:
    """Fold coordinates back into [0, 1] by mirror reflection at the faces."""
    u = np.mod(u, 2.0)
    return np.where(u > 1.0, 2.0 - u, u)


class _Bookkeeper:
    """Evaluates the minimization target on unit coordinates and tracks the best point."""

    def __init__(self, objective, space):
        self.objective = objective
        self.space = space
        self.evals = 0
        self.best_u = None
        self.best_f = math.inf
        self.history = None

    def __call__(self, u):
        x = self.space.from_unit(u)
        assert self.space.contains(x), f"evaluation point {x} outside bounds"
        val = self.objective(x)
        self.evals += 1
        f = -float(val) if np.isfinite(val) else math.inf
        if self.history is not None:
            self.history.append(u.copy())
        if f < self.best_f:
            self.best_f = f
            self.best_u = u.copy()
        return f


class _Simplex:
    """Downhill simplex with thermal fluctuations (minimization on the unit box)."""

    def __init__(self, book: _Bookkeeper, vertices: np.ndarray, rng):
        self.book = book
        self.p = np.array(vertices, float)
        self.y = np.array([book(v) for v in self.p])
        self.rng = rng

    def _noise(self, T):
        if T <= 0 or self.rng is None:
            return 0.0
        return -T * math.log(self.rng.random())

    def _try(self, ihi, yhi, fac, T):
        psum = self.p.sum(axis=0)
        ndim = self.p.shape[1]
        fac1 = (1.0 - fac) / ndim
        fac2 = fac1 - fac
        ptry = reflect_into_unit(psum * fac1 - self.p[ihi] * fac2)
        ytry = self.book(ptry)
        yflu = ytry - self._noise(T)
        if yflu < yhi:
            self.p[ihi] = ptry
            self.y[ihi] = ytry
            yhi = yflu
        return yflu, yhi

    def run(self, T: float, max_iter: int, xtol: float, ftol: float) -> bool:
        """Advance at fixed temperature; True when the simplex has collapsed."""
        n = self.p.shape[0]
        it = 0
        while it < max_iter:
            yt = np.array([self.y[i] + self._noise(T) for i in range(n)])
            order = np.argsort(yt, kind="stable")
            ilo, ihi, inhi = order[0], order[-1], order[-2]
            ylo, yhi, ynhi = yt[ilo], yt[ihi], yt[inhi]
            spread = np.max(np.abs(self.p - self.p[ilo]))
            if spread < xtol or (np.isfinite(yhi) and abs(yhi - ylo) <= ftol * (abs(yhi) + abs(ylo)) + 1e-300):
                return True
            ytry, yhi = self._try(ihi, yhi, -1.0, T)
            it += 1
            if ytry <= ylo:
                self._try(ihi, yhi, 2.0, T)
            elif ytry >= ynhi:
                ysave = yhi
                ytry, yhi = self._try(ihi, yhi, 0.5, T)
                if ytry >= ysave:
                    for i in range(n):
                        if i != ilo:
                            self.p[i] = 0.5 * (self.p[i] + self.p[ilo])
                            self.y[i] = self.book(self.p[i])
        return False


def _is_thermal(T: float, f_best: float) -> bool:
    """True when thermal noise at T is resolvable next to objective values of size f_best."""
    scale = abs(f_best) if math.isfinite(f_best) else 1.0
    return T > 1e-12 * (1.0 + scale)


def initial_simplex(u0: np.ndarray, step: float, rng) -> np.ndarray:
    """Axis-aligned simplex around ``u0`` with random step signs, folded into the box."""
    d = u0.size
    signs = np.where(rng.random(d) < 0.5, -1.0, 1.0)
    verts = [u0.copy()]
    for i in range(d):
        v = u0.copy()
        v[i] += signs[i] * step
        verts.append(reflect_into_unit(v))
    return np.array(verts)


def _restart_start(space, k, rng, from_random):
    if k == 0 or not from_random:
        return space.to_unit(space.init)
    return rng.random(len(space))


def _run_restart(objective, space, sched, k, from_random, writer_rows, record):
    rng = np.random.default_rng([sched.seed, k])
    book = _Bookkeeper(objective, space)
    if record:
        book.history = []
    u0 = _restart_start(space, k, rng, from_random)
    smp = _Simplex(book, initial_simplex(u0, sched.initial_step, rng), rng)
    trace = []
    T0 = sched.t_initial
    for T in sched.temperatures():
        if sched.reseed and book.best_u is not None and _is_thermal(T, book.best_f):
            # re-centre on the incumbent with a radius shrinking like sqrt(T)
            step = sched.initial_step * math.sqrt(T / T0)
            smp = _Simplex(book, initial_simplex(book.best_u, step, rng), rng)
        smp.run(T, sched.steps_per_temp, sched.xtol, sched.ftol)
        trace.append((float(T), book.evals, -book.best_f))
    # zero-temperature polish, restarted once so a collapsed simplex can re-expand
    for _ in range(2):
        if book.best_u is None:
            break
        smp = _Simplex(book, initial_simplex(book.best_u, 1e-3, rng), None)
        smp.run(0.0, sched.polish_iters, sched.xtol, sched.ftol)
    trace.append((0.0, book.evals, -book.best_f))
    writer_rows[k] = trace
    return book


def simpsa_maximize(objective: Callable[[np.ndarray], float], space: BoundedParamSpace,
                    sched: AnnealSchedule, *, restart_from_random: bool = True,
                    workers: int = 1, trace_csv=None, record_history: bool = False) -> OptimResult:
    """Maximize ``objective`` over the box ``space`` with annealed simplex restarts.

    Restart 0 starts from ``space.init``; the others from uniform random
    points unless ``restart_from_random`` is False. Each restart owns a
    generator seeded with ``(sched.seed, k)`` so results do not depend on
    ``workers``. The returned best is the highest unperturbed objective seen;
    ties go to the lowest restart index. ``record_history`` keeps every
    evaluated unit-box point per restart.
    """
    rows: dict[int, list] = {}
    run = lambda k: _run_restart(objective, space, sched, k, restart_from_random, rows,
                                 record_history)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            books = list(ex.map(run, range(sched.restarts)))
    else:
        books = [run(k) for k in range(sched.restarts)]

    values = [-b.best_f for b in books]
    if not any(np.isfinite(v) for v in values):
        raise NoFiniteObjectiveError("objective was never finite in any restart")
    best_k = max(range(len(values)), key=lambda k: (values[k], -k))
    points = [space.from_unit(b.best_u) if b.best_u is not None else None for b in books]
    if trace_csv is not None:
        _write_trace(trace_csv, rows)
    return OptimResult(
        best_point=points[best_k],
        best_value=values[best_k],
        trace=[(T, inc) for T, _, inc in rows[best_k]],
        restart_values=values,
        evaluations=sum(b.evals for b in books),
        restart_points=points,
        restart_traces=[rows[k] for k in range(sched.restarts)],
        best_restart=best_k,
        histories=[np.array(b.history) for b in books] if record_history else None,
    )


def _write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["restart", "temperature", "eval_count", "incumbent"])
        for k in sorted(rows):
            for T, n, inc in rows[k]:
                w.writerow([k, repr(T), n, repr(inc)])


def nelder_mead_bounded(objective: Callable[[np.ndarray], float], space: BoundedParamSpace,
                        vertices_unit: np.ndarray, max_iter: int, xtol: float = 1e-10,
                        ftol: float = 1e-12, history: list | None = None) -> tuple[np.ndarray, float]:
    """Plain bounded Nelder-Mead maximization from a given unit-box simplex."""
    book = _Bookkeeper(objective, space)
    book.history = history
    smp = _Simplex(book, vertices_unit, None)
    smp.run(0.0, max_iter, xtol, ftol)
    return space.from_unit(book.best_u), -book.best_f


def default_schedule(objective: Callable[[np.ndarray], float], space: BoundedParamSpace,
                     seed: int = 0, n_probe: int = 50, **overrides) -> AnnealSchedule:
    """Schedule with t_initial = 2 x sd of the objective over random probe points."""
    rng = np.random.default_rng([seed, 2**31 - 1])
    vals = np.array([objective(space.from_unit(rng.random(len(space)))) for _ in range(n_probe)])
    vals = vals[np.isfinite(vals)]
    sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 1.0
    params = dict(t_initial=2.0 * sd if sd > 0 else 1.0, cooling_factor=0.9,
                  steps_per_temp=20 * len(space), restarts=10, seed=seed)
    params.update(overrides)
    return AnnealSchedule(**params)


def tail_variance(fid, fraction: float = 0.1) -> float:
    """Per-channel noise variance estimated from the last ``fraction`` of both channels."""
    k = max(2, int(round(fraction * fid.y1.size)))
    tail = np.concatenate([fid.y1[-k:], fid.y2[-k:]])
    return float(np.var(tail, ddof=1))


def default_space(table, acq, fid, freq_halfwidth_ppm: float = 3.0,
                  alpha_bounds=(1.0, 200.0), alpha_init: float = 10.0,
                  tau_max_samples: int = 128, v_span: float = 1e4) -> BoundedParamSpace:
    """Search box over (frequencies, theta, tau, alpha, v) for the evidence.

    Frequencies: table value +- ``freq_halfwidth_ppm`` (in rad/s); theta one
    full period; tau in [0, 128 dt]; alpha in [1, 200] 1/s; v log-scaled over
    [1e-4, 1e4] x the tail variance of the FID, initialized at the tail
    variance.
    """
    from .model import ppm_to_rad_s

    dims = []
    for label, f in zip(table.line_labels(), table.freqs_ppm):
        c = ppm_to_rad_s(f, acq)
        hw = ppm_to_rad_s(freq_halfwidth_ppm, acq)
        dims.append(Dim(f"freq:{label}", c - hw, c + hw, c))
    dims.append(Dim("theta", -np.pi, np.pi, 0.0))
    dims.append(Dim("tau", 0.0, tau_max_samples * acq.dt_s, 0.0))
    dims.append(Dim("alpha", alpha_bounds[0], alpha_bounds[1], alpha_init))
    v0 = tail_variance(fid)
    dims.append(Dim("v", v0 / v_span, v0 * v_span, v0, log_scale=True))
    return BoundedParamSpace(tuple(dims))
