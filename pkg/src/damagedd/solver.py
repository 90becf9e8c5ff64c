"""Adaptive load stepping and the modified Newton solve.

The driver iterates a secant-stiffness Newton scheme: each iteration
reassembles the stiffness with the current nonlocal damage field and
solves for a displacement correction.  Because the stress law is
``sigma = (1 - d) C eps``, the internal force equals ``K(d) u`` exactly,
so the only source of residual after the first correction is the damage
update itself.

Two solve backends share the driver through a small duck-typed protocol
(see :class:`MonolithicSystem` for the reference implementation):

``begin(u, load_factor) -> w``
    Copy the committed displacement into the backend's working
    numbering and impose the constrained values for this increment.
``trial(w, kappa) -> TrialFields``
    Evaluate strains and the nonlocal damage field for the working
    displacement, against the committed history ``kappa``.
``solve_correction(w, scale, lam) -> delta_w``
    One damped linear solve; zero at constrained entries.
``reaction(w, scale) -> float``
    Summed internal force over the reaction dof set.
``collapse(w) -> u``
    Map the working vector back to the original mesh numbering.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import linalg as spla

from .assembly import apply_damping
from .constitutive import equivalent_strain, mazars_damage

ACCEPT = "accept"
REPEAT = "repeat"


class SolveFailure(RuntimeError):
    """A linear solve produced no usable correction."""


@dataclass
class SolverConfig:
    """Tolerances and controller constants for the stepping driver."""

    rel_tol: float = 1e-5
    abs_floor: float = 1e-12
    max_iter: int = 250
    lambda_init: float = 1e-9
    lambda_cap: float = 1e-3
    lambda_factor: float = 10.0
    lambda_step_threshold: float = 1e-4
    lambda_failure_trigger: int = 5
    grow_factor: float = 1.5
    fast_iters: int = 5
    fast_count: int = 2
    failure_budget: int = 12
    max_repeats: int = 3

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.abs_floor <= 0.0:
            raise ValueError("abs_floor must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0.0 < self.lambda_init <= self.lambda_cap:
            raise ValueError("need 0 < lambda_init <= lambda_cap")
        if self.lambda_factor <= 1.0:
            raise ValueError("lambda_factor must exceed 1")
        if self.grow_factor < 1.0:
            raise ValueError("grow_factor must be at least 1")
        if self.failure_budget < 1 or self.max_repeats < 0:
            raise ValueError("bad controller budget")


class LambdaController:
    """Adaptive diagonal damping of the stiffness matrix.

    Damping stays off (``value == 0``) while stepping is easy.  It
    switches on when the step size has been ground down to the floor or
    when several increments in a row fail, and once active it follows
    the convergence trend within each increment: the value grows
    tenfold when the correction norm grows between iterations and
    shrinks tenfold (not below the initial value) when it decays.
    """

    def __init__(self, config: SolverConfig):
        self.config = config
        self.value = 0.0
        self.active = False
        self._failures = 0
        self._prev_norm = None

    def _activate(self):
        self.active = True
        self.value = max(self.value, self.config.lambda_init)

    def begin_increment(self, step):
        self._prev_norm = None
        if step <= self.config.lambda_step_threshold:
            self._activate()

    def after_iteration(self, norm):
        if self.active and self._prev_norm is not None:
            if norm > self._prev_norm:
                self.value = min(self.value * self.config.lambda_factor,
                                 self.config.lambda_cap)
            else:
                self.value = max(self.value / self.config.lambda_factor,
                                 self.config.lambda_init)
        self._prev_norm = norm

    def on_failure(self):
        self._failures += 1
        if self._failures >= self.config.lambda_failure_trigger:
            self._activate()
            self.value = min(self.value * self.config.lambda_factor,
                             self.config.lambda_cap)

    def on_success(self):
        self._failures = 0


@dataclass
class DamageState:
    """Committed history: equivalent-strain envelope and damage fields."""

    kappa: np.ndarray
    d_local: np.ndarray
    d_bar: np.ndarray

    @classmethod
    def zeros(cls, n_gauss):
        return cls(np.zeros(n_gauss), np.zeros(n_gauss), np.zeros(n_gauss))

    def copy(self):
        return DamageState(self.kappa.copy(), self.d_local.copy(),
                           self.d_bar.copy())


@dataclass
class TrialFields:
    """Per-gauss-point fields for one trial displacement."""

    eq: np.ndarray
    kappa: np.ndarray
    d_local: np.ndarray
    d_bar: np.ndarray
    scale: np.ndarray


class MonolithicSystem:
    """Direct solve over the whole mesh with one global stiffness."""

    mode = "monolithic"

    def __init__(self, ops, constraints, table, params, reaction_dofs):
        self.ops = ops
        self.constraints = constraints
        self.table = table
        self.params = params
        self.reaction_dofs = np.asarray(reaction_dofs, dtype=np.int64)

    @property
    def n_dofs(self):
        return self.ops.n_dofs

    def begin(self, u, load_factor):
        w = u.copy()
        self.constraints.apply(w, load_factor)
        return w

    def trial(self, w, kappa):
        eps = self.ops.strains(w)
        eq = equivalent_strain(eps, self.params)
        kap = np.maximum(kappa, eq)
        d = mazars_damage(kap, self.params)
        d_bar = self.table.average(d)
        return TrialFields(eq, kap, d, d_bar, 1.0 - d_bar)

    def solve_correction(self, w, scale, lam):
        K, f_int = self.ops.stiffness_and_force(scale, w)
        K = apply_damping(K, lam)
        r_free = -self.constraints.reduce_vector(f_int)
        K_free = self.constraints.reduce_matrix(K).tocsc()
        try:
            lu = spla.splu(K_free)
            delta_free = lu.solve(r_free)
        except RuntimeError as err:
            raise SolveFailure(str(err)) from err
        if not np.all(np.isfinite(delta_free)):
            raise SolveFailure("non-finite correction")
        return self.constraints.expand(delta_free)

    def reaction(self, w, scale):
        f = self.ops.internal_force(scale, w)
        return float(f[self.reaction_dofs].sum())

    def collapse(self, w):
        return w

    def describe(self):
        return {"mode": self.mode, "n_dofs": int(self.n_dofs)}


@dataclass
class IncrementRecord:
    """One accepted increment, as reported in the reaction history."""

    load_factor: float
    reaction: float
    iterations: int
    lam: float
    ms_total: float
    ms_imaging: float
    max_damage: float
    repeats: int
    mode: str

    def csv_row(self):
        return (f"{self.load_factor:.10g},{self.reaction:.12g},"
                f"{self.iterations},{self.lam:.6g},"
                f"{self.ms_total:.3f},{self.ms_imaging:.3f}")


@dataclass
class AnalysisResult:
    records: list
    completed: bool
    reason: str
    wall_ms: float

    @property
    def load_factors(self):
        return np.array([r.load_factor for r in self.records])

    @property
    def reactions(self):
        return np.array([r.reaction for r in self.records])

    @property
    def max_damage(self):
        return np.array([r.max_damage for r in self.records])


class Analysis:
    """Load-stepping driver around a solve backend.

    An optional observer is consulted after every converged increment,
    before the state is committed.  It may stage a replacement backend
    with :meth:`stage_system` and return either ``ACCEPT`` (commit the
    increment, then swap backends if one is staged) or ``REPEAT``
    (discard the increment and rerun it on the staged backend).
    Repeats of a single increment are bounded; once the bound is hit
    the increment is accepted as computed.
    """

    def __init__(self, system, program, config=None, observer=None):
        self.system = system
        self.program = program
        self.config = config or SolverConfig()
        self.observer = observer
        self.lam = LambdaController(self.config)
        self.state = DamageState.zeros(system.ops.n_gauss)
        self.u = np.zeros(system.ops.n_dofs)
        self.records = []
        self._staged = None
        self.increment_index = 0

    # backend swaps -----------------------------------------------------

    def stage_system(self, system):
        self._staged = system

    def _adopt_staged(self):
        if self._staged is not None:
            self.system = self._staged
            self._staged = None

    # one increment -----------------------------------------------------

    def _increment(self, target):
        cfg = self.config
        w = self.system.begin(self.u, target)
        ref = None
        converged = False
        iters = 0
        for iters in range(1, cfg.max_iter + 1):
            fields = self.system.trial(w, self.state.kappa)
            try:
                delta = self.system.solve_correction(w, fields.scale,
                                                     self.lam.value)
            except SolveFailure:
                return None
            w += delta
            norm = float(np.linalg.norm(delta))
            if ref is None:
                ref = norm
                converged = norm < cfg.abs_floor
            else:
                converged = norm < max(cfg.rel_tol * ref, cfg.abs_floor)
            if converged:
                break
            self.lam.after_iteration(norm)
        if not converged:
            return None
        fields = self.system.trial(w, self.state.kappa)
        reaction = self.system.reaction(w, fields.scale)
        return w, fields, iters, reaction

    # the run loop ------------------------------------------------------

    def run(self):
        cfg = self.config
        prog = self.program
        t_run = time.perf_counter()
        lf = 0.0
        step = prog.initial_step
        fast = 0
        floor_failures = 0
        repeats = 0
        reason = "completed"
        completed = True
        while lf < prog.max_load - 1e-12:
            target = min(lf + step, prog.max_load)
            self.lam.begin_increment(step)
            t0 = time.perf_counter()
            out = self._increment(target)
            if out is None:
                self.lam.on_failure()
                fast = 0
                at_floor = step <= prog.min_step * (1.0 + 1e-12)
                if at_floor:
                    floor_failures += 1
                    if floor_failures >= cfg.failure_budget:
                        reason = "no convergence at the minimum step size"
                        completed = False
                        break
                else:
                    step = max(0.5 * step, prog.min_step)
                continue
            w, fields, iters, reaction = out
            ms_total = (time.perf_counter() - t0) * 1e3
            record = IncrementRecord(target, reaction, iters, self.lam.value,
                                     ms_total, 0.0, float(fields.d_bar.max()),
                                     repeats, self.system.mode)
            action = ACCEPT
            if self.observer is not None:
                t1 = time.perf_counter()
                action = self.observer.after_increment(self, record, fields, w)
                record.ms_imaging = (time.perf_counter() - t1) * 1e3
                record.ms_total += record.ms_imaging
            if action == REPEAT and repeats < cfg.max_repeats:
                if self._staged is None:
                    raise RuntimeError(
                        "observer asked to repeat without staging a system")
                repeats += 1
                self._adopt_staged()
                continue
            self.u = self.system.collapse(w)
            self.state = DamageState(fields.kappa, fields.d_local,
                                     fields.d_bar)
            self.records.append(record)
            self.increment_index += 1
            self._adopt_staged()
            lf = target
            repeats = 0
            floor_failures = 0
            self.lam.on_success()
            if iters < cfg.fast_iters:
                fast += 1
                if fast >= cfg.fast_count:
                    step = min(step * cfg.grow_factor, prog.initial_step)
                    fast = 0
            else:
                fast = 0
        wall_ms = (time.perf_counter() - t_run) * 1e3
        return AnalysisResult(self.records, completed, reason, wall_ms)
