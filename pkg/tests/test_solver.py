"""Load-stepping driver, damping controller, and convergence semantics.

The stepping loop is exercised with small scripted backends that
prescribe exactly how many iterations each load target needs, so the
halving / growth / budget / observer paths can be asserted without any
finite-element assembly.  One test runs the real monolithic backend on
an elastic problem as an end-to-end sanity check.
"""

import numpy as np
import pytest

from damagedd.assembly import Constraints, Operators
from damagedd.constitutive import MaterialParams, NonlocalTable
from damagedd.mesh import LoadProgram, generate_benchmark_mesh
from damagedd.solver import (
    ACCEPT,
    REPEAT,
    Analysis,
    DamageState,
    IncrementRecord,
    LambdaController,
    MonolithicSystem,
    SolveFailure,
    SolverConfig,
    TrialFields,
)


class _SimpleOps:
    def __init__(self, n_gauss=1, n_dofs=4):
        self.n_gauss = n_gauss
        self.n_dofs = n_dofs


class ScriptedSystem:
    """Backend whose convergence behavior is a function of the target.

    ``needs(target, attempt)`` returns how many iterations the increment
    takes: ``1`` converges on the first iterate (zero correction), ``n``
    converges on the n-th, ``None`` never converges, and ``"raise"``
    raises :class:`SolveFailure` immediately.
    """

    def __init__(self, needs, mode="scripted", rel_tol=1e-2):
        self.ops = _SimpleOps()
        self.needs = needs
        self.mode = mode
        self.rel_tol = rel_tol
        self.attempts = {}
        self.begun = []
        self._need = 1
        self._iter = 0

    def begin(self, u, target):
        key = round(target, 9)
        self.attempts[key] = self.attempts.get(key, 0) + 1
        self._need = self.needs(target, self.attempts[key])
        self._iter = 0
        self.begun.append(target)
        return np.asarray(u, dtype=float).copy()

    def trial(self, w, kappa):
        z = np.zeros(self.ops.n_gauss)
        return TrialFields(z, z, z, z, np.ones(self.ops.n_gauss))

    def solve_correction(self, w, scale, lam):
        if self._need == "raise":
            raise SolveFailure("scripted breakdown")
        self._iter += 1
        delta = np.zeros(self.ops.n_dofs)
        if self._need is not None and self._iter >= self._need:
            if self._need > 1:
                delta[0] = 0.5 * self.rel_tol  # below rel_tol * ref (ref = 1.0)
        elif self._iter == 1:
            delta[0] = 1.0
        else:
            delta[0] = 0.5
        return delta

    def reaction(self, w, scale):
        return 2.0 * self.begun[-1]

    def collapse(self, w):
        return w

    def describe(self):
        return {"mode": self.mode}


class ScriptedObserver:
    """Returns a scripted sequence of actions (last one repeats forever)."""

    def __init__(self, actions, stage_factory=None):
        self.actions = list(actions)
        self.stage_factory = stage_factory
        self.calls = []

    def after_increment(self, analysis, record, fields, w):
        action = self.actions.pop(0) if len(self.actions) > 1 else self.actions[0]
        self.calls.append((record.load_factor, action))
        if action == REPEAT and self.stage_factory is not None:
            analysis.stage_system(self.stage_factory())
        return action


def _ok(target, attempt):
    return 1


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(rel_tol=0.0),
        dict(rel_tol=1.0),
        dict(abs_floor=0.0),
        dict(max_iter=0),
        dict(lambda_init=0.0),
        dict(lambda_init=1e-2, lambda_cap=1e-3),
        dict(lambda_factor=1.0),
        dict(grow_factor=0.5),
        dict(failure_budget=0),
        dict(max_repeats=-1),
    ],
)
def test_solver_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_solver_config_defaults_are_valid():
    cfg = SolverConfig()
    assert cfg.rel_tol == 1e-5
    assert cfg.max_iter == 250
    assert cfg.lambda_cap >= cfg.lambda_init


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(initial_step=0.0),
        dict(initial_step=2.0, max_load=1.0),
        dict(min_step=0.0),
    ],
)
def test_load_program_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        LoadProgram(**kwargs)


# ---------------------------------------------------------------------------
# damping controller
# ---------------------------------------------------------------------------


def test_damping_stays_off_for_easy_stepping():
    lam = LambdaController(SolverConfig())
    assert lam.value == 0.0 and not lam.active
    lam.begin_increment(0.02)
    lam.after_iteration(1.0)
    lam.after_iteration(10.0)  # rising norm, but damping is inactive
    assert lam.value == 0.0 and not lam.active


def test_damping_activates_at_the_step_floor():
    lam = LambdaController(SolverConfig())
    lam.begin_increment(1e-4)
    assert lam.active
    assert lam.value == pytest.approx(1e-9)


def test_damping_follows_the_convergence_trend():
    cfg = SolverConfig()
    lam = LambdaController(cfg)
    lam.begin_increment(1e-4)
    lam.after_iteration(1.0)  # first norm only records the baseline
    assert lam.value == pytest.approx(1e-9)
    lam.after_iteration(2.0)  # rising -> x10
    assert lam.value == pytest.approx(1e-8)
    lam.after_iteration(1.5)  # falling -> /10, floored at the initial value
    assert lam.value == pytest.approx(1e-9)
    lam.after_iteration(1.0)
    assert lam.value == pytest.approx(1e-9)  # cannot drop below the floor
    for k in range(10):
        lam.after_iteration(float(2 + k))  # keep rising
    assert lam.value == pytest.approx(cfg.lambda_cap)  # capped


def test_damping_activates_after_consecutive_failures():
    cfg = SolverConfig()
    lam = LambdaController(cfg)
    for _ in range(cfg.lambda_failure_trigger - 1):
        lam.on_failure()
    assert not lam.active
    lam.on_success()  # success resets the count
    for _ in range(cfg.lambda_failure_trigger - 1):
        lam.on_failure()
    assert not lam.active
    lam.on_failure()  # the trigger-th consecutive failure
    assert lam.active
    assert lam.value == pytest.approx(1e-9 * cfg.lambda_factor)
    lam.on_failure()  # further failures keep escalating
    assert lam.value == pytest.approx(1e-9 * cfg.lambda_factor**2)


# ---------------------------------------------------------------------------
# stepping driver on scripted backends
# ---------------------------------------------------------------------------


def test_uniform_two_iteration_march():
    system = ScriptedSystem(lambda t, a: 2)
    program = LoadProgram(initial_step=0.25, max_load=1.0)
    result = Analysis(system, program, SolverConfig(rel_tol=1e-2)).run()
    assert result.completed and result.reason == "completed"
    assert np.allclose(result.load_factors, [0.25, 0.5, 0.75, 1.0])
    assert all(r.iterations == 2 for r in result.records)
    assert all(r.mode == "scripted" for r in result.records)
    assert all(r.repeats == 0 for r in result.records)
    assert all(r.lam == 0.0 for r in result.records)
    # the scripted reaction is linear in the load factor
    assert np.allclose(result.reactions, 2.0 * result.load_factors)


def test_relative_convergence_uses_the_first_iterate_as_reference():
    # norms 1.0, 0.5, 0.005 with rel_tol 1e-2: converged on iteration 3
    system = ScriptedSystem(lambda t, a: 3)
    program = LoadProgram(initial_step=1.0, max_load=1.0)
    result = Analysis(system, program, SolverConfig(rel_tol=1e-2)).run()
    assert result.completed
    assert result.records[0].iterations == 3


def test_zero_first_correction_converges_immediately():
    system = ScriptedSystem(lambda t, a: 1)
    program = LoadProgram(initial_step=1.0, max_load=1.0)
    result = Analysis(system, program, SolverConfig(rel_tol=1e-2)).run()
    assert result.completed
    assert result.records[0].iterations == 1


def test_step_halves_on_failure_and_regrows_after_fast_increments():
    # Only the very first attempt (target 0.02) fails; everything else
    # converges on the first iterate, which counts as "fast".
    def needs(target, attempt):
        if abs(target - 0.02) < 1e-12 and attempt == 1:
            return None
        return 1

    system = ScriptedSystem(needs)
    program = LoadProgram(initial_step=0.02, min_step=1e-4, max_load=0.1)
    cfg = SolverConfig(rel_tol=1e-2, max_iter=4)
    result = Analysis(system, program, cfg, None).run()
    assert result.completed
    # halve to 0.01, then 1.5x growth after every second fast increment,
    # capped at the initial step, and the final target clamps to max_load
    assert np.allclose(
        result.load_factors, [0.01, 0.02, 0.035, 0.05, 0.07, 0.09, 0.1]
    )
    assert np.allclose(
        system.begun, [0.02, 0.01, 0.02, 0.035, 0.05, 0.07, 0.09, 0.1]
    )


def test_solve_breakdown_is_handled_as_a_step_cut():
    def needs(target, attempt):
        if abs(target - 0.75) < 1e-12 and attempt == 1:
            return "raise"
        return 1

    system = ScriptedSystem(needs)
    program = LoadProgram(initial_step=0.25, min_step=1e-4, max_load=1.0)
    result = Analysis(system, program, SolverConfig(rel_tol=1e-2)).run()
    assert result.completed
    assert system.attempts[0.75] == 2  # failed once, then succeeded
    # halve to 0.125 after the breakdown, then regrow 1.5x after two
    # fast increments: 0.75 + 0.1875 = 0.9375, then clamp to max_load
    assert np.allclose(
        result.load_factors, [0.25, 0.5, 0.625, 0.75, 0.9375, 1.0]
    )


def test_budget_exhaustion_returns_a_partial_result():
    system = ScriptedSystem(lambda t, a: 1 if t <= 0.5 + 1e-9 else None)
    # min_step == initial_step: failures land directly at the floor
    program = LoadProgram(initial_step=0.25, min_step=0.25, max_load=1.0)
    cfg = SolverConfig(rel_tol=1e-2, max_iter=4, failure_budget=6)
    analysis = Analysis(system, program, cfg)
    result = analysis.run()
    assert not result.completed
    assert result.reason == "no convergence at the minimum step size"
    assert np.allclose(result.load_factors, [0.25, 0.5])
    assert system.attempts[0.75] == 6  # the whole budget was spent there
    # The fifth consecutive failure activates damping and escalates it to
    # 1e-8; during the sixth (failing) attempt the falling norms decay it
    # back to the 1e-9 floor, and the sixth failure escalates once more.
    assert analysis.lam.active
    assert analysis.lam.value == pytest.approx(1e-8)


# ---------------------------------------------------------------------------
# observer protocol
# ---------------------------------------------------------------------------


def test_observer_is_called_once_per_accepted_increment():
    system = ScriptedSystem(_ok)
    observer = ScriptedObserver([ACCEPT])
    program = LoadProgram(initial_step=0.5, max_load=1.0)
    result = Analysis(system, program, SolverConfig(rel_tol=1e-2), observer).run()
    assert result.completed
    assert [lf for lf, _ in observer.calls] == [0.5, 1.0]
    assert all(r.repeats == 0 for r in result.records)


def test_observer_repeat_swaps_backend_and_reruns_the_increment():
    system = ScriptedSystem(_ok)
    observer = ScriptedObserver(
        [REPEAT, ACCEPT],
        stage_factory=lambda: ScriptedSystem(_ok, mode="swapped"),
    )
    program = LoadProgram(initial_step=1.0, max_load=1.0)
    result = Analysis(system, program, SolverConfig(rel_tol=1e-2), observer).run()
    assert result.completed
    assert len(result.records) == 1
    assert result.records[0].mode == "swapped"
    assert result.records[0].repeats == 1
    assert len(observer.calls) == 2  # original attempt plus the rerun


def test_observer_swap_after_accept_applies_to_the_next_increment():
    system = ScriptedSystem(_ok)

    class SwapOnceObserver:
        def __init__(self):
            self.done = False

        def after_increment(self, analysis, record, fields, w):
            if not self.done:
                analysis.stage_system(ScriptedSystem(_ok, mode="swapped"))
                self.done = True
            return ACCEPT

    program = LoadProgram(initial_step=0.5, max_load=1.0)
    result = Analysis(system, program, SolverConfig(rel_tol=1e-2),
                      SwapOnceObserver()).run()
    assert [r.mode for r in result.records] == ["scripted", "swapped"]


def test_repeat_without_staging_is_a_programming_error():
    system = ScriptedSystem(_ok)
    observer = ScriptedObserver([REPEAT])  # never stages anything
    program = LoadProgram(initial_step=1.0, max_load=1.0)
    analysis = Analysis(system, program, SolverConfig(rel_tol=1e-2), observer)
    with pytest.raises(RuntimeError, match="without staging"):
        analysis.run()


def test_repeats_are_bounded_then_accepted_as_computed():
    system = ScriptedSystem(_ok)
    observer = ScriptedObserver(
        [REPEAT],
        stage_factory=lambda: ScriptedSystem(_ok, mode="swapped"),
    )
    program = LoadProgram(initial_step=1.0, max_load=1.0)
    cfg = SolverConfig(rel_tol=1e-2, max_repeats=3)
    result = Analysis(system, program, cfg, observer).run()
    assert result.completed
    assert len(result.records) == 1
    assert result.records[0].repeats == 3
    assert len(observer.calls) == 4  # three repeats plus the final accept


# ---------------------------------------------------------------------------
# container behavior
# ---------------------------------------------------------------------------


def test_csv_row_has_six_fields_in_column_order():
    record = IncrementRecord(0.5, 1.2345, 7, 1e-9, 12.3456, 1.2344, 0.5, 1, "sd")
    row = record.csv_row()
    parts = row.split(",")
    assert len(parts) == 6
    assert float(parts[0]) == 0.5
    assert float(parts[1]) == 1.2345
    assert int(parts[2]) == 7
    assert float(parts[3]) == pytest.approx(1e-9)
    assert float(parts[4]) == pytest.approx(12.346)  # milliseconds, 3 decimals
    assert float(parts[5]) == pytest.approx(1.234)


def test_damage_state_zeros_and_copy_are_independent():
    state = DamageState.zeros(5)
    assert state.kappa.shape == (5,)
    assert not state.d_bar.any()
    other = state.copy()
    other.kappa[0] = 1.0
    assert state.kappa[0] == 0.0


# ---------------------------------------------------------------------------
# real monolithic backend, elastic regime
# ---------------------------------------------------------------------------


def test_elastic_run_converges_in_two_iterations_with_linear_reaction():
    mesh = generate_benchmark_mesh("snt-struct")
    # damage threshold far above any strain this load can produce
    params = MaterialParams(eps_d=1.0, l_c=2.0)
    ops = Operators(mesh, params)
    table = NonlocalTable(ops.gauss_xy, ops.gauss_w, params.l_c)
    constraints = Constraints.from_mesh(mesh)
    reaction_dofs = 2 * np.asarray(mesh.dirichlet_sets["top"].nodes) + 1
    system = MonolithicSystem(ops, constraints, table, params, reaction_dofs)
    program = LoadProgram(initial_step=0.5, max_load=1.0)
    result = Analysis(system, program, SolverConfig()).run()
    assert result.completed
    assert [r.iterations for r in result.records] == [2, 2]
    assert result.max_damage.max() == 0.0
    r_half, r_full = result.reactions
    assert r_full == pytest.approx(2.0 * r_half, rel=1e-9)
    assert result.records[0].mode == "monolithic"
