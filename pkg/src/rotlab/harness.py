"""Batch experiments: many protocol runs per scenario, aggregated into result rows."""
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from rotlab import measurement as meas
from rotlab import states
from rotlab.cheats import CheatingAlice, CheatingBob, CheatMode, analytic_bounds
from rotlab.linalg import herm_eig, projector, sqrt_psd, validate_operator
from rotlab.protocol import HonestAlice, HonestBob, ProtocolConfig, Variant, run_protocol

DEFAULT_BUDGET = 10**7
MASK64 = (1 << 64) - 1


class Scenario(str, Enum):
    HONEST = "honest"
    BOB_MEM = "bob_mem"
    BOB_USD = "bob_usd"
    BOB_USD_LIMITED = "bob_usd_limited"
    ALICE_MEM = "alice_mem"
    ALICE_USD = "alice_usd"


SCENARIOS = list(Scenario)


class Metric(str, Enum):
    CHEAT_PROBABILITY = "cheat_probability"
    DISCARD_RATE = "discard_rate"
    VERIFICATION_PASS_RATE = "verification_pass_rate"
    RECEIVED_RATE = "received_rate"


FIELDS = ("scenario", "variant", "metric", "estimate", "std_error", "analytic", "within_tolerance", "runs", "seed")


class BudgetExceeded(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str = "all"
    variant: Variant = Variant.ORIGINAL
    runs: int = 200
    n_slots: int = 2000
    seed: int = 0
    output_path: str = None
    output_format: str = "json"
    test_fraction: float = 0.25
    budget: int = DEFAULT_BUDGET
    jobs: int = 1

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.scenario != "all":
            self.scenario = Scenario(self.scenario).value
        if self.output_format not in ("json", "csv"):
            raise ValueError(f"unknown output format {self.output_format!r}")
        if self.runs < 1 or self.n_slots < 1:
            raise ValueError("runs and n_slots must be positive")

    def scenarios(self):
        return SCENARIOS if self.scenario == "all" else [Scenario(self.scenario)]


@dataclass
class ResultRow:
    scenario: str
    variant: str
    metric: str
    estimate: float
    std_error: float
    analytic: float
    within_tolerance: bool
    runs: int
    seed: int


def splitmix64(x):
    """One step of the SplitMix64 mixer; maps a 64-bit integer to a well-spread 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def run_seed(master_seed, run_index):
    return splitmix64((master_seed + run_index) & MASK64)


def make_parties(scenario, variant=Variant.ORIGINAL):
    scenario = Scenario(scenario)
    bob_modes = {
        Scenario.BOB_MEM: CheatMode.BOB_MEM,
        Scenario.BOB_USD: CheatMode.BOB_USD_UNBOUNDED,
        Scenario.BOB_USD_LIMITED: CheatMode.BOB_USD_RATE_LIMITED,
    }
    alice_modes = {Scenario.ALICE_MEM: CheatMode.ALICE_MEM, Scenario.ALICE_USD: CheatMode.ALICE_USD_SELECT}
    alice = CheatingAlice(alice_modes[scenario]) if scenario in alice_modes else HonestAlice()
    bob = CheatingBob(bob_modes[scenario]) if scenario in bob_modes else HonestBob()
    return alice, bob


def analytic_reference(scenario, variant, metric):
    """Expected value of a metric, or None if the scenario does not report it."""
    scenario, variant, metric = Scenario(scenario), Variant(variant), Metric(metric)
    bounds = analytic_bounds()
    if metric is Metric.CHEAT_PROBABILITY:
        if scenario is Scenario.ALICE_USD and variant is Variant.MODIFIED:
            # without the final selection the USD cheater is reduced to a 3/4 guesser
            return bounds.alice_mem
        return {
            Scenario.HONEST: bounds.honest_bob,
            Scenario.BOB_MEM: bounds.bob_mem,
            Scenario.BOB_USD: bounds.bob_usd,
            Scenario.BOB_USD_LIMITED: bounds.bob_rate_limited,
            Scenario.ALICE_MEM: bounds.alice_mem,
            Scenario.ALICE_USD: bounds.alice_usd,
        }[scenario]
    if metric is Metric.DISCARD_RATE:
        return 2 / 3 if scenario is Scenario.BOB_USD else 1 / 3
    if metric is Metric.VERIFICATION_PASS_RATE:
        return 1.0
    if scenario in (Scenario.HONEST, Scenario.ALICE_MEM, Scenario.ALICE_USD):
        return 0.5
    return None


def _one_run(args):
    scenario, variant, n_slots, test_fraction, seed = args
    alice, bob = make_parties(scenario, variant)
    cfg = ProtocolConfig(n_slots=n_slots, test_fraction=test_fraction, variant=variant, rng_seed=seed)
    res = run_protocol(cfg, alice, bob)
    s = res.statistics
    alice_cheats = Scenario(scenario) in (Scenario.ALICE_MEM, Scenario.ALICE_USD)
    correct = sum(
        (o.alice_guess_received == o.bob_received) if alice_cheats else (o.bob_guess == o.alice_bit)
        for o in res.ot_instances
    )
    return {
        "aborted": res.aborted,
        "monitor_aborts": bool(res.aborted and res.abort_reason.startswith("discard monitor")),
        "instances": len(res.ot_instances),
        "correct": int(correct),
        "received": sum(o.bob_received for o in res.ot_instances),
        "phi_entering": s.phi_plus_entering,
        "phi_discarded": s.phi_plus_discarded,
        "tested": s.alice_tested + s.bob_tested,
        "failures": s.alice_test_failures + s.bob_test_failures,
        "alice_tested": s.alice_tested,
        "alice_failures": s.alice_test_failures,
        "bob_tested": s.bob_tested,
        "bob_failures": s.bob_test_failures,
    }


def _row(config, scenario, metric, successes, trials):
    analytic = analytic_reference(scenario, config.variant, metric)
    if trials == 0:
        estimate = se = float("nan")
        ok = False
    else:
        estimate = successes / trials
        se = math.sqrt(estimate * (1 - estimate) / trials)
        ok = analytic is None or abs(estimate - analytic) <= max(0.01, 4 * se)
    return ResultRow(scenario.value, config.variant.value, metric.value, estimate, se, analytic, ok, config.runs, config.seed)


def run_scenario(config):
    """Run every requested scenario and return rows in scenario, then metric, order."""
    return run_scenario_detailed(config)[0]


def run_scenario_detailed(config):
    """Like :func:`run_scenario`, also returning the pooled per-scenario counters."""
    if config.runs * config.n_slots > config.budget:
        raise BudgetExceeded(
            f"runs*n_slots = {config.runs * config.n_slots} exceeds the budget of {config.budget} slot-operations"
        )
    rows, totals = [], {}
    for scenario in config.scenarios():
        jobs = [
            (scenario.value, config.variant.value, config.n_slots, config.test_fraction, run_seed(config.seed, k))
            for k in range(config.runs)
        ]
        if config.jobs > 1:
            with ProcessPoolExecutor(config.jobs) as pool:
                out = list(pool.map(_one_run, jobs, chunksize=8))
        else:
            out = [_one_run(j) for j in jobs]
        total = {k: sum(r[k] for r in out) for k in out[0]}
        totals[scenario.value] = total
        rows.append(_row(config, scenario, Metric.CHEAT_PROBABILITY, total["correct"], total["instances"]))
        rows.append(_row(config, scenario, Metric.DISCARD_RATE, total["phi_discarded"], total["phi_entering"]))
        rows.append(
            _row(config, scenario, Metric.VERIFICATION_PASS_RATE, total["tested"] - total["failures"], total["tested"])
        )
        if analytic_reference(scenario, config.variant, Metric.RECEIVED_RATE) is not None:
            rows.append(_row(config, scenario, Metric.RECEIVED_RATE, total["received"], total["instances"]))
    order = {s.value: k for k, s in enumerate(SCENARIOS)}
    morder = {m.value: k for k, m in enumerate(Metric)}
    rows.sort(key=lambda r: (order[r.scenario], morder[r.metric]))
    return rows, totals


def _plain(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def render(rows, fmt):
    if fmt == "json":
        return json.dumps([{k: _plain(v) for k, v in asdict(r).items()} for r in rows], indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FIELDS)
        for r in rows:
            values = []
            for k in FIELDS:
                v = _plain(getattr(r, k))
                values.append("" if v is None else str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else v)
            writer.writerow(values)
        return buf.getvalue()
    raise ValueError(f"unknown output format {fmt!r}")


def emit(rows, fmt, path):
    if not rows:
        raise ValueError("no rows to emit")
    text = render(rows, fmt)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------------------
# self-check


@dataclass
class Check:
    name: str
    residual: float
    detail: str = ""

    @property
    def passed(self):
        return self.residual <= SELF_CHECK_TOL


SELF_CHECK_TOL = 1e-9


@dataclass
class SelfCheckReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def max_residual(self):
        return max(c.residual for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]


def _dist(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _povm_defect(elements):
    dim = elements[0].shape[0]
    worst = _dist(sum(elements), np.eye(dim))
    for e in elements:
        worst = max(worst, validate_operator(e).max_violation)
    return worst


def _failure_operator(spec):
    """Weighted sum of the honest failure projectors, built independently of pi_s."""
    out = np.zeros((spec.dim, spec.dim), dtype=complex)
    for b in spec.branches:
        for i in range(len(b.basis)):
            if i not in b.success_indices:
                out += b.choice_probability * b.projector(i)
    return out


def _random_joint_states(n, rng):
    v = rng.normal(size=(n, 16)) + 1j * rng.normal(size=(n, 16))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def self_check(pi_s_bob=None, seed=12345):
    """Recompute every analytic quantity numerically and report each residual.

    ``pi_s_bob`` replaces Bob's coarse success operator, which lets a caller
    inject a fault and watch the dependent checks fail.
    """
    report = SelfCheckReport()
    add = lambda name, residual, detail="": report.checks.append(Check(name, float(residual), detail))  # noqa: E731

    bob_spec, alice_spec = meas.bob_honest_spec(), meas.alice_honest_spec()
    bob_pi_s = meas.coarse_grain(bob_spec)[0] if pi_s_bob is None else np.asarray(pi_s_bob, dtype=complex)
    alice_pi_s = meas.coarse_grain(alice_spec)[0]

    bob_closed = np.array([[5, 0, 0, 1], [0, 1, 1, 0], [0, 1, 1, 0], [1, 0, 0, 5]]) / 6
    alice_closed = np.array([[2, 0, 1, -1], [0, 2, 1, -1], [1, 1, 2, 0], [-1, -1, 0, 2]]) / 4
    add("bob_pi_s_matrix", _dist(bob_pi_s, bob_closed))
    add("alice_pi_s_matrix", _dist(alice_pi_s, alice_closed))
    add("bob_filter_completeness", _dist(bob_pi_s + _failure_operator(bob_spec), np.eye(4)))
    add("alice_filter_completeness", _dist(alice_pi_s + _failure_operator(alice_spec), np.eye(4)))

    try:
        bob_eig = herm_eig(bob_pi_s)
        add("bob_pi_s_eigenvalues", _dist(bob_eig.eigenvalues, [1, 2 / 3, 1 / 3, 0]))
        bell = [states.PHI_P, states.PHI_M, states.PSI_P, states.PSI_M]
        add("bob_pi_s_eigenvectors", max(1 - abs(np.vdot(v, bob_eig.vector(k))) ** 2 for k, v in enumerate(bell)))
        m_s = projector(states.PHI_P) + np.sqrt(2 / 3) * projector(states.PHI_M) + np.sqrt(1 / 3) * projector(states.PSI_P)
        add("bob_kraus", _dist(sqrt_psd(bob_pi_s), m_s))
    except meas.ValidationError as exc:
        add("bob_pi_s_eigenvalues", float("inf"), str(exc))
    alice_eig = herm_eig(alice_pi_s)
    add("alice_pi_s_eigenvalues", _dist(alice_eig.eigenvalues, [1, 0.5, 0.5, 0]))
    lam1 = states.phi_basis()[2]
    lam2 = np.array([0, 0, 1, 1]) / np.sqrt(2)
    lam3 = np.array([1, -1, 0, 0]) / np.sqrt(2)
    alice_m_s = projector(lam1) + np.sqrt(0.5) * (projector(lam2) + projector(lam3))
    add("alice_kraus", _dist(sqrt_psd(alice_pi_s), alice_m_s))

    bounds = analytic_bounds()
    add("helstrom_bob", abs(meas.bob_helstrom().success_probability - (3 + np.sqrt(3)) / 6))
    add("helstrom_alice", abs(meas.alice_helstrom().success_probability - 0.75))
    add("bound_bob_rate_limited", abs(bounds.bob_rate_limited - (0.5 + 0.5 * (3 + np.sqrt(3)) / 6)))

    rho_b = states.bob_reduced_states()
    usd_b = meas.bob_usd_povm()
    add(
        "bob_usd_table",
        max(
            _dist(meas.outcome_distribution(rho_b[0], usd_b), [1 / 3, 0, 2 / 3]),
            _dist(meas.outcome_distribution(rho_b[1], usd_b), [0, 1 / 3, 2 / 3]),
        ),
    )
    rho_a = states.alice_reduced_states()
    usd_a = meas.alice_usd_measurement()
    add(
        "alice_usd_table",
        max(
            _dist(meas.outcome_distribution(rho_a[0], usd_a), [0.5, 0, 0.5]),
            _dist(meas.outcome_distribution(rho_a[1], usd_a), [0, 0.5, 0.5]),
        ),
    )

    for name, povm in [
        ("povm_bob_usd", usd_b),
        ("povm_alice_usd", usd_a),
        ("povm_bob_helstrom", meas.bob_helstrom().povm),
        ("povm_alice_helstrom", meas.alice_helstrom().povm),
    ]:
        add(name, _povm_defect(povm.elements))

    # two-stage consistency on random joint states
    rng = np.random.default_rng(seed)
    vectors = _random_joint_states(100, rng)
    for side, spec, pi_s in [(1, bob_spec, bob_pi_s), (0, alice_spec, alice_pi_s)]:
        try:
            ts = meas.build_two_stage(spec)
            if side == 1 and pi_s_bob is not None:
                ts = _two_stage_from(spec, pi_s)
            worst = _povm_defect(ts.completion.elements)
            for v in vectors:
                rho = meas.reduced_density(v, (4, 4), side)
                honest = meas.honest_distribution(spec, rho)
                joint = meas.two_stage_joint(ts, rho)
                worst = max(worst, max(abs(joint[key] - honest[key]) for key in spec.success_outcomes()))
                worst = max(worst, abs(joint[meas.UNREACHABLE]))
            add(f"{spec.name}_two_stage_consistency", worst)
        except meas.ValidationError as exc:
            add(f"{spec.name}_two_stage_consistency", float("inf"), str(exc))
    return report


def _two_stage_from(spec, pi_s):
    """Two-stage construction around an externally supplied success operator."""
    kraus_s = sqrt_psd(pi_s)
    inv = meas.pinv_psd(kraus_s)
    elements = [inv @ (spec.branches[k].choice_probability * spec.branches[k].projector(i)) @ inv
                for k, i in spec.success_outcomes()]
    rest = np.eye(spec.dim) - sum(elements)
    labels = tuple(spec.success_outcomes()) + (meas.UNREACHABLE,)
    completion = meas.Povm(elements + [rest], labels, tol=np.inf)
    return meas.TwoStageMeasurement(pi_s, np.eye(spec.dim) - pi_s, kraus_s, sqrt_psd(np.eye(spec.dim) - pi_s), completion, spec)
