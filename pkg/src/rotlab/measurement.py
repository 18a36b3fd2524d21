"""Generalized measurements: POVMs, Kraus conditioning, delayed (two-stage)
realizations of an honest choose-then-measure procedure, and the two
discrimination measurements used by the cheaters.
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from rotlab import states
from rotlab.errors import DimensionError, ImpossibleOutcomeError, ValidationError
from rotlab.linalg import (
    ATOL,
    dagger,
    partial_trace,
    pinv_psd,
    projector,
    sqrt_psd,
    trace_norm,
    validate_operator,
)

IMPOSSIBLE = 1e-12
BORN_CLAMP = 1e-12


@dataclass
class Povm:
    elements: list
    labels: tuple = None
    tol: float = ATOL
    kraus_ops: list = field(default=None, repr=False)

    def __post_init__(self):
        self.elements = [np.asarray(e, dtype=complex) for e in self.elements]
        if self.labels is None:
            self.labels = tuple(range(len(self.elements)))
        self.labels = tuple(self.labels)
        if len(self.labels) != len(self.elements):
            raise ValidationError("one label per POVM element required")
        self.validate()

    @property
    def dim(self):
        return self.elements[0].shape[0]

    def validate(self):
        if not self.elements:
            raise ValidationError("POVM has no elements")
        for label, e in zip(self.labels, self.elements):
            if e.shape != (self.dim, self.dim):
                raise ValidationError(f"element {label!r} has shape {e.shape}")
            report = validate_operator(e, self.tol)
            if not report.psd:
                raise ValidationError(
                    f"element {label!r} is not Hermitian PSD (violation {report.max_violation:.3g})"
                )
        defect = np.max(np.abs(sum(self.elements) - np.eye(self.dim)))
        if defect > self.tol:
            raise ValidationError(f"POVM elements do not sum to identity (defect {defect:.3g})")

    @cached_property
    def kraus(self):
        """Kraus operators, one per element; square roots unless given explicitly."""
        if self.kraus_ops is not None:
            return [np.asarray(k, dtype=complex) for k in self.kraus_ops]
        return [sqrt_psd(e) for e in self.elements]

    def index(self, label):
        return self.labels.index(label)


@dataclass(frozen=True)
class Branch:
    """One honest measurement choice: a projective basis (rows) and its success outcomes."""

    choice_probability: float
    basis: np.ndarray
    success_indices: tuple
    outcome_labels: tuple = None

    def projector(self, i):
        return projector(self.basis[i])


@dataclass(frozen=True)
class HonestMeasurementSpec:
    branches: tuple
    name: str = ""

    def validate(self, tol=ATOL):
        total = sum(b.choice_probability for b in self.branches)
        if abs(total - 1.0) > tol:
            raise ValidationError(f"choice probabilities sum to {total}, not 1")
        for k, b in enumerate(self.branches):
            if not 0.0 <= b.choice_probability <= 1.0:
                raise ValidationError(f"branch {k} has probability {b.choice_probability}")
            basis = np.asarray(b.basis)
            gram = basis.conj() @ basis.T
            if gram.shape[0] != basis.shape[1] or np.max(np.abs(gram - np.eye(len(basis)))) > tol:
                raise ValidationError(f"branch {k} basis is not orthonormal and complete")
            if any(i < 0 or i >= len(basis) for i in b.success_indices):
                raise ValidationError(f"branch {k} success index out of range")
        return self

    @property
    def dim(self):
        return self.branches[0].basis.shape[1]

    def success_outcomes(self):
        """All (branch, outcome) pairs that count as success, in a fixed order."""
        return [(k, i) for k, b in enumerate(self.branches) for i in b.success_indices]


def alice_honest_spec():
    return HonestMeasurementSpec(
        tuple(
            Branch(p, basis, succ, labels)
            for p, basis, succ, labels in zip(
                states.ALICE_CHOICE_PROBS,
                states.ALICE_BASES,
                states.ALICE_SUCCESS,
                states.ALICE_OUTCOME_LABELS,
            )
        ),
        name="alice",
    )


def bob_honest_spec():
    return HonestMeasurementSpec(
        tuple(
            Branch(p, basis, succ, labels)
            for p, basis, succ, labels in zip(
                states.BOB_CHOICE_PROBS,
                states.BOB_BASES,
                states.BOB_SUCCESS,
                states.BOB_OUTCOME_LABELS,
            )
        ),
        name="bob",
    )


def coarse_grain(spec):
    """Collapse choose-then-measure into a single success/failure POVM ``(pi_s, pi_f)``."""
    spec.validate()
    pi_s = np.zeros((spec.dim, spec.dim), dtype=complex)
    for k, i in spec.success_outcomes():
        b = spec.branches[k]
        pi_s += b.choice_probability * b.projector(i)
    return pi_s, np.eye(spec.dim) - pi_s


def honest_distribution(spec, rho):
    """Joint probability of every (branch, outcome) pair for an honest party on ``rho``."""
    out = {}
    for k, b in enumerate(spec.branches):
        for i, v in enumerate(b.basis):
            out[(k, i)] = b.choice_probability * float(np.real(np.vdot(v, rho @ v)))
    return out


UNREACHABLE = "unreachable"


@dataclass
class TwoStageMeasurement:
    """A success/failure filter now, and a completing measurement later.

    ``completion`` has one element per honest success outcome, labelled
    ``(branch, outcome)``, plus an ``"unreachable"`` element supported
    off the support of ``pi_s`` which never fires after a successful filter.
    """

    pi_s: np.ndarray
    pi_f: np.ndarray
    kraus_s: np.ndarray
    kraus_f: np.ndarray
    completion: Povm
    spec: HonestMeasurementSpec = field(repr=False, default=None)

    @cached_property
    def filter(self):
        return Povm(
            [self.pi_s, self.pi_f], ("success", "fail"), kraus_ops=[self.kraus_s, self.kraus_f]
        )


def build_two_stage(spec):
    pi_s, pi_f = coarse_grain(spec)
    kraus_s = sqrt_psd(pi_s)
    inv = pinv_psd(kraus_s)
    elements, labels = [], []
    for k, i in spec.success_outcomes():
        b = spec.branches[k]
        e = inv @ (b.choice_probability * b.projector(i)) @ inv
        elements.append((e + dagger(e)) / 2)
        labels.append((k, i))
    rest = np.eye(spec.dim) - sum(elements)
    elements.append((rest + dagger(rest)) / 2)
    labels.append(UNREACHABLE)
    return TwoStageMeasurement(
        pi_s=pi_s,
        pi_f=pi_f,
        kraus_s=kraus_s,
        kraus_f=sqrt_psd(pi_f),
        completion=Povm(elements, tuple(labels)),
        spec=spec,
    )


def embed_operator(k, dims, target):
    """Place ``k`` on subsystem ``target`` with identities elsewhere."""
    k = np.asarray(k, dtype=complex)
    if k.shape != (dims[target], dims[target]):
        raise DimensionError(f"operator of shape {k.shape} does not fit subsystem of dim {dims[target]}")
    out = np.eye(1, dtype=complex)
    for s, d in enumerate(dims):
        out = np.kron(out, k if s == target else np.eye(d))
    return out


def act_on(state, k, dims=None, target=None):
    """Return ``k`` applied to one subsystem of ``state`` (unnormalized)."""
    state = np.asarray(state, dtype=complex)
    k = np.asarray(k, dtype=complex)
    if dims is None:
        if k.shape[1] != state.shape[0]:
            raise DimensionError(f"operator {k.shape} cannot act on a {state.shape[0]}-dim state")
        return k @ state
    dims = list(dims)
    if int(np.prod(dims)) != state.shape[0]:
        raise DimensionError(f"dims {dims} do not match a {state.shape[0]}-dim state")
    if k.shape != (dims[target], dims[target]):
        raise DimensionError(f"operator {k.shape} does not fit subsystem {target} of dim {dims[target]}")
    t = np.tensordot(k, state.reshape(dims), axes=([1], [target]))
    return np.moveaxis(t, 0, target).reshape(-1)


def apply_kraus(state, k, dims=None, target=None):
    """Condition ``state`` on the outcome with Kraus operator ``k``.

    Returns ``(post_state, probability)``; raises ImpossibleOutcomeError when
    the outcome probability is at most 1e-12.
    """
    v = act_on(state, k, dims, target)
    p = float(np.real(np.vdot(v, v)))
    if p <= IMPOSSIBLE:
        raise ImpossibleOutcomeError(f"outcome has probability {p:.3g}")
    return v / np.sqrt(p), p


def reduced_density(state, dims, target):
    rho = np.outer(state, np.conj(state))
    return partial_trace(rho, dims, [target])


def outcome_distribution(rho, povm):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (povm.dim, povm.dim):
        raise DimensionError(f"density of shape {rho.shape} vs POVM dim {povm.dim}")
    return np.array([float(np.real(np.trace(e @ rho))) for e in povm.elements])


def born_draw(probs, rng):
    """Index drawn from ``probs`` after clamping tiny negatives to zero."""
    p = np.asarray(probs, dtype=float)
    if np.any(p < -BORN_CLAMP):
        raise ValidationError(f"negative Born probability {p.min():.3g}")
    p = np.clip(p, 0.0, None)
    c = np.cumsum(p)
    u = rng.random() * c[-1]
    return int(min(np.searchsorted(c, u, side="right"), len(p) - 1))


def _local_probs(state, povm, dims, target):
    if dims is None:
        return np.array([float(np.real(np.vdot(state, e @ state))) for e in povm.elements])
    return outcome_distribution(reduced_density(state, dims, target), povm)


def sample(state, measurement, rng, dims=None, target=None):
    """Draw one outcome of ``measurement`` on ``state`` (optionally on one subsystem).

    ``measurement`` is a Povm or a TwoStageMeasurement. Returns
    ``(label, post_state, probability)``. For a two-stage measurement the
    failure label is ``"fail"`` and the probability is the joint one.
    """
    if isinstance(measurement, TwoStageMeasurement):
        label, post, p = sample(state, measurement.filter, rng, dims, target)
        if label == "fail":
            return label, post, p
        label, post, q = sample(post, measurement.completion, rng, dims, target)
        return label, post, p * q
    probs = _local_probs(state, measurement, dims, target)
    i = born_draw(probs, rng)
    post, p = apply_kraus(state, measurement.kraus[i], dims, target)
    return measurement.labels[i], post, p


class DiscriminationKind(Enum):
    MINIMUM_ERROR = "minimum_error"
    UNAMBIGUOUS = "unambiguous"


@dataclass
class DiscriminationResult:
    success_probability: float
    povm: Povm
    kind: DiscriminationKind


def helstrom(p0, rho0, p1, rho1, tol=ATOL):
    """Minimum-error discrimination of two weighted states.

    The guess-0 element projects onto the strictly positive eigenspace of
    ``p0*rho0 - p1*rho1``; the null space goes to guess 1.
    """
    if p0 < 0 or p1 < 0 or abs(p0 + p1 - 1.0) > tol:
        raise ValidationError(f"priors ({p0}, {p1}) are not a probability distribution")
    gamma = p0 * np.asarray(rho0, dtype=complex) - p1 * np.asarray(rho1, dtype=complex)
    gamma = (gamma + dagger(gamma)) / 2
    w, v = np.linalg.eigh(gamma)
    pos = v[:, w > IMPOSSIBLE]
    guess0 = pos @ dagger(pos)
    guess1 = np.eye(gamma.shape[0]) - guess0
    ps = 0.5 * (1.0 + trace_norm(gamma))
    return DiscriminationResult(ps, Povm([guess0, guess1], (0, 1)), DiscriminationKind.MINIMUM_ERROR)


INCONCLUSIVE = "?"


def bob_usd_povm():
    """Unambiguous discrimination of Bob's two post-filter states.

    Built in (phi+, psi+, phi-) coordinates; the orthogonal psi- direction
    is added to the inconclusive element.
    """
    r3 = np.sqrt(3.0)
    pi0 = np.array([[1, -r3, 0], [-r3, 3, 0], [0, 0, 0]]) / 6
    pi1 = np.array([[1, r3, 0], [r3, 3, 0], [0, 0, 0]]) / 6
    pi_q = np.diag([2 / 3, 0, 1])
    full_q = states.embed_bell_subspace(pi_q) + projector(states.PSI_M)
    return Povm(
        [states.embed_bell_subspace(pi0), states.embed_bell_subspace(pi1), full_q],
        (0, 1, INCONCLUSIVE),
    )


def alice_usd_measurement():
    """Projective measurement onto phi2 (d=0), phi1 (d=1), phi0 and its complement (inconclusive)."""
    phi0, phi1, phi2 = states.phi_basis()
    p0, p1 = projector(phi2), projector(phi1)
    return Povm([p0, p1, np.eye(4) - p0 - p1], (0, 1, INCONCLUSIVE))


def bob_helstrom():
    rho0, rho1 = states.bob_reduced_states()
    return helstrom(0.5, rho0, 0.5, rho1)


def alice_helstrom():
    rho0, rho1 = states.alice_reduced_states()
    return helstrom(0.5, rho0, 0.5, rho1)


def two_stage_joint(ts, rho):
    """Outcome probabilities of filter-then-complete on ``rho``.

    Keys are the completion labels plus ``"fail"``; each success label
    carries the joint probability of passing the filter and then getting it.
    """
    rho = np.asarray(rho, dtype=complex)
    post = ts.kraus_s @ rho @ dagger(ts.kraus_s)
    out = {"fail": float(np.real(np.trace(ts.pi_f @ rho)))}
    for label, e in zip(ts.completion.labels, ts.completion.elements):
        out[label] = float(np.real(np.trace(e @ post)))
    return out
