"""Named states of the four-qubit Rabin OT protocol.

Every public payload is expressed in the computational basis. Two-qubit
objects are 4-dimensional; joint Alice/Bob objects are 16-dimensional with
Alice on qubits 0-1 and Bob on qubits 2-3.
"""
from enum import Enum

import numpy as np

from rotlab.linalg import ket, projector, tensor

SQ2 = np.sqrt(2.0)
SQ3 = np.sqrt(3.0)

ZERO = ket(1, 0)
ONE = ket(0, 1)


class BasisKind(Enum):
    COMPUTATIONAL = "+"
    DIAGONAL = "x"
    BELL = "bell"


def qubit(x, kind=BasisKind.COMPUTATIONAL):
    """Single-qubit basis state ``|x>_+`` or ``|x>_x = (|0>_+ + (-1)^x |1>_+)/sqrt 2``."""
    if kind is BasisKind.COMPUTATIONAL:
        return ONE.copy() if x else ZERO.copy()
    if kind is BasisKind.DIAGONAL:
        return (ZERO + (-1) ** x * ONE) / SQ2
    raise ValueError(f"no single-qubit basis of kind {kind}")


def plus(a, b):
    return tensor(qubit(a), qubit(b))


def cross(a, b):
    return tensor(qubit(a, BasisKind.DIAGONAL), qubit(b, BasisKind.DIAGONAL))


BELL_LABELS = ("phi+", "phi-", "psi+", "psi-")


def bell(label):
    vectors = {
        "phi+": (plus(0, 0) + plus(1, 1)) / SQ2,
        "phi-": (plus(0, 0) - plus(1, 1)) / SQ2,
        "psi+": (plus(0, 1) + plus(1, 0)) / SQ2,
        "psi-": (plus(0, 1) - plus(1, 0)) / SQ2,
    }
    try:
        return vectors[label]
    except KeyError:
        raise ValueError(f"unknown Bell label {label!r}; expected one of {BELL_LABELS}") from None


PHI_P, PHI_M, PSI_P, PSI_M = (bell(label) for label in BELL_LABELS)


def basis_matrix(vectors):
    """Stack basis vectors as rows."""
    return np.array(vectors, dtype=complex)


# Alice's honest bases: C0 is the Bell basis, C1 = {|a>_x |b>_+}.
ALICE_BASES = (
    basis_matrix([PHI_P, PHI_M, PSI_P, PSI_M]),
    basis_matrix([tensor(qubit(a, BasisKind.DIAGONAL), qubit(b)) for a in (0, 1) for b in (0, 1)]),
)
ALICE_OUTCOME_LABELS = (
    ("phi+", "phi-", "psi+", "psi-"),
    ("0x0+", "0x1+", "1x0+", "1x1+"),
)
ALICE_SUCCESS = ((1, 2), (0, 3))
ALICE_CHOICE_PROBS = (0.5, 0.5)

# Bob's honest bases: D0 = {|ab>_+}, D1 = {|ab>_x}.
BOB_BASES = (
    basis_matrix([plus(a, b) for a in (0, 1) for b in (0, 1)]),
    basis_matrix([cross(a, b) for a in (0, 1) for b in (0, 1)]),
)
BOB_OUTCOME_LABELS = (
    ("00+", "01+", "10+", "11+"),
    ("00x", "01x", "10x", "11x"),
)
BOB_SUCCESS = ((0, 3), (0, 3))
BOB_CHOICE_PROBS = (2.0 / 3.0, 1.0 / 3.0)


def protocol_initial_state():
    """The 16-dim state an honest Bob prepares for every slot."""
    psi = (
        tensor(plus(0, 0), plus(0, 0))
        + tensor(plus(1, 1), plus(0, 1))
        + tensor(cross(0, 0), plus(1, 0))
        + tensor(cross(1, 1), plus(1, 1))
    ) / 2
    return psi


def post_alice_states():
    """Joint states after honest Alice succeeded with choice c = 0 and c = 1.

    Alice's subsystem is kept coherent over her two success outcomes; tracing
    it out gives the mixture Bob faces.
    """
    a00 = tensor(qubit(0, BasisKind.DIAGONAL), qubit(0))
    a11 = tensor(qubit(1, BasisKind.DIAGONAL), qubit(1))
    psi0 = (
        tensor(PHI_M - PSI_P, PHI_P - PSI_P) + tensor(PHI_M + PSI_P, PHI_M - PSI_M)
    ) / (2 * SQ2)
    psi1 = (
        tensor(a00 - a11, PHI_P + PSI_P) + tensor(a00 + a11, PHI_M - PSI_M)
    ) / (2 * SQ2)
    return psi0, psi1


def bob_candidate_vectors():
    """Unnormalized ``(x0, y0, x1, y1)`` spanning Bob's post-filter states."""
    r13, r23 = np.sqrt(1 / 3), np.sqrt(2 / 3)
    x0 = PHI_P - r13 * PSI_P + r23 * PHI_M
    y0 = r23 * PHI_M + r13 * PSI_P - PHI_P
    x1 = PHI_P + r13 * PSI_P + r23 * PHI_M
    y1 = PHI_P + r13 * PSI_P - r23 * PHI_M
    return x0, y0, x1, y1


def bob_reduced_states():
    """Bob's two-qubit state after his success filter, for c = 0 and c = 1."""
    x0, y0, x1, y1 = bob_candidate_vectors()
    return (projector(x0) + projector(y0)) / 4, (projector(x1) + projector(y1)) / 4


def alice_candidate_vectors():
    """Alice's conditional states ``(psi''_00, psi''_11, psi'_0x, psi'_1x)``."""
    s00 = ket(1 + SQ2, 1 - SQ2, 1, -1) / (2 * SQ2)
    s11 = ket(1 - SQ2, 1 + SQ2, 1, -1) / (2 * SQ2)
    s0x = ket(1, -1, 1, 1) / 2
    s1x = ket(1, -1, -1, -1) / 2
    return s00, s11, s0x, s1x


def alice_reduced_states():
    """Alice's two-qubit state at the end of the protocol for d = 0 and d = 1."""
    s00, s11, s0x, s1x = alice_candidate_vectors()
    return (projector(s00) + projector(s11)) / 2, (projector(s0x) + projector(s1x)) / 2


def phi_basis():
    """Orthonormal vectors spanning the supports of Alice's two reduced states.

    phi0 is shared by both supports, phi2 only by d = 0 and phi1 only by d = 1.
    """
    phi0 = ket(1, -1, 0, 0) / SQ2
    phi1 = ket(0, 0, 1, 1) / SQ2
    phi2 = ket(1, 1, 1, -1) / 2
    return phi0, phi1, phi2


# Columns map the 3-dim coordinates (phi+, psi+, phi-) into the two-qubit space.
USD_EMBEDDING = np.column_stack([PHI_P, PSI_P, PHI_M])


def embed_bell_subspace(m3):
    """Lift a 3x3 operator on span{phi+, psi+, phi-} into the full 4-dim space."""
    return USD_EMBEDDING @ np.asarray(m3, dtype=complex) @ USD_EMBEDDING.conj().T


def named_state(name):
    """Look up any of the named states; densities are returned as matrices."""
    table = {
        "psi": protocol_initial_state,
        "psi_c0": lambda: post_alice_states()[0],
        "psi_c1": lambda: post_alice_states()[1],
        "rhoB0": lambda: bob_reduced_states()[0],
        "rhoB1": lambda: bob_reduced_states()[1],
        "rhoA0": lambda: alice_reduced_states()[0],
        "rhoA1": lambda: alice_reduced_states()[1],
        "phi0": lambda: phi_basis()[0],
        "phi1": lambda: phi_basis()[1],
        "phi2": lambda: phi_basis()[2],
    }
    if name in BELL_LABELS:
        return bell(name)
    try:
        return table[name]()
    except KeyError:
        raise ValueError(f"unknown state name {name!r}") from None
