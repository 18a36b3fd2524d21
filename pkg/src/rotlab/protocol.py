"""Two-party protocol engine and the honest parties.

A run walks every slot through Alice's measure-verify block, Bob's
measure-verify block, Bob's phi+ stage and the final OT step. The quantum
state of each slot is simulated exactly as a 16-dim vector; strategies touch
only their own half (Alice: qubits 0-1, Bob: qubits 2-3).
"""
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from rotlab import states
from rotlab.errors import EngineFault
from rotlab.linalg import projector
from rotlab.measurement import born_draw

ALICE, BOB = 0, 1
CONSISTENT = 1e-9
HONEST_PHI_DISCARD = 1.0 / 3.0


class Variant(str, Enum):
    ORIGINAL = "original"
    MODIFIED = "modified"


class SlotStatus(str, Enum):
    ACTIVE = "active"
    DISCARDED_ALICE_FAIL = "discarded_alice_fail"
    DISCARDED_BOB_FAIL = "discarded_bob_fail"
    DISCARDED_PHI_PLUS = "discarded_phi_plus"
    TESTED_BY_BOB = "tested_by_bob"
    TESTED_BY_ALICE = "tested_by_alice"
    SELECTED = "selected"
    OT_INSTANCE = "ot_instance"


@dataclass
class ProtocolConfig:
    n_slots: int = 2000
    test_fraction: float = 0.25
    variant: Variant = Variant.ORIGINAL
    # None means 4 binomial standard deviations at the observed sample size
    discard_monitor_tolerance: float = None
    choice_frequency_tolerance: float = None
    rng_seed: int = 0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.n_slots < 1:
            raise ValueError("n_slots must be positive")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass
class SlotState:
    slot_id: int
    quantum_state: np.ndarray
    status: SlotStatus = SlotStatus.ACTIVE
    alice_record: tuple = None  # (c, outcome index)
    bob_record: tuple = None  # (d, outcome index)
    phi_plus_kept: bool = None
    cheat_scratch: dict = field(default_factory=dict)

    @property
    def amplitudes(self):
        """The state as a 4x4 array indexed [alice, bob]."""
        return self.quantum_state.reshape(4, 4)


class Tag(str, Enum):
    PREPARE_DONE = "PrepareDone"
    FAILURE_LIST = "FailureList"
    TEST_REQUEST = "TestRequest"
    TEST_DECLARATION = "TestDeclaration"
    TEST_VERDICT = "TestVerdict"
    PHI_PLUS_DISCARDS = "PhiPlusDiscards"
    OT_ANNOUNCE = "OtAnnounce"
    ABORT = "Abort"


@dataclass(frozen=True)
class Message:
    sender: str
    tag: Tag
    payload: dict


class Transcript(list):
    def send(self, sender, tag, **payload):
        self.append(Message(sender, Tag(tag), payload))

    def records(self):
        return [
            {"index": i, "sender": m.sender, "tag": m.tag.value, "payload": m.payload}
            for i, m in enumerate(self)
        ]

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


@dataclass
class OtInstance:
    slot_id: int
    alice_bit: int
    alice_choice: int
    b_prime: int
    bob_received: bool
    bob_decoded_bit: int
    bob_guess: int
    alice_guess_received: bool
    bob_choice: int = None


@dataclass
class Statistics:
    prepared: int = 0
    alice_measured: int = 0
    alice_kept: int = 0
    bob_measured: int = 0
    bob_kept: int = 0
    alice_tested: int = 0  # Alice's declarations checked by Bob
    alice_test_failures: int = 0
    bob_tested: int = 0  # Bob's declarations checked by Alice
    bob_test_failures: int = 0
    phi_plus_entering: int = 0
    phi_plus_discarded: int = 0

    @staticmethod
    def _rate(num, den):
        return num / den if den else float("nan")

    @property
    def alice_success_rate(self):
        return self._rate(self.alice_kept, self.alice_measured)

    @property
    def bob_success_rate(self):
        return self._rate(self.bob_kept, self.bob_measured)

    @property
    def phi_plus_discard_rate(self):
        return self._rate(self.phi_plus_discarded, self.phi_plus_entering)

    @property
    def verification_pass_rate(self):
        tested = self.alice_tested + self.bob_tested
        failed = self.alice_test_failures + self.bob_test_failures
        return self._rate(tested - failed, tested)


@dataclass
class RunResult:
    config: ProtocolConfig
    transcript: Transcript
    aborted: bool
    abort_reason: str
    ot_instances: list
    statistics: Statistics

    def summary(self):
        return {
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "ot_instances": [asdict(o) for o in self.ot_instances],
            "statistics": asdict(self.statistics),
        }


# ---------------------------------------------------------------------------
# local quantum operations on a slot


def local_apply(state, op, side):
    m = state.reshape(4, 4)
    out = op @ m if side == ALICE else m @ op.T
    return out.reshape(-1)


def local_density(state, side):
    m = state.reshape(4, 4)
    if side == ALICE:
        return m @ m.conj().T
    return (m.conj().T @ m).T


def local_povm_probs(state, elements, side):
    rho_t = local_density(state, side).T
    return np.array([float(np.real(np.sum(e * rho_t))) for e in elements])


def measure_projective(slot, basis, side, rng):
    """Measure one side of ``slot`` in an orthonormal basis (rows); updates the slot."""
    m = slot.amplitudes
    if side == ALICE:
        amps = basis.conj() @ m  # row i: Bob's unnormalized state given outcome i
    else:
        amps = (m @ basis.conj().T).T  # row i: Alice's unnormalized state
    probs = np.real(np.sum(amps * amps.conj(), axis=1))
    i = born_draw(probs, rng)
    other = amps[i] / math.sqrt(probs[i])
    joint = np.outer(basis[i], other) if side == ALICE else np.outer(other, basis[i])
    slot.quantum_state = joint.reshape(-1)
    return i


def sample_local(slot, povm, side, rng):
    """Sample a POVM on one side of ``slot`` with square-root Kraus update."""
    probs = local_povm_probs(slot.quantum_state, povm.elements, side)
    i = born_draw(probs, rng)
    v = local_apply(slot.quantum_state, povm.kraus[i], side)
    slot.quantum_state = v / math.sqrt(probs[i])
    return povm.labels[i]


# ---------------------------------------------------------------------------
# honest reference tables


@lru_cache(maxsize=None)
def _initial_state():
    return states.protocol_initial_state()


@lru_cache(maxsize=None)
def consistency_table():
    """Joint probability of (c, i, d, j) under fully honest execution from psi.

    Alice picks basis C_c and gets outcome i; Bob picks D_d and gets j. All
    outcomes are included, successes and failures alike.
    """
    psi = states.protocol_initial_state().reshape(4, 4)
    table = {}
    for c, (pc, cb) in enumerate(zip(states.ALICE_CHOICE_PROBS, states.ALICE_BASES)):
        for d, (pd, db) in enumerate(zip(states.BOB_CHOICE_PROBS, states.BOB_BASES)):
            amp = cb.conj() @ psi @ db.conj().T
            for i in range(4):
                for j in range(4):
                    table[(c, i, d, j)] = pc * pd * float(abs(amp[i, j]) ** 2)
    return table


def verify_declaration(verifier_record, declared, table=None, verifier="bob"):
    """Check a declared (choice, outcome) against the verifier's own record.

    Consistent iff the declared outcome is a success outcome of the declared
    choice and the pair has nonzero joint probability under honest execution.
    """
    if verifier_record is None:
        raise EngineFault("verifier has no record to check against")
    table = consistency_table() if table is None else table
    if verifier == "bob":
        (c, i), (d, j) = declared, verifier_record
        if i not in states.ALICE_SUCCESS[c]:
            return False
    elif verifier == "alice":
        (c, i), (d, j) = verifier_record, declared
        if j not in states.BOB_SUCCESS[d]:
            return False
    else:
        raise ValueError(f"unknown verifier {verifier!r}")
    return table.get((c, i, d, j), 0.0) > CONSISTENT


def binomial_tolerance(p, n, sigmas=4.0):
    return sigmas * math.sqrt(p * (1 - p) / n)


def choice_frequency_check(declarations, expected, tolerance=None):
    """True iff every empirical choice frequency is within tolerance of ``expected``."""
    n = len(declarations)
    if n == 0:
        raise ValueError("need at least one declaration")
    counts = np.bincount(np.asarray(declarations, dtype=int), minlength=len(expected))
    for k, p in enumerate(expected):
        tol = binomial_tolerance(p, n) if tolerance is None else tolerance
        if abs(counts[k] / n - p) > tol:
            return False
    return True


@lru_cache(maxsize=None)
def decode_table():
    """P(c = 0 | Bob's choice d, outcome j), conditioned on Alice's success."""
    table = consistency_table()
    post = {}
    for d in range(2):
        for j in states.BOB_SUCCESS[d]:
            w = [
                sum(table[(c, i, d, j)] for i in states.ALICE_SUCCESS[c]) for c in range(2)
            ]
            post[(d, j)] = w[0] / (w[0] + w[1])
    return post


def decode_choice(d, j):
    """Alice's choice c if Bob's data pin it down, else None."""
    p0 = decode_table()[(d, j)]
    if p0 > 1 - CONSISTENT:
        return 0
    if p0 < CONSISTENT:
        return 1
    return None


# ---------------------------------------------------------------------------
# honest measurement steps


def honest_alice_measure(slot, rng):
    """Alice chooses C0/C1 with probability 1/2 each and measures her qubits."""
    c = 0 if rng.random() < states.ALICE_CHOICE_PROBS[0] else 1
    i = measure_projective(slot, states.ALICE_BASES[c], ALICE, rng)
    slot.alice_record = (c, i)
    return c, i, i in states.ALICE_SUCCESS[c], slot.quantum_state


def honest_bob_measure(slot, rng):
    """Bob chooses D0 with probability 2/3, D1 with 1/3, and measures his qubits."""
    d = 0 if rng.random() < states.BOB_CHOICE_PROBS[0] else 1
    j = measure_projective(slot, states.BOB_BASES[d], BOB, rng)
    slot.bob_record = (d, j)
    return d, j, j in states.BOB_SUCCESS[d], slot.quantum_state


PHI_PLUS_PROJECTOR = projector(states.PHI_P)


def phi_plus_project(slot, rng):
    """Project Bob's two qubits onto phi+; returns True on success."""
    v = local_apply(slot.quantum_state, PHI_PLUS_PROJECTOR, BOB)
    p = float(np.real(np.vdot(v, v)))
    if rng.random() < p:
        slot.quantum_state = v / math.sqrt(p)
        return True
    return False


class HonestAlice:
    name = "honest"

    def measure(self, slot, rng):
        return honest_alice_measure(slot, rng)[2]

    def declare(self, slot, rng):
        return slot.alice_record

    def own_record(self, slot, rng):
        return slot.alice_record

    def choice_bit(self, slot, rng):
        return slot.alice_record[0]

    def select(self, slots, rng):
        return slots[int(rng.integers(len(slots)))]

    def guess_received(self, slot, rng):
        return bool(rng.integers(2))


class HonestBob:
    name = "honest"

    def prepare(self, slot_id, rng):
        return _initial_state().copy()

    def verify_alice(self, slot, declared, rng):
        # measure own half in a uniformly chosen D basis and compare
        d = int(rng.integers(2))
        j = measure_projective(slot, states.BOB_BASES[d], BOB, rng)
        return verify_declaration((d, j), declared, verifier="bob")

    def measure(self, slot, rng):
        return honest_bob_measure(slot, rng)[2]

    def declare(self, slot, rng):
        return slot.bob_record

    def phi_plus(self, slot, rng):
        """Honest Bob only projects his d = 0 slots; d = 1 slots pass through."""
        if slot.bob_record[0] == 1:
            return True
        return phi_plus_project(slot, rng)

    def final(self, slot, b_prime, rng):
        c = decode_choice(*slot.bob_record)
        if c is None:
            return False, None, int(rng.integers(2))
        bit = b_prime ^ c
        return True, bit, bit

    def true_choice(self, slot):
        return slot.bob_record[0]


# ---------------------------------------------------------------------------
# the engine


class _Abort(Exception):
    def __init__(self, sender, reason):
        super().__init__(reason)
        self.sender = sender


def _select_tests(ids, fraction, rng):
    if not ids:
        return []
    k = math.ceil(fraction * len(ids))
    picked = rng.choice(len(ids), size=k, replace=False)
    return sorted(ids[p] for p in picked)


def phi_plus_stage(slot, bob, rng):
    keep = bool(bob.phi_plus(slot, rng))
    slot.phi_plus_kept = keep
    if not keep:
        slot.status = SlotStatus.DISCARDED_PHI_PLUS
    return keep


def final_ot(config, slots, alice, bob, rng):
    if not slots:
        raise _Abort("alice", "no surviving slots for oblivious transfer")
    if config.variant is Variant.ORIGINAL:
        chosen = [alice.select(slots, rng)]
        chosen[0].status = SlotStatus.SELECTED
    else:
        chosen = list(slots)
        for s in chosen:
            s.status = SlotStatus.OT_INSTANCE
    instances = []
    for s in chosen:
        b = int(rng.integers(2))
        c = int(alice.choice_bit(s, rng))
        b_prime = b ^ c
        received, decoded, guess = bob.final(s, b_prime, rng)
        instances.append(
            OtInstance(
                slot_id=s.slot_id,
                alice_bit=b,
                alice_choice=c,
                b_prime=b_prime,
                bob_received=bool(received),
                bob_decoded_bit=decoded,
                bob_guess=int(guess),
                alice_guess_received=bool(alice.guess_received(s, rng)),
                bob_choice=getattr(bob, "true_choice", lambda _: None)(s),
            )
        )
    return instances


def run_protocol(config, alice=None, bob=None):
    """Execute one protocol run and return its RunResult."""
    alice = HonestAlice() if alice is None else alice
    bob = HonestBob() if bob is None else bob
    rng = np.random.default_rng(config.rng_seed)
    transcript = Transcript()
    stats = Statistics()
    instances = []
    reason = None

    slots = [SlotState(k, np.asarray(bob.prepare(k, rng), dtype=complex)) for k in range(config.n_slots)]
    stats.prepared = len(slots)
    transcript.send("bob", Tag.PREPARE_DONE, slot_ids=[s.slot_id for s in slots])

    try:
        # Alice's measure-verify block
        active = _measure_block(slots, alice.measure, ALICE, SlotStatus.DISCARDED_ALICE_FAIL, stats, transcript, rng)
        active = _verify_block(active, config, rng, transcript, stats, measured=ALICE, alice=alice, bob=bob)

        # Bob's measure-verify block
        active = _measure_block(active, bob.measure, BOB, SlotStatus.DISCARDED_BOB_FAIL, stats, transcript, rng)
        active = _verify_block(active, config, rng, transcript, stats, measured=BOB, alice=alice, bob=bob)

        # phi+ stage
        stats.phi_plus_entering = len(active)
        kept = [s for s in active if phi_plus_stage(s, bob, rng)]
        discarded = [s.slot_id for s in active if not s.phi_plus_kept]
        stats.phi_plus_discarded = len(discarded)
        transcript.send("bob", Tag.PHI_PLUS_DISCARDS, slot_ids=discarded)
        if config.variant is Variant.MODIFIED and active:
            n = len(active)
            tol = config.discard_monitor_tolerance
            tol = binomial_tolerance(HONEST_PHI_DISCARD, n) if tol is None else tol
            rate = len(discarded) / n
            if abs(rate - HONEST_PHI_DISCARD) > tol:
                raise _Abort("alice", f"discard monitor: Bob discarded {rate:.4f} of {n} slots")

        instances = final_ot(config, kept, alice, bob, rng)
        transcript.send(
            "alice",
            Tag.OT_ANNOUNCE,
            slot_ids=[o.slot_id for o in instances],
            b_prime=[o.b_prime for o in instances],
        )
    except _Abort as exc:
        reason = str(exc)
        transcript.send(exc.sender, Tag.ABORT, reason=reason)

    return RunResult(config, transcript, reason is not None, reason, instances, stats)


def _measure_block(slots, measure, side, fail_status, stats, transcript, rng):
    kept, failed = [], []
    for s in slots:
        if s.status is not SlotStatus.ACTIVE:
            raise EngineFault(f"slot {s.slot_id} measured while {s.status.value}")
        (kept if measure(s, rng) else failed).append(s)
    for s in failed:
        s.status = fail_status
    if side == ALICE:
        stats.alice_measured, stats.alice_kept = len(slots), len(kept)
    else:
        stats.bob_measured, stats.bob_kept = len(slots), len(kept)
    transcript.send("alice" if side == ALICE else "bob", Tag.FAILURE_LIST,
                    party="alice" if side == ALICE else "bob", slot_ids=[s.slot_id for s in failed])
    return kept


def _verify_block(active, config, rng, transcript, stats, measured, alice, bob):
    """The non-measuring party spot-checks a random subset of ``active`` slots."""
    by_id = {s.slot_id: s for s in active}
    tested_ids = _select_tests(list(by_id), config.test_fraction, rng)
    verifier = "bob" if measured == ALICE else "alice"
    prover = "alice" if measured == ALICE else "bob"
    transcript.send(verifier, Tag.TEST_REQUEST, verifier=verifier, slot_ids=tested_ids)
    choices, failures = [], 0
    for sid in tested_ids:
        slot = by_id[sid]
        if measured == ALICE:
            declared = alice.declare(slot, rng)
            ok = bob.verify_alice(slot, declared, rng)
            slot.status = SlotStatus.TESTED_BY_BOB
        else:
            declared = bob.declare(slot, rng)
            ok = verify_declaration(alice.own_record(slot, rng), declared, verifier="alice")
            slot.status = SlotStatus.TESTED_BY_ALICE
        declared = (int(declared[0]), int(declared[1]))
        transcript.send(prover, Tag.TEST_DECLARATION, slot_id=sid, choice=declared[0], outcome=declared[1])
        choices.append(declared[0])
        failures += not ok
    if measured == ALICE:
        stats.alice_tested, stats.alice_test_failures = len(tested_ids), failures
        expected = states.ALICE_CHOICE_PROBS
    else:
        stats.bob_tested, stats.bob_test_failures = len(tested_ids), failures
        expected = states.BOB_CHOICE_PROBS
    freq_ok = not choices or choice_frequency_check(choices, expected, config.choice_frequency_tolerance)
    passed = failures == 0 and freq_ok
    transcript.send(verifier, Tag.TEST_VERDICT, passed=passed, failures=failures, frequency_ok=freq_ok)
    if not passed:
        raise _Abort(verifier, f"{verifier} rejected {prover}'s declarations")
    tested = set(tested_ids)
    return [s for s in active if s.slot_id not in tested]
