"""Delayed-measurement cheating strategies for Alice and Bob.

A cheater replaces the honest choose-then-measure step with the coarse
success/failure filter of :func:`rotlab.measurement.build_two_stage`. Slots
that get tested are completed with the second-stage measurement, which
yields a declaration distributed exactly like an honest one. Untested slots
stay partially measured and feed a discrimination measurement at the end.
"""
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from rotlab import measurement as meas
from rotlab.protocol import (
    ALICE,
    BOB,
    HONEST_PHI_DISCARD,
    HonestAlice,
    HonestBob,
    Variant,
    local_apply,
    local_povm_probs,
    sample_local,
)

DISCARD = "discard"


class CheatMode(str, Enum):
    BOB_MEM = "bob_mem"
    BOB_USD_UNBOUNDED = "bob_usd_unbounded"
    BOB_USD_RATE_LIMITED = "bob_usd_rate_limited"
    ALICE_MEM = "alice_mem"
    ALICE_USD_SELECT = "alice_usd_select"


@dataclass(frozen=True)
class AnalyticBounds:
    honest_alice: float
    honest_bob: float
    bob_mem: float
    bob_usd: float
    bob_rate_limited: float
    alice_mem: float
    alice_usd: float


BOB_MEM_CLOSED = (3 + math.sqrt(3)) / 6
ALICE_MEM_CLOSED = 0.75


def analytic_bounds(mix_weight=0.5):
    """Cheating probabilities of every strategy, with both Helstrom values checked numerically."""
    bob_mem = meas.bob_helstrom().success_probability
    alice_mem = meas.alice_helstrom().success_probability
    if abs(bob_mem - BOB_MEM_CLOSED) > 1e-9 or abs(alice_mem - ALICE_MEM_CLOSED) > 1e-9:
        raise AssertionError(f"Helstrom values drifted: bob {bob_mem}, alice {alice_mem}")
    return AnalyticBounds(
        honest_alice=0.5,
        honest_bob=0.75,
        bob_mem=BOB_MEM_CLOSED,
        bob_usd=1.0,
        bob_rate_limited=mix_weight * 1.0 + (1 - mix_weight) * BOB_MEM_CLOSED,
        alice_mem=ALICE_MEM_CLOSED,
        alice_usd=1.0,
    )


def rate_limited_discard(mix_weight):
    return mix_weight * (1 - 1 / 3)


def rate_limited_kept_accuracy(mix_weight):
    """Accuracy over the slots Bob keeps when he mixes USD and minimum-error per slot.

    USD is conclusive (and right) on 1/3 of its slots and the rest are
    discarded, so kept slots are weighted toward the minimum-error branch.
    """
    kept_usd = mix_weight / 3
    kept_mem = 1 - mix_weight
    return (kept_usd + kept_mem * BOB_MEM_CLOSED) / (kept_usd + kept_mem)


@lru_cache(maxsize=None)
def _two_stage(side):
    spec = meas.alice_honest_spec() if side == ALICE else meas.bob_honest_spec()
    return meas.build_two_stage(spec)


@lru_cache(maxsize=None)
def _povms():
    return {
        "bob_mem": meas.bob_helstrom().povm,
        "bob_usd": meas.bob_usd_povm(),
        "alice_mem": meas.alice_helstrom().povm,
        "alice_usd": meas.alice_usd_measurement(),
    }


def cheat_filter_phase(slot, two_stage, side, rng):
    """Apply the coarse success/failure filter on ``side``; returns the success flag."""
    p = local_povm_probs(slot.quantum_state, [two_stage.pi_s], side)[0]
    success = rng.random() < p
    kraus = two_stage.kraus_s if success else two_stage.kraus_f
    v = local_apply(slot.quantum_state, kraus, side)
    slot.quantum_state = v / math.sqrt(p if success else 1 - p)
    slot.cheat_scratch["filtered"] = bool(success)
    return bool(success)


def cheat_respond_to_test(slot, two_stage, side, rng):
    """Finish the delayed measurement and return the honest-looking (choice, outcome)."""
    label = sample_local(slot, two_stage.completion, side, rng)
    if label == meas.UNREACHABLE:
        raise meas.ImpossibleOutcomeError("completion fired outside the filter support")
    slot.cheat_scratch["completed"] = True
    return label


def _discriminate(slot, povm, side, rng):
    label = sample_local(slot, povm, side, rng)
    return None if label == meas.INCONCLUSIVE else int(label)


def bob_final_guess(slot, mode, rng, mix_weight=0.5):
    """Bob's guess of Alice's choice c, or DISCARD if he asks Alice to drop the slot."""
    mode = CheatMode(mode)
    povms = _povms()
    if mode is CheatMode.BOB_USD_RATE_LIMITED:
        mode = CheatMode.BOB_USD_UNBOUNDED if rng.random() < mix_weight else CheatMode.BOB_MEM
    if mode is CheatMode.BOB_MEM:
        return _discriminate(slot, povms["bob_mem"], BOB, rng)
    if mode is CheatMode.BOB_USD_UNBOUNDED:
        guess = _discriminate(slot, povms["bob_usd"], BOB, rng)
        return DISCARD if guess is None else guess
    raise ValueError(f"{mode.value} is not a Bob strategy")


def _alice_guess(slot, mode, rng):
    """Alice's guess of Bob's choice d on one slot; a coin if USD was inconclusive."""
    povm = _povms()["alice_usd" if mode is CheatMode.ALICE_USD_SELECT else "alice_mem"]
    guess = _discriminate(slot, povm, ALICE, rng)
    conclusive = guess is not None
    if not conclusive:
        guess = int(rng.integers(2))
    slot.cheat_scratch.update(d_guess=guess, conclusive=conclusive)
    return guess


def alice_final_guess(slots, mode, rng, variant=Variant.ORIGINAL, force=None):
    """Measure every surviving slot and pick the OT slot.

    Returns ``(selected, guesses)`` where ``guesses`` maps slot id to the
    guessed d and ``selected`` is None in the modified variant. With USD in
    the original variant Alice selects uniformly among conclusive slots
    (only those with d == ``force`` if given); if none qualify she selects
    uniformly and her guess on that slot is a coin.
    """
    mode = CheatMode(mode)
    guesses = {s.slot_id: _alice_guess(s, mode, rng) for s in slots}
    if Variant(variant) is Variant.MODIFIED:
        return None, guesses
    pool = []
    if mode is CheatMode.ALICE_USD_SELECT:
        pool = [
            s for s in slots
            if s.cheat_scratch["conclusive"] and (force is None or guesses[s.slot_id] == force)
        ]
    pool = pool or list(slots)
    return pool[int(rng.integers(len(pool)))], guesses


class CheatingBob(HonestBob):
    """Honest until his own measurement; delays it and discriminates at the phi+ stage."""

    def __init__(self, mode=CheatMode.BOB_MEM, mix_weight=0.5, mimic_discards=True):
        self.mode = CheatMode(mode)
        if not self.mode.value.startswith("bob"):
            raise ValueError(f"{self.mode.value} is not a Bob strategy")
        if not 0.0 <= mix_weight <= 1.0:
            raise ValueError("mix_weight must lie in [0, 1]")
        self.mix_weight = mix_weight
        # minimum-error Bob still drops 1/3 of slots at random so his discard rate looks honest
        self.mimic_discards = mimic_discards
        self.name = self.mode.value

    def measure(self, slot, rng):
        return cheat_filter_phase(slot, _two_stage(BOB), BOB, rng)

    def declare(self, slot, rng):
        slot.bob_record = cheat_respond_to_test(slot, _two_stage(BOB), BOB, rng)
        return slot.bob_record

    def phi_plus(self, slot, rng):
        if self.mode is CheatMode.BOB_MEM and self.mimic_discards and rng.random() < HONEST_PHI_DISCARD:
            return False
        guess = bob_final_guess(slot, self.mode, rng, self.mix_weight)
        if guess == DISCARD:
            return False
        slot.cheat_scratch["c_guess"] = guess
        return True

    def final(self, slot, b_prime, rng):
        return False, None, b_prime ^ slot.cheat_scratch["c_guess"]

    def true_choice(self, slot):
        return None


class CheatingAlice(HonestAlice):
    """Delays her measurement and discriminates Bob's choice at the final step.

    She holds no choice bit for untested slots, so b' is formed with a fresh
    coin; this does not affect her guess about whether Bob received.
    """

    def __init__(self, mode=CheatMode.ALICE_MEM, force=None):
        self.mode = CheatMode(mode)
        if not self.mode.value.startswith("alice"):
            raise ValueError(f"{self.mode.value} is not an Alice strategy")
        self.force = force
        self.name = self.mode.value

    def measure(self, slot, rng):
        return cheat_filter_phase(slot, _two_stage(ALICE), ALICE, rng)

    def declare(self, slot, rng):
        slot.alice_record = cheat_respond_to_test(slot, _two_stage(ALICE), ALICE, rng)
        return slot.alice_record

    def own_record(self, slot, rng):
        if slot.alice_record is None:
            self.declare(slot, rng)
        return slot.alice_record

    def choice_bit(self, slot, rng):
        if slot.alice_record is not None:
            return slot.alice_record[0]
        return int(rng.integers(2))

    def select(self, slots, rng):
        selected, _ = alice_final_guess(slots, self.mode, rng, Variant.ORIGINAL, self.force)
        return selected

    def guess_received(self, slot, rng):
        if "d_guess" not in slot.cheat_scratch:
            _alice_guess(slot, self.mode, rng)
        return slot.cheat_scratch["d_guess"] == 1
