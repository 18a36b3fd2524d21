import math

import numpy as np
import pytest

import oracles
from rotlab import cheats
from rotlab import measurement as meas
from rotlab import protocol as proto
from rotlab import states
from rotlab.cheats import DISCARD, CheatingAlice, CheatingBob, CheatMode
from rotlab.protocol import ALICE, BOB, ProtocolConfig, SlotState, Variant

BOB_MEM = (3 + math.sqrt(3)) / 6


def _oracle_helstrom(rho0, rho1):
    return 0.5 * (1 + np.sum(np.abs(np.linalg.eigvalsh(0.5 * rho0 - 0.5 * rho1))))


def _oracle_bob_states():
    """Bob's reduced states from the raw oracle pipeline (Alice success c, Bob filter)."""
    a_bases, a_succ, _ = oracles.alice_bases()
    b_bases, b_succ, b_probs = oracles.bob_bases()
    m_s = oracles.msqrt(oracles.success_operator(b_bases, b_succ, b_probs))
    out = []
    for c in range(2):
        v = oracles.full_op(a_op=sum(oracles.proj(a_bases[c][i]) for i in a_succ[c])) @ oracles.psi16()
        v = oracles.full_op(b_op=m_s) @ v
        rho = oracles.ptrace16(oracles.proj(v), keep=1)
        out.append(rho / np.trace(rho))
    return out


def bob_slots(n, rng):
    """Slots where honest Alice and the cheating Bob's filter both succeeded."""
    ts = cheats._two_stage(BOB)
    out = []
    while len(out) < n:
        slot = SlotState(len(out), proto._initial_state().copy())
        if proto.honest_alice_measure(slot, rng)[2] and cheats.cheat_filter_phase(slot, ts, BOB, rng):
            out.append(slot)
    return out


def alice_slots(n, rng):
    """Slots past the cheating Alice's filter, honest Bob's success and his phi+ stage."""
    ts = cheats._two_stage(ALICE)
    bob = proto.HonestBob()
    out = []
    while len(out) < n:
        slot = SlotState(len(out), proto._initial_state().copy())
        if not cheats.cheat_filter_phase(slot, ts, ALICE, rng):
            continue
        if proto.honest_bob_measure(slot, rng)[2] and bob.phi_plus(slot, rng):
            out.append(slot)
    return out


def bob_accuracy(mode, n, rng, mix=0.5):
    right = kept = 0
    for slot in bob_slots(n, rng):
        guess = cheats.bob_final_guess(slot, mode, rng, mix)
        if guess == DISCARD:
            continue
        kept += 1
        right += guess == slot.alice_record[0]
    return right / kept, 1 - kept / n


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(31337)


def test_analytic_bounds_table():
    b = cheats.analytic_bounds()
    assert b.bob_mem == pytest.approx(0.7886751345948129, abs=1e-15)
    assert b.bob_rate_limited == pytest.approx(0.8943375672974064, abs=1e-15)
    assert b.honest_alice == 0.5 and b.honest_bob == 0.75
    assert b.alice_mem == 0.75 and b.alice_usd == 1.0 and b.bob_usd == 1.0


def test_helstrom_values_from_oracle_pipeline():
    rho0, rho1 = _oracle_bob_states()
    assert _oracle_helstrom(rho0, rho1) == pytest.approx(BOB_MEM, abs=1e-9)


def test_filter_success_matches_honest(rng):
    ts_b, ts_a = cheats._two_stage(BOB), cheats._two_stage(ALICE)
    psi_c = states.post_alice_states()
    hits_b = sum(
        cheats.cheat_filter_phase(SlotState(0, psi_c[k % 2].copy()), ts_b, BOB, rng) for k in range(20000)
    )
    hits_a = sum(
        cheats.cheat_filter_phase(SlotState(0, proto._initial_state().copy()), ts_a, ALICE, rng) for _ in range(20000)
    )
    assert hits_b / 20000 == pytest.approx(0.5, abs=0.01)
    assert hits_a / 20000 == pytest.approx(0.5, abs=0.01)


def test_bob_mem_accuracy(rng):
    acc, discard = bob_accuracy(CheatMode.BOB_MEM, 30000, rng)
    assert acc == pytest.approx(BOB_MEM, abs=0.01)
    assert discard == 0


def test_bob_usd_unbounded(rng):
    acc, discard = bob_accuracy(CheatMode.BOB_USD_UNBOUNDED, 30000, rng)
    assert acc == 1.0
    assert discard == pytest.approx(2 / 3, abs=0.01)


def test_rate_limited_kept_accuracy_oracle():
    # per-slot coin: USD keeps a third of its slots and is always right there
    rho0, rho1 = _oracle_bob_states()
    mem = _oracle_helstrom(rho0, rho1)
    for mix in (0, 0.25, 0.5, 0.75, 1):
        kept_usd, kept_mem = mix / 3, 1 - mix
        expected = (kept_usd + kept_mem * mem) / (kept_usd + kept_mem)
        assert cheats.rate_limited_kept_accuracy(mix) == pytest.approx(expected, abs=1e-12)
        assert cheats.rate_limited_discard(mix) == pytest.approx(mix * 2 / 3, abs=1e-15)


@pytest.fixture(scope="module")
def rate_limited(rng):
    return bob_accuracy(CheatMode.BOB_USD_RATE_LIMITED, 40000, rng)


def test_bob_rate_limited_matches_derived_value(rate_limited):
    acc, discard = rate_limited
    assert discard == pytest.approx(1 / 3, abs=0.01)
    assert acc == pytest.approx(cheats.rate_limited_kept_accuracy(0.5), abs=0.01)


@pytest.mark.xfail(
    strict=True,
    reason="the kept-slot accuracy of a per-slot 50/50 mix is 0.8415, not 0.894; "
    "0.894 averages the two branches as if discarded USD slots were wins",
)
def test_bob_rate_limited_headline_value(rate_limited):
    acc, _ = rate_limited
    assert acc == pytest.approx(cheats.analytic_bounds().bob_rate_limited, abs=0.01)


def test_bob_rate_limited_monotone_in_mix(rng):
    estimates = []
    mixes = (0, 0.25, 0.5, 0.75, 1)
    for mix in mixes:
        n = 12000
        acc, _ = bob_accuracy(CheatMode.BOB_USD_RATE_LIMITED, n, rng, mix)
        kept = n * (1 - cheats.rate_limited_discard(mix))
        se = math.sqrt(max(acc * (1 - acc), 1e-12) / kept)
        assert abs(acc - cheats.rate_limited_kept_accuracy(mix)) <= max(0.01, 4 * se)
        estimates.append((acc, se))
    derived = [cheats.rate_limited_kept_accuracy(m) for m in mixes]
    for k in range(len(mixes) - 1):
        (a, sa), (b, sb) = estimates[k], estimates[k + 1]
        band = 4 * math.hypot(sa, sb)
        if derived[k + 1] - derived[k] > 2 * band:
            # bands well apart: the ordering must show up clearly
            assert b - a > band
        else:
            assert b - a > -band


def test_mix_weight_validation():
    with pytest.raises(ValueError):
        CheatingBob(CheatMode.BOB_USD_RATE_LIMITED, mix_weight=1.5)
    with pytest.raises(ValueError):
        CheatingBob(CheatMode.ALICE_MEM)
    with pytest.raises(ValueError):
        CheatingAlice(CheatMode.BOB_MEM)


def test_alice_mem_accuracy(rng):
    slots = alice_slots(30000, rng)
    _, guesses = cheats.alice_final_guess(slots, CheatMode.ALICE_MEM, rng, Variant.MODIFIED)
    acc = np.mean([guesses[s.slot_id] == s.bob_record[0] for s in slots])
    assert acc == pytest.approx(0.75, abs=0.01)


def test_alice_usd_per_slot(rng):
    slots = alice_slots(20000, rng)
    _, guesses = cheats.alice_final_guess(slots, CheatMode.ALICE_USD_SELECT, rng, Variant.MODIFIED)
    conclusive = [s for s in slots if s.cheat_scratch["conclusive"]]
    assert len(conclusive) / len(slots) == pytest.approx(0.5, abs=0.01)
    assert all(guesses[s.slot_id] == s.bob_record[0] for s in conclusive)
    # with no selection she is a coin on the rest
    acc = np.mean([guesses[s.slot_id] == s.bob_record[0] for s in slots])
    assert acc <= 0.75 + 0.01


def test_alice_usd_selection(rng):
    # the chance that all k survivors are inconclusive is (1/2)^k
    povm = meas.alice_usd_measurement()
    p_inc = [meas.outcome_distribution(rho, povm)[2] for rho in states.alice_reduced_states()]
    assert p_inc == pytest.approx([0.5, 0.5], abs=1e-12)
    assert np.prod([0.5] * 20) == 2.0**-20
    wins = 0
    for _ in range(500):
        slots = alice_slots(20, rng)
        selected, guesses = cheats.alice_final_guess(slots, CheatMode.ALICE_USD_SELECT, rng)
        assert selected.cheat_scratch["conclusive"]
        wins += guesses[selected.slot_id] == selected.bob_record[0]
    assert wins == 500


def test_alice_usd_fallback_when_all_inconclusive(rng):
    slots = alice_slots(3, rng)
    for s in slots:
        s.quantum_state = np.kron(states.phi_basis()[0], np.array([1, 0, 0, 0])).astype(complex)
    selected, guesses = cheats.alice_final_guess(slots, CheatMode.ALICE_USD_SELECT, rng)
    assert selected in slots
    assert not any(s.cheat_scratch["conclusive"] for s in slots)


def test_forced_outcome_makes_bob_receive():
    received = []
    for seed in range(40):
        cfg = ProtocolConfig(n_slots=600, rng_seed=seed)
        res = proto.run_protocol(cfg, alice=CheatingAlice(CheatMode.ALICE_USD_SELECT, force=1))
        assert not res.aborted
        received += [o.bob_received for o in res.ot_instances]
    assert np.mean(received) == 1.0


def test_cheater_declarations_look_honest(rng):
    # declared (choice, outcome) of cheaters against the exact honest tested-slot distribution
    table = proto.consistency_table()
    for side in (BOB, ALICE):
        ts = cheats._two_stage(side)
        counts = {}
        n = 0
        slots = bob_slots(50000, rng) if side == BOB else []
        if side == ALICE:
            while n < 50000:
                slot = SlotState(0, proto._initial_state().copy())
                if cheats.cheat_filter_phase(slot, ts, ALICE, rng):
                    slots.append(slot)
                    n += 1
        for slot in slots:
            label = cheats.cheat_respond_to_test(slot, ts, side, rng)
            counts[label] = counts.get(label, 0) + 1
        if side == BOB:
            exact = {
                (d, j): sum(table[(c, i, d, j)] for c in range(2) for i in states.ALICE_SUCCESS[c])
                for d in range(2)
                for j in states.BOB_SUCCESS[d]
            }
        else:
            exact = {
                (c, i): sum(table[(c, i, d, j)] for d in range(2) for j in range(4))
                for c in range(2)
                for i in states.ALICE_SUCCESS[c]
            }
        z = sum(exact.values())
        tv = 0.5 * sum(abs(counts.get(k, 0) / len(slots) - v / z) for k, v in exact.items())
        assert set(counts) <= set(exact)
        assert tv < 0.02
        d_choices = [k[0] for k, v in counts.items() for _ in range(v)]
        expected = states.BOB_CHOICE_PROBS if side == BOB else states.ALICE_CHOICE_PROBS
        assert proto.choice_frequency_check(d_choices, expected)


@pytest.mark.parametrize(
    "alice,bob",
    [
        (None, CheatingBob(CheatMode.BOB_MEM)),
        (None, CheatingBob(CheatMode.BOB_USD_UNBOUNDED)),
        (CheatingAlice(CheatMode.ALICE_MEM), None),
    ],
)
def test_cheaters_pass_verification(alice, bob):
    res = proto.run_protocol(ProtocolConfig(n_slots=4000, test_fraction=0.5, rng_seed=9), alice, bob)
    s = res.statistics
    assert s.alice_test_failures == 0 and s.bob_test_failures == 0
    assert s.alice_tested + s.bob_tested > 0


def test_bob_mem_mimics_honest_discards():
    rates = []
    for seed in range(6):
        res = proto.run_protocol(
            ProtocolConfig(n_slots=4000, variant=Variant.MODIFIED, rng_seed=seed), bob=CheatingBob(CheatMode.BOB_MEM)
        )
        rates.append(res.statistics.phi_plus_discard_rate)
    assert np.mean(rates) == pytest.approx(1 / 3, abs=0.02)


def test_usd_modes_never_err_in_protocol():
    for seed in range(5):
        res = proto.run_protocol(
            ProtocolConfig(n_slots=2000, rng_seed=seed), bob=CheatingBob(CheatMode.BOB_USD_UNBOUNDED)
        )
        for o in res.ot_instances:
            assert o.bob_guess == o.alice_bit
