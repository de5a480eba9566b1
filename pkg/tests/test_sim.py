import io

import numpy as np
import pytest

from sketchdecomp.sim import (
    DROPPED,
    NS_PER_MS,
    DelayModel,
    FlowSpec,
    LossEntry,
    LossSchedule,
    PacketTrace,
    ScheduleError,
    TraceFormatError,
    delay_bounds_check,
    generate_trace,
    tally,
)

T = 10 * NS_PER_MS
DELAY = DelayModel(20 * NS_PER_MS, 20 * NS_PER_MS, 2 * NS_PER_MS, 0.8)


def recount(trace, n):
    """Independent tally straight from the records."""
    names = [f.name for f in trace.flows]
    sent = {}
    lost = {}
    for fi, s, a in zip(trace.flow_idx, trace.send_ns, trace.arrival_ns):
        key = (int(s // T), names[fi])
        sent[key] = sent.get(key, 0) + 1
        if a == DROPPED:
            lost[key] = lost.get(key, 0) + 1
    return sent, lost


def flows3():
    return [FlowSpec("a", 30), FlowSpec("b", 12, (2, 6)), FlowSpec("c", 5)]


def test_no_losses():
    tr, gt = generate_trace(flows3(), DELAY, LossSchedule(), 8, T, 1)
    assert not gt.loss_count.any()
    assert gt.sent_count.sum() == len(tr) == 8 * 30 + 5 * 12 + 8 * 5
    assert gt.sent_count[0, 1] == 0 and gt.sent_count[1, 1] == 12


def test_drop_all():
    tr, gt = generate_trace(flows3(), DELAY, LossSchedule([LossEntry(5, "a", count=30)]), 8, T, 1)
    assert gt.loss_count[4, 0] == gt.sent_count[4, 0] == 30
    assert gt.loss_count.sum() == 30


def test_bernoulli_loss_and_recount():
    n = 50
    flows = [FlowSpec("x", 200)]
    sched = LossSchedule([LossEntry(k, "x", prob=0.3) for k in range(1, n + 1)])
    tr, gt = generate_trace(flows, DELAY, sched, n, T, 42)
    total = n * 200
    lost = gt.loss_count.sum()
    sd = np.sqrt(total * 0.3 * 0.7)
    assert abs(lost - 0.3 * total) < 5 * sd
    sent, lostd = recount(tr, n)
    for k in range(n):
        assert gt.sent_count[k, 0] == sent.get((k, "x"), 0)
        assert gt.loss_count[k, 0] == lostd.get((k, "x"), 0)


def test_conservation_and_ordering():
    sched = LossSchedule([LossEntry(k, "a", count=k) for k in range(1, 9)])
    tr, gt = generate_trace(flows3(), DELAY, sched, 8, T, 3)
    delivered = tally(tr, 8, T).sent_count - tally(tr, 8, T).loss_count
    ok = tr.delivered
    for j in range(3):
        per = np.bincount(tr.send_ns[ok & (tr.flow_idx == j)] // T, minlength=8)
        assert np.array_equal(per, delivered[:, j])
        s = tr.send_ns[tr.flow_idx == j]
        assert np.all(np.diff(s) >= 0)
    assert np.all(np.diff(tr.send_ns) >= 0)
    assert np.all(tr.arrival_ns[ok] >= tr.send_ns[ok] + DELAY.d_min_ns)


def test_determinism_bytes():
    a, _ = generate_trace(flows3(), DELAY, LossSchedule([LossEntry(3, "c", prob=0.5)]), 8, T, 9)
    b, _ = generate_trace(flows3(), DELAY, LossSchedule([LossEntry(3, "c", prob=0.5)]), 8, T, 9)
    fa, fb = io.StringIO(), io.StringIO()
    a.dump_ndjson(fa)
    b.dump_ndjson(fb)
    assert fa.getvalue() == fb.getvalue()


@pytest.mark.parametrize(
    "entry",
    [LossEntry(3, "nope", count=1), LossEntry(0, "a", count=1), LossEntry(9, "a", count=1), LossEntry(2, "a", count=31)],
)
def test_schedule_validation(entry):
    with pytest.raises(ScheduleError):
        generate_trace(flows3(), DELAY, LossSchedule([entry]), 8, T, 1)


def test_duplicate_entries_rejected():
    with pytest.raises(ScheduleError):
        generate_trace(flows3(), DELAY, LossSchedule([LossEntry(2, "a", count=1), LossEntry(2, "a", prob=0.1)]), 8, T, 1)


def test_entry_needs_one_mode():
    with pytest.raises(ScheduleError):
        LossEntry(1, "a")
    with pytest.raises(ScheduleError):
        LossEntry(1, "a", prob=1.5)


def test_delay_bounds():
    tr, _ = generate_trace(flows3(), DELAY, LossSchedule(), 8, T, 1)
    assert delay_bounds_check(tr, DELAY)
    fake = PacketTrace(tr.flows[:1], np.array([0]), np.array([100]),
                       np.array([100 + DELAY.d_min_ns + DELAY.jitter_ns]))
    assert not delay_bounds_check(fake, DELAY)
    fake.arrival_ns[0] -= 1
    assert delay_bounds_check(fake, DELAY)


def test_delay_bounds_fuzz():
    rng = np.random.default_rng(0)
    for i in range(1000):
        jit = int(rng.integers(1, 3 * T))
        dm = DelayModel(int(rng.integers(0, 5 * T)), jit, float(rng.uniform(0.01, 2) * jit), float(rng.uniform(0.2, 2)))
        tr, _ = generate_trace([FlowSpec("f", int(rng.integers(1, 20)))], dm, LossSchedule(), 3, T, i)
        assert delay_bounds_check(tr, dm)


def test_zero_jitter_is_constant_delay():
    dm = DelayModel(5 * NS_PER_MS, 0, 1.0)
    tr, _ = generate_trace(flows3(), dm, LossSchedule(), 8, T, 0)
    assert np.all(tr.arrival_ns - tr.send_ns == dm.d_min_ns)
    assert delay_bounds_check(tr, dm)


def test_ndjson_round_trip():
    tr, _ = generate_trace(flows3(), DELAY, LossSchedule([LossEntry(2, "b", count=4)]), 8, T, 5)
    buf = io.StringIO()
    tr.dump_ndjson(buf)
    first = buf.getvalue().splitlines()[0]
    assert first.startswith('{"flow":') and '"send_ns":' in first
    assert '"arrival_ns":null' in buf.getvalue()
    back = PacketTrace.load_ndjson(io.StringIO(buf.getvalue()))
    names = [f.name for f in tr.flows]
    back_names = [f.name for f in back.flows]
    assert [names[i] for i in tr.flow_idx] == [back_names[i] for i in back.flow_idx]
    assert np.array_equal(back.send_ns, tr.send_ns)
    assert np.array_equal(back.arrival_ns, tr.arrival_ns)


def test_ndjson_errors_carry_line():
    bad = '{"flow":"a","send_ns":1,"arrival_ns":5}\n{"flow":"a","send_ns":2\n'
    with pytest.raises(TraceFormatError, match="line 2"):
        PacketTrace.load_ndjson(io.StringIO(bad))
    with pytest.raises(TraceFormatError, match="line 1"):
        PacketTrace.load_ndjson(io.StringIO('{"flow":"a","send_ns":"x","arrival_ns":null}\n'))
