"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict; the lines are echoed in the
terminal summary (see ``pytest_terminal_summary`` in conftest).
"""

import time

import numpy as np
import pytest

from smartcal import calibrators as C
from smartcal import cli
from smartcal import metrics as M
from smartcal import tempnet, theory
from smartcal.calibrators import TrainConfig, calibration_loss
from smartcal.dataio import SplitSpec, split
from smartcal.softbin import SoftBinConfig, membership, soft_accuracy, soft_ece
from tests.conftest import onehot_probs

VERDICTS: list[str] = []
SEEDS = range(5)


def verdict(num: int, ok: bool, detail: str, started: float, budget: float) -> None:
    elapsed = time.perf_counter() - started
    in_time = elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    line = f"[{status}] criterion {num:2d}: {detail} ({elapsed:.2f}s, budget {budget:g}s)"
    VERDICTS.append(line)
    print(line)
    assert ok, line
    assert in_time, line


def rel_err(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def test_c01_parameter_count():
    net = tempnet.init()
    t0 = time.perf_counter()
    n = net.n_params
    verdict(1, n == 49 and n == net.params().size, f"default net has {n} parameters", t0, 1e-3)


def test_c02_gradient_suite():
    t0 = time.perf_counter()
    gen = np.random.default_rng(2)
    cfg = SoftBinConfig()
    h = 1e-5
    worst_net = worst_chain = 0.0
    checked = 0
    while checked < 20:
        z = gen.normal(scale=2.0, size=(32, 5))
        y = gen.integers(0, 5, size=32)
        net = tempnet.init(16, seed=int(gen.integers(1 << 31)))
        net.W1 = gen.normal(size=16)
        net.W2 = gen.normal(scale=0.3, size=16)
        s = tempnet.indicator(z)
        net.mu_g, net.sigma_g, _ = tempnet.fit_gap_stats(s)
        T, cache = net.forward(s)
        # the ReLU kink makes central differences meaningless within h of 0
        if np.min(np.abs(cache[1])) < 1e-3:
            continue
        upstream = gen.normal(size=32)
        _, dT = calibration_loss(z, y, T, "softece", cfg)
        g_net = net.backward(cache, upstream, tempnet.GradientBuffer.zeros(16)).flat()
        g_chain = net.backward(cache, dT, tempnet.GradientBuffer.zeros(16)).flat()
        base = net.params()
        fd_net = np.empty_like(base)
        fd_chain = np.empty_like(base)
        for i in range(base.size):
            vals_net, vals_chain = [], []
            for sgn in (1, -1):
                p = base.copy()
                p[i] += sgn * h
                net.set_params(p)
                Tp = net(s)
                vals_net.append(float(upstream @ Tp))
                vals_chain.append(calibration_loss(z, y, Tp, "softece", cfg)[0])
            fd_net[i] = (vals_net[0] - vals_net[1]) / (2 * h)
            fd_chain[i] = (vals_chain[0] - vals_chain[1]) / (2 * h)
        net.set_params(base)
        worst_net = max(worst_net, rel_err(g_net, fd_net))
        worst_chain = max(worst_chain, rel_err(g_chain, fd_chain))
        checked += 1
    ok = worst_net < 1e-4 and worst_chain < 1e-4
    verdict(2, ok, f"max rel err backward {worst_net:.2e}, chained SoftECE {worst_chain:.2e} over {checked}", t0, 5)


def test_c03_prediction_invariance():
    t0 = time.perf_counter()
    _, dist = theory.synthesize(theory.SynthConfig(n=2000, k=10, seed=4, distortion="logistic"))
    cfg = TrainConfig(epochs=100, seed=4)
    smart, ts = C.train_smart(dist, cfg), C.train_ts(dist, cfg)
    gen = np.random.default_rng(3)
    z = gen.normal(scale=8.0, size=(10_000, 10))
    top2 = np.sort(z, axis=1)[:, -2:]
    assert np.all(top2[:, 1] > top2[:, 0])
    before = z.argmax(axis=1)
    same = [int(np.sum(m.apply(z).argmax(axis=1) == before)) for m in (smart, ts)]
    verdict(3, same == [10_000, 10_000], f"argmax preserved smart {same[0]}/10000, ts {same[1]}/10000", t0, 5)


def test_c04_gap_bounds():
    t0 = time.perf_counter()
    counts = {}
    for p in (0.6, 0.8, 0.95):
        recs = theory.bounds_trials(10, p, 1000, seed=4)
        counts[p] = sum(r.ok for r in recs)
    z = np.full(10, -2.0)
    z[0] = 0.0
    closed = theory.uniform_gap_temperature(2.0, 10, 0.8)
    solved = theory.solve_temperature(z, 0.8)
    ok = all(c == 1000 for c in counts.values()) and abs(closed - solved) < 1e-8 and round(closed, 5) == 0.55811
    verdict(4, ok, f"in bounds {counts}; closed form {closed:.8f} vs bisection {solved:.8f}", t0, 10)


def test_c05_softece_limits():
    t0 = time.perf_counter()
    gen = np.random.default_rng(5)
    p = gen.random(500)
    correct = (gen.random(500) < 0.7).astype(float)
    acc, _ = soft_accuracy(membership(p, SoftBinConfig(alpha=1e-8)), correct)
    flat_dev = float(np.max(np.abs(acc - correct.mean())))

    edges = np.arange(16) / 15
    q = gen.uniform(0.05, 1.0, 5000)
    q = q[np.min(np.abs(q[:, None] - edges[None, :]), axis=1) > 0.01]
    hit = (gen.random(q.size) < q ** 1.5).astype(float)
    sharp = soft_ece(q, hit, SoftBinConfig(alpha=1e6))
    hard, _ = M.binned_error(q, hit, 15)
    ok = flat_dev <= 1e-6 and abs(sharp - hard) <= 1e-3
    verdict(5, ok, f"flat-kernel acc deviation {flat_dev:.1e}; sharp |soft-hard| {abs(sharp - hard):.1e}", t0, 1)


def test_c06_ts_recovery():
    t0 = time.perf_counter()
    temps = []
    for seed in SEEDS:
        cfg = theory.SynthConfig(n=10_000, k=10, seed=seed, distortion="constant", t_const=0.5)
        _, dist = theory.synthesize(cfg)
        temps.append(C.train_ts(dist, TrainConfig(seed=seed)).T)
    ok = all(0.45 <= t <= 0.55 for t in temps)
    verdict(6, ok, "recovered T " + ", ".join(f"{t:.4f}" for t in temps), t0, 10)


def _gap_study(val_count):
    rows = []
    for seed in SEEDS:
        _, dist = theory.synthesize(theory.SynthConfig(n=10_000, k=10, seed=seed, distortion="logistic", lo=0.6, hi=1.8))
        val, test = split(dist, SplitSpec(val_count=val_count, seed=seed))
        cfg = TrainConfig(seed=seed)
        un = M.ece(M.softmax_rows(test.logits), test.labels)[0]
        ts = M.ece(C.train_ts(val, cfg).apply(test), test.labels)[0]
        sm = M.ece(C.train_smart(val, cfg).apply(test), test.labels)[0]
        rows.append((un, ts, sm))
    return np.array(rows)


@pytest.fixture(scope="module")
def study500():
    t0 = time.perf_counter()
    return _gap_study(500), time.perf_counter() - t0


def test_c07_smart_beats_ts(study500):
    t0 = time.perf_counter() - study500[1]
    r = study500[0]
    wins = int(np.sum(r[:, 2] < r[:, 1]))
    both = int(np.sum((r[:, 1] < r[:, 0]) & (r[:, 2] < r[:, 0])))
    detail = f"smart<ts {wins}/5, both<uncal {both}/5; ece (uncal, ts, smart) " + " ".join(
        f"({u:.4f},{t:.4f},{s:.4f})" for u, t, s in r
    )
    verdict(7, wins >= 4 and both == 5, detail, t0, 60)


def test_c08_data_efficiency(study500):
    t0 = time.perf_counter()
    r50 = _gap_study(50)
    r500 = study500[0]
    below = int(np.sum(r50[:, 2] < r50[:, 0]))
    within = int(np.sum(r50[:, 2] <= 2 * r500[:, 2]))
    detail = f"smart50<uncal {below}/5, smart50<=2*smart500 {within}/5; smart50 " + " ".join(
        f"{s:.4f}" for s in r50[:, 2]
    )
    verdict(8, below == 5 and within >= 4, detail, t0, 60)


def test_c09_metric_oracles():
    t0 = time.perf_counter()
    probs, labels = onehot_probs([(0.9, True), (0.9, False), (0.6, True), (0.6, True)])
    cases = [
        (M.ece(probs, labels, 10)[0], 0.4),
        (M.ece(probs, labels, 1)[0], 0.0),
        (M.adaece(probs, labels, 2), 0.4),
        (M.adaece(probs, labels, 1), M.ece(probs, labels, 1)[0]),
        (M.classwise_ece(np.full((4, 2), 0.5), [0, 0, 1, 1], 15), 0.0),
        (M.classwise_ece(np.tile([1.0, 0.0], (4, 1)), [0, 0, 0, 0], 15), 0.0),
        (M.classwise_ece(np.tile([1.0, 0.0], (4, 1)), [1, 1, 1, 1], 15), 1.0),
    ]
    worst = max(abs(a - b) for a, b in cases)
    gen = np.random.default_rng(9)
    spread = 0
    for _ in range(2000):
        n = int(gen.integers(1, 5000))
        b = int(gen.integers(1, min(n, 100) + 1))
        sizes = M.adaptive_bins(n, b)
        assert sizes.sum() == n
        spread = max(spread, int(sizes.max() - sizes.min()))
    verdict(9, worst <= 1e-12 and spread <= 1, f"max micro-case error {worst:.1e}; max bin-size spread {spread}", t0, 1)


def _pipeline(d):
    steps = [
        ["synth", "--n", "10000", "--k", "10", "--distortion", "logistic", "--seed", "7", "--out-dir", str(d)],
        ["split", "--data", str(d / "distorted.bin"), "--val-count", "500", "--seed", "7",
         "--out-val", str(d / "v.bin"), "--out-test", str(d / "t.bin")],
        ["calibrate", "--method", "smart", "--val", str(d / "v.bin"), "--out", str(d / "m.json"), "--seed", "7"],
        ["apply", "--model", str(d / "m.json"), "--logits", str(d / "t.bin"), "--out", str(d / "p.csv")],
        ["evaluate", "--probs", str(d / "p.csv"), "--out", str(d / "r.json"),
         "--reliability", str(d / "rel.csv"), "--gap-split", "50"],
    ]
    for argv in steps:
        assert cli.main(argv) == 0, argv
    names = ["m.json", "m.log.csv", "p.csv", "r.json", "rel.csv", "rel_lowgap.csv", "rel_highgap.csv"]
    return {n: (d / n).read_bytes() for n in names}


def test_c10_determinism(tmp_path):
    t0 = time.perf_counter()
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    first, second = _pipeline(a), _pipeline(b)
    differ = [n for n in first if first[n] != second[n]]
    verdict(10, not differ, f"{len(first)} artifacts compared, differing: {differ or 'none'}", t0, 60)
