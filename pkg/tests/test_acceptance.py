"""Acceptance criteria 1-8; each test prints one PASS/FAIL line.

Criteria 5-8 train the full-size model on the synthetic suite (about ten
minutes on one CPU core) and are marked ``slow``.
"""
import itertools
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from hypad import autodiff as ad
from hypad import evalkit, hypgeo, nets, optim, pipeline, scoring, series
from hypad._kernels import dtw
from hypad.autodiff import Tensor, grad_check
from hypad.config import RunConfig

R = hypgeo.DEFAULT.max_radius
SEEDS = (0, 1, 2, 3, 4)
SUITE = (("level_shift", 1600, 1629, 0.6), ("level_shift", 2900, 2929, -0.6), ("level_shift", 4200, 4229, 0.6))


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


# ------------------------------------------------------------------ 1


def test_criterion_1_geometry(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    n, d = 10_000, 5

    def ball(k, rmax=0.999):
        v = rng.normal(size=(k, d))
        return v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(0, rmax, size=(k, 1)) ** 0.5

    a, b, c = ball(n), ball(n), ball(n)
    dab, dba = hypgeo.poincare_distance(a, b), hypgeo.poincare_distance(b, a)
    dbc, dac = hypgeo.poincare_distance(b, c), hypgeo.poincare_distance(a, c)
    checks = {
        "nonnegative": np.all(dab >= 0),
        "identity": np.all(hypgeo.poincare_distance(a, a) < 1e-9) and np.all(dab[np.abs(a - b).max(1) > 1e-12] > 0),
        "symmetry": np.max(np.abs(dab - dba)) <= 1e-9,
        "triangle": np.all(dac <= dab + dbc + 1e-7),
    }
    v = rng.normal(size=(n, d))
    v *= rng.uniform(0, 3, size=(n, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
    checks["exp/log inverse"] = np.max(np.abs(hypgeo.log_map_0(hypgeo.exp_map_0(v)) - v)) <= 1e-7
    origin = hypgeo.poincare_distance(np.zeros_like(a), a)
    checks["origin identity"] = np.max(np.abs(origin - 2 * np.arctanh(np.linalg.norm(a, axis=1)))) <= 1e-9
    wild = rng.normal(size=(n, d)) * 10.0 ** rng.uniform(-3, 3, size=(n, 1))
    M = rng.normal(size=(d, d)) * 5
    outputs = [hypgeo.clamp_to_ball(wild), hypgeo.exp_map_0(wild), hypgeo.mobius_add(a, b),
               hypgeo.mobius_add(hypgeo.clamp_to_ball(wild), c), hypgeo.mobius_matvec(M, a)]
    head = nets.ModelBundle(nets.ModelConfig(window=10, ball_dim=d, head_scale=20.0), seed=0).head
    head.bias.data = hypgeo.clamp_to_ball(rng.normal(size=d) * 3)
    outputs.append(head(Tensor(rng.normal(size=(n, 10, 1)) * 5)).data)
    s = optim.AdamState(np.zeros((n, d)), np.zeros((n, d)))
    outputs.append(optim.riemannian_adam_step(a, wild, s, lr=1.0))
    checks["ball invariant"] = all(np.all(np.linalg.norm(o, axis=1) <= R) for o in outputs)
    u = hypgeo.uncertainty(hypgeo.clamp_to_ball(wild))
    m = hypgeo.DEFAULT.ball_margin
    checks["uncertainty range"] = np.all((u >= 2 * m - m * m - 1e-12) & (u <= 1))
    elapsed = time.perf_counter() - start
    failed = [k for k, ok in checks.items() if not ok]
    ok = not failed and elapsed < 10
    report(capsys, 1, ok, f"{len(checks)} properties x {n} fuzzed cases, failed={failed}, {elapsed:.2f}s (< 10s)")
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_2_gradients(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    cfg = nets.ModelConfig(window=6, latent_dim=3, ball_dim=3, encoder_hidden=2, decoder_hidden=2, critic_hidden=4,
                           head_scale=1.0)
    b = nets.ModelBundle(cfg, seed=0)
    b.head.bias.data = np.array([0.1, -0.05, 0.2])
    x = Tensor(np.tanh(rng.normal(size=(2, 6, 1))))
    y0 = np.tanh(rng.normal(size=(2, 6, 1)))
    prior = rng.normal(size=(2, 3))
    w = {k: rng.normal(size=s) for k, s in (("lat", (2, 3)), ("win", (2, 6, 1)), ("ball", (2, 3)))}

    def on_param(owner, attr, fn):
        orig = getattr(owner, attr)

        def f(p):
            setattr(owner, attr, p)
            try:
                return fn()
            finally:
                setattr(owner, attr, orig)

        return grad_check(f, orig.data)

    enc = lambda: ad.sum(ad.mul(b.encoder(x), w["lat"]))  # noqa: E731
    dec = lambda: ad.sum(ad.mul(b.decoder(Tensor(w["lat"])), w["win"]))  # noqa: E731
    layer_errors = {
        "Dense": on_param(b.encoder.out, "W", enc),
        "LSTM.Wx": on_param(b.encoder.rnn.fwd, "Wx", enc),
        "LSTM.U": on_param(b.encoder.rnn.bwd, "U", enc),
        "LSTM.b": on_param(b.decoder.rnn1.fwd, "b", dec),
        "BiLSTM-stack": on_param(b.decoder.rnn2.fwd, "U", dec),
        "decoder-dense": on_param(b.decoder.expand, "W", dec),
        "critic_x": on_param(b.critic_x.l1, "W", lambda: ad.sum(ad.square(b.critic_x(x)))),
        "critic_z": on_param(b.critic_z.l1, "W", lambda: ad.sum(ad.square(b.critic_z(Tensor(w["lat"]))))),
        "hyper-head.M": on_param(b.head, "M", lambda: ad.sum(ad.mul(b.head(x), w["ball"]))),
        "hyper-head.bias": on_param(b.head, "bias", lambda: ad.sum(ad.mul(b.head(x), w["ball"]))),
        "euclidean-cycle": grad_check(lambda y: nets.euclidean_cycle_loss(x, y), y0),
        "hyperbolic-cycle": grad_check(lambda y: nets.hyperbolic_cycle_loss(b.head(x), b.head(y)), y0),
    }

    def full_loss(mode):
        z = b.encoder(x)
        out = b.decoder(ad.concat([z, Tensor(prior)], axis=0))
        rec, gen = ad.slice_axis(out, 0, 2, axis=0), ad.slice_axis(out, 2, None, axis=0)
        adv = ad.sub(ad.neg(ad.mean(b.critic_x(gen))), ad.mean(b.critic_z(z)))
        cyc = nets.hyperbolic_cycle_loss(b.head(x), b.head(rec)) if mode == "h" else nets.euclidean_cycle_loss(x, rec)
        return ad.add(adv, ad.mul(10.0, cyc))

    composed = {f"{mode}:{name}": on_param(owner, attr, lambda m=mode: full_loss(m))
                for mode in ("e", "h")
                for name, owner, attr in (("enc.U", b.encoder.rnn.fwd, "U"), ("dec.Wx", b.decoder.rnn1.bwd, "Wx"),
                                          ("dec.out", b.decoder.out, "W"))}
    elapsed = time.perf_counter() - start
    worst_layer = max(layer_errors.values())
    worst_comp = max(composed.values())
    ok = worst_layer < 1e-4 and worst_comp < 1e-3 and elapsed < 60
    report(capsys, 2, ok, f"{len(layer_errors)} layer/loss checks max rel err {worst_layer:.1e} (< 1e-4); "
                          f"composed max {worst_comp:.1e} (< 1e-3); {elapsed:.1f}s (< 60s)")
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_3_riemannian_adam(capsys):
    rng = np.random.default_rng(3)
    p = hypgeo.clamp_to_ball(rng.normal(size=(20, 4)))
    s = optim.AdamState(np.zeros_like(p), np.zeros_like(p))
    inside = True
    for _ in range(10_000):
        p = optim.riemannian_adam_step(p, rng.normal(size=p.shape) * 10.0 ** rng.uniform(-3, 3), s, lr=0.3)
        inside &= bool(np.all(np.linalg.norm(p, axis=1) <= R))
    target = np.array([0.7, -0.2, 0.4, 0.1])
    opt = optim.RiemannianAdam([Tensor(np.array([-0.6, 0.5, -0.3, 0.2]), requires_grad=True)], lr=0.05)
    for step in range(500):
        opt.zero_grad()
        ad.backward(ad.square(ad.sum(hypgeo.poincare_distance(opt.params[0], Tensor(target)))))
        opt.step()
    dist = float(hypgeo.poincare_distance(opt.params[0].data, target))
    ok = inside and dist < 1e-3
    report(capsys, 3, ok, f"10^4 random steps inside radius {R}: {inside}; distance after 500 steps {dist:.2e} (< 1e-3)")
    assert ok


# ------------------------------------------------------------------ 4


def _points_oracle(pred, truth):
    P = [set(range(s, e + 1)) for s, e in pred]
    T = [set(range(s, e + 1)) for s, e in truth]
    tp = sum(any(t & p for p in P) for t in T)
    return tp, sum(not any(p & t for t in T) for p in P), len(T) - tp


def _paths_min(a, b):
    n, m = len(a), len(b)
    best = np.inf
    stack = [(0, 0, abs(a[0] - b[0]))]
    while stack:
        i, j, cost = stack.pop()
        if i == n - 1 and j == m - 1:
            best = min(best, cost)
            continue
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                stack.append((i + di, j + dj, cost + abs(a[i + di] - b[j + dj])))
    return best


def test_criterion_4_metric_oracles(capsys):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(200):
        layouts = []
        for _ in range(2):
            k = rng.integers(0, 8)
            cuts = np.sort(rng.choice(300, size=2 * k, replace=False))
            layouts.append([(int(cuts[2 * i]), int(cuts[2 * i + 1])) for i in range(k)])
        mismatches += evalkit.overlap_confusion(*layouts) != _points_oracle(*layouts)
    # every pair of sequences of length 1..6 over {0, 1}, plus length <= 3 over {0, 1, 3}; exact on integers
    seqs = [np.array(s, dtype=float) for n in range(1, 7) for s in itertools.product((0, 1), repeat=n)]
    seqs += [np.array(s, dtype=float) for n in range(1, 4) for s in itertools.product((0, 1, 3), repeat=n)
             if 3 in s]
    memo = {}
    dtw_bad = 0
    pairs = 0
    for a in seqs:
        for b in seqs:
            key = (a.tobytes(), b.tobytes())
            if key not in memo:
                memo[key] = _paths_min(a, b)
            pairs += 1
            dtw_bad += dtw(a, b) != memo[key]
    # real-valued pairs for every length combination up to 6 (summation order may differ, so 1e-12 absolute)
    for n, m in itertools.product(range(1, 7), repeat=2):
        for _ in range(10):
            a, b = rng.normal(size=n), rng.normal(size=m)
            pairs += 1
            dtw_bad += not np.isclose(dtw(a, b), _paths_min(a, b), rtol=0, atol=1e-12)
    ok = mismatches == 0 and dtw_bad == 0
    report(capsys, 4, ok, f"overlap: {mismatches}/200 mismatches; DTW: {dtw_bad}/{pairs} exhaustive pairs differ")
    assert ok


# ------------------------------------------------------------------ 5-8


def suite_frame(seed):
    spec = series.SynthSpec(length=5000, period=50, noise=0.05, seed=seed,
                            anomalies=tuple(series.Injection(*a) for a in SUITE))
    return series.synth_generate(spec)


def suite_config(mode, seed, **kw):
    return RunConfig(mode=mode, seed=seed, train_frac=0.2, **kw)


@pytest.fixture(scope="module")
def runs():
    out = {}
    for seed in SEEDS:
        frame = suite_frame(seed)
        for train_mode, modes in (("hyperbolic_uncertainty", ["hyperbolic", "hyperbolic_uncertainty"]),
                                  ("euclidean_pointwise", ["euclidean_pointwise", "euclidean_area",
                                                           "euclidean_dtw"])):
            t0 = time.perf_counter()
            result, test, traces, outputs = pipeline.run_experiment(suite_config(train_mode, seed), frame, modes)
            elapsed = time.perf_counter() - t0
            reports = {m: evalkit.EvalReport.from_intervals(traces[m].intervals, test.labels, m) for m in modes}
            out[(seed, train_mode)] = dict(result=result, traces=traces, outputs=outputs, reports=reports,
                                           elapsed=elapsed)
    return out


@pytest.mark.slow
def test_criterion_5_end_to_end(runs, capsys):
    rows = [runs[(s, "hyperbolic_uncertainty")] for s in SEEDS[:3]]
    f1 = [r["reports"]["hyperbolic_uncertainty"].f1 for r in rows]
    wall = sum(r["elapsed"] for r in rows)
    finite = all(np.isfinite(list(row.values())).all() for r in rows for row in r["result"].log)
    ok = np.mean(f1) >= 0.8 and wall <= 15 * 60 and finite and all(len(r["result"].log) == 30 for r in rows)
    report(capsys, 5, ok, f"hyperbolic_uncertainty F1 per seed {np.round(f1, 3).tolist()}, mean {np.mean(f1):.3f} "
                          f"(>= 0.8); 3 runs x 30 epochs in {wall:.0f}s (<= 900s)")
    assert ok


@pytest.mark.slow
def test_criterion_6_ablation(runs, capsys):
    hyp = [runs[(s, "hyperbolic_uncertainty")]["reports"] for s in SEEDS]
    euc = [runs[(s, "euclidean_pointwise")]["reports"] for s in SEEDS]
    p_eq4 = np.mean([r["hyperbolic_uncertainty"].precision for r in hyp])
    p_eq1 = np.mean([r["hyperbolic"].precision for r in hyp])
    f_hu = np.mean([r["hyperbolic_uncertainty"].f1 for r in hyp])
    f_e = np.mean([r["euclidean_pointwise"].f1 for r in euc])
    table = {m: np.mean([r[m].f1 for r in hyp]) for m in ("hyperbolic", "hyperbolic_uncertainty")}
    table.update({m: np.mean([r[m].f1 for r in euc]) for m in ("euclidean_pointwise", "euclidean_area",
                                                               "euclidean_dtw")})
    ok = p_eq4 >= p_eq1 and f_hu >= f_e - 0.05
    report(capsys, 6, ok, f"mean precision with certainty {p_eq4:.3f} vs without {p_eq1:.3f}; "
                          f"mean F1 hyperbolic+uncertainty {f_hu:.3f} vs euclidean {f_e:.3f} (-0.05 slack); "
                          f"mean F1 by mode { {k: round(float(v), 3) for k, v in table.items()} }")
    assert ok


@pytest.mark.slow
def test_criterion_7_uncertainty_trend(runs, capsys):
    rhos = []
    for s in SEEDS:
        o = runs[(s, "hyperbolic_uncertainty")]["outputs"]
        prof = scoring.uncertainty_profile(o.h, o.h_rec, bins=10)
        occ = np.flatnonzero(prof.occupied)
        rhos.append(spearmanr(occ, prof.mean_cosine[occ])[0] if len(occ) > 1 else np.nan)
    ok = bool(rhos[0] > 0)
    report(capsys, 7, ok, f"Spearman rho (bin index vs mean cosine distance) on the seed-0 run {rhos[0]:.3f} (> 0); "
                          f"all seeds {np.round(rhos, 3).tolist()}")
    assert ok


@pytest.mark.slow
def test_criterion_8_determinism(capsys, tmp_path):
    frame = suite_frame(0)
    blobs = []
    for _ in range(2):
        cfg = suite_config("hyperbolic_uncertainty", 0, epochs=3)
        result, test, traces, _ = pipeline.run_experiment(cfg, frame)
        scoring.write_trace_csv(traces[cfg.mode], tmp_path / "t.csv", cfg.digest())
        blobs.append((pipeline.log_text(result.log, cfg.digest()).encode(), (tmp_path / "t.csv").read_bytes()))
    ok = blobs[0] == blobs[1]
    report(capsys, 8, ok, f"training log identical: {blobs[0][0] == blobs[1][0]}; "
                          f"score trace identical: {blobs[0][1] == blobs[1][1]}")
    assert ok
