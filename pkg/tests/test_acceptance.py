"""Acceptance suite: one test per exit criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
print. Every tolerance is pinned here; nothing is deferred.
"""

import math
import time

import numpy as np

from alphamine import nn
from alphamine.backtest import BacktestConfig, run_backtest
from alphamine.combiner import (
    CombinerConfig,
    fit_predict_day,
    pool_size_sweep,
    run_combination,
    run_static_combination,
    select_factors_at,
)
from alphamine.evaluator import evaluate
from alphamine.expr import parse_text
from alphamine.metrics import (
    FitnessConfig,
    daily_ic_series,
    daily_rank_ic_series,
    factor_metrics,
    fitness_pi,
    psi,
)
from alphamine.miner import MinerConfig, run_mining, train_generator_epoch
from alphamine.panel import DateRange
from alphamine.rpn import (
    MaskAutomaton,
    Vocabulary,
    program_from_token_ids,
    rpn_decode,
    rpn_encode,
    sample_random,
    to_onehot,
)
from alphamine.synthetic import make_synthetic

from .conftest import build_random_panel
from .reference import (
    central_difference,
    daily_corr_reference,
    daily_rank_corr_reference,
    eval_reference,
    metrics_reference,
    psi_reference,
)
from .test_rpn import random_expr

VOCAB = Vocabulary.default()

MINE_SETTINGS = dict(
    library_size=300,
    epochs_per_round=50,
    predictor_epochs=10,
    batch_size=48,
    latent_dim=16,
    max_len=10,
    max_rounds=12,
    library_cap=3000,
    generator_hidden=(96,),
    predictor_hidden=(96, 24),
)


def report(number, ok, detail):
    print(f"\n[criterion {number:02d}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {number}: {detail}"


def test_criterion_01_dsl_soundness():
    start = time.time()
    rng = np.random.default_rng(10_001)
    decoded = 0
    for _ in range(10_000):
        prog = sample_random(VOCAB, 12, rng)
        rpn_decode(prog)
        decoded += 1
    round_trips = 0
    for _ in range(10_000):
        expr = random_expr(rng, VOCAB, 11)
        if rpn_decode(rpn_encode(expr, VOCAB, 12)) == expr:
            round_trips += 1
    elapsed = time.time() - start
    ok = decoded == 10_000 and round_trips == 10_000 and elapsed < 30.0
    report(1, ok, f"{decoded}/10000 samples decoded, {round_trips}/10000 AST "
                  f"round-trips, {elapsed:.1f}s (< 30s)")


def test_criterion_02_evaluator_oracle_equivalence():
    start = time.time()
    rng = np.random.default_rng(10_002)
    worst = 0.0
    mask_mismatches = 0
    for case in range(1_000):
        panel = build_random_panel(
            int(rng.integers(30, 81)),
            int(rng.integers(3, 11)),
            seed=int(rng.integers(1 << 30)),
            missing_frac=float(rng.uniform(0.0, 0.1)),
        )
        expr = rpn_decode(sample_random(VOCAB, 12, rng))
        got = evaluate(expr, panel)
        want = np.array(eval_reference(expr, panel))
        g_nan, w_nan = np.isnan(got), np.isnan(want)
        if not np.array_equal(g_nan, w_nan):
            mask_mismatches += 1
            continue
        if (~g_nan).any():
            worst = max(worst, float(np.abs(got[~g_nan] - want[~w_nan]).max()))
    elapsed = time.time() - start
    ok = mask_mismatches == 0 and worst <= 1e-9 and elapsed < 120.0
    report(2, ok, f"1000 pairs, max abs diff {worst:.2e} (<= 1e-9), "
                  f"{mask_mismatches} missing-mask mismatches, {elapsed:.1f}s (< 2min)")


def test_criterion_03_metrics_match_oracles():
    rng = np.random.default_rng(10_003)
    worst = 0.0
    for case in range(50):
        T, n = int(rng.integers(6, 15)), int(rng.integers(4, 9))
        v = rng.normal(0, 1, (T, n))
        l = rng.normal(0, 1, (T, n))
        v[rng.random((T, n)) < 0.1] = np.nan
        l[rng.random((T, n)) < 0.1] = np.nan
        daily = daily_ic_series(v, l)
        daily_want = np.array(daily_corr_reference(v.tolist(), l.tolist()))
        rank = daily_rank_ic_series(v, l)
        rank_want = np.array(daily_rank_corr_reference(v.tolist(), l.tolist()))
        m = factor_metrics(v, l)
        ic_w, ric_w, icir_w, ricir_w, _ = metrics_reference(v.tolist(), l.tolist())
        member = rng.normal(0, 1, (T, n))
        psi_got = psi(v, [member])
        psi_want = psi_reference(v.tolist(), [member.tolist()])
        for got, want in [
            *zip(daily, daily_want), *zip(rank, rank_want),
            (m.ic, ic_w), (m.rank_ic, ric_w), (m.icir, icir_w),
            (m.rank_icir, ricir_w), (psi_got, psi_want),
        ]:
            if math.isnan(want):
                assert math.isnan(got)
            else:
                worst = max(worst, abs(got - want))
    # fitness branch behavior: |IC|, duplicate-correlation zero, invalid zero
    panel = make_synthetic(10, 80, ["ts_mean(volume,5)"], [1.0], 0.0, seed=31)
    x = to_onehot(rpn_encode(parse_text("ts_mean(volume,5)"), VOCAB, 8), VOCAB)
    empty_zoo_val = fitness_pi(x, VOCAB, [], panel)
    member = evaluate(parse_text("ts_mean(volume,5)"), panel)
    dup_val = fitness_pi(x, VOCAB, [member], panel)
    bad = np.zeros((VOCAB.size, 8))
    bad[VOCAB.index[next(t for t in VOCAB.tokens if t.text == "Mul")], 0] = 1.0
    bad[VOCAB.end_id, 1:] = 1.0
    invalid_val = fitness_pi(bad, VOCAB, [], panel)
    branches_ok = (
        abs(empty_zoo_val - 1.0) < 1e-9 and dup_val == 0.0 and invalid_val == 0.0
    )
    ok = worst <= 1e-12 and branches_ok
    report(3, ok, f"50 oracle cases, worst diff {worst:.2e} (<= 1e-12); fitness "
                  f"branches empty-zoo={empty_zoo_val:.3f}, duplicate={dup_val}, "
                  f"invalid={invalid_val}")


def _margin_ok(net, x, h):
    act = np.asarray(x)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        act = act @ w.data + b.data
        if i < len(net.weights) - 1 and net.activation == "relu":
            if np.min(np.abs(act)) < 50 * h:
                return False
            act = np.maximum(act, 0.0)
        elif i < len(net.weights) - 1:
            act = np.tanh(act)
    return True


def _fd_agrees(loss_fn, params, rel=1e-4, abs_tol=1e-6, h=1e-4):
    loss = loss_fn()
    loss.backward()
    got = [p.grad.copy() for p in params]
    want = central_difference(lambda: float(loss_fn().data), [p.data for p in params], h)
    for g, w in zip(got, want):
        for a, b in zip(g.reshape(-1), w):
            err = abs(a - b)
            if err > abs_tol and err > rel * max(abs(a), abs(b)):
                return False
    return True


def test_criterion_04_gradient_checks():
    rng = np.random.default_rng(10_004)
    automaton = MaskAutomaton(VOCAB, 6)
    D, S = VOCAB.size, 6
    passed = 0
    configs = 0
    while configs < 20:
        kind = configs % 4
        if kind in (0, 1):  # dense relu / tanh stacks (1-2 hidden layers)
            activation = "relu" if kind == 0 else "tanh"
            sizes = [int(rng.integers(3, 7)) for _ in range(int(rng.integers(2, 4)))] + [1]
            net = nn.MLP(sizes, activation, rng)
            x = rng.normal(0, 1, (4, sizes[0]))
            if activation == "relu" and not _margin_ok(net, x, 1e-4):
                continue
            y = rng.normal(0, 1, (4, 1))
            loss_fn = lambda: nn.sqrt(nn.tmean(nn.square(nn.sub(net(x), y))))
            params = net.parameters()
        elif kind == 2:  # softmax + cosine similarity head
            a = nn.Tensor(rng.normal(0, 1, (3, 8)))
            b = nn.Tensor(rng.normal(0, 1, (3, 8)))
            loss_fn = lambda: nn.cosine_rows(nn.softmax(a, axis=1), nn.softmax(b, axis=1))
            params = [a, b]
        else:  # relaxed masked gumbel path, fixed noise and masking
            logits = nn.Tensor(rng.normal(0, 2, (2, S * D)))
            noise = nn.gumbel_noise(rng, (2, S, D))
            weights = rng.normal(0, 1, (2, S * D))
            loss_fn = lambda: nn.tmean(
                nn.mul(
                    nn.masked_gumbel_sequence(logits, automaton, 1.0, noise=noise)[0],
                    weights,
                )
            )
            params = [logits]
        configs += 1
        passed += _fd_agrees(loss_fn, params)
    ok = passed == 20
    report(4, ok, f"{passed}/20 random configurations agree with central "
                  f"differences (rel 1e-4 / abs 1e-6)")


def test_criterion_05_mask_validity_under_training():
    rng = np.random.default_rng(10_005)
    S = 12
    automaton = MaskAutomaton(VOCAB, S)
    D = VOCAB.size
    gen = nn.MLP([16, 64, S * D], "relu", rng)
    pred = nn.MLP([S * D, 32, 1], "relu", rng)
    adam = nn.Adam(gen.parameters())
    cfg = MinerConfig(batch_size=32, latent_dim=16, max_len=S, generator_hidden=(64,))
    for _ in range(40):  # partial training against an untrained surrogate
        train_generator_epoch(gen, pred, automaton, adam, cfg, rng)
    valid = 0
    for _ in range(20):
        z = rng.standard_normal((500, 16))
        _, _, ids = nn.masked_gumbel_sequence(gen(z), automaton, cfg.temperature, rng)
        for row in ids:
            program_from_token_ids(row, VOCAB, S)  # raises unless valid
            valid += 1
    ok = valid == 10_000
    report(5, ok, f"{valid}/10000 hard samples from the partially trained "
                  f"generator decode to valid programs")


def test_criterion_06_synthetic_mining_recovery():
    start = time.time()
    recovered = []
    for seed in (101, 202, 303):
        panel = make_synthetic(20, 500, ["ts_mean(volume,5)"], [1.0], 0.0, seed=1000 + seed)
        cfg = MinerConfig(
            target_factors=1, seed=seed,
            fitness=FitnessConfig(min_ic=0.99, min_icir=0.0), **MINE_SETTINGS,
        )
        zoo = run_mining(panel, None, cfg)
        recovered.append(len(zoo) == 1 and abs(zoo.entries[0].metrics.ic) >= 0.99)

    panel = make_synthetic(20, 500, ["ts_mean(volume,5)"], [1.0], 0.3, seed=7777)
    cfg = MinerConfig(
        target_factors=5, seed=55,
        fitness=FitnessConfig(min_ic=0.15, min_icir=0.1, corr_cap=0.7), **MINE_SETTINGS,
    )
    zoo = run_mining(panel, None, cfg)
    mean_ic = float(np.mean([abs(e.metrics.ic) for e in zoo.entries])) if len(zoo) else 0.0
    days = panel.day_mask(None)
    worst_psi = 0.0
    for e in zoo.entries:
        others = [o.values for o in zoo.entries if o is not e]
        worst_psi = max(worst_psi, psi(e.values, others, days))
    elapsed = time.time() - start
    ok = (
        all(recovered)
        and len(zoo) == 5
        and mean_ic >= 0.15
        and worst_psi < cfg.fitness.corr_cap
        and elapsed < 600.0
    )
    report(6, ok, f"noise-free recovery {sum(recovered)}/3 seeds with |IC| >= 0.99; "
                  f"noisy zoo of {len(zoo)} factors, mean |IC| {mean_ic:.3f} (>= 0.15), "
                  f"max pairwise psi {worst_psi:.3f} (< 0.7); {elapsed:.0f}s (< 600s)")


def test_criterion_07_combiner_recovery():
    cfg = CombinerConfig(max_factors=5, window=40, min_ic=0.01, min_icir=0.05,
                         ridge=1e-4, horizon=5, lag=1)
    ratios, ics = [], []
    for seed in range(10):
        panel = make_synthetic(
            20, 200, ["ts_mean(volume,5)", "ts_std(close,10)"], [0.7, 0.3], 0.1,
            seed=500 + seed,
        )
        from alphamine.zoo import FactorZoo

        zoo = FactorZoo.from_expressions(["ts_mean(volume,5)", "ts_std(close,10)"], panel)
        day = panel.dates[150]
        selection = select_factors_at(day, zoo, panel, cfg)
        _, snap = fit_predict_day(day, selection, zoo, panel, cfg)
        by_id = {e.factor_id: e.weight for e in snap.entries}
        if 1 in by_id and 2 in by_id:
            ratios.append(by_id[1] / by_id[2])
        test_range = DateRange(panel.dates[150], panel.dates[193])
        scores, _ = run_combination(zoo, panel, test_range, cfg)
        daily = daily_ic_series(scores, panel.label)[panel.day_mask(test_range)]
        ics.append(float(np.nanmean(daily)))
    median_ratio = float(np.median(ratios))
    target = 0.7 / 0.3
    ok = (
        len(ratios) == 10
        and abs(median_ratio - target) <= 0.2 * target
        and all(ic >= 0.5 for ic in ics)
    )
    report(7, ok, f"median recovered weight ratio {median_ratio:.3f} vs 7/3 "
                  f"(within 20%); out-of-window mean daily IC min "
                  f"{min(ics):.3f} (>= 0.5) over 10 seeds")


def test_criterion_08_dynamic_beats_static_on_regime_switch():
    cfg = CombinerConfig(max_factors=3, window=40, min_ic=0.01, min_icir=0.05,
                         ridge=1e-4, horizon=5, lag=1)
    wins = 0
    for seed in range(10):
        panel = make_synthetic(15, 260, ["ts_mean(volume,5)"], [1.0], 0.3, seed=900 + seed)
        label = panel.label.copy()
        flip_at = 205  # halfway through the test range
        label[flip_at:] = -label[flip_at:]
        flipped = panel.with_label(label)
        from alphamine.zoo import FactorZoo

        zoo = FactorZoo.from_expressions(
            ["ts_mean(volume,5)"], flipped,
            train_range=DateRange(panel.dates[0], panel.dates[150]),
        )
        test_range = DateRange(panel.dates[160], panel.dates[250])
        days = flipped.day_mask(test_range)
        dyn_scores, _ = run_combination(zoo, flipped, test_range, cfg)
        sta_scores, _ = run_static_combination(zoo, flipped, test_range, cfg)
        dyn_ic = float(np.nanmean(daily_ic_series(dyn_scores, flipped.label)[days]))
        sta_ic = float(np.nanmean(daily_ic_series(sta_scores, flipped.label)[days]))
        wins += dyn_ic > sta_ic
    ok = wins >= 9
    report(8, ok, f"dynamic combination beat fixed weights on {wins}/10 "
                  f"regime-switch seeds (need >= 9)")


def test_criterion_09_pool_size_sweep():
    panel = make_synthetic(
        20, 200,
        ["ts_mean(volume,5)", "ts_std(close,10)", "ts_max(high,10)"],
        [0.5, 0.3, 0.2], 0.3, seed=42,
    )
    from alphamine.zoo import FactorZoo

    texts = [
        "ts_mean(volume,5)", "ts_std(close,10)", "ts_max(high,10)",
        "ts_sum(volume,10)", "ts_min(low,20)", "Ref(close,5)",
        "ts_delta(vwap,5)", "ts_corr(close,volume,10)", "ts_cov(high,volume,20)",
        "S_log1p(ts_mean(volume,20))", "ts_mad(close,10)", "Abs(ts_delta(volume,1))",
    ]
    zoo = FactorZoo.from_expressions(texts, panel)
    cfg = CombinerConfig(max_factors=10, window=40, min_ic=0.0, min_icir=0.0,
                         ridge=1e-4, horizon=5, lag=1)
    out = pool_size_sweep(zoo, panel, DateRange(panel.dates[150], panel.dates[190]),
                          cfg, sizes=(1, 10, 20, 50, 100))
    ok = [n for n, _ in out] == [1, 10, 20, 50, 100] and all(
        np.isfinite(ic) for _, ic in out
    )
    detail = ", ".join(f"N={n}: IC={ic:.3f}" for n, ic in out)
    report(9, ok, f"pool-size sweep complete ({detail}); no monotonicity asserted")


def test_criterion_10_backtest_protocol():
    # invariants on a 500-day synthetic run
    panel = make_synthetic(30, 500, [], [], 0.0, seed=77)
    rng = np.random.default_rng(10_010)
    scores = rng.normal(0, 1, (500, 30))
    cfg = BacktestConfig(top_k=10, max_changes=3)
    result = run_backtest(scores, panel, cfg)
    cap_ok = bool((result.turnover[1:] <= cfg.max_changes).all())
    card_ok = all(len(h) <= cfg.top_k for h in result.holdings)

    # hand-simulated 6-stock oracle case
    from .test_backtest import price_panel

    hand = np.full((7, 6), np.nan)
    hand[0] = [9, 8, 3, 2, 1, 0]
    hand[1] = [9, 1, 10, 2, 3, 0]
    hand[2:] = [1, 0.5, 2, 10, 9, 0]
    flat = price_panel(np.full((7, 6), 10.0))
    res = run_backtest(hand, flat, BacktestConfig(top_k=2, max_changes=1))
    S = [f"S{i:03d}" for i in range(6)]
    hand_ok = (
        res.holdings[0] == (S[0], S[1])
        and res.holdings[1] == (S[0], S[2])
        and res.holdings[2] == (S[2], S[3])
        and res.holdings[3] == (S[3], S[4])
        and res.holdings[4] == (S[3], S[4])
        and res.turnover.tolist() == [0, 1, 1, 1, 0, 0, 0]
    )

    monotone = run_backtest(np.tanh(scores) * 2.0 + 5.0, panel, cfg)
    mono_ok = monotone.holdings == result.holdings and np.array_equal(
        monotone.daily_return, result.daily_return
    )
    ok = cap_ok and card_ok and hand_ok and mono_ok
    report(10, ok, f"500-day invariants (cap={cap_ok}, cardinality={card_ok}), "
                   f"hand-simulated oracle={hand_ok}, monotone invariance={mono_ok}")


def test_criterion_11_pipeline_determinism(tmp_path):
    from alphamine.cli import main

    from .test_cli import strip_stamps, write_config

    cfg_path = write_config(tmp_path)
    artifacts = ("panel.csv", "out/zoo.json", "out/predictions.csv",
                 "out/snapshots.jsonl", "out/backtest.csv")

    def run_all():
        for command in ("gen-synth", "mine", "combine", "backtest"):
            assert main([command, "--config", str(cfg_path)]) == 0, command
        return {name: strip_stamps((tmp_path / name).read_text()) for name in artifacts}

    first = run_all()
    second = run_all()
    same = [name for name in artifacts if first[name] == second[name]]
    ok = len(same) == len(artifacts)
    report(11, ok, f"{len(same)}/{len(artifacts)} artifacts byte-identical across "
                   f"two runs (timestamp metadata lines excluded)")
