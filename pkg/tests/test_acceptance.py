"""End-to-end acceptance checks.

Each test records a one-line verdict that the terminal summary prints as
``PASS/FAIL criterion N: ...``.  The desk-scale runs share one cache so a
configuration that appears in several checks trains once.  The whole module
takes roughly half an hour on a single core.
"""

import json
import math
import time
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from ram.dataset import AugmentConfig
from ram.glimpse import GlimpseConfig, Location, retina, retina_batch
from ram.model import (
    ModelDims,
    RamParams,
    forward,
    gaussian_score,
    glimpse_network,
    glimpse_network_backward,
    init_params,
)
from ram.nncore import (
    Param,
    affine_backward,
    affine_forward,
    load_params,
    relu_backward,
    relu_forward,
    rnn_cell,
    rnn_cell_backward,
    rnn_params,
    save_params,
    softmax_ce,
    softmax_ce_backward,
    tanh_backward,
    tanh_forward,
)
from ram.report import FileSink, plot_accuracy_vs_time, read_metrics
from ram.sweep import SweepSpec, compare, expand, linear_r2, run_sweep
from ram.training import HyperParams, RunConfig, episode_loss_and_grads, prepare_data, train

from .conftest import ACCEPTANCE, MNIST_DIR, central_difference, rel_error
from .test_glimpse import dyadic_image, oracle_retina
from .test_training import surrogate_objective

pytestmark = pytest.mark.slow

DESK = RunConfig(
    hyper=HyperParams(num_glimpses=4, num_scales=3, bandwidth=8, loc_std=0.22, batch_size=128,
                      epochs=25, optimizer="adam", learning_rate=1e-3, decay=0.97),
    augment=AugmentConfig(canvas_size=60),
    data_dir=MNIST_DIR, n_train=5000, n_test=1000, eval_every=0, eval_subset=1000,
)
SEEDS = (0, 1, 2)

_CACHE = {}


def verdict(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="module")
def desk_data():
    data = prepare_data(DESK)
    assert data.train_digits.shape == (5000, 28, 28) and data.test_images.shape == (1000, 60, 60)
    return data


def desk_runs(data, parameter, values, seeds=(0,), epochs=None, base=DESK):
    """Run (or fetch) one sweep result per value x seed, in that order."""
    out = []
    for v in values:
        for s in seeds:
            spec = SweepSpec(parameter, [v], [s], epochs)
            cfg = expand(spec, base)[0].config
            key = json.dumps(replace(cfg, run_id="").to_dict(), sort_keys=True)
            if key not in _CACHE:
                _CACHE[key] = run_sweep(spec, base, data)[0]
            out.append(_CACHE[key])
    return out


def timing_sweep(data, parameter, values, epochs=2):
    """Time the grid twice, forward then reversed, so slow drift in machine
    speed cancels out of the per-value averages that ``compare`` takes."""
    forward_pass = run_sweep(SweepSpec(parameter, values, epochs_override=epochs), DESK, data)
    backward_pass = run_sweep(SweepSpec(parameter, values[::-1], epochs_override=epochs), DESK, data)
    return forward_pass + backward_pass


def _mean_acc(results):
    return float(np.mean([r.final_accuracy for r in results]))


# -- 1 ------------------------------------------------------------------------

def test_criterion_01_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    errs = {}

    W, b = Param("W", rng.normal(size=(6, 5))), Param("b", rng.normal(size=6))
    x, up = rng.normal(size=(3, 5)), rng.normal(size=(3, 6))
    _, cache = affine_forward(x, W, b)
    dx = affine_backward(up, cache)
    f = lambda: float(np.sum(affine_forward(x, W, b)[0] * up))
    errs["affine"] = max(rel_error(dx, central_difference(f, x)), rel_error(W.grad, central_difference(f, W.value)),
                         rel_error(b.grad, central_difference(f, b.value)))

    for name, fwd, bwd in (("relu", relu_forward, relu_backward), ("tanh", tanh_forward, tanh_backward)):
        z = rng.normal(size=12)
        z[np.abs(z) < 1e-3] = 0.5
        u = rng.normal(size=12)
        errs[name] = rel_error(bwd(u, fwd(z)[1]), central_difference(lambda: float(np.sum(fwd(z)[0] * u)), z))

    logits = rng.normal(size=10)
    _, probs = softmax_ce(logits, 3)
    errs["softmax_ce"] = rel_error(softmax_ce_backward(probs, 3),
                                   central_difference(lambda: float(softmax_ce(logits, 3)[0]), logits))

    core = rnn_params(4, 3, rng)
    g, h0, uh = rng.normal(size=(2, 4)), rng.uniform(0.1, 1, size=(2, 3)), rng.normal(size=(2, 3))
    _, hc = rnn_cell(g, h0, core)
    dg, dh0 = rnn_cell_backward(uh, hc)
    f = lambda: float(np.sum(rnn_cell(g, h0, core)[0] * uh))
    errs["rnn_cell"] = max([rel_error(dg, central_difference(f, g)), rel_error(dh0, central_difference(f, h0))]
                           + [rel_error(p.grad, central_difference(f, p.value)) for p in core.values()])

    tiny = ModelDims(image_hidden=4, loc_hidden=4, g_dim=5, hidden=3)
    params = init_params(GlimpseConfig(2, 1, 2), tiny, rng)
    for p in params.values():
        p.value += rng.normal(0, 0.3, p.shape)
    obs, loc, ug = rng.uniform(size=(3, 4)), rng.uniform(-1, 1, (3, 2)), rng.normal(size=(3, 5))
    glimpse_network_backward(ug, glimpse_network(obs, loc, params)[1])
    f = lambda: float(np.sum(glimpse_network(obs, loc, params)[0] * ug))
    errs["glimpse_net"] = max(rel_error(params[k].grad, central_difference(f, params[k].value))
                              for k in params.tensors if k.startswith("glimpse."))

    # full unrolled episode: canvas 12, B=2, S=1, G=2, hidden 3
    params.zero_grad()
    images, labels = rng.uniform(0, 1, (3, 12, 12)), rng.integers(0, 10, 3)
    ref = forward(images, labels, params, 0.22, np.random.default_rng(5))
    episode_loss_and_grads(ref, params)
    f = lambda: surrogate_objective(params, images, labels, ref)
    errs["episode"] = max(rel_error(p.grad, central_difference(f, p.value)) for p in params.values())

    secs = time.perf_counter() - start
    worst = max(errs, key=errs.get)
    verdict(1, errs[worst] < 1e-4 and secs < 60,
            f"max relative error {errs[worst]:.2e} ({worst}) over {len(errs)} checks in {secs:.1f}s")


# -- 2 ------------------------------------------------------------------------

def test_criterion_02_sensor_oracle():
    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(1000):
        h, w = rng.integers(4, 48, size=2)
        img = dyadic_image(rng, h, w)
        b, s = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        x, y = rng.uniform(-1, 1, 2)
        cfg = GlimpseConfig(1, s, b)
        expect = oracle_retina(img, x, y, b, s)
        single = retina(img, Location(x, y), cfg).flat
        batch = retina_batch(img[None], np.array([[x, y]]), cfg)[0]
        assert single.size == batch.size == b * b * s == cfg.sensor_size()
        mismatches += not (np.array_equal(single, expect) and np.array_equal(batch, expect))
    verdict(2, mismatches == 0, f"{1000 - mismatches}/1000 cases bit-identical to the brute-force oracle")


# -- 3 ------------------------------------------------------------------------

def test_criterion_03_reinforce_unbiased():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    sigma = 0.22
    parts, ok = [], True
    for mu in (-0.5, 0.0, 0.7):
        loc = rng.normal(mu, sigma, 100_000)
        est = -(loc ** 2) * gaussian_score(loc, mu, sigma)
        se = est.std(ddof=1) / math.sqrt(est.size)
        z = (est.mean() + 2 * mu) / se
        ok &= abs(z) < 3
        parts.append(f"mu={mu}: {est.mean():+.4f} vs {-2 * mu:+.4f} ({z:+.2f} SE)")
    secs = time.perf_counter() - start
    verdict(3, ok and secs < 60, "; ".join(parts))


# -- 4 ------------------------------------------------------------------------

def test_criterion_04_desk_learning(desk_data):
    start = time.perf_counter()
    results = desk_runs(desk_data, "loc_std", [0.22], SEEDS)
    accs = [r.final_accuracy for r in results]
    assert all(r.status == "completed" for r in results)
    verdict(4, np.mean(accs) >= 0.60,
            f"mean test accuracy {np.mean(accs):.4f} over seeds {list(SEEDS)} "
            f"({', '.join(f'{a:.3f}' for a in accs)}); {time.perf_counter() - start:.0f}s")


# -- 5 ------------------------------------------------------------------------

def test_criterion_05_glimpse_time_linear(desk_data):
    values = [2, 4, 8, 16]
    results = timing_sweep(desk_data, "num_glimpses", values)
    report = compare(results)
    times = [row.train_seconds_per_epoch for row in report.rows]
    r2 = report.time_r2
    assert r2 == pytest.approx(linear_r2(values, times))
    verdict(5, r2 is not None and r2 >= 0.95,
            f"R^2 = {r2:.4f}; s/epoch " + ", ".join(f"G={g}: {t:.2f}" for g, t in zip(values, times)))


# -- 6 ------------------------------------------------------------------------

def test_criterion_06_scales_time_increasing(desk_data):
    values = [2, 4, 6, 8]
    report = compare(timing_sweep(desk_data, "num_scales", values))
    times = [row.train_seconds_per_epoch for row in report.rows]
    verdict(6, report.time_increasing,
            "s/epoch " + ", ".join(f"S={s}: {t:.2f}" for s, t in zip(values, times)))


# -- 7 ------------------------------------------------------------------------

def test_criterion_07_std_inverted_u(desk_data):
    grid = [0.10, 0.22, 0.4, 0.6, 1.2]
    results = desk_runs(desk_data, "loc_std", grid, SEEDS)
    mean = {s: _mean_acc([r for r in results if r.config.hyper.loc_std == s]) for s in grid}
    middle = min(mean[0.4], mean[0.6])
    ok = middle > mean[0.10] and middle > mean[1.2]
    verdict(7, ok, "mean accuracy " + ", ".join(f"std {s}: {a:.3f}" for s, a in mean.items())
            + "; need min(0.4, 0.6) > both 0.10 and 1.2")


# -- 8 ------------------------------------------------------------------------

def test_criterion_08_optimizer_parity(desk_data):
    values = ["adagrad@0.2", "adam@1e-3", "adadelta@5.0", "rmsprop@9e-4"]
    results = desk_runs(desk_data, "optimizer", values)
    accs = {v: r.final_accuracy for v, r in zip(values, results)}
    statuses = {r.status for r in results}
    finite = all(math.isfinite(a) for a in accs.values())
    spread = max(accs.values()) - min(accs.values()) if finite else float("nan")
    verdict(8, statuses == {"completed"} and finite and spread <= 0.10,
            ", ".join(f"{v}: {a:.3f}" for v, a in accs.items()) + f"; spread {spread * 100:.1f} points")


# -- 9 ------------------------------------------------------------------------

def _jitter(records):
    acc = np.array([r.eval_accuracy for r in records])
    return float(np.var(np.diff(acc)))


def test_criterion_09_batch_size(desk_data):
    # evaluate after every 1280 training samples at both batch sizes, so the
    # eval points sit at the same positions in the data stream
    out = {}
    for bs in (32, 256):
        cfg = replace(DESK, hyper=replace(DESK.hyper, batch_size=bs, epochs=5), eval_every=1280 // bs,
                      run_id=f"batch={bs}")
        res = train(cfg, desk_data)
        out[bs] = (float(np.mean(res.epoch_train_seconds)), _jitter(res.records), len(res.records))
    faster = out[256][0] < out[32][0]
    noisier = out[32][1] > out[256][1]
    verdict(9, faster and noisier,
            f"s/epoch 32: {out[32][0]:.2f}, 256: {out[256][0]:.2f}; variance of eval-to-eval accuracy "
            f"change 32: {out[32][1]:.2e} ({out[32][2]} points), 256: {out[256][1]:.2e} ({out[256][2]} points)")


# -- 10 -----------------------------------------------------------------------

def _strip(records):
    return [(r.run_id, r.epoch, r.step, r.train_loss, r.eval_accuracy, r.lr) for r in records]


def test_criterion_10_determinism(desk_data, tmp_path):
    cfg = replace(DESK, hyper=replace(DESK.hyper, epochs=2), eval_every=10, eval_subset=200)
    streams = []
    for i in range(2):
        with FileSink(tmp_path / f"m{i}.csv") as sink:
            train(cfg, desk_data, sink)
        streams.append(_strip(read_metrics(tmp_path / f"m{i}.csv")))
    same_stream = streams[0] == streams[1] and len(streams[0]) > 0

    spec = SweepSpec("num_glimpses", [1, 2, 3], epochs_override=1)
    small = replace(DESK, eval_every=5, eval_subset=100)
    serial = run_sweep(spec, small, desk_data, parallelism=1)
    parallel = run_sweep(spec, small, desk_data, parallelism=3)
    same_sweep = all(_strip(a.records) == _strip(b.records) and a.final_accuracy == b.final_accuracy
                     for a, b in zip(serial, parallel))
    verdict(10, same_stream and same_sweep,
            f"repeat run identical: {same_stream} ({len(streams[0])} records); "
            f"sweep parallelism 1 vs 3 identical: {same_sweep}")


# -- 11 -----------------------------------------------------------------------

def test_criterion_11_roundtrips(desk_data, tmp_path):
    results = desk_runs(desk_data, "loc_std", [0.22], SEEDS)
    cfg = replace(DESK, hyper=replace(DESK.hyper, epochs=1), eval_every=8, eval_subset=200)
    with FileSink(tmp_path / "m.csv") as sink:
        res = train(cfg, desk_data, sink)

    save_params(tmp_path / "c.npz", res.params.tensors, res.params.meta())
    tensors, meta = load_params(tmp_path / "c.npz")
    restored = RamParams.from_meta(meta, tensors)
    ckpt = all(np.array_equal(restored[k].value, p.value) and restored[k].value.dtype == p.value.dtype
               for k, p in res.params.tensors.items()) and set(restored.tensors) == set(res.params.tensors)

    csv_ok = read_metrics(tmp_path / "m.csv") == res.records
    jsonl_ok = read_metrics(tmp_path / "m.jsonl") == res.records

    streams = [(f"seed {r.config.seed}", r.records) for r in results] + [("short run", res.records)]
    plot_accuracy_vs_time(streams, tmp_path / "a.svg")
    try:
        root = ET.parse(tmp_path / "a.svg").getroot()
        svg_ok = root.tag.endswith("svg") and len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 4
    except ET.ParseError:
        svg_ok = False
    verdict(11, ckpt and csv_ok and jsonl_ok and svg_ok,
            f"checkpoint exact: {ckpt}; CSV lossless: {csv_ok}; JSONL lossless: {jsonl_ok}; "
            f"SVG well-formed: {svg_ok}")
