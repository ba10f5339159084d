"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see lines as
they are produced); the lines are also collected in a terminal summary
section. The directional ablation trains 15 detectors and takes roughly
half an hour on one CPU core.
"""

import time

import numpy as np

from frsnano import ops
from frsnano.ablation import run_ablation
from frsnano.data import SynthSceneSpec, split_dataset, synth_dataset
from frsnano.detector import Dataset, FrsNano, FrsNanoConfig, TrainConfig, Upsampler, evaluate_model, fit
from frsnano.dysample import DysampleParams, Mode, bilinear_upsample, dysample_forward, pixel_shuffle, pixel_unshuffle
from frsnano.mcea import TripleSqueezeParams, triple_squeeze
from frsnano.boxes import Detection
from frsnano.metrics import evaluate
from frsnano.tensor import Tensor
from frsnano.verify import run_gradcheck_suite, run_oracle_suite

INSTANCES = 50

# heavy small-object and occlusion scenes for the ablation
HEAVY = SynthSceneSpec(size=96, n_small=3, n_occluded=2, n_regular=1, n_smoke=2)
ABLATION_SEEDS = (0, 1, 2, 3, 4)
ABLATION_VARIANTS = ("baseline", "+MCEA", "+MCEA+DySample")
ABLATION_TRAIN = TrainConfig(epochs=20, batch_size=16, lr0=0.01, lrf=0.01)


def _half_pixel_x2(x):
    """Independent x2 bilinear reference via its 0.75/0.25 separable stencil."""

    def along(a, axis):
        a = np.moveaxis(a, axis, -1)
        prev = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
        nxt = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
        out = np.empty(a.shape[:-1] + (2 * a.shape[-1],))
        out[..., 0::2] = 0.75 * a + 0.25 * prev
        out[..., 1::2] = 0.75 * a + 0.25 * nxt
        return np.moveaxis(out, -1, axis)

    return along(along(x, -1), -2)


def test_gradient_suite(acceptance):
    start = time.perf_counter()
    reports = run_gradcheck_suite(instances=INSTANCES, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(reports, key=lambda r: r.max_rel_error)
    failed = [r.op for r in reports if not r.passed]
    ok = not failed and elapsed < 120 and all(r.instances >= INSTANCES for r in reports)
    acceptance(
        "gradient suite",
        ok,
        f"{len(reports)} ops x {INSTANCES} instances, worst {worst.op} rel err {worst.max_rel_error:.2e} "
        f"(tol 1e-4), failed {failed}, {elapsed:.1f}s (limit 120s)",
    )


def test_oracle_equivalence(acceptance):
    reports = run_oracle_suite(instances=INSTANCES, seed=0)
    detail = ", ".join(f"{r.op.split(':')[1]} {r.max_abs_error:.1e}" for r in reports)
    acceptance("oracle equivalence", all(r.passed for r in reports), f"{detail} over {INSTANCES} instances each")


def test_triple_squeeze_algebra(acceptance):
    rng = np.random.default_rng(0)
    worst_equal = 0.0
    for _ in range(INSTANCES):
        w = float(rng.uniform(0.01, 0.99))
        x = rng.normal(size=tuple(int(v) for v in rng.integers(1, 6, size=3))) * rng.uniform(0.1, 5)
        out = triple_squeeze(Tensor(x), TripleSqueezeParams.from_weights(w, w, w)).data.reshape(-1)
        ref = (1 / 3 + w) * (x.mean(axis=(1, 2)) + x.std(axis=(1, 2)) + x.max(axis=(1, 2)))
        worst_equal = max(worst_equal, float(np.max(np.abs(out - ref))))
    worst_const, std_exact = 0.0, True
    for _ in range(INSTANCES):
        c = float(rng.normal() * 3)
        a, b, g = (float(v) for v in rng.uniform(0.01, 0.99, size=3))
        x = np.full(tuple(int(v) for v in rng.integers(1, 6, size=3)), c)
        std_exact &= bool(np.all(ops.reduce_std_tail2(Tensor(x)).data == 0.0))
        out = triple_squeeze(Tensor(x), TripleSqueezeParams.from_weights(a, b, g)).data
        worst_const = max(worst_const, float(np.max(np.abs(out - (2 * c / 3 + (a + g) * c)))))
    ok = worst_equal <= 1e-12 and worst_const <= 1e-12 and std_exact
    acceptance(
        "triple squeeze algebra",
        ok,
        f"equal-weight identity err {worst_equal:.1e}, constant-input err {worst_const:.1e}, "
        f"std term exactly zero: {std_exact}",
    )


def test_dysample_reduction(acceptance):
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(INSTANCES):
        g = int(rng.choice([1, 2, 4]))
        C = g * int(rng.integers(1, 4))
        shape = (C,) + tuple(int(v) for v in rng.integers(1, 9, size=2))
        if i % 2:
            shape = (int(rng.integers(1, 3)),) + shape
        x = rng.normal(size=shape)
        mode = Mode.STATIC if i % 4 < 2 else Mode.DYNAMIC
        out = dysample_forward(Tensor(x), DysampleParams(C, mode, 2, g)).data
        worst = max(worst, float(np.max(np.abs(out - _half_pixel_x2(x)))))
        worst = max(worst, float(np.max(np.abs(bilinear_upsample(Tensor(x), 2).data - _half_pixel_x2(x)))))
    shuffle_exact = True
    for _ in range(INSTANCES):
        s = int(rng.integers(1, 4))
        H, W = (int(v) for v in rng.integers(1, 6, size=2))
        a = rng.normal(size=(int(rng.integers(1, 3)) * s * s, H, W))
        b = rng.normal(size=(int(rng.integers(1, 3)), H * s, W * s))
        shuffle_exact &= np.array_equal(pixel_unshuffle(pixel_shuffle(Tensor(a), s), s).data, a)
        shuffle_exact &= np.array_equal(pixel_shuffle(pixel_unshuffle(Tensor(b), s), s).data, b)
    acceptance(
        "dysample reduction",
        worst <= 1e-12 and shuffle_exact,
        f"zero-init vs x2 bilinear max err {worst:.1e} (tol 1e-12), shuffle round-trip bit-exact: {shuffle_exact}",
    )


def test_constraint_invariant(acceptance):
    images, labels, ids = synth_dataset(160, SynthSceneSpec(), seed=21)
    model = FrsNano(FrsNanoConfig(use_mcea=True, upsampler=Upsampler.DYSAMPLE), seed=0)
    steps_per_epoch = -(-160 // 16)
    cfg = TrainConfig(epochs=-(-500 // steps_per_epoch), batch_size=16, seed=0)
    logs = fit(model, Dataset(images, labels, ids), cfg, max_steps=500)
    steps = min(500, len(logs) * steps_per_epoch)
    weights = [
        w for p in model.mcea.values() for bp in p.branches.values() for w in bp.squeeze.weights()
    ]
    ok = steps == 500 and all(0.0 < w < 1.0 for w in weights) and all(np.isfinite(l.loss) for l in logs)
    acceptance(
        "alpha/beta/gamma stay in (0,1)",
        ok,
        f"{steps} steps, {len(weights)} weights in [{min(weights):.6f}, {max(weights):.6f}]",
    )


def test_metric_sanity(acceptance):
    # nested boxes: IoU is exactly 0.6 for the first, 0.62 for the second
    r = evaluate({"a": [Detection(0, 0.9, (0.5, 0.3, 1.0, 0.6))]}, {"a": [(0, (0.5, 0.5, 1.0, 1.0))]}, 1)
    r2 = evaluate({"a": [Detection(0, 0.9, (0.5, 0.5, 0.4, 0.248))]}, {"a": [(0, (0.5, 0.5, 0.4, 0.4))]}, 1)
    single_ok = all(x.map50 == 1.0 and abs(x.map50_95 - 0.3) <= 1e-12 for x in (r, r2))

    rng = np.random.default_rng(2)
    gts = {f"i{k}": [(int(rng.integers(8)), (*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.3, 2)))
                     for _ in range(3)] for k in range(10)}
    perfect = evaluate({k: [Detection(c, 1.0, b) for c, b in v] for k, v in gts.items()}, gts, 8)
    perfect_ok = (perfect.map50, perfect.map50_95, perfect.precision, perfect.recall) == (1.0, 1.0, 1.0, 1.0)

    monotone = True
    for _ in range(100):
        g = [(int(rng.integers(3)), tuple(float(v) for v in (*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.3, 2))))
             for _ in range(int(rng.integers(1, 5)))]
        p = []
        for c, b in g:
            jit = np.clip(np.array(b) + rng.normal(scale=0.03, size=4), [0, 0, 0.01, 0.01], 1)
            p.append(Detection(c, float(rng.uniform(0.01, 1)), tuple(float(v) for v in jit)))
        p.append(Detection(int(rng.integers(3)), float(rng.uniform(0.01, 1)), (0.5, 0.5, 0.2, 0.2)))
        for row in evaluate({"x": p}, {"x": g}, 3).ap.values():
            monotone &= all(a >= b for a, b in zip(row, row[1:]))
    acceptance(
        "metric sanity",
        single_ok and perfect_ok and monotone,
        f"IoU-0.60 case mAP50={r.map50} mAP50-95={r.map50_95!r}; perfect all-ones: {perfect_ok}; "
        f"AP@t non-increasing on 100 instances: {monotone}",
    )


def test_directional_ablation(acceptance):
    start = time.perf_counter()
    train = Dataset(*synth_dataset(600, HEAVY, seed=1))
    val = Dataset(*synth_dataset(100, HEAVY, seed=2))
    table = run_ablation(
        FrsNanoConfig(), ABLATION_TRAIN, train, val, ABLATION_SEEDS, ABLATION_VARIANTS,
        on_run=lambda v, s, r: print(f"  {v} seed={s} mAP50={r.map50:.5f} mAP50-95={r.map50_95:.5f}", flush=True),
    )
    elapsed = time.perf_counter() - start
    print(table.to_text())
    ok, parts = elapsed < 3600, [f"median mAP50 baseline {table.median('baseline', 'map50'):.5f}"]
    for v in ABLATION_VARIANTS[1:]:
        # both the gap between medians and the median of paired differences
        gap, paired = table.delta(v), float(np.median(table.paired_deltas(v)))
        ok &= gap >= 0 and paired >= 0
        parts.append(f"{v} {table.median(v, 'map50'):.5f} (gap {gap:+.5f}, paired median {paired:+.5f})")
    acceptance(
        "directional ablation",
        ok,
        ", ".join(parts) + f"; {len(ABLATION_SEEDS)} seeds, 600/100 images, {elapsed / 60:.1f} min (limit 60)",
    )


def test_determinism(acceptance):
    spec = SynthSceneSpec(n_small=2, n_occluded=1)
    train = Dataset(*synth_dataset(48, spec, seed=5))
    val = Dataset(*synth_dataset(16, spec, seed=6))
    cfg = FrsNanoConfig(use_mcea=True, upsampler=Upsampler.DYSAMPLE)
    runs = []
    for _ in range(2):
        model = FrsNano(cfg, seed=3)
        logs = fit(model, train, TrainConfig(epochs=3, batch_size=16, seed=3), val)
        runs.append(("\n".join(l.line() for l in logs), evaluate_model(model, val).to_kv()))
    acceptance(
        "determinism",
        runs[0] == runs[1],
        f"loss logs identical: {runs[0][0] == runs[1][0]}, EvalReports identical: {runs[0][1] == runs[1][1]}",
    )


def test_split_arithmetic(acceptance):
    sizes = [len(p) for p in split_dataset(list(range(15980)), seed=0)]
    acceptance("split arithmetic", sizes == [12784, 1598, 1598], f"15980 ids -> {sizes}")
