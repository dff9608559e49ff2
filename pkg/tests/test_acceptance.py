"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -s``).

Everything runs from the committed fixtures; nothing here invokes the
fixture exporter.  Published large-scale numbers (VGG-16 class accuracies,
the 0.693 energy ratio) are printed as orientation references only; they
are not reproducible at this scale and are not asserted.
"""

import os
import time

import numpy as np
import pytest

import spikeforge as sf
from spikeforge.cli import main as cli_main
from spikeforge.diagnostics import VGG16_CIFAR100_REFERENCE_RATIO, energy_estimate
from spikeforge.sim import (
    NeuronState,
    PoolState,
    SimTrace,
    pool_lip,
    pool_max_rate,
    step_if_burst,
    step_if_soft_reset,
)
from conftest import FIXTURES


def verdict(ok: bool, name: str, detail: str = "") -> None:
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] {name}" + (f": {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


def load_fixture(name):
    path = os.path.join(FIXTURES, name)
    model = sf.load_bundle(path)
    calib = sf.load_calibration(os.path.join(path, "calib.json"), model.input_shape)
    ev = sf.load_calibration(os.path.join(path, "eval.json"), model.input_shape)
    return model, calib, ev


@pytest.fixture(scope="module")
def cnn():
    return load_fixture("tiny_cnn")


@pytest.fixture(scope="module")
def mlp():
    return load_fixture("tiny_mlp")


def test_constant_current_closed_form():
    """200 random (a, T, gamma) with gamma >= ceil(a): spikes == floor(a*T).

    Currents are random dyadic rationals (k/256), exactly representable in
    binary floating point, so the float dynamics coincide with real
    arithmetic and the identity can be asserted exactly.
    """
    rng = np.random.default_rng(1234)
    cases = 200
    a = rng.integers(0, 4 * 256, size=cases) / 256.0
    horizons = rng.integers(1, 257, size=cases)
    gamma = np.ceil(a).astype(np.int64) + rng.integers(0, 3, size=cases)
    gamma = np.maximum(gamma, 1)
    t0 = time.perf_counter()
    n_bad = 0
    for cap in np.unique(gamma):
        sel = gamma == cap
        state = NeuronState.zeros(int(sel.sum()))
        cur = a[sel]
        t_sel = horizons[sel]
        want = np.floor(cur * t_sel).astype(np.int64)
        got = np.zeros_like(want)
        for t in range(1, int(t_sel.max()) + 1):
            step_if_burst(state, cur, int(cap))
            done = t_sel == t
            got[done] = state.cum_spikes[done]
        n_bad += int((got != want).sum())
    elapsed = time.perf_counter() - t0
    verdict(n_bad == 0 and elapsed < 1.0, "constant-current closed form",
            f"{cases} cases, {n_bad} mismatches, {elapsed:.3f}s")


def test_gamma_one_equivalence():
    """Burst stepper with cap 1 is the plain soft-reset IF stepper, exactly."""
    rng = np.random.default_rng(77)
    n, horizon = 1000, 80
    currents = rng.normal(0.3, 1.0, size=(horizon, n))
    burst, plain = NeuronState.zeros(n), NeuronState.zeros(n)
    identical = True
    for t in range(horizon):
        kb = step_if_burst(burst, currents[t], gamma=1)
        kp = step_if_soft_reset(plain, currents[t])
        identical &= bool(np.array_equal(kb, kp))
    identical &= bool(np.array_equal(burst.v, plain.v))
    verdict(identical, "gamma=1 equivalence",
            f"{n} random current sequences, {horizon} steps, exact")


def test_conservation_on_fixture_simulations(mlp, cnn):
    """spikes*v_th + V(T) - sum(I) == 0 within 1e-6*T for every neuron."""
    worst = 0.0
    for (model, calib, _), params in (
            (mlp, dict(p=99.9, gamma=1)),
            (mlp, dict(p=100.0, gamma=3)),
            (cnn, dict(p=99.0, gamma=1)),
            (cnn, dict(p=99.0, gamma=5))):
        horizon = 32
        net, _, _ = sf.convert_pipeline(model, calib, pooling="lip", **params)
        trace = sf.simulate_batch(net, calib.inputs[:16], horizon)
        err = sf.diagnostics.conservation_error(trace)
        worst = max(worst, err / horizon)
    verdict(worst <= 1e-6, "conservation identity",
            f"max |spikes + V(T) - sum I| / T = {worst:.2e}")


def test_lip_equality_exhaustive_and_random():
    """Cumulative LIP output equals max cumulative input: exhaustively over
    all binary trains with <= 4 sources and T <= 6, then on 1e5 random
    integer-count trains."""
    t0 = time.perf_counter()
    n_cases = 0
    bad = 0
    for n in range(1, 5):
        for horizon in range(1, 7):
            total = 1 << (n * horizon)
            shifts = np.arange(n * horizon, dtype=np.uint64)
            for start in range(0, total, 1 << 20):
                ids = np.arange(start, min(start + (1 << 20), total),
                                dtype=np.uint64)
                bits = ((ids[:, None] >> shifts) & 1).astype(np.float64)
                trains = bits.reshape(-1, n, horizon)
                state = PoolState.zeros((trains.shape[0], n))
                out_total = np.zeros(trains.shape[0])
                for t in range(horizon):
                    out_total += pool_lip(state, trains[:, :, t])
                want = trains.sum(axis=2).max(axis=1)
                bad += int((out_total != want).sum())
                n_cases += trains.shape[0]
    exhaustive_s = time.perf_counter() - t0

    rng = np.random.default_rng(5150)
    trains = rng.integers(0, 6, size=(100_000, 5, 20)).astype(np.float64)
    state = PoolState.zeros((trains.shape[0], 5))
    out_total = np.zeros(trains.shape[0])
    for t in range(20):
        out_total += pool_lip(state, trains[:, :, t])
    want = trains.sum(axis=2).max(axis=1)
    bad_rand = int((out_total != want).sum())

    verdict(bad == 0 and bad_rand == 0 and exhaustive_s < 60.0,
            "LIP cumulative equality",
            f"{n_cases} exhaustive cases in {exhaustive_s:.1f}s "
            f"({bad} bad) + 100000 random integer trains ({bad_rand} bad)")


def test_max_rate_pooling_bounds():
    """Output total <= total input spikes always; >= max cumulative input on
    at least 99.9% of 1e5 random binary trains (violations printed)."""
    rng = np.random.default_rng(31337)
    combos = [(2, 30), (3, 15), (4, 10), (6, 8)]
    per = 25_000
    upper_bad = 0
    lower_bad = 0
    offenders = []
    for n, horizon in combos:
        trains = (rng.random((per, n, horizon)) < rng.uniform(0.2, 0.8)).astype(float)
        state = PoolState.zeros((per, n))
        out_total = np.zeros(per)
        for t in range(horizon):
            out_total += pool_max_rate(state, trains[:, :, t])
        upper_bad += int((out_total > trains.sum(axis=(1, 2))).sum())
        viol = out_total < trains.sum(axis=2).max(axis=1)
        lower_bad += int(viol.sum())
        for idx in np.flatnonzero(viol)[:3]:
            offenders.append(trains[idx].astype(int).tolist())
    for train in offenders[:5]:
        print(f"  lower-bound violation train: {train}")
    ratio = 1.0 - lower_bad / (per * len(combos))
    verdict(upper_bad == 0 and ratio >= 0.999, "max-rate pooling bounds",
            f"upper bound exact; lower bound holds on {ratio:.5f} "
            f"({lower_bad} violations)")


def pool_error_summary(model, calib, inputs, pooling, horizon, gamma=1, p=99.0):
    net, normalized, _ = sf.convert_pipeline(model, calib, p=p, gamma=gamma,
                                             pooling=pooling)
    trace = sf.simulate_batch(net, inputs, horizon)
    ref = sf.reference_activations(normalized, inputs, net.input_scale)
    stats = sf.pooling_error(trace, ref)
    mean_err = float(np.mean([s["mean_abs_err"] for s in stats.values()]))
    correct = float(np.mean([s["correct_ratio"] for s in stats.values()]))
    return mean_err, correct


def test_pooling_error_ordering(cnn):
    """LIP pooling error <= max-rate pooling error at T in {16, 32, 64};
    LIP correct ratio at e = 2/T is >= 0.99 at T = 64."""
    model, calib, ev = cnn
    xs = ev.inputs[:64]
    ok = True
    details = []
    lip_correct_64 = 0.0
    for horizon in (16, 32, 64):
        lip_err, lip_corr = pool_error_summary(model, calib, xs, "lip", horizon)
        max_err, _ = pool_error_summary(model, calib, xs, "max_rate", horizon)
        ok &= lip_err <= max_err
        details.append(f"T={horizon}: lip {lip_err:.05f} vs max-rate {max_err:.05f}")
        if horizon == 64:
            lip_correct_64 = lip_corr
    ok &= lip_correct_64 >= 0.99
    verdict(ok, "pooling-error ordering",
            "; ".join(details) + f"; lip correct_ratio(T=64) = {lip_correct_64:.4f}")


def test_rate_approximation_convergence(mlp, cnn):
    """Mean |rate - normalized activation| shrinks from T=32 to T=1024 and at
    T=1024 sits below 2/T + residual/T in every spike layer."""
    ok = True
    details = []
    for name, (model, calib, ev) in (("mlp", mlp), ("cnn", cnn)):
        xs = ev.inputs[:8]
        net, normalized, _ = sf.convert_pipeline(model, calib, p=100.0, gamma=1,
                                                 pooling="lip")
        ref = sf.reference_activations(normalized, xs, net.input_scale)
        errs = {}
        for horizon in (32, 1024):
            trace = sf.simulate_batch(net, xs, horizon)
            err = sf.rate_error(trace, ref)
            errs[horizon] = float(np.mean(list(err.values())))
            if horizon == 1024:
                for i, layer_err in err.items():
                    bound = 2.0 / horizon \
                        + float(np.mean(np.abs(trace.v_final[i]))) / horizon
                    ok &= layer_err < bound
        ok &= errs[1024] < errs[32]
        details.append(f"{name}: err(32)={errs[32]:.5f} err(1024)={errs[1024]:.6f}")
    verdict(ok, "rate-approximation convergence", "; ".join(details))


def test_burst_benefit(cnn):
    """At p=99 (normalized activations exceed 1), raising the per-step cap
    from 1 to 5 does not hurt accuracy at T=32, and the remaining ANN-to-SNN
    gap at cap 5, T=64 is at most one percentage point on the 512-sample
    eval set."""
    model, calib, ev = cnn
    labels = np.asarray(ev.labels)
    ann_acc = float((sf.forward_batch(model, ev.inputs)[-1].argmax(1) == labels).mean())

    def snn_acc(gamma, horizon):
        net, normalized, _ = sf.convert_pipeline(model, calib, p=99.0, gamma=gamma,
                                                 pooling="lip")
        trace = sf.simulate_batch(net, ev.inputs, horizon)
        return float((trace.output_sum.argmax(1) == labels).mean()), net, normalized

    # premise: with p=99 some normalized reference activations exceed 1
    net1, normalized, _ = sf.convert_pipeline(model, calib, p=99.0, gamma=1,
                                              pooling="lip")
    ref = sf.reference_activations(normalized, calib.inputs, net1.input_scale)
    over_unity = max(float(ref[i].max()) for i, l in enumerate(normalized.layers)
                     if l.kind == "relu")
    acc_g1, _, _ = snn_acc(1, 32)
    acc_g5, _, _ = snn_acc(5, 32)
    acc_g5_64, _, _ = snn_acc(5, 64)
    gap = abs(ann_acc - acc_g5_64)
    print("  reference (not asserted): published VGG-16/CIFAR-100 conversion "
          "reaches 71.41% at T=32 and VGG-16/CIFAR-10 95.58% at T=32; "
          "desk-scale fixtures cannot reproduce those absolute numbers")
    ok = over_unity > 1.0 and acc_g5 >= acc_g1 and gap <= 0.01
    verdict(ok, "burst benefit",
            f"max normalized activation {over_unity:.2f}; "
            f"acc(cap=1,T=32)={acc_g1:.4f} <= acc(cap=5,T=32)={acc_g5:.4f}; "
            f"ANN {ann_acc:.4f} vs SNN(cap=5,T=64) {acc_g5_64:.4f} "
            f"(gap {100 * gap:.2f}pp)")


def test_bn_fusion_equivalence(cnn):
    """Fused and unfused forwards agree within 1e-5 on 1000 random inputs."""
    model, _, _ = cnn
    fused = sf.fuse_batchnorm(model)
    rng = np.random.default_rng(99)
    xs = rng.random((1000,) + tuple(model.input_shape)).astype(np.float32)
    a = sf.forward_batch(model, xs)[-1]
    b = sf.forward_batch(fused, xs)[-1]
    worst = float(np.max(np.abs(a - b)))
    verdict(worst <= 1e-5, "batchnorm fusion equivalence",
            f"max |fused - unfused| = {worst:.2e} over 1000 inputs")


def test_normalization_function_preservation(mlp):
    """p=100 normalization rescales but does not change the function:
    normalized-model output (final scale 1) matches the original within
    1e-5 on nonnegative random inputs."""
    worst = 0.0
    rng = np.random.default_rng(7)
    nets = []
    model, calib, ev = mlp
    nets.append((sf.fuse_batchnorm(model), calib.inputs, ev.inputs[:200]))
    rand_model = sf.AnnModel(
        [sf.linear(rng.normal(size=(24, 12)), rng.normal(size=24)), sf.relu(),
         sf.linear(rng.normal(size=(16, 24)), rng.normal(size=16)), sf.relu(),
         sf.linear(rng.normal(size=(4, 16)), rng.normal(size=4))], (12,))
    nets.append((rand_model, rng.random((64, 12)).astype(np.float32),
                 rng.random((200, 12)).astype(np.float32)))
    for net_model, calib_inputs, eval_inputs in nets:
        stats = sf.collect_activation_stats(
            net_model, sf.CalibrationSet(calib_inputs), p=100.0)
        normalized = sf.normalize_weights(net_model, stats)
        orig = sf.forward_batch(net_model, eval_inputs)[-1]
        scaled = sf.forward_batch(
            normalized, eval_inputs / np.float32(stats.lambda_input))[-1]
        worst = max(worst, float(np.max(np.abs(orig - scaled))))
    verdict(worst <= 1e-5, "normalization function preservation",
            f"max |scaled_out - original| = {worst:.2e} at p=100")


def test_energy_formula():
    """Hand example: 100 synaptic ops at rate 0.1 for 10 steps against a
    100-MAC layer gives ratio 90/460."""
    model = sf.AnnModel([sf.linear(np.zeros((10, 10)), np.zeros(10))], (10,))
    trace = SimTrace(
        horizon=10, gamma_cap=1, pooling_mode="lip", layer_kinds=("linear",),
        v_thresholds={}, cum_spikes={}, v_final={}, cum_input={},
        pool_cum_in={}, pool_cum_out={}, output_sum=np.zeros((1, 1)),
        ac_ops={0: np.array([100.0 * 0.1 * 10.0])}, analog_macs_per_step=0)
    e_ann, e_snn, ratio = energy_estimate(model, trace)
    want = 90.0 / 460.0
    print(f"  reference (not asserted): published VGG-16/CIFAR-100 energy "
          f"ratio {VGG16_CIFAR100_REFERENCE_RATIO} is a large-scale "
          f"measurement, not reproducible here")
    verdict(abs(ratio - want) <= 1e-6, "energy formula",
            f"E_ann={e_ann:.1f} E_snn={e_snn:.1f} ratio={ratio:.6f} "
            f"(want {want:.6f})")


def test_cli_determinism(mlp, tmp_path):
    """Identical run configuration produces byte-identical results.csv."""
    model, calib, ev = mlp
    sub = sf.CalibrationSet(ev.inputs[:32], ev.labels[:32])
    sf.save_calibration(sub, str(tmp_path), "ev")
    mlp_dir = os.path.join(FIXTURES, "tiny_mlp")
    args = lambda out: [
        "run", "--model", mlp_dir, "--calib", os.path.join(mlp_dir, "calib.json"),
        "--eval", str(tmp_path / "ev.json"), "--T", "16", "--gamma", "2",
        "--p", "99.9", "--pooling", "lip", "--seed", "7", "--out", str(out)]
    assert cli_main(args(tmp_path / "a")) == 0
    assert cli_main(args(tmp_path / "b")) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    verdict(a == b, "CLI determinism",
            f"results.csv byte-identical across reruns ({len(a)} bytes)")
