"""Acceptance gate: one PASS/FAIL line per primary criterion.

Run alone with ``pytest tests/test_acceptance.py -v``.  The end-to-end and
ablation checks share trained models through a module-scoped cache.
"""

import dataclasses
import time

import numpy as np
import pytest

from freqflow import autograd as ag
from freqflow.autograd import backward
from freqflow.checkpoint import load_checkpoint, save_checkpoint
from freqflow.config import LAMBDA_FLOW, LAMBDA_REC, TrainConfig
from freqflow.data import (SynthSpec, count_windows, destandardize, impute, make_windows,
                           RawDataset, split_and_window, split_bounds, standardize, synth_generate)
from freqflow.evaluation import persistence_baseline, rmse, seasonal_naive_baseline
from freqflow.flow import flow_loss, ode_sample, target_velocity
from freqflow.gradcheck import finite_diff_check
from freqflow.layers import ComplexLinear, FlowHead, MultiHeadAttention, RevIN
from freqflow.losses import l2_penalty, total_loss
from freqflow.model import FreqFlow, build_model
from freqflow.spectral import LpfConfig, irfft, irfft_t, naive_dft, rfft, spectrum_of, time_shift
from freqflow.training import AdamState, adam_step, train

L_IN = L_OUT = 96
# two sinusoids per node (own period 32, shared latent period 24) plus a slow trend;
# the latent reaches nodes with different delays, so other nodes carry signal
FIXTURE = SynthSpec(n_vars=8, length=8000, periods=(32.0,), latent_period=24.0, coupling=2.0,
                    modulation=0.6, lag_periods=2, noise_std=0.2, trend_slope=1e-4, seed=0)
TRAIN_STRIDE = 8
VAL_STRIDE = 4
SEASONAL_PERIOD = 96  # common period of 24 and 32


@pytest.fixture
def verdict(capsys):
    def _verdict(name: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return _verdict


# ---------------------------------------------------------------- numerics
def test_fft_oracle_equivalence(verdict):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        L = 2 * int(rng.integers(2, 129))
        x = rng.standard_normal(L)
        worst = max(worst, float(np.max(np.abs(rfft(x) - naive_dft(x)))))
    worst_rt = 0.0
    for L in [4, 6, 10, 64, 96, 130, 256, 334, 1000, 1024, 2046, 4096]:
        x = rng.standard_normal(L)
        worst_rt = max(worst_rt, float(np.max(np.abs(irfft(rfft(x), L) - x))))
    elapsed = time.perf_counter() - start
    verdict("FFT oracle equivalence", worst < 1e-9 and worst_rt < 1e-10 and elapsed < 5,
            f"max |rfft - dft| {worst:.2e}, round trip {worst_rt:.2e}, {elapsed:.2f}s")


def test_time_phase_shift_law(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    shift_err, amp_err = 0.0, 0.0
    for _ in range(50):
        L = 2 * int(rng.integers(4, 129))
        tau = int(rng.integers(-2 * L, 2 * L))
        x = rng.standard_normal(L)
        x -= x.mean()
        S = spectrum_of(x)
        shifted = time_shift(S, tau)
        shift_err = max(shift_err, float(np.max(np.abs(shifted.coeffs - rfft(np.roll(x, tau))[1:]))))
        frac = time_shift(S, tau + rng.uniform())
        amp_err = max(amp_err, float(np.max(np.abs(np.abs(frac.coeffs) - np.abs(S.coeffs)))))
    elapsed = time.perf_counter() - start
    verdict("Time-phase shift law", shift_err < 1e-9 and amp_err < 1e-12 and elapsed < 1,
            f"shift err {shift_err:.2e}, amplitude err {amp_err:.2e}, {elapsed:.2f}s")


def _worst(f, params, step=1e-5):
    return max(finite_diff_check(f, p, step) for p in params)


def test_gradient_integrity(verdict):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = {}

    for _ in range(10):
        k_in = int(rng.integers(2, 9))
        eta = float(rng.choice([1.0, 1.5, 2.0]))
        layer = ComplexLinear(k_in, eta, rng=rng, init="random")
        k_out = layer.n_out
        X = rng.standard_normal((3, k_in)) + 1j * rng.standard_normal((3, k_in))
        target = rng.standard_normal((3, 2 * k_out))

        def f_complex():
            Y = layer(X)
            y = irfft_t(ag.concat([ag.Tensor(np.zeros((3, 1), complex)), Y], axis=-1), 2 * k_out)
            return ag.square(y - target).mean()

        worst["complex linear"] = max(worst.get("complex linear", 0), _worst(f_complex, layer.parameters()))

    for _ in range(10):
        heads = int(rng.choice([1, 2, 4]))
        d = heads * int(rng.integers(2, 5))
        block = MultiHeadAttention(d, heads, rng)
        block.o.weight.data[:] = 0.3 * rng.standard_normal(block.o.weight.shape)
        x = rng.standard_normal((2, int(rng.integers(2, 5)), d))
        target = rng.standard_normal(x.shape)
        worst["MHA"] = max(worst.get("MHA", 0),
                           _worst(lambda: ag.square(block(x) - target).mean(), block.parameters()))

    for depth in (2, 16):
        key = f"flow head D={depth}"
        for _ in range(10):
            dim, cond = int(rng.integers(2, 7)), int(rng.integers(1, 5))
            head = FlowHead(dim, cond, hidden=int(rng.integers(4, 9)), depth=depth,
                            time_embed_dim=int(rng.integers(3, 7)), rng=rng)
            x0, x1 = rng.standard_normal((16, dim)), rng.standard_normal((16, dim))
            c, t = rng.standard_normal((16, cond)), rng.uniform(size=16)
            # 1e-4 keeps central-difference roundoff below the tolerance at depth 16
            worst[key] = max(worst.get(key, 0),
                             _worst(lambda: flow_loss(head, x0, x1, c, t), head.parameters(), 1e-4))

    for _ in range(10):
        V, L = int(rng.integers(1, 5)), 2 * int(rng.integers(2, 9))
        rin = RevIN(V)
        rin.gamma.data[:] = rng.uniform(0.5, 2.0, V)
        rin.beta.data[:] = rng.standard_normal(V)
        x, target = rng.standard_normal((3, V, L)), rng.standard_normal((3, V, L))
        scale = rng.uniform(0.5, 1.5)

        def f_rin():
            y, state = rin.normalize(x)
            return ag.square(rin.denormalize(y * scale, state) - target).mean()

        worst["RIN affine"] = max(worst.get("RIN affine", 0), _worst(f_rin, rin.parameters()))

    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60
    verdict("Gradient integrity", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s")


class _RiggedHead:
    def __init__(self, velocity):
        self.velocity = velocity

    def __call__(self, x_t, t, cond):
        return ag.Tensor(np.broadcast_to(self.velocity, np.shape(x_t)).copy())


def test_flow_matching_identities(verdict):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    x0, x1 = rng.standard_normal((8, 6)), rng.standard_normal((8, 6))
    velocity_ok = np.array_equal(target_velocity(x0, x1), x1 - x0)
    perfect = float(flow_loss(_RiggedHead(x1 - x0), x0, x1, np.zeros((8, 1)), rng.uniform(size=8)).data)
    v = rng.standard_normal(6)
    euler = max(float(np.max(np.abs(ode_sample(_RiggedHead(v), x0, np.zeros((8, 1)), n) - (x0 + v))))
                for n in range(1, 51))
    elapsed = time.perf_counter() - start
    verdict("Flow-matching identities", velocity_ok and perfect == 0.0 and euler < 1e-12 and elapsed < 1,
            f"velocity exact {velocity_ok}, rigged loss {perfect}, Euler err {euler:.1e}, {elapsed:.2f}s")


def test_toy_transport(verdict):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    head = FlowHead(2, 1, hidden=64, depth=2, time_embed_dim=16, rng=rng)
    opt = AdamState(list(head.named_parameters()))
    steps, batch = 2000, 256
    for k in range(steps):
        x0 = rng.standard_normal((batch, 2))
        x1 = 3.0 + 0.5 * rng.standard_normal((batch, 2))
        backward(flow_loss(head, x0, x1, np.zeros((batch, 1)), rng.uniform(size=batch)))
        adam_step(opt, 3e-3 * 0.5 * (1 + np.cos(np.pi * k / steps)))
    out = ode_sample(head, rng.standard_normal((1000, 2)), np.zeros((1000, 1)), 16)
    mean_err = float(np.max(np.abs(out.mean(0) - 3.0)))
    std_err = float(np.max(np.abs(out.std(0) - 0.5)))
    elapsed = time.perf_counter() - start
    verdict("Toy transport", mean_err < 0.1 and std_err < 0.1 and elapsed < 60,
            f"mean {np.round(out.mean(0), 3)}, std {np.round(out.std(0), 3)}, {elapsed:.1f}s")


# -------------------------------------------------------- synthetic fixture
class Runs:
    """Lazily trained fixture models, each trained once per module."""

    def __init__(self):
        ds, self.stats = standardize(synth_generate(FIXTURE))
        self.splits = split_and_window(ds, L_IN, L_OUT, stride=TRAIN_STRIDE, eval_stride=L_OUT)
        a, b = split_bounds(ds.n_steps)
        self.splits["val"] = make_windows(ds.values, a, b, L_IN, L_OUT, VAL_STRIDE, "val")
        self.test = self.splits["test"]
        self.truth = self._units(self.test.horizon)
        self.models, self.seconds, self.reports = {}, {}, {}

    def _units(self, z):
        return destandardize(z, self.stats, node_axis=-2)

    def config(self, name: str) -> TrainConfig:
        preset = "deep" if name.startswith("deep") else "shallow"
        cfg = TrainConfig(lookback=L_IN, horizon=L_OUT, seed=FIXTURE.seed).with_preset(preset)
        if name == "no_mha":
            cfg = dataclasses.replace(cfg, use_mha=False)
        if name == "deep_no_flow":
            cfg = dataclasses.replace(cfg, use_flow=False)
        return cfg

    def model(self, name: str) -> FreqFlow:
        if name not in self.models:
            start = time.perf_counter()
            m = build_model(self.config(name), FIXTURE.n_vars, self.splits["train"].lookback)
            self.reports[name] = train(m, self.splits)
            self.seconds[name] = time.perf_counter() - start
            self.models[name] = m
        return self.models[name]

    def rmse(self, name: str) -> float:
        return rmse(self._units(self.model(name).predict(self.test.lookback)), self.truth)

    def baseline(self, kind: str) -> float:
        lb = self.test.lookback
        pred = (persistence_baseline(lb, L_OUT) if kind == "persistence"
                else seasonal_naive_baseline(lb, L_OUT, SEASONAL_PERIOD))
        return rmse(self._units(pred), self.truth)


@pytest.fixture(scope="module")
def runs():
    return Runs()


def test_end_to_end_synthetic(runs, verdict):
    shallow, deep = runs.rmse("shallow"), runs.rmse("deep")
    persist, seasonal = runs.baseline("persistence"), runs.baseline("seasonal")
    seconds = runs.seconds["shallow"] + runs.seconds["deep"]
    ok = shallow <= 0.5 * persist and shallow <= seasonal and deep <= shallow + 1e-6 and seconds < 300
    verdict("End-to-end synthetic forecasting", ok,
            f"shallow {shallow:.4f}, deep {deep:.4f} (flow correction "
            f"{'on' if runs.reports['deep'].flow_enabled else 'off'}), persistence {persist:.4f}, "
            f"seasonal-naive {seasonal:.4f}, training {seconds:.0f}s")


def test_ablation_directionality(runs, verdict):
    full, no_mha = runs.rmse("shallow"), runs.rmse("no_mha")
    deep, deep_no_flow = runs.rmse("deep"), runs.rmse("deep_no_flow")
    seconds = sum(runs.seconds[k] for k in ("shallow", "deep", "no_mha", "deep_no_flow"))
    ok = no_mha >= full and deep_no_flow >= deep and seconds < 900
    verdict("Ablation directionality", ok,
            f"w/o MHA {no_mha:.4f} vs {full:.4f}, deep w/o flow {deep_no_flow:.4f} vs {deep:.4f}, "
            f"{seconds:.0f}s total")


def test_checkpoint_round_trip(runs, verdict, tmp_path):
    rng = np.random.default_rng(5)
    ok, names = True, ("shallow", "deep")
    for name in names:
        model = runs.model(name)
        path = tmp_path / f"{name}.ckpt"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        same = all(a.data.tobytes() == b.data.tobytes()
                   for a, b in zip(model.parameters(), back.parameters()))
        lb = np.concatenate([runs.test.lookback[:8], rng.standard_normal((4, FIXTURE.n_vars, L_IN))])
        ok &= same and model.predict(lb).tobytes() == back.predict(lb).tobytes()
    verdict("Checkpoint round-trip", ok, f"bit-identical parameters and forecasts for {', '.join(names)}")


# -------------------------------------------------------------- structure
def test_identity_pipeline(verdict):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    cfg = TrainConfig(task="reconstruct", lookback=L_IN, downsample=1, use_lpf=False, use_flow=False)
    model = FreqFlow(cfg, 8)
    x = rng.standard_normal((16, 8, L_IN))
    x -= x.mean(-1, keepdims=True)
    err = float(np.max(np.abs(model.predict(x) - x)))
    elapsed = time.perf_counter() - start
    verdict("Identity pipeline", model.eta == 1.0 and err < 1e-8 and elapsed < 1,
            f"eta {model.eta}, max err {err:.1e}, {elapsed:.2f}s")


def test_parameter_budget(verdict):
    counts = {}
    for preset, target in (("shallow", 89_000), ("deep", 140_000)):
        cfg = TrainConfig(lookback=L_IN, horizon=L_OUT, lpf=LpfConfig(explicit_cutoff=24)).with_preset(preset)
        seen = {FreqFlow(cfg, 32).n_parameters() for _ in range(2)}
        counts[preset] = (seen, target)
    ok = all(len(s) == 1 and abs(next(iter(s)) - t) <= 0.15 * t for s, t in counts.values())
    verdict("Parameter budget", ok, ", ".join(
        f"{p} {next(iter(s)):,} (target {t:,} +/-15%)" for p, (s, t) in counts.items()))


def test_loss_arithmetic(verdict):
    rng = np.random.default_rng(7)
    cfg = TrainConfig(lambda_reg=1e-3)
    worst = 0.0
    for _ in range(200):
        recon, flow = rng.uniform(0, 10, 2)
        head = FlowHead(3, 2, hidden=5, depth=2, time_embed_dim=4, rng=rng)
        params = head.parameters()
        brute = sum(float(v) ** 2 for p in params for v in p.data.ravel())
        reg = float(l2_penalty(params).data)
        worst = max(worst, abs(reg - brute) / brute)
        _, parts = total_loss(recon, flow, params, cfg)
        expected = LAMBDA_REC * recon + LAMBDA_FLOW * flow + cfg.lambda_reg * brute
        worst = max(worst, abs(parts.total - expected))
    verdict("Loss arithmetic", worst < 1e-12, f"max deviation {worst:.1e} over 200 draws")


def test_preprocessing_fidelity(verdict):
    ds = RawDataset(np.array([[np.nan], [2.0], [np.nan], [4.0]]), ["n"], 5)
    imputed = impute(ds).values[:, 0].tolist()
    split_ok = all(split_bounds(T) == (7 * T // 10, 8 * T // 10) for T in range(1, 20001))
    window_ok = True
    for n in range(0, 40):
        for li in range(1, 6):
            for lo in range(1, 4):
                for s in range(1, 5):
                    starts = [t for t in range(0, n, s) if t + li + lo <= n]
                    window_ok &= count_windows(n, li, lo, s) == len(starts)
    ok = imputed == [2, 2, 2, 4] and split_ok and window_ok
    verdict("Preprocessing fidelity", ok,
            f"impute {imputed}, split bounds exact {split_ok}, window counts exact {window_ok}")
