"""Fast self-checks of closed-form results and oracle equivalences, run by `check`."""

import logging
from typing import Callable, List, Tuple

import numpy as np

from app import hrl, mmwave, rvq, sub6
from app.environment import SUB6, EnvAction, thresholds_to_action
from app.neural import Mlp

logger = logging.getLogger(__name__)

CheckResult = Tuple[str, bool, str]


def check_overheads() -> CheckResult:
    got = (mmwave.analog_overhead(1, 4, 32, 16), mmwave.digital_overhead(8, 1), sub6.pmi_overhead(16, 1))
    return "overheads", got == (128, 8, 4), f"M_RF, M_BB, M_BB(sub6) = {got}"


def check_estimation() -> CheckResult:
    mse, snr_eff = mmwave.mmse_estimation(1.0, 10.0, 10.0)
    ok = abs(mse - 1 / 101) < 1e-12 and abs(snr_eff - 1000 / 111) < 1e-12
    rng = np.random.default_rng(0)
    draws = rng.uniform(0, 100, size=(10_000, 3))
    ok = ok and all(mmwave.mmse_estimation(b, z, s)[1] <= s + 1e-12 for b, z, s in draws)
    return "estimation", ok, f"mmse={mse:.6g} snr_eff={snr_eff:.6g}"


def check_beam_sweep() -> CheckResult:
    cb = mmwave.dft_codebook(8)
    rx = mmwave.dft_codebook(1)
    wrong = []
    for j in range(cb.size):
        h = np.conj(cb.vectors[j])[None, None, :] * np.sqrt(8)
        sweep = mmwave.analog_sweep(h, cb, rx, 1, 1, 10.0)
        if sweep.tx_indices[0] != j:
            wrong.append(j)
    return "beam_sweep", not wrong, f"misaligned beams {wrong}" if wrong else "all 8 beams recovered"


def check_gradients(n_nets: int = 20, h: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(n_nets):
        dims = [int(d) for d in rng.integers(1, 6, size=rng.integers(2, 5))]
        net = Mlp(dims, output=str(rng.choice(["identity", "sigmoid"])), rng=rng)
        x = rng.standard_normal(dims[0])
        up = rng.standard_normal(dims[-1])
        grads, _ = net.backward(x, up)
        for p, g in zip(net.params(), grads):
            flat = p.reshape(-1)
            num = np.empty_like(flat)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                plus = float(up @ net.forward(x))
                flat[i] = keep - h
                minus = float(up @ net.forward(x))
                flat[i] = keep
                num[i] = (plus - minus) / (2 * h)
            err = np.max(np.abs(num - g.reshape(-1)) / np.maximum(1e-6, np.abs(num) + np.abs(g.reshape(-1))))
            worst = max(worst, float(err))
    return "gradients", worst < 1e-4, f"max relative error {worst:.2e}"


def check_quantizer(n: int = 100) -> CheckResult:
    rng = np.random.default_rng(2)
    cb = rvq.build_rvq_codebook(3, (2, 2), n_training=256, seed=3)
    pmi = sub6.pmi_codebook(4, 2, 16)
    ok = True
    for _ in range(n):
        hbar = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        scan = [float(rvq.similarity(hbar, c[None])[0]) for c in cb.entries]
        ok &= scan[rvq.quantize_effective_channel(hbar, cb)[1]] >= max(scan) * (1 - 1e-12)
        p = rng.standard_normal((1, 4, 4)) + 1j * rng.standard_normal((1, 4, 4))
        metric = [np.linalg.norm(p[0] @ f) for f in pmi.precoders]
        ok &= metric[int(sub6.pmi_select(p, pmi)[1][0])] >= max(metric) - 1e-9
    return "quantizer_oracles", bool(ok), f"{n} random inputs against exhaustive scans"


def check_masking(n: int = 100_000) -> CheckResult:
    rng = np.random.default_rng(4)
    thresholds = rng.uniform(0, 10, size=(n, 3))
    feedback = rng.uniform(0, 10, size=n)
    for scheme, width in (("three_threshold", 3), ("hrl_lower", 2)):
        for t, f in zip(thresholds, feedback):
            if thresholds_to_action(SUB6, f, t[:width], scheme) is EnvAction.ANALOG_TRAINING:
                return "masking", False, f"analog training emitted at sub-6 ({scheme})"
    return "masking", True, f"{n} draws per scheme, no analog training at sub-6"


def check_round_skip(n: int = 100_000, m_rf: int = 128) -> CheckResult:
    rng = np.random.default_rng(5)
    detail = []
    ok = True
    for q in (0.6, 0.8, 1.0):
        p = hrl.non_skip_probability(q, m_rf)
        freq = 1.0 - sum(hrl.round_skip(q, m_rf, rng) for _ in range(n)) / n
        ok &= abs(freq - p) <= 0.01 * p
        detail.append(f"q={q}: p={p:.4f} freq={freq:.4f}")
    return "round_skip", bool(ok), "; ".join(detail)


CHECKS: List[Callable[[], CheckResult]] = [
    check_overheads, check_estimation, check_beam_sweep, check_gradients,
    check_quantizer, check_masking, check_round_skip,
]


def run_checks() -> List[CheckResult]:
    results = []
    for check in CHECKS:
        name, ok, detail = check()
        (logger.info if ok else logger.error)(f"check {name}: {'ok' if ok else 'FAILED'} ({detail})")
        results.append((name, ok, detail))
    return results
