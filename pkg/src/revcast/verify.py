"""Numerical audit suites.

Each check returns a CheckResult whose threshold comes from the TOLERANCES
table below, the single source of truth echoed in reports and reused by the
test suite, so the CLI and the tests cannot drift apart.  Checks build their
own seeded models and inputs; everything here is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model as mdl
from .autoencoder import decode as ae_decode
from .autoencoder import encode as ae_encode
from .config import RunConfig
from .errors import ConfigError
from .model import ModelConfig
from .ops import pixel_shuffle_down, pixel_shuffle_up
from .predictor import predictor_forward, predictor_inverse
from .training import MemoryLedger, grad_audit, loss_and_grads

TOLERANCES = {
    "shuffle_roundtrip": 0.0,  # bit-exact
    "autoencoder_roundtrip": {"f32": 1e-4, "f64": 1e-12},
    "autoencoder_roundtrip_deep_f32": 1e-3,  # stacks deeper than 8 blocks
    "predictor_roundtrip": {"f32": 1e-3, "f64": 1e-10},
    "reconstruction": {"f32": 1e-2, "f64": 1e-8},
    "gradient_rel": 1e-5,
    "gradient_abs": 1e-8,
    "backward_equivalence_f32": 1e-4,
    "shortcut_step": 1e-4,
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (f"{status} {self.name}: observed {self.observed:.3e}, "
                f"threshold {self.threshold:.3e}")
        return f"{text} ({self.detail})" if self.detail else text


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))))


def _seeded_frames(rng: np.random.Generator, config: ModelConfig, count: int, lead=()):
    shape = lead + (count, config.height, config.width, config.channels)
    return rng.uniform(0.0, 1.0, size=shape).astype(config.dtype)


# ---------------------------------------------------------------------------
# individual checks


def check_shuffle_roundtrip(cases: int = 25, seed: int = 0) -> CheckResult:
    """up(down(x)) and down(up(x)) must return the input bit for bit."""
    rng = np.random.Generator(np.random.PCG64(seed))
    exact = True
    for _ in range(cases):
        n = int(rng.integers(1, 5))
        h = n * int(rng.integers(1, 6))
        w = n * int(rng.integers(1, 6))
        c = int(rng.integers(1, 7))
        lead = (int(rng.integers(1, 4)),) if rng.integers(0, 2) else ()
        x = rng.standard_normal(lead + (h, w, c)).astype(np.float32)
        down = pixel_shuffle_down(x, n)
        exact &= bool(np.array_equal(pixel_shuffle_up(down, n), x))
        exact &= bool(np.array_equal(pixel_shuffle_down(x, 1), x))
        y = rng.standard_normal(lead + (h // n, w // n, c * n * n)).astype(np.float32)
        exact &= bool(np.array_equal(pixel_shuffle_down(pixel_shuffle_up(y, n), n), y))
    return CheckResult("pixel-shuffle round trip bit-exact", exact, 0.0 if exact else 1.0,
                       TOLERANCES["shuffle_roundtrip"], f"{cases} seeded cases")


def check_autoencoder_roundtrip(config: ModelConfig, seeds: int = 100,
                                init: str = "seeded", base_seed: int = 0) -> CheckResult:
    """decode(encode(x)) == x within precision-dependent tolerance."""
    deep = config.autoencoder.total_blocks > 8
    if config.precision == "f32" and deep:
        tol = TOLERANCES["autoencoder_roundtrip_deep_f32"]
    else:
        tol = TOLERANCES["autoencoder_roundtrip"][config.precision]
    worst = 0.0
    for s in range(seeds):
        params = mdl.init_model(config, base_seed + s, init)
        rng = np.random.Generator(np.random.PCG64(base_seed + 1000 + s))
        x = _seeded_frames(rng, config, 1)[0]
        pair = ae_encode(x, params.autoencoder, config.autoencoder)
        back = ae_decode(pair, params.autoencoder, config.autoencoder)
        worst = max(worst, _max_abs(back, x))
    detail = f"{seeds} seeds, {config.autoencoder.total_blocks} blocks, {config.precision}"
    return CheckResult("autoencoder round trip", worst <= tol, worst, tol, detail)


def check_predictor_roundtrip(config: ModelConfig, seeds: int = 20,
                              init: str = "seeded", base_seed: int = 0) -> CheckResult:
    """One predictor step undone by the conditional inverse, states known."""
    tol = TOLERANCES["predictor_roundtrip"][config.precision]
    worst = 0.0
    for s in range(seeds):
        params = mdl.init_model(config, base_seed + s, init)
        rng = np.random.Generator(np.random.PCG64(base_seed + 2000 + s))
        warm = _seeded_frames(rng, config, 3)
        states, _ = mdl.warmup(warm, params, config)
        probe = mdl.encode(_seeded_frames(rng, config, 1)[0], params, config)
        out, _ = predictor_forward(probe, states, params.predictor)
        back = predictor_inverse(out, states, params.predictor)
        worst = max(worst, max(_max_abs(back.g1, probe.g1), _max_abs(back.g2, probe.g2)))
    by_count = _roundtrip_by_unit_count(config, base_seed)
    detail = (f"{seeds} seeds, {config.precision}; error by unit count "
              + ", ".join(f"{k}:{v:.1e}" for k, v in by_count))
    return CheckResult("predictor conditional round trip", worst <= tol, worst, tol, detail)


def _roundtrip_by_unit_count(config: ModelConfig, base_seed: int):
    """Round-trip error growth with predictor depth (reported, not asserted)."""
    rows = []
    for count in (1, 2, 4, 8):
        cfg = replace(config, predictor_units=count)
        params = mdl.init_model(cfg, base_seed, "seeded")
        rng = np.random.Generator(np.random.PCG64(base_seed + 3000 + count))
        warm = _seeded_frames(rng, cfg, 3)
        states, _ = mdl.warmup(warm, params, cfg)
        probe = mdl.encode(_seeded_frames(rng, cfg, 1)[0], params, cfg)
        out, _ = predictor_forward(probe, states, params.predictor)
        back = predictor_inverse(out, states, params.predictor)
        rows.append((count, max(_max_abs(back.g1, probe.g1), _max_abs(back.g2, probe.g2))))
    return rows


def check_reconstruction(config: ModelConfig, seeds: int = 20, init: str = "seeded",
                         base_seed: int = 0) -> CheckResult:
    """Recover the frame a prediction was made from, given the pre-step states."""
    tol = TOLERANCES["reconstruction"][config.precision]
    worst = 0.0
    for s in range(seeds):
        params = mdl.init_model(config, base_seed + s, init)
        rng = np.random.Generator(np.random.PCG64(base_seed + 4000 + s))
        frames = _seeded_frames(rng, config, config.frames_in)
        states_pre, _ = mdl.warmup(frames[:-1], params, config)
        predicted, _, _ = mdl.predict_next(frames[-1], states_pre, params, config)
        recovered = mdl.reconstruct_previous(predicted, states_pre, params, config)
        worst = max(worst, _max_abs(recovered, frames[-1]))
    detail = f"{seeds} seeds, {config.precision}"
    return CheckResult("pipeline reconstruction", worst <= tol, worst, tol, detail)


def check_gradients(config: ModelConfig, seed: int = 0, coords: int = 60,
                    init: str = "seeded") -> CheckResult:
    """Reverse-mode gradients against float64 central differences."""
    report = grad_audit(config, seed=seed, coords=coords, init=init)
    rel_tol = TOLERANCES["gradient_rel"]
    abs_tol = TOLERANCES["gradient_abs"]
    passed = (report.checked >= min(coords, 50) and report.max_rel <= rel_tol
              and report.max_abs <= abs_tol)
    detail = (f"{report.checked} coordinates, {report.skipped_kinks} kink-straddling "
              f"stencils excluded, max abs {report.max_abs:.2e} (tol {abs_tol:.0e})")
    return CheckResult("gradient oracle", passed, report.max_rel, rel_tol, detail)


def check_backward_equivalence(config: ModelConfig, seeds: int = 10,
                               base_seed: int = 0) -> CheckResult:
    """Reversible-backward gradients against the store-everything reference.

    Error is measured relative to the largest reference-gradient magnitude;
    forward losses must agree bit for bit since both modes run identical
    kernels.
    """
    tol = TOLERANCES["backward_equivalence_f32"]
    worst = 0.0
    losses_equal = True
    for s in range(seeds):
        params = mdl.init_model(config, base_seed + s, "seeded")
        rng = np.random.Generator(np.random.PCG64(base_seed + 5000 + s))
        frames = _seeded_frames(rng, config, config.frames_in, lead=(2,))
        targets = _seeded_frames(rng, config, config.frames_out, lead=(2,))
        loss_sto, g_sto = loss_and_grads(params, frames, targets, config, "stored")
        loss_rev, g_rev = loss_and_grads(params, frames, targets, config, "reversible")
        losses_equal &= loss_sto == loss_rev
        scale = max(float(np.max(np.abs(g))) for g in g_sto)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(g_sto, g_rev))
        worst = max(worst, diff / max(scale, 1e-30))
    detail = f"{seeds} seeds; losses bit-identical: {losses_equal}"
    return CheckResult("backward-path equivalence", worst <= tol and losses_equal,
                       worst, tol, detail)


def check_shortcut(config: ModelConfig, seeds: int = 10, steps: int = 3,
                   base_seed: int = 0) -> CheckResult:
    """Feature-space rollout vs decode-then-re-encode rollout, per step."""
    tol = TOLERANCES["shortcut_step"]
    worst = 0.0
    for s in range(seeds):
        params = mdl.init_model(config, base_seed + s, "seeded")
        rng = np.random.Generator(np.random.PCG64(base_seed + 6000 + s))
        frames = _seeded_frames(rng, config, config.frames_in)
        shortcut = mdl.rollout(frames, steps, params, config)
        states, pair = mdl.warmup(frames, params, config)
        for i in range(steps):
            if i > 0:
                frame, pair, states = mdl.predict_next(frame, states, params, config)
            else:
                frame = mdl.decode(pair, params, config)
            worst = max(worst, _max_abs(shortcut[i], frame))
    detail = f"{seeds} seeds, {steps}-step rollouts"
    return CheckResult("identity-shortcut consistency", worst <= tol, worst, tol, detail)


# ---------------------------------------------------------------------------
# memory accounting


def stages_for_depth(config: ModelConfig, depth: int) -> ModelConfig:
    """Same stage plan with block counts scaled to `depth` total blocks."""
    n_stages = len(config.stages)
    if depth % n_stages:
        raise ConfigError(f"depth {depth} not divisible across {n_stages} stages")
    per = depth // n_stages
    return replace(config, stages=tuple((n, per) for n, _ in config.stages))


def measure_peaks(config: ModelConfig, mode: str, batch: int = 2, seed: int = 0) -> dict:
    """Peak stored-activation elements (by ledger category) for one train step."""
    cfg = replace(config, frames_in=min(config.frames_in, 3), frames_out=1)
    params = mdl.init_model(cfg, seed, "seeded")
    rng = np.random.Generator(np.random.PCG64(seed + 7000))
    frames = _seeded_frames(rng, cfg, cfg.frames_in, lead=(batch,))
    targets = _seeded_frames(rng, cfg, cfg.frames_out, lead=(batch,))
    ledger = MemoryLedger()
    loss_and_grads(params, frames, targets, cfg, mode, ledger)
    return ledger.snapshot()


def check_memory(config: ModelConfig, depths: tuple = (4, 8, 16)) -> CheckResult:
    """Reversible mode: equal intra-stack peaks at all depths.  Stored mode:
    linear scaling, ratio exactly deepest/shallowest for the same category."""
    rev = {d: measure_peaks(stages_for_depth(config, d), "reversible") for d in depths}
    sto = {d: measure_peaks(stages_for_depth(config, d), "stored") for d in depths}
    rev_peaks = [rev[d]["peak"].get("coupling", 0) for d in depths]
    sto_peaks = [sto[d]["peak"].get("coupling", 0) for d in depths]
    equal = len(set(rev_peaks)) == 1
    want_ratio = depths[-1] / depths[0]
    ratio = sto_peaks[-1] / sto_peaks[0] if sto_peaks[0] else float("nan")
    passed = equal and ratio == want_ratio
    detail = (f"reversible coupling peaks {rev_peaks}, stored {sto_peaks}, "
              f"stored ratio {ratio:g} (want exactly {want_ratio:g})")
    return CheckResult("memory: depth-independent reversible peak",
                       passed, 0.0 if passed else 1.0, 0.0, detail)


# ---------------------------------------------------------------------------
# suite runners


def run_verification(run_cfg: RunConfig, precision: str | None = None,
                     seeds: int = 30) -> list[CheckResult]:
    """The `verify` subcommand's check list for a configured model."""
    config = run_cfg.model if precision is None else replace(run_cfg.model,
                                                             precision=precision)
    init = run_cfg.init
    return [
        check_shuffle_roundtrip(),
        check_autoencoder_roundtrip(config, seeds=seeds, init=init, base_seed=run_cfg.seed),
        check_predictor_roundtrip(config, seeds=max(10, seeds // 3), init=init,
                                  base_seed=run_cfg.seed),
        check_reconstruction(config, seeds=max(10, seeds // 3), init=init,
                             base_seed=run_cfg.seed),
        check_gradients(config, seed=run_cfg.seed, init=init),
    ]


def format_report(results: list[CheckResult]) -> str:
    lines = [r.line() for r in results]
    verdict = "all checks passed" if all(r.passed for r in results) else "CHECKS FAILED"
    return "\n".join(lines + [verdict])
