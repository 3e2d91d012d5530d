"""Finite-difference checks of every head and the full episode loss on toy sizes."""

from __future__ import annotations

from dataclasses import dataclass


from .databank import SynthSpec, synth_generate
from .episodes import sample_episode
from .gradcore import EVAL, RngStream, finite_diff_check, mul, tsum
from .model import HeadConfig, HeadParams, feature_attention, gamma_sem, gamma_vis, tau_prior
from .trainer import episode_loss

HEADS = {
    "tau_prior": (tau_prior, "d_e"),
    "gamma_vis": (gamma_vis, "d_v"),
    "gamma_sem": (gamma_sem, "d_e"),
    "eta_feat": (feature_attention, "d_e"),
}


@dataclass
class SuiteResult:
    instance: int
    target: str
    n_checked: int
    rel_error: float
    passed: bool
    detail: str


def _toy_episode(seed: int, d_v: int, d_e: int, ways: int, shots: int, queries: int):
    spec = SynthSpec(
        n_classes=ways + 1, samples_per_class=shots + queries + 2, d_v=d_v, d_e=d_e,
        class_mean_scale=1.0, within_class_std=0.7, semantic_noise_std=0.2, seed=seed,
        split_counts=(ways + 1, 0, 0),
    )
    bank, table = synth_generate(spec)
    return sample_episode(bank, table, ways, shots, queries, RngStream(seed, "gradsuite/episode").generator())


def gradient_suite(
    seed: int = 0,
    instances: int = 100,
    d_v: int = 8,
    d_e: int = 6,
    ways: int = 3,
    shots: int = 2,
    queries: int = 3,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int = 200,
) -> list[SuiteResult]:
    """Check each head (random linear readout of its output) and the combined
    episode loss, dropout off, on ``instances`` seeded random draws."""
    results = []
    for inst in range(instances):
        rng = RngStream(seed, "gradsuite").generator(inst)
        cfg = HeadConfig(d_v=d_v, d_e=d_e, alpha=float(rng.uniform(0.05, 0.95)), dist_scale=float(rng.uniform(0.5, 4.0)))
        params = HeadParams.init(cfg, seed=int(rng.integers(2**32)))
        for p in params.params.values():
            p.data[...] += rng.normal(0.0, 0.1, size=p.data.shape)
        dims = {"d_v": d_v, "d_e": d_e}
        for head, (fn, in_dim) in HEADS.items():
            x = rng.normal(size=(4, dims[in_dim]))
            readout = rng.normal(size=fn(x, params, EVAL).shape)

            def loss(fn=fn, x=x, readout=readout):
                return tsum(mul(fn(x, params, EVAL), readout))

            targets = [p for name, p in params.params.items() if name.startswith(head + ".")]
            rep = finite_diff_check(loss, targets, eps, tol, max_coords, rng, raise_on_failure=False)
            results.append(SuiteResult(inst, head, rep.n_checked, rep.rel_error, rep.passed, str(rep)))

        ep = _toy_episode(int(rng.integers(2**32)), d_v, d_e, ways, shots, queries)
        rep = finite_diff_check(
            lambda: episode_loss(ep, params, "combined", EVAL),
            params.for_variant("combined"), eps, tol, max_coords, rng, raise_on_failure=False,
        )
        results.append(SuiteResult(inst, "combined_loss", rep.n_checked, rep.rel_error, rep.passed, str(rep)))
    return results


def summarize(results: list[SuiteResult]) -> dict:
    out = {}
    for target in dict.fromkeys(r.target for r in results):
        rs = [r for r in results if r.target == target]
        out[f"gradcheck.{target}.worst_rel_error"] = max(r.rel_error for r in rs)
        out[f"gradcheck.{target}.failures"] = sum(not r.passed for r in rs)
    out["gradcheck.instances"] = len({r.instance for r in results})
    out["gradcheck.passed"] = all(r.passed for r in results)
    return out

