"""Calibration against pairs of analytic 1-D distributions with known divergences."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, stats

from ..validate import DiscriminatorConfig, DivergenceReport, divergence_report


@dataclass(frozen=True)
class Mixture1D:
    """A 1-D Gaussian mixture; a single Gaussian is the one-component case."""

    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def pdf(self, x):
        return sum(w * stats.norm.pdf(x, m, s) for w, m, s in zip(self.weights, self.means, self.stds))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        return (np.asarray(self.means)[comp] + np.asarray(self.stds)[comp] * rng.standard_normal(n))[:, None]

    @property
    def support(self) -> tuple[float, float]:
        lo = min(m - 12 * s for m, s in zip(self.means, self.stds))
        hi = max(m + 12 * s for m, s in zip(self.means, self.stds))
        return lo, hi


def gaussian(mu: float, sigma: float) -> Mixture1D:
    return Mixture1D((1.0,), (mu,), (sigma,))


# (p = "real", q = "synthetic")
ORACLE_CASES: dict[str, tuple[Mixture1D, Mixture1D]] = {
    "identical": (gaussian(0.0, 1.0), gaussian(0.0, 1.0)),
    "shift": (gaussian(0.0, 1.0), gaussian(1.0, 1.0)),
    "scale": (gaussian(0.0, 1.0), gaussian(0.0, 2.0)),
    "gmm": (Mixture1D((0.5, 0.5), (-2.0, 2.0), (1.0, 1.0)), gaussian(0.0, 2.0)),
}


def _quad(f, p: Mixture1D, q: Mixture1D) -> float:
    lo = min(p.support[0], q.support[0])
    hi = max(p.support[1], q.support[1])
    val, _ = integrate.quad(f, lo, hi, limit=400, epsabs=1e-12, epsrel=1e-10)
    return float(val)


def true_kl(p: Mixture1D, q: Mixture1D) -> float:
    """KL(p || q) in nats; closed form for two Gaussians, quadrature otherwise."""
    if len(p.weights) == 1 and len(q.weights) == 1:
        (m1,), (s1,), (m2,), (s2,) = p.means, p.stds, q.means, q.stds
        return math.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5

    def f(x):
        a = p.pdf(x)
        return 0.0 if a <= 0 else a * math.log(a / q.pdf(x))

    return _quad(f, p, q)


def true_js(p: Mixture1D, q: Mixture1D) -> float:
    """JS(p, q) in bits by numerical integration."""

    def term(a, m):
        return 0.0 if a <= 0 else a * math.log2(a / m)

    def f(x):
        a, b = p.pdf(x), q.pdf(x)
        m = 0.5 * (a + b)
        return 0.5 * term(a, m) + 0.5 * term(b, m)

    return max(0.0, _quad(f, p, q))


@dataclass
class OracleReport:
    case: str
    true_kl: float
    true_js: float
    report: DivergenceReport
    kl_rel_error: float | None  # None when the true value is 0
    js_abs_error: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["report"] = self.report.to_dict()
        return d


def oracle_mode(
    case: str,
    m: int = 5000,
    l: int = 5000,
    repeats: int = 5,
    seed: int = 0,
    config: DiscriminatorConfig = DiscriminatorConfig(),
) -> OracleReport:
    """Run the discriminator estimators on a named analytic pair and compare to the truth."""
    if case not in ORACLE_CASES:
        raise KeyError(f"unknown oracle case {case!r}; choose from {sorted(ORACLE_CASES)}")
    p, q = ORACLE_CASES[case]
    # twice the rows each repeat needs, so repeats see different real carves
    pool = p.sample(2 * (m + l), np.random.default_rng([seed, 0]))

    def sampler(n: int, s: int) -> np.ndarray:
        return q.sample(n, np.random.default_rng([seed, 1, s]))

    rep = divergence_report(sampler, pool, m, l, repeats=repeats, seed=seed, config=config)
    kl, js = true_kl(p, q), true_js(p, q)
    rep.provenance = {"oracle_case": case, "seed": seed}
    return OracleReport(
        case=case,
        true_kl=kl,
        true_js=js,
        report=rep,
        kl_rel_error=abs(rep.kl_mean - kl) / kl if kl > 0 else None,
        js_abs_error=abs(rep.js_mean - js),
    )
