"""Central finite-difference checks of the analytic (autograd) gradients.

Each suite draws seeded random configurations, differentiates with autograd
in float64 and compares against central differences.  The error measure is
``||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)`` over the
whole Jacobian of one configuration.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .config import GroundingConfig
from .generator import proposal_slices
from .losses import pull_loss, push_inter_loss, push_intra_loss
from .mask_math import gaussian_log_mask, gaussian_mask, log_mixture_pool, mixture_pool
from .reconstructor import Reconstructor, masked_token_ce
from .attention import safe_log_mask

FD_STEP = 1e-5


def central_difference(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor,
                       step: float = FD_STEP) -> torch.Tensor:
    """Jacobian ``(out_size, x.numel())`` of ``fn`` at ``x`` by central differences."""
    x = x.detach().clone().reshape(-1)
    cols = []
    with torch.no_grad():
        for i in range(x.numel()):
            hi, lo = x.clone(), x.clone()
            hi[i] += step
            lo[i] -= step
            cols.append((fn(hi).reshape(-1) - fn(lo).reshape(-1)) / (2 * step))
    return torch.stack(cols, dim=1)


def analytic_jacobian(fn, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().reshape(-1).requires_grad_(True)
    jac = torch.autograd.functional.jacobian(lambda v: fn(v).reshape(-1), x)
    return jac.reshape(-1, x.numel())


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    diff = float(torch.linalg.norm(a - b))
    scale = max(float(torch.linalg.norm(a)), float(torch.linalg.norm(b)), 1e-12)
    return diff / scale


def check(fn, x, step: float = FD_STEP) -> float:
    return relative_error(analytic_jacobian(fn, x), central_difference(fn, x, step))


@dataclass
class SuiteResult:
    name: str
    trials: int
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28} trials={self.trials:<4d} max_rel_err={self.max_error:.3e} "
                f"tol={self.tolerance:.0e} ({self.seconds:.1f}s)")


def _random_config(rng: np.random.Generator, max_K: int = 5, max_T: int = 32):
    K = int(rng.integers(1, max_K + 1))
    T = int(rng.integers(2, max_T + 1))
    M = K * (K + 1) // 2
    centers = torch.as_tensor(rng.uniform(0.05, 0.95, M))
    widths = torch.as_tensor(rng.uniform(0.05, 0.25, M))
    weights = torch.cat([torch.softmax(torch.as_tensor(rng.standard_normal(k)), 0)
                         for k in range(1, K + 1)])
    return K, T, centers, widths, weights


def _split(x: torch.Tensor, M: int):
    return x[:M], x[M:2 * M], x[2 * M:]


def _mixtures(K, T, c, s, w):
    curves = []
    for sl in proposal_slices(K):
        curves.append(mixture_pool(gaussian_mask(c[sl], s[sl], T), w[sl], validate=False))
    return torch.stack(curves)


def formula_suite(trials: int = 100, seed: int = 0, tolerance: float = 1e-4) -> list[SuiteResult]:
    """Gaussian mask, mixture pooling, pulling and both pushing losses."""
    rng = np.random.default_rng(seed)
    configs = [_random_config(rng) for _ in range(trials)]
    lam = 0.15

    def eq3(K, T, c, s, w):
        x = torch.stack([c[0], s[0]])
        return check(lambda v: gaussian_mask(v[0], v[1], T), x)

    def eq4(K, T, c, s, w):
        sl = proposal_slices(K)[-1]
        M = sl.stop - sl.start
        x = torch.cat([c[sl], s[sl], w[sl]])
        return check(lambda v: mixture_pool(gaussian_mask(v[:M], v[M:2 * M], T), v[2 * M:],
                                            validate=False), x)

    def eq5(K, T, c, s, w):
        return check(lambda v: pull_loss([v[sl] for sl in proposal_slices(K)]), c)

    def eq6(K, T, c, s, w):
        M = c.numel()

        def fn(v):
            cc, ss, _ = _split(v, M)
            return push_intra_loss([gaussian_mask(cc[sl], ss[sl], T) for sl in proposal_slices(K)], lam)
        return check(fn, torch.cat([c, s]))

    def eq7(K, T, c, s, w):
        M = c.numel()

        def fn(v):
            cc, ss, ww = _split(v, M)
            return push_inter_loss(_mixtures(K, T, cc, ss, ww), lam)
        return check(fn, torch.cat([c, s, w]))

    results = []
    for name, fn in (("gaussian_mask", eq3), ("mixture_pool", eq4), ("pull_loss", eq5),
                     ("push_intra_loss", eq6), ("push_inter_loss", eq7)):
        start = time.perf_counter()
        errs = [fn(*cfg) for cfg in configs]
        results.append(SuiteResult(name, trials, max(errs), tolerance, time.perf_counter() - start))
    return results


def tiny_reconstructor(seed: int = 0) -> tuple[Reconstructor, GroundingConfig]:
    cfg = GroundingConfig(d_V=16, d_Q=16, d_G=16, d_R=16, heads=2, layers=2, T_max=8, N_max=4,
                          vocab_size=12, K=2, seed=seed)
    torch.manual_seed(seed)
    return Reconstructor(cfg).double(), cfg


def reconstruction_suite(trials: int = 10, seed: int = 0, tolerance: float = 1e-3) -> list[SuiteResult]:
    """CE gradient w.r.t. mask centers/widths through the mask-conditioned attention."""
    rng = np.random.default_rng(seed)
    model, cfg = tiny_reconstructor(seed)
    T, N = cfg.T_max, cfg.N_max
    errs_curve, errs_log = [], []
    start = time.perf_counter()
    for _ in range(trials):
        E = int(rng.integers(1, 4))
        video = torch.as_tensor(rng.standard_normal((1, T, cfg.d_V)))
        query = torch.as_tensor(rng.integers(2, cfg.vocab_size, size=(1, N)))
        hidden = torch.zeros(1, N, dtype=torch.bool)
        hidden[0, rng.choice(N, size=2, replace=False)] = True
        vlen, qlen = torch.tensor([T]), torch.tensor([N])
        weights = torch.softmax(torch.as_tensor(rng.standard_normal(E)), 0)
        x = torch.cat([torch.as_tensor(rng.uniform(0.1, 0.9, E)), torch.as_tensor(rng.uniform(0.1, 0.3, E))])

        def ce(log_mask):
            mm = model(video, vlen, query, qlen, hidden, log_mask.reshape(1, 1, T))
            return masked_token_ce(model.vocab_head(mm.per_word[..., :N, :]), query.unsqueeze(1),
                                   hidden.unsqueeze(1))

        def via_curve(v):
            curve = mixture_pool(gaussian_mask(v[:E], v[E:], T), weights, validate=False)
            return ce(safe_log_mask(curve))

        def via_log(v):
            return ce(log_mixture_pool(gaussian_log_mask(v[:E], v[E:], T), torch.log(weights)))

        errs_curve.append(check(via_curve, x))
        errs_log.append(check(via_log, x))
    elapsed = time.perf_counter() - start
    return [SuiteResult("reconstruction_ce(curve)", trials, max(errs_curve), tolerance, elapsed / 2),
            SuiteResult("reconstruction_ce(log)", trials, max(errs_log), tolerance, elapsed / 2)]


def run_all(trials: int = 100, seed: int = 0) -> list[SuiteResult]:
    return formula_suite(trials, seed) + reconstruction_suite(max(1, trials // 10), seed)
