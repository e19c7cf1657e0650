"""Monte Carlo estimators built on the path engine.

The gradient representation reads, per horizontal direction j,

    T grad_j = E[ F(Z_T) (int_0^T M dW)_j - G_T^j F(Z_T) + DF(Z_T) Y_T^j ]

and the estimators below evaluate the three terms per path, so the same
per-path array yields the estimate, its standard error and the term
breakdown. The classical estimator is the same computation on a scenario
whose extra terms are identically zero, which makes the reduction to the
scalar formula exact to the last bit on a shared seed.

All reductions run over a per-path contribution array laid out in path
order, so results are bit-identical regardless of chunking.
"""

from __future__ import annotations

import copy
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .drivers import IncrementDriver
from .paths import EngineSettings, PathEngine, _stack_states


@dataclass
class GradientEstimate:
    scenario: str
    method: str                     # bundle | classical | fd
    gradient: np.ndarray            # (m, n2)
    stderr: np.ndarray              # (m, n2)
    n_paths: int
    n_steps: int
    horizon: float
    seed: int
    settings: dict
    terms: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    semigroup: np.ndarray | None = None
    semigroup_stderr: np.ndarray | None = None


def _chunk_ranges(n_paths, chunk_size):
    for start in range(0, n_paths, chunk_size):
        yield start, min(start + chunk_size, n_paths)


def _run(scenario, n_paths, seed, settings, start_states, per_path, workers=1):
    """Chunked simulation; `per_path(block, sl)` stores contributions.

    With `workers > 1` the chunks are dealt round-robin to worker threads.
    Each worker owns a private engine (the field evaluators memoize), every
    chunk writes a disjoint path range, and the diagnostics are reduced with
    order-independent operations, so the worker count cannot change any
    output bit.
    """
    driver = IncrementDriver(seed)
    ranges = list(_chunk_ranges(n_paths, settings.chunk_size))
    t0 = time.time()

    def run_ranges(engine, todo):
        stats = []
        for start, stop in todo:
            idx = np.arange(start, stop)
            starts = [s.take(np.zeros(stop - start, dtype=int))
                      for s in start_states]
            block = engine.run_chunk(driver, idx, starts)
            per_path(block, slice(start, stop))
            stats.append((int(np.sum(block.retries > 0)),
                          int(np.max(block.retries, initial=0)),
                          block.max_frame_defect))
        return stats

    if workers <= 1 or len(ranges) <= 1:
        all_stats = run_ranges(PathEngine(scenario, settings), ranges)
    else:
        groups = [g for g in (ranges[w::workers] for w in range(workers)) if g]
        engines = [PathEngine(copy.deepcopy(scenario), settings) for _ in groups]
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            futures = [pool.submit(run_ranges, eng, grp)
                       for eng, grp in zip(engines, groups)]
            all_stats = [s for f in futures for s in f.result()]

    return {
        "elapsed_seconds": time.time() - t0,
        "n_retried_paths": sum(s[0] for s in all_stats),
        "max_retry": max((s[1] for s in all_stats), default=0),
        "max_frame_defect": max((s[2] for s in all_stats), default=0.0),
    }


def _theorem_terms(block, horizon):
    """Per-path term arrays of shape (P, m, n2), already divided by T."""
    f = block.f_value[0]
    df = block.df_value[0]
    mdw = block.mdw[0]
    t1 = np.einsum("pr,pj->pjr", f, mdw)
    t2 = -np.einsum("pjrs,ps->pjr", block.g2[0], f)
    t3 = np.einsum("pra,pja->pjr", df, block.yd[0])
    return t1 / horizon, t2 / horizon, t3 / horizon


def _mean_stderr(values):
    mean = values.mean(axis=0)
    if values.shape[0] > 1:
        se = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    else:
        se = np.full_like(mean, np.nan)
    return mean, se


def estimate_gradient(scenario, n_paths, seed, settings, x0=None, y0=None,
                      method="bundle", workers=1):
    """Bundle-theorem estimate of the horizontal gradient at the start state,
    componentwise in the initial frames, shape (m, n2)."""
    geom = scenario.geom
    m, n2 = geom.m, geom.n2
    start = scenario.initial_state(1, x0=x0, y0=y0)
    contrib = np.empty((n_paths, m, n2))
    fvals = np.empty((n_paths, n2))
    # per-chunk partial sums, reduced in chunk order below so that the
    # worker count cannot perturb the floating-point reduction
    term_chunks = {}

    def per_path(block, sl):
        t1, t2, t3 = _theorem_terms(block, settings.horizon)
        contrib[sl] = t1 + t2 + t3
        fvals[sl] = block.f_value[0]
        term_chunks[sl.start] = np.stack(
            [t1.sum(axis=0), t2.sum(axis=0), t3.sum(axis=0)]
        )

    diag = _run(scenario, n_paths, seed, settings, [start], per_path,
                workers=workers)
    term_sums = np.zeros((3, m, n2))
    for key in sorted(term_chunks):
        term_sums += term_chunks[key]
    grad, se = _mean_stderr(contrib)
    sg, sg_se = _mean_stderr(fvals)
    return GradientEstimate(
        scenario=scenario.name,
        method=method,
        gradient=grad,
        stderr=se,
        n_paths=n_paths,
        n_steps=settings.n_steps,
        horizon=settings.horizon,
        seed=seed,
        settings=_settings_dict(settings),
        terms={
            "noise_integral": term_sums[0] / n_paths,
            "curvature_integral": term_sums[1] / n_paths,
            "derived_process": term_sums[2] / n_paths,
        },
        diagnostics=diag,
        semigroup=sg,
        semigroup_stderr=sg_se,
    )


def estimate_gradient_classical(scenario, n_paths, seed, settings, x0=None,
                                workers=1):
    """Scalar Bismut formula; only valid for scenarios that carry no fiber
    content. Runs the identical engine and term combination, so on such a
    scenario it agrees with the bundle estimator bit for bit."""
    geom = scenario.geom
    if not scenario.vfields.is_zero:
        raise ValueError("classical estimator requires zero vertical fields")
    if not (geom.bundle1.is_flat and geom.bundle2.is_flat and geom.n2 == 1):
        raise ValueError("classical estimator requires trivial line bundles")
    return estimate_gradient(
        scenario, n_paths, seed, settings, x0=x0, method="classical",
        workers=workers,
    )


def fd_start_states(scenario, eps, x0=None, y0=None):
    """Start states for the central-difference oracle: the center plus a
    geodesic shift +-eps along each initial frame direction, with all frames
    parallel-transported and the fiber coordinates held fixed."""
    geom = scenario.geom
    center = scenario.initial_state(1, x0=x0, y0=y0)
    states = [center]
    for j in range(geom.m):
        for sign in (+1.0, -1.0):
            w = np.zeros((1, geom.m))
            w[0, j] = sign * eps
            states.append(geom.flow(center, w, 1.0, n_sub=4))
    return states


def estimate_gradient_fd(scenario, n_paths, seed, settings, eps=1e-3,
                         x0=None, y0=None, workers=1):
    """Finite-difference oracle for the horizontal gradient of the semigroup
    mean, using common random numbers across the shifted starts (one noise
    stream per path, shared by all 2m+1 runs, jointly resampled)."""
    geom = scenario.geom
    m, n2 = geom.m, geom.n2
    starts = fd_start_states(scenario, eps, x0=x0, y0=y0)
    contrib = np.empty((n_paths, m, n2))
    center_vals = np.empty((n_paths, n2))

    def per_path(block, sl):
        f = block.f_value                       # (2m+1, P, n2)
        center_vals[sl] = f[0]
        for j in range(m):
            contrib[sl, j] = (f[1 + 2 * j] - f[2 + 2 * j]) / (2.0 * eps)

    # the oracle reads only endpoint values, so skip the weight bookkeeping
    fd_settings = replace(settings, accumulators=False)
    diag = _run(scenario, n_paths, seed, fd_settings, starts, per_path,
                workers=workers)
    diag["fd_eps"] = eps
    grad, se = _mean_stderr(contrib)
    sg, sg_se = _mean_stderr(center_vals)
    return GradientEstimate(
        scenario=scenario.name,
        method="fd",
        gradient=grad,
        stderr=se,
        n_paths=n_paths,
        n_steps=settings.n_steps,
        horizon=settings.horizon,
        seed=seed,
        settings=_settings_dict(settings),
        diagnostics=diag,
        semigroup=sg,
        semigroup_stderr=sg_se,
    )


def _settings_dict(settings):
    return {
        "n_steps": settings.n_steps,
        "horizon": settings.horizon,
        "nbar": settings.nbar,
        "derived_drift": settings.derived_drift,
        "fk_side": settings.fk_side,
        "chunk_size": settings.chunk_size,
        "damping_enabled": settings.damping_enabled,
    }


# -- comparisons ----------------------------------------------------------------

PASS_Z = 4.0
WARN_Z = 6.0


def compare_estimates(a, b):
    """Componentwise z-scores of two estimates (or an estimate against an
    exact reference passed as (gradient, None))."""
    if isinstance(b, GradientEstimate):
        ref, ref_se = b.gradient, b.stderr
        ref_name = b.method
    else:
        ref, ref_se = np.asarray(b, dtype=float), None
        ref_name = "exact"
    var = np.square(a.stderr)
    if ref_se is not None:
        var = var + np.square(ref_se)
    z = (a.gradient - ref) / np.sqrt(var)
    zmax = float(np.max(np.abs(z)))
    status = "PASS" if zmax <= PASS_Z else ("WARN" if zmax <= WARN_Z else "FAIL")
    return {
        "z": z,
        "max_abs_z": zmax,
        "status": status,
        "estimate": a.gradient,
        "reference": ref,
        "reference_kind": ref_name,
    }


# -- studies ---------------------------------------------------------------------

def weak_order_study(scenario, n_paths, seed, horizon, h_values, chunk_size=20000,
                     settings_kwargs=None):
    """Self-convergence of the estimate under Brownian-consistent time
    refinement: the finest grid's increments are pair-summed onto each
    coarser grid, so the level differences estimate the weak error with the
    Monte Carlo noise common across levels. Returns log-log slope data.

    Restricted to scenarios that never reject (flat base), since rejection
    would break the increment coupling between levels."""
    settings_kwargs = settings_kwargs or {}
    h_values = sorted(float(h) for h in h_values)       # ascending; finest first
    n_fine = int(round(horizon / h_values[0]))
    factors = []
    for h in h_values:
        steps = horizon / h
        factor = n_fine / steps
        if abs(factor - round(factor)) > 1e-9:
            raise ValueError("step sizes must nest onto the finest grid")
        factors.append(int(round(factor)))

    engines = [
        PathEngine(
            scenario,
            EngineSettings(
                n_steps=int(round(horizon / h)), horizon=horizon,
                chunk_size=chunk_size, **settings_kwargs,
            ),
        )
        for h in h_values
    ]
    driver = IncrementDriver(seed)
    m, n2 = scenario.geom.m, scenario.geom.n2
    level_contrib = [np.empty((n_paths, m, n2)) for _ in h_values]
    start = scenario.initial_state(1)

    for lo, hi in _chunk_ranges(n_paths, chunk_size):
        idx = np.arange(lo, hi)
        raw = driver.normals(idx, 0, n_fine, m)
        fine = raw * np.sqrt(h_values[0])
        starts = _stack_states([start.take(np.zeros(hi - lo, dtype=int))])
        for lev, (engine, factor) in enumerate(zip(engines, factors)):
            if factor == 1:
                incr = fine
            else:
                incr = fine.reshape(hi - lo, -1, factor, m).sum(axis=2)
            out = engine._simulate_block(starts.copy(), incr, h_values[lev])
            state, f_val, df_val, mdw, g2, yd, rejected, _ = out
            if np.any(rejected):
                raise RuntimeError("refinement study path rejected; use a flat base")
            block_terms = (
                np.einsum("pr,pj->pjr", f_val, mdw)
                - np.einsum("pjrs,ps->pjr", g2, f_val)
                + np.einsum("pra,pja->pjr", df_val, yd)
            )
            level_contrib[lev][lo:hi] = block_terms / horizon

    estimates = [c.mean(axis=0) for c in level_contrib]
    ref = estimates[0]
    errs, hs = [], []
    for lev in range(1, len(h_values)):
        errs.append(float(np.max(np.abs(estimates[lev] - ref))))
        hs.append(h_values[lev])
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    return {
        "h_values": h_values,
        "estimates": [e for e in estimates],
        "errors_vs_finest": errs,
        "slope": slope,
    }


def stderr_scaling_study(scenario, seed, settings, n_values):
    """Monte Carlo error scaling: slope of log(mean stderr) vs log(n)."""
    ses = []
    for n in n_values:
        est = estimate_gradient(scenario, int(n), seed, settings)
        ses.append(float(np.mean(est.stderr)))
    slope = float(np.polyfit(np.log(np.asarray(n_values, float)), np.log(ses), 1)[0])
    return {"n_values": list(n_values), "stderr": ses, "slope": slope}
