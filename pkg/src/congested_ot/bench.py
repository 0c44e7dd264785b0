"""Runtime scaling and backend comparison for the structured-inverse sweep.

The sweep of rank-1 updates costs (N+L) passes over a dense (NL)x(NL)
inverse, so on square markets the work grows like N^5; dense re-inversion
after every update would pay (N+L)(NL)^3.  This module measures the shipped
implementation across a size sweep, fits the log-log exponent, and times the
numpy and numba kernels head to head on identical inputs.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .instances import PenalizedInstance, ProblemInstance
from .penalized import sherman_morrison_inverse

# Square markets with N*L closest to {64, 128, 256, 512} cells.
DEFAULT_SIDES = (8, 11, 16, 23)


def _timing_instance(side: int, seed: int = 0) -> PenalizedInstance:
    rng = np.random.default_rng(seed)
    base = ProblemInstance(
        n_types=side,
        n_schools=side,
        fixed_cost=np.zeros((side, side)),
        linear_cost=rng.uniform(0.1, 1.0, (side, side)),
        quad_cost=rng.uniform(1.0, 2.0, (side, side)),
        supply=rng.uniform(1.0, 10.0, side),
        capacity=rng.uniform(1.0, 10.0, side),
    )
    return PenalizedInstance(
        base=base,
        eps=rng.uniform(0.001, 0.01, side),
        delta=rng.uniform(0.001, 0.01, side),
    )


def _median_runtime(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def _repeat_schedule(sides, repeats):
    # More repetitions at the small sizes, where single calls are noisiest.
    ordered = sorted(sides, reverse=True)
    return {side: repeats + 2 * ordered.index(side) for side in sides}


def scaling_sweep(sides=DEFAULT_SIDES, repeats: int = 5, passes: int = 3) -> dict:
    """Median runtimes of the shipped inverse across square markets.

    Sizes are visited round-robin within each pass so slow system drift
    spreads evenly across them, and each size's median pools all passes.
    Returns the sides, cell counts, per-size medians in seconds, and the
    fitted log-log exponent of runtime against the market side N.
    """
    kernels.warm_up()
    instances = {side: _timing_instance(side) for side in sides}
    schedule = _repeat_schedule(sides, repeats)
    samples = {side: [] for side in sides}
    for sweep_pass in range(passes):
        for rep in range(max(schedule.values())):
            for side in sides:
                if rep >= schedule[side]:
                    continue
                if sweep_pass == 0 and rep == 0:
                    sherman_morrison_inverse(instances[side])  # warm
                start = time.perf_counter()
                sherman_morrison_inverse(instances[side])
                samples[side].append(time.perf_counter() - start)
    medians = [float(np.median(samples[side])) for side in sides]
    if len(sides) >= 2:
        exponent = float(np.polyfit(np.log(sides), np.log(medians), 1)[0])
    else:
        exponent = float("nan")
    return {
        "sides": list(sides),
        "cells": [s * s for s in sides],
        "median_seconds": medians,
        "fitted_exponent": exponent,
        "backend": kernels.backend(),
    }


def reinversion_baseline(side: int, repeats: int = 1) -> float:
    """Median runtime of re-inverting densely after every rank-1 update."""
    instance = _timing_instance(side)
    base = instance.base
    m = side * side

    def run():
        a_matrix = np.diag(base.quad_cost.ravel())
        ainv = np.linalg.inv(a_matrix)
        for i in range(side):
            u = np.zeros(m)
            u[i * side : (i + 1) * side] = np.sqrt(instance.eps[i])
            a_matrix += np.outer(u, u)
            ainv = np.linalg.inv(a_matrix)
        for j in range(side):
            v = np.zeros(m)
            v[j::side] = np.sqrt(instance.delta[j])
            a_matrix += np.outer(v, v)
            ainv = np.linalg.inv(a_matrix)
        return ainv

    return _median_runtime(run, repeats)


def backend_comparison(side: int = 16, repeats: int = 5) -> dict:
    """Time the numpy and numba sweeps on identical inputs.

    The numba timing is omitted (with the reason) when numba cannot be
    imported.
    """
    instance = _timing_instance(side)
    diag = 1.0 / instance.base.quad_cost.ravel()
    eps = np.ascontiguousarray(instance.eps)
    delta = np.ascontiguousarray(instance.delta)

    def time_sweep(sweep):
        kernels.warm_up(sweep)
        times = []
        for _ in range(repeats):
            ainv = np.diag(diag)
            start = time.perf_counter()
            sweep(ainv, eps, delta, side, side, 1e-12)
            times.append(time.perf_counter() - start)
        return float(np.median(times))

    result = {"side": side, "numpy_seconds": time_sweep(kernels.smw_sweep_numpy)}
    try:
        numba_sweep = kernels.get_numba_sweep()
    except ImportError as exc:
        result["numba_seconds"] = None
        result["numba_unavailable"] = str(exc)
        return result
    result["numba_seconds"] = time_sweep(numba_sweep)
    result["speedup_numba_over_numpy"] = result["numpy_seconds"] / result["numba_seconds"]
    return result


def run_benchmark(sides=DEFAULT_SIDES, repeats: int = 5) -> dict:
    """Full benchmark: scaling sweep, backend comparison, baseline check."""
    sweep = scaling_sweep(sides=sides, repeats=repeats)
    largest = max(sides)
    baseline = reinversion_baseline(largest)
    return {
        "scaling": sweep,
        "comparison": backend_comparison(side=min(16, largest), repeats=repeats),
        "baseline": {
            "side": largest,
            "reinversion_seconds": baseline,
            "sweep_seconds": sweep["median_seconds"][list(sides).index(largest)],
            "sweep_faster": sweep["median_seconds"][list(sides).index(largest)] < baseline,
        },
    }
