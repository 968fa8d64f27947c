"""Scaling micro-benchmarks: generator forward pass, factor assembly, eigenvalue checks.

Every sample records the per-state wall time of one batched call. Inputs are
prepared before the timer starts and one warm-up call per configuration is
discarded.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from . import gan, linalg

DEFAULT_DIMS = (32, 48, 64, 96, 128, 192, 256)
DEFAULT_REPEATS = 15
DEFAULT_THREADS = 4
PPT_MAX_DIM = 32

SAMPLE_COLUMNS = ["op", "d", "batch", "repeat", "threads", "seconds_per_state"]
SUMMARY_COLUMNS = ["op", "d", "median", "mean", "ci95_lo", "ci95_hi"]


@dataclass
class BenchConfig:
    dims: list = field(default_factory=lambda: list(DEFAULT_DIMS))
    batch_sizes: list = field(default_factory=lambda: [64])
    repeats: int = DEFAULT_REPEATS
    thread_cap: int = DEFAULT_THREADS
    include_ppt_up_to: int = PPT_MAX_DIM
    seed: int = 0
    kinds: tuple = ("direct", "cholesky", "ldl")

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        self.batch_sizes = [int(b) for b in self.batch_sizes]
        if list(self.dims) != sorted(self.dims) or len(set(self.dims)) != len(self.dims):
            raise ValueError("dims must be strictly ascending")
        if any(d < 2 for d in self.dims):
            raise ValueError("dims must be >= 2")
        if not self.batch_sizes or any(b < 1 for b in self.batch_sizes):
            raise ValueError("batch sizes must be >= 1")
        if self.repeats < 2:
            raise ValueError("repeats >= 2 required")
        if self.thread_cap < 1:
            raise ValueError("thread_cap >= 1 required")


@dataclass(frozen=True)
class BenchSample:
    op: str
    d: int
    batch: int
    repeat: int
    threads: int
    seconds_per_state: float

    def __post_init__(self):
        if not self.seconds_per_state > 0:
            raise ValueError("seconds_per_state must be positive")


def effective_threads(cap: int) -> int:
    """Thread cap clipped to the cores this process may run on.

    Asking a BLAS pool for more threads than cores makes its workers spin
    against each other and inflates timings by orders of magnitude.
    """
    try:
        cores = len(os.sched_getaffinity(0))
    except AttributeError:
        cores = os.cpu_count() or 1
    return max(1, min(cap, cores))


def _time_call(fn) -> float:
    t0 = time.perf_counter_ns()
    fn()
    # clamp to one clock tick so a sample never reads as zero
    return max(time.perf_counter_ns() - t0, 1) * 1e-9


def _run(op, d, batch, config, fn, guard=None) -> list:
    out = fn()
    if guard is not None:
        guard(out)
    samples = []
    for r in range(config.repeats):
        sec = _time_call(fn)
        samples.append(BenchSample(op, d, batch, r, effective_threads(config.thread_cap),
                                       sec / batch))
    return samples


# forward pass -----------------------------------------------------------------

def _generator_forward(kind, params, z, d):
    blocks = gan.generator_blocks(kind, d)
    h = ad.forward(blocks["G.in."], params, z, prefix="G.in.")
    r = ad.forward(blocks["G.res."], params, h, prefix="G.res.")
    return ad.forward(blocks["G.head."], params, h + r, prefix="G.head.").value


def bench_forward(config: BenchConfig) -> list:
    """Untrained generator trunk plus a head sized for dimension ``d``; no assembly."""
    samples = []
    with threadpool_limits(limits=effective_threads(config.thread_cap)):
        for kind in config.kinds:
            kind = gan.parse_kind(kind)
            for d in config.dims:
                rng = np.random.default_rng([config.seed, d])
                params = gan.init_params(kind, rng, d=d, discriminator=False).frozen()
                width = gan.head_size(kind, d)
                for b in config.batch_sizes:
                    z = rng.standard_normal((b, gan.LATENT_DIM))

                    def guard(out, b=b, width=width):
                        if out.shape != (b, width) or not np.all(np.isfinite(out)):
                            raise RuntimeError("forward pass produced a bad head")
                    samples += _run(f"forward_{kind.value}", d, b, config,
                                    lambda: _generator_forward(kind, params, z, d), guard)
    return samples


# assembly ---------------------------------------------------------------------

def assemble_cholesky(lre, lim):
    """``L L^H / Tr`` for complex lower factors given as real/imaginary stacks."""
    lt_re, lt_im = np.swapaxes(lre, -1, -2), np.swapaxes(lim, -1, -2)
    re = lre @ lt_re + lim @ lt_im
    im = lim @ lt_re - lre @ lt_im
    tr = np.trace(re, axis1=-2, axis2=-1)[:, None, None]
    return re / tr, im / tr


def assemble_ldl(lre, lim, dpos):
    lt_re, lt_im = np.swapaxes(lre, -1, -2), np.swapaxes(lim, -1, -2)
    dre, dim = lre * dpos[:, None, :], lim * dpos[:, None, :]
    re = dre @ lt_re + dim @ lt_im
    im = dim @ lt_re - dre @ lt_im
    tr = np.trace(re, axis1=-2, axis2=-1)[:, None, None]
    return re / tr, im / tr


def _factors(rng, b, d, unit):
    lre = np.tril(rng.standard_normal((b, d, d)), -1)
    lim = np.tril(rng.standard_normal((b, d, d)), -1)
    diag = np.ones(d) if unit else np.abs(rng.standard_normal((b, d))) + 0.1
    lre[:, np.arange(d), np.arange(d)] = diag
    return lre, lim


def _identity_guard(d):
    eye = np.eye(d)[None]
    re, im = assemble_cholesky(eye.copy(), np.zeros((1, d, d)))
    if not (np.allclose(re, eye / d) and np.allclose(im, 0.0)):
        raise RuntimeError("identity factor did not assemble to I/d")


def bench_assembly(config: BenchConfig) -> list:
    """``L L^H`` and ``L D L^H`` products with trace normalisation on random factors."""
    samples = []
    with threadpool_limits(limits=effective_threads(config.thread_cap)):
        for d in config.dims:
            _identity_guard(d)
            rng = np.random.default_rng([config.seed, d, 1])
            for b in config.batch_sizes:
                lre, lim = _factors(rng, b, d, unit=False)
                samples += _run("assembly_cholesky", d, b, config,
                                lambda: assemble_cholesky(lre, lim))
                ure, uim = _factors(rng, b, d, unit=True)
                dpos = rng.uniform(0.1, 1.0, (b, d))
                samples += _run("assembly_ldl", d, b, config,
                                lambda: assemble_ldl(ure, uim, dpos))
    return samples


# eigenvalue checks -------------------------------------------------------------

def _random_states(rng, b, d):
    x = rng.standard_normal((b, d, d)) + 1j * rng.standard_normal((b, d, d))
    rho = x @ np.conj(np.swapaxes(x, -1, -2))
    return rho / np.trace(rho, axis1=-2, axis2=-1).real[:, None, None]


def psd_check(rho, tol: float = linalg.PSD_TOL) -> np.ndarray:
    return np.linalg.eigvalsh(rho)[..., 0] >= -tol


def ppt_check(rho, tol: float = linalg.PSD_TOL) -> np.ndarray:
    """True where the partial transpose over the second half-system is PSD."""
    b, d, _ = rho.shape
    half = int(round(np.sqrt(d)))
    if half * half != d:
        da, db = 2, d // 2
    else:
        da, db = half, half
    pt = rho.reshape(b, da, db, da, db).swapaxes(2, 4).reshape(b, d, d)
    return np.linalg.eigvalsh(pt)[..., 0] >= -tol


def bench_checks(config: BenchConfig) -> list:
    """Eigensolve-based PSD timing for every ``d``; PPT only up to ``include_ppt_up_to``."""
    samples = []
    with threadpool_limits(limits=effective_threads(config.thread_cap)):
        for d in config.dims:
            if not psd_check(np.eye(d)[None] / d)[0]:
                raise RuntimeError("PSD check rejected the maximally mixed state")
            rng = np.random.default_rng([config.seed, d, 2])
            for b in config.batch_sizes:
                rho = _random_states(rng, b, d)
                samples += _run("check_psd", d, b, config, lambda: psd_check(rho))
                if d <= config.include_ppt_up_to and d % 2 == 0:
                    samples += _run("check_ppt", d, b, config, lambda: ppt_check(rho))
    return samples


def run_all(config: BenchConfig) -> list:
    return bench_forward(config) + bench_assembly(config) + bench_checks(config)


# statistics -------------------------------------------------------------------

def _mean_ci(x):
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    if len(x) < 2:
        return m, m, m
    half = stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / np.sqrt(len(x))
    return m, m - half, m + half


def summarize(samples) -> list:
    """One row per ``(op, d)``: median, mean and 95% t-interval of the mean."""
    groups = {}
    for s in samples:
        groups.setdefault((s.op, s.d), []).append(s.seconds_per_state)
    rows = []
    for (op, d), vals in sorted(groups.items()):
        m, lo, hi = _mean_ci(vals)
        rows.append({"op": op, "d": d, "median": float(np.median(vals)), "mean": m,
                     "ci95_lo": lo, "ci95_hi": hi})
    return rows


def fit_slope(samples, d_min: int = 32, op: str | None = None):
    """OLS slope of log(median time) on log(d) over ``d >= d_min``.

    Returns ``(slope, (lo, hi))`` with a 95% t-interval on the slope.
    ``samples`` may also be ``(d, seconds)`` pairs.
    """
    groups = {}
    for s in samples:
        if isinstance(s, BenchSample):
            if op is not None and s.op != op:
                continue
            d, t = s.d, s.seconds_per_state
        else:
            d, t = s
        if d >= d_min:
            groups.setdefault(d, []).append(t)
    if len(groups) < 3:
        raise ValueError(f"need at least 3 distinct d >= {d_min}, got {len(groups)}")
    ds = np.array(sorted(groups), dtype=float)
    x = np.log(ds)
    y = np.log([np.median(groups[d]) for d in sorted(groups)])
    res = stats.linregress(x, y)
    dof = len(x) - 2
    half = stats.t.ppf(0.975, dof) * res.stderr if dof > 0 else float("inf")
    return float(res.slope), (float(res.slope - half), float(res.slope + half))


def slope_report(samples, d_min: int = 32) -> list:
    ops = sorted({s.op for s in samples})
    out = []
    for op in ops:
        try:
            slope, ci = fit_slope(samples, d_min, op)
        except ValueError:
            continue
        out.append({"op": op, "d_min": d_min, "slope": slope, "ci95": list(ci)})
    return out


# output -----------------------------------------------------------------------

def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def samples_csv(samples) -> str:
    return _csv(SAMPLE_COLUMNS, [{"op": s.op, "d": s.d, "batch": s.batch, "repeat": s.repeat,
                                  "threads": s.threads,
                                  "seconds_per_state": repr(s.seconds_per_state)}
                                 for s in samples])


def summary_csv(rows) -> str:
    return _csv(SUMMARY_COLUMNS, [{k: (repr(v) if isinstance(v, float) else v)
                                   for k, v in r.items()} for r in rows])


def slopes_json(report) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
