import json

import numpy as np
import pytest

from pigan import bench
from pigan.bench import BenchConfig, BenchSample


def _pairs(f, dims):
    return [(d, f(d)) for d in dims]


def test_slope_quadratic():
    slope, (lo, hi) = bench.fit_slope(_pairs(lambda d: float(d) ** 2, [32, 64, 128, 256]))
    assert abs(slope - 2.0) <= 1e-9
    assert lo <= slope <= hi


def test_slope_cubic():
    slope, _ = bench.fit_slope(_pairs(lambda d: 5.0 * d**3, [32, 48, 64, 96]))
    assert slope == pytest.approx(3.0, abs=1e-9)


def test_slope_mixed_model():
    slope, _ = bench.fit_slope(_pairs(lambda d: float(d) ** 2 + 100.0 * d**3, [64, 128, 256, 512]),
                               d_min=64)
    assert 2.8 <= slope <= 3.0


def test_slope_uses_medians_and_d_min():
    samples = [BenchSample("op", d, 1, r, 1, d**2 * (1 + 0.1 * (r == 2) * 50)) for d in (16, 32, 64, 128)
               for r in range(3)]
    slope, _ = bench.fit_slope(samples, d_min=32)
    assert slope == pytest.approx(2.0, abs=1e-9)


def test_slope_needs_three_points():
    with pytest.raises(ValueError):
        bench.fit_slope(_pairs(float, [32, 64]))
    with pytest.raises(ValueError):
        bench.fit_slope(_pairs(float, [8, 16, 32, 64]), d_min=64)


def test_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(dims=[64, 32])
    with pytest.raises(ValueError):
        BenchConfig(repeats=1)
    with pytest.raises(ValueError):
        BenchConfig(thread_cap=0)
    c = BenchConfig()
    assert c.repeats == 15 and c.thread_cap == 4 and c.include_ppt_up_to == 32
    assert c.dims[0] == 32 and c.dims[-1] == 256


def test_sample_must_be_positive():
    with pytest.raises(ValueError):
        BenchSample("op", 4, 1, 0, 1, 0.0)


def test_assembly_guards():
    d = 8
    re, im = bench.assemble_cholesky(np.eye(d)[None], np.zeros((1, d, d)))
    assert np.allclose(re[0], np.eye(d) / d) and np.allclose(im, 0)
    rng = np.random.default_rng(0)
    lre, lim = bench._factors(rng, 3, d, unit=True)
    dpos = rng.uniform(0.1, 1.0, (3, d))
    re, im = bench.assemble_ldl(lre, lim, dpos)
    l = lre + 1j * lim
    want = l @ (dpos[:, :, None] * np.conj(np.swapaxes(l, -1, -2)))
    want /= np.trace(want, axis1=-2, axis2=-1)[:, None, None]
    assert np.allclose(re + 1j * im, want, atol=1e-14)


def test_checks_guard():
    assert bench.psd_check(np.eye(16)[None] / 16)[0]
    phi = np.zeros(4)
    phi[[0, 3]] = 1 / np.sqrt(2)
    bell = np.outer(phi, phi)[None]
    assert bench.psd_check(bell)[0]
    assert not bench.ppt_check(bell)[0]
    assert bench.ppt_check(np.eye(4)[None] / 4)[0]


@pytest.fixture(scope="module")
def small_run():
    cfg = BenchConfig(dims=[8, 16, 32, 48, 64], batch_sizes=[4], repeats=2, thread_cap=1,
                      include_ppt_up_to=32)
    return cfg, bench.run_all(cfg)


def test_small_run_rows(small_run):
    cfg, samples = small_run
    ops = {s.op for s in samples}
    assert ops == {"forward_direct", "forward_cholesky", "forward_ldl", "assembly_cholesky",
                   "assembly_ldl", "check_psd", "check_ppt"}
    assert max(s.d for s in samples if s.op == "check_ppt") == 32
    assert all(s.threads == 1 and s.seconds_per_state > 0 for s in samples)
    per_op = {op: sum(s.op == op for s in samples) for op in ops}
    assert per_op["check_psd"] == len(cfg.dims) * cfg.repeats


def test_small_run_outputs(small_run):
    _, samples = small_run
    lines = bench.samples_csv(samples).split("\n")
    assert lines[0] == "op,d,batch,repeat,threads,seconds_per_state"
    assert len(lines) == len(samples) + 2
    rows = bench.summarize(samples)
    assert bench.summary_csv(rows).startswith("op,d,median,mean,ci95_lo,ci95_hi\n")
    for r in rows:
        assert r["ci95_lo"] <= r["mean"] <= r["ci95_hi"]
    report = json.loads(bench.slopes_json(bench.slope_report(samples, d_min=8)))
    assert sorted(r["op"] for r in report) == sorted({s.op for s in samples})
    assert all(set(r) == {"op", "d_min", "slope", "ci95"} for r in report)


def test_forward_outputs_repeatable():
    import pigan.gan as gan
    rng = np.random.default_rng([0, 16])
    params = gan.init_params("direct", rng, d=16, discriminator=False).frozen()
    z = rng.standard_normal((3, gan.LATENT_DIM))
    a = bench._generator_forward(gan.GeneratorKind.DIRECT, params, z, 16)
    b = bench._generator_forward(gan.GeneratorKind.DIRECT, params, z, 16)
    assert a.shape == (3, 2 * 16 * 16) and np.array_equal(a, b)
