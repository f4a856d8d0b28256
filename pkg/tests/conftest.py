import pathlib

import numpy as np
import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k[1:])):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {detail}")


def finite_difference_check(f, params, grads, step=1e-5, per_tensor=None, rng=None):
    """Worst per-tensor relative error between analytic ``grads`` and central differences of ``f``.

    The error of a tensor is ``||numeric - analytic|| / ||analytic||`` over the
    probed coordinates; elementwise ratios would be dominated by round-off on
    near-zero entries. Every coordinate is probed unless ``per_tensor`` caps
    the count (coordinates then drawn with ``rng``).
    """
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if per_tensor is not None and flat.size > per_tensor:
            idx = rng.choice(flat.size, per_tensor, replace=False)
        numeric = np.empty(idx.size)
        for pos, k in enumerate(idx):
            old = flat[k]
            flat[k] = old + step
            up = f(params)
            flat[k] = old - step
            down = f(params)
            flat[k] = old
            numeric[pos] = (up - down) / (2 * step)
        analytic = grads[name].reshape(-1)[idx]
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, np.linalg.norm(numeric - analytic) / scale)
    return worst


def smooth_point(arch, rng, batch=8, margin=1e-3, max_tries=200):
    """Random parameters and batch with every pre-activation at least ``margin`` from a kink.

    Central differences are meaningless where a rectifier switches, and a
    scale output pinned at zero makes the loss dominated by ``delta``.
    """
    from ebidlma.trainer import forward, init_params

    for _ in range(max_tries):
        params = init_params(arch, rng)
        for name in params:
            if name.endswith(".b"):
                params[name] = rng.uniform(0.05, 0.2, params[name].shape)
        params[("sigma" if arch.kind == "gauss" else "r") + ".1.b"] += 1.0
        if arch.kind == "eb" and arch.nu_mode == "clipped":
            params["nu.1.b"] += 50.0
        x = rng.uniform(0, 2, (batch, arch.input_dim))
        _, cache = forward(params, arch, x)
        z_all = [rec[2] for key in cache if isinstance(cache[key], list) for rec in cache[key] if rec[1] == "relu"]
        if min(np.min(np.abs(z)) for z in z_all) > margin:
            return params, x
    raise RuntimeError("no smooth evaluation point found")
