"""Finite-difference gradient checking shared by the unit and acceptance tests."""

import numpy as np

from skylens.forecaster import autodiff as ad


def rel_error(analytic, numeric):
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def check_function(build, arrays, eps=1e-6):
    """Worst relative error of ``build(*tensors)`` (scalar) over all inputs."""
    ts = [ad.Tensor(a, requires_grad=True) for a in arrays]
    build(*ts).backward()
    num = ad.numeric_grad(lambda: float(build(*[ad.Tensor(a) for a in arrays]).data), arrays, eps)
    return max(rel_error(t.grad, n) for t, n in zip(ts, num))


def check_module(module, loss_fn, samples=6, eps=1e-6, seed=0):
    """Worst relative error over a random subset of every parameter's entries.

    ``loss_fn()`` must be deterministic (call ``module.eval()`` first).
    """
    module.zero_grad()
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in module.named_parameters().items():
        if p.grad is None:
            continue
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, min(samples, flat.size), replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            fp = float(loss_fn().data)
            flat[i] = old - eps
            fm = float(loss_fn().data)
            flat[i] = old
            num[j] = (fp - fm) / (2 * eps)
        worst = max(worst, rel_error(p.grad.reshape(-1)[idx], num))
    return worst
