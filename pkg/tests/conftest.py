import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    np.random.seed(0)


def finite_difference_grad(fn, params, eps=1e-5):
    """Central-difference gradient of a scalar fn w.r.t. a flat float64 tensor."""
    grad = torch.zeros_like(params)
    flat = params.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(a.abs().max().item(), b.abs().max().item(), 1e-8)
    return ((a - b).abs().max() / denom).item()


def check_grad(make_loss, tensors, eps=1e-5, tol=1e-4):
    """Assert analytic gradients of a scalar loss match finite differences.

    ``tensors`` are float64 leaf tensors with requires_grad=True that the
    closure reads; the closure is re-evaluated for every perturbation.
    """
    loss = make_loss()
    loss.backward()
    for t in tensors:
        analytic = t.grad.clone()
        t.grad = None
        with torch.no_grad():
            fd = finite_difference_grad(lambda: make_loss().item(), t.data, eps=eps)
        err = rel_err(analytic, fd)
        assert err < tol, f"gradient mismatch: rel err {err:.2e} >= {tol}"
