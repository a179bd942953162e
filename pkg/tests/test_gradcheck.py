import math

import pytest
import torch

from bagnet.config import Ablation
from bagnet.gradcheck import GradCheckError, autograd_grads, check_model, grad_check


def test_quadratic_is_exact():
    x = torch.tensor([1.0], requires_grad=True)
    assert grad_check(lambda: (x**2).sum(), [x], probe_count=1) < 1e-10


def test_detects_scaled_gradient():
    corrupt = lambda f, ps: [1.1 * g for g in autograd_grads(f, ps)]
    assert check_model(Ablation.FULL, probe_count=50, grad_fn=corrupt) > 0.05


def test_non_finite_loss_raises():
    x = torch.tensor([0.0], requires_grad=True)
    with pytest.raises(GradCheckError):
        grad_check(lambda: torch.log(x).sum() * 0 + 1 / x.sum(), [x], probe_count=1)


def test_floor_exposes_truncation_on_vanishing_gradients():
    x = torch.tensor([0.0, 2.0], requires_grad=True)
    # true d/dx0 of x1 * x0^3 at 0 is 0, the central difference is x1 * step^2 = 2e-10;
    # against the 1e-8 floor that alone reads as a relative error of 0.02
    err = grad_check(lambda: x[1] * x[0] ** 3, [x], probe_count=2)
    assert math.isclose(err, 2e-10 / 1e-8, rel_tol=1e-6)


def test_full_model_small_dims():
    assert check_model(Ablation.FULL, probe_count=100, seed=0) < 1e-4
