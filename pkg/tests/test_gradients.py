import numpy as np
import pytest

from conftest import assert_grad_close
from gradient_suite import CASES, N_INSTANCES, td3bc_actor
from ludor.algos.td3bc import bc_term
from ludor.nn import MlpParams, build_mlp, make_rng, mlp_apply


@pytest.mark.parametrize("name", sorted(CASES))
def test_loss_gradient_matches_finite_differences(name):
    for seed in range(N_INSTANCES):
        analytic, numeric = CASES[name](seed)
        assert_grad_close(analytic, numeric)


def test_combined_loss_gradient_is_sum_of_parts():
    from ludor.algos.losses import uniform_weights
    from ludor.algos.td3bc import actor_loss

    r = make_rng(3, 0)
    pi = build_mlp(3, 2, (6,), r, out_scale=1.0)
    q = build_mlp(5, 1, (6,), r)
    s, a = r.normal(size=(8, 3)), r.uniform(-1, 1, (8, 2))
    sd, ad = r.normal(size=(4, 3)), r.uniform(-1, 1, (4, 2))
    _, g_all, _ = actor_loss(pi, q, s, a, uniform_weights(8), 2.5, lam=0.7, extra=(sd, ad))
    _, g_base, _ = actor_loss(pi, q, s, a, uniform_weights(8), 2.5, lam=0.7)
    _, g_bc = bc_term(pi, sd, ad)
    np.testing.assert_allclose(g_all, g_base + g_bc, rtol=1e-12, atol=1e-15)


def test_teacher_already_fits_batch_gives_zero_loss():
    pi = build_mlp(3, 2, (6,), make_rng(0), out_scale=1.0)
    s = make_rng(1).normal(size=(10, 3))
    loss, g = bc_term(pi, s, mlp_apply(pi, s))
    assert loss == 0.0 and np.all(g == 0.0)


def test_linear_teacher_single_pair_chain_rule():
    w = np.array([[0.5, -1.0], [2.0, 0.3]])
    p = MlpParams.from_layers([(w, np.array([0.1, -0.2]))], ["identity"])
    s, a = np.array([[1.0, 2.0]]), np.array([[0.0, 1.0]])
    pred = s @ w.T + [0.1, -0.2]
    _, g = bc_term(p, s, a)
    # d/dW mean_j (pred_j - a_j)^2 = 2 (pred - a)_j s / 2
    want_w = ((pred - a).T @ s) * 2 / 2
    want_b = (pred - a)[0] * 2 / 2
    np.testing.assert_allclose(g, np.concatenate([want_w.ravel(), want_b]), rtol=1e-14)


def test_suite_has_twenty_instances():
    assert N_INSTANCES >= 20 and len(CASES) >= 10
    a, n = td3bc_actor(0)
    assert a.shape == n.shape
