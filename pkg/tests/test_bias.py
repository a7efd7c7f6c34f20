import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabbias.bias import (
    MamlConfig,
    SeedEnsemble,
    average_bias,
    best_seed,
    derive_seed,
    drs_bias,
    fine_tune,
    maml_bias,
    maml_outer_loss,
    maml_task_gradient,
    make_task_datasets,
    prepare_maml_tasks,
    pretrain_bias,
    save_bias,
    train_ensemble,
)
from tabbias.diffcore import ParamSet, ShapeMismatchError, grad_check, loss_and_grad
from tabbias.diffcore import autodiff as ad
from tabbias.schema import EncodedMatrix
from tabbias.vae import VaeArchitecture, make_loss_fn


def _psets(s, seed=0):
    rng = np.random.default_rng(seed)
    return [ParamSet.from_arrays({"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}) for _ in range(s)]


def test_average_matches_brute_force_loop():
    ps = _psets(3)
    avg = average_bias(ps)
    want = np.zeros_like(ps[0].flat)
    for i in range(want.size):
        want[i] = sum(p.flat[i] for p in ps) / 3
    assert np.max(np.abs(avg.flat - want)) <= 1e-12


def test_average_idempotence_and_symmetry():
    p = _psets(1)[0]
    np.testing.assert_allclose(average_bias([p, p, p]).flat, p.flat, rtol=1e-15)
    np.testing.assert_array_equal(average_bias([p, -p]).flat, 0.0)


def test_average_rejects_mismatched_shapes():
    p = _psets(1)[0]
    q = ParamSet.from_arrays({"a": np.zeros((2, 3)), "b": np.zeros(4)})
    with pytest.raises(ShapeMismatchError):
        average_bias([p, q])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 1000), st.randoms(use_true_random=False))
def test_average_is_permutation_invariant(s, seed, rnd):
    ps = _psets(s, seed)
    shuffled = list(ps)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(average_bias(shuffled).flat, average_bias(ps).flat, atol=1e-12)


class _Member:
    def __init__(self, loss):
        self.best_val_loss = loss


@pytest.mark.parametrize("losses, want", [([3.0], 0), ([2.0, 1.5, 1.9], 1), ([1.0, 1.0], 0)])
def test_best_seed(losses, want):
    ens = SeedEnsemble.__new__(SeedEnsemble)
    ens.members = [_Member(v) for v in losses]
    assert best_seed(ens) == want


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert len({derive_seed(0, i) for i in range(100)}) == 100
    assert 0 <= derive_seed(5) < 2**63


@pytest.fixture(scope="module")
def ensemble(toy_small, tiny_config):
    return train_ensemble(toy_small, tiny_config, seeds=[1, 2])


def test_tasks_are_deterministic_and_sized(ensemble):
    a = make_task_datasets(ensemble, 50, seed=3)
    b = make_task_datasets(ensemble, 50, seed=3)
    assert [t.n_rows for t in a] == [50, 50]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)


def test_drs_with_one_task_equals_pretrain(toy_small, tiny_config):
    ens = train_ensemble(toy_small, tiny_config, seeds=[4])
    theta_pt = pretrain_bias(ens, 120, tiny_config, seed=9)
    tasks = make_task_datasets(ens, 120, seed=9)
    assert drs_bias(tasks, tiny_config, seed=9) == theta_pt


def test_pretrain_with_zero_epochs_is_random_init(ensemble, tiny_config):
    cfg = tiny_config.replace(max_epochs=0)
    theta = pretrain_bias(ensemble, 60, cfg, seed=5)
    assert theta == VaeArchitecture(ensemble.data.group_map, cfg).init(5)


def test_drs_pools_tasks_in_order(ensemble, tiny_config):
    tasks = make_task_datasets(ensemble, 30, seed=1)
    pooled = EncodedMatrix.concat(tasks)
    assert pooled.n_rows == 60
    np.testing.assert_array_equal(pooled.values[30:], tasks[1].values)
    assert drs_bias(tasks, tiny_config, 2) == drs_bias(tasks, tiny_config, 2)


def test_fine_tune_zero_epochs_is_identity(ensemble, toy_small, tiny_config):
    theta0 = average_bias(ensemble)
    out = fine_tune(theta0, toy_small, tiny_config.replace(max_epochs=0), seed=1)
    assert out.params == theta0


def test_fine_tune_best_loss_not_worse_than_start(ensemble, toy_small, tiny_config):
    theta0 = average_bias(ensemble)
    out = fine_tune(theta0, toy_small, tiny_config, seed=1)
    assert out.best_val_loss <= out.val_curve[0]
    assert out.params.compatible(theta0)


# -- MAML --------------------------------------------------------------------------


def test_maml_zero_outer_iterations_returns_init(ensemble, tiny_config):
    tasks = make_task_datasets(ensemble, 40, seed=0)
    arch = VaeArchitecture(tasks[0].group_map, tiny_config)
    out = maml_bias(tasks, MamlConfig(outer_iterations=0), tiny_config, seed=3)
    assert out == arch.init(3)


def test_maml_alpha_zero_is_pooled_gradient_step(ensemble, tiny_config):
    tasks = make_task_datasets(ensemble, 40, seed=0)
    cfg = MamlConfig(inner_lr=0.0, outer_lr=0.05, outer_iterations=1, meta_batch=len(tasks), inner_steps=2)
    arch = VaeArchitecture(tasks[0].group_map, tiny_config)
    theta = arch.init(3)
    prepared = prepare_maml_tasks(tasks, cfg, tiny_config.latent_dim, seed=3)
    pooled = np.zeros(len(theta))
    for t in prepared:
        _, g = loss_and_grad(make_loss_fn(arch), theta, (t.val, t.val_noise))
        pooled += g.flat
    want = theta.flat - cfg.outer_lr * pooled
    got = maml_bias(tasks, cfg, tiny_config, seed=3)
    assert np.max(np.abs(got.flat - want)) <= 1e-10


def _quadratic_loss(tensors, batch):
    h, c = batch
    d = tensors["w"] - c
    return (0.5 * h * d * d).sum()


@pytest.mark.parametrize("steps", [1, 3])
def test_second_order_maml_matches_analytic_quadratic(steps):
    theta, alpha = 0.8, 0.1
    h_tr, c_tr, h_val, c_val = 2.0, -1.0, 3.0, 0.5
    params = ParamSet.from_arrays({"w": np.array([theta])})
    _, g = maml_task_gradient(
        _quadratic_loss, params, [(h_tr, c_tr)] * steps, (h_val, c_val), alpha, first_order=False
    )
    w = theta
    for _ in range(steps):
        w = w - alpha * h_tr * (w - c_tr)
    want = (1 - alpha * h_tr) ** steps * h_val * (w - c_val)
    assert abs(g.flat[0] - want) <= 1e-8
    _, g1 = maml_task_gradient(_quadratic_loss, params, [(h_tr, c_tr)] * steps, (h_val, c_val), alpha, True)
    assert abs(g1.flat[0] - h_val * (w - c_val)) <= 1e-12


def test_second_order_maml_gradient_passes_finite_differences():
    rng = np.random.default_rng(0)
    params = ParamSet.from_arrays({"w": rng.normal(size=(3, 1))})

    def loss_fn(t, batch):
        x, y = batch
        r = ad.tanh(ad.Tensor(x) @ t["w"]) - y
        return (r * r).mean()

    tasks = []
    for _ in range(2):
        x = rng.normal(size=(6, 3))
        y = rng.normal(size=(6, 1))
        tasks.append(([(x[:4], y[:4]), (x[:4], y[:4])], (x[4:], y[4:])))

    total = np.zeros(3)
    for tr, val in tasks:
        _, g = maml_task_gradient(loss_fn, params, tr, val, 0.3, first_order=False)
        total += g.flat
    rep = grad_check(
        lambda t, b: ad.Tensor(maml_outer_loss(loss_fn, params.like_tensors(t), tasks, 0.3)),
        params,
        None,
        n_coords=3,
        analytic=params.with_flat(total),
    )
    assert rep.ok, rep.rel_errors


def test_save_bias(tmp_path, ensemble):
    theta = average_bias(ensemble)
    save_bias(theta, {"strategy": "avg", "source_seeds": [1, 2]}, tmp_path)
    assert ParamSet.load(tmp_path / "theta0.bin") == theta
    assert '"strategy": "avg"' in (tmp_path / "theta0.json").read_text()
