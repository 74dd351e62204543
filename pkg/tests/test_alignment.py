import math

import numpy as np
import pytest
import torch

from oracles import bilinear_oracle, central_difference, nt_xent_oracle
from xmkd.alignment import (
    ContrastiveConfig,
    InverseProjection,
    ProjectionHead,
    _scale_seed,
    inverse_project,
    l2_normalize,
    lookup_map,
    multiscale_contrastive,
    nt_xent,
    project_embed,
    sample_pairs,
)
from xmkd.geometry import CorrespondenceSet


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return torch.tensor(z / np.linalg.norm(z, axis=1, keepdims=True))


def test_orthogonal_pair_value():
    e = torch.eye(2, dtype=torch.float64)
    assert float(nt_xent(e, e, 1.0)) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert math.log(1 + math.exp(-1)) == pytest.approx(0.313262, abs=1e-6)


def test_single_pair_is_zero():
    rng = np.random.default_rng(0)
    z = unit_rows(rng, 1, 8)
    assert float(nt_xent(z, unit_rows(rng, 1, 8), 0.07)) == 0.0


def test_empty_batch_warns():
    with pytest.warns(UserWarning):
        assert float(nt_xent(torch.zeros(0, 4), torch.zeros(0, 4), 0.1)) == 0.0


@pytest.mark.parametrize("symmetric", [False, True])
def test_matches_bruteforce(symmetric):
    rng = np.random.default_rng(1)
    for _ in range(30):
        n = int(rng.integers(1, 9))
        a, b = unit_rows(rng, n, 5), unit_rows(rng, n, 5)
        tau = float(rng.choice([0.07, 0.5, 1.0]))
        got = float(nt_xent(a, b, tau, symmetric))
        assert abs(got - nt_xent_oracle(a.numpy(), b.numpy(), tau, symmetric)) < 1e-10


def test_permutation_invariance_and_positive_monotone():
    rng = np.random.default_rng(2)
    a, b = unit_rows(rng, 6, 4), unit_rows(rng, 6, 4)
    perm = torch.tensor(rng.permutation(6))
    assert float(nt_xent(a[perm], b[perm], 0.5)) == pytest.approx(float(nt_xent(a, b, 0.5)), abs=1e-12)
    # pull b[0] toward a[0]: row 0's positive similarity strictly increases
    closer = b.clone()
    closer[0] = l2_normalize(0.5 * a[0] + 0.5 * b[0])
    assert float(a[0] @ closer[0]) > float(a[0] @ b[0])
    row0 = lambda bb: float(torch.nn.functional.cross_entropy((a @ bb.T / 0.5)[:1], torch.tensor([0])))  # noqa: E731
    assert row0(closer) < row0(b)


@pytest.mark.parametrize("tau", [0.07, 0.5, 1.0])
def test_gradient_matches_central_difference(tau):
    rng = np.random.default_rng(3)
    a, b = unit_rows(rng, 5, 4).numpy(), unit_rows(rng, 5, 4).numpy()
    x = torch.tensor(a, requires_grad=True)
    nt_xent(x, torch.tensor(b), tau).backward()
    num = central_difference(lambda arr: float(nt_xent(torch.tensor(arr), torch.tensor(b), tau)), a)
    rel = np.abs(x.grad.numpy() - num).max() / np.abs(num).max()
    assert rel < 1e-4


def test_projection_head_norms_and_zero_row():
    torch.manual_seed(0)
    head = ProjectionHead(6, 8, 4).double()
    z = project_embed(torch.randn(20, 6, dtype=torch.float64), head)
    np.testing.assert_allclose(z.norm(dim=1).detach().numpy(), 1.0, atol=1e-6)
    zero = l2_normalize(torch.zeros(1, 4))
    assert torch.isfinite(zero).all()


def test_identity_head_preserves_unit_vector():
    head = ProjectionHead(3, 3, 3).double()
    with torch.no_grad():
        for layer in (head.net[0], head.net[2]):
            layer.weight.copy_(torch.eye(3))
            layer.bias.zero_()
    e1 = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    # the 1e-12 guard in the denominator shifts the result by ~1e-12
    np.testing.assert_allclose(project_embed(e1, head).detach().numpy(), [[1.0, 0.0, 0.0]], atol=1e-10)


def test_map_embedding_is_channels_last():
    head = ProjectionHead(5, 8, 4)
    z = project_embed(torch.randn(5, 3, 7), head, channels_first=True)
    assert z.shape == (3, 7, 4)


def test_bilinear_lookup_at_centre_and_midpoint():
    rng = np.random.default_rng(4)
    zmap = torch.tensor(rng.normal(size=(4, 5, 3)))
    at_centre = lookup_map(zmap, np.array([[2.5, 1.5]]))
    np.testing.assert_allclose(at_centre[0].numpy(), l2_normalize(zmap[1, 2]).numpy(), atol=1e-12)
    mid = lookup_map(zmap, np.array([[3.0, 2.0]]))
    avg = (zmap[1, 2] + zmap[1, 3] + zmap[2, 2] + zmap[2, 3]) / 4
    np.testing.assert_allclose(mid[0].numpy(), l2_normalize(avg).numpy(), atol=1e-12)
    uv = rng.uniform([-1, -1], [6, 5], size=(40, 2))
    got = lookup_map(zmap, uv).numpy()
    for i, (u, v) in enumerate(uv):
        np.testing.assert_allclose(got[i], bilinear_oracle(zmap.numpy(), u, v), atol=1e-12)


def test_nearest_lookup():
    zmap = torch.arange(24, dtype=torch.float64).reshape(2, 4, 3) + 1
    got = lookup_map(zmap, np.array([[2.9, 1.2]]), mode="nearest")
    np.testing.assert_allclose(got[0].numpy(), l2_normalize(zmap[1, 2]).numpy())


def corr_with(n_in, n_out, rng, W=64, H=32):
    in_fov = np.array([True] * n_in + [False] * n_out)
    uv = np.stack([rng.uniform(0, W, n_in + n_out), rng.uniform(0, H, n_in + n_out)], 1)
    return CorrespondenceSet(in_fov, uv, np.ones(n_in + n_out))


def test_sample_pairs_clamps_and_stays_in_fov():
    rng = np.random.default_rng(5)
    corr = corr_with(3, 10, rng)
    z3d = unit_rows(rng, 13, 4)
    zmap = torch.tensor(rng.normal(size=(16, 32, 4)))
    batch = sample_pairs(corr, z3d, zmap, 1, 512, seed=0)
    assert len(batch) == 3
    assert set(batch.point_index.tolist()) == {0, 1, 2}
    np.testing.assert_allclose(batch.map_uv, corr.pixel_uv[batch.point_index] / 2)
    empty = sample_pairs(corr_with(0, 5, rng), z3d[:5], zmap, 1, 512, seed=0)
    assert len(empty) == 0


def test_multiscale_is_mean_of_scales():
    rng = np.random.default_rng(6)
    S, p = 2, 40
    corr = corr_with(30, 10, rng)
    pyr3d = [torch.randn(p, 6, dtype=torch.float64) for _ in range(S)]
    pyr2d = [torch.randn(6, 32 >> s, 64 >> s, dtype=torch.float64) for s in range(1, S + 1)]
    torch.manual_seed(0)
    h3 = torch.nn.ModuleList(ProjectionHead(6, 8, 4) for _ in range(S)).double()
    h2 = torch.nn.ModuleList(ProjectionHead(6, 8, 4) for _ in range(S)).double()
    cfg = ContrastiveConfig(temperature=0.2, pairs_per_scale=16)
    total = float(multiscale_contrastive(corr, pyr3d, pyr2d, h3, h2, cfg, seed=[1, 2]).detach())
    # straight-line re-implementation of the per-scale loop
    per_scale = []
    for i in range(S):
        idx = np.random.default_rng(_scale_seed([1, 2], i)).choice(corr.indices, size=16, replace=False)
        z3 = l2_normalize(h3[i](pyr3d[i][torch.as_tensor(idx)]))
        zmap = l2_normalize(h2[i](pyr2d[i].permute(1, 2, 0)))
        uv = corr.pixel_uv[idx] / 2 ** (i + 1)
        z2 = torch.stack([torch.as_tensor(bilinear_oracle(zmap.detach().numpy(), u, v)) for u, v in uv])
        per_scale.append(nt_xent_oracle(z3.detach().numpy(), z2.numpy(), 0.2))
    assert total == pytest.approx(sum(per_scale) / S, abs=1e-10)


def test_multiscale_all_empty_is_zero():
    rng = np.random.default_rng(7)
    corr = corr_with(0, 10, rng)
    heads = torch.nn.ModuleList([ProjectionHead(3, 4, 2)])
    out = multiscale_contrastive(corr, [torch.randn(10, 3)], [torch.randn(3, 8, 16)], heads, heads,
                                 ContrastiveConfig(), seed=0)
    assert float(out.detach()) == 0.0


def test_inverse_projection():
    inv = InverseProjection(4, 3).double()
    zero = inverse_project(torch.zeros(1, 4, dtype=torch.float64), inv)
    assert torch.equal(zero[0], inv.linear.bias)
    x = np.random.default_rng(8).normal(size=4)
    jac = torch.autograd.functional.jacobian(lambda v: inverse_project(v, inv), torch.tensor(x))
    num = np.stack([central_difference(lambda a, k=k: float(inverse_project(torch.tensor(a), inv)[k].detach()), x)
                    for k in range(3)])
    np.testing.assert_allclose(num, inv.linear.weight.detach().numpy(), atol=1e-8)
    np.testing.assert_allclose(jac.numpy(), inv.linear.weight.detach().numpy(), atol=1e-12)
    with pytest.raises(ValueError):
        inverse_project(torch.zeros(1, 5, dtype=torch.float64), inv)


def test_config_validation():
    with pytest.raises(ValueError):
        ContrastiveConfig(temperature=0.0)
    with pytest.raises(ValueError):
        ContrastiveConfig(pairs_per_scale=0)
    with pytest.raises(ValueError):
        ContrastiveConfig(lookup="cubic")
