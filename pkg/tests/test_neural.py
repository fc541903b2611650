import itertools
import math

import numpy as np
import pytest

from topogrid.actions import MAX_DIM, compute_mask, layout
from topogrid.grid import GridState
from topogrid.nn import autodiff as ad
from topogrid.nn.autodiff import Tensor
from topogrid.nn.checkpoint import CheckpointError, load_into, read_checkpoint, save_checkpoint
from topogrid.nn.distribution import MaskedCategoricalSet
from topogrid.nn.encoders import GraphItem, collate_graphs, mean_readout
from topogrid.nn.layers import MLP, Linear
from topogrid.nn.optim import Adam
from topogrid.nn.policy import PolicyNetwork
from topogrid.observations import build_element_graph, build_flat, build_substation_graph
from topogrid.powerflow import Injections, solve

from conftest import finite_difference_error, random_topology

TOL = 1e-4


def _param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_linear_sum_gradient():
    x = np.array([[1.0, 2.0, 3.0]])
    w = Tensor(np.zeros((3, 2)), requires_grad=True)
    ad.backward(ad.tsum(ad.matmul(x, w)))
    assert np.array_equal(w.grad, np.outer(x[0], np.ones(2)))


def test_off_tape_parameter_zero_gradient():
    net = MLP([3, 4, 1], np.random.default_rng(0))
    unused = Linear(2, 2, np.random.default_rng(1))
    ad.backward(ad.tsum(net(np.ones((2, 3)))))
    assert unused.grad_flat().tolist() == [0.0] * unused.n_params()


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError):
        ad.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


PRIMITIVES = {
    "add_broadcast": lambda a, b, c: ad.tsum((a + b[0]) * c),
    "sub_div": lambda a, b, c: ad.tsum((a - c) / (ad.square(b[0]) + 1.0)),
    "matmul": lambda a, b, c: ad.tsum(ad.tanh(ad.matmul(a, b.reshape(3, 4)[:3, :3].reshape(3, 3)))),
    "relu_exp_log": lambda a, b, c: ad.mean(ad.log(ad.exp(ad.relu(a)) + 1.0)),
    "minimum_clip": lambda a, b, c: ad.tsum(ad.minimum(a, c) * ad.clip(c, -0.5, 0.5)),
    "sum_mean_axes": lambda a, b, c: ad.tsum(ad.mean(a * c, axis=0) * ad.tsum(a, axis=1, keepdims=True).reshape(3)),
    "take_along": lambda a, b, c: ad.tsum(ad.take_along(a * c, np.array([[2], [0], [1]]), axis=-1)),
    "take_scatter": lambda a, b, c: ad.tsum(ad.square(ad.scatter_add(ad.take(a, np.array([0, 2, 2, 1]), 0), np.array([1, 1, 0, 3]), 4))),
    "concat_swap": lambda a, b, c: ad.tsum(ad.concat([a, ad.swapaxes(c)], axis=-1) * np.arange(6.0)),
    "masked_softmax": lambda a, b, c: ad.tsum(ad.masked_softmax(a, np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], bool)) * c),
    "masked_log_softmax": lambda a, b, c: ad.tsum(ad.masked_log_softmax(a, np.array([[1, 0, 1], [1, 1, 1], [0, 0, 1]], bool)) * c),
    "index_neg": lambda a, b, c: ad.tsum(-a[1:, :2] * c[:2, 1:]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    a, b, c = _param(rng, 3, 3), _param(rng, 12), _param(rng, 3, 3)
    fn = lambda: PRIMITIVES[name](a, b, c)
    assert finite_difference_error(fn, [a, b, c]) < TOL


def test_two_layer_network_gradient():
    rng = np.random.default_rng(5)
    net = MLP([4, 6, 3], rng)
    x = rng.standard_normal((5, 4))
    y = rng.standard_normal((5, 3))
    assert finite_difference_error(lambda: ad.mean(ad.square(net(x) - y)), net.parameters()) < TOL


def _small_graph_batch(rng, n=(4, 3), f=3, fe=2):
    items = []
    for m in n:
        edges = np.array([(i, i + 1) for i in range(m - 1)], dtype=np.int64).reshape(-1, 2)
        items.append(GraphItem(rng.standard_normal((m, f)), edges, rng.standard_normal((len(edges), fe)),
                               np.bincount(edges.ravel(), minlength=m).astype(float)))
    return collate_graphs(items)


def test_padded_attention_gradient():
    from topogrid.nn.encoders import GraphAttention

    rng = np.random.default_rng(12)
    batch = _small_graph_batch(rng)
    layer = GraphAttention(3, 3, rng)
    h = _param(rng, 2, 4, 3)
    w = rng.standard_normal((2, 4, 3)) * batch.node_mask[..., None]
    assert finite_difference_error(lambda: ad.tsum(layer(h, batch) * w), layer.parameters() + [h]) < TOL


@pytest.mark.parametrize("variant", ["substation-graph", "element-graph", "flat"])
def test_encoder_attention_gradient(spec, chronics, variant):
    from topogrid.nn.encoders import make_encoder
    from topogrid.observations import BUILDERS

    rng = np.random.default_rng(1)
    enc = make_encoder(variant, spec, rng, hidden=4)
    c = chronics[0]
    obs = []
    for k in range(2):
        state = random_topology(spec, GridState.default(spec), rng, p_off=0.0)
        obs.append(BUILDERS[variant](spec, state, solve(spec, state, Injections(c.gen_p[k], c.load_p[k]))))
    batch = enc.collate([enc.featurize(o) for o in obs])
    w = rng.standard_normal(4)
    params = enc.parameters()
    assert finite_difference_error(lambda: ad.tsum(enc(batch) * w), params) < TOL


def test_policy_loss_gradient(spec, chronics):
    from topogrid.ppo import Minibatch, PPOConfig, ppo_losses

    rng = np.random.default_rng(2)
    policy = PolicyNetwork(spec, "flat", rng, hidden=6)
    # keep the check cheap: shrink the heads
    policy.actor = MLP([6, 5, layout(spec).n_elements * MAX_DIM], rng)
    policy.critic = MLP([6, 5, 1], rng)
    c = chronics[0]
    obs, masks = [], []
    for k in range(3):
        state = random_topology(spec, GridState.default(spec), rng)
        state.line_cooldown[:] = rng.integers(0, 2, spec.n_line)
        obs.append(policy.featurize(build_flat(spec, state, solve(spec, state, Injections(c.gen_p[k], c.load_p[k])))))
        masks.append(compute_mask(spec, state).valid)
    masks = np.stack(masks)
    actions, logp, _ = policy.act([o / policy.encoder.scale for o in obs], masks, rng)
    batch = Minibatch(obs, masks, actions, logp + rng.normal(0, 0.3, 3), rng.standard_normal(3), rng.standard_normal(3))
    cfg = PPOConfig(clip_eps=0.2)
    assert finite_difference_error(lambda: ppo_losses(batch, policy, cfg).loss, policy.parameters()) < TOL


def test_masked_probs_and_entropy():
    d = MaskedCategoricalSet(Tensor(np.array([[[1.0, 1.0]]])), np.array([[[True, False]]]))
    assert d.probs.tolist() == [[[1.0, 0.0]]]
    for k in (1, 2, 3, 6):
        mask = np.zeros((1, 1, 6), bool)
        mask[..., :k] = True
        d = MaskedCategoricalSet(Tensor(np.zeros((1, 1, 6))), mask)
        assert d.entropy().data[0] == pytest.approx(math.log(k), abs=1e-12)


def test_log_prob_enumeration():
    rng = np.random.default_rng(4)
    logits = Tensor(rng.standard_normal((1, 3, 3)))
    mask = np.array([[[True, True, True], [True, False, True], [False, True, True]]])
    d = MaskedCategoricalSet(logits, mask)
    p = d.probs[0]
    total = 0.0
    for combo in itertools.product(range(3), repeat=3):
        joint = np.prod([p[e, c] for e, c in enumerate(combo)])
        total += joint
        if joint > 0:
            lp = d.log_prob(np.array([combo])).data[0]
            assert lp == pytest.approx(math.log(joint), abs=1e-12)
        else:
            with pytest.raises(ValueError):
                d.log_prob(np.array([combo]))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_sampling_never_masked():
    rng = np.random.default_rng(6)
    for _ in range(20):
        logits = rng.uniform(-50, 50, (500, 4, 6))
        mask = rng.random((500, 4, 6)) < 0.5
        mask[:, :, 1] = True
        d = MaskedCategoricalSet(Tensor(logits), mask)
        a = d.sample(rng)
        assert np.all(np.take_along_axis(mask, a[..., None], -1))
        assert np.all(np.take_along_axis(mask, d.argmax()[..., None], -1))
        assert np.all(np.isfinite(d.log_p.data)) and np.all(np.isfinite(d.entropy().data))


def test_sampling_frequencies():
    rng = np.random.default_rng(8)
    logits = Tensor(np.log(np.array([[[0.2, 0.5, 0.3]]])).repeat(20000, axis=0))
    d = MaskedCategoricalSet(logits, np.ones((20000, 1, 3), bool))
    freq = np.bincount(d.sample(rng)[:, 0], minlength=3) / 20000
    assert np.allclose(freq, [0.2, 0.5, 0.3], atol=0.015)


def test_argmax_tie_goes_low():
    d = MaskedCategoricalSet(Tensor(np.array([[[0.0, 2.0, 2.0]]])), np.ones((1, 1, 3), bool))
    assert d.argmax().tolist() == [[1]]


def test_readout_examples():
    h = np.tile(np.array([1.0, -2.0, 3.0]), (1, 4, 1))
    mask = np.ones((1, 4), bool)
    assert np.allclose(mean_readout(Tensor(h), mask).data, [[1.0, -2.0, 3.0]])
    single = np.zeros((1, 4, 3))
    single[0, 0] = [5.0, 6.0, 7.0]
    m1 = np.array([[True, False, False, False]])
    assert np.allclose(mean_readout(Tensor(single), m1).data, [[5.0, 6.0, 7.0]])
    assert np.all(mean_readout(Tensor(single), np.zeros((1, 4), bool)).data == 0.0)


def test_element_graph_permutation_invariance(spec, chronics):
    rng = np.random.default_rng(9)
    policy = PolicyNetwork(spec, "element-graph", 3)
    c = chronics[0]
    for k in range(5):
        state = random_topology(spec, GridState.default(spec), rng)
        obs = build_element_graph(spec, state, solve(spec, state, Injections(c.gen_p[k], c.load_p[k])))
        perm = rng.permutation(obs.n_nodes)
        z = policy.encoder(policy.collate([policy.featurize(obs)])).data
        zp = policy.encoder(policy.collate([policy.featurize(obs.permute(perm))])).data
        assert np.max(np.abs(z - zp)) <= 1e-10


def test_substation_graph_permutation_invariance(spec, chronics):
    from topogrid.observations import SubGraphObs

    rng = np.random.default_rng(10)
    policy = PolicyNetwork(spec, "substation-graph", 4)
    c = chronics[0]
    state = random_topology(spec, GridState.default(spec), rng)
    obs = build_substation_graph(spec, state, solve(spec, state, Injections(c.gen_p[0], c.load_p[0])))
    perm = rng.permutation(obs.n_nodes)
    inv = np.argsort(perm)
    permuted = SubGraphObs([obs.nodes[i] for i in perm], obs.x[perm], inv[obs.edges], obs.edge_attr)
    z = policy.encoder(policy.collate([policy.featurize(obs)])).data
    zp = policy.encoder(policy.collate([policy.featurize(permuted)])).data
    assert np.max(np.abs(z - zp)) <= 1e-10


def test_empty_graph_zero_latent(spec):
    from topogrid.nn.encoders import SubstationGraphEncoder
    from topogrid.observations import SubGraphObs

    enc = SubstationGraphEncoder(spec, np.random.default_rng(0))
    obs = SubGraphObs([], np.zeros((0, 6)), np.zeros((0, 2), dtype=np.int64), np.zeros((0, 11)))
    z = enc(enc.collate([enc.featurize(obs)])).data
    assert z.shape == (1, 128) and np.all(z == 0.0)


def test_glorot_range():
    from topogrid.nn.layers import glorot

    w = glorot(np.random.default_rng(0), 30, 50).data
    assert np.abs(w).max() <= math.sqrt(6 / 80)


def test_checkpoint_roundtrip(spec, tmp_path):
    a = PolicyNetwork(spec, "flat", 0)
    save_checkpoint(tmp_path / "a.bin", a.schema_hash(), 1234, a.get_flat())
    b = PolicyNetwork(spec, "flat", 1)
    assert load_into(b, tmp_path / "a.bin") == 1234
    assert np.array_equal(a.get_flat(), b.get_flat())
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:8] == b"TOPOGRD\x00"
    assert np.array_equal(np.frombuffer(raw[-8 * a.n_params():], "<f8"), a.get_flat())


def test_checkpoint_schema_mismatch(spec, tmp_path):
    a = PolicyNetwork(spec, "flat", 0)
    save_checkpoint(tmp_path / "a.bin", a.schema_hash(), 0, a.get_flat())
    with pytest.raises(CheckpointError, match="schema"):
        load_into(PolicyNetwork(spec, "substation-graph", 0), tmp_path / "a.bin")
    (tmp_path / "b.bin").write_bytes(b"nonsense")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "b.bin")
    raw = (tmp_path / "a.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "c.bin")


def test_adam_minimises_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        x.grad = None
        ad.backward(ad.tsum(ad.square(x - np.array([1.0, 0.5]))))
        opt.step()
    assert np.allclose(x.data, [1.0, 0.5], atol=1e-3)


def test_adam_clips_global_norm():
    x = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([x], lr=1.0, max_grad_norm=0.5)
    x.grad = np.array([30.0, 40.0])
    assert opt.step() == pytest.approx(50.0)
    # first Adam step moves each coordinate by lr regardless of scale
    assert np.allclose(np.abs(x.data), 1.0, atol=1e-6)
    assert np.allclose(opt.m[0], 0.1 * np.array([0.3, 0.4]))


def test_priors_bias_logits(spec):
    p = PolicyNetwork(spec, "flat", 0, noop_prior=2.0, reference_prior=1.0)
    q = PolicyNetwork(spec, "flat", 0)
    lay = layout(spec)
    diff = (p.actor.layers[-1].bias.data - q.actor.layers[-1].bias.data).reshape(lay.n_elements, MAX_DIM)
    rows = np.arange(lay.n_elements)
    assert np.all(diff[rows, lay.noop] == 2.0) and np.all(diff[rows, lay.reference] == 1.0)
    assert diff.sum() == 3.0 * lay.n_elements
