"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag

EPS = 1e-5
THRESHOLD = 1e-4
DENOM_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    op: str
    max_rel_err: float
    threshold: float = THRESHOLD

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err <= self.threshold)

    @property
    def verdict(self):
        return "PASS" if self.passed else "FAIL"


def relative_error(analytic, numeric, floor=DENOM_FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check(fn, params, rng, n_coords=100, eps=EPS, corrupt=False):
    """Compare tape gradients of scalar ``fn()`` to central differences.

    ``params`` are leaf tensors read by ``fn``. Up to ``n_coords`` random
    coordinates (across all params) are perturbed. With ``corrupt`` the
    analytic gradient is deliberately scaled, a negative control.
    """
    for p in params:
        p.grad = None
    loss = fn()
    ag.backward(loss)
    analytic_all = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    analytic, numeric = [], []
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        plus = fn().item()
        flat[j] = orig - eps
        minus = fn().item()
        flat[j] = orig
        numeric.append((plus - minus) / (2 * eps))
        analytic.append(analytic_all[i].reshape(-1)[j])
    analytic = np.array(analytic)
    if corrupt:
        analytic = analytic * 1.5 + 1e-3
    return relative_error(analytic, np.array(numeric))


def _suite(rng):
    """Registered differentiable ops as ``(name, fn, params)`` triples."""
    from .hallucinator import Hallucinator, belief_loss, hallucinate_step, ssim
    from .nn import ConvLSTMCell, GRUCell
    from .pipeline import ThreeHeadClassifier, class_loss
    from .temporal import SkipPolicy, gumbel_softmax, policy_forward
    from .attention import PairwiseAttention

    def leaf(*shape):
        return ag.tensor(rng.standard_normal(shape), requires_grad=True)

    suite = []
    x, w, b = leaf(2, 3, 6, 6), leaf(4, 3, 3, 3), leaf(4)
    suite.append(("conv2d", lambda: ag.tsum(ag.tanh(ag.conv2d(x, w, b, 1))), [x, w, b]))

    gru = GRUCell(5, 4, rng)
    gx, gh = leaf(3, 5), leaf(3, 4)
    suite.append(("gru_cell", lambda: ag.tsum(gru(gx, gh) ** 2), [gx, gh] + gru.parameters()))

    cell = ConvLSTMCell(3, 4, 3, rng)
    lx, lh, lc = leaf(3, 5, 5), leaf(4, 5, 5), leaf(4, 5, 5)
    suite.append(("conv_lstm_step", lambda: ag.tsum(cell(lx, (lh, lc))[0] ** 2) + ag.tsum(cell(lx, (lh, lc))[1]), [lx, lh, lc] + cell.parameters()))

    att = PairwiseAttention(4, 3, rng)
    ax = leaf(4, 5, 5)
    # mean keeps the loss small, so round-off on the (identically zero) key-bias gradient stays below tolerance
    suite.append(("pairwise_attention", lambda: ag.mean(att(ax)[0] ** 2), [ax] + att.parameters()))

    hal = Hallucinator(4, 4, rng)
    seq = rng.random((2, 3, 4, 5, 5))
    target = rng.random((4, 5, 5))
    state = hal.initial_state((5, 5))
    suite.append(("encoder_decoder", lambda: ag.tsum(hallucinate_step(seq[0, 0], state, hal)[0] * target), hal.parameters()))

    sa, sb = ag.tensor(rng.random((4, 5, 5)) + 0.1, requires_grad=True), rng.random((4, 5, 5))
    suite.append(("ssim", lambda: ssim(sa, sb), [sa]))
    suite.append(("belief_loss", lambda: belief_loss(seq, hal), hal.parameters()))

    logits, wts = leaf(4), rng.standard_normal(4)
    suite.append(("gumbel_softmax", lambda: ag.tsum(gumbel_softmax(logits, tau=0.7, noise=False) * wts), [logits]))

    pol = SkipPolicy(6, 5, 2, hidden=5, rng=rng)
    f, hv, wr = rng.random(6), rng.random(5), rng.standard_normal(3)
    suite.append(("policy_head", lambda: ag.tsum(policy_forward(f, hv, 0.4, pol.initial_state(), pol, noise=False, hard=False)[0] * wr), pol.parameters()))

    clf = ThreeHeadClassifier(3, 2, 3, hidden=4, rng=rng)
    low, high, labels = rng.random((4, 3)), rng.random((4, 6)), rng.integers(0, 3, 4)
    suite.append(("cross_entropy_heads", lambda: class_loss(clf.head_logits(clf.update(low, high, clf.initial_state(4))), labels, (1.0, 0.5, 2.0)), clf.parameters()))
    return suite


def registered_ops():
    return [name for name, _, _ in _suite(np.random.default_rng(0))]


def run_suite(seed=0, corrupt=None, n_coords=60):
    """Check every registered op; ``corrupt`` names one op whose gradient is sabotaged."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, params in _suite(rng):
        err = check(fn, params, rng, n_coords=n_coords, corrupt=(name == corrupt))
        results.append(GradCheckResult(name, err))
    return results
