"""Multi-critic PPO with a Beta policy head, in plain numpy (float64).

The actor maps the 29-dim augmented state through two tanh layers to four
raw outputs (one alpha/beta pair per action dimension); alpha, beta =
1 + softplus(raw) keeps the Beta unimodal. Three independent critic heads
regress one driving attribute each. Advantages are computed per critic with
GAE, combined with the per-step attribute weights into a single integrated
advantage, standardized, and fed to the clipped surrogate. Gradients are
analytic (verified against central finite differences in the test suite)
and applied with bias-corrected adaptive moments after a global-norm clip.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

STATE_DIM = 29
ACTION_DIM = 2
HIDDEN_DIM = 64
N_CRITICS = 3

GAMMA = 0.99
GAE_LAMBDA = 0.95
CLIP_EPS = 0.2
ROLLOUT_STEPS = 2048
MINIBATCH_SIZE = 256
UPDATE_EPOCHS = 4
LEARNING_RATE = 3e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MAX_GRAD_NORM = 0.5
ENTROPY_COEF = 0.01
VALUE_COEF = 0.5

LN2 = math.log(2.0)
_X_EPS = 1e-12

CHECKPOINT_MAGIC = b"HDRVCKPT"
CHECKPOINT_VERSION = 1


class UpdateDiverged(RuntimeError):
    """Non-finite loss or gradient during an update."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


# ---------------------------------------------------------------------------
# parameters


@dataclass
class NetParams:
    """Actor and critic layer tensors; each net is a list of [W, b] pairs."""

    actor: list[list[np.ndarray]]
    critics: list[list[list[np.ndarray]]]

    def tensors(self):
        for w, b in self.actor:
            yield w
            yield b
        for critic in self.critics:
            for w, b in critic:
                yield w
                yield b

    def copy(self) -> "NetParams":
        return NetParams(
            actor=[[w.copy(), b.copy()] for w, b in self.actor],
            critics=[[[w.copy(), b.copy()] for w, b in critic] for critic in self.critics],
        )

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors())


def _init_net(rng: np.random.Generator, sizes: list[int], out_scale: float) -> list[list[np.ndarray]]:
    net = []
    last = len(sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        if i == last:
            w *= out_scale
            b *= out_scale
        net.append([w, b])
    return net


def init_params(
    rng: np.random.Generator,
    *,
    state_dim: int = STATE_DIM,
    hidden_dim: int = HIDDEN_DIM,
    n_critics: int = N_CRITICS,
    out_scale: float = 0.01,
) -> NetParams:
    actor = _init_net(rng, [state_dim, hidden_dim, hidden_dim, 2 * ACTION_DIM], out_scale)
    critics = [
        _init_net(rng, [state_dim, hidden_dim, hidden_dim, 1], out_scale)
        for _ in range(n_critics)
    ]
    return NetParams(actor, critics)


# ---------------------------------------------------------------------------
# forward / distribution


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward(net, x: np.ndarray) -> np.ndarray:
    h = x
    for w, b in net[:-1]:
        h = np.tanh(h @ w + b)
    w, b = net[-1]
    return h @ w + b


def _forward_cached(net, x: np.ndarray):
    acts = [x]
    h = x
    for w, b in net[:-1]:
        h = np.tanh(h @ w + b)
        acts.append(h)
    w, b = net[-1]
    return h @ w + b, acts


def _backward(net, acts, g_out):
    """Gradients for one MLP given d(loss)/d(output); returns [gW, gb, ...]."""
    grads = [None] * (2 * len(net))
    g = g_out
    for i in range(len(net) - 1, -1, -1):
        w, _ = net[i]
        grads[2 * i] = acts[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ w.T) * (1.0 - acts[i] ** 2)
    return grads


def actor_forward(params: NetParams, state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Beta parameters for one state (2,) or a batch (B, 2); always > 1."""
    x = np.asarray(state, dtype=float)
    single = x.ndim == 1
    raw = _forward(params.actor, x[None, :] if single else x)
    alpha = 1.0 + softplus(raw[:, 0::2])
    beta = 1.0 + softplus(raw[:, 1::2])
    if single:
        return alpha[0], beta[0]
    return alpha, beta


def critic_values(params: NetParams, states: np.ndarray) -> np.ndarray:
    """(B, N_CRITICS) state values."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    return np.column_stack([_forward(net, x)[:, 0] for net in params.critics])


def _x_and_logs(actions: np.ndarray):
    x = np.clip((np.asarray(actions, dtype=float) + 1.0) / 2.0, _X_EPS, 1.0 - _X_EPS)
    return x, np.log(x), np.log1p(-x)


def action_log_prob(alpha: np.ndarray, beta: np.ndarray, actions: np.ndarray):
    """Log-density of actions in [-1, 1]^2 under the affine-mapped Beta."""
    x, lnx, ln1mx = _x_and_logs(actions)
    ln_beta_fn = gammaln(alpha) + gammaln(beta) - gammaln(alpha + beta)
    return ((alpha - 1.0) * lnx + (beta - 1.0) * ln1mx - ln_beta_fn).sum(axis=-1) - ACTION_DIM * LN2


def beta_entropy(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Differential entropy of Beta(alpha, beta), elementwise."""
    return (
        gammaln(alpha)
        + gammaln(beta)
        - gammaln(alpha + beta)
        - (alpha - 1.0) * digamma(alpha)
        - (beta - 1.0) * digamma(beta)
        + (alpha + beta - 2.0) * digamma(alpha + beta)
    )


def sample_action(alpha: np.ndarray, beta: np.ndarray, rng: np.random.Generator):
    """Sample an action in [-1, 1]^2 and its log-prob.

    The log-prob is evaluated at the round-tripped x = (action + 1) / 2 so
    that recomputing it later from the stored action reproduces this value.
    """
    x = rng.beta(alpha, beta)
    action = 2.0 * x - 1.0
    return action, float(action_log_prob(alpha, beta, action))


def mean_action(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return 2.0 * (alpha / (alpha + beta)) - 1.0


# ---------------------------------------------------------------------------
# advantages


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap: np.ndarray,
    dones: np.ndarray,
    gamma: float = GAMMA,
    lam: float = GAE_LAMBDA,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-critic GAE advantages and value targets (targets = A + v)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    steps = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_adv = np.zeros(rewards.shape[1])
    next_value = np.asarray(bootstrap, dtype=float)
    for t in range(steps - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def integrate(advantages: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted advantage combination, raw and batch-standardized."""
    raw = (np.asarray(advantages, dtype=float) * np.asarray(weights, dtype=float)).sum(axis=1)
    std = (raw - raw.mean()) / (raw.std() + 1e-8)
    return raw, std


def eq1_return(rewards, gamma: float = GAMMA) -> float:
    """Discounted episode return sum_t gamma^t r_t (logging only)."""
    total = 0.0
    g = 1.0
    for r in rewards:
        total += g * float(r)
        g *= gamma
    return total


# ---------------------------------------------------------------------------
# rollout storage


@dataclass
class TrajectoryBatch:
    states: np.ndarray  # (T, STATE_DIM)
    actions: np.ndarray  # (T, ACTION_DIM)
    log_probs: np.ndarray  # (T,)
    rewards: np.ndarray  # (T, N_CRITICS)
    values: np.ndarray  # (T, N_CRITICS)
    dones: np.ndarray  # (T,)
    weights: np.ndarray  # (T, N_CRITICS)
    bootstrap_value: np.ndarray  # (N_CRITICS,)

    def __len__(self) -> int:
        return self.states.shape[0]


class RolloutBuffer:
    def __init__(self):
        self.states = []
        self.actions = []
        self.log_probs = []
        self.rewards = []
        self.dones = []
        self.weights = []

    def add(self, state, action, log_prob, reward, done, weights) -> None:
        self.states.append(state)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.rewards.append(reward)
        self.dones.append(1.0 if done else 0.0)
        self.weights.append(weights)

    def __len__(self) -> int:
        return len(self.states)

    def to_batch(self, values: np.ndarray, bootstrap_value: np.ndarray) -> TrajectoryBatch:
        return TrajectoryBatch(
            states=np.asarray(self.states, dtype=float),
            actions=np.asarray(self.actions, dtype=float),
            log_probs=np.asarray(self.log_probs, dtype=float),
            rewards=np.asarray(self.rewards, dtype=float),
            values=np.asarray(values, dtype=float),
            dones=np.asarray(self.dones, dtype=float),
            weights=np.asarray(self.weights, dtype=float),
            bootstrap_value=np.asarray(bootstrap_value, dtype=float),
        )


# ---------------------------------------------------------------------------
# loss and gradients


def loss_and_grads(
    params: NetParams,
    states: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    value_targets: np.ndarray,
    clip_eps: float = CLIP_EPS,
    entropy_coef: float = ENTROPY_COEF,
    value_coef: float = VALUE_COEF,
):
    """Total PPO loss, analytic gradients (tensors() order), and stats."""
    batch = states.shape[0]
    n_critics = len(params.critics)

    raw, actor_acts = _forward_cached(params.actor, states)
    a_raw, b_raw = raw[:, 0::2], raw[:, 1::2]
    alpha = 1.0 + softplus(a_raw)
    beta = 1.0 + softplus(b_raw)

    x, lnx, ln1mx = _x_and_logs(actions)
    ln_beta_fn = gammaln(alpha) + gammaln(beta) - gammaln(alpha + beta)
    log_probs = ((alpha - 1.0) * lnx + (beta - 1.0) * ln1mx - ln_beta_fn).sum(axis=1) - ACTION_DIM * LN2

    ratio = np.exp(log_probs - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    l_clip = np.minimum(surr1, surr2).mean()

    psi_a, psi_b, psi_ab = digamma(alpha), digamma(beta), digamma(alpha + beta)
    entropy = (
        ln_beta_fn
        - (alpha - 1.0) * psi_a
        - (beta - 1.0) * psi_b
        + (alpha + beta - 2.0) * psi_ab
    ).sum(axis=1) + ACTION_DIM * LN2
    entropy_mean = entropy.mean()

    values = []
    critic_acts = []
    value_losses = []
    for i, net in enumerate(params.critics):
        out, acts = _forward_cached(net, states)
        values.append(out[:, 0])
        critic_acts.append(acts)
        value_losses.append(float(np.mean((out[:, 0] - value_targets[:, i]) ** 2)))
    value_term = value_coef * sum(value_losses) / n_critics

    loss = -l_clip + value_term - entropy_coef * entropy_mean

    # Policy gradient: min() follows the unclipped branch wherever it is the
    # smaller (inside the clip band both branches coincide exactly).
    use_unclipped = surr1 <= surr2
    g_lp = np.where(use_unclipped, ratio * advantages, 0.0) * (-1.0 / batch)

    tri_a, tri_b, tri_ab = polygamma(1, alpha), polygamma(1, beta), polygamma(1, alpha + beta)
    dlp_da = lnx - psi_a + psi_ab
    dlp_db = ln1mx - psi_b + psi_ab
    dent_da = -(alpha - 1.0) * tri_a + (alpha + beta - 2.0) * tri_ab
    dent_db = -(beta - 1.0) * tri_b + (alpha + beta - 2.0) * tri_ab

    g_alpha = g_lp[:, None] * dlp_da + (-entropy_coef / batch) * dent_da
    g_beta = g_lp[:, None] * dlp_db + (-entropy_coef / batch) * dent_db

    g_raw = np.empty_like(raw)
    g_raw[:, 0::2] = g_alpha * _sigmoid(a_raw)
    g_raw[:, 1::2] = g_beta * _sigmoid(b_raw)
    grads = _backward(params.actor, actor_acts, g_raw)

    for i, net in enumerate(params.critics):
        g_v = (values[i] - value_targets[:, i]) * (2.0 * value_coef / (n_critics * batch))
        grads.extend(_backward(net, critic_acts[i], g_v[:, None]))

    stats = {
        "mean_ratio": float(ratio.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "value_loss": tuple(value_losses),
        "entropy": float(entropy_mean),
        "policy_term": float(-l_clip),
        "total_loss": float(loss),
    }
    return float(loss), grads, stats


def ppo_loss(
    params: NetParams,
    states,
    actions,
    old_log_probs,
    advantages,
    value_targets,
    clip_eps: float = CLIP_EPS,
    entropy_coef: float = ENTROPY_COEF,
    value_coef: float = VALUE_COEF,
) -> float:
    """Loss only (used by the finite-difference gradient checks)."""
    raw = _forward(params.actor, states)
    alpha = 1.0 + softplus(raw[:, 0::2])
    beta = 1.0 + softplus(raw[:, 1::2])
    log_probs = action_log_prob(alpha, beta, actions)
    ratio = np.exp(log_probs - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    l_clip = np.minimum(surr1, surr2).mean()
    entropy = (beta_entropy(alpha, beta).sum(axis=1) + ACTION_DIM * LN2).mean()
    value_term = 0.0
    for i, net in enumerate(params.critics):
        v = _forward(net, states)[:, 0]
        value_term += float(np.mean((v - value_targets[:, i]) ** 2))
    value_term *= value_coef / len(params.critics)
    return float(-l_clip + value_term - entropy_coef * entropy)


# ---------------------------------------------------------------------------
# optimizer


def clip_global_norm(grads: list[np.ndarray], max_norm: float = MAX_GRAD_NORM) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class AdamState:
    """Bias-corrected per-parameter moment accumulators."""

    def __init__(
        self,
        params: NetParams,
        lr: float = LEARNING_RATE,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params.tensors()]
        self.v = [np.zeros_like(p) for p in params.tensors()]

    def step(self, params: NetParams, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params.tensors(), grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# update


def ppo_update(
    params: NetParams,
    opt: AdamState,
    batch: TrajectoryBatch,
    advantages_std: np.ndarray,
    value_targets: np.ndarray,
    rng: np.random.Generator,
    *,
    epochs: int = UPDATE_EPOCHS,
    minibatch_size: int = MINIBATCH_SIZE,
    clip_eps: float = CLIP_EPS,
) -> dict:
    """Clipped-surrogate update over the rollout; returns averaged stats."""
    steps = len(batch)
    agg: dict[str, float] = {}
    value_loss_sum = np.zeros(len(params.critics))
    count = 0
    grad_norm_sum = 0.0
    for epoch in range(epochs):
        order = rng.permutation(steps)
        for start in range(0, steps, minibatch_size):
            idx = order[start : start + minibatch_size]
            loss, grads, stats = loss_and_grads(
                params,
                batch.states[idx],
                batch.actions[idx],
                batch.log_probs[idx],
                advantages_std[idx],
                value_targets[idx],
                clip_eps=clip_eps,
            )
            if not math.isfinite(loss) or any(not np.isfinite(g).all() for g in grads):
                raise UpdateDiverged(
                    f"non-finite loss/gradient at epoch {epoch}, minibatch {start // minibatch_size}"
                )
            grad_norm_sum += clip_global_norm(grads)
            opt.step(params, grads)
            for key in ("mean_ratio", "clip_fraction", "entropy", "policy_term", "total_loss"):
                agg[key] = agg.get(key, 0.0) + stats[key]
            value_loss_sum += np.asarray(stats["value_loss"])
            count += 1
    out = {key: value / count for key, value in agg.items()}
    out["value_loss"] = tuple(value_loss_sum / count)
    out["grad_norm"] = grad_norm_sum / count
    out["minibatches"] = count
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: NetParams) -> None:
    """Versioned flat binary: header, shape table, row-major float64 data."""
    tensors = list(params.tensors())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<IIII",
                CHECKPOINT_VERSION,
                len(params.actor),
                len(params.critics),
                len(params.critics[0]),
            )
        )
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> NetParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    try:
        version, n_actor, n_critics, n_critic_layers = struct.unpack_from("<IIII", data, 8)
    except struct.error as exc:
        raise CheckpointError("truncated header") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 8 + 16
    n_tensors = 2 * (n_actor + n_critics * n_critic_layers)
    shapes = []
    try:
        for _ in range(n_tensors):
            (ndim,) = struct.unpack_from("<I", data, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            shapes.append(shape)
    except struct.error as exc:
        raise CheckpointError("truncated shape table") from exc
    tensors = []
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        end = offset + 8 * size
        if end > len(data):
            raise CheckpointError("truncated tensor data")
        tensors.append(np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy())
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after tensor data")

    def take_net(n_layers):
        net = []
        for _ in range(n_layers):
            w = tensors.pop(0)
            b = tensors.pop(0)
            net.append([w, b])
        return net

    actor = take_net(n_actor)
    critics = [take_net(n_critic_layers) for _ in range(n_critics)]
    return NetParams(actor, critics)
