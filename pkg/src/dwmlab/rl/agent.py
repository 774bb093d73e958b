"""DDPG with twin critics, min TD target, RMSprop and soft target updates."""
from dataclasses import dataclass

import numpy as np

from .mlp import Mlp, squash, squash_grad


class ReplayBuffer:
    """Ring buffer of ``(s, a, r, s', done)``; batches are drawn without replacement."""

    def __init__(self, capacity, state_dim, action_dim, rng):
        self.capacity = int(capacity)
        self.state_dim, self.action_dim = state_dim, action_dim
        width = 2 * state_dim + action_dim + 2
        self.data = np.zeros((min(self.capacity, 4096), width))
        self.size = 0
        self.pos = 0
        self.rng = rng

    def _grow(self):
        if self.data.shape[0] < self.capacity and self.pos >= self.data.shape[0]:
            new = np.zeros((min(self.capacity, 2 * self.data.shape[0]), self.data.shape[1]))
            new[: self.data.shape[0]] = self.data
            self.data = new

    def add(self, s, a, r, s_next, done):
        self._grow()
        self.data[self.pos] = np.concatenate([s, np.atleast_1d(a), [r], s_next, [float(done)]])
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self):
        return self.size

    def sample(self, batch):
        idx = self.rng.choice(self.size, size=batch, replace=False)
        return self.split(self.data[idx])

    def split(self, rows):
        sd, ad = self.state_dim, self.action_dim
        return (rows[:, :sd], rows[:, sd:sd + ad], rows[:, sd + ad], rows[:, sd + ad + 1:2 * sd + ad + 1], rows[:, -1])


class OuNoise:
    """``x <- x + theta (mu - x) + sigma N(0, 1)``; ``sigma`` decays per episode."""

    def __init__(self, rng, theta=0.15, sigma=0.99, mu=0.0, decay=0.995, dim=1):
        self.rng = rng
        self.theta, self.sigma, self.mu, self.decay_rate = theta, sigma, mu, decay
        self.sigma0 = sigma
        self.x = np.full(dim, mu, dtype=float)

    def reset(self):
        self.x[:] = self.mu

    def sample(self):
        self.x = self.x + self.theta * (self.mu - self.x) + self.sigma * self.rng.standard_normal(self.x.shape)
        return self.x.copy()

    def decay(self):
        self.sigma *= self.decay_rate


class RMSprop:
    """Square-average RMSprop with the usual ``alpha = 0.99``, ``eps = 1e-8`` defaults."""

    def __init__(self, params, lr=1e-3, alpha=0.99, eps=1e-8):
        self.lr, self.alpha, self.eps = lr, alpha, eps
        self.sq = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k, g in grads.items():
            self.sq[k] = self.alpha * self.sq[k] + (1.0 - self.alpha) * g * g
            params[k] -= self.lr * g / (np.sqrt(self.sq[k]) + self.eps)


def clip_grad_norm(grads, max_norm=1.0):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


def soft_update(target, live, tau):
    for k, v in live.params.items():
        target.params[k] = tau * v + (1.0 - tau) * target.params[k]


@dataclass
class DdpgConfig:
    state_dim: int = 2
    hidden: int = 32
    U_max: float = 2.5e-3
    lr: float = 1e-3
    tau: float = 5e-3
    gamma: float = 0.99
    batch_size: int = 128
    buffer_size: int = 1_000_000
    grad_clip: float = 1.0
    ou_theta: float = 0.15
    ou_sigma: float = 0.99
    ou_decay: float = 0.995


class DdpgAgent:
    """Actor ``mu(s)`` and critics ``Q1, Q2(s, a)`` on the normalized action ``a in [0, 1]``.

    The environment action is ``U = U_max a^2``.
    """

    def __init__(self, config, rng_init, rng_explore):
        self.config = c = config
        h = c.hidden
        self.actor = Mlp((c.state_dim, h, h, h, 1), rng_init, out_scale=3e-3)
        self.critic1 = Mlp((c.state_dim + 1, h, h, h, 1), rng_init, out_scale=3e-3)
        self.critic2 = Mlp((c.state_dim + 1, h, h, h, 1), rng_init, out_scale=3e-3)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.opt = {
            "actor": RMSprop(self.actor.params, c.lr),
            "critic1": RMSprop(self.critic1.params, c.lr),
            "critic2": RMSprop(self.critic2.params, c.lr),
        }
        self.buffer = ReplayBuffer(c.buffer_size, c.state_dim, 1, rng_explore)
        self.noise = OuNoise(rng_explore, c.ou_theta, c.ou_sigma, decay=c.ou_decay)

    def networks(self):
        return {
            "actor": self.actor, "actor_target": self.actor_target,
            "critic1": self.critic1, "critic2": self.critic2,
            "critic1_target": self.critic1_target, "critic2_target": self.critic2_target,
        }

    def act(self, obs, explore=False):
        """Normalized action in ``[0, 1]`` and the covariance ``U``."""
        z = self.actor.forward(obs)[0]
        if explore:
            z = z + self.noise.sample()
        a = np.clip(0.5 * (np.tanh(z) + 1.0), 0.0, 1.0)
        return a, float(self.config.U_max * a[0] ** 2)

    def policy_U(self, obs):
        return float(squash(self.actor.forward(obs)[0, 0], self.config.U_max)[2])

    def td_target(self, r, s_next, done):
        a_next = 0.5 * (np.tanh(self.actor_target.forward(s_next)) + 1.0)
        x = np.hstack([s_next, a_next])
        q = np.minimum(self.critic1_target.forward(x)[:, 0], self.critic2_target.forward(x)[:, 0])
        return r + self.config.gamma * (1.0 - done) * q

    def train_step(self, batch=None):
        c = self.config
        s, a, r, s_next, done = self.buffer.sample(c.batch_size) if batch is None else batch
        y = self.td_target(r, s_next, done)
        x = np.hstack([s, a])
        losses = {}
        for name in ("critic1", "critic2"):
            net = getattr(self, name)
            q = net.forward(x)[:, 0]
            err = q - y
            losses[name] = float(np.mean(err * err))
            grads, _ = net.backward((2.0 / len(y)) * err[:, None])
            grads, _ = clip_grad_norm(grads, c.grad_clip)
            self.opt[name].step(net.params, grads)
        # actor ascends critic1 at a = mu(s)
        z = self.actor.forward(s)
        a_pi = 0.5 * (np.tanh(z) + 1.0)
        q_pi = self.critic1.forward(np.hstack([s, a_pi]))
        losses["actor"] = float(-np.mean(q_pi))
        _, dx = self.critic1.backward(np.full_like(q_pi, -1.0 / len(q_pi)))
        dz = dx[:, -1:] * squash_grad(z)
        grads, _ = self.actor.backward(dz)
        grads, _ = clip_grad_norm(grads, c.grad_clip)
        self.opt["actor"].step(self.actor.params, grads)
        self.update_targets(c.tau)
        for v in losses.values():
            if not np.isfinite(v):
                raise FloatingPointError(f"non-finite loss {losses}; batch rows s={s.tolist()} a={a.ravel().tolist()} r={r.tolist()}")
        return losses

    def update_targets(self, tau):
        soft_update(self.actor_target, self.actor, tau)
        soft_update(self.critic1_target, self.critic1, tau)
        soft_update(self.critic2_target, self.critic2, tau)
