"""Estimator-style front end for training and querying a DDPG watermark policy."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..attack import AttackScenario
from ..rng import stream
from .agent import DdpgAgent, DdpgConfig
from .checkpoint import load_agent, save_checkpoint
from .mlp import squash


def sample_training_scenario(rng, horizon, attack_prob=0.5, kind="replay", control_override="negate"):
    """Attack with probability ``attack_prob``, onset uniform on ``[T/10, 9T/10]``."""
    if rng.random() >= attack_prob:
        return AttackScenario()
    onset = int(rng.integers(max(1, horizon // 10), max(2, 9 * horizon // 10) + 1))
    return AttackScenario(kind=kind, onset=onset, control_override=control_override)


class DdpgWatermarkPolicy(BaseEstimator):
    """Learn ``U = pi(y / y_scale, d)`` on a twin environment.

    ``fit(env)`` trains for ``episodes`` episodes, ``predict(obs)`` maps
    observations to covariances and calling the fitted object on an
    environment returns its action, so it plugs straight into rollouts.
    """

    def __init__(self, episodes=200, hidden=32, lr=1e-3, tau=5e-3, gamma=0.99, batch_size=128,
                 buffer_size=1_000_000, grad_clip=1.0, ou_theta=0.15, ou_sigma=0.99, ou_decay=0.995,
                 updates_per_step=1, attack_prob=0.5, seed=0):
        self.episodes = episodes
        self.hidden = hidden
        self.lr = lr
        self.tau = tau
        self.gamma = gamma
        self.batch_size = batch_size
        self.buffer_size = buffer_size
        self.grad_clip = grad_clip
        self.ou_theta = ou_theta
        self.ou_sigma = ou_sigma
        self.ou_decay = ou_decay
        self.updates_per_step = updates_per_step
        self.attack_prob = attack_prob
        self.seed = seed

    def _config(self, env):
        return DdpgConfig(state_dim=len(env.observation()), hidden=self.hidden, U_max=env.action_bound, lr=self.lr,
                          tau=self.tau, gamma=self.gamma, batch_size=self.batch_size, buffer_size=self.buffer_size,
                          grad_clip=self.grad_clip, ou_theta=self.ou_theta, ou_sigma=self.ou_sigma,
                          ou_decay=self.ou_decay)

    def fit(self, env, checkpoint_path=None, checkpoint_every=None, config_hash="", resume_from=None, log=None):
        env.reset(AttackScenario(), seed=self.seed, replication=0)
        if resume_from is not None:
            self.agent_, doc = load_agent(resume_from)
            start = doc["episode"]
            self.returns_ = list(doc.get("returns", []))
            rng_sc = stream(self.seed, "scenario")
            rng_sc.bit_generator.state = doc["rng"]["scenario"]
        else:
            self.agent_ = DdpgAgent(self._config(env), stream(self.seed, "init"), stream(self.seed, "exploration"))
            start = 0
            self.returns_ = []
            rng_sc = stream(self.seed, "scenario")
        agent = self.agent_
        horizon = env.episode.horizon
        self.losses_ = []
        for ep in range(start, self.episodes):
            scenario = sample_training_scenario(rng_sc, horizon, self.attack_prob)
            env.reset(scenario, seed=self.seed, replication=ep)
            agent.noise.reset()
            obs = env.observation()
            total = 0.0
            while not env.done:
                a, U = agent.act(obs, explore=True)
                _, r, done, _ = env.step(U)
                obs_next = env.observation()
                agent.buffer.add(obs, a, r, obs_next, done)
                obs = obs_next
                total += r
                if len(agent.buffer) >= agent.config.batch_size:
                    for _ in range(self.updates_per_step):
                        last = agent.train_step()
                    self.losses_.append(last)
            agent.noise.decay()
            self.returns_.append(total)
            if log is not None:
                log(ep, total, scenario)
            done_eps = ep + 1
            if checkpoint_path is not None and (done_eps == self.episodes or (checkpoint_every and done_eps % checkpoint_every == 0)):
                self.save(checkpoint_path, config_hash, done_eps, rng_sc)
        self.n_features_in_ = agent.config.state_dim
        return self

    def save(self, path, config_hash="", episode=None, rng_sc=None, with_buffer=True):
        extra = {"episode": self.episodes if episode is None else episode, "returns": list(self.returns_),
                 "estimator": self.get_params()}
        if rng_sc is not None:
            extra["rng"] = {"explore": self.agent_.buffer.rng.bit_generator.state, "scenario": rng_sc.bit_generator.state}
        return save_checkpoint(path, self.agent_, config_hash, extra, with_buffer=with_buffer)

    @classmethod
    def from_checkpoint(cls, path, expected_hash=None):
        agent, doc = load_agent(path, expected_hash)
        est = cls(**doc.get("estimator", {}))
        est.agent_ = agent
        est.returns_ = list(doc.get("returns", []))
        est.n_features_in_ = agent.config.state_dim
        return est

    def predict(self, obs):
        """Covariance ``U`` for each observation row."""
        check_is_fitted(self)
        z = self.agent_.actor.forward(np.atleast_2d(obs))[:, 0]
        return squash(z, self.agent_.config.U_max)[2]

    def __call__(self, env):
        return float(self.predict(env.observation())[0])
