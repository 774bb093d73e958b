"""Watermark-design MDP: the machine-tool digital twin and the block-aware stepper twin.

Each environment runs three plants in lock step on shared process noise:

* the real plant, which receives the watermark and any adversary action;
* a shadow plant with ``phi = 0`` but the same noise and adversary actions,
  whose output is the un-watermarked reference in the reward;
* a nominal recording plant with its own watermark draws, whose outputs are
  the stale measurements a replay adversary feeds back.
"""
from dataclasses import dataclass, field

import numpy as np

from ._validation import ConfigurationError
from .attack import AttackScenario, RecordingBuffer, applied_input, observed_measurement
from .belief import initial_belief, type2_error, update
from .detect import DetectorConfig, alarm, predict, statistic
from .identify import MOTOR_SEGMENTS, default_motor_gmms
from .plant import Controller, PiecewiseModel, PlantModel, Segment, control, piecewise_step
from .rng import streams
from .watermark import draw, initial_moments, propagate_moments

TRACE_COLUMNS = ("t", "y", "y_wom", "u", "phi", "U", "g", "I", "d", "reward", "attack_active")


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.35
    w2: float = 0.35
    w3: float = 0.30

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ConfigurationError("reward weights must be nonnegative")


def reward_step(phi, y_wom, y, d_next, w):
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    diff = np.atleast_1d(np.asarray(y_wom, dtype=float) - np.asarray(y, dtype=float))
    return float(-w.w1 * np.abs(phi).sum() - w.w2 * np.sqrt(diff @ diff) + w.w3 * abs(0.5 - d_next))


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 1000
    decision_block: int = 1
    processed_block: int = None
    scenario: AttackScenario = field(default_factory=AttackScenario)
    weights: RewardWeights = field(default_factory=RewardWeights)
    seed: int = 0
    replication: int = 0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if self.processed_block is None:
            object.__setattr__(self, "processed_block", self.decision_block)
        if not 1 <= self.processed_block <= self.decision_block:
            raise ConfigurationError("processed_block must lie in [1, decision_block]")


@dataclass(frozen=True)
class MdpState:
    y: np.ndarray
    d: float


def _clamp_action(U, U_max, c):
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape == (1, 1) and c > 1:
        U = U[0, 0] * np.eye(c)
    if U.shape != (c, c):
        raise ConfigurationError(f"action must be a {c}x{c} covariance, got shape {U.shape}")
    if c == 1:
        return np.clip(U, 0.0, U_max)
    lam, vec = np.linalg.eigh(0.5 * (U + U.T))
    return vec @ np.diag(np.clip(lam, 0.0, U_max)) @ vec.T


class _TwinBase:
    """Bookkeeping shared by both twins: detector, belief, trace."""

    def _observe(self, t, y_obs_prev, u_det, phi, y_obs, detector_model, U_hist, moments):
        y_hat = predict(self.detector.estimator_mode, detector_model, y_obs_prev, u_det, phi)
        g = statistic(y_obs - y_hat, self.detector)
        I = alarm(g, self.detector)
        beta = type2_error(U_hist, self.detector.Q, detector_model.B, self.detector.threshold,
                           self.rho, t, self.w_beta, moments=moments)
        self.belief = update(self.belief, I, beta, t)
        return g, I

    def _row(self, t, y, y_wom, u, phi, U, g, I, reward, active):
        self.trace.append((t, float(y[0]), float(y_wom[0]), float(u[0]), float(phi[0]), float(np.trace(U)),
                           g, I, self.belief.d, reward, int(active)))

    @property
    def state(self):
        return MdpState(y=self.y_obs.copy(), d=self.belief.d)

    def observation(self):
        """Network input ``(y / y_scale, d)``."""
        return np.concatenate([self.y_obs / self.y_scale, [self.belief.d]])


class MtcTwinEnv(_TwinBase):
    """Machine-tool twin: scalar plant under proportional control, one action per step.

    Parameters
    ----------
    model, controller : PlantModel, Controller
    detector : DetectorConfig
    q, rho : float
        Prior attack probability and geometric onset rate (default ``1 / T``).
    w_beta : int
        Type-II window.
    U_max : float
        Upper bound on the watermark variance.
    recording_noise : {"shared", "independent"}
        Whether the recording run reuses the real plant's process noise.
    """

    def __init__(self, model=None, controller=None, detector=None, episode=None, q=0.05, rho=None,
                 w_beta=50, U_max=2.5e-3, recording_noise="shared", y_scale=None):
        self.model = model or PlantModel(A=1.0, B=0.010, Q=1.3741e-13)
        self.controller = controller or Controller(kp=1.0, setpoint=0.012)
        self.detector = detector or DetectorConfig.from_alpha(self.model.Q, 0.005)
        self.episode = episode or EpisodeConfig()
        self.q = q
        self.rho = 1.0 / self.episode.horizon if rho is None else rho
        self.w_beta = w_beta
        self.U_max = U_max
        if recording_noise not in ("shared", "independent"):
            raise ConfigurationError(f"recording_noise must be 'shared' or 'independent', got {recording_noise!r}")
        self.recording_noise = recording_noise
        self.y_scale = np.abs(self.controller.setpoint) if y_scale is None else np.atleast_1d(y_scale)
        self.y_scale = np.where(self.y_scale > 0, self.y_scale, 1.0)

    @property
    def action_bound(self):
        return self.U_max

    def reset(self, scenario=None, seed=None, replication=None):
        ep = self.episode
        self.scenario = ep.scenario if scenario is None else scenario
        seed = ep.seed if seed is None else seed
        replication = ep.replication if replication is None else replication
        self.rngs = streams(seed, replication)
        y0 = self.model.sample_initial(self.rngs["plant"])
        self.y = y0.copy()
        self.y_wom = y0.copy()
        self.y_rec = y0.copy()
        self.y_obs = y0.copy()
        self.y_wom_obs = y0.copy()
        self.buffer = RecordingBuffer([y0.copy()], start=0)
        self.t = 0
        self.belief = initial_belief(self.q, self.rho, self.detector.alpha, self.w_beta)
        self.U_hist = []
        self.moments = [initial_moments(self.model)]
        self.trace = []
        self.done = False
        return self.state

    def step(self, U):
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        m, sc, t = self.model, self.scenario, self.t
        U = _clamp_action(U, self.U_max, m.c)
        r = self.rngs
        u = control(self.controller, self.y_obs)
        u_wom = control(self.controller, self.y_wom_obs)
        u_rec = control(self.controller, self.y_rec)
        phi = draw(U, r["watermark"])
        phi_rec = draw(U, r["recording"])
        a = applied_input(sc, t, u, phi)
        a_wom = applied_input(sc, t, u_wom, np.zeros_like(phi))
        w = m.sample_noise(r["plant"])
        w_rec = w if self.recording_noise == "shared" else m.sample_noise(r["recording"])
        A, B = m.A, m.B
        y_next = A @ self.y + B @ a + w
        y_wom_next = A @ self.y_wom + B @ a_wom + w
        self.y_rec = A @ self.y_rec + B @ (u_rec + phi_rec) + w_rec
        self.buffer.append(self.y_rec)
        y_obs_next = observed_measurement(sc, t + 1, y_next, self.buffer)
        y_wom_obs_next = observed_measurement(sc, t + 1, y_wom_next, self.buffer)

        flip = sc.kind in ("flip_pre", "flip_post") and sc.active(t)
        u_det = a - phi if flip and self.detector.estimator_mode == "compensating" else u
        self.U_hist.append(U)
        self.moments.append(propagate_moments(self.moments[-1], m, u_det, U))
        g, I = self._observe(t + 1, self.y_obs, u_det, phi, y_obs_next, m, self.U_hist, self.moments)
        reward = reward_step(phi, y_wom_next, y_next, self.belief.d, self.episode.weights)

        self.y, self.y_wom, self.y_obs, self.y_wom_obs = y_next, y_wom_next, y_obs_next, y_wom_obs_next
        self.t = t + 1
        self.done = self.t >= self.episode.horizon
        self._row(self.t, y_next, y_wom_next, u, phi, U, g, I, reward, sc.active(t))
        info = {"g": g, "I": I, "phi": phi, "attack_active": sc.active(t), "t": self.t}
        return self.state, reward, self.done, info


class _MotorPlant:
    """One piecewise stepper trajectory driven by GMM control draws."""

    def __init__(self, segments, gmms, y0):
        self.pw = PiecewiseModel(list(segments))
        self.pw.activate(0, y0)
        self.gmms = gmms
        self.y = np.array(y0, dtype=float)
        self.completed = False

    def command(self, uniform, normal):
        return np.atleast_1d(self.gmms[self.pw.active_index].from_draws(uniform, normal))

    @property
    def model(self):
        return self.pw.active.model

    def advance(self, u_applied, z):
        w = self.model._LQ @ z
        if self.completed:
            m = self.model
            self.y = m.A @ self.y + m.B @ u_applied + w
        else:
            self.y, _, _ = piecewise_step(self.pw, self.y, u_applied, w=w)
            self.completed = self.pw.exhausted
        return self.y


def motor_segments(table=MOTOR_SEGMENTS):
    return [Segment(PlantModel(A=a, B=b, Q=q), Controller(kp=0.0, setpoint=s)) for a, b, q, s in table]


class MotorTwinEnv(_TwinBase):
    """Stepper twin: four ARX operating points, GMM control surrogate, 500/100 block cadence.

    Each action is held for ``decision_block`` fast samples; only the first
    ``processed_block`` of them reach the detector and belief, and the reward
    is the sum over those samples. The episode ends when the real plant
    completes the profile or at ``horizon`` fast samples.
    """

    def __init__(self, segments=None, gmms=None, threshold=16.0, episode=None, q=0.05, rho=None,
                 w_beta=500, U_max=0.01, recording_noise="shared", y_scale=None):
        self.segments = motor_segments() if segments is None else segments
        self.gmms = default_motor_gmms() if gmms is None else gmms
        if len(self.gmms) != len(self.segments):
            raise ConfigurationError("need one GMM surrogate per segment")
        self.episode = episode or EpisodeConfig(horizon=41000, decision_block=500, processed_block=100)
        self.detector = DetectorConfig.from_threshold(self.segments[0].model.Q, threshold)
        self.threshold = threshold
        self.q = q
        self.rho = 1.0 / self.episode.horizon if rho is None else rho
        self.w_beta = w_beta
        self.U_max = U_max
        if recording_noise not in ("shared", "independent"):
            raise ConfigurationError(f"recording_noise must be 'shared' or 'independent', got {recording_noise!r}")
        self.recording_noise = recording_noise
        top = max(abs(s.setpoint) for s in self.segments)
        self.y_scale = np.atleast_1d(top if y_scale is None else y_scale)

    @property
    def action_bound(self):
        return self.U_max

    def reset(self, scenario=None, seed=None, replication=None):
        ep = self.episode
        self.scenario = ep.scenario if scenario is None else scenario
        seed = ep.seed if seed is None else seed
        replication = ep.replication if replication is None else replication
        self.rngs = streams(seed, replication)
        y0 = np.zeros(1)
        self.real = _MotorPlant(self.segments, self.gmms, y0)
        self.shadow = _MotorPlant(self.segments, self.gmms, y0)
        self.rec = _MotorPlant(self.segments, self.gmms, y0)
        self.buffer = RecordingBuffer([y0.copy()], start=0)
        self.y_obs = y0.copy()
        self.k = 0
        self.epochs = 0
        self.belief = initial_belief(self.q, self.rho, self.detector.alpha, self.w_beta)
        self.U_hist = []
        self.trace = []
        self.done = False
        return self.state

    def _detector_for(self, seg_model):
        # the detector normalizes by the noise covariance of the active operating point
        if not np.array_equal(seg_model.Q, self.detector.Q):
            self.detector = DetectorConfig.from_threshold(seg_model.Q, self.threshold)

    def step(self, U):
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        ep, sc, r = self.episode, self.scenario, self.rngs
        U = _clamp_action(U, self.U_max, 1)
        total = 0.0
        for j in range(ep.decision_block):
            k = self.k
            uni, nor = r["control"].random(), r["control"].standard_normal()
            u = self.real.command(uni, nor)
            u_wom = self.shadow.command(uni, nor)
            u_rec = self.rec.command(r["recording"].random(), r["recording"].standard_normal())
            phi = draw(U, r["watermark"])
            phi_rec = draw(U, r["recording"])
            a = applied_input(sc, k, u, phi)
            a_wom = applied_input(sc, k, u_wom, np.zeros(1))
            z = r["plant"].standard_normal(1)
            z_rec = z if self.recording_noise == "shared" else r["recording"].standard_normal(1)
            seg_model = self.real.model
            y_prev_obs = self.y_obs
            y = self.real.advance(a, z)
            y_wom = self.shadow.advance(a_wom, z)
            self.buffer.append(self.rec.advance(u_rec + phi_rec, z_rec))
            self.y_obs = observed_measurement(sc, k + 1, y, self.buffer)
            self.U_hist.append(U)
            self.k = k + 1
            if j < ep.processed_block:
                self._detector_for(seg_model)
                g, I = self._observe(k + 1, y_prev_obs, u, phi, self.y_obs, seg_model, self.U_hist, None)
                rew = reward_step(phi, y_wom, y, self.belief.d, ep.weights)
                total += rew
                self._row(k + 1, y, y_wom, u, phi, U, g, I, rew, sc.active(k))
            if self.real.completed or self.k >= ep.horizon:
                self.done = True
                break
        self.epochs += 1
        info = {"epoch": self.epochs, "k": self.k, "segment": self.real.pw.active_index,
                "attack_active": sc.active(self.k - 1)}
        return self.state, total, self.done, info


def run_episode(env, policy, scenario=None, seed=None, replication=None):
    """Roll out ``policy(env)`` (returns a covariance) until done; returns the total reward."""
    env.reset(scenario, seed, replication)
    total = 0.0
    while not env.done:
        _, rew, _, _ = env.step(policy(env))
        total += rew
    return total


class ConstantPolicy:
    def __init__(self, U):
        self.U = float(U)

    def __call__(self, env):
        return self.U
