"""Experiment recipes behind the command-line tool.

Replications are independent given ``(seed, replication)`` and fan out over
joblib workers; results are merged by replication index so outputs do not
depend on ``n_jobs``.
"""
import csv
import json
import os
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from ._validation import ConfigurationError
from .attack import AttackScenario
from .config import config_hash, dumps
from .detect import DetectorConfig
from .dist import chi2_quantile
from .env import TRACE_COLUMNS, ConstantPolicy, EpisodeConfig, MotorTwinEnv, MtcTwinEnv, RewardWeights, run_episode
from .identify import default_motor_gmms, fit_arx
from .metrics import arl0, arl1, degradation, energy, inter_alarm_intervals, mean_se, sweep
from .plant import Controller, PlantModel, Segment
from .rl import DdpgWatermarkPolicy

OUTPUT_ENV = "DWMLAB_OUTPUT_DIR"


def output_dir(cfg):
    return Path(os.environ.get(OUTPUT_ENV) or cfg["output_dir"])


def build_scenario(cfg, attacked=True):
    a = cfg["attack"]
    if not attacked or a["kind"] == "none":
        return AttackScenario()
    return AttackScenario(kind=a["kind"], onset=a["onset"], duration=a["duration"], delta_t=a["delta_t"],
                          injection=a["injection"], control_override=a["control_override"])


def build_env(cfg, training=False):
    det, bel, ep = cfg["detector"], cfg["belief"], cfg["episode"]
    weights = RewardWeights(**cfg["reward"])
    alpha = cfg["train"]["alpha"] if training and cfg["train"]["alpha"] is not None else det["alpha"]
    if cfg["environment"] == "motor_twin":
        segs = [Segment(PlantModel(A=s["A"], B=s["B"], Q=s["Q"]), Controller(kp=0.0, setpoint=s["setpoint"]))
                for s in cfg["motor"]["segments"]]
        gmms = default_motor_gmms(cfg["motor"]["gmm_seed"], cfg["motor"]["max_components"])
        if len(gmms) != len(segs):
            raise ConfigurationError("'motor.segments' must list one entry per block of the motion profile (4)")
        threshold = det["threshold"] if det["threshold"] is not None else chi2_quantile(1.0 - alpha, 1)
        episode = EpisodeConfig(horizon=ep["horizon"], decision_block=ep["decision_block"],
                                processed_block=ep["processed_block"], weights=weights)
        return MotorTwinEnv(segs, gmms, threshold, episode, q=bel["q"], rho=bel["rho"], w_beta=bel["w_beta"],
                            U_max=cfg["U_max"], recording_noise=cfg["recording_noise"])
    p, c = cfg["plant"], cfg["controller"]
    model = PlantModel(A=p["A"], B=p["B"], Q=p["Q"], mu0=p["mu0"], Sigma0=p["Sigma0"])
    ctrl = Controller(kp=c["kp"], setpoint=c["setpoint"])
    if det["threshold"] is not None and not training:
        detector = DetectorConfig.from_threshold(model.Q, det["threshold"], det["estimator_mode"])
    else:
        detector = DetectorConfig.from_alpha(model.Q, alpha, det["estimator_mode"])
    episode = EpisodeConfig(horizon=ep["horizon"], weights=weights)
    return MtcTwinEnv(model, ctrl, detector, episode, q=bel["q"], rho=bel["rho"], w_beta=bel["w_beta"],
                      U_max=cfg["U_max"], recording_noise=cfg["recording_noise"])


def arm_policy(cfg, arm):
    """Resolve an arm name (``none``, ``low``, ``high``, ``constant:<U>``, ``ddpg``, ``policy``)."""
    if arm == "policy":
        kind = cfg["policy"]["kind"]
        arm = {"none": "none", "constant": f"constant:{cfg['policy']['U']}", "ddpg": "ddpg"}[kind]
    if arm == "none":
        return ConstantPolicy(0.0), 0.0
    if arm == "low":
        return ConstantPolicy(cfg["benchmark"]["low"]), cfg["benchmark"]["low"]
    if arm == "high":
        return ConstantPolicy(cfg["benchmark"]["high"]), cfg["benchmark"]["high"]
    if arm.startswith("constant:"):
        try:
            U = float(arm.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigurationError(f"bad constant arm {arm!r}") from exc
        return ConstantPolicy(U), U
    if arm == "ddpg":
        path = cfg["policy"]["checkpoint"]
        if not path:
            raise ConfigurationError("the ddpg arm needs 'policy.checkpoint' pointing at a trained checkpoint")
        if not Path(path).exists():
            raise ConfigurationError(f"checkpoint not found: {path}")
        return DdpgWatermarkPolicy.from_checkpoint(path), None
    raise ConfigurationError(f"unknown arm {arm!r}")


def expand_arms(cfg, arms):
    out = []
    for arm in arms:
        if arm == "table_v":
            out.extend(f"constant:{u}" for u in cfg["benchmark"]["table_v"])
        else:
            out.append(arm)
    return out


def rollout(cfg, arm, replication, attacked):
    """One episode; returns the trace rows and the onset used (``None`` when nominal)."""
    env = build_env(cfg)
    policy, U = arm_policy(cfg, arm)
    if U is not None and U > env.U_max:
        # the bound limits the learned policy; fixed baselines run at their stated variance
        env.U_max = U
    scenario = build_scenario(cfg, attacked)
    run_episode(env, policy, scenario, seed=cfg["seed"], replication=replication)
    tau = scenario.onset if scenario.kind != "none" else None
    return {"rows": env.trace, "tau": tau, "epochs": getattr(env, "epochs", len(env.trace))}


def run_many(cfg, arm, attacked, replications=None):
    reps = range(cfg["replications"] if replications is None else replications)
    jobs = cfg.get("n_jobs", 1)
    if jobs == 1:
        return [rollout(cfg, arm, r, attacked) for r in reps]
    return Parallel(n_jobs=jobs)(delayed(rollout)(cfg, arm, r, attacked) for r in reps)


def _alarm_flags(rows):
    """0/1 array indexed by measurement time (index 0 is unobserved)."""
    t = np.array([r[0] for r in rows], dtype=int)
    flags = np.zeros(t.max() + 1 if t.size else 1, dtype=int)
    flags[t] = [r[7] for r in rows]
    return flags


def episode_summary(result, replication):
    rows, tau = result["rows"], result["tau"]
    a = np.array(rows, dtype=float) if rows else np.zeros((0, len(TRACE_COLUMNS)))
    t, d = a[:, 0], a[:, 8]
    flags = _alarm_flags(rows)
    out = {"replication": replication, "steps": int(t.size), "epochs": result["epochs"],
           "energy": energy(a[:, 4]), "degradation": degradation(a[:, 2], a[:, 1]),
           "final_d": float(d[-1]) if d.size else float("nan"), "alarms": int(flags.sum())}
    if tau is not None:
        td = np.flatnonzero(flags[tau:])
        out["detection_time"] = int(tau + td[0]) if td.size else None
        out["delay"] = int(td[0]) if td.size else None
        cross = t[(t >= tau) & (d > 0.99)]
        out["belief_099_time"] = int(cross[0]) if cross.size else None
        out["alarms_after_onset"] = int(flags[tau:].sum())
        gaps = inter_alarm_intervals(flags, tau)
        out["inter_alarm_mean"] = float(np.mean(gaps)) if gaps else None
        post = d[t > tau]
        out["mean_post_onset_belief"] = float(post.mean()) if post.size else None
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows, chash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in (row if not isinstance(row, dict) else [row.get(c) for c in columns])])
    return path


def write_json(path, doc, chash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"config_hash": chash, **doc}, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def read_csv(path):
    """Parse an emitted CSV, skipping ``#`` header lines."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def aggregate(summaries, tau):
    s = {"replications": len(summaries)}
    for key in ("energy", "degradation", "final_d"):
        s[f"{key}_mean"], s[f"{key}_se"] = mean_se([x[key] for x in summaries])
    s["final_d_median"] = float(np.median([x["final_d"] for x in summaries]))
    if tau is not None:
        delays = [x["delay"] for x in summaries if x["delay"] is not None]
        s["arl1"] = float(np.mean(delays)) if delays else None
        s["n_censored"] = sum(x["delay"] is None for x in summaries)
        n = len(summaries)
        s["frac_delay_eq_1"] = sum(x["delay"] == 1 for x in summaries) / n
        s["frac_delay_le_2"] = sum(x["delay"] is not None and x["delay"] <= 2 for x in summaries) / n
        s["frac_belief_099_within_3"] = sum(
            x["belief_099_time"] is not None and x["belief_099_time"] - tau <= 3 for x in summaries) / n
        s["alarms_after_onset_mean"] = float(np.mean([x["alarms_after_onset"] for x in summaries]))
        s["frac_no_alarm_after_onset"] = sum(x["alarms_after_onset"] == 0 for x in summaries) / n
    return s


def cmd_simulate(cfg):
    chash = config_hash(cfg)
    out = output_dir(cfg) / "simulate"
    attacked = cfg["attack"]["kind"] != "none"
    results = run_many(cfg, "policy", attacked)
    summaries = []
    for i, res in enumerate(results):
        write_csv(out / "traces" / f"rep_{i:03d}.csv", TRACE_COLUMNS, res["rows"], chash)
        summaries.append(episode_summary(res, i))
    tau = results[0]["tau"]
    write_json(out / "summary.json", {"aggregate": aggregate(summaries, tau), "runs": summaries}, chash)
    (out / "config.json").write_text(dumps(cfg))
    return out


def cmd_train(cfg, resume=None, log=None):
    chash = config_hash(cfg)
    out = output_dir(cfg) / "train"
    out.mkdir(parents=True, exist_ok=True)
    env = build_env(cfg, training=True)
    tr = cfg["train"]
    est = DdpgWatermarkPolicy(
        episodes=tr["episodes"], hidden=tr["hidden"], lr=tr["lr"], tau=tr["tau"], gamma=tr["gamma"],
        batch_size=tr["batch_size"], buffer_size=tr["buffer_size"], grad_clip=tr["grad_clip"],
        ou_theta=tr["ou_theta"], ou_sigma=tr["ou_sigma"], ou_decay=tr["ou_decay"],
        updates_per_step=tr["updates_per_step"], attack_prob=tr["attack_prob"],
        seed=cfg["seed"] + tr["seed_offset"])
    curve = []

    def _log(ep, total, scenario):
        curve.append((ep, total, scenario.kind, scenario.onset if scenario.kind != "none" else None))
        if log is not None:
            log(ep, total, scenario)

    est.fit(env, checkpoint_path=out / "checkpoint.json", checkpoint_every=tr["checkpoint_every"],
            config_hash=chash, resume_from=resume, log=_log)
    write_csv(out / "learning_curve.csv", ("episode", "return", "attack", "onset"), curve, chash)
    (out / "config.json").write_text(dumps(cfg))
    return out


def arm_block(cfg, arm):
    attacked = run_many(cfg, arm, True)
    nominal = run_many(cfg, arm, False)
    tau = attacked[0]["tau"]
    sa = [episode_summary(r, i) for i, r in enumerate(attacked)]
    sn = [episode_summary(r, i) for i, r in enumerate(nominal)]
    agg = aggregate(sa, tau)
    nom = aggregate(sn, None)
    arl = arl0([_alarm_flags(r["rows"]) for r in nominal])
    row = {"arm": arm, "energy_mean": agg["energy_mean"], "energy_se": agg["energy_se"],
           "energy_nominal_mean": nom["energy_mean"], "degradation_mean": nom["degradation_mean"],
           "degradation_se": nom["degradation_se"], "arl1": agg.get("arl1"), "n_censored": agg.get("n_censored"),
           "frac_delay_eq_1": agg.get("frac_delay_eq_1"), "frac_delay_le_2": agg.get("frac_delay_le_2"),
           "frac_no_alarm_after_onset": agg.get("frac_no_alarm_after_onset"),
           "alarms_after_onset_mean": agg.get("alarms_after_onset_mean"), "arl0": arl.arl0,
           "arl0_censored": arl.n_censored}
    gaps = []
    for i, r in enumerate(attacked):
        for g in inter_alarm_intervals(_alarm_flags(r["rows"]), tau):
            gaps.append((arm, i, g))
    return row, sa, sn, gaps


BENCH_COLUMNS = ("arm", "energy_mean", "energy_se", "energy_nominal_mean", "degradation_mean", "degradation_se",
                 "arl1", "n_censored", "frac_delay_eq_1", "frac_delay_le_2", "frac_no_alarm_after_onset",
                 "alarms_after_onset_mean", "arl0", "arl0_censored")
RUN_COLUMNS = ("arm", "condition", "replication", "energy", "degradation", "delay", "alarms_after_onset",
               "belief_099_time", "final_d")


def cmd_evaluate(cfg, arm="policy"):
    chash = config_hash(cfg)
    out = output_dir(cfg) / "evaluate"
    row, sa, sn, gaps = arm_block(cfg, arm)
    write_json(out / "summary.json", {"arm": arm, "metrics": row, "attacked": sa, "nominal": sn}, chash)
    return out


def cmd_benchmark(cfg):
    chash = config_hash(cfg)
    out = output_dir(cfg) / "benchmark"
    arms = expand_arms(cfg, cfg["benchmark"]["arms"])
    for arm in arms:
        arm_policy(cfg, arm)  # fail fast on a missing checkpoint
    table, runs, all_gaps = [], [], []
    for arm in arms:
        row, sa, sn, gaps = arm_block(cfg, arm)
        table.append(row)
        all_gaps.extend(gaps)
        for cond, ss in (("attack", sa), ("nominal", sn)):
            for s in ss:
                runs.append({"arm": arm, "condition": cond, **s})
    write_csv(out / "benchmark.csv", BENCH_COLUMNS, table, chash)
    write_csv(out / "runs.csv", RUN_COLUMNS, runs, chash)
    write_csv(out / "inter_alarm.csv", ("arm", "replication", "gap"), all_gaps, chash)
    return out


def cmd_sweep(cfg):
    chash = config_hash(cfg)
    out = output_dir(cfg) / "sweep"

    def evaluate(U, episodes):
        arm = f"constant:{U}"
        att = [episode_summary(r, i) for i, r in enumerate(run_many(cfg, arm, True, episodes))]
        nom = [episode_summary(r, i) for i, r in enumerate(run_many(cfg, arm, False, episodes))]
        return [s["mean_post_onset_belief"] for s in att], [s["degradation"] for s in nom]

    rows = sweep(evaluate, cfg["sweep"]["variances"], cfg["sweep"]["episodes"])
    write_csv(out / "sweep.csv", ("U", "belief_mean", "belief_se", "degradation_mean", "degradation_se", "episodes"),
              rows, chash)
    return out


def read_series(path):
    """Numeric columns of a CSV (header optional); returns a 2-D array."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"data file not found: {path}")
    rows = [ln.strip() for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        float(rows[0].split(",")[0])
    except ValueError:
        rows = rows[1:]
    try:
        return np.array([[float(v) for v in r.split(",")] for r in rows])
    except ValueError as exc:
        raise ConfigurationError(f"{path}: non-numeric entry ({exc})") from exc


def cmd_identify(cfg, data=None, y_path=None, u_path=None, boundaries=None):
    chash = config_hash(cfg)
    out = output_dir(cfg) / "identify"
    if data is not None:
        arr = read_series(data)
        if arr.shape[1] < 2:
            raise ConfigurationError(f"{data}: expected two columns (y, u)")
        y, u = arr[:, 0], arr[:, 1]
    elif y_path is not None and u_path is not None:
        y, u = read_series(y_path)[:, 0], read_series(u_path)[:, 0]
    else:
        raise ConfigurationError("identify needs --data or both --y and --u")
    if y.size != u.size:
        raise ConfigurationError(f"y and u have different lengths ({y.size} vs {u.size})")
    b = [0, y.size] if not boundaries else sorted(set([0, *boundaries, y.size]))
    if b[0] < 0 or b[-1] > y.size:
        raise ConfigurationError("segment boundaries fall outside the data")
    segments, table = [], []
    for i in range(len(b) - 1):
        lo, hi = b[i], b[i + 1]
        fit = fit_arx(y[lo:hi], u[lo:hi])
        seg = {"A": fit.A, "B": fit.B, "Q": fit.Q, "setpoint": float(y[hi - 1])}
        segments.append(seg)
        table.append({"segment": i, "start": lo, "stop": hi, **seg, "A_se": fit.stderr[0], "B_se": fit.stderr[1]})
    fragment = {"environment": "motor_twin", "motor": {"segments": segments}}
    out.mkdir(parents=True, exist_ok=True)
    (out / "fragment.json").write_text(json.dumps(fragment, indent=2, sort_keys=True) + "\n")
    write_csv(out / "arx.csv", ("segment", "start", "stop", "A", "B", "Q", "setpoint", "A_se", "B_se"), table, chash)
    return out
