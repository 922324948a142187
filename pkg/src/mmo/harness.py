"""Config-driven Monte-Carlo experiment runner.

An experiment is described by a YAML key-value tree (strictly validated:
unknown keys are rejected) and produces one CSV row per
(algorithm, trial, snr) with the fixed column order of
:class:`RunRecord`.  Reruns with the same seed produce byte-identical CSV
files: trial t draws from ``default_rng(seed ^ t)``, records are sorted
before writing, the file is written atomically, and the wall_time_ms column
is zeroed unless timings are explicitly requested.

Config grammar (all keys optional unless marked required)::

    scenario: uplink | sensor | relay            # required
    seed: <int>                                  # required
    trials: <int >= 1>                           # required
    snr_db: [<float>, ...]                       # required, non-empty
    algorithms: [closed_form, oracle]            # relay: closed_form, non_robust
    output: results.csv
    dims:
      users, bs_antennas, user_antennas          # uplink
      sensors, fusion_antennas, sensor_antennas, signal_dim   # sensor
      hops, antennas                             # relay
    constraint:
      family: per_antenna | sum_power | joint | shaping
      budgets: [...]        # per_antenna
      total: <float>        # sum_power / joint
      cap: <float>          # joint
      shaping_corr: <float> # shaping: R_s = corr^{|i-j|}
    correlation:
      r_rx: <float in [0,1)>
      r_tx: <float in [0,1)>
    relay:
      sigma_e2: [<float>, ...]
      psi_corr: <float>
      objective: 1..6
    solver:  {max_iter: <int>, rel_tol: <float>}
    oracle:  {restarts: <int>, steps: <int>}
"""

import csv
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from . import channels as chmod
from .constraints import Joint, Shaping, per_antenna, sum_power
from .exceptions import ConfigError
from .oracle import sensor_lmmse_baseline, uplink_oracle
from .relay import (ObjectiveSpec, RelayScenario, cascade_solve, evaluate_rate)
from .sensors import SensorScenario, alternating_solve_sensors, mutual_information
from .uplink import UplinkScenario, alternating_solve_uplink, sum_rate

__all__ = ["ExperimentConfig", "RunRecord", "load_config", "run_experiment",
           "write_csv"]

log = logging.getLogger("mmo")

_ALGORITHMS = {
    "uplink": ("closed_form", "oracle"),
    "sensor": ("closed_form", "oracle"),
    "relay": ("closed_form", "non_robust"),
}

_KNOWN_KEYS = {
    "": {"scenario", "seed", "trials", "snr_db", "algorithms", "output",
         "dims", "constraint", "correlation", "relay", "solver", "oracle"},
    "dims": {"users", "bs_antennas", "user_antennas", "sensors",
             "fusion_antennas", "sensor_antennas", "signal_dim", "hops",
             "antennas"},
    "constraint": {"family", "budgets", "total", "cap", "shaping_corr"},
    "correlation": {"r_rx", "r_tx"},
    "relay": {"sigma_e2", "psi_corr", "objective"},
    "solver": {"max_iter", "rel_tol"},
    "oracle": {"restarts", "steps"},
}


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    algorithm: str
    trial: int
    snr_db: float
    metric_name: str
    value: float
    wall_time_ms: float
    converged: bool


CSV_FIELDS = [f.name for f in fields(RunRecord)]


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int
    trials: int
    snr_db: list
    algorithms: list
    output: str = "results.csv"
    dims: dict = field(default_factory=dict)
    constraint: dict = field(default_factory=lambda: {"family": "per_antenna",
                                                      "budgets": [1.2, 1.2, 0.8, 0.8]})
    correlation: dict = field(default_factory=lambda: {"r_rx": 0.0, "r_tx": 0.0})
    relay: dict = field(default_factory=lambda: {"sigma_e2": [0.0], "psi_corr": 0.6,
                                                 "objective": 1})
    solver: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)

    @property
    def total_power(self):
        fam = self.constraint["family"]
        if fam == "per_antenna":
            return float(sum(self.constraint["budgets"]))
        if fam in ("sum_power", "joint"):
            return float(self.constraint["total"])
        if fam == "shaping":
            n = self._n_tx()
            return float(n)  # trace of an exponential-correlation target
        raise ConfigError(f"unknown constraint family {fam!r}")

    def _n_tx(self):
        if self.scenario == "uplink":
            return self.dims.get("user_antennas", 4)
        if self.scenario == "sensor":
            return self.dims.get("sensor_antennas", 4)
        return self.dims.get("antennas", 4)


def _reject_unknown(mapping, section):
    allowed = _KNOWN_KEYS[section]
    unknown = set(mapping) - allowed
    if unknown:
        where = section or "top level"
        raise ConfigError(f"unknown config keys at {where}: {sorted(unknown)}")


def load_config(path_or_dict) -> ExperimentConfig:
    """Parse and strictly validate an experiment description."""
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        with open(path_or_dict, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _reject_unknown(raw, "")
    for section in ("dims", "constraint", "correlation", "relay", "solver", "oracle"):
        sub = raw.get(section, {})
        if sub is None:
            sub = {}
        if not isinstance(sub, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        _reject_unknown(sub, section)
    try:
        cfg = ExperimentConfig(
            scenario=raw["scenario"],
            seed=int(raw["seed"]),
            trials=int(raw["trials"]),
            snr_db=[float(x) for x in raw["snr_db"]],
            algorithms=list(raw.get("algorithms") or _ALGORITHMS[raw["scenario"]]),
            output=raw.get("output", "results.csv"),
        )
    except KeyError as err:
        raise ConfigError(f"missing required config key {err.args[0]!r}") from None
    for section in ("dims", "constraint", "correlation", "relay", "solver", "oracle"):
        if raw.get(section):
            getattr(cfg, section).update(raw[section])
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.scenario not in _ALGORITHMS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")
    if cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    if not cfg.snr_db:
        raise ConfigError("snr_db grid must be non-empty")
    bad = set(cfg.algorithms) - set(_ALGORITHMS[cfg.scenario])
    if bad:
        raise ConfigError(f"algorithms {sorted(bad)} not valid for {cfg.scenario}")
    fam = cfg.constraint.get("family")
    if fam not in ("per_antenna", "sum_power", "joint", "shaping"):
        raise ConfigError(f"unknown constraint family {fam!r}")
    if fam == "per_antenna" and "budgets" not in cfg.constraint:
        raise ConfigError("per_antenna constraint needs budgets")
    if fam in ("sum_power", "joint") and "total" not in cfg.constraint:
        raise ConfigError(f"{fam} constraint needs total")
    if fam == "joint" and "cap" not in cfg.constraint:
        raise ConfigError("joint constraint needs cap")
    for key in ("r_rx", "r_tx"):
        r = float(cfg.correlation.get(key, 0.0))
        if not 0.0 <= r < 1.0:
            raise ConfigError(f"correlation {key} must be in [0, 1)")
    if cfg.scenario == "relay":
        if cfg.relay.get("objective", 1) not in range(1, 7):
            raise ConfigError("relay objective must be 1..6")
        for s in cfg.relay.get("sigma_e2", [0.0]):
            if not 0.0 <= float(s) < 1.0:
                raise ConfigError("sigma_e2 values must be in [0, 1)")


def _build_constraint(cfg, n_tx):
    fam = cfg.constraint["family"]
    if fam == "per_antenna":
        budgets = list(cfg.constraint["budgets"])
        if len(budgets) != n_tx:
            raise ConfigError(f"need {n_tx} per-antenna budgets, got {len(budgets)}")
        return per_antenna(budgets)
    if fam == "sum_power":
        return sum_power(cfg.constraint["total"], n_tx)
    if fam == "joint":
        return Joint(total=float(cfg.constraint["total"]),
                     cap=float(cfg.constraint["cap"]))
    if fam == "shaping":
        corr = float(cfg.constraint.get("shaping_corr", 0.6))
        return Shaping(chmod.exponential_corr(corr, n_tx))
    raise ConfigError(f"unknown constraint family {fam!r}")


# ---------------------------------------------------------------------------
# per-trial workers
# ---------------------------------------------------------------------------

def _uplink_trial(cfg, trial):
    rng = np.random.default_rng(cfg.seed ^ trial)
    users = cfg.dims.get("users", 2)
    m = cfg.dims.get("bs_antennas", 8)
    n = cfg.dims.get("user_antennas", 4)
    r_rx = chmod.exponential_corr(float(cfg.correlation.get("r_rx", 0.0)), m)
    r_tx = chmod.exponential_corr(float(cfg.correlation.get("r_tx", 0.0)), n)
    hs = [chmod.sample_channel(r_rx, r_tx, rng) for _ in range(users)]
    constraint = _build_constraint(cfg, n)
    power = cfg.total_power
    records = []
    for snr_db in cfg.snr_db:
        sigma2 = power / 10.0 ** (snr_db / 10.0)
        scenario = UplinkScenario(channels=tuple(hs),
                                  noise_cov=sigma2 * np.eye(m),
                                  weights=tuple(np.eye(n) for _ in range(users)),
                                  constraints=tuple(constraint for _ in range(users)))
        for algo in cfg.algorithms:
            t0 = time.perf_counter()
            if algo == "closed_form":
                state = alternating_solve_uplink(
                    scenario,
                    rel_tol=float(cfg.solver.get("rel_tol", 1e-6)),
                    max_iter=int(cfg.solver.get("max_iter", 60)))
                value = state.objective_trace[-1]
                converged = True
            else:
                value, _ = uplink_oracle(
                    hs, [np.eye(n)] * users, sigma2 * np.eye(m),
                    [constraint] * users, rng,
                    restarts=int(cfg.oracle.get("restarts", 6)),
                    steps=int(cfg.oracle.get("steps", 300)))
                converged = True
            records.append(RunRecord("uplink", algo, trial, float(snr_db),
                                     "sum_rate", float(value),
                                     (time.perf_counter() - t0) * 1e3, converged))
    return records


def _sensor_trial(cfg, trial):
    rng = np.random.default_rng(cfg.seed ^ trial)
    k_sensors = cfg.dims.get("sensors", 4)
    m = cfg.dims.get("fusion_antennas", 8)
    n = cfg.dims.get("sensor_antennas", 4)
    d = cfg.dims.get("signal_dim", n)
    c_x = chmod.sensor_source_covariance(k_sensors, d, rng)
    r_rx = chmod.exponential_corr(float(cfg.correlation.get("r_rx", 0.0)), m)
    r_tx = chmod.exponential_corr(float(cfg.correlation.get("r_tx", 0.0)), n)
    hs = [chmod.sample_channel(r_rx, r_tx, rng) for _ in range(k_sensors)]
    constraint = _build_constraint(cfg, n)
    power = cfg.total_power
    blocks = tuple(c_x[i * d:(i + 1) * d, i * d:(i + 1) * d] for i in range(k_sensors))
    records = []
    for snr_db in cfg.snr_db:
        sigma2 = power / 10.0 ** (snr_db / 10.0)
        scenario = SensorScenario(source_cov=c_x, channels=tuple(hs),
                                  noise_covs=tuple(sigma2 * np.eye(m) for _ in range(k_sensors)),
                                  per_sensor_cov=blocks,
                                  constraints=tuple(constraint for _ in range(k_sensors)))
        for algo in cfg.algorithms:
            t0 = time.perf_counter()
            if algo == "closed_form":
                state = alternating_solve_sensors(
                    scenario,
                    rel_tol=float(cfg.solver.get("rel_tol", 1e-6)),
                    max_iter=int(cfg.solver.get("max_iter", 60)))
                value = state.objective_trace[-1]
            else:
                value, _ = sensor_lmmse_baseline(
                    scenario, rng,
                    outer_iters=int(cfg.oracle.get("steps", 30)),
                    inner_steps=10)
            records.append(RunRecord("sensor", algo, trial, float(snr_db),
                                     "mutual_info", float(value),
                                     (time.perf_counter() - t0) * 1e3, True))
    return records


def _relay_trial(cfg, trial):
    rng = np.random.default_rng(cfg.seed ^ trial)
    hops = cfg.dims.get("hops", 2)
    n = cfg.dims.get("antennas", 4)
    psi_base = chmod.exponential_corr(float(cfg.relay.get("psi_corr", 0.6)), n)
    constraint = _build_constraint(cfg, n)
    power = cfg.total_power
    objective = ObjectiveSpec(kind=int(cfg.relay.get("objective", 1)))
    records = []
    for sigma_e2 in cfg.relay.get("sigma_e2", [0.0]):
        sigma_e2 = float(sigma_e2)
        draws = [chmod.sample_relay_csi(sigma_e2, psi_base, rng) for _ in range(hops)]
        label = f"relay:se2={sigma_e2:g}"
        for snr_db in cfg.snr_db:
            sigma2 = power / 10.0 ** (snr_db / 10.0)
            true_scn = RelayScenario(
                est_channels=tuple(h_hat for h_hat, _, _ in draws),
                error_covs=tuple(psi for _, _, psi in draws),
                noise_vars=tuple(sigma2 for _ in range(hops)),
                source_var=1.0,
                constraints=tuple(constraint for _ in range(hops)),
                objective=objective)
            for algo in cfg.algorithms:
                t0 = time.perf_counter()
                if algo == "closed_form":
                    state = cascade_solve(
                        true_scn,
                        rel_tol=float(cfg.solver.get("rel_tol", 1e-6)),
                        max_iter=int(cfg.solver.get("max_iter", 40)))
                    fwd = state.forwarders_F
                else:
                    naive = RelayScenario(
                        est_channels=true_scn.est_channels,
                        error_covs=tuple(np.zeros((n, n)) for _ in range(hops)),
                        noise_vars=true_scn.noise_vars,
                        source_var=1.0,
                        constraints=true_scn.constraints,
                        objective=objective)
                    state = cascade_solve(
                        naive,
                        rel_tol=float(cfg.solver.get("rel_tol", 1e-6)),
                        max_iter=int(cfg.solver.get("max_iter", 40)))
                    fwd = state.forwarders_F
                value = evaluate_rate(true_scn, fwd)
                records.append(RunRecord(label, algo, trial, float(snr_db),
                                         "sum_rate", float(value),
                                         (time.perf_counter() - t0) * 1e3, True))
    return records


_TRIAL_FN = {"uplink": _uplink_trial, "sensor": _sensor_trial, "relay": _relay_trial}


def _run_trial(args):
    cfg, trial = args
    return _TRIAL_FN[cfg.scenario](cfg, trial)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_experiment(config, out_path=None, parallel=1, timings=False):
    """Run all trials and write the CSV atomically.

    Returns the sorted list of RunRecords.  The CSV zeroes the wall-time
    column unless ``timings=True`` so that identical (config, seed) pairs
    produce byte-identical files.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    out_path = cfg.output if out_path is None else out_path
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            chunks = list(pool.map(_run_trial, jobs))
    else:
        chunks = [_run_trial(j) for j in jobs]
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: (r.scenario, r.algorithm, r.trial, r.snr_db,
                                r.metric_name))
    if out_path:
        write_csv(records, out_path, timings=timings)
        log.info("wrote %d records to %s", len(records), out_path)
    return records


def write_csv(records, path, timings=False):
    """Atomic CSV write with the fixed RunRecord column order."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for rec in records:
                wall = rec.wall_time_ms if timings else 0.0
                writer.writerow([rec.scenario, rec.algorithm, rec.trial,
                                 f"{rec.snr_db:.6g}", rec.metric_name,
                                 f"{rec.value:.12g}", f"{wall:.6g}",
                                 str(bool(rec.converged)).lower()])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
