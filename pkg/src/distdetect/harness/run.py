"""End-to-end pipeline: instance, gain, simulation, detection, traces.

The simulation re-centres on the true state after every step. The
estimator commutes with shifting the truth and every estimate by the same
noise-free trajectory ``c_k = A c_{k-1}``, so this changes nothing
mathematically, but it keeps errors and residuals free of cancellation
when ``rho(A) > 1`` drives the state to huge magnitudes over long runs.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .. import estimator as est
from ..chidetect import compute_variance_bound, threshold_table, chi2_cdf, threshold_from_far
from ..errors import InfeasibleGainError, LemmaCheckError, SchemaError, StructuralRankError
from ..gainsynth import assemble_abar, load_gain, synthesize_gain
from ..matcore import GaussianSampler
from ..monitor import WindowedChiSquareDetector
from ..netgraph import (
    Digraph,
    SensingPattern,
    block_diag_dh,
    tarjan_scc,
    build_row_stochastic_w,
    check_lemma1,
    check_lemma2,
    is_structurally_full_rank,
    MAX_OBSERVABILITY_DIM,
    verify_distributed_observability,
)
from ..sysmodel import AttackSchedule, SensorSuite, SocialSystem, make_random_system, measure, step_truth

SYSTEM_STREAM = 0
NETWORK_STREAM = 1
REPLICATION_BASE = 100
STREAMS_PER_REPLICATION = 4
DEFAULT_OUT_DIR = "distdetect-out"
OUT_DIR_ENV = "DISTDETECT_OUT_DIR"


def replication_streams(rep):
    """Stream ids ``(x0, process, measurement, attack)`` for replication ``rep``."""
    base = REPLICATION_BASE + STREAMS_PER_REPLICATION * rep
    return tuple(range(base, base + STREAMS_PER_REPLICATION))


def default_out_dir():
    return os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)


@dataclass
class Instance:
    system: SocialSystem
    suite: SensorSuite
    sensing: SensingPattern
    sensor_graph: Digraph
    w: np.ndarray
    schedule: AttackSchedule

    @property
    def n_states(self):
        return self.system.n

    @property
    def n_sensors(self):
        return self.suite.n_sensors


def build_instance(cfg):
    n = cfg.n_states
    seed = int(cfg.run.seed)
    q = np.asarray(cfg.system.q, dtype=float) if cfg.system.q is not None else cfg.system.q_scale * np.eye(n)
    if cfg.system.a is not None:
        system = SocialSystem(a=np.asarray(cfg.system.a, dtype=float), q=q)
    else:
        system = make_random_system(cfg.social_graph(), cfg.system.target_rho,
                                    GaussianSampler(seed, SYSTEM_STREAM), q=q)
    gn = cfg.sensor_graph()
    w_sampler = GaussianSampler(seed, NETWORK_STREAM) if cfg.sensors.weights == "random" else None
    sensing = SensingPattern(cfg.sensors.assignments)
    r = np.broadcast_to(np.asarray(cfg.sensors.r, dtype=float), (sensing.n_sensors,)).copy()
    return Instance(
        system=system,
        suite=SensorSuite(h=sensing.h_rows(n), r=r),
        sensing=sensing,
        sensor_graph=gn,
        w=build_row_stochastic_w(gn, w_sampler),
        schedule=AttackSchedule.from_json(cfg.attacks),
    )


def check_report(inst):
    """Structural and numeric observability checks as a JSON-able dict."""
    g = inst.system.graph
    report = {"structurally_full_rank": is_structurally_full_rank(g)}
    try:
        lem1 = check_lemma1(g, inst.sensing)
        report["lemma1"] = lem1.to_json()
    except StructuralRankError as exc:
        report["lemma1"] = {"holds": False, "error": str(exc)}
    report["lemma2"] = {"holds": check_lemma2(inst.sensor_graph),
                        "n_components": len(tarjan_scc(inst.sensor_graph))}
    if inst.n_states * inst.n_sensors <= MAX_OBSERVABILITY_DIM:
        report["distributed_observability"] = verify_distributed_observability(
            inst.system.a, inst.w, block_diag_dh(inst.suite.h))
    else:
        report["distributed_observability"] = "skipped: instance above size cap"
    report["passed"] = bool(report["lemma1"]["holds"] and report["lemma2"]["holds"])
    return report


def require_checks(report):
    if not report["lemma1"]["holds"]:
        raise LemmaCheckError("SCC coverage check failed: " + json.dumps(report["lemma1"]), report)
    if not report["lemma2"]["holds"]:
        raise LemmaCheckError("sensor network is not strongly connected", report)


def obtain_gain(cfg, inst):
    h = inst.suite.h
    if cfg.gain.file:
        gains = load_gain(cfg.gain.file, inst.system.a, inst.w, h)
        if not gains.success:
            raise InfeasibleGainError(
                f"gain file {cfg.gain.file} does not stabilise this instance "
                f"(rho {gains.achieved_rho:.4f}, margins {gains.margins.tolist()})",
                report={"best_rho": gains.achieved_rho, "margins": gains.margins.tolist()})
        return gains
    seed = cfg.run.seed if cfg.gain.seed is None else cfg.gain.seed
    return synthesize_gain(inst.system.a, inst.w, h, c_floor=cfg.gain.c_floor,
                           budget=cfg.gain.budget, seed=int(seed), rho_target=cfg.gain.rho_target)


@dataclass
class Trace:
    truth: np.ndarray        # (steps, n), absolute frame
    posteriors: np.ndarray   # (steps, N, n), absolute frame
    residuals: np.ndarray    # (steps, N)
    mse: np.ndarray          # (steps, N)


def simulate(inst, gains, steps, seed, rep=0, attacks=True, x0_scale=1.0, recenter=True):
    """One replication of truth, measurements and distributed estimates.

    Step ``k = 1..steps`` is stored at row ``k - 1``. The initial state is
    ``x0_scale * N(0, I)``; every estimate starts at zero.
    """
    s_x0, s_proc, s_meas, s_atk = (GaussianSampler(seed, sid) for sid in replication_streams(rep))
    system, suite, w, h = inst.system, inst.suite, inst.w, inst.suite.h
    schedule = inst.schedule if attacks else None
    n, n_sensors = inst.n_states, inst.n_sensors
    x0 = x0_scale * s_x0.standard_normal(n)
    zero = np.zeros(n)

    truth = np.empty((steps, n))
    post = np.empty((steps, n_sensors, n))
    res = np.empty((steps, n_sensors))
    mse = np.empty((steps, n_sensors))

    x_abs = x0
    if recenter:
        start = -np.tile(x0, (n_sensors, 1))
        st = est.EstimatorState(priors=start.copy(), posteriors=start)
    else:
        st = est.EstimatorState.initial(n_sensors, n)
    for k in range(1, steps + 1):
        if recenter:
            x_rel = step_truth(system, zero, s_proc)    # = nu_{k-1}
            x_abs = system.a @ x_abs + x_rel
        else:
            x_rel = x_abs = step_truth(system, x_abs, s_proc)
        y = measure(suite, schedule, x_rel, k, s_meas, s_atk)
        st = est.step(st, w, system.a, gains, y, h)
        err = x_rel - st.posteriors
        res[k - 1] = est.residual(st, y, h)
        mse[k - 1] = np.mean(err**2, axis=1)
        truth[k - 1] = x_abs
        post[k - 1] = x_abs - err
        if recenter:
            st = est.EstimatorState(priors=st.priors - x_rel, posteriors=st.posteriors - x_rel, k=st.k)
    return Trace(truth=truth, posteriors=post, residuals=res, mse=mse)


def _fmt(x):
    return repr(float(x))


def far_columns(fars):
    return [f"h1_p{float(p):g}" for p in fars]


def write_scalar_trace(path, values, index_name="sensor"):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", index_name, "value"])
        for t, row in enumerate(values):
            for i, v in enumerate(row):
                wr.writerow([t + 1, i, _fmt(v)])


def write_estimates(path, posteriors):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", "sensor", "state", "value"])
        for t, block in enumerate(posteriors):
            for i, vec in enumerate(block):
                for j, v in enumerate(vec):
                    wr.writerow([t + 1, i, j, _fmt(v)])


def write_verdicts(path, rows, fars):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", "sensor", "z", "v"] + far_columns(fars))
        for step, sensor, z, v, flags in rows:
            wr.writerow([step, sensor, _fmt(z), _fmt(v)] + [int(f) for f in flags])


def read_residuals(path):
    """Parse a ``step,sensor,value`` trace into a (steps, sensors) matrix."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["step", "sensor", "value"]:
            raise SchemaError(f"{path}: expected header step,sensor,value, got {header}")
        cells = {}
        for lineno, row in enumerate(rd, 2):
            if len(row) != 3:
                raise SchemaError(f"{path}:{lineno}: expected 3 fields")
            try:
                step, sensor, value = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            if (step, sensor) in cells:
                raise SchemaError(f"{path}:{lineno}: duplicate record ({step}, {sensor})")
            cells[(step, sensor)] = value
    if not cells:
        raise SchemaError(f"{path}: no records")
    steps = sorted({s for s, _ in cells})
    sensors = sorted({i for _, i in cells})
    if steps != list(range(steps[0], steps[0] + len(steps))) or sensors != list(range(len(sensors))):
        raise SchemaError(f"{path}: steps must be contiguous and sensors numbered from 0")
    if len(cells) != len(steps) * len(sensors):
        raise SchemaError(f"{path}: missing (step, sensor) records")
    mat = np.array([[cells[(s, i)] for i in sensors] for s in steps])
    return mat, steps[0]


@dataclass
class ReplicationResult:
    rep: int
    trace: Trace
    verdicts: list          # (step, sensor, z, v, flags)
    any_h1: bool
    directory: str = None

    def flags(self, n_thresholds):
        """(steps, sensors, thresholds) array; -1 marks warm-up steps."""
        steps, n_sensors = self.trace.residuals.shape
        out = np.full((steps, n_sensors, n_thresholds), -1, dtype=np.int8)
        for step, i, _, _, fl in self.verdicts:
            out[step - 1, i] = fl
        return out


@dataclass
class RunArtifacts:
    out_dir: str
    paths: dict
    metadata: dict
    replications: list = field(default_factory=list)

    @property
    def any_h1(self):
        return any(r.any_h1 for r in self.replications)


def prepare(cfg):
    """Everything the pipeline fixes before the first time step."""
    cfg.validate()
    inst = build_instance(cfg)
    report = check_report(inst)
    require_checks(report)
    gains = obtain_gain(cfg, inst)
    abar = assemble_abar(inst.system.a, inst.w, inst.suite.h, gains)
    variance = compute_variance_bound(abar, gains.matrix(), inst.suite.h, inst.system.q,
                                      inst.suite.r, method=cfg.detector.variance_method)
    detector = WindowedChiSquareDetector(variance.lambdas, cfg.detector.window, cfg.detector.fars).fit()
    return inst, report, gains, variance, detector


def run_algorithm1(cfg, out_dir=None, write=True, attacks=True, keep_traces=True):
    """Run the full pipeline for ``cfg.run.replications`` replications.

    Raises :class:`LemmaCheckError` or :class:`InfeasibleGainError` before
    simulating anything when the instance is unusable.
    """
    inst, report, gains, variance, detector = prepare(cfg)
    fars = [float(p) for p in cfg.detector.fars]
    seed = int(cfg.run.seed)
    out_dir = out_dir or cfg.run.output_dir or default_out_dir()
    paths = {}
    if write:
        os.makedirs(out_dir, exist_ok=True)
        paths["thresholds"] = os.path.join(out_dir, "thresholds.json")
        with open(paths["thresholds"], "w") as fh:
            json.dump(threshold_table(fars, cfg.detector.window), fh, indent=2)

    results = []
    for rep in range(int(cfg.run.replications)):
        trace = simulate(inst, gains, int(cfg.run.steps), seed, rep, attacks=attacks,
                         x0_scale=cfg.run.x0_scale)
        rows = list(detector.iter_verdicts(trace.residuals, first_step=1))
        any_h1 = any(any(fl) for *_, fl in rows)
        rdir = None
        if write:
            rdir = os.path.join(out_dir, f"rep_{rep:03d}")
            os.makedirs(rdir, exist_ok=True)
            write_scalar_trace(os.path.join(rdir, "truth.csv"), trace.truth, index_name="state")
            write_estimates(os.path.join(rdir, "estimates.csv"), trace.posteriors)
            write_scalar_trace(os.path.join(rdir, "mse.csv"), trace.mse)
            write_scalar_trace(os.path.join(rdir, "residuals.csv"), trace.residuals)
            write_verdicts(os.path.join(rdir, "verdicts.csv"), rows, fars)
        if not keep_traces:
            trace = None
        results.append(ReplicationResult(rep=rep, trace=trace, verdicts=rows if keep_traces else [],
                                         any_h1=any_h1, directory=rdir))

    metadata = {
        "config": cfg.to_json(),
        "seed": seed,
        "gain_seed": cfg.run.seed if cfg.gain.seed is None else cfg.gain.seed,
        "streams": {
            "system": SYSTEM_STREAM,
            "network": NETWORK_STREAM,
            "replication": "x0, process, measurement, attack = "
                           f"{REPLICATION_BASE} + {STREAMS_PER_REPLICATION} * rep + (0, 1, 2, 3)",
        },
        "attacks_enabled": attacks,
        "checks": report,
        "gain": {
            "achieved_rho": gains.achieved_rho,
            "margins": gains.margins.tolist(),
            "c_floor": gains.c_floor,
            "evaluations": gains.evaluations,
        },
        "a": inst.system.a.tolist(),
        "w": inst.w.tolist(),
        "variance": variance.to_json(),
        "thresholds": threshold_table(fars, cfg.detector.window),
        "far_note": "FAR is per window; windows slide by one step so consecutive v values are dependent",
        "warmup": f"no verdicts before step {cfg.detector.window}",
        "any_h1": any(r.any_h1 for r in results),
    }
    if write:
        paths["metadata"] = os.path.join(out_dir, "metadata.json")
        with open(paths["metadata"], "w") as fh:
            json.dump(metadata, fh, indent=2)
    return RunArtifacts(out_dir=out_dir, paths=paths, metadata=metadata, replications=results)


def wilson_interval(hits, n, z=1.96):
    if n == 0:
        return (0.0, 1.0)
    phat = hits / n
    denom = 1 + z**2 / n
    centre = (phat + z**2 / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z**2 / (4 * n * n)) / denom
    return (centre - half, centre + half)


def far_calibrate(lam, window, fars, windows=10_000, seed=0, true_variance=None):
    """Empirical H1 rate on non-overlapping windows of synthetic residuals.

    Residuals are ``N(0, true_variance)`` (default ``lam``) and are
    normalised by ``lam``; ``expected_rate`` is the exact rate for that
    scale mismatch.
    """
    if windows < 100:
        raise ValueError("need at least 100 windows")
    true_variance = lam if true_variance is None else true_variance
    sampler = GaussianSampler(seed, 0)
    resid = math.sqrt(true_variance) * sampler.standard_normal(windows * window)
    det = WindowedChiSquareDetector(lam, window, fars).fit()
    hits = np.zeros(len(fars), dtype=int)
    for step, _, _, _, flags in det.iter_verdicts(resid[:, None], first_step=1):
        if step % window == 0:
            hits += np.asarray(flags, dtype=int)
    table = []
    for p, h in zip(fars, hits):
        theta = threshold_from_far(float(p), window)
        rate = h / windows
        lo, hi = wilson_interval(int(h), windows)
        table.append({
            "p": float(p), "T": window, "theta": theta, "windows": windows, "h1": int(h),
            "rate": rate, "sigma": math.sqrt(p * (1 - p) / windows),
            "ci95_low": lo, "ci95_high": hi,
            "expected_rate": 1.0 - chi2_cdf(theta * lam / true_variance, window),
        })
    return table


def lambdas_from_source(source, n_sensors=None):
    """Residual variances from a run's metadata.json or a comma list of numbers."""
    if isinstance(source, str) and os.path.exists(source):
        with open(source) as fh:
            meta = json.load(fh)
        return np.asarray(meta["variance"]["lambda"], dtype=float)
    vals = [float(x) for x in str(source).split(",")] if isinstance(source, str) else list(source)
    lam = np.asarray(vals, dtype=float)
    if n_sensors is not None and lam.size == 1:
        lam = np.full(n_sensors, lam[0])
    return lam


def detect_offline(residual_path, lambda_source, window, fars, out_path):
    mat, first = read_residuals(residual_path)
    lam = lambdas_from_source(lambda_source, mat.shape[1])
    if lam.size != mat.shape[1]:
        raise SchemaError(f"{lam.size} variances for {mat.shape[1]} sensors")
    det = WindowedChiSquareDetector(lam, window, fars).fit()
    rows = list(det.iter_verdicts(mat, first_step=first))
    write_verdicts(out_path, rows, [float(p) for p in fars])
    return rows


def detection_summary(cfg, results, baseline=None):
    """Per-sensor H1 rates before and after attack onset, per threshold.

    A window counts as post-onset only when all of its ``T`` steps are at or
    after the onset. Sensors without an attack use the earliest onset.
    """
    schedule = AttackSchedule.from_json(cfg.attacks)
    window = int(cfg.detector.window)
    fars = [float(p) for p in cfg.detector.fars]
    onsets = [schedule.onset(i) for i in range(cfg.n_sensors)]
    first_onset = min((o for o in onsets if o is not None), default=None)
    flags = np.stack([r.flags(len(fars)) for r in results])       # (reps, steps, N, thr)
    base = np.stack([r.flags(len(fars)) for r in baseline]) if baseline else None
    steps = flags.shape[1]
    summary = {"window": window, "fars": fars, "replications": len(results), "sensors": []}
    for i in range(cfg.n_sensors):
        onset = onsets[i] if onsets[i] is not None else first_onset
        entry = {"sensor": i, "attacked": onsets[i] is not None, "onset": onset, "thresholds": []}
        for j, p in enumerate(fars):
            rec = {"p": p, "theta": threshold_from_far(p, window)}
            if onset is not None:
                pre = flags[:, window - 1:onset - 1, i, j]        # steps T .. onset-1
                post = flags[:, onset + window - 2:, i, j]        # steps onset+T-1 .. end
                rec["pre_rate"] = float(pre.mean()) if pre.size else float("nan")
                rec["post_rate"] = float(post.mean()) if post.size else float("nan")
                rec["post_windows"] = int(post.size) / window
                if base is not None:
                    rec["baseline_post_rate"] = float(base[:, onset + window - 2:, i, j].mean())
            warm = flags[:, window - 1:, i, j]
            rec["overall_rate"] = float(warm.mean())
            entry["thresholds"].append(rec)
        summary["sensors"].append(entry)
    summary["steps"] = steps
    return summary
