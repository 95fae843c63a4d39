"""Post-training trajectory triage.

Scores every stored trajectory with the *final* curiosity networks (raw
prediction error, never the normalized copy), keeps goal-reaching
trajectories collected with an exploration dial of at least 0.5 whose average
score beats a threshold, and intersects the kept set with the map's planted
bug regions.

The average runs over states s_0..s_T where T is the number of steps to the
first goal entry, and divides by T as collected-data convention (one more
term than divisor; rankings are unaffected for a given T). Trajectories are
re-encoded by replaying their stored actions through the deterministic
simulator, so triage needs only the run directory, never the training
process.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, resolve_path
from .curiosity import RNDPair
from .encode import ObservationEncoder, agent_info_vector
from .imitation import load_demos
from .mapio import load_map
from .trainer import TrajectoryLog, coverage
from .world import Trajectory, VoxelMap, play_script

REPORT_FORMAT_VERSION = 1
EXPORT_FORMAT_VERSION = 1


class TriageError(Exception):
    pass


@dataclass
class TrajectoryScore:
    traj_id: int
    alpha: float
    reached_goal: bool
    first_goal: int | None  # T: steps to first goal entry
    rc_avg: float | None  # None when the trajectory never reaches a goal
    bug_regions: tuple[int, ...] = ()
    demo: bool = False

    def to_dict(self) -> dict:
        return {
            "traj_id": self.traj_id,
            "alpha": self.alpha,
            "reached_goal": self.reached_goal,
            "first_goal": self.first_goal,
            "rc_avg": self.rc_avg,
            "bug_regions": list(self.bug_regions),
            "demo": self.demo,
        }


@dataclass
class TriageReport:
    epsilon: float
    mode: str
    theta: list[int]
    scores: list[TrajectoryScore]
    bugs_found: int
    bugs_highlighted: int
    bugs_found_regions: list[int]
    bugs_highlighted_regions: list[int]
    per_kind_found: dict[str, int]
    per_kind_highlighted: dict[str, int]
    coverage: int
    demo_scores: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "epsilon": self.epsilon,
            "mode": self.mode,
            "theta": self.theta,
            "scores": [s.to_dict() for s in self.scores],
            "bugs_found": self.bugs_found,
            "bugs_highlighted": self.bugs_highlighted,
            "bugs_found_regions": self.bugs_found_regions,
            "bugs_highlighted_regions": self.bugs_highlighted_regions,
            "per_kind_found": self.per_kind_found,
            "per_kind_highlighted": self.per_kind_highlighted,
            "coverage": self.coverage,
            "demo_scores": self.demo_scores,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def state_curiosity(
    states, rnd: RNDPair, encoder: ObservationEncoder
) -> np.ndarray:
    """Raw curiosity of each state (position code + agent info features)."""
    inputs = {
        "pos": np.stack([encoder.position_code(s.pos) for s in states]),
        "info": np.stack([agent_info_vector(s) for s in states]),
    }
    return rnd.raw_reward(inputs)


def score_trajectory(
    trajectory: Trajectory, rnd: RNDPair, encoder: ObservationEncoder
) -> tuple[float | None, int | None]:
    """Average raw curiosity from the start to the first goal entry.

    Returns (score, T). A trajectory that never reaches a goal is not
    scoreable and returns (None, None).
    """
    T = trajectory.first_goal_state_index
    if T is None:
        return None, None
    rc = state_curiosity(trajectory.states[: T + 1], rnd, encoder)
    return float(rc.sum() / max(T, 1)), T


def replay_record(record: dict, vmap: VoxelMap) -> Trajectory:
    traj = play_script(vmap, [int(a) for a in record["actions"]])
    stored = [tuple(p) for p in record["positions"]]
    if traj.positions != stored:
        raise TriageError(
            f"trajectory {record.get('id')}: replay diverged from stored positions"
        )
    return traj


def score_records(
    records: list[dict],
    vmap: VoxelMap,
    rnd: RNDPair,
    encoder: ObservationEncoder,
) -> list[TrajectoryScore]:
    scores = []
    for rec in records:
        traj = replay_record(rec, vmap)
        rc_avg, T = score_trajectory(traj, rnd, encoder)
        scores.append(
            TrajectoryScore(
                traj_id=int(rec["id"]),
                alpha=float(rec["alpha"]),
                reached_goal=traj.reached_goal,
                first_goal=T,
                rc_avg=rc_avg,
                bug_regions=tuple(sorted(traj.bug_regions_entered)),
            )
        )
    return scores


def compute_epsilon(
    scores: list[TrajectoryScore],
    demo_scores: list[float],
    mode: str,
    value: float | None = None,
    quantile: float = 0.90,
) -> float:
    """Absolute mode passes the user threshold through; quantile mode places it
    at the given percentile of the low-exploration reference scores (replayed
    demos plus goal-reaching trajectories with dial < 0.5)."""
    if mode == "absolute":
        if value is None:
            raise TriageError("absolute mode requires an epsilon value")
        return float(value)
    if mode != "quantile":
        raise TriageError(f"unknown epsilon mode {mode!r}")
    reference = list(demo_scores)
    reference.extend(
        s.rc_avg for s in scores if s.alpha < 0.5 and s.reached_goal and s.rc_avg is not None
    )
    if not reference:
        raise TriageError("quantile mode needs demo or low-dial reference scores")
    return float(np.percentile(np.array(reference, dtype=np.float64), quantile * 100.0))


def filter_theta(scores: list[TrajectoryScore], epsilon: float) -> list[int]:
    """Kept ids: dial >= 0.5, goal reached, average curiosity above epsilon."""
    return [
        s.traj_id
        for s in scores
        if s.alpha >= 0.5 and s.reached_goal and s.rc_avg is not None and s.rc_avg > epsilon
    ]


def evaluate_bugs(
    scores: list[TrajectoryScore],
    theta: list[int],
    vmap: VoxelMap,
    epsilon: float,
    mode: str,
    total_coverage: int,
    demo_scores: list[float] | None = None,
) -> TriageReport:
    theta_set = set(theta)
    found: set[int] = set()
    highlighted: set[int] = set()
    for s in scores:
        found.update(s.bug_regions)
        if s.traj_id in theta_set:
            highlighted.update(s.bug_regions)
    per_kind_found: dict[str, int] = {}
    per_kind_high: dict[str, int] = {}
    for i, bug in enumerate(vmap.bugs):
        if i in found:
            per_kind_found[bug.kind] = per_kind_found.get(bug.kind, 0) + 1
        if i in highlighted:
            per_kind_high[bug.kind] = per_kind_high.get(bug.kind, 0) + 1
    return TriageReport(
        epsilon=epsilon,
        mode=mode,
        theta=sorted(theta_set),
        scores=scores,
        bugs_found=len(found),
        bugs_highlighted=len(highlighted),
        bugs_found_regions=sorted(found),
        bugs_highlighted_regions=sorted(highlighted),
        per_kind_found=per_kind_found,
        per_kind_highlighted=per_kind_high,
        coverage=total_coverage,
        demo_scores=list(demo_scores or []),
    )


def run_triage(
    run_dir: str | Path,
    mode: str = "quantile",
    epsilon: float | None = None,
    quantile: float = 0.90,
) -> TriageReport:
    """Pure post-process over a finished run directory."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    data_path = run_dir / "dataset.jsonl"
    ckpt_dir = run_dir / "checkpoints"
    for p in (cfg_path, data_path, ckpt_dir / "rnd_target.vxnp", ckpt_dir / "rnd_predictor.vxnp"):
        if not p.exists():
            raise TriageError(f"missing run artifact: {p}")
    cfg = TrainConfig.from_dict(json.loads(cfg_path.read_text()))
    vmap = load_map(resolve_path(cfg.map_path))
    profile = cfg.net_profile()
    encoder = ObservationEncoder(vmap, L=profile.L)

    rng = np.random.default_rng(0)
    rnd = RNDPair(cfg.rnd_arch(), cfg.curiosity, rng, rng)
    rnd.target.load(ckpt_dir / "rnd_target.vxnp")
    rnd.predictor.load(ckpt_dir / "rnd_predictor.vxnp")

    records = TrajectoryLog.read(data_path)
    if not records:
        raise TriageError(f"{data_path} holds no trajectories")
    scores = score_records(records, vmap, rnd, encoder)

    demo_scores: list[float] = []
    if cfg.demo_paths:
        demoset = load_demos([resolve_path(p) for p in cfg.demo_paths], vmap)
        for demo in demoset.demos:
            s, _ = score_trajectory(demo.trajectory, rnd, encoder)
            if s is not None:
                demo_scores.append(s)

    eps = compute_epsilon(scores, demo_scores, mode, value=epsilon, quantile=quantile)
    theta = filter_theta(scores, eps)
    total_cov = coverage(rec["positions"] for rec in records)
    return evaluate_bugs(scores, theta, vmap, eps, mode, total_cov, demo_scores)


def export_trajectories(
    records: list[dict],
    scores_by_id: dict[int, TrajectoryScore],
    path: str | Path,
    only_ids: set[int] | None = None,
    demos: list[tuple[str, Trajectory, float | None]] | None = None,
) -> int:
    """Columnar text export: a metadata header line per trajectory followed by
    one `id t x y z` row per position. Parse back with :func:`parse_export`."""
    n = 0
    with open(path, "w") as fh:
        fh.write(f"# format_version {EXPORT_FORMAT_VERSION}\n")
        fh.write("# columns: id t x y z\n")
        for rec in records:
            tid = int(rec["id"])
            if only_ids is not None and tid not in only_ids:
                continue
            s = scores_by_id.get(tid)
            score = s.rc_avg if s and s.rc_avg is not None else ""
            bugs = ",".join(str(b) for b in rec.get("bug_regions", [])) or "-"
            fh.write(
                f"# trajectory id={tid} alpha={rec['alpha']} score={score} "
                f"reached_goal={int(bool(rec['reached_goal']))} bugs={bugs} demo=0\n"
            )
            for t, p in enumerate(rec["positions"]):
                fh.write(f"{tid} {t} {p[0]} {p[1]} {p[2]}\n")
            n += 1
        for name, traj, score in demos or []:
            fh.write(
                f"# trajectory id={name} alpha= score={'' if score is None else score} "
                f"reached_goal={int(traj.reached_goal)} bugs=- demo=1\n"
            )
            for t, p in enumerate(traj.positions):
                fh.write(f"{name} {t} {p[0]} {p[1]} {p[2]}\n")
            n += 1
    return n


def parse_export(path: str | Path) -> dict[str, list[tuple[int, int, int]]]:
    """Read back an export file as {trajectory id: ordered positions}."""
    out: dict[str, list[tuple[int, int, int]]] = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        tid, _t, x, y, z = line.split()
        out.setdefault(tid, []).append((int(x), int(y), int(z)))
    return out
