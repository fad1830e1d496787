"""Objective comparisons: parameter counts, synthesis timing with 95%
confidence intervals, motion statistics, and gesture-space plots.

Timing runs are strictly serial; the confidence interval uses Student-t
quantiles from a built-in table (normal approximation past 120 degrees
of freedom), so no statistics dependency is needed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from isg.features.motion import MotionSequence
from isg.features.skeleton import Skeleton, forward_kinematics

# two-sided 95% Student-t quantiles by degrees of freedom
_T_TABLE = {
    1: 12.7062, 2: 4.3027, 3: 3.1824, 4: 2.7764, 5: 2.5706, 6: 2.4469,
    7: 2.3646, 8: 2.3060, 9: 2.2622, 10: 2.2281, 11: 2.2010, 12: 2.1788,
    13: 2.1604, 14: 2.1448, 15: 2.1314, 16: 2.1199, 17: 2.1098, 18: 2.1009,
    19: 2.0930, 20: 2.0860, 21: 2.0796, 22: 2.0739, 23: 2.0687, 24: 2.0639,
    25: 2.0595, 26: 2.0555, 27: 2.0518, 28: 2.0484, 29: 2.0452, 30: 2.0423,
    40: 2.0211, 50: 2.0086, 60: 2.0003, 80: 1.9901, 100: 1.9840, 120: 1.9799,
}


def student_t_quantile(df: int) -> float:
    """Two-sided 95% t quantile; conservative (next lower df) between
    table rows, normal approximation beyond 120."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if df in _T_TABLE:
        return _T_TABLE[df]
    if df > 120:
        return 1.96
    lower = max(k for k in _T_TABLE if k <= df)
    return _T_TABLE[lower]


def mean_ci(samples) -> tuple[float, float]:
    """(mean, 95% CI half-width) with the Student-t quantile."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least 2 samples for a confidence interval")
    s = x.std(ddof=1)
    half = student_t_quantile(len(x) - 1) * s / np.sqrt(len(x))
    return float(x.mean()), float(half)


def count_parameters(model) -> int:
    """Element count over trainable parameter tensors; accepts a model
    or an iterable of models (a pipeline counts as the exact sum)."""
    if isinstance(model, (list, tuple)):
        return sum(count_parameters(m) for m in model)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


@dataclass
class TimingReport:
    model_name: str
    n_runs: int
    mean_s: float
    ci_half_width_s: float
    mean_utterance_s: float
    per_run_s: list[float] = field(default_factory=list)
    stage_means: dict = field(default_factory=dict)
    stage_timings: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"model": self.model_name, "n_runs": self.n_runs,
                "mean_s": self.mean_s, "ci_half_width_s": self.ci_half_width_s,
                "mean_utterance_s": self.mean_utterance_s,
                "per_run_s": self.per_run_s, "stage_means": self.stage_means,
                "stage_timings": self.stage_timings}


def time_synthesis(synthesize, texts, n_repeats: int = 3,
                   model_name: str = "model") -> TimingReport:
    """Serial wall-clock timing of ``synthesize(text) -> result``.

    One warm-up call is excluded.  The result object may provide
    ``duration_s`` (synthesized utterance length) and ``timings``
    (a StageTimings for pipeline stage accounting).
    """
    if n_repeats < 2:
        raise ValueError("n_repeats must be >= 2 for a confidence interval")
    texts = list(texts)
    synthesize(texts[0])   # warm-up excluded from statistics
    per_run, durations, stage_timings = [], [], []
    for _ in range(n_repeats):
        for text in texts:
            t0 = time.perf_counter()
            result = synthesize(text)
            per_run.append(time.perf_counter() - t0)
            dur = getattr(result, "duration_s", None)
            if dur is not None:
                durations.append(dur)
            st = getattr(result, "timings", None)
            if st is not None:
                stage_timings.append(st.to_json())
    mean, half = mean_ci(per_run)
    stage_means = {}
    if stage_timings:
        stage_means = {
            "speech_s": float(np.mean([s["speech_s"] for s in stage_timings])),
            "gesture_s": float(np.mean([s["gesture_s"] for s in stage_timings])),
        }
    return TimingReport(
        model_name=model_name, n_runs=len(per_run), mean_s=mean,
        ci_half_width_s=half,
        mean_utterance_s=float(np.mean(durations)) if durations else 0.0,
        per_run_s=per_run, stage_means=stage_means,
        stage_timings=stage_timings)


def timing_table_markdown(reports: list[TimingReport],
                          param_counts: dict[str, int]) -> str:
    """Markdown table: parameter counts and synthesis time with 95% CIs."""
    lines = ["| System | Param. count | Synth. time | Mean utterance |",
             "|---|---|---|---|"]
    for r in reports:
        params = param_counts.get(r.model_name)
        ptxt = f"{params / 1e6:.2f}M" if params is not None else "-"
        lines.append(
            f"| {r.model_name} | {ptxt} | {r.mean_s:.2f}±{r.ci_half_width_s:.2f} s "
            f"| {r.mean_utterance_s:.2f} s |")
    return "\n".join(lines) + "\n"


def motion_stats(motion: MotionSequence) -> dict:
    """Per-channel range and overall motion variation.

    range = max - min per channel; variation = mean |x_{t+1} - x_t| over
    frames and channels.  Needs at least 2 frames.
    """
    if motion.n_frames < 2:
        raise ValueError("variation undefined for fewer than 2 frames")
    values = motion.values
    rng = values.max(axis=0) - values.min(axis=0)
    variation = float(np.mean(np.abs(np.diff(values, axis=0))))
    return {"range": rng, "variation": variation,
            "range_mean": float(rng.mean()), "range_max": float(rng.max())}


_GROUP_COLORS = {"right_arm": "red", "left_arm": "green", "torso": "blue"}


def gesture_space_plot(motions: list[MotionSequence], skeleton: Skeleton,
                       out_png=None, out_csv=None) -> dict:
    """Frontal 2-D joint traces via forward kinematics.

    Returns plot-ready data: per motion, per joint, an (frames, 2) array
    of projected positions plus the joint's color group.  Optionally
    renders a PNG and writes the traces as CSV.
    """
    groups = skeleton.groups()
    color_of = {}
    for gname, joints in groups.items():
        for j in joints:
            color_of[j] = _GROUP_COLORS[gname]
    plots = []
    for motion in motions:
        positions = forward_kinematics(skeleton, motion)   # (T, J, 3)
        traces = {}
        for j, name in enumerate(skeleton.joint_names):
            traces[name] = {"xy": positions[:, j, :2],
                            "color": color_of[name]}
        plots.append(traces)

    if out_csv is not None:
        rows = ["motion,frame,joint,x,y,color"]
        for mi, traces in enumerate(plots):
            for name, tr in traces.items():
                for t, (x, y) in enumerate(tr["xy"]):
                    rows.append(f"{mi},{t},{name},{x:.6f},{y:.6f},{tr['color']}")
        with open(out_csv, "w", encoding="utf-8") as f:
            f.write("\n".join(rows) + "\n")

    if out_png is not None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        n = len(plots)
        fig, axes = plt.subplots(1, max(n, 1), figsize=(4 * max(n, 1), 4),
                                 squeeze=False)
        for mi, traces in enumerate(plots):
            ax = axes[0][mi]
            for name, tr in traces.items():
                ax.plot(tr["xy"][:, 0], tr["xy"][:, 1], color=tr["color"],
                        linewidth=0.7, alpha=0.8)
            ax.set_title(f"input {mi}")
            ax.set_aspect("equal")
        fig.tight_layout()
        fig.savefig(out_png, dpi=120)
        plt.close(fig)
    return {"plots": plots, "colors": _GROUP_COLORS}
