"""Deviation-suite evaluation: metrics tables, verdicts, uncertainty maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cell import NetworkConfig, SpGruParams, unroll
from .data import SuiteLevel, TrajectoryConfig, deviation_suite, write_pgm
from .metrics import UncertaintyMetric, strictly_increasing, uncertainty_metric


@dataclass
class LevelResult:
    label: str
    value: float
    n_sequences: int
    metric: UncertaintyMetric


@dataclass
class SuiteResult:
    suite: str
    levels: list[LevelResult]

    @property
    def averages(self) -> list[float]:
        return [lv.metric.average for lv in self.levels]

    @property
    def monotonic(self) -> bool:
        return strictly_increasing(self.averages)


def evaluate_level(params: SpGruParams, net_cfg: NetworkConfig,
                   level: SuiteLevel) -> LevelResult:
    pred = unroll(level.batch.flat, net_cfg, params)
    return LevelResult(level.label, level.value, level.batch.frames.shape[0],
                       uncertainty_metric(pred.s))


def evaluate_suite(params: SpGruParams, net_cfg: NetworkConfig,
                   data_cfg: TrajectoryConfig, suite: str,
                   n_sequences: int = 100) -> SuiteResult:
    levels = deviation_suite(data_cfg, suite, n_sequences)
    return SuiteResult(suite, [evaluate_level(params, net_cfg, lv) for lv in levels])


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_suite_tables(result: SuiteResult, out_dir) -> list[Path]:
    """Delimited tables: summary with verdict, per-frame, per-sequence."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    summary = out_dir / f"deviation_{result.suite}.tsv"
    with open(summary, "w") as fh:
        fh.write("suite\tlevel\tvalue\tavg_sum_pixel_variance\tn_sequences\tn_frames\n")
        for lv in result.levels:
            fh.write(
                f"{result.suite}\t{lv.label}\t{_fmt(lv.value)}\t"
                f"{_fmt(lv.metric.average)}\t{lv.n_sequences}\t{lv.metric.per_frame.size}\n"
            )
        fh.write(f"# monotonic: {'yes' if result.monotonic else 'no'}\n")
    written.append(summary)

    per_frame = out_dir / f"deviation_{result.suite}_perframe.tsv"
    with open(per_frame, "w") as fh:
        fh.write("level\tframe\tsum_pixel_variance\n")
        for lv in result.levels:
            for t, v in enumerate(lv.metric.per_frame):
                fh.write(f"{lv.label}\t{t}\t{_fmt(float(v))}\n")
    written.append(per_frame)

    per_seq = out_dir / f"deviation_{result.suite}_persequence.tsv"
    with open(per_seq, "w") as fh:
        fh.write("level\tsequence\tavg_sum_pixel_variance\n")
        for lv in result.levels:
            for i, v in enumerate(lv.metric.per_sequence):
                fh.write(f"{lv.label}\t{i}\t{_fmt(float(v))}\n")
    written.append(per_seq)
    return written


def export_maps(params: SpGruParams, net_cfg: NetworkConfig,
                frames_flat: np.ndarray, out_dir) -> dict:
    """Per-frame mean and variance PGMs plus a scale sidecar.

    Variance maps are linearly rescaled to [0, 255] by the batch maximum;
    the sidecar records the scale (flagged degenerate when all zero).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred = unroll(frames_flat, net_cfg, params)
    B, T, D = pred.m.shape
    side = int(round(np.sqrt(D)))
    mean_maps = pred.m[0].reshape(T, side, side)
    var_maps = pred.s[0].reshape(T, side, side)
    vmax = float(var_maps.max())
    degenerate = vmax <= 0.0
    scale = 1.0 if degenerate else vmax

    files = []
    for t in range(T):
        mp = out_dir / f"mean_{t:03d}.pgm"
        vp = out_dir / f"var_{t:03d}.pgm"
        write_pgm(mp, mean_maps[t])
        write_pgm(vp, var_maps[t] / scale)
        files += [mp, vp]
    sidecar = out_dir / "variance_scale.txt"
    with open(sidecar, "w") as fh:
        fh.write(f"variance_scale\t{_fmt(scale)}\n")
        fh.write(f"degenerate\t{'yes' if degenerate else 'no'}\n")
        fh.write("# pgm value 255 corresponds to this variance; mean maps are raw [0,1]\n")
    return {"files": files, "sidecar": sidecar, "mean": mean_maps, "var": var_maps,
            "degenerate": degenerate, "scale": scale}
