"""The three figure kinds rendered from sourcetrack run artifacts."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reading import (
    ContractError,
    read_chain_csv,
    read_slice_csv,
    read_track_csv,
    read_true_path_csv,
)

FIGURE_KINDS = ("path3d", "indicator-slice", "chain-histogram")

# Legend conventions: z exact path, z_s coarse (sampling) reconstruction,
# z_b Bayesian refinement, z_u uniform-prior run.
DEFAULT_LABELS = {"true": "z", "adsm": "z_s", "mcmc": "z_b", "uniform": "z_u"}


@dataclass(frozen=True)
class FigureSpec:
    """What to draw and where to write it.

    ``inputs`` maps role names to file paths. Roles by kind:
      path3d:          any of true/true2/.../adsm/mcmc/uniform
      indicator-slice: slice
      chain-histogram: chain, plus optional true (with ``period`` set)
    """

    kind: str
    inputs: dict
    out_path: Path
    labels: dict = field(default_factory=dict)
    period: int = 1

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        for role, path in self.inputs.items():
            if not Path(path).is_file():
                raise FileNotFoundError(f"{role} input {path} does not exist")

    def label(self, role: str) -> str:
        return self.labels.get(role, DEFAULT_LABELS.get(role, role))


def _draw_tracks(ax, points, label, **style):
    for s in range(points.shape[1]):
        ax.plot(
            points[:, s, 0], points[:, s, 1], points[:, s, 2],
            label=label if s == 0 else None, **style,
        )


def render_path3d(spec: FigureSpec):
    fig = plt.figure(figsize=(6.0, 5.0))
    ax = fig.add_subplot(projection="3d")
    drew = False
    true_keys = sorted(k for k in spec.inputs if k == "true" or k.startswith("true"))
    for i, key in enumerate(true_keys):
        truth = read_true_path_csv(spec.inputs[key])
        ax.plot(
            truth[:, 0], truth[:, 1], truth[:, 2], "k-", linewidth=2.0,
            label=spec.label("true") if i == 0 else None,
        )
        drew = True
    if "adsm" in spec.inputs:
        _draw_tracks(ax, read_track_csv(spec.inputs["adsm"]), spec.label("adsm"),
                     linestyle="--", marker="o", markersize=3, color="tab:blue")
        drew = True
    if "mcmc" in spec.inputs:
        _draw_tracks(ax, read_track_csv(spec.inputs["mcmc"]), spec.label("mcmc"),
                     linestyle="-", marker="^", markersize=3, color="tab:red")
        drew = True
    if "uniform" in spec.inputs:
        _draw_tracks(ax, read_track_csv(spec.inputs["uniform"]), spec.label("uniform"),
                     linestyle=":", marker="s", markersize=3, color="tab:green")
        drew = True
    if not drew:
        raise ContractError("path3d needs at least one of true/adsm/mcmc/uniform inputs")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_zlabel("z")
    ax.legend(loc="upper left")
    return fig


def render_indicator_slice(spec: FigureSpec):
    meta, values = read_slice_csv(spec.inputs["slice"])
    lower, upper = meta["lower"], meta["upper"]
    fig, ax = plt.subplots(figsize=(5.6, 4.6))
    # rows follow the x axis, columns the y axis; show x horizontally
    image = ax.imshow(
        values.T,
        origin="lower",
        extent=(lower[0], upper[0], lower[1], upper[1]),
        vmin=0.0,
        vmax=1.0,
        aspect="equal",
        cmap="viridis",
    )
    fig.colorbar(image, ax=ax, label="indicator")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"period {meta['period']}, z = {float(meta['z']):.3g}"
                 if "z" in meta else f"period {meta['period']}")
    return fig


def render_chain_histogram(spec: FigureSpec):
    chain = read_chain_csv(spec.inputs["chain"])
    truth = None
    if "true" in spec.inputs:
        path = read_true_path_csv(spec.inputs["true"])
        if not 1 <= spec.period <= path.shape[0]:
            raise ContractError(
                f"period {spec.period} outside the true path's 1..{path.shape[0]}"
            )
        truth = path[spec.period - 1]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.4))
    for i, (ax, name) in enumerate(zip(axes, "xyz")):
        ax.hist(chain["samples"][:, i], bins=40, color="tab:blue", alpha=0.8)
        if truth is not None:
            ax.axvline(truth[i], color="black", linestyle="--", linewidth=1.5)
        ax.set_xlabel(name)
    axes[0].set_ylabel("samples")
    fig.suptitle(f"chain marginals, period {spec.period}")
    fig.tight_layout()
    return fig


_RENDERERS = {
    "path3d": render_path3d,
    "indicator-slice": render_indicator_slice,
    "chain-histogram": render_chain_histogram,
}


def render(spec: FigureSpec) -> Path:
    """Render the figure and write it to ``spec.out_path``."""
    fig = _RENDERERS[spec.kind](spec)
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
