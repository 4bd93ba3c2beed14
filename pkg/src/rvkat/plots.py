"""Comparison scatters of -log10 p-values, written as SVG.

Two layouts: method-vs-method draws one panel per trait with genes as points,
trait-vs-trait draws a single panel for one method with genes as points.
Both overlay the identity diagonal; pairs with an untestable side are left
out and their count is reported in the figure footer.
"""

import math

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "rvkat"

import matplotlib.pyplot as plt
import numpy as np

from .exceptions import ConfigError


def _series(results, method=None, trait=None):
    out = {}
    for r in results:
        if method is not None and r.method != method:
            continue
        if trait is not None and r.trait != trait:
            continue
        out[(r.gene, r.trait)] = r.p_value
    return out


def _paired_points(xs, ys):
    keys = sorted(xs)
    pts = []
    omitted = 0
    for k in keys:
        px, py = xs[k], ys[k]
        if px is None or py is None:
            omitted += 1
            continue
        pts.append((-math.log10(px), -math.log10(py)))
    return pts, omitted


def _draw_panel(ax, pts, title):
    if pts:
        arr = np.array(pts)
        ax.scatter(arr[:, 0], arr[:, 1], s=12, alpha=0.75, edgecolors="none")
        hi = max(float(arr.max()), 1.0) * 1.05
    else:
        hi = 1.0
    ax.plot([0, hi], [0, hi], lw=0.8, color="grey", zorder=0)
    ax.set_xlim(0, hi)
    ax.set_ylim(0, hi)
    ax.set_title(title, fontsize=9)


def emit_compare_plot(
    results,
    out_path,
    method_x=None,
    method_y=None,
    trait_x=None,
    trait_y=None,
    method=None,
):
    """Scatter of -log10 p pairs with the identity diagonal.

    Either compare two methods across all traits (one panel per trait) or two
    traits for one method (single panel).  Returns (n_panels, n_omitted).
    """
    method_mode = method_x is not None and method_y is not None
    trait_mode = trait_x is not None and trait_y is not None and method is not None
    if method_mode == trait_mode:
        raise ConfigError(
            "choose either method_x/method_y or trait_x/trait_y with method"
        )

    if method_mode:
        methods = {r.method for r in results}
        for name in (method_x, method_y):
            if name not in methods:
                raise ConfigError(f"method {name!r} not present in results")
        traits = []
        for r in results:
            if r.trait not in traits:
                traits.append(r.trait)
        panels = []
        total_omitted = 0
        for trait in traits:
            xs = _series(results, method=method_x, trait=trait)
            ys = _series(results, method=method_y, trait=trait)
            if set(xs) != set(ys):
                raise ConfigError(
                    f"methods cover different (gene, trait) keys for trait {trait!r}"
                )
            pts, omitted = _paired_points(xs, ys)
            total_omitted += omitted
            panels.append((trait, pts))
        ncol = math.ceil(math.sqrt(len(panels)))
        nrow = math.ceil(len(panels) / ncol)
        fig, axes = plt.subplots(
            nrow, ncol, figsize=(3.2 * ncol, 3.2 * nrow), squeeze=False
        )
        for k, (trait, pts) in enumerate(panels):
            _draw_panel(axes[k // ncol][k % ncol], pts, trait)
        for k in range(len(panels), nrow * ncol):
            axes[k // ncol][k % ncol].axis("off")
        fig.supxlabel(f"-log10 p ({method_x})")
        fig.supylabel(f"-log10 p ({method_y})")
        n_panels = len(panels)
    else:
        traits = {r.trait for r in results}
        for name in (trait_x, trait_y):
            if name not in traits:
                raise ConfigError(f"trait {name!r} not present in results")
        xs = _series(results, method=method, trait=trait_x)
        ys = _series(results, method=method, trait=trait_y)
        keys_x = {g for g, _ in xs}
        keys_y = {g for g, _ in ys}
        if keys_x != keys_y:
            raise ConfigError("traits cover different gene sets")
        xs = {(g, ""): p for (g, _), p in xs.items()}
        ys = {(g, ""): p for (g, _), p in ys.items()}
        pts, total_omitted = _paired_points(xs, ys)
        fig, ax = plt.subplots(figsize=(4.0, 4.0))
        _draw_panel(ax, pts, f"{method}: {trait_x} vs {trait_y}")
        ax.set_xlabel(f"-log10 p ({trait_x})")
        ax.set_ylabel(f"-log10 p ({trait_y})")
        n_panels = 1

    if total_omitted:
        fig.text(
            0.01, 0.005, f"{total_omitted} untestable pair(s) omitted", fontsize=7
        )
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return n_panels, total_omitted
