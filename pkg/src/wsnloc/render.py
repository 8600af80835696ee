"""Standalone SVG snapshots of a trial: partition colours, TS heat, error vectors."""

from __future__ import annotations

from pathlib import Path
from typing import Union
from xml.sax.saxutils import escape

import numpy as np

from .deployment import Network
from .geometry import Circle

LAYERS = ("partition", "occurrence", "errors")

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _ramp(t: float) -> str:
    # blue -> yellow -> red
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        a = t / 0.5
        r, g, b = 40 + a * 215, 90 + a * 150, 200 - a * 170
    else:
        a = (t - 0.5) / 0.5
        r, g, b = 255, 240 - a * 200, 30
    return f"#{int(r):02x}{int(g):02x}{int(b):02x}"


def render_svg(
    network: Network,
    layer: str,
    path: Union[str, Path],
    *,
    labels=None,
    ts=None,
    estimates=None,
    edges: bool = False,
    scale: float = 6.0,
) -> Path:
    """Write one SVG layer for a trial.

    ``labels`` feeds the partition layer, ``ts`` the occurrence layer and
    ``estimates`` (n x 2, NaN when unknown) the errors layer.
    """
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}; expected one of {LAYERS}")
    sc = network.scenario
    pad = 10.0
    W, H = sc.width * scale + 2 * pad, sc.height * scale + 2 * pad

    def X(x):
        return pad + x * scale

    def Y(y):
        # SVG y grows downwards
        return pad + (sc.height - y) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" viewBox="0 0 {W:.1f} {H:.1f}">',
        f"<title>{escape(sc.name)} / {layer}</title>",
        f'<rect x="{pad}" y="{pad}" width="{sc.width * scale:.1f}" height="{sc.height * scale:.1f}" fill="white" stroke="black"/>',
    ]
    for ob in sc.obstacles:
        if isinstance(ob, Circle):
            out.append(f'<circle cx="{X(ob.center[0]):.1f}" cy="{Y(ob.center[1]):.1f}" r="{ob.radius * scale:.1f}" fill="#bbbbbb"/>')
        else:
            pts = " ".join(f"{X(x):.1f},{Y(y):.1f}" for x, y in ob.vertices)
            out.append(f'<polygon points="{pts}" fill="#bbbbbb"/>')
    P = network.positions
    if edges:
        for i, j in network.edges:
            out.append(f'<line x1="{X(P[i, 0]):.1f}" y1="{Y(P[i, 1]):.1f}" x2="{X(P[j, 0]):.1f}" y2="{Y(P[j, 1]):.1f}" stroke="#dddddd" stroke-width="0.5"/>')

    colors = ["#333333"] * network.n
    if layer == "partition":
        if labels is None:
            raise ValueError("partition layer needs labels")
        labels = np.asarray(getattr(labels, "label", labels))
        order = {s: k for k, s in enumerate(np.unique(labels))}
        colors = [PALETTE[order[s] % len(PALETTE)] for s in labels]
    elif layer == "occurrence":
        if ts is None:
            raise ValueError("occurrence layer needs occurrence counts")
        ts = np.asarray(ts, dtype=float)
        span = ts.max() - ts.min()
        colors = [_ramp((t - ts.min()) / span if span else 0.0) for t in ts]
    else:
        if estimates is None:
            raise ValueError("errors layer needs estimates")
        est = np.asarray(estimates, dtype=float)
        for i in range(network.n):
            if np.isnan(est[i, 0]):
                colors[i] = "#d62728"
                continue
            out.append(
                f'<line x1="{X(est[i, 0]):.1f}" y1="{Y(est[i, 1]):.1f}" x2="{X(P[i, 0]):.1f}" y2="{Y(P[i, 1]):.1f}" stroke="#d62728" stroke-width="1"/>'
            )

    r = 0.6 * scale
    for i in range(network.n):
        x, y = X(P[i, 0]), Y(P[i, 1])
        if network.is_anchor[i]:
            out.append(f'<rect x="{x - r:.1f}" y="{y - r:.1f}" width="{2 * r:.1f}" height="{2 * r:.1f}" fill="{colors[i]}" stroke="black"/>')
        else:
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{r:.1f}" fill="{colors[i]}"/>')
    out.append("</svg>")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(out) + "\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path
