"""Static SVG line charts for the package's CSV outputs."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "fgd"  # stable element ids -> reproducible files
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..analysis import read_table  # noqa: E402


def _trajectory(ax, rows):
    t = [int(r["t"]) for r in rows]
    ax.plot(t, [float(r["d_score"]) for r in rows], label="d-score")
    ax.plot(t, [float(r["lambda"]) for r in rows], label="lambda")
    l1 = [float(r["l1_to_guide_filtered"]) for r in rows]
    if not all(np.isnan(l1)):
        ax.plot(t, l1, label="L1 to filtered guide", linestyle="--")
    ax.invert_xaxis()
    ax.set_xlabel("step t")


def _spectrum(ax, rows):
    cols = [c for c in rows[0] if c not in ("radius", "frequency")]
    rows = [r for r in rows if int(r["radius"]) > 0]
    f = [float(r["frequency"]) for r in rows]
    for c in cols:
        ax.loglog(f, [float(r[c]) for r in rows], label=c)
    ax.set_xlabel("frequency (cycles/pixel)")
    ax.set_ylabel("mean amplitude")


def _snr(ax, rows, max_lines=6):
    by_t = defaultdict(list)
    for r in rows:
        if int(r["radius"]) > 0:
            by_t[int(r["t"])].append((float(r["frequency"]), float(r["snr"])))
    ts = sorted(by_t)
    pick = [ts[int(round(i))] for i in np.linspace(0, len(ts) - 1, min(max_lines, len(ts)))]
    for t in sorted(set(pick)):
        f, v = zip(*by_t[t])
        ax.loglog(f, v, label=f"t={t}")
    ax.set_xlabel("frequency (cycles/pixel)")
    ax.set_ylabel("SNR (amplitude ratio)")


def _sweep(ax, rows):
    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["delta"] != "none":
            groups[r["filter"]][float(r["delta"])].append(float(r["structure_distance"]))
    for name, by_delta in groups.items():
        ds = sorted(by_delta)
        ax.plot(ds, [np.median(by_delta[d]) for d in ds], marker="o", label=name)
    base = [float(r["structure_distance"]) for r in rows if r["delta"] == "none"]
    if base:
        ax.axhline(np.median(base), color="gray", linestyle=":", label="unguided")
    ax.set_xscale("log")
    ax.set_xlabel("delta")
    ax.set_ylabel("median structure distance")


PLOTTERS = {
    "# fgd-trajectory": _trajectory,
    "# fgd-spectrum": _spectrum,
    "# fgd-snr": _snr,
    "# fgd-sweep": _sweep,
}


def plot_csv(csv_path, svg_path, title: str | None = None):
    schema, rows = read_table(csv_path)
    kind = next((k for k in PLOTTERS if schema.startswith(k)), None)
    if kind is None:
        raise ValueError(f"{csv_path}: no chart for {schema!r}")
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    fig, ax = plt.subplots(figsize=(6, 4))
    PLOTTERS[kind](ax, rows)
    ax.set_title(title or schema.lstrip("# "))
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
