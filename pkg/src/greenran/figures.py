"""Render the report bundle to PNG files next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


_METHOD_STYLE = {
    "proposed": {"color": "#2a7f3f"},
    "static-routing": {"color": "#b1593c"},
    "traffic-aware": {"color": "#3c6db1"},
}


def _style(method: str) -> dict:
    return _METHOD_STYLE.get(method, {"color": "#777777"})


def render_bundle(bundle, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    written.append(_render_opex(bundle, out / "fig5_opex.png"))
    for attr_pair, name, ylabel in (
            (("active_cu", "active_du"), "fig6_active_dpes",
             "active DPEs"),
            (("unstored_cu", "unstored_du"), "fig7_unstored",
             "unstored (sold) energy [kWh]"),
            (("remaining_cu", "remaining_du"), "fig8_remaining",
             "battery charge [kWh]")):
        written.append(_render_series(bundle, attr_pair, ylabel,
                                      out / f"{name}.png"))
    written.append(_render_scalability(bundle, out / "fig9_scalability.png"))
    return [w for w in written if w is not None]


def _render_opex(bundle, path: Path):
    cells = [c for c in bundle.cells if c.annual_opex is not None]
    if not cells:
        return None
    labels = sorted({f"{c.cell.city}/{c.cell.tier}" for c in cells})
    methods = sorted({c.cell.method for c in cells})
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(labels)), 4))
    width = 0.8 / len(methods)
    for k, method in enumerate(methods):
        values = []
        for label in labels:
            city, tier = label.split("/")
            match = [c.annual_opex for c in cells
                     if c.cell.method == method and c.cell.city == city
                     and c.cell.tier == tier]
            values.append(match[0] if match else float("nan"))
        xs = [i + (k - (len(methods) - 1) / 2) * width
              for i in range(len(labels))]
        ax.bar(xs, values, width=width, label=method, **_style(method))
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(f"annual OpEx [{cells[0].currency}]")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _render_series(bundle, attrs: tuple[str, str], ylabel: str, path: Path):
    cu = bundle.by_method(attrs[0])
    du = bundle.by_method(attrs[1])
    if not cu and not du:
        return None
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    for ax, series, title in ((axes[0], cu, "CU"), (axes[1], du, "DUs")):
        for method in sorted(series):
            ax.plot(range(len(series[method])), series[method],
                    marker="o", markersize=3, label=method, **_style(method))
        ax.set_title(title)
        ax.set_xlabel("interval")
    axes[0].set_ylabel(ylabel)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _render_scalability(bundle, path: Path):
    rows = [(c.cell.topology, c.model_stats.get("cols"), c.max_abs_gap)
            for c in bundle.cells if c.model_stats.get("cols")]
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(6, 3.5))
    topos = [r[0] for r in rows]
    ax.bar(range(len(rows)), [r[1] for r in rows], color="#5b7a9d")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(topos, rotation=30, ha="right")
    ax.set_ylabel("model columns")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
