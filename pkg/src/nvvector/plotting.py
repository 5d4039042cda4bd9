"""Optional SVG plots of tabular series (matplotlib, lines and markers only)."""
from __future__ import annotations


class PlotUnavailable(RuntimeError):
    pass


def plot_series(series, x: str, ys, path, title: str = "", markers: bool = False) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as err:  # plotting is optional
        raise PlotUnavailable("matplotlib is not installed") from err
    matplotlib.rcParams["svg.hashsalt"] = "nvvector"
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = series.column(x)
    for name in ys:
        ax.plot(xs, series.column(name), "o-" if markers else "-", label=name, ms=3)
    ax.set_xlabel(x)
    if title:
        ax.set_title(title)
    if len(ys) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
