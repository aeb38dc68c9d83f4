import matplotlib

matplotlib.use("Agg")  # NOQA: E402
try:
    import matplotlib.pyplot as plt
except ImportError:
    raise ImportError("Please install matplotlib.")


def plot_series(times, series, title=None, logy=False):
    """One line per named diagnostic against time."""
    fig, ax = plt.subplots(figsize=(10, 6))
    for name, values in series.items():
        ax.plot(times, values, label=name)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    if title is not None:
        ax.set_title(title)
    if series:
        ax.legend()
    fig.canvas.draw()
    plt.close()

    return fig


def plot_blowup(times, norms, t_star=None, t_bound=None):
    fig, ax = plt.subplots(figsize=(10, 6))
    ax.semilogy(times, norms, label="||Gamma(t)||")
    if t_star is not None:
        ax.axvline(t_star, linestyle="--", color="r", label="t*")
    if t_bound is not None:
        ax.axvline(t_bound, linestyle=":", color="k", label="Glassey bound")
    ax.set_xlabel("t")
    ax.legend()
    fig.canvas.draw()
    plt.close()

    return fig
