"""Figures for scenario tables (written as PNG files with the Agg backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _columns(table):
    header, rows = table
    data = np.array([[float(x) for x in r] for r in rows]) if rows else np.zeros((0, len(header)))
    return header, data


def plot_convergence(table, path, title="convergence"):
    header, data = _columns(table)
    fig, ax = plt.subplots(figsize=(5, 4))
    h = data[:, 0]
    for k, name in enumerate(header[1:], start=1):
        if "error" in name:
            ax.loglog(h, data[:, k], "o-", label=name)
    err = [k for k, name in enumerate(header) if "error" in name]
    if len(h) and err:
        ax.loglog(h, data[0, err[0]] * (h / h[0]), "k:", label="slope 1")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.legend(fontsize=7)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_profiles(table, path, title, xlabel="outer boundary parameter t"):
    header, data = _columns(table)
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, name in enumerate(header[1:], start=1):
        ax.plot(data[:, 0], data[:, k], lw=1.2, label=name)
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_alpha_curve(table, path):
    header, data = _columns(table)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(data[:, 0], data[:, 1], "o-", label=header[1])
    ax.set_xlabel("alpha")
    ax.set_ylabel("relative residual")
    ax.invert_xaxis()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_bars(table, path, title):
    header, rows = table
    fig, ax = plt.subplots(figsize=(6, 3.5))
    labels = [str(r[0]) for r in rows]
    vals = [float(r[-1]) for r in rows]
    ax.bar(labels, np.maximum(vals, 1e-300))
    ax.set_yscale("log")
    ax.set_ylabel(header[-1])
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_tables(report, outdir):
    """Render every recognized table of a report; returns the written paths."""
    out = []
    for name, table in report.tables.items():
        path = os.path.join(outdir, f"{name}.png")
        if not table[1]:
            continue
        if name == "convergence":
            out.append(plot_convergence(table, path, f"{report.scenario}: convergence"))
        elif name in ("flux", "responses"):
            out.append(plot_profiles(table, path, f"{report.scenario}: outer flux"))
        elif name == "alpha_curve":
            out.append(plot_alpha_curve(table, path))
        elif name in ("separation", "dtn_difference"):
            out.append(plot_bars(table, path, f"{report.scenario}: per-probe difference"))
    return out
