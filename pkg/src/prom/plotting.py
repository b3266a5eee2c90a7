"""Figures rendered next to the CSVs (PNG, non-interactive backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def plot_scatter(results, path):
    """One panel per method: gradient vs error of the (1, 1) entry."""
    fig, axes = plt.subplots(1, len(results), figsize=(4 * len(results), 3.6), squeeze=False)
    for ax, res in zip(axes[0], results):
        ok = ~res.degenerate
        ax.scatter(res.x[ok], res.y[ok], s=2, alpha=0.4)
        if (~ok).any():
            ax.scatter(res.x[~ok], res.y[~ok], s=6, c="red", label="degenerate")
            ax.legend(loc="best", fontsize=7)
        ax.axhline(0, color="k", lw=0.5)
        ax.axvline(0, color="k", lw=0.5)
        ax.set_title(f"{res.method}, sigma={res.sigma:g}")
        ax.set_xlabel("t'11 - t11")
        ax.set_ylabel("dL / dt'11")
    _save(fig, path)


def plot_eigen(results, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for res in results:
        vals = np.log10(np.maximum(np.abs(res.lambda_min), 1e-30))
        ax.hist(vals, bins=60, alpha=0.6, label=res.method)
    ax.set_xlabel("log10 |lambda_min(B B^T)|")
    ax.set_ylabel("samples")
    ax.legend()
    _save(fig, path)


def plot_explosion(rows, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for method in dict.fromkeys(r["method"] for r in rows):
        pts = [(r["gap"], r["grad_norm"]) for r in rows if r["method"] == method]
        gaps, norms = zip(*pts)
        ax.loglog(gaps, norms, marker="o", label=method)
    ax.invert_xaxis()
    ax.set_xlabel("gap")
    ax.set_ylabel("Jacobian norm")
    ax.legend()
    _save(fig, path)


def plot_lr_sweep(rows, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for method in dict.fromkeys(r["method"] for r in rows):
        sel = [r for r in rows if r["method"] == method]
        lrs = [r["lr"] for r in sel]
        errs = [r["final_error"] if r["diverged_at"] == "" else np.nan for r in sel]
        ax.plot(lrs, errs, marker="o", label=method)
        for r in sel:
            if r["diverged_at"] != "":
                ax.axvline(r["lr"], ls=":", lw=0.8, color="gray")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("learning rate")
    ax.set_ylabel("final position MSE")
    ax.legend()
    _save(fig, path)


def plot_training(runs, path):
    """Loss and periodic evaluation error against step for several runs."""
    fig, (ax_loss, ax_eval) = plt.subplots(1, 2, figsize=(9, 3.6))
    for res in runs:
        steps = np.array([r.step for r in res.records])
        loss = np.array([r.total_loss for r in res.records])
        ax_loss.semilogy(steps, loss, label=res.name)
        ev = np.array([r.eval_geodesic_deg for r in res.records])
        ok = np.isfinite(ev)
        ax_eval.semilogy(steps[ok], ev[ok], marker=".", label=res.name)
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("training loss")
    ax_eval.set_xlabel("step")
    ax_eval.set_ylabel("mean geodesic error (deg)")
    ax_eval.legend(fontsize=7)
    _save(fig, path)
