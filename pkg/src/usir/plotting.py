"""Report figures. Uses the non-interactive Agg backend throughout."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import AAA_THRESHOLD_MM, CLINICAL_MAE_LIMIT_MM, DiameterReport  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0

RC = {
    "font.size": 9,
    "font.family": "serif",
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.0,
    "savefig.dpi": 200,
    "savefig.bbox": "tight",
}


def plot_diameter_report(report: DiameterReport, path) -> None:
    """Predicted vs. ground-truth AP diameter next to the per-image DSC histogram."""
    with plt.rc_context(RC):
        fig, (ax, bx) = plt.subplots(1, 2, figsize=(6.5, 6.5 / 2 * GOLDEN * 1.2))
        gt = np.asarray(report.gt_diameters)
        pred = np.asarray(report.pred_diameters)
        hi = max(float(gt.max(initial=0)), float(pred.max(initial=0)), AAA_THRESHOLD_MM) * 1.1
        band = CLINICAL_MAE_LIMIT_MM
        xs = np.array([0.0, hi])
        ax.fill_between(xs, xs - band, xs + band, color="0.9", lw=0, label=f"±{band:g} mm")
        ax.plot(xs, xs, color="0.4", ls="--", lw=0.8)
        ax.axvline(AAA_THRESHOLD_MM, color="0.6", lw=0.6, ls=":")
        ax.axhline(AAA_THRESHOLD_MM, color="0.6", lw=0.6, ls=":")
        ax.scatter(gt, pred, s=8, color="k", zorder=3)
        ax.set_xlim(0, hi)
        ax.set_ylim(0, hi)
        ax.set_aspect("equal")
        ax.set_xlabel("ground-truth AP diameter (mm)")
        ax.set_ylabel("predicted AP diameter (mm)")
        ax.set_title(f"MAE {report.mae:.1f}±{report.sd:.1f} mm")
        ax.legend(loc="upper left")

        bx.hist(100 * np.asarray(report.dsc), bins=np.linspace(0, 100, 21), color="0.3")
        bx.set_xlabel("DSC (%)")
        bx.set_ylabel("images")
        bx.set_title(f"DSC {100 * report.dsc_mean:.1f}±{100 * report.dsc_sd:.1f}%")
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)


def plot_panels(images: dict, path, cmap: str = "gray") -> None:
    """Side-by-side grayscale panels, e.g. the three IR modes of one slice."""
    n = len(images)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.4))
        for ax, (title, img) in zip(np.atleast_1d(axes), images.items()):
            ax.imshow(img, cmap=cmap, vmin=0, vmax=1, interpolation="nearest")
            ax.set_title(title)
            ax.set_axis_off()
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)
