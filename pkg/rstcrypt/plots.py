"""
PNG plots for the evaluation reports (matplotlib, headless).
"""

import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib import pyplot as plt  # noqa: E402

from rstcrypt.schemas import BoxplotStats, EvaluationSummary, HistogramReport  # noqa: E402

logger = logging.getLogger(__name__)

_COLORS = {"R": "tab:red", "G": "tab:green", "B": "tab:blue"}


def plot_histograms(report: HistogramReport, path: Path, title: str = "") -> Path:
    """One line per channel over the 256 bins."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for ch in report.channels:
        ax.plot(range(256), ch.counts, color=_COLORS[ch.channel], linewidth=0.8, label=ch.channel)
    ax.set_xlim(0, 255)
    ax.set_xlabel("pixel value")
    ax.set_ylabel("frequency")
    ax.set_title(f"{title}  (inter-channel {report.mean_inter_channel_similarity:.3f})".strip())
    ax.legend(loc="upper right")
    return _save(fig, path)


def _bxp_entry(stats: BoxplotStats, label: str) -> dict:
    # matplotlib cannot draw infinite fliers
    fliers = [v for v in stats.outliers if math.isfinite(v)]
    return {
        "label": label,
        "med": stats.p50,
        "q1": stats.p25,
        "q3": stats.p75,
        "whislo": stats.whisker_low,
        "whishi": stats.whisker_high,
        "mean": stats.mean,
        "fliers": fliers,
    }


def plot_quality_boxplots(summary: EvaluationSummary, path: Path) -> Path:
    """PSNR and SSIM of encrypted images, one box per restart interval."""
    fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=(8, 3.5))
    usable = [i for i in summary.intervals if i.psnr.n > 0]
    if not usable:
        logger.warning("no evaluated images, boxplots left empty")
        return _save(fig, path)
    ax_p.bxp([_bxp_entry(i.psnr, f"RI={i.ri}") for i in usable], showmeans=True)
    ax_p.set_ylabel("PSNR [dB]")
    ax_s.bxp([_bxp_entry(i.ssim, f"RI={i.ri}") for i in usable], showmeans=True)
    ax_s.set_ylabel("SSIM")
    return _save(fig, path)


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # Fixed metadata keeps repeated runs byte-identical.
    fig.savefig(path, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    logger.debug("wrote plot %s", path)
    return path
