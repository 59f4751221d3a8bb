"""Figures for loss traces and sweep tables."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from geodet.core.exceptions import ValidationError  # noqa: E402

logger = logging.getLogger(__name__)

FIGURE_SIZE = (7.0, 4.5)


def _figure():
    fig, ax = plt.subplots(figsize=FIGURE_SIZE)
    ax.grid(True, alpha=0.3)
    return fig, ax


def plot_loss_trace(trace: Dict[str, Any], out_path: Union[str, Path]) -> Path:
    """Total, classification and regression loss per epoch."""
    epochs = [row["epoch"] for row in trace["epochs"]]
    fig, ax = _figure()
    for key, style in (("total", "-"), ("cls", "--"), ("reg", ":")):
        ax.plot(epochs, [row[key] for row in trace["epochs"]], style, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(f"training loss ({trace.get('optimizer', '')}, seed {trace.get('seed', '')})")
    ax.legend()
    return _save(fig, out_path)


def plot_sweep(report: Dict[str, Any], out_path: Union[str, Path]) -> Path:
    """mAP25 / mAP50 against the swept value; failed rows are skipped."""
    rows = [row for row in report["rows"] if row.get("error") is None]
    labels = [row["value"] for row in rows]
    positions = list(range(len(rows)))
    fig, ax = _figure()
    ax.plot(positions, [row["best_map25"] for row in rows], "o-", label="mAP25")
    ax.plot(positions, [row["best_map50"] for row in rows], "s-", label="mAP50")
    ax.set_xticks(positions)
    ax.set_xticklabels(labels)
    ax.set_xlabel(report["param"])
    ax.set_ylabel("mAP")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    return _save(fig, out_path)


def _save(fig, out_path: Union[str, Path]) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    logger.info(f"Wrote figure {out_path}")
    return out_path


def render_plot(input_path: Union[str, Path], out_path: Union[str, Path]) -> Path:
    """
    Pick the figure from the document shape: a loss trace or a sweep report.

    Raises:
        ValidationError: neither shape
    """
    try:
        document = json.loads(Path(input_path).read_bytes())
    except ValueError as e:
        raise ValidationError(f"{input_path} is not JSON: {e}")
    if isinstance(document, dict) and isinstance(document.get("epochs"), list):
        return plot_loss_trace(document, out_path)
    if isinstance(document, dict) and isinstance(document.get("rows"), list) and "param" in document:
        return plot_sweep(document, out_path)
    raise ValidationError(f"{input_path} is neither a loss trace nor a sweep report",
                          details={"path": str(input_path)})
