"""Static report rendering: CSV tables to markdown/PNG and loss curves to PNG."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trainer import TrainLog  # noqa: E402


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    return (rows[0], rows[1:]) if rows else ([], [])


def _short(cell: str) -> str:
    try:
        v = float(cell)
    except ValueError:
        return cell
    if cell.strip().lstrip("-").isdigit():
        return cell
    return f"{v:.3f}"


def table_markdown(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_short(c) for c in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def table_png(header: list[str], rows: list[list[str]], path: Path, title: str = "") -> Path:
    height = 0.6 + 0.28 * (len(rows) + 1)
    width = max(4.0, 0.95 * len(header))
    fig, ax = plt.subplots(figsize=(width, height))
    ax.axis("off")
    tbl = ax.table(cellText=[[_short(c) for c in r] for r in rows] or [[""] * len(header)],
                   colLabels=header, loc="center")
    tbl.auto_set_font_size(False)
    tbl.set_fontsize(7)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def loss_curves_png(logs: dict[str, TrainLog], path: Path) -> Path:
    """One line per log, epoch on x, mean loss on a log-scaled y axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    offset = 0
    for name, tlog in logs.items():
        epochs = [offset + e.epoch + 1 for e in tlog.records]
        ax.plot(epochs, tlog.losses, marker=".", label=name)
        offset = epochs[-1] if epochs else offset
    ax.set_xlabel("epoch (cumulative)")
    ax.set_ylabel("mean loss")
    if all(v > 0 for t in logs.values() for v in t.losses):
        ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_reports(run_dir, out_dir) -> list[Path]:
    """Render every known CSV found under ``run_dir`` into ``out_dir``.

    Tables (``crossval.csv``, ``metrics*.csv``) become a markdown file and a
    PNG each. Training logs (``*trainlog_r*.csv``) are grouped by their
    prefix and drawn as one loss-curve figure per group.
    """
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for name in ("crossval.csv", "metrics.csv", "metrics_mean.csv", "crossval_cases.csv"):
        for src in sorted(run_dir.rglob(name)):
            header, rows = _read_rows(src)
            if not header:
                continue
            stem = src.relative_to(run_dir).with_suffix("").as_posix().replace("/", "_")
            md = out_dir / f"{stem}.md"
            md.write_text(table_markdown(header, rows), encoding="utf-8")
            written.append(md)
            if len(rows) <= 60:
                written.append(table_png(header, rows, out_dir / f"{stem}.png", title=stem))
    groups: dict[str, dict[str, TrainLog]] = {}
    for src in sorted(run_dir.rglob("*trainlog_r*.csv")):
        prefix, _, rnd = src.stem.rpartition("trainlog_")
        key = (src.parent.relative_to(run_dir).as_posix().replace("/", "_") + "_" + prefix).strip("_.") or "train"
        groups.setdefault(key, {})[rnd] = TrainLog.from_csv(src)
    for key, logs in sorted(groups.items()):
        ordered = dict(sorted(logs.items(), key=lambda kv: int(kv[0].lstrip("r"))))
        written.append(loss_curves_png(ordered, out_dir / f"loss_{key}.png"))
    return written
