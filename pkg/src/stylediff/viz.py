"""Attention and mel visualizations with shared-phoneme annotations."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib import patches

from .mel import MelSpectrogram, write_mel


def _spans(phonemes, durations):
    """phoneme -> list of (start, end) frame spans."""
    spans = {}
    pos = 0
    for p, d in zip(phonemes, durations):
        spans.setdefault(int(p), []).append((pos, pos + int(d)))
        pos += int(d)
    return spans


def export_attention_plot(out_dir, tag, synth_mel: MelSpectrogram,
                          ref_mel: MelSpectrogram, attention: np.ndarray,
                          target_phonemes, target_durations,
                          ref_phonemes, ref_durations) -> dict:
    """Write raw binaries, per-matrix images (one pixel per cell), and an
    annotated overview figure marking shared-phoneme regions.

    Returns a dict of written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    for name, mat in (
        ("synthesized", synth_mel.data),
        ("reference", ref_mel.data),
        ("attention", attention),
    ):
        bin_path = out_dir / f"{tag}_{name}.mel"
        write_mel(MelSpectrogram(np.asarray(mat, dtype=np.float32)), bin_path)
        paths[f"{name}_bin"] = bin_path
        img_path = out_dir / f"{tag}_{name}.png"
        plt.imsave(img_path, np.asarray(mat), origin="lower", cmap="magma")
        paths[f"{name}_img"] = img_path

    t_spans = _spans(target_phonemes, target_durations)
    r_spans = _spans(ref_phonemes, ref_durations)
    shared = sorted(set(t_spans) & set(r_spans))

    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    axes[0].imshow(ref_mel.data, origin="lower", aspect="auto", cmap="magma")
    axes[0].set_title("reference mel")
    axes[1].imshow(synth_mel.data, origin="lower", aspect="auto", cmap="magma")
    axes[1].set_title("synthesized mel")
    axes[2].imshow(attention, origin="lower", aspect="auto", cmap="viridis")
    axes[2].set_title("text attention (target x reference)")
    axes[2].set_xlabel("reference frame")
    axes[2].set_ylabel("target frame")
    def frame_box(ax, start, end, height):
        ax.add_patch(
            patches.Rectangle(
                (start - 0.5, -0.5), end - start, height,
                fill=False, edgecolor="cyan", linewidth=1.0,
            )
        )

    for p in shared:
        for r0, r1 in r_spans[p]:
            frame_box(axes[0], r0, r1, ref_mel.n_mels)
        for t0, t1 in t_spans[p]:
            frame_box(axes[1], t0, t1, synth_mel.n_mels)
        for r0, r1 in r_spans[p]:
            for t0, t1 in t_spans[p]:
                axes[2].add_patch(
                    patches.Rectangle(
                        (r0 - 0.5, t0 - 0.5), r1 - r0, t1 - t0,
                        fill=False, edgecolor="cyan", linewidth=1.0,
                    )
                )
    fig.tight_layout()
    overview = out_dir / f"{tag}_overview.png"
    fig.savefig(overview, dpi=120)
    plt.close(fig)
    paths["overview"] = overview
    return paths
