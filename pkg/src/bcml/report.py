"""Report bundles: manifest, acceptance table, CSV artifacts and raster plots."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import io


def manifest(config_text: str, inputs: dict[str, bytes], extra: dict | None = None) -> dict:
    """Config echo plus a content hash over the config and the named input artifacts (sorted by name)."""
    parts = [config_text.encode()] + [inputs[k] for k in sorted(inputs)]
    out = {"config": config_text, "content_hash": io.content_hash(*parts),
           "inputs": {k: io.content_hash(inputs[k]) for k in sorted(inputs)}}
    if extra:
        out.update(extra)
    return out


def write_bundle(out: Path, man: dict, diagnostics: dict, rows: list) -> dict:
    bundle = {"manifest": man, "diagnostics": diagnostics, "acceptance": [r.as_dict() for r in rows]}
    io.write_json(out / "report.json", bundle)
    io.write_csv(out / "acceptance.csv", ["criterion", "name", "measured", "threshold", "verdict"],
                 [[r.criterion, r.name, r.measured, r.threshold, "PASS" if r.passed else "FAIL"] for r in rows])
    return bundle


# ---------------------------------------------------------------- CSV artifacts

def eikonal_csv(path, coords: np.ndarray, taus: dict[str, np.ndarray]) -> None:
    names = list(taus)
    dim = coords.shape[1]
    header = ["vertex_id"] + ["x", "y", "z"][:dim] + [f"tau_{n}" for n in names]
    io.write_csv(path, header, [[v, *coords[v], *(taus[n][v] for n in names)] for v in range(len(coords))])


def cloud_csv(path, points: np.ndarray, flags: np.ndarray, weights: np.ndarray, patch_ids) -> None:
    header = ["point_id", "boundary_flag", "weight"] + [f"tau_{p}" for p in patch_ids]
    io.write_csv(path, header, [[i, bool(flags[i]), weights[i], *points[i]] for i in range(len(points))])


def copy_csv(path, points: np.ndarray, accepted: np.ndarray, inverse: np.ndarray, residual: np.ndarray,
             patch_ids) -> None:
    n = inverse.shape[1] if inverse.ndim == 3 else 0
    gnames = [f"ginv_{i}{j}" for i in range(n) for j in range(i, n)]
    header = ["point_id", "accepted", "residual"] + [f"tau_{p}" for p in patch_ids] + gnames
    rows = []
    for i in range(len(points)):
        g = [inverse[i, a, b] for a in range(n) for b in range(a, n)]
        rows.append([i, bool(accepted[i]), residual[i], *points[i], *g])
    io.write_csv(path, header, rows)


def singular_values_csv(path, reports: dict[str, np.ndarray]) -> None:
    names = list(reports)
    m = max((len(v) for v in reports.values()), default=0)
    rows = [[k + 1] + [reports[n][k] if k < len(reports[n]) else "" for n in names] for k in range(m)]
    io.write_csv(path, ["index"] + names, rows)


def histogram_csv(path, values: np.ndarray, bins: int = 20) -> None:
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    if len(v) == 0:
        io.write_csv(path, ["bin_lo", "bin_hi", "count"], [])
        return
    counts, edges = np.histogram(v, bins=bins)
    io.write_csv(path, ["bin_lo", "bin_hi", "count"], [[edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts)])


# ---------------------------------------------------------------- plots

def emit_plots(out) -> list[str]:
    """Raster plots for every CSV artifact present in ``out``; returns notes on skipped items."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out)
    notes = []

    def save(fig, name):
        fig.savefig(out / name, dpi=80, metadata={"Software": None})
        plt.close(fig)

    path = out / "eikonals.csv"
    if path.exists():
        header, rows = io.read_csv(path)
        data = np.array(rows, float) if rows else np.zeros((0, len(header)))
        taus = [i for i, h in enumerate(header) if h.startswith("tau_")]
        fig, ax = plt.subplots()
        if "y" not in header:
            for i in taus:
                ax.plot(data[:, 1], data[:, i], label=header[i])
            ax.set_xlabel("x")
            ax.legend()
        else:
            sc = ax.scatter(data[:, 1], data[:, 2], c=data[:, taus[0]], s=8)
            fig.colorbar(sc, label=header[taus[0]])
        ax.set_title("eikonal profiles")
        save(fig, "eikonals.png")
    else:
        notes.append("eikonals.csv missing: profile plot skipped")

    path = out / "cloud.csv"
    if path.exists():
        header, rows = io.read_csv(path)
        data = np.array(rows, float) if rows else np.zeros((0, len(header)))
        taus = [i for i, h in enumerate(header) if h.startswith("tau_")]
        fig, ax = plt.subplots()
        if len(taus) >= 2:
            ax.scatter(data[:, taus[0]], data[:, taus[1]], s=6, c=data[:, 1] if len(data) else None)
            ax.set_xlabel(header[taus[0]])
            ax.set_ylabel(header[taus[1]])
        ax.set_title("spectrum cloud")
        save(fig, "cloud.png")
    else:
        notes.append("cloud.csv missing: scatter skipped")

    path = out / "distance_errors.csv"
    if path.exists():
        header, rows = io.read_csv(path)
        data = np.array(rows, float) if rows else np.zeros((0, 3))
        fig, ax = plt.subplots()
        if len(data):
            ax.bar(data[:, 0], data[:, 2], width=data[:, 1] - data[:, 0], align="edge")
        ax.set_xlabel("|d_copy - d_true|")
        ax.set_title("distance errors")
        save(fig, "distance_errors.png")

    path = out / "singular_values.csv"
    if path.exists():
        header, rows = io.read_csv(path)
        names = header[1:]
        for j, name in enumerate(names, start=1):
            vals = np.array([float(r[j]) for r in rows if r[j] != ""])
            fig, ax = plt.subplots()
            pos = vals[vals > 0]
            if len(pos):
                ax.semilogy(np.arange(1, len(pos) + 1) / len(vals), pos / pos[0])
            ax.set_xlabel("k / dim")
            ax.set_ylabel("sigma_k / sigma_1")
            ax.set_title(name)
            save(fig, f"decay_{_slug(name)}.png")
    else:
        notes.append("singular_values.csv missing: decay curves skipped")
    return notes


def _slug(s: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in s).strip("_")
