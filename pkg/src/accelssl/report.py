"""Aggregate run records into CSV tables and static plots."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import ConfigError
from .store import read_records

VIEWS = ("transfer_table", "sweep_curves", "imbalance_bars",
         "similarity_heatmap", "variance_curves", "separability_bars")


def _frame(store_path) -> pd.DataFrame:
    rows = []
    for r in read_records(store_path):
        row = {"method": r.method, "dataset": r.dataset_id, "criterion": r.criterion,
               "fold": r.fold, "seed": r.seed, "status": r.status}
        row.update({f"m_{k}": v for k, v in r.metrics.items()
                    if isinstance(v, (int, float))})
        row.update({f"p_{k}": v for k, v in r.params.items()})
        rows.append(row)
    return pd.DataFrame(rows)


def _empty_outputs(out_dir: Path, stem: str, columns):
    csv_path = out_dir / f"{stem}.csv"
    pd.DataFrame(columns=columns).to_csv(csv_path, index=False)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.text(0.5, 0.5, "no records", ha="center", va="center")
    ax.set_axis_off()
    fig.savefig(out_dir / f"{stem}.png", dpi=100)
    plt.close(fig)
    return [csv_path, out_dir / f"{stem}.png"]


def _save_table_and_bars(df, out_dir, stem, value="mean", err="std"):
    csv_path = out_dir / f"{stem}.csv"
    df.to_csv(csv_path, index=False)
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * df["method"].nunique()), 3.5))
    for i, (method, grp) in enumerate(df.groupby("method")):
        ax.bar(np.arange(len(grp)) + 0.8 * i / max(1, df["method"].nunique()),
               grp[value], width=0.8 / max(1, df["method"].nunique()),
               yerr=grp[err].fillna(0.0), label=method, capsize=2)
    ax.set_ylabel("macro F1")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(out_dir / f"{stem}.png", dpi=120)
    plt.close(fig)
    return [csv_path, out_dir / f"{stem}.png"]


def report(store_path, view: str, out_dir) -> list[Path]:
    """Render one named view; returns the files written."""
    if view not in VIEWS:
        raise ConfigError(f"unknown view {view!r} (choose from {VIEWS})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    df = _frame(store_path)

    if view == "transfer_table":
        if df.empty or "m_macro_f1" not in df:
            return _empty_outputs(out_dir, view, ["dataset", "method", "mean", "std", "n"])
        sel = df[df["criterion"].isin(["position_transfer", "activity_transfer",
                                       "sweep"])]
        if "p_stage" in sel.columns:
            best = sel[sel["p_stage"] == "best"]
            sel = best if not best.empty else sel
        if sel.empty:
            return _empty_outputs(out_dir, view, ["dataset", "method", "mean", "std", "n"])
        agg = (sel.groupby(["dataset", "method"])["m_macro_f1"]
               .agg(mean="mean", std="std", n="count").reset_index())
        return _save_table_and_bars(agg, out_dir, view)

    if view == "sweep_curves":
        sel = df[df["criterion"].isin(["user_quantity", "window_quantity"])] \
            if not df.empty else df
        if sel is None or sel.empty or "p_pct" not in sel:
            return _empty_outputs(out_dir, view, ["criterion", "method", "pct",
                                                  "mean", "std", "n"])
        agg = (sel.groupby(["criterion", "method", "p_pct"])["m_macro_f1"]
               .agg(mean="mean", std="std", n="count").reset_index()
               .rename(columns={"p_pct": "pct"}))
        csv_path = out_dir / f"{view}.csv"
        agg.to_csv(csv_path, index=False)
        files = [csv_path]
        for criterion, grp in agg.groupby("criterion"):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for method, curve in grp.groupby("method"):
                curve = curve.sort_values("pct")
                ax.errorbar(curve["pct"], curve["mean"], yerr=curve["std"].fillna(0),
                            marker="o", label=method, capsize=2)
            ax.set_xscale("log")
            ax.set_xlabel("% of source kept")
            ax.set_ylabel("macro F1")
            ax.legend(fontsize=6)
            fig.tight_layout()
            path = out_dir / f"{view}_{criterion}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            files.append(path)
        return files

    if view == "imbalance_bars":
        sel = df[df["criterion"] == "source_imbalance"] if not df.empty else df
        if sel is None or sel.empty or "p_rho" not in sel:
            return _empty_outputs(out_dir, view, ["method", "rho", "subset",
                                                  "mean", "std", "n"])
        agg = (sel.groupby(["method", "p_rho", "p_subset"])["m_macro_f1"]
               .agg(mean="mean", std="std", n="count").reset_index()
               .rename(columns={"p_rho": "rho", "p_subset": "subset"}))
        csv_path = out_dir / f"{view}.csv"
        agg.to_csv(csv_path, index=False)
        fig, ax = plt.subplots(figsize=(6, 3.5))
        labels = [f"{m}\nrho={r}" for m, r, _ in
                  agg.groupby(["method", "rho"]).groups]
        pivot = agg.pivot_table(index=["method", "rho"], columns="subset",
                                values="mean")
        pivot.plot.bar(ax=ax)
        ax.set_ylabel("macro F1")
        fig.tight_layout()
        fig.savefig(out_dir / f"{view}.png", dpi=120)
        plt.close(fig)
        return [csv_path, out_dir / f"{view}.png"]

    if view == "separability_bars":
        sel = df[df["criterion"] == "feature_space"] if not df.empty else df
        if sel is None or sel.empty or "m_separability_gap" not in sel:
            return _empty_outputs(out_dir, view, ["method", "mean", "std", "n"])
        agg = (sel.groupby("method")["m_separability_gap"]
               .agg(mean="mean", std="std", n="count").reset_index())
        csv_path = out_dir / f"{view}.csv"
        agg.to_csv(csv_path, index=False)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.bar(agg["method"], agg["mean"], yerr=agg["std"].fillna(0), capsize=3)
        ax.set_ylabel("train F1(true) - train F1(random)")
        plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
        fig.tight_layout()
        fig.savefig(out_dir / f"{view}.png", dpi=120)
        plt.close(fig)
        return [csv_path, out_dir / f"{view}.png"]

    # similarity_heatmap / variance_curves read the JSON sidecars that the
    # feature-space executor drops next to the store
    sidecar_dir = Path(store_path).parent
    if view == "similarity_heatmap":
        files = []
        matrices = sorted(sidecar_dir.glob("cka_*.json"))
        if not matrices:
            return _empty_outputs(out_dir, view, ["file"])
        for path in matrices:
            with open(path, encoding="utf-8") as f:
                payload = json.load(f)
            values = np.asarray(payload["values"])
            fig, ax = plt.subplots(figsize=(4, 3.5))
            im = ax.imshow(values, vmin=0, vmax=1, cmap="viridis")
            ax.set_xticks(range(len(payload["layer_names_b"])),
                          payload["layer_names_b"], rotation=45, fontsize=6)
            ax.set_yticks(range(len(payload["layer_names_a"])),
                          payload["layer_names_a"], fontsize=6)
            fig.colorbar(im, ax=ax)
            fig.tight_layout()
            out = out_dir / (path.stem + ".png")
            fig.savefig(out, dpi=120)
            plt.close(fig)
            files.append(out)
        return files

    if view == "variance_curves":
        curves = sorted(sidecar_dir.glob("evr_*.json"))
        if not curves:
            return _empty_outputs(out_dir, view, ["file"])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        rows = []
        for path in curves:
            with open(path, encoding="utf-8") as f:
                evr = json.load(f)["cumulative_explained_variance"]
            label = path.stem.replace("evr_", "")
            ax.plot(np.arange(1, len(evr) + 1), evr, marker=".", label=label)
            rows.append({"run": label,
                         **{f"pc{i + 1}": v for i, v in enumerate(evr)}})
        ax.set_xlabel("principal components")
        ax.set_ylabel("cumulative explained variance")
        ax.set_ylim(0, 1.02)
        ax.legend(fontsize=6)
        fig.tight_layout()
        png = out_dir / f"{view}.png"
        fig.savefig(png, dpi=120)
        plt.close(fig)
        csv_path = out_dir / f"{view}.csv"
        pd.DataFrame(rows).to_csv(csv_path, index=False)
        return [csv_path, png]

    raise ConfigError(f"unhandled view {view!r}")
