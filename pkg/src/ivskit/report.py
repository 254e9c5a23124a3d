"""Comparison table between IVS and the HTC-change metric, and SVG line plots."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

_SVG_RC = {"svg.hashsalt": "ivskit", "svg.fonttype": "none", "font.size": 9}


class DisjointGridError(ValueError):
    """Raised when the visual and thermal series share no heat-flux range."""


@dataclass(frozen=True)
class ComparisonRow:
    q_mid: float
    ivs: float
    phi: float | None
    u_phi: float | None


def align(ivs_rows, thermal_rows) -> list[ComparisonRow]:
    """Attach to each IVS midpoint the phi of the thermal interval nearest to it.

    ``ivs_rows`` need ``q_mid`` and ``ivs``; ``thermal_rows`` need
    ``q_nominal`` (or ``q``), ``phi`` and ``u_phi``, ordered by heat flux.
    A thermal row's phi describes the HTC change from the previous level,
    so it is placed at the midpoint of that interval. Ties go to the lower
    interval.
    """
    if not thermal_rows:
        return [ComparisonRow(r["q_mid"], r["ivs"], None, None) for r in ivs_rows]

    def q_of(row):
        return row["q_nominal"] if row.get("q_nominal") is not None else row["q"]

    qs = [q_of(t) for t in thermal_rows]
    lo, hi = min(qs), max(qs)
    if not any(lo <= r["q_mid"] <= hi for r in ivs_rows):
        raise DisjointGridError(
            f"IVS midpoints {[r['q_mid'] for r in ivs_rows]} lie outside thermal range [{lo}, {hi}]"
        )
    mids = [((qs[i - 1] + qs[i]) / 2.0, thermal_rows[i]) for i in range(1, len(qs))
            if thermal_rows[i].get("phi") is not None]
    out = []
    for r in ivs_rows:
        if not mids:
            out.append(ComparisonRow(r["q_mid"], r["ivs"], None, None))
            continue
        _, t = min(mids, key=lambda m: abs(m[0] - r["q_mid"]))
        out.append(ComparisonRow(r["q_mid"], r["ivs"], t["phi"], t.get("u_phi")))
    return out


def comparison_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["q_mid", "ivs", "phi", "u_phi"])
    for r in rows:
        wr.writerow([repr(r.q_mid), repr(r.ivs),
                     "" if r.phi is None else repr(float(r.phi)),
                     "" if r.u_phi is None else repr(float(r.u_phi))])
    return buf.getvalue()


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches=None)
    plt.close(fig)


def plot_ivs(records, path) -> None:
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot([r.q_mid for r in records], [r.ivs for r in records], "o-", color="black")
        ax.set_xlabel("heat flux Q (W/cm$^2$)")
        ax.set_ylabel("IVS (%)")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        _save_svg(fig, path)


def plot_components(records, path) -> None:
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        q = [r.q_mid for r in records]
        ax.plot(q, [r.morph_norm for r in records], "s-", label="morphological")
        ax.plot(q, [r.phys for r in records], "^-", label="physical")
        ax.set_xlabel("heat flux Q (W/cm$^2$)")
        ax.set_ylabel("similarity (%)")
        ax.legend(loc="lower left")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        _save_svg(fig, path)


def plot_phi(thermal_records, path) -> None:
    pts = [(r.q_nominal if r.q_nominal is not None else r.q, r.phi, r.u_phi)
           for r in thermal_records if r.phi is not None]
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        if pts:
            q, phi, u = zip(*pts)
            ax.errorbar(q, phi, yerr=u, fmt="o-", color="tab:red", capsize=3)
        ax.set_xlabel("heat flux Q (W/cm$^2$)")
        ax.set_ylabel(r"$\phi$ (W/cm$^2$K)")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        _save_svg(fig, path)


def plot_overlay(rows, path) -> None:
    """IVS and phi against Q on twin y axes."""
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        q = [r.q_mid for r in rows]
        ax.plot(q, [r.ivs for r in rows], "o-", color="black", label="IVS")
        ax.set_xlabel("heat flux Q (W/cm$^2$)")
        ax.set_ylabel("IVS (%)")
        with_phi = [r for r in rows if r.phi is not None]
        if with_phi:
            ax2 = ax.twinx()
            ax2.errorbar([r.q_mid for r in with_phi], [r.phi for r in with_phi],
                         yerr=[r.u_phi or 0.0 for r in with_phi],
                         fmt="s--", color="tab:red", capsize=3, label=r"$\phi$")
            ax2.set_ylabel(r"$\phi$ (W/cm$^2$K)", color="tab:red")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        _save_svg(fig, path)
