"""Thermocouple data reduction, HTC change metric and RSS uncertainty propagation.

Three thermocouples sit along the copper block at spacing ``dx``; ``t3`` is
the one nearest the boiling surface, a distance ``l`` below it. Heat flux is
computed in W/m^2 and reported in W/cm^2; HTC is reported in W/(cm^2 K).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

logger = logging.getLogger(__name__)

W_PER_M2_TO_W_PER_CM2 = 1e-4
K_COPPER = 390.0

ZERO_SUPERHEAT = "zero_superheat"
ZERO_GRADIENT = "zero_gradient"


class GeometryError(ValueError):
    """Raised when block geometry needed for data reduction is missing."""


@dataclass(frozen=True)
class ThermoSample:
    t1: float
    t2: float
    t3: float
    t_sat: float
    dx: float
    l: float
    k_cu: float = K_COPPER
    u_t: float = 0.5
    u_dx: float = 0.25e-3
    q_nominal: float | None = None

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError("thermocouple spacing dx must be > 0")
        if not self.l >= 0:
            raise ValueError("surface distance l must be >= 0")
        if not self.k_cu > 0:
            raise ValueError("k_cu must be > 0")
        if not (self.u_t >= 0 and self.u_dx >= 0):
            raise ValueError("uncertainties must be >= 0")


@dataclass(frozen=True)
class Reduced:
    dT_star: float
    q: float  # W/cm^2
    t_w: float
    dT_wall: float
    h: float | None
    flags: tuple = ()


@dataclass(frozen=True)
class Uncertainty:
    u_dT_star: float
    u_q: float  # W/cm^2
    u_dT_wall: float
    u_h: float | None
    flags: tuple = ()


@dataclass(frozen=True)
class ThermalRecord:
    q: float
    u_q: float
    t_w: float
    dT_wall: float
    u_dT: float
    h: float | None
    u_h: float | None
    dh: float | None = None
    u_dh: float | None = None
    phi: float | None = None
    u_phi: float | None = None
    q_nominal: float | None = None
    flags: tuple = field(default_factory=tuple)


def reduce(sample: ThermoSample) -> Reduced:
    """Second-order gradient, Fourier heat flux, wall temperature and HTC."""
    dT_star = 3.0 * sample.t3 - 4.0 * sample.t2 + sample.t1
    q_si = -sample.k_cu * dT_star / (2.0 * sample.dx)
    t_w = sample.t3 - q_si * sample.l / sample.k_cu
    dT_wall = t_w - sample.t_sat
    q = q_si * W_PER_M2_TO_W_PER_CM2
    if dT_wall == 0:
        logger.warning("zero wall superheat; HTC undefined")
        return Reduced(dT_star, q, t_w, dT_wall, None, (ZERO_SUPERHEAT,))
    return Reduced(dT_star, q, t_w, dT_wall, q / dT_wall)


def propagate_uncertainty(sample: ThermoSample, reduced: Reduced | None = None) -> Uncertainty:
    """Root-sum-of-squares propagation of thermocouple and machining tolerances.

    The wall-superheat uncertainty is the first-order propagation of all
    three thermocouples and ``dx`` through ``T_w`` (T_sat is held exact),
    so the correlation between ``T_3`` and the gradient is accounted for.
    """
    r = reduced or reduce(sample)
    u_t, dx, l = sample.u_t, sample.dx, sample.l
    u_dT_star = math.sqrt((3 * u_t) ** 2 + (4 * u_t) ** 2 + u_t**2)

    # T_w = t3 + l * dT_star / (2 dx)
    g = l / (2.0 * dx)
    u_tw = math.sqrt(
        ((1.0 + 3.0 * g) * u_t) ** 2
        + (4.0 * g * u_t) ** 2
        + (g * u_t) ** 2
        + (l * r.dT_star / (2.0 * dx * dx) * sample.u_dx) ** 2
    )
    flags = list(r.flags)
    if r.dT_star == 0:
        flags.append(ZERO_GRADIENT)
        u_q = sample.k_cu * u_dT_star / (2.0 * dx) * W_PER_M2_TO_W_PER_CM2
        u_h = None if r.h is None else u_q / abs(r.dT_wall)
        return Uncertainty(u_dT_star, u_q, u_tw, u_h, tuple(flags))

    rel_q = math.hypot(u_dT_star / r.dT_star, sample.u_dx / dx)
    u_q = abs(r.q) * rel_q
    u_h = None
    if r.h is not None:
        u_h = abs(r.h) * math.hypot(rel_q, u_tw / r.dT_wall)
    return Uncertainty(u_dT_star, u_q, u_tw, u_h, tuple(flags))


def thermal_record(sample: ThermoSample) -> ThermalRecord:
    r = reduce(sample)
    u = propagate_uncertainty(sample, r)
    return ThermalRecord(
        q=r.q, u_q=u.u_q, t_w=r.t_w, dT_wall=r.dT_wall, u_dT=u.u_dT_wall,
        h=r.h, u_h=u.u_h, q_nominal=sample.q_nominal, flags=u.flags,
    )


def phi_series(records: list[ThermalRecord]) -> list[ThermalRecord]:
    """Fill HTC change, its complement against the largest change, and their uncertainties.

    The first record has no predecessor and keeps ``dh``/``phi`` as None.
    Ties for the largest change resolve to the lowest index.
    """
    if len(records) < 2:
        raise ValueError("phi needs at least two records")
    hs = [r.h for r in records]
    uh = [r.u_h if r.u_h is not None else 0.0 for r in records]
    dh, u_dh = [], []
    for i in range(1, len(hs)):
        if hs[i] is None or hs[i - 1] is None:
            dh.append(None)
            u_dh.append(None)
        else:
            dh.append(hs[i] - hs[i - 1])
            u_dh.append(math.hypot(uh[i], uh[i - 1]))
    defined = [j for j in range(len(dh)) if dh[j] is not None]
    if not defined:
        raise ValueError("no consecutive pair of records has a defined HTC")
    k = max(defined, key=lambda j: (dh[j], -j))
    out = [records[0]]
    for j in range(len(dh)):
        if dh[j] is None:
            out.append(records[j + 1])
            continue
        out.append(replace(
            records[j + 1],
            dh=dh[j],
            u_dh=u_dh[j],
            phi=dh[k] - dh[j],
            u_phi=math.hypot(u_dh[k], u_dh[j]),
        ))
    return out


def reduce_series(samples: list[ThermoSample]) -> list[ThermalRecord]:
    return phi_series([thermal_record(s) for s in samples])


# -- CSV surface -----------------------------------------------------------

INPUT_COLUMNS = ("q_nominal", "t1", "t2", "t3", "t_sat")
OUTPUT_COLUMNS = ("q_nominal", "q", "u_q", "t_w", "dT_wall", "u_dT", "h", "u_h",
                  "dh", "u_dh", "phi", "u_phi", "flags")
GEOMETRY_KEYS = ("dx", "l")


def geometry_from_config(cfg: dict | None) -> dict:
    """Validate and complete the geometry/uncertainty block of a run config."""
    cfg = dict(cfg or {})
    missing = [k for k in GEOMETRY_KEYS if cfg.get(k) is None]
    if missing:
        raise GeometryError(f"missing thermal geometry: {', '.join(missing)}")
    return {
        "dx": float(cfg["dx"]),
        "l": float(cfg["l"]),
        "k_cu": float(cfg.get("k_cu", K_COPPER)),
        "u_t": float(cfg.get("u_t", 0.5)),
        "u_dx": float(cfg.get("u_dx", 0.25e-3)),
    }


def read_thermal_csv(path, geometry: dict) -> list[ThermoSample]:
    geo = geometry_from_config(geometry)
    samples = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = [c for c in INPUT_COLUMNS if c not in (rd.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in rd:
            samples.append(ThermoSample(
                t1=float(row["t1"]), t2=float(row["t2"]), t3=float(row["t3"]),
                t_sat=float(row["t_sat"]), q_nominal=float(row["q_nominal"]), **geo,
            ))
    qs = [s.q_nominal for s in samples]
    if any(b <= a for a, b in zip(qs, qs[1:])):
        raise ValueError(f"{path}: q_nominal must be strictly increasing")
    return samples


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_thermal_csv(records: list[ThermalRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(OUTPUT_COLUMNS)
        for r in records:
            wr.writerow([
                _fmt(r.q_nominal), _fmt(r.q), _fmt(r.u_q), _fmt(r.t_w), _fmt(r.dT_wall),
                _fmt(r.u_dT), _fmt(r.h), _fmt(r.u_h), _fmt(r.dh), _fmt(r.u_dh),
                _fmt(r.phi), _fmt(r.u_phi), ";".join(r.flags),
            ])


def read_thermal_report(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: (float(v) if v not in ("", None) and k != "flags" else (v or None))
                         for k, v in row.items()})
    return rows
