"""MATPOWER case files (version 2 subset) to per-unit network arrays."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
VMAX, VMIN = 11, 12
GEN_BUS, PG, QG, QMAX, QMIN, GEN_STATUS, PMAX, PMIN = 0, 1, 2, 3, 4, 7, 8, 9
RAMP_30 = 18
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, TAP, SHIFT, BR_STATUS, ANGMIN, ANGMAX = 0, 1, 2, 3, 4, 5, 8, 9, 10, 11, 12
REF, ISOLATED = 3, 4

DEFAULT_ANGLE = np.deg2rad(60.0)


class MatpowerError(ValueError):
    pass


class UnsupportedFeatureError(MatpowerError):
    pass


@dataclass
class NetworkData:
    """Per-unit network arrays with 0-based internal bus numbering.

    Lines store series conductance ``G`` and susceptance ``B`` plus total
    charging susceptance ``bc`` (used only by the pi flow model).  ``smax``
    is ``inf`` where MATPOWER's RATE_A is zero.  Generator costs are in
    per-unit power: ``c2 * p**2 + c1 * p + c0``.
    """

    name: str
    base_mva: float
    bus_ids: np.ndarray
    ref: int
    vmin: np.ndarray
    vmax: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    line_from: np.ndarray
    line_to: np.ndarray
    G: np.ndarray
    B: np.ndarray
    bc: np.ndarray
    smax: np.ndarray
    angmin: np.ndarray
    angmax: np.ndarray
    gen_bus: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    ramp30: np.ndarray
    c2: np.ndarray
    c1: np.ndarray
    c0: np.ndarray
    pg0: np.ndarray = field(default=None)
    qg0: np.ndarray = field(default=None)

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_line(self) -> int:
        return len(self.line_from)

    @property
    def n_gen(self) -> int:
        return len(self.gen_bus)

    @property
    def load_bus(self) -> np.ndarray:
        """Buses carrying a load (nonzero P or Q demand)."""
        return np.flatnonzero((self.pd != 0) | (self.qd != 0))

    def check(self) -> None:
        n = self.n_bus
        for name, arr in (("line_from", self.line_from), ("line_to", self.line_to), ("gen_bus", self.gen_bus)):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise MatpowerError(f"{self.name}: {name} references a missing bus")
        if not 0 <= self.ref < n:
            raise MatpowerError(f"{self.name}: no reference bus")
        for lo, hi, what in ((self.pmin, self.pmax, "P"), (self.qmin, self.qmax, "Q"), (self.vmin, self.vmax, "V")):
            if np.any(lo > hi):
                raise MatpowerError(f"{self.name}: {what} lower limit exceeds upper limit")
        if not (np.all(np.isfinite(self.G)) and np.all(np.isfinite(self.B))):
            raise MatpowerError(f"{self.name}: non-finite line admittance")


_MATRIX = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix(name: str, body: str) -> np.ndarray:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append([float(tok) for tok in re.split(r"[\s,]+", chunk)])
        except ValueError:
            raise MatpowerError(f"mpc.{name}: malformed row {chunk!r}") from None
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    for r in rows:
        if len(r) != width:
            raise MatpowerError(f"mpc.{name}: ragged rows ({len(r)} vs {width} columns)")
    return np.array(rows)


def parse_matpower(text: str, name: str = "case") -> NetworkData:
    """Parse MATPOWER case text into per-unit :class:`NetworkData`.

    Out-of-service generators and branches and isolated buses are dropped.
    Angle limits that are zero or at least 360 degrees in magnitude default
    to +-60 degrees.  Only polynomial costs of degree <= 2 are accepted.
    """
    text = _strip_comments(text)
    mats = {m.group(1): _matrix(m.group(1), m.group(2)) for m in _MATRIX.finditer(text)}
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR.finditer(text)}
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in mats:
            raise MatpowerError(f"{name}: missing mpc.{key}")
    if "baseMVA" not in scalars:
        raise MatpowerError(f"{name}: missing mpc.baseMVA")
    base = scalars["baseMVA"]
    bus, gen, branch, gencost = mats["bus"], mats["gen"], mats["branch"], mats["gencost"]
    if bus.shape[1] < 13 or gen.shape[1] < 10 or branch.shape[1] < 11:
        raise MatpowerError(f"{name}: too few columns in bus/gen/branch data")
    if gencost.shape[0] not in (gen.shape[0], 2 * gen.shape[0]):
        raise MatpowerError(f"{name}: gencost has {gencost.shape[0]} rows for {gen.shape[0]} generators")

    keep_bus = bus[:, BUS_TYPE] != ISOLATED
    bus = bus[keep_bus]
    ids = bus[:, BUS_I].astype(np.int64)
    index = {int(b): i for i, b in enumerate(ids)}
    if len(index) != len(ids):
        raise MatpowerError(f"{name}: duplicate bus numbers")

    def lookup(col, what):
        try:
            return np.array([index[int(b)] for b in col], dtype=np.int64)
        except KeyError as exc:
            raise MatpowerError(f"{name}: {what} references unknown or isolated bus {exc.args[0]}") from None

    refs = np.flatnonzero(bus[:, BUS_TYPE] == REF)
    if len(refs) != 1:
        raise MatpowerError(f"{name}: expected exactly one reference bus, found {len(refs)}")

    gen_on = gen[:, GEN_STATUS] > 0
    costs = gencost[: gen.shape[0]][gen_on]
    gen = gen[gen_on]
    c2, c1, c0 = _costs(costs, base, name)

    br_on = branch[:, BR_STATUS] > 0
    branch = branch[br_on]
    r, x = branch[:, BR_R], branch[:, BR_X]
    z2 = r * r + x * x
    if np.any(z2 == 0):
        raise MatpowerError(f"{name}: branch with zero series impedance")
    rate = branch[:, RATE_A] / base
    smax = np.where(rate > 0, rate, np.inf)
    if branch.shape[1] > ANGMAX:
        amin, amax = np.deg2rad(branch[:, ANGMIN]), np.deg2rad(branch[:, ANGMAX])
    else:
        amin = amax = np.zeros(len(branch))
    vacuous_lo = (amin == 0) | (amin <= -2 * np.pi)
    vacuous_hi = (amax == 0) | (amax >= 2 * np.pi)
    amin = np.where(vacuous_lo, -DEFAULT_ANGLE, amin)
    amax = np.where(vacuous_hi, DEFAULT_ANGLE, amax)

    net = NetworkData(
        name=name,
        base_mva=base,
        bus_ids=ids,
        ref=int(refs[0]),
        vmin=bus[:, VMIN].copy(),
        vmax=bus[:, VMAX].copy(),
        pd=bus[:, PD] / base,
        qd=bus[:, QD] / base,
        line_from=lookup(branch[:, F_BUS], "branch"),
        line_to=lookup(branch[:, T_BUS], "branch"),
        G=r / z2,
        B=-x / z2,
        bc=branch[:, BR_B].copy(),
        smax=smax,
        angmin=amin,
        angmax=amax,
        gen_bus=lookup(gen[:, GEN_BUS], "generator"),
        pmin=gen[:, PMIN] / base,
        pmax=gen[:, PMAX] / base,
        qmin=gen[:, QMIN] / base,
        qmax=gen[:, QMAX] / base,
        ramp30=(gen[:, RAMP_30] / base) if gen.shape[1] > RAMP_30 else np.zeros(len(gen)),
        c2=c2,
        c1=c1,
        c0=c0,
        pg0=gen[:, PG] / base,
        qg0=gen[:, QG] / base,
    )
    net.check()
    return net


def _costs(costs, base, name):
    k = len(costs)
    c2, c1, c0 = np.zeros(k), np.zeros(k), np.zeros(k)
    for i, row in enumerate(costs):
        model = int(row[0])
        if model == 1:
            raise UnsupportedFeatureError(f"{name}: piecewise-linear generator cost is not supported")
        if model != 2:
            raise MatpowerError(f"{name}: unknown cost model {model}")
        ncost = int(row[3])
        coef = row[4:4 + ncost]
        if len(coef) != ncost:
            raise MatpowerError(f"{name}: gencost row {i} is shorter than its NCOST")
        coef = np.trim_zeros(coef, "f") if ncost > 3 else coef
        if len(coef) > 3:
            raise UnsupportedFeatureError(f"{name}: polynomial cost of degree {len(coef) - 1} is not supported")
        padded = np.concatenate([np.zeros(3 - len(coef)), coef])
        c2[i] = padded[0] * base * base
        c1[i] = padded[1] * base
        c0[i] = padded[2]
    return c2, c1, c0


def load_case(path_or_name) -> NetworkData:
    """Read a case from a path, or a bundled case by name (``"case9"``)."""
    path = Path(str(path_or_name))
    if path.suffix != ".m" and not path.exists():
        bundled = resources.files("gridnlp") / "data" / f"{path.name}.m"
        if not bundled.is_file():
            raise FileNotFoundError(f"no case file or bundled case named {path_or_name!r}")
        return parse_matpower(bundled.read_text(), name=path.name)
    return parse_matpower(path.read_text(), name=path.stem)


def bundled_cases() -> list:
    return sorted(p.name[:-2] for p in (resources.files("gridnlp") / "data").iterdir() if p.name.endswith(".m"))
