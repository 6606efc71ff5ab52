"""Plain ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, lists are comma separated.
Unknown keys are errors. Shorthand keys (``omega``, ``gamma``, ``chi``,
``c6``) set both or all three components; explicit component keys win.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .model import AllToAll, InteractionSpec, Lattice, SystemParams, VdW, DEFAULT_CUTOFF
from .twa import TWASettings


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "0") else int(text)


_SCALARS = {
    "omega": float, "omega_s": float, "omega_r": float,
    "delta_s": float, "delta_r": float,
    "gamma": float, "gamma_s": float, "gamma_r": float,
    "chi": float, "chi_ss": float, "chi_rr": float, "chi_sr": float,
    "c6": float, "c6_ss": float, "c6_rr": float, "c6_sr": float,
    "cutoff": float, "L": int, "boundary": str, "interaction": str,
    "backend": str, "output": str,
    "n_traj": int, "master_seed": int, "n_atoms": _optional_int,
    "dt": float, "t_end": float, "t_transient": float, "record_dt": float, "guard": float,
    "snapshot_times": _floats, "subsystem_window": _optional_int, "sizes": _ints,
}
KNOWN_KEYS = frozenset(_SCALARS)

INTERACTIONS = ("all_to_all", "vdw")
BACKENDS = ("mf", "exact", "twa")


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; later duplicates override earlier ones."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def parse_overrides(items: list[str] | None) -> dict[str, str]:
    return parse_text("\n".join(items or []), "--set")


def load(path: str | Path) -> dict[str, str]:
    return parse_text(Path(path).read_text(), str(path))


def _typed(raw: Mapping[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in raw.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            out[key] = _SCALARS[key](value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None
    return out


@dataclass(frozen=True)
class RunConfig:
    params: SystemParams = field(default_factory=SystemParams)
    lattice: Lattice = field(default_factory=lambda: Lattice(8))
    interaction: InteractionSpec = field(default_factory=lambda: AllToAll.uniform(12.0))
    twa: TWASettings = field(default_factory=TWASettings)
    backend: str = "twa"
    n_traj: int = 100
    master_seed: int = 0
    n_atoms: int | None = None
    sizes: tuple[int, ...] = ()
    output: str = "out"

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "RunConfig":
        v = _typed(raw)

        def pick(key, shorthand, default):
            return v.get(key, v.get(shorthand, default))

        try:
            params = SystemParams(
                omega_s=pick("omega_s", "omega", 2.0), omega_r=pick("omega_r", "omega", 2.0),
                delta_s=v.get("delta_s", 8.0), delta_r=v.get("delta_r", 3.0),
                gamma_s=pick("gamma_s", "gamma", 1.0), gamma_r=pick("gamma_r", "gamma", 1.0))
            lattice = Lattice(v.get("L", 8), v.get("boundary", "open"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        kind = v.get("interaction", "all_to_all")
        if kind == "all_to_all":
            if any(k.startswith("c6") for k in v):
                raise ConfigError("c6 keys need interaction = vdw")
            interaction = AllToAll(pick("chi_ss", "chi", 12.0), pick("chi_rr", "chi", 12.0),
                                   pick("chi_sr", "chi", 12.0))
        elif kind == "vdw":
            cutoff = v.get("cutoff", DEFAULT_CUTOFF)
            if any(k.startswith("c6") for k in v):
                interaction = VdW(pick("c6_ss", "c6", None), pick("c6_rr", "c6", None),
                                  pick("c6_sr", "c6", None), cutoff)
                if None in (interaction.c6_ss, interaction.c6_rr, interaction.c6_sr):
                    raise ConfigError("vdw needs c6 or all of c6_ss, c6_rr, c6_sr")
            else:
                interaction = VdW.calibrated(v.get("chi", 12.0), cutoff)
        else:
            raise ConfigError(f"interaction must be one of {INTERACTIONS}, got {kind!r}")
        backend = v.get("backend", "twa")
        if backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {backend!r}")
        defaults = TWASettings()
        try:
            twa = TWASettings(
                dt=v.get("dt", defaults.dt), t_end=v.get("t_end", defaults.t_end),
                record_dt=v.get("record_dt", defaults.record_dt),
                t_transient=v.get("t_transient", defaults.t_transient),
                snapshot_times=v.get("snapshot_times", ()),
                subsystem_window=v.get("subsystem_window"),
                guard=v.get("guard", defaults.guard))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        n_traj = v.get("n_traj", 100)
        if n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        return cls(params, lattice, interaction, twa, backend, n_traj, v.get("master_seed", 0),
                   v.get("n_atoms"), v.get("sizes", ()), v.get("output", "out"))

    def with_size(self, L: int) -> "RunConfig":
        return replace(self, lattice=Lattice(L, self.lattice.boundary))

    def resolved(self) -> dict[str, Any]:
        """Every setting spelled out; loading this mapping back reproduces the config."""
        p = self.params
        out: dict[str, Any] = {
            "backend": self.backend,
            "omega_s": p.omega_s, "omega_r": p.omega_r,
            "delta_s": p.delta_s, "delta_r": p.delta_r,
            "gamma_s": p.gamma_s, "gamma_r": p.gamma_r,
            "L": self.lattice.L, "boundary": self.lattice.boundary,
        }
        if isinstance(self.interaction, AllToAll):
            out.update(interaction="all_to_all", chi_ss=self.interaction.chi_ss,
                       chi_rr=self.interaction.chi_rr, chi_sr=self.interaction.chi_sr)
        else:
            out.update(interaction="vdw", c6_ss=self.interaction.c6_ss, c6_rr=self.interaction.c6_rr,
                       c6_sr=self.interaction.c6_sr, cutoff=self.interaction.cutoff_radius)
        t = self.twa
        out.update(n_traj=self.n_traj, master_seed=self.master_seed, dt=t.dt, t_end=t.t_end,
                   record_dt=t.record_dt, t_transient=t.t_transient, guard=t.guard,
                   snapshot_times=list(t.snapshot_times), subsystem_window=t.subsystem_window,
                   n_atoms=self.n_atoms, sizes=list(self.sizes), output=self.output)
        return out

    def to_text(self) -> str:
        lines = []
        for key, value in self.resolved().items():
            if isinstance(value, list):
                value = ",".join(repr(x) for x in value)
            elif value is None:
                value = "none"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def resolve(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Config file (optional) with ``key=value`` overrides applied on top."""
    raw = load(path) if path else {}
    raw.update(parse_overrides(overrides))
    return RunConfig.from_mapping(raw)
