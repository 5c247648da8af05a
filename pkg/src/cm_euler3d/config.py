"""Run configuration files.

The format is a sequence of ``key = value`` lines grouped in ``[section]``
blocks; ``#`` starts a comment.  Keys before the first section belong to
``[run]``.  ``[slice]`` may be repeated, one block per slice request.
Unknown sections or keys are rejected with the offending line number.

Sections and keys (defaults in parentheses; ``scenario`` means the
scenario's own default):

``[run]``
    ``scenario`` (abc), ``t_final`` (scenario), ``dt`` (scenario; fractions
    such as ``1/50`` are accepted), ``output`` (``cm_output``),
    ``checkpoint_every`` (0, in steps; 0 disables periodic checkpoints).
``[grids]``
    ``map_dims``, ``vel_dims`` (scenario), ``diag_dims`` (twice the larger
    of the map and velocity grids per axis), ``oversample`` (none; list of
    cubic resolutions resampled at the final time).  Dimensions are written
    ``64 48 32``, ``64x48x32`` or a single number for a cube.
``[numerics]``
    ``trunc_radius`` (scenario), ``det_tol`` (scenario), ``eps`` (2.5e-3).
``[sampling]``
    ``mode`` (scenario), ``mollifier_frac`` (1.0), ``min_samples`` (2),
    ``max_samples`` (16), ``sample_cap`` (192^3), ``range_tol`` (0.02),
    ``tv_tol`` (0.05).
``[diagnostics]``
    ``cadence`` (1.0), ``spectra`` (false), ``tracer_slices`` (false).
``[scenario]``
    ``construction_n`` (128) and geometry overrides of the tube scenarios
    (for example ``radius``, ``z0``, ``scale``, ``s_form``).
``[slice]``
    ``axis``, ``offset``, ``center``, ``half_widths``, ``resolution``
    (512 512), ``quantity`` (w), ``times`` (final time).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Optional

from .diagnostics import SliceRequest
from .errors import ConfigError
from .field_jet import DEFAULT_EPS
from .fluid_state import SamplingConfig
from .scenarios import SCENARIO_DEFAULTS, KerrParams, PerpendicularParams


@dataclass
class SliceSpec:
    """A slice request and the times at which it is emitted (``None``: final time)."""

    request: SliceRequest
    times: Optional[list[float]] = None


@dataclass
class RunConfig:
    """Resolved run parameters."""

    scenario: str = "abc"
    map_dims: tuple[int, int, int] = (24, 24, 24)
    vel_dims: tuple[int, int, int] = (24, 24, 24)
    diag_dims: Optional[tuple[int, int, int]] = None
    dt: float = 1.0
    t_final: float = 2.0
    trunc_radius: float = 8.0
    det_tol: float = 1e-3
    eps: float = DEFAULT_EPS
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    diag_cadence: float = 1.0
    spectra: bool = False
    tracer_slices: bool = False
    output_dir: str = "cm_output"
    checkpoint_every: int = 0
    oversample: list[int] = field(default_factory=list)
    slices: list[SliceSpec] = field(default_factory=list)
    construction_n: int = 128
    scenario_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0 (got {self.dt})")
        if not self.t_final >= 0:
            raise ConfigError(f"t_final must be >= 0 (got {self.t_final})")
        if not self.det_tol > 0:
            raise ConfigError(f"det_tol must be > 0 (got {self.det_tol})")
        for name in ("map_dims", "vel_dims"):
            dims = getattr(self, name)
            if len(dims) != 3 or any(int(n) < 8 for n in dims):
                raise ConfigError(f"{name} must have three entries each >= 8 (got {dims})")
        if self.diag_dims is not None and (len(self.diag_dims) != 3
                                           or any(n < 8 for n in self.diag_dims)):
            raise ConfigError(f"diag_dims must have three entries each >= 8")
        if self.trunc_radius < 0:
            raise ConfigError("trunc_radius must be >= 0")
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")
        if not self.diag_cadence > 0:
            raise ConfigError("diagnostics cadence must be > 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    @property
    def n_steps(self) -> int:
        """Number of steps to reach ``t_final``."""
        return int(round(self.t_final / self.dt))

    @property
    def cadence_steps(self) -> int:
        return max(1, int(round(self.diag_cadence / self.dt)))

    def resolved_diag_dims(self) -> tuple[int, int, int]:
        if self.diag_dims is not None:
            return tuple(self.diag_dims)
        return tuple(2 * max(a, b) for a, b in zip(self.map_dims, self.vel_dims))

    def to_text(self) -> str:
        """Serialize back to the configuration file format."""
        def dims(d):
            return " ".join(str(int(v)) for v in d)

        lines = ["[run]", f"scenario = {self.scenario}", f"t_final = {self.t_final!r}",
                 f"dt = {self.dt!r}", f"output = {self.output_dir}",
                 f"checkpoint_every = {self.checkpoint_every}", "", "[grids]",
                 f"map_dims = {dims(self.map_dims)}", f"vel_dims = {dims(self.vel_dims)}"]
        if self.diag_dims is not None:
            lines.append(f"diag_dims = {dims(self.diag_dims)}")
        if self.oversample:
            lines.append(f"oversample = {' '.join(str(n) for n in self.oversample)}")
        lines += ["", "[numerics]", f"trunc_radius = {self.trunc_radius!r}",
                  f"det_tol = {self.det_tol!r}", f"eps = {self.eps!r}", "", "[sampling]"]
        for k, v in asdict(self.sampling).items():
            if k != "chunk":
                lines.append(f"{k} = {v}")
        lines += ["", "[diagnostics]", f"cadence = {self.diag_cadence!r}",
                  f"spectra = {str(self.spectra).lower()}",
                  f"tracer_slices = {str(self.tracer_slices).lower()}", "", "[scenario]",
                  f"construction_n = {self.construction_n}"]
        for k, v in self.scenario_params.items():
            lines.append(f"{k} = {v}")
        for s in self.slices:
            r = s.request
            lines += ["", "[slice]", f"axis = {r.axis}", f"offset = {r.offset!r}",
                      f"center = {r.center[0]!r} {r.center[1]!r}",
                      f"half_widths = {r.half_widths[0]!r} {r.half_widths[1]!r}",
                      f"resolution = {r.resolution[0]} {r.resolution[1]}",
                      f"quantity = {r.quantity}"]
            if s.times is not None:
                lines.append(f"times = {' '.join(repr(t) for t in s.times)}")
        return "\n".join(lines) + "\n"


def _number(text: str, line: int, key: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}", line) from None


def _int(text: str, line: int, key: str) -> int:
    v = _number(text, line, key)
    if v != int(v):
        raise ConfigError(f"{key}: expected an integer, got {text!r}", line)
    return int(v)


def _numbers(text: str, line: int, key: str) -> list[float]:
    parts = text.replace("x", " ").replace(",", " ").split()
    if not parts:
        raise ConfigError(f"{key}: expected at least one number", line)
    return [_number(p, line, key) for p in parts]


def _dims(text: str, line: int, key: str) -> tuple[int, int, int]:
    vals = [_int(p, line, key) for p in text.replace("x", " ").replace(",", " ").split()]
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise ConfigError(f"{key}: expected 1 or 3 dimensions, got {text!r}", line)
    return tuple(vals)


def _bool(text: str, line: int, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}", line)


_SAMPLING_KEYS = {"mode": str, "mollifier_frac": float, "min_samples": int,
                  "max_samples": int, "sample_cap": int, "range_tol": float, "tv_tol": float}
_SCENARIO_PARAM_TYPES = {f.name: f.type for f in fields(KerrParams)}
_SCENARIO_PARAM_TYPES.update({f.name: f.type for f in fields(PerpendicularParams)})


def parse_config(text: str) -> RunConfig:
    """Parse configuration text into a validated :class:`RunConfig`."""
    raw: dict[str, tuple[str, int]] = {}
    slices: list[dict[str, tuple[str, int]]] = []
    section = "run"
    allowed = {
        "run": {"scenario", "t_final", "dt", "output", "checkpoint_every"},
        "grids": {"map_dims", "vel_dims", "diag_dims", "oversample"},
        "numerics": {"trunc_radius", "det_tol", "eps"},
        "sampling": set(_SAMPLING_KEYS),
        "diagnostics": {"cadence", "spectra", "tracer_slices"},
        "scenario": {"construction_n"} | set(_SCENARIO_PARAM_TYPES),
        "slice": {"axis", "offset", "center", "half_widths", "resolution", "quantity", "times"},
    }
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"malformed section header {s!r}", lineno)
            section = s[1:-1].strip().lower()
            if section not in allowed:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section == "slice":
                slices.append({})
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', got {s!r}", lineno)
        key, value = (p.strip() for p in s.split("=", 1))
        key = key.lower()
        if key not in allowed[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", lineno)
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        target = slices[-1] if section == "slice" else raw
        full = key if section in ("run", "slice") else f"{section}.{key}"
        if full in target:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        target[full] = (value, lineno)

    scenario = raw.get("scenario", ("abc", 0))[0].strip().lower()
    if scenario not in SCENARIO_DEFAULTS:
        raise ConfigError(f"unknown scenario {scenario!r}", raw["scenario"][1])
    d = SCENARIO_DEFAULTS[scenario]

    def get(key, conv, default):
        if key in raw:
            value, ln = raw[key]
            return conv(value, ln, key)
        return default

    sampling_kw = {}
    for k, typ in _SAMPLING_KEYS.items():
        if f"sampling.{k}" in raw:
            value, ln = raw[f"sampling.{k}"]
            sampling_kw[k] = (value.strip() if typ is str else
                              _int(value, ln, k) if typ is int else _number(value, ln, k))
    sampling_kw.setdefault("mode", d["sampling"])
    try:
        sampling = SamplingConfig(**sampling_kw)
    except ConfigError as exc:
        line = raw.get("sampling.mode", (None, None))[1]
        raise ConfigError(str(exc), line) from None

    params = {}
    for k, typ in _SCENARIO_PARAM_TYPES.items():
        if f"scenario.{k}" in raw:
            value, ln = raw[f"scenario.{k}"]
            params[k] = value.strip() if k == "s_form" else _number(value, ln, k)

    slice_specs = []
    for blk in slices:
        def sget(key, conv, default=None, required=False):
            if key in blk:
                value, ln = blk[key]
                return conv(value, ln, key)
            if required:
                raise ConfigError(f"[slice] block is missing {key!r}")
            return default
        req = SliceRequest(
            axis=sget("axis", _int, required=True),
            offset=sget("offset", _number, 0.0),
            center=tuple(sget("center", _numbers, required=True)),
            half_widths=tuple(sget("half_widths", _numbers, required=True)),
            resolution=tuple(int(v) for v in sget("resolution", _numbers, [512, 512])),
            quantity=blk["quantity"][0].strip() if "quantity" in blk else "w")
        if len(req.center) != 2 or len(req.half_widths) != 2 or len(req.resolution) != 2:
            raise ConfigError("[slice] center, half_widths and resolution need two entries")
        slice_specs.append(SliceSpec(req, sget("times", _numbers)))

    cfg = dict(
        scenario=scenario,
        map_dims=get("grids.map_dims", _dims, d["map_dims"]),
        vel_dims=get("grids.vel_dims", _dims, d["vel_dims"]),
        diag_dims=get("grids.diag_dims", _dims, None),
        dt=get("dt", _number, d["dt"]),
        t_final=get("t_final", _number, d["t_final"]),
        trunc_radius=get("numerics.trunc_radius", _number, d["trunc_radius"]),
        det_tol=get("numerics.det_tol", _number, d["det_tol"]),
        eps=get("numerics.eps", _number, DEFAULT_EPS),
        sampling=sampling,
        diag_cadence=get("diagnostics.cadence", _number, 1.0),
        spectra=get("diagnostics.spectra", _bool, False),
        tracer_slices=get("diagnostics.tracer_slices", _bool, False),
        output_dir=raw["output"][0].strip() if "output" in raw else "cm_output",
        checkpoint_every=get("checkpoint_every", _int, 0),
        oversample=[int(v) for v in get("grids.oversample", _numbers, [])],
        slices=slice_specs,
        construction_n=get("scenario.construction_n", _int, 128),
        scenario_params=params,
    )
    line_of = {"dt": "dt", "t_final": "t_final", "det_tol": "numerics.det_tol",
               "map_dims": "grids.map_dims", "vel_dims": "grids.vel_dims",
               "diag_dims": "grids.diag_dims", "trunc_radius": "numerics.trunc_radius",
               "eps": "numerics.eps", "diag_cadence": "diagnostics.cadence",
               "checkpoint_every": "checkpoint_every"}
    try:
        return RunConfig(**cfg)
    except ConfigError as exc:
        msg = str(exc)
        for attr, key in line_of.items():
            if msg.startswith(attr) and key in raw:
                raise ConfigError(msg, raw[key][1]) from None
        raise


def load_config(path) -> RunConfig:
    """Read and parse a configuration file."""
    with open(path) as fh:
        return parse_config(fh.read())
