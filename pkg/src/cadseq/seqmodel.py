"""Parametric CAD command sequences: types, quantization, grammar,
serialization, and a synthetic long-sequence generator.

A model is a fixed-length list of 256 commands. Each command is one of
six types (loop start, line, arc, circle, extrude, end-of-sequence) with
a 16-slot parameter vector; slots unused by the command type hold -1,
used slots hold an 8-bit quantization level. Sketch curves chain from a
fixed start point at the representative of level 128 (the quantized
image of (0.5, 0.5)), so closure is a property of the stored levels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

import numpy as np

N_COMMANDS = 256
N_PARAMS = 16
N_LEVELS = 256

# Parameter slot order: x, y, alpha, f, r, theta, phi, gamma,
#                       px, py, pz, s, e1, e2, b, u
X, Y, ALPHA, F, R, THETA, PHI, GAMMA, PX, PY, PZ, S, E1, E2, B, U = range(16)
PARAM_NAMES = ("x", "y", "alpha", "f", "r", "theta", "phi", "gamma",
               "px", "py", "pz", "s", "e1", "e2", "b", "u")

# Boolean-op levels for slot b and extent-type levels for slot u.
BOOL_NEW, BOOL_UNION, BOOL_CUT, BOOL_INTERSECT = 0, 1, 2, 3
EXTENT_ONE_SIDED, EXTENT_SYMMETRIC, EXTENT_TWO_SIDED = 0, 1, 2

START_LEVEL = 128  # quantize(0.5) on [0, 1]; every curve chain starts here


class CommandType(Enum):
    SOL = "SOL"
    LINE = "L"
    ARC = "A"
    CIRCLE = "R"
    EXTRUDE = "E"
    EOS = "EOS"


TAG_TO_TYPE = {t.value: t for t in CommandType}

USES: dict[CommandType, tuple[int, ...]] = {
    CommandType.SOL: (),
    CommandType.LINE: (X, Y),
    CommandType.ARC: (X, Y, ALPHA, F),
    CommandType.CIRCLE: (X, Y, R),
    CommandType.EXTRUDE: (THETA, PHI, GAMMA, PX, PY, PZ, S, E1, E2, B, U),
    CommandType.EOS: (),
}


class OutOfRangeError(ValueError):
    pass


class BadLevelError(ValueError):
    pass


class SequenceSyntaxError(ValueError):
    pass


class GrammarError(ValueError):
    pass


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class ParamRange:
    """Continuous interval with a 256-level map, or a small discrete enum."""

    lo: float = 0.0
    hi: float = 1.0
    discrete: int = 0  # >0: enumeration of that many levels, stored directly

    @property
    def is_discrete(self) -> bool:
        return self.discrete > 0


PARAM_RANGES: tuple[ParamRange, ...] = (
    ParamRange(0.0, 1.0),                 # x
    ParamRange(0.0, 1.0),                 # y
    ParamRange(0.0, 2.0 * math.pi),       # alpha
    ParamRange(discrete=2),               # f: 0 = clockwise, 1 = counter-clockwise
    ParamRange(0.0, 1.0),                 # r
    ParamRange(-math.pi, math.pi),        # theta
    ParamRange(-math.pi, math.pi),        # phi
    ParamRange(-math.pi, math.pi),        # gamma
    ParamRange(-1.0, 1.0),                # px
    ParamRange(-1.0, 1.0),                # py
    ParamRange(-1.0, 1.0),                # pz
    ParamRange(0.0, 2.0),                 # s
    ParamRange(-1.0, 1.0),                # e1
    ParamRange(-1.0, 1.0),                # e2
    ParamRange(discrete=4),               # b: new / union / cut / intersect
    ParamRange(discrete=3),               # u: one-sided / symmetric / two-sided
)


def quantize_param(value: float, rng: ParamRange) -> int:
    """Map an in-range value to its 8-bit level, rounding half away from zero."""
    if rng.is_discrete:
        level = int(round(value))
        if abs(value - level) > 1e-9 or not 0 <= level < rng.discrete:
            raise OutOfRangeError(f"{value} is not a valid discrete level (<{rng.discrete})")
        return level
    tol = 1e-9
    if value < rng.lo - tol or value > rng.hi + tol:
        raise OutOfRangeError(f"{value} outside [{rng.lo}, {rng.hi}]")
    value = min(max(value, rng.lo), rng.hi)
    q = (value - rng.lo) / (rng.hi - rng.lo) * (N_LEVELS - 1)
    level = int(math.floor(q + 0.5))  # q >= 0, so this is half-away-from-zero
    return min(level, N_LEVELS - 1)


def dequantize_param(level: int, rng: ParamRange) -> float | None:
    """Representative value of a level; -1 returns None (the unused marker)."""
    if level == -1:
        return None
    if not 0 <= level <= N_LEVELS - 1:
        raise BadLevelError(f"level {level} outside 0..{N_LEVELS - 1}")
    if rng.is_discrete:
        if level >= rng.discrete:
            raise BadLevelError(f"level {level} outside discrete enum of {rng.discrete}")
        return float(level)
    return rng.lo + level / (N_LEVELS - 1) * (rng.hi - rng.lo)


@dataclass(frozen=True)
class CadCommand:
    ctype: CommandType
    params: tuple[int, ...]

    def __post_init__(self):
        if len(self.params) != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} parameter slots, got {len(self.params)}")

    def applicability_ok(self) -> bool:
        used = USES[self.ctype]
        for i, p in enumerate(self.params):
            if i in used:
                if not 0 <= p <= N_LEVELS - 1:
                    return False
                if PARAM_RANGES[i].is_discrete and p >= PARAM_RANGES[i].discrete:
                    return False
            elif p != -1:
                return False
        return True

    def value(self, slot: int) -> float:
        """Dequantized value of a used slot."""
        v = dequantize_param(self.params[slot], PARAM_RANGES[slot])
        if v is None:
            raise BadLevelError(f"slot {PARAM_NAMES[slot]} unused on {self.ctype.name}")
        return v


EOS_COMMAND = CadCommand(CommandType.EOS, (-1,) * N_PARAMS)
SOL_COMMAND = CadCommand(CommandType.SOL, (-1,) * N_PARAMS)


def command(ctype: CommandType, **named_levels: int) -> CadCommand:
    """Build a command from named parameter levels, padding unused slots with -1."""
    params = [-1] * N_PARAMS
    for name, level in named_levels.items():
        params[PARAM_NAMES.index(name)] = int(level)
    return CadCommand(ctype, tuple(params))


class CadSequence:
    """A fixed-length block of 256 commands.

    The container itself admits malformed content (model predictions are
    validated separately); parse/serialize/synthesize only ever produce
    sequences for which ``validate_sequence(...).ok`` holds.
    """

    __slots__ = ("commands", "seq_id")

    def __init__(self, commands: list[CadCommand], seq_id: str = ""):
        if len(commands) != N_COMMANDS:
            raise LengthError(f"expected {N_COMMANDS} commands, got {len(commands)}")
        self.commands = list(commands)
        self.seq_id = seq_id

    @classmethod
    def from_commands(cls, commands: Iterable[CadCommand], seq_id: str = "") -> "CadSequence":
        """Pad a short command list with EOS up to the fixed length."""
        cmds = list(commands)
        if len(cmds) > N_COMMANDS:
            raise LengthError(f"{len(cmds)} commands exceed the {N_COMMANDS}-slot block")
        cmds.extend([EOS_COMMAND] * (N_COMMANDS - len(cmds)))
        return cls(cmds, seq_id)

    @property
    def true_length(self) -> int:
        """1-based index of the first EOS; 256 when no EOS is present."""
        for i, c in enumerate(self.commands):
            if c.ctype is CommandType.EOS:
                return i + 1
        return N_COMMANDS

    def effective(self) -> list[CadCommand]:
        """Commands up to and including the first EOS."""
        return self.commands[:self.true_length]

    def type_indices(self) -> np.ndarray:
        return np.array([TYPE_INDEX[c.ctype] for c in self.commands], dtype=np.int64)

    def param_levels(self) -> np.ndarray:
        return np.array([c.params for c in self.commands], dtype=np.int64)

    def __eq__(self, other) -> bool:
        return isinstance(other, CadSequence) and self.commands == other.commands \
            and self.seq_id == other.seq_id

    def __hash__(self):
        return hash((self.seq_id, tuple(self.commands)))


TYPE_ORDER = (CommandType.SOL, CommandType.LINE, CommandType.ARC,
              CommandType.CIRCLE, CommandType.EXTRUDE, CommandType.EOS)
TYPE_INDEX = {t: i for i, t in enumerate(TYPE_ORDER)}


def sequence_from_arrays(types: np.ndarray, params: np.ndarray, seq_id: str = "") -> CadSequence:
    """Assemble a sequence container from raw type-index / level arrays."""
    cmds = [CadCommand(TYPE_ORDER[int(t)], tuple(int(p) for p in row))
            for t, row in zip(types, params)]
    return CadSequence(cmds, seq_id)


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    position: int = -1
    rule: str = ""

    def __bool__(self):
        return self.ok


def validate_sequence(seq: CadSequence) -> ValidationReport:
    """Check structural invariants; reports the first violated rule.

    Rules: the block must contain a non-EOS prefix terminated by EOS
    ("empty" / "unterminated"); padding after the first EOS must be all
    EOS ("padding"); parameter slots must match each command type
    ("applicability"); curves must live inside a loop opened by SOL, every
    loop must contain at least one curve, and every extrude needs at least
    one complete loop since the previous extrude ("grammar-*").
    """
    cmds = seq.commands
    if cmds[0].ctype is CommandType.EOS:
        return ValidationReport(False, 0, "empty")
    first_eos = next((i for i, c in enumerate(cmds) if c.ctype is CommandType.EOS), None)
    if first_eos is None:
        return ValidationReport(False, N_COMMANDS - 1, "unterminated")
    for i in range(first_eos, N_COMMANDS):
        if cmds[i] != EOS_COMMAND:
            return ValidationReport(False, i, "padding")
    for i in range(first_eos):
        if not cmds[i].applicability_ok():
            return ValidationReport(False, i, "applicability")

    in_loop = False
    curves_in_loop = 0
    complete_loops = 0
    for i in range(first_eos):
        t = cmds[i].ctype
        if t is CommandType.SOL:
            if in_loop and curves_in_loop == 0:
                return ValidationReport(False, i, "grammar-empty-loop")
            if in_loop:
                complete_loops += 1
            in_loop, curves_in_loop = True, 0
        elif t in (CommandType.LINE, CommandType.ARC, CommandType.CIRCLE):
            if not in_loop:
                return ValidationReport(False, i, "grammar-curve-outside-loop")
            curves_in_loop += 1
        elif t is CommandType.EXTRUDE:
            if in_loop and curves_in_loop == 0:
                return ValidationReport(False, i, "grammar-empty-loop")
            if in_loop:
                complete_loops += 1
            if complete_loops == 0:
                return ValidationReport(False, i, "grammar-extrude-without-loop")
            in_loop, curves_in_loop, complete_loops = False, 0, 0
    if in_loop and curves_in_loop == 0:
        return ValidationReport(False, first_eos, "grammar-empty-loop")
    return ValidationReport(True)


# -- serialization ------------------------------------------------------------


def serialize_sequence(seq: CadSequence) -> str:
    """Canonical one-line JSON record; EOS padding beyond the first is omitted."""
    cmds = [{"t": c.ctype.value, "p": list(c.params)} for c in seq.effective()]
    return json.dumps({"id": seq.seq_id, "commands": cmds}, separators=(",", ":"))


def parse_sequence(text: str) -> CadSequence:
    """Parse one JSON-lines record into a validated, padded sequence."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SequenceSyntaxError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict) or "commands" not in obj:
        raise SequenceSyntaxError("record must be an object with a 'commands' field")
    seq_id = obj.get("id", "")
    if not isinstance(seq_id, str):
        raise SequenceSyntaxError("'id' must be a string")
    raw = obj["commands"]
    if not isinstance(raw, list):
        raise SequenceSyntaxError("'commands' must be a list")
    cmds: list[CadCommand] = []
    for k, entry in enumerate(raw):
        if not isinstance(entry, dict) or "t" not in entry or "p" not in entry:
            raise SequenceSyntaxError(f"command {k}: expected {{'t', 'p'}}")
        if entry["t"] not in TAG_TO_TYPE:
            raise SequenceSyntaxError(f"command {k}: unknown type tag {entry['t']!r}")
        p = entry["p"]
        if not isinstance(p, list) or len(p) != N_PARAMS \
                or not all(isinstance(v, int) and -1 <= v <= N_LEVELS - 1 for v in p):
            raise SequenceSyntaxError(f"command {k}: 'p' must be 16 ints in -1..255")
        cmds.append(CadCommand(TAG_TO_TYPE[entry["t"]], tuple(p)))
    if not cmds or all(c.ctype is CommandType.EOS for c in cmds):
        raise GrammarError("record has no EOS-terminable content")

    first_eos = next((i for i, c in enumerate(cmds) if c.ctype is CommandType.EOS), None)
    if first_eos is not None:
        if any(c.ctype is not CommandType.EOS for c in cmds[first_eos:]):
            raise GrammarError("content after EOS")
        cmds = cmds[:first_eos]
    if len(cmds) > N_COMMANDS - 1:
        raise LengthError(f"{len(cmds)} commands leave no room for EOS")
    seq = CadSequence.from_commands(cmds, seq_id)
    report = validate_sequence(seq)
    if not report.ok:
        raise GrammarError(f"position {report.position}: {report.rule}")
    return seq


def write_sequences(path: str, seqs: Iterable[CadSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in seqs:
            fh.write(serialize_sequence(s))
            fh.write("\n")


def read_sequences(path: str) -> Iterator[CadSequence]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield parse_sequence(line)


# -- synthetic generator ------------------------------------------------------

# Length distribution targets: fraction of sequences in the 61..128 bucket,
# remainder in 129..256.
SHORT_BUCKET_FRACTION = 0.8289
LENGTH_MIN, LENGTH_MAX = 60, 256

_ANCHOR_RADIUS = 0.12       # ball around the origin that cuts must never touch
_CUT_CLEARANCE = 0.04
_MIN_BODY, _MAX_BODY = 3, 26


def sample_length_target(rng: np.random.Generator) -> int:
    """Draw a target length matching the reference corpus length buckets."""
    if rng.random() < SHORT_BUCKET_FRACTION:
        return int(rng.integers(61, 129))
    return int(rng.integers(129, 257))


def _plan_body_sizes(rng: np.random.Generator, budget: int) -> list[int]:
    """Split a command budget into per-body sizes in [3, 26], first >= 7."""
    first = int(rng.integers(7, 13))
    first = min(first, budget - _MIN_BODY) if budget - first < _MIN_BODY else first
    sizes = [first]
    rem = budget - first
    while rem > 0:
        hi = min(_MAX_BODY, rem)
        options = [c for c in range(_MIN_BODY, hi + 1) if rem - c == 0 or rem - c >= _MIN_BODY]
        sizes.append(int(rng.choice(options)))
        rem -= sizes[-1]
    return sizes


def _qlevel(value: float, slot: int) -> int:
    return quantize_param(value, PARAM_RANGES[slot])


def _deq(level: int, slot: int) -> float:
    return dequantize_param(level, PARAM_RANGES[slot])


def _angle_levels(rng: np.random.Generator) -> tuple[int, int, int]:
    if rng.random() < 0.35:
        axisish = np.array([0, 64, 128, 191, 255])
        return tuple(int(rng.choice(axisish)) for _ in range(3))
    return tuple(int(rng.integers(0, 256)) for _ in range(3))


def _polygon_vertices(rng: np.random.Generator, n: int, radius: float,
                      regular: bool) -> list[tuple[int, int]]:
    """Quantized ccw polygon through the start point.

    Vertex 0 is the fixed start level pair; the rest are placed on a
    star around a center chosen so everything stays inside [0.02, 0.98]^2.
    """
    start = _deq(START_LEVEL, X)
    psi0 = rng.uniform(0.0, 2.0 * math.pi)
    radii = np.full(n, radius) if regular else radius * rng.uniform(0.75, 1.0, size=n)
    cx = start - radii[0] * math.cos(psi0)
    cy = start - radii[0] * math.sin(psi0)
    levels = [(START_LEVEL, START_LEVEL)]
    for i in range(1, n):
        ang = psi0 + 2.0 * math.pi * i / n
        vx = min(max(cx + radii[i] * math.cos(ang), 0.02), 0.98)
        vy = min(max(cy + radii[i] * math.sin(ang), 0.02), 0.98)
        levels.append((_qlevel(vx, X), _qlevel(vy, Y)))
    return levels


def _chain_commands(rng: np.random.Generator, vertices: list[tuple[int, int]],
                    with_arcs: bool) -> list[CadCommand]:
    """Curves tracing the closed vertex chain back to the start point."""
    cmds = []
    n = len(vertices)
    for i in range(n):
        ex, ey = vertices[(i + 1) % n]
        if with_arcs and n >= 5 and i % 2 == 1:
            alpha = _qlevel(rng.uniform(math.pi / 6, math.pi / 2), ALPHA)
            cmds.append(command(CommandType.ARC, x=ex, y=ey, alpha=alpha, f=1))
        else:
            cmds.append(command(CommandType.LINE, x=ex, y=ey))
    return cmds


def _circle_loop(rng: np.random.Generator, r_min=0.08, r_max=0.22) -> list[CadCommand]:
    r = rng.uniform(r_min, r_max)
    cx = rng.uniform(0.02 + r, 0.98 - r)
    cy = rng.uniform(0.02 + r, 0.98 - r)
    return [SOL_COMMAND,
            command(CommandType.CIRCLE, x=_qlevel(cx, X), y=_qlevel(cy, Y), r=_qlevel(r, R))]


def _sketch_for_size(rng: np.random.Generator, size: int, *, first: bool = False,
                     small: bool = False) -> list[CadCommand]:
    """Sketch loops totalling size-1 commands (the extrude takes the last slot).

    The first body is always a regular hole-free polygon (it must cover
    the anchor ball); `small` shrinks everything so a cut body can be
    placed clear of the anchor.
    """
    n_curves = size - 2
    if first:
        verts = _polygon_vertices(rng, n_curves, rng.uniform(0.20, 0.23), regular=True)
        return [SOL_COMMAND, *_chain_commands(rng, verts, with_arcs=False)]
    if n_curves == 1:
        return _circle_loop(rng, *((0.06, 0.14) if small else (0.08, 0.22)))
    if n_curves == 2:
        # Lens: a line out, an arc back to the start point.
        start = _deq(START_LEVEL, X)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        chord = rng.uniform(*((0.14, 0.24) if small else (0.18, 0.38)))
        ex = min(max(start + chord * math.cos(ang), 0.05), 0.95)
        ey = min(max(start + chord * math.sin(ang), 0.05), 0.95)
        alpha = _qlevel(rng.uniform(math.pi / 2, math.pi), ALPHA)
        return [SOL_COMMAND,
                command(CommandType.LINE, x=_qlevel(ex, X), y=_qlevel(ey, Y)),
                command(CommandType.ARC, x=START_LEVEL, y=START_LEVEL, alpha=alpha, f=1)]
    if n_curves == 3 and rng.random() < 0.4:
        # Concentric ring: outer circle plus an inner circle hole.
        r_out = rng.uniform(*((0.12, 0.17) if small else (0.16, 0.24)))
        cx = rng.uniform(0.02 + r_out, 0.98 - r_out)
        cy = rng.uniform(0.02 + r_out, 0.98 - r_out)
        r_in = rng.uniform(0.3, 0.6) * r_out
        return [SOL_COMMAND,
                command(CommandType.CIRCLE, x=_qlevel(cx, X), y=_qlevel(cy, Y),
                        r=_qlevel(r_out, R)),
                SOL_COMMAND,
                command(CommandType.CIRCLE, x=_qlevel(cx, X), y=_qlevel(cy, Y),
                        r=_qlevel(r_in, R))]
    radius = rng.uniform(*((0.10, 0.16) if small else (0.14, 0.23)))
    if not small and n_curves >= 5 and rng.random() < 0.3:
        # Polygon with a circular hole near its center.
        verts = _polygon_vertices(rng, n_curves - 2, rng.uniform(0.16, 0.23), regular=True)
        pts = np.array([(_deq(vx, X), _deq(vy, Y)) for vx, vy in verts])
        c = pts.mean(axis=0)
        r_hole = 0.35 * float(np.min(np.linalg.norm(pts - c, axis=1)))
        return [SOL_COMMAND, *_chain_commands(rng, verts, with_arcs=False),
                SOL_COMMAND,
                command(CommandType.CIRCLE, x=_qlevel(c[0], X), y=_qlevel(c[1], Y),
                        r=_qlevel(max(r_hole, 0.04), R))]
    with_arcs = not small and n_curves >= 5 and rng.random() < 0.4
    verts = _polygon_vertices(rng, n_curves, radius,
                              regular=with_arcs or rng.random() < 0.5)
    return [SOL_COMMAND, *_chain_commands(rng, verts, with_arcs)]


def _extrude(rng: np.random.Generator, sketch: list[CadCommand], *, first: bool,
             bool_level: int) -> CadCommand:
    """Place and size an extrude so the whole solid behaves predictably.

    The first body always covers a ball around the world origin; cut
    bodies are kept clear of that ball so the accumulated solid can never
    be emptied. Placement is verified on the same dequantized, discretized
    geometry the evaluator uses.
    """
    from . import geom  # deferred: geom imports this module for types

    for _ in range(64):
        th_l, ph_l, ga_l = _angle_levels(rng)
        frame = geom.plane_frame(_deq(th_l, THETA), _deq(ph_l, PHI), _deq(ga_l, GAMMA))
        loops = geom.split_loops(sketch)
        polys = [geom.discretize_loop(lp) for lp in loops]
        allpts = np.vstack(polys)
        center_sk = allpts.mean(axis=0)
        r_sk = float(np.max(np.linalg.norm(allpts - center_sk, axis=1)))

        if first:
            s_val = rng.uniform(1.2, 1.6)
            e1_val, e2_val = rng.uniform(0.55, 0.8), 0.0
            u_level = EXTENT_SYMMETRIC
            target = np.zeros(3)
        elif bool_level == BOOL_CUT:
            s_val = rng.uniform(0.6, 0.9)
            e1_val = rng.uniform(0.08, 0.16)
            e2_val = rng.uniform(0.08, 0.16)
            u_level = int(rng.integers(0, 3))
            rho = s_val * r_sk + max(e1_val, e2_val)
            lo = _ANCHOR_RADIUS + rho + _CUT_CLEARANCE + 0.02
            hi = 0.96 - rho
            if lo >= hi:
                continue
            d = rng.uniform(lo, hi)
            v = rng.normal(size=3)
            target = d * v / np.linalg.norm(v)
        else:
            s_val = rng.uniform(0.8, 1.4)
            e1_val = rng.uniform(0.15, 0.55)
            e2_val = rng.uniform(0.1, 0.4)
            u_level = int(rng.integers(0, 3))
            rho = s_val * r_sk + max(e1_val, e2_val)
            d = rng.uniform(0.0, max(0.9 - rho, 0.05))
            v = rng.normal(size=3)
            target = d * v / np.linalg.norm(v)

        s_level = _qlevel(s_val, S)
        s_q = _deq(s_level, S)
        p_desired = target - frame @ np.array([s_q * center_sk[0], s_q * center_sk[1], 0.0])
        if np.max(np.abs(p_desired)) > 0.99:
            continue
        p_levels = [_qlevel(float(min(max(c, -1.0), 1.0)), PX + i)
                    for i, c in enumerate(p_desired)]
        cmd = command(CommandType.EXTRUDE, theta=th_l, phi=ph_l, gamma=ga_l,
                      px=p_levels[0], py=p_levels[1], pz=p_levels[2], s=s_level,
                      e1=_qlevel(e1_val, E1), e2=_qlevel(e2_val, E2),
                      b=bool_level, u=u_level)

        # Re-verify with the exact dequantized values the evaluator will see.
        p_q = np.array([cmd.value(PX), cmd.value(PY), cmd.value(PZ)])
        t0, t1 = geom.extent_interval(cmd.value(E1), cmd.value(E2), u_level)
        world = (frame @ np.hstack([s_q * allpts, np.zeros((len(allpts), 1))]).T).T + p_q
        centers = [world + t0 * frame[:, 2], world + t1 * frame[:, 2]]
        rad = max(float(np.max(np.linalg.norm(w, axis=1))) for w in centers)
        if first:
            r_in = geom.min_edge_distance(center_sk, polys[0])
            c_w = frame @ np.array([s_q * center_sk[0], s_q * center_sk[1], 0.0]) + p_q
            axial = float(frame[:, 2] @ (-c_w))
            planar = float(np.linalg.norm((-c_w) - axial * frame[:, 2]))
            if (planar + _ANCHOR_RADIUS < s_q * r_in - 0.01
                    and t0 + _ANCHOR_RADIUS < axial < t1 - _ANCHOR_RADIUS
                    and rad < 0.98):
                return cmd
        elif bool_level == BOOL_CUT:
            c_w = frame @ np.array([s_q * center_sk[0], s_q * center_sk[1], 0.0]) + p_q
            rho = s_q * r_sk + max(abs(t0), abs(t1))
            if np.linalg.norm(c_w) - rho > _ANCHOR_RADIUS + _CUT_CLEARANCE and rad < 0.99:
                return cmd
        elif rad < 0.99:
            return cmd
    raise RuntimeError("could not place a well-behaved extrusion")


def synthesize_sequence(seed: int, length_target: int) -> CadSequence:
    """Deterministically generate a valid sequence of roughly the target length.

    The result always passes validate_sequence and always evaluates to a
    non-empty solid: the first body covers a ball around the origin and
    cut bodies provably miss it.
    """
    if not LENGTH_MIN <= length_target <= LENGTH_MAX:
        raise ValueError(f"length_target must be in {LENGTH_MIN}..{LENGTH_MAX}")
    rng = np.random.default_rng(seed)
    sizes = _plan_body_sizes(rng, length_target - 1)
    cmds: list[CadCommand] = []
    for k, size in enumerate(sizes):
        bool_level = BOOL_NEW if k == 0 else int(rng.choice(
            [BOOL_NEW, BOOL_UNION, BOOL_CUT]))
        sketch = _sketch_for_size(rng, size, first=(k == 0),
                                  small=(bool_level == BOOL_CUT))
        cmds.extend(sketch)
        cmds.append(_extrude(rng, sketch, first=(k == 0), bool_level=bool_level))
    seq = CadSequence.from_commands(cmds, seq_id=f"synth-{seed}")
    report = validate_sequence(seq)
    if not report.ok:
        raise AssertionError(f"generator produced invalid sequence: {report}")
    return seq
