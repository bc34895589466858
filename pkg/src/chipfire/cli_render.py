"""Command-line entry point and deterministic PPM rendering.

Every subcommand writes a CSV table (header row first) to ``--out`` or
standard output. Lattice subcommands in two dimensions can also write a
binary PPM image with ``--render``. Values from a ``--config`` JSON file act
as defaults that explicit flags override.

CSV columns:

========== =====================================================================
divisible  m, d, tol, volume, inradius, outradius, sweeps
obstacle   m, d, method, volume, residual, iterations
rotor      n, d, method, volume, inradius, outradius
sandpile   n, H, d, visited, inradius, outradius
idla       n, d, seed, volume, inradius, outradius
smash      model, delta, seed, volume, expected_volume
tree       d, r_max, configs, failures  (or word, realized, simulated, depth)
group      n, d, graph, order, invariant_factors, elementary_divisors
render     input, palette, width, height
========== =====================================================================
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid_core import BoundedBox, ChipfireError, DomainSet, ScalarField, shape_metrics

PALETTES = ("rotor-4color", "height-2d", "binary-domain")
BACKGROUND = (255, 255, 255)
ROTOR_COLORS = ((230, 57, 70), (69, 123, 157), (42, 157, 143), (244, 162, 97))


@dataclass(frozen=True)
class RenderSpec:
    palette: str = "binary-domain"
    cell: int = 1
    path: str | None = None
    margin: int = 2

    def __post_init__(self):
        if self.palette not in PALETTES:
            raise ValueError(f"unknown palette {self.palette!r}")
        if self.cell < 1 or self.margin < 0:
            raise ValueError("cell size must be positive and margin nonnegative")


def height_colors(levels: int) -> list[tuple[int, int, int]]:
    """Dark blue to amber ramp, one color per sandpile height."""
    lo = np.array([25, 35, 90])
    hi = np.array([250, 200, 40])
    if levels == 1:
        return [tuple(int(x) for x in lo)]
    return [tuple(int(round(x)) for x in lo + (hi - lo) * k / (levels - 1)) for k in range(levels)]


def _colors(palette: str, top: int) -> list[tuple[int, int, int]]:
    if palette == "rotor-4color":
        if top >= len(ROTOR_COLORS):
            raise ValueError("rotor palette covers four directions")
        return list(ROTOR_COLORS)
    if palette == "height-2d":
        return height_colors(max(top + 1, 4))
    if top > 0:
        raise ValueError("binary palette takes a membership mask")
    return [(0, 0, 0)]


def write_ppm(field: DomainSet | ScalarField, spec: RenderSpec) -> bytes:
    """Binary PPM of a planar field; negative values (and non-members) are background.

    The canvas is symmetric about the origin and extends ``spec.margin``
    cells past the furthest painted site. Row 0 is the largest second
    coordinate.
    """
    if isinstance(field, DomainSet):
        box = field.box
        vals = np.where(field.mask, 0, -1)
    else:
        box = field.box
        vals = np.asarray(field.values).astype(np.int64)
    if box.dim != 2:
        raise ValueError("only two-dimensional fields can be rendered")
    painted = np.argwhere(vals >= 0)
    if len(painted):
        ext = np.abs(painted + np.array(box.lo)).max(axis=0)
        top = int(vals.max())
    else:
        ext = np.zeros(2, np.int64)
        top = 0
    colors = np.array([BACKGROUND] + _colors(spec.palette, top), dtype=np.uint8)
    half = ext + spec.margin
    canvas = BoundedBox(tuple(int(-h) for h in half), tuple(int(h) for h in half))
    grid = np.full(canvas.shape, -1, np.int64)
    inter = BoundedBox(tuple(max(a, b) for a, b in zip(canvas.lo, box.lo)),
                       tuple(min(a, b) for a, b in zip(canvas.hi, box.hi)))
    if all(a <= b for a, b in zip(inter.lo, inter.hi)):
        grid[inter.slices_in(canvas)] = vals[inter.slices_in(box)]
    # axis 0 is x1 (columns), axis 1 is x2 (rows, top = largest)
    img = colors[grid + 1].transpose(1, 0, 2)[::-1]
    if spec.cell > 1:
        img = img.repeat(spec.cell, axis=0).repeat(spec.cell, axis=1)
    h, w = img.shape[:2]
    data = f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()
    if spec.path:
        Path(spec.path).write_bytes(data)
    return data


def read_ppm(data: bytes) -> np.ndarray:
    """Parse a PPM written by :func:`write_ppm` into an ``(h, w, 3)`` array."""
    head, _, rest = data.partition(b"\n")
    dims, _, rest = rest.partition(b"\n")
    depth, _, payload = rest.partition(b"\n")
    if head != b"P6" or depth != b"255":
        raise ValueError("not an 8-bit binary PPM")
    w, h = map(int, dims.split())
    return np.frombuffer(payload, np.uint8).reshape(h, w, 3)


def rotor_field(occupied: DomainSet, direction: ScalarField) -> ScalarField:
    vals = np.where(occupied.mask, direction.on_box(occupied.box, np.int64), -1)
    return ScalarField(occupied.box, vals, -1)


def height_field(visited: DomainSet, chips: ScalarField) -> ScalarField:
    """Grains above the hole at visited sites, clipped into the palette range."""
    v = chips.on_box(visited.box, np.int64)
    return ScalarField(visited.box, np.where(visited.mask, np.clip(v, 0, None), -1), -1)


# ---------------------------------------------------------------- subcommands


def _metrics(D: DomainSet) -> tuple:
    sm = shape_metrics(D)
    return sm.volume, sm.inradius, sm.outradius


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(round(x, 12))
    return str(x)


def _render(args, field):
    if args.render:
        write_ppm(field, RenderSpec(args.palette or args.default_palette, args.cell, args.render))


def cmd_divisible(args):
    from .divisible_sandpile import point_mass, stabilize

    tol = args.tol if args.tol is not None else 1e-10 * args.mass
    state, report = stabilize(point_mass(args.mass, args.dim), tol=tol, strategy=args.strategy)
    vol, rin, rout = _metrics(report.domain)
    _render(args, report.domain)
    return ["m", "d", "tol", "volume", "inradius", "outradius", "sweeps"], \
        [[args.mass, args.dim, tol, vol, rin, rout, report.sweeps]]


def cmd_obstacle(args):
    from .divisible_sandpile import point_mass
    from .obstacle_solver import solve_obstacle

    sol = solve_obstacle(point_mass(args.mass, args.dim), tol=args.tol, method=args.method)
    _render(args, sol.domain)
    return ["m", "d", "method", "volume", "residual", "iterations"], \
        [[args.mass, args.dim, args.method, sol.domain.count, sol.residual, sol.iterations]]


def cmd_rotor(args):
    from .rotor_router import RotorConfig, aggregate, compass_ordering

    initial = None
    if args.compass_ordering:
        if args.dim != 2:
            raise ValueError("the compass ordering is planar")
        initial = RotorConfig.uniform(2, 0, compass_ordering())
    agg = aggregate(args.n, initial=initial, d=args.dim, method=args.method)
    vol, rin, rout = _metrics(agg.occupied)
    if args.rotors_out:
        Path(args.rotors_out).write_text(agg.rotors.to_json())
    _render(args, rotor_field(agg.occupied, agg.rotors.direction))
    return ["n", "d", "method", "volume", "inradius", "outradius"], \
        [[args.n, args.dim, args.method, vol, rin, rout]]


def cmd_sandpile(args):
    from .abelian_sandpile import stabilize_chips

    st = stabilize_chips(args.n, args.hole, args.dim)
    vol, rin, rout = _metrics(st.visited)
    _render(args, height_field(st.visited, st.chips))
    return ["n", "H", "d", "visited", "inradius", "outradius"], \
        [[args.n, args.hole, args.dim, vol, rin, rout]]


def cmd_idla(args):
    from .internal_dla import idla_point

    res = idla_point(args.n, args.dim, args.seed, max_steps=args.max_steps)
    vol, rin, rout = _metrics(res.occupied)
    if args.dump:
        Path(args.dump).write_text(res.occupied.to_json())
    _render(args, res.occupied)
    return ["n", "d", "seed", "volume", "inradius", "outradius"], \
        [[args.n, args.dim, args.seed, vol, rin, rout]]


def _parse_points(text: str) -> list[tuple[float, ...]]:
    return [tuple(float(x) for x in part.split(",")) for part in text.split(";") if part.strip()]


def cmd_smash(args):
    from .smash_sum import MultiSourceSpec, multi_source_domain

    centers = _parse_points(args.centers)
    volumes = [float(v) for v in args.volumes.split(";")]
    spec = MultiSourceSpec(tuple(centers), tuple(volumes), args.delta)
    D = multi_source_domain(spec, args.model, args.seed)
    expected = int(spec.chip_field().total())
    _render(args, D)
    return ["model", "delta", "seed", "volume", "expected_volume"], \
        [[args.model, args.delta, args.seed, D.count, expected]]


def cmd_tree(args):
    from . import tree_models as tm

    if args.word is not None:
        cfg = tm.realize_escape_word(args.word)
        sim = tm.escape_sequence(cfg, len(args.word))
        if args.config_out:
            Path(args.config_out).write_text(cfg.to_json())
        return ["word", "realized", "simulated", "depth"], \
            [[args.word, int(sim == args.word), sim, cfg.depth()]]
    rep = tm.tree_ball_theorem_suite(args.degree, args.radius, args.configs, args.seed)
    fails = " ".join(f"{s}:{r}" for s, r in rep.failures)
    if rep.failures:
        raise ChipfireError(f"ball equality failed for (seed:radius) {fails}")
    return ["d", "r_max", "configs", "failures"], [[args.degree, args.radius, args.configs, 0]]


def cmd_group(args):
    from . import sandpile_algebra as sa

    if args.ball:
        G = sa.ball_graph(args.tree_height, args.degree)
        kind = "ball"
    else:
        G, _ = sa.regular_tree(args.tree_height, args.degree)
        kind = "tree"
    g = sa.sandpile_group(G)
    return ["n", "d", "graph", "order", "invariant_factors", "elementary_divisors"], \
        [[args.tree_height, args.degree, kind, g.order, ", ".join(map(str, g.factors)),
          ", ".join(map(str, g.elementary_divisors()))]]


def cmd_render(args):
    text = Path(args.input).read_text()
    obj = json.loads(text)
    if "ordering" in obj:
        from .rotor_router import RotorConfig

        rc = RotorConfig.from_json(text)
        field = ScalarField(rc.direction.box, rc.direction.values.astype(np.int64), -1)
        palette = args.palette or "rotor-4color"
    else:
        field = DomainSet.from_json(text)
        palette = args.palette or "binary-domain"
    data = write_ppm(field, RenderSpec(palette, args.cell, args.output))
    w, h = read_ppm(data).shape[1::-1]
    return ["input", "palette", "width", "height"], [[args.input, palette, w, h]]


# ---------------------------------------------------------------- argument parsing


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chipfire", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=__doc__.split("\n\n", 1)[1])
    p.add_argument("--config", help="JSON object of flag defaults for the subcommand")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, palette, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=func, default_palette=palette)
        sp.add_argument("--out", help="CSV output path (default: stdout)")
        if palette:
            sp.add_argument("--render", help="write a PPM image here (d = 2 only)")
            sp.add_argument("--palette", choices=PALETTES)
            sp.add_argument("--cell", type=_positive_int, default=1, help="pixels per cell")
        return sp

    sp = add("divisible", cmd_divisible, "binary-domain", "divisible sandpile from a point mass")
    sp.add_argument("--mass", type=float, required=True)
    sp.add_argument("--dim", type=_positive_int, default=2)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--strategy", choices=("sweep", "queue"), default="sweep")

    sp = add("obstacle", cmd_obstacle, "binary-domain", "obstacle problem for a point mass")
    sp.add_argument("--mass", type=float, required=True)
    sp.add_argument("--dim", type=_positive_int, default=2)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--method", choices=("pgs", "active_set"), default="pgs")

    sp = add("rotor", cmd_rotor, "rotor-4color", "rotor-router aggregation")
    sp.add_argument("--n", type=_positive_int, required=True)
    sp.add_argument("--dim", type=_positive_int, default=2)
    sp.add_argument("--method", choices=("auto", "walk", "bulk", "predict"), default="auto")
    sp.add_argument("--compass-ordering", action="store_true",
                    help="compass ordering N, E, S, W with all rotors north")
    sp.add_argument("--rotors-out", help="write the final rotor grid as JSON")

    sp = add("sandpile", cmd_sandpile, "height-2d", "abelian sandpile with holes")
    sp.add_argument("--n", type=_positive_int, required=True)
    sp.add_argument("--hole", type=int, default=0)
    sp.add_argument("--dim", type=_positive_int, default=2)

    sp = add("idla", cmd_idla, "binary-domain", "internal DLA")
    sp.add_argument("--n", type=_positive_int, required=True)
    sp.add_argument("--dim", type=_positive_int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-steps", type=_positive_int, default=100_000_000)
    sp.add_argument("--dump", help="write the occupied set as JSON")

    sp = add("smash", cmd_smash, "binary-domain", "multiple point sources")
    sp.add_argument("--model", choices=("divisible", "rotor", "idla"), default="divisible")
    sp.add_argument("--centers", required=True, help='e.g. "1,0;-1,0"')
    sp.add_argument("--volumes", required=True, help='e.g. "3.14;3.14"')
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("tree", cmd_tree, None, "ball theorem suite or escape-word realization")
    sp.add_argument("--degree", type=int, default=3)
    sp.add_argument("--radius", type=int, default=4)
    sp.add_argument("--configs", type=_positive_int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--word", help="realize this ternary escape word instead")
    sp.add_argument("--config-out", help="write the realizing configuration as JSON")

    sp = add("group", cmd_group, None, "sandpile group of a regular tree")
    sp.add_argument("--tree-height", type=int, required=True)
    sp.add_argument("--degree", type=int, default=3)
    sp.add_argument("--ball", action="store_true", help="use the ball B_n instead of T_n")

    sp = add("render", cmd_render, None, "render a saved domain or rotor JSON")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--palette", choices=PALETTES)
    sp.add_argument("--cell", type=_positive_int, default=1)
    return p


def _apply_config(parser: argparse.ArgumentParser, path: str, argv: list[str]):
    """Install the JSON object at ``path`` as defaults of the chosen subcommand."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config must be a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    name = next((t for t in argv if t in sub.choices), None)
    if name is None:
        parser.error("a subcommand is required")
    sp = sub.choices[name]
    values = {k.replace("-", "_"): v for k, v in cfg.items()}
    dests = {a.dest for a in sp._actions}
    unknown = set(values) - dests
    if unknown:
        parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
    sp.set_defaults(**values)
    for a in sp._actions:
        if a.dest in values:
            a.required = False


def run_command(argv: Sequence[str] | None = None, stdout=None) -> int:
    """Run one subcommand; returns the process exit code."""
    stdout = stdout or sys.stdout
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    try:
        known, rest = pre.parse_known_args(argv)
        if known.config:
            _apply_config(parser, known.config, rest)
        args = parser.parse_args(rest)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        header, rows = args.func(args)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"chipfire {args.command}: {exc}", file=sys.stderr)
        return 2
    except ChipfireError as exc:
        print(f"chipfire {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        stdout.write(buf.getvalue())
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
