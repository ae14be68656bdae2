#!/usr/bin/env python3
"""
recurnet command-line interface.

Usage:
    recurnet net describe --net z2.json
    recurnet green --net z2.json --radii 10,20,40 --tol 1e-6
    recurnet potential --net z.json --shape asym --radii 5,10,20
    recurnet hmeasure --net z2.json --set "(0,0),(1,0)" --route limit --radii 8,16
    recurnet hsim --net z2.json --paths 1000 --seed 7 --compress
    recurnet ust --net grid.json --samples 100000
    recurnet minimax --net z.json --inner 1 --radii 2,4,8
    recurnet verify --only green-symmetry,lipschitz

Every run writes its artifacts and a ``manifest.json`` under ``--out``. A
failed run writes ``error.json`` instead and exits with status 2; ``verify``
exits with status 1 when a check fails.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from cli.report import ReportWriter, write_error
from cli.verify import INJECTIONS, VerifyContext, verify_all
from core.config import get_global_config
from core.exceptions import ConfigurationException, RecurnetException
from core.green import killed_green_table, stabilized_green_o
from core.harmonic_measure import (
    MeasureRoute,
    harmonic_measure_det,
    harmonic_measure_exact,
    harmonic_measure_infinity,
    harmonic_measure_mc,
    harmonic_measure_root_shift,
)
from core.hprocess import StopRule, empirical_green_check, escape_profile, last_exit_distribution, simulate_paths
from core.linsolve import BoundaryMode
from core.minimax import v_limit
from core.potentials import exhaustion_potential, potential_from_exhaustion, validate_potential
from core.ust import ENUMERATION_CAP, end_profile, matrix_tree_weight, sample_trees, tree_chi_square, tree_prob_enumerate
from networks.base_network import Network
from networks.generators import build_network
from networks.region import ball_exhaustion, ball_region, make_exhaustion, vertex_set_region
from networks.spec import NetworkSpec, load_spec
from utils.logging_config import bind_run_context, log_exception, log_performance, setup_logging
from utils.math_helpers import proportion_stderr
from utils.validation import is_strictly_increasing, parse_int_list

logger = logging.getLogger(__name__)

SHAPES = ('ball', 'box', 'asym', 'level')
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


class RunConfig(BaseModel):
    """Validated arguments of one CLI run"""
    command: Literal['net', 'green', 'potential', 'hmeasure', 'hsim', 'ust', 'minimax', 'verify']
    action: Optional[str] = Field(default=None, description="Sub-action, e.g. 'describe' for net")
    net: Optional[Path] = Field(default=None, description="Network spec JSON file")
    seed: int = Field(default=0, ge=0, lt=2 ** 64, description="Master seed")
    tol: float = Field(default=1e-6, gt=0, description="Convergence tolerance")
    radii: List[int] = Field(default_factory=lambda: [10, 20, 40], description="Increasing radii")
    out: Path = Field(default=Path('out'), description="Output directory")
    route: MeasureRoute = Field(default=MeasureRoute.DET, description="Harmonic measure route")
    paths: Optional[int] = Field(default=None, gt=0, description="Monte Carlo path count")
    only: List[str] = Field(default_factory=list, description="verify: checks to run")
    inject: List[str] = Field(default_factory=list, description="verify: deliberate faults")
    shape: str = Field(default='ball', description="potential: exhaustion shape")
    vertex_set: Optional[str] = Field(default=None, description="hmeasure: the finite set A")
    start: Optional[str] = Field(default=None, description="hmeasure: starting vertex")
    eps: Optional[float] = Field(default=None, gt=0, lt=1, description="hsim: return-probability bound")
    level: Optional[float] = Field(default=None, gt=0, description="hsim: explicit stop level")
    budget: Optional[int] = Field(default=None, gt=0, description="hsim: step budget")
    compress: bool = Field(default=False, description="hsim: gzip the path file")
    inner: int = Field(default=1, ge=1, description="ust/minimax: inner radius r")
    samples: int = Field(default=1000, gt=0, description="ust: number of samples")
    boundary: BoundaryMode = Field(default=BoundaryMode.ABSORBING, description="green: truncation mode")

    @field_validator('radii')
    @classmethod
    def validate_radii(cls, v):
        """Radii must be positive and strictly increasing"""
        if not v:
            raise ValueError("at least one radius is required")
        if v[0] < 1 or not is_strictly_increasing(v):
            raise ValueError(f"radii must be positive and strictly increasing, got {v}")
        return v

    @field_validator('shape')
    @classmethod
    def validate_shape(cls, v):
        if v not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        return v

    @field_validator('inject')
    @classmethod
    def validate_inject(cls, v):
        unknown = sorted(set(v) - set(INJECTIONS))
        if unknown:
            raise ValueError(f"unknown injections {unknown}; available: {list(INJECTIONS)}")
        return v

    @model_validator(mode='after')
    def check_command(self) -> 'RunConfig':
        if self.command != 'verify' and self.net is None:
            raise ValueError("--net is required for this command")
        if self.command == 'net' and self.action != 'describe':
            raise ValueError("net supports the 'describe' action only")
        if self.command == 'hmeasure' and not self.vertex_set:
            raise ValueError("hmeasure needs --set")
        return self

    @property
    def n_paths(self) -> int:
        return self.paths or get_global_config().monte_carlo.n_paths

    def arguments(self) -> Dict[str, Any]:
        """Arguments as recorded in the manifest"""
        return self.model_dump(mode='json')


def _field_of(error: ValidationError) -> str:
    loc = error.errors()[0].get('loc', ())
    return '.'.join(str(p) for p in loc) or 'arguments'


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    try:
        return parse_int_list(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from e


def _name_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(',') if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--net', type=str, help='Network spec JSON file')
    common.add_argument('--seed', type=int, default=0, help='Master seed, 0 <= seed < 2^64 (default: 0)')
    common.add_argument('--tol', type=float, default=1e-6, help='Convergence tolerance (default: 1e-6)')
    common.add_argument('--radii', type=_int_list, default=[10, 20, 40],
                        help='Comma-separated increasing radii (default: 10,20,40)')
    common.add_argument('--out', type=str, default=None, help='Output directory (default: RECURNET_OUT_DIR or out)')
    common.add_argument('--route', choices=[r.value for r in MeasureRoute], default=MeasureRoute.DET.value,
                        help='Harmonic measure route (default: det)')
    common.add_argument('--paths', type=int, default=None, help='Monte Carlo path count')
    common.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    common.add_argument('--json-logs', action='store_true', help='Emit JSON log records')

    parser = argparse.ArgumentParser(prog='recurnet', description='Potentials and h-processes on recurrent networks')
    sub = parser.add_subparsers(dest='command', required=True)

    net = sub.add_parser('net', parents=[common], help='Inspect a network spec')
    net.add_argument('action', choices=['describe'])

    green = sub.add_parser('green', parents=[common], help='Stabilized Green function g_o')
    green.add_argument('--boundary', choices=[m.value for m in BoundaryMode], default=BoundaryMode.ABSORBING.value,
                       help='Truncation mode (default: absorbing)')

    potential = sub.add_parser('potential', parents=[common], help='Potential from an exhaustion')
    potential.add_argument('--shape', choices=SHAPES, default='ball', help='Exhaustion shape (default: ball)')

    hmeasure = sub.add_parser('hmeasure', parents=[common], help='Harmonic measure on a finite set')
    hmeasure.add_argument('--set', dest='vertex_set', required=True, help='Vertex list, e.g. "(0,0),(1,0)"')
    hmeasure.add_argument('--from', dest='start', default=None, help='Starting vertex (default: from infinity)')

    hsim = sub.add_parser('hsim', parents=[common], help='Simulate h-process paths')
    hsim.add_argument('--eps', type=float, default=None, help='Return-probability bound')
    hsim.add_argument('--level', type=float, default=None, help='Explicit minimum stop level')
    hsim.add_argument('--budget', type=int, default=None, help='Step budget per path')
    hsim.add_argument('--compress', action='store_true', help='gzip the path file')

    ust = sub.add_parser('ust', parents=[common], help='Uniform spanning trees by Wilson\'s algorithm')
    ust.add_argument('--inner', type=int, default=1, help='Inner radius r of the end profile (default: 1)')
    ust.add_argument('--samples', type=int, default=1000, help='Number of samples (default: 1000)')
    ust.add_argument('--eps', type=float, default=None, help='Return-probability bound for the h-paths')

    minimax = sub.add_parser('minimax', parents=[common], help='Game values V(R, r) along --radii')
    minimax.add_argument('--inner', type=int, default=1, help='Inner radius r (default: 1)')

    verify = sub.add_parser('verify', parents=[common], help='Run the identity suite')
    verify.add_argument('--only', type=_name_list, default=[], help='Comma-separated check names')
    verify.add_argument('--inject', type=_name_list, default=[], help=f'Deliberate faults: {", ".join(INJECTIONS)}')
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    Build the validated run configuration.

    Raises:
        ConfigurationException: an argument fails validation; ``field`` names it
    """
    values = {k: v for k, v in vars(args).items() if v is not None and k not in ('log_level', 'json_logs')}
    values.setdefault('out', get_global_config().output.out_dir)
    try:
        return RunConfig(**values)
    except ValidationError as e:
        field_name = _field_of(e)
        raise ConfigurationException(f"{field_name}: {e.errors()[0]['msg']}", {'field': field_name}) from e


# ----------------------------------------------------------------------
# Command handlers
# ----------------------------------------------------------------------

Handler = Callable[[RunConfig, NetworkSpec, Network, ReportWriter], int]


def run_net(cfg: RunConfig, spec: NetworkSpec, net: Network, writer: ReportWriter) -> int:
    canonical = spec.canonical_json()
    writer.write_lines('network.json', [canonical], 'network-core', 'canonical_json')
    info = net.describe()
    if not net.finite:
        info['layer_sizes'] = {str(r): len(net.sphere(r)) for r in cfg.radii}
    writer.write_json('describe.json', info, 'network-core', 'describe')
    print(canonical)
    return EXIT_OK


def run_green(cfg: RunConfig, spec: NetworkSpec, net: Network, writer: ReportWriter) -> int:
    table = stabilized_green_o(net, net.root, cfg.radii, cfg.tol, cfg.boundary)
    labels = np.array(table.region.labels(), dtype=object)
    n = len(labels)
    frame = pd.DataFrame({
        'x': np.repeat(labels, n),
        'y': np.tile(labels, n),
        'g': table.matrix.ravel(),
    })
    writer.write_csv('green.csv', frame, 'linsolve-green', 'stabilized_green_o', table.certificate)
    writer.write_json('green.json', {
        'root': net.display(net.root),
        'region': table.region.describe(),
        'boundary': cfg.boundary.value,
        'symmetry_defect': table.symmetry_defect(),
        'certificate': table.certificate,
    }, 'linsolve-green', 'stabilized_green_o', table.certificate)
    if table.certificate is not None and not table.certificate.converged:
        logger.warning("Green table did not stabilize; see green.json")
    return EXIT_OK


def run_potential(cfg: RunConfig, spec: NetworkSpec, net: Network, writer: ReportWriter) -> int:
    target = None
    if cfg.shape == 'level':
        target = exhaustion_potential(net, ball_region(net, 2 * cfg.radii[-1])).values
    exhaustion = make_exhaustion(net, cfg.shape, cfg.radii, h=target)
    h = potential_from_exhaustion(net, exhaustion, cfg.tol)
    report = validate_potential(net, h, seed=cfg.seed)
    writer.write_csv('potential.csv', h.to_frame(), 'potentials', 'potential_from_exhaustion', h.certificate)
    writer.write_json('potential.json', {
        'name': h.name,
        'shape': cfg.shape,
        'certificate': h.certificate,
        'validation': report,
    }, 'potentials', 'validate_potential', h.certificate)

    members = h.region.members
    xs, ys = [], []
    rho = 1
    while net.sphere(rho) and all(v in members for v in net.sphere(rho)):
        xs.append(rho)
        ys.append(min(h(v) for v in net.sphere(rho)))
        rho += 1
    writer.write_series('potential_min_sphere.csv', xs, ys, None, 'potentials', 'min_on_spheres')
    if not report.passed:
        logger.warning("Potential failed validation; see potential.json")
    return EXIT_OK


def _measure(cfg: RunConfig, net: Network):
    A = net.parse_vertex_set(cfg.vertex_set or '')
    route = cfg.route
    if cfg.start is not None:
        v = net.parse_vertex_set(cfg.start)
        if len(v) != 1:
            raise ConfigurationException("--from takes a single vertex", {'field': 'from'})
        region = ball_region(net, cfg.radii[-1])
        if route == MeasureRoute.DIRECT:
            return harmonic_measure_exact(net, A, v[0], region), None
        if route == MeasureRoute.DET:
            table = killed_green_table(net, region, [min(A)])
            return harmonic_measure_det(table, table.column(v[0]), A), None
        raise ConfigurationException(f"route '{route.value}' measures from infinity; drop --from", {'field': 'from'})

    if route == MeasureRoute.DIRECT:
        raise ConfigurationException("route 'direct' needs --from", {'field': 'from'})
    if route == MeasureRoute.DET:
        h = potential_from_exhaustion(net, ball_exhaustion(net, cfg.radii), cfg.tol)
        return harmonic_measure_root_shift(net, h, A, cfg.radii, cfg.tol), h.certificate
    if route == MeasureRoute.LIMIT:
        return harmonic_measure_infinity(net, A, cfg.radii, cfg.tol)
    h = exhaustion_potential(net, ball_region(net, cfg.radii[-1]))
    rule = StopRule(vertex_set_region(net, A))
    return harmonic_measure_mc(net, h, A, cfg.n_paths, cfg.seed, rule=rule), None


def run_hmeasure(cfg: RunConfig, spec: NetworkSpec, net: Network, writer: ReportWriter) -> int:
    measure, certificate = _measure(cfg, net)
    op = f"harmonic_measure_{cfg.route.value}"
    writer.write_csv('hmeasure.csv', measure.to_frame(), 'harmonic-measure', op, certificate)
    writer.write_json('hmeasure.json', {
        'measure': measure,
        'from': cfg.start or 'infinity',
        'certificate': certificate,
    }, 'harmonic-measure', op, certificate)
    return EXIT_OK


def run_hsim(cfg: RunConfig, spec: NetworkSpec, net: Network, writer: ReportWriter) -> int:
    h = exhaustion_potential(net, ball_region(net, cfg.radii[-1]))
    D = ball_region(net, cfg.radii[0])
    rule = StopRule(D, epsilon=cfg.eps, budget=cfg.budget, level=cfg.level)
    result = simulate_paths(net, h, rule, cfg.n_paths, cfg.seed)

    lines = (' '.join(path.labels(net)) for path in result.paths)
    writer.write_lines('paths.txt', lines, 'hprocess-sim', 'simulate', compress=cfg.compress)

    targets = net.sphere(1)
    green = empirical_green_check(result, targets)
    exits = last_exit_distribution(result, D)
    writer.write_json('hsim.json', {
        'simulation': result,
        'green_check': green,
        'last_exit': exits,
    }, 'hprocess-sim', 'simulate', {'passed': green['passed']})

    max_len = max(len(p) for p in result.paths)
    steps = list(range(0, max_len, max(1, max_len // 50)))
    profile = escape_profile(result, 0.5 * (h.killed_level or result.stop_level), steps)
    writer.write_series('escape_profile.csv', steps, [profile[s] for s in steps],
                        [proportion_stderr(profile[s], result.n_paths) for s in steps],
                        'hprocess-sim', 'escape_profile')
    return EXIT_OK


def run_ust(cfg: RunConfig, spec: NetworkSpec, net: Network, writer: ReportWriter) -> int:
    if net.finite:
        region = ball_region(net, net.max_layer())
        trees = sample_trees(net, region, cfg.samples, cfg.seed)
        writer.write_csv('tree.csv', pd.DataFrame(trees[0].to_rows()), 'ust-wilson', 'wilson_ust')
        summary: Dict[str, Any] = {'samples': cfg.samples, 'total_weight': matrix_tree_weight(net, region)}
        if len(region) <= ENUMERATION_CAP:
            summary['chi_square'] = tree_chi_square(trees, tree_prob_enumerate(net, region))
        writer.write_json('ust.json', summary, 'ust-wilson', 'tree_chi_square', summary.get('chi_square'))
        return EXIT_OK

    region = ball_region(net, cfg.radii[0])
    tree = sample_trees(net, region, 1, cfg.seed)[0]
    writer.write_csv('tree.csv', pd.DataFrame(tree.to_rows()), 'ust-wilson', 'wilson_ust')
    walk_radius = 2 * cfg.radii[-1]
    h = exhaustion_potential(net, ball_region(net, walk_radius))
    profile = end_profile(net, [h], cfg.inner, cfg.radii, cfg.samples, cfg.seed,
                          epsilon=cfg.eps, walk_radius=walk_radius)
    rows = profile.series()
    writer.write_json('end_profile.json', profile, 'ust-wilson', 'end_profile')
    writer.write_series('end_profile.csv', [r['R'] for r in rows], [r['frequency'] for r in rows],
                        [r['stderr'] for r in rows], 'ust-wilson', 'end_profile')
    return EXIT_OK


def run_minimax(cfg: RunConfig, spec: NetworkSpec, net: Network, writer: ReportWriter) -> int:
    h = exhaustion_potential(net, ball_region(net, cfg.radii[-1] + 1))
    result = v_limit(net, cfg.inner, cfg.radii, cfg.tol, h=h)
    writer.write_csv('minimax.csv', result.to_frame(), 'minimax-game', 'v_limit', result.certificate)
    writer.write_json('minimax.json', {
        'limit': result,
        'games': [s.to_dict(net) for s in result.solutions],
    }, 'minimax-game', 'v_limit', result.certificate)
    return EXIT_OK


HANDLERS: Dict[str, Handler] = {
    'net': run_net,
    'green': run_green,
    'potential': run_potential,
    'hmeasure': run_hmeasure,
    'hsim': run_hsim,
    'ust': run_ust,
    'minimax': run_minimax,
}


def run_verify(cfg: RunConfig, writer: ReportWriter) -> int:
    ctx = VerifyContext(seed=cfg.seed, paths=cfg.paths, tol=cfg.tol, inject=set(cfg.inject))
    results = verify_all(cfg.only, ctx)
    for result in results:
        print(result.line())
    frame = pd.DataFrame({
        'check': [r.name for r in results],
        'passed': [r.passed for r in results],
        'residual': [r.residual for r in results],
    })
    passed = all(r.passed for r in results)
    writer.write_csv('verify.csv', frame, 'cli-report', 'verify')
    writer.write_json('verify.json', {'passed': passed, 'checks': results}, 'cli-report', 'verify')
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def dispatch(cfg: RunConfig) -> int:
    """Run one validated command and write its manifest"""
    writer = ReportWriter(cfg.out)
    spec_dict = None
    with log_performance(logger, f"recurnet {cfg.command}"):
        if cfg.command == 'verify':
            status = run_verify(cfg, writer)
        else:
            spec = load_spec(cfg.net)
            spec_dict = spec.model_dump(mode='json')
            status = HANDLERS[cfg.command](cfg, spec, build_network(spec), writer)
    writer.write_manifest(cfg.command, spec_dict, cfg.arguments(), cfg.seed,
                          status='ok' if status == EXIT_OK else 'checks-failed')
    return status


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(level=args.log_level, json_format=args.json_logs)
    bind_run_context(args.command, args.seed)

    out = Path(args.out or get_global_config().output.out_dir)
    try:
        cfg = config_from_args(args)
        return dispatch(cfg)
    except (RecurnetException, ValueError) as e:
        log_exception(logger, e, f"recurnet {args.command} failed: {e}")
        path = write_error(out, e, args.command)
        print(f"error: {e} (details in {path})", file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
