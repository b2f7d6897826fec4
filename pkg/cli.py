# cli.py
# Точка входа: python cli.py <команда> ...

import argparse
import functools
import logging
import math
import sys
from typing import Callable, Dict, List, Optional

from attack_rates import baseline_no_eve, build_strategy, totals_with_eve
from config import DEFAULT_PINHOLE_EDGE_URAD, DEFAULT_SEED, LOG_DATEFMT, LOG_FORMAT
from montecarlo import compare_to_analytic, run_trials
from optimizer import optimize_attack, sweep_loss
from scanmap import (
    PRESETS, find_attack_points, normalize_scan, pinhole_filter,
    simulate_raw_scan, synthesize_scan,
)
from shared.metrics import write_metrics
from shared.models import (
    ComparisonRecord, ComparisonRow, ConfigError, ConfigurationMismatchError, DomainError,
    EfficiencyMap, LabError, OptimizerMode, ScanFormatError, Scenario,
    SearchThresholds, TrialConfig,
)
from shared.run_config import RunConfig, load_run_config
from shared.storage import (
    read_efficiency_map, read_raw_scan, write_attack_report, write_comparison,
    write_efficiency_map, write_raw_scan, write_sweep,
)
from shared.utils import fov_from_pinhole, format_float, provenance_header

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2

THRESHOLD_PRESETS: Dict[str, Callable[[], SearchThresholds]] = {
    "paper": SearchThresholds.paper,
    "tight": SearchThresholds.tight,
}


# === Вспомогательные функции ===

def command_boundary(func):
    """Переводит исключения команды в коды выхода и пишет их в лог."""
    @functools.wraps(func)
    def wrapper(args: argparse.Namespace) -> int:
        try:
            return func(args)
        except (ConfigError, ScanFormatError, DomainError) as e:
            logger.error(f"❌ {args.command}: {e}")
            return EXIT_USAGE
        except FileNotFoundError as e:
            logger.error(f"❌ {args.command}: файл не найден: {e.filename}")
            return EXIT_USAGE
        except OSError as e:
            logger.error(f"❌ {args.command}: ошибка ввода-вывода: {e}")
            return EXIT_USAGE
        except ConfigurationMismatchError as e:
            logger.error(f"❌ {args.command}: {e}")
            return EXIT_VALIDATION
        except LabError as e:
            logger.exception(f"❌ {args.command}: {e}")
            return EXIT_VALIDATION
    return wrapper


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _load_scan(cfg: RunConfig) -> EfficiencyMap:
    if cfg.scan.path:
        return read_efficiency_map(cfg.scan.path)
    return synthesize_scan(cfg.scan.preset, cfg.seed)


def _thresholds(args: argparse.Namespace, cfg: Optional[RunConfig] = None) -> SearchThresholds:
    if args.thresholds:
        return THRESHOLD_PRESETS[args.thresholds]()
    if cfg is not None:
        return cfg.thresholds.to_thresholds()
    return SearchThresholds.paper()


def _seed(args: argparse.Namespace) -> int:
    return DEFAULT_SEED if args.seed is None else args.seed


# === Команды ===

@command_boundary
def cmd_generate_scan(args: argparse.Namespace) -> int:
    seed = _seed(args)
    emap = synthesize_scan(args.preset, seed)
    header = provenance_header("generate-scan", {"preset": args.preset, "raw": args.raw}, seed)
    if args.raw:
        write_raw_scan(args.out, simulate_raw_scan(emap, seed), header)
    else:
        write_efficiency_map(args.out, emap, header)
    print(f"{args.out}: {emap.grid.n_phi * emap.grid.n_theta} cells")
    return EXIT_OK


@command_boundary
def cmd_normalize_scan(args: argparse.Namespace) -> int:
    raw = read_raw_scan(args.raw_path)
    emap = normalize_scan(raw)
    header = provenance_header("normalize-scan", {"input": args.raw_path}, _seed(args))
    write_efficiency_map(args.out, emap, header)
    print(f"{args.out}: {emap.grid.n_phi * emap.grid.n_theta} cells")
    return EXIT_OK


@command_boundary
def cmd_analyze_scan(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config) if args.config else None
    thresholds = _thresholds(args, cfg)
    emap = read_efficiency_map(args.map_path)
    result = find_attack_points(emap, thresholds)
    if args.out:
        header = provenance_header(
            "analyze-scan",
            {"map": args.map_path, "thresholds": thresholds.as_dict()},
            _seed(args),
        )
        write_attack_report(args.out, result.all_points(), header)
    for line in result.summary_lines():
        print(line)
    return EXIT_OK


@command_boundary
def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    if args.mode:
        cfg = cfg.with_overrides(optimizer__mode=args.mode)
    opt = cfg.optimizer.to_config(cfg.seed)
    emap = _load_scan(cfg)
    search = find_attack_points(emap, cfg.thresholds.to_thresholds())
    if not search.is_complete:
        logger.warning("⚠️ Не для всех поляризаций найдены точки атаки")

    logger.info(f"🔄 Развёртка: {len(cfg.link.loss_grid)} точек, режим {opt.mode.value}")
    results = sweep_loss(
        cfg.link.loss_grid,
        search.best,
        cfg.receiver.to_receiver(),
        cfg.eve.to_eve(),
        opt,
        fidelity_ab=cfg.link.fidelity_ab,
        fidelity_eb=cfg.link.fidelity_eb,
    )
    write_sweep(args.out, results, provenance_header("sweep", cfg.resolved_dict(), cfg.seed))
    for r in results:
        print(
            f"{format_float(r.loss_db)} dB: QBER_ab={r.qber_ab:.4%} QBER_e={r.qber_e:.4%} "
            f"{'converged' if r.converged else r.status}"
        )
    return EXIT_OK


@command_boundary
def cmd_countermeasure(args: argparse.Namespace) -> int:
    emap = read_efficiency_map(args.map_path)
    thresholds = THRESHOLD_PRESETS[args.thresholds]()
    if args.pinhole_um:
        settings = [(f"pinhole {d:g} um", fov_from_pinhole(d)) for d in args.pinhole_um]
    else:
        settings = [("fov", args.fov_urad)]

    filtered = emap
    for label, fov in settings:
        filtered = pinhole_filter(emap, fov, args.edge_urad)
        result = find_attack_points(filtered, thresholds)
        verdict = "SECURE" if result.is_empty else "VULNERABLE"
        counts = " ".join(f"{p.value}={result.count(p)}" for p in result.best)
        print(f"{label} (fov={format_float(fov)} urad): {verdict} [{counts}]")

    if args.out:
        header = provenance_header(
            "countermeasure",
            {
                "map": args.map_path,
                "fov_urad": format_float(settings[-1][1]),
                "edge_urad": args.edge_urad,
                "thresholds": thresholds.as_dict(),
            },
            _seed(args),
        )
        write_efficiency_map(args.out, filtered, header)
    return EXIT_OK


def _attack_strategy(cfg: RunConfig, loss_db: float):
    emap = _load_scan(cfg)
    search = find_attack_points(emap, cfg.thresholds.to_thresholds())
    link = cfg.link.to_link(loss_db)
    result = optimize_attack(
        search.best, link, cfg.receiver.to_receiver(), cfg.eve.to_eve(),
        cfg.optimizer.to_config(cfg.seed),
    )
    if not result.converged:
        logger.warning(f"⚠️ Стратегия не сошлась ({result.message}), проверяется найденная точка")
    return result.mu, search.best


@command_boundary
def cmd_montecarlo(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    if args.n_pulses is not None:
        cfg = cfg.with_overrides(montecarlo__n_pulses=args.n_pulses)
    loss_db = cfg.mc_loss_db
    link = cfg.link.to_link(loss_db)
    receiver = cfg.receiver.to_receiver()

    rows = []
    for scenario in cfg.montecarlo.scenarios:
        strategy = None
        if scenario is Scenario.FAKED_STATE_ATTACK:
            mu, best = _attack_strategy(cfg, loss_db)
            strategy = build_strategy(best, mu, cfg.eve.to_eve(), link.fidelity_eb, cfg.optimizer.mu_max)
            report = totals_with_eve(strategy, link, receiver)
        else:
            report = baseline_no_eve(link, receiver)
        trial = TrialConfig(
            n_pulses=cfg.montecarlo.n_pulses,
            seed=cfg.seed,
            scenario=scenario,
            link=link,
            receiver=receiver,
            strategy=strategy,
        )
        record = compare_to_analytic(run_trials(trial), report)
        rows.extend(
            ComparisonRow(f"{scenario.value}:{row.quantity}", row.analytic, row.estimate, row.stderr, row.z, row.limit)
            for row in record.rows
        )

    combined = ComparisonRecord(rows=tuple(rows), scenario=cfg.montecarlo.scenarios[0])
    write_comparison(args.out, combined, provenance_header("montecarlo", cfg.resolved_dict(), cfg.seed))
    for row in combined.rows:
        z = "insufficient data" if row.z is None else f"{row.z:+.2f}"
        print(f"{row.quantity}: analytic={row.analytic:.6g} estimate={row.estimate:.6g} z={z}")
    if not combined.passed:
        names = ", ".join(row.quantity for row in combined.failures())
        logger.error(f"❌ |z| > {combined.failures()[0].limit:g}: {names}")
        return EXIT_VALIDATION
    return EXIT_OK


# === Разбор аргументов ===

def _fov(value: str) -> float:
    fov = float(value)
    if math.isnan(fov) or fov <= 0:
        raise argparse.ArgumentTypeError(f"поле зрения должно быть > 0: {value}")
    return fov


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="сид генераторов")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="подробный лог (DEBUG)")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="только предупреждения")
    common.add_argument("--metrics", metavar="PATH", help="записать метрики Prometheus в файл")

    parser = argparse.ArgumentParser(
        prog="cli.py",
        description="Лаборатория атаки на рассогласование эффективностей детекторов (BB84)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-scan", parents=[common], help="синтезировать угловую карту")
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper-like")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--raw", action="store_true", help="записать сырой скан (отсчёты/с) вместо карты")
    p.set_defaults(handler=cmd_generate_scan)

    p = sub.add_parser("normalize-scan", parents=[common], help="нормировать сырой скан")
    p.add_argument("raw_path")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(handler=cmd_normalize_scan)

    p = sub.add_parser("analyze-scan", parents=[common], help="найти углы атаки")
    p.add_argument("map_path")
    p.add_argument("--thresholds", choices=sorted(THRESHOLD_PRESETS), default=None)
    p.add_argument("--config")
    p.add_argument("-o", "--out")
    p.set_defaults(handler=cmd_analyze_scan)

    p = sub.add_parser("sweep", parents=[common], help="QBER с атакой и без по сетке потерь")
    p.add_argument("--config")
    p.add_argument("--mode", choices=[m.value for m in OptimizerMode], default=None)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("countermeasure", parents=[common], help="проверить диафрагму")
    p.add_argument("map_path")
    fov = p.add_mutually_exclusive_group(required=True)
    fov.add_argument("--fov-urad", type=_fov, help="полный угол поля зрения, мкрад (inf — без фильтра)")
    fov.add_argument("--pinhole-um", type=float, action="append", help="диаметр диафрагмы, мкм")
    p.add_argument("--edge-urad", type=float, default=DEFAULT_PINHOLE_EDGE_URAD)
    p.add_argument("--thresholds", choices=sorted(THRESHOLD_PRESETS), default="tight")
    p.add_argument("-o", "--out", help="отфильтрованная карта (для последней диафрагмы)")
    p.set_defaults(handler=cmd_countermeasure)

    p = sub.add_parser("montecarlo", parents=[common], help="сравнить формулы с моделированием")
    p.add_argument("--config")
    p.add_argument("--n-pulses", type=int, default=None)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(handler=cmd_montecarlo)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code is None else int(e.code)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT, stream=sys.stderr)
    logging.getLogger().setLevel(level)

    code = args.handler(args)
    if args.metrics:
        try:
            write_metrics(args.metrics)
        except OSError as e:
            logger.error(f"❌ Не удалось записать метрики: {e}")
            code = code or EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
