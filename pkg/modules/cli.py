"""
🖥️ Command Line Interface
Subcommands for the whole experiment lifecycle.

Exit codes: 0 success, 1 validation or usage error, 2 runtime error.
"""

import argparse
import logging
import sys
from typing import List, Optional

from modules.attack_core import TauMode
from modules.attack_driver import AttackMode
from modules.diffnet import Architecture
from modules.exceptions import ValidationError
from modules.experiment_config import ExperimentGuard
from modules.experiment_runner import ExperimentRunner, RunOutcome
from modules.report_builder import ReportKind, summarize
from modules.utils import load_config, load_env_variables, parse_float_list, setup_logging

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

COMMANDS = ['gen-data', 'train', 'attack', 'baseline-sweep', 'eval', 'transfer-matrix', 'ota-sim', 'report']


def _common_options(suppress: bool) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand"""
    default = argparse.SUPPRESS if suppress else None
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=default, help='Config file (default: $FLICKER_LAB_CONFIG or config.yaml)')
    common.add_argument('--seed', type=int, default=default, help='Global seed; overrides runtime.seed')
    common.add_argument('--log-level', default=default,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'], help='Logging level')
    common.add_argument('--output-dir', default=default, help='Overrides runtime.output_dir')
    return common


def setup_argparse() -> argparse.ArgumentParser:
    """Build the command line parser"""
    parser = argparse.ArgumentParser(
        prog='flicker-lab',
        description='Flickering adversarial perturbations against video classifiers',
        parents=[_common_options(suppress=False)]
    )
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True
    common = [_common_options(suppress=True)]

    gen = sub.add_parser('gen-data', parents=common, help='Generate the synthetic train/eval splits')
    gen.add_argument('--data-dir', help='Output directory for the splits')

    train = sub.add_parser('train', parents=common, help='Train a classifier checkpoint')
    train.add_argument('--variant', choices=[a.value for a in Architecture], help='Architecture variant')
    train.add_argument('--data-dir', help='Dataset directory written by gen-data')
    train.add_argument('--checkpoint', help='Checkpoint path to write')

    attack = sub.add_parser('attack', parents=common, help='Optimize a flicker perturbation')
    attack.add_argument('--mode', required=True, choices=[m.value for m in AttackMode])
    attack.add_argument('--linf-pct', type=float, help='l-inf budget in percent of the intensity range')
    attack.add_argument('--time-invariant', action='store_true', help='Train against random cyclic shifts')
    attack.add_argument('--target-class', type=int, help='Class to attack in single_class mode')
    attack.add_argument('--clips', type=int, help='Clips in a single_video campaign (default: all clean clips)')
    attack.add_argument('--beta-sweep', action='store_true',
                        help='single_video only: thickness/roughness trade-off on one clip')
    attack.add_argument('--checkpoint', help='Model checkpoint')
    attack.add_argument('--name', help='Artifact name')

    sweep = sub.add_parser('baseline-sweep', parents=common, help='Universal attack vs random flicker baselines')
    sweep.add_argument('--linf-pct', type=parse_float_list, help='Budgets, e.g. 5,10,15,20')
    sweep.add_argument('--repeats', type=int, help='Draws per random baseline')
    sweep.add_argument('--checkpoint', help='Model checkpoint')

    evaluate = sub.add_parser('eval', parents=common, help='Evaluate a stored perturbation')
    evaluate.add_argument('--delta', required=True, help='FLKP file or AttackResult JSON')
    evaluate.add_argument('--tau-mode', default=TauMode.SYNCHRONIZED.value, choices=[t.value for t in TauMode])
    evaluate.add_argument('--checkpoint', help='Model checkpoint')

    transfer = sub.add_parser('transfer-matrix', parents=common, help='Cross-model transferability matrix')
    transfer.add_argument('--checkpoints', nargs='+', help='Model checkpoints (default: model A and model B)')
    transfer.add_argument('--linf-pct', type=float, help='l-inf budget in percent')

    ota = sub.add_parser('ota-sim', parents=common, help='Simulated over-the-air trials')
    ota.add_argument('--delta', help='Universal perturbation to replay over the eval split')
    ota.add_argument('--variants', type=int, help='Re-rendered scene variants')
    ota.add_argument('--linf-pct', type=float, help='Budget of the scene attack')
    ota.add_argument('--checkpoint', help='Model checkpoint')

    report = sub.add_parser('report', parents=common, help='Aggregate artifacts into tables and plot data')
    report.add_argument('--kind', required=True, choices=[k.value for k in ReportKind])
    report.add_argument('--inputs', required=True, nargs='+', help='JSON artifacts')
    report.add_argument('--out-dir', help='Report directory')

    return parser


def dispatch(runner: ExperimentRunner, args: argparse.Namespace) -> RunOutcome:
    """Run the subcommand named in args"""
    if args.command == 'gen-data':
        return runner.gen_data(args.data_dir)
    if args.command == 'train':
        return runner.train(args.variant, args.data_dir, args.checkpoint)
    if args.command == 'attack':
        if args.beta_sweep and args.mode != AttackMode.SINGLE_VIDEO.value:
            raise ValidationError("--beta-sweep needs --mode single_video")
        return runner.attack(args.mode, args.linf_pct, args.time_invariant, args.target_class,
                             args.clips, args.checkpoint, args.name, args.beta_sweep)
    if args.command == 'baseline-sweep':
        return runner.baseline_sweep(args.linf_pct, args.repeats, args.checkpoint)
    if args.command == 'eval':
        return runner.evaluate(args.delta, args.tau_mode, args.checkpoint)
    if args.command == 'transfer-matrix':
        return runner.transfer_matrix(args.checkpoints, args.linf_pct)
    if args.command == 'ota-sim':
        return runner.ota_sim(args.delta, args.variants, args.linf_pct, args.checkpoint)
    return runner.report(args.kind, args.inputs, args.out_dir)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        Process exit code
    """
    parser = setup_argparse()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, usage errors exit 2 inside argparse
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION

    load_env_variables()
    config = load_config(args.config)
    setup_logging(config, args.log_level)
    logger = logging.getLogger(__name__)

    try:
        ExperimentGuard(config).ensure_valid(enforce=True)
        runner = ExperimentRunner(config, seed=args.seed, output_dir=args.output_dir)
        outcome = dispatch(runner, args)
    except ValidationError as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_VALIDATION
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_RUNTIME

    print(summarize(outcome.table, f"\n📊 {outcome.title}"))
    for name, path in sorted(outcome.artifacts.items()):
        print(f"  • {name}: {path}")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
