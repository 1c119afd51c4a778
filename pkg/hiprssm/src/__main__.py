#!/usr/bin/env python3
"""
HiP-RSSM CLI Entry Point
Usage: python hiprssm/src/__main__.py <command> [options]

Commands:
  generate-data      - Simulate a changing-dynamics benchmark dataset
  train              - Train HiP-RSSM or one of its baselines
  eval               - Score a checkpoint under the evaluation protocols
  infer              - Sliding-window task inference over one trajectory
  export-embeddings  - Task-posterior means of held-out windows with PCA
  print-config       - Print the fully-defaulted run config as JSON

Exit codes: 0 ok, 1 numerical/usage error, 2 invalid config, 3 I/O or
dataset format error, 4 non-finite loss, 5 checkpoint mismatch.
"""

import sys
import argparse
from pathlib import Path

# Add current directory to Python path for imports
current_dir = Path(__file__).parent
if str(current_dir) not in sys.path:
    sys.path.insert(0, str(current_dir))

from config import DEFAULT_CONFIG_PATH, dump_config, load_config
from errors import NonFiniteLoss, exit_code_for
from evaluation import PROTOCOLS
from pipeline import (create_run_emitter, resolve_config, run_evaluate, run_export, run_generate,
                      run_infer, run_train)


def _overrides(args, extra=()):
    return list(getattr(args, 'set', None) or []) + list(extra)


def _config_path(args):
    """--config as a Path, or None"""
    return Path(args.config) if getattr(args, 'config', None) else None


def _fail(stage: str, error: BaseException, verbose: bool) -> int:
    print(f"[X] {stage} failed: {error}")
    if isinstance(error, NonFiniteLoss) and error.dump_path:
        print(f"    diagnostics: {error.dump_path}")
    if verbose:
        import traceback
        traceback.print_exc()
    return exit_code_for(error)


def cmd_generate_data(args):
    """Simulate trajectories and write the dataset directory"""
    try:
        cfg = load_config(_config_path(args) or DEFAULT_CONFIG_PATH, _overrides(args),
                          seed=args.seed, seed_section="sim")
        emitter = create_run_emitter(args.out, "generate", args.verbose)
        run_generate(cfg, args.out, emitter)
        return 0
    except Exception as e:
        return _fail("generate-data", e, args.verbose)


def cmd_train(args):
    """Train a model; --checkpoint resumes where a previous run stopped"""
    extra = [f"train.baseline={args.baseline}"] if args.baseline else []
    try:
        cfg = load_config(_config_path(args) or DEFAULT_CONFIG_PATH, _overrides(args, extra), seed=args.seed)
        emitter = create_run_emitter(args.out, "train", args.verbose)
        result = run_train(cfg, args.data, args.out, checkpoint_dir=args.checkpoint, emitter=emitter)
        print(f"[OK] Checkpoint: {result.checkpoint_dir}")
        return 0
    except Exception as e:
        return _fail("train", e, args.verbose)


def cmd_eval(args):
    """Evaluate a checkpoint on the held-out split"""
    extra = [f"eval.horizon={args.horizon}"] if args.horizon is not None else []
    protocols = list(PROTOCOLS) if args.protocol == "all" else [args.protocol]
    try:
        cfg = resolve_config(_config_path(args), _overrides(args, extra), checkpoint_dir=args.checkpoint)
        emitter = create_run_emitter(args.out, "eval", args.verbose)
        run_evaluate(cfg, args.data, args.checkpoint, args.out, protocols, emitter)
        return 0
    except Exception as e:
        return _fail("eval", e, args.verbose)


def cmd_infer(args):
    """Sliding-window task inference over one trajectory"""
    try:
        cfg = resolve_config(_config_path(args), _overrides(args), checkpoint_dir=args.checkpoint)
        emitter = create_run_emitter(args.out, "infer", args.verbose)
        run_infer(cfg, args.data, args.checkpoint, args.out, args.trajectory,
                  include_first=args.include_first, emitter=emitter)
        return 0
    except Exception as e:
        return _fail("infer", e, args.verbose)


def cmd_export_embeddings(args):
    """Export task-posterior means of the held-out windows"""
    try:
        cfg = resolve_config(_config_path(args), _overrides(args), checkpoint_dir=args.checkpoint)
        emitter = create_run_emitter(args.out, "export", args.verbose)
        run_export(cfg, args.data, args.checkpoint, args.out, args.trajectory or None, emitter)
        return 0
    except Exception as e:
        return _fail("export-embeddings", e, args.verbose)


def cmd_print_config(args):
    """Print the validated config (defaults filled in)"""
    try:
        cfg = load_config(_config_path(args), _overrides(args))
        print(dump_config(cfg))
        return 0
    except Exception as e:
        return _fail("print-config", e, args.verbose)


def _add_config_flags(parser):
    parser.add_argument(
        '--config',
        type=str,
        help='Run config (YAML or JSON)'
    )
    parser.add_argument(
        '--set',
        action='append',
        metavar='SECTION.FIELD=VALUE',
        help='Override one config field; repeatable'
    )


def _add_checkpoint_flags(parser):
    _add_config_flags(parser)
    parser.add_argument('--data', type=str, required=True, help='Dataset directory')
    parser.add_argument('--checkpoint', type=str, required=True, help='Checkpoint directory')
    parser.add_argument('--out', type=str, required=True, help='Output directory')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='HiP-RSSM - state space models with latent task inference for changing dynamics',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python hiprssm/src/__main__.py generate-data --config hiprssm/configs/spring_mass_discrete.yaml --out data/
  python hiprssm/src/__main__.py train --config hiprssm/configs/spring_mass_discrete.yaml --data data/ --out run/
  python hiprssm/src/__main__.py eval --data data/ --checkpoint run/checkpoint --out run/eval --protocol all
  python hiprssm/src/__main__.py export-embeddings --data data/ --checkpoint run/checkpoint --out run/emb
        """
    )
    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Per-item progress lines and tracebacks on failure'
    )

    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    gen_parser = subparsers.add_parser('generate-data', help='Simulate a benchmark dataset')
    _add_config_flags(gen_parser)
    gen_parser.add_argument('--out', type=str, required=True, help='Dataset directory to write')
    gen_parser.add_argument('--seed', type=int, help='Replace sim.seed')

    train_parser = subparsers.add_parser('train', help='Train a model')
    _add_config_flags(train_parser)
    train_parser.add_argument('--data', type=str, required=True, help='Dataset directory')
    train_parser.add_argument('--out', type=str, required=True, help='Run directory (checkpoint/, metrics.csv)')
    train_parser.add_argument(
        '--baseline',
        choices=['none', 'context_free', 'np'],
        help='none: full HiP-RSSM; context_free: task path removed; np: neural-process baseline'
    )
    train_parser.add_argument('--checkpoint', type=str, help='Resume from this checkpoint directory')
    train_parser.add_argument('--seed', type=int, help='Replace train.seed')

    eval_parser = subparsers.add_parser('eval', help='Evaluate a checkpoint')
    _add_checkpoint_flags(eval_parser)
    eval_parser.add_argument(
        '--protocol',
        choices=list(PROTOCOLS) + ['all'],
        default='all',
        help='Evaluation protocol (default: all)'
    )
    eval_parser.add_argument('--horizon', type=int, help='Longest multi-step horizon (replaces eval.horizon)')

    infer_parser = subparsers.add_parser('infer', help='Sliding-window inference over one trajectory')
    _add_checkpoint_flags(infer_parser)
    infer_parser.add_argument('--trajectory', type=int, required=True, help='Trajectory index in the dataset')
    infer_parser.add_argument(
        '--include-first',
        action='store_true',
        help='Also filter the first window under the task prior'
    )

    export_parser = subparsers.add_parser('export-embeddings', help='Export held-out window embeddings')
    _add_checkpoint_flags(export_parser)
    export_parser.add_argument(
        '--trajectory',
        type=int,
        action='append',
        help='Restrict to these trajectories (repeatable; default: the test split)'
    )

    config_parser = subparsers.add_parser('print-config', help='Print the defaulted run config')
    _add_config_flags(config_parser)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    # Show help if no command specified
    if not args.command:
        parser.print_help()
        return 1

    command_handlers = {
        'generate-data': cmd_generate_data,
        'train': cmd_train,
        'eval': cmd_eval,
        'infer': cmd_infer,
        'export-embeddings': cmd_export_embeddings,
        'print-config': cmd_print_config,
    }

    handler = command_handlers.get(args.command)
    if not handler:
        print(f"Unknown command: {args.command}")
        return 1

    try:
        return handler(args)
    except KeyboardInterrupt:
        print("\n[!] Interrupted by user")
        return 1


if __name__ == '__main__':
    sys.exit(main())
