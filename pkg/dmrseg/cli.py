"""Command-line entry point: ``dmrseg synth|train|eval|distmap|diag|compare``.

Exit codes are 0 on success, 2 for usage and data errors and 3 when training
hits a non-finite loss.
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import RunConfig, read_key_values, write_config, worker_count
from .dataio import (PhantomSpec, ManifestEntry, Case, Volume, LabelVolume, gen_phantom, read_manifest,
                     write_manifest, load_cases, read_nifti, write_nifti, preprocess_case, split_folds,
                     fold_sets, read_folds, write_folds)
from .diag import weight_histogram, read_curves, plot_curves
from .distmap import dm_volume, segmentation_from_dm
from .errors import (ConfigError, DimensionError, LabelError, NiftiParseError, PhantomSpecError,
                     UsageError, NonFiniteLossError)
from .metrics import build_report, largest_cc_3d, read_report
from .networks import ArchSpec, load_checkpoint, predict_labels, predict_distance_maps
from .stats import compare_reports, COMPARED_METRICS
from .trainer import TrainConfig, train, finalize, configure_cache_size


LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

CHECKPOINT_NAME = 'checkpoint.npz'
FINAL_NAME = 'final.npz'
LOG_NAME = 'training_log.csv'
TEST_MANIFEST_NAME = 'test_manifest.txt'
FOLDS_NAME = 'folds.txt'


def cmd_synth(args):
    """Write phantom volumes, labels and a manifest"""
    settings = read_key_values(args.spec) if args.spec else {}
    if args.seed is not None:
        settings['seed'] = args.seed
    spec = PhantomSpec.from_mapping(settings).validate()
    if args.cases < 1 or args.strata < 0:
        raise UsageError('--cases must be at least 1 and --strata non-negative')
    for directory in ('images', 'labels'):
        os.makedirs(os.path.join(args.out, directory), exist_ok=True)
    entries = []
    for index in range(args.cases):
        patient = f'case{index:03d}'
        tag = f'group{index % args.strata}' if args.strata else ''
        for phase in spec.phases:
            case_id = f'{patient}_{phase}' if len(spec.phases) > 1 else patient
            image, labels = gen_phantom(spec, index, phase)
            image_path = os.path.join(args.out, 'images', f'{case_id}.nii')
            label_path = os.path.join(args.out, 'labels', f'{case_id}.nii')
            write_nifti(image, image_path)
            write_nifti(labels, label_path)
            entries.append(ManifestEntry(case_id, image_path, label_path, tag,
                                         phase if len(spec.phases) > 1 else None))
    write_manifest(entries, os.path.join(args.out, 'manifest.txt'))
    with open(os.path.join(args.out, 'phantom_spec.txt'), 'w') as handle:
        for key, value in sorted(vars(spec).items()):
            text = ','.join(str(v) for v in value) if isinstance(value, tuple) else repr(value)
            handle.write(f'{key} = {text}\n')
    LOGGER.info('Wrote %d volumes of %d cases to %s', len(entries), args.cases, args.out)


def _run_config(args, overrides):
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig(overrides)


def _load_dataset(entries, config, num_classes):
    cases = load_cases(entries, num_classes)
    if not config.preprocess:
        return cases
    prepared = []
    for case in cases:
        image, labels = preprocess_case(case.image, case.labels, config.target_size, config.out_spacing)
        prepared.append(Case(case.case_id, image, labels, case.subgroup_tag, case.phase))
    return prepared


def _assign_folds(entries, config):
    """Fold index per case id. Both phases of a patient always share a fold.
    """
    if config.folds:
        assignment = read_folds(config.folds)
        missing = [e.case_id for e in entries if e.case_id not in assignment]
        if missing:
            raise UsageError(f'Cases without a fold: {", ".join(missing)}')
        return {e.case_id: assignment[e.case_id] for e in entries}, {}
    patients = list(dict.fromkeys(e.patient for e in entries))
    strata = {e.patient: e.subgroup_tag for e in entries if e.subgroup_tag}
    by_patient = split_folds(patients, config.num_folds, strata or None, config.seed)
    return {e.case_id: by_patient[e.patient] for e in entries}, strata


def _train_config(config):
    arch = ArchSpec(variant=config.variant, in_channels=config.in_channels, num_classes=config.num_classes,
                    stage_channels=config.stage_channels, bottleneck_channels=config.bottleneck_channels,
                    use_batchnorm=config.use_batchnorm, dmr_attached=config.dmr,
                    dm_threshold=config.dm_threshold, upsampling=config.upsampling)
    return TrainConfig(arch=arch, lr0=config.lr0, lr_decay=config.lr_decay, epochs=config.epochs,
                       batch_size=config.batch_size, seed=config.seed, weighting=config.weighting,
                       w1=config.w1, w2=config.w2, dm_threshold=config.dm_threshold,
                       augment_copies=config.augment_copies, dtype=config.dtype)


def cmd_train(args):
    """Train one fold and write checkpoints, log and resolved configuration"""
    config = _run_config(args, {'variant': args.arch, 'dmr': args.dmr, 'weighting': args.weighting,
                                'fold': args.fold, 'dm_threshold': args.T, 'epochs': args.epochs,
                                'manifest': args.manifest, 'out_dir': args.out, 'seed': args.seed})
    if not config.manifest:
        raise UsageError('No manifest given (--manifest or "manifest" in the configuration)')
    cfg = _train_config(config).validate()
    config.update({'lr0': cfg.lr0})
    configure_cache_size(config.cache_size)
    entries = read_manifest(config.manifest)
    if not entries:
        raise UsageError(f'Manifest {config.manifest} lists no cases')
    assignment, strata = _assign_folds(entries, config)
    patients = {e.case_id: e.patient for e in entries}
    patient_folds = {patients[c]: f for c, f in assignment.items()}
    train_ids, val_ids, test_ids = fold_sets(patient_folds, config.fold, strata or None, config.seed)
    split = {patient: name for name, ids in (('train', train_ids), ('val', val_ids), ('test', test_ids))
             for patient in ids}

    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    write_config(config, out)
    write_folds(assignment, os.path.join(out, FOLDS_NAME))
    write_manifest([e for e in entries if split[e.patient] == 'test'], os.path.join(out, TEST_MANIFEST_NAME))

    used = [e for e in entries if split[e.patient] != 'test']
    cases = _load_dataset(used, config, cfg.arch.num_classes)
    train_cases = [c for c in cases if split[c.patient] == 'train']
    val_cases = [c for c in cases if split[c.patient] == 'val']
    LOGGER.info('Fold %d: %d training, %d validation, %d test volumes', config.fold, len(train_cases),
                len(val_cases), len(entries) - len(used))
    result = train(cfg, train_cases, val_cases, log_path=os.path.join(out, LOG_NAME),
                   checkpoint_path=os.path.join(out, CHECKPOINT_NAME))
    finalize(result.checkpoint, os.path.join(out, FINAL_NAME))
    LOGGER.info('Best epoch %d, validation Dice %.4f', result.checkpoint.epoch, result.checkpoint.val_dice)


def _predict(params, case, postprocess):
    predicted = predict_labels(params, case.image)
    return largest_cc_3d(predicted) if postprocess else predicted


def _arguments(args):
    """Command-line arguments of a run as ``name = value`` lines"""
    return [f'{key} = {value}' for key, value in sorted(vars(args).items())
            if key not in ('func', 'command') and value is not None]


def _write_run_config(config, args, out):
    """Resolved settings of a non-training command, next to its output as ``<stem>_config.txt``
    """
    directory = os.path.dirname(os.path.abspath(out))
    stem = os.path.splitext(os.path.basename(out))[0]
    path = write_config(config, directory, f'{stem}_config.txt', [f'dmrseg {args.command}'] + _arguments(args))
    LOGGER.info('Wrote %s', path)
    return path


def cmd_eval(args):
    """Segment every manifest case with a checkpoint and score it"""
    config = _run_config(args, {})
    params, meta = load_checkpoint(args.model)
    if params.dmr_attached:
        LOGGER.info('Evaluating the segmentation branch; the regularizer is ignored')
    num_classes = params.spec.num_classes
    cases = _load_dataset(read_manifest(args.data), config, num_classes)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        predictions = list(pool.map(lambda case: _predict(params, case, args.postprocess), cases))
    report = build_report({c.case_id: p for c, p in zip(cases, predictions)},
                          {c.case_id: c.labels for c in cases}, num_classes,
                          tags={c.case_id: c.subgroup_tag for c in cases},
                          phases={c.case_id: c.phase for c in cases}, regional=args.regional)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    for path in report.write(args.out):
        LOGGER.info('Wrote %s', path)
    _write_run_config(config.update({'num_classes': num_classes}), args, args.out)


def cmd_distmap(args):
    """Write label-derived or regressed distance maps, or the labels they imply"""
    if args.T <= 0:
        raise UsageError(f'--T must be positive, got {args.T}')
    if args.model:
        if not args.image:
            raise UsageError('--model needs --image')
        params, _ = load_checkpoint(args.model)
        image = read_nifti(args.image)
        num_classes = params.spec.num_classes
        if not 1 <= args.class_id < num_classes:
            raise LabelError(f'{args.class_id} is not a foreground class of the model')
        maps = predict_distance_maps(params, image)
        if args.to_labels:
            out = LabelVolume(segmentation_from_dm(maps), num_classes, image.spacing, image.origin)
        else:
            out = Volume(maps[args.class_id - 1], image.spacing, image.origin)
        if args.labels:
            labels = read_nifti(args.labels, labels=True, num_classes=num_classes)
            target = dm_volume(labels.labels, args.class_id, params.spec.dm_threshold, num_classes)
            LOGGER.info('MAD against the label-derived map of class %d: %.6g', args.class_id,
                        float(np.abs(maps[args.class_id - 1] - target).mean()))
        config = RunConfig({'dm_threshold': params.spec.dm_threshold, 'num_classes': num_classes})
    else:
        if not args.labels:
            raise UsageError('Give --labels, or --model with --image')
        labels = read_nifti(args.labels, labels=True, num_classes=args.num_classes)
        if args.to_labels:
            maps = np.stack([dm_volume(labels.labels, k, args.T, args.num_classes)
                             for k in range(1, args.num_classes)])
            out = LabelVolume(segmentation_from_dm(maps), args.num_classes, labels.spacing, labels.origin)
        else:
            out = Volume(dm_volume(labels.labels, args.class_id, args.T, args.num_classes),
                         labels.spacing, labels.origin)
        config = RunConfig({'dm_threshold': args.T, 'num_classes': args.num_classes})
    write_nifti(out, args.out)
    LOGGER.info('Wrote %s', args.out)
    _write_run_config(config, args, args.out)


def cmd_diag(args):
    """Dump parameter histograms and/or plot learning curves"""
    if not (args.model and args.weights_hist) and not args.curves:
        raise UsageError('Give --model with --weights-hist, and/or --curves with --out')
    if args.model:
        if not args.weights_hist:
            raise UsageError('--model needs --weights-hist')
        params, _ = load_checkpoint(args.model)
        weight_histogram(params, args.kernels_only).to_csv(args.weights_hist, index=False,
                                                           float_format='%.10g')
        LOGGER.info('Wrote %s', args.weights_hist)
    if args.curves:
        if not args.out:
            raise UsageError('--curves needs --out')
        plot_curves(read_curves(args.curves), args.out)


def cmd_compare(args):
    """Confidence intervals and paired tests between two reports"""
    for path in (args.a, args.b):
        if not os.path.exists(path):
            raise FileNotFoundError(f'Report {path} does not exist')
    metrics = [m.strip() for m in args.metrics.split(',') if m.strip()]
    table = compare_reports(read_report(args.a), read_report(args.b), metrics, seed=args.seed)
    table.to_csv(args.out, index=False, float_format='%.10g')
    LOGGER.info('Wrote %s', args.out)


def build_parser():
    parser = argparse.ArgumentParser(prog='dmrseg',
                                     description='Distance-map regularized segmentation networks')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--verbose', action='store_true', help='log every training step')
    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth', parents=[common], help='generate phantom volumes')
    synth.add_argument('--spec', help='phantom settings file (key = value lines)')
    synth.add_argument('--out', required=True)
    synth.add_argument('--cases', type=int, default=20)
    synth.add_argument('--strata', type=int, default=0, help='number of subgroup tags to deal out')
    synth.add_argument('--seed', type=int)
    synth.set_defaults(func=cmd_synth)

    training = commands.add_parser('train', parents=[common], help='train on one fold')
    training.add_argument('--config')
    training.add_argument('--manifest')
    training.add_argument('--arch', choices=['segnet', 'usegnet', 'unet'])
    training.add_argument('--dmr', action='store_true', default=None, help='attach the regularizer')
    training.add_argument('--weighting', choices=['learned', 'fixed'])
    training.add_argument('--fold', type=int)
    training.add_argument('--T', type=float, help='distance-map truncation threshold, pixels')
    training.add_argument('--epochs', type=int)
    training.add_argument('--seed', type=int)
    training.add_argument('--out')
    training.set_defaults(func=cmd_train)

    evaluation = commands.add_parser('eval', parents=[common], help='score a checkpoint')
    evaluation.add_argument('--model', required=True)
    evaluation.add_argument('--data', required=True, help='manifest of the cases to score')
    evaluation.add_argument('--out', required=True)
    evaluation.add_argument('--config', help='preprocessing settings, e.g. the resolved training config')
    evaluation.add_argument('--regional', action='store_true')
    evaluation.add_argument('--postprocess', action='store_true', help='keep the largest 3-D component')
    evaluation.set_defaults(func=cmd_eval)

    distmap = commands.add_parser('distmap', parents=[common], help='write distance maps')
    distmap.add_argument('--labels')
    distmap.add_argument('--model')
    distmap.add_argument('--image')
    distmap.add_argument('--class', dest='class_id', type=int, default=1)
    distmap.add_argument('--num-classes', type=int, default=4)
    distmap.add_argument('--T', type=float, default=250.0)
    distmap.add_argument('--to-labels', action='store_true')
    distmap.add_argument('--out', required=True)
    distmap.set_defaults(func=cmd_distmap)

    diag = commands.add_parser('diag', parents=[common], help='histograms and learning curves')
    diag.add_argument('--model')
    diag.add_argument('--weights-hist')
    diag.add_argument('--kernels-only', action='store_true')
    diag.add_argument('--curves', help='training log or run directory')
    diag.add_argument('--out')
    diag.set_defaults(func=cmd_diag)

    compare = commands.add_parser('compare', parents=[common], help='compare two evaluation reports')
    compare.add_argument('--a', required=True)
    compare.add_argument('--b', required=True)
    compare.add_argument('--out', required=True)
    compare.add_argument('--metrics', default=','.join(COMPARED_METRICS))
    compare.add_argument('--seed', type=int, default=0)
    compare.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(format='[%(levelname)s] %(filename)s %(lineno)d: %(message)s',
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        args.func(args)
    except NonFiniteLossError as x:
        LOGGER.error('%s', x)
        return EXIT_NUMERICAL
    except (ConfigError, DimensionError, LabelError, NiftiParseError, PhantomSpecError, UsageError,
            FileNotFoundError, ValueError) as x:
        LOGGER.error('%s', x)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
