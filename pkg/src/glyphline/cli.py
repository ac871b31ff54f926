"""glyphline command line: run, stage, train, eval and synth"""
import argparse
import glob
import json
import logging
import os
import sys
import tempfile

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional

from glyphline import logging as glyphline_logging
from glyphline.classifiers import (
    AugmentationPlan, ClassifierHandle, DatasetManifest, evaluate, load_handle, train_classifier,
)
from glyphline.config import load_config, solver_config, stage_config
from glyphline.errors import GlyphlineError
from glyphline.evaluation import evaluate_report, format_table, tabulate
from glyphline.imaging import read_image, write_image
from glyphline.neuralnet import write_trace
from glyphline.pipeline import STAGES, PipelineReport, render_overlay, run_pipeline
from glyphline.synth import SyntheticSealSpec, generate_corpus
from glyphline.transfer import fetch, is_remote, publish
from glyphline.utils import atomic_write, canonical_json, get_path, recursive_compare, validate

logger = logging.getLogger('glyphline.cli')

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg', '.tif', '.tiff', '.bmp')
PLUGIN_PREFIX = 'plugin:'


class UsageError(GlyphlineError):
    """Bad invocation: missing file, model or option"""
    pass


def _require_file(path: str, what: str) -> str:
    local = fetch(path, tempfile.mkdtemp(prefix='glyphline-')) if is_remote(path) else path
    if not os.path.isfile(local):
        raise UsageError(f"{what} not found: {path}")
    return local


def load_model(spec: Optional[str], role: str) -> Optional[ClassifierHandle]:
    """Checkpoint path or URL, or `plugin:<command>` for an external classifier"""
    if not spec:
        return None
    if spec.startswith(PLUGIN_PREFIX):
        return ClassifierHandle.from_plugin(role, spec[len(PLUGIN_PREFIX):])
    return load_handle(_require_file(spec, f"{role} model"), role=role)


def collect_inputs(inputs: List[str]) -> List[str]:
    found = []
    for item in inputs:
        if is_remote(item):
            found.append(item)
        elif os.path.isdir(item):
            found.extend(
                sorted(p for p in glob.glob(os.path.join(item, '*')) if p.lower().endswith(IMAGE_SUFFIXES))
            )
        elif os.path.isfile(item):
            found.append(item)
        else:
            raise UsageError(f"input not found: {item}")
    return found


def write_output(out: str, name: str, data: bytes, content_type: str = None) -> str:
    """Atomically write under a local directory, or upload under an s3 URL"""
    if out.startswith('s3://'):
        with tempfile.TemporaryDirectory() as tmp:
            local = atomic_write(os.path.join(tmp, os.path.basename(name)), data)
            return publish(local, f"{out.rstrip('/')}/{name}", content_type=content_type)
    return atomic_write(os.path.join(out, name), data)


def _configure(args) -> Dict:
    cfg = load_config(args.config, args.set or [])
    return cfg


def _stage_config(args, cfg: Dict):
    stages = stage_config(cfg)
    changes = {}
    if getattr(args, 'scale', None):
        changes['scale_mode'] = args.scale
    if getattr(args, 'reading_order', None):
        changes['reading_order'] = args.reading_order
    if getattr(args, 'workers', None):
        changes['workers'] = args.workers
    if getattr(args, 'timings', False):
        changes['record_timings'] = True
    return replace(stages, **changes)


def _run_one(path: str, tmp: str, args, stages, stop_after: str, region_h, glyph_h) -> Optional[Dict]:
    """Run the pipeline on one input and write its outputs; a failure record
    when the input could not be read or the report is invalid"""
    image_id = os.path.splitext(os.path.basename(path.split('?')[0]))[0]
    workdir = tempfile.mkdtemp(dir=tmp)
    try:
        img = read_image(fetch(path, workdir))
    except Exception as err:
        logger.error(f"skipping {path}: {err}")
        return {'input': path, 'error': str(err)}
    report = run_pipeline(img, region_h, glyph_h, stages, stop_after=stop_after, image_id=image_id)
    problems = report.validate()
    if problems:
        logger.error(f"{path}: invalid report, not written: {problems}")
        return {'input': path, 'error': f"invalid report: {problems[0]}"}
    name = get_path(report, args.name)
    write_output(args.out, f"{name}.json", report.to_json(), content_type='application/json')
    if args.overlay:
        local = write_image(render_overlay(img, report), os.path.join(workdir, f"{image_id}.overlay.png"))
        with open(local, 'rb') as f:
            write_output(args.out, f"{name}.overlay.png", f.read(), content_type='image/png')
    logger.info(f"{path}: {len(report['glyphs'])} glyphs, {len(report['errors'])} stage errors")
    return None


def cmd_run(args) -> int:
    cfg = _configure(args)
    stages = _stage_config(args, cfg)
    stop_after = args.stage or 'glyphs'
    needs = STAGES.index(stop_after)
    if args.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
    region_h = load_model(args.region_model, 'region3')
    glyph_h = load_model(args.glyph_model, 'glyph2')
    if needs >= STAGES.index('regions') and region_h is None:
        raise UsageError(f"--region-model is required to run up to stage {stop_after}")
    if needs >= STAGES.index('glyphs') and glyph_h is None:
        raise UsageError(f"--glyph-model is required to run up to stage {stop_after}")

    inputs = collect_inputs(args.inputs)
    if not inputs:
        raise UsageError("no input images")
    # inputs are independent; handles are shared read-only
    with tempfile.TemporaryDirectory() as tmp, ThreadPoolExecutor(max_workers=args.jobs) as pool:
        outcomes = list(pool.map(
            lambda path: _run_one(path, tmp, args, stages, stop_after, region_h, glyph_h), inputs,
        ))
    for handle in (region_h, glyph_h):
        if handle is not None and handle.plugin is not None:
            handle.plugin.close()

    failed = [o for o in outcomes if o is not None]
    summary = {'inputs': len(inputs), 'reports': len(inputs) - len(failed), 'failed': failed}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_train(args) -> int:
    cfg = _configure(args)
    solver = solver_config(cfg, args.role)
    changes = {}
    if args.seed is not None:
        changes['rng_seed'] = args.seed
    if args.target_accuracy is not None:
        changes['target_accuracy'] = args.target_accuracy
    try:
        solver = replace(solver, **changes)
    except ValueError as err:
        raise UsageError(str(err))
    manifest = DatasetManifest.from_csv(
        _require_file(args.manifest, "manifest"), seed=solver.rng_seed)
    plan = AugmentationPlan.default(args.augment, seed=solver.rng_seed) if args.augment else None
    handle, result = train_classifier(args.role, manifest, solver, augment_plan=plan)

    out_dir = os.path.dirname(args.out) or '.'
    ckpt_name = os.path.basename(args.out)
    trace_name = os.path.basename(args.trace) if args.trace else f"{os.path.splitext(ckpt_name)[0]}.trace.csv"
    if args.out.startswith('s3://'):
        with tempfile.TemporaryDirectory() as tmp:
            publish(handle.save(os.path.join(tmp, ckpt_name)), args.out, content_type='application/json')
            publish(write_trace(result.trace, os.path.join(tmp, os.path.basename(trace_name))),
                    f"{out_dir}/{os.path.basename(trace_name)}", content_type='text/csv')
    else:
        handle.save(args.out)
        write_trace(result.trace, args.trace or os.path.join(out_dir, trace_name))

    print(json.dumps({
        'role': args.role,
        'iterations': result.iterations,
        'best_val_accuracy': result.best_val_accuracy,
        'best_iteration': result.best_iteration,
        'checkpoint': args.out,
    }, sort_keys=True))
    return EXIT_OK


def _eval_classifier(args) -> Dict:
    handle = load_model(args.model, args.role)
    manifest = DatasetManifest.from_csv(_require_file(args.manifest, 'manifest'))
    samples = [(read_image(e.path), e.label) for e in manifest.entries]
    return dict(evaluate(handle, samples).to_dict(), role=handle.role)


def _read_json(path: str) -> Dict:
    with open(path) as f:
        return json.load(f)


def _eval_pipeline(args) -> Dict:
    results, differences = [], []
    truths = sorted(glob.glob(os.path.join(args.truth, '*.json')))
    if not truths:
        raise UsageError(f"no ground truth JSON in {args.truth}")
    for truth_path in truths:
        name = os.path.basename(truth_path)
        report_path = os.path.join(args.reports, name)
        if not os.path.isfile(report_path):
            logger.warning(f"no report for {name}")
            continue
        truth = _read_json(truth_path)
        problems = validate(truth, 'groundtruth')
        if problems:
            logger.warning(f"skipping {name}: {problems[0]}")
            continue
        report = PipelineReport.from_file(report_path)
        results.append(evaluate_report(report, truth))
        if args.against:
            other = os.path.join(args.against, name)
            if not os.path.isfile(other) or not recursive_compare(
                report.to_dict(), PipelineReport.from_file(other).to_dict(), print=logger.debug,
            ):
                differences.append(name)
    summary = tabulate(results)
    for line in format_table(summary):
        logger.info(line)
    summary['per_image'] = results
    if args.against:
        summary['differing_reports'] = differences
    return summary


def cmd_eval(args) -> int:
    _configure(args)
    if args.model:
        if not args.manifest:
            raise UsageError("--model needs --manifest")
        summary = _eval_classifier(args)
    elif args.truth and args.reports:
        summary = _eval_pipeline(args)
    else:
        raise UsageError("give --model with --manifest, or --truth with --reports")
    data = canonical_json(summary)
    if args.out:
        write_output(os.path.dirname(args.out) or '.', os.path.basename(args.out), data, 'application/json')
    sys.stdout.write(data.decode('utf-8'))
    if args.against and summary.get('differing_reports'):
        return EXIT_FAILURE
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSealSpec(
        glyph_count=args.glyphs,
        jar_count=args.jars,
        layout=args.layout,
        icon=not args.no_icon,
        noise=args.noise,
        seed=args.seed if args.seed is not None else 0,
    )
    written = generate_corpus(spec, args.count, args.out, kind=args.kind)
    print(json.dumps({'kind': args.kind, 'count': args.count, 'images': len(written), 'out': args.out}))
    return EXIT_OK


def _common(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='JSON or TOML configuration file')
    parser.add_argument('--set', action='append', metavar='EXPR=VALUE',
                        help='Override a setting by JSONPath, e.g. stages.scale_mode=256 (repeatable)')


def _pipeline_options(parser: argparse.ArgumentParser):
    parser.add_argument('inputs', nargs='+', help='Images, directories of images, or s3/http URLs')
    parser.add_argument('--out', required=True, help='Output directory or s3 URL')
    parser.add_argument('--region-model', help='region3 checkpoint, or plugin:<command>')
    parser.add_argument('--glyph-model', help='glyph2 checkpoint, or plugin:<command>')
    parser.add_argument('--scale', choices=['512', '256', 'none'], help='Proposal scale mode')
    parser.add_argument('--reading-order', choices=['lr', 'rl', 'auto'], help='Glyph reading order')
    parser.add_argument('--overlay', action='store_true', help='Also write an annotated PNG per input')
    parser.add_argument('--workers', type=int, help='Processes for the proposal grid')
    parser.add_argument('--jobs', type=int, default=1, help='Inputs processed concurrently (default 1)')
    parser.add_argument('--timings', action='store_true', help='Include stage timings in reports')
    parser.add_argument('--name', default='${id}', help='Report name template (default ${id})')


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog='glyphline', description='Read glyphs off seal images')
    p.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    sub = p.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Run the whole pipeline')
    _common(run)
    _pipeline_options(run)
    run.add_argument('--stage', choices=STAGES, help='Stop after this stage')
    run.set_defaults(func=cmd_run)

    stage = sub.add_parser('stage', help='Run the pipeline up to one stage')
    _common(stage)
    _pipeline_options(stage)
    stage.add_argument('--stage', choices=STAGES, required=True, help='Stop after this stage')
    stage.set_defaults(func=cmd_run)

    train = sub.add_parser('train', help='Train a classifier from a manifest')
    _common(train)
    train.add_argument('role', choices=['region3', 'glyph2'])
    train.add_argument('manifest', help='CSV of path,label')
    train.add_argument('--out', required=True, help='Checkpoint path or s3 URL')
    train.add_argument('--trace', help='Trace CSV path (default next to the checkpoint)')
    train.add_argument('--augment', type=int, default=0, help='Augmented copies per training sample')
    train.add_argument('--seed', type=int, default=None, help='Random seed for the split, augmentation and solver')
    train.add_argument('--target-accuracy', type=float,
                       help='Stop once validation accuracy reaches this value')
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser('eval', help='Score a classifier or a set of pipeline reports')
    _common(ev)
    ev.add_argument('--model', help='Checkpoint to score')
    ev.add_argument('--role', choices=['region3', 'glyph2'], help='Expected model role')
    ev.add_argument('--manifest', help='Labeled CSV for --model')
    ev.add_argument('--reports', help='Directory of pipeline reports')
    ev.add_argument('--truth', help='Directory of ground truth JSON')
    ev.add_argument('--against', help='Second report directory that must match --reports exactly')
    ev.add_argument('--out', help='Write the evaluation JSON here')
    ev.set_defaults(func=cmd_eval)

    synth = sub.add_parser('synth', help='Generate a synthetic corpus')
    synth.add_argument('--out', required=True, help='Output directory')
    synth.add_argument('--count', type=int, default=10)
    synth.add_argument('--kind', choices=['seals', 'glyphs', 'regions'], default='seals')
    synth.add_argument('--glyphs', type=int, default=5, help='Glyphs per seal')
    synth.add_argument('--jars', type=int, default=None, help='Jar glyphs per seal (default random)')
    synth.add_argument('--layout', choices=['horizontal', 'vertical'], default='horizontal')
    synth.add_argument('--no-icon', action='store_true')
    synth.add_argument('--noise', type=float, default=0.0, help='Noise level in [0, 1]')
    synth.add_argument('--seed', type=int, default=None)
    synth.set_defaults(func=cmd_synth)
    return p


def main(argv: List[str] = None) -> int:
    args = parser().parse_args(argv)
    if args.verbose:
        glyphline_logging.set_level('DEBUG')
    try:
        return args.func(args)
    except UsageError as err:
        logger.error(str(err))
        return EXIT_USAGE
    except GlyphlineError as err:
        logger.error(f"{type(err).__name__}: {err}")
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
