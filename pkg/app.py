"""
swarmci - Scalability Tests for CI
Main command-line application
"""

import argparse
import json
import logging
import os
import signal
import sqlite3
import sys
import time
from dataclasses import replace

from dotenv import load_dotenv

from database.db_manager import JobLedger
from utils.analysis import (
    DEGRADATION,
    DEFAULT_THRESHOLD_PCT,
    detect_regressions,
    load_series,
    speedup_by_node_count,
    summarize_groups,
    write_gnuplot_data,
)
from utils.backends import create_backend
from utils.beefile import load_taskspec, retarget, validate_backend_conf
from utils.ci_env import load_ci_environment
from utils.errors import InsufficientHistory, InvalidBackendConf, MissingMetric, SwarmError
from utils.executor import JobExecutor, render_stage_report, write_stage_report
from utils.planner import ScalePoint, expand_matrix, matrix_as_rows
from utils.publisher import ResultPublisher, install_redaction, redact
from utils.results import ResultCollector, write_result_csv

logger = logging.getLogger('swarmci')

DEFAULT_METRIC = 'elapsed'


def load_settings():
    """Read SWARM_* settings; a .env file in the working directory is honoured"""
    load_dotenv()
    return {
        'OUTPUT_DIR': os.getenv('SWARM_OUTPUT_DIR', 'outputs'),
        'RESULTS_DIR': os.getenv('SWARM_RESULTS_DIR', 'scalability-results'),
        'MATRIX_CAP': int(os.getenv('SWARM_MATRIX_CAP', 4096)),
        'JOB_TIMEOUT_MIN': float(os.getenv('SWARM_JOB_TIMEOUT_MIN', 120)),
        'KILL_GRACE_S': float(os.getenv('SWARM_KILL_GRACE_S', 5)),
        'LEDGER_PATH': os.getenv('SWARM_LEDGER_PATH', 'swarm_ledger.db'),
        'LOG_LEVEL': os.getenv('SWARM_LOG_LEVEL', 'INFO').upper(),
    }


def build_parser():
    parser = argparse.ArgumentParser(prog='swarmci', description='Scalability tests for CI pipelines')
    commands = parser.add_subparsers(dest='command', required=True)

    plan = commands.add_parser('plan', help='print the run matrix of a beefile')
    plan.add_argument('beefile')
    plan.add_argument('--json', action='store_true', help='print the matrix as JSON')

    run = commands.add_parser('run', help='run the scalability test described by a beefile')
    run.add_argument('beefile')
    run.add_argument('--backend', help='override task_conf.exec_target')
    run.add_argument('--timeout', type=float, metavar='MIN', help='global job timeout in minutes')
    run.add_argument('--point-timeout', type=float, metavar='SEC', help='timeout of one scale point')
    run.add_argument('--publish', action='store_true', help='commit the result CSV to REPO_BRANCH')
    run.add_argument('--fail-fast', action='store_true', help='stop at the first failing point')
    run.add_argument('--parser', metavar='CMD', help='output parser executable (default: key=value parser)')
    run.add_argument('--results-dir', help='where the result CSV is written')
    run.add_argument('--repeats', type=int, help='override scalability_test.repeats')

    analyze = commands.add_parser('analyze', help='speedup and regressions from stored result CSVs')
    analyze.add_argument('results_dir')
    analyze.add_argument('--metric', help=f'metric to analyze (default: the only one, else {DEFAULT_METRIC})')
    analyze.add_argument('--threshold', type=float, default=DEFAULT_THRESHOLD_PCT, metavar='PCT')
    analyze.add_argument('--baseline', metavar='NxP', help='speedup baseline point for every node group')
    analyze.add_argument('--point', metavar='NxP', help='only check regressions at this point')
    analyze.add_argument('--gnuplot', metavar='FILE', help='also write gnuplot data for the latest build')
    analyze.add_argument('--json', action='store_true')
    analyze.add_argument('--higher-is-better', action='store_true', help='metric is throughput-like')
    analyze.add_argument('--fail-on-degradation', action='store_true')

    publish = commands.add_parser('publish', help='commit and push one result file')
    publish.add_argument('file')
    publish.add_argument('--repo-dir', default='.', help='CI checkout to commit in')

    history = commands.add_parser('history', help='recent jobs from the local ledger')
    history.add_argument('--limit', type=int, default=20)
    history.add_argument('--json', action='store_true')
    return parser


def cmd_plan(args, settings):
    spec = load_taskspec(args.beefile)
    findings = validate_backend_conf(spec)
    if findings:
        raise InvalidBackendConf(findings)
    matrix = expand_matrix(spec.scalability, cap=settings['MATRIX_CAP'])
    rows = matrix_as_rows(matrix)

    if args.json:
        print(json.dumps({
            'task_name': spec.task_name,
            'exec_target': spec.exec_target,
            'max_nodes': matrix.max_nodes,
            'points': rows,
        }, indent=2))
        return 0

    print(f"{spec.task_name} on {spec.exec_target}: {len(rows)} point(s), provisioning {matrix.max_nodes} node(s)")
    print(f"{'#':>4} {'nodes':>6} {'ppn':>6} {'procs':>7}")
    for row in rows:
        print(f"{row['index']:>4} {row['nodes']:>6} {row['procs_per_node']:>6} {row['total_procs']:>7}")
    return 0


def cmd_run(args, settings):
    install_start = time.perf_counter()
    ci = load_ci_environment(os.environ, publish=args.publish)
    install_redaction(ci.secrets())
    if ci.build_num_defaulted:
        logger.info("BUILD_NUM not set, using %s", ci.build_num)

    spec = load_taskspec(args.beefile)
    if args.backend:
        spec = retarget(spec, args.backend)
    if args.repeats is not None:
        spec = replace(spec, scalability=replace(spec.scalability, repeats=args.repeats))
    findings = validate_backend_conf(spec)
    if findings:
        raise InvalidBackendConf(findings)
    matrix = expand_matrix(spec.scalability, cap=settings['MATRIX_CAP'])

    conf = dict(spec.backend_conf)
    conf.setdefault('kill_grace_s', settings['KILL_GRACE_S'])
    backend = create_backend(spec.exec_target, conf, image_ref=spec.image_ref)
    executor = JobExecutor(
        backend,
        output_root=settings['OUTPUT_DIR'],
        fail_fast=args.fail_fast,
        point_timeout=args.point_timeout,
    )
    install_s = time.perf_counter() - install_start

    job_timeout = (args.timeout if args.timeout is not None else settings['JOB_TIMEOUT_MIN']) * 60
    logger.info("Running %s: %d point(s) on %s, timeout %.0f min",
                spec.task_name, len(matrix), spec.exec_target, job_timeout / 60)

    previous = _install_cancel_handlers(executor)
    try:
        outcome = executor.run_job(spec, matrix, job_timeout)
    finally:
        _restore_handlers(previous)
    timings = outcome.timings
    timings.install_s = install_s

    out_dir = executor.output_dir(spec)
    result_file = ''
    commit_id = ''
    failed = not outcome.ok
    if outcome.failed_records:
        logger.warning("%d point(s) failed: %s", len(outcome.failed_records),
                       ', '.join(record.point.label for record in outcome.failed_records))

    collect_start = time.perf_counter()
    try:
        table = ResultCollector().invoke_parser(args.parser, out_dir, ci.build_num)
        result_file = write_result_csv(table, args.results_dir or settings['RESULTS_DIR'])
    except SwarmError as exc:
        if not failed:
            raise
        logger.error("No results collected: %s", exc)
    timings.collect_s = time.perf_counter() - collect_start

    if args.publish:
        if failed or not result_file:
            logger.error("Job ended as %s; results not published", outcome.status)
        else:
            publish_start = time.perf_counter()
            commit_id = ResultPublisher().publish_result(result_file, ci.publish_target())
            timings.publish_s = time.perf_counter() - publish_start

    report = render_stage_report(timings)
    logger.info("Stage timings:\n%s", report.text)
    write_stage_report(report, out_dir)
    _record_job(settings, spec, outcome, ci.build_num, result_file, commit_id)

    logger.info("Job %s finished: %s", spec.task_name, outcome.status)
    return 1 if failed else 0


def cmd_analyze(args, settings):
    series = load_series(args.results_dir)
    if not len(series):
        raise InsufficientHistory(f"no scalability_test_result_<build>.csv files in {args.results_dir}")
    latest = series.entries[-1]
    metric = _pick_metric(latest.table, args.metric)
    baseline = ScalePoint.parse(args.baseline) if args.baseline else None

    groups = speedup_by_node_count(latest.table, metric, baseline)
    if args.gnuplot:
        write_gnuplot_data(groups, args.gnuplot)

    transitions = []
    if len(series) >= 2:
        points = [ScalePoint.parse(args.point)] if args.point else sorted(
            latest.table.values(metric), key=lambda p: p.sort_key
        )
        for point in points:
            try:
                found = detect_regressions(series, metric, point, args.threshold, args.higher_is_better)
            except InsufficientHistory:
                if args.point:
                    raise
                continue
            transitions.extend((point, t) for t in found)

    if args.json:
        print(json.dumps({
            'build_num': latest.build_num,
            'metric': metric,
            'groups': summarize_groups(groups),
            'transitions': [
                {
                    'point': point.label,
                    'from_build': t.from_build,
                    'to_build': t.to_build,
                    'from_commit': t.from_commit,
                    'to_commit': t.to_commit,
                    'previous': t.previous,
                    'current': t.current,
                    'change_pct': t.change_pct,
                    'direction': t.direction,
                }
                for point, t in transitions
            ],
        }, indent=2))
    else:
        print(f"Build {latest.build_num}, metric {metric}")
        for group in groups:
            bounds = group.speedup_range()
            span = f"{bounds[0]:.2f}x - {bounds[1]:.2f}x" if bounds else "n/a"
            print(f"  {group.nodes} node(s), baseline {group.baseline.label}: speedup {span}")
        if len(series) < 2:
            print("Regression check needs at least 2 builds")
        elif not transitions:
            print(f"No change above {args.threshold:g}% across {len(series)} builds")
        for point, t in transitions:
            print(f"  {t.direction} at {point.label}: {t.from_commit[:12]} -> {t.to_commit[:12]} "
                  f"({t.previous:g} -> {t.current:g}, {t.change_pct:+.1f}%)")

    if args.fail_on_degradation and any(t.direction == DEGRADATION for _, t in transitions):
        return 1
    return 0


def cmd_publish(args, settings):
    ci = load_ci_environment(os.environ, publish=True)
    install_redaction(ci.secrets())
    commit = ResultPublisher(repo_dir=args.repo_dir).publish_result(args.file, ci.publish_target())
    print(commit)
    return 0


def cmd_history(args, settings):
    if not settings['LEDGER_PATH']:
        print("Job ledger is disabled (SWARM_LEDGER_PATH is empty)")
        return 0
    ledger = JobLedger(settings['LEDGER_PATH'])
    ledger.init_db()
    jobs = ledger.get_recent_jobs(args.limit)
    if args.json:
        print(json.dumps(jobs, indent=2))
        return 0
    if not jobs:
        print("No jobs recorded yet")
    for job in jobs:
        print(f"{job['id']:>5} {job['recorded_at'][:19]} {job['task_name']} build {job['build_num']} "
              f"on {job['exec_target']}: {job['status']}")
    return 0


COMMANDS = {
    'plan': cmd_plan,
    'run': cmd_run,
    'analyze': cmd_analyze,
    'publish': cmd_publish,
    'history': cmd_history,
}


def main(argv=None):
    settings = load_settings()
    logging.basicConfig(
        level=getattr(logging, settings['LOG_LEVEL'], logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    args = build_parser().parse_args(argv)

    secrets = []
    try:
        secrets = load_ci_environment(os.environ).secrets()
        return COMMANDS[args.command](args, settings)
    except SwarmError as e:
        logger.error("%s", redact(str(e), secrets))
        return e.exit_code
    except Exception:
        logger.exception("Unexpected error")
        return 1


def _pick_metric(table, requested):
    if requested:
        return requested
    metrics = table.metrics()
    if len(metrics) == 1:
        return metrics[0]
    if DEFAULT_METRIC in metrics:
        return DEFAULT_METRIC
    raise MissingMetric(f"build {table.build_num} has metrics {', '.join(metrics)}; choose one with --metric")


def _install_cancel_handlers(executor):
    def handle(signum, frame):
        logger.warning("Received signal %d, cancelling the job", signum)
        executor.cancel()

    previous = {}
    for signum in (signal.SIGTERM, signal.SIGINT):
        try:
            previous[signum] = signal.signal(signum, handle)
        except ValueError:
            # not the main thread
            pass
    return previous


def _restore_handlers(previous):
    for signum, handler in previous.items():
        signal.signal(signum, handler)


def _record_job(settings, spec, outcome, build_num, result_file, commit_id):
    if not settings['LEDGER_PATH']:
        return
    try:
        ledger = JobLedger(settings['LEDGER_PATH'])
        ledger.init_db()
        job_id = ledger.save_job(spec, outcome, build_num, result_file, commit_id)
        logger.debug("Recorded job %s in %s", job_id, settings['LEDGER_PATH'])
    except sqlite3.Error as e:
        logger.warning("Could not record job in ledger: %s", e)


if __name__ == '__main__':
    sys.exit(main())
