"""
Job Ledger Module
Keeps a local sqlite history of scalability jobs and their scale points
"""

import json
import logging
import sqlite3
from datetime import datetime, timezone

logger = logging.getLogger(__name__)


class JobLedger:
    def __init__(self, db_path='swarm_ledger.db'):
        """Initialize the ledger"""
        self.db_path = db_path

    def init_db(self):
        """Create ledger tables"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS jobs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                task_name TEXT NOT NULL,
                build_num TEXT NOT NULL,
                exec_target TEXT,
                status TEXT,
                alloc_id TEXT,
                recorded_at TIMESTAMP,
                stage_timings TEXT,
                result_file TEXT,
                commit_id TEXT
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                job_id INTEGER,
                nodes INTEGER,
                procs_per_node INTEGER,
                total_procs INTEGER,
                exit_code INTEGER,
                wall_time REAL,
                timed_out INTEGER,
                attempts INTEGER,
                output_path TEXT,
                started_at TEXT,
                FOREIGN KEY (job_id) REFERENCES jobs (id)
            )
        ''')

        conn.commit()
        conn.close()
        logger.debug("Ledger ready at %s", self.db_path)

    def save_job(self, spec, outcome, build_num, result_file='', commit_id=''):
        """Store one finished job with all of its run records"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            INSERT INTO jobs (
                task_name, build_num, exec_target, status, alloc_id,
                recorded_at, stage_timings, result_file, commit_id
            ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        ''', (
            spec.task_name,
            build_num,
            spec.exec_target,
            outcome.status,
            outcome.alloc_id,
            datetime.now(timezone.utc).isoformat(),
            json.dumps(outcome.timings.as_dict()),
            result_file,
            commit_id,
        ))
        job_id = cursor.lastrowid

        cursor.executemany('''
            INSERT INTO runs (
                job_id, nodes, procs_per_node, total_procs, exit_code,
                wall_time, timed_out, attempts, output_path, started_at
            ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        ''', [
            (
                job_id,
                record.point.nodes,
                record.point.procs_per_node,
                record.point.total_procs,
                record.result.exit_code,
                record.result.wall_time,
                int(record.result.timed_out),
                len(record.attempts),
                record.result.output_path,
                record.started_at,
            )
            for record in outcome.records
        ])

        conn.commit()
        conn.close()
        return job_id

    def get_job(self, job_id):
        """Get a job and its runs"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('SELECT * FROM jobs WHERE id = ?', (job_id,))
        row = cursor.fetchone()
        if not row:
            conn.close()
            return None

        cursor.execute('SELECT * FROM runs WHERE job_id = ? ORDER BY id', (job_id,))
        runs = cursor.fetchall()
        conn.close()

        job = self._job_from_row(row)
        job['runs'] = [
            {
                'nodes': run[2],
                'procs_per_node': run[3],
                'total_procs': run[4],
                'exit_code': run[5],
                'wall_time': run[6],
                'timed_out': bool(run[7]),
                'attempts': run[8],
                'output_path': run[9],
                'started_at': run[10],
            }
            for run in runs
        ]
        return job

    def get_recent_jobs(self, limit=20):
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('SELECT * FROM jobs ORDER BY id DESC LIMIT ?', (limit,))
        rows = cursor.fetchall()
        conn.close()

        return [self._job_from_row(row) for row in rows]

    @staticmethod
    def _job_from_row(row):
        return {
            'id': row[0],
            'task_name': row[1],
            'build_num': row[2],
            'exec_target': row[3],
            'status': row[4],
            'alloc_id': row[5],
            'recorded_at': row[6],
            'stage_timings': json.loads(row[7]) if row[7] else {},
            'result_file': row[8],
            'commit_id': row[9],
        }
