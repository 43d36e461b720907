import csv
import json
import logging
import os
from dataclasses import asdict, fields

from sqlalchemy import create_engine, text

from errors import ConfigError, ReportIntegrityError
from experiment import ExperimentReport, ReportRow, SkippedCell, aggregate_rows

logger = logging.getLogger(__name__)

CSV_HEADER = ["scenario", "n", "noise", "algorithm", "NS", "replication", "mapping_norm_sq",
              "objective", "zero_ratio", "sfo_calls", "post_calls", "wall_ms"]
LONG_HEADER = ["scenario", "algorithm", "NS", "metric", "mean", "var"]
ABSENT = "NA"

_INT_FIELDS = {"n", "NS", "replication", "sfo_calls", "post_calls"}
_FLOAT_FIELDS = {"noise", "mapping_norm_sq", "objective", "zero_ratio", "wall_ms"}


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _table_cell(value):
    return ABSENT if value is None else _cell(value)


def _parse_cell(name, value):
    if name in _INT_FIELDS:
        return int(value)
    if name in _FLOAT_FIELDS:
        return None if value == "" else float(value)
    return value


def write_csv(report, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in report.rows:
            writer.writerow([_cell(getattr(row, name)) for name in CSV_HEADER])


def read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise ReportIntegrityError(f"{path} does not carry the report header")
        rows = [ReportRow(**{k: _parse_cell(k, v) for k, v in record.items()}) for record in reader]
    return ExperimentReport(rows=rows)


def write_json(report, path):
    payload = {
        "metadata": report.metadata,
        "rows": [asdict(r) for r in report.rows],
        "skipped": [asdict(s) for s in report.skipped],
        "aggregates": aggregate_rows(report.rows),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    """
    Load a JSON report and check its stored aggregates against a
    recomputation from the rows.
    """
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    row_names = {f.name for f in fields(ReportRow)}
    rows = [ReportRow(**{k: v for k, v in r.items() if k in row_names}) for r in payload.get("rows", [])]
    report = ExperimentReport(
        rows=rows,
        skipped=[SkippedCell(**s) for s in payload.get("skipped", [])],
        metadata=payload.get("metadata", {}),
    )
    stored = payload.get("aggregates")
    if stored is not None and stored != aggregate_rows(rows):
        raise ReportIntegrityError(f"Aggregates in {path} do not match its rows")
    return report


def load_report(path):
    path = str(path)
    if path.endswith(".json"):
        return read_json(path)
    if path.endswith(".csv"):
        return read_csv(path)
    raise ConfigError(f"Unrecognized report file {path}; expected .json or .csv")


def write_summary_csv(table, path):
    if not table:
        return
    header = list(table[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in table:
            writer.writerow([_table_cell(row.get(name)) for name in header])


def write_long_csv(report, path):
    """Plot-ready long format: one line per (scenario, algorithm, NS, metric)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LONG_HEADER)
        for agg in aggregate_rows(report.rows):
            writer.writerow([_table_cell(agg[name]) for name in LONG_HEADER])


def write_report(report, out_dir, formats=("csv", "json")):
    """Write the report files into out_dir and return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        write_csv(report, path)
        written.append(path)
        path = os.path.join(out_dir, "series.csv")
        write_long_csv(report, path)
        written.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        write_json(report, path)
        written.append(path)
    for path in written:
        logger.info(f"Wrote {path}")
    return written


class ResultStore:
    """
    Upserts report rows into a SQL database keyed by
    (run_label, scenario, algorithm, NS, replication).
    """

    def __init__(self, db_url):
        self.logger = logging.getLogger(__name__)
        self.is_sqlite = db_url.startswith("sqlite")
        if self.is_sqlite:
            self.engine = create_engine(db_url)
        else:
            # one connection per worker thread plus headroom
            self.engine = create_engine(db_url, pool_size=20, max_overflow=10)

    def ensure_schema(self):
        with self.engine.begin() as conn:
            conn.execute(text("""
                CREATE TABLE IF NOT EXISTS experiment_rows (
                    run_label TEXT NOT NULL,
                    scenario TEXT NOT NULL,
                    algorithm TEXT NOT NULL,
                    ns INTEGER NOT NULL,
                    replication INTEGER NOT NULL,
                    n INTEGER,
                    noise REAL,
                    mapping_norm_sq REAL,
                    objective REAL,
                    PRIMARY KEY (run_label, scenario, algorithm, ns, replication)
                )
            """))
        self._ensure_columns("experiment_rows", {
            "zero_ratio": "REAL",
            "sfo_calls": "INTEGER",
            "post_calls": "INTEGER",
            "wall_ms": "REAL",
        })

    def _existing_columns(self, conn, table_name):
        if self.is_sqlite:
            result = conn.execute(text(f"PRAGMA table_info({table_name})"))
            return {row[1] for row in result}
        result = conn.execute(text("SELECT column_name FROM information_schema.columns "
                                   "WHERE table_name = :table_name"), {"table_name": table_name})
        return {row[0] for row in result}

    def _ensure_columns(self, table_name, columns):
        with self.engine.begin() as conn:
            existing = self._existing_columns(conn, table_name)
            for col, dtype in columns.items():
                if col not in existing:
                    self.logger.info(f"Adding column {col} to {table_name}")
                    conn.execute(text(f"ALTER TABLE {table_name} ADD COLUMN {col} {dtype}"))

    def save_report(self, report, run_label):
        params = []
        for row in report.rows:
            record = asdict(row)
            record["ns"] = record.pop("NS")
            record["run_label"] = run_label
            params.append(record)
        if not params:
            self.logger.warning("Report has no rows, nothing to store.")
            return 0
        sql = text("""
            INSERT INTO experiment_rows (
                run_label, scenario, algorithm, ns, replication, n, noise,
                mapping_norm_sq, objective, zero_ratio, sfo_calls, post_calls, wall_ms
            ) VALUES (
                :run_label, :scenario, :algorithm, :ns, :replication, :n, :noise,
                :mapping_norm_sq, :objective, :zero_ratio, :sfo_calls, :post_calls, :wall_ms
            )
            ON CONFLICT (run_label, scenario, algorithm, ns, replication) DO UPDATE SET
                n = EXCLUDED.n,
                noise = EXCLUDED.noise,
                mapping_norm_sq = EXCLUDED.mapping_norm_sq,
                objective = EXCLUDED.objective,
                zero_ratio = EXCLUDED.zero_ratio,
                sfo_calls = EXCLUDED.sfo_calls,
                post_calls = EXCLUDED.post_calls,
                wall_ms = EXCLUDED.wall_ms
        """)
        with self.engine.begin() as conn:
            conn.execute(sql, params)
        self.logger.info(f"Stored {len(params)} rows under run label '{run_label}'")
        return len(params)

    def load_rows(self, run_label):
        with self.engine.connect() as conn:
            result = conn.execute(text("""
                SELECT scenario, n, noise, algorithm, ns, replication, mapping_norm_sq,
                       objective, zero_ratio, sfo_calls, post_calls, wall_ms
                FROM experiment_rows WHERE run_label = :run_label
            """), {"run_label": run_label})
            rows = [ReportRow(*record) for record in result]
        return sorted(rows, key=ReportRow.sort_key)
