"""
Structured run log.

Every entry is one JSON object: the run (or fitted target) it belongs to,
the stage that produced it (GPA, TRAIN_LOCAL, FIT_GLOBAL, SAVE_MODEL, ...),
a status and stage-specific numbers such as iteration counts, energies or
mm errors. Entries go to the console at SHAPESPACE_LOG_LEVEL and to the log
file at DEBUG, so per-level fit details and load statistics are only in the
file.

Reports never carry timings (they must be byte-identical across reruns);
wall-clock seconds live here, written by `timed`.
"""

import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path

import config
from .utils import to_builtin

STATUS_LEVELS = {
    "START": logging.INFO,
    "SUCCESS": logging.INFO,
    "DEBUG": logging.DEBUG,
    "WARNING": logging.WARNING,
    "FAILURE": logging.ERROR,
}


class PipelineLogger:
    """
    Stage logger shared by every module of the toolkit.

    All entries are keyed by run id so the entries of one run can be grepped
    out of a shared log file.
    """

    def __init__(self, log_dir=config.LOG_DIR, log_file=config.LOG_FILE, level=config.LOG_LEVEL):
        log_path = Path(log_dir) / log_file
        log_path.parent.mkdir(parents=True, exist_ok=True)

        self.logger = logging.getLogger("shapespace")
        self.logger.setLevel(logging.DEBUG)

        # handlers survive re-imports (pytest, interactive sessions)
        if not self.logger.handlers:
            formatter = logging.Formatter("[%(asctime)s] %(levelname)s - %(message)s",
                                          datefmt="%Y-%m-%d %H:%M:%S")
            file_handler = logging.FileHandler(log_path)
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(formatter)
            console_handler = logging.StreamHandler()
            console_handler.setLevel(getattr(logging, str(level).upper(), logging.INFO))
            console_handler.setFormatter(formatter)
            self.logger.addHandler(file_handler)
            self.logger.addHandler(console_handler)

    def log_stage(self, stage, status, run_id, details=None):
        """
        Write one stage entry.

        Example:
            pipeline_logger.log_stage("TRAIN_GLOBAL", "SUCCESS", "demo",
                                      {"d": 30, "explained_variance": 0.98})
        """
        entry = {"run": run_id, "stage": stage, "status": status}
        if details:
            entry["details"] = to_builtin(details)
        self.logger.log(STATUS_LEVELS.get(status, logging.ERROR), json.dumps(entry, default=str))

    def log_debug(self, stage, run_id, details=None):
        self.log_stage(stage, "DEBUG", run_id, details)

    def log_start(self, run_id, command=None):
        """A command starts on a run directory."""
        self.log_stage("COMMAND", "START", run_id, {"command": command} if command else None)

    def log_complete(self, run_id, report_path):
        """A command finished and wrote its report."""
        self.log_stage("COMMAND", "SUCCESS", run_id, {"report": str(report_path)})

    def log_warning(self, run_id, stage, message, details=None):
        """Numerical warnings: rank deficiency, iteration caps, capped d ..."""
        self.log_stage(stage, "WARNING", run_id, dict(details or {}, warning=message))

    def log_error(self, run_id, stage, error):
        """
        Log a failure. File errors keep their location (line, byte offset)
        so the broken input can be found from the log alone.
        """
        details = {"error": str(error), "error_type": type(error).__name__}
        for attr in ("path", "line", "offset"):
            value = getattr(error, attr, None)
            if value is not None:
                details[attr] = value
        self.log_stage(stage, "FAILURE", run_id, details)

    @contextmanager
    def timed(self, stage, run_id, details=None):
        """
        Log the wall-clock seconds of a block as one SUCCESS entry, or a
        FAILURE entry if the block raises (the exception propagates).
        """
        start = time.perf_counter()
        try:
            yield
        except Exception as e:
            self.log_error(run_id, stage, e)
            raise
        self.log_stage(stage, "SUCCESS", run_id,
                       dict(details or {}, seconds=round(time.perf_counter() - start, 6)))


pipeline_logger = PipelineLogger()
