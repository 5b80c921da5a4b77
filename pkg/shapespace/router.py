"""
Run Router - Output Management

Every command writes into one run directory:

    runs/<run_name>/
        resolved_config.json    the validated config the run actually used
        model_global.bin        trained models
        model_local.bin
        fit_<id>.ply            fitted meshes, coloured by per-vertex error
        report.json             machine-readable summary
        curves.csv              compactness / cumulative-error curves

WHY ONE DIRECTORY PER RUN?
A run directory is self-describing: the resolved config next to the outputs
is enough to reproduce it. Filenames carry no timestamps, so two runs of the
same config produce byte-identical reports that can be diffed directly.
"""

from pathlib import Path

import config
from .logger import pipeline_logger
from .meshio import save_mesh
from .modelio import save_model
from .utils import dump_json


class RunRouter:
    """
    Routes run artifacts to their files inside the run directory.
    """

    def __init__(self, run_name="run", runs_dir=config.RUNS_DIR):
        """Create the run directory if it doesn't exist."""
        self.run_name = run_name
        self.run_dir = Path(runs_dir) / run_name
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def _routed(self, kind, path):
        pipeline_logger.log_stage("ROUTE", "SUCCESS", self.run_name,
                                  {"artifact": kind, "output_file": str(path)})
        return path

    def route_config(self, run_config):
        path = dump_json(run_config.resolved(), self.run_dir / "resolved_config.json")
        return self._routed("config", path)

    def route_model(self, model):
        path = save_model(model, self.run_dir / f"model_{model.kind}.bin", run_id=self.run_name)
        return self._routed("model", path)

    def route_fit(self, fit_id, mesh, per_vertex_error=None):
        """
        Save a fitted mesh; with `per_vertex_error` the vertices are coloured
        on the fixed 0-10 mm blue-to-red scale.
        """
        try:
            path = self.run_dir / f"fit_{fit_id}.ply"
            save_mesh(mesh, path, per_vertex_scalar=per_vertex_error)
            return self._routed("fit", path)
        except Exception as e:
            pipeline_logger.log_error(self.run_name, "ROUTE", e)
            raise

    def route_report(self, report):
        path = dump_json(report, self.run_dir / "report.json")
        return self._routed("report", path)

    def route_curves(self, frame):
        """Write a curves table (pandas DataFrame) as CSV."""
        path = self.run_dir / "curves.csv"
        frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
        return self._routed("curves", path)

    def get_routing_stats(self):
        """Count of files of each artifact type in the run directory."""
        return {
            "models": len(list(self.run_dir.glob("model_*.bin"))),
            "fits": len(list(self.run_dir.glob("fit_*.ply"))),
            "reports": len(list(self.run_dir.glob("report.json"))),
        }
