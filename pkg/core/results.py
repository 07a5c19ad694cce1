import logging
import os

from core.errors import ResultsIoError
from core.exporter import read_json

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
# ablate-t output; not part of a main run
ABLATION_DIR = "ablation_T"


class ResultsDB:
    """Run summaries found below one results folder."""

    def __init__(self, folder, skip_dirs=(ABLATION_DIR,)):
        self.folder = folder
        self.skip_dirs = set(skip_dirs)
        self.summaries = []
        self.loaded = False

    def load_data(self):
        if self.loaded:
            return self.summaries
        if not os.path.isdir(self.folder):
            raise ResultsIoError(f"results folder {self.folder} does not exist")

        logger.info("Scanning %s for run summaries...", self.folder)
        for root, dirs, files in os.walk(self.folder):
            dirs[:] = sorted(d for d in dirs if d not in self.skip_dirs)
            if SUMMARY_FILE not in files:
                continue
            path = os.path.join(root, SUMMARY_FILE)
            summary = read_json(path)
            if "strategy" not in summary or "seed" not in summary:
                logger.warning("skipping %s: not a run summary", path)
                continue
            summary["path"] = os.path.relpath(root, self.folder)
            self.summaries.append(summary)

        self.loaded = True
        logger.info("Loaded %d run summaries.", len(self.summaries))
        return self.summaries


def select_summaries(summaries, criteria):
    """Summaries whose fields equal every given criterion."""
    return [s for s in summaries if all(s.get(k) == v for k, v in criteria.items())]


def load_summaries(folder):
    return ResultsDB(folder).load_data()
