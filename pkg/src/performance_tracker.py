"""
Performance Tracker for IsNeRF
Appends training metrics to a CSV log and summarizes finished runs
"""

import csv
import logging
import os
import time
from typing import Dict, List, Optional

import pandas as pd

METRIC_COLUMNS = ['iteration', 'loss', 'psnr_holdout', 'lr', 'wall_seconds']


class PerformanceTracker:
    """Tracks training progress in a metrics CSV"""

    def __init__(self, metrics_file: str):
        """
        Initialize performance tracker

        Args:
            metrics_file: CSV path; missing directories are created
        """
        self.logger = logging.getLogger("IsNeRF.Performance")

        self.metrics_file = metrics_file
        self.started = time.perf_counter()

        directory = os.path.dirname(self.metrics_file)
        if directory:
            os.makedirs(directory, exist_ok=True)

        # Each run starts a fresh log
        self._initialize_metrics_log()

    def _initialize_metrics_log(self):
        """Create metrics CSV with headers"""
        with open(self.metrics_file, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(METRIC_COLUMNS)

    def elapsed(self) -> float:
        return time.perf_counter() - self.started

    def log_iteration(self, iteration: int, loss: float, lr: float,
                      psnr_holdout: Optional[float] = None, wall_seconds: Optional[float] = None):
        """
        Append one row to the metrics log

        Args:
            iteration: Optimizer step count after the update
            loss: Batch loss
            lr: Field learning rate in effect
            psnr_holdout: Held-out PSNR, left empty when not evaluated
            wall_seconds: Wall time; measured from construction when omitted
        """
        seconds = self.elapsed() if wall_seconds is None else wall_seconds
        with open(self.metrics_file, 'a', newline='') as f:
            writer = csv.writer(f)
            writer.writerow([
                iteration,
                repr(float(loss)),
                '' if psnr_holdout is None else repr(float(psnr_holdout)),
                repr(float(lr)),
                f"{seconds:.3f}",
            ])

        if psnr_holdout is not None:
            self.logger.info(f"Iteration {iteration}: loss {loss:.6f}, held-out PSNR {psnr_holdout:.2f} dB")
        else:
            self.logger.debug(f"Iteration {iteration}: loss {loss:.6f}")

    def get_metrics(self) -> pd.DataFrame:
        """Metrics log as a DataFrame"""
        try:
            return pd.read_csv(self.metrics_file)
        except (OSError, pd.errors.EmptyDataError) as e:
            self.logger.error(f"Error reading metrics log: {e}")
            return pd.DataFrame(columns=METRIC_COLUMNS)

    def holdout_curve(self) -> List[float]:
        """Held-out PSNR values in iteration order"""
        frame = self.get_metrics()
        return frame['psnr_holdout'].dropna().astype(float).tolist()

    def summary(self) -> Dict:
        """
        Summarize the run

        Returns:
            Dictionary with iterations, final/best loss and held-out PSNR, wall time
        """
        frame = self.get_metrics()
        if frame.empty:
            return {"iterations": 0, "final_loss": None, "best_loss": None,
                    "final_psnr": None, "best_psnr": None, "wall_seconds": 0.0}

        psnr = frame['psnr_holdout'].dropna()
        return {
            "iterations": int(frame['iteration'].iloc[-1]),
            "final_loss": float(frame['loss'].iloc[-1]),
            "best_loss": float(frame['loss'].min()),
            "final_psnr": float(psnr.iloc[-1]) if not psnr.empty else None,
            "best_psnr": float(psnr.max()) if not psnr.empty else None,
            "wall_seconds": float(frame['wall_seconds'].iloc[-1]),
        }
