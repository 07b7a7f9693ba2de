"""
Logging for the motion-correction engine
"""
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

from config.settings import settings


class MocoLogger:
    """Main logging class for the engine"""

    def __init__(self, name: str = "t1moco", log_level: str = "INFO", log_dir: Optional[str] = None):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))
        self.logger.handlers.clear()
        self.logger.propagate = False

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        # Console handler
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(logging.DEBUG)
        console_handler.setFormatter(formatter)
        self.logger.addHandler(console_handler)

        # File handler, only when a log directory is configured
        self.file_handler: Optional[logging.FileHandler] = None
        if log_dir:
            self.add_file_handler(log_dir)

    def add_file_handler(self, log_dir: str):
        """Add a daily log file under log_dir"""
        path = Path(log_dir)
        path.mkdir(parents=True, exist_ok=True)
        self.file_handler = logging.FileHandler(path / f"t1moco_{datetime.now().strftime('%Y%m%d')}.log")
        self.file_handler.setLevel(logging.DEBUG)
        self.file_handler.setFormatter(self.logger.handlers[0].formatter)
        self.logger.addHandler(self.file_handler)

    def set_level(self, log_level: str):
        self.logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))

    def debug(self, message: str):
        self.logger.debug(message, stacklevel=2)

    def info(self, message: str):
        self.logger.info(message, stacklevel=2)

    def warning(self, message: str):
        self.logger.warning(message, stacklevel=2)

    def error(self, message: str, exc_info=False):
        self.logger.error(message, exc_info=exc_info, stacklevel=2)

    def critical(self, message: str, exc_info=False):
        self.logger.critical(message, exc_info=exc_info, stacklevel=2)

    def log_tensor_io(self, operation: str, path: str, kind: str, shape: tuple):
        """Log a tensor container read or write"""
        self.logger.debug(f"Tensor {operation} - Kind: {kind}, Shape: {shape}, Path: {path}", stacklevel=2)

    def log_degenerate_metric(self, metric: str, reason: str):
        """Log a metric that fell back to its degenerate score"""
        self.logger.warning(f"Degenerate {metric.upper()} - {reason}; substituting score 0", stacklevel=2)

    def log_degenerate_stage(self, stage: str, level: int, reason: str):
        """Log a pyramid level skipped because its loss is flat in the parameters"""
        self.logger.warning(f"Degenerate {stage} level {level} - {reason}; keeping current parameters", stacklevel=2)

    def log_level_start(self, stage: str, level: int, shape: tuple, iterations: int, step: float):
        """Log the start of one pyramid level"""
        self.logger.debug(
            f"{stage.capitalize()} level {level} - Grid: {shape[0]}x{shape[1]}, "
            f"Iterations: {iterations}, Step: {step:.4g}",
            stacklevel=2
        )

    def log_registration_done(self, frame: int, loss: float, folding: int, seconds: float):
        """Log a finished frame registration"""
        self.logger.info(
            f"Frame {frame} registered - Loss: {loss:.6g}, Folding: {folding}, Time: {seconds:.2f}s",
            stacklevel=2
        )

    def log_frame_failure(self, frame: int, reason: str):
        """Log a frame whose registration failed"""
        self.logger.error(f"Frame {frame} failed - {reason}", stacklevel=2)

    def log_fit_summary(self, pixels: int, failed: int, median_t1: float):
        """Log a T1 fit summary"""
        self.logger.info(
            f"T1 fit complete - Pixels: {pixels}, Failed: {failed}, Median T1: {median_t1:.1f} ms",
            stacklevel=2
        )


# Global logger instance
moco_logger = MocoLogger(log_level=settings.LOG_LEVEL, log_dir=settings.LOG_DIR)
