import logging
import os
import sys
from logging.handlers import TimedRotatingFileHandler

from app.core.config import settings

# -------------- CONFIGURATION -------------------

LOG_LEVEL = settings.LOG_LEVEL.upper()
LOG_FILE_NAME = "flowtracer.log"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# -------------- CONSOLE FORMATTER ----------------

class ConsoleFormatter(logging.Formatter):
    COLORS = {
        "DEBUG": "\033[36m",
        "INFO": "\033[32m",
        "WARNING": "\033[33m",
        "ERROR": "\033[31m",
        "CRITICAL": "\033[41m\033[97m",
    }
    RESET = "\033[0m"

    def __init__(self, fmt=None, datefmt=None, use_color=True):
        super().__init__(fmt, datefmt)
        self.use_color = use_color

    def format(self, record):
        message = super().format(record)
        if not self.use_color:
            return message
        color = self.COLORS.get(record.levelname, "")
        return f"{color}{message}{self.RESET}"

# -------------- LOGGER INITIALIZATION ------------

def init_logging(level: str = None, log_dir: str = None):
    level = (level or LOG_LEVEL).upper()
    log_dir = log_dir or settings.LOG_DIR

    logger = logging.getLogger()
    logger.setLevel(level)

    # Console handler: stderr only, stdout is reserved for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(
        ConsoleFormatter(LOG_FORMAT, DATE_FORMAT, use_color=sys.stderr.isatty())
    )
    console_handler.setLevel(level)
    handlers = [console_handler]

    # File handler: daily rotation, keep 7 days
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = TimedRotatingFileHandler(
            os.path.join(log_dir, LOG_FILE_NAME), when="midnight", backupCount=7, encoding="utf-8"
        )
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, DATE_FORMAT))
        file_handler.setLevel(level)
        handlers.append(file_handler)

    # Clear and reset handlers if already present
    logger.handlers = []
    for handler in handlers:
        logger.addHandler(handler)

    # Control plane logs go through our logger
    for uvicorn_logger in ("uvicorn", "uvicorn.error", "uvicorn.access"):
        uv_logger = logging.getLogger(uvicorn_logger)
        uv_logger.handlers = []
        uv_logger.propagate = True

# -------------- USAGE ---------------------------

# Entry points (app/cli.py, app/main.py) call init_logging() once.
# Every other module only does:
#   logger = logging.getLogger(__name__)
