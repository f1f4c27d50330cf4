import logging
import os
import sys

from dotenv import load_dotenv

from src.cli import run


class StepChatterFilter(logging.Filter):
    """Demotes per-iteration lines to DEBUG and drops console records below the console level."""
    PREFIXES = ("adapt step", "pretrain epoch=")

    def __init__(self, min_level: int = logging.NOTSET):
        super().__init__()
        self.min_level = min_level

    def filter(self, record):
        if record.getMessage().startswith(self.PREFIXES):
            record.levelno = logging.DEBUG
            record.levelname = "DEBUG"
        return record.levelno >= self.min_level


# --- Setup Logging ---
LOG_FILE = "bnstat.log"


def setup_logging():
    """Configure logging for the application"""
    logging.root.handlers.clear()

    logger = logging.getLogger()
    logger.setLevel(os.getenv("BNSTAT_LOG_LEVEL", "INFO").upper())

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    file_handler = logging.FileHandler(os.getenv("BNSTAT_LOG_FILE", LOG_FILE), encoding="utf-8")
    file_handler.setFormatter(formatter)
    file_handler.addFilter(StepChatterFilter())
    logger.addHandler(file_handler)

    console_level = logging.getLevelName(os.getenv("BNSTAT_CONSOLE_LEVEL", "INFO").upper())
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    console_handler.addFilter(StepChatterFilter(console_level if isinstance(console_level, int) else logging.INFO))
    logger.addHandler(console_handler)

    return logger


def main():
    """Entry point for the application"""
    load_dotenv()
    setup_logging()
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
