import logging
import subprocess

LOG_FORMAT = "%(asctime)s %(levelname)-4s [%(filename)s:%(lineno)d] %(message)s"
LOG_DATEFMT = "%Y-%m-%d:%H:%M:%S"


def logging_to_file(log_file):
    logger = logging.getLogger()
    handler = logging.FileHandler(log_file)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    return handler


def get_git_revision_hash():
    """HEAD of the enclosing checkout, or ``unknown`` outside a git work tree."""
    try:
        return subprocess.check_output(["git", "rev-parse", "HEAD"], stderr=subprocess.DEVNULL).decode("ascii").strip()
    except (subprocess.CalledProcessError, OSError):
        return "unknown"
