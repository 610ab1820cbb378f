"""
pimspec: Laplace-Beltrami spectra from point clouds with the point integral method
"""

import os
import logging
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

__version__ = '1.0.0'

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'


def configure_logging(level=None, log_file=None, config_name=None):
    """Configure package logging"""
    from pimspec.config import get_config

    cfg = get_config(config_name)
    level = (level or cfg.LOG_LEVEL or 'INFO').upper()
    log_file = log_file if log_file is not None else cfg.LOG_FILE

    logger = logging.getLogger('pimspec')
    logger.setLevel(level)

    # Replace handlers from a previous call so repeated CLI invocations do not duplicate output
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
    stream_handler.setLevel(level)
    logger.addHandler(stream_handler)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)

        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        file_handler.setLevel(logging.INFO)
        logger.addHandler(file_handler)

    logger.debug(f'pimspec {__version__} logging configured at {level}')
    return logger
