# utils/log.py
import logging

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s %(message)s"


def get_logger(name):
    """
    Return the named package logger, attaching a stream handler once.

    Every package logs through its own logger ("forest", "regime", "sim", ...)
    at INFO level with a timestamped formatter. Repeated calls for the same
    name reuse the existing handler instead of stacking duplicates.

    Args:
        name (str): Logger name, usually the package name

    Returns:
        logging.Logger: The configured logger
    """
    logger = logging.getLogger(name)
    if not getattr(logger, "_survdtr_configured", False):
        logger.setLevel(logging.INFO)
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
        logger._survdtr_configured = True
    return logger
