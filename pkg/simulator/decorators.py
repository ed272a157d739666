import logging, os, time
from coloredlogs import install
from functools import wraps

import numpy as np

logger = logging.getLogger(__name__)
logger_format = "%(asctime)s %(hostname)s %(name)s[%(process)d] %(levelname)s %(message)s"
install(level=os.getenv("CFWPT_LOG_LEVEL", "INFO"), format=logger_format)

def set_log_level(level: str):
    """Reinstall the handler once settings (and .env) are loaded."""
    install(level=level.upper(), format=logger_format)
    logger.debug(f"log level set to {level.upper()}")

def _brief(value):
    # arrays are summarized, never dumped
    if isinstance(value, np.ndarray):
        return f"ndarray{value.shape}"
    if isinstance(value, (list, tuple)) and len(value) > 8:
        return f"{type(value).__name__}[{len(value)}]"
    return value

def timeit_log(func):
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        brief_args = [_brief(a) for a in args]
        brief_kwargs = {k: _brief(v) for k, v in kwargs.items()}
        logger.debug(f"Calling: {func.__name__} args={brief_args}, kwargs={brief_kwargs}")
        result = func(*args, **kwargs)
        duration = time.time() - start_time
        logger.debug(f"Finished: {func.__name__} returned={type(result).__name__} in [Time] {duration:.4f} sec")
        return result
    return wrapper
